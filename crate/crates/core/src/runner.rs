//! Experiment configuration, presets, T2 extraction and output files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bathgen::{build_bath, Bath, BathConfig, Composition, Species, TableChoice};
use crate::cce::{bath_coherence, BathModel, CoherenceCurve, Method, TauGrid};
use crate::error::{Error, Result};
use crate::eseem::{check_secular, dominant_frequency, eseem_decompose, modulation_amplitude, tb_report, transition_boundary, TbReport};
use crate::hamiltonian::CentralSpin;

pub const SCHEMA_VERSION: u32 = 1;

/// Window (samples) of the right-to-left running maximum used as envelope.
pub const ENVELOPE_WINDOW: usize = 5;

/// Minimum in-band modulation amplitude (2|X|/N of |L|) for a line to count as present.
pub const LINE_MIN_AMPLITUDE: f64 = 5e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Sweep,
    Eseem,
    Tb,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sweep" => Ok(Task::Sweep),
            "eseem" => Ok(Task::Eseem),
            "tb" => Ok(Task::Tb),
            o => Err(Error::Config(format!("unknown task '{o}' (sweep, eseem, tb)"))),
        }
    }
}

impl Task {
    fn name(self) -> &'static str {
        match self {
            Task::Sweep => "sweep",
            Task::Eseem => "eseem",
            Task::Tb => "tb",
        }
    }
}

/// Total echo time 2τ_max, fixed or chosen per field from the TB.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeSpan {
    Fixed(f64),
    /// `below` μs under the TB, `above` μs over it.
    Auto { below: f64, above: f64 },
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub task: Task,
    pub composition: String,
    pub bath_radius: f64,
    pub r_dipole: f64,
    pub seed: u64,
    /// Number of consecutive bath seeds starting at `seed`.
    pub seeds: u64,
    pub methods: Vec<Method>,
    pub qubit_levels: (i8, i8),
    /// Kept verbatim so the config can be echoed back.
    pub b_grid_spec: String,
    pub b_grid: Vec<f64>,
    pub t_span: TimeSpan,
    pub tau_points: usize,
    pub dft_table: TableChoice,
    pub out_dir: Option<PathBuf>,
    pub tb_m_s: i8,
    /// τ span (μs) setting the V0 frequency threshold in the TB analysis.
    pub v0_span_us: f64,
    pub eseem_shells: Vec<usize>,
    /// Line to look for in each coherence spectrum (MHz), with half-width.
    pub line_check_mhz: Option<f64>,
    pub line_halfwidth_mhz: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::Sweep,
            composition: "10B14N".into(),
            bath_radius: 18.0,
            r_dipole: 8.0,
            seed: 0,
            seeds: 1,
            methods: vec![Method::Gcce(2)],
            qubit_levels: (0, 1),
            b_grid_spec: "100:5000:100,5500:10000:500".into(),
            b_grid: parse_field_grid("100:5000:100,5500:10000:500").unwrap(),
            t_span: TimeSpan::Auto { below: 2.0, above: 200.0 },
            tau_points: 512,
            dft_table: TableChoice::Shipped,
            out_dir: None,
            tb_m_s: 1,
            v0_span_us: 100.0,
            eseem_shells: vec![1, 2, 3, 4, 5, 6],
            line_check_mhz: None,
            line_halfwidth_mhz: 0.2,
        }
    }
}

/// `a:b:step` ranges (inclusive) and plain values, comma separated.
pub fn parse_field_grid(spec: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let nums: Vec<f64> = part
            .split(':')
            .map(|x| x.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad number '{x}' in field grid"))))
            .collect::<Result<_>>()?;
        match nums.as_slice() {
            [v] => out.push(*v),
            [a, b, step] => {
                if !(*step > 0.0) || b < a {
                    return Err(Error::Config(format!("bad range '{part}'")));
                }
                let n = ((b - a) / step + 1e-9).floor() as usize;
                out.extend((0..=n).map(|k| a + k as f64 * step));
            }
            _ => return Err(Error::Config(format!("bad field grid entry '{part}'"))),
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty field grid".into()));
    }
    if out.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("field grid must be strictly increasing".into()));
    }
    if out.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
        return Err(Error::Config("fields must be finite and non-negative".into()));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value '{v}' for {key}")))
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "task" => self.task = v.parse()?,
            "composition" => {
                Composition::from_label(v).map_err(|e| Error::Config(e.to_string()))?;
                self.composition = v.into();
            }
            "bath_radius" => self.bath_radius = parse_num(key, v)?,
            "r_dipole" => self.r_dipole = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "seeds" => self.seeds = parse_num(key, v)?,
            "method" => {
                self.methods = v.split(',').map(|m| m.parse::<Method>().map_err(|e| Error::Config(e.to_string()))).collect::<Result<_>>()?;
            }
            "qubit_levels" => {
                let p: Vec<i8> = v.split(',').map(|x| parse_num(key, x.trim())).collect::<Result<_>>()?;
                if p.len() != 2 {
                    return Err(Error::Config("qubit_levels takes two values, e.g. 0,1".into()));
                }
                self.qubit_levels = (p[0], p[1]);
            }
            "b_grid" => {
                self.b_grid = parse_field_grid(v)?;
                self.b_grid_spec = v.into();
            }
            "t_span_us" => {
                self.t_span = if v == "auto" {
                    TimeSpan::Auto { below: 2.0, above: 200.0 }
                } else if let Some((a, b)) = v.strip_prefix("auto:").and_then(|r| r.split_once(':')) {
                    TimeSpan::Auto { below: parse_num(key, a)?, above: parse_num(key, b)? }
                } else {
                    TimeSpan::Fixed(parse_num(key, v)?)
                }
            }
            "tau_points" => self.tau_points = parse_num(key, v)?,
            "dft_table" => {
                self.dft_table = match v {
                    "shipped" => TableChoice::Shipped,
                    "none" => TableChoice::None,
                    p => TableChoice::Path(PathBuf::from(p)),
                }
            }
            "out_dir" => self.out_dir = Some(PathBuf::from(v)),
            "tb_m_s" => self.tb_m_s = parse_num(key, v)?,
            "v0_span_us" => self.v0_span_us = parse_num(key, v)?,
            "eseem_shells" => self.eseem_shells = v.split(',').map(|x| parse_num(key, x.trim())).collect::<Result<_>>()?,
            "line_check_mhz" => self.line_check_mhz = if v == "none" { None } else { Some(parse_num(key, v)?) },
            "line_halfwidth_mhz" => self.line_halfwidth_mhz = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Overlays `key = value` lines (`#` starts a comment).
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse { line: n + 1, msg: format!("expected key = value, got '{line}'") })?;
            self.set(k, v).map_err(|e| Error::Parse { line: n + 1, msg: e.to_string() })?;
        }
        self.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        Composition::from_label(&self.composition).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.bath_radius > 0.0) || !(self.r_dipole > 0.0) || self.r_dipole > self.bath_radius {
            return Err(Error::Config(format!("need 0 < r_dipole <= bath_radius, got {} / {}", self.r_dipole, self.bath_radius)));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no method given".into()));
        }
        self.central_spin().map_err(|e| Error::Config(e.to_string()))?;
        if self.b_grid.is_empty() {
            return Err(Error::Config("empty field grid".into()));
        }
        if self.tau_points < 4 {
            return Err(Error::Config("tau_points must be >= 4".into()));
        }
        match self.t_span {
            TimeSpan::Fixed(s) if !(s > 0.0) => return Err(Error::Config("t_span_us must be > 0".into())),
            TimeSpan::Auto { below, above } if !(below > 0.0 && above > 0.0) => return Err(Error::Config("auto spans must be > 0".into())),
            _ => {}
        }
        if !(-1..=1).contains(&self.tb_m_s) {
            return Err(Error::Config("tb_m_s must be -1, 0 or 1".into()));
        }
        if !(self.v0_span_us > 0.0) || !(self.line_halfwidth_mhz > 0.0) {
            return Err(Error::Config("v0_span_us and line_halfwidth_mhz must be > 0".into()));
        }
        Ok(())
    }

    pub fn central_spin(&self) -> Result<CentralSpin> {
        CentralSpin::default().with_levels(self.qubit_levels.0, self.qubit_levels.1)
    }

    pub fn bath_config(&self, seed: u64) -> Result<BathConfig> {
        let mut c = BathConfig::new(Composition::from_label(&self.composition)?, self.bath_radius);
        c.r_dipole = self.r_dipole;
        c.seed = seed;
        c.table = self.dft_table.clone();
        Ok(c)
    }

    /// Flat text form; parsing it back gives the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let span = match self.t_span {
            TimeSpan::Fixed(v) => format!("{v}"),
            TimeSpan::Auto { below, above } => format!("auto:{below}:{above}"),
        };
        let table = match &self.dft_table {
            TableChoice::Shipped => "shipped".to_string(),
            TableChoice::None => "none".to_string(),
            TableChoice::Path(p) => p.display().to_string(),
        };
        let methods: Vec<String> = self.methods.iter().map(|m| m.label()).collect();
        let shells: Vec<String> = self.eseem_shells.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(s, "task = {}", self.task.name());
        let _ = writeln!(s, "composition = {}", self.composition);
        let _ = writeln!(s, "bath_radius = {}", self.bath_radius);
        let _ = writeln!(s, "r_dipole = {}", self.r_dipole);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "seeds = {}", self.seeds);
        let _ = writeln!(s, "method = {}", methods.join(","));
        let _ = writeln!(s, "qubit_levels = {},{}", self.qubit_levels.0, self.qubit_levels.1);
        let _ = writeln!(s, "b_grid = {}", self.b_grid_spec);
        let _ = writeln!(s, "t_span_us = {span}");
        let _ = writeln!(s, "tau_points = {}", self.tau_points);
        let _ = writeln!(s, "dft_table = {table}");
        let _ = writeln!(s, "tb_m_s = {}", self.tb_m_s);
        let _ = writeln!(s, "v0_span_us = {}", self.v0_span_us);
        let _ = writeln!(s, "eseem_shells = {}", shells.join(","));
        match self.line_check_mhz {
            Some(l) => {
                let _ = writeln!(s, "line_check_mhz = {l}");
            }
            None => {
                let _ = writeln!(s, "line_check_mhz = none");
            }
        }
        let _ = writeln!(s, "line_halfwidth_mhz = {}", self.line_halfwidth_mhz);
        s
    }
}

pub const PRESETS: [&str; 12] = ["fig1", "fig1-full", "fig3", "fig3-full", "fig4", "fig4-full", "fig5", "fig5-full", "fig6", "fig6-full", "gslac", "gslac-full"];

/// Named configurations; the plain names are desk scale (10 Å bath, field
/// grid 4× coarser), `-full` keeps the 18 Å bath and the fine grid.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (base, full) = match name.strip_suffix("-full") {
        Some(b) => (b, true),
        None => (name, false),
    };
    let mut c = ExperimentConfig::default();
    let radius = if full { "18" } else { "10" };
    let text = match base {
        "fig1" => {
            let grid = if full { "100:5000:100,5500:10000:500" } else { "100:5000:400,6000:10000:2000" };
            format!("task = sweep\ncomposition = 11B14N\nmethod = gCCE2\nb_grid = {grid}\nt_span_us = auto\ntau_points = {}\n", if full { 512 } else { 128 })
        }
        "fig3" => "task = eseem\ncomposition = 11B14N\nbath_radius = 8\nb_grid = 500,5000,30000\nt_span_us = 2\ntau_points = 512\neseem_shells = 1,2,3,4,5,6\n".to_string(),
        "fig4" => {
            let grid = if full { "10:10000:10" } else { "40:10000:40" };
            format!("task = tb\ncomposition = 11B14N\nb_grid = {grid}\ntb_m_s = 1\nv0_span_us = 100\n")
        }
        "fig5" => format!(
            "task = sweep\ncomposition = 10B14N\nmethod = cCCE2,cCCE2_mediated,gCCE2,hybrid_core\nb_grid = 30000\nt_span_us = 200\ntau_points = {}\n",
            if full { 512 } else { 128 }
        ),
        // Nyquist kept well above the 46.7 MHz modulation, which would otherwise alias near 4.4 MHz
        "fig6" => format!(
            "task = sweep\ncomposition = 10B14N\nmethod = hybrid_core,gCCE2\nb_grid = 14200\nt_span_us = {}\ntau_points = {}\nline_check_mhz = 4.37\n",
            if full { 5.0 } else { 2.5 },
            if full { 1024 } else { 512 }
        ),
        "gslac" => format!(
            "task = sweep\ncomposition = 11B14N\nmethod = gCCE1,gCCE2\nb_grid = 1000,1240,1500\nt_span_us = 2\ntau_points = {}\n",
            if full { 512 } else { 128 }
        ),
        _ => return Err(Error::Config(format!("unknown preset '{name}' (known: {})", PRESETS.join(", ")))),
    };
    let text = if base == "fig3" { text } else { format!("bath_radius = {radius}\n{text}") };
    c.apply_text(&text)?;
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum T2Definition {
    Envelope1OverE,
    StretchedExpFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct T2Result {
    /// μs, first 1/e crossing of the envelope on the t = 2τ axis.
    pub t2: f64,
    pub definition: T2Definition,
    /// μs, from exp[−(t/T2)ⁿ] fitted to the envelope.
    pub fit_t2: Option<f64>,
    pub stretch_n: Option<f64>,
    pub fit_residual: Option<f64>,
    pub fit_error: Option<String>,
}

/// Right-to-left running maximum of `x` over `ENVELOPE_WINDOW` samples.
pub fn envelope(x: &[f64]) -> Vec<f64> {
    (0..x.len()).map(|k| x[k..(k + ENVELOPE_WINDOW).min(x.len())].iter().cloned().fold(f64::MIN, f64::max)).collect()
}

pub fn fit_t2(curve: &CoherenceCurve) -> Result<T2Result> {
    fit_t2_series(&curve.t(), &curve.abs())
}

/// T2 from |L| sampled at echo times `t` (μs).
pub fn fit_t2_series(t: &[f64], abs_l: &[f64]) -> Result<T2Result> {
    if t.len() != abs_l.len() || t.len() < 2 {
        return Err(Error::InvalidArgument("need matching t and |L| with >= 2 samples".into()));
    }
    let env = envelope(abs_l);
    let target = (-1.0f64).exp();
    let k = env.iter().position(|&e| e < target).ok_or_else(|| Error::OutOfSpan(format!("|L| stays above 1/e up to t = {} us", t[t.len() - 1])))?;
    let t2 = if k == 0 {
        t[0]
    } else {
        let (e0, e1) = (env[k - 1], env[k]);
        t[k - 1] + (e0 - target) / (e0 - e1) * (t[k] - t[k - 1])
    };
    let (fit_t2, stretch_n, fit_residual, fit_error) = match stretched_fit(t, &env, t2) {
        Ok((tt, n, r)) => (Some(tt), Some(n), Some(r), None),
        Err(e) => (None, None, None, Some(e.to_string())),
    };
    Ok(T2Result { t2, definition: T2Definition::Envelope1OverE, fit_t2, stretch_n, fit_residual, fit_error })
}

fn stretched_model(t: f64, tt: f64, n: f64) -> f64 {
    (-(t / tt).powf(n)).exp()
}

/// Levenberg-Marquardt on (ln T2, n) starting from a log-log line fit;
/// n clamped to [0.5, 4]. Returns (T2, n, rms residual).
fn stretched_fit(t: &[f64], env: &[f64], t2_guess: f64) -> Result<(f64, f64, f64)> {
    let pts: Vec<(f64, f64)> = t.iter().zip(env).filter(|(&ti, _)| ti > 0.0).map(|(&a, &b)| (a, b)).collect();
    if pts.len() < 3 {
        return Err(Error::FitFailed("too few samples".into()));
    }
    // ln(−ln y) = n ln t − n ln T over the informative range
    let lin: Vec<(f64, f64)> = pts.iter().filter(|p| p.1 > 0.02 && p.1 < 0.98).map(|p| (p.0.ln(), (-p.1.ln()).ln())).collect();
    let (mut lt, mut n) = (t2_guess.ln(), 1.0);
    if lin.len() >= 2 {
        let m = lin.len() as f64;
        let mx = lin.iter().map(|p| p.0).sum::<f64>() / m;
        let my = lin.iter().map(|p| p.1).sum::<f64>() / m;
        let sxx: f64 = lin.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if sxx > 0.0 {
            let slope = lin.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx;
            if slope.is_finite() && slope > 0.0 {
                n = slope.clamp(0.5, 4.0);
                lt = mx - my / slope;
            }
        }
    }
    let cost = |lt: f64, n: f64| -> f64 { pts.iter().map(|&(ti, yi)| (yi - stretched_model(ti, lt.exp(), n)).powi(2)).sum() };
    let mut c = cost(lt, n);
    let mut lambda = 1e-3;
    for _ in 0..200 {
        let (mut jtj, mut jtr) = ([[0.0; 2]; 2], [0.0; 2]);
        for &(ti, yi) in &pts {
            let x = (ti / lt.exp()).powf(n);
            let f = (-x).exp();
            let r = yi - f;
            // ∂f/∂lnT = f·n·x, ∂f/∂n = −f·x·ln(t/T)
            let j = [f * n * x, -f * x * (ti.ln() - lt)];
            for a in 0..2 {
                jtr[a] += j[a] * r;
                for b in 0..2 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let a00 = jtj[0][0] * (1.0 + lambda);
        let a11 = jtj[1][1] * (1.0 + lambda);
        let det = a00 * a11 - jtj[0][1] * jtj[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let d0 = (a11 * jtr[0] - jtj[0][1] * jtr[1]) / det;
        let d1 = (a00 * jtr[1] - jtj[1][0] * jtr[0]) / det;
        let (nlt, nn) = (lt + d0, (n + d1).clamp(0.5, 4.0));
        let nc = cost(nlt, nn);
        if nc < c {
            let done = (c - nc) < 1e-14 * c.max(1e-300);
            lt = nlt;
            n = nn;
            c = nc;
            lambda = (lambda * 0.3).max(1e-12);
            if done {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    let tt = lt.exp();
    if !tt.is_finite() || tt <= 0.0 {
        return Err(Error::FitFailed("fit diverged".into()));
    }
    Ok((tt, n, (c / pts.len() as f64).sqrt()))
}

/// `coh_B<gauss>G.csv`
pub fn curve_file_name(b_gauss: f64) -> String {
    format!("coh_B{}G.csv", field_label(b_gauss))
}

fn field_label(b: f64) -> String {
    if b.fract() == 0.0 {
        format!("{b:.0}")
    } else {
        format!("{b}")
    }
}

pub fn curve_csv(curve: &CoherenceCurve) -> String {
    let mut s = String::from("tau_us,t_us,re_L,im_L,abs_L\n");
    for (tau, l) in curve.tau.iter().zip(&curve.l) {
        let _ = writeln!(s, "{},{},{},{},{}", tau, 2.0 * tau, l.re, l.im, l.norm());
    }
    s
}

/// Reads back (t, |L|) from a coherence CSV.
pub fn read_curve_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header.trim() != "tau_us,t_us,re_L,im_L,abs_L" {
        return Err(Error::Parse { line: 1, msg: format!("unexpected header '{header}'") });
    }
    let (mut t, mut a) = (Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(Error::Parse { line: n + 2, msg: "expected 5 columns".into() });
        }
        let p = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::Parse { line: n + 2, msg: format!("bad number '{s}'") });
        t.push(p(cols[1])?);
        a.push(p(cols[4])?);
    }
    Ok((t, a))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Outcome of one run: the summary document and whether every field failed.
#[derive(Debug)]
pub struct RunOutcome {
    pub summary: Value,
    pub all_failed: bool,
    pub files: Vec<PathBuf>,
}

pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut outcome = match cfg.task {
        Task::Sweep => run_sweep(cfg, out)?,
        Task::Eseem => run_eseem(cfg, out)?,
        Task::Tb => run_tb(cfg, out)?,
    };
    let summary_path = out.join("summary.json");
    let mut text = serde_json::to_string_pretty(&outcome.summary).map_err(|e| Error::Numerical(e.to_string()))?;
    text.push('\n');
    write_file(&summary_path, &text)?;
    write_file(&out.join("config.txt"), &cfg.to_text())?;
    outcome.files.push(summary_path);
    Ok(outcome)
}

fn header(cfg: &ExperimentConfig) -> BTreeMap<String, Value> {
    let mut m = BTreeMap::new();
    m.insert("schema_version".into(), json!(SCHEMA_VERSION));
    m.insert("task".into(), json!(cfg.task.name()));
    m.insert("composition".into(), json!(cfg.composition));
    m.insert("config".into(), json!(cfg.to_text()));
    m
}

fn opt(x: Option<f64>) -> Value {
    match x {
        Some(v) if v.is_finite() => json!(v),
        _ => Value::Null,
    }
}

/// Per-field τ grid.
fn tau_for(cfg: &ExperimentConfig, b: f64, tb: Option<f64>) -> Result<TauGrid> {
    let span = match cfg.t_span {
        TimeSpan::Fixed(s) => s,
        TimeSpan::Auto { below, above } => match tb {
            Some(tb) if b >= tb => above,
            _ => below,
        },
    };
    TauGrid::uniform(span, cfg.tau_points)
}

struct SeedBath {
    seed: u64,
    /// Index of the first seed with the same species assignment.
    same_as: usize,
    model: BathModel,
}

fn seed_baths(cfg: &ExperimentConfig) -> Result<Vec<SeedBath>> {
    let mut out: Vec<SeedBath> = Vec::new();
    for k in 0..cfg.seeds {
        let seed = cfg.seed + k;
        let bath = build_bath(&cfg.bath_config(seed)?)?;
        let sig = bath.species_signature();
        let same_as = out.iter().position(|o| o.model.bath.species_signature() == sig).unwrap_or(out.len());
        let model = if same_as < out.len() { out[same_as].model.clone() } else { BathModel::new(bath)? };
        out.push(SeedBath { seed, same_as, model });
    }
    Ok(out)
}

/// True if the strongest bin in [lo, hi] is a local maximum of the spectrum.
pub fn has_local_peak(t: &[f64], x: &[f64], lo: f64, hi: f64) -> bool {
    if t.len() < 2 {
        return false;
    }
    let (f, a) = crate::eseem::spectrum(x, t[1] - t[0]);
    let k = (1..a.len()).filter(|&k| f[k] >= lo && f[k] <= hi).max_by(|&p, &q| a[p].total_cmp(&a[q]));
    matches!(k, Some(k) if k + 1 < a.len() && a[k] > a[k - 1] && a[k] > a[k + 1])
}

fn line_report(cfg: &ExperimentConfig, curve: &CoherenceCurve) -> Value {
    let Some(f0) = cfg.line_check_mhz else { return Value::Null };
    let t = curve.t();
    let a = curve.abs();
    let (lo, hi) = (f0 - cfg.line_halfwidth_mhz, f0 + cfg.line_halfwidth_mhz);
    let amp = modulation_amplitude(&t, &a, lo, hi).ok();
    let peak = crate::eseem::dominant_frequency_of(&t, &a, lo, hi).ok().flatten();
    let present = amp.is_some_and(|a| a >= LINE_MIN_AMPLITUDE) && has_local_peak(&t, &a, lo, hi);
    json!({ "target_mhz": f0, "halfwidth_mhz": cfg.line_halfwidth_mhz, "amplitude": opt(amp), "peak_mhz": opt(peak), "present": present })
}

fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let cs = cfg.central_spin()?;
    let baths = seed_baths(cfg)?;
    let needs_tb = matches!(cfg.t_span, TimeSpan::Auto { .. });
    let tb = if needs_tb {
        let grid: Vec<f64> = (1..=2000).map(|k| 10.0 * k as f64).collect();
        transition_boundary(&baths[0].model.bath, &grid, cfg.tb_m_s).ok().map(|r| r.1)
    } else {
        None
    };
    let mut files = Vec::new();
    let mut methods_json = BTreeMap::new();
    let mut any_ok = false;
    for &method in &cfg.methods {
        let mut fields = Vec::new();
        for &b in &cfg.b_grid {
            let tau = tau_for(cfg, b, tb)?;
            let mut per_seed: Vec<Result<CoherenceCurve>> = Vec::new();
            for (k, sb) in baths.iter().enumerate() {
                let r = if sb.same_as < k {
                    match &per_seed[sb.same_as] {
                        Ok(c) => Ok(CoherenceCurve { seed: sb.seed, ..c.clone() }),
                        Err(e) => Err(Error::Numerical(format!("same bath as seed {}: {e}", baths[sb.same_as].seed))),
                    }
                } else {
                    bath_coherence(&sb.model, &cs, b, &tau, method)
                };
                per_seed.push(r);
            }
            let mut seeds_json = Vec::new();
            let mut t2s = Vec::new();
            for (sb, r) in baths.iter().zip(&per_seed) {
                match r {
                    Ok(curve) => {
                        let path = out.join(method.label()).join(format!("seed{}", sb.seed)).join(curve_file_name(b));
                        write_file(&path, &curve_csv(curve))?;
                        files.push(path.clone());
                        let t2 = fit_t2(curve);
                        if let Ok(t) = &t2 {
                            t2s.push(t.t2);
                        }
                        seeds_json.push(json!({
                            "seed": sb.seed,
                            "status": "ok",
                            "csv": path.strip_prefix(out).unwrap_or(&path).display().to_string(),
                            "t2_us": t2.as_ref().ok().map(|t| t.t2),
                            "t2_error": t2.as_ref().err().map(|e| e.to_string()),
                            "t2_fit_us": t2.as_ref().ok().and_then(|t| t.fit_t2),
                            "stretch_n": t2.as_ref().ok().and_then(|t| t.stretch_n),
                            "dominant_frequency_mhz": opt(dominant_frequency(curve).ok().flatten()),
                            "clamped_points": curve.clamped_points,
                            "max_abs_l": curve.abs().into_iter().fold(0.0, f64::max),
                            "line_check": line_report(cfg, curve),
                        }));
                    }
                    Err(e) => seeds_json.push(json!({ "seed": sb.seed, "status": "error", "error": e.to_string() })),
                }
            }
            let ok = per_seed.iter().any(|r| r.is_ok());
            any_ok |= ok;
            let mean_t2 = if t2s.is_empty() { None } else { Some(t2s.iter().sum::<f64>() / t2s.len() as f64) };
            fields.push(json!({
                "b_gauss": b,
                "t_span_us": tau.span() * 2.0,
                "status": if ok { "ok" } else { "error" },
                "t2_mean_us": opt(mean_t2),
                "seeds": seeds_json,
            }));
        }
        methods_json.insert(method.label(), Value::Array(fields));
    }
    let mut m = header(cfg);
    m.insert("tb_gauss".into(), opt(tb));
    m.insert("methods".into(), json!(methods_json));
    Ok(RunOutcome { summary: json!(m), all_failed: !any_ok, files })
}

fn run_eseem(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let cs = cfg.central_spin()?;
    let bath = build_bath(&cfg.bath_config(cfg.seed)?)?;
    let chosen: Vec<usize> = (0..bath.len()).filter(|&i| cfg.eseem_shells.contains(&bath.spins[i].site.shell_index)).collect();
    let mut files = Vec::new();
    let mut fields = Vec::new();
    let mut any_ok = false;
    for &b in &cfg.b_grid {
        let tau = match cfg.t_span {
            TimeSpan::Fixed(s) => TauGrid::uniform(s, cfg.tau_points)?,
            TimeSpan::Auto { below, .. } => TauGrid::uniform(below, cfg.tau_points)?,
        };
        if let Err(e) = check_secular(&cs, b) {
            fields.push(json!({ "b_gauss": b, "status": "error", "error": e.to_string() }));
            continue;
        }
        let mut csv = String::from("nucleus,shell,species,tau_us,t_us,v0,v_alpha,v_beta,v_plus,v_minus,total\n");
        let mut nuclei = Vec::new();
        let mut shell_products: BTreeMap<usize, f64> = BTreeMap::new();
        for &i in &chosen {
            let n = &bath.spins[i];
            let terms = eseem_decompose(&cs, n, i, b, &tau)?;
            let total = terms.total();
            for k in 0..tau.len() {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    i,
                    n.site.shell_index,
                    n.species.label(),
                    tau.taus[k],
                    2.0 * tau.taus[k],
                    terms.v0,
                    terms.v_alpha[k],
                    terms.v_beta[k],
                    terms.v_plus[k],
                    terms.v_minus[k],
                    total[k]
                );
            }
            *shell_products.entry(n.site.shell_index).or_insert(1.0) *= terms.v0;
            nuclei.push(json!({
                "nucleus": i,
                "shell": n.site.shell_index,
                "species": n.species.label(),
                "distance_a": n.site.distance(),
                "v0": terms.v0,
                "frequencies_alpha_mhz": terms.frequencies_alpha,
                "frequencies_beta_mhz": terms.frequencies_beta,
            }));
        }
        let path = out.join(format!("eseem_B{}G.csv", field_label(b)));
        write_file(&path, &csv)?;
        files.push(path);
        any_ok = true;
        let shells: BTreeMap<String, f64> = shell_products.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        fields.push(json!({ "b_gauss": b, "status": "ok", "nuclei": nuclei, "v0_product_by_shell": shells }));
    }
    let mut m = header(cfg);
    m.insert("fields".into(), Value::Array(fields));
    Ok(RunOutcome { summary: json!(m), all_failed: !any_ok, files })
}

fn tb_csv(r: &TbReport) -> String {
    let mut s = String::from("b_gauss,max_ratio,v0_product\n");
    let mut v0 = r.v0_b_grid.iter().zip(&r.v0_product).peekable();
    for (b, ratio) in r.b_grid.iter().zip(&r.max_ratio) {
        let p = match v0.peek() {
            Some((vb, vp)) if *vb == b => {
                let p = vp.to_string();
                v0.next();
                p
            }
            _ => String::new(),
        };
        let _ = writeln!(s, "{b},{ratio},{p}");
    }
    s
}

fn run_tb(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let cs = cfg.central_spin()?;
    let bath: Bath = build_bath(&cfg.bath_config(cfg.seed)?)?;
    let r = tb_report(&cs, &bath, &cfg.b_grid, cfg.tb_m_s, cfg.v0_span_us)?;
    let path = out.join("tb.csv");
    write_file(&path, &tb_csv(&r))?;
    let mut m = header(cfg);
    m.insert("tb_gauss".into(), opt(r.tb));
    m.insert("v0_intercept_gauss".into(), opt(r.v0_intercept));
    m.insert("tb_m_s".into(), json!(cfg.tb_m_s));
    m.insert("boron_species".into(), json!(bath.spins.iter().filter(|s| s.species.sublattice() == Species::B11.sublattice()).map(|s| s.species.label()).collect::<std::collections::BTreeSet<_>>()));
    Ok(RunOutcome { summary: json!(m), all_failed: false, files: vec![path] })
}
