//! h-BN lattice, isotope assignment, hyperfine/quadrupole tensors and
//! nuclear dipolar couplings.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{dipolar_constant_mhz_a3, GAMMA_E};

pub type Tensor3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

/// In-plane lattice constant, Å.
pub const LATTICE_A: f64 = 2.504;
/// Interlayer spacing c/2, Å.
pub const LAYER_SPACING: f64 = 3.33;
/// Sites closer than this share a shell index.
pub const SHELL_TIE_TOL: f64 = 1e-3;
/// Position tolerance when matching tensor-table rows to sites.
pub const TABLE_MATCH_TOL: f64 = 0.3;

/// Bundled approximate tensor table for the sites around the vacancy.
pub const SHIPPED_TENSOR_TABLE: &str = include_str!("../../../data/vb_tensors.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Species {
    B10,
    B11,
    N14,
    N15,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sublattice {
    B,
    N,
}

impl Species {
    pub const ALL: [Species; 4] = [Species::B10, Species::B11, Species::N14, Species::N15];

    pub fn spin(self) -> f64 {
        match self {
            Species::B10 => 3.0,
            Species::B11 => 1.5,
            Species::N14 => 1.0,
            Species::N15 => 0.5,
        }
    }

    pub fn dim(self) -> usize {
        (2.0 * self.spin()).round() as usize + 1
    }

    /// Gyromagnetic ratio, rad G⁻¹ ms⁻¹.
    pub fn gamma(self) -> f64 {
        match self {
            Species::B10 => 2.875,
            Species::B11 => 8.585,
            Species::N14 => 1.9338,
            Species::N15 => -2.7126,
        }
    }

    pub fn natural_abundance(self) -> f64 {
        match self {
            Species::B10 => 0.199,
            Species::B11 => 0.801,
            Species::N14 => 0.996,
            Species::N15 => 0.004,
        }
    }

    /// Electric quadrupole moment, barn.
    pub fn quadrupole_moment(self) -> f64 {
        match self {
            Species::B10 => 0.0845,
            Species::B11 => 0.04059,
            Species::N14 => 0.02044,
            Species::N15 => 0.0,
        }
    }

    pub fn sublattice(self) -> Sublattice {
        match self {
            Species::B10 | Species::B11 => Sublattice::B,
            Species::N14 | Species::N15 => Sublattice::N,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Species::B10 => "10B",
            Species::B11 => "11B",
            Species::N14 => "14N",
            Species::N15 => "15N",
        }
    }

    /// eQ/(2I(2I-1)) up to the field gradient; zero for I = 1/2.
    fn quadrupole_scale(self) -> f64 {
        let i = self.spin();
        if i < 1.0 {
            0.0
        } else {
            self.quadrupole_moment() / (2.0 * i * (2.0 * i - 1.0))
        }
    }

    /// Quadrupole tensor far from the defect (axial about c).
    pub fn bulk_quadrupole(self) -> Tensor3 {
        // C_q of bulk h-BN: 2.93 MHz for 11B; 10B follows from the moment
        // ratio; 14N is small.
        let cq = match self {
            Species::B11 => 2.93,
            Species::B10 => 2.93 * Species::B10.quadrupole_moment() / Species::B11.quadrupole_moment(),
            Species::N14 => 0.14,
            Species::N15 => 0.0,
        };
        let i = self.spin();
        if i < 1.0 {
            return [[0.0; 3]; 3];
        }
        let qzz = cq / (2.0 * i * (2.0 * i - 1.0));
        [[-qzz / 2.0, 0.0, 0.0], [0.0, -qzz / 2.0, 0.0], [0.0, 0.0, qzz]]
    }
}

impl FromStr for Species {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "10B" | "B10" => Ok(Species::B10),
            "11B" | "B11" => Ok(Species::B11),
            "14N" | "N14" => Ok(Species::N14),
            "15N" | "N15" => Ok(Species::N15),
            other => Err(Error::InvalidArgument(format!("unknown species label '{other}'"))),
        }
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSite {
    pub position: Vec3,
    pub sublattice: Sublattice,
    pub layer_index: i32,
    pub shell_index: usize,
    /// Integer cell coordinates; stable under changes of bath radius.
    pub cell: (i32, i32),
}

impl LatticeSite {
    pub fn distance(&self) -> f64 {
        norm(self.position)
    }

    /// Counter key for isotope sampling.
    pub fn key(&self) -> u64 {
        let i = (self.cell.0 as i64 + (1 << 19)) as u64 & 0xF_FFFF;
        let j = (self.cell.1 as i64 + (1 << 19)) as u64 & 0xF_FFFF;
        let l = (self.layer_index as i64 + (1 << 11)) as u64 & 0xFFF;
        let s = match self.sublattice {
            Sublattice::B => 0u64,
            Sublattice::N => 1u64,
        };
        (i << 44) | (j << 24) | (l << 12) | s
    }
}

pub fn norm(v: Vec3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// All B and N sites within `bath_radius` of the vacancy (a B site at the
/// origin, excluded), over layers -layers..=layers. AA' stacking: B and N
/// swap positions on odd layers.
pub fn build_lattice(bath_radius: f64, layers: u32) -> Result<Vec<LatticeSite>> {
    if !(bath_radius > 0.0) {
        return Err(Error::InvalidArgument(format!("bath_radius must be > 0, got {bath_radius}")));
    }
    let a = LATTICE_A;
    let a1 = [a, 0.0, 0.0];
    let a2 = [a / 2.0, a * 3f64.sqrt() / 2.0, 0.0];
    let off = [(a1[0] + a2[0]) / 3.0, (a1[1] + a2[1]) / 3.0, 0.0];
    let n = (bath_radius / (a * 3f64.sqrt() / 2.0)).ceil() as i32 + 2;
    let max_layer = (layers as i32).min((bath_radius / LAYER_SPACING).floor() as i32);
    let mut sites = Vec::new();
    for layer in -max_layer..=max_layer {
        let z = layer as f64 * LAYER_SPACING;
        for i in -n..=n {
            for j in -n..=n {
                let p = [i as f64 * a1[0] + j as f64 * a2[0], i as f64 * a1[1] + j as f64 * a2[1]];
                let q = [p[0] + off[0], p[1] + off[1]];
                let (bpos, npos) = if layer.rem_euclid(2) == 0 { (p, q) } else { (q, p) };
                for (sl, xy) in [(Sublattice::B, bpos), (Sublattice::N, npos)] {
                    let r = [xy[0], xy[1], z];
                    let d = norm(r);
                    if d < 1e-6 || d > bath_radius {
                        continue;
                    }
                    sites.push(LatticeSite { position: r, sublattice: sl, layer_index: layer, shell_index: 0, cell: (i, j) });
                }
            }
        }
    }
    sites.sort_by(|x, y| {
        x.distance()
            .partial_cmp(&y.distance())
            .unwrap()
            .then(x.layer_index.cmp(&y.layer_index))
            .then(x.cell.cmp(&y.cell))
            .then(x.sublattice.cmp(&y.sublattice))
    });
    let mut shell = 0usize;
    let mut last = f64::NEG_INFINITY;
    for s in &mut sites {
        let d = s.distance();
        if d - last > SHELL_TIE_TOL {
            shell += 1;
            last = d;
        }
        s.shell_index = shell;
    }
    Ok(sites)
}

/// Default layer count covering a given radius.
pub fn layers_for_radius(bath_radius: f64) -> u32 {
    (bath_radius / LAYER_SPACING).floor().max(0.0) as u32
}

/// Isotope occupation for one sublattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SublatticeMix {
    Pure(Species),
    /// Probability of the heavier-abundance-listed first species; the other
    /// isotope of the same element fills the rest.
    Mixed { first: Species, second: Species, p_first: f64 },
}

impl SublatticeMix {
    fn draw(&self, u: f64) -> Species {
        match *self {
            SublatticeMix::Pure(s) => s,
            SublatticeMix::Mixed { first, second, p_first } => {
                if u < p_first {
                    first
                } else {
                    second
                }
            }
        }
    }

    fn is_pure(&self) -> bool {
        matches!(self, SublatticeMix::Pure(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Composition {
    pub label: String,
    pub boron: SublatticeMix,
    pub nitrogen: SublatticeMix,
}

impl Composition {
    pub fn pure(b: Species, n: Species) -> Result<Self> {
        if b.sublattice() != Sublattice::B || n.sublattice() != Sublattice::N {
            return Err(Error::InvalidArgument(format!("{b}{n} is not a boron/nitrogen pair")));
        }
        Ok(Composition { label: format!("{b}{n}"), boron: SublatticeMix::Pure(b), nitrogen: SublatticeMix::Pure(n) })
    }

    pub fn natural() -> Self {
        Composition {
            label: "natural".into(),
            boron: SublatticeMix::Mixed { first: Species::B10, second: Species::B11, p_first: Species::B10.natural_abundance() },
            nitrogen: SublatticeMix::Mixed { first: Species::N14, second: Species::N15, p_first: Species::N14.natural_abundance() },
        }
    }

    /// Accepts "10B14N", "11B15N", ..., or "natural".
    pub fn from_label(label: &str) -> Result<Self> {
        let l = label.trim();
        if l.eq_ignore_ascii_case("natural") {
            return Ok(Self::natural());
        }
        if l.len() != 6 {
            return Err(Error::InvalidArgument(format!("unknown composition '{l}'")));
        }
        let b: Species = l[..3].parse()?;
        let n: Species = l[3..].parse()?;
        Self::pure(b, n)
    }

    pub fn is_pure(&self) -> bool {
        self.boron.is_pure() && self.nitrogen.is_pure()
    }

    fn mix(&self, sl: Sublattice) -> &SublatticeMix {
        match sl {
            Sublattice::B => &self.boron,
            Sublattice::N => &self.nitrogen,
        }
    }
}

/// Species for each site; a pure function of (site keys, composition, seed).
pub fn assign_isotopes(sites: &[LatticeSite], composition: &Composition, seed: u64) -> Vec<Species> {
    sites
        .iter()
        .map(|s| {
            let mix = composition.mix(s.sublattice);
            if mix.is_pure() {
                return mix.draw(0.0);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s.key());
            mix.draw(rng.gen::<f64>())
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TensorSource {
    DftTable,
    PointDipole,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathSpin {
    pub site: LatticeSite,
    pub species: Species,
    /// Hyperfine tensor, MHz.
    pub a: Tensor3,
    /// Quadrupole tensor (I·Q·I), MHz.
    pub q: Tensor3,
    pub a_source: TensorSource,
}

/// A = C (3 r̂r̂ − 1)/r³ in MHz.
pub fn point_dipole_hyperfine(r: Vec3, gamma_n: f64) -> Result<Tensor3> {
    let d = norm(r);
    if d <= 0.5 {
        return Err(Error::InvalidArgument(format!("point-dipole hyperfine singular at |r| = {d} Å")));
    }
    Ok(dipolar_form(r, dipolar_constant_mhz_a3(GAMMA_E, gamma_n)))
}

fn dipolar_form(r: Vec3, c: f64) -> Tensor3 {
    let d2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    let d5 = d2 * d2 * d2.sqrt();
    let mut t = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let delta = if a == b { d2 } else { 0.0 };
            t[a][b] = c * (3.0 * r[a] * r[b] - delta) / d5;
        }
    }
    t
}

/// Nuclear-nuclear dipolar tensor J (MHz) for H = I_i·J·I_j.
pub fn nuclear_dipolar_coupling(i: &BathSpin, j: &BathSpin) -> Result<Tensor3> {
    let r = sub(j.site.position, i.site.position);
    let d = norm(r);
    if d <= 0.3 {
        return Err(Error::InvalidArgument(format!("coincident nuclei (separation {d} Å)")));
    }
    let c = dipolar_constant_mhz_a3(i.species.gamma(), j.species.gamma());
    let t = dipolar_form(r, c);
    // two nuclear moments parallel to their spins: opposite sign to the
    // electron-nucleus form
    Ok(t.map(|row| row.map(|x| -x)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRow {
    pub line: usize,
    pub species: Species,
    pub position: Vec3,
    pub a: Tensor3,
    pub q: Tensor3,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorTable {
    pub rows: Vec<TensorRow>,
}

fn parse_tensor(vals: &[f64]) -> Tensor3 {
    [[vals[0], vals[1], vals[2]], [vals[3], vals[4], vals[5]], [vals[6], vals[7], vals[8]]]
}

pub fn parse_tensor_table(text: &str) -> Result<TensorTable> {
    let mut rows = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() != 22 {
            return Err(Error::Parse { line, msg: format!("expected 22 columns, found {}", toks.len()) });
        }
        let species: Species = toks[0].parse().map_err(|e: Error| Error::Parse { line, msg: e.to_string() })?;
        let mut nums = Vec::with_capacity(21);
        for t in &toks[1..] {
            let v: f64 = t.parse().map_err(|_| Error::Parse { line, msg: format!("not a number: '{t}'") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, msg: format!("non-finite value '{t}'") });
            }
            nums.push(v);
        }
        rows.push(TensorRow {
            line,
            species,
            position: [nums[0], nums[1], nums[2]],
            a: parse_tensor(&nums[3..12]),
            q: parse_tensor(&nums[12..21]),
        });
    }
    Ok(TensorTable { rows })
}

pub fn load_dft_tensors(path: &Path) -> Result<TensorTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_tensor_table(&text)
}

pub fn shipped_tensor_table() -> TensorTable {
    parse_tensor_table(SHIPPED_TENSOR_TABLE).expect("bundled tensor table parses")
}

/// Row index matched to each site (None = point-dipole fallback), plus the
/// line numbers of rows that matched no site.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TableMatch {
    pub site_rows: Vec<Option<usize>>,
    pub unmatched_lines: Vec<usize>,
}

pub fn match_table(sites: &[LatticeSite], table: &TensorTable) -> Result<TableMatch> {
    let mut site_rows: Vec<Option<usize>> = vec![None; sites.len()];
    let mut unmatched_lines = Vec::new();
    for (ri, row) in table.rows.iter().enumerate() {
        let sl = row.species.sublattice();
        let mut best: Option<(usize, f64)> = None;
        for (si, s) in sites.iter().enumerate() {
            if s.sublattice != sl {
                continue;
            }
            let d = norm(sub(s.position, row.position));
            if d <= TABLE_MATCH_TOL && best.map_or(true, |(_, bd)| d < bd) {
                best = Some((si, d));
            }
        }
        match best {
            None => unmatched_lines.push(row.line),
            Some((si, _)) => {
                if let Some(prev) = site_rows[si] {
                    return Err(Error::Conflict(format!(
                        "rows at lines {} and {} both match the site at {:?}",
                        table.rows[prev].line, row.line, sites[si].position
                    )));
                }
                site_rows[si] = Some(ri);
            }
        }
    }
    Ok(TableMatch { site_rows, unmatched_lines })
}

/// Transfers a tabulated tensor to another isotope of the same element:
/// A scales with γ, Q with eQ/(2I(2I−1)).
fn rescale_row(row: &TensorRow, target: Species) -> (Tensor3, Tensor3) {
    if row.species == target {
        return (row.a, row.q);
    }
    let fa = target.gamma() / row.species.gamma();
    let a = row.a.map(|r| r.map(|x| x * fa));
    let ref_scale = row.species.quadrupole_scale();
    let q = if ref_scale == 0.0 {
        target.bulk_quadrupole()
    } else {
        let fq = target.quadrupole_scale() / ref_scale;
        row.q.map(|r| r.map(|x| x * fq))
    };
    (a, q)
}

#[derive(Clone, Debug)]
pub enum TableChoice {
    None,
    Shipped,
    Path(std::path::PathBuf),
}

#[derive(Clone, Debug)]
pub struct BathConfig {
    pub composition: Composition,
    pub bath_radius: f64,
    pub r_dipole: f64,
    pub seed: u64,
    pub table: TableChoice,
}

impl BathConfig {
    pub fn new(composition: Composition, bath_radius: f64) -> Self {
        BathConfig { composition, bath_radius, r_dipole: 8.0, seed: 0, table: TableChoice::Shipped }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bath_radius > 0.0) {
            return Err(Error::InvalidArgument("bath_radius must be > 0".into()));
        }
        if !(self.r_dipole > 0.0) || self.r_dipole > self.bath_radius {
            return Err(Error::InvalidArgument(format!(
                "r_dipole must be in (0, bath_radius], got {} with bath_radius {}",
                self.r_dipole, self.bath_radius
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PairCoupling {
    pub i: usize,
    pub j: usize,
    pub j_tensor: Tensor3,
}

#[derive(Clone, Debug)]
pub struct Bath {
    pub spins: Vec<BathSpin>,
    pub composition: String,
    pub seed: u64,
    pub r_dipole: f64,
    pub unmatched_table_lines: Vec<usize>,
}

impl Bath {
    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    /// Stable fingerprint of the species assignment (used to skip
    /// recomputation for seeds that yield the same bath).
    pub fn species_signature(&self) -> Vec<Species> {
        self.spins.iter().map(|s| s.species).collect()
    }

    /// New bath holding the listed spins (in the given order).
    pub fn subset(&self, idx: &[usize]) -> Bath {
        Bath {
            spins: idx.iter().map(|&i| self.spins[i].clone()).collect(),
            composition: self.composition.clone(),
            seed: self.seed,
            r_dipole: self.r_dipole,
            unmatched_table_lines: vec![],
        }
    }

    pub fn from_spins(spins: Vec<BathSpin>, r_dipole: f64) -> Bath {
        Bath { spins, composition: "custom".into(), seed: 0, r_dipole, unmatched_table_lines: vec![] }
    }

    /// Indices of spins in a given shell.
    pub fn shell(&self, shell_index: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.spins[i].site.shell_index == shell_index).collect()
    }
}

pub fn build_bath(cfg: &BathConfig) -> Result<Bath> {
    cfg.validate()?;
    let sites = build_lattice(cfg.bath_radius, layers_for_radius(cfg.bath_radius))?;
    let species = assign_isotopes(&sites, &cfg.composition, cfg.seed);
    let table = match &cfg.table {
        TableChoice::None => TensorTable::default(),
        TableChoice::Shipped => shipped_tensor_table(),
        TableChoice::Path(p) => load_dft_tensors(p)?,
    };
    let m = match_table(&sites, &table)?;
    let mut spins = Vec::with_capacity(sites.len());
    for (k, (site, sp)) in sites.into_iter().zip(species).enumerate() {
        let (a, q, src) = match m.site_rows[k] {
            Some(ri) => {
                let (a, q) = rescale_row(&table.rows[ri], sp);
                (a, q, TensorSource::DftTable)
            }
            None => (point_dipole_hyperfine(site.position, sp.gamma())?, sp.bulk_quadrupole(), TensorSource::PointDipole),
        };
        spins.push(BathSpin { site, species: sp, a, q, a_source: src });
    }
    Ok(Bath {
        spins,
        composition: cfg.composition.label.clone(),
        seed: cfg.seed,
        r_dipole: cfg.r_dipole,
        unmatched_table_lines: m.unmatched_lines,
    })
}

/// All pairs with separation ≤ r_dipole, sorted by (i, j), via a cell list.
pub fn pair_couplings(bath: &Bath, r_dipole: f64) -> Result<Vec<PairCoupling>> {
    let n = bath.len();
    if n == 0 {
        return Ok(vec![]);
    }
    let h = r_dipole.max(1e-6);
    let cell_of = |p: Vec3| -> (i64, i64, i64) { ((p[0] / h).floor() as i64, (p[1] / h).floor() as i64, (p[2] / h).floor() as i64) };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (k, s) in bath.spins.iter().enumerate() {
        grid.entry(cell_of(s.site.position)).or_default().push(k);
    }
    let mut out = Vec::new();
    for i in 0..n {
        let pi = bath.spins[i].site.position;
        let (cx, cy, cz) = cell_of(pi);
        let mut nbrs = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(v) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                        nbrs.extend(v.iter().copied().filter(|&j| j > i));
                    }
                }
            }
        }
        nbrs.sort_unstable();
        for j in nbrs {
            let d = norm(sub(bath.spins[j].site.position, pi));
            if d <= r_dipole {
                out.push(PairCoupling { i, j, j_tensor: nuclear_dipolar_coupling(&bath.spins[i], &bath.spins[j])? });
            }
        }
    }
    Ok(out)
}

pub fn is_symmetric(t: &Tensor3, tol: f64) -> bool {
    (0..3).all(|a| (0..3).all(|b| (t[a][b] - t[b][a]).abs() <= tol))
}

pub fn trace3(t: &Tensor3) -> f64 {
    t[0][0] + t[1][1] + t[2][2]
}
