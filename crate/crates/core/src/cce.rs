//! Hahn-echo kernels and the cluster-correlation expansion.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use faer::linalg::matmul::matmul;
use faer::{Accum, Par};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bathgen::{pair_couplings, Bath, BathSpin, PairCoupling};
use crate::error::{Error, Result};
use crate::hamiltonian::{cluster_hamiltonian, cluster_manifold_hamiltonian, effective_manifold_hamiltonian, qubit_states, CentralSpin, LocalCoupling};
use crate::spinops::{eig_hermitian, CMat, C64, ONE, ZERO};

/// Denominators smaller than this make a CCE factor fall back to 1.
pub const CLAMP_THRESHOLD: f64 = 1e-8;

/// Upper bound on complex elements held in one batched propagation buffer.
const BATCH_ELEMS: usize = 1 << 21;

/// Pairs handed to the worker pool per ordered-reduction step.
const PAIR_CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Generalized CCE: full qubit ⊗ cluster space.
    Gcce(u8),
    /// Conventional CCE on m_s-projected Hamiltonians, optionally with the
    /// second-order hyperfine-mediated terms.
    Cce { order: u8, mediated: bool },
    /// Exact 3·1st-shell-N core times gCCE2 of the remaining bath.
    HybridCore,
}

impl Method {
    pub fn order(&self) -> u8 {
        match *self {
            Method::Gcce(o) => o,
            Method::Cce { order, .. } => order,
            Method::HybridCore => 2,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Method::Gcce(o) => format!("gCCE{o}"),
            Method::Cce { order, mediated: false } => format!("cCCE{order}"),
            Method::Cce { order, mediated: true } => format!("cCCE{order}_mediated"),
            Method::HybridCore => "hybrid_core".into(),
        }
    }

    fn validate(&self) -> Result<()> {
        let o = self.order();
        if !(1..=3).contains(&o) {
            return Err(Error::InvalidArgument(format!("CCE order must be 1, 2 or 3, got {o}")));
        }
        Ok(())
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let bad = || Error::InvalidArgument(format!("unknown method '{t}'"));
        let m = if t == "hybrid_core" {
            Method::HybridCore
        } else if let Some(o) = t.strip_prefix("gCCE") {
            Method::Gcce(o.parse().map_err(|_| bad())?)
        } else if let Some(rest) = t.strip_prefix("cCCE") {
            let (o, mediated) = match rest.strip_suffix("_mediated") {
                Some(o) => (o, true),
                None => (rest, false),
            };
            Method::Cce { order: o.parse().map_err(|_| bad())?, mediated }
        } else {
            return Err(bad());
        };
        m.validate()?;
        Ok(m)
    }
}

/// Free-evolution half-times τ (μs); the echo is read out at t = 2τ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauGrid {
    pub taus: Vec<f64>,
}

impl TauGrid {
    /// `points` values of τ from 0 with total echo time 2τ_max = `t_span_us`.
    pub fn uniform(t_span_us: f64, points: usize) -> Result<Self> {
        if !(t_span_us > 0.0) || points < 2 {
            return Err(Error::InvalidArgument(format!("tau grid needs span > 0 and >= 2 points, got {t_span_us} / {points}")));
        }
        let dt = t_span_us / 2.0 / (points - 1) as f64;
        Ok(TauGrid { taus: (0..points).map(|k| k as f64 * dt).collect() })
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn span(&self) -> f64 {
        match (self.taus.first(), self.taus.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceCurve {
    pub b_gauss: f64,
    pub method: Method,
    pub tau: Vec<f64>,
    pub l: Vec<C64>,
    pub seed: u64,
    pub composition: String,
    /// τ points where a CCE division was clamped.
    pub clamped_points: usize,
}

impl CoherenceCurve {
    pub fn t(&self) -> Vec<f64> {
        self.tau.iter().map(|x| 2.0 * x).collect()
    }

    pub fn abs(&self) -> Vec<f64> {
        self.l.iter().map(|z| z.norm()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cluster {
    pub indices: Vec<usize>,
}

impl Cluster {
    pub fn order(&self) -> usize {
        self.indices.len()
    }
}

/// How a cluster is propagated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EchoKind {
    Full,
    Secular { mediated: bool },
}

/// Bath plus its dipolar pair graph.
#[derive(Clone, Debug)]
pub struct BathModel {
    pub bath: Bath,
    pub pairs: Vec<PairCoupling>,
    pair_lookup: HashMap<(usize, usize), usize>,
    neighbors: Vec<Vec<usize>>,
}

impl BathModel {
    pub fn new(bath: Bath) -> Result<Self> {
        let r = bath.r_dipole;
        Self::with_r_dipole(bath, r)
    }

    pub fn with_r_dipole(bath: Bath, r_dipole: f64) -> Result<Self> {
        let pairs = pair_couplings(&bath, r_dipole)?;
        let mut pair_lookup = HashMap::with_capacity(pairs.len());
        let mut neighbors = vec![Vec::new(); bath.len()];
        for (k, p) in pairs.iter().enumerate() {
            pair_lookup.insert((p.i, p.j), k);
            neighbors[p.i].push(p.j);
            neighbors[p.j].push(p.i);
        }
        for v in &mut neighbors {
            v.sort_unstable();
        }
        Ok(BathModel { bath, pairs, pair_lookup, neighbors })
    }

    pub fn coupling(&self, i: usize, j: usize) -> Option<&PairCoupling> {
        let key = if i < j { (i, j) } else { (j, i) };
        self.pair_lookup.get(&key).map(|&k| &self.pairs[k])
    }

    /// Dipolar couplings among the members, in local indices.
    pub fn local_couplings(&self, members: &[usize]) -> Vec<LocalCoupling> {
        let mut out = Vec::new();
        for a in 0..members.len() {
            for b in a + 1..members.len() {
                let (i, j) = (members[a], members[b]);
                if let Some(p) = self.coupling(i, j) {
                    // stored as (min, max); transpose when the member order is reversed
                    let jt = if i < j { p.j_tensor } else { transpose(&p.j_tensor) };
                    out.push(LocalCoupling { a, b, j: jt });
                }
            }
        }
        out
    }

    fn spins(&self, members: &[usize]) -> Vec<&BathSpin> {
        members.iter().map(|&i| &self.bath.spins[i]).collect()
    }

    /// Model restricted to `keep` (new indices follow the order of `keep`).
    pub fn subset(&self, keep: &[usize]) -> Result<BathModel> {
        BathModel::with_r_dipole(self.bath.subset(keep), self.bath.r_dipole)
    }
}

fn transpose(t: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut o = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            o[a][b] = t[b][a];
        }
    }
    o
}

/// Singletons, connected pairs and connected triples up to `order`,
/// ordered by (size, index tuple).
pub fn enumerate_clusters(bath: &Bath, order: usize, r_dipole: f64) -> Result<Vec<Cluster>> {
    let model = BathModel::with_r_dipole(bath.clone(), r_dipole)?;
    enumerate_model_clusters(&model, order)
}

pub fn enumerate_model_clusters(model: &BathModel, order: usize) -> Result<Vec<Cluster>> {
    if !(1..=3).contains(&order) {
        return Err(Error::InvalidArgument(format!("cluster order must be 1..=3, got {order}")));
    }
    let n = model.bath.len();
    let mut out: Vec<Cluster> = (0..n).map(|i| Cluster { indices: vec![i] }).collect();
    if order >= 2 {
        out.extend(model.pairs.iter().map(|p| Cluster { indices: vec![p.i, p.j] }));
    }
    if order >= 3 {
        let mut triples = std::collections::BTreeSet::new();
        for p in &model.pairs {
            for &k in model.neighbors[p.i].iter().chain(&model.neighbors[p.j]) {
                if k != p.i && k != p.j {
                    let mut t = vec![p.i, p.j, k];
                    t.sort_unstable();
                    triples.insert(t);
                }
            }
        }
        out.extend(triples.into_iter().map(|indices| Cluster { indices }));
    }
    Ok(out)
}

fn check_finite(l: &[C64]) -> Result<()> {
    if l.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical("non-finite coherence value".into()))
    }
}

/// Echo of the qubit coupled to one cluster, L_C(2τ) with L_C(0) = 1.
pub fn hahn_echo_cluster(cs: &CentralSpin, spins: &[&BathSpin], couplings: &[LocalCoupling], b_gauss: f64, taus: &[f64], kind: EchoKind) -> Result<Vec<C64>> {
    let l = match kind {
        EchoKind::Full => full_echo(cs, spins, couplings, b_gauss, taus)?,
        EchoKind::Secular { mediated } => secular_echo(cs, spins, couplings, b_gauss, taus, mediated)?,
    };
    check_finite(&l)?;
    Ok(l)
}

fn phases(values: &[f64], t: f64) -> Vec<C64> {
    values.iter().map(|&v| C64::from_polar(1.0, -v * t)).collect()
}

/// Full three-level electron ⊗ nuclei propagation with an ideal π pulse
/// swapping the qubit levels.
///
/// With H = V Λ V†, W = V† P V and C = V†(|a⟩+|b⟩)⊗1, the echo is
/// L = (1/d) Σ X ∘ conj(Z), X = A_v† D W D C, Z = B_v† D W D C.
fn full_echo(cs: &CentralSpin, spins: &[&BathSpin], couplings: &[LocalCoupling], b_gauss: f64, taus: &[f64]) -> Result<Vec<C64>> {
    let qs = qubit_states(cs, b_gauss)?;
    let ch = cluster_hamiltonian(cs, spins, couplings, b_gauss)?;
    let d = ch.nuclear_dim();
    let n = 3 * d;
    let eig = eig_hermitian(&ch.h)?;
    let v = &eig.vectors;

    // electron pulse P = |b⟩⟨a| + |a⟩⟨b| + |c⟩⟨c|
    let mut pe = [[ZERO; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            pe[r][c] = qs.b[r] * qs.a[c].conj() + qs.a[r] * qs.b[c].conj() + qs.c[r] * qs.c[c].conj();
        }
    }
    // P V, using P = P_e ⊗ 1
    let mut pv = CMat::zeros(n, n);
    for e in 0..3 {
        for f in 0..3 {
            let w = pe[e][f];
            if w == ZERO {
                continue;
            }
            for k in 0..n {
                for m in 0..d {
                    pv[(e * d + m, k)] += w * v[(f * d + m, k)];
                }
            }
        }
    }
    let mut wmat = CMat::zeros(n, n);
    matmul(wmat.as_mut(), Accum::Replace, v.as_ref().adjoint(), pv.as_ref(), ONE, Par::Seq);
    drop(pv);

    // [A_v | B_v] = V† [(|a⟩⊗1) | (|b⟩⊗1)]
    let mut ab = CMat::zeros(n, 2 * d);
    for k in 0..n {
        for m in 0..d {
            let mut sa = ZERO;
            let mut sb = ZERO;
            for e in 0..3 {
                let c = v[(e * d + m, k)].conj();
                sa += c * qs.a[e];
                sb += c * qs.b[e];
            }
            ab[(k, m)] = sa;
            ab[(k, d + m)] = sb;
        }
    }

    let chunk = (BATCH_ELEMS / (n * d)).clamp(1, taus.len().max(1));
    let mut out = Vec::with_capacity(taus.len());
    let scale = 1.0 / d as f64;
    for block in taus.chunks(chunk) {
        let tb = block.len();
        let ph: Vec<Vec<C64>> = block.iter().map(|&t| phases(&eig.values, t)).collect();
        let mut dc = CMat::zeros(n, d * tb);
        for (t, p) in ph.iter().enumerate() {
            for m in 0..d {
                for k in 0..n {
                    dc[(k, t * d + m)] = p[k] * (ab[(k, m)] + ab[(k, d + m)]);
                }
            }
        }
        let mut y = CMat::zeros(n, d * tb);
        matmul(y.as_mut(), Accum::Replace, wmat.as_ref(), dc.as_ref(), ONE, Par::Seq);
        drop(dc);
        for (t, p) in ph.iter().enumerate() {
            for m in 0..d {
                for k in 0..n {
                    y[(k, t * d + m)] *= p[k];
                }
            }
        }
        let mut xz = CMat::zeros(2 * d, d * tb);
        matmul(xz.as_mut(), Accum::Replace, ab.as_ref().adjoint(), y.as_ref(), ONE, Par::Seq);
        for t in 0..tb {
            let mut s = ZERO;
            for m in 0..d {
                for k in 0..d {
                    s += xz[(k, t * d + m)] * xz[(d + k, t * d + m)].conj();
                }
            }
            out.push(s * scale);
        }
    }
    Ok(out)
}

/// Conventional echo (1/d) Tr[U_a U_b U_a† U_b†] on manifold Hamiltonians.
fn secular_echo(cs: &CentralSpin, spins: &[&BathSpin], couplings: &[LocalCoupling], b_gauss: f64, taus: &[f64], mediated: bool) -> Result<Vec<C64>> {
    let (la, lb) = cs.qubit_levels;
    let (ha, hb) = if mediated {
        (effective_manifold_hamiltonian(cs, spins, couplings, b_gauss, la)?.h, effective_manifold_hamiltonian(cs, spins, couplings, b_gauss, lb)?.h)
    } else {
        (cluster_manifold_hamiltonian(cs, spins, couplings, b_gauss, la)?.h, cluster_manifold_hamiltonian(cs, spins, couplings, b_gauss, lb)?.h)
    };
    secular_echo_from_hamiltonians(&ha, &hb, taus)
}

/// (1/d) Tr[U_a U_b U_a† U_b†] for U_x = exp(−i H_x τ).
pub fn secular_echo_from_hamiltonians(ha: &CMat, hb: &CMat, taus: &[f64]) -> Result<Vec<C64>> {
    let ea = eig_hermitian(ha)?;
    let eb = eig_hermitian(hb)?;
    let d = ha.nrows();
    let mut m = CMat::zeros(d, d);
    matmul(m.as_mut(), Accum::Replace, ea.vectors.as_ref().adjoint(), eb.vectors.as_ref(), ONE, Par::Seq);
    let mdag = m.as_ref().adjoint().to_owned();
    let chunk = (BATCH_ELEMS / (d * d).max(1)).clamp(1, taus.len().max(1));
    let scale = 1.0 / d as f64;
    let mut out = Vec::with_capacity(taus.len());
    for block in taus.chunks(chunk) {
        let tb = block.len();
        // [D_b(t) M†] and [D_b(−t) M†] side by side
        let mut rhs = CMat::zeros(d, 2 * d * tb);
        for (t, &tau) in block.iter().enumerate() {
            let pb = phases(&eb.values, tau);
            for j in 0..d {
                for k in 0..d {
                    rhs[(k, 2 * t * d + j)] = pb[k] * mdag[(k, j)];
                    rhs[(k, (2 * t + 1) * d + j)] = pb[k].conj() * mdag[(k, j)];
                }
            }
        }
        let mut f = CMat::zeros(d, 2 * d * tb);
        matmul(f.as_mut(), Accum::Replace, m.as_ref(), rhs.as_ref(), ONE, Par::Seq);
        for (t, &tau) in block.iter().enumerate() {
            let pa = phases(&ea.values, tau);
            let (c0, c1) = (2 * t * d, (2 * t + 1) * d);
            let mut s = ZERO;
            for i in 0..d {
                for j in 0..d {
                    s += pa[i] * f[(i, c0 + j)] * pa[j].conj() * f[(j, c1 + i)];
                }
            }
            out.push(s * scale);
        }
    }
    Ok(out)
}

fn kind_for(method: Method) -> EchoKind {
    match method {
        Method::Cce { mediated, .. } => EchoKind::Secular { mediated },
        _ => EchoKind::Full,
    }
}

/// Echo of one cluster of the model.
pub fn cluster_echo(model: &BathModel, cs: &CentralSpin, members: &[usize], b_gauss: f64, taus: &[f64], kind: EchoKind) -> Result<Vec<C64>> {
    let spins = model.spins(members);
    let couplings = model.local_couplings(members);
    hahn_echo_cluster(cs, &spins, &couplings, b_gauss, taus, kind)
}

/// Divides `num` by `den` pointwise; returns the number of clamped points.
fn tilde(num: &[C64], den: &[C64], out: &mut Vec<C64>) -> usize {
    out.clear();
    let mut clamped = 0;
    for (a, b) in num.iter().zip(den) {
        if b.norm() < CLAMP_THRESHOLD {
            out.push(ONE);
            clamped += 1;
        } else {
            out.push(a / b);
        }
    }
    clamped
}

/// Result of combining cluster contributions.
#[derive(Clone, Debug, PartialEq)]
pub struct Combined {
    pub l: Vec<C64>,
    pub clamped_points: usize,
}

/// L = Π_C L̃_C, L̃_C = L_C / Π_{C'⊊C} L̃_C', over the clusters present in
/// the map; products taken in (size, index tuple) order.
pub fn cce_combine(contributions: &BTreeMap<Vec<usize>, Vec<C64>>) -> Result<Combined> {
    let npts = contributions.values().next().map_or(0, |v| v.len());
    let mut keys: Vec<&Vec<usize>> = contributions.keys().collect();
    keys.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    let mut tildes: BTreeMap<Vec<usize>, Vec<C64>> = BTreeMap::new();
    let mut total = vec![ONE; npts];
    let mut clamped_mask = vec![false; npts];
    let mut buf = Vec::new();
    for key in keys {
        let lc = &contributions[key];
        if lc.len() != npts {
            return Err(Error::InvalidArgument("cluster curves differ in length".into()));
        }
        let mut den = vec![ONE; npts];
        for sub in proper_subsets(key) {
            match tildes.get(&sub) {
                Some(t) => {
                    for (d, x) in den.iter_mut().zip(t) {
                        *d *= x;
                    }
                }
                None if sub.len() == 1 => {
                    return Err(Error::InvalidArgument(format!("missing single-spin contribution for {:?}", sub)));
                }
                None => {}
            }
        }
        tilde(lc, &den, &mut buf);
        for (k, b) in den.iter().enumerate() {
            if b.norm() < CLAMP_THRESHOLD {
                clamped_mask[k] = true;
            }
        }
        for (t, x) in total.iter_mut().zip(&buf) {
            *t *= x;
        }
        tildes.insert(key.clone(), buf.clone());
    }
    Ok(Combined { l: total, clamped_points: clamped_mask.iter().filter(|&&c| c).count() })
}

fn proper_subsets(key: &[usize]) -> Vec<Vec<usize>> {
    let n = key.len();
    let mut out = Vec::new();
    for mask in 1..(1u32 << n) - 1 {
        out.push((0..n).filter(|&b| mask & (1 << b) != 0).map(|b| key[b]).collect());
    }
    out.sort_by(|a: &Vec<usize>, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    out
}

fn singles(model: &BathModel, cs: &CentralSpin, b_gauss: f64, taus: &[f64], kind: EchoKind) -> Result<Vec<Vec<C64>>> {
    (0..model.bath.len())
        .into_par_iter()
        .map(|i| cluster_echo(model, cs, &[i], b_gauss, taus, kind))
        .collect()
}

/// Coherence of the whole bath for one field.
pub fn bath_coherence(model: &BathModel, cs: &CentralSpin, b_gauss: f64, tau: &TauGrid, method: Method) -> Result<CoherenceCurve> {
    method.validate()?;
    cs.validate()?;
    let taus = &tau.taus;
    let npts = taus.len();
    let kind = kind_for(method);
    let (l, clamped) = match method {
        Method::HybridCore => return hybrid_core_echo(model, cs, b_gauss, tau),
        _ if method.order() <= 2 => {
            let single = singles(model, cs, b_gauss, taus, kind)?;
            let mut total = vec![ONE; npts];
            for s in &single {
                for (t, x) in total.iter_mut().zip(s) {
                    *t *= x;
                }
            }
            let mut mask = vec![false; npts];
            if method.order() == 2 {
                for chunk in model.pairs.chunks(PAIR_CHUNK) {
                    let curves: Vec<Vec<C64>> = chunk
                        .par_iter()
                        .map(|p| cluster_echo(model, cs, &[p.i, p.j], b_gauss, taus, kind))
                        .collect::<Result<_>>()?;
                    let mut buf = Vec::with_capacity(npts);
                    for (p, lc) in chunk.iter().zip(&curves) {
                        let den: Vec<C64> = single[p.i].iter().zip(&single[p.j]).map(|(a, b)| a * b).collect();
                        tilde(lc, &den, &mut buf);
                        for (k, d) in den.iter().enumerate() {
                            if d.norm() < CLAMP_THRESHOLD {
                                mask[k] = true;
                            }
                        }
                        for (t, x) in total.iter_mut().zip(&buf) {
                            *t *= x;
                        }
                    }
                }
            }
            (total, mask.iter().filter(|&&c| c).count())
        }
        _ => {
            let clusters = enumerate_model_clusters(model, method.order() as usize)?;
            let curves: Vec<Vec<C64>> = clusters
                .par_iter()
                .map(|c| cluster_echo(model, cs, &c.indices, b_gauss, taus, kind))
                .collect::<Result<_>>()?;
            let map: BTreeMap<Vec<usize>, Vec<C64>> = clusters.into_iter().map(|c| c.indices).zip(curves).collect();
            let c = cce_combine(&map)?;
            (c.l, c.clamped_points)
        }
    };
    check_finite(&l)?;
    Ok(CoherenceCurve {
        b_gauss,
        method,
        tau: taus.clone(),
        l,
        seed: model.bath.seed,
        composition: model.bath.composition.clone(),
        clamped_points: clamped,
    })
}

/// Exact echo of the 1st-shell nuclei (the qubit + 3 N "4-spin" core) times
/// gCCE2 of the rest of the bath; cross terms between core and rest dropped.
pub fn hybrid_core_echo(model: &BathModel, cs: &CentralSpin, b_gauss: f64, tau: &TauGrid) -> Result<CoherenceCurve> {
    let core: Vec<usize> = (0..model.bath.len()).filter(|&i| model.bath.spins[i].site.shell_index == 1).collect();
    let rest: Vec<usize> = (0..model.bath.len()).filter(|&i| model.bath.spins[i].site.shell_index != 1).collect();
    hybrid_echo(model, cs, &core, &rest, b_gauss, tau)
}

pub fn hybrid_echo(model: &BathModel, cs: &CentralSpin, core: &[usize], rest: &[usize], b_gauss: f64, tau: &TauGrid) -> Result<CoherenceCurve> {
    let mut l = if core.is_empty() { vec![ONE; tau.len()] } else { cluster_echo(model, cs, core, b_gauss, &tau.taus, EchoKind::Full)? };
    let mut clamped = 0;
    if !rest.is_empty() {
        let sub = model.subset(rest)?;
        let r = bath_coherence(&sub, cs, b_gauss, tau, Method::Gcce(2))?;
        for (a, b) in l.iter_mut().zip(&r.l) {
            *a *= b;
        }
        clamped = r.clamped_points;
    }
    Ok(CoherenceCurve {
        b_gauss,
        method: Method::HybridCore,
        tau: tau.taus.clone(),
        l,
        seed: model.bath.seed,
        composition: model.bath.composition.clone(),
        clamped_points: clamped,
    })
}

#[derive(Debug)]
pub struct FieldMap {
    pub b_grid: Vec<f64>,
    pub curves: Vec<Result<CoherenceCurve>>,
}

impl FieldMap {
    pub fn ok_curves(&self) -> impl Iterator<Item = &CoherenceCurve> {
        self.curves.iter().filter_map(|c| c.as_ref().ok())
    }
}

pub fn field_sweep(model: &BathModel, cs: &CentralSpin, b_grid: &[f64], tau: &TauGrid, method: Method) -> Result<FieldMap> {
    if b_grid.is_empty() {
        return Err(Error::InvalidArgument("empty field grid".into()));
    }
    if b_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("field grid must be strictly increasing".into()));
    }
    let curves = b_grid.iter().map(|&b| bath_coherence(model, cs, b, tau, method)).collect();
    Ok(FieldMap { b_grid: b_grid.to_vec(), curves })
}
