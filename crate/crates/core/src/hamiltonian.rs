//! Central-spin, manifold, cluster and second-order effective Hamiltonians.
//!
//! Electron basis order is m_s = +1, 0, −1. Every matrix returned here is in
//! rad/μs.

use serde::{Deserialize, Serialize};

use crate::bathgen::{BathSpin, Tensor3};
use crate::error::{Error, Result};
use crate::spinops::{eig_hermitian, hermiticity_defect, spin_matrices, CMat, ProductSpace, SpinMatrices, C64, ONE, ZERO};
use crate::units::{larmor_rad_per_us, GAMMA_E, TWO_PI, ZFS_D_MHZ, ZFS_E_MHZ};

/// Largest Hilbert-space dimension a cluster may have.
pub const MAX_DIM: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentralSpin {
    /// MHz
    pub d: f64,
    /// MHz
    pub e: f64,
    /// rad G⁻¹ ms⁻¹
    pub gamma_e: f64,
    /// (a, b) m_s labels of the qubit.
    pub qubit_levels: (i8, i8),
}

impl Default for CentralSpin {
    fn default() -> Self {
        CentralSpin { d: ZFS_D_MHZ, e: ZFS_E_MHZ, gamma_e: GAMMA_E, qubit_levels: (0, 1) }
    }
}

impl CentralSpin {
    pub fn with_levels(mut self, a: i8, b: i8) -> Result<Self> {
        self.qubit_levels = (a, b);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.qubit_levels;
        if a == b || !(-1..=1).contains(&a) || !(-1..=1).contains(&b) {
            return Err(Error::InvalidArgument(format!("qubit levels must be two distinct values of +1, 0, -1, got ({a}, {b})")));
        }
        Ok(())
    }

    /// Field (G) of the m_s = 0 / −1 crossing.
    pub fn gslac_field(&self) -> f64 {
        (self.d * self.d - self.e * self.e).max(0.0).sqrt() / (self.gamma_e * 1e-3 / TWO_PI)
    }

    /// Diagonal E = 0 energy of level m (rad/μs).
    pub fn level_energy(&self, m: i8, b_gauss: f64) -> f64 {
        let m = m as f64;
        TWO_PI * self.d * (m * m - 2.0 / 3.0) + larmor_rad_per_us(self.gamma_e, b_gauss) * m
    }
}

/// Basis index of m_s in the (+1, 0, −1) ordering.
pub fn ms_index(m: i8) -> usize {
    (1 - m) as usize
}

fn electron_ops() -> SpinMatrices {
    spin_matrices(1.0).expect("spin 1")
}

pub fn central_hamiltonian(cs: &CentralSpin, b_gauss: f64) -> CMat {
    let s = electron_ops();
    let d = TWO_PI * cs.d;
    let e = TWO_PI * cs.e;
    let wz = larmor_rad_per_us(cs.gamma_e, b_gauss);
    let sz2 = &s.z * &s.z;
    let sx2 = &s.x * &s.x;
    let sy2 = &s.y * &s.y;
    CMat::from_fn(3, 3, |i, j| {
        let id = if i == j { 2.0 / 3.0 } else { 0.0 };
        (sz2[(i, j)] - C64::new(id, 0.0)) * d + (sx2[(i, j)] - sy2[(i, j)]) * e + s.z[(i, j)] * wz
    })
}

/// Eigenstates of H_e for the two qubit levels and the remaining level,
/// each labelled by its largest m_s overlap. Phases fixed so the largest
/// component is real and positive.
#[derive(Clone, Debug)]
pub struct QubitStates {
    pub a: [C64; 3],
    pub b: [C64; 3],
    pub c: [C64; 3],
    pub energies: [f64; 3],
}

pub fn qubit_states(cs: &CentralSpin, b_gauss: f64) -> Result<QubitStates> {
    cs.validate()?;
    let h = central_hamiltonian(cs, b_gauss);
    let eig = eig_hermitian(&h)?;
    // assign eigenvectors to m labels by the permutation of largest total overlap
    let w = |k: usize, m: usize| eig.vectors[(m, k)].norm_sqr();
    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let best = perms
        .iter()
        .max_by(|p, q| {
            let sp: f64 = (0..3).map(|m| w(p[m], m)).sum();
            let sq: f64 = (0..3).map(|m| w(q[m], m)).sum();
            sp.partial_cmp(&sq).unwrap()
        })
        .unwrap();
    let vec_for = |m: i8| -> ([C64; 3], f64) {
        let k = best[ms_index(m)];
        let mut v = [eig.vectors[(0, k)], eig.vectors[(1, k)], eig.vectors[(2, k)]];
        let big = (0..3).max_by(|&x, &y| v[x].norm().partial_cmp(&v[y].norm()).unwrap()).unwrap();
        let ph = v[big].conj() / v[big].norm();
        for x in &mut v {
            *x *= ph;
        }
        (v, eig.values[k])
    };
    let (la, lb) = cs.qubit_levels;
    let lc = [1i8, 0, -1].into_iter().find(|&m| m != la && m != lb).unwrap();
    let (a, ea) = vec_for(la);
    let (b, eb) = vec_for(lb);
    let (c, ec) = vec_for(lc);
    Ok(QubitStates { a, b, c, energies: [ea, eb, ec] })
}

fn rad(t: &Tensor3) -> Tensor3 {
    t.map(|r| r.map(|x| TWO_PI * x))
}

#[derive(Clone, Debug)]
pub struct ManifoldHamiltonian {
    pub m_s: i8,
    pub h: CMat,
    pub includes_mediated: bool,
}

/// Single-nucleus Hamiltonian in the m_s manifold (secular in the electron):
/// −γB Iz + m_s Σ_a A_za I_a + I·Q·I.
pub fn nuclear_manifold_hamiltonian(n: &BathSpin, m_s: i8, b_gauss: f64) -> Result<ManifoldHamiltonian> {
    if !(-1..=1).contains(&m_s) {
        return Err(Error::InvalidArgument(format!("m_s must be +1, 0 or -1, got {m_s}")));
    }
    let s = spin_matrices(n.species.spin())?;
    let d = s.dim();
    let a = rad(&n.a);
    let q = rad(&n.q);
    let w = larmor_rad_per_us(n.species.gamma(), b_gauss);
    let ops = [&s.x, &s.y, &s.z];
    let mut h = CMat::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            let mut v = -s.z[(r, c)] * w;
            for k in 0..3 {
                v += ops[k][(r, c)] * (m_s as f64 * a[2][k]);
            }
            h[(r, c)] = v;
        }
    }
    add_quadrupole(&mut h, &s, &q);
    Ok(ManifoldHamiltonian { m_s, h, includes_mediated: false })
}

fn add_quadrupole(h: &mut CMat, s: &SpinMatrices, q: &Tensor3) {
    if s.spin < 1.0 {
        return;
    }
    let ops = [&s.x, &s.y, &s.z];
    for a in 0..3 {
        for b in 0..3 {
            if q[a][b] != 0.0 {
                let p = ops[a] * ops[b];
                for r in 0..s.dim() {
                    for c in 0..s.dim() {
                        h[(r, c)] += p[(r, c)] * q[a][b];
                    }
                }
            }
        }
    }
}

/// Dipolar coupling between cluster members `a` and `b` (local indices).
#[derive(Clone, Debug)]
pub struct LocalCoupling {
    pub a: usize,
    pub b: usize,
    pub j: Tensor3,
}

#[derive(Clone, Debug)]
pub struct ClusterHamiltonian {
    pub h: CMat,
    /// [3, d_1, d_2, ...]
    pub dims: Vec<usize>,
    pub b_gauss: f64,
}

impl ClusterHamiltonian {
    pub fn nuclear_dim(&self) -> usize {
        self.dims[1..].iter().product()
    }
}

pub fn cluster_dim(spins: &[&BathSpin]) -> usize {
    3 * spins.iter().map(|s| s.species.dim()).product::<usize>()
}

fn check_dim(spins: &[&BathSpin]) -> Result<()> {
    let mut d: usize = 3;
    for s in spins {
        d = d.saturating_mul(s.species.dim());
    }
    if d > MAX_DIM {
        return Err(Error::InvalidArgument(format!("cluster dimension {d} exceeds the limit {MAX_DIM}")));
    }
    Ok(())
}

/// Full qubit ⊗ nuclei Hamiltonian with non-secular hyperfine.
pub fn cluster_hamiltonian(cs: &CentralSpin, spins: &[&BathSpin], couplings: &[LocalCoupling], b_gauss: f64) -> Result<ClusterHamiltonian> {
    check_dim(spins)?;
    let mut dims = vec![3usize];
    dims.extend(spins.iter().map(|s| s.species.dim()));
    let space = ProductSpace::new(&dims);
    let n = space.dim();
    let mut h = CMat::zeros(n, n);
    let he = central_hamiltonian(cs, b_gauss);
    space.add_local(&mut h, ONE, &[(0, &he)]);
    let e = electron_ops();
    let eops = [&e.x, &e.y, &e.z];
    let mats: Vec<SpinMatrices> = spins.iter().map(|s| spin_matrices(s.species.spin())).collect::<Result<_>>()?;
    for (k, (sp, m)) in spins.iter().zip(&mats).enumerate() {
        let f = k + 1;
        let a = rad(&sp.a);
        let nops = [&m.x, &m.y, &m.z];
        for i in 0..3 {
            for j in 0..3 {
                if a[i][j] != 0.0 {
                    space.add_local(&mut h, C64::new(a[i][j], 0.0), &[(0, eops[i]), (f, nops[j])]);
                }
            }
        }
        let mut hn = CMat::zeros(m.dim(), m.dim());
        let w = larmor_rad_per_us(sp.species.gamma(), b_gauss);
        for r in 0..m.dim() {
            hn[(r, r)] = C64::new(-w * m.m(r), 0.0);
        }
        add_quadrupole(&mut hn, m, &rad(&sp.q));
        space.add_local(&mut h, ONE, &[(f, &hn)]);
    }
    for c in couplings {
        if c.a == c.b || c.a >= spins.len() || c.b >= spins.len() {
            return Err(Error::InvalidArgument(format!("bad coupling indices ({}, {})", c.a, c.b)));
        }
        let j = rad(&c.j);
        let (ma, mb) = (&mats[c.a], &mats[c.b]);
        let oa = [&ma.x, &ma.y, &ma.z];
        let ob = [&mb.x, &mb.y, &mb.z];
        for x in 0..3 {
            for y in 0..3 {
                if j[x][y] != 0.0 {
                    space.add_local(&mut h, C64::new(j[x][y], 0.0), &[(c.a + 1, oa[x]), (c.b + 1, ob[y])]);
                }
            }
        }
    }
    debug_assert!(hermiticity_defect(&h) < 1e-9);
    Ok(ClusterHamiltonian { h, dims, b_gauss })
}

/// d×d block ⟨m|H|m'⟩ of a cluster Hamiltonian.
pub fn electron_block(ch: &ClusterHamiltonian, m: i8, mp: i8) -> CMat {
    let d = ch.nuclear_dim();
    let (r0, c0) = (ms_index(m) * d, ms_index(mp) * d);
    CMat::from_fn(d, d, |i, j| ch.h[(r0 + i, c0 + j)])
}

fn subtract_identity(h: &mut CMat, e: f64) {
    for k in 0..h.nrows() {
        h[(k, k)] -= C64::new(e, 0.0);
    }
}

/// First-order (projected) cluster Hamiltonian in the m_s manifold,
/// measured from the electron level energy.
pub fn cluster_manifold_hamiltonian(cs: &CentralSpin, spins: &[&BathSpin], couplings: &[LocalCoupling], b_gauss: f64, m_s: i8) -> Result<ManifoldHamiltonian> {
    let ch = cluster_hamiltonian(cs, spins, couplings, b_gauss)?;
    // E term (+1/−1 block) is off-diagonal in m_s and dropped here
    let mut h = electron_block(&ch, m_s, m_s);
    subtract_identity(&mut h, cs.level_energy(m_s, b_gauss));
    Ok(ManifoldHamiltonian { m_s, h, includes_mediated: false })
}

/// P_m H P_m + Σ_{m'≠m} P_m H P_m' H P_m / (E_m − E_m'), measured from E_m.
pub fn effective_manifold_hamiltonian(cs: &CentralSpin, spins: &[&BathSpin], couplings: &[LocalCoupling], b_gauss: f64, m_s: i8) -> Result<ManifoldHamiltonian> {
    let ch = cluster_hamiltonian(cs, spins, couplings, b_gauss)?;
    effective_from_cluster(cs, &ch, m_s)
}

pub fn effective_from_cluster(cs: &CentralSpin, ch: &ClusterHamiltonian, m_s: i8) -> Result<ManifoldHamiltonian> {
    let b = ch.b_gauss;
    let em = cs.level_energy(m_s, b);
    let mut h = electron_block(ch, m_s, m_s);
    subtract_identity(&mut h, em);
    for mp in [1i8, 0, -1] {
        if mp == m_s {
            continue;
        }
        let gap = em - cs.level_energy(mp, b);
        if gap.abs() < 1.0 {
            return Err(Error::Degenerate(format!(
                "levels m_s={m_s} and m_s={mp} are within {:.3} rad/us at {b} G; use the full cluster treatment",
                gap.abs()
            )));
        }
        let up = electron_block(ch, m_s, mp);
        let down = electron_block(ch, mp, m_s);
        let corr = &up * &down;
        let inv = 1.0 / gap;
        for i in 0..h.nrows() {
            for j in 0..h.ncols() {
                h[(i, j)] += corr[(i, j)] * inv;
            }
        }
    }
    // symmetrize away rounding
    let n = h.nrows();
    let hs = CMat::from_fn(n, n, |i, j| (h[(i, j)] + h[(j, i)].conj()) * 0.5);
    Ok(ManifoldHamiltonian { m_s, h: hs, includes_mediated: true })
}

pub fn zero_mat(n: usize) -> CMat {
    CMat::from_fn(n, n, |_, _| ZERO)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bathgen::{LatticeSite, Species, Sublattice, TensorSource};
    use crate::spinops::{kron, max_abs};

    fn spin(sp: Species, a: Tensor3, q: Tensor3) -> BathSpin {
        BathSpin {
            site: LatticeSite { position: [1.0, 2.0, 3.0], sublattice: sp.sublattice(), layer_index: 0, shell_index: 1, cell: (0, 0) },
            species: sp,
            a,
            q,
            a_source: TensorSource::DftTable,
        }
    }

    const Z: Tensor3 = [[0.0; 3]; 3];

    #[test]
    fn zero_field_splittings() {
        let cs = CentralSpin { e: 0.0, ..Default::default() };
        let e = eig_hermitian(&central_hamiltonian(&cs, 0.0)).unwrap();
        let v: Vec<f64> = e.values.iter().map(|x| x / TWO_PI).collect();
        assert!((v[2] - v[1]).abs() < 1e-9);
        assert!((v[1] - v[0] - 3480.0).abs() < 1e-9);
        let e2 = eig_hermitian(&central_hamiltonian(&CentralSpin::default(), 0.0)).unwrap();
        assert!(((e2.values[2] - e2.values[1]) / TWO_PI - 100.0).abs() < 1e-9);
    }

    #[test]
    fn gslac_near_1240_gauss() {
        let cs = CentralSpin::default();
        let mut best = (0.0, f64::INFINITY);
        let mut b = 1100.0;
        while b < 1400.0 {
            let st = qubit_states(&cs, b).unwrap();
            let _ = st;
            let e = eig_hermitian(&central_hamiltonian(&cs, b)).unwrap();
            let gap = (e.values[1] - e.values[0]).abs();
            if gap < best.1 {
                best = (b, gap);
            }
            b += 0.5;
        }
        assert!((best.0 - 1240.0).abs() < 10.0, "min gap at {}", best.0);
        assert!((cs.gslac_field() - 1241.7).abs() < 0.5);
    }

    #[test]
    fn qubit_states_labelled_by_ms() {
        let cs = CentralSpin::default();
        let st = qubit_states(&cs, 500.0).unwrap();
        assert!(st.a[1].norm() > 0.999);
        assert!(st.b[0].norm() > 0.99);
        let cs2 = cs.clone().with_levels(0, -1).unwrap();
        let st2 = qubit_states(&cs2, 500.0).unwrap();
        assert!(st2.b[2].norm() > 0.99);
        assert!(CentralSpin::default().with_levels(1, 1).is_err());
    }

    #[test]
    fn manifold_pure_zeeman() {
        let n = spin(Species::N15, Z, Z);
        let h = nuclear_manifold_hamiltonian(&n, 0, 1000.0).unwrap().h;
        let e = eig_hermitian(&h).unwrap();
        let w = larmor_rad_per_us(Species::N15.gamma(), 1000.0).abs();
        assert!(((e.values[1] - e.values[0]) - w).abs() < 1e-12);
    }

    #[test]
    fn empty_cluster_is_central() {
        let cs = CentralSpin::default();
        let ch = cluster_hamiltonian(&cs, &[], &[], 700.0).unwrap();
        assert!(max_abs((&ch.h - &central_hamiltonian(&cs, 700.0)).as_ref()) < 1e-12);
    }

    #[test]
    fn decoupled_cluster_is_kronecker_sum() {
        let cs = CentralSpin::default();
        let q = [[-0.1, 0.05, 0.0], [0.05, -0.2, 0.0], [0.0, 0.0, 0.3]];
        let n1 = spin(Species::N14, Z, q);
        let n2 = spin(Species::B11, Z, Species::B11.bulk_quadrupole());
        let ch = cluster_hamiltonian(&cs, &[&n1, &n2], &[], 900.0).unwrap();
        let h1 = nuclear_manifold_hamiltonian(&n1, 0, 900.0).unwrap().h;
        let h2 = nuclear_manifold_hamiltonian(&n2, 0, 900.0).unwrap().h;
        let he = central_hamiltonian(&cs, 900.0);
        let i3 = crate::spinops::identity(3);
        let want = &(&kron(&kron(&he, &crate::spinops::identity(3)), &crate::spinops::identity(4)) + &kron(&kron(&i3, &h1), &crate::spinops::identity(4))) + &kron(&kron(&i3, &crate::spinops::identity(3)), &h2);
        assert!(max_abs((&ch.h - &want).as_ref()) < 1e-10);
    }

    #[test]
    fn four_spin_model_dimension() {
        let n = spin(Species::N14, Z, Z);
        let ch = cluster_hamiltonian(&CentralSpin::default(), &[&n, &n, &n], &[], 100.0).unwrap();
        assert_eq!(ch.h.nrows(), 81);
    }

    #[test]
    fn dimension_guard() {
        let n = spin(Species::B10, Z, Z);
        // 3 * 7^5 = 50421
        let r = cluster_hamiltonian(&CentralSpin::default(), &[&n, &n, &n, &n, &n], &[], 100.0);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn cluster_hermitian() {
        let a = [[10.0, 2.0, 1.0], [2.0, 8.0, 0.5], [1.0, 0.5, 6.0]];
        let n1 = spin(Species::N14, a, Species::N14.bulk_quadrupole());
        let n2 = spin(Species::B10, [[1.0, 0.0, 0.3], [0.0, 1.0, 0.0], [0.3, 0.0, -2.0]], Species::B10.bulk_quadrupole());
        let c = LocalCoupling { a: 0, b: 1, j: [[0.01, 0.0, 0.002], [0.0, 0.01, 0.0], [0.002, 0.0, -0.02]] };
        let ch = cluster_hamiltonian(&CentralSpin::default(), &[&n1, &n2], &[c], 2500.0).unwrap();
        assert!(hermiticity_defect(&ch.h) < 1e-9);
    }

    #[test]
    fn projected_block_matches_sum_of_manifolds() {
        let cs = CentralSpin::default();
        let n1 = spin(Species::N14, [[3.0, 0.0, 1.0], [0.0, 2.0, 0.0], [1.0, 0.0, 5.0]], Species::N14.bulk_quadrupole());
        let h = cluster_manifold_hamiltonian(&cs, &[&n1], &[], 800.0, 1).unwrap().h;
        let want = nuclear_manifold_hamiltonian(&n1, 1, 800.0).unwrap().h;
        assert!(max_abs((&h - &want).as_ref()) < 1e-9);
    }

    #[test]
    fn mediated_vanishes_without_hyperfine() {
        let cs = CentralSpin::default();
        let n1 = spin(Species::B11, Z, Species::B11.bulk_quadrupole());
        let n2 = spin(Species::N14, Z, Species::N14.bulk_quadrupole());
        let j = LocalCoupling { a: 0, b: 1, j: [[0.001, 0.0, 0.0], [0.0, 0.001, 0.0], [0.0, 0.0, -0.002]] };
        let eff = effective_manifold_hamiltonian(&cs, &[&n1, &n2], &[j.clone()], 3000.0, 1).unwrap();
        let first = cluster_manifold_hamiltonian(&cs, &[&n1, &n2], &[j], 3000.0, 1).unwrap();
        assert!(eff.includes_mediated);
        // only the constant E²/(E+ − E−) shift survives
        let diff = &eff.h - &first.h;
        let c = diff[(0, 0)];
        for i in 0..diff.nrows() {
            for k in 0..diff.ncols() {
                let want = if i == k { c } else { ZERO };
                assert!((diff[(i, k)] - want).norm() < 1e-9);
            }
        }
    }

    fn mediated_flipflop(scale: f64) -> f64 {
        let cs = CentralSpin { e: 0.0, ..Default::default() };
        let a = [[80.0 * scale, 0.0, 0.0], [0.0, 60.0 * scale, 0.0], [0.0, 0.0, 47.0 * scale]];
        let n1 = spin(Species::N15, a, Z);
        let n2 = spin(Species::N15, a, Z);
        let h = effective_manifold_hamiltonian(&cs, &[&n1, &n2], &[], 30000.0, 1).unwrap().h;
        // |↑↓⟩ ↔ |↓↑⟩ element (indices 1, 2)
        h[(1, 2)].norm()
    }

    #[test]
    fn mediated_coupling_scales_quadratically() {
        let full = mediated_flipflop(1.0);
        let half = mediated_flipflop(0.5);
        assert!(full > 0.0);
        assert!((full / half - 4.0).abs() < 1e-9, "{}", full / half);
    }

    #[test]
    fn degeneracy_near_gslac() {
        let cs = CentralSpin { e: 0.0, ..Default::default() };
        let n = spin(Species::N14, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], Z);
        let b = cs.gslac_field();
        let r = effective_manifold_hamiltonian(&cs, &[&n], &[], b, 0);
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }

    #[test]
    fn sixth_shell_like_cancellation() {
        // A_zz equal to the Larmor frequency makes m_I = ±1 degenerate in m_s=+1
        let b = 14200.0;
        let w = larmor_rad_per_us(Species::N14.gamma(), b) / TWO_PI;
        let n = spin(Species::N14, [[5.8, 0.0, 0.0], [0.0, 5.4, 0.0], [0.0, 0.0, w]], Z);
        let h = nuclear_manifold_hamiltonian(&n, 1, b).unwrap().h;
        assert!((h[(0, 0)] - h[(2, 2)]).norm() < 1e-9);
        let _ = Sublattice::N;
    }
}
