//! Exact-diagonalization reference shared by the integration tests. The
//! Hamiltonian is assembled from explicit Kronecker products and diagonalized
//! with nalgebra; the echo is propagated state by state in the eigenbasis.
#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64 as C;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vbcce::bathgen::{LatticeSite, TensorSource};
use vbcce::{BathSpin, CentralSpin, Species, Tensor3};

pub type M = DMatrix<C>;

const TWO_PI: f64 = std::f64::consts::TAU;

fn c(x: f64) -> C {
    C::new(x, 0.0)
}

/// (Sx, Sy, Sz), basis ordered m = s, s−1, …, −s.
pub fn ops(s: f64) -> [M; 3] {
    let n = (2.0 * s + 1.0).round() as usize;
    let m = |k: usize| s - k as f64;
    let mut sp = M::zeros(n, n);
    for k in 1..n {
        let mk = m(k);
        sp[(k - 1, k)] = c((s * (s + 1.0) - mk * (mk + 1.0)).sqrt());
    }
    let sm = sp.adjoint();
    let x = (&sp + &sm) * c(0.5);
    let y = (&sp - &sm) * C::new(0.0, -0.5);
    let z = M::from_fn(n, n, |i, j| if i == j { c(m(i)) } else { c(0.0) });
    [x, y, z]
}

pub fn embed(dims: &[usize], f: usize, op: &M) -> M {
    let mut out = M::identity(1, 1);
    for (k, &d) in dims.iter().enumerate() {
        out = if k == f { out.kronecker(op) } else { out.kronecker(&M::identity(d, d)) };
    }
    out
}

/// Full electron ⊗ nuclei Hamiltonian in rad/μs.
pub fn hamiltonian(cs: &CentralSpin, spins: &[&BathSpin], pairs: &[(usize, usize, Tensor3)], b: f64) -> (M, Vec<usize>) {
    let mut dims = vec![3usize];
    dims.extend(spins.iter().map(|s| s.species.dim()));
    let n: usize = dims.iter().product();
    let s = ops(1.0);
    let mut he = &s[2] * &s[2] * c(TWO_PI * cs.d) - M::identity(3, 3) * c(TWO_PI * cs.d * 2.0 / 3.0);
    he += (&s[0] * &s[0] - &s[1] * &s[1]) * c(TWO_PI * cs.e);
    he += &s[2] * c(cs.gamma_e * 1e-3 * b);
    let mut h = embed(&dims, 0, &he);
    let se: Vec<M> = s.iter().map(|o| embed(&dims, 0, o)).collect();
    let nuc: Vec<Vec<M>> = spins.iter().enumerate().map(|(k, sp)| ops(sp.species.spin()).iter().map(|o| embed(&dims, k + 1, o)).collect()).collect();
    for (k, sp) in spins.iter().enumerate() {
        let i = &nuc[k];
        h -= &i[2] * c(sp.species.gamma() * 1e-3 * b);
        for a in 0..3 {
            for d in 0..3 {
                h += &se[a] * &i[d] * c(TWO_PI * sp.a[a][d]);
                h += &i[a] * &i[d] * c(TWO_PI * sp.q[a][d]);
            }
        }
    }
    for (p, q, j) in pairs {
        for a in 0..3 {
            for d in 0..3 {
                h += &nuc[*p][a] * &nuc[*q][d] * c(TWO_PI * j[a][d]);
            }
        }
    }
    assert_eq!(h.nrows(), n);
    (h, dims)
}

/// Electron eigenvectors in the (+1, 0, −1) basis: E only mixes ±1.
pub fn electron_states(cs: &CentralSpin, b: f64) -> [[f64; 3]; 3] {
    let e = TWO_PI * cs.e;
    let w = cs.gamma_e * 1e-3 * b;
    let theta = 0.5 * (2.0 * e).atan2(2.0 * w);
    let (co, si) = (theta.cos(), theta.sin());
    [[co, 0.0, si], [0.0, 1.0, 0.0], [-si, 0.0, co]]
}

/// Hahn echo L(τ) by exact diagonalization of the whole cluster.
pub fn ed_echo(cs: &CentralSpin, spins: &[&BathSpin], pairs: &[(usize, usize, Tensor3)], b: f64, taus: &[f64]) -> Vec<C> {
    let (h, dims) = hamiltonian(cs, spins, pairs, b);
    let dn: usize = dims[1..].iter().product();
    let n = h.nrows();
    let eig = nalgebra::SymmetricEigen::new(h);
    let v = eig.eigenvectors;
    let vd = v.adjoint();
    let st = electron_states(cs, b);
    let idx = |m: i8| (1 - m) as usize;
    let (la, lb) = cs.qubit_levels;
    let lc = [1i8, 0, -1].into_iter().find(|&m| m != la && m != lb).unwrap();
    let (va, vb, vc) = (st[idx(la)], st[idx(lb)], st[idx(lc)]);
    // π pulse: a ↔ b, c kept, identity on nuclei
    let mut pe = M::zeros(3, 3);
    for r in 0..3 {
        for q in 0..3 {
            pe[(r, q)] = c(vb[r] * va[q] + va[r] * vb[q] + vc[r] * vc[q]);
        }
    }
    let psi: Vec<f64> = (0..3).map(|r| (va[r] + vb[r]) / 2f64.sqrt()).collect();
    // columns: ψ ⊗ |k⟩ for every nuclear basis state k
    let init = M::from_fn(n, dn, |row, k| if row % dn == k { c(psi[row / dn]) } else { c(0.0) });
    let phi0 = &vd * init;
    let mut out = Vec::with_capacity(taus.len());
    for &tau in taus {
        let ph: Vec<C> = eig.eigenvalues.iter().map(|&e| C::from_polar(1.0, -e * tau)).collect();
        let mut x = phi0.clone();
        for (r, mut row) in x.row_iter_mut().enumerate() {
            row *= ph[r];
        }
        let y = &v * x;
        // apply the pulse on the electron index only
        let mut z = M::zeros(n, dn);
        for r in 0..3 {
            for q in 0..3 {
                if pe[(r, q)] != c(0.0) {
                    let blk = y.rows(q * dn, dn) * pe[(r, q)];
                    let mut dst = z.rows_mut(r * dn, dn);
                    dst += blk;
                }
            }
        }
        let mut w = &vd * z;
        for (r, mut row) in w.row_iter_mut().enumerate() {
            row *= ph[r];
        }
        let fin = &v * w;
        // 2⟨a|Tr_n ρ|b⟩ with ρ = Σ_k |φ_k⟩⟨φ_k| / d
        let mut l = c(0.0);
        for k in 0..dn {
            for m in 0..dn {
                let pa: C = (0..3).map(|r| fin[(r * dn + m, k)] * va[r]).sum();
                let pb: C = (0..3).map(|r| fin[(r * dn + m, k)] * vb[r]).sum();
                l += pa * pb.conj();
            }
        }
        out.push(l * (2.0 / dn as f64));
    }
    out
}

pub fn sym(rng: &mut ChaCha8Rng, scale: f64) -> Tensor3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let x = scale * rng.gen_range(-1.0..1.0);
            t[i][j] = x;
            t[j][i] = x;
        }
    }
    t
}

pub fn traceless(mut t: Tensor3) -> Tensor3 {
    let tr = (t[0][0] + t[1][1] + t[2][2]) / 3.0;
    for (i, row) in t.iter_mut().enumerate() {
        row[i] -= tr;
    }
    t
}

pub fn spin_with(species: Species, position: [f64; 3], a: Tensor3, q: Tensor3) -> BathSpin {
    BathSpin {
        site: LatticeSite { position, sublattice: species.sublattice(), layer_index: 0, shell_index: 0, cell: (0, 0) },
        species,
        a,
        q: if species.spin() > 0.5 { q } else { [[0.0; 3]; 3] },
        a_source: TensorSource::PointDipole,
    }
}

/// Random spin with MHz-scale hyperfine and quadrupole tensors.
pub fn random_spin(rng: &mut ChaCha8Rng, species: Species, position: [f64; 3]) -> BathSpin {
    let mut a = sym(rng, 2.0);
    let contact = rng.gen_range(-3.0..3.0);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += contact;
    }
    let q = traceless(sym(rng, 0.6));
    spin_with(species, position, a, q)
}
