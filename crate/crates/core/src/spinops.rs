//! Spin operators, Hermitian eigendecomposition and propagators.
//!
//! All dense linear algebra goes through faer with sequential kernels so the
//! numbers do not depend on the worker count.

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = Mat<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I_UNIT: C64 = C64::new(0.0, 1.0);

/// Spin-I operators in the |I, m⟩ basis, m descending from +I.
#[derive(Clone, Debug)]
pub struct SpinMatrices {
    pub spin: f64,
    pub x: CMat,
    pub y: CMat,
    pub z: CMat,
}

impl SpinMatrices {
    pub fn dim(&self) -> usize {
        self.z.nrows()
    }

    pub fn component(&self, k: usize) -> &CMat {
        match k {
            0 => &self.x,
            1 => &self.y,
            _ => &self.z,
        }
    }

    /// Magnetic quantum number of basis index `k`.
    pub fn m(&self, k: usize) -> f64 {
        self.spin - k as f64
    }
}

/// Builds Sx, Sy, Sz for spin `spin` (a positive multiple of 1/2).
pub fn spin_matrices(spin: f64) -> Result<SpinMatrices> {
    let two_i = 2.0 * spin;
    if !(spin > 0.0) || (two_i - two_i.round()).abs() > 1e-12 || two_i > 64.0 {
        return Err(Error::InvalidArgument(format!(
            "spin must be a positive half-integer, got {spin}"
        )));
    }
    let d = two_i.round() as usize + 1;
    let m = |k: usize| spin - k as f64;
    let mut x = CMat::zeros(d, d);
    let mut y = CMat::zeros(d, d);
    let mut z = CMat::zeros(d, d);
    for k in 0..d {
        z[(k, k)] = C64::new(m(k), 0.0);
    }
    // <m+1| S+ |m> between index k+1 (m) and k (m+1)
    for k in 0..d - 1 {
        let mk = m(k + 1);
        let c = (spin * (spin + 1.0) - mk * (mk + 1.0)).sqrt();
        x[(k, k + 1)] = C64::new(0.5 * c, 0.0);
        x[(k + 1, k)] = C64::new(0.5 * c, 0.0);
        y[(k, k + 1)] = C64::new(0.0, -0.5 * c);
        y[(k + 1, k)] = C64::new(0.0, 0.5 * c);
    }
    Ok(SpinMatrices { spin, x, y, z })
}

/// Eigenpairs of a Hermitian matrix; values ascending, vectors in columns.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl Eigen {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

pub fn max_abs(m: MatRef<'_, C64>) -> f64 {
    let mut s: f64 = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s = s.max(m[(i, j)].norm());
        }
    }
    s
}

/// Largest |H_ij - conj(H_ji)|.
pub fn hermiticity_defect(h: &CMat) -> f64 {
    let n = h.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((h[(i, j)] - h[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn eig_hermitian(h: &CMat) -> Result<Eigen> {
    let n = h.nrows();
    if n != h.ncols() {
        return Err(Error::InvalidArgument(format!(
            "eig_hermitian needs a square matrix, got {}x{}",
            n,
            h.ncols()
        )));
    }
    let scale = max_abs(h.as_ref()).max(1.0);
    if hermiticity_defect(h) > 1e-12 * scale {
        return Err(Error::InvalidArgument(
            "matrix is not Hermitian within 1e-12 relative".into(),
        ));
    }
    if n == 0 {
        return Ok(Eigen { values: vec![], vectors: CMat::zeros(0, 0) });
    }
    let evd = h
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let s = evd.S();
    let values = (0..n).map(|k| s[k].re).collect();
    Ok(Eigen { values, vectors: evd.U().to_owned() })
}

/// exp(-i H t) from a precomputed eigendecomposition.
pub fn propagator(eig: &Eigen, t: f64) -> CMat {
    let n = eig.dim();
    let v = &eig.vectors;
    let vd = CMat::from_fn(n, n, |i, j| {
        let ph = C64::from_polar(1.0, -eig.values[j] * t);
        v[(i, j)] * ph
    });
    mul_adj_rhs(&vd, v)
}

/// a * b
pub fn mul(a: &CMat, b: &CMat) -> CMat {
    let mut out = CMat::zeros(a.nrows(), b.ncols());
    matmul(out.as_mut(), Accum::Replace, a.as_ref(), b.as_ref(), ONE, Par::Seq);
    out
}

/// a† * b
pub fn mul_adj_lhs(a: &CMat, b: &CMat) -> CMat {
    let mut out = CMat::zeros(a.ncols(), b.ncols());
    matmul(out.as_mut(), Accum::Replace, a.as_ref().adjoint(), b.as_ref(), ONE, Par::Seq);
    out
}

/// a * b†
pub fn mul_adj_rhs(a: &CMat, b: &CMat) -> CMat {
    let mut out = CMat::zeros(a.nrows(), b.nrows());
    matmul(out.as_mut(), Accum::Replace, a.as_ref(), b.as_ref().adjoint(), ONE, Par::Seq);
    out
}

pub fn adjoint(a: &CMat) -> CMat {
    a.as_ref().adjoint().to_owned()
}

pub fn identity(n: usize) -> CMat {
    CMat::from_fn(n, n, |i, j| if i == j { ONE } else { ZERO })
}

pub fn trace(a: &CMat) -> C64 {
    (0..a.nrows().min(a.ncols())).map(|k| a[(k, k)]).sum()
}

/// Tr(a b) without forming the product.
pub fn trace_of_product(a: &CMat, b: &CMat) -> C64 {
    let mut s = ZERO;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ra, ca, rb, cb) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    CMat::from_fn(ra * rb, ca * cb, |i, j| a[(i / rb, j / cb)] * b[(i % rb, j % cb)])
}

pub fn scale(a: &CMat, s: C64) -> CMat {
    CMat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

pub fn add(a: &CMat, b: &CMat) -> CMat {
    CMat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] + b[(i, j)])
}

/// Tensor-product Hilbert space of several factors, first factor slowest.
#[derive(Clone, Debug)]
pub struct ProductSpace {
    dims: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
}

impl ProductSpace {
    pub fn new(dims: &[usize]) -> Self {
        let mut strides = vec![1; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        let total = dims.iter().product();
        ProductSpace { dims: dims.to_vec(), strides, total }
    }

    pub fn dim(&self) -> usize {
        self.total
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn digit(&self, idx: usize, k: usize) -> usize {
        (idx / self.strides[k]) % self.dims[k]
    }

    /// h += coef * (op_1 on factor f_1) ⊗ (op_2 on factor f_2) ⊗ ... ⊗ 1.
    /// Factors must be distinct.
    pub fn add_local(&self, h: &mut CMat, coef: C64, ops: &[(usize, &CMat)]) {
        if coef == ZERO {
            return;
        }
        debug_assert!(ops.iter().all(|(f, o)| o.nrows() == self.dims[*f]));
        // sparse list of nonzeros for each factor
        let nz: Vec<Vec<(usize, usize, C64)>> = ops
            .iter()
            .map(|(_, o)| {
                let mut v = Vec::new();
                for i in 0..o.nrows() {
                    for j in 0..o.ncols() {
                        if o[(i, j)] != ZERO {
                            v.push((i, j, o[(i, j)]));
                        }
                    }
                }
                v
            })
            .collect();
        if nz.iter().any(|v| v.is_empty()) {
            return;
        }
        for row in 0..self.total {
            // row digits of the involved factors
            let digits: Vec<usize> = ops.iter().map(|(f, _)| self.digit(row, *f)).collect();
            let base: usize = row
                - ops
                    .iter()
                    .zip(&digits)
                    .map(|((f, _), d)| d * self.strides[*f])
                    .sum::<usize>();
            self.accumulate(h, coef, ops, &nz, &digits, 0, row, base, ONE);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn accumulate(
        &self,
        h: &mut CMat,
        coef: C64,
        ops: &[(usize, &CMat)],
        nz: &[Vec<(usize, usize, C64)>],
        digits: &[usize],
        level: usize,
        row: usize,
        col: usize,
        acc: C64,
    ) {
        if level == ops.len() {
            h[(row, col)] += coef * acc;
            return;
        }
        let f = ops[level].0;
        for &(i, j, v) in &nz[level] {
            if i == digits[level] {
                self.accumulate(h, coef, ops, nz, digits, level + 1, row, col + j * self.strides[f], acc * v);
            }
        }
    }
}
