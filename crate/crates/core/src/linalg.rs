//! Dense complex matrix helpers on top of nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type Mat = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn eye(n: usize) -> Mat {
    Mat::identity(n, n)
}

pub fn zeros(r: usize, c: usize) -> Mat {
    Mat::zeros(r, c)
}

pub fn diag(v: &[C64]) -> Mat {
    Mat::from_diagonal(&nalgebra::DVector::from_column_slice(v))
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

pub fn mat_pow(a: &Mat, n: u32) -> Mat {
    let mut out = eye(a.nrows());
    for _ in 0..n {
        out = &out * a;
    }
    out
}

pub fn max_abs(a: &Mat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `max|a - b| / max(1, max|b|)`.
pub fn rel_diff(a: &Mat, b: &Mat) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    max_abs(&(a - b)) / 1f64.max(max_abs(b))
}

pub fn inverse(a: &Mat) -> Result<Mat> {
    if a.nrows() != a.ncols() {
        return Err(Error::Numerical("inverse of a non-square matrix".into()));
    }
    if a.nrows() == 0 {
        return Ok(a.clone());
    }
    let inv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular matrix".into()))?;
    let resid = rel_diff(&(a * &inv), &eye(a.nrows()));
    if !(resid < 1e-6) {
        return Err(Error::Numerical(format!("ill-conditioned inverse (residual {resid:.3e})")));
    }
    Ok(inv)
}

/// Real form `[[Re a, −Im a], [Im a, Re a]]`. Complex SVD in nalgebra returns
/// wrong factors on some rank-deficient inputs, so every SVD goes through
/// this embedding.
fn realify(a: &Mat) -> DMatrix<f64> {
    let (m, n) = a.shape();
    DMatrix::from_fn(2 * m, 2 * n, |i, j| {
        let z = a[(i % m, j % n)];
        match (i < m, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

fn complexify(v: nalgebra::DVectorView<f64>) -> nalgebra::DVector<C64> {
    let n = v.len() / 2;
    nalgebra::DVector::from_fn(n, |i, _| C64::new(v[i], v[i + n]))
}

/// Complex-orthonormal basis of the span of `vs`, by pivoted Gram–Schmidt.
fn complex_basis(mut vs: Vec<nalgebra::DVector<C64>>, dim: usize) -> Mat {
    let mut out: Vec<nalgebra::DVector<C64>> = Vec::new();
    loop {
        let Some((k, nrm)) = vs
            .iter()
            .map(|v| v.norm())
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        else {
            break;
        };
        if nrm < 1e-4 {
            break;
        }
        let q = vs.swap_remove(k) / C64::new(nrm, 0.0);
        for v in vs.iter_mut() {
            let proj = q.dotc(v);
            *v -= &q * proj;
        }
        out.push(q);
    }
    let mut m = zeros(dim, out.len());
    for (j, q) in out.iter().enumerate() {
        m.set_column(j, q);
    }
    m
}

pub fn singular_values(a: &Mat) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return vec![];
    }
    let mut s: Vec<f64> = realify(a).svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.partial_cmp(x).unwrap());
    s.into_iter().step_by(2).collect()
}

/// Orthonormal basis (as columns) of `{x : a x = 0}`; singular values below
/// `rel_tol * σ_max` count as zero.
pub fn null_space(a: &Mat, rel_tol: f64) -> Mat {
    let n = a.ncols();
    if n == 0 {
        return zeros(0, 0);
    }
    if a.nrows() == 0 || max_abs(a) == 0.0 {
        return eye(n);
    }
    let mut re = realify(a);
    if re.nrows() < re.ncols() {
        let c = re.ncols();
        re = re.resize_vertically(c, 0.0);
    }
    let svd = re.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let vs = (0..2 * n)
        .filter(|&k| svd.singular_values[k] <= rel_tol * smax)
        .map(|k| complexify(vt.row(k).transpose().as_view()))
        .collect();
    complex_basis(vs, n)
}

/// Orthonormal basis of the right singular subspace of `a` (square) for its
/// `m` smallest singular values, with the `m`-th and `(m+1)`-th smallest
/// singular values.
pub fn low_singular_subspace(a: &Mat, m: usize) -> (Mat, f64, f64) {
    let n = a.ncols();
    let svd = realify(a).svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.sort_by(|&x, &y| svd.singular_values[x].partial_cmp(&svd.singular_values[y]).unwrap());
    let vs = order[..2 * m].iter().map(|&k| complexify(vt.row(k).transpose().as_view())).collect();
    let sv = |k: usize| order.get(k).map(|&i| svd.singular_values[i]).unwrap_or(f64::INFINITY);
    (complex_basis(vs, n), sv(2 * m - 1), sv(2 * m))
}

/// Orthonormal basis of the real null space of a real matrix.
pub fn real_null_space(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = a.ncols();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let smax0 = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if a.nrows() == 0 || smax0 == 0.0 {
        return DMatrix::identity(n, n);
    }
    let mut re = a.clone();
    if re.nrows() < n {
        re = re.resize_vertically(n, 0.0);
    }
    let svd = re.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..n).filter(|&k| svd.singular_values[k] <= rel_tol * smax).collect();
    DMatrix::from_fn(n, keep.len(), |i, j| vt[(keep[j], i)])
}

/// Orthonormal basis of the column space, keeping singular values above `abs_tol`.
pub fn column_space(a: &Mat, abs_tol: f64) -> Mat {
    if a.ncols() == 0 || a.nrows() == 0 {
        return zeros(a.nrows(), 0);
    }
    let svd = realify(a).svd(true, false);
    let u = svd.u.expect("requested U");
    let vs = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > abs_tol)
        .map(|k| complexify(u.column(k)))
        .collect();
    complex_basis(vs, a.nrows())
}

/// Eigenvalues of a square complex matrix from its Schur form.
pub fn eigenvalues(a: &Mat) -> Result<Vec<C64>> {
    let n = a.nrows();
    match n {
        0 => return Ok(vec![]),
        1 => return Ok(vec![a[(0, 0)]]),
        _ => {}
    }
    for eps in [f64::EPSILON, 1e-14, 1e-13, 1e-12] {
        if let Some(schur) = nalgebra::linalg::Schur::try_new(a.clone(), eps, 10_000) {
            let (_, t) = schur.unpack();
            return Ok((0..n).map(|i| t[(i, i)]).collect());
        }
    }
    Err(Error::Numerical("Schur iteration did not converge".into()))
}

/// Eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(a: &Mat) -> (Vec<f64>, Mat) {
    let h = (a + a.adjoint()) * c(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let mut idx: Vec<usize> = (0..a.nrows()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = zeros(a.nrows(), a.nrows());
    for (j, &i) in idx.iter().enumerate() {
        vecs.set_column(j, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Permutation matrix of `x ⊗ y ↦ y ⊗ x` for `dim x = da`, `dim y = db`.
pub fn swap(da: usize, db: usize) -> Mat {
    let mut t = zeros(da * db, da * db);
    for i in 0..da {
        for j in 0..db {
            t[(j * da + i, i * db + j)] = ONE;
        }
    }
    t
}

/// Applies `Id_{dl} ⊗ local ⊗ Id_{dr}` to every column of `state`, whose rows
/// are indexed by `(l, m, r)` in row-major order with `m < local.ncols()`.
pub fn apply_local(state: &Mat, dl: usize, dr: usize, local: &Mat) -> Mat {
    let dm_in = local.ncols();
    let dm_out = local.nrows();
    assert_eq!(state.nrows(), dl * dm_in * dr, "apply_local: shape mismatch");
    let cols = state.ncols();
    let mut out = zeros(dl * dm_out * dr, cols);
    let nz: Vec<(usize, usize, C64)> = (0..dm_out)
        .flat_map(|a| (0..dm_in).map(move |b| (a, b)))
        .filter_map(|(a, b)| {
            let v = local[(a, b)];
            (v != ZERO).then_some((a, b, v))
        })
        .collect();
    for col in 0..cols {
        let src = state.column(col);
        let mut dst = out.column_mut(col);
        for l in 0..dl {
            for &(a, b, v) in &nz {
                let si = (l * dm_in + b) * dr;
                let di = (l * dm_out + a) * dr;
                for r in 0..dr {
                    dst[di + r] += v * src[si + r];
                }
            }
        }
    }
    out
}

/// Sum with pairwise (cascade) splitting, fixed order.
pub fn pairwise_sum(xs: &[C64]) -> C64 {
    match xs.len() {
        0 => ZERO,
        1 => xs[0],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}
