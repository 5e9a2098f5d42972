//! Dense symmetric eigensolver for operators that are self-adjoint in a
//! quadrature-weighted inner product.
//!
//! The weighted problem is reduced to an ordinary symmetric one through the
//! similarity `W^{1/2} A W^{-1/2}`, tridiagonalized with Householder
//! reflections and diagonalized with the implicit-shift QL iteration (the
//! EISPACK `tred2`/`tql2` pair). A cyclic Jacobi solver is kept alongside as an
//! independent cross-check.

use std::fmt::Write as _;
use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{wdot, Matrix};

pub const DEFAULT_CLUSTER_TOL: f64 = 1e-8;

/// Eigenpairs in ascending order. Eigenvectors are orthonormal in the weighted
/// inner product `sum_i w_i u_i v_i`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    pub weights: Arc<[f64]>,
    /// Fiber rank of the sections the vectors represent.
    pub rank: usize,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn with_rank(mut self, rank: usize) -> Self {
        self.rank = rank;
        self
    }

    /// Largest eigenvalue magnitude, at least 1.
    pub fn scale(&self) -> f64 {
        self.eigenvalues.iter().fold(1.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        wdot(&self.weights, a, b)
    }

    /// CSV with columns `index,eigenvalue,multiplicity_cluster_id`.
    pub fn to_csv(&self, cluster_tol: f64) -> Result<String> {
        let clusters = cluster(self, cluster_tol)?;
        let mut ids = vec![0usize; self.len()];
        for (cid, c) in clusters.iter().enumerate() {
            for i in c.indices.clone() {
                ids[i] = cid;
            }
        }
        let mut out = String::from("index,eigenvalue,multiplicity_cluster_id\n");
        for (i, v) in self.eigenvalues.iter().enumerate() {
            writeln!(out, "{},{:.16e},{}", i, v, ids[i]).unwrap();
        }
        Ok(out)
    }
}

fn check_inputs(matrix: &Matrix, weights: &[f64]) -> Result<()> {
    if weights.len() != matrix.dim() {
        return Err(Error::Dimension { expected: matrix.dim(), got: weights.len() });
    }
    if !matrix.is_finite() || weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite);
    }
    if weights.iter().any(|&w| w <= 0.0) {
        return Err(Error::NonPositive);
    }
    let scale = (0..matrix.dim())
        .flat_map(|i| (0..matrix.dim()).map(move |j| (i, j)))
        .fold(0.0_f64, |m, (i, j)| m.max((weights[i] * matrix[(i, j)]).abs()));
    let asym = matrix.weighted_asymmetry(weights);
    if asym > 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Symmetric similarity transform `W^{1/2} A W^{-1/2}`, symmetrized.
fn reduce(matrix: &Matrix, sqrt_w: &[f64]) -> Matrix {
    let n = matrix.dim();
    Matrix::from_fn(n, |i, j| {
        let a = sqrt_w[i] * matrix[(i, j)] / sqrt_w[j];
        let b = sqrt_w[j] * matrix[(j, i)] / sqrt_w[i];
        0.5 * (a + b)
    })
}

fn finish(
    values: Vec<f64>,
    mut vectors: Vec<Vec<f64>>,
    sqrt_w: &[f64],
    weights: &[f64],
) -> Spectrum {
    for v in vectors.iter_mut() {
        for (x, s) in v.iter_mut().zip(sqrt_w) {
            *x /= s;
        }
        fix_sign(v);
    }
    Spectrum { eigenvalues: values, eigenvectors: vectors, weights: weights.into(), rank: 1 }
}

/// Flips `v` so that its first non-negligible component is positive.
pub fn fix_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-10 * max) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

pub fn solve_symmetric(matrix: &Matrix, weights: &[f64]) -> Result<Spectrum> {
    check_inputs(matrix, weights)?;
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let s = reduce(matrix, &sqrt_w);
    let (values, vectors) = tridiagonal_ql(&s)?;
    Ok(finish(values, vectors, &sqrt_w, weights))
}

/// Same contract as [`solve_symmetric`] but computed with cyclic Jacobi
/// rotations. Slower; used to cross-check the QL path.
pub fn solve_symmetric_jacobi(matrix: &Matrix, weights: &[f64]) -> Result<Spectrum> {
    check_inputs(matrix, weights)?;
    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let s = reduce(matrix, &sqrt_w);
    let (values, vectors) = jacobi(&s)?;
    Ok(finish(values, vectors, &sqrt_w, weights))
}

/// Solves `K u = λ M u` for a diagonal positive mass `M`. The result is
/// orthonormal in the mass-weighted product `sum_i w_i m_i u_i v_i`.
pub fn solve_generalized(stiffness: &Matrix, mass_diagonal: &[f64], weights: &[f64]) -> Result<Spectrum> {
    if mass_diagonal.len() != stiffness.dim() {
        return Err(Error::Dimension { expected: stiffness.dim(), got: mass_diagonal.len() });
    }
    if mass_diagonal.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::NonPositive);
    }
    // M^{-1} K is self-adjoint for the weights w * m.
    let n = stiffness.dim();
    let op = Matrix::from_fn(n, |i, j| stiffness[(i, j)] / mass_diagonal[i]);
    let mw: Vec<f64> = weights.iter().zip(mass_diagonal).map(|(w, m)| w * m).collect();
    solve_symmetric(&op, &mw)
}

/// Householder tridiagonalization followed by implicit QL. Returns ascending
/// eigenvalues and orthonormal eigenvectors of a symmetric matrix.
///
/// The working matrix is kept transposed (`v[c * n + r]` holds `V[r][c]`) so
/// that the column sweeps in both phases run over contiguous memory.
fn tridiagonal_ql(a: &Matrix) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.dim();
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut v = a.transpose().as_slice().to_vec();
    let idx = |r: usize, c: usize| c * n + r;
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];

    // tred2
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in &d[..i] {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
                v[idx(j, i)] = 0.0;
            }
        } else {
            for dk in d[..i].iter_mut() {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            e[..i].iter_mut().for_each(|x| *x = 0.0);
            for j in 0..i {
                f = d[j];
                v[idx(j, i)] = f;
                g = e[j] + v[idx(j, j)] * f;
                let col = &v[idx(0, j)..idx(0, j) + n];
                for k in (j + 1)..i {
                    g += col[k] * d[k];
                    e[k] += col[k] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                let col = &mut v[idx(0, j)..idx(0, j) + n];
                for k in j..i {
                    col[k] -= f * e[k] + g * d[k];
                }
                d[j] = v[idx(i - 1, j)];
                v[idx(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[idx(n - 1, i)] = v[idx(i, i)];
        v[idx(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[idx(k, i + 1)] / h;
            }
            for j in 0..=i {
                let (lo, hi) = v.split_at_mut(idx(0, i + 1));
                let house = &hi[..=i];
                let col = &mut lo[idx(0, j)..idx(0, j) + i + 1];
                let g: f64 = house.iter().zip(col.iter()).map(|(x, y)| x * y).sum();
                for (c, dk) in col.iter_mut().zip(&d[..=i]) {
                    *c -= g * dk;
                }
            }
        }
        for k in 0..=i {
            v[idx(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[idx(n - 1, j)];
        v[idx(n - 1, j)] = 0.0;
    }
    v[idx(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;

    // tql2
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0;
    let mut tst1 = 0.0_f64;
    let eps = f64::EPSILON;
    let max_iter = 60 * n.max(1);
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > max_iter {
                    return Err(Error::NoConvergence(iter));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;
                p = d[m];
                let (mut c, mut c2, mut c3) = (1.0, 1.0, 1.0);
                let el1 = e[l + 1];
                let (mut s, mut s2) = (0.0, 0.0);
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (lo, hi) = v.split_at_mut(idx(0, i + 1));
                    let ci = &mut lo[idx(0, i)..];
                    let ci1 = &mut hi[..n];
                    for (x, y) in ci.iter_mut().zip(ci1.iter_mut()) {
                        let hk = *y;
                        *y = s * *x + c * hk;
                        *x = c * *x - s * hk;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let values = order.iter().map(|&j| d[j]).collect();
    let vectors = order.iter().map(|&j| v[idx(0, j)..idx(0, j) + n].to_vec()).collect();
    Ok((values, vectors))
}

/// Cyclic Jacobi eigenvalue iteration on a symmetric matrix.
fn jacobi(a: &Matrix) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.dim();
    let mut m = a.clone();
    let mut q = Matrix::identity(n);
    let frob: f64 = m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let max_sweeps = 100;
    let mut converged = false;
    for _ in 0..max_sweeps {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * frob.max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = m[(p, r)];
                if apr == 0.0 {
                    continue;
                }
                let theta = (m[(r, r)] - m[(p, p)]) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkr = m[(k, r)];
                    m[(k, p)] = c * mkp - s * mkr;
                    m[(k, r)] = s * mkp + c * mkr;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mrk = m[(r, k)];
                    m[(p, k)] = c * mpk - s * mrk;
                    m[(r, k)] = s * mpk + c * mrk;
                }
                for k in 0..n {
                    let qkp = q[(k, p)];
                    let qkr = q[(k, r)];
                    q[(k, p)] = c * qkp - s * qkr;
                    q[(k, r)] = s * qkp + c * qkr;
                }
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence(max_sweeps));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| m[(a, a)].total_cmp(&m[(b, b)]));
    let values = order.iter().map(|&j| m[(j, j)]).collect();
    let vectors = order.iter().map(|&j| (0..n).map(|k| q[(k, j)]).collect()).collect();
    Ok((values, vectors))
}

/// A cluster of numerically equal eigenvalues and an orthonormal basis of
/// their span.
#[derive(Debug, Clone)]
pub struct Eigenspace {
    pub value: f64,
    pub basis: Vec<Vec<f64>>,
    pub multiplicity: usize,
    pub cluster_tol: f64,
    /// Positions of the clustered eigenpairs in the source spectrum.
    pub indices: Range<usize>,
    pub weights: Arc<[f64]>,
    pub rank: usize,
}

impl Eigenspace {
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        wdot(&self.weights, a, b)
    }

    /// Matrix `<obs * u_i, u_j>` of a diagonal observable on the basis.
    pub fn observable_matrix(&self, observable: &[f64]) -> Matrix {
        let l = self.multiplicity;
        let scaled: Vec<Vec<f64>> = self
            .basis
            .iter()
            .map(|u| u.iter().zip(observable).map(|(x, o)| x * o).collect())
            .collect();
        let mut m = Matrix::zeros(l);
        for i in 0..l {
            for j in i..l {
                let v = self.inner(&scaled[i], &self.basis[j]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Replaces the basis by `new_k = sum_i coeffs[k][i] * u_i`.
    pub fn rotate(&mut self, coeffs: &[Vec<f64>]) {
        let len = self.basis[0].len();
        self.basis = coeffs
            .iter()
            .map(|c| {
                let mut v = vec![0.0; len];
                for (ci, u) in c.iter().zip(&self.basis) {
                    for (x, y) in v.iter_mut().zip(u) {
                        *x += ci * y;
                    }
                }
                v
            })
            .collect();
    }

    /// Rotates the basis so that `observable` acts diagonally on it, then
    /// fixes each vector's sign by its first non-negligible component.
    pub fn gauge_fix(&mut self, observable: &[f64]) -> Result<()> {
        if self.multiplicity > 1 {
            let m = self.observable_matrix(observable);
            let rot = solve_symmetric(&m, &vec![1.0; self.multiplicity])?;
            self.rotate(&rot.eigenvectors);
        }
        for v in self.basis.iter_mut() {
            fix_sign(v);
        }
        Ok(())
    }
}

/// Greedy ascending scan: consecutive eigenvalues join the current cluster when
/// their gap is at most `cluster_tol * max(1, |λ|)`.
pub fn cluster(spectrum: &Spectrum, cluster_tol: f64) -> Result<Vec<Eigenspace>> {
    if !(cluster_tol > 0.0) {
        return Err(Error::NonPositiveTolerance("cluster_tol"));
    }
    let vals = &spectrum.eigenvalues;
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=vals.len() {
        let split = i == vals.len() || {
            let gap = vals[i] - vals[i - 1];
            gap > cluster_tol * vals[i].abs().max(1.0)
        };
        if split && i > start {
            out.push(make_space(spectrum, start..i, cluster_tol));
            start = i;
        }
    }
    Ok(out)
}

fn make_space(spectrum: &Spectrum, indices: Range<usize>, cluster_tol: f64) -> Eigenspace {
    let vals = &spectrum.eigenvalues[indices.clone()];
    Eigenspace {
        value: vals.iter().sum::<f64>() / vals.len() as f64,
        basis: spectrum.eigenvectors[indices.clone()].to_vec(),
        multiplicity: vals.len(),
        cluster_tol,
        indices,
        weights: spectrum.weights.clone(),
        rank: spectrum.rank,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> Vec<f64> {
        vec![1.0; n]
    }

    #[test]
    fn exchange_matrix() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let s = solve_symmetric(&a, &unit(2)).unwrap();
        assert!((s.eigenvalues[0] + 1.0).abs() < 1e-15);
        assert!((s.eigenvalues[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_matrix() {
        let a = Matrix::from_diag(&[3.0, 1.0, 2.0]);
        let s = solve_symmetric(&a, &unit(3)).unwrap();
        assert_eq!(s.eigenvalues, vec![1.0, 2.0, 3.0]);
        assert_eq!(s.eigenvectors[0], vec![0.0, 1.0, 0.0]);
        assert_eq!(s.eigenvectors[1], vec![0.0, 0.0, 1.0]);
        assert_eq!(s.eigenvectors[2], vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_input() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 0.0]]).unwrap();
        assert!(matches!(solve_symmetric(&a, &unit(2)), Err(Error::NotSymmetric(_))));
        let b = Matrix::from_rows(&[vec![f64::NAN, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(solve_symmetric(&b, &unit(2)), Err(Error::NonFinite)));
        let c = Matrix::identity(2);
        assert!(matches!(solve_symmetric(&c, &[1.0, 0.0]), Err(Error::NonPositive)));
    }

    #[test]
    fn weighted_problem_orthonormal_in_weights() {
        // A = W^{-1} S with S symmetric
        let s = Matrix::from_rows(&[vec![2.0, 1.0, 0.0], vec![1.0, 3.0, 1.0], vec![0.0, 1.0, 4.0]]).unwrap();
        let w = [0.5, 2.0, 1.5];
        let a = Matrix::from_fn(3, |i, j| s[(i, j)] / w[i]);
        let sp = solve_symmetric(&a, &w).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let g = sp.inner(&sp.eigenvectors[i], &sp.eigenvectors[j]);
                assert!((g - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
            let av = a.matvec(&sp.eigenvectors[i]);
            for (x, y) in av.iter().zip(&sp.eigenvectors[i]) {
                assert!((x - sp.eigenvalues[i] * y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generalized_scalar_and_unit_mass() {
        let k = Matrix::from_diag(&[4.0]);
        let s = solve_generalized(&k, &[2.0], &[1.0]).unwrap();
        assert_eq!(s.eigenvalues, vec![2.0]);

        let a = Matrix::from_rows(&[vec![2.0, -1.0], vec![-1.0, 2.0]]).unwrap();
        let g = solve_generalized(&a, &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        let p = solve_symmetric(&a, &[1.0, 1.0]).unwrap();
        assert_eq!(g.eigenvalues, p.eigenvalues);

        assert!(matches!(solve_generalized(&a, &[1.0, 0.0], &[1.0, 1.0]), Err(Error::NonPositive)));
    }

    #[test]
    fn jacobi_agrees_with_ql() {
        let a = Matrix::from_fn(7, |i, j| ((i * 7 + j * 3) % 5) as f64 + ((j * 7 + i * 3) % 5) as f64);
        let q = solve_symmetric(&a, &unit(7)).unwrap();
        let j = solve_symmetric_jacobi(&a, &unit(7)).unwrap();
        for (x, y) in q.eigenvalues.iter().zip(&j.eigenvalues) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn clustering_constructed_gaps() {
        let sp = Spectrum {
            eigenvalues: vec![0.0, 0.9999999, 1.0000001, 2.5],
            eigenvectors: vec![vec![0.0; 4]; 4],
            weights: vec![1.0; 4].into(),
            rank: 1,
        };
        let c = cluster(&sp, 1e-5).unwrap();
        let mult: Vec<usize> = c.iter().map(|e| e.multiplicity).collect();
        assert_eq!(mult, vec![1, 2, 1]);
        assert!((c[1].value - 1.0).abs() < 1e-15);
        assert!(cluster(&sp, 0.0).is_err());
    }

    #[test]
    fn gauge_fix_diagonalizes_observable() {
        let a = Matrix::from_diag(&[1.0, 1.0, 2.0]);
        let sp = solve_symmetric(&a, &unit(3)).unwrap();
        let mut es = cluster(&sp, 1e-8).unwrap().remove(0);
        assert_eq!(es.multiplicity, 2);
        let obs = [1.0, -1.0, 0.0];
        let before = es.observable_matrix(&obs);
        es.gauge_fix(&obs).unwrap();
        let m = es.observable_matrix(&obs);
        assert!(m[(0, 1)].abs() < 1e-14);
        assert!((m[(0, 0)] + 1.0).abs() < 1e-14 && (m[(1, 1)] - 1.0).abs() < 1e-14);
        let tr = before[(0, 0)] + before[(1, 1)];
        assert!((tr - (m[(0, 0)] + m[(1, 1)])).abs() < 1e-14);
    }

    #[test]
    fn csv_layout() {
        let a = Matrix::from_diag(&[1.0, 1.0, 2.0]);
        let csv = solve_symmetric(&a, &unit(3)).unwrap().to_csv(1e-8).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "index,eigenvalue,multiplicity_cluster_id");
        assert_eq!(lines[1], "0,1.0000000000000000e0,0");
        assert_eq!(lines[3], "2,2.0000000000000000e0,1");
    }
}
