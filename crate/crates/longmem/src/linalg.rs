//! Dense linear algebra for small symmetric systems.
//!
//! The pipeline only ever factorizes matrices of side `N` (subjects, a
//! few hundred) or `Q` (covariates, a handful). The symmetric
//! eigensolver is the classic Householder tridiagonalization followed by
//! implicit-shift QL (the EISPACK tred2/tql2 pair), deterministic and
//! fast enough for a few hundred rows; a cyclic Jacobi solver is kept as
//! an independent cross-check for the tests.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::num::Real;

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
pub struct SymEigen<F> {
    /// Eigenvalues, largest first.
    pub values: Array1<F>,
    /// Matching eigenvectors as columns.
    pub vectors: Array2<F>,
}

/// Symmetric eigendecomposition via tridiagonalization + implicit QL.
pub fn sym_eigen<F: Real>(a: &Array2<F>) -> Result<SymEigen<F>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Numeric(format!(
            "sym_eigen requires a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("sym_eigen requires finite entries".into()));
    }
    if n == 0 {
        return Ok(SymEigen { values: Array1::zeros(0), vectors: Array2::zeros((0, 0)) });
    }

    // Column-major working copy; v[k + j*n] = V[k][j].
    let mut v: Vec<F> = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            v.push(a[(i, j)]);
        }
    }
    let mut d = vec![F::zero(); n];
    let mut e = vec![F::zero(); n];
    tred2(&mut v, &mut d, &mut e, n);
    tql2(&mut v, &mut d, &mut e, n)?;
    Ok(sorted_eigen(v, d, n))
}

/// Householder reduction of a symmetric matrix to tridiagonal form with
/// accumulated transformations (EISPACK tred2).
fn tred2<F: Real>(v: &mut [F], d: &mut [F], e: &mut [F], n: usize) {
    let at = |k: usize, j: usize| k + j * n;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    if n == 1 {
        v[0] = F::one();
        e[0] = F::zero();
        return;
    }

    for i in (1..n).rev() {
        let mut scale = F::zero();
        let mut h = F::zero();
        for item in d.iter().take(i) {
            scale += item.abs();
        }
        if scale == F::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = F::zero();
                v[at(j, i)] = F::zero();
            }
        } else {
            for item in d.iter_mut().take(i) {
                *item /= scale;
                h += *item * *item;
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > F::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for item in e.iter_mut().take(i) {
                *item = F::zero();
            }

            for j in 0..i {
                let f = d[j];
                v[at(j, i)] = f;
                let mut g = e[j] + v[at(j, j)] * f;
                for k in j + 1..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            let mut f = F::zero();
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                for k in j..i {
                    v[at(k, j)] = v[at(k, j)] - f * e[k] - g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = F::zero();
            }
        }
        d[i] = h;
    }

    // Accumulate the transformations.
    for i in 0..n - 1 {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = F::one();
        let h = d[i + 1];
        if h != F::zero() {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = F::zero();
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] = v[at(k, j)] - g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = F::zero();
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = F::zero();
    }
    v[at(n - 1, n - 1)] = F::one();
    e[0] = F::zero();
}

/// Implicit-shift QL iteration on the tridiagonal form with eigenvector
/// accumulation (EISPACK tql2).
fn tql2<F: Real>(v: &mut [F], d: &mut [F], e: &mut [F], n: usize) -> Result<()> {
    let at = |k: usize, j: usize| k + j * n;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = F::zero();

    let mut f = F::zero();
    let mut tst1 = F::zero();
    let eps = F::epsilon();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m >= n {
            m = n - 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return Err(Error::Numeric(
                        "symmetric QL iteration failed to converge".into(),
                    ));
                }
                // Wilkinson-style shift.
                let g = d[l];
                let two = F::from_f64_const(2.0);
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(F::one());
                if p < F::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for item in d.iter_mut().take(n).skip(l + 2) {
                    *item -= h;
                }
                f += h;

                // Implicit QL transformation.
                p = d[m];
                let mut c = F::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = F::zero();
                let mut s2 = F::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[at(k, i + 1)];
                        v[at(k, i + 1)] = s * v[at(k, i)] + c * h;
                        v[at(k, i)] = c * v[at(k, i)] - s * h;
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
        e[l] = F::zero();
    }
    Ok(())
}

fn sorted_eigen<F: Real>(v: Vec<F>, d: Vec<F>, n: usize) -> SymEigen<F> {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        d[j].partial_cmp(&d[i]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j))
    });
    let mut values = Array1::<F>::zeros(n);
    let mut vectors = Array2::<F>::zeros((n, n));
    for (k, &idx) in order.iter().enumerate() {
        values[k] = d[idx];
        for i in 0..n {
            vectors[(i, k)] = v[i + idx * n];
        }
    }
    SymEigen { values, vectors }
}

/// Cyclic Jacobi eigensolver; slower than [`sym_eigen`] but entirely
/// independent of it, kept as the tests' cross-check oracle.
pub fn sym_eigen_jacobi<F: Real>(a: &Array2<F>) -> Result<SymEigen<F>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Numeric("sym_eigen_jacobi requires a square matrix".into()));
    }
    let mut m = a.clone();
    let mut v = Array2::<F>::eye(n);
    let eps = F::epsilon();
    if n > 1 {
        for _sweep in 0..50 {
            let mut off = F::zero();
            for p in 0..n {
                for q in (p + 1)..n {
                    off += m[(p, q)] * m[(p, q)];
                }
            }
            let diag_norm: F = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum();
            if off <= eps * eps * (diag_norm + F::one()) {
                break;
            }
            for p in 0..n - 1 {
                for q in (p + 1)..n {
                    let apq = m[(p, q)];
                    if apq == F::zero() {
                        continue;
                    }
                    let app = m[(p, p)];
                    let aqq = m[(q, q)];
                    if apq.abs() <= eps * (app.abs() + aqq.abs()) {
                        m[(p, q)] = F::zero();
                        m[(q, p)] = F::zero();
                        continue;
                    }
                    let theta = (aqq - app) / (F::from_f64_const(2.0) * apq);
                    let t = {
                        let denom = theta.abs() + (theta * theta + F::one()).sqrt();
                        let t = F::one() / denom;
                        if theta < F::zero() {
                            -t
                        } else {
                            t
                        }
                    };
                    let c = F::one() / (t * t + F::one()).sqrt();
                    let s = t * c;
                    for i in 0..n {
                        let mip = m[(i, p)];
                        let miq = m[(i, q)];
                        m[(i, p)] = c * mip - s * miq;
                        m[(i, q)] = s * mip + c * miq;
                    }
                    for j in 0..n {
                        let mpj = m[(p, j)];
                        let mqj = m[(q, j)];
                        m[(p, j)] = c * mpj - s * mqj;
                        m[(q, j)] = s * mpj + c * mqj;
                    }
                    for i in 0..n {
                        let vip = v[(i, p)];
                        let viq = v[(i, q)];
                        v[(i, p)] = c * vip - s * viq;
                        v[(i, q)] = s * vip + c * viq;
                    }
                }
            }
        }
    }
    let d: Vec<F> = (0..n).map(|i| m[(i, i)]).collect();
    let mut flat = vec![F::zero(); n * n];
    for j in 0..n {
        for i in 0..n {
            flat[i + j * n] = v[(i, j)];
        }
    }
    Ok(sorted_eigen(flat, d, n))
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite
/// matrix; fails on non-positive pivots.
pub fn cholesky<F: Real>(a: &Array2<F>) -> Result<Array2<F>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Numeric("cholesky requires a square matrix".into()));
    }
    let mut l = Array2::<F>::zeros((n, n));
    // Relative pivot floor: pivots this far below the largest diagonal
    // entry signal rank deficiency rather than a usable factor.
    let max_diag = (0..n).fold(F::zero(), |m, i| m.max(a[(i, i)].abs()));
    let pivot_floor = max_diag * F::epsilon() * F::from_usize(n.max(2)).unwrap();
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if s <= pivot_floor || !s.is_finite() {
                    return Err(Error::Numeric(format!(
                        "matrix not positive definite (pivot {} = {})",
                        i, s
                    )));
                }
                l[(i, j)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Solve L x = b with L lower triangular.
pub fn solve_lower<F: Real>(l: &Array2<F>, b: &Array1<F>) -> Array1<F> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solve Lᵀ x = b with L lower triangular.
pub fn solve_lower_transpose<F: Real>(l: &Array2<F>, b: &Array1<F>) -> Array1<F> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solve A x = b for symmetric positive-definite A via its Cholesky factor.
pub fn chol_solve<F: Real>(l: &Array2<F>, b: &Array1<F>) -> Array1<F> {
    solve_lower_transpose(l, &solve_lower(l, b))
}

/// Inverse of a symmetric positive-definite matrix from its Cholesky factor.
pub fn chol_inverse<F: Real>(l: &Array2<F>) -> Array2<F> {
    let n = l.nrows();
    let mut inv = Array2::<F>::zeros((n, n));
    for j in 0..n {
        let mut e = Array1::<F>::zeros(n);
        e[j] = F::one();
        let col = chol_solve(l, &e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    // Symmetrize to scrub round-off.
    let two = F::from_f64_const(2.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let m = (inv[(i, j)] + inv[(j, i)]) / two;
            inv[(i, j)] = m;
            inv[(j, i)] = m;
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_symmetric(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::CounterRng::new(seed);
        let mut a = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let x = rng.normal();
                a[(i, j)] = x;
                a[(j, i)] = x;
            }
        }
        a
    }

    fn check_eigen(a: &Array2<f64>, e: &SymEigen<f64>, tol: f64) {
        let n = a.nrows();
        for p in 0..n {
            for q in 0..n {
                let dot: f64 = (0..n).map(|i| e.vectors[(i, p)] * e.vectors[(i, q)]).sum();
                let expect = if p == q { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < tol, "orthonormality ({p},{q}): {dot}");
            }
        }
        let mut rec = Array2::<f64>::zeros((n, n));
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    rec[(i, j)] += e.values[k] * e.vectors[(i, k)] * e.vectors[(j, k)];
                }
            }
        }
        let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            for j in 0..n {
                assert!(
                    (rec[(i, j)] - a[(i, j)]).abs() < tol * scale * n as f64,
                    "reconstruction ({i},{j})"
                );
            }
        }
        for k in 1..n {
            assert!(e.values[k - 1] >= e.values[k], "ordering at {k}");
        }
    }

    #[test]
    fn eigen_identity() {
        let a = Array2::<f64>::eye(4);
        let e = sym_eigen(&a).unwrap();
        for k in 0..4 {
            assert!((e.values[k] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn eigen_trivial_sizes() {
        let a = Array2::<f64>::from_elem((1, 1), 3.5);
        let e = sym_eigen(&a).unwrap();
        assert_eq!(e.values[0], 3.5);
        assert!((e.vectors[(0, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn eigen_known_2x2() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1.
        let a: Array2<f64> = array![[2.0, 1.0], [1.0, 2.0]];
        let e = sym_eigen(&a).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
        check_eigen(&a, &e, 1e-12);
    }

    #[test]
    fn eigen_reconstructs_random_symmetric() {
        for n in [3usize, 8, 24, 60] {
            let a = random_symmetric(n, 5 + n as u64);
            let e = sym_eigen(&a).unwrap();
            check_eigen(&a, &e, 1e-10);
        }
    }

    #[test]
    fn ql_matches_jacobi_oracle() {
        // Two independent algorithms must agree on eigenvalues; matching
        // eigenvectors agree up to sign away from degeneracies.
        for n in [5usize, 17, 40] {
            let a = random_symmetric(n, 100 + n as u64);
            let e1 = sym_eigen(&a).unwrap();
            let e2 = sym_eigen_jacobi(&a).unwrap();
            for k in 0..n {
                assert!(
                    (e1.values[k] - e2.values[k]).abs() < 1e-10,
                    "n={n} eigenvalue {k}: {} vs {}",
                    e1.values[k],
                    e2.values[k]
                );
                let dot: f64 = (0..n).map(|i| e1.vectors[(i, k)] * e2.vectors[(i, k)]).sum();
                assert!((dot.abs() - 1.0).abs() < 1e-8, "n={n} vector {k}: |dot| {}", dot.abs());
            }
        }
    }

    #[test]
    fn eigen_handles_degenerate_spectra() {
        // Rank-1 shift of the identity: one isolated eigenvalue, the rest
        // all equal.
        let n = 12;
        let mut a = Array2::<f64>::eye(n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] += 2.0;
            }
        }
        let e = sym_eigen(&a).unwrap();
        assert!((e.values[0] - (1.0 + 2.0 * n as f64)).abs() < 1e-10);
        for k in 1..n {
            assert!((e.values[k] - 1.0).abs() < 1e-10);
        }
        check_eigen(&a, &e, 1e-10);
    }

    #[test]
    fn cholesky_solves() {
        let a: Array2<f64> = array![[4.0, 2.0, 0.5], [2.0, 5.0, 1.0], [0.5, 1.0, 3.0]];
        let l = cholesky(&a).unwrap();
        let b: Array1<f64> = array![1.0, -2.0, 0.25];
        let x = chol_solve(&l, &b);
        let ax = a.dot(&x);
        for i in 0..3 {
            assert!((ax[i] - b[i]).abs() < 1e-12);
        }
        let inv = chol_inverse(&l);
        let prod = a.dot(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a: Array2<f64> = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(&a).is_err());
        // Collinear Gram matrix: tiny positive pivots from round-off must
        // still be rejected.
        let b: Array2<f64> = array![[10.0, 20.0], [20.0, 40.0]];
        assert!(cholesky(&b).is_err());
    }
}
