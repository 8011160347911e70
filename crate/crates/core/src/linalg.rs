//! Dense symmetric eigendecomposition and orthonormal column bases.
//!
//! The eigensolver is Householder tridiagonalisation followed by the implicit
//! QL iteration (the EISPACK `tred2`/`tql2` pair). Column bases come from a
//! one-sided Jacobi SVD, which keeps small singular values accurate enough to
//! apply a relative rank cutoff.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    pub values: Vec<T>,
    /// `vectors[a]` is the unit eigenvector for `values[a]`.
    pub vectors: Vec<Vec<T>>,
}

/// Eigendecomposition of a symmetric matrix. Only the lower triangle is read.
pub fn symmetric_eigen<T: Scalar>(a: &Array2<T>) -> Result<SymmetricEigen<T>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::InvalidInput(format!(
            "eigen input must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok(SymmetricEigen {
            values: Vec::new(),
            vectors: Vec::new(),
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("eigen input has non-finite entries".into()));
    }

    // Column-major working copy: v[c * n + r] holds V[r][c].
    let mut v = vec![T::zero(); n * n];
    for r in 0..n {
        for c in 0..=r {
            v[c * n + r] = a[(r, c)];
            v[r * n + c] = a[(r, c)];
        }
    }
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tridiagonalize(n, &mut v, &mut d, &mut e);
    ql_implicit(n, &mut v, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].partial_cmp(&d[i]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| d[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| v[i * n..(i + 1) * n].to_vec())
        .collect();
    Ok(SymmetricEigen { values, vectors })
}

fn tridiagonalize<T: Scalar>(n: usize, v: &mut [T], d: &mut [T], e: &mut [T]) {
    let ix = |r: usize, c: usize| c * n + r;
    let zero = T::zero();

    for j in 0..n {
        d[j] = v[ix(n - 1, j)];
    }

    for i in (1..n).rev() {
        let mut scale = zero;
        let mut h = zero;
        for k in 0..i {
            scale = scale + d[k].abs();
        }
        if scale == zero {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[ix(i - 1, j)];
                v[ix(i, j)] = zero;
                v[ix(j, i)] = zero;
            }
        } else {
            for k in 0..i {
                d[k] = d[k] / scale;
                h = h + d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > zero {
                g = -g;
            }
            e[i] = scale * g;
            h = h - f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = zero;
            }

            for j in 0..i {
                f = d[j];
                v[ix(j, i)] = f;
                g = e[j] + v[ix(j, j)] * f;
                for k in (j + 1)..i {
                    g = g + v[ix(k, j)] * d[k];
                    e[k] = e[k] + v[ix(k, j)] * f;
                }
                e[j] = g;
            }
            f = zero;
            for j in 0..i {
                e[j] = e[j] / h;
                f = f + e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] = e[j] - hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    let cur = v[ix(k, j)];
                    v[ix(k, j)] = cur - (f * e[k] + g * d[k]);
                }
                d[j] = v[ix(i - 1, j)];
                v[ix(i, j)] = zero;
            }
        }
        d[i] = h;
    }

    // Accumulate transformations.
    for i in 0..n - 1 {
        v[ix(n - 1, i)] = v[ix(i, i)];
        v[ix(i, i)] = T::one();
        let h = d[i + 1];
        if h != zero {
            for k in 0..=i {
                d[k] = v[ix(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = zero;
                for k in 0..=i {
                    g = g + v[ix(k, i + 1)] * v[ix(k, j)];
                }
                for k in 0..=i {
                    let cur = v[ix(k, j)];
                    v[ix(k, j)] = cur - g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[ix(k, i + 1)] = zero;
        }
    }
    for j in 0..n {
        d[j] = v[ix(n - 1, j)];
        v[ix(n - 1, j)] = zero;
    }
    v[ix(n - 1, n - 1)] = T::one();
    e[0] = zero;
}

fn ql_implicit<T: Scalar>(n: usize, v: &mut [T], d: &mut [T], e: &mut [T]) -> Result<()> {
    let zero = T::zero();
    let one = T::one();
    let two = T::of(2.0);
    let eps = T::epsilon();
    let max_iter = 60 * n.max(1);

    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = zero;

    let mut f = zero;
    let mut tst1 = zero;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }

        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > max_iter {
                    return Err(Error::Numerical(
                        "symmetric eigensolver did not converge".into(),
                    ));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(one);
                if p < zero {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di = *di - h;
                }
                f = f + h;

                p = d[m];
                let mut c = one;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = zero;
                let mut s2 = zero;
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
                    let (lo, hi) = v.split_at_mut((i + 1) * n);
                    let col_i = &mut lo[i * n..];
                    let col_next = &mut hi[..n];
                    for k in 0..n {
                        let hk = col_next[k];
                        col_next[k] = s * col_i[k] + c * hk;
                        col_i[k] = c * col_i[k] - s * hk;
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
        d[l] = d[l] + f;
        e[l] = zero;
    }
    Ok(())
}

/// Singular values and left singular vectors of a tall column set.
#[derive(Debug, Clone)]
pub struct ColumnSvd<T> {
    /// Descending singular values.
    pub singular_values: Vec<T>,
    /// Unit left singular vectors matching `singular_values`; directions whose
    /// singular value is exactly zero are returned as zero vectors.
    pub left: Vec<Vec<T>>,
}

/// One-sided (Hestenes) Jacobi SVD of the matrix whose columns are `columns`.
pub fn column_svd<T: Scalar>(columns: &[Vec<T>]) -> Result<ColumnSvd<T>> {
    let p = columns.len();
    let mut u: Vec<Vec<T>> = columns.to_vec();
    let eps = T::epsilon();
    let max_sweeps = 60;
    // Columns whose squared norm falls below this are numerically zero.
    let floor = eps * eps * u.iter().flatten().map(|&x| x * x).sum::<T>();

    let mut converged = p < 2;
    for _ in 0..max_sweeps {
        if converged {
            break;
        }
        let mut rotated = false;
        for i in 0..p {
            for j in (i + 1)..p {
                let (alpha, beta, gamma) = {
                    let (ui, uj) = (&u[i], &u[j]);
                    let mut a = T::zero();
                    let mut b = T::zero();
                    let mut g = T::zero();
                    for (&x, &y) in ui.iter().zip(uj) {
                        a = a + x * x;
                        b = b + y * y;
                        g = g + x * y;
                    }
                    (a, b, g)
                };
                if gamma == T::zero()
                    || alpha.min(beta) <= floor
                    || gamma.abs() <= eps * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::of(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                let (head, tail) = u.split_at_mut(j);
                let ui = &mut head[i];
                let uj = &mut tail[0];
                for (x, y) in ui.iter_mut().zip(uj.iter_mut()) {
                    let xi = *x;
                    let yj = *y;
                    *x = c * xi - s * yj;
                    *y = s * xi + c * yj;
                }
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::Numerical("Jacobi SVD did not converge".into()));
    }

    let mut pairs: Vec<(T, Vec<T>)> = u
        .into_iter()
        .map(|col| {
            let norm = col.iter().map(|&x| x * x).sum::<T>().sqrt();
            let unit = if norm > T::zero() {
                col.into_iter().map(|x| x / norm).collect()
            } else {
                col
            };
            (norm, unit)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let (singular_values, left) = pairs.into_iter().unzip();
    Ok(ColumnSvd {
        singular_values,
        left,
    })
}

/// Rank cutoff `max(rows, cols) * eps * sigma_max`.
pub fn rank_tolerance<T: Scalar>(rows: usize, cols: usize, sigma_max: T) -> T {
    T::of_usize(rows.max(cols)) * T::epsilon() * sigma_max
}

/// Removes the span of the orthonormal `basis` from `v` (two Gram-Schmidt passes).
pub fn project_out<T: Scalar>(basis: &[Vec<T>], v: &mut [T]) {
    for _ in 0..2 {
        for q in basis {
            let coef = dot(q, v);
            for (x, &qi) in v.iter_mut().zip(q) {
                *x = *x - coef * qi;
            }
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Moore-Penrose pseudo-inverse of a small symmetric matrix.
pub fn symmetric_pinv<T: Scalar>(a: &Array2<T>) -> Result<Array2<T>> {
    let n = a.nrows();
    let eig = symmetric_eigen(a)?;
    let lmax = eig.values.iter().fold(T::zero(), |m, &x| m.max(x.abs()));
    let tol = rank_tolerance(n, n, lmax);
    let mut out = Array2::zeros((n, n));
    for (lambda, vec) in eig.values.iter().zip(&eig.vectors) {
        if lambda.abs() <= tol {
            continue;
        }
        let inv = T::one() / *lambda;
        for r in 0..n {
            for c in 0..n {
                out[(r, c)] = out[(r, c)] + vec[r] * vec[c] * inv;
            }
        }
    }
    Ok(out)
}
