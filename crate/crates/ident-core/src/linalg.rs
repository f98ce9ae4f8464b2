//! Small dense solvers used by the regression stages. Systems here are tall
//! and narrow (many samples, few columns), so plain Householder QR and
//! Cholesky are enough.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

pub(crate) enum LstsqError {
    /// Column indices (original order) that are linearly dependent on the rest.
    RankDeficient(Vec<usize>),
}

/// Minimum-residual solution of `a x = b` via column-pivoted Householder QR.
/// `rcond` is the relative pivot cutoff that declares rank deficiency.
pub(crate) fn lstsq(
    a: ArrayView2<'_, f64>,
    b: ArrayView1<'_, f64>,
    rcond: f64,
) -> Result<Array1<f64>, LstsqError> {
    let (m, n) = a.dim();
    assert_eq!(m, b.len(), "lstsq shape mismatch");
    assert!(n > 0 && m > 0);

    let mut r = a.to_owned();
    let mut qtb = b.to_owned();
    let mut perm: Vec<usize> = (0..n).collect();

    let scale = (0..n)
        .map(|j| norm2(r.column(j)))
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let cutoff = rcond * scale;

    let rank_limit = n.min(m);
    let mut rank = rank_limit;
    for k in 0..rank_limit {
        // Pivot on the largest remaining subcolumn, recomputed directly.
        let (best, best_norm) = (k..n)
            .map(|j| (j, norm2(r.slice(ndarray::s![k.., j]))))
            .fold((k, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if best_norm <= cutoff {
            rank = k;
            break;
        }
        if best != k {
            swap_columns(&mut r, k, best);
            perm.swap(k, best);
        }

        // Householder reflector annihilating r[k+1.., k].
        let alpha = -r[[k, k]].signum() * best_norm;
        let mut v: Vec<f64> = (k..m).map(|i| r[[i, k]]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for j in k..n {
                let dot: f64 = (k..m).map(|i| v[i - k] * r[[i, j]]).sum();
                let c = 2.0 * dot / vnorm2;
                for i in k..m {
                    r[[i, j]] -= c * v[i - k];
                }
            }
            let dot: f64 = (k..m).map(|i| v[i - k] * qtb[i]).sum();
            let c = 2.0 * dot / vnorm2;
            for i in k..m {
                qtb[i] -= c * v[i - k];
            }
        }
        r[[k, k]] = alpha;
        for i in k + 1..m {
            r[[i, k]] = 0.0;
        }
    }

    if rank < n {
        let mut dependent: Vec<usize> = perm[rank..].to_vec();
        dependent.sort_unstable();
        return Err(LstsqError::RankDeficient(dependent));
    }

    // Back substitution on the leading n x n triangle.
    let mut y = vec![0.0; n];
    for k in (0..n).rev() {
        let mut s = qtb[k];
        for j in k + 1..n {
            s -= r[[k, j]] * y[j];
        }
        y[k] = s / r[[k, k]];
    }
    let mut x = Array1::zeros(n);
    for (k, &p) in perm.iter().enumerate() {
        x[p] = y[k];
    }
    Ok(x)
}

fn norm2(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn swap_columns(a: &mut Array2<f64>, i: usize, j: usize) {
    for row in 0..a.nrows() {
        let tmp = a[[row, i]];
        a[[row, i]] = a[[row, j]];
        a[[row, j]] = tmp;
    }
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub(crate) struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    /// Panics if `a` is not SPD; callers regularize before factoring.
    pub(crate) fn factor(a: &Array2<f64>) -> Self {
        Self::try_factor(a, 0.0).expect("matrix is not positive definite")
    }

    /// None when a pivot falls to or below `rel_tol` times the largest
    /// diagonal entry — the numerically-rank-deficient case.
    pub(crate) fn try_factor(a: &Array2<f64>, rel_tol: f64) -> Option<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols());
        let diag_max = (0..n).fold(0.0f64, |m, i| m.max(a[[i, i]]));
        let cutoff = rel_tol * diag_max;
        let mut l = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                if i == j {
                    if s <= cutoff || s <= 0.0 {
                        return None;
                    }
                    l[[i, i]] = s.sqrt();
                } else {
                    l[[i, j]] = s / l[[j, j]];
                }
            }
        }
        Some(Cholesky { l })
    }

    pub(crate) fn solve(&self, b: ArrayView1<'_, f64>) -> Array1<f64> {
        let n = self.l.nrows();
        assert_eq!(n, b.len());
        let mut y = b.to_owned();
        for i in 0..n {
            for k in 0..i {
                let lik = self.l[[i, k]];
                y[i] -= lik * y[k];
            }
            y[i] /= self.l[[i, i]];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let lki = self.l[[k, i]];
                y[i] -= lki * y[k];
            }
            y[i] /= self.l[[i, i]];
        }
        y
    }
}
