//! Dense linear-algebra helpers shared by the smoothers and the eigen step.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).abs().max()
}

/// Symmetric square root and inverse square root, flooring eigenvalues at
/// `floor * λ_max`.
pub(crate) fn sym_sqrt_and_inv(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max().max(0.0);
    let lo = floor * max;
    let root = eig.eigenvalues.map(|v| v.max(lo).sqrt());
    let inv_root = root.map(|v| if v > 0.0 { 1.0 / v } else { 0.0 });
    let u = &eig.eigenvectors;
    let half = u * DMatrix::from_diagonal(&root) * u.transpose();
    let half_inv = u * DMatrix::from_diagonal(&inv_root) * u.transpose();
    (symmetrize(&half), symmetrize(&half_inv))
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order.
pub(crate) fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(m.nrows(), order.len());
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Inverse of a symmetric positive-definite matrix, refusing (not ridging)
/// when the reciprocal condition number falls below `rcond`.
pub(crate) fn spd_inverse(m: &DMatrix<f64>, rcond: f64, what: &str) -> Result<(DMatrix<f64>, f64)> {
    let m = symmetrize(m);
    let (vals, _) = sym_eigen_desc(&m);
    let max = vals.max();
    let min = vals.min();
    if !(max > 0.0) || min <= rcond * max {
        return Err(Error::Singular(format!(
            "{what} is singular or nearly so (eigenvalues in [{min:e}, {max:e}])"
        )));
    }
    let chol = Cholesky::new(m).ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))?;
    Ok((chol.inverse(), max / min))
}

/// Penalized least squares `min ‖y − Xβ‖² + λ βᵀPβ` over a family of `λ`,
/// diagonalized once so that every `λ` costs `O(p²)`.
///
/// With `C = XᵀX + P = LLᵀ` and `L⁻¹XᵀXL⁻ᵀ = U diag(γ) Uᵀ`, `γ ∈ [0, 1]`,
/// one has `XᵀX + λP = L U diag(γ + λ(1 − γ)) Uᵀ Lᵀ`.
pub(crate) struct PenalizedSmoother {
    /// `L⁻ᵀ U`
    back: DMatrix<f64>,
    /// `Uᵀ L⁻¹`
    fwd: DMatrix<f64>,
    gamma: DVector<f64>,
}

impl PenalizedSmoother {
    pub(crate) fn new(xtx: &DMatrix<f64>, penalty: &DMatrix<f64>) -> Result<Self> {
        let c = symmetrize(&(xtx + penalty));
        let p = c.nrows();
        let chol = Cholesky::new(c).ok_or_else(|| {
            Error::Singular("normal equations stay singular after adding the penalty".into())
        })?;
        let l = chol.l();
        let l_inv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("Cholesky factor is not invertible".into()))?;
        let inner = symmetrize(&(&l_inv * xtx * l_inv.transpose()));
        let eig = SymmetricEigen::new(inner);
        let gamma = eig.eigenvalues.map(|g| g.clamp(0.0, 1.0));
        let fwd = eig.eigenvectors.transpose() * &l_inv;
        let back = fwd.transpose();
        debug_assert_eq!(back.nrows(), p);
        Ok(Self { back, fwd, gamma })
    }

    /// Coefficients, effective degrees of freedom and residual sum of squares
    /// at `lambda`, given `Xᵀy`, `yᵀy` and `XᵀX`-free identities.
    pub(crate) fn solve(&self, lambda: f64, xty: &DVector<f64>, yty: f64) -> SmootherFit {
        let z = &self.fwd * xty;
        let mut scaled = z.clone();
        let mut edf = 0.0;
        let mut fit_dot = 0.0; // βᵀXᵀy
        let mut quad = 0.0; // βᵀXᵀXβ
        for j in 0..z.len() {
            let g = self.gamma[j];
            let d = g + lambda * (1.0 - g);
            let s = if d > 0.0 { z[j] / d } else { 0.0 };
            scaled[j] = s;
            if d > 0.0 {
                edf += g / d;
            }
            fit_dot += z[j] * s;
            quad += g * s * s;
        }
        let beta = &self.back * scaled;
        let rss = (yty - 2.0 * fit_dot + quad).max(0.0);
        SmootherFit { beta, edf, rss }
    }

    /// Minimize GCV `N·RSS/(N − edf)²` over `grid`; first minimum wins ties.
    pub(crate) fn gcv(&self, grid: &[f64], n: usize, xty: &DVector<f64>, yty: f64) -> (f64, SmootherFit) {
        let mut best: Option<(f64, f64, SmootherFit)> = None;
        for &lambda in grid {
            let fit = self.solve(lambda, xty, yty);
            let score = gcv_score(n, fit.rss, fit.edf);
            if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
                best = Some((score, lambda, fit));
            }
        }
        let (_, lambda, fit) = best.expect("nonempty grid");
        (lambda, fit)
    }
}

pub(crate) struct SmootherFit {
    pub beta: DVector<f64>,
    pub edf: f64,
    pub rss: f64,
}

pub(crate) fn gcv_score(n: usize, rss: f64, edf: f64) -> f64 {
    let n = n as f64;
    let denom = n - edf;
    if denom <= 0.0 {
        f64::INFINITY
    } else {
        n * rss / (denom * denom)
    }
}

/// `k`-point log-spaced grid from `10^lo` to `10^hi`.
pub fn log_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![10f64.powf(lo)];
    }
    (0..k)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (k - 1) as f64))
        .collect()
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}
