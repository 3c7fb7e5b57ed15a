//! Subject-level multivariate FPC scores.
//!
//! `Y_i` is stacked component-major: all times of component 1, then all times
//! of component 2, and so on. Scores are centred at the pooled mean
//! `μ̂ + Σ_r (n_r/n) η̂_r`, common to all subjects, so that group effects
//! show up as shifts in score means.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::check_unit;
use crate::covariance::CovarianceFit;
use crate::data::{MvFunctionalDataset, SubjectSeries};
use crate::eigen::{MvEigenSystem, MvFunctionFamily};
use crate::error::{Error, Result};
use crate::mean::MeanFit;

/// Noise variances below this trigger a ridge on `Ĝ_{Y_i}`.
pub const TAU_FLOOR: f64 = 1e-8;
/// Minimum grid length accepted by [`dense_scores`].
pub const DENSE_MIN_POINTS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    /// `n × K`, row `i` is `ξ̂_i`
    pub scores: DMatrix<f64>,
    pub groups: Vec<usize>,
    pub subject_ids: Vec<String>,
}

impl ScoreMatrix {
    pub fn new(scores: DMatrix<f64>, groups: Vec<usize>, subject_ids: Vec<String>) -> Result<Self> {
        if groups.len() != scores.nrows() || subject_ids.len() != scores.nrows() {
            return Err(Error::InvalidArgument(format!(
                "{} score rows but {} groups and {} ids",
                scores.nrows(),
                groups.len(),
                subject_ids.len()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite score".into()));
        }
        Ok(Self {
            scores,
            groups,
            subject_ids,
        })
    }

    /// Scores with generated ids `s1, s2, …`.
    pub fn from_rows(scores: DMatrix<f64>, groups: Vec<usize>) -> Result<Self> {
        let ids = (1..=scores.nrows()).map(|i| format!("s{i}")).collect();
        Self::new(scores, groups, ids)
    }

    pub fn k(&self) -> usize {
        self.scores.ncols()
    }

    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn group_count(&self) -> usize {
        self.groups.iter().copied().max().map_or(0, |g| g + 1)
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.group_count()];
        for &g in &self.groups {
            sizes[g] += 1;
        }
        sizes
    }

    /// Same scores with relabelled groups.
    pub fn with_groups(&self, groups: Vec<usize>) -> Result<Self> {
        Self::new(self.scores.clone(), groups, self.subject_ids.clone())
    }

    /// Rows of group `g` as a `n_g × K` matrix.
    pub fn group_rows(&self, g: usize) -> DMatrix<f64> {
        let rows: Vec<usize> = (0..self.n()).filter(|&i| self.groups[i] == g).collect();
        self.scores.select_rows(rows.iter())
    }

    /// `subject,group,xi1,…,xiK`
    pub fn write_table(&self, mut out: impl Write) -> Result<()> {
        write!(out, "subject,group")?;
        for k in 1..=self.k() {
            write!(out, ",xi{k}")?;
        }
        writeln!(out)?;
        for i in 0..self.n() {
            write!(out, "{},{}", self.subject_ids[i], self.groups[i])?;
            for k in 0..self.k() {
                write!(out, ",{}", self.scores[(i, k)])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn check_inputs(data: &MvFunctionalDataset, mean: &MeanFit, cov: &CovarianceFit, eigen: &MvEigenSystem) -> Result<()> {
    let q = data.q();
    if mean.q() != q || cov.q() != q || eigen.q() != q {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: data q={q}, mean q={}, covariance q={}, eigen q={}",
            mean.q(),
            cov.q(),
            eigen.q()
        )));
    }
    if mean.domain() != data.domain() {
        return Err(Error::InvalidArgument("mean fit and dataset have different domains".into()));
    }
    if cov.basis() != eigen.basis() {
        return Err(Error::InvalidArgument("covariance and eigen system use different bases".into()));
    }
    if eigen.k() == 0 {
        return Err(Error::EmptySpectrum);
    }
    Ok(())
}

/// Group weights of the pooled mean.
fn pooled_weights(data: &MvFunctionalDataset) -> Vec<f64> {
    let n = data.n() as f64;
    data.group_sizes().iter().map(|&c| c as f64 / n).collect()
}

fn one_hot(g: usize, groups: usize) -> Vec<f64> {
    (0..groups.max(g + 1)).map(|r| (r == g) as u8 as f64).collect()
}

/// `μ̂(t) + Σ_r w_r η̂_r(t)`
fn weighted_mean(mean: &MeanFit, weights: &[f64], t: f64) -> Result<Vec<f64>> {
    let mut mu = mean.mu(t)?;
    for (r, &w) in weights.iter().enumerate().skip(1) {
        if w != 0.0 {
            for (m, e) in mu.iter_mut().zip(mean.effect(r, t)?) {
                *m += w * e;
            }
        }
    }
    Ok(mu)
}

/// `Y_i − μ̄(t_ij)`, stacked component-major.
fn centred(s: &SubjectSeries, mean: &MeanFit, weights: &[f64]) -> Result<DVector<f64>> {
    let m = s.len();
    let q = s.values().ncols();
    let mut out = DVector::zeros(q * m);
    for (j, &t) in s.times().iter().enumerate() {
        let mu = weighted_mean(mean, weights, t)?;
        for l in 0..q {
            out[l * m + j] = s.values()[(j, l)] - mu[l];
        }
    }
    Ok(out)
}

/// `Ψ_i`: `qm × K_max`, row `(ℓ, j)` holds `ψ_k^(ℓ)(t_ij)`.
fn psi_matrix(eigen: &MvEigenSystem, times: &[f64]) -> Result<DMatrix<f64>> {
    let q = eigen.q();
    let m = times.len();
    let r = eigen.basis().dim();
    let coef = eigen.coefficients();
    let kmax = eigen.k_max();
    let mut psi = DMatrix::zeros(q * m, kmax);
    for (j, &t) in times.iter().enumerate() {
        let (start, local) = eigen.basis().eval_local(check_unit(t)?);
        for l in 0..q {
            for k in 0..kmax {
                psi[(l * m + j, k)] = local
                    .iter()
                    .enumerate()
                    .map(|(a, v)| v * coef[(l * r + start + a, k)])
                    .sum();
            }
        }
    }
    Ok(psi)
}

/// Cholesky factor of `Ĝ_{Y_i} = Ψ_i Λ Ψ_iᵀ + blockdiag(τ²_ℓ I)`, built from
/// the PSD-repaired covariance.
fn g_factor(psi: &DMatrix<f64>, lambda: &[f64], tau_sq: &[f64], m: usize) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let scaled = DMatrix::from_fn(psi.nrows(), psi.ncols(), |i, k| psi[(i, k)] * lambda[k]);
    let mut g = scaled * psi.transpose();
    g = (&g + g.transpose()) * 0.5;
    let qm = g.nrows();
    for (l, &tau) in tau_sq.iter().enumerate() {
        for j in 0..m {
            g[(l * m + j, l * m + j)] += tau;
        }
    }
    if tau_sq.iter().any(|&t| t < TAU_FLOOR) {
        let ridge = 1e-8 * g.trace() / qm as f64;
        for i in 0..qm {
            g[(i, i)] += ridge;
        }
    }
    Cholesky::new(g).ok_or_else(|| Error::Factorization("covariance of the observed vector is not positive definite".into()))
}

/// BLUP scores through the factored form
/// `ξ̂_i = V̂_Kᵀ(I⊗S^{1/2})Γ̂(I⊗B_iᵀ)Ĝ⁻¹(Y_i − μ̂_i)`.
pub fn blup_scores(data: &MvFunctionalDataset, mean: &MeanFit, cov: &CovarianceFit, eigen: &MvEigenSystem) -> Result<ScoreMatrix> {
    check_inputs(data, mean, cov, eigen)?;
    let q = data.q();
    let k = eigen.k();
    let r = eigen.basis().dim();
    let sh = &eigen.gram().s_half;
    // V_Kᵀ (I⊗S^{1/2}) Γ̂, K × qr
    let vk = eigen.vectors().columns(0, k);
    let mut left_v = DMatrix::zeros(k, q * r);
    for l in 0..q {
        let block = vk.rows(l * r, r).transpose() * sh;
        left_v.view_mut((0, l * r), (k, r)).copy_from(&block);
    }
    let left = left_v * cov.gamma();
    let lambda = eigen.eigenvalues();
    let tau = cov.tau_sq();
    let weights = pooled_weights(data);
    let rows: Vec<DVector<f64>> = data
        .subjects()
        .par_iter()
        .map(|s| {
            let m = s.len();
            let y = centred(s, mean, &weights)?;
            let psi = psi_matrix(eigen, s.times())?;
            let chol = g_factor(&psi, lambda, tau, m)?;
            let w = chol.solve(&y);
            let b = eigen.basis().design(s.times())?;
            let mut xi = DVector::zeros(k);
            for l in 0..q {
                let bw = b.transpose() * w.rows(l * m, m);
                xi += left.columns(l * r, r) * bw;
            }
            Ok(xi)
        })
        .collect::<Result<_>>()?;
    assemble(data, rows, k)
}

/// BLUP scores through `diag(λ̂) Ψ_iᵀ Ĝ⁻¹ (Y_i − μ̂_i)`.
pub fn blup_scores_direct(
    data: &MvFunctionalDataset,
    mean: &MeanFit,
    cov: &CovarianceFit,
    eigen: &MvEigenSystem,
) -> Result<ScoreMatrix> {
    check_inputs(data, mean, cov, eigen)?;
    let weights = pooled_weights(data);
    let rows: Vec<DVector<f64>> = data
        .subjects()
        .par_iter()
        .map(|s| subject_blup(s, mean, cov, eigen, &weights))
        .collect::<Result<_>>()?;
    assemble(data, rows, eigen.k())
}

fn subject_blup(
    s: &SubjectSeries,
    mean: &MeanFit,
    cov: &CovarianceFit,
    eigen: &MvEigenSystem,
    weights: &[f64],
) -> Result<DVector<f64>> {
    let k = eigen.k();
    let lambda = eigen.eigenvalues();
    let y = centred(s, mean, weights)?;
    let psi = psi_matrix(eigen, s.times())?;
    let chol = g_factor(&psi, lambda, cov.tau_sq(), s.len())?;
    let w = chol.solve(&y);
    Ok(DVector::from_fn(k, |kk, _| lambda[kk] * psi.column(kk).dot(&w)))
}

fn assemble(data: &MvFunctionalDataset, rows: Vec<DVector<f64>>, k: usize) -> Result<ScoreMatrix> {
    let n = rows.len();
    let scores = DMatrix::from_fn(n, k, |i, kk| rows[i][kk]);
    ScoreMatrix::new(
        scores,
        data.subjects().iter().map(|s| s.group()).collect(),
        data.subjects().iter().map(|s| s.id().to_string()).collect(),
    )
}

/// Trapezoid weights for sorted abscissae.
pub fn trapezoid_weights(t: &[f64]) -> Vec<f64> {
    let m = t.len();
    let mut w = vec![0.0; m];
    for j in 1..m {
        let h = 0.5 * (t[j] - t[j - 1]);
        w[j - 1] += h;
        w[j] += h;
    }
    w
}

/// Scores by trapezoid projection `Σ_ℓ ∫ (X_i^(ℓ) − μ̂^(ℓ)) φ_k^(ℓ)` for
/// densely observed subjects.
pub fn dense_scores<F: MvFunctionFamily + Sync>(
    data: &MvFunctionalDataset,
    mean: &MeanFit,
    family: &F,
    k: usize,
) -> Result<ScoreMatrix> {
    if family.q() != data.q() || mean.q() != data.q() {
        return Err(Error::InvalidArgument("dimension mismatch between data, mean and functions".into()));
    }
    if k == 0 || k > family.len() {
        return Err(Error::InvalidArgument(format!("K = {k} outside 1..={}", family.len())));
    }
    if let Some(s) = data.subjects().iter().find(|s| s.len() < DENSE_MIN_POINTS) {
        return Err(Error::SparseGrid { points: s.len() });
    }
    let q = data.q();
    let weights = pooled_weights(data);
    let rows: Vec<DVector<f64>> = data
        .subjects()
        .par_iter()
        .map(|s| {
            let y = centred(s, mean, &weights)?;
            let m = s.len();
            let w = trapezoid_weights(s.times());
            let mut xi = DVector::zeros(k);
            for (j, &t) in s.times().iter().enumerate() {
                for kk in 0..k {
                    let phi = family.eval(kk, t)?;
                    for l in 0..q {
                        xi[kk] += w[j] * y[l * m + j] * phi[l];
                    }
                }
            }
            Ok(xi)
        })
        .collect::<Result<_>>()?;
    assemble(data, rows, k)
}

/// `μ̂(t) + g_i η̂(t) + Σ_k ξ̂_ik ψ̂_k(t)` on `grid`, as a `q × |grid|` matrix.
///
/// The scores used here are centred at the subject's own group mean.
pub fn predict_trajectory(
    data: &MvFunctionalDataset,
    mean: &MeanFit,
    cov: &CovarianceFit,
    eigen: &MvEigenSystem,
    subject: &str,
    grid: &[f64],
) -> Result<DMatrix<f64>> {
    check_inputs(data, mean, cov, eigen)?;
    let (_, s) = data
        .subject(subject)
        .ok_or_else(|| Error::UnknownSubject(subject.to_string()))?;
    let xi = subject_blup(s, mean, cov, eigen, &one_hot(s.group(), data.group_count()))?;
    let q = data.q();
    let mut out = DMatrix::zeros(q, grid.len());
    for (c, &t) in grid.iter().enumerate() {
        let base = mean.predict(t, s.group())?;
        let mut v = DVector::from_vec(base);
        for k in 0..eigen.k() {
            v += DVector::from_vec(eigen.eval_eigenfunction(k, t)?) * xi[k];
        }
        out.set_column(c, &v);
    }
    Ok(out)
}
