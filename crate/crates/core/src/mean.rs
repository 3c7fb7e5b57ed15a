//! Penalized-spline mean and group-effect estimation under working
//! independence.
//!
//! For component `ℓ` the model is `μ(t) + Σ_{r≥1} 𝟙[g = r] η_r(t)`, each curve
//! a cubic B-spline with a difference penalty. With two groups this is the
//! usual `μ(t) + g·η(t)`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::basis::{check_unit, difference_penalty, SplineBasis};
use crate::data::MvFunctionalDataset;
use crate::error::{Error, Result};
use crate::linalg::{gcv_score, log_grid};

/// Spline and smoothing choices shared by mean and covariance estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingConfig {
    pub interior_knots: usize,
    pub degree: usize,
    pub penalty_order: usize,
    pub lambda_grid: Vec<f64>,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            interior_knots: 10,
            degree: 3,
            penalty_order: 2,
            lambda_grid: log_grid(-6.0, 6.0, 20),
        }
    }
}

impl SmoothingConfig {
    pub fn basis(&self) -> Result<SplineBasis> {
        SplineBasis::uniform(self.interior_knots, self.degree)
    }
}

/// Smoothing parameters selected for one component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanLambdas {
    pub mean: f64,
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFit {
    basis: SplineBasis,
    q: usize,
    domain: (f64, f64),
    group_count: usize,
    /// per component: `[β_μ, β_η1, …, β_η(G−1)]`
    coefs: Vec<Vec<DVector<f64>>>,
    lambdas: Vec<MeanLambdas>,
}

/// Normal-equation pieces for the pooled working-independence design.
struct MeanDesign {
    blocks: usize,
    xtx: DMatrix<f64>,
    xty: Vec<DVector<f64>>,
    yty: Vec<f64>,
    n_obs: usize,
}

fn accumulate(data: &MvFunctionalDataset, basis: &SplineBasis, blocks: usize, components: &[usize]) -> Result<MeanDesign> {
    let r = basis.dim();
    let p = r * blocks;
    let mut xtx = DMatrix::zeros(p, p);
    let mut xty = vec![DVector::zeros(p); components.len()];
    let mut yty = vec![0.0; components.len()];
    let mut n_obs = 0;
    for s in data.subjects() {
        let g = s.group();
        let cols: Vec<usize> = if g > 0 && g < blocks { vec![0, g] } else { vec![0] };
        for (j, &t) in s.times().iter().enumerate() {
            let (start, local) = basis.eval_local(check_unit(t)?);
            n_obs += 1;
            for &ba in &cols {
                for &bb in &cols {
                    for (a, va) in local.iter().enumerate() {
                        for (b, vb) in local.iter().enumerate() {
                            xtx[(ba * r + start + a, bb * r + start + b)] += va * vb;
                        }
                    }
                }
            }
            for (c, &l) in components.iter().enumerate() {
                let y = s.values()[(j, l)];
                yty[c] += y * y;
                for &ba in &cols {
                    for (a, va) in local.iter().enumerate() {
                        xty[c][ba * r + start + a] += va * y;
                    }
                }
            }
        }
    }
    Ok(MeanDesign {
        blocks,
        xtx,
        xty,
        yty,
        n_obs,
    })
}

fn block_penalty(pen: &DMatrix<f64>, blocks: usize, lambdas: MeanLambdas) -> DMatrix<f64> {
    let r = pen.nrows();
    let mut out = DMatrix::zeros(r * blocks, r * blocks);
    for b in 0..blocks {
        let lam = if b == 0 { lambdas.mean } else { lambdas.effect };
        out.view_mut((b * r, b * r), (r, r)).copy_from(&(pen * lam));
    }
    out
}

fn check_identifiable(data: &MvFunctionalDataset, order: usize) -> Result<()> {
    let distinct = |group: Option<usize>| {
        let mut t: Vec<f64> = data
            .subjects()
            .iter()
            .filter(|s| group.is_none_or(|g| s.group() == g))
            .flat_map(|s| s.times().iter().copied())
            .collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t.len()
    };
    let pooled = distinct(None);
    if pooled < order.max(1) {
        return Err(Error::InsufficientData(format!(
            "{pooled} distinct time point(s); the penalty null space has dimension {order}"
        )));
    }
    for g in 1..data.group_count() {
        let k = distinct(Some(g));
        if k < order.max(1) {
            return Err(Error::InsufficientData(format!(
                "group {g} has {k} distinct time point(s); need at least {order}"
            )));
        }
    }
    Ok(())
}

/// Penalized least squares per component with `(λ_μ, λ_η)` chosen by GCV
/// over `config.lambda_grid × config.lambda_grid`.
pub fn fit_mean(data: &MvFunctionalDataset, config: &SmoothingConfig) -> Result<MeanFit> {
    let basis = config.basis()?;
    check_identifiable(data, config.penalty_order)?;
    let blocks = data.group_count();
    let components: Vec<usize> = (0..data.q()).collect();
    let design = accumulate(data, &basis, blocks, &components)?;
    let pen = difference_penalty(basis.dim(), config.penalty_order)?;

    let effect_grid: &[f64] = if blocks > 1 { &config.lambda_grid } else { &[0.0] };
    let mut best: Vec<Option<(f64, MeanLambdas, DVector<f64>)>> = vec![None; data.q()];
    for &lm in &config.lambda_grid {
        for &le in effect_grid {
            let lambdas = MeanLambdas { mean: lm, effect: le };
            let a = &design.xtx + block_penalty(&pen, blocks, lambdas);
            let Some(chol) = Cholesky::new(a) else { continue };
            let edf = (chol.inverse() * &design.xtx).trace();
            for l in 0..data.q() {
                let beta = chol.solve(&design.xty[l]);
                let rss = (design.yty[l] - 2.0 * beta.dot(&design.xty[l]) + (&design.xtx * &beta).dot(&beta)).max(0.0);
                let score = gcv_score(design.n_obs, rss, edf);
                if best[l].as_ref().is_none_or(|(s, _, _)| score < *s) {
                    best[l] = Some((score, lambdas, beta));
                }
            }
        }
    }
    let mut coefs = Vec::with_capacity(data.q());
    let mut lambdas = Vec::with_capacity(data.q());
    for b in best {
        let (_, lam, beta) = b.ok_or_else(|| Error::Singular("mean normal equations are singular for every smoothing parameter".into()))?;
        coefs.push(split_blocks(&beta, basis.dim(), design.blocks));
        lambdas.push(lam);
    }
    Ok(MeanFit {
        basis,
        q: data.q(),
        domain: data.domain(),
        group_count: blocks,
        coefs,
        lambdas,
    })
}

/// Refit one component at fixed smoothing parameters (no GCV search).
pub fn fit_mean_component_fixed(
    data: &MvFunctionalDataset,
    basis: &SplineBasis,
    penalty_order: usize,
    component: usize,
    lambdas: MeanLambdas,
) -> Result<Vec<DVector<f64>>> {
    let blocks = data.group_count();
    let design = accumulate(data, basis, blocks, &[component])?;
    let pen = difference_penalty(basis.dim(), penalty_order)?;
    let a = &design.xtx + block_penalty(&pen, blocks, lambdas);
    let chol = Cholesky::new(a).ok_or_else(|| Error::Singular("mean normal equations are singular".into()))?;
    Ok(split_blocks(&chol.solve(&design.xty[0]), basis.dim(), blocks))
}

fn split_blocks(beta: &DVector<f64>, r: usize, blocks: usize) -> Vec<DVector<f64>> {
    (0..blocks).map(|b| beta.rows(b * r, r).into_owned()).collect()
}

impl MeanFit {
    /// Fit with explicit coefficients; `coefs[l]` is `[β_μ, β_η1, …]` for component `l`.
    pub fn from_parts(
        basis: SplineBasis,
        domain: (f64, f64),
        group_count: usize,
        coefs: Vec<Vec<DVector<f64>>>,
    ) -> Result<Self> {
        let r = basis.dim();
        if coefs.is_empty() || coefs.iter().any(|c| c.is_empty() || c.len() > group_count.max(1) || c.iter().any(|b| b.len() != r)) {
            return Err(Error::InvalidArgument(format!(
                "mean coefficients must be nonempty vectors of length {r}, at most {group_count} per component"
            )));
        }
        let q = coefs.len();
        Ok(Self {
            basis,
            q,
            domain,
            group_count,
            coefs,
            lambdas: vec![MeanLambdas { mean: 0.0, effect: 0.0 }; q],
        })
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn group_count(&self) -> usize {
        self.group_count
    }

    pub fn lambdas(&self) -> &[MeanLambdas] {
        &self.lambdas
    }

    pub fn mean_coefficients(&self, component: usize) -> &DVector<f64> {
        &self.coefs[component][0]
    }

    /// Effect coefficients of `group` relative to group 0; `None` when the
    /// group was absent from the fitted data.
    pub fn effect_coefficients(&self, component: usize, group: usize) -> Option<&DVector<f64>> {
        if group == 0 {
            return None;
        }
        self.coefs[component].get(group)
    }

    /// Overall (reference-group) mean `μ̂(t)`.
    pub fn mu(&self, t: f64) -> Result<Vec<f64>> {
        (0..self.q)
            .map(|l| self.basis.eval_spline(&self.coefs[l][0], t))
            .collect()
    }

    /// Group effect `η̂(t)` of `group` (zero for group 0 or absent groups).
    pub fn effect(&self, group: usize, t: f64) -> Result<Vec<f64>> {
        (0..self.q)
            .map(|l| match self.effect_coefficients(l, group) {
                Some(c) => self.basis.eval_spline(c, t),
                None => check_unit(t).map(|_| 0.0),
            })
            .collect()
    }

    /// `μ̂(t) + η̂_group(t)`.
    pub fn predict(&self, t: f64, group: usize) -> Result<Vec<f64>> {
        let mu = self.mu(t)?;
        let eta = self.effect(group, t)?;
        Ok(mu.iter().zip(&eta).map(|(a, b)| a + b).collect())
    }

    /// Replace component coefficients (bootstrap refits).
    pub(crate) fn with_component(&self, component: usize, coefs: Vec<DVector<f64>>) -> Self {
        let mut out = self.clone();
        out.coefs[component] = coefs;
        out
    }

    fn check_compatible(&self, data: &MvFunctionalDataset) -> Result<()> {
        if data.q() != self.q || data.domain() != self.domain {
            return Err(Error::InvalidArgument(format!(
                "mean fit (q={}, domain {:?}) does not match dataset (q={}, domain {:?})",
                self.q,
                self.domain,
                data.q(),
                data.domain()
            )));
        }
        Ok(())
    }

    /// `Y_ij − μ̂(t_ij) − η̂_{g_i}(t_ij)`, same index structure as the input.
    pub fn residuals(&self, data: &MvFunctionalDataset) -> Result<MvFunctionalDataset> {
        self.check_compatible(data)?;
        let values = data
            .subjects()
            .iter()
            .map(|s| {
                let mut v = s.values().clone();
                for (j, &t) in s.times().iter().enumerate() {
                    let pred = self.predict(t, s.group())?;
                    for l in 0..self.q {
                        v[(j, l)] -= pred[l];
                    }
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        data.with_subject_values(values)
    }

    /// Inverse of [`MeanFit::residuals`].
    pub fn add_predictions(&self, residuals: &MvFunctionalDataset) -> Result<MvFunctionalDataset> {
        self.check_compatible(residuals)?;
        let values = residuals
            .subjects()
            .iter()
            .map(|s| {
                let mut v = s.values().clone();
                for (j, &t) in s.times().iter().enumerate() {
                    let pred = self.predict(t, s.group())?;
                    for l in 0..self.q {
                        v[(j, l)] += pred[l];
                    }
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        residuals.with_subject_values(values)
    }
}
