//! Projection-based tests on score matrices and the end-to-end pipeline.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::covariance::{fit_covariance, raw_covariances, CovarianceFit};
use crate::data::MvFunctionalDataset;
use crate::eigen::{multivariate_eigen, MvEigenSystem, DEFAULT_PVE};
use crate::error::{Error, Result};
use crate::linalg::spd_inverse;
use crate::mean::{fit_mean, fit_mean_component_fixed, MeanFit, SmoothingConfig};
use crate::scores::{blup_scores, ScoreMatrix};
use crate::stats::{quantile, replicate_rng};

/// Reciprocal condition number below which a score covariance is refused.
pub const RCOND_LIMIT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFamily {
    HotellingEqual,
    HotellingUnequal,
    LawleyHotelling,
}

impl TestFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            TestFamily::HotellingEqual => "hotelling_equal",
            TestFamily::HotellingUnequal => "hotelling_unequal",
            TestFamily::LawleyHotelling => "lawley_hotelling",
        }
    }
}

impl fmt::Display for TestFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PValueMethod {
    FQuantile,
    ChiSquare,
    Permutation,
}

impl PValueMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PValueMethod::FQuantile => "f_quantile",
            PValueMethod::ChiSquare => "chi_square",
            PValueMethod::Permutation => "permutation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestReport {
    pub statistic: f64,
    pub family: TestFamily,
    pub p_value: f64,
    pub p_value_method: PValueMethod,
    pub k: usize,
    pub group_sizes: Vec<usize>,
    pub df: Vec<f64>,
    pub permutation_b: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub diagnostics: Vec<(String, String)>,
}

impl TestReport {
    /// `p < α`, when a level was supplied.
    pub fn reject(&self) -> Option<bool> {
        self.alpha.map(|a| self.p_value < a)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = Some(alpha);
        self
    }

    pub fn push_diagnostic(&mut self, key: &str, value: impl ToString) {
        self.diagnostics.push((key.to_string(), value.to_string()));
    }

    pub fn diagnostic(&self, key: &str) -> Option<&str> {
        self.diagnostics.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// `key = value` lines.
    pub fn write_key_value(&self, mut out: impl Write) -> Result<()> {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        writeln!(out, "family = {}", self.family)?;
        writeln!(out, "statistic = {}", self.statistic)?;
        writeln!(out, "p_value = {}", self.p_value)?;
        writeln!(out, "p_value_method = {}", self.p_value_method.as_str())?;
        writeln!(out, "K = {}", self.k)?;
        let sizes: Vec<String> = self.group_sizes.iter().map(|s| s.to_string()).collect();
        writeln!(out, "group_sizes = {}", sizes.join(","))?;
        writeln!(out, "df = {}", join(&self.df))?;
        if let Some(b) = self.permutation_b {
            writeln!(out, "permutation_B = {b}")?;
        }
        if let Some(s) = self.seed {
            writeln!(out, "seed = {s}")?;
        }
        if let Some(a) = self.alpha {
            writeln!(out, "alpha = {a}")?;
            writeln!(out, "reject = {}", self.p_value < a)?;
        }
        for (k, v) in &self.diagnostics {
            writeln!(out, "{k} = {v}")?;
        }
        Ok(())
    }

    /// One-line summary.
    pub fn summary(&self) -> String {
        format!(
            "{}: statistic={:.6} K={} p={:.6} ({})",
            self.family,
            self.statistic,
            self.k,
            self.p_value,
            self.p_value_method.as_str()
        )
    }
}

/// Mean vector and sample covariance (`n − 1`) of the rows.
fn mean_cov(rows: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.nrows();
    let mean = rows.row_mean().transpose();
    let mut centred = rows.clone();
    for i in 0..n {
        let mut row = centred.row_mut(i);
        row -= mean.transpose();
    }
    let cov = centred.transpose() * &centred / (n as f64 - 1.0);
    (mean, cov)
}

struct TwoGroup {
    n1: usize,
    n0: usize,
    mean1: DVector<f64>,
    mean0: DVector<f64>,
    cov1: DMatrix<f64>,
    cov0: DMatrix<f64>,
}

fn split_two(scores: &DMatrix<f64>, groups: &[usize]) -> TwoGroup {
    let idx1: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == 1).collect();
    let idx0: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == 0).collect();
    let (mean1, cov1) = mean_cov(&scores.select_rows(idx1.iter()));
    let (mean0, cov0) = mean_cov(&scores.select_rows(idx0.iter()));
    TwoGroup {
        n1: idx1.len(),
        n0: idx0.len(),
        mean1,
        mean0,
        cov1,
        cov0,
    }
}

fn check_two_groups(scores: &ScoreMatrix) -> Result<(usize, usize)> {
    if scores.groups.iter().any(|&g| g > 1) {
        return Err(Error::InvalidArgument(
            "two-sample tests need group labels 0 and 1 only".into(),
        ));
    }
    let n1 = scores.groups.iter().filter(|&&g| g == 1).count();
    let n0 = scores.n() - n1;
    if n1 < 2 || n0 < 2 {
        return Err(Error::InsufficientData(format!(
            "each group needs at least 2 subjects (n1={n1}, n0={n0})"
        )));
    }
    if scores.k() == 0 {
        return Err(Error::InvalidArgument("score matrix has no columns".into()));
    }
    Ok((n1, n0))
}

/// `T_n` and the condition number of the pooled covariance.
fn stat_equal(scores: &DMatrix<f64>, groups: &[usize]) -> Result<(f64, f64)> {
    let s = split_two(scores, groups);
    let d = &s.mean1 - &s.mean0;
    if d.iter().all(|v| *v == 0.0) {
        return Ok((0.0, f64::NAN));
    }
    let (n1, n0) = (s.n1 as f64, s.n0 as f64);
    let pooled = (&s.cov1 * (n1 - 1.0) + &s.cov0 * (n0 - 1.0)) / (n1 + n0 - 2.0);
    let (inv, cond) = spd_inverse(&pooled, RCOND_LIMIT, "pooled score covariance (try a lower PVE)")?;
    let t = n1 * n0 / (n1 + n0) * (&inv * &d).dot(&d);
    Ok((t.max(0.0), cond))
}

/// `T_{n,UV}`, the effective df `f`, and the condition number of `W`.
fn stat_unequal(scores: &DMatrix<f64>, groups: &[usize]) -> Result<(f64, f64, f64)> {
    let s = split_two(scores, groups);
    let (n1, n0) = (s.n1 as f64, s.n0 as f64);
    let w1 = &s.cov1 / n1;
    let w0 = &s.cov0 / n0;
    let w = &w1 + &w0;
    let f = nel_van_der_merwe_df(&w1, &w0, s.n1, s.n0);
    let d = &s.mean1 - &s.mean0;
    if d.iter().all(|v| *v == 0.0) {
        return Ok((0.0, f, f64::NAN));
    }
    let (inv, cond) = spd_inverse(&w, RCOND_LIMIT, "combined score covariance (try a lower PVE)")?;
    Ok(((&inv * &d).dot(&d).max(0.0), f, cond))
}

/// Effective degrees of freedom for the unequal-covariance statistic, with
/// `W_r = Λ̂_r / n_r`.
pub fn nel_van_der_merwe_df(w1: &DMatrix<f64>, w0: &DMatrix<f64>, n1: usize, n0: usize) -> f64 {
    let part = |w: &DMatrix<f64>| w.trace().powi(2) + (w * w).trace();
    let w = w1 + w0;
    part(&w) / (part(w1) / (n1 as f64 - 1.0) + part(w0) / (n0 as f64 - 1.0))
}

fn f_sf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    if x <= 0.0 {
        return Ok(1.0);
    }
    let f = FisherSnedecor::new(d1, d2).map_err(|e| Error::InvalidArgument(format!("F({d1}, {d2}): {e}")))?;
    Ok(f.sf(x).clamp(0.0, 1.0))
}

/// Two-sample Hotelling `T²` with pooled covariance and F reference.
pub fn hotelling_equal(scores: &ScoreMatrix) -> Result<TestReport> {
    let (n1, n0) = check_two_groups(scores)?;
    let k = scores.k();
    let n = n1 + n0;
    if n < k + 2 {
        return Err(Error::InsufficientData(format!("n − K − 1 = {} < 1", n as i64 - k as i64 - 1)));
    }
    let (t, cond) = stat_equal(&scores.scores, &scores.groups)?;
    let (d1, d2) = (k as f64, (n - k - 1) as f64);
    let x = t * d2 / ((n as f64 - 2.0) * d1);
    let mut report = TestReport {
        statistic: t,
        family: TestFamily::HotellingEqual,
        p_value: f_sf(x, d1, d2)?,
        p_value_method: PValueMethod::FQuantile,
        k,
        group_sizes: vec![n1, n0],
        df: vec![d1, d2],
        permutation_b: None,
        seed: None,
        alpha: None,
        diagnostics: Vec::new(),
    };
    report.push_diagnostic("f_statistic", x);
    report.push_diagnostic("covariance_condition", cond);
    Ok(report)
}

/// Two-sample statistic with `Λ̂₁/n₁ + Λ̂₀/n₀` and the effective df `f`.
pub fn hotelling_unequal(scores: &ScoreMatrix) -> Result<TestReport> {
    let (n1, n0) = check_two_groups(scores)?;
    let k = scores.k();
    let (t, f, cond) = stat_unequal(&scores.scores, &scores.groups)?;
    let kf = k as f64;
    if !(f - kf - 1.0 >= 1.0) {
        return Err(Error::InsufficientData(format!("f − K − 1 = {} < 1", f - kf - 1.0)));
    }
    let (d1, d2) = (kf, f - kf - 1.0);
    let x = t * d2 / (f * kf);
    let mut report = TestReport {
        statistic: t,
        family: TestFamily::HotellingUnequal,
        p_value: f_sf(x, d1, d2)?,
        p_value_method: PValueMethod::FQuantile,
        k,
        group_sizes: vec![n1, n0],
        df: vec![d1, d2],
        permutation_b: None,
        seed: None,
        alpha: None,
        diagnostics: Vec::new(),
    };
    report.push_diagnostic("effective_df", f);
    report.push_diagnostic("f_statistic", x);
    report.push_diagnostic("covariance_condition", cond);
    Ok(report)
}

/// Permutation reference distribution for either two-sample family:
/// `p = B⁻¹ Σ 𝟙(T_b > T_n)`, and `p = 1` when `T_n = 0`.
pub fn permutation_test(scores: &ScoreMatrix, b: usize, seed: u64, family: TestFamily) -> Result<TestReport> {
    if b < 100 {
        return Err(Error::InvalidArgument(format!("permutation B = {b} < 100")));
    }
    let mut report = match family {
        TestFamily::HotellingEqual => hotelling_equal(scores)?,
        TestFamily::HotellingUnequal => hotelling_unequal(scores)?,
        TestFamily::LawleyHotelling => {
            return Err(Error::InvalidArgument("permutation is implemented for the two-sample families".into()))
        }
    };
    let observed = report.statistic;
    let stat = |groups: &[usize]| -> Result<f64> {
        match family {
            TestFamily::HotellingEqual => stat_equal(&scores.scores, groups).map(|s| s.0),
            _ => stat_unequal(&scores.scores, groups).map(|s| s.0),
        }
    };
    let exceed: usize = if observed == 0.0 {
        0
    } else {
        (0..b)
            .into_par_iter()
            .map(|rep| {
                let mut rng = replicate_rng(seed, rep as u64);
                let mut labels = scores.groups.clone();
                labels.shuffle(&mut rng);
                stat(&labels).map(|t| (t > observed) as usize)
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .sum()
    };
    let p = if observed == 0.0 { 1.0 } else { exceed as f64 / b as f64 };
    report.push_diagnostic("parametric_p_value", report.p_value);
    report.push_diagnostic("permutation_exceedances", exceed);
    report.p_value = p;
    report.p_value_method = PValueMethod::Permutation;
    report.permutation_b = Some(b);
    report.seed = Some(seed);
    Ok(report)
}

/// Lawley–Hotelling trace for `G ≥ 2` groups. The reported statistic is
/// `tr(Q_H Q_E⁻¹)`; the p-value refers `(n − G)·tr(Q_H Q_E⁻¹)` to `χ²_{K(G−1)}`.
pub fn manova_lh(scores: &ScoreMatrix) -> Result<TestReport> {
    let sizes = scores.group_sizes();
    let g = sizes.len();
    if g < 2 {
        return Err(Error::InsufficientData("need at least two groups".into()));
    }
    if let Some((r, n)) = sizes.iter().enumerate().find(|(_, n)| **n < 2) {
        return Err(Error::InsufficientData(format!("group {r} has {n} subject(s); need at least 2")));
    }
    let k = scores.k();
    let n = scores.n();
    let grand = scores.scores.row_mean().transpose();
    let mut qh = DMatrix::zeros(k, k);
    let mut qe = DMatrix::zeros(k, k);
    for (r, &nr) in sizes.iter().enumerate() {
        let (m, c) = mean_cov(&scores.group_rows(r));
        let d = m - &grand;
        qh += &d * d.transpose() * nr as f64;
        qe += c * (nr as f64 - 1.0);
    }
    let (t, cond) = if qh.iter().all(|v| *v == 0.0) {
        (0.0, f64::NAN)
    } else {
        let (inv, cond) = spd_inverse(&qe, RCOND_LIMIT, "within-group score scatter")?;
        ((&qh * inv).trace().max(0.0), cond)
    };
    let df = (k * (g - 1)) as f64;
    let chi = (n - g) as f64 * t;
    let p = if chi <= 0.0 {
        1.0
    } else {
        ChiSquared::new(df)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .sf(chi)
            .clamp(0.0, 1.0)
    };
    let mut report = TestReport {
        statistic: t,
        family: TestFamily::LawleyHotelling,
        p_value: p,
        p_value_method: PValueMethod::ChiSquare,
        k,
        group_sizes: sizes,
        df: vec![df],
        permutation_b: None,
        seed: None,
        alpha: None,
        diagnostics: Vec::new(),
    };
    report.push_diagnostic("chi_square_statistic", chi);
    report.push_diagnostic("covariance_condition", cond);
    Ok(report)
}

/// Simultaneous bootstrap band for one component of the group effect.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectBand {
    pub component: usize,
    /// unit-time grid
    pub grid: Vec<f64>,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub critical_value: f64,
    pub alpha: f64,
    pub alpha_star: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl EffectBand {
    pub const COLUMNS: &'static str = "component,t,t_raw,estimate,se,lower,upper";

    /// Header line then rows; `t_raw` is on the data scale and `component`
    /// is 1-based.
    pub fn write_table(&self, domain: (f64, f64), mut out: impl Write) -> Result<()> {
        writeln!(out, "{}", Self::COLUMNS)?;
        self.write_rows(domain, out)
    }

    pub fn write_rows(&self, domain: (f64, f64), mut out: impl Write) -> Result<()> {
        for i in 0..self.grid.len() {
            let raw = domain.0 + self.grid[i] * (domain.1 - domain.0);
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.component + 1,
                self.grid[i],
                raw,
                self.estimate[i],
                self.se[i],
                self.lower[i],
                self.upper[i]
            )?;
        }
        Ok(())
    }

    pub fn contains_zero(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(l, u)| *l <= 0.0 && *u >= 0.0)
    }
}

/// Points in the band grid.
pub const BAND_GRID: usize = 101;

/// Subject bootstrap within groups; smoothing parameters stay at the values
/// selected on the full data. `component` is 0-based.
pub fn bootstrap_band(
    data: &MvFunctionalDataset,
    mean: &MeanFit,
    penalty_order: usize,
    component: usize,
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<EffectBand> {
    if b < 200 {
        return Err(Error::InvalidArgument(format!("bootstrap B = {b} < 200")));
    }
    if component >= data.q() {
        return Err(Error::InvalidArgument(format!("component {component} outside 0..{}", data.q())));
    }
    if data.group_count() != 2 {
        return Err(Error::InvalidArgument("bands need exactly two groups".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha = {alpha} outside (0, 1)")));
    }
    let alpha_star = alpha / data.q() as f64;
    let grid: Vec<f64> = (0..BAND_GRID).map(|i| i as f64 / (BAND_GRID - 1) as f64).collect();
    let eval = |fit: &MeanFit| -> Result<Vec<f64>> {
        grid.iter().map(|&t| fit.effect(1, t).map(|e| e[component])).collect()
    };
    let estimate = eval(mean)?;
    let members: Vec<Vec<usize>> = (0..2)
        .map(|g| (0..data.n()).filter(|&i| data.subjects()[i].group() == g).collect())
        .collect();
    let lambdas = mean.lambdas()[component];
    let curves: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(seed, rep as u64);
            let mut idx = Vec::with_capacity(data.n());
            for m in &members {
                for _ in 0..m.len() {
                    idx.push(*m.choose(&mut rng).expect("nonempty group"));
                }
            }
            let boot = data.select(&idx)?;
            let coefs = fit_mean_component_fixed(&boot, mean.basis(), penalty_order, component, lambdas)?;
            eval(&mean.with_component(component, coefs))
        })
        .collect::<Result<_>>()?;
    let bf = b as f64;
    let centre: Vec<f64> = (0..grid.len()).map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / bf).collect();
    let se: Vec<f64> = (0..grid.len())
        .map(|i| (curves.iter().map(|c| (c[i] - centre[i]).powi(2)).sum::<f64>() / (bf - 1.0)).sqrt())
        .collect();
    let max_dev: Vec<f64> = curves
        .iter()
        .map(|c| {
            (0..grid.len())
                .filter(|&i| se[i] > 0.0)
                .map(|i| (c[i] - centre[i]).abs() / se[i])
                .fold(0.0, f64::max)
        })
        .collect();
    let critical_value = quantile(&max_dev, 1.0 - alpha_star);
    let lower = estimate.iter().zip(&se).map(|(e, s)| e - critical_value * s).collect();
    let upper = estimate.iter().zip(&se).map(|(e, s)| e + critical_value * s).collect();
    Ok(EffectBand {
        component,
        grid,
        estimate,
        se,
        lower,
        upper,
        critical_value,
        alpha,
        alpha_star,
        replicates: b,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variance {
    Equal,
    Unequal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub smoothing: SmoothingConfig,
    pub pve: f64,
    pub variance: Variance,
    pub alpha: f64,
    /// `(B, seed)` for a permutation p-value.
    pub permutation: Option<(usize, u64)>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            smoothing: SmoothingConfig::default(),
            pve: DEFAULT_PVE,
            variance: Variance::Equal,
            alpha: 0.05,
            permutation: None,
        }
    }
}

/// Every fitted stage of the pipeline.
#[derive(Debug, Clone)]
pub struct PipelineFit {
    pub mean: MeanFit,
    pub covariance: CovarianceFit,
    pub eigen: MvEigenSystem,
    pub scores: ScoreMatrix,
}

/// Mean, covariance, eigen and score stages.
pub fn fit_pipeline(data: &MvFunctionalDataset, config: &PipelineConfig) -> Result<PipelineFit> {
    let mean = fit_mean(data, &config.smoothing)?;
    let residuals = mean.residuals(data)?;
    let raw = raw_covariances(&residuals);
    let covariance = fit_covariance(&raw, mean.basis(), config.smoothing.penalty_order, &config.smoothing.lambda_grid)?;
    let eigen = multivariate_eigen(&covariance)?.with_pve(config.pve)?;
    let scores = blup_scores(data, &mean, &covariance, &eigen)?;
    Ok(PipelineFit {
        mean,
        covariance,
        eigen,
        scores,
    })
}

/// Runs the chosen test on fitted scores; more than two groups go to the
/// Lawley–Hotelling trace.
pub fn run_test(scores: &ScoreMatrix, config: &PipelineConfig) -> Result<TestReport> {
    let report = if scores.group_count() > 2 {
        manova_lh(scores)?
    } else {
        let family = match config.variance {
            Variance::Equal => TestFamily::HotellingEqual,
            Variance::Unequal => TestFamily::HotellingUnequal,
        };
        match (config.permutation, family) {
            (Some((b, seed)), f) => permutation_test(scores, b, seed, f)?,
            (None, TestFamily::HotellingEqual) => hotelling_equal(scores)?,
            (None, _) => hotelling_unequal(scores)?,
        }
    };
    Ok(report.with_alpha(config.alpha))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Full pipeline with stage diagnostics attached to the report.
pub fn two_sample_pipeline(data: &MvFunctionalDataset, config: &PipelineConfig) -> Result<(TestReport, PipelineFit)> {
    let fit = fit_pipeline(data, config)?;
    let mut report = run_test(&fit.scores, config)?;
    report.push_diagnostic("pve_target", config.pve);
    report.push_diagnostic("eigenvalues", join(fit.eigen.eigenvalues()));
    report.push_diagnostic("pve_path", join(&fit.eigen.pve_path()));
    report.push_diagnostic("most_negative_eigenvalue", fit.eigen.most_negative_eigenvalue());
    report.push_diagnostic("tau_sq", join(fit.covariance.tau_sq()));
    let mean_l: Vec<f64> = fit.mean.lambdas().iter().map(|l| l.mean).collect();
    let eff_l: Vec<f64> = fit.mean.lambdas().iter().map(|l| l.effect).collect();
    report.push_diagnostic("mean_lambda", join(&mean_l));
    report.push_diagnostic("effect_lambda", join(&eff_l));
    let cov_l: Vec<String> = fit
        .covariance
        .lambdas()
        .iter()
        .map(|((a, b), l)| format!("{}{}:{}", a + 1, b + 1, l))
        .collect();
    report.push_diagnostic("covariance_lambda", cov_l.join(","));
    Ok((report, fit))
}
