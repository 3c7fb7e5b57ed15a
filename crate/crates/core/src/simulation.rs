//! Synthetic three-component data and Monte Carlo size/power studies.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::data::{MvFunctionalDataset, SubjectSeries};
use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;
use crate::testing::{fit_pipeline, run_test, PipelineConfig};

pub const SIM_Q: usize = 3;
pub const TRUE_LAMBDA: [f64; 3] = [6.0, 3.0, 1.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sparsity {
    High,
    Medium,
    Low,
}

impl Sparsity {
    /// Inclusive range of `m_i`.
    pub fn support(self) -> (usize, usize) {
        match self {
            Sparsity::High => (4, 7),
            Sparsity::Medium => (8, 12),
            Sparsity::Low => (15, 20),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sparsity::High => "high",
            Sparsity::Medium => "medium",
            Sparsity::Low => "low",
        }
    }

    fn code(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for Sparsity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sparsity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "high" => Ok(Sparsity::High),
            "medium" => Ok(Sparsity::Medium),
            "low" => Ok(Sparsity::Low),
            _ => Err(Error::InvalidArgument(format!("unknown sparsity {s:?} (high, medium, low)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScoreDist {
    Gaussian,
    Mixture,
}

impl ScoreDist {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreDist::Gaussian => "gaussian",
            ScoreDist::Mixture => "mixture",
        }
    }

    fn code(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for ScoreDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(ScoreDist::Gaussian),
            "mixture" => Ok(ScoreDist::Mixture),
            _ => Err(Error::InvalidArgument(format!("unknown score distribution {s:?} (gaussian, mixture)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub sparsity: Sparsity,
    pub score_dist: ScoreDist,
    pub delta: f64,
    pub sigma_e: f64,
    pub grid_size: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 100,
            sparsity: Sparsity::Medium,
            score_dist: ScoreDist::Gaussian,
            delta: 0.0,
            sigma_e: 0.2,
            grid_size: 51,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn header_lines(&self) -> Vec<String> {
        vec![
            format!(
                "config: n={} sparsity={} dist={} delta={} sigma_e={} grid_size={}",
                self.n, self.sparsity, self.score_dist, self.delta, self.sigma_e, self.grid_size
            ),
            format!("seed: {}", self.seed),
        ]
    }
}

pub fn true_mean(l: usize, t: f64) -> f64 {
    match l {
        0 => 5.0 * (2.0 * PI * t).sin(),
        1 => 5.0 * (2.0 * PI * t).cos(),
        _ => 5.0 * (t - 1.0).powi(2),
    }
}

/// Treatment effect, identical for all components.
pub fn true_effect(delta: f64, t: f64) -> f64 {
    5.0 * delta * (t / 4.0 - 0.5).powi(3)
}

/// `ψ_k(t)` for `k ∈ {1, 2, 3}`.
pub fn true_eigenfunctions(k: usize, t: f64) -> Result<[f64; 3]> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfDomain {
            value: t,
            lower: 0.0,
            upper: 1.0,
        });
    }
    let c = (2.0f64 / 3.0).sqrt();
    let s = |a: f64| (a * PI * t).sin();
    let v = match k {
        1 => [s(2.0), (4.0 * PI * t).cos(), s(4.0)],
        2 => [s(0.5), s(1.5), s(2.5)],
        3 => [s(1.0), s(2.0), s(3.0)],
        _ => return Err(Error::InvalidArgument(format!("eigenfunction index {k} outside 1..=3"))),
    };
    Ok([c * v[0], c * v[1], c * v[2]])
}

/// Spectrum of the generating covariance `Σ_k λ_k ψ_k ψ_kᵀ`.
///
/// The three generating functions are not mutually orthogonal, so the
/// operator eigenvalues differ from `λ`. Returns eigenvalues and the
/// coefficients `A` (column `j`) with `φ_j = Σ_k A_kj ψ_k`.
pub fn true_spectrum(gram: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let half = DMatrix::from_diagonal(&DVector::from_iterator(3, TRUE_LAMBDA.iter().map(|l| l.sqrt())));
    let m = &half * gram * &half;
    let (vals, vecs) = sym_eigen_desc(&m);
    let mut coef = &half * vecs;
    for j in 0..3 {
        let d = vals[j].max(f64::MIN_POSITIVE).sqrt();
        coef.column_mut(j).scale_mut(1.0 / d);
    }
    (vals.iter().copied().collect(), coef)
}

/// Latent quantities behind a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    /// `n × 3`
    pub scores: DMatrix<f64>,
    pub groups: Vec<usize>,
    pub m: Vec<usize>,
    pub times: Vec<Vec<f64>>,
    pub delta: f64,
}

impl SimTruth {
    /// Noiseless latent `X_i(t)` for subject `i`.
    pub fn latent(&self, i: usize, t: f64) -> Result<[f64; 3]> {
        let mut out = [0.0; 3];
        for l in 0..3 {
            out[l] = true_mean(l, t) + self.groups[i] as f64 * true_effect(self.delta, t);
        }
        for k in 0..3 {
            let psi = true_eigenfunctions(k + 1, t)?;
            for l in 0..3 {
                out[l] += self.scores[(i, k)] * psi[l];
            }
        }
        Ok(out)
    }

    /// `subject,group,time,outcome,mu,eta,latent` at every emitted time.
    pub fn write_table(&self, ids: &[String], mut out: impl Write) -> Result<()> {
        write!(out, "subject,group")?;
        for k in 1..=3 {
            write!(out, ",xi{k}")?;
        }
        writeln!(out, ",time,outcome,mu,eta,latent")?;
        for (i, times) in self.times.iter().enumerate() {
            for &t in times {
                let x = self.latent(i, t)?;
                for (l, xl) in x.iter().enumerate() {
                    write!(out, "{},{}", ids[i], self.groups[i])?;
                    for k in 0..3 {
                        write!(out, ",{}", self.scores[(i, k)])?;
                    }
                    writeln!(
                        out,
                        ",{},{},{},{},{}",
                        t,
                        l + 1,
                        true_mean(l, t),
                        true_effect(self.delta, t),
                        xl
                    )?;
                }
            }
        }
        Ok(())
    }
}

fn draw_score(rng: &mut ChaCha8Rng, dist: ScoreDist, lambda: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    match dist {
        ScoreDist::Gaussian => lambda.sqrt() * z,
        ScoreDist::Mixture => {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * (lambda / 2.0).sqrt() + (lambda / 2.0).sqrt() * z
        }
    }
}

pub fn generate_dataset(config: &SimConfig) -> Result<(MvFunctionalDataset, SimTruth)> {
    let (lo, hi) = config.sparsity.support();
    if hi > config.grid_size {
        return Err(Error::InvalidArgument(format!(
            "m_i up to {hi} exceeds the {}-point grid",
            config.grid_size
        )));
    }
    if config.grid_size < 2 || config.n == 0 {
        return Err(Error::InvalidArgument("need n ≥ 1 and a grid of at least 2 points".into()));
    }
    if !(config.sigma_e >= 0.0) || !config.delta.is_finite() {
        return Err(Error::InvalidArgument("sigma_e must be ≥ 0 and delta finite".into()));
    }
    let noise = Normal::new(0.0, config.sigma_e).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let step = 1.0 / (config.grid_size - 1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut subjects = Vec::with_capacity(config.n);
    let mut scores = DMatrix::zeros(config.n, 3);
    let mut groups = Vec::with_capacity(config.n);
    let mut ms = Vec::with_capacity(config.n);
    let mut all_times = Vec::with_capacity(config.n);
    let width = config.n.to_string().len();
    for i in 0..config.n {
        let g = rng.random_range(0..2usize);
        let m = rng.random_range(lo..=hi);
        let mut idx = sample(&mut rng, config.grid_size, m).into_vec();
        idx.sort_unstable();
        let times: Vec<f64> = idx.iter().map(|&j| j as f64 * step).collect();
        for k in 0..3 {
            scores[(i, k)] = draw_score(&mut rng, config.score_dist, TRUE_LAMBDA[k]);
        }
        let mut values = DMatrix::zeros(m, 3);
        for (j, &t) in times.iter().enumerate() {
            let psi: Vec<[f64; 3]> = (1..=3).map(|k| true_eigenfunctions(k, t)).collect::<Result<_>>()?;
            for l in 0..3 {
                let mut y = true_mean(l, t) + g as f64 * true_effect(config.delta, t);
                for k in 0..3 {
                    y += scores[(i, k)] * psi[k][l];
                }
                values[(j, l)] = y + noise.sample(&mut rng);
            }
        }
        subjects.push(SubjectSeries::new(format!("{:0width$}", i + 1), g, times.clone(), values)?);
        groups.push(g);
        ms.push(m);
        all_times.push(times);
    }
    let data = MvFunctionalDataset::new(3, (0.0, 1.0), subjects)?;
    Ok((
        data,
        SimTruth {
            scores,
            groups,
            m: ms,
            times: all_times,
            delta: config.delta,
        },
    ))
}

/// Seed for replicate `rep` of a study cell, mixing the cell identity so
/// that cells are independent and resumable.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(splitmix(master), |acc, &p| splitmix(acc ^ splitmix(p)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyCell {
    pub n: usize,
    pub sparsity: Sparsity,
    pub dist: ScoreDist,
    pub delta: f64,
}

impl StudyCell {
    pub fn replicate_config(&self, master: u64, rep: usize) -> SimConfig {
        let seed = derive_seed(
            master,
            &[self.n as u64, self.sparsity.code(), self.dist.code(), self.delta.to_bits(), rep as u64],
        );
        SimConfig {
            n: self.n,
            sparsity: self.sparsity,
            score_dist: self.dist,
            delta: self.delta,
            seed,
            ..SimConfig::default()
        }
    }

    /// File-name friendly identifier.
    pub fn tag(&self) -> String {
        format!("n{}_{}_{}_d{}", self.n, self.sparsity, self.dist, self.delta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub n: usize,
    pub sparsity: Sparsity,
    pub dist: ScoreDist,
    pub alpha: f64,
    pub delta: f64,
    pub rejection_rate: f64,
    pub se: f64,
    pub replications: usize,
}

pub const STUDY_COLUMNS: &str = "n,sparsity,dist,alpha,delta,rejection_rate,se,replications";

impl StudyRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.n, self.sparsity, self.dist, self.alpha, self.delta, self.rejection_rate, self.se, self.replications
        )
    }
}

/// p-value of one replicate, `None` if the pipeline failed.
pub fn replicate_p_value(cell: &StudyCell, master: u64, rep: usize, test: &PipelineConfig) -> Option<f64> {
    let cfg = cell.replicate_config(master, rep);
    let run = || -> Result<f64> {
        let (data, _) = generate_dataset(&cfg)?;
        let fit = fit_pipeline(&data, test)?;
        Ok(run_test(&fit.scores, test)?.p_value)
    };
    match run() {
        Ok(p) => Some(p),
        Err(e) => {
            warn!("replicate {rep} of {} (seed {}) failed: {e}", cell.tag(), cfg.seed);
            None
        }
    }
}

/// Replicate p-values for a cell, in replicate order.
pub fn cell_p_values(cell: &StudyCell, master: u64, replications: usize, test: &PipelineConfig) -> Vec<Option<f64>> {
    (0..replications)
        .into_par_iter()
        .map(|rep| replicate_p_value(cell, master, rep, test))
        .collect()
}

/// Rejection rates at each `alpha`; failed replicates are excluded.
pub fn summarize(cell: &StudyCell, alphas: &[f64], p_values: &[Option<f64>]) -> Vec<StudyRow> {
    let ok: Vec<f64> = p_values.iter().flatten().copied().collect();
    let r = ok.len();
    alphas
        .iter()
        .map(|&alpha| {
            let rate = if r == 0 { f64::NAN } else { ok.iter().filter(|&&p| p < alpha).count() as f64 / r as f64 };
            StudyRow {
                n: cell.n,
                sparsity: cell.sparsity,
                dist: cell.dist,
                alpha,
                delta: cell.delta,
                rejection_rate: rate,
                se: (rate * (1.0 - rate) / r as f64).sqrt(),
                replications: r,
            }
        })
        .collect()
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Type-I error study; every cell must have `δ = 0`.
pub fn size_study(
    cells: &[StudyCell],
    alphas: &[f64],
    replications: usize,
    master: u64,
    test: &PipelineConfig,
    workers: usize,
) -> Result<Vec<StudyRow>> {
    if let Some(c) = cells.iter().find(|c| c.delta != 0.0) {
        return Err(Error::InvalidArgument(format!("size study cell {} has delta ≠ 0", c.tag())));
    }
    run_study(cells, alphas, replications, master, test, workers)
}

/// Power study at one level; rows come out ordered by (n, sparsity, dist, δ).
pub fn power_study(
    cells: &[StudyCell],
    alpha: f64,
    replications: usize,
    master: u64,
    test: &PipelineConfig,
    workers: usize,
) -> Result<Vec<StudyRow>> {
    let mut sorted = cells.to_vec();
    sorted.sort_by(|a, b| {
        (a.n, a.sparsity, a.dist)
            .cmp(&(b.n, b.sparsity, b.dist))
            .then(a.delta.total_cmp(&b.delta))
    });
    run_study(&sorted, &[alpha], replications, master, test, workers)
}

fn run_study(
    cells: &[StudyCell],
    alphas: &[f64],
    replications: usize,
    master: u64,
    test: &PipelineConfig,
    workers: usize,
) -> Result<Vec<StudyRow>> {
    if replications == 0 {
        return Err(Error::InvalidArgument("replications must be positive".into()));
    }
    if alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::InvalidArgument("alpha values must lie in (0, 1)".into()));
    }
    with_workers(workers, || {
        cells
            .iter()
            .flat_map(|cell| summarize(cell, alphas, &cell_p_values(cell, master, replications, test)))
            .collect()
    })
}
