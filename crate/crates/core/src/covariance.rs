//! Tensor-product spline estimation of the cross-covariance surfaces
//! `Σ_{ℓℓ'}(t, t') = B(t)ᵀ Γ_{ℓℓ'} B(t')` from products of mean residuals,
//! and of the measurement-error variances `τ²_ℓ`.
//!
//! Same-time same-component products `Ẽ^ℓ_ij²` carry `τ²_ℓ` and are left out
//! of the surface fit; they are used afterwards to estimate `τ²_ℓ`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::basis::{check_unit, difference_penalty, GramRoot, SplineBasis};
use crate::data::MvFunctionalDataset;
use crate::error::{Error, Result};
use crate::linalg::{kron, PenalizedSmoother};

/// One raw-covariance pseudo-response `Ẽ^ℓ_ij Ẽ^ℓ'_ij'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoResponse {
    pub subject: usize,
    pub t: f64,
    pub t_prime: f64,
    pub value: f64,
    /// `j = j'` and `ℓ = ℓ'`
    pub diagonal: bool,
}

/// All raw covariances of a residual dataset, kept in factored per-subject
/// form; individual products are enumerated on demand.
#[derive(Debug, Clone)]
pub struct RawCovariances {
    q: usize,
    times: Vec<Vec<f64>>,
    residuals: Vec<DMatrix<f64>>,
}

pub fn raw_covariances(residuals: &MvFunctionalDataset) -> RawCovariances {
    RawCovariances {
        q: residuals.q(),
        times: residuals.subjects().iter().map(|s| s.times().to_vec()).collect(),
        residuals: residuals.subjects().iter().map(|s| s.values().clone()).collect(),
    }
}

impl RawCovariances {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn subjects(&self) -> usize {
        self.times.len()
    }

    /// Products for the component pair `(l, l2)` over every subject and
    /// every ordered time pair `(j, j')`.
    pub fn pairs(&self, l: usize, l2: usize) -> Vec<PseudoResponse> {
        let mut out = Vec::new();
        for (i, (times, e)) in self.times.iter().zip(&self.residuals).enumerate() {
            for (j, &t) in times.iter().enumerate() {
                for (j2, &t2) in times.iter().enumerate() {
                    out.push(PseudoResponse {
                        subject: i,
                        t,
                        t_prime: t2,
                        value: e[(j, l)] * e[(j2, l2)],
                        diagonal: j == j2 && l == l2,
                    });
                }
            }
        }
        out
    }

    /// Every pseudo-response for pairs `ℓ ≤ ℓ'`.
    pub fn all(&self) -> Vec<((usize, usize), PseudoResponse)> {
        let mut out = Vec::new();
        for l in 0..self.q {
            for l2 in l..self.q {
                out.extend(self.pairs(l, l2).into_iter().map(|p| ((l, l2), p)));
            }
        }
        out
    }

    pub(crate) fn subject_data(&self) -> impl Iterator<Item = (&[f64], &DMatrix<f64>)> {
        self.times.iter().map(Vec::as_slice).zip(&self.residuals)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFit {
    basis: SplineBasis,
    gram: GramRoot,
    q: usize,
    gamma: DMatrix<f64>,
    tau_sq: Vec<f64>,
    lambdas: Vec<((usize, usize), f64)>,
}

/// Sparse local basis rows for a subject's times.
fn local_rows(basis: &SplineBasis, times: &[f64]) -> Result<Vec<(usize, Vec<f64>)>> {
    times.iter().map(|&t| Ok(basis.eval_local(check_unit(t)?))).collect()
}

fn add_kron_outer(a: &mut DMatrix<f64>, r: usize, left: &DMatrix<f64>, right: &DMatrix<f64>, scale: f64) {
    for i in 0..r {
        for k in 0..r {
            let lik = left[(i, k)] * scale;
            if lik == 0.0 {
                continue;
            }
            for j in 0..r {
                for l in 0..r {
                    let v = right[(j, l)];
                    if v != 0.0 {
                        a[(i * r + j, k * r + l)] += lik * v;
                    }
                }
            }
        }
    }
}

/// Penalized tensor-product least squares per block `ℓ ≤ ℓ'`, with penalty
/// `λ (P ⊗ S + S ⊗ P)` and `λ` selected by GCV; diagonal-flagged products
/// are excluded. Noise variances are estimated from them afterwards.
pub fn fit_covariance(
    raw: &RawCovariances,
    basis: &SplineBasis,
    penalty_order: usize,
    lambda_grid: &[f64],
) -> Result<CovarianceFit> {
    let q = raw.q;
    let r = basis.dim();
    let p = r * r;
    let gram = basis.gram();
    let pen1 = difference_penalty(r, penalty_order)?;
    let penalty = kron(&pen1, &gram.s) + kron(&gram.s, &pen1);

    // Normal equations: all (j, j') pairs for cross blocks, j ≠ j' for
    // diagonal blocks. The two Gram matrices are shared across blocks.
    let mut a_all = DMatrix::zeros(p, p);
    let mut a_diag = DMatrix::zeros(p, p);
    let mut n_all = 0usize;
    let mut n_off = 0usize;
    let blocks: Vec<(usize, usize)> = (0..q).flat_map(|l| (l..q).map(move |l2| (l, l2))).collect();
    let mut xty = vec![DVector::zeros(p); blocks.len()];
    let mut yty = vec![0.0; blocks.len()];

    for (times, e) in raw.subject_data() {
        let rows = local_rows(basis, times)?;
        let m = times.len();
        n_all += m * m;
        n_off += m * (m - 1);
        let mut mi = DMatrix::zeros(r, r);
        for (start, v) in &rows {
            for (a, va) in v.iter().enumerate() {
                for (b, vb) in v.iter().enumerate() {
                    mi[(start + a, start + b)] += va * vb;
                }
            }
        }
        add_kron_outer(&mut a_all, r, &mi, &mi, 1.0);
        // diagonal terms Σ_j (b_j b_jᵀ) ⊗ (b_j b_jᵀ)
        for (start, v) in &rows {
            let mut bj = DMatrix::zeros(r, r);
            for (a, va) in v.iter().enumerate() {
                for (b, vb) in v.iter().enumerate() {
                    bj[(start + a, start + b)] = va * vb;
                }
            }
            add_kron_outer(&mut a_diag, r, &bj, &bj, 1.0);
        }

        // projections u_ℓ = B_iᵀ e^ℓ
        let proj: Vec<DVector<f64>> = (0..q)
            .map(|l| {
                let mut u = DVector::zeros(r);
                for (j, (start, v)) in rows.iter().enumerate() {
                    for (a, va) in v.iter().enumerate() {
                        u[start + a] += va * e[(j, l)];
                    }
                }
                u
            })
            .collect();
        for (bi, &(l, l2)) in blocks.iter().enumerate() {
            let (u, w) = (&proj[l], &proj[l2]);
            for a in 0..r {
                if u[a] == 0.0 {
                    continue;
                }
                for c in 0..r {
                    xty[bi][a * r + c] += u[a] * w[c];
                }
            }
            let el = e.column(l);
            let el2 = e.column(l2);
            yty[bi] += el.norm_squared() * el2.norm_squared();
            if l == l2 {
                for (j, (start, v)) in rows.iter().enumerate() {
                    let e2 = e[(j, l)] * e[(j, l)];
                    yty[bi] -= e2 * e2;
                    for (a, va) in v.iter().enumerate() {
                        for (c, vc) in v.iter().enumerate() {
                            xty[bi][(start + a) * r + start + c] -= e2 * va * vc;
                        }
                    }
                }
            }
        }
    }

    let a_offdiag = &a_all - &a_diag;
    let needed = 10 * p;
    if n_off < needed {
        log::warn!(
            "only {n_off} off-diagonal raw covariances for {p} coefficients per block (recommended at least {needed})"
        );
    }
    if n_off == 0 {
        return Err(Error::InsufficientData(
            "no subject has two or more observation times; covariance is not identifiable".into(),
        ));
    }

    let smoother_all = if q > 1 { Some(PenalizedSmoother::new(&a_all, &penalty)?) } else { None };
    let smoother_off = PenalizedSmoother::new(&a_offdiag, &penalty)?;

    let mut gamma = DMatrix::zeros(q * r, q * r);
    let mut lambdas = Vec::with_capacity(blocks.len());
    for (bi, &(l, l2)) in blocks.iter().enumerate() {
        let (sm, n) = if l == l2 {
            (&smoother_off, n_off)
        } else {
            (smoother_all.as_ref().expect("cross blocks need q > 1"), n_all)
        };
        let (lambda, fit) = sm.gcv(lambda_grid, n, &xty[bi], yty[bi]);
        let mut block = DMatrix::from_row_slice(r, r, fit.beta.as_slice());
        if l == l2 {
            block = (&block + block.transpose()) * 0.5;
        }
        gamma.view_mut((l * r, l2 * r), (r, r)).copy_from(&block);
        if l != l2 {
            gamma.view_mut((l2 * r, l * r), (r, r)).copy_from(&block.transpose());
        }
        lambdas.push(((l, l2), lambda));
    }

    let mut fit = CovarianceFit {
        basis: basis.clone(),
        gram,
        q,
        gamma,
        tau_sq: vec![0.0; q],
        lambdas,
    };
    fit.tau_sq = estimate_noise_variance(raw, &fit)?;
    Ok(fit)
}

/// `τ̂²_ℓ = max(0, mean_ij [Ẽ^ℓ_ij² − Σ̂_ℓℓ(t_ij, t_ij)])`.
pub fn estimate_noise_variance(raw: &RawCovariances, fit: &CovarianceFit) -> Result<Vec<f64>> {
    let q = raw.q;
    let mut sums = vec![0.0; q];
    let mut counts = vec![0usize; q];
    for (times, e) in raw.subject_data() {
        for (j, &t) in times.iter().enumerate() {
            for l in 0..q {
                let fitted = fit.evaluate_block(l, l, t, t)?;
                sums[l] += e[(j, l)] * e[(j, l)] - fitted;
                counts[l] += 1;
            }
        }
    }
    sums.iter()
        .zip(&counts)
        .enumerate()
        .map(|(l, (s, &c))| {
            if c == 0 {
                Err(Error::InsufficientData(format!("no diagonal products for component {}", l + 1)))
            } else {
                Ok((s / c as f64).max(0.0))
            }
        })
        .collect()
}

impl CovarianceFit {
    /// Assemble a fit from explicit coefficient blocks (`gamma` is `qr × qr`).
    pub fn from_parts(basis: SplineBasis, gamma: DMatrix<f64>, tau_sq: Vec<f64>) -> Result<Self> {
        let r = basis.dim();
        let q = tau_sq.len();
        if gamma.shape() != (q * r, q * r) {
            return Err(Error::InvalidArgument(format!(
                "gamma is {:?}, expected {}x{}",
                gamma.shape(),
                q * r,
                q * r
            )));
        }
        if tau_sq.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::InvalidArgument("noise variances must be nonnegative".into()));
        }
        let gram = basis.gram();
        Ok(Self {
            basis,
            gram,
            q,
            gamma,
            tau_sq,
            lambdas: Vec::new(),
        })
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn gram(&self) -> &GramRoot {
        &self.gram
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Full `qr × qr` coefficient matrix with blocks `Γ_{ℓℓ'}`.
    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn block(&self, l: usize, l2: usize) -> DMatrix<f64> {
        let r = self.basis.dim();
        self.gamma.view((l * r, l2 * r), (r, r)).into_owned()
    }

    pub fn tau_sq(&self) -> &[f64] {
        &self.tau_sq
    }

    /// Smoothing parameter selected for each block `ℓ ≤ ℓ'`.
    pub fn lambdas(&self) -> &[((usize, usize), f64)] {
        &self.lambdas
    }

    pub fn with_tau_sq(&self, tau_sq: Vec<f64>) -> Self {
        let mut out = self.clone();
        out.tau_sq = tau_sq;
        out
    }

    pub fn evaluate_block(&self, l: usize, l2: usize, t: f64, t2: f64) -> Result<f64> {
        let r = self.basis.dim();
        let (sa, va) = self.basis.eval_local(check_unit(t)?);
        let (sb, vb) = self.basis.eval_local(check_unit(t2)?);
        let mut acc = 0.0;
        for (a, x) in va.iter().enumerate() {
            for (b, y) in vb.iter().enumerate() {
                acc += x * y * self.gamma[(l * r + sa + a, l2 * r + sb + b)];
            }
        }
        Ok(acc)
    }

    /// `q × q` matrix `Σ̂(t, t')`.
    pub fn evaluate(&self, t: f64, t_prime: f64) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.q, self.q);
        for l in 0..self.q {
            for l2 in 0..self.q {
                out[(l, l2)] = self.evaluate_block(l, l2, t, t_prime)?;
            }
        }
        Ok(out)
    }

    /// Write `Σ̂_{ℓℓ'}` on `grid × grid`: first row and column hold the grid.
    pub fn write_grid(&self, l: usize, l2: usize, grid: &[f64], mut out: impl Write) -> Result<()> {
        write!(out, "t\\t'")?;
        for g in grid {
            write!(out, ",{g}")?;
        }
        writeln!(out)?;
        for &t in grid {
            write!(out, "{t}")?;
            for &t2 in grid {
                write!(out, ",{}", self.evaluate_block(l, l2, t, t2)?)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SubjectSeries;
    use crate::linalg::log_grid;

    fn residual_data(q: usize, n: usize, seed: u64) -> MvFunctionalDataset {
        // deterministic pseudo-random residuals
        let mut state = seed;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let subjects = (0..n)
            .map(|i| {
                let m = 3 + i % 5;
                let times: Vec<f64> = (0..m).map(|j| (j as f64 + 0.5 * (i % 3) as f64) / (m as f64 + 1.0)).collect();
                let vals = DMatrix::from_fn(m, q, |_, _| next());
                SubjectSeries::new(format!("s{i}"), i % 2, times, vals).unwrap()
            })
            .collect();
        MvFunctionalDataset::new(q, (0.0, 1.0), subjects).unwrap()
    }

    #[test]
    fn pair_counts() {
        let s = SubjectSeries::new("a", 0, vec![0.1, 0.6], DMatrix::from_row_slice(2, 1, &[1.0, 2.0])).unwrap();
        let d = MvFunctionalDataset::new(1, (0.0, 1.0), vec![s]).unwrap();
        let raw = raw_covariances(&d);
        let p = raw.pairs(0, 0);
        assert_eq!(p.len(), 4);
        assert_eq!(p.iter().filter(|x| x.diagonal).count(), 2);
        assert_eq!(p.iter().map(|x| x.value).sum::<f64>(), 9.0);

        let s = SubjectSeries::new("a", 0, vec![0.1, 0.6], DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let d = MvFunctionalDataset::new(2, (0.0, 1.0), vec![s]).unwrap();
        let all = raw_covariances(&d).all();
        assert_eq!(all.len(), 12);
        assert_eq!(all.iter().filter(|(_, p)| p.diagonal).count(), 4);
    }

    #[test]
    fn zero_residuals_give_zero_surface() {
        let d = residual_data(2, 40, 3);
        let zero = d.with_subject_values(d.subjects().iter().map(|s| s.values() * 0.0).collect()).unwrap();
        let raw = raw_covariances(&zero);
        assert!(raw.all().iter().all(|(_, p)| p.value == 0.0));
        let basis = SplineBasis::uniform(5, 3).unwrap();
        let fit = fit_covariance(&raw, &basis, 2, &log_grid(-6.0, 6.0, 20)).unwrap();
        assert_eq!(fit.gamma().abs().max(), 0.0);
        assert_eq!(fit.tau_sq(), &[0.0, 0.0]);
    }

    #[test]
    fn factored_normal_equations_match_row_by_row() {
        let d = residual_data(2, 30, 11);
        let raw = raw_covariances(&d);
        let basis = SplineBasis::uniform(4, 3).unwrap();
        let r = basis.dim();
        let lambda = [0.37];
        let fit = fit_covariance(&raw, &basis, 2, &lambda).unwrap();
        let gram = basis.gram();
        let pen1 = difference_penalty(r, 2).unwrap();
        let penalty = kron(&pen1, &gram.s) + kron(&gram.s, &pen1);
        for (l, l2) in [(0, 0), (0, 1), (1, 1)] {
            let mut xtx = DMatrix::zeros(r * r, r * r);
            let mut xty = DVector::zeros(r * r);
            for p in raw.pairs(l, l2).into_iter().filter(|p| !p.diagonal) {
                let x = kron(&basis.design(&[p.t]).unwrap(), &basis.design(&[p.t_prime]).unwrap()).transpose();
                xtx += &x * x.transpose();
                xty += &x * p.value;
            }
            let beta = (xtx + &penalty * lambda[0]).cholesky().unwrap().solve(&xty);
            let mut block = DMatrix::from_row_slice(r, r, beta.as_slice());
            if l == l2 {
                block = (&block + block.transpose()) * 0.5;
            }
            assert!((block - fit.block(l, l2)).abs().max() < 1e-9);
        }
    }

    #[test]
    fn blocks_are_transposes_and_surface_symmetric() {
        let d = residual_data(3, 60, 5);
        let fit = fit_covariance(&raw_covariances(&d), &SplineBasis::uniform(5, 3).unwrap(), 2, &log_grid(-6.0, 6.0, 20)).unwrap();
        for l in 0..3 {
            for l2 in 0..3 {
                assert!((fit.block(l, l2) - fit.block(l2, l).transpose()).abs().max() < 1e-14);
            }
        }
        for (t, t2) in [(0.1, 0.7), (0.33, 0.34), (1.0, 0.0)] {
            let a = fit.evaluate(t, t2).unwrap();
            let b = fit.evaluate(t2, t).unwrap();
            assert!((a - b.transpose()).abs().max() < 1e-12);
        }
        assert!(fit.tau_sq().iter().all(|t| *t >= 0.0));
    }

    #[test]
    fn scaling_equivariance_at_fixed_lambda() {
        let d = residual_data(2, 50, 9);
        let c = 3.5;
        let scaled = d.with_subject_values(d.subjects().iter().map(|s| s.values() * c).collect()).unwrap();
        let b = SplineBasis::uniform(5, 3).unwrap();
        let f1 = fit_covariance(&raw_covariances(&d), &b, 2, &[0.1]).unwrap();
        let f2 = fit_covariance(&raw_covariances(&scaled), &b, 2, &[0.1]).unwrap();
        assert!((f1.gamma() * (c * c) - f2.gamma()).abs().max() < 1e-9 * f2.gamma().abs().max());
    }

    #[test]
    fn noise_with_zero_surface_is_mean_square() {
        let d = residual_data(2, 20, 1);
        let raw = raw_covariances(&d);
        let b = SplineBasis::uniform(3, 3).unwrap();
        let fit = CovarianceFit::from_parts(b.clone(), DMatrix::zeros(2 * b.dim(), 2 * b.dim()), vec![0.0, 0.0]).unwrap();
        let tau = estimate_noise_variance(&raw, &fit).unwrap();
        for l in 0..2 {
            let (mut s, mut c) = (0.0, 0);
            for subj in d.subjects() {
                for j in 0..subj.len() {
                    s += subj.values()[(j, l)].powi(2);
                    c += 1;
                }
            }
            assert!((tau[l] - s / c as f64).abs() < 1e-14);
        }
    }

    #[test]
    fn identity_coefficients_evaluate_to_basis_products() {
        let b = SplineBasis::uniform(4, 3).unwrap();
        let r = b.dim();
        let fit = CovarianceFit::from_parts(b.clone(), DMatrix::identity(r, r), vec![0.0]).unwrap();
        let (t, t2) = (0.21, 0.64);
        let expected = b.eval(t).unwrap().dot(&b.eval(t2).unwrap());
        assert!((fit.evaluate(t, t2).unwrap()[(0, 0)] - expected).abs() < 1e-15);
        assert!(fit.evaluate(1.2, 0.0).is_err());
    }

    #[test]
    fn needs_repeated_measures() {
        let s = |id: &str, t: f64| SubjectSeries::new(id, 0, vec![t], DMatrix::from_element(1, 1, 1.0)).unwrap();
        let d = MvFunctionalDataset::new(1, (0.0, 1.0), vec![s("a", 0.1), s("b", 0.5)]).unwrap();
        assert!(fit_covariance(&raw_covariances(&d), &SplineBasis::uniform(3, 3).unwrap(), 2, &[1.0]).is_err());
    }
}
