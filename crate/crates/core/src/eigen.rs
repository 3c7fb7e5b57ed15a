//! Multivariate eigen-decomposition of a fitted covariance.
//!
//! The operator with kernel `B(t)ᵀΓ_{ℓℓ'}B(t')` has the same nonzero spectrum
//! as the `qr × qr` matrix with blocks `S^{1/2} Γ_{ℓℓ'} S^{1/2}`; its unit
//! eigenvectors `V_k` map to orthonormal eigenfunctions
//! `ψ_k(t) = (I_q ⊗ B(t)ᵀ S^{-1/2}) V_k`.

use std::cmp::Ordering;
use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::basis::{check_unit, GramRoot, SplineBasis};
use crate::covariance::CovarianceFit;
use crate::error::{Error, Result};
use crate::linalg::{max_asymmetry, sym_eigen_desc, symmetrize};

/// Relative cutoff below which eigenvalues are discarded.
pub const EIGEN_CUTOFF: f64 = 1e-10;

/// Default fraction of variance explained used to pick `K`.
pub const DEFAULT_PVE: f64 = 0.99;

/// Something that evaluates a family of `q`-variate functions.
pub trait MvFunctionFamily {
    fn q(&self) -> usize;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn eval(&self, k: usize, t: f64) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvEigenSystem {
    basis: SplineBasis,
    gram: GramRoot,
    q: usize,
    lambda: Vec<f64>,
    vectors: DMatrix<f64>,
    /// `(I_q ⊗ S^{-1/2}) V`
    coef: DMatrix<f64>,
    k: usize,
    pve_target: f64,
    most_negative: f64,
    discarded: usize,
}

fn kron_identity(q: usize, block: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    // (I_q ⊗ block) · m
    let r = block.nrows();
    let mut out = DMatrix::zeros(q * r, m.ncols());
    for l in 0..q {
        let rows = block * m.rows(l * r, r);
        out.rows_mut(l * r, r).copy_from(&rows);
    }
    out
}

fn lexicographic(a: &DVector<f64>, b: &DVector<f64>) -> Ordering {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

/// Full (untruncated, `K = K_max`) eigensystem of a covariance fit.
pub fn multivariate_eigen(fit: &CovarianceFit) -> Result<MvEigenSystem> {
    let q = fit.q();
    let gram = fit.gram().clone();
    let r = gram.dim();
    let sh = &gram.s_half;
    let mut m = DMatrix::zeros(q * r, q * r);
    for l in 0..q {
        for l2 in 0..q {
            let block = sh * fit.block(l, l2) * sh;
            m.view_mut((l * r, l2 * r), (r, r)).copy_from(&block);
        }
    }
    let scale = m.abs().max().max(1.0);
    let asym = max_asymmetry(&m);
    if asym > 1e-8 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let m = symmetrize(&m);
    let (vals, vecs) = sym_eigen_desc(&m);

    let mut pairs: Vec<(f64, DVector<f64>)> = (0..vals.len())
        .map(|i| {
            let mut v = vecs.column(i).into_owned();
            let imax = v.iamax();
            if v[imax] < 0.0 {
                v.neg_mut();
            }
            (vals[i], v)
        })
        .collect();
    let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tie = 1e-12 * top.abs().max(f64::MIN_POSITIVE);
    pairs.sort_by(|a, b| {
        if (a.0 - b.0).abs() <= tie {
            lexicographic(&a.1, &b.1)
        } else {
            b.0.total_cmp(&a.0)
        }
    });
    let most_negative = vals.iter().copied().fold(0.0, f64::min);
    let cutoff = EIGEN_CUTOFF * top;
    let kept: Vec<(f64, DVector<f64>)> = if top > 0.0 {
        pairs.into_iter().filter(|(l, _)| *l > cutoff).collect()
    } else {
        Vec::new()
    };
    let discarded = vals.len() - kept.len();
    let lambda: Vec<f64> = kept.iter().map(|(l, _)| *l).collect();
    let mut vectors = DMatrix::zeros(q * r, kept.len());
    for (k, (_, v)) in kept.iter().enumerate() {
        vectors.set_column(k, v);
    }
    let coef = kron_identity(q, &gram.s_half_inv, &vectors);
    let k = lambda.len();
    Ok(MvEigenSystem {
        basis: fit.basis().clone(),
        gram,
        q,
        lambda,
        vectors,
        coef,
        k,
        pve_target: 1.0,
        most_negative,
        discarded,
    })
}

/// Smallest `K` whose cumulative share of the retained positive spectrum
/// reaches `pve`.
pub fn select_k_by_pve(lambda: &[f64], pve: f64) -> Result<usize> {
    if !(pve > 0.0 && pve <= 1.0) {
        return Err(Error::InvalidArgument(format!("PVE must lie in (0, 1], got {pve}")));
    }
    let positive: Vec<f64> = lambda.iter().copied().filter(|l| *l > 0.0).collect();
    if positive.is_empty() {
        return Err(Error::EmptySpectrum);
    }
    let total: f64 = positive.iter().sum();
    let mut cum = 0.0;
    for (k, l) in positive.iter().enumerate() {
        cum += l;
        if cum / total >= pve - 1e-12 {
            return Ok(k + 1);
        }
    }
    Ok(positive.len())
}

impl MvEigenSystem {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn gram(&self) -> &GramRoot {
        &self.gram
    }

    /// All retained eigenvalues, nonincreasing.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.lambda
    }

    /// `qr × K_max` orthonormal eigenvectors.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn k_max(&self) -> usize {
        self.lambda.len()
    }

    /// Selected truncation `K`.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pve_target(&self) -> f64 {
        self.pve_target
    }

    /// Most negative eigenvalue of the block matrix (0 if none), i.e. the
    /// size of the PSD repair.
    pub fn most_negative_eigenvalue(&self) -> f64 {
        self.most_negative
    }

    pub fn discarded(&self) -> usize {
        self.discarded
    }

    /// Cumulative variance fractions `Σ_{k≤K} λ_k / Σ λ_k` for `K = 1..K_max`.
    pub fn pve_path(&self) -> Vec<f64> {
        let total: f64 = self.lambda.iter().sum();
        self.lambda
            .iter()
            .scan(0.0, |acc, l| {
                *acc += l;
                Some(*acc / total)
            })
            .collect()
    }

    pub fn select_k(&self, pve: f64) -> Result<usize> {
        select_k_by_pve(&self.lambda, pve)
    }

    /// Copy truncated at the PVE rule.
    pub fn with_pve(&self, pve: f64) -> Result<Self> {
        let k = self.select_k(pve)?;
        let mut out = self.clone();
        out.k = k;
        out.pve_target = pve;
        Ok(out)
    }

    /// Copy with an explicit truncation `K ≤ K_max`.
    pub fn with_k(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.k_max() {
            return Err(Error::InvalidArgument(format!("K = {k} outside 1..={}", self.k_max())));
        }
        let mut out = self.clone();
        out.k = k;
        Ok(out)
    }

    /// Spline coefficients of `ψ_k`, stacked by component (`(I ⊗ S^{-1/2}) V_k`).
    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coef
    }

    /// `ψ_k(t)` (0-based `k`, `k < K_max`).
    pub fn eval_eigenfunction(&self, k: usize, t: f64) -> Result<Vec<f64>> {
        if k >= self.k_max() {
            return Err(Error::InvalidArgument(format!(
                "eigenfunction index {k} outside 0..{}",
                self.k_max()
            )));
        }
        let t = check_unit(t)?;
        let r = self.basis.dim();
        let (start, local) = self.basis.eval_local(t);
        Ok((0..self.q)
            .map(|l| {
                local
                    .iter()
                    .enumerate()
                    .map(|(a, v)| v * self.coef[(l * r + start + a, k)])
                    .sum()
            })
            .collect())
    }

    /// Coefficients `(I⊗S^{-1/2}) V Λ Vᵀ (I⊗S^{-1/2})` of the covariance after
    /// dropping nonpositive eigenvalues.
    pub fn repaired_gamma(&self) -> DMatrix<f64> {
        let scaled = &self.coef * DMatrix::from_diagonal(&DVector::from_column_slice(&self.lambda));
        symmetrize(&(scaled * self.coef.transpose()))
    }

    /// `Σ_k λ_k ψ_k(t) ψ_k(t')ᵀ` over all retained components.
    pub fn reconstruct(&self, t: f64, t_prime: f64) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.q, self.q);
        for k in 0..self.k_max() {
            let a = DVector::from_vec(self.eval_eigenfunction(k, t)?);
            let b = DVector::from_vec(self.eval_eigenfunction(k, t_prime)?);
            out += self.lambda[k] * a * b.transpose();
        }
        Ok(out)
    }

    /// Plot table: header lists `λ_k`; rows are `t, ψ_1^(1), …, ψ_K^(q)`.
    pub fn write_table(&self, grid: &[f64], mut out: impl Write) -> Result<()> {
        let lambdas: Vec<String> = self.lambda.iter().map(|l| l.to_string()).collect();
        writeln!(out, "# eigenvalues: {}", lambdas.join(","))?;
        writeln!(out, "# K: {} pve_target: {}", self.k, self.pve_target)?;
        write!(out, "t")?;
        for k in 0..self.k {
            for l in 0..self.q {
                write!(out, ",psi{}_{}", k + 1, l + 1)?;
            }
        }
        writeln!(out)?;
        for &t in grid {
            write!(out, "{t}")?;
            for k in 0..self.k {
                for v in self.eval_eigenfunction(k, t)? {
                    write!(out, ",{v}")?;
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

impl MvFunctionFamily for MvEigenSystem {
    fn q(&self) -> usize {
        self.q
    }

    fn len(&self) -> usize {
        self.k_max()
    }

    fn eval(&self, k: usize, t: f64) -> Result<Vec<f64>> {
        self.eval_eigenfunction(k, t)
    }
}
