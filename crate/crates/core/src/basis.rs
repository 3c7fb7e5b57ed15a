//! B-spline basis on the unit interval.
//!
//! Knot construction, Cox-de Boor evaluation, the exact Gram matrix
//! `S = ∫ B(u) B(u)ᵀ du` with its symmetric square root, and difference
//! penalties on coefficient vectors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Slack allowed when checking that an argument lies in `[0, 1]`.
pub(crate) const DOMAIN_SLACK: f64 = 1e-12;

pub(crate) fn check_unit(t: f64) -> Result<f64> {
    if !t.is_finite() || t < -DOMAIN_SLACK || t > 1.0 + DOMAIN_SLACK {
        return Err(Error::OutOfDomain {
            value: t,
            lower: 0.0,
            upper: 1.0,
        });
    }
    Ok(t.clamp(0.0, 1.0))
}

/// Clamped B-spline basis on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineBasis {
    degree: usize,
    interior_knot_count: usize,
    knots: Vec<f64>,
}

impl SplineBasis {
    /// Uniform interior knots on `(0, 1)` with boundary knots replicated
    /// `degree + 1` times.
    pub fn uniform(interior_knot_count: usize, degree: usize) -> Result<Self> {
        if interior_knot_count < 1 {
            return Err(Error::InvalidArgument(
                "interior knot count must be at least 1".into(),
            ));
        }
        if degree < 1 {
            return Err(Error::InvalidArgument("spline degree must be at least 1".into()));
        }
        let mut knots = vec![0.0; degree + 1];
        let spans = (interior_knot_count + 1) as f64;
        knots.extend((1..=interior_knot_count).map(|k| k as f64 / spans));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Ok(Self {
            degree,
            interior_knot_count,
            knots,
        })
    }

    /// Basis from an explicit clamped knot vector on `[0, 1]`. Degree 0
    /// (piecewise constants) is allowed here.
    pub fn from_knots(knots: Vec<f64>, degree: usize) -> Result<Self> {
        let p = degree;
        if knots.len() < 2 * (p + 1) {
            return Err(Error::InvalidArgument(format!(
                "degree {p} needs at least {} knots, got {}",
                2 * (p + 1),
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument("knots must be nondecreasing".into()));
        }
        let n = knots.len();
        if knots[..=p].iter().any(|&k| k != 0.0) || knots[n - p - 1..].iter().any(|&k| k != 1.0) {
            return Err(Error::InvalidArgument(
                "boundary knots must be 0 and 1 replicated degree+1 times".into(),
            ));
        }
        let interior_knot_count = n - 2 * (p + 1);
        Ok(Self {
            degree,
            interior_knot_count,
            knots,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interior_knot_count(&self) -> usize {
        self.interior_knot_count
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions `r`.
    pub fn dim(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    fn span(&self, t: f64) -> usize {
        let r = self.dim();
        let p = self.degree;
        // largest i in p..r with knots[i] <= t and a nonempty span
        let mut lo = p;
        let mut hi = r - 1;
        if t >= self.knots[r] {
            while hi > p && self.knots[hi] == self.knots[hi + 1] {
                hi -= 1;
            }
            return hi;
        }
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if self.knots[mid] <= t {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// Nonzero basis values at `t`: returns the index of the first nonzero
    /// function and the `degree + 1` values starting there. `t` must already
    /// lie in `[0, 1]`.
    pub(crate) fn eval_local(&self, t: f64) -> (usize, Vec<f64>) {
        let p = self.degree;
        let i = self.span(t);
        let k = &self.knots;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = t - k[i + 1 - j];
            right[j] = k[i + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (i - p, n)
    }

    /// All `r` basis values at `t` by the Cox-de Boor recursion.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        let t = check_unit(t)?;
        let (start, local) = self.eval_local(t);
        let mut out = DVector::zeros(self.dim());
        for (j, v) in local.into_iter().enumerate() {
            out[start + j] = v;
        }
        Ok(out)
    }

    /// Design matrix with one row `B(t)ᵀ` per time point.
    pub fn design(&self, times: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(times.len(), self.dim());
        for (row, &t) in times.iter().enumerate() {
            let t = check_unit(t)?;
            let (start, local) = self.eval_local(t);
            for (j, v) in local.into_iter().enumerate() {
                out[(row, start + j)] = v;
            }
        }
        Ok(out)
    }

    /// Evaluate `Σ_j coef_j B_j(t)`.
    pub fn eval_spline(&self, coef: &DVector<f64>, t: f64) -> Result<f64> {
        let t = check_unit(t)?;
        let (start, local) = self.eval_local(t);
        Ok(local
            .iter()
            .enumerate()
            .map(|(j, v)| v * coef[start + j])
            .sum())
    }

    /// Exact Gram matrix and its symmetric square roots.
    pub fn gram(&self) -> GramRoot {
        self.gram_with_nodes(self.degree + 1)
    }

    /// Gram matrix using `nodes` Gauss-Legendre points per knot span. Any
    /// `nodes >= degree + 1` gives the exact integral.
    pub fn gram_with_nodes(&self, nodes: usize) -> GramRoot {
        let r = self.dim();
        let (x, w) = gauss_legendre(nodes.max(1));
        let mut s = DMatrix::zeros(r, r);
        for span in self.knots.windows(2) {
            let (a, b) = (span[0], span[1]);
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (xi, wi) in x.iter().zip(&w) {
                let t = mid + half * xi;
                let (start, local) = self.eval_local(t);
                for (j, vj) in local.iter().enumerate() {
                    for (k, vk) in local.iter().enumerate() {
                        s[(start + j, start + k)] += half * wi * vj * vk;
                    }
                }
            }
        }
        GramRoot::from_gram(s)
    }
}

/// Gram matrix `S` of a spline basis with `S^{1/2}` and `S^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramRoot {
    pub s: DMatrix<f64>,
    pub s_half: DMatrix<f64>,
    pub s_half_inv: DMatrix<f64>,
}

impl GramRoot {
    pub fn from_gram(s: DMatrix<f64>) -> Self {
        let s = linalg::symmetrize(&s);
        let (s_half, s_half_inv) = linalg::sym_sqrt_and_inv(&s, 1e-12);
        Self {
            s,
            s_half,
            s_half_inv,
        }
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }
}

/// `DᵀD` for the `order`-th difference operator `D` on length-`r` vectors.
pub fn difference_penalty(r: usize, order: usize) -> Result<DMatrix<f64>> {
    if order >= r {
        return Err(Error::InvalidArgument(format!(
            "difference order {order} must be smaller than basis dimension {r}"
        )));
    }
    let mut d = DMatrix::<f64>::identity(r, r);
    for _ in 0..order {
        let rows = d.nrows() - 1;
        let mut next = DMatrix::zeros(rows, r);
        for i in 0..rows {
            for j in 0..r {
                next[(i, j)] = d[(i + 1, j)] - d[(i, j)];
            }
        }
        d = next;
    }
    Ok(d.transpose() * d)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn dimension_is_knots_plus_degree_plus_one() {
        assert_eq!(SplineBasis::uniform(10, 3).unwrap().dim(), 14);
        assert_eq!(SplineBasis::uniform(1, 1).unwrap().dim(), 3);
    }

    #[test]
    fn rejects_nonpositive_arguments() {
        assert!(SplineBasis::uniform(0, 3).is_err());
        assert!(SplineBasis::uniform(4, 0).is_err());
    }

    #[test]
    fn linear_hats_peak_at_knots() {
        let b = SplineBasis::uniform(1, 1).unwrap();
        let v = b.eval(0.5).unwrap();
        assert_abs_diff_eq!(v[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[0] + v[2], 0.0, epsilon = 1e-15);
        let v = b.eval(0.25).unwrap();
        assert_abs_diff_eq!(v[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn boundary_values() {
        let b = SplineBasis::uniform(10, 3).unwrap();
        let v0 = b.eval(0.0).unwrap();
        assert_eq!(v0[0], 1.0);
        assert!(v0.iter().skip(1).all(|&x| x == 0.0));
        let v1 = b.eval(1.0).unwrap();
        assert_abs_diff_eq!(v1[13], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v1.sum(), 1.0, epsilon = 1e-15);
        assert!(b.eval(1.5).is_err());
        assert!(b.eval(-0.1).is_err());
    }

    #[test]
    fn at_most_degree_plus_one_nonzeros() {
        let b = SplineBasis::uniform(10, 3).unwrap();
        for i in 0..=100 {
            let v = b.eval(i as f64 / 100.0).unwrap();
            assert!(v.iter().filter(|x| **x != 0.0).count() <= 4);
            assert!(v.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn degree_zero_gram_is_diagonal() {
        let b = SplineBasis::from_knots(vec![0.0, 0.5, 1.0], 0).unwrap();
        let g = b.gram();
        assert_abs_diff_eq!(g.s[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g.s[(1, 1)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g.s[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gram_total_mass_is_one_and_roots_invert() {
        let b = SplineBasis::uniform(10, 3).unwrap();
        let g = b.gram();
        assert_abs_diff_eq!(g.s.sum(), 1.0, epsilon = 1e-13);
        let ident = &g.s_half_inv * &g.s * &g.s_half_inv;
        assert!((ident - DMatrix::<f64>::identity(14, 14)).norm() < 1e-10);
        let sq = &g.s_half * &g.s_half;
        assert!((&sq - &g.s).norm() / g.s.norm() < 1e-10);
        // row sums are the integrals of each basis function: (knot span) / (p + 1)
        let k = b.knots();
        for j in 0..b.dim() {
            let integral = (k[j + 4] - k[j]) / 4.0;
            assert_abs_diff_eq!(g.s.row(j).sum(), integral, epsilon = 1e-13);
        }
    }

    #[test]
    fn gram_matches_fine_trapezoid() {
        let b = SplineBasis::uniform(10, 3).unwrap();
        let g = b.gram();
        let n = 100_000;
        let r = b.dim();
        let mut s = DMatrix::zeros(r, r);
        for i in 0..=n {
            let t = i as f64 / n as f64;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 } / n as f64;
            let v = b.eval(t).unwrap();
            s += w * &v * v.transpose();
        }
        assert!((s - &g.s).abs().max() < 1e-8);
    }

    #[test]
    fn extra_quadrature_nodes_do_not_change_gram() {
        let b = SplineBasis::uniform(10, 3).unwrap();
        let a = b.gram();
        let c = b.gram_with_nodes(8);
        assert!((a.s - c.s).abs().max() < 1e-15);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..8 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert_abs_diff_eq!(q, exact, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn first_order_penalty_by_hand() {
        let p = difference_penalty(3, 1).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(p, expected);
        assert!(difference_penalty(3, 3).is_err());
    }

    #[test]
    fn penalty_null_spaces() {
        let ones = DVector::from_element(14, 1.0);
        let ramp = DVector::from_fn(14, |i, _| i as f64);
        for order in 1..4 {
            let p = difference_penalty(14, order).unwrap();
            assert!((&p * &ones).norm() < 1e-12);
        }
        let p2 = difference_penalty(14, 2).unwrap();
        assert!((&p2 * &ramp).norm() < 1e-12);
        let p1 = difference_penalty(14, 1).unwrap();
        assert!((&p1 * &ramp).norm() > 0.5);
    }

    #[test]
    fn spline_reproduction_matches_naive_recursion() {
        // naive Cox-de Boor from the definition as an independent route
        fn naive(k: &[f64], i: usize, p: usize, t: f64, last: bool) -> f64 {
            if p == 0 {
                let inside = k[i] <= t && t < k[i + 1];
                let at_end = last && t == k[i + 1] && k[i] < k[i + 1] && k[i + 1] == 1.0;
                return if inside || at_end { 1.0 } else { 0.0 };
            }
            let mut v = 0.0;
            if k[i + p] > k[i] {
                v += (t - k[i]) / (k[i + p] - k[i]) * naive(k, i, p - 1, t, last);
            }
            if k[i + p + 1] > k[i + 1] {
                v += (k[i + p + 1] - t) / (k[i + p + 1] - k[i + 1]) * naive(k, i + 1, p - 1, t, last);
            }
            v
        }
        let b = SplineBasis::uniform(6, 3).unwrap();
        let coef = DVector::from_fn(b.dim(), |i, _| (i as f64 * 0.7).sin() + 0.3 * i as f64);
        for s in 0..57 {
            let t = s as f64 / 56.0;
            let f: f64 = (0..b.dim()).map(|j| coef[j] * naive(b.knots(), j, 3, t, t == 1.0)).sum();
            assert_abs_diff_eq!(b.eval_spline(&coef, t).unwrap(), f, epsilon = 1e-12);
        }
    }
}
