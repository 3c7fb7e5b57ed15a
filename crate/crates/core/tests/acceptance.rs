//! Acceptance criteria, one line each. Runs without the libtest harness so
//! every line is printed whatever the outcome.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mvftest::basis::{gauss_legendre, SplineBasis};
use mvftest::covariance::{fit_covariance, raw_covariances, CovarianceFit};
use mvftest::data::{MvFunctionalDataset, SubjectSeries};
use mvftest::eigen::{multivariate_eigen, MvEigenSystem};
use mvftest::linalg::kron;
use mvftest::mean::{fit_mean, MeanFit};
use mvftest::scores::{blup_scores, blup_scores_direct, ScoreMatrix};
use mvftest::simulation::{
    generate_dataset, power_study, size_study, true_eigenfunctions, true_spectrum, ScoreDist, SimConfig, Sparsity,
    StudyCell, TRUE_LAMBDA,
};
use mvftest::stats::{ks_test, median, replicate_rng};
use mvftest::testing::{
    fit_pipeline, hotelling_equal, hotelling_unequal, manova_lh, nel_van_der_merwe_df, permutation_test, PipelineConfig,
    TestFamily,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

// composite Gauss–Legendre nodes on [0, 1]
fn quadrature() -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(8);
    let panels = 50;
    let mut out = Vec::new();
    for p in 0..panels {
        let (a, b) = (p as f64 / panels as f64, (p + 1) as f64 / panels as f64);
        for (xi, wi) in x.iter().zip(&w) {
            out.push((0.5 * (a + b) + 0.5 * (b - a) * xi, 0.5 * (b - a) * wi));
        }
    }
    out
}

fn inner(f: impl Fn(f64) -> Vec<f64>, g: impl Fn(f64) -> Vec<f64>, nodes: &[(f64, f64)]) -> f64 {
    nodes
        .iter()
        .map(|&(t, w)| w * f(t).iter().zip(g(t)).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

fn size_rate(n: usize, sparsity: Sparsity, dist: ScoreDist, alpha: f64, reps: usize) -> (f64, f64) {
    let cell = StudyCell {
        n,
        sparsity,
        dist,
        delta: 0.0,
    };
    let rows = size_study(&[cell], &[alpha], reps, 1, &PipelineConfig::default(), workers()).unwrap();
    (rows[0].rejection_rate, rows[0].se)
}

fn criterion_1() -> Outcome {
    let (rate, se) = size_rate(100, Sparsity::Medium, ScoreDist::Gaussian, 0.05, 500);
    outcome(
        (0.03..=0.08).contains(&rate),
        format!("n=100 medium gaussian alpha=0.05 R=500: rate {rate:.4} (SE {se:.4}), band [0.03, 0.08]"),
    )
}

fn criterion_2() -> Outcome {
    let (rate, se) = size_rate(300, Sparsity::Low, ScoreDist::Mixture, 0.05, 500);
    outcome(
        (0.026..=0.074).contains(&rate),
        format!("n=300 low mixture alpha=0.05 R=500: rate {rate:.4} (SE {se:.4}), band [0.026, 0.074]"),
    )
}

fn criterion_3() -> Outcome {
    let cells: Vec<StudyCell> = [0.0, 0.5, 1.0]
        .iter()
        .map(|&delta| StudyCell {
            n: 200,
            sparsity: Sparsity::Low,
            dist: ScoreDist::Gaussian,
            delta,
        })
        .collect();
    let rows = power_study(&cells, 0.1, 300, 1, &PipelineConfig::default(), workers()).unwrap();
    let r: Vec<f64> = rows.iter().map(|r| r.rejection_rate).collect();
    let se: Vec<f64> = rows.iter().map(|r| r.se).collect();
    let monotone = (0..2).all(|i| r[i + 1] >= r[i] - 2.0 * (se[i] * se[i] + se[i + 1] * se[i + 1]).sqrt());
    // "near 0.1": within 3 binomial SE at R = 300
    let null_se = (0.1f64 * 0.9 / 300.0).sqrt();
    let near = (r[0] - 0.1).abs() <= 3.0 * null_se;
    let gain = r[2] - r[0] >= 0.3;
    outcome(
        monotone && near && gain,
        format!(
            "rates at delta 0/0.5/1: {:.4}/{:.4}/{:.4}; monotone {monotone}, null within {:.3} of 0.1: {near}, gain {:.4} >= 0.3: {gain}",
            r[0],
            r[1],
            r[2],
            3.0 * null_se,
            r[2] - r[0]
        ),
    )
}

struct Recovery {
    lambda: Vec<[f64; 3]>,
    stated: Vec<[f64; 3]>,
    actual: Vec<[f64; 3]>,
}

fn eigen_recovery(reps: usize) -> (Recovery, Vec<f64>) {
    let nodes = quadrature();
    let psi = |k: usize| move |t: f64| true_eigenfunctions(k + 1, t).unwrap().to_vec();
    let gram = DMatrix::from_fn(3, 3, |j, k| inner(psi(j), psi(k), &nodes));
    let (mu, a) = true_spectrum(&gram);
    let phi = |j: usize, t: f64| -> Vec<f64> {
        let mut v = vec![0.0; 3];
        for k in 0..3 {
            let p = true_eigenfunctions(k + 1, t).unwrap();
            for l in 0..3 {
                v[l] += a[(k, j)] * p[l];
            }
        }
        v
    };
    let cfg = PipelineConfig::default();
    let mut rec = Recovery {
        lambda: Vec::new(),
        stated: Vec::new(),
        actual: Vec::new(),
    };
    for rep in 0..reps {
        let cell = StudyCell {
            n: 300,
            sparsity: Sparsity::Low,
            dist: ScoreDist::Gaussian,
            delta: 0.0,
        };
        let (data, _) = generate_dataset(&cell.replicate_config(4, rep)).unwrap();
        let mean = fit_mean(&data, &cfg.smoothing).unwrap();
        let raw = raw_covariances(&mean.residuals(&data).unwrap());
        let cov = fit_covariance(&raw, mean.basis(), cfg.smoothing.penalty_order, &cfg.smoothing.lambda_grid).unwrap();
        let eig = multivariate_eigen(&cov).unwrap();
        let hat = |k: usize| {
            let e = &eig;
            move |t: f64| e.eval_eigenfunction(k, t).unwrap()
        };
        let l = eig.eigenvalues();
        rec.lambda.push([l[0], l[1], l[2]]);
        rec.stated.push([0, 1, 2].map(|k| inner(hat(k), psi(k), &nodes).abs()));
        rec.actual.push([0, 1, 2].map(|k| inner(hat(k), |t| phi(k, t), &nodes).abs()));
    }
    (rec, mu)
}

fn medians(v: &[[f64; 3]]) -> [f64; 3] {
    [0, 1, 2].map(|k| median(&v.iter().map(|x| x[k]).collect::<Vec<_>>()))
}

fn criterion_4() -> Outcome {
    let (rec, mu) = eigen_recovery(20);
    let lam = medians(&rec.lambda);
    let ip = medians(&rec.stated);
    let ip_actual = medians(&rec.actual);
    let lam_ok: Vec<bool> = (0..3).map(|k| (lam[k] - TRUE_LAMBDA[k]).abs() <= 0.15 * TRUE_LAMBDA[k]).collect();
    let ip_ok: Vec<bool> = ip.iter().map(|&x| x >= 0.95).collect();
    outcome(
        lam_ok.iter().chain(&ip_ok).all(|&b| b),
        format!(
            "median eigenvalues {:.3}/{:.3}/{:.3} vs 6/3/1.5 (within 15%: {:?}); median |<psi_hat, psi>| {:.3}/{:.3}/{:.3} (>= 0.95: {:?}); \
             the generating covariance itself has eigenvalues {:.3}/{:.3}/{:.3} and median |<psi_hat, its eigenfunctions>| is {:.3}/{:.3}/{:.3}",
            lam[0], lam[1], lam[2], lam_ok, ip[0], ip[1], ip[2], ip_ok, mu[0], mu[1], mu[2], ip_actual[0], ip_actual[1], ip_actual[2]
        ),
    )
}

fn zero_mean(basis: &SplineBasis, q: usize, groups: usize) -> MeanFit {
    let r = basis.dim();
    MeanFit::from_parts(basis.clone(), (0.0, 1.0), groups, vec![vec![DVector::zeros(r); groups]; q]).unwrap()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn criterion_5() -> Outcome {
    // scalar: one outcome, one component, one observation
    let basis = SplineBasis::uniform(10, 3).unwrap();
    let g = basis.gram();
    let r = basis.dim();
    let mut rng = replicate_rng(5, 0);
    let mut scalar_err: f64 = 0.0;
    for _ in 0..50 {
        let v = DVector::from_fn(r, |_, _| normal(&mut rng)).normalize();
        let c = &g.s_half_inv * &v;
        let lam = rng.random_range(0.5..8.0);
        let tau_sq = rng.random_range(0.01..1.0);
        let cov = CovarianceFit::from_parts(basis.clone(), &c * c.transpose() * lam, vec![tau_sq]).unwrap();
        let eig = multivariate_eigen(&cov).unwrap();
        let (t, y) = (rng.random_range(0.0..1.0), 3.0 * normal(&mut rng));
        let mu = rng.random_range(-2.0..2.0);
        let means = vec![vec![DVector::from_element(r, mu)]];
        let mean = MeanFit::from_parts(basis.clone(), (0.0, 1.0), 1, means).unwrap();
        let s = SubjectSeries::new("a", 0, vec![t], DMatrix::from_element(1, 1, y)).unwrap();
        let data = MvFunctionalDataset::new(1, (0.0, 1.0), vec![s]).unwrap();
        let xi = blup_scores(&data, &mean, &cov, &eig).unwrap().scores[(0, 0)];
        let psi = eig.eval_eigenfunction(0, t).unwrap()[0];
        let lam_hat = eig.eigenvalues()[0];
        let want = lam_hat * psi * (y - mu) / (lam_hat * psi * psi + tau_sq);
        scalar_err = scalar_err.max((xi - want).abs());
    }
    // both score routes on random multivariate instances
    let mut route_err: f64 = 0.0;
    for _ in 0..50 {
        let q = rng.random_range(1..=3);
        let basis = SplineBasis::uniform(rng.random_range(4..=10), 3).unwrap();
        let r = basis.dim();
        let rank = rng.random_range(1..=q * r);
        let x = DMatrix::from_fn(q * r, rank, |_, _| normal(&mut rng));
        let tau: Vec<f64> = (0..q).map(|_| rng.random_range(0.01..0.5)).collect();
        let cov = CovarianceFit::from_parts(basis.clone(), &x * x.transpose(), tau).unwrap();
        let eig = multivariate_eigen(&cov).unwrap().with_pve(rng.random_range(0.5..1.0)).unwrap();
        let subjects = (0..6)
            .map(|i| {
                let m = rng.random_range(1..=12);
                let mut times: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
                times.sort_by(f64::total_cmp);
                times.dedup();
                let vals = DMatrix::from_fn(times.len(), q, |_, _| normal(&mut rng));
                SubjectSeries::new(format!("s{i}"), i % 2, times, vals).unwrap()
            })
            .collect();
        let data = MvFunctionalDataset::new(q, (0.0, 1.0), subjects).unwrap();
        let mean = zero_mean(&basis, q, 2);
        let a = blup_scores(&data, &mean, &cov, &eig).unwrap();
        let b = blup_scores_direct(&data, &mean, &cov, &eig).unwrap();
        let scale = b.scores.amax().max(1.0);
        route_err = route_err.max((&a.scores - &b.scores).amax() / scale);
    }
    outcome(
        scalar_err <= 1e-10 && route_err <= 1e-8,
        format!("scalar closed form max error {scalar_err:.2e} (tol 1e-10); route agreement max error {route_err:.2e} (tol 1e-8)"),
    )
}

fn random_scores(rng: &mut ChaCha8Rng, n: usize, k: usize) -> ScoreMatrix {
    let m = DMatrix::from_fn(n, k, |_, _| normal(rng));
    let groups = (0..n).map(|i| (i % 3 != 0) as usize).collect();
    ScoreMatrix::from_rows(m, groups).unwrap()
}

fn criterion_6() -> Outcome {
    let mut rng = replicate_rng(6, 0);
    let (mut lh, mut inv, mut eq_uv, mut welch) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let k = rng.random_range(1..=6);
        let n = rng.random_range(k + 6..60);
        let s = random_scores(&mut rng, n, k);
        let t = hotelling_equal(&s).unwrap().statistic;
        lh = lh.max(rel((n as f64 - 2.0) * manova_lh(&s).unwrap().statistic, t));
        let mut a = DMatrix::from_fn(k, k, |_, _| normal(&mut rng));
        while a.determinant().abs() < 0.05 {
            a = DMatrix::from_fn(k, k, |_, _| normal(&mut rng));
        }
        let mapped = ScoreMatrix::from_rows(&s.scores * a.transpose(), s.groups.clone()).unwrap();
        inv = inv.max(rel(hotelling_equal(&mapped).unwrap().statistic, t));
        // identical within-group spread and sizes
        let half = rng.random_range(k + 4..30);
        let base = DMatrix::from_fn(half, k, |_, _| normal(&mut rng));
        let shift = DVector::from_fn(k, |_, _| normal(&mut rng));
        let both = DMatrix::from_fn(2 * half, k, |i, j| base[(i % half, j)] + if i >= half { shift[j] } else { 0.0 });
        let m = ScoreMatrix::from_rows(both, (0..2 * half).map(|i| (i >= half) as usize).collect()).unwrap();
        eq_uv = eq_uv.max(rel(hotelling_equal(&m).unwrap().statistic, hotelling_unequal(&m).unwrap().statistic));
        // K = 1: Welch–Satterthwaite
        let (n1, n0) = (rng.random_range(2..40usize), rng.random_range(2..40usize));
        let (v1, v0) = (rng.random_range(0.1..5.0), rng.random_range(0.1..5.0));
        let (a1, a0) = (v1 / n1 as f64, v0 / n0 as f64);
        let ws = (a1 + a0).powi(2) / (a1 * a1 / (n1 - 1) as f64 + a0 * a0 / (n0 - 1) as f64);
        let f = nel_van_der_merwe_df(&DMatrix::from_element(1, 1, a1), &DMatrix::from_element(1, 1, a0), n1, n0);
        welch = welch.max(rel(f, ws));
    }
    outcome(
        lh <= 1e-10 && inv <= 1e-8 && eq_uv <= 1e-10 && welch <= 1e-10,
        format!(
            "(n-2)T_LH vs T_n {lh:.1e} (1e-10); linear-map invariance {inv:.1e} (1e-8); equal vs unequal {eq_uv:.1e} (1e-10); Welch df {welch:.1e} (1e-10)"
        ),
    )
}

fn criterion_7() -> Outcome {
    let n = 100;
    let k = 3;
    let f = FisherSnedecor::new(k as f64, (n - k - 1) as f64).unwrap();
    let transformed: Vec<f64> = (0..2000)
        .map(|rep| {
            let (_, truth) = generate_dataset(&SimConfig {
                n,
                seed: 70_000 + rep,
                ..SimConfig::default()
            })
            .unwrap();
            let s = ScoreMatrix::from_rows(truth.scores.clone(), truth.groups.clone()).unwrap();
            let t = hotelling_equal(&s).unwrap().statistic;
            t * (n - k - 1) as f64 / ((n - 2) as f64 * k as f64)
        })
        .collect();
    let ks = ks_test(&transformed, |x| f.cdf(x.max(0.0)));
    let (data, _) = generate_dataset(&SimConfig {
        n: 200,
        seed: 7,
        ..SimConfig::default()
    })
    .unwrap();
    let fit = fit_pipeline(&data, &PipelineConfig::default()).unwrap();
    let fp = hotelling_equal(&fit.scores).unwrap().p_value;
    let pp = permutation_test(&fit.scores, 10_000, 7, TestFamily::HotellingEqual).unwrap().p_value;
    outcome(
        ks.p_value > 0.01 && (fp - pp).abs() <= 0.05,
        format!(
            "oracle-score KS vs F(3, 96) over 2000 reps: D {:.4}, p {:.3} (> 0.01); n=200 null: F p {fp:.4} vs permutation p {pp:.4} (B=10000, within 0.05)",
            ks.statistic, ks.p_value
        ),
    )
}

fn criterion_8() -> Outcome {
    let (data, _) = generate_dataset(&SimConfig {
        n: 200,
        seed: 8,
        ..SimConfig::default()
    })
    .unwrap();
    let fit = fit_pipeline(&data, &PipelineConfig::default()).unwrap();
    let eig: &MvEigenSystem = &fit.eigen;
    let k = eig.k();
    let grid: Vec<f64> = (0..201).map(|i| i as f64 / 200.0).collect();
    let vals: Vec<Vec<Vec<f64>>> = grid
        .iter()
        .map(|&t| (0..k).map(|j| eig.eval_eigenfunction(j, t).unwrap()).collect())
        .collect();
    let h = 1.0 / 200.0;
    let mut gram_err: f64 = 0.0;
    for a in 0..k {
        for b in 0..k {
            let mut s = 0.0;
            for (i, v) in vals.iter().enumerate() {
                let w = if i == 0 || i == 200 { h / 2.0 } else { h };
                s += w * v[a].iter().zip(&v[b]).map(|(x, y)| x * y).sum::<f64>();
            }
            gram_err = gram_err.max((s - if a == b { 1.0 } else { 0.0 }).abs());
        }
    }
    let lead = k.min(3);
    let mut lead_err: f64 = 0.0;
    let nodes = quadrature();
    let mut exact_err: f64 = 0.0;
    for a in 0..k {
        for b in 0..k {
            let want = if a == b { 1.0 } else { 0.0 };
            let gl = inner(|t| eig.eval_eigenfunction(a, t).unwrap(), |t| eig.eval_eigenfunction(b, t).unwrap(), &nodes);
            exact_err = exact_err.max((gl - want).abs());
            if a < lead && b < lead {
                let mut s = 0.0;
                for (i, v) in vals.iter().enumerate() {
                    let w = if i == 0 || i == 200 { h / 2.0 } else { h };
                    s += w * v[a].iter().zip(&v[b]).map(|(x, y)| x * y).sum::<f64>();
                }
                lead_err = lead_err.max((s - want).abs());
            }
        }
    }
    // Σ̂ minus its spectral reconstruction is the discarded part of the spectrum
    let q = eig.q();
    let gr = fit.covariance.gram();
    let half = kron(&DMatrix::identity(q, q), &gr.s_half);
    let diff = &half * (fit.covariance.gamma() - eig.repaired_gamma()) * &half;
    let diff = (&diff + diff.transpose()) * 0.5;
    let spec_norm = diff.clone().symmetric_eigen().eigenvalues.amax();
    let cutoff = 1e-10 * eig.eigenvalues()[0];
    let bound = eig.most_negative_eigenvalue().abs().max(cutoff) + 1e-9;
    let norm_ok = spec_norm <= bound;
    let coarse: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let u = |t: f64| -> f64 {
        let b = fit.covariance.basis().eval(t).unwrap();
        (&gr.s_half_inv * b).norm_squared() * q as f64
    };
    let mut point_ok = true;
    let mut worst: f64 = 0.0;
    for &t in &coarse {
        for &t2 in &coarse {
            let d = (fit.covariance.evaluate(t, t2).unwrap() - eig.reconstruct(t, t2).unwrap()).amax();
            let allowed = spec_norm * (u(t) * u(t2)).sqrt() + 1e-9;
            worst = worst.max(d);
            point_ok &= d <= allowed;
        }
    }
    outcome(
        gram_err <= 1e-4 && norm_ok && point_ok,
        format!(
            "K={k}: max |Gram - I| {gram_err:.2e} (1e-4, 201-point trapezoid; leading {lead} only: {lead_err:.2e}; 400-node Gauss-Legendre: {exact_err:.2e}); ||Sigma - reconstruction|| {spec_norm:.3e} <= repair size {bound:.3e}: {norm_ok}; pointwise max {worst:.3e} within bound: {point_ok}"
        ),
    )
}

fn cli(args: &[&str], workers: usize) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_mvftest"))
        .args(args)
        .env("MVFTEST_WORKERS", workers.to_string())
        .output()
        .expect("spawn mvftest");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let read = |name: &str| fs::read(Path::new(&p(name))).unwrap();
    let mut checks: Vec<(&str, bool)> = Vec::new();
    for (tag, w) in [("a", 1), ("b", 4)] {
        cli(&["simulate", "--n", "120", "--delta", "0.5", "--seed", "9", "-o", &p(&format!("d{tag}.csv")), "--truth", &p(&format!("t{tag}.csv"))], w);
    }
    checks.push(("simulate", read("da.csv") == read("db.csv") && read("ta.csv") == read("tb.csv")));
    for (tag, w) in [("a", 1), ("b", 4)] {
        cli(&["test", "-i", &p("da.csv"), "--permutation", "2000", "--seed", "3", "-o", &p(&format!("r{tag}.txt")), "--scores", &p(&format!("s{tag}.csv"))], w);
    }
    checks.push(("test", read("ra.txt") == read("rb.txt") && read("sa.csv") == read("sb.csv")));
    for (tag, w) in [("a", 1), ("b", 3)] {
        cli(&["size-study", "--n", "40,60", "--replications", "6", "--seed", "2", "-o", &p(&format!("z{tag}.csv"))], w);
        cli(&["power-study", "--n", "50", "--delta", "0,1", "--replications", "4", "--seed", "2", "-o", &p(&format!("w{tag}.csv"))], w);
    }
    checks.push(("size-study", read("za.csv") == read("zb.csv")));
    checks.push(("power-study", read("wa.csv") == read("wb.csv")));
    for (tag, w) in [("a", 1), ("b", 2)] {
        cli(&["bands", "-i", &p("da.csv"), "--component", "1", "--bootstrap", "200", "--seed", "4", "-o", &p(&format!("b{tag}.csv"))], w);
    }
    checks.push(("bands", read("ba.csv") == read("bb.csv")));
    let seeded = ["da.csv", "ta.csv", "ra.txt", "sa.csv", "za.csv", "wa.csv", "ba.csv"]
        .iter()
        .all(|f| String::from_utf8_lossy(&read(f)).lines().take_while(|l| l.starts_with('#')).any(|l| l.starts_with("# seed: ")));
    checks.push(("seed echoed", seeded));
    let pass = checks.iter().all(|c| c.1);
    let list: Vec<String> = checks.iter().map(|(n, ok)| format!("{n} {}", if *ok { "identical" } else { "DIFFERS" })).collect();
    outcome(pass, format!("repeat runs with different worker counts: {}", list.join(", ")))
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("size_n100_medium_gaussian", criterion_1),
        ("size_n300_low_mixture", criterion_2),
        ("power_sanity", criterion_3),
        ("eigen_recovery", criterion_4),
        ("blup_closed_form_and_routes", criterion_5),
        ("algebraic_identities", criterion_6),
        ("null_calibration", criterion_7),
        ("orthonormality_and_mercer", criterion_8),
        ("determinism", criterion_9),
    ];
    if args.iter().any(|a| a == "--list") {
        for (name, _) in &criteria {
            println!("{name}: test");
        }
        return;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let res = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !res.pass {
            failed += 1;
        }
        println!(
            "criterion {} {name}: {} ({:.1}s) {}",
            i + 1,
            if res.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            res.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
