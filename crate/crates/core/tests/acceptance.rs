//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.
//!
//! `cargo test -p enn --release --test acceptance -- 3 4` runs only criteria 3 and 4.

use std::process::ExitCode;
use std::time::Instant;

use enn::classify::{LabeledDataset, WnnModel};
use enn::datagen::rng::{self, Purpose};
use enn::datagen::{sample_ground_truth, SimulationId, SimulationSpec};
use enn::enn::{enhance_label, CrowdData, EnnModel, Worker, WorkerQuality};
use enn::experiments::{
    run_gamma_sweep, run_quality_estimation_eval, run_risk_comparison, run_weight_matching_check,
    ExperimentConfig, KRule, Method, MstarRule,
};
use enn::neighbors::{brute_force_nearest, NeighborIndex};
use enn::points::Points;
use enn::weights::{alpha, knn_weights, optimal_m_star, ownn_weights, RegretConstants};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Points<f64> {
    Points::new((0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect(), d).unwrap()
}

fn c1_oracle_equality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checked = 0;
    let mut mismatches = 0;
    for &d in &[2usize, 4, 8] {
        for _ in 0..100 {
            let n = rng.random_range(1..1500);
            let pts = random_points(&mut rng, n, d);
            let index = NeighborIndex::build(pts.clone());
            for _ in 0..100 {
                let q: Vec<f64> = (0..d).map(|_| rng.random_range(-3.5..3.5)).collect();
                let k = rng.random_range(1..=60);
                if index.k_nearest(&q, k).unwrap() != brute_force_nearest(&pts, &q, k).unwrap() {
                    mismatches += 1;
                }
                checked += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{checked} queries over 300 datasets, {mismatches} mismatches"))
}

fn c2_single_expert_collapse() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut diffs = 0;
    for cfg in 0..20u64 {
        let d = rng.random_range(1..=6);
        let n = rng.random_range(50..2000);
        let sim = SimulationId::from_number(rng.random_range(1..=3)).unwrap();
        let spec = SimulationSpec::new(sim, d).unwrap();
        let data: LabeledDataset<f64> =
            sample_ground_truth(&spec, n, &mut rng::stream(202, cfg, Purpose::Sample, 0)).unwrap();
        let count = rng.random_range(1..=n.min(200));
        let weights = if cfg % 2 == 0 { knn_weights(n, count) } else { ownn_weights(n, count, d) }.unwrap();
        let wnn = WnnModel::new(data.clone(), weights.clone()).unwrap();
        let crowd = CrowdData::new(vec![Worker::expert(data)]).unwrap();
        let enn = EnnModel::fit(&crowd, vec![WorkerQuality::expert()], vec![weights]).unwrap();
        let queries = random_points(&mut rng, 1000, d);
        for q in queries.rows() {
            if enn.classify(q).unwrap() != wnn.classify(q).unwrap() {
                diffs += 1;
            }
        }
    }
    outcome(diffs == 0, format!("20 configurations x 1000 queries, {diffs} differing predictions"))
}

fn c3_weight_algebra() -> Outcome {
    let mut worst_sum: f64 = 0.0;
    let mut monotone = true;
    let mut support = true;
    for &d in &[1usize, 2, 3, 4, 8] {
        for &n in &[10usize, 100, 1000, 20000] {
            let m = optimal_m_star(n, d, &RegretConstants::from_ratio(1.0).unwrap());
            let w = ownn_weights::<f64>(n, m, d).unwrap();
            let s: f64 = w.as_slice().iter().sum();
            worst_sum = worst_sum.max((s - 1.0).abs());
            monotone &= w.as_slice().windows(2).all(|p| p[0] >= p[1]);
            support &= w.as_slice()[m..].iter().all(|&x| x == 0.0);
        }
    }
    let mut worst_tel: f64 = 0.0;
    for &d in &[1usize, 2, 4, 8] {
        let mut acc = 0.0;
        for k in 1..=1000usize {
            acc += alpha::<f64>(k, d).unwrap();
            let exact = (k as f64).powf(1.0 + 2.0 / d as f64);
            worst_tel = worst_tel.max(((acc - exact) / exact).abs());
        }
    }
    outcome(
        worst_sum <= 1e-12 && monotone && support && worst_tel <= 1e-9,
        format!(
            "max |sum-1| = {worst_sum:.2e}, nonincreasing = {monotone}, zero past m* = {support}, \
             max telescoping rel. error = {worst_tel:.2e}"
        ),
    )
}

fn c4_weight_matching() -> Outcome {
    let one = RegretConstants::from_ratio(1.0).unwrap();
    let rows = run_weight_matching_check::<f64>(4, &[1_000, 10_000, 100_000], 5, &one).unwrap();
    let dev = |r: &enn::experiments::MatchingRow| ((r.ratio_variance - 1.0).abs(), (r.ratio_bias - 1.0).abs());
    let last = dev(rows.last().unwrap());
    let close = last.0 < 0.1 && last.1 < 0.1;
    let nonincreasing = rows.windows(2).all(|p| {
        let (a, b) = (dev(&p[0]), dev(&p[1]));
        b.0 <= a.0 && b.1 <= a.1
    });
    let shown: Vec<String> = rows
        .iter()
        .map(|r| format!("N={}: ({:.4}, {:.4})", r.n, r.ratio_variance, r.ratio_bias))
        .collect();
    outcome(close && nonincreasing, format!("{}; |ratio-1| nonincreasing = {nonincreasing}", shown.join(", ")))
}

fn c5_risk_pattern() -> Outcome {
    let cfg = ExperimentConfig {
        sim: SimulationId::Gaussian,
        d: 4,
        setup_ids: vec![1, 2, 3],
        methods: vec![Method::NaiveKnn, Method::OracleKnn, Method::EnnK, Method::Bayes],
        n: 20000,
        scale: 0.25,
        reps: 100,
        test_size: 1000,
        k_rule: KRule::Power07,
        seed: 5,
        ..Default::default()
    };
    let t = run_risk_comparison::<f64>(&cfg).unwrap();
    let risk = |m, s| t.row(m, s).unwrap().mean_risk;
    let g1 = (risk(Method::EnnK, 1) - risk(Method::OracleKnn, 1)).abs();
    let g2 = (risk(Method::EnnK, 2) - risk(Method::OracleKnn, 2)).abs();
    let g3 = risk(Method::NaiveKnn, 3) - risk(Method::EnnK, 3);
    outcome(
        g1 <= 0.01 && g2 <= 0.01 && g3 >= 0.01 && t.dominance_violations == 0,
        format!(
            "|ENN(k)-oracle kNN| setup 1 = {g1:.4}, setup 2 = {g2:.4}; naive - ENN(k) setup 3 = {g3:.4}; \
             Bayes violations = {}",
            t.dominance_violations
        ),
    )
}

fn c6_quality_estimation() -> Outcome {
    let base = ExperimentConfig {
        sim: SimulationId::Gaussian,
        d: 4,
        n: 20000,
        scale: 1.0,
        reps: 25,
        seed: 6,
        ..Default::default()
    };
    let expert = run_quality_estimation_eval::<f64>(&ExperimentConfig {
        setup_ids: vec![6],
        methods: vec![Method::Enn2],
        ..base.clone()
    })
    .unwrap();
    let iterative = run_quality_estimation_eval::<f64>(&ExperimentConfig {
        setup_ids: vec![1],
        methods: vec![Method::Enn3],
        ..base
    })
    .unwrap();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, eval) in [("ENN2 setup 6", &expert), ("ENN3 setup 1", &iterative)] {
        let cells: Vec<String> = eval
            .rows
            .iter()
            .map(|r| {
                worst = worst.max((r.est_a - r.true_a).abs()).max((r.est_b - r.true_b).abs());
                format!("w{} a {:.2}->{:.3} b {:.2}->{:.3}", r.worker, r.true_a, r.est_a, r.true_b, r.est_b)
            })
            .collect();
        parts.push(format!("{name}: {}", cells.join(", ")));
    }
    outcome(worst <= 0.02, format!("max deviation {worst:.3} (limit 0.02); {}", parts.join("; ")))
}

fn c7_gamma_sweep() -> Outcome {
    let cfg = ExperimentConfig {
        sim: SimulationId::Gaussian,
        d: 4,
        n: 20000,
        scale: 1.0,
        reps: 50,
        test_size: 1000,
        gammas: vec![0.3, 0.4, 0.5, 0.6],
        mstar_rule: MstarRule::Cv,
        seed: 7,
        ..Default::default()
    };
    let sweep = run_gamma_sweep::<f64>(&cfg).unwrap();
    let gap = |g: f64| sweep.rows.iter().find(|r| r.gamma == g).unwrap().mean_gap;
    let (g3, g6) = (gap(0.3), gap(0.6));
    let shown: Vec<String> = sweep.rows.iter().map(|r| format!("{}: s={} gap={:.4}", r.gamma, r.s, r.mean_gap)).collect();
    outcome(
        g6 > g3 && g3 <= 0.005 && sweep.dominance_violations == 0,
        format!("m*={}; {}", sweep.m_star, shown.join(", ")),
    )
}

fn c8_iterative_termination() -> Outcome {
    let cfg = ExperimentConfig {
        sim: SimulationId::Gaussian,
        d: 4,
        setup_ids: vec![1],
        methods: vec![Method::Enn3],
        n: 20000,
        scale: 1.0,
        reps: 100,
        stop_c: 0.02,
        seed: 8,
        ..Default::default()
    };
    let eval = run_quality_estimation_eval::<f64>(&cfg).unwrap();
    let ok = eval
        .iterative_runs
        .iter()
        .filter(|r| r.converged && r.final_delta <= 0.02 && r.iterations <= 20)
        .count();
    let max_iter = eval.iterative_runs.iter().map(|r| r.iterations).max().unwrap_or(0);
    outcome(ok >= 95, format!("{ok}/100 runs stopped with delta <= 0.02 within 20 iterations (max {max_iter})"))
}

fn c9_enhancement_channel() -> Outcome {
    let n = 100_000;
    let mut worst_z: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    for &p in &[0.1, 0.5, 0.9] {
        for &(a, b) in &[(0.9, 0.8), (0.8, 0.95), (0.6, 0.75)] {
            let q = WorkerQuality::known(a, b).unwrap();
            let mut sum = 0.0;
            for _ in 0..n {
                let y0 = rng.random::<f64>() < p;
                let u = rng.random::<f64>();
                let y = if y0 { u8::from(u < a) } else { u8::from(u >= b) };
                sum += enhance_label(y, &q).unwrap();
            }
            let mean = sum / n as f64;
            let p1 = a * p + (1.0 - b) * (1.0 - p);
            let sigma = (p1 * (1.0 - p1)).sqrt() / (a + b - 1.0) / (n as f64).sqrt();
            worst_z = worst_z.max((mean - p).abs() / sigma);
        }
    }
    outcome(worst_z <= 4.0, format!("max |mean - p| / sigma = {worst_z:.2} over 9 cells"))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "kd-tree equals brute force", c1_oracle_equality),
        (2, "single-expert ENN equals WNN", c2_single_expert_collapse),
        (3, "OWNN weight algebra", c3_weight_algebra),
        (4, "local/global weight matching", c4_weight_matching),
        (5, "risk pattern across methods", c5_risk_pattern),
        (6, "quality estimation accuracy", c6_quality_estimation),
        (7, "worker-count sweep", c7_gamma_sweep),
        (8, "iterative estimation terminates", c8_iterative_termination),
        (9, "enhanced labels are unbiased", c9_enhancement_channel),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "criterion {id} [{}] {name}: {} ({secs:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
