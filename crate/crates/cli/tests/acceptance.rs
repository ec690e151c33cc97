//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass criterion numbers as arguments to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ieoe_core::bandit::{
    compute_importance_weights, ActionDistribution, ImportanceWeights, LoggedBanditFeedback, PropensitySource,
    RewardPredictionMatrix,
};
use ieoe_core::datagen::{
    generate_synthetic_feedback, mixed_policy_distribution, true_policy_value, BehaviorGreedyChoice, MixedPolicy, RewardKind,
    SyntheticEnvironment,
};
use ieoe_core::estimators::{
    estimate_dm, estimate_dr_ps, estimate_dros, estimate_ipw_ps, estimate_snipw, estimate_sndr, estimate_switch_dr,
    EstimatorKind,
};
use ieoe_core::evaluator::metrics::{au_cdf, cvar, std_score};
use ieoe_core::io::{load_config, run_experiment};
use ieoe_core::tuning::{direct_bias_ub, select_hyperparameter, tuning_objective, DEFAULT_GRID};
use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn random_simplex(rng: &mut ChaCha8Rng, k: usize, min: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(min..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

struct RandomCase {
    fb: LoggedBanditFeedback,
    eval: ActionDistribution,
    weights: ImportanceWeights,
    q: RewardPredictionMatrix,
}

fn random_case(rng: &mut ChaCha8Rng) -> RandomCase {
    let n = rng.random_range(1..=50);
    let k = rng.random_range(2..=5);
    let d = 3;
    let contexts = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
    let mut actions = Vec::with_capacity(n);
    let mut props = Vec::with_capacity(n);
    let mut eval = Array2::zeros((n, k));
    for i in 0..n {
        let pb = random_simplex(rng, k, 0.01);
        let a = rng.random_range(0..k);
        actions.push(a);
        props.push(pb[a]);
        for (j, p) in random_simplex(rng, k, 0.0).into_iter().enumerate() {
            eval[[i, j]] = p;
        }
    }
    let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let fb = LoggedBanditFeedback::new(contexts, actions, rewards, Some(props), k, 1.0).unwrap();
    let eval = ActionDistribution::new(eval).unwrap();
    let weights = compute_importance_weights(&eval, &fb, PropensitySource::LoggedTrue).unwrap();
    let q = RewardPredictionMatrix::new(Array2::from_shape_fn((n, k), |_| rng.random_range(0.0..1.0))).unwrap();
    RandomCase { fb, eval, weights, q }
}

fn criterion_1() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inf = f64::INFINITY;
    for case in 0..100 {
        let RandomCase { fb, eval, weights: w, q } = random_case(&mut rng);
        let zero = RewardPredictionMatrix::zeros(fb.n(), fb.n_actions);
        let v = |r: ieoe_core::Result<ieoe_core::estimators::PolicyValueEstimate>| r.unwrap().value;
        let pairs = [
            ("switch_dr(tau=0) vs dm", v(estimate_switch_dr(&fb, &eval, &w, &q, 0.0)), v(estimate_dm(&eval, &q))),
            (
                "switch_dr(tau=inf) vs dr_ps(lambda=inf)",
                v(estimate_switch_dr(&fb, &eval, &w, &q, inf)),
                v(estimate_dr_ps(&fb, &eval, &w, &q, inf)),
            ),
            ("dr_os(lambda=0) vs dm", v(estimate_dros(&fb, &eval, &w, &q, 0.0)), v(estimate_dm(&eval, &q))),
            (
                "ipw_ps(lambda=inf) vs ipw",
                v(estimate_ipw_ps(&fb, &w, inf)),
                v(ieoe_core::estimators::estimate(
                    EstimatorKind::Ipw,
                    &fb,
                    &eval,
                    &w,
                    None,
                    &Default::default(),
                )),
            ),
            (
                "dr_ps(q=0, lambda=inf) vs ipw",
                v(estimate_dr_ps(&fb, &eval, &w, &zero, inf)),
                v(estimate_ipw_ps(&fb, &w, inf)),
            ),
            ("sndr(q=0) vs snipw", v(estimate_sndr(&fb, &eval, &w, &zero)), v(estimate_snipw(&fb, &w))),
        ];
        for (name, a, b) in pairs {
            ensure(a == b, format!("dataset {case}: {name}: {a} != {b}"))?;
        }
    }
    Ok("6 identities exact on 100 random datasets".into())
}

fn criterion_2() -> Result<String, String> {
    let env = Arc::new(SyntheticEnvironment::random(5, 5, RewardKind::Binary, 1.0, 7).unwrap());
    let pe = MixedPolicy::new(Arc::new(BehaviorGreedyChoice(Arc::clone(&env))), 0.9, 5).unwrap();
    let (truth, truth_se) = true_policy_value(&env, &pe, 2_000_000, 99).unwrap();
    let reps = 10_000;
    let mut values = Vec::with_capacity(reps);
    for r in 0..reps {
        let (fb, _) = generate_synthetic_feedback(&env, 500, 10_000 + r as u64).unwrap();
        let eval = mixed_policy_distribution(&pe, fb.contexts.view()).unwrap();
        let w = compute_importance_weights(&eval, &fb, PropensitySource::LoggedTrue).unwrap();
        values.push(estimate_ipw_ps(&fb, &w, f64::INFINITY).unwrap().value);
    }
    let m = reps as f64;
    let mean = values.iter().sum::<f64>() / m;
    let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0)).sqrt();
    let gap = (mean - truth).abs();
    let detail = format!(
        "mean {mean:.5}, truth {truth:.5} (mc se {truth_se:.1e}), |gap| {gap:.2e} vs 3se {:.2e}, rel {:.3}%",
        3.0 * sd / m.sqrt(),
        100.0 * gap / truth
    );
    ensure(gap < 3.0 * sd / m.sqrt(), detail.clone())?;
    ensure(gap < 0.01 * truth.abs(), detail.clone())?;
    Ok(detail)
}

fn criterion_3() -> Result<String, String> {
    let strategy = (1usize..=30, 2usize..=5, 0.1f64..10.0).prop_flat_map(|(n, k, r_max)| {
        (
            Just(k),
            Just(r_max),
            prop::collection::vec(
                (
                    0usize..k,
                    0.0f64..=1.0,
                    prop::collection::vec(1e-6f64..1.0, k),
                    prop::collection::vec(0.0f64..1.0, k),
                ),
                n,
            ),
        )
    });
    let mut runner = TestRunner::new(PropConfig {
        cases: 10_000,
        failure_persistence: None,
        ..PropConfig::default()
    });
    let counter = std::cell::Cell::new(0usize);
    let result = runner.run(&strategy, |(k, r_max, rows)| {
        let n = rows.len();
        let mut eval = Array2::zeros((n, k));
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        let mut props = Vec::new();
        for (i, (a, frac, pb, pe)) in rows.iter().enumerate() {
            let sb: f64 = pb.iter().sum();
            let se: f64 = pe.iter().sum::<f64>() + 1e-12;
            for j in 0..k {
                eval[[i, j]] = (pe[j] + 1e-12 / k as f64) / se;
            }
            actions.push(*a);
            rewards.push(frac * r_max);
            props.push(pb[*a] / sb);
        }
        let fb = LoggedBanditFeedback::new(Array2::zeros((n, 1)), actions, rewards, Some(props), k, r_max).unwrap();
        let eval = ActionDistribution::new(eval).unwrap();
        let w = compute_importance_weights(&eval, &fb, PropensitySource::LoggedTrue).unwrap();
        match estimate_snipw(&fb, &w) {
            Ok(v) => prop_assert!(v.value >= 0.0 && v.value <= r_max, "snipw {} outside [0, {r_max}]", v.value),
            Err(_) => counter.set(counter.get() + 1),
        }
        Ok(())
    });
    let zero_sum = counter.get();
    result.map_err(|e| format!("snipw bound violated: {e}"))?;

    // Adversarial input: a rare logged action that the evaluation policy always takes.
    let fb = LoggedBanditFeedback::new(Array2::zeros((2, 1)), vec![0, 1], vec![1.0, 0.0], Some(vec![0.01, 0.99]), 2, 1.0)
        .unwrap();
    let w = ImportanceWeights::from_weights(vec![100.0, 0.0]).unwrap();
    let ipw = estimate_ipw_ps(&fb, &w, f64::INFINITY).unwrap().value;
    let sn = estimate_snipw(&fb, &w).unwrap().value;
    ensure(ipw > fb.r_max, format!("ipw {ipw} stayed within [0, 1]"))?;
    ensure((0.0..=1.0).contains(&sn), format!("snipw {sn} on adversarial input"))?;
    Ok(format!(
        "10000 cases within [0, r_max] ({zero_sum} zero-weight-sum errors); adversarial ipw {ipw} vs snipw {sn}"
    ))
}

fn criterion_4() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_au = 0.0f64;
    let mut worst_std = 0.0f64;
    for case in 0..1000 {
        let m = rng.random_range(1..=40);
        let mut z: Vec<f64> = (0..m)
            .map(|_| match rng.random_range(0..4) {
                0 => 0.0,
                1 => rng.random_range(0..4) as f64 * 0.5,
                _ => rng.random_range(0.0..3.0),
            })
            .collect();
        let z_max = rng.random_range(0.1..3.0);

        // Left Riemann sum of the step function with step 1e-5 * z_max.
        let steps = 100_000usize;
        let h = z_max / steps as f64;
        let mut sorted = z.clone();
        sorted.sort_by(f64::total_cmp);
        let (mut idx, mut riemann) = (0usize, 0.0);
        for s in 0..steps {
            let t = s as f64 * h;
            while idx < m && sorted[idx] <= t {
                idx += 1;
            }
            riemann += idx as f64 / m as f64 * h;
        }
        let au = au_cdf(&z, z_max).unwrap();
        let err = (au - riemann).abs();
        worst_au = worst_au.max(err / z_max);
        ensure(err <= 1e-4 * z_max, format!("set {case}: au_cdf {au} vs riemann {riemann}"))?;

        for alpha in [0.0, 0.3, 0.7, 0.95, rng.random_range(0.0..1.0)] {
            let f = |v: f64| sorted.iter().filter(|&&w| w <= v).count() as f64 / m as f64;
            let q = *sorted.iter().find(|&&v| f(v) >= alpha).unwrap();
            let tail: Vec<f64> = sorted.iter().copied().filter(|&v| v >= q).collect();
            let brute = tail.iter().sum::<f64>() / tail.len() as f64;
            let got = cvar(&z, alpha).unwrap();
            ensure(got == brute, format!("set {case}, alpha {alpha}: cvar {got} vs {brute}"))?;
        }

        let mean = z.iter().sum::<f64>() / m as f64;
        let pop = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64).sqrt();
        let got = std_score(&z).unwrap();
        worst_std = worst_std.max((got - pop).abs());
        ensure((got - pop).abs() <= 1e-12, format!("set {case}: std {got} vs {pop}"))?;
        z.clear();
    }
    Ok(format!(
        "1000 sets; max au_cdf error {worst_au:.1e} * z_max, cvar exact, max std error {worst_std:.1e}"
    ))
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_ieoe"))
        .args(args)
        .env_remove("IEOE_OUT_DIR")
        .output()
        .expect("run ieoe")
}

fn criterion_5() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        r#"mode = "classification"
estimators = ["dm", "ipw_ps", "snipw", "dr_ps", "sndr", "switch_dr", "dr_os"]
[seeds]
count = 100
[protocol]
sampler = "uniform_random"
[classification.generate]
n = 1000
dim = 5
n_classes = 5
spread = 1.5
seed = 3
"#,
    )
    .map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for workers in ["1", "8"] {
        let out = dir.path().join(format!("w{workers}"));
        let o = cli(&[
            "classification",
            "--config",
            config.to_str().unwrap(),
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
        ]);
        ensure(o.status.success(), format!("workers {workers}: {}", String::from_utf8_lossy(&o.stderr)))?;
        files.push(std::fs::read(out.join("squared_errors.csv")).map_err(|e| e.to_string())?);
    }
    let rows = files[0].iter().filter(|&&b| b == b'\n').count() - 1;
    ensure(rows == 700, format!("expected 700 records, found {rows}"))?;
    ensure(files[0] == files[1], "squared_errors.csv differs between 1 and 8 workers")?;
    Ok(format!("{rows} records bitwise identical with 1 and 8 workers"))
}

/// Reads the first data row of summary.csv as a column lookup.
fn summary_row(dir: &Path) -> Result<impl Fn(&str) -> f64, String> {
    let text = std::fs::read_to_string(dir.join("summary.csv")).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap_or("").split(',').map(String::from).collect();
    let row: Vec<String> = lines.next().unwrap_or("").split(',').map(String::from).collect();
    Ok(move |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .and_then(|i| row.get(i))
            .and_then(|v| v.parse().ok())
            .unwrap_or(f64::NAN)
    })
}

fn criterion_6() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("oracle.toml");
    std::fs::write(
        &config,
        "mode = \"synthetic\"\nestimators = [\"oracle\"]\n[seeds]\ncount = 50\n[synthetic]\nn = 300\nn_mc = 2000\n[output]\nz_max = 0.25\n",
    )
    .map_err(|e| e.to_string())?;
    let out = dir.path().join("out");
    let o = cli(&["synth", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    ensure(o.status.success(), String::from_utf8_lossy(&o.stderr).to_string())?;

    let errors = std::fs::read_to_string(out.join("squared_errors.csv")).map_err(|e| e.to_string())?;
    let mut n = 0;
    for line in errors.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let se: f64 = cols[4].parse().map_err(|_| format!("bad record: {line}"))?;
        ensure(se == 0.0 && cols[5] == "false", format!("nonzero record: {line}"))?;
        n += 1;
    }
    ensure(n == 50, format!("expected 50 records, found {n}"))?;

    let summary = summary_row(&out)?;
    let (mean, au, cv, sd) = (summary("mean"), summary("au_cdf"), summary("cvar"), summary("std"));
    ensure(mean == 0.0 && cv == 0.0 && sd == 0.0, format!("mean {mean}, cvar {cv}, std {sd}"))?;
    ensure(au == 0.25 && summary("z_max") == 0.25, format!("au_cdf {au} != z_max 0.25"))?;

    // The report subcommand with the automatic cutoff.
    let o = cli(&["report", "--input", out.join("squared_errors.csv").to_str().unwrap(), "--no-plot"]);
    ensure(o.status.success(), String::from_utf8_lossy(&o.stderr).to_string())?;
    let summary = summary_row(&out)?;
    let (au, z_max) = (summary("au_cdf"), summary("z_max"));
    ensure(au == 1.0 && z_max == 1.0, format!("automatic cutoff: au_cdf {au}, z_max {z_max}"))?;
    Ok(format!("{n} zero errors; mean = cvar = std = 0, au_cdf = z_max (0.25 explicit, 1 automatic)"))
}

fn run_bundled(name: &str) -> Result<ieoe_core::evaluator::ScoreTable, String> {
    let cfg = load_config(&configs_dir().join(name)).map_err(|e| e.to_string())?;
    let results = run_experiment(&cfg).map_err(|e| e.to_string())?;
    results
        .scores(cfg.output.z_max, cfg.output.cvar_alpha, cfg.output.exclude_flagged)
        .map_err(|e| e.to_string())
}

fn scores_of<'a>(t: &'a ieoe_core::evaluator::ScoreTable, name: &str) -> &'a ieoe_core::evaluator::SummaryScores {
    &t.rows.iter().find(|r| r.estimator == name).expect("estimator present").scores
}

fn criterion_7() -> Result<String, String> {
    let t = run_bundled("true_propensities.toml")?;
    let (dm, ips) = (scores_of(&t, "dm"), scores_of(&t, "ipw_ps"));
    let detail = format!(
        "au_cdf ipw_ps {:.4e} vs dm {:.4e}; cvar ipw_ps {:.4e} vs dm {:.4e} (z_max {:.3e})",
        ips.au_cdf, dm.au_cdf, ips.cvar, dm.cvar, t.z_max
    );
    ensure(ips.au_cdf > dm.au_cdf && ips.cvar < dm.cvar, detail.clone())?;
    Ok(detail)
}

fn criterion_8() -> Result<String, String> {
    let t = run_bundled("estimated_propensities.toml")?;
    let (drps, sndr) = (scores_of(&t, "dr_ps"), scores_of(&t, "sndr"));
    let flagged: usize = t.rows.iter().map(|r| r.n_flagged).sum();
    let detail = format!("cvar dr_ps {:.4e} vs sndr {:.4e} ({flagged} flagged)", drps.cvar, sndr.cvar);
    ensure(drps.cvar > sndr.cvar, detail.clone())?;
    Ok(detail)
}

fn criterion_9() -> Result<String, String> {
    let delta = 2.0 / std::f64::consts::E;
    let fb = LoggedBanditFeedback::new(Array2::zeros((2, 1)), vec![0, 0], vec![1.0, 0.0], Some(vec![0.5; 2]), 2, 1.0)
        .unwrap();
    let w = ImportanceWeights::from_weights(vec![1.0, 1.0]).unwrap();
    let a = direct_bias_ub(&w, &w.weights, &fb, None, delta).unwrap();
    ensure(a == 4.0 / 3.0, format!("unclipped example {a} != 4/3"))?;

    let fb = LoggedBanditFeedback::new(Array2::zeros((2, 1)), vec![0, 0], vec![1.0, 1.0], Some(vec![0.5; 2]), 2, 1.0)
        .unwrap();
    let w = ImportanceWeights::from_weights(vec![2.0, 0.5]).unwrap();
    let b = direct_bias_ub(&w, &[1.0, 0.5], &fb, None, delta).unwrap();
    ensure((b - 2.6244).abs() < 1e-3, format!("clipped example {b} != 2.6244"))?;
    Ok(format!("{a:.15} and {b:.6}"))
}

fn criterion_10() -> Result<String, String> {
    // One extreme weight on a large reward.
    let n = 200;
    let mut weights = vec![1.0; n];
    weights[0] = 1e4;
    let mut rewards = vec![50.0; n];
    rewards[0] = 100.0;
    let fb = LoggedBanditFeedback::new(Array2::zeros((n, 1)), vec![0; n], rewards, None, 2, 100.0).unwrap();
    let eval = ActionDistribution::uniform(n, 2);
    let w = ImportanceWeights::from_weights(weights).unwrap();
    let chosen = select_hyperparameter(EstimatorKind::IpwPs, &DEFAULT_GRID, &fb, &eval, &w, None, 0.05).unwrap();
    let obj = |c| tuning_objective(EstimatorKind::IpwPs, c, &fb, &eval, &w, None, 0.05).unwrap();
    ensure(
        chosen.is_finite() && obj(chosen) < obj(f64::INFINITY),
        format!("adversarial: chose {chosen}"),
    )?;

    // Near-uniform weights: nothing to clip.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 500;
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.9..1.1)).collect();
    let rewards: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.5))).collect();
    let fb = LoggedBanditFeedback::new(Array2::zeros((n, 1)), vec![0; n], rewards, None, 2, 1.0).unwrap();
    let eval = ActionDistribution::uniform(n, 2);
    let w = ImportanceWeights::from_weights(weights).unwrap();
    let rho_max = w.rho_max;
    let pick = |grid: &[f64]| select_hyperparameter(EstimatorKind::IpwPs, grid, &fb, &eval, &w, None, 0.05).unwrap();
    let two = pick(&[1.0, f64::INFINITY]);
    ensure(two == f64::INFINITY, format!("near-uniform on {{1, inf}}: chose {two}"))?;
    let full = pick(&DEFAULT_GRID);
    ensure(full >= rho_max, format!("near-uniform on default grid: chose {full} < max weight {rho_max}"))?;
    Ok(format!(
        "adversarial -> lambda {chosen}; near-uniform -> inf on {{1, inf}}, {full} (no clipping) on the default grid"
    ))
}

fn main() {
    let criteria: [(u32, &str, Duration, Check); 10] = [
        (1, "estimator identities", Duration::from_secs(5), criterion_1),
        (2, "ipw unbiasedness", Duration::from_secs(120), criterion_2),
        (3, "snipw boundedness", Duration::from_secs(10), criterion_3),
        (4, "cdf score oracles", Duration::from_secs(30), criterion_4),
        (5, "determinism across workers", Duration::from_secs(120), criterion_5),
        (6, "oracle estimator zero", Duration::from_secs(30), criterion_6),
        (7, "ipw_ps beats dm, true propensities", Duration::from_secs(600), criterion_7),
        (8, "dr_ps worse than sndr, estimated propensities", Duration::from_secs(600), criterion_8),
        (9, "bias bound hand values", Duration::from_secs(1), criterion_9),
        (10, "lambda selection sanity", Duration::from_secs(5), criterion_10),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > budget => Err(format!("{detail}; over the {}s budget", budget.as_secs())),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {id:>2} [{name}]: {tag} ({:.1}s) {detail}", elapsed.as_secs_f64());
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
