//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Slow; run it in release:
//!
//! ```text
//! cargo test --release -p dsa-cli --test acceptance
//! ```

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::Instant;

use dsa_cli::plan::{parse_config, PolicyKind, Scenario};
use dsa_cli::report::{write_csv, TIMING_COLUMNS};
use dsa_cli::runner::RunRecord;
use dsa_cli::{run_experiment, ExperimentPlan, HyperConfig};
use dsa_core::dqn::{monitor_retrain, train};
use dsa_core::eval::{moving_average, run_evaluation};
use dsa_core::neural::init_network_with_depth;
use dsa_core::oracle::{expected_action_reward, value_iteration};
use dsa_core::policy::{train_fully_observed, TIE_TOLERANCE};
use dsa_core::{
    Correlation, Environment, GeniePolicy, ImprovidentPolicy, MonitorConfig, ScenarioConfig,
    SituationCounts, Topology, TransitionMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn repo(path: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(path)
}

fn jobs() -> usize {
    thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn find<'a>(records: &'a [RunRecord], scenario: &str, policy: PolicyKind) -> &'a RunRecord {
    records
        .iter()
        .find(|r| r.scenario_id == scenario && r.policy == policy)
        .expect("run present")
}

fn accuracy(r: &RunRecord) -> f64 {
    r.metrics.as_ref().map_or(f64::NAN, |m| m.decision_accuracy)
}

fn interference(r: &RunRecord) -> f64 {
    r.metrics.as_ref().map_or(f64::NAN, |m| m.interference)
}

fn oracle_equivalence() -> Verdict {
    let started = Instant::now();
    let mut mismatches = 0;
    let mut checked = 0;
    for topo_seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + topo_seed);
        let i = rng.random_range(2..=6);
        let corr = if topo_seed % 2 == 0 {
            Correlation::Opposite
        } else {
            Correlation::Same
        };
        let topo = Topology::random(24, i, corr, &mut rng).unwrap();
        let m =
            TransitionMatrix::from_stay(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95))
                .unwrap();
        let env = Environment::new(8, 4, m, topo, topo_seed).unwrap();
        let policy = ImprovidentPolicy::new(&env).unwrap();
        for _ in 0..1000 {
            let parents = rng.random_range(0..1u64 << i);
            let s = env.topology().expand(parents);
            let brute: Vec<f64> = (0..env.n_actions())
                .map(|a| expected_action_reward(&env, &s, a).unwrap())
                .collect();
            let top = brute.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let expected = brute
                .iter()
                .position(|&v| top - v <= TIE_TOLERANCE)
                .unwrap();
            if policy.decide(&env, &s).unwrap() != expected {
                mismatches += 1;
            }
            checked += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        mismatches == 0 && secs < 1.0,
        format!("{checked} states over 5 topologies, {mismatches} mismatches, {secs:.3} s"),
    )
}

fn gradient_check() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut params = 0;
    for _ in 0..10 {
        let input = rng.random_range(4..27);
        let output = rng.random_range(2..19);
        let depth = rng.random_range(1..4);
        let mut net = init_network_with_depth(input, 12, depth, output, &mut rng).unwrap();
        for v in net.as_mut_slice() {
            *v += rng.random_range(-0.1..0.1);
        }
        let batch = 8;
        let inputs: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..input).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let actions: Vec<usize> = (0..batch).map(|_| rng.random_range(0..output)).collect();
        let targets: Vec<f64> = (0..batch).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (_, grads) = net.loss_and_gradients(&inputs, &actions, &targets).unwrap();
        for k in 0..net.len() {
            let mut plus = net.clone();
            plus.as_mut_slice()[k] += h;
            let mut minus = net.clone();
            minus.as_mut_slice()[k] -= h;
            let lp = plus
                .loss_and_gradients(&inputs, &actions, &targets)
                .unwrap()
                .0;
            let lm = minus
                .loss_and_gradients(&inputs, &actions, &targets)
                .unwrap()
                .0;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = grads.as_slice()[k];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(rel);
            params += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-4 && secs < 5.0,
        format!("{params} parameters over 10 nets, worst relative error {worst:.2e}, {secs:.2} s"),
    )
}

fn qlearning_convergence() -> Verdict {
    let started = Instant::now();
    let topo = Topology::new(
        6,
        &[0, 2, 4],
        &[
            (1, 0, Correlation::Opposite),
            (3, 2, Correlation::Same),
            (5, 4, Correlation::Opposite),
        ],
    )
    .unwrap();
    let mut env = Environment::new(
        3,
        2,
        TransitionMatrix::from_stay(0.8, 0.7).unwrap(),
        topo,
        1,
    )
    .unwrap();
    let gamma = 0.9;
    let exact = value_iteration(&env, gamma, 1e-12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let learned = train_fully_observed(&mut env, gamma, 0.5, 200_000, &mut rng).unwrap();
    let learned = &learned;
    let gap = exact
        .iter()
        .flat_map(|(s, row)| {
            row.iter()
                .enumerate()
                .map(move |(a, v)| (learned.get(s, a) - v).abs())
        })
        .fold(0.0, f64::max);
    let secs = started.elapsed().as_secs_f64();
    verdict(
        gap <= 0.1 && secs < 30.0,
        format!("max |q - Q*| = {gap:.4} after 200000 steps, {secs:.2} s"),
    )
}

fn suite_plan() -> ExperimentPlan {
    let mut plan = parse_config(&repo("configs/suite.toml")).unwrap();
    plan.hyper = HyperConfig::load(&repo("configs/hyper-full.toml")).unwrap();
    plan.slots = 10_000;
    plan
}

fn scenario_one(records: &[RunRecord]) -> Verdict {
    let dqn = find(records, "s01", PolicyKind::Dqn);
    let imp = find(records, "s01", PolicyKind::Improvident);
    let (a, b) = (accuracy(dqn), accuracy(imp));
    let secs = dqn.train_seconds
        + dqn
            .metrics
            .as_ref()
            .map_or(0.0, |m| m.wall_clock_per_decision * 1e4);
    verdict(
        a >= 0.90 && (a - b).abs() <= 0.05 && secs < 600.0,
        format!(
            "DQN accuracy {a:.4}, Improvident {b:.4}, gap {:.4}, {secs:.1} s",
            (a - b).abs()
        ),
    )
}

fn high_randomness() -> Verdict {
    let started = Instant::now();
    // Fraction of the 2^8 configurations of one segment with at least four
    // vacant channels; every segment has the same law when all 24 channels
    // are independent fair coins.
    let hits = (0u32..256).filter(|w| 8 - w.count_ones() >= 4).count();
    let bound = hits as f64 / 256.0;
    let config = ScenarioConfig::from_toml_str(&format!(
        "n_channels = 24\nsegment_len = 8\ndemand = 4\np00 = 0.5\np11 = 0.5\n\
         independents = [{}]\ndependents = []\nenv_seed = 50\n",
        (1..=24)
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    ))
    .unwrap();
    let plan = ExperimentPlan {
        out_dir: "unused".into(),
        slots: 10_000,
        repetitions: 1,
        seed: 0,
        gamma: 0.9,
        beta: 0.5,
        policies: vec![
            PolicyKind::Random,
            PolicyKind::Improvident,
            PolicyKind::Qlearning,
            PolicyKind::Dqn,
        ],
        hyper: HyperConfig::load(&repo("configs/hyper-full.toml")).unwrap(),
        scenarios: vec![Scenario {
            id: "iid".into(),
            config,
        }],
    };
    let records = run_experiment(&plan, jobs(), None).unwrap();
    let mut pass = records.iter().all(|r| r.ok());
    let mut parts = Vec::new();
    for r in &records {
        let acc = accuracy(r);
        pass &= (acc - bound).abs() <= 0.03;
        parts.push(format!("{} {acc:.4}", r.policy));
    }
    let secs = started.elapsed().as_secs_f64();
    pass &= secs < 600.0;
    verdict(
        pass,
        format!("bound {bound:.4}; {}; {secs:.1} s", parts.join(", ")),
    )
}

fn interference_ordering(records: &[RunRecord], plan: &ExperimentPlan) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in &plan.scenarios {
        let d = interference(find(records, &s.id, PolicyKind::Dqn));
        let r = interference(find(records, &s.id, PolicyKind::Random));
        pass &= d <= r;
        parts.push(format!("{} {d:.3}/{r:.3}", s.id));
    }
    verdict(
        pass,
        format!("DQN/Random interference: {}", parts.join(", ")),
    )
}

fn metric_identities(records: &[RunRecord]) -> Verdict {
    let started = Instant::now();
    let mut pass = true;
    for r in records {
        let Some(m) = &r.metrics else {
            pass = false;
            continue;
        };
        let c: &SituationCounts = &m.counts;
        pass &= c.total() == m.slots;
        pass &= m.modified_decision_accuracy >= m.decision_accuracy;
        pass &= (m.modified_decision_accuracy == m.decision_accuracy) == (c.conservative == 0);
        let conservative = c.conservative as f64 / m.slots as f64;
        pass &= (m.interference + m.decision_accuracy + conservative - 1.0).abs() < 1e-12;
        if r.policy == PolicyKind::Genie {
            pass &= m.decision_accuracy == 1.0 && m.interference == 0.0;
        }
    }
    // Genie on fresh scenarios as well.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..20 {
        let topo =
            Topology::random(12, rng.random_range(1..=6), Correlation::Opposite, &mut rng).unwrap();
        let m =
            TransitionMatrix::from_stay(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95))
                .unwrap();
        let mut env = Environment::new(4, 2, m, topo, seed).unwrap();
        let report = run_evaluation(&mut GeniePolicy, &mut env, 500, 0.9, 0.5).unwrap();
        pass &= report.decision_accuracy == 1.0 && report.interference == 0.0;
        pass &= report.counts.total() == 500;
    }
    let secs = started.elapsed().as_secs_f64();
    verdict(
        pass && secs < 1.0,
        format!(
            "{} sweep rows and 20 genie runs checked, {secs:.3} s",
            records.len()
        ),
    )
}

fn learning_signal(records: &[RunRecord]) -> Verdict {
    let dqn = find(records, "s01", PolicyKind::Dqn);
    let Some(series) = dqn
        .metrics
        .as_ref()
        .and_then(|m| m.avg_max_q_series.clone())
    else {
        return verdict(false, "no max-Q series recorded".into());
    };
    let smooth = moving_average(&series, 500);
    let bound = 2.0 / (1.0 - 0.9);
    let last = *smooth.last().unwrap();
    // Smoothed series read once per window.
    let samples: Vec<f64> = smooth.iter().skip(499).step_by(500).copied().collect();
    let worst_drop = samples.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
    let monotone = worst_drop <= 0.0;
    let near = (last - bound).abs() <= 0.05 * bound;
    // What full knowledge of the next state could earn, for context.
    let genie = find(records, "s01", PolicyKind::Genie)
        .metrics
        .as_ref()
        .map_or(f64::NAN, |m| m.total_reward / m.slots as f64 / (1.0 - 0.9));
    verdict(
        monotone && near,
        format!(
            "final smoothed avg max-Q {last:.3} (bound {bound:.1}, within 5%: {near}; genie value {genie:.2}); \
             largest drop between windows {worst_drop:.4}"
        ),
    )
}

fn retraining() -> Verdict {
    let started = Instant::now();
    let config = ScenarioConfig::from_toml_str(
        "n_channels = 24\nsegment_len = 8\ndemand = 4\np00 = 0.9\np11 = 0.9\n\
         n_independent = 4\nrho = -1\nenv_seed = 90\ntopology_seed = 90\n",
    )
    .unwrap();
    let phase_two = TransitionMatrix::from_stay(0.1, 0.1).unwrap();
    let hyper = HyperConfig::load(&repo("configs/hyper-full.toml"))
        .unwrap()
        .dqn;
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut env = Environment::build(&config).unwrap();
    let mut agent = train(&mut env, &hyper, &mut rng).unwrap();

    let switch_after = 5_000;
    env.schedule_transition(env.slot() + switch_after, phase_two);
    let monitor = MonitorConfig {
        window_len: 500,
        threshold: 0.0,
        total_slots: 20_000,
    };
    let report = monitor_retrain(&mut agent, &mut env, &monitor, &mut rng).unwrap();

    let mut reference_env = Environment::build(&ScenarioConfig {
        p00: 0.1,
        p11: 0.1,
        env_seed: 92,
        ..config
    })
    .unwrap();
    let mut imp = ImprovidentPolicy::new(&reference_env).unwrap();
    let reference = run_evaluation(&mut imp, &mut reference_env, 10_000, 0.9, 0.5).unwrap();
    let reference_mean = reference.total_reward / 10_000.0;
    let tail = &report.rewards[report.rewards.len() - monitor.window_len..];
    let tail_mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let retrains = report.retrain_after.len();
    let secs = started.elapsed().as_secs_f64();
    verdict(
        retrains >= 1 && tail_mean >= 0.8 * reference_mean && secs < 900.0,
        format!(
            "{retrains} retrain(s) after greedy slots {:?}; last-window reward/slot {tail_mean:.3} vs \
             Improvident {reference_mean:.3} (ratio {:.3}); {secs:.1} s",
            report.retrain_after,
            tail_mean / reference_mean
        ),
    )
}

fn untimed_csv(records: &[RunRecord]) -> String {
    let mut buf = Vec::new();
    write_csv(records, &mut buf).unwrap();
    String::from_utf8(buf)
        .unwrap()
        .lines()
        .map(|line| {
            let mut rd = csv::ReaderBuilder::new()
                .has_headers(false)
                .from_reader(line.as_bytes());
            let row = rd.records().next().unwrap().unwrap();
            let keep: Vec<_> = row.iter().take(row.len() - TIMING_COLUMNS).collect();
            keep.join("\u{1f}")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn determinism(first: &[RunRecord], plan: &ExperimentPlan) -> Verdict {
    let again = run_experiment(plan, jobs(), None).unwrap();
    let same = untimed_csv(first) == untimed_csv(&again);
    verdict(
        same,
        format!(
            "{} rows re-run, metric columns identical: {same}",
            again.len()
        ),
    )
}

fn report(n: usize, name: &str, v: &Verdict, failed: &mut usize) {
    if !v.pass {
        *failed += 1;
    }
    println!(
        "criterion {n:>2} {:<24} {}  {}",
        name,
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
}

fn main() -> ExitCode {
    let mut failed = 0;
    report(1, "oracle equivalence", &oracle_equivalence(), &mut failed);
    report(2, "gradient correctness", &gradient_check(), &mut failed);
    report(
        3,
        "q-learning convergence",
        &qlearning_convergence(),
        &mut failed,
    );

    let plan = suite_plan();
    let records = run_experiment(&plan, jobs(), None).unwrap();
    for r in records.iter().filter(|r| !r.ok()) {
        println!(
            "  run {} {} failed: {}",
            r.scenario_id,
            r.policy,
            r.error.as_deref().unwrap_or("")
        );
    }
    report(
        4,
        "scenario 1 analogue",
        &scenario_one(&records),
        &mut failed,
    );
    report(5, "high randomness", &high_randomness(), &mut failed);
    report(
        6,
        "interference ordering",
        &interference_ordering(&records, &plan),
        &mut failed,
    );
    report(
        7,
        "metric identities",
        &metric_identities(&records),
        &mut failed,
    );
    report(
        8,
        "learning signal",
        &learning_signal(&records),
        &mut failed,
    );
    report(9, "retraining", &retraining(), &mut failed);
    report(
        10,
        "determinism",
        &determinism(&records, &plan),
        &mut failed,
    );

    println!("{} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
