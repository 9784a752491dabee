use std::path::Path;

use dsa_cli::plan::{parse_config, PolicyKind};
use dsa_cli::report::write_csv;
use dsa_cli::run_experiment;

fn repo(path: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(path)
}

#[test]
fn shipped_hyper_profiles_parse() {
    let full = dsa_cli::HyperConfig::load(&repo("configs/hyper-full.toml")).unwrap();
    assert_eq!(full.dqn, dsa_core::Hyperparams::full());
    assert_eq!(full.dqn.memory_size, 300_000);
    assert_eq!(full.dqn.batch_size, 32);
    assert_eq!(full.dqn.target_sync_freq, 200);
    assert_eq!(full.dqn.gamma, 0.9);
    let desk = dsa_cli::HyperConfig::load(&repo("configs/hyper-desk.toml")).unwrap();
    assert_eq!(desk.dqn, dsa_core::Hyperparams::desk());
}

#[test]
fn shipped_suite_parses_and_round_trips() {
    let plan = parse_config(&repo("configs/suite.toml")).unwrap();
    assert_eq!(plan.scenarios.len(), 10);
    for s in &plan.scenarios {
        assert_eq!(
            (s.config.n_channels, s.config.segment_len, s.config.demand),
            (24, 8, 4)
        );
    }
    let text = plan.to_toml_string().unwrap();
    let again = dsa_cli::ExperimentPlan::from_toml_str(&text, Path::new(".")).unwrap();
    assert_eq!(plan, again);
    parse_config(&repo("configs/smoke.toml")).unwrap();
}

#[test]
fn ten_scenario_sweep_gives_one_row_per_pair_and_csv_reingests_exactly() {
    let mut plan = parse_config(&repo("configs/suite.toml")).unwrap();
    plan.policies = vec![
        PolicyKind::Random,
        PolicyKind::Improvident,
        PolicyKind::Genie,
    ];
    plan.slots = 200;
    let records = run_experiment(&plan, 2, None).unwrap();
    assert_eq!(records.len(), 30);

    let mut buf = Vec::new();
    write_csv(&records, &mut buf).unwrap();
    let mut reader = csv::Reader::from_reader(&buf[..]);
    let rows: Vec<_> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 30);
    for (row, record) in rows.iter().zip(&records) {
        let m = record.metrics.as_ref().unwrap();
        let exact = [
            (9, m.decision_accuracy),
            (10, m.modified_decision_accuracy),
            (12, m.interference),
            (13, m.discounted_return),
            (15, m.total_reward),
        ];
        for (col, value) in exact {
            let parsed: f64 = row[col].parse().unwrap();
            assert_eq!(parsed.to_bits(), value.to_bits(), "column {col}");
        }
        assert_eq!(&row[0], record.scenario_id.as_str());
    }
}
