//! Configuration parsing, merging and validation through the public API.

use fbis_cli::config::{LsmcSettings, MAX_SEED};
use fbis_cli::output::{write_report_csv, REPORT_HEADER};
use fbis_cli::{parse_config, ConfigError, Experiment, ExperimentConfig, RunError};
use proptest::prelude::*;

#[test]
fn bare_document_gives_the_defaults() {
    for e in Experiment::ALL {
        let c = parse_config(&format!("experiment = \"{}\"\n", e.name()), &[]).unwrap();
        assert_eq!(c, ExperimentConfig::defaults(e), "{}", e.name());
    }
}

#[test]
fn committor_worked_example_values() {
    let c = parse_config("experiment = \"committor\"", &[]).unwrap();
    let s = c.committor.as_ref().unwrap();
    assert_eq!((s.d, s.a, s.c, s.r), (2, 1.0, 3.0, 2.0));
    let LsmcSettings { dt, basis_count, trajectories, delta, .. } = c.lsmc().clone();
    assert_eq!((dt, basis_count, trajectories, delta), (0.005, 5, 1000, 1.0));
}

#[test]
fn more_basis_functions_than_trajectories_is_rejected() {
    let e = parse_config("experiment = \"committor\"\n[lsmc]\nbasis_count = 10\ntrajectories = 5\n", &[]).unwrap_err();
    match &e {
        ConfigError::Range { key, message } => {
            assert_eq!(key, "lsmc.basis_count");
            assert!(message.contains("K = 10") && message.contains("M = 5"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(RunError::from(e).exit_code(), 2);
}

#[test]
fn unknown_keys_are_named_with_their_section() {
    let e = parse_config("experiment = \"committor\"\n[lsmc]\nbasis_cnt = 3\n", &[]).unwrap_err();
    assert!(matches!(&e, ConfigError::UnknownKey(k) if k == "lsmc.basis_cnt"), "{e}");
    // a section that the experiment does not use is unknown too
    let e = parse_config("experiment = \"committor\"\n[shooting]\ndt = 0.1\n", &[]).unwrap_err();
    assert!(matches!(&e, ConfigError::UnknownKey(k) if k == "shooting"), "{e}");
}

#[test]
fn type_errors_report_the_key_path() {
    let e = parse_config("experiment = \"ou_lsmc\"\n[ou]\nsigma = \"large\"\n", &[]).unwrap_err();
    match e {
        ConfigError::Type { key, expected, found } => {
            assert_eq!(key, "ou.sigma");
            assert_eq!((expected.as_str(), found.as_str()), ("float", "string"));
        }
        other => panic!("unexpected {other:?}"),
    }
    let e = parse_config("experiment = \"committor\"\n[lsmc]\ntrajectories = 2.5\n", &[]).unwrap_err();
    assert!(matches!(&e, ConfigError::Type { key, .. } if key == "lsmc.trajectories"), "{e}");
}

#[test]
fn bad_strings_and_missing_experiment() {
    assert!(matches!(parse_config("seed = 3", &[]), Err(ConfigError::Missing(k)) if k == "experiment"));
    assert!(matches!(parse_config("experiment = \"lorenz\"", &[]), Err(ConfigError::Range { key, .. }) if key == "experiment"));
    let e = parse_config("experiment = \"committor\"", &["lsmc.z_mode=explicit".into()]).unwrap_err();
    assert!(matches!(&e, ConfigError::Range { key, .. } if key == "lsmc.z_mode"), "{e}");
    assert!(matches!(parse_config("experiment = [", &[]), Err(ConfigError::Syntax(_))));
    assert!(matches!(parse_config("experiment = \"committor\"", &["seed".into()]), Err(ConfigError::Override(_))));
}

#[test]
fn seeds_must_fit_a_toml_integer() {
    let mut c = ExperimentConfig::defaults(Experiment::GirsanovCheck);
    c.seed = MAX_SEED + 1;
    assert!(matches!(c.validate(), Err(ConfigError::Range { key, .. }) if key == "seed"));
}

#[test]
fn negative_counts_are_range_errors() {
    let e = parse_config("experiment = \"committor\"\n[lsmc]\ntrajectories = -4\n", &[]).unwrap_err();
    assert!(matches!(&e, ConfigError::Range { key, .. } if key == "lsmc.trajectories"), "{e}");
}

#[test]
fn overrides_win_over_the_document() {
    let c = parse_config("experiment = \"ou_lsmc\"\nseed = 4\n[lsmc]\ntrajectories = 300\n", &["lsmc.trajectories=700".into(), "seed=9".into()]).unwrap();
    assert_eq!((c.seed, c.lsmc().trajectories), (9, 700));
}

#[test]
fn empty_estimate_table_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("report.csv");
    write_report_csv(&p, &[]).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), format!("{}\n", REPORT_HEADER.join(",")));
}

fn any_experiment() -> impl Strategy<Value = Experiment> {
    (0..Experiment::ALL.len()).prop_map(|i| Experiment::ALL[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialised_configurations_parse_back_unchanged(
        e in any_experiment(),
        seed in 0..=MAX_SEED,
        threads in 0usize..16,
        trajectories in 10usize..100_000,
        ridge in 0.0f64..1.0,
        width in 1e-3f64..10.0,
        tolerance in 1e-4f64..1.0,
    ) {
        let mut c = ExperimentConfig::defaults(e);
        c.seed = seed;
        c.threads = threads;
        if let Some(l) = c.lsmc.as_mut() {
            l.trajectories = trajectories;
            l.ridge = ridge;
            l.basis_width = width;
        }
        if let Some(o) = c.ou.as_mut() {
            o.tolerance = tolerance;
        }
        if let Some(s) = c.committor.as_mut() {
            s.tolerance = tolerance;
        }
        prop_assert!(c.validate().is_ok());
        let again = parse_config(&c.to_toml(), &[]).unwrap();
        prop_assert_eq!(again, c);
    }
}
