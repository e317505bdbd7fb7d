//! The scenario files shipped in `scenarios/` match the built-in generators.
//! Run with `UNCLOC_BLESS=1` to regenerate them.

use std::path::PathBuf;

use uncloc::eval::scenario::{builtin_scenarios, write_builtin_scenarios, ScenarioConfig};

fn shipped() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn shipped_scenarios_match_generators() {
    if std::env::var_os("UNCLOC_BLESS").is_some() {
        write_builtin_scenarios(shipped()).unwrap();
    }
    let fresh = tempfile::tempdir().unwrap();
    write_builtin_scenarios(fresh.path()).unwrap();
    let mut names = vec!["map.txt", "trajectory.csv"];
    names.extend(builtin_scenarios().iter().map(|(n, _)| *n));
    for name in names {
        let want = std::fs::read_to_string(fresh.path().join(name)).unwrap();
        let got =
            std::fs::read_to_string(shipped().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(got, want, "{name} is stale; rerun with UNCLOC_BLESS=1");
    }
}

#[test]
fn shipped_configs_load() {
    for (name, cfg) in builtin_scenarios() {
        let loaded = ScenarioConfig::load(shipped().join(name)).unwrap();
        assert_eq!(loaded.mode, cfg.mode);
        assert_eq!(loaded.ablate, cfg.ablate);
        let (_, traj) = loaded.load_inputs().unwrap();
        assert!(traj.len() >= 2);
    }
}
