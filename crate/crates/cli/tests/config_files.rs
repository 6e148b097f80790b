use std::path::PathBuf;

use mulsmo_cli::commands::guidance_profile;
use mulsmo_core::guidance::GuidanceConfig;

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Set `MULSMO_BLESS=1` to rewrite the shipped schemas after a config change.
#[test]
fn shipped_schemas_match_config_types() {
    let dir = repo_root().join("schemas");
    let bless = std::env::var("MULSMO_BLESS").is_ok_and(|v| v == "1");
    for (name, text) in mulsmo_cli::schemas::all() {
        let path = dir.join(name);
        if bless {
            std::fs::write(&path, &text).unwrap();
            continue;
        }
        let shipped = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
        assert_eq!(shipped, text, "{name} is stale; rerun with MULSMO_BLESS=1");
    }
}

#[test]
fn shipped_profiles_equal_builtin_defaults() {
    let dir = repo_root().join("profiles");
    let generation = GuidanceConfig::load(&dir.join("generation.json")).unwrap();
    let transfer = GuidanceConfig::load(&dir.join("transfer.json")).unwrap();
    assert_eq!(generation, GuidanceConfig::generation());
    assert_eq!(transfer, GuidanceConfig::transfer());
    assert_eq!((generation.steps, generation.w_c, generation.w_s, generation.tau), (50, 15.0, 1.6, -0.2));
    assert_eq!((transfer.steps, transfer.w_s, transfer.tau), (30, 6.5, -0.4));
}

#[test]
fn named_profiles_resolve() {
    assert_eq!(guidance_profile(None, "generation").unwrap(), GuidanceConfig::generation());
    assert_eq!(guidance_profile(Some("transfer"), "generation").unwrap(), GuidanceConfig::transfer());
    let path = repo_root().join("profiles/transfer.json");
    assert_eq!(guidance_profile(path.to_str(), "generation").unwrap(), GuidanceConfig::transfer());
}

#[test]
fn unknown_profile_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    let mut doc = serde_json::to_value(GuidanceConfig::generation()).unwrap();
    doc["w_x"] = serde_json::json!(1.0);
    std::fs::write(&path, doc.to_string()).unwrap();
    let err = guidance_profile(path.to_str(), "generation").unwrap_err();
    assert_eq!(mulsmo_cli::exit_code(&err), 2, "{err}");
}
