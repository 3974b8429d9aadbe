use std::path::PathBuf;

use mocha::fixtures;
use mocha::momdp::{validate, MomdpSpec};

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

#[test]
fn shipped_json_matches_builders() {
    for (name, momdp) in fixtures::json_files() {
        let path = dir().join(name);
        let on_disk = MomdpSpec::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(validate(&on_disk).is_valid(), "{name}");
        assert_eq!(on_disk, momdp.to_spec(), "{name} is stale; run the ignored `regenerate` test");
    }
}

#[test]
#[ignore]
fn regenerate() {
    for (name, momdp) in fixtures::json_files() {
        let text = momdp.to_spec().to_json_string().unwrap();
        std::fs::write(dir().join(name), format!("{text}\n")).unwrap();
    }
}
