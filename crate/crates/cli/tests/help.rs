use std::fs;
use std::path::Path;
use std::process::Command;

const COMMANDS: &[&[&str]] = &[
    &[],
    &["case"],
    &["case", "validate"],
    &["pf"],
    &["pf", "dc"],
    &["pf", "ac"],
    &["se"],
    &["se", "simulate"],
    &["se", "run"],
    &["se", "baddata"],
    &["se", "observe"],
    &["se", "attack"],
    &["outage"],
    &["outage", "omp"],
    &["outage", "exhaustive"],
    &["signal"],
    &["signal", "phasor"],
    &["signal", "modes"],
    &["ed"],
    &["opf"],
    &["uc"],
    &["dr"],
    &["curtail"],
    &["pev"],
    &["pev", "central"],
    &["pev", "distributed"],
];

// Set UPDATE_GOLDEN=1 to rewrite the expected output.
#[test]
fn help_matches_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let mut stale = Vec::new();
    for path in COMMANDS {
        let out = Command::new(env!("CARGO_BIN_EXE_gridsp"))
            .args(*path)
            .arg("--help")
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("--out-dir") && text.contains("-h, --help"), "{path:?}");
        let name = std::iter::once("gridsp")
            .chain(path.iter().copied())
            .collect::<Vec<_>>()
            .join("_");
        let file = golden.join(format!("{name}.txt"));
        if update {
            fs::create_dir_all(&golden).unwrap();
            fs::write(&file, &text).unwrap();
        } else if fs::read_to_string(&file).ok().as_deref() != Some(text.as_str()) {
            stale.push(name);
        }
    }
    assert!(stale.is_empty(), "help differs from golden for {stale:?}");
}
