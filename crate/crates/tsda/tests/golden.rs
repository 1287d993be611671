//! Report tables for a fixed tiny benchmark, compared byte-for-byte with
//! files under `tests/fixtures/golden`. Set `TSDA_BLESS=1` to rewrite them.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

const SPEC: &str = "seed = 1\n[spec]\nchannels = 2\nlength = 16\nsamples_per_class = 10\nclass_frequencies = [1.0, 3.0, 5.0]\n";

const CONFIG: &str = r#"[dataset]
kind = "manifest"
path = "data/manifest.json"

[backbone]
kind = "cnn1d"
input_channels = 2
num_classes = 3
width = 4
feature_dim = 6

[train]
epochs = 2
batch_size = 8
discriminator_hidden = 8

[dev]
epochs = 2
hidden = 8

[sweep]
scenarios = ["0:1", "1:0"]
n_combos = 2
seeds = [1, 2]
search_seed = 1
"#;

const FILES: [&str; 5] = ["summary.md", "summary.csv", "detail.md", "detail.csv", "gaps.md"];

fn tsda(args: &[&str]) {
    let o = Command::new(env!("CARGO_BIN_EXE_tsda")).args(args).output().expect("spawn tsda");
    assert!(o.status.success(), "tsda {args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn report_matches_frozen_fixture() {
    let d = tempfile::tempdir().unwrap();
    let root = d.path();
    fs::write(root.join("synth.toml"), SPEC).unwrap();
    tsda(&["synth", "--spec", s(&root.join("synth.toml")), "--out", s(&root.join("data"))]);
    let cfg = root.join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let runs = root.join("runs");
    for alg in ["source_only", "target_only", "ddc", "dann"] {
        tsda(&["sweep", "--plan", s(&cfg), "--alg", alg, "--out", s(&runs.join(alg))]);
    }
    let rep = root.join("report");
    tsda(&["report", "--in", s(&runs), "--out", s(&rep)]);

    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden");
    if std::env::var_os("TSDA_BLESS").is_some() {
        fs::create_dir_all(&golden).unwrap();
        for f in FILES {
            fs::copy(rep.join(f), golden.join(f)).unwrap();
        }
    }
    for f in FILES {
        let want = fs::read_to_string(golden.join(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        let got = fs::read_to_string(rep.join(f)).unwrap();
        assert_eq!(got, want, "{f} differs from the frozen fixture");
    }
}
