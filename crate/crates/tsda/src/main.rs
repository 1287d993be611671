use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use tsda_core::algorithms::{adapt, AlgorithmId};
use tsda_core::backbones::save_checkpoint;
use tsda_core::config::{RunConfig, SynthConfig};
use tsda_core::data::{load_dataset, make_synthetic, read_manifest, save_dataset, LabelAudit, Scenario, ScenarioData};
use tsda_core::report::{domain_gap, metrics, render_gaps, render_report, DomainGapRow, ScoreScale};
use tsda_core::selection::RiskType;
use tsda_core::sweep::{aggregate, run_sweep, BenchmarkTable, RunOptions, SweepPlan, SweepSummary, SUMMARY_FILE};

const EXIT_VALIDATION: u8 = 2;
const EXIT_TRIAL_FAILURES: u8 = 3;

#[derive(Parser)]
#[command(name = "tsda", version, about = "Domain adaptation benchmark for time-series classification")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a dataset manifest and print per-domain counts.
    Prepare {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train one model with the fixed hyper-parameters of a config file.
    Train {
        #[arg(long)]
        alg: AlgorithmId,
        /// Source and target domain ids, `src:tgt`.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "train_out")]
        out: PathBuf,
    },
    /// Run or resume a hyper-parameter sweep (JSON plan or TOML config).
    Sweep {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        resume: bool,
        /// Output directory; defaults to `sweep_<alg>` next to the plan.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the algorithm of a TOML config.
        #[arg(long)]
        alg: Option<AlgorithmId>,
        /// Stop after this many new trials.
        #[arg(long)]
        max_trials: Option<usize>,
    },
    /// Render tables from every sweep summary under a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic two-domain dataset.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parent(p: &Path) -> PathBuf {
    p.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn prepare(manifest: &Path) -> Result<u8> {
    let m = read_manifest(manifest)?;
    let domains = load_dataset(manifest)?;
    let rows: Vec<_> = domains
        .iter()
        .map(|(id, d)| {
            json!({
                "domain": id,
                "train": d.train.len(),
                "test": d.test.len(),
                "train_class_counts": d.train.class_counts(),
                "test_class_counts": d.test.class_counts(),
            })
        })
        .collect();
    let out = json!({
        "name": m.name,
        "channels": m.channels,
        "classes": m.classes,
        "window_length": m.window_length,
        "domains": rows,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(0)
}

fn train(alg: AlgorithmId, scenario: &str, config: &Path, seed: u64, out: &Path) -> Result<u8> {
    let cfg = RunConfig::load(config)?;
    let (name, domains) = cfg.dataset.load(&parent(config))?;
    let data = ScenarioData::from_domains(&domains, Scenario::parse(&name, scenario)?)?;
    let spec = cfg.backbone.spec()?;
    let hp = cfg.hparams(alg, seed)?;
    let audit = LabelAudit::new();
    let m = adapt(alg, &data, &audit, &spec, &hp, &cfg.train)?;
    let reads = audit.take();

    fs::create_dir_all(out)?;
    save_checkpoint(&out.join("model.ckpt"), &m.to_checkpoint())?;
    let k = data.num_classes();
    let (target, source) = if m.status.is_failed() {
        (None, None)
    } else {
        let eval = LabelAudit::new();
        let tt = data.target_test(&eval);
        let st = &data.source.test;
        (
            Some(metrics(tt.labels(), &m.network.predict(tt.samples())?, k)?),
            Some(metrics(st.labels(), &m.network.predict(st.samples())?, k)?),
        )
    };
    let result = json!({
        "algorithm": alg,
        "scenario": data.scenario.to_string(),
        "dataset": name,
        "seed": seed,
        "hparams": hp,
        "status": m.status,
        "epochs_run": m.log.len(),
        "target": target,
        "source": source,
        "unsupervised_label_reads": reads,
        "checkpoint": "model.ckpt",
    });
    write_json(&out.join("result.json"), &result)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(if m.status.is_failed() { EXIT_TRIAL_FAILURES } else { 0 })
}

fn load_plan(path: &Path, alg: Option<AlgorithmId>) -> Result<SweepPlan> {
    if path.extension().is_some_and(|e| e == "json") {
        let mut p: SweepPlan = serde_json::from_slice(&fs::read(path).with_context(|| format!("reading {}", path.display()))?)
            .map_err(|e| tsda_core::Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(a) = alg {
            p.algorithm = a;
        }
        Ok(p)
    } else {
        Ok(RunConfig::load(path)?.to_plan(alg)?)
    }
}

fn sweep(plan_path: &Path, resume: bool, out: Option<PathBuf>, alg: Option<AlgorithmId>, max: Option<usize>) -> Result<u8> {
    let plan = load_plan(plan_path, alg)?;
    let dir = parent(plan_path);
    let out = out.unwrap_or_else(|| dir.join(format!("sweep_{}", plan.algorithm)));
    let opts = RunOptions {
        resume,
        max_new_trials: max,
    };
    let o = run_sweep(&plan, &dir, &out, &opts)?;
    let failed = o.failed_trials();
    let Some(summary) = o.summary else {
        eprintln!("{} trials recorded in {}; rerun with --resume to finish", o.rows.len(), out.display());
        return Ok(0);
    };
    for sc in &summary.scenarios {
        for sel in &sc.selections {
            let f = sel.f1_mean.map_or("-".into(), |v| format!("{:.2}", 100.0 * v));
            let s = sel.f1_std.map_or("-".into(), |v| format!("{:.2}", 100.0 * v));
            println!("{} {} {}: macro-F1 {f} ± {s} (combos {:?})", summary.algorithm, sc.scenario, sel.risk, sel.combos);
        }
    }
    println!("summary: {}", out.join(SUMMARY_FILE).display());
    if failed > 0 {
        eprintln!("{failed} of {} trials failed", summary.trials);
        return Ok(EXIT_TRIAL_FAILURES);
    }
    Ok(0)
}

fn find_summaries(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            find_summaries(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == SUMMARY_FILE) {
            found.push(p);
        }
    }
    Ok(())
}

/// Mean selected F1 over scenarios, preferring the TGT row.
fn bound(t: &BenchmarkTable) -> Option<f64> {
    [RiskType::Tgt, RiskType::Src]
        .iter()
        .find_map(|r| t.rows.iter().find(|x| x.risk == *r)?.average)
}

fn report(input: &Path, out: &Path) -> Result<u8> {
    if !input.is_dir() {
        bail!(tsda_core::Error::MissingFile(input.to_path_buf()));
    }
    let mut paths = Vec::new();
    find_summaries(input, &mut paths)?;
    let mut groups: BTreeMap<(String, AlgorithmId), Vec<SweepSummary>> = BTreeMap::new();
    for p in &paths {
        let s: SweepSummary = serde_json::from_slice(&fs::read(p)?)
            .map_err(|e| tsda_core::Error::Config(format!("{}: {e}", p.display())))?;
        groups.entry((s.dataset.clone(), s.algorithm)).or_default().push(s);
    }
    let tables: Vec<BenchmarkTable> = groups.values().map(|g| aggregate(g)).collect::<Result<_, _>>()?;
    if let Some(t) = tables.iter().find(|t| t.backbone != tables[0].backbone) {
        bail!(tsda_core::Error::InvalidArgument(format!(
            "one report cannot mix backbones ({} and {})",
            tables[0].backbone, t.backbone
        )));
    }
    let r = render_report(&tables);
    let mut gaps: Vec<DomainGapRow> = Vec::new();
    let datasets: Vec<&String> = groups.keys().map(|k| &k.0).collect();
    for ds in datasets.into_iter().collect::<std::collections::BTreeSet<_>>() {
        let find = |a: AlgorithmId| tables.iter().find(|t| &t.dataset == ds && t.algorithm == a).and_then(bound);
        if let (Some(t), Some(s)) = (find(AlgorithmId::TargetOnly), find(AlgorithmId::SourceOnly)) {
            gaps.push(domain_gap(ds, t, s, ScoreScale::Ratio)?);
        }
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("summary.md"), &r.summary_md)?;
    fs::write(out.join("summary.csv"), &r.summary_csv)?;
    fs::write(out.join("detail.md"), &r.detail_md)?;
    fs::write(out.join("detail.csv"), &r.detail_csv)?;
    fs::write(out.join("gaps.md"), render_gaps(&gaps))?;
    println!("{} sweep summaries, {} tables -> {}", paths.len(), tables.len(), out.display());
    Ok(0)
}

fn synth(spec: &Path, out: &Path) -> Result<u8> {
    let c = SynthConfig::load(spec)?;
    let (s, t) = make_synthetic(&c.spec, c.seed)?;
    let m = save_dataset(out, &c.name, &BTreeMap::from([(0, s), (1, t)]))?;
    println!("{} domains, {} classes -> {}", m.num_domains, m.classes, out.join("manifest.json").display());
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Prepare { manifest } => prepare(&manifest),
        Cmd::Train {
            alg,
            scenario,
            config,
            seed,
            out,
        } => train(alg, &scenario, &config, seed, &out),
        Cmd::Sweep {
            plan,
            resume,
            out,
            alg,
            max_trials,
        } => sweep(&plan, resume, out, alg, max_trials),
        Cmd::Report { input, out } => report(&input, &out),
        Cmd::Synth { spec, out } => synth(&spec, &out),
    }
}

/// Bad input of any kind maps to the validation exit code.
fn exit_code(e: &anyhow::Error) -> u8 {
    use tsda_core::Error::*;
    match e.chain().find_map(|c| c.downcast_ref::<tsda_core::Error>()) {
        Some(
            InvalidArgument(_)
            | Segmentation { .. }
            | Split(_)
            | ShapeMismatch { .. }
            | UnknownClass { .. }
            | MissingFile(_)
            | Format { .. }
            | Config(_)
            | Json(_),
        ) => EXIT_VALIDATION,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
