//! Random hyper-parameter search over seeds and scenarios, with risk-based
//! selection and resumable on-disk results.
//!
//! Output directory layout:
//!
//! ```text
//! sweep_plan.json   the plan as run
//! trials.jsonl      one TrialRow per line, canonical order once complete
//! summary.json      SweepSummary, written when every trial has a row
//! checkpoints/      optional, one file per trial
//! ```

mod summary;

pub use summary::{aggregate, summarize, AggregateRow, BenchmarkTable, RiskSelection, ScenarioSummary, SweepSummary};

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::algorithms::{adapt, algorithm_spec, sample_hparams, AlgorithmId, HParamSchema, HParams, TrainConfig, TrialStatus};
use crate::backbones::{save_checkpoint, BackboneSpec};
use crate::data::{load_dataset, make_synthetic, Domain, LabelAudit, Scenario, ScenarioData, ShiftSpec};
use crate::error::{invalid, Error, Result};
use crate::par;
use crate::report::{metrics, MetricPair};
use crate::rng::{self, Stream};
use crate::selection::{evaluate_risks, DensityRatio, DevConfig, DevDiagnostics, FewShotSet, RiskType, SelectionContext};

pub const PLAN_FILE: &str = "sweep_plan.json";
pub const TRIALS_FILE: &str = "trials.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

/// Where a sweep's domains come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// A dataset manifest; relative paths resolve against the plan file.
    Manifest { path: PathBuf },
    /// Domains 0 (source) and 1 (target) drawn from the generator.
    Synthetic {
        #[serde(default)]
        spec: ShiftSpec,
        #[serde(default)]
        seed: u64,
    },
}

impl DataSource {
    pub fn load(&self, base: &Path) -> Result<(String, BTreeMap<u32, Domain>)> {
        match self {
            Self::Manifest { path } => {
                let p = if path.is_absolute() { path.clone() } else { base.join(path) };
                let domains = load_dataset(&p)?;
                let name = crate::data::read_manifest(&p)?.name;
                Ok((name, domains))
            }
            Self::Synthetic { spec, seed } => {
                let (s, t) = make_synthetic(spec, *seed)?;
                Ok(("synthetic".into(), BTreeMap::from([(0, s), (1, t)])))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// One combo per scenario, chosen on the risk averaged over seeds.
    #[default]
    SeedAveraged,
    /// One combo per seed.
    PerSeed,
}

fn default_combos() -> usize {
    100
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}
fn default_risks() -> Vec<RiskType> {
    RiskType::ALL.to_vec()
}
fn default_true() -> bool {
    true
}
fn default_fewshot() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub algorithm: AlgorithmId,
    pub data: DataSource,
    /// `"src:tgt"` domain pairs.
    pub scenarios: Vec<String>,
    #[serde(default = "default_combos")]
    pub n_combos: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub backbone: BackboneSpec,
    #[serde(default)]
    pub train: TrainConfig,
    /// Overrides the registry ranges (names must match).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<HParamSchema>,
    /// Seeds the hyper-parameter draws and the few-shot set.
    #[serde(default)]
    pub search_seed: u64,
    #[serde(default)]
    pub selection: SelectionMode,
    #[serde(default = "default_risks")]
    pub risks: Vec<RiskType>,
    /// Score every trial on the labeled target test split.
    #[serde(default = "default_true")]
    pub evaluate_target: bool,
    #[serde(default = "default_fewshot")]
    pub fewshot_per_class: usize,
    #[serde(default)]
    pub dev: DevConfig,
    /// Trials in flight at once; all cores when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub save_checkpoints: bool,
}

impl SweepPlan {
    pub fn new(algorithm: AlgorithmId, data: DataSource, scenarios: Vec<String>, backbone: BackboneSpec) -> Self {
        Self {
            algorithm,
            data,
            scenarios,
            n_combos: default_combos(),
            seeds: default_seeds(),
            backbone,
            train: TrainConfig::default(),
            schema: None,
            search_seed: 0,
            selection: SelectionMode::default(),
            risks: default_risks(),
            evaluate_target: true,
            fewshot_per_class: default_fewshot(),
            dev: DevConfig::default(),
            workers: None,
            save_checkpoints: false,
        }
    }

    pub fn schema(&self) -> HParamSchema {
        self.schema
            .clone()
            .unwrap_or_else(|| algorithm_spec(self.algorithm).schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_combos == 0 {
            return Err(invalid("n_combos must be >= 1"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("at least one seed required"));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.seeds.len() {
            return Err(invalid("seeds must be distinct"));
        }
        if self.scenarios.is_empty() {
            return Err(invalid("at least one scenario required"));
        }
        if self.risks.is_empty() {
            return Err(invalid("at least one risk required"));
        }
        if self.risks.contains(&RiskType::Fst) && self.fewshot_per_class == 0 {
            return Err(invalid("FST needs fewshot_per_class >= 1"));
        }
        if let Some(schema) = &self.schema {
            let reg = algorithm_spec(self.algorithm).schema;
            let names = |s: &HParamSchema| s.params.iter().map(|p| p.name.clone()).collect::<Vec<_>>();
            if names(schema) != names(&reg) {
                return Err(invalid(format!(
                    "schema for {} must list {:?}",
                    self.algorithm,
                    names(&reg)
                )));
            }
            if let Some(p) = schema.params.iter().find(|p| !(p.low > 0.0 && p.low <= p.high)) {
                return Err(invalid(format!("range of {} is empty or non-positive", p.name)));
            }
        }
        self.backbone.validate()?;
        Ok(())
    }

    /// Hyper-parameters of `combo` for `seed`. The draw depends on the
    /// combo only, so every seed of a combo shares its values.
    pub fn hparams(&self, combo: usize, seed: u64) -> Result<HParams> {
        let mut r = rng::indexed(self.search_seed, Stream::HParams, combo as u64);
        sample_hparams(&self.schema(), seed, &mut r)
    }

    fn parsed_scenarios(&self, dataset: &str) -> Result<Vec<Scenario>> {
        let v: Vec<Scenario> = self
            .scenarios
            .iter()
            .map(|s| Scenario::parse(dataset, s))
            .collect::<Result<_>>()?;
        let mut keys: Vec<String> = v.iter().map(|s| s.to_string()).collect();
        keys.sort();
        keys.dedup();
        if keys.len() != v.len() {
            return Err(invalid("scenarios must be distinct"));
        }
        Ok(v)
    }
}

/// Outcome of one (scenario, combo, seed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub scenario: String,
    pub combo: usize,
    pub seed: u64,
    pub hparams: HParams,
    #[serde(flatten)]
    pub status: TrialStatus,
    pub epochs_run: usize,
    pub final_losses: BTreeMap<String, f64>,
    pub risks: BTreeMap<RiskType, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub risk_failures: BTreeMap<RiskType, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<DevDiagnostics>,
    /// Final-epoch metrics on the target test split.
    pub target: Option<MetricPair>,
    /// Final-epoch metrics on the source test split.
    pub source: Option<MetricPair>,
    /// Target-label reads during training and SRC/DEV evaluation.
    pub unsupervised_label_reads: u64,
    /// Target-label reads by FST, TGT and target scoring.
    #[serde(default)]
    pub evaluation_label_reads: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl TrialRow {
    fn key(&self) -> (String, usize, u64) {
        (self.scenario.clone(), self.combo, self.seed)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Keep rows already in `trials.jsonl`.
    pub resume: bool,
    /// Stop after this many new trials (the run is then incomplete).
    pub max_new_trials: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    /// Rows in canonical order.
    pub rows: Vec<TrialRow>,
    /// Present once every trial has a row.
    pub summary: Option<SweepSummary>,
}

impl SweepOutcome {
    pub fn failed_trials(&self) -> usize {
        self.rows.iter().filter(|r| r.status.is_failed()).count()
    }
}

struct Prepared {
    data: ScenarioData,
    fewshot: Option<FewShotSet>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn rows_to_jsonl(rows: &[TrialRow]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Rows of an existing `trials.jsonl`; unreadable lines (e.g. a write cut
/// short) are dropped so the trial runs again.
pub fn read_trials(path: &Path) -> Result<Vec<TrialRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(r) = serde_json::from_str::<TrialRow>(&line) {
            rows.push(r);
        }
    }
    Ok(rows)
}

fn run_trial(plan: &SweepPlan, prep: &Prepared, combo: usize, seed: u64, out: &Path) -> Result<TrialRow> {
    let hp = plan.hparams(combo, seed)?;
    let audit = LabelAudit::new();
    let m = adapt(plan.algorithm, &prep.data, &audit, &plan.backbone, &hp, &plan.train)?;
    let scenario = prep.data.scenario.to_string();
    let unsup: Vec<RiskType> = plan.risks.iter().copied().filter(|r| !r.reads_target_labels()).collect();
    let sup: Vec<RiskType> = plan.risks.iter().copied().filter(|r| r.reads_target_labels()).collect();
    let ctx = SelectionContext {
        data: &prep.data,
        audit: &audit,
        fewshot: None,
        ratio_model: DensityRatio::Fitted(plan.dev.clone()),
        seed,
    };
    let mut risks = evaluate_risks(combo, &m.network, &m.status, &unsup, &ctx);
    let unsupervised_label_reads = audit.take();

    let eval_audit = LabelAudit::new();
    let ctx = SelectionContext {
        audit: &eval_audit,
        fewshot: prep.fewshot.as_ref(),
        ..ctx
    };
    let labeled = evaluate_risks(combo, &m.network, &m.status, &sup, &ctx);
    risks.values.extend(labeled.values);
    risks.failures.extend(labeled.failures);

    let ok = !m.status.is_failed();
    let k = prep.data.num_classes();
    let target = if plan.evaluate_target && ok {
        let tt = prep.data.target_test(&eval_audit);
        Some(metrics(tt.labels(), &m.network.predict(tt.samples())?, k)?)
    } else {
        None
    };
    let source = if ok {
        let st = &prep.data.source.test;
        Some(metrics(st.labels(), &m.network.predict(st.samples())?, k)?)
    } else {
        None
    };
    let evaluation_label_reads = eval_audit.take();
    let checkpoint = if plan.save_checkpoints {
        let name = format!(
            "{}-{}_c{combo:03}_s{seed}.ckpt",
            prep.data.scenario.source, prep.data.scenario.target
        );
        let dir = out.join("checkpoints");
        fs::create_dir_all(&dir)?;
        save_checkpoint(&dir.join(&name), &m.to_checkpoint())?;
        Some(format!("checkpoints/{name}"))
    } else {
        None
    };
    Ok(TrialRow {
        scenario,
        combo,
        seed,
        hparams: hp,
        epochs_run: m.log.len(),
        final_losses: m.log.last().map(|e| e.losses.clone()).unwrap_or_default(),
        status: m.status,
        risks: risks.values,
        risk_failures: risks.failures,
        dev: risks.dev,
        target,
        source,
        unsupervised_label_reads,
        evaluation_label_reads,
        checkpoint,
    })
}

/// Runs (or resumes) `plan`, writing into `out`. Relative data paths in
/// the plan resolve against `plan_dir`.
pub fn run_sweep(plan: &SweepPlan, plan_dir: &Path, out: &Path, opts: &RunOptions) -> Result<SweepOutcome> {
    plan.validate()?;
    fs::create_dir_all(out)?;
    let plan_path = out.join(PLAN_FILE);
    let plan_json = serde_json::to_vec_pretty(plan)?;
    let trials_path = out.join(TRIALS_FILE);
    if opts.resume && plan_path.exists() {
        let prev: SweepPlan = serde_json::from_slice(&fs::read(&plan_path)?)?;
        if &prev != plan {
            return Err(Error::Config(format!(
                "{} holds a different plan; refusing to resume",
                plan_path.display()
            )));
        }
    }
    write_atomic(&plan_path, &plan_json)?;

    let (dataset, domains) = plan.data.load(plan_dir)?;
    let scenarios = plan.parsed_scenarios(&dataset)?;
    let prepared: Vec<Prepared> = scenarios
        .into_iter()
        .map(|sc| {
            let data = ScenarioData::from_domains(&domains, sc)?;
            let fewshot = if plan.risks.contains(&RiskType::Fst) {
                let a = LabelAudit::new();
                Some(FewShotSet::draw(data.target_train(&a), plan.fewshot_per_class, plan.search_seed)?)
            } else {
                None
            };
            Ok(Prepared { data, fewshot })
        })
        .collect::<Result<_>>()?;

    let mut all = Vec::new();
    for (si, p) in prepared.iter().enumerate() {
        for combo in 0..plan.n_combos {
            for &seed in &plan.seeds {
                all.push((si, p.data.scenario.to_string(), combo, seed));
            }
        }
    }
    let mut done: BTreeMap<(String, usize, u64), TrialRow> = BTreeMap::new();
    if opts.resume {
        for r in read_trials(&trials_path)? {
            done.insert(r.key(), r);
        }
    }
    done.retain(|k, _| all.iter().any(|(_, s, c, sd)| (s, *c, *sd) == (&k.0, k.1, k.2)));
    let order = |rows: &BTreeMap<(String, usize, u64), TrialRow>| -> Vec<TrialRow> {
        all.iter()
            .filter_map(|(_, s, c, sd)| rows.get(&(s.clone(), *c, *sd)).cloned())
            .collect()
    };
    write_atomic(&trials_path, &rows_to_jsonl(&order(&done))?)?;

    let mut pending: Vec<_> = all
        .iter()
        .filter(|(_, s, c, sd)| !done.contains_key(&(s.clone(), *c, *sd)))
        .cloned()
        .collect();
    if let Some(k) = opts.max_new_trials {
        pending.truncate(k);
    }
    let writer = Mutex::new(OpenOptions::new().append(true).open(&trials_path)?);
    let results: Vec<Result<TrialRow>> = par::with_threads(plan.workers, || {
        par::map(pending.len(), |i| {
            let (si, _, combo, seed) = &pending[i];
            let row = run_trial(plan, &prepared[*si], *combo, *seed, out)?;
            let mut line = serde_json::to_vec(&row)?;
            line.push(b'\n');
            let mut w = writer.lock().expect("trial log writer");
            w.write_all(&line)?;
            w.flush()?;
            Ok(row)
        })
    });
    drop(writer);
    for r in results {
        let r = r?;
        done.insert(r.key(), r);
    }
    let rows = order(&done);
    if rows.len() < all.len() {
        return Ok(SweepOutcome { rows, summary: None });
    }
    write_atomic(&trials_path, &rows_to_jsonl(&rows)?)?;
    let summary = summarize(plan, &dataset, &rows)?;
    let mut bytes = serde_json::to_vec_pretty(&summary)?;
    bytes.push(b'\n');
    write_atomic(&out.join(SUMMARY_FILE), &bytes)?;
    Ok(SweepOutcome {
        rows,
        summary: Some(summary),
    })
}

pub fn load_summary(dir: &Path) -> Result<SweepSummary> {
    let p = dir.join(SUMMARY_FILE);
    if !p.exists() {
        return Err(Error::MissingFile(p));
    }
    Ok(serde_json::from_slice(&fs::read(&p)?)?)
}

/// Trial-level status for callers that only need pass/fail.
pub fn any_failed(rows: &[TrialRow]) -> bool {
    rows.iter().any(|r| matches!(r.status, TrialStatus::Failed { .. }))
}

#[cfg(test)]
mod tests;
