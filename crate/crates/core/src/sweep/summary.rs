use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{SelectionMode, SweepPlan, TrialRow};
use crate::algorithms::AlgorithmId;
use crate::backbones::BackboneKind;
use crate::error::{invalid, Result};
use crate::selection::{argmin_risk, RiskType, ETA_DEFINITION};

/// The choice made under one risk for one scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskSelection {
    pub risk: RiskType,
    /// Selected combo; one entry per seed in per-seed mode.
    pub combos: Vec<usize>,
    /// Seed-averaged risk of the selected combo (seed-averaged mode).
    pub mean_risk: Option<f64>,
    /// Target macro-F1 of the selected trials, in seed order.
    pub per_seed_f1: Vec<f64>,
    pub f1_mean: Option<f64>,
    /// Population standard deviation over seeds.
    pub f1_std: Option<f64>,
    pub accuracy_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub selections: Vec<RiskSelection>,
    pub failed_trials: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub algorithm: AlgorithmId,
    pub dataset: String,
    pub backbone: BackboneKind,
    pub n_combos: usize,
    pub seeds: Vec<u64>,
    pub selection: SelectionMode,
    pub scenarios: Vec<ScenarioSummary>,
    pub trials: usize,
    pub failed_trials: usize,
    /// Target-label reads outside FST/TGT and target scoring; 0 unless the
    /// method trains on target labels.
    pub unsupervised_label_reads: u64,
    pub eta_definition: String,
}

impl SweepSummary {
    pub fn selection(&self, scenario: &str, risk: RiskType) -> Option<&RiskSelection> {
        self.scenarios
            .iter()
            .find(|s| s.scenario == scenario)?
            .selections
            .iter()
            .find(|r| r.risk == risk)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn score(risk: RiskType, combos: Vec<usize>, mean_risk: Option<f64>, picked: &[&TrialRow]) -> RiskSelection {
    let f1: Option<Vec<f64>> = picked.iter().map(|r| r.target.map(|m| m.macro_f1)).collect();
    let acc: Option<Vec<f64>> = picked.iter().map(|r| r.target.map(|m| m.accuracy)).collect();
    let (f1_mean, f1_std) = match f1.as_deref() {
        Some(v) if !v.is_empty() => {
            let (m, s) = mean_std(v);
            (Some(m), Some(s))
        }
        _ => (None, None),
    };
    RiskSelection {
        risk,
        combos,
        mean_risk,
        per_seed_f1: f1.unwrap_or_default(),
        f1_mean,
        f1_std,
        accuracy_mean: acc.filter(|v| !v.is_empty()).map(|v| mean_std(&v).0),
        error: None,
    }
}

fn failed_selection(risk: RiskType, why: String) -> RiskSelection {
    RiskSelection {
        risk,
        combos: Vec::new(),
        mean_risk: None,
        per_seed_f1: Vec::new(),
        f1_mean: None,
        f1_std: None,
        accuracy_mean: None,
        error: Some(why),
    }
}

fn select(plan: &SweepPlan, risk: RiskType, rows: &[&TrialRow]) -> RiskSelection {
    let get = |c: usize, s: u64| rows.iter().find(|r| r.combo == c && r.seed == s).copied();
    match plan.selection {
        SelectionMode::SeedAveraged => {
            let means: Vec<Option<f64>> = (0..plan.n_combos)
                .map(|c| {
                    let v: Option<Vec<f64>> = plan
                        .seeds
                        .iter()
                        .map(|&s| get(c, s).and_then(|r| r.risks.get(&risk).copied()))
                        .collect();
                    v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect();
            match argmin_risk(&means) {
                Ok(c) => {
                    let picked: Vec<&TrialRow> = plan.seeds.iter().filter_map(|&s| get(c, s)).collect();
                    score(risk, vec![c], means[c], &picked)
                }
                Err(e) => failed_selection(risk, e.to_string()),
            }
        }
        SelectionMode::PerSeed => {
            let mut combos = Vec::new();
            let mut picked = Vec::new();
            for &s in &plan.seeds {
                let vals: Vec<Option<f64>> = (0..plan.n_combos)
                    .map(|c| get(c, s).and_then(|r| r.risks.get(&risk).copied()))
                    .collect();
                match argmin_risk(&vals) {
                    Ok(c) => {
                        combos.push(c);
                        picked.extend(get(c, s));
                    }
                    Err(e) => return failed_selection(risk, format!("seed {s}: {e}")),
                }
            }
            score(risk, combos, None, &picked)
        }
    }
}

/// Per-scenario selections under every risk of the plan.
pub fn summarize(plan: &SweepPlan, dataset: &str, rows: &[TrialRow]) -> Result<SweepSummary> {
    let mut scenarios = Vec::new();
    for sc in &plan.scenarios {
        let key = crate::data::Scenario::parse(dataset, sc)?.to_string();
        let mine: Vec<&TrialRow> = rows.iter().filter(|r| r.scenario == key).collect();
        let selections = plan.risks.iter().map(|&r| select(plan, r, &mine)).collect();
        scenarios.push(ScenarioSummary {
            scenario: key,
            selections,
            failed_trials: mine.iter().filter(|r| r.status.is_failed()).count(),
        });
    }
    Ok(SweepSummary {
        algorithm: plan.algorithm,
        dataset: dataset.to_string(),
        backbone: plan.backbone.kind,
        n_combos: plan.n_combos,
        seeds: plan.seeds.clone(),
        selection: plan.selection,
        trials: rows.len(),
        failed_trials: rows.iter().filter(|r| r.status.is_failed()).count(),
        unsupervised_label_reads: rows.iter().map(|r| r.unsupervised_label_reads).sum(),
        scenarios,
        eta_definition: ETA_DEFINITION.into(),
    })
}

/// One risk's row: `(mean, std)` per scenario and the mean over scenarios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub risk: RiskType,
    pub per_scenario: Vec<Option<(f64, f64)>>,
    pub average: Option<f64>,
}

/// Selected-model macro-F1 of one method over a dataset's scenarios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub dataset: String,
    pub algorithm: AlgorithmId,
    pub backbone: BackboneKind,
    pub scenarios: Vec<String>,
    pub rows: Vec<AggregateRow>,
}

/// Combines sweeps of one method and backbone on one dataset.
pub fn aggregate(results: &[SweepSummary]) -> Result<BenchmarkTable> {
    let first = results.first().ok_or_else(|| invalid("nothing to aggregate"))?;
    for r in results {
        if r.backbone != first.backbone {
            return Err(invalid(format!(
                "mixed backbones: {} and {}",
                first.backbone, r.backbone
            )));
        }
        if r.algorithm != first.algorithm {
            return Err(invalid(format!(
                "mixed algorithms: {} and {}",
                first.algorithm, r.algorithm
            )));
        }
        if r.dataset != first.dataset {
            return Err(invalid(format!("mixed datasets: {} and {}", first.dataset, r.dataset)));
        }
    }
    let scen: Vec<&super::ScenarioSummary> = results.iter().flat_map(|r| &r.scenarios).collect();
    let mut risks: Vec<RiskType> = scen.iter().flat_map(|s| s.selections.iter().map(|x| x.risk)).collect();
    risks.sort();
    risks.dedup();
    let mut by_risk: BTreeMap<RiskType, AggregateRow> = BTreeMap::new();
    for risk in risks {
        let per: Vec<Option<(f64, f64)>> = scen
            .iter()
            .map(|s| {
                let sel = s.selections.iter().find(|x| x.risk == risk)?;
                Some((sel.f1_mean?, sel.f1_std?))
            })
            .collect();
        let vals: Option<Vec<f64>> = per.iter().map(|p| p.map(|x| x.0)).collect();
        let average = vals.map(|v| v.iter().sum::<f64>() / v.len() as f64);
        by_risk.insert(
            risk,
            AggregateRow {
                risk,
                per_scenario: per,
                average,
            },
        );
    }
    Ok(BenchmarkTable {
        dataset: first.dataset.clone(),
        algorithm: first.algorithm,
        backbone: first.backbone,
        scenarios: scen.iter().map(|s| s.scenario.clone()).collect(),
        rows: by_risk.into_values().collect(),
    })
}
