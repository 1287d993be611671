//! Model selection over trained candidates: source risk, importance-weighted
//! validation risk, few-shot target risk and the target-label oracle.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::algorithms::{CandidateModel, TrialStatus};
use crate::autograd::Graph;
use crate::backbones::Network;
use crate::data::{ScenarioData, TargetView, TimeSeriesDataset};
use crate::error::{invalid, Error, Result};
use crate::losses::bce_logits;
use crate::nn::{Adam, AdamConfig, Mlp, MlpActivation};
use crate::par;
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

const PROB_FLOOR: f64 = 1e-7;
const RATIO_CLAMP: f64 = 1e-6;
const VAR_FLOOR: f64 = 1e-12;

/// How `eta` is formed from the weighted losses; stored in every report.
pub const ETA_DEFINITION: &str = "eta = -Cov(L_w, W) / Var(W), population moments; 0 when Var(W) < 1e-12";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RiskType {
    #[serde(rename = "SRC")]
    Src,
    #[serde(rename = "DEV")]
    Dev,
    #[serde(rename = "FST")]
    Fst,
    #[serde(rename = "TGT")]
    Tgt,
}

impl RiskType {
    pub const ALL: [RiskType; 4] = [Self::Src, Self::Dev, Self::Fst, Self::Tgt];

    /// FST and TGT need target labels; SRC and DEV never touch them.
    pub fn reads_target_labels(self) -> bool {
        matches!(self, Self::Fst | Self::Tgt)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Src => "SRC",
            Self::Dev => "DEV",
            Self::Fst => "FST",
            Self::Tgt => "TGT",
        }
    }
}

impl fmt::Display for RiskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown risk {s:?} (SRC, DEV, FST, TGT)")))
    }
}

/// `-log max(p[y], 1e-7)` per row.
pub fn per_sample_ce(probs: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    if probs.ndim() != 2 || probs.dim(0) != labels.len() {
        return Err(invalid("one label per probability row required"));
    }
    let k = probs.dim(1);
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            if y >= k {
                return Err(invalid(format!("label {y} outside [0, {k})")));
            }
            Ok(-probs.row(i)[y].max(PROB_FLOOR).ln())
        })
        .collect()
}

fn mean_ce(net: &Network, x: &Tensor, labels: &[usize], what: &str) -> Result<f64> {
    if labels.is_empty() {
        return Err(invalid(format!("{what} is empty")));
    }
    let ce = per_sample_ce(&net.probs(x)?, labels)?;
    Ok(ce.iter().sum::<f64>() / ce.len() as f64)
}

/// Mean cross-entropy on the source test split.
pub fn src_risk(net: &Network, source_test: &TimeSeriesDataset) -> Result<f64> {
    mean_ce(net, source_test.samples(), source_test.labels(), "source test set")
}

/// Mean cross-entropy on the target test split (reads target labels).
pub fn tgt_risk(net: &Network, target_test: TargetView<'_>) -> Result<f64> {
    if target_test.is_empty() {
        return Err(invalid("target test set is empty"));
    }
    mean_ce(net, target_test.samples(), target_test.labels(), "target test set")
}

/// A few labeled target-train samples shared by all candidates.
#[derive(Clone, Debug, PartialEq)]
pub struct FewShotSet {
    pub samples: Tensor,
    pub labels: Vec<usize>,
}

impl FewShotSet {
    /// Up to `per_class` samples of every class, drawn without replacement.
    pub fn draw(target_train: TargetView<'_>, per_class: usize, seed: u64) -> Result<Self> {
        if per_class == 0 {
            return Err(invalid("few-shot set needs at least one sample per class"));
        }
        let labels = target_train.labels();
        let mut rng = rng::stream(seed, Stream::FewShot);
        let mut idx = Vec::new();
        for k in 0..target_train.num_classes() {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
            let perm = rng::permutation(&mut rng, members.len());
            idx.extend(perm.iter().take(per_class).map(|&p| members[p]));
        }
        idx.sort_unstable();
        Ok(Self {
            samples: target_train.samples().select_rows(&idx),
            labels: idx.iter().map(|&i| labels[i]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn fst_risk(net: &Network, fewshot: &FewShotSet) -> Result<f64> {
    mean_ce(net, &fewshot.samples, &fewshot.labels, "few-shot set")
}

/// Domain discriminator settings for DEV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DevConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for DevConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            epochs: 100,
            batch_size: 32,
            adam: AdamConfig::default(),
        }
    }
}

/// Source of `r(z)`, the probability that a feature comes from the source.
#[derive(Clone, Debug, PartialEq)]
pub enum DensityRatio {
    /// Train a fresh discriminator per candidate.
    Fitted(DevConfig),
    /// `r(z) = p` everywhere.
    Constant(f64),
}

impl Default for DensityRatio {
    fn default() -> Self {
        Self::Fitted(DevConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevDiagnostics {
    /// `N_s^tr / N_t^tr`.
    pub ratio: f64,
    pub eta: f64,
    pub mean_weight: f64,
    pub weight_variance: f64,
    /// Final discriminator BCE; absent for a constant ratio.
    pub discriminator_loss: Option<f64>,
}

fn moments(a: &[f64], b: &[f64]) -> (f64, f64, f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
    let var = b.iter().map(|y| (y - mb) * (y - mb)).sum::<f64>() / n;
    (ma, mb, cov, var)
}

/// Control-variate weighted risk from discriminator outputs `r` and
/// per-sample losses on the source test split.
pub fn dev_estimate(ratio: f64, r: &[f64], losses: &[f64]) -> Result<(f64, DevDiagnostics)> {
    if r.len() != losses.len() || r.is_empty() {
        return Err(invalid("DEV needs one discriminator output per loss"));
    }
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(invalid(format!("sample-size ratio {ratio} must be > 0")));
    }
    let w: Vec<f64> = r
        .iter()
        .map(|&p| {
            let p = p.clamp(RATIO_CLAMP, 1.0 - RATIO_CLAMP);
            ratio * (1.0 - p) / p
        })
        .collect();
    let lw: Vec<f64> = w.iter().zip(losses).map(|(a, b)| a * b).collect();
    let (mean_lw, mean_w, cov, var) = moments(&lw, &w);
    let eta = if var < VAR_FLOOR { 0.0 } else { -cov / var };
    let risk = mean_lw + eta * mean_w - eta;
    if !risk.is_finite() {
        return Err(Error::Selection("DEV risk is not finite".into()));
    }
    Ok((
        risk,
        DevDiagnostics {
            ratio,
            eta,
            mean_weight: mean_w,
            weight_variance: var,
            discriminator_loss: None,
        },
    ))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fits `r` on source (1) vs target (0) features and returns `r` on `query`.
fn fit_discriminator(zs: &Tensor, zt: &Tensor, query: &Tensor, cfg: &DevConfig, seed: u64) -> Result<(Vec<f64>, f64)> {
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(invalid("DEV discriminator needs epochs, batch size and width >= 1"));
    }
    let d = zs.dim(1);
    let mut init = rng::stream(seed, Stream::DevDiscriminator);
    let mut mlp = Mlp::new(&[d, cfg.hidden, 1], MlpActivation::Relu, &mut init);
    let mut opt = Adam::new(&mlp.params, cfg.adam.clone());
    let mut order = rng::indexed(seed, Stream::DevDiscriminator, 1);
    let (ns, nt) = (zs.dim(0), zt.dim(0));
    let iters = ns.max(nt).div_ceil(cfg.batch_size);
    let mut last = 0.0;
    for _ in 0..cfg.epochs {
        let ps = rng::permutation(&mut order, ns);
        let pt = rng::permutation(&mut order, nt);
        for it in 0..iters {
            let pick = |perm: &[usize]| -> Vec<usize> {
                (0..cfg.batch_size.min(perm.len()))
                    .map(|j| perm[(it * cfg.batch_size + j) % perm.len()])
                    .collect()
            };
            let mut g = Graph::new();
            let b = mlp.params.bind(&mut g, true);
            let s = g.constant(zs.select_rows(&pick(&ps)));
            let t = g.constant(zt.select_rows(&pick(&pt)));
            let ds = mlp.forward(&mut g, &b, s)?;
            let dt = mlp.forward(&mut g, &b, t)?;
            let l = bce_logits(&[(g.value(ds), 1.0), (g.value(dt), 0.0)])?;
            if !l.value.is_finite() {
                return Err(Error::Selection("DEV discriminator diverged".into()));
            }
            last = l.value;
            let v = l.record(&mut g, &[ds, dt])?;
            let grads = g.backward(v);
            opt.step(&mut mlp.params, &b.collect(&grads));
        }
    }
    let out = mlp.infer(query)?;
    let r: Vec<f64> = out.data().iter().map(|&x| sigmoid(x)).collect();
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Selection("DEV discriminator diverged".into()));
    }
    Ok((r, last))
}

/// Importance-weighted validation risk of `net`; reads no target labels.
pub fn dev_risk(
    net: &Network,
    source_train: &Tensor,
    source_test: &TimeSeriesDataset,
    target_train: &Tensor,
    ratio_model: &DensityRatio,
    seed: u64,
) -> Result<(f64, DevDiagnostics)> {
    if source_test.is_empty() || source_train.dim(0) == 0 || target_train.dim(0) == 0 {
        return Err(invalid("DEV needs non-empty source and target sets"));
    }
    let ratio = source_train.dim(0) as f64 / target_train.dim(0) as f64;
    let (zq, pq) = net.forward(source_test.samples())?;
    let losses = per_sample_ce(&pq, source_test.labels())?;
    let (r, disc_loss) = match ratio_model {
        DensityRatio::Constant(p) => (vec![*p; losses.len()], None),
        DensityRatio::Fitted(cfg) => {
            let (zs, _) = net.forward(source_train)?;
            let (zt, _) = net.forward(target_train)?;
            let (r, l) = fit_discriminator(&zs, &zt, &zq, cfg, seed)?;
            (r, Some(l))
        }
    };
    let (risk, mut diag) = dev_estimate(ratio, &r, &losses)?;
    diag.discriminator_loss = disc_loss;
    Ok((risk, diag))
}

/// What the risks of one scenario are computed from.
pub struct SelectionContext<'a> {
    pub data: &'a ScenarioData,
    pub audit: &'a crate::data::LabelAudit,
    /// Required for FST.
    pub fewshot: Option<&'a FewShotSet>,
    pub ratio_model: DensityRatio,
    /// Seeds the DEV discriminator (offset by candidate index).
    pub seed: u64,
}

/// Risk values of one candidate. A risk that could not be computed has an
/// entry in `failures` instead of `values`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateRisks {
    pub candidate: usize,
    pub values: BTreeMap<RiskType, f64>,
    pub failures: BTreeMap<RiskType, String>,
    pub dev: Option<DevDiagnostics>,
}

impl CandidateRisks {
    pub fn get(&self, r: RiskType) -> Option<f64> {
        self.values.get(&r).copied()
    }
}

/// Evaluates `risks` for one trained network.
pub fn evaluate_risks(
    candidate: usize,
    net: &Network,
    status: &TrialStatus,
    risks: &[RiskType],
    ctx: &SelectionContext<'_>,
) -> CandidateRisks {
    let mut out = CandidateRisks {
        candidate,
        ..Default::default()
    };
    for &risk in risks {
        if let TrialStatus::Failed { reason } = status {
            out.failures.insert(risk, format!("training failed: {reason}"));
            continue;
        }
        let v = match risk {
            RiskType::Src => src_risk(net, &ctx.data.source.test),
            RiskType::Tgt => tgt_risk(net, ctx.data.target_test(ctx.audit)),
            RiskType::Fst => match ctx.fewshot {
                Some(f) => fst_risk(net, f),
                None => Err(invalid("FST requested without a few-shot set")),
            },
            RiskType::Dev => dev_risk(
                net,
                ctx.data.source.train.samples(),
                &ctx.data.source.test,
                ctx.data.target_train(ctx.audit).samples(),
                &ctx.ratio_model,
                ctx.seed.wrapping_add(candidate as u64),
            )
            .map(|(v, d)| {
                out.dev = Some(d);
                v
            }),
        };
        match v {
            Ok(v) if v.is_finite() => {
                out.values.insert(risk, v);
            }
            Ok(v) => {
                out.failures.insert(risk, format!("non-finite value {v}"));
            }
            Err(e) => {
                out.failures.insert(risk, e.to_string());
            }
        }
    }
    out
}

/// Index of the smallest present value; ties go to the lowest index.
pub fn argmin_risk(values: &[Option<f64>]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::Selection("no candidate has a usable risk value".into()))
}

/// Every candidate's risks plus the choice made under each risk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub candidates: Vec<CandidateRisks>,
    pub selected: BTreeMap<RiskType, usize>,
    pub eta_definition: String,
}

impl RiskReport {
    /// Selects under every risk that has at least one usable value.
    pub fn from_rows(candidates: Vec<CandidateRisks>) -> Self {
        let mut selected = BTreeMap::new();
        for r in RiskType::ALL {
            let vals: Vec<Option<f64>> = candidates.iter().map(|c| c.get(r)).collect();
            if let Ok(i) = argmin_risk(&vals) {
                selected.insert(r, candidates[i].candidate);
            }
        }
        Self {
            candidates,
            selected,
            eta_definition: ETA_DEFINITION.into(),
        }
    }
}

/// Evaluates all four risks that `ctx` supports on every candidate and
/// returns the index chosen by `risk` (candidate order, failed ones
/// skipped).
pub fn select_best(
    candidates: &[CandidateModel],
    risk: RiskType,
    ctx: &SelectionContext<'_>,
) -> Result<(usize, RiskReport)> {
    if candidates.is_empty() {
        return Err(Error::Selection("no candidates".into()));
    }
    if candidates.iter().all(|c| c.status.is_failed()) {
        return Err(Error::Selection("every candidate failed".into()));
    }
    let mut risks = vec![RiskType::Src, RiskType::Dev, risk];
    if ctx.fewshot.is_some() {
        risks.push(RiskType::Fst);
    }
    risks.sort();
    risks.dedup();
    let rows = par::map(candidates.len(), |i| {
        let c = &candidates[i];
        evaluate_risks(i, &c.network, &c.status, &risks, ctx)
    });
    let vals: Vec<Option<f64>> = rows.iter().map(|c| c.get(risk)).collect();
    let best = argmin_risk(&vals)?;
    Ok((best, RiskReport::from_rows(rows)))
}
