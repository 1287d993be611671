use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{AlgorithmId, HParams};
use crate::autograd::{softmax_rows, Graph, Var};
use crate::backbones::{BackboneSpec, Checkpoint, Network};
use crate::data::{LabelAudit, ScenarioData};
use crate::error::{invalid, Result};
use crate::losses::{
    bce_logits, coral, cross_entropy, entropy_logits, homm, lmmd, mmd, mse, vat_loss, KernelBank,
    VatConfig,
};
use crate::nn::{Adam, AdamConfig, Binding, Mlp, MlpActivation, Mode, Slot};
use crate::rng::{self, Rng, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Optimizer settings; `lr` is replaced by the trial's learning rate.
    pub adam: AdamConfig,
    pub homm_order: u32,
    pub vat: VatConfig,
    pub teacher_decay: f64,
    pub consistency_weight: f64,
    pub discriminator_hidden: usize,
    pub kernel_hidden: usize,
    pub kernel_out: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            adam: AdamConfig::default(),
            homm_order: 3,
            vat: VatConfig::default(),
            teacher_decay: 0.99,
            consistency_weight: 1.0,
            discriminator_hidden: 256,
            kernel_hidden: 64,
            kernel_out: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialStatus {
    Completed,
    Failed { reason: String },
}

impl TrialStatus {
    pub fn is_failed(&self) -> bool {
        matches!(self, Self::Failed { .. })
    }
}

/// Mean of every loss term over one epoch's iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub losses: BTreeMap<String, f64>,
    pub wall_seconds: f64,
}

/// A trained `h ∘ f` with the run that produced it.
#[derive(Clone, Debug)]
pub struct CandidateModel {
    pub algorithm: AlgorithmId,
    pub hparams: HParams,
    pub network: Network,
    pub log: Vec<EpochLog>,
    pub status: TrialStatus,
}

impl CandidateModel {
    /// Checkpoint carrying the algorithm, hyper-parameters, status and the
    /// per-epoch losses (wall times are left out so equal runs give equal
    /// files).
    pub fn to_checkpoint(&self) -> Checkpoint {
        let losses: Vec<_> = self
            .log
            .iter()
            .map(|e| serde_json::json!({"epoch": e.epoch, "losses": e.losses}))
            .collect();
        Checkpoint::from_network(
            &self.network,
            serde_json::json!({
                "algorithm": self.algorithm,
                "hparams": self.hparams,
                "status": self.status,
                "log": losses,
            }),
        )
    }
}

/// Endless shuffled pass over `0..n`, reshuffled after each full pass.
struct Cyclic {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl Cyclic {
    fn new(n: usize, mut rng: Rng) -> Self {
        let order = rng::permutation(&mut rng, n);
        Self { order, pos: 0, rng }
    }

    fn next(&mut self, b: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(b);
        while out.len() < b {
            if self.pos == self.order.len() {
                self.order = rng::permutation(&mut self.rng, self.order.len());
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Alignment weights of each method; a method with all of them at zero
/// trains exactly like `source_only`.
fn alignment_weights(alg: AlgorithmId) -> &'static [&'static str] {
    use AlgorithmId::*;
    match alg {
        SourceOnly | TargetOnly => &[],
        Ddc | Advskm => &["mmd_weight"],
        DeepCoral => &["coral_weight"],
        Homm => &["homm_weight"],
        Mmda => &["mmd_weight", "coral_weight", "entropy_weight"],
        Dsan => &["lmmd_weight"],
        Dann | Codats => &["adversarial_weight"],
        Cdan => &["adversarial_weight", "entropy_weight"],
        DirtT => &["adversarial_weight", "entropy_weight", "vat_weight"],
    }
}

struct Trainer<'a> {
    alg: AlgorithmId,
    hp: &'a HParams,
    cfg: &'a TrainConfig,
    net: Network,
    opt_e: Adam,
    opt_h: Adam,
    disc: Option<(Mlp, Adam)>,
    kernel: Option<(Mlp, Adam)>,
    teacher: Option<Network>,
    perturb: Rng,
}

type Terms = Vec<(&'static str, f64)>;

impl<'a> Trainer<'a> {
    fn new(alg: AlgorithmId, spec: &BackboneSpec, hp: &'a HParams, cfg: &'a TrainConfig) -> Result<Self> {
        let net = Network::build(spec, hp.seed)?;
        let adam = AdamConfig {
            lr: hp.learning_rate,
            ..cfg.adam.clone()
        };
        let mut aux = rng::stream(hp.seed, Stream::AuxInit);
        let d = spec.feature_dim;
        let disc_in = match alg {
            AlgorithmId::Dann | AlgorithmId::Codats | AlgorithmId::DirtT => Some(d),
            AlgorithmId::Cdan => Some(d * spec.num_classes),
            _ => None,
        };
        let disc = disc_in.map(|i| {
            let m = Mlp::new(&[i, cfg.discriminator_hidden, 1], MlpActivation::Relu, &mut aux);
            let o = Adam::new(&m.params, adam.clone());
            (m, o)
        });
        let kernel = (alg == AlgorithmId::Advskm).then(|| {
            let m = Mlp::new(
                &[d, cfg.kernel_hidden, cfg.kernel_out],
                MlpActivation::Spectral,
                &mut aux,
            );
            let o = Adam::new(&m.params, adam.clone());
            (m, o)
        });
        Ok(Self {
            alg,
            hp,
            cfg,
            opt_e: Adam::new(&net.extractor.params, adam.clone()),
            opt_h: Adam::new(&net.head.params, adam),
            teacher: (alg == AlgorithmId::DirtT).then(|| net.clone()),
            net,
            disc,
            kernel,
            perturb: rng::stream(hp.seed, Stream::Perturbation),
        })
    }

    fn w(&self, name: &str) -> f64 {
        self.hp.weight(name)
    }

    fn aligning(&self) -> bool {
        alignment_weights(self.alg).iter().any(|n| self.w(n) > 0.0)
    }

    /// Features of both batches (one joint forward) with the current
    /// parameters held fixed.
    fn frozen_features(&self, xs: &Tensor, xt: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let pe = self.net.extractor.params.bind(&mut g, false);
        let ph = self.net.head.params.bind(&mut g, false);
        let xv = g.constant(Tensor::concat_rows(&[xs, xt])?);
        let mut sink = Vec::new();
        let (z, l) = self.net.forward_train(&mut g, &pe, &ph, xv, Mode::TrainNoTrack, &mut sink)?;
        let f = if self.alg == AlgorithmId::Cdan {
            outer_rows(g.value(z), &softmax_rows(g.value(l)))
        } else {
            g.value(z).clone()
        };
        let ns = xs.dim(0);
        let idx = |a: usize, b: usize| (a..b).collect::<Vec<_>>();
        Ok((f.select_rows(&idx(0, ns)), f.select_rows(&idx(ns, f.dim(0)))))
    }

    /// Discriminator updates on fixed features (source 1, target 0).
    fn discriminator_steps(&mut self, xs: &Tensor, xt: &Tensor, steps: usize) -> Result<f64> {
        let (zs, zt) = self.frozen_features(xs, xt)?;
        let (disc, opt) = self.disc.as_mut().expect("discriminator");
        let mut last = 0.0;
        for _ in 0..steps {
            let mut g = Graph::new();
            let b = disc.params.bind(&mut g, true);
            let (s, t) = (g.constant(zs.clone()), g.constant(zt.clone()));
            let ds = disc.forward(&mut g, &b, s)?;
            let dt = disc.forward(&mut g, &b, t)?;
            let l = bce_logits(&[(g.value(ds), 1.0), (g.value(dt), 0.0)])?;
            last = l.value;
            let v = l.record(&mut g, &[ds, dt])?;
            let grads = g.backward(v);
            opt.step(&mut disc.params, &b.collect(&grads));
        }
        Ok(last)
    }

    /// Kernel network ascent on the MMD of fixed features.
    fn kernel_step(&mut self, xs: &Tensor, xt: &Tensor) -> Result<f64> {
        let (zs, zt) = self.frozen_features(xs, xt)?;
        let (k, opt) = self.kernel.as_mut().expect("kernel net");
        let mut g = Graph::new();
        let b = k.params.bind(&mut g, true);
        let (s, t) = (g.constant(zs), g.constant(zt));
        let ps = k.forward(&mut g, &b, s)?;
        let pt = k.forward(&mut g, &b, t)?;
        let (a, c) = (g.value(ps).clone(), g.value(pt).clone());
        let l = mmd(&a, &c, &KernelBank::median_heuristic(&a, &c))?;
        let value = l.value;
        let v = l.record(&mut g, &[ps, pt])?;
        let neg = g.scale(v, -1.0);
        let grads = g.backward(neg);
        opt.step(&mut k.params, &b.collect(&grads));
        Ok(value)
    }

    /// Discriminator on the graph behind a gradient reversal; returns the
    /// domain BCE as a graph scalar.
    fn adversarial(&self, g: &mut Graph, bd: &Binding, fs: Var, ft: Var, rec: &mut Terms) -> Result<Var> {
        let (disc, _) = self.disc.as_ref().expect("discriminator");
        let rs = g.grad_reverse(fs, 1.0);
        let rt = g.grad_reverse(ft, 1.0);
        let ds = disc.forward(g, bd, rs)?;
        let dt = disc.forward(g, bd, rt)?;
        let l = bce_logits(&[(g.value(ds), 1.0), (g.value(dt), 0.0)])?;
        rec.push(("adversarial", l.value));
        l.record(g, &[ds, dt])
    }

    fn step(&mut self, xs: &Tensor, ys: &[usize], xt: Option<&Tensor>) -> Result<Terms> {
        use AlgorithmId::*;
        let mut rec: Terms = Vec::new();
        let xt = if self.aligning() { xt } else { None };
        if let Some(xt) = xt {
            match self.alg {
                Codats if self.w("adversarial_weight") > 0.0 => {
                    let v = self.discriminator_steps(xs, xt, 1)?;
                    rec.push(("discriminator", v));
                }
                DirtT if self.w("adversarial_weight") > 0.0 => {
                    let n = self.w("disc_steps").round().max(1.0) as usize;
                    let v = self.discriminator_steps(xs, xt, n)?;
                    rec.push(("discriminator", v));
                }
                Advskm => {
                    let v = self.kernel_step(xs, xt)?;
                    rec.push(("kernel_mmd", v));
                }
                _ => {}
            }
        }

        let net = &self.net;
        let mut g = Graph::new();
        let pe = net.extractor.params.bind(&mut g, true);
        let ph = net.head.params.bind(&mut g, true);
        let mut upd: Vec<(Slot, Tensor)> = Vec::new();
        let ns = xs.dim(0);
        let x_in = match xt {
            Some(xt) => Tensor::concat_rows(&[xs, xt])?,
            None => xs.clone(),
        };
        let xv = g.constant(x_in.clone());
        let (z, l) = net.forward_train(&mut g, &pe, &ph, xv, Mode::Train, &mut upd)?;
        let (zs, ls) = match xt {
            Some(_) => (g.slice_rows(z, 0, ns)?, g.slice_rows(l, 0, ns)?),
            None => (z, l),
        };
        let ce = cross_entropy(g.value(ls), ys)?;
        rec.push(("cls", ce.value));
        let mut terms = vec![(ce.record(&mut g, &[ls])?, self.w("cls_weight"))];

        // graph-trained discriminator (single-pass methods)
        let disc_live = matches!(self.alg, Dann | Cdan);
        let mut bd: Option<Binding> = None;
        let mut teacher_target: Option<(Var, Tensor)> = None;

        if let Some(xt) = xt {
            let nt = xt.dim(0);
            let (zt, lt) = (g.slice_rows(z, ns, nt)?, g.slice_rows(l, ns, nt)?);
            let bank = |g: &Graph| KernelBank::median_heuristic(g.value(zs), g.value(zt));
            let w = |n: &str| self.hp.weight(n);
            match self.alg {
                Ddc | Mmda if w("mmd_weight") > 0.0 => {
                    let l = mmd(g.value(zs), g.value(zt), &bank(&g))?;
                    rec.push(("mmd", l.value));
                    terms.push((l.record(&mut g, &[zs, zt])?, w("mmd_weight")));
                }
                _ => {}
            }
            match self.alg {
                DeepCoral | Mmda if w("coral_weight") > 0.0 => {
                    let l = coral(g.value(zs), g.value(zt))?;
                    rec.push(("coral", l.value));
                    terms.push((l.record(&mut g, &[zs, zt])?, w("coral_weight")));
                }
                Homm if w("homm_weight") > 0.0 => {
                    let l = homm(g.value(zs), g.value(zt), self.cfg.homm_order)?;
                    rec.push(("homm", l.value));
                    terms.push((l.record(&mut g, &[zs, zt])?, w("homm_weight")));
                }
                Dsan if w("lmmd_weight") > 0.0 => {
                    let pt = softmax_rows(g.value(lt));
                    let l = lmmd(g.value(zs), ys, g.value(zt), &pt, &bank(&g))?;
                    rec.push(("lmmd", l.value));
                    terms.push((l.record(&mut g, &[zs, zt])?, w("lmmd_weight")));
                }
                _ => {}
            }
            if matches!(self.alg, Mmda | Cdan | DirtT) && w("entropy_weight") > 0.0 {
                let l = entropy_logits(g.value(lt))?;
                rec.push(("entropy", l.value));
                terms.push((l.record(&mut g, &[lt])?, w("entropy_weight")));
            }
            if matches!(self.alg, Dann | Cdan | Codats | DirtT) && w("adversarial_weight") > 0.0 {
                let (disc, _) = self.disc.as_ref().expect("discriminator");
                let b = disc.params.bind(&mut g, disc_live);
                let (fs, ft) = if self.alg == Cdan {
                    let ps = g.softmax(ls);
                    let ps = g.detach(ps);
                    let pt = g.softmax(lt);
                    let pt = g.detach(pt);
                    (g.outer(zs, ps)?, g.outer(zt, pt)?)
                } else {
                    (zs, zt)
                };
                let v = self.adversarial(&mut g, &b, fs, ft, &mut rec)?;
                terms.push((v, w("adversarial_weight")));
                bd = Some(b);
            }
            if self.alg == DirtT {
                if w("vat_weight") > 0.0 {
                    let clean = g.value(l).clone();
                    let fwd = |h: &mut Graph, x: Var, attached: bool| -> Result<Var> {
                        let mut sink = Vec::new();
                        if attached {
                            net.forward_train(h, &pe, &ph, x, Mode::TrainNoTrack, &mut sink)
                                .map(|r| r.1)
                        } else {
                            let be = net.extractor.params.bind(h, false);
                            let bh = net.head.params.bind(h, false);
                            net.forward_train(h, &be, &bh, x, Mode::TrainNoTrack, &mut sink)
                                .map(|r| r.1)
                        }
                    };
                    let v = vat_loss(&mut g, fwd, &x_in, &clean, &self.cfg.vat, &mut self.perturb)?;
                    rec.push(("vat", g.value(v).item()));
                    terms.push((v, w("vat_weight")));
                }
                let teacher = self.teacher.as_ref().expect("teacher");
                let tp = teacher_probs(teacher, &x_in)?;
                let tp = tp.select_rows(&(ns..ns + nt).collect::<Vec<_>>());
                let p = g.softmax(lt);
                teacher_target = Some((p, tp));
            }
            if self.alg == Advskm {
                let (k, _) = self.kernel.as_ref().expect("kernel net");
                let b = k.params.bind(&mut g, false);
                let ps = k.forward(&mut g, &b, zs)?;
                let pt = k.forward(&mut g, &b, zt)?;
                let (a, c) = (g.value(ps), g.value(pt));
                let l = mmd(a, c, &KernelBank::median_heuristic(a, c))?;
                rec.push(("mmd", l.value));
                terms.push((l.record(&mut g, &[ps, pt])?, w("mmd_weight")));
            }
        }
        if let Some((p, tp)) = teacher_target {
            let l = mse(g.value(p), &tp)?;
            rec.push(("consistency", l.value));
            terms.push((l.record(&mut g, &[p])?, self.cfg.consistency_weight));
        }

        let loss = g.weighted_sum(&terms)?;
        rec.push(("total", g.value(loss).item()));
        let grads = g.backward(loss);
        let ge = pe.collect(&grads);
        let gh = ph.collect(&grads);
        let gd = if disc_live { bd.map(|b| b.collect(&grads)) } else { None };
        drop(g);

        self.opt_e.step(&mut self.net.extractor.params, &ge);
        self.opt_h.step(&mut self.net.head.params, &gh);
        if let (Some(gd), Some((disc, opt))) = (gd, self.disc.as_mut()) {
            opt.step(&mut disc.params, &gd);
        }
        self.net.commit(upd);
        if let Some(t) = self.teacher.as_mut() {
            let d = self.cfg.teacher_decay;
            t.extractor.params.ema_from(&self.net.extractor.params, d);
            t.head.params.ema_from(&self.net.head.params, d);
            t.extractor.buffers = self.net.extractor.buffers.clone();
        }
        Ok(rec)
    }
}

fn teacher_probs(t: &Network, x: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let pe = t.extractor.params.bind(&mut g, false);
    let ph = t.head.params.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let (_, l) = t.forward_train(&mut g, &pe, &ph, xv, Mode::TrainNoTrack, &mut Vec::new())?;
    Ok(softmax_rows(g.value(l)))
}

fn outer_rows(z: &Tensor, p: &Tensor) -> Tensor {
    let (b, d, k) = (z.dim(0), z.dim(1), p.dim(1));
    let mut out = Vec::with_capacity(b * d * k);
    for i in 0..b {
        for &zi in z.row(i) {
            out.extend(p.row(i).iter().map(|pk| zi * pk));
        }
    }
    Tensor::new(vec![b, d * k], out).expect("shape")
}

/// Trains one candidate for `alg` on a scenario.
///
/// Target labels are read (through `audit`) only by `target_only`. A
/// non-finite loss or parameter ends training early with
/// [`TrialStatus::Failed`]; the returned model then holds the last state.
pub fn adapt(
    alg: AlgorithmId,
    data: &ScenarioData,
    audit: &LabelAudit,
    spec: &BackboneSpec,
    hp: &HParams,
    cfg: &TrainConfig,
) -> Result<CandidateModel> {
    hp.validate(alg)?;
    spec.validate()?;
    if spec.num_classes != data.num_classes() || spec.input_channels != data.source.channels() {
        return Err(invalid(format!(
            "backbone expects C={}, K={} but scenario has C={}, K={}",
            spec.input_channels,
            spec.num_classes,
            data.source.channels(),
            data.num_classes()
        )));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(invalid("epochs and batch_size must be >= 1"));
    }
    let target = data.target_train(audit);
    let (labeled, unlabeled) = if alg.reads_target_labels() {
        (target.labeled(), None)
    } else {
        (&data.source.train, Some(target.samples()))
    };
    let ns = labeled.len();
    let nt = unlabeled.map_or(0, |t| t.dim(0));
    if ns == 0 || unlabeled.is_some_and(|t| t.dim(0) == 0) {
        return Err(invalid("empty training split"));
    }
    let iters = ns.max(nt).div_ceil(cfg.batch_size);
    let (bs, bt) = (cfg.batch_size.min(ns), cfg.batch_size.min(nt.max(1)));
    let mut src = Cyclic::new(ns, rng::stream(hp.seed, Stream::SourceBatches));
    let mut tgt = Cyclic::new(nt, rng::stream(hp.seed, Stream::TargetBatches));

    let mut tr = Trainer::new(alg, spec, hp, cfg)?;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut status = TrialStatus::Completed;
    'epochs: for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        for _ in 0..iters {
            let idx = src.next(bs);
            let xs = labeled.samples().select_rows(&idx);
            let ys: Vec<usize> = idx.iter().map(|&i| labeled.labels()[i]).collect();
            let xt = unlabeled.map(|t| t.select_rows(&tgt.next(bt)));
            let rec = tr.step(&xs, &ys, xt.as_ref())?;
            let bad = rec.iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| *n);
            for (n, v) in rec {
                *sums.entry(n.to_string()).or_default() += v / iters as f64;
            }
            let bad = bad.map(|n| format!("non-finite {n} loss"));
            let bad = bad.or_else(|| (!tr.net.all_finite()).then(|| "non-finite parameters".into()));
            if let Some(reason) = bad {
                log.push(EpochLog {
                    epoch,
                    losses: sums,
                    wall_seconds: start.elapsed().as_secs_f64(),
                });
                status = TrialStatus::Failed {
                    reason: format!("{reason} in epoch {epoch}"),
                };
                break 'epochs;
            }
        }
        log.push(EpochLog {
            epoch,
            losses: sums,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(CandidateModel {
        algorithm: alg,
        hparams: hp.clone(),
        network: tr.net,
        log,
        status,
    })
}
