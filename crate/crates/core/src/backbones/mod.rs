//! Feature extractors `f` and the classifier head `h`.
//!
//! Every extractor maps `(B, C, T)` to `(B, D)` through global average
//! pooling over time, so one network serves any window length.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::{softmax_rows, ConvGeom, Graph, Var};
use crate::error::{invalid, Error, Result};
use crate::nn::{commit, BatchNorm1d, Binding, Conv1d, Forward, Linear, Mode, TensorStore};
use crate::rng::{self, Rng, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackboneKind {
    #[serde(rename = "cnn1d")]
    Cnn1d,
    #[serde(rename = "resnet18_1d")]
    Resnet18,
    #[serde(rename = "tcn")]
    Tcn,
}

impl BackboneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cnn1d => "cnn1d",
            Self::Resnet18 => "resnet18_1d",
            Self::Tcn => "tcn",
        }
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn1d" => Ok(Self::Cnn1d),
            "resnet18_1d" => Ok(Self::Resnet18),
            "tcn" => Ok(Self::Tcn),
            _ => Err(invalid(format!(
                "unknown backbone {s:?} (expected cnn1d, resnet18_1d or tcn)"
            ))),
        }
    }
}

/// Extractor configuration. `width` is the channel count of the first
/// stage; later stages are multiples of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub input_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    #[serde(default = "default_width")]
    pub width: usize,
}

fn default_width() -> usize {
    64
}

impl BackboneSpec {
    pub fn new(kind: BackboneKind, input_channels: usize, num_classes: usize) -> Self {
        Self {
            kind,
            input_channels,
            kernel_size: 5,
            stride: 1,
            feature_dim: 128,
            num_classes,
            width: default_width(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.input_channels >= 1, "input_channels >= 1"),
            (self.kernel_size >= 1, "kernel_size >= 1"),
            (self.stride >= 1, "stride >= 1"),
            (self.feature_dim >= 1, "feature_dim >= 1"),
            (self.num_classes >= 2, "num_classes >= 2"),
            (self.width >= 1, "width >= 1"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, what)) => Err(invalid(format!("backbone spec needs {what}"))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
struct ConvBn {
    conv: Conv1d,
    bn: BatchNorm1d,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn new(
        p: &mut TensorStore,
        b: &mut TensorStore,
        name: &str,
        inp: usize,
        out: usize,
        k: usize,
        geom: ConvGeom,
        rng: &mut Rng,
    ) -> Self {
        Self {
            conv: Conv1d::new(p, &format!("{name}.conv"), inp, out, k, geom, false, rng),
            bn: BatchNorm1d::new(p, b, &format!("{name}.bn"), out),
        }
    }

    fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        let h = self.conv.forward(f, x)?;
        self.bn.forward(f, h)
    }
}

#[derive(Clone, Debug)]
struct Cnn {
    blocks: Vec<ConvBn>,
}

impl Cnn {
    fn new(s: &BackboneSpec, p: &mut TensorStore, b: &mut TensorStore, rng: &mut Rng) -> Self {
        let w = s.width;
        let dims = [(s.input_channels, w), (w, 2 * w), (2 * w, s.feature_dim)];
        let blocks = dims
            .iter()
            .enumerate()
            .map(|(i, &(inp, out))| {
                let (k, st) = if i == 0 { (s.kernel_size, s.stride) } else { (8, 1) };
                ConvBn::new(p, b, &format!("block{i}"), inp, out, k, ConvGeom::same(k, st), rng)
            })
            .collect();
        Self { blocks }
    }

    fn forward(&self, f: &mut Forward, x: Var, trace: &mut Vec<Var>) -> Result<Var> {
        let mut h = x;
        for blk in &self.blocks {
            h = blk.forward(f, h)?;
            h = f.g.relu(h);
            trace.push(h);
            h = f.g.max_pool(h, 2)?;
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
struct BasicBlock {
    a: ConvBn,
    b: ConvBn,
    shortcut: Option<ConvBn>,
}

impl BasicBlock {
    fn forward(&self, f: &mut Forward, x: Var, trace: &mut Vec<Var>) -> Result<Var> {
        let h = self.a.forward(f, x)?;
        let h = f.g.relu(h);
        let h = self.b.forward(f, h)?;
        let s = match &self.shortcut {
            Some(sc) => sc.forward(f, x)?,
            None => x,
        };
        let y = f.g.add(h, s)?;
        let y = f.g.relu(y);
        trace.push(y);
        Ok(y)
    }
}

#[derive(Clone, Debug)]
struct ResNet {
    stem: ConvBn,
    blocks: Vec<BasicBlock>,
    proj: Linear,
}

impl ResNet {
    fn new(s: &BackboneSpec, p: &mut TensorStore, b: &mut TensorStore, rng: &mut Rng) -> Self {
        let w = s.width;
        let stem = ConvBn::new(
            p,
            b,
            "stem",
            s.input_channels,
            w,
            s.kernel_size,
            ConvGeom::same(s.kernel_size, s.stride),
            rng,
        );
        let mut blocks = Vec::new();
        let mut inp = w;
        for (stage, mult) in [1, 2, 4, 8].into_iter().enumerate() {
            let out = w * mult;
            for j in 0..2 {
                let stride = if stage > 0 && j == 0 { 2 } else { 1 };
                let name = format!("layer{}.{j}", stage + 1);
                let a = ConvBn::new(p, b, &format!("{name}.a"), inp, out, 3, ConvGeom::same(3, stride), rng);
                let bb = ConvBn::new(p, b, &format!("{name}.b"), out, out, 3, ConvGeom::same(3, 1), rng);
                let shortcut = (stride != 1 || inp != out).then(|| {
                    let g = ConvGeom {
                        stride,
                        dilation: 1,
                        pad_left: 0,
                        pad_right: 0,
                    };
                    ConvBn::new(p, b, &format!("{name}.down"), inp, out, 1, g, rng)
                });
                blocks.push(BasicBlock { a, b: bb, shortcut });
                inp = out;
            }
        }
        let proj = Linear::new(p, "proj", inp, s.feature_dim, rng);
        Self { stem, blocks, proj }
    }

    fn forward(&self, f: &mut Forward, x: Var, trace: &mut Vec<Var>) -> Result<Var> {
        let h = self.stem.forward(f, x)?;
        let h = f.g.relu(h);
        trace.push(h);
        let mut h = f.g.max_pool(h, 2)?;
        for blk in &self.blocks {
            h = blk.forward(f, h, trace)?;
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
struct TcnBlock {
    a: Conv1d,
    b: Conv1d,
    shortcut: Option<Conv1d>,
}

#[derive(Clone, Debug)]
struct Tcn {
    blocks: Vec<TcnBlock>,
}

impl Tcn {
    fn new(s: &BackboneSpec, p: &mut TensorStore, rng: &mut Rng) -> Self {
        let w = s.width;
        let k = s.kernel_size.max(2);
        let mut inp = s.input_channels;
        let mut blocks = Vec::new();
        for (i, out) in [w, 2 * w, s.feature_dim].into_iter().enumerate() {
            let d = 1 << i;
            let name = format!("level{i}");
            let g = ConvGeom::causal(k, d);
            let a = Conv1d::new(p, &format!("{name}.a"), inp, out, k, g, true, rng);
            let b = Conv1d::new(p, &format!("{name}.b"), out, out, k, g, true, rng);
            let shortcut = (inp != out).then(|| {
                Conv1d::new(p, &format!("{name}.down"), inp, out, 1, ConvGeom::causal(1, 1), true, rng)
            });
            blocks.push(TcnBlock { a, b, shortcut });
            inp = out;
        }
        Self { blocks }
    }

    fn forward(&self, f: &mut Forward, x: Var, trace: &mut Vec<Var>) -> Result<Var> {
        let mut h = x;
        for blk in &self.blocks {
            let y = blk.a.forward(f, h)?;
            let y = f.g.relu(y);
            trace.push(y);
            let y = blk.b.forward(f, y)?;
            let y = f.g.relu(y);
            trace.push(y);
            let s = match &blk.shortcut {
                Some(c) => c.forward(f, h)?,
                None => h,
            };
            let y = f.g.add(y, s)?;
            h = f.g.relu(y);
            trace.push(h);
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
enum Arch {
    Cnn(Cnn),
    ResNet(ResNet),
    Tcn(Tcn),
}

/// `f`: windows to `D`-dimensional features. Owns its parameters and its
/// batch-norm running statistics (`buffers`).
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub spec: BackboneSpec,
    pub params: TensorStore,
    pub buffers: TensorStore,
    arch: Arch,
}

/// Builds an extractor with parameters drawn from `seed`.
pub fn build_backbone(spec: &BackboneSpec, seed: u64) -> Result<FeatureExtractor> {
    spec.validate()?;
    let mut rng = rng::stream(seed, Stream::BackboneInit);
    let (mut p, mut b) = (TensorStore::new(), TensorStore::new());
    let arch = match spec.kind {
        BackboneKind::Cnn1d => Arch::Cnn(Cnn::new(spec, &mut p, &mut b, &mut rng)),
        BackboneKind::Resnet18 => Arch::ResNet(ResNet::new(spec, &mut p, &mut b, &mut rng)),
        BackboneKind::Tcn => Arch::Tcn(Tcn::new(spec, &mut p, &mut rng)),
    };
    Ok(FeatureExtractor {
        spec: spec.clone(),
        params: p,
        buffers: b,
        arch,
    })
}

impl FeatureExtractor {
    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.spec.input_channels || s[2] == 0 {
            return Err(invalid(format!(
                "extractor expects (B, {}, T>0), got {s:?}",
                self.spec.input_channels
            )));
        }
        Ok(())
    }

    /// `(B, C, T) -> (B, D)` on the graph in `f`.
    pub fn forward(&self, f: &mut Forward, x: Var) -> Result<Var> {
        self.forward_traced(f, x, &mut Vec::new())
    }

    /// As [`Self::forward`], also collecting every pre-pooling activation.
    pub fn forward_traced(&self, f: &mut Forward, x: Var, trace: &mut Vec<Var>) -> Result<Var> {
        self.check_input(f.g.value(x))?;
        let h = match &self.arch {
            Arch::Cnn(a) => a.forward(f, x, trace)?,
            Arch::ResNet(a) => a.forward(f, x, trace)?,
            Arch::Tcn(a) => a.forward(f, x, trace)?,
        };
        let z = f.g.mean_time(h)?;
        match &self.arch {
            Arch::ResNet(r) => r.proj.forward(f.g, f.params, z),
            _ => Ok(z),
        }
    }

    /// Evaluation-mode activations before pooling, per layer.
    pub fn trace(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let mut f = Forward::new(&mut g, &p, &self.buffers, Mode::Eval);
        let mut tr = Vec::new();
        self.forward_traced(&mut f, xv, &mut tr)?;
        Ok(tr.into_iter().map(|v| g.value(v).clone()).collect())
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }
}

/// `h`: linear map `D -> K`; probabilities through softmax.
#[derive(Clone, Debug)]
pub struct ClassifierHead {
    pub params: TensorStore,
    linear: Linear,
}

impl ClassifierHead {
    pub fn new(feature_dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, Stream::HeadInit);
        let mut params = TensorStore::new();
        let linear = Linear::new(&mut params, "head", feature_dim, num_classes, &mut rng);
        Self { params, linear }
    }

    pub fn logits(&self, g: &mut Graph, p: &Binding, z: Var) -> Result<Var> {
        self.linear.forward(g, p, z)
    }
}

/// Extractor plus head, `m = h ∘ f`.
#[derive(Clone, Debug)]
pub struct Network {
    pub extractor: FeatureExtractor,
    pub head: ClassifierHead,
}

/// Rows per evaluation chunk; batch norm in eval mode is per sample, so
/// chunking does not change results.
const EVAL_CHUNK: usize = 256;

impl Network {
    pub fn build(spec: &BackboneSpec, seed: u64) -> Result<Self> {
        let extractor = build_backbone(spec, seed)?;
        let head = ClassifierHead::new(spec.feature_dim, spec.num_classes, seed);
        Ok(Self { extractor, head })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.extractor.spec
    }

    /// Evaluation-mode `(features (B, D), probs (B, K))`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.extractor.check_input(x)?;
        let (n, d, k) = (x.dim(0), self.spec().feature_dim, self.spec().num_classes);
        let mut feats = Vec::with_capacity(n * d);
        let mut probs = Vec::with_capacity(n * k);
        let mut start = 0;
        while start < n {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
            let mut g = Graph::new();
            let pe = self.extractor.params.bind(&mut g, false);
            let ph = self.head.params.bind(&mut g, false);
            let xv = g.constant(x.select_rows(&idx));
            let mut f = Forward::new(&mut g, &pe, &self.extractor.buffers, Mode::Eval);
            let z = self.extractor.forward(&mut f, xv)?;
            let logits = self.head.logits(&mut g, &ph, z)?;
            feats.extend_from_slice(g.value(z).data());
            probs.extend_from_slice(softmax_rows(g.value(logits)).data());
            start += idx.len();
        }
        Ok((Tensor::new(vec![n, d], feats)?, Tensor::new(vec![n, k], probs)?))
    }

    pub fn probs(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x)?.1)
    }

    /// Arg-max class per row (lowest index on ties).
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let p = self.probs(x)?;
        Ok((0..p.dim(0)).map(|i| argmax(p.row(i))).collect())
    }

    /// Training-mode forward of one batch through `f` and `h` on `g`:
    /// returns `(features, logits)` and records running-stat updates.
    pub fn forward_train(
        &self,
        g: &mut Graph,
        pe: &Binding,
        ph: &Binding,
        x: Var,
        mode: Mode,
        updates: &mut Vec<(crate::nn::Slot, Tensor)>,
    ) -> Result<(Var, Var)> {
        let mut f = Forward::new(g, pe, &self.extractor.buffers, mode);
        let z = self.extractor.forward(&mut f, x)?;
        updates.extend(f.finish());
        let logits = self.head.logits(g, ph, z)?;
        Ok((z, logits))
    }

    /// Applies running-stat updates gathered by [`Self::forward_train`].
    pub fn commit(&mut self, updates: Vec<(crate::nn::Slot, Tensor)>) {
        commit(&mut self.extractor.buffers, updates);
    }

    pub fn num_params(&self) -> usize {
        self.extractor.num_params() + self.head.params.numel()
    }

    pub fn all_finite(&self) -> bool {
        self.extractor.params.all_finite()
            && self.extractor.buffers.all_finite()
            && self.head.params.all_finite()
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
