//! Fusion classifiers over window tensors, their training loop and metrics.

mod io;
mod metrics;
pub mod tape;
mod train;

use std::ops::Range;

use nalgebra::DMatrix;
use ndarray::{s, ArrayView5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use io::{load_model, save_model, ModelHeader, MODEL_FORMAT_VERSION};
pub use metrics::{evaluate, predict, Metrics};
pub use train::{train, EpochRecord, Optimizer, TrainConfig, TrainHistory};

use crate::connectivity::{Feature, WindowTensor};
use crate::error::{Error, Result};
use tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// 1: one branch per (feature, band); 2: one branch per feature;
    /// 3: features fused after channel collapse; 4: features fused at the
    /// connectivity-matrix level.
    pub scheme: u8,
    pub channels: usize,
    pub time_steps: usize,
    pub bands: usize,
    pub features: usize,
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub dense_sizes: Vec<usize>,
    pub attention: bool,
    pub dropout: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults for `channels`-channel tensors of the default shape.
    pub fn desk(scheme: u8, channels: usize) -> ModelConfig {
        ModelConfig {
            scheme,
            channels,
            time_steps: 10,
            bands: 5,
            features: Feature::ALL.len(),
            embed_dim: 16,
            lstm_hidden: 16,
            lstm_layers: 1,
            dense_sizes: vec![32],
            attention: true,
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn input_shape(&self) -> [usize; 5] {
        [self.features, self.time_steps, self.channels, self.channels, self.bands]
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.scheme) {
            return Err(Error::in_field("scheme")(Error::invalid(format!(
                "must be 1..4, got {}",
                self.scheme
            ))));
        }
        let positive = [
            ("channels", self.channels),
            ("time_steps", self.time_steps),
            ("bands", self.bands),
            ("features", self.features),
            ("embed_dim", self.embed_dim),
            ("lstm_hidden", self.lstm_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::in_field(name)(Error::invalid("must be ≥ 1")));
            }
        }
        if self.features > Feature::ALL.len() {
            return Err(Error::in_field("features")(Error::invalid(format!(
                "at most {}",
                Feature::ALL.len()
            ))));
        }
        if !(1..=2).contains(&self.lstm_layers) {
            return Err(Error::in_field("lstm_layers")(Error::invalid("must be 1 or 2")));
        }
        if self.dense_sizes.contains(&0) {
            return Err(Error::in_field("dense_sizes")(Error::invalid(
                "every layer needs ≥ 1 unit",
            )));
        }
        if self.scheme <= 2 && self.dense_sizes.is_empty() {
            return Err(Error::in_field("dense_sizes")(Error::invalid(
                "schemes 1 and 2 need a dense layer after the concat",
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::in_field("dropout")(Error::invalid("must be in [0, 1)")));
        }
        Ok(())
    }

    fn lstm_params(&self, input: usize) -> usize {
        let h = self.lstm_hidden;
        let first = 4 * h * (input + h) + 4 * h;
        let rest = (self.lstm_layers - 1) * (4 * h * (2 * h) + 4 * h);
        first + rest
    }

    fn sequence_params(&self, input: usize) -> usize {
        let h = self.lstm_hidden;
        self.lstm_params(input) + if self.attention { h * h + 2 * h } else { 0 }
    }

    fn dense_stack_params(&self, mut input: usize) -> usize {
        let mut n = 0;
        for &out in &self.dense_sizes {
            n += input * out + out;
            input = out;
        }
        n + input + 1
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (c, b, f, d, h) = (
            self.channels,
            self.bands,
            self.features,
            self.embed_dim,
            self.lstm_hidden,
        );
        let branch_tail = self.sequence_params(c) + h * d + d;
        match self.scheme {
            1 => f * b * ((c + 1) + branch_tail) + self.dense_stack_params(f * b * d),
            2 => f * ((b + 1) + (c + 1) + branch_tail) + self.dense_stack_params(f * d),
            3 => f * ((b + 1) + (c + 1)) + (f + 1) + self.sequence_params(c) + self.dense_stack_params(h),
            _ => f * (b + 1) + (f + 1) + (c + 1) + self.sequence_params(c) + self.dense_stack_params(h),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    ChannelCollapse,
    BandMix,
    FeatureMix,
    Lstm,
    AttentionPool,
    Dense,
    Concat,
    SigmoidHead,
}

/// One node of the layer graph; `inputs` only point at earlier nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNode {
    pub kind: LayerKind,
    pub name: String,
    pub params: Range<usize>,
    pub inputs: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Glorot { fan_in: usize, fan_out: usize },
    Const(f64),
}

#[derive(Debug, Clone)]
struct Affine {
    w: Range<usize>,
    b: Range<usize>,
    input: usize,
    output: usize,
}

#[derive(Debug, Clone)]
struct LstmLayer {
    w: Range<usize>,
    b: Range<usize>,
    input: usize,
}

#[derive(Debug, Clone)]
struct Attention {
    w: Range<usize>,
    b: Range<usize>,
    v: Range<usize>,
}

#[derive(Debug, Clone)]
struct Sequence {
    lstm: Vec<LstmLayer>,
    attention: Option<Attention>,
}

#[derive(Debug, Clone)]
struct Branch {
    feature: usize,
    band: Option<usize>,
    band_mix: Option<Affine>,
    collapse: Affine,
    sequence: Sequence,
    embed: Affine,
}

#[derive(Debug, Clone)]
struct Trunk {
    dense: Vec<Affine>,
    head: Affine,
}

#[derive(Debug, Clone)]
enum Topology {
    /// Schemes 1 and 2.
    Branched { branches: Vec<Branch>, trunk: Trunk },
    Scheme3 {
        per_feature: Vec<(Affine, Affine)>,
        feature_mix: Affine,
        sequence: Sequence,
        trunk: Trunk,
    },
    Scheme4 {
        band_mix: Vec<Affine>,
        feature_mix: Affine,
        collapse: Affine,
        sequence: Sequence,
        trunk: Trunk,
    },
}

struct Builder {
    next: usize,
    graph: Vec<LayerNode>,
    inits: Vec<(Range<usize>, Init)>,
}

impl Builder {
    fn alloc(&mut self, n: usize, init: Init) -> Range<usize> {
        let r = self.next..self.next + n;
        self.next += n;
        self.inits.push((r.clone(), init));
        r
    }

    fn node(&mut self, kind: LayerKind, name: String, params: Range<usize>, inputs: Vec<usize>) -> usize {
        self.graph.push(LayerNode {
            kind,
            name,
            params,
            inputs,
        });
        self.graph.len() - 1
    }

    /// Weight vector of length `n` contracting one axis, plus a scalar bias.
    fn contraction(&mut self, kind: LayerKind, name: String, n: usize, inputs: Vec<usize>) -> (Affine, usize) {
        let start = self.next;
        let w = self.alloc(n, Init::Glorot { fan_in: n, fan_out: 1 });
        let b = self.alloc(1, Init::Const(0.0));
        let id = self.node(kind, name, start..self.next, inputs);
        (
            Affine {
                w,
                b,
                input: n,
                output: 1,
            },
            id,
        )
    }

    fn dense(
        &mut self,
        kind: LayerKind,
        name: String,
        input: usize,
        output: usize,
        inputs: Vec<usize>,
    ) -> (Affine, usize) {
        let start = self.next;
        let w = self.alloc(
            input * output,
            Init::Glorot {
                fan_in: input,
                fan_out: output,
            },
        );
        let b = self.alloc(output, Init::Const(0.0));
        let id = self.node(kind, name, start..self.next, inputs);
        (Affine { w, b, input, output }, id)
    }

    fn sequence(&mut self, cfg: &ModelConfig, name: &str, input: usize, mut prev: usize) -> (Sequence, usize) {
        let h = cfg.lstm_hidden;
        let mut lstm = Vec::new();
        let mut inp = input;
        for l in 0..cfg.lstm_layers {
            let start = self.next;
            let w = self.alloc(
                4 * h * (inp + h),
                Init::Glorot {
                    fan_in: inp + h,
                    fan_out: 4 * h,
                },
            );
            let b = self.next..self.next + 4 * h;
            // forget-gate bias starts at 1
            self.alloc(h, Init::Const(0.0));
            self.alloc(h, Init::Const(1.0));
            self.alloc(2 * h, Init::Const(0.0));
            prev = self.node(LayerKind::Lstm, format!("{name}.lstm{l}"), start..self.next, vec![prev]);
            lstm.push(LstmLayer { w, b, input: inp });
            inp = h;
        }
        let attention = if cfg.attention {
            let start = self.next;
            let w = self.alloc(h * h, Init::Glorot { fan_in: h, fan_out: h });
            let b = self.alloc(h, Init::Const(0.0));
            let v = self.alloc(h, Init::Glorot { fan_in: h, fan_out: 1 });
            prev = self.node(
                LayerKind::AttentionPool,
                format!("{name}.attention"),
                start..self.next,
                vec![prev],
            );
            Some(Attention { w, b, v })
        } else {
            None
        };
        (Sequence { lstm, attention }, prev)
    }

    fn trunk(&mut self, cfg: &ModelConfig, mut input: usize, mut prev: usize) -> Trunk {
        let mut dense = Vec::new();
        for (k, &out) in cfg.dense_sizes.iter().enumerate() {
            let (a, id) = self.dense(LayerKind::Dense, format!("dense{k}"), input, out, vec![prev]);
            dense.push(a);
            input = out;
            prev = id;
        }
        let (head, _) = self.dense(LayerKind::SigmoidHead, "head".into(), input, 1, vec![prev]);
        Trunk { dense, head }
    }
}

#[derive(Debug, Clone)]
pub struct FusionModel {
    pub config: ModelConfig,
    pub params: Vec<f64>,
    graph: Vec<LayerNode>,
    inits: Vec<(Range<usize>, Init)>,
    topology: Topology,
    /// Concat input index → feature, schemes 1 and 2 only.
    groups: Option<Vec<Feature>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active, masks drawn from `seed`.
    Train {
        seed: u64,
    },
}

/// Recorded forward computation for one input.
pub struct ForwardPass {
    tape: Tape,
    logit: Var,
    concat: Option<Var>,
    attention: Vec<Var>,
}

impl ForwardPass {
    pub fn logit(&self) -> f64 {
        self.tape.value(self.logit)[0]
    }

    pub fn probability(&self) -> f64 {
        sigmoid(self.logit())
    }

    pub fn embedding(&self) -> Option<Vec<f64>> {
        self.concat.map(|v| self.tape.value(v).to_vec())
    }

    /// Softmax weights of every attention pool, one vector per pool.
    pub fn attention_weights(&self) -> Vec<Vec<f64>> {
        self.attention.iter().map(|v| self.tape.value(*v).to_vec()).collect()
    }

    /// Binary cross-entropy on the logit and its gradient w.r.t. parameters.
    pub fn loss_and_gradient(&self, target: f64, n_params: usize) -> (f64, Vec<f64>) {
        let z = self.logit();
        let loss = z.max(0.0) - z * target + (-z.abs()).exp().ln_1p();
        let mut grad = vec![0.0; n_params];
        self.tape.backward(self.logit, &[sigmoid(z) - target], &mut grad);
        (loss, grad)
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct Ctx<'a> {
    tape: Tape,
    params: &'a [f64],
    dropout: f64,
    rng: Option<ChaCha8Rng>,
    attention: Vec<Var>,
}

impl Ctx<'_> {
    fn p(&mut self, r: &Range<usize>) -> Var {
        self.tape.param(self.params, r.clone())
    }

    fn contract(&mut self, a: &Affine, m: Var, rows: usize, cols: usize, transpose: bool) -> Var {
        let w = self.p(&a.w);
        let b = self.p(&a.b);
        let y = if transpose {
            self.tape.mat_t_vec(m, w, rows, cols)
        } else {
            self.tape.matvec(m, w, rows, cols)
        };
        self.tape.add_scalar(y, b)
    }

    fn dense(&mut self, a: &Affine, x: Var, relu: bool) -> Var {
        let w = self.p(&a.w);
        let b = self.p(&a.b);
        let y = self.tape.matvec(w, x, a.output, a.input);
        let y = self.tape.add(y, b);
        if !relu {
            return y;
        }
        let y = self.tape.relu(y);
        self.dropout(y)
    }

    fn dropout(&mut self, x: Var) -> Var {
        let Some(rng) = self.rng.as_mut() else {
            return x;
        };
        if self.dropout == 0.0 {
            return x;
        }
        let keep = 1.0 - self.dropout;
        let n = self.tape.value(x).len();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = self.tape.input(mask);
        self.tape.mul(x, m)
    }

    fn sequence(&mut self, s: &Sequence, mut xs: Vec<Var>, hidden: usize) -> Var {
        for layer in &s.lstm {
            let w = self.p(&layer.w);
            let b = self.p(&layer.b);
            let mut h = self.tape.input(vec![0.0; hidden]);
            let mut c = self.tape.input(vec![0.0; hidden]);
            let mut out = Vec::with_capacity(xs.len());
            for &x in &xs {
                let xh = self.tape.concat(&[x, h]);
                let z = self.tape.matvec(w, xh, 4 * hidden, layer.input + hidden);
                let z = self.tape.add(z, b);
                let i = self.tape.slice(z, 0..hidden);
                let i = self.tape.sigmoid(i);
                let f = self.tape.slice(z, hidden..2 * hidden);
                let f = self.tape.sigmoid(f);
                let g = self.tape.slice(z, 2 * hidden..3 * hidden);
                let g = self.tape.tanh(g);
                let o = self.tape.slice(z, 3 * hidden..4 * hidden);
                let o = self.tape.sigmoid(o);
                let fc = self.tape.mul(f, c);
                let ig = self.tape.mul(i, g);
                c = self.tape.add(fc, ig);
                let tc = self.tape.tanh(c);
                h = self.tape.mul(o, tc);
                out.push(h);
            }
            xs = out;
        }
        match &s.attention {
            None => *xs.last().expect("time_steps ≥ 1"),
            Some(a) => {
                let w = self.p(&a.w);
                let b = self.p(&a.b);
                let v = self.p(&a.v);
                let scores: Vec<Var> = xs
                    .iter()
                    .map(|&h| {
                        let u = self.tape.matvec(w, h, hidden, hidden);
                        let u = self.tape.add(u, b);
                        let u = self.tape.tanh(u);
                        self.tape.matvec(v, u, 1, hidden)
                    })
                    .collect();
                let e = self.tape.concat(&scores);
                let alpha = self.tape.softmax(e);
                self.attention.push(alpha);
                self.tape.weighted_sum(alpha, &xs)
            }
        }
    }

    fn trunk(&mut self, t: &Trunk, mut x: Var) -> Var {
        for d in &t.dense {
            x = self.dense(d, x, true);
        }
        self.dense(&t.head, x, false)
    }
}

impl FusionModel {
    /// Builds the layer graph and draws initial parameters from `cfg.seed`.
    pub fn build(cfg: &ModelConfig) -> Result<FusionModel> {
        cfg.validate()?;
        let (c, bn, fnum, d, h) = (cfg.channels, cfg.bands, cfg.features, cfg.embed_dim, cfg.lstm_hidden);
        let mut bld = Builder {
            next: 0,
            graph: Vec::new(),
            inits: Vec::new(),
        };
        let mut groups = None;
        let topology = match cfg.scheme {
            1 | 2 => {
                let keys: Vec<(usize, Option<usize>)> = if cfg.scheme == 1 {
                    (0..fnum).flat_map(|f| (0..bn).map(move |b| (f, Some(b)))).collect()
                } else {
                    (0..fnum).map(|f| (f, None)).collect()
                };
                let mut branches = Vec::new();
                let mut ends = Vec::new();
                for (f, band) in keys {
                    let name = match band {
                        Some(b) => format!("{}.band{b}", Feature::ALL[f].as_str()),
                        None => Feature::ALL[f].as_str().to_string(),
                    };
                    let (band_mix, prev) = if band.is_none() {
                        let (a, id) = bld.contraction(LayerKind::BandMix, format!("{name}.band_mix"), bn, vec![]);
                        (Some(a), vec![id])
                    } else {
                        (None, vec![])
                    };
                    let (collapse, id) =
                        bld.contraction(LayerKind::ChannelCollapse, format!("{name}.collapse"), c, prev);
                    let (sequence, id) = bld.sequence(cfg, &name, c, id);
                    let (embed, id) = bld.dense(LayerKind::Dense, format!("{name}.embed"), h, d, vec![id]);
                    ends.push(id);
                    branches.push(Branch {
                        feature: f,
                        band,
                        band_mix,
                        collapse,
                        sequence,
                        embed,
                    });
                }
                let concat = bld.node(LayerKind::Concat, "concat".into(), bld.next..bld.next, ends);
                groups = Some(
                    branches
                        .iter()
                        .flat_map(|br| std::iter::repeat_n(Feature::ALL[br.feature], d))
                        .collect(),
                );
                let trunk = bld.trunk(cfg, branches.len() * d, concat);
                Topology::Branched { branches, trunk }
            }
            3 => {
                let mut per_feature = Vec::new();
                let mut ends = Vec::new();
                for f in 0..fnum {
                    let name = Feature::ALL[f].as_str();
                    let (bm, id) = bld.contraction(LayerKind::BandMix, format!("{name}.band_mix"), bn, vec![]);
                    let (cc, id) = bld.contraction(LayerKind::ChannelCollapse, format!("{name}.collapse"), c, vec![id]);
                    per_feature.push((bm, cc));
                    ends.push(id);
                }
                let (feature_mix, id) = bld.contraction(LayerKind::FeatureMix, "feature_mix".into(), fnum, ends);
                let (sequence, id) = bld.sequence(cfg, "trunk", c, id);
                let trunk = bld.trunk(cfg, h, id);
                Topology::Scheme3 {
                    per_feature,
                    feature_mix,
                    sequence,
                    trunk,
                }
            }
            _ => {
                let mut band_mix = Vec::new();
                let mut ends = Vec::new();
                for f in 0..fnum {
                    let name = Feature::ALL[f].as_str();
                    let (bm, id) = bld.contraction(LayerKind::BandMix, format!("{name}.band_mix"), bn, vec![]);
                    band_mix.push(bm);
                    ends.push(id);
                }
                let (feature_mix, id) = bld.contraction(LayerKind::FeatureMix, "feature_mix".into(), fnum, ends);
                let (collapse, id) = bld.contraction(LayerKind::ChannelCollapse, "collapse".into(), c, vec![id]);
                let (sequence, id) = bld.sequence(cfg, "trunk", c, id);
                let trunk = bld.trunk(cfg, h, id);
                Topology::Scheme4 {
                    band_mix,
                    feature_mix,
                    collapse,
                    sequence,
                    trunk,
                }
            }
        };
        let mut model = FusionModel {
            config: cfg.clone(),
            params: vec![0.0; bld.next],
            graph: bld.graph,
            inits: bld.inits,
            topology,
            groups,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        model.initialize(0..model.params.len(), &mut rng);
        Ok(model)
    }

    /// Re-draws every parameter block inside `range`.
    fn initialize(&mut self, range: Range<usize>, rng: &mut ChaCha8Rng) {
        for (r, init) in &self.inits {
            if r.start < range.start || r.end > range.end {
                continue;
            }
            match *init {
                Init::Const(v) => self.params[r.clone()].fill(v),
                Init::Glorot { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for p in &mut self.params[r.clone()] {
                        *p = rng.random_range(-limit..limit);
                    }
                }
            }
        }
    }

    pub(crate) fn head_range(&self) -> Range<usize> {
        let trunk = match &self.topology {
            Topology::Branched { trunk, .. } | Topology::Scheme3 { trunk, .. } | Topology::Scheme4 { trunk, .. } => {
                trunk
            }
        };
        trunk.head.w.start..trunk.head.b.end
    }

    pub(crate) fn reinitialize_head(&mut self, rng: &mut ChaCha8Rng) {
        let r = self.head_range();
        self.initialize(r, rng);
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn graph(&self) -> &[LayerNode] {
        &self.graph
    }

    pub fn n_branches(&self) -> usize {
        match &self.topology {
            Topology::Branched { branches, .. } => branches.len(),
            _ => 0,
        }
    }

    /// Concat input index → feature (schemes 1 and 2).
    pub fn group_map(&self) -> Option<&[Feature]> {
        self.groups.as_deref()
    }

    /// Weights `N_in × N₂` (input-major) and biases of the first dense layer
    /// after the concat (schemes 1 and 2).
    pub fn concat_dense(&self) -> Option<(DMatrix<f64>, Vec<f64>)> {
        let Topology::Branched { trunk, .. } = &self.topology else {
            return None;
        };
        let d = &trunk.dense[0];
        let w = &self.params[d.w.clone()];
        let m = DMatrix::from_fn(d.input, d.output, |i, j| w[j * d.input + i]);
        Some((m, self.params[d.b.clone()].to_vec()))
    }

    fn check_shape(&self, x: &ArrayView5<f64>) -> Result<()> {
        let d = x.dim();
        let got = [d.0, d.1, d.2, d.3, d.4];
        let expected = self.config.input_shape();
        if got != expected {
            return Err(Error::Shape {
                expected: expected.to_vec(),
                got: got.to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward_pass(&self, x: &WindowTensor, mode: Mode) -> Result<ForwardPass> {
        self.forward_view(&x.values.view(), mode)
    }

    pub fn forward_view(&self, x: &ArrayView5<f64>, mode: Mode) -> Result<ForwardPass> {
        self.check_shape(x)?;
        let cfg = &self.config;
        let (c, bn, tn, h) = (cfg.channels, cfg.bands, cfg.time_steps, cfg.lstm_hidden);
        let mut ctx = Ctx {
            tape: Tape::new(),
            params: &self.params,
            dropout: cfg.dropout,
            rng: match mode {
                Mode::Eval => None,
                Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            },
            attention: Vec::new(),
        };
        // [row][col][band] block of one feature at one time step
        let block = |f: usize, t: usize| x.slice(s![f, t, .., .., ..]).iter().copied().collect::<Vec<f64>>();
        let mut concat = None;
        let logit = match &self.topology {
            Topology::Branched { branches, trunk } => {
                let mut outs = Vec::with_capacity(branches.len());
                for br in branches {
                    let mut seq = Vec::with_capacity(tn);
                    for t in 0..tn {
                        let m = match (br.band, &br.band_mix) {
                            (Some(b), _) => ctx
                                .tape
                                .input(x.slice(s![br.feature, t, .., .., b]).iter().copied().collect()),
                            (None, Some(bm)) => {
                                let xm = ctx.tape.input(block(br.feature, t));
                                ctx.contract(bm, xm, c * c, bn, false)
                            }
                            (None, None) => unreachable!("branch without band source"),
                        };
                        let v = ctx.contract(&br.collapse, m, c, c, true);
                        seq.push(ctx.tape.relu(v));
                    }
                    let pooled = ctx.sequence(&br.sequence, seq, h);
                    outs.push(ctx.dense(&br.embed, pooled, true));
                }
                let cat = ctx.tape.concat(&outs);
                concat = Some(cat);
                ctx.trunk(trunk, cat)
            }
            Topology::Scheme3 {
                per_feature,
                feature_mix,
                sequence,
                trunk,
            } => {
                let nf = per_feature.len();
                let mut seq = Vec::with_capacity(tn);
                for t in 0..tn {
                    let mut rows = Vec::with_capacity(nf);
                    for (f, (bm, cc)) in per_feature.iter().enumerate() {
                        let xm = ctx.tape.input(block(f, t));
                        let m = ctx.contract(bm, xm, c * c, bn, false);
                        let v = ctx.contract(cc, m, c, c, true);
                        rows.push(ctx.tape.relu(v));
                    }
                    let stack = ctx.tape.concat(&rows);
                    seq.push(ctx.contract(feature_mix, stack, nf, c, true));
                }
                let pooled = ctx.sequence(sequence, seq, h);
                ctx.trunk(trunk, pooled)
            }
            Topology::Scheme4 {
                band_mix,
                feature_mix,
                collapse,
                sequence,
                trunk,
            } => {
                let nf = band_mix.len();
                let mut seq = Vec::with_capacity(tn);
                for t in 0..tn {
                    let mut mats = Vec::with_capacity(nf);
                    for (f, bm) in band_mix.iter().enumerate() {
                        let xm = ctx.tape.input(block(f, t));
                        mats.push(ctx.contract(bm, xm, c * c, bn, false));
                    }
                    let stack = ctx.tape.concat(&mats);
                    let m = ctx.contract(feature_mix, stack, nf, c * c, true);
                    let v = ctx.contract(collapse, m, c, c, true);
                    seq.push(ctx.tape.relu(v));
                }
                let pooled = ctx.sequence(sequence, seq, h);
                ctx.trunk(trunk, pooled)
            }
        };
        Ok(ForwardPass {
            tape: ctx.tape,
            logit,
            concat,
            attention: ctx.attention,
        })
    }

    /// Seizure probability.
    pub fn forward(&self, x: &WindowTensor, mode: Mode) -> Result<f64> {
        Ok(self.forward_pass(x, mode)?.probability())
    }

    /// Loss and parameter gradient for one labeled example.
    pub fn loss_and_gradient(&self, x: &WindowTensor, target: f64, mode: Mode) -> Result<(f64, Vec<f64>)> {
        Ok(self.forward_pass(x, mode)?.loss_and_gradient(target, self.n_params()))
    }

    /// Concat-layer activations in eval mode (schemes 1 and 2).
    pub fn embedding(&self, x: &WindowTensor) -> Result<Vec<f64>> {
        if self.groups.is_none() {
            return Err(Error::UnsupportedScheme(self.config.scheme));
        }
        Ok(self
            .forward_pass(x, Mode::Eval)?
            .embedding()
            .expect("branched model records its concat"))
    }
}

/// Forward/backward pairing: `backward` differentiates the most recent
/// `forward`.
pub struct Session<'m> {
    model: &'m FusionModel,
    last: Option<ForwardPass>,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m FusionModel) -> Self {
        Session { model, last: None }
    }

    pub fn forward(&mut self, x: &WindowTensor, mode: Mode) -> Result<f64> {
        let pass = self.model.forward_pass(x, mode)?;
        let p = pass.probability();
        self.last = Some(pass);
        Ok(p)
    }

    pub fn backward(&self, target: f64) -> Result<Vec<f64>> {
        let pass = self.last.as_ref().ok_or(Error::NoForwardPass)?;
        Ok(pass.loss_and_gradient(target, self.model.n_params()).1)
    }
}
