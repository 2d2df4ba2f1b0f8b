//! Stacks of E-I layers with a signed linear readout.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::eicircuit::{ei_layer_step, layer_currents, BoundLayer, EILayerParams, LayerCurrents, LayerShape};
use crate::eiprop::{ReplaceStats, StabilizationConfig};
use crate::error::{Error, Result};
use crate::neuron::{lif_step_tape, LifParams, LifVars, SpikeFn, SurrogateSpec};
use crate::param::Param;
use crate::tensor::{Scalar, Tape, Tensor, Var};

pub const DEFAULT_TIME_STEPS: usize = 4;
pub const VGG8_SMALL_CHANNELS: [usize; 5] = [64, 64, 128, 128, 256];
pub const CONV_KERNEL: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Architecture {
    /// Hidden excitatory widths of a dense stack.
    Mlp { hidden: Vec<usize> },
    /// Excitatory channel widths of a 3×3 conv stack.
    Vgg8Small { channels: Vec<usize> },
}

/// Per-sample input extents (NHWC without the batch axis).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputShape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Architecture,
    pub input: InputShape,
    pub classes: usize,
    pub time_steps: usize,
    #[serde(default)]
    pub lif: LifParams,
    #[serde(default)]
    pub surrogate: SurrogateSpec,
}

fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad width '{w}' in architecture")))
        })
        .collect()
}

impl ModelSpec {
    /// Parses `mlp:<in>,<hidden>...,<classes>` or
    /// `vgg8_small[:<c1>,...]`. `input` and `classes` come from the dataset;
    /// the dense form must agree with them.
    pub fn parse(arch: &str, input: InputShape, classes: usize) -> Result<Self> {
        let (family, rest) = arch.split_once(':').unwrap_or((arch, ""));
        let arch = match family {
            "mlp" => {
                let w = parse_widths(rest)?;
                if w.len() < 3 {
                    return Err(Error::Config(
                        "mlp needs input, at least one hidden width and classes".into(),
                    ));
                }
                if w[0] != input.len() || w[w.len() - 1] != classes {
                    return Err(Error::Config(format!(
                        "mlp {}→{} does not match data {}→{}",
                        w[0],
                        w[w.len() - 1],
                        input.len(),
                        classes
                    )));
                }
                Architecture::Mlp {
                    hidden: w[1..w.len() - 1].to_vec(),
                }
            }
            "vgg8_small" => Architecture::Vgg8Small {
                channels: if rest.is_empty() {
                    VGG8_SMALL_CHANNELS.to_vec()
                } else {
                    parse_widths(rest)?
                },
            },
            _ => return Err(Error::Config(format!("unknown architecture '{family}'"))),
        };
        let spec = Self {
            arch,
            input,
            classes,
            time_steps: DEFAULT_TIME_STEPS,
            lif: LifParams::default(),
            surrogate: SurrogateSpec::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn arch_string(&self) -> String {
        let join = |w: &[usize]| w.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        match &self.arch {
            Architecture::Mlp { hidden } => {
                format!("mlp:{},{},{}", self.input.len(), join(hidden), self.classes)
            }
            Architecture::Vgg8Small { channels } => format!("vgg8_small:{}", join(channels)),
        }
    }

    fn widths(&self) -> &[usize] {
        match &self.arch {
            Architecture::Mlp { hidden } => hidden,
            Architecture::Vgg8Small { channels } => channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.time_steps == 0 {
            return Err(Error::Config("time_steps must be ≥ 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.input.is_empty() {
            return Err(Error::Config("empty input shape".into()));
        }
        let w = self.widths();
        if w.is_empty() {
            return Err(Error::Config("need at least one E-I layer".into()));
        }
        if let Some(bad) = w.iter().find(|&&n| n == 0 || n % 4 != 0) {
            return Err(Error::Config(format!("width {bad} is not a positive multiple of 4")));
        }
        if matches!(self.arch, Architecture::Vgg8Small { .. }) {
            let pools = self.pool_after().iter().filter(|&&p| p).count();
            let f = 1usize << pools;
            if self.input.height % f != 0 || self.input.width % f != 0 {
                return Err(Error::Config(format!(
                    "input {}×{} not divisible by {f} for {pools} pooling stages",
                    self.input.height, self.input.width
                )));
            }
        }
        LifParams::new(self.lif.tau_e, self.lif.theta_e)?;
        SurrogateSpec::new(self.surrogate.kind, self.surrogate.width_alpha)?;
        Ok(())
    }

    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        match &self.arch {
            Architecture::Mlp { hidden } => {
                let mut d = self.input.len();
                hidden
                    .iter()
                    .map(|&n_e| {
                        let s = LayerShape::Dense { d, n_e };
                        d = n_e;
                        s
                    })
                    .collect()
            }
            Architecture::Vgg8Small { channels } => {
                let mut c_in = self.input.channels;
                channels
                    .iter()
                    .map(|&c_e| {
                        let s = LayerShape::Conv {
                            c_in,
                            c_e,
                            kernel: CONV_KERNEL,
                        };
                        c_in = c_e;
                        s
                    })
                    .collect()
            }
        }
    }

    /// 2×2 average pooling after a conv layer whose successor widens, and
    /// after the last conv layer.
    pub fn pool_after(&self) -> Vec<bool> {
        match &self.arch {
            Architecture::Mlp { hidden } => vec![false; hidden.len()],
            Architecture::Vgg8Small { channels } => (0..channels.len())
                .map(|i| i + 1 == channels.len() || channels[i + 1] > channels[i])
                .collect(),
        }
    }

    pub fn feature_len(&self) -> usize {
        match &self.arch {
            Architecture::Mlp { hidden } => hidden[hidden.len() - 1],
            Architecture::Vgg8Small { channels } => {
                let pools = self.pool_after().iter().filter(|&&p| p).count();
                let f = 1usize << pools;
                (self.input.height / f) * (self.input.width / f) * channels[channels.len() - 1]
            }
        }
    }

    /// Shape of one batch as consumed by the first layer.
    pub fn batch_shape(&self, batch: usize) -> Vec<usize> {
        match self.arch {
            Architecture::Mlp { .. } => vec![batch, self.input.len()],
            Architecture::Vgg8Small { .. } => {
                vec![batch, self.input.height, self.input.width, self.input.channels]
            }
        }
    }
}

/// The same image at every time step.
pub fn direct_encode<S: Scalar>(image: &Tensor<S>, time_steps: usize) -> Vec<Tensor<S>> {
    vec![image.clone(); time_steps]
}

#[derive(Clone, Debug)]
pub struct Network<S> {
    pub spec: ModelSpec,
    pub layers: Vec<EILayerParams<S>>,
    pub head_w: Param<S>,
    pub head_b: Param<S>,
    pub stabilization: StabilizationConfig,
    pub spike: SpikeFn,
}

#[derive(Clone, Debug)]
pub struct BoundNetwork {
    pub layers: Vec<BoundLayer>,
    pub head_w: Var,
    pub head_b: Var,
}

/// Everything recorded by one unrolled forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `currents[l][t]`; the first layer's currents are computed once and
    /// repeated because direct encoding makes them time-invariant.
    pub currents: Vec<Vec<LayerCurrents>>,
    /// `spikes[l][t]`, before any pooling.
    pub spikes: Vec<Vec<Var>>,
    pub logits: Option<Var>,
    pub stabilization: ReplaceStats,
}

impl<S: Scalar> Network<S> {
    /// Placeholder E-I layers (see `eiinit::calibrate`) and a uniformly
    /// initialized readout.
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(EILayerParams::zeros)
            .collect::<Result<Vec<_>>>()?;
        let feat = spec.feature_len();
        let bound = 1.0 / (feat as f64).sqrt();
        let dist = Uniform::new(-bound, bound).map_err(|e| Error::Parameter(e.to_string()))?;
        let mut draw = |n: usize| -> Vec<S> { (0..n).map(|_| S::from_f64(dist.sample(rng))).collect() };
        let head_w = Tensor::new(&[spec.classes, feat], draw(spec.classes * feat))?;
        let head_b = Tensor::new(&[spec.classes], draw(spec.classes))?;
        Ok(Self {
            spike: SpikeFn {
                surrogate: spec.surrogate,
                smooth: false,
            },
            spec,
            layers,
            head_w: Param::new(head_w, false),
            head_b: Param::new(head_b, false),
            stabilization: StabilizationConfig::default(),
        })
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }

    pub fn params(&self) -> Vec<(String, &Param<S>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, p) in crate::eicircuit::PARAM_NAMES.iter().zip(layer.params()) {
                out.push((format!("layer{l}.{name}"), p));
            }
        }
        out.push(("head.weight".into(), &self.head_w));
        out.push(("head.bias".into(), &self.head_b));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut out: Vec<&mut Param<S>> = Vec::new();
        for layer in self.layers.iter_mut() {
            out.extend(layer.params_mut());
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params().into_iter().map(|(n, _)| n).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Smallest entry over every sign-constrained parameter.
    pub fn min_constrained(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.min_constrained())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn bind(&self, tape: &mut Tape<S>, requires_grad: bool) -> BoundNetwork {
        BoundNetwork {
            layers: self.layers.iter().map(|l| l.bind(tape, requires_grad)).collect(),
            head_w: self.head_w.bind(tape, requires_grad),
            head_b: self.head_b.bind(tape, requires_grad),
        }
    }

    pub fn collect_grads(&mut self, tape: &mut Tape<S>, bound: &BoundNetwork) -> Result<()> {
        for (layer, b) in self.layers.iter_mut().zip(&bound.layers) {
            layer.collect_grads(tape, b)?;
        }
        self.head_w.collect_grad(tape, bound.head_w)?;
        self.head_b.collect_grad(tape, bound.head_b)
    }

    /// Reshapes a dataset batch (`[B, H, W, C]` or flat) to the layout the
    /// first layer expects.
    pub fn prepare_input(&self, x: Tensor<S>) -> Result<Tensor<S>> {
        let b = x.batch();
        if x.sample_len() != self.spec.input.len() {
            return Err(Error::Dimension {
                op: "network_input",
                detail: format!("sample of {} values, model expects {}", x.sample_len(), self.spec.input.len()),
            });
        }
        x.reshape(&self.spec.batch_shape(b))
    }

    /// Unrolls the first `depth` E-I layers over `T` steps; logits are
    /// produced when the whole stack runs.
    pub fn run(&self, tape: &mut Tape<S>, bound: &BoundNetwork, x: Var, depth: usize) -> Result<Trace> {
        let depth = depth.min(self.layers.len());
        let t_steps = self.spec.time_steps;
        let pool = self.spec.pool_after();
        let mut trace = Trace {
            currents: Vec::with_capacity(depth),
            spikes: Vec::with_capacity(depth),
            logits: None,
            stabilization: ReplaceStats::default(),
        };
        let mut inputs: Vec<Var> = Vec::new();
        for l in 0..depth {
            let layer = &bound.layers[l];
            let mut state: Option<LifVars> = None;
            let mut spikes = Vec::with_capacity(t_steps);
            let mut currents = Vec::with_capacity(t_steps);
            if l == 0 {
                let c = layer_currents(tape, layer, x, &self.stabilization)?;
                add_stats(&mut trace.stabilization, c.stabilization);
                for _ in 0..t_steps {
                    let next = lif_step_tape(tape, &self.spec.lif, &self.spike, state, c.i_int)?;
                    spikes.push(next.spikes);
                    currents.push(c);
                    state = Some(next);
                }
            } else {
                for &s_in in &inputs {
                    let (next, c) = ei_layer_step(
                        tape,
                        layer,
                        &self.spec.lif,
                        &self.spike,
                        state,
                        s_in,
                        &self.stabilization,
                    )?;
                    add_stats(&mut trace.stabilization, c.stabilization);
                    spikes.push(next.spikes);
                    currents.push(c);
                    state = Some(next);
                }
            }
            inputs = if pool[l] {
                spikes
                    .iter()
                    .map(|&s| tape.avg_pool2(s))
                    .collect::<Result<Vec<_>>>()?
            } else {
                spikes.clone()
            };
            trace.spikes.push(spikes);
            trace.currents.push(currents);
        }
        if depth == self.layers.len() {
            let mut acc = inputs[0];
            for &s in &inputs[1..] {
                acc = tape.add(acc, s)?;
            }
            let mean = tape.scale(acc, S::from_f64(1.0 / t_steps as f64));
            let batch = tape.shape(mean)[0];
            let feat = tape.reshape(mean, &[batch, self.spec.feature_len()])?;
            let z = tape.linear(feat, bound.head_w)?;
            trace.logits = Some(tape.add(z, bound.head_b)?);
        }
        Ok(trace)
    }

    pub fn forward(&self, tape: &mut Tape<S>, bound: &BoundNetwork, x: Var) -> Result<Trace> {
        self.run(tape, bound, x, self.layers.len())
    }

    /// Logits for a batch with no gradient bookkeeping.
    pub fn predict(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(self.prepare_input(x.clone())?);
        let trace = self.forward(&mut tape, &bound, xv)?;
        let logits = trace.logits.expect("full-depth run yields logits");
        Ok(tape.value(logits).clone())
    }
}

fn add_stats(acc: &mut ReplaceStats, s: ReplaceStats) {
    acc.replaced += s.replaced;
    acc.fallback_samples += s.fallback_samples;
}

/// Index of the largest logit per row.
pub fn argmax_rows<S: Scalar>(logits: &Tensor<S>) -> Vec<usize> {
    let k = logits.sample_len();
    logits
        .data()
        .chunks(k.max(1))
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
