//! Plot-ready data: integrated-current histograms, gradient magnitudes at a
//! single step, firing rates and finite-difference gradient checks.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::eicircuit::BoundLayer;
use crate::error::{Error, Result};
use crate::network::{BoundNetwork, ModelSpec, Network};
use crate::tensor::gradcheck::check_gradients;
use crate::tensor::{BackwardRule, Scalar, Tape, Tensor, Var};

pub const DEFAULT_BINS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    IInt,
    GradNorm,
    FiringRate,
}

impl Quantity {
    pub fn tag(self) -> &'static str {
        match self {
            Quantity::IInt => "I_int",
            Quantity::GradNorm => "grad_norm",
            Quantity::FiringRate => "firing_rate",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub layer: usize,
    pub quantity: Quantity,
    pub epoch: Option<usize>,
    /// `counts.len() + 1` strictly increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub samples: u64,
    pub mean: f64,
}

impl Histogram {
    /// Uniform bins over `[min, max]` of `values`; a degenerate range is
    /// widened to `±0.5` around the single value.
    pub fn from_values(
        values: &[f64],
        bins: usize,
        layer: usize,
        quantity: Quantity,
        epoch: Option<usize>,
    ) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Parameter("histogram needs at least one bin".into()));
        }
        if values.is_empty() {
            return Err(Error::Parameter("histogram of no samples".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite sample {v} in layer {layer}")));
        }
        let (mut lo, mut hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + width * i as f64 })
            .collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Self {
            layer,
            quantity,
            epoch,
            edges,
            counts,
            samples: values.len() as u64,
            mean: values.iter().sum::<f64>() / values.len() as f64,
        })
    }
}

/// Runs a fresh forward pass and bins `I_int` of the selected layers over
/// neurons, batch and time steps. Parameters are not touched.
pub fn collect_currents<S: Scalar>(
    net: &Network<S>,
    batch: &Tensor<S>,
    layers: &[usize],
    bins: usize,
    epoch: Option<usize>,
) -> Result<Vec<Histogram>> {
    if let Some(&bad) = layers.iter().find(|&&l| l >= net.layers.len()) {
        return Err(Error::Parameter(format!(
            "unknown layer id {bad}; model has {} E-I layers",
            net.layers.len()
        )));
    }
    let depth = layers.iter().max().map_or(0, |&l| l + 1);
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape, false);
    let x = tape.constant(net.prepare_input(batch.clone())?);
    let trace = net.run(&mut tape, &bound, x, depth)?;
    layers
        .iter()
        .map(|&l| {
            let values: Vec<f64> = trace.currents[l]
                .iter()
                .flat_map(|c| tape.value(c.i_int).data().iter().map(|v| v.to_f64()))
                .collect();
            Histogram::from_values(&values, bins, l, Quantity::IInt, epoch)
        })
        .collect()
}

/// Mean spike rate of every E-I layer over neurons, batch and time.
pub fn firing_rates<S: Scalar>(net: &Network<S>, batch: &Tensor<S>) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape, false);
    let x = tape.constant(net.prepare_input(batch.clone())?);
    let trace = net.run(&mut tape, &bound, x, net.layers.len())?;
    Ok(trace
        .spikes
        .iter()
        .map(|steps| {
            let (s, n) = steps.iter().fold((0.0, 0usize), |(s, n), &v| {
                let t = tape.value(v);
                (s + t.sum().to_f64(), n + t.len())
            });
            s / n.max(1) as f64
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradNormEntry {
    pub name: String,
    pub mean_abs: f64,
    pub l2: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradNormReport {
    pub loss: f64,
    pub entries: Vec<GradNormEntry>,
}

impl GradNormReport {
    pub fn get(&self, name: &str) -> Option<&GradNormEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Per-layer mean-|grad| ratio of `W_EI` to `W_EE`.
    pub fn inhibitory_ratios(&self, layers: usize) -> Vec<f64> {
        (0..layers)
            .map(|l| {
                let ei = self.get(&format!("layer{l}.W_EI")).map_or(f64::NAN, |e| e.mean_abs);
                let ee = self.get(&format!("layer{l}.W_EE")).map_or(f64::NAN, |e| e.mean_abs);
                ei / ee
            })
            .collect()
    }
}

/// One forward/backward pass on `(x, labels)`; reports raw gradients, before
/// any inhibitory scaling. The model's stored gradients are left as they
/// were.
pub fn grad_norm_report<S: Scalar>(net: &Network<S>, x: &Tensor<S>, labels: &[usize]) -> Result<GradNormReport> {
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape, true);
    let xv = tape.constant(net.prepare_input(x.clone())?);
    let trace = net.forward(&mut tape, &bound, xv)?;
    let logits = trace.logits.expect("full-depth run yields logits");
    let loss = tape.softmax_cross_entropy(logits, labels)?;
    let loss_value = tape.value(loss).item().to_f64();
    tape.backward(loss)?;
    let vars = bound_vars(&bound);
    let entries = net
        .param_names()
        .into_iter()
        .zip(vars)
        .map(|(name, v)| {
            let n = tape.value(v).len();
            let (abs, sq) = tape.grad(v).map_or((0.0, 0.0), |g| {
                g.data().iter().fold((0.0, 0.0), |(a, s), &x| {
                    let x = x.to_f64();
                    (a + x.abs(), s + x * x)
                })
            });
            GradNormEntry {
                name,
                mean_abs: abs / n.max(1) as f64,
                l2: sq.sqrt(),
                count: n,
            }
        })
        .collect();
    Ok(GradNormReport {
        loss: loss_value,
        entries,
    })
}

fn bound_vars(b: &BoundNetwork) -> Vec<Var> {
    let mut out: Vec<Var> = b
        .layers
        .iter()
        .flat_map(|l| [l.w_ee, l.w_ie, l.w_ei, l.g_i, l.g_e, l.b_e])
        .collect();
    out.push(b.head_w);
    out.push(b.head_b);
    out
}

/// One CSV row per bin: `layer,quantity,epoch,bin,lo,hi,count`.
pub fn histograms_csv(hists: &[Histogram]) -> String {
    let mut s = String::from("layer,quantity,epoch,bin,lo,hi,count\n");
    for h in hists {
        let epoch = h.epoch.map(|e| e.to_string()).unwrap_or_default();
        for (i, c) in h.counts.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                h.layer,
                h.quantity.tag(),
                epoch,
                i,
                h.edges[i],
                h.edges[i + 1],
                c
            );
        }
    }
    s
}

pub fn grad_norms_csv(r: &GradNormReport) -> String {
    let mut s = String::from("param,mean_abs,l2,count\n");
    for e in &r.entries {
        let _ = writeln!(s, "{},{},{},{}", e.name, e.mean_abs, e.l2, e.count);
    }
    s
}

/// Writes `<stem>.csv` and a JSON manifest `<stem>.json` with the
/// histogram metadata (edges, means, sample counts) into `dir`.
pub fn write_histograms(dir: &Path, stem: &str, hists: &[Histogram]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{stem}.csv")), histograms_csv(hists))?;
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(hists)?)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub arch: String,
    pub num_params: usize,
    pub min_denominator: f64,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub batch: usize,
    pub eps: f64,
    pub tolerance: f64,
    /// Test hook: routes the logits through an identity whose backward rule
    /// is deliberately wrong.
    pub corrupt_backward: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            batch: 3,
            eps: 1e-5,
            tolerance: 1e-4,
            corrupt_backward: false,
        }
    }
}

/// Identity forward, `1.1×` backward.
struct CorruptIdentity;

impl<S: Scalar> BackwardRule<S> for CorruptIdentity {
    fn name(&self) -> &'static str {
        "corrupt_identity"
    }

    fn backward(&self, upstream: &Tensor<S>, _: &[&Tensor<S>], _: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        vec![Some(upstream.map(|g| g * S::from_f64(1.1)))]
    }
}

/// Architecture used by the gradient check: two dense E-I layers.
pub const GRAD_CHECK_ARCH: &str = "mlp:6,8,8,3";

/// Central finite differences against the tape gradient of the
/// cross-entropy of a small two-layer E-I network with smooth spikes.
pub fn grad_check(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
    let input = crate::network::InputShape {
        height: 1,
        width: 1,
        channels: 6,
    };
    let spec = ModelSpec::parse(GRAD_CHECK_ARCH, input, 3)?;
    let mut net = Network::<f64>::new(spec, &mut rng)?;
    let x = Tensor::new(
        &[opts.batch, 6],
        (0..opts.batch * 6).map(|_| rng.random_range(0.2..1.0)).collect(),
    )?;
    let labels: Vec<usize> = (0..opts.batch).map(|i| i % 3).collect();
    crate::eiinit::calibrate(&mut net, &x, crate::eiinit::InitMode::Ei, &mut rng)?;
    check_network(&mut net, &x, &labels, opts)
}

/// Gradient check of an already-initialized network on `(x, labels)`, with
/// the spike nonlinearity switched to its smooth form.
pub fn check_network(
    net: &mut Network<f64>,
    x: &Tensor<f64>,
    labels: &[usize],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    net.spike.smooth = true;
    let x = net.prepare_input(x.clone())?;
    let min_denominator = {
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let trace = net.forward(&mut tape, &bound, xv)?;
        trace
            .currents
            .iter()
            .flatten()
            .map(|c| tape.value(c.i_ei_div_stable).min())
            .fold(f64::INFINITY, f64::min)
    };
    if min_denominator < 0.1 {
        return Err(Error::Contract(format!(
            "gradient check needs divisive terms ≥ 0.1, smallest is {min_denominator}"
        )));
    }

    let names = net.param_names();
    let inputs: Vec<Tensor<f64>> = net.params().iter().map(|(_, p)| p.value.clone()).collect();
    let n_layers = net.layers.len();
    let shapes: Vec<_> = net.layers.iter().map(|l| l.shape).collect();
    let corrupt = opts.corrupt_backward;
    let report = check_gradients(&inputs, opts.eps, 1e-8, |tape, vars| {
        let layers = (0..n_layers)
            .map(|l| {
                let v = &vars[6 * l..6 * l + 6];
                BoundLayer {
                    shape: shapes[l],
                    w_ee: v[0],
                    w_ie: v[1],
                    w_ei: v[2],
                    g_i: v[3],
                    g_e: v[4],
                    b_e: v[5],
                }
            })
            .collect();
        let bound = BoundNetwork {
            layers,
            head_w: vars[6 * n_layers],
            head_b: vars[6 * n_layers + 1],
        };
        let xv = tape.constant(x.clone());
        let trace = net.forward(tape, &bound, xv)?;
        let mut logits = trace.logits.expect("full-depth run yields logits");
        if corrupt {
            let value = tape.value(logits).clone();
            logits = tape.custom(&[logits], value, Box::new(CorruptIdentity));
        }
        tape.softmax_cross_entropy(logits, labels)
    })?;
    let params: Vec<ParamCheck> = report
        .iter()
        .map(|r| ParamCheck {
            name: names[r.index].clone(),
            max_rel_err: r.max_rel_err,
            worst_element: r.worst_element,
            analytic: r.analytic,
            numeric: r.numeric,
        })
        .collect();
    Ok(GradCheckReport {
        arch: net.spec.arch_string(),
        num_params: net.num_params(),
        min_denominator,
        max_rel_err: params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max),
        tolerance: opts.tolerance,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn histogram_counts_and_edges() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let h = Histogram::from_values(&v, 100, 0, Quantity::IInt, Some(2)).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 1000);
        assert_eq!(h.edges.len(), 101);
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn histogram_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut v: Vec<f64> = (0..500).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a = Histogram::from_values(&v, 40, 0, Quantity::IInt, None).unwrap();
        v.shuffle(&mut rng);
        let b = Histogram::from_values(&v, 40, 0, Quantity::IInt, None).unwrap();
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.edges, b.edges);
    }

    #[test]
    fn constant_values_get_one_bin() {
        let h = Histogram::from_values(&[0.25; 7], 10, 1, Quantity::IInt, None).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 7);
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
    }

    #[test]
    fn rejects_bad_histogram_input() {
        assert!(Histogram::from_values(&[], 10, 0, Quantity::IInt, None).is_err());
        assert!(Histogram::from_values(&[1.0], 0, 0, Quantity::IInt, None).is_err());
        assert!(Histogram::from_values(&[f64::NAN], 3, 0, Quantity::IInt, None).is_err());
    }

    fn small_net() -> (Network<f64>, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = crate::network::InputShape {
            height: 1,
            width: 1,
            channels: 10,
        };
        let spec = ModelSpec::parse("mlp:10,8,8,2", input, 2).unwrap();
        let mut net = Network::<f64>::new(spec, &mut rng).unwrap();
        let x = Tensor::new(&[4, 10], (0..40).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        crate::eiinit::calibrate(&mut net, &x, crate::eiinit::InitMode::Ei, &mut rng).unwrap();
        (net, x)
    }

    #[test]
    fn unknown_layer_is_parameter_error() {
        let (net, x) = small_net();
        assert!(matches!(
            collect_currents(&net, &x, &[2], 10, None),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn collection_is_read_only() {
        let (net, x) = small_net();
        let before = net.clone();
        let h = collect_currents(&net, &x, &[0, 1], 20, Some(0)).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h[0].samples, 4 * 8 * 4);
        for ((_, a), (_, b)) in before.params().iter().zip(net.params()) {
            assert_eq!(a.value, b.value);
        }
        let again = collect_currents(&net, &x, &[0, 1], 20, Some(0)).unwrap();
        assert_eq!(h, again);
    }

    #[test]
    fn zero_input_mass_sits_at_bias() {
        let (mut net, _) = small_net();
        for (i, v) in net.layers[0].b_e.value.data_mut().iter_mut().enumerate() {
            *v = if i % 2 == 0 { 0.3 } else { -0.2 };
        }
        let x = Tensor::zeros(&[3, 10]);
        let h = collect_currents(&net, &x, &[0], 10, None).unwrap();
        assert_eq!(h[0].counts[0] + h[0].counts[9], h[0].samples);
        assert!((h[0].edges[0] + 0.2).abs() < 1e-12);
        assert!((h[0].edges[10] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn grad_report_does_not_scale_and_ratio_divides_by_fan_in() {
        let (mut net, x) = small_net();
        let labels = [0, 1, 0, 1];
        let r = grad_norm_report(&net, &x, &labels).unwrap();
        assert_eq!(r.entries.len(), net.param_names().len());
        // Scaling applied by the trainer divides exactly by d.
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, true);
        let xv = tape.constant(x.clone());
        let trace = net.forward(&mut tape, &bound, xv).unwrap();
        let loss = tape.softmax_cross_entropy(trace.logits.unwrap(), &labels).unwrap();
        tape.backward(loss).unwrap();
        net.collect_grads(&mut tape, &bound).unwrap();
        let raw = net.layers[1].w_ei.grad.clone().unwrap();
        crate::eiprop::scale_inhibitory_gradient(&mut net.layers[1]).unwrap();
        let scaled = net.layers[1].w_ei.grad.as_ref().unwrap();
        for (a, b) in raw.data().iter().zip(scaled.data()) {
            assert_eq!(*b, a / 8.0);
        }
        let mean_raw = raw.data().iter().map(|v| v.abs()).sum::<f64>() / raw.len() as f64;
        assert!((r.get("layer1.W_EI").unwrap().mean_abs - mean_raw).abs() <= 1e-15 * mean_raw.max(1.0));
    }

    #[test]
    fn zero_loss_gradients_vanish() {
        let (mut net, x) = small_net();
        // Huge margin for the correct class drives the loss to exactly 0.
        net.head_w.value.map_inplace(|_| 0.0);
        net.head_b.value = Tensor::from_f64(&[2], &[1e4, 0.0]).unwrap();
        let r = grad_norm_report(&net, &x, &[0, 0, 0, 0]).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.entries.iter().all(|e| e.mean_abs == 0.0), "{r:?}");
    }

    #[test]
    fn grad_check_passes_and_negative_control_fails() {
        let ok = grad_check(&GradCheckOptions::default()).unwrap();
        assert!(ok.num_params <= 1000);
        assert!(ok.passed(), "{ok:?}");
        assert_eq!(ok.params.len(), 14);
        let bad = grad_check(&GradCheckOptions {
            corrupt_backward: true,
            ..GradCheckOptions::default()
        })
        .unwrap();
        assert!(!bad.passed());
    }

    #[test]
    fn conv_network_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = crate::network::InputShape {
            height: 4,
            width: 4,
            channels: 2,
        };
        let spec = ModelSpec::parse("vgg8_small:4,8", input, 3).unwrap();
        let mut net = Network::<f64>::new(spec, &mut rng).unwrap();
        let x = Tensor::new(&[2, 4, 4, 2], (0..64).map(|_| rng.random_range(0.2..1.0)).collect()).unwrap();
        crate::eiinit::calibrate(&mut net, &x, crate::eiinit::InitMode::Ei, &mut rng).unwrap();
        let r = check_network(&mut net, &x, &[0, 2], &GradCheckOptions::default()).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
