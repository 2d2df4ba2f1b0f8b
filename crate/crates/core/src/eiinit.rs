//! Statistics-driven initialization of E-I layers.
//!
//! For presynaptic activity with firing probability `p` and fan-in `d`:
//!
//! ```text
//! W_EE, W_IE ~ Exp(λ),   λ   = sqrt(d (2 - p) / (1 - p))
//! W_EI = 1 / n_I,        g_I = sqrt((2 - p) / (d p))
//! g_E = 1,               b_E = 0
//! ```
//!
//! which balances mean excitation against subtractive inhibition and sets
//! the divisive current to the standard deviation of `I_EE`.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::eicircuit::{layer_currents, EILayerParams};
use crate::eiprop::StabilizationConfig;
use crate::network::Network;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor};

pub const P_MIN: f64 = 0.01;
pub const P_MAX: f64 = 0.99;

/// Which initialization scheme to use for the E-I layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    Ei,
    /// Clamped Kaiming normal on `W_EE` and `W_IE`.
    KaimingEeIe,
    /// Clamped Kaiming normal on `W_EE`, `W_IE` and `W_EI`.
    KaimingAll,
}

impl InitMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ei" => Ok(Self::Ei),
            "kaiming-ee-ie" => Ok(Self::KaimingEeIe),
            "kaiming-all" => Ok(Self::KaimingAll),
            _ => Err(Error::Parameter(format!("unknown init mode '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KaimingGroups {
    EeIe,
    EeIeEi,
}

/// Empirical moments of one layer's currents, pooled over batch, neurons,
/// positions and time steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CurrentStats {
    pub mean_i_ee: f64,
    pub std_i_ee: f64,
    pub mean_i_ei_sub: f64,
    pub mean_i_ei_div: f64,
    pub mean_i_int: f64,
    /// `|mean(I_EE) - mean(I_EI_sub)| / mean(I_EE)`.
    pub balance_residual: f64,
    /// `mean(I_EI_div) / std(I_EE)`; 1 under the gain condition.
    pub gain_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub layer: usize,
    pub fan_in: usize,
    pub n_e: usize,
    pub n_i: usize,
    /// Rate estimate before clamping.
    pub p_raw: f64,
    pub p_hat: f64,
    pub clamped: bool,
    pub lambda: f64,
    pub g_i: f64,
    pub stats: Option<CurrentStats>,
    pub warnings: Vec<String>,
}

pub fn clamp_rate(p: f64) -> (f64, bool) {
    if p.is_nan() {
        return (P_MIN, true);
    }
    let c = p.clamp(P_MIN, P_MAX);
    (c, c != p)
}

pub fn exponential_rate(d: usize, p: f64) -> f64 {
    (d as f64 * (2.0 - p) / (1.0 - p)).sqrt()
}

pub fn inhibitory_gain(d: usize, p: f64) -> f64 {
    ((2.0 - p) / (d as f64 * p)).sqrt()
}

pub fn sample_exponential_weights<S: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    lambda: f64,
    rng: &mut R,
) -> Result<Tensor<S>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!("exponential rate must be > 0, got {lambda}")));
    }
    let dist = Exp::new(lambda).map_err(|e| Error::Parameter(e.to_string()))?;
    let n = shape.iter().product();
    let data = (0..n).map(|_| S::from_f64(dist.sample(rng))).collect();
    Tensor::new(shape, data)
}

fn set_common<S: Scalar>(params: &mut EILayerParams<S>, g_i: f64) {
    params.w_ei.value = Tensor::full(params.w_ei.value.shape(), S::from_f64(1.0 / params.n_i as f64));
    params.g_i.value = Tensor::full(params.g_i.value.shape(), S::from_f64(g_i));
    params.g_e.value = Tensor::ones(params.g_e.value.shape());
    params.b_e.value = Tensor::zeros(params.b_e.value.shape());
    params.zero_grad();
}

fn rate_report(layer: usize, params: &EILayerParams<impl Scalar>, p_raw: f64) -> InitReport {
    let (p_hat, clamped) = clamp_rate(p_raw);
    let mut warnings = Vec::new();
    if clamped {
        let msg = format!("layer {layer}: estimated rate {p_raw} clamped to {p_hat}");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    InitReport {
        layer,
        fan_in: params.fan_in,
        n_e: params.n_e,
        n_i: params.n_i,
        p_raw,
        p_hat,
        clamped,
        lambda: exponential_rate(params.fan_in, p_hat),
        g_i: inhibitory_gain(params.fan_in, p_hat),
        stats: None,
        warnings,
    }
}

/// E-I Init for one layer given its presynaptic rate estimate.
pub fn init_layer<S: Scalar, R: Rng + ?Sized>(
    layer: usize,
    params: &mut EILayerParams<S>,
    p_raw: f64,
    rng: &mut R,
) -> Result<InitReport> {
    let report = rate_report(layer, params, p_raw);
    params.w_ee.value = sample_exponential_weights(params.w_ee.value.shape(), report.lambda, rng)?;
    params.w_ie.value = sample_exponential_weights(params.w_ie.value.shape(), report.lambda, rng)?;
    set_common(params, report.g_i);
    Ok(report)
}

fn clamped_normal<S: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<S> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| S::from_f64(normal.sample(rng).max(0.0)))
        .collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Ablation baseline: fan-in scaled normal weights clamped at zero on the
/// selected groups; everything else as in [`init_layer`].
pub fn clamped_kaiming_init<S: Scalar, R: Rng + ?Sized>(
    layer: usize,
    params: &mut EILayerParams<S>,
    which: KaimingGroups,
    p_raw: f64,
    rng: &mut R,
) -> Result<InitReport> {
    let report = rate_report(layer, params, p_raw);
    params.w_ee.value = clamped_normal(params.w_ee.value.shape(), params.fan_in, rng);
    params.w_ie.value = clamped_normal(params.w_ie.value.shape(), params.fan_in, rng);
    set_common(params, report.g_i);
    if which == KaimingGroups::EeIeEi {
        params.w_ei.value = clamped_normal(params.w_ei.value.shape(), params.n_i, rng);
    }
    Ok(report)
}

pub fn init_with_mode<S: Scalar, R: Rng + ?Sized>(
    mode: InitMode,
    layer: usize,
    params: &mut EILayerParams<S>,
    p_raw: f64,
    rng: &mut R,
) -> Result<InitReport> {
    match mode {
        InitMode::Ei => init_layer(layer, params, p_raw, rng),
        InitMode::KaimingEeIe => clamped_kaiming_init(layer, params, KaimingGroups::EeIe, p_raw, rng),
        InitMode::KaimingAll => clamped_kaiming_init(layer, params, KaimingGroups::EeIeEi, p_raw, rng),
    }
}

/// Running moments over many tensors.
#[derive(Clone, Debug, Default)]
pub struct StatsAccumulator {
    n: f64,
    ee_sum: f64,
    ee_sq: f64,
    sub_sum: f64,
    div_sum: f64,
    int_sum: f64,
}

impl StatsAccumulator {
    pub fn push<S: Scalar>(
        &mut self,
        i_ee: &Tensor<S>,
        i_sub: &Tensor<S>,
        i_div: &Tensor<S>,
        i_int: &Tensor<S>,
    ) {
        self.n += i_ee.len() as f64;
        for &v in i_ee.data() {
            let v = v.to_f64();
            self.ee_sum += v;
            self.ee_sq += v * v;
        }
        self.sub_sum += i_sub.data().iter().map(|v| v.to_f64()).sum::<f64>();
        self.div_sum += i_div.data().iter().map(|v| v.to_f64()).sum::<f64>();
        self.int_sum += i_int.data().iter().map(|v| v.to_f64()).sum::<f64>();
    }

    pub fn finish(&self) -> CurrentStats {
        let n = self.n.max(1.0);
        let mean_ee = self.ee_sum / n;
        let var = (self.ee_sq / n - mean_ee * mean_ee).max(0.0);
        let std_ee = var.sqrt();
        let mean_sub = self.sub_sum / n;
        let mean_div = self.div_sum / n;
        CurrentStats {
            mean_i_ee: mean_ee,
            std_i_ee: std_ee,
            mean_i_ei_sub: mean_sub,
            mean_i_ei_div: mean_div,
            mean_i_int: self.int_sum / n,
            balance_residual: if mean_ee != 0.0 {
                (mean_ee - mean_sub).abs() / mean_ee.abs()
            } else {
                0.0
            },
            gain_ratio: if std_ee > 0.0 { mean_div / std_ee } else { f64::NAN },
        }
    }
}

/// One-step current statistics of a single layer on a fixed input batch.
pub fn measure_currents<S: Scalar>(
    params: &EILayerParams<S>,
    input: &Tensor<S>,
    stab: &StabilizationConfig,
    acc: &mut StatsAccumulator,
) -> Result<()> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let x = tape.constant(input.clone());
    let c = layer_currents(&mut tape, &bound, x, stab)?;
    acc.push(
        tape.value(c.i_ee),
        tape.value(c.i_ei_sub),
        tape.value(c.i_ei_div),
        tape.value(c.i_int),
    );
    Ok(())
}

/// Synthetic check of the closed forms: one dense layer initialized for
/// rate `p`, driven by Bernoulli(`p`) inputs in chunks of `chunk` samples.
pub fn bernoulli_layer_stats<S: Scalar, R: Rng + ?Sized>(
    params: &EILayerParams<S>,
    p: f64,
    samples: usize,
    chunk: usize,
    rng: &mut R,
) -> Result<CurrentStats> {
    if samples == 0 || chunk == 0 {
        return Err(Error::Parameter("sample count must be positive".into()));
    }
    let d = params.fan_in;
    let mut acc = StatsAccumulator::default();
    let mut left = samples;
    while left > 0 {
        let b = left.min(chunk);
        let data = (0..b * d)
            .map(|_| if rng.random_bool(p) { S::ONE } else { S::ZERO })
            .collect();
        let x = Tensor::new(&[b, d], data)?;
        measure_currents(params, &x, &StabilizationConfig::default(), &mut acc)?;
        left -= b;
    }
    Ok(acc.finish())
}

/// Sequential data-dependent initialization of every E-I layer.
///
/// Layer `l` is initialized from the mean activity reaching it: the mean of
/// `max(0, x)` for the first layer, the mean spike rate of layer `l - 1`
/// over neurons, batch and time steps otherwise. Each layer's current
/// statistics are then measured on the same batch with all shallower
/// layers already in place.
pub fn calibrate<S: Scalar, R: Rng + ?Sized>(
    net: &mut Network<S>,
    batch: &Tensor<S>,
    mode: InitMode,
    rng: &mut R,
) -> Result<Vec<InitReport>> {
    if batch.is_empty() || batch.batch() == 0 {
        return Err(Error::Parameter("calibration batch is empty".into()));
    }
    let x = net.prepare_input(batch.clone())?;
    let mut rate = x.data().iter().map(|v| v.to_f64().max(0.0)).sum::<f64>() / x.len() as f64;
    let mut reports = Vec::with_capacity(net.layers.len());
    for l in 0..net.layers.len() {
        let mut report = init_with_mode(mode, l, &mut net.layers[l], rate, rng)?;
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let trace = net.run(&mut tape, &bound, xv, l + 1)?;
        let mut acc = StatsAccumulator::default();
        for c in &trace.currents[l] {
            acc.push(
                tape.value(c.i_ee),
                tape.value(c.i_ei_sub),
                tape.value(c.i_ei_div),
                tape.value(c.i_int),
            );
        }
        report.stats = Some(acc.finish());
        let (sum, count) = trace.spikes[l].iter().fold((0.0, 0usize), |(s, n), &v| {
            let t = tape.value(v);
            (s + t.sum().to_f64(), n + t.len())
        });
        rate = sum / count.max(1) as f64;
        log::info!(
            "calibrated layer {l}: p̂={:.4} λ={:.3} g_I={:.4} output rate {:.4}",
            report.p_hat,
            report.lambda,
            report.g_i,
            rate
        );
        reports.push(report);
    }
    Ok(reports)
}
