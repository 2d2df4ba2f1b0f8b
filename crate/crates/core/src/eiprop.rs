//! Forward stabilization of the divisive denominator and backward-pass
//! regulation of the inhibitory pathway.

use serde::{Deserialize, Serialize};

use crate::eicircuit::EILayerParams;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
pub enum StabilizationMode {
    /// Per-sample zero replacement by the smallest positive entry, with a
    /// straight-through backward pass.
    Adaptive,
    /// `x + ε` with the ordinary gradient (ablation baseline).
    Epsilon(f64),
    /// No stabilization; zero denominators are the caller's problem.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilizationConfig {
    pub mode: StabilizationMode,
    /// Replacement value for a sample whose entries are all zero.
    pub all_zero_fallback: f64,
}

impl Default for StabilizationConfig {
    fn default() -> Self {
        Self {
            mode: StabilizationMode::Adaptive,
            all_zero_fallback: 1.0,
        }
    }
}

impl StabilizationConfig {
    pub fn epsilon(eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Parameter(format!("epsilon must be > 0, got {eps}")));
        }
        Ok(Self {
            mode: StabilizationMode::Epsilon(eps),
            ..Self::default()
        })
    }

    /// Parses `adaptive`, `none` or `eps=<value>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(Self::default()),
            "none" => Ok(Self {
                mode: StabilizationMode::None,
                ..Self::default()
            }),
            _ => {
                let v = s
                    .strip_prefix("eps=")
                    .ok_or_else(|| Error::Parameter(format!("unknown stabilization '{s}'")))?;
                let eps: f64 = v
                    .parse()
                    .map_err(|_| Error::Parameter(format!("bad epsilon '{v}'")))?;
                Self::epsilon(eps)
            }
        }
    }
}

/// Bookkeeping from one stabilization call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReplaceStats {
    pub replaced: usize,
    pub fallback_samples: usize,
}

/// Forward value of adaptive zero replacement along the batch axis.
///
/// Within each sample, zeros become the sample's smallest positive entry;
/// an all-zero sample is filled with `fallback`.
pub fn replace_zeros_per_sample<S: Scalar>(
    x: &Tensor<S>,
    fallback: f64,
) -> Result<(Tensor<S>, ReplaceStats)> {
    if x.data().iter().any(|&v| v < S::ZERO) {
        return Err(Error::Contract(
            "adaptive zero replacement needs nonnegative input".into(),
        ));
    }
    let mut out = x.clone();
    let mut stats = ReplaceStats::default();
    let per = x.sample_len().max(1);
    for sample in out.data_mut().chunks_mut(per) {
        if !sample.iter().any(|&v| v == S::ZERO) {
            continue;
        }
        let min_pos = sample
            .iter()
            .copied()
            .filter(|&v| v > S::ZERO)
            .fold(None, |m: Option<S>, v| Some(m.map_or(v, |m| m.min(v))));
        let fill = match min_pos {
            Some(m) => m,
            None => {
                stats.fallback_samples += 1;
                S::from_f64(fallback)
            }
        };
        for v in sample.iter_mut().filter(|v| **v == S::ZERO) {
            *v = fill;
            stats.replaced += 1;
        }
    }
    Ok((out, stats))
}

/// Adaptive zero replacement with a straight-through backward pass: the
/// forward value has zeros replaced per sample, the gradient flows to `x`
/// unchanged.
pub fn adaptive_zero_replace<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    fallback: f64,
) -> Result<(Var, ReplaceStats)> {
    let value = tape.value(x);
    if value.data().iter().any(|&v| v < S::ZERO) {
        return Err(Error::Contract(
            "adaptive zero replacement needs nonnegative input".into(),
        ));
    }
    if !value.data().iter().any(|&v| v == S::ZERO) {
        return Ok((x, ReplaceStats::default()));
    }
    let (fwd, stats) = replace_zeros_per_sample(value, fallback)?;
    if stats.fallback_samples > 0 {
        log::debug!(
            "adaptive stabilization: {} all-zero sample(s) filled with {}",
            stats.fallback_samples,
            fallback
        );
    }
    let fwd = tape.constant(fwd);
    Ok((tape.custom_grad(fwd, x)?, stats))
}

/// `x + ε` with the ordinary gradient.
pub fn epsilon_stabilize<S: Scalar>(tape: &mut Tape<S>, x: Var, eps: f64) -> Result<Var> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("epsilon must be > 0, got {eps}")));
    }
    Ok(tape.add_scalar(x, S::from_f64(eps)))
}

pub fn stabilize<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    cfg: &StabilizationConfig,
) -> Result<(Var, ReplaceStats)> {
    match cfg.mode {
        StabilizationMode::Adaptive => adaptive_zero_replace(tape, x, cfg.all_zero_fallback),
        StabilizationMode::Epsilon(eps) => Ok((epsilon_stabilize(tape, x, eps)?, ReplaceStats::default())),
        StabilizationMode::None => Ok((x, ReplaceStats::default())),
    }
}

/// Divides the accumulated gradient of `W_EI` by the layer fan-in `d`.
/// Other gradients are left untouched.
pub fn scale_inhibitory_gradient<S: Scalar>(params: &mut EILayerParams<S>) -> Result<()> {
    let d = S::from_f64(params.fan_in as f64);
    let grad = params
        .w_ei
        .grad
        .as_mut()
        .ok_or_else(|| Error::Contract("missing gradient for W_EI".into()))?;
    grad.map_inplace(|g| g / d);
    Ok(())
}
