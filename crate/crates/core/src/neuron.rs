//! Excitatory LIF dynamics with soft reset and the fast-spiking inhibitory
//! operator.
//!
//! Excitatory update per time step (rest potential 0, Δt = 1):
//!
//! ```text
//! u[t+1] = (1 - 1/τ_E) · (u[t] - θ_E · s[t]) + I[t]
//! s[t+1] = H(u[t+1] - θ_E)          (H(0) = 1)
//! ```
//!
//! Spikes are binary in the forward pass; the backward pass through `H`
//! uses a surrogate derivative. The inhibitory population is treated as
//! instantaneous and emits `max(0, I)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::{BackwardRule, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    Arctan,
    Rectangular,
}

/// Pseudo-derivative used in place of `H'` during backpropagation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub kind: SurrogateKind,
    pub width_alpha: f64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        Self {
            kind: SurrogateKind::Arctan,
            width_alpha: 2.0,
        }
    }
}

impl SurrogateSpec {
    pub fn new(kind: SurrogateKind, width_alpha: f64) -> Result<Self> {
        if !(width_alpha > 0.0) {
            return Err(Error::Parameter(format!(
                "surrogate width alpha must be > 0, got {width_alpha}"
            )));
        }
        Ok(Self { kind, width_alpha })
    }

    /// Surrogate derivative at `v = u - θ`.
    pub fn derivative(&self, v: f64) -> f64 {
        let a = self.width_alpha;
        match self.kind {
            SurrogateKind::Arctan => {
                let z = PI * a * v / 2.0;
                a / 2.0 / (1.0 + z * z)
            }
            // Unit-area box of height α.
            SurrogateKind::Rectangular => {
                if v.abs() < 0.5 / a {
                    a
                } else {
                    0.0
                }
            }
        }
    }

    /// Antiderivative of [`Self::derivative`]; a sigmoid-like stand-in for `H`
    /// used in smooth test mode.
    pub fn smooth_step(&self, v: f64) -> f64 {
        let a = self.width_alpha;
        match self.kind {
            SurrogateKind::Arctan => 0.5 + (PI * a * v / 2.0).atan() / PI,
            SurrogateKind::Rectangular => (a * v + 0.5).clamp(0.0, 1.0),
        }
    }
}

/// Elementwise surrogate derivative of `v`.
pub fn surrogate_derivative<S: Scalar>(v: &Tensor<S>, spec: &SurrogateSpec) -> Tensor<S> {
    v.map(|x| S::from_f64(spec.derivative(x.to_f64())))
}

/// Excitatory neuron constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    pub tau_e: f64,
    pub theta_e: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            tau_e: 2.0,
            theta_e: 1.0,
        }
    }
}

impl LifParams {
    pub fn new(tau_e: f64, theta_e: f64) -> Result<Self> {
        if !(tau_e > 1.0) {
            return Err(Error::Parameter(format!("tau_E must be > 1, got {tau_e}")));
        }
        if !(theta_e > 0.0) {
            return Err(Error::Parameter(format!("theta_E must be > 0, got {theta_e}")));
        }
        Ok(Self { tau_e, theta_e })
    }

    pub fn leak(&self) -> f64 {
        1.0 - 1.0 / self.tau_e
    }
}

/// How the spike nonlinearity behaves in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeFn {
    pub surrogate: SurrogateSpec,
    /// Replace `H` by the surrogate's antiderivative in the forward pass too,
    /// so the whole network is differentiable (gradient checks only).
    pub smooth: bool,
}

impl Default for SpikeFn {
    fn default() -> Self {
        Self {
            surrogate: SurrogateSpec::default(),
            smooth: false,
        }
    }
}

impl SpikeFn {
    pub fn forward(&self, v: f64) -> f64 {
        if self.smooth {
            self.surrogate.smooth_step(v)
        } else if v >= 0.0 {
            1.0
        } else {
            0.0
        }
    }
}

/// Membrane state of one excitatory population, outside any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct ExcState<S> {
    pub u: Tensor<S>,
    /// Spikes emitted from `u` on the previous step.
    pub spikes: Tensor<S>,
    pub params: LifParams,
}

impl<S: Scalar> ExcState<S> {
    /// Resting state (u = 0, no prior spikes).
    pub fn rest(shape: &[usize], params: LifParams) -> Self {
        Self {
            u: Tensor::zeros(shape),
            spikes: Tensor::zeros(shape),
            params,
        }
    }
}

/// One forward LIF step on plain tensors. Returns the emitted spikes and the
/// next state.
pub fn lif_step<S: Scalar>(
    state: &ExcState<S>,
    input: &Tensor<S>,
) -> Result<(Tensor<S>, ExcState<S>)> {
    if input.shape() != state.u.shape() {
        return Err(dim_err(
            "lif_step",
            format!("input {:?} vs state {:?}", input.shape(), state.u.shape()),
        ));
    }
    if !state.u.all_finite() {
        return Err(Error::StateCorruption("membrane potential contains NaN/Inf".into()));
    }
    let leak = S::from_f64(state.params.leak());
    let theta = S::from_f64(state.params.theta_e);
    let mut u = state.u.clone();
    for ((u, &s), &i) in u
        .data_mut()
        .iter_mut()
        .zip(state.spikes.data())
        .zip(input.data())
    {
        *u = leak * (*u - theta * s) + i;
    }
    let spikes = u.map(|v| if v >= theta { S::ONE } else { S::ZERO });
    Ok((
        spikes.clone(),
        ExcState {
            u,
            spikes,
            params: state.params,
        },
    ))
}

/// `max(0, I)`: inhibitory output under the fast-spiking approximation.
pub fn fs_inhibitory<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(|v| if v > S::ZERO { v } else { S::ZERO })
}

/// Inhibitory operator on the tape (gradient 1 above zero, 0 at and below).
pub fn fs_inhibitory_tape<S: Scalar>(tape: &mut Tape<S>, input: Var) -> Var {
    tape.max0(input)
}

struct LeakyResetRule<S> {
    leak: S,
    theta: S,
}

impl<S: Scalar> BackwardRule<S> for LeakyResetRule<S> {
    fn name(&self) -> &'static str {
        "lif_update"
    }

    fn backward(&self, g: &Tensor<S>, _: &[&Tensor<S>], _: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let (leak, theta) = (self.leak, self.theta);
        vec![
            Some(g.map(|v| v * leak)),
            Some(g.map(|v| -v * leak * theta)),
            Some(g.clone()),
        ]
    }
}

struct SpikeRule {
    spike: SpikeFn,
    theta: f64,
}

impl<S: Scalar> BackwardRule<S> for SpikeRule {
    fn name(&self) -> &'static str {
        "spike"
    }

    fn backward(&self, g: &Tensor<S>, inputs: &[&Tensor<S>], _: &Tensor<S>) -> Vec<Option<Tensor<S>>> {
        let mut d = g.clone();
        for (d, &u) in d.data_mut().iter_mut().zip(inputs[0].data()) {
            *d *= S::from_f64(self.spike.surrogate.derivative(u.to_f64() - self.theta));
        }
        vec![Some(d)]
    }
}

/// Membrane potential and spikes of one population as tape values.
#[derive(Clone, Copy, Debug)]
pub struct LifVars {
    pub u: Var,
    pub spikes: Var,
}

/// One LIF step on the tape. `prev = None` is the resting state, where the
/// update reduces to `u = I`.
pub fn lif_step_tape<S: Scalar>(
    tape: &mut Tape<S>,
    params: &LifParams,
    spike: &SpikeFn,
    prev: Option<LifVars>,
    input: Var,
) -> Result<LifVars> {
    let u = match prev {
        None => input,
        Some(p) => {
            if tape.shape(p.u) != tape.shape(input) {
                return Err(dim_err(
                    "lif_step",
                    format!("input {:?} vs state {:?}", tape.shape(input), tape.shape(p.u)),
                ));
            }
            if !tape.value(p.u).all_finite() {
                return Err(Error::StateCorruption(
                    "membrane potential contains NaN/Inf".into(),
                ));
            }
            let leak = S::from_f64(params.leak());
            let theta = S::from_f64(params.theta_e);
            let (vu, vs, vi) = (tape.value(p.u), tape.value(p.spikes), tape.value(input));
            let mut next = vi.clone();
            for ((n, &u), &s) in next.data_mut().iter_mut().zip(vu.data()).zip(vs.data()) {
                *n += leak * (u - theta * s);
            }
            tape.custom(
                &[p.u, p.spikes, input],
                next,
                Box::new(LeakyResetRule { leak, theta }),
            )
        }
    };
    let theta = params.theta_e;
    let spikes = tape
        .value(u)
        .map(|v| S::from_f64(spike.forward(v.to_f64() - theta)));
    let spikes = tape.custom(
        &[u],
        spikes,
        Box::new(SpikeRule {
            spike: *spike,
            theta,
        }),
    );
    Ok(LifVars { u, spikes })
}
