//! The E-I circuit layer.
//!
//! Per time step, with input spikes `s` (or direct-encoded pixels):
//!
//! ```text
//! I_EE = W_EE s                 I_IE = W_IE s
//! s_I  = max(0, I_IE)
//! I_sub = W_EI s_I              I_div = W_EI (g_I ⊙ s_I)
//! I_int = g_E ⊙ (I_EE - I_sub) / I_div + b_E
//! ```
//!
//! The convolutional variant uses NHWC activations: `W_EE`, `W_IE` are
//! `k×k` convolutions, `W_EI` is a 1×1 convolution (a matrix over the
//! channel axis) and `g_I`, `g_E`, `b_E` are per-channel.

use serde::{Deserialize, Serialize};

use crate::eiprop::{self, ReplaceStats, StabilizationConfig};
use crate::error::{Error, Result};
use crate::neuron::{lif_step_tape, LifParams, LifVars, SpikeFn};
use crate::param::Param;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Excitatory to inhibitory population ratio.
pub const EI_RATIO: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerShape {
    Dense { d: usize, n_e: usize },
    Conv { c_in: usize, c_e: usize, kernel: usize },
}

impl LayerShape {
    pub fn n_e(&self) -> usize {
        match *self {
            LayerShape::Dense { n_e, .. } => n_e,
            LayerShape::Conv { c_e, .. } => c_e,
        }
    }

    pub fn n_i(&self) -> usize {
        self.n_e() / EI_RATIO
    }

    /// `d`: input features (dense) or `C_in·k·k` (conv).
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerShape::Dense { d, .. } => d,
            LayerShape::Conv { c_in, kernel, .. } => c_in * kernel * kernel,
        }
    }

    fn projection_shape(&self, out: usize) -> Vec<usize> {
        match *self {
            LayerShape::Dense { d, .. } => vec![out, d],
            LayerShape::Conv { c_in, kernel, .. } => vec![out, kernel, kernel, c_in],
        }
    }
}

/// Learnable state of one E-I layer.
#[derive(Clone, Debug)]
pub struct EILayerParams<S> {
    pub shape: LayerShape,
    pub w_ee: Param<S>,
    pub w_ie: Param<S>,
    pub w_ei: Param<S>,
    pub g_i: Param<S>,
    pub g_e: Param<S>,
    pub b_e: Param<S>,
    pub n_e: usize,
    pub n_i: usize,
    pub fan_in: usize,
}

pub const PARAM_NAMES: [&str; 6] = ["W_EE", "W_IE", "W_EI", "g_I", "g_E", "b_E"];

impl<S: Scalar> EILayerParams<S> {
    /// All-zero placeholder with `g_E = 1`; see `eiinit` for real values.
    pub fn zeros(shape: LayerShape) -> Result<Self> {
        let n_e = shape.n_e();
        if n_e == 0 || n_e % EI_RATIO != 0 {
            return Err(Error::Parameter(format!(
                "excitatory width {n_e} must be a positive multiple of {EI_RATIO}"
            )));
        }
        if let LayerShape::Conv { kernel, .. } = shape {
            if kernel % 2 == 0 {
                return Err(Error::Parameter(format!("kernel size {kernel} must be odd")));
            }
        }
        let n_i = n_e / EI_RATIO;
        Ok(Self {
            shape,
            w_ee: Param::new(Tensor::zeros(&shape.projection_shape(n_e)), true),
            w_ie: Param::new(Tensor::zeros(&shape.projection_shape(n_i)), true),
            w_ei: Param::new(Tensor::zeros(&[n_e, n_i]), true),
            g_i: Param::new(Tensor::zeros(&[n_i]), true),
            g_e: Param::new(Tensor::ones(&[n_e]), false),
            b_e: Param::new(Tensor::zeros(&[n_e]), false),
            n_e,
            n_i,
            fan_in: shape.fan_in(),
        })
    }

    pub fn params(&self) -> [&Param<S>; 6] {
        [&self.w_ee, &self.w_ie, &self.w_ei, &self.g_i, &self.g_e, &self.b_e]
    }

    pub fn params_mut(&mut self) -> [&mut Param<S>; 6] {
        [
            &mut self.w_ee,
            &mut self.w_ie,
            &mut self.w_ei,
            &mut self.g_i,
            &mut self.g_e,
            &mut self.b_e,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape<S>, requires_grad: bool) -> BoundLayer {
        BoundLayer {
            shape: self.shape,
            w_ee: self.w_ee.bind(tape, requires_grad),
            w_ie: self.w_ie.bind(tape, requires_grad),
            w_ei: self.w_ei.bind(tape, requires_grad),
            g_i: self.g_i.bind(tape, requires_grad),
            g_e: self.g_e.bind(tape, requires_grad),
            b_e: self.b_e.bind(tape, requires_grad),
        }
    }

    pub fn collect_grads(&mut self, tape: &mut Tape<S>, bound: &BoundLayer) -> Result<()> {
        let vars = bound.vars();
        for (p, v) in self.params_mut().into_iter().zip(vars) {
            p.collect_grad(tape, v)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Smallest entry over the sign-constrained tensors.
    pub fn min_constrained(&self) -> f64 {
        self.params()
            .iter()
            .filter(|p| p.nonneg)
            .map(|p| p.value.min().to_f64())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Clamps `W_EE`, `W_IE`, `W_EI` and `g_I` to be elementwise nonnegative.
pub fn dale_project<S: Scalar>(params: &mut EILayerParams<S>) {
    for p in params.params_mut() {
        p.project();
    }
}

/// Layer parameters as tape leaves for one forward/backward cycle.
#[derive(Clone, Copy, Debug)]
pub struct BoundLayer {
    pub shape: LayerShape,
    pub w_ee: Var,
    pub w_ie: Var,
    pub w_ei: Var,
    pub g_i: Var,
    pub g_e: Var,
    pub b_e: Var,
}

impl BoundLayer {
    pub fn vars(&self) -> [Var; 6] {
        [self.w_ee, self.w_ie, self.w_ei, self.g_i, self.g_e, self.b_e]
    }

    fn project<S: Scalar>(&self, tape: &mut Tape<S>, w: Var, s_in: Var) -> Result<Var> {
        match self.shape {
            LayerShape::Dense { .. } => tape.linear(s_in, w),
            LayerShape::Conv { .. } => tape.conv2d(s_in, w),
        }
    }
}

/// All intermediate currents of one layer at one time step.
#[derive(Clone, Copy, Debug)]
pub struct LayerCurrents {
    pub i_ee: Var,
    pub i_ie: Var,
    pub s_i: Var,
    pub i_ei_sub: Var,
    /// Divisive current before stabilization.
    pub i_ei_div: Var,
    /// Divisive current actually used as the denominator.
    pub i_ei_div_stable: Var,
    pub i_int: Var,
    pub stabilization: ReplaceStats,
}

/// `I_EE = W_EE s`, `I_IE = W_IE s`.
pub fn excitatory_projections<S: Scalar>(
    tape: &mut Tape<S>,
    layer: &BoundLayer,
    s_in: Var,
) -> Result<(Var, Var)> {
    let i_ee = layer.project(tape, layer.w_ee, s_in)?;
    let i_ie = layer.project(tape, layer.w_ie, s_in)?;
    Ok((i_ee, i_ie))
}

/// Returns `(s_I, I_EI_sub, I_EI_div)`.
pub fn lateral_inhibition<S: Scalar>(
    tape: &mut Tape<S>,
    layer: &BoundLayer,
    i_ie: Var,
) -> Result<(Var, Var, Var)> {
    let s_i = crate::neuron::fs_inhibitory_tape(tape, i_ie);
    let sub = tape.linear(s_i, layer.w_ei)?;
    let gated = tape.mul(s_i, layer.g_i)?;
    let div = tape.linear(gated, layer.w_ei)?;
    Ok((s_i, sub, div))
}

/// `I_int = g_E ⊙ (I_EE − I_sub) / I_div + b_E`; the denominator must
/// already be stabilized.
pub fn integrate<S: Scalar>(
    tape: &mut Tape<S>,
    layer: &BoundLayer,
    i_ee: Var,
    i_sub: Var,
    i_div: Var,
) -> Result<Var> {
    if tape.value(i_div).data().iter().any(|&v| v == S::ZERO) {
        return Err(Error::Contract(
            "zero in the divisive denominator; stabilization was skipped".into(),
        ));
    }
    let net = tape.sub(i_ee, i_sub)?;
    let q = tape.div(net, i_div)?;
    tape.affine(q, layer.g_e, layer.b_e)
}

/// Currents from input spikes up to the integrated current.
pub fn layer_currents<S: Scalar>(
    tape: &mut Tape<S>,
    layer: &BoundLayer,
    s_in: Var,
    stab: &StabilizationConfig,
) -> Result<LayerCurrents> {
    let (i_ee, i_ie) = excitatory_projections(tape, layer, s_in)?;
    let (s_i, i_ei_sub, i_ei_div) = lateral_inhibition(tape, layer, i_ie)?;
    let (i_ei_div_stable, stabilization) = eiprop::stabilize(tape, i_ei_div, stab)?;
    let i_int = integrate(tape, layer, i_ee, i_ei_sub, i_ei_div_stable)?;
    Ok(LayerCurrents {
        i_ee,
        i_ie,
        s_i,
        i_ei_sub,
        i_ei_div,
        i_ei_div_stable,
        i_int,
        stabilization,
    })
}

/// Full circuit pass for one time step.
#[allow(clippy::too_many_arguments)]
pub fn ei_layer_step<S: Scalar>(
    tape: &mut Tape<S>,
    layer: &BoundLayer,
    lif: &LifParams,
    spike: &SpikeFn,
    state: Option<LifVars>,
    s_in: Var,
    stab: &StabilizationConfig,
) -> Result<(LifVars, LayerCurrents)> {
    let currents = layer_currents(tape, layer, s_in, stab)?;
    let next = lif_step_tape(tape, lif, spike, state, currents.i_int)?;
    Ok((next, currents))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::{ExcState, lif_step};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], d: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, d).unwrap()
    }

    fn random_layer(rng: &mut ChaCha8Rng, shape: LayerShape) -> EILayerParams<f64> {
        let mut p = EILayerParams::<f64>::zeros(shape).unwrap();
        for q in p.params_mut() {
            let v: Vec<f64> = (0..q.value.len()).map(|_| rng.random_range(0.05..1.0)).collect();
            q.value = Tensor::new(q.value.shape(), v).unwrap();
        }
        p
    }

    #[test]
    fn rejects_widths_not_divisible_by_four() {
        assert!(EILayerParams::<f64>::zeros(LayerShape::Dense { d: 3, n_e: 10 }).is_err());
        assert!(EILayerParams::<f64>::zeros(LayerShape::Conv { c_in: 3, c_e: 8, kernel: 2 }).is_err());
        let p = EILayerParams::<f64>::zeros(LayerShape::Conv { c_in: 3, c_e: 8, kernel: 3 }).unwrap();
        assert_eq!((p.n_e, p.n_i, p.fan_in), (8, 2, 27));
    }

    #[test]
    fn zero_input_gives_zero_projections() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_layer(&mut rng, LayerShape::Dense { d: 5, n_e: 8 });
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let s = tape.constant(Tensor::zeros(&[3, 5]));
        let (ee, ie) = excitatory_projections(&mut tape, &b, s).unwrap();
        assert!(tape.value(ee).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(ie).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_hand_arithmetic() {
        let mut tape = Tape::new();
        let layer = BoundLayer {
            shape: LayerShape::Dense { d: 2, n_e: 4 },
            w_ee: tape.constant(t(&[1, 2], &[1.0, 2.0])),
            w_ie: tape.constant(t(&[1, 2], &[0.0, 0.0])),
            w_ei: tape.constant(t(&[1, 1], &[0.0])),
            g_i: tape.constant(t(&[1], &[0.0])),
            g_e: tape.constant(t(&[1], &[1.0])),
            b_e: tape.constant(t(&[1], &[0.0])),
        };
        let s = tape.constant(t(&[1, 2], &[1.0, 1.0]));
        let (ee, _) = excitatory_projections(&mut tape, &layer, s).unwrap();
        assert_eq!(tape.value(ee).data(), &[3.0]);
    }

    fn inhibition_layer(tape: &mut Tape<f64>, g: f64) -> BoundLayer {
        BoundLayer {
            shape: LayerShape::Dense { d: 1, n_e: 4 },
            w_ee: tape.constant(t(&[1, 1], &[0.0])),
            w_ie: tape.constant(t(&[2, 1], &[0.0, 0.0])),
            w_ei: tape.constant(t(&[1, 2], &[0.5, 0.5])),
            g_i: tape.constant(t(&[2], &[g, g])),
            g_e: tape.constant(t(&[1], &[1.0])),
            b_e: tape.constant(t(&[1], &[0.0])),
        }
    }

    #[test]
    fn lateral_inhibition_hand_arithmetic() {
        let mut tape = Tape::new();
        let layer = inhibition_layer(&mut tape, 0.1);
        let i_ie = tape.constant(t(&[1, 2], &[1.0, 3.0]));
        let (s_i, sub, div) = lateral_inhibition(&mut tape, &layer, i_ie).unwrap();
        assert_eq!(tape.value(s_i).data(), &[1.0, 3.0]);
        assert_eq!(tape.value(sub).data(), &[2.0]);
        assert!((tape.value(div).item() - 0.2).abs() < 1e-15);

        let neg = tape.constant(t(&[1, 2], &[-1.0, -3.0]));
        let (s_i, sub, div) = lateral_inhibition(&mut tape, &layer, neg).unwrap();
        assert_eq!(tape.value(s_i).sum(), 0.0);
        assert_eq!(tape.value(sub).sum(), 0.0);
        assert_eq!(tape.value(div).sum(), 0.0);
    }

    fn integrate_values(ee: f64, sub: f64, div: f64, g: f64, b: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let mut layer = inhibition_layer(&mut tape, 0.0);
        layer.g_e = tape.constant(t(&[1], &[g]));
        layer.b_e = tape.constant(t(&[1], &[b]));
        let (e, s, d) = (
            tape.constant(t(&[1, 1], &[ee])),
            tape.constant(t(&[1, 1], &[sub])),
            tape.constant(t(&[1, 1], &[div])),
        );
        let v = integrate(&mut tape, &layer, e, s, d)?;
        Ok(tape.value(v).item())
    }

    #[test]
    fn integrate_examples() {
        assert_eq!(integrate_values(1.0, 1.0, 0.5, 1.0, 0.0).unwrap(), 0.0);
        assert!((integrate_values(2.0, 0.5, 0.5, 2.0, 0.1).unwrap() - 6.1).abs() < 1e-12);
        let a = integrate_values(3.0, 1.0, 0.7, 1.3, 0.2).unwrap();
        let b = integrate_values(5.0, 1.0, 1.4, 1.3, 0.2).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(matches!(
            integrate_values(1.0, 0.0, 0.0, 1.0, 0.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn currents_are_sign_closed() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let p = random_layer(&mut rng, LayerShape::Dense { d: 7, n_e: 8 });
            let mut tape = Tape::new();
            let b = p.bind(&mut tape, false);
            let s = tape.constant(
                Tensor::new(&[4, 7], (0..28).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap(),
            );
            let c = layer_currents(&mut tape, &b, s, &StabilizationConfig::default()).unwrap();
            for v in [c.i_ee, c.i_ie, c.s_i, c.i_ei_sub, c.i_ei_div] {
                assert!(tape.value(v).data().iter().all(|&x| x >= 0.0));
            }
        }
    }

    /// Scaling W_IE by c scales s_I and both inhibitory currents by c.
    #[test]
    fn inhibitory_currents_scale_with_w_ie() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = random_layer(&mut rng, LayerShape::Dense { d: 6, n_e: 8 });
        let x = Tensor::new(&[3, 6], (0..18).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let run = |p: &EILayerParams<f64>| {
            let mut tape = Tape::new();
            let b = p.bind(&mut tape, false);
            let s = tape.constant(x.clone());
            let c = layer_currents(&mut tape, &b, s, &StabilizationConfig::default()).unwrap();
            (
                tape.value(c.s_i).clone(),
                tape.value(c.i_ei_sub).clone(),
                tape.value(c.i_ei_div).clone(),
                tape.value(c.i_ee).clone(),
            )
        };
        let c = 2.5;
        let mut q = p.clone();
        q.w_ie.value.scale_inplace(c);
        let (a, b) = (run(&p), run(&q));
        for (x, y) in [(&a.0, &b.0), (&a.1, &b.1), (&a.2, &b.2)] {
            for (u, v) in x.data().iter().zip(y.data()) {
                assert!((c * u - v).abs() < 1e-12);
            }
        }
        assert_eq!(a.3, b.3);
    }

    #[test]
    fn dense_and_pointwise_conv_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let dense = random_layer(&mut rng, LayerShape::Dense { d: 5, n_e: 8 });
        let mut conv = EILayerParams::<f64>::zeros(LayerShape::Conv { c_in: 5, c_e: 8, kernel: 1 }).unwrap();
        for (c, d) in conv.params_mut().into_iter().zip(dense.params()) {
            c.value = d.value.clone().reshape(c.value.shape()).unwrap();
        }
        let x = Tensor::new(&[3, 5], (0..15).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let run = |p: &EILayerParams<f64>, x: Tensor<f64>| {
            let mut tape = Tape::new();
            let b = p.bind(&mut tape, false);
            let s = tape.constant(x);
            let mut st = None;
            let mut out = Vec::new();
            for _ in 0..3 {
                let (next, c) = ei_layer_step(
                    &mut tape,
                    &b,
                    &LifParams::default(),
                    &SpikeFn::default(),
                    st,
                    s,
                    &StabilizationConfig::default(),
                )
                .unwrap();
                out.extend_from_slice(tape.value(c.i_int).data());
                out.extend_from_slice(tape.value(next.spikes).data());
                st = Some(next);
            }
            out
        };
        let a = run(&dense, x.clone());
        let b = run(&conv, x.reshape(&[3, 1, 1, 5]).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn zero_input_zero_state_is_silent() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut p = random_layer(&mut rng, LayerShape::Dense { d: 4, n_e: 8 });
        p.b_e.value.map_inplace(|_| 0.0);
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let s = tape.constant(Tensor::zeros(&[2, 4]));
        let (next, c) = ei_layer_step(
            &mut tape,
            &b,
            &LifParams::default(),
            &SpikeFn::default(),
            None,
            s,
            &StabilizationConfig::default(),
        )
        .unwrap();
        assert_eq!(tape.value(next.spikes).sum(), 0.0);
        for v in [c.i_ee, c.i_ie, c.s_i, c.i_ei_sub, c.i_ei_div, c.i_int] {
            assert_eq!(tape.value(v).sum(), 0.0);
        }
        // Every sample is all-zero, so the denominator is the fallback.
        assert!(tape.value(c.i_ei_div_stable).data().iter().all(|&v| v == 1.0));
        assert_eq!(c.stabilization.fallback_samples, 2);
    }

    /// Two excitatory neurons (n_E = 4 would be needed for the ratio; the
    /// scalar oracle only needs the algebra, so it reads all four).
    fn scalar_reference(
        p: &EILayerParams<f64>,
        x: &[f64],
        steps: usize,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let (n_e, n_i, d) = (p.n_e, p.n_i, p.fan_in);
        let w = |q: &Param<f64>, r: usize, c: usize, cols: usize| q.value.data()[r * cols + c];
        let mut i_int = vec![0.0; n_e];
        for e in 0..n_e {
            let ee: f64 = (0..d).map(|j| w(&p.w_ee, e, j, d) * x[j]).sum();
            let si: Vec<f64> = (0..n_i)
                .map(|k| (0..d).map(|j| w(&p.w_ie, k, j, d) * x[j]).sum::<f64>().max(0.0))
                .collect();
            let sub: f64 = (0..n_i).map(|k| w(&p.w_ei, e, k, n_i) * si[k]).sum();
            let div: f64 = (0..n_i)
                .map(|k| w(&p.w_ei, e, k, n_i) * p.g_i.value.data()[k] * si[k])
                .sum();
            i_int[e] = p.g_e.value.data()[e] * (ee - sub) / div + p.b_e.value.data()[e];
        }
        let mut st = ExcState::<f64>::rest(&[n_e], LifParams::default());
        let (mut currents, mut spikes) = (Vec::new(), Vec::new());
        let input = Tensor::<f64>::from_f64(&[n_e], &i_int).unwrap();
        for _ in 0..steps {
            let (s, next) = lif_step(&st, &input).unwrap();
            currents.push(i_int.clone());
            spikes.push(s.to_f64_vec());
            st = next;
        }
        (currents, spikes)
    }

    #[test]
    fn layer_step_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let p = random_layer(&mut rng, LayerShape::Dense { d: 3, n_e: 4 });
        let x = [0.9, 0.2, 0.6];
        let (want_i, want_s) = scalar_reference(&p, &x, 4);
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let s = tape.constant(t(&[1, 3], &x));
        let mut st = None;
        for step in 0..4 {
            let (next, c) = ei_layer_step(
                &mut tape,
                &b,
                &LifParams::default(),
                &SpikeFn::default(),
                st,
                s,
                &StabilizationConfig::default(),
            )
            .unwrap();
            for (a, b) in tape.value(c.i_int).data().iter().zip(&want_i[step]) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(tape.value(next.spikes).to_f64_vec(), want_s[step]);
            st = Some(next);
        }
    }

    #[test]
    fn dale_projection() {
        let mut p = EILayerParams::<f64>::zeros(LayerShape::Dense { d: 2, n_e: 4 }).unwrap();
        p.w_ee.value = t(&[4, 2], &[-0.1, 0.7, 0.0, 0.3, 1.0, -2.0, 0.5, 0.5]);
        p.g_i.value = t(&[1], &[-0.4]);
        p.b_e.value = t(&[4], &[-1.0, 0.0, 0.0, 0.0]);
        dale_project(&mut p);
        assert_eq!(p.w_ee.value.data(), &[0.0, 0.7, 0.0, 0.3, 1.0, 0.0, 0.5, 0.5]);
        assert_eq!(p.g_i.value.data(), &[0.0]);
        // unconstrained parameters are untouched
        assert_eq!(p.b_e.value.data()[0], -1.0);
        let snapshot = p.clone();
        dale_project(&mut p);
        for (a, b) in p.params().iter().zip(snapshot.params()) {
            assert_eq!(a.value, b.value);
        }
        assert!(p.min_constrained() >= 0.0);
    }
}
