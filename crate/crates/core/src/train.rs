//! BPTT training loop, SGD with momentum, the learning-rate schedule and
//! collapse detection.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{augment, epoch_batches, AugmentConfig, DatasetHandle};
use crate::eicircuit::dale_project;
use crate::eiinit::{calibrate, InitMode, InitReport};
use crate::eiprop::{scale_inhibitory_gradient, StabilizationConfig};
use crate::error::{Error, Result};
use crate::network::{argmax_rows, ModelSpec, Network};
use crate::param::Param;
use crate::tensor::{Scalar, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub warmup_epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub stabilization: StabilizationConfig,
    pub gradient_scaling: bool,
    pub init: InitMode,
    pub augment: AugmentConfig,
    /// Train on the first `n` training samples only.
    pub train_subset: Option<usize>,
    /// Evaluate on the first `n` test samples only.
    pub test_subset: Option<usize>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            lr_peak: 0.02,
            warmup_epochs: 1,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            stabilization: StabilizationConfig::default(),
            gradient_scaling: true,
            init: InitMode::Ei,
            augment: AugmentConfig::default(),
            train_subset: None,
            test_subset: None,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs ({}) must be < epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.lr_peak > 0.0) {
            return Err(Error::Config(format!("lr_peak must be > 0, got {}", self.lr_peak)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must be in [0, 1), weight_decay ≥ 0".into()));
        }
        Ok(())
    }
}

/// Linear warmup to `lr_peak`, then half-cosine decay to zero.
/// `frac` is the fraction of all training completed.
pub fn lr_at(frac: f64, cfg: &TrainConfig) -> f64 {
    let frac = frac.clamp(0.0, 1.0);
    let w = cfg.warmup_epochs as f64 / cfg.epochs as f64;
    if w > 0.0 && frac < w {
        return cfg.lr_peak * frac / w;
    }
    let t = if w < 1.0 { (frac - w) / (1.0 - w) } else { 1.0 };
    cfg.lr_peak * (1.0 + (PI * t).cos()) / 2.0
}

/// SGD with heavy-ball momentum and coupled weight decay.
#[derive(Clone, Debug)]
pub struct Sgd<S> {
    pub momentum: f64,
    pub weight_decay: f64,
    /// One buffer per parameter, in `Network::params` order.
    pub buffers: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Sgd<S> {
    pub fn new(momentum: f64, weight_decay: f64, n_params: usize) -> Self {
        Self {
            momentum,
            weight_decay,
            buffers: vec![None; n_params],
        }
    }

    /// `v ← m·v + (g + wd·w)`, `w ← w − lr·v`, then projection of the
    /// sign-constrained parameters.
    pub fn step(&mut self, params: Vec<&mut Param<S>>, lr: f64) -> Result<()> {
        if params.len() != self.buffers.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.buffers.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| p.grad.is_none()) {
            return Err(Error::Contract("sgd_step before gradients were populated".into()));
        }
        let (m, wd, lr) = (S::from_f64(self.momentum), S::from_f64(self.weight_decay), S::from_f64(lr));
        for (p, buf) in params.into_iter().zip(self.buffers.iter_mut()) {
            let g = p.grad.as_ref().expect("checked above");
            let v = buf.get_or_insert_with(|| Tensor::zeros(g.shape()));
            for ((vi, &gi), &wi) in v.data_mut().iter_mut().zip(g.data()).zip(p.value.data()) {
                *vi = m * *vi + (gi + wd * wi);
            }
            for (wi, &vi) in p.value.data_mut().iter_mut().zip(v.data()) {
                *wi = *wi - lr * vi;
            }
            p.project();
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
    pub collapse: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// A non-finite loss is written to JSON as `null` and read back as NaN.
    #[serde(deserialize_with = "nan_from_null")]
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub lr: f64,
    pub steps: usize,
    pub collapse: bool,
    pub collapse_reason: Option<String>,
    pub min_constrained: f64,
    pub fallback_samples: usize,
    pub seconds: f64,
}

fn nan_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

pub struct Trainer<S: Scalar> {
    pub net: Network<S>,
    pub opt: Sgd<S>,
    pub cfg: TrainConfig,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
}

impl<S: Scalar> Trainer<S> {
    /// Builds the model and runs calibration (or the ablation init) on the
    /// first training batch.
    pub fn new(spec: ModelSpec, cfg: TrainConfig, train: &DatasetHandle) -> Result<(Self, Vec<InitReport>)> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::Parameter("training set is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut net = Network::new(spec, &mut rng)?;
        net.stabilization = cfg.stabilization;
        let n = train.len().min(cfg.batch_size);
        let (x, _) = train.batch::<S>(&(0..n).collect::<Vec<_>>())?;
        let reports = calibrate(&mut net, &x, cfg.init, &mut rng)?;
        let opt = Sgd::new(cfg.momentum, cfg.weight_decay, net.params().len());
        Ok((
            Self {
                net,
                opt,
                cfg,
                rng,
                epoch: 0,
                history: Vec::new(),
            },
            reports,
        ))
    }

    /// Forward, loss, backward, gradient scaling and one optimizer step.
    pub fn train_step(&mut self, x: Tensor<S>, labels: &[usize], lr: f64) -> Result<StepOutcome> {
        let mut tape = Tape::new();
        let bound = self.net.bind(&mut tape, true);
        let xv = tape.constant(self.net.prepare_input(x)?);
        let trace = match self.net.forward(&mut tape, &bound, xv) {
            Ok(t) => t,
            Err(Error::StateCorruption(msg)) => return Ok(collapsed(labels.len(), msg)),
            Err(e) => return Err(e),
        };
        let logits = trace.logits.expect("full-depth run yields logits");
        let loss = tape.softmax_cross_entropy(logits, labels)?;
        let loss_value = tape.value(loss).item().to_f64();
        let pred = argmax_rows(tape.value(logits));
        let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        if !loss_value.is_finite() {
            let at = tape
                .first_non_finite()
                .map(|(i, op)| format!(" (first at node {i}, {op})"))
                .unwrap_or_default();
            return Ok(collapsed(labels.len(), format!("loss is {loss_value}{at}")));
        }
        tape.backward(loss)?;
        self.net.zero_grad();
        self.net.collect_grads(&mut tape, &bound)?;
        drop(tape);
        if self.cfg.gradient_scaling {
            for layer in &mut self.net.layers {
                scale_inhibitory_gradient(layer)?;
            }
        }
        if let Some(name) = self.first_non_finite_grad() {
            return Ok(StepOutcome {
                loss: loss_value,
                correct,
                count: labels.len(),
                collapse: Some(format!("non-finite gradient in {name}")),
            });
        }
        self.opt.step(self.net.params_mut(), lr)?;
        for layer in &mut self.net.layers {
            dale_project(layer);
        }
        Ok(StepOutcome {
            loss: loss_value,
            correct,
            count: labels.len(),
            collapse: None,
        })
    }

    fn first_non_finite_grad(&self) -> Option<String> {
        self.net
            .params()
            .into_iter()
            .find(|(_, p)| p.grad.as_ref().is_some_and(|g| !g.all_finite()))
            .map(|(n, _)| n)
    }

    /// One pass over the (possibly subset) training data. Stops early and
    /// flags collapse on a non-finite loss or gradient; also flags collapse
    /// when a later epoch's training accuracy is at or below chance.
    pub fn train_epoch(&mut self, train: &DatasetHandle, test: Option<&DatasetHandle>) -> Result<EpochMetrics> {
        let start = Instant::now();
        let n = self.cfg.train_subset.map_or(train.len(), |s| s.min(train.len()));
        let batches = epoch_batches(n, self.cfg.batch_size, true, &mut self.rng);
        let nb = batches.len();
        let mut m = EpochMetrics {
            epoch: self.epoch,
            ..EpochMetrics::default()
        };
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (b, idx) in batches.iter().enumerate() {
            let frac = (self.epoch * nb + b + 1) as f64 / (self.cfg.epochs * nb) as f64;
            let lr = lr_at(frac, &self.cfg);
            let (x, labels) = train.batch::<S>(idx)?;
            let x = augment(&x, &self.cfg.augment, &mut self.rng)?;
            let out = self.train_step(x, &labels, lr)?;
            m.steps += 1;
            m.lr = lr;
            if let Some(reason) = out.collapse {
                log::warn!("collapse at epoch {} step {b}: {reason}", self.epoch);
                m.collapse = true;
                m.collapse_reason = Some(reason);
                if out.loss.is_finite() {
                    loss_sum += out.loss * out.count as f64;
                    correct += out.correct;
                    seen += out.count;
                } else {
                    loss_sum = f64::NAN;
                }
                break;
            }
            loss_sum += out.loss * out.count as f64;
            correct += out.correct;
            seen += out.count;
            log::debug!("epoch {} step {b}/{nb} loss {:.4}", self.epoch, out.loss);
        }
        m.loss = loss_sum / seen.max(1) as f64;
        m.train_acc = correct as f64 / seen.max(1) as f64;
        // A fresh network sits at chance by construction, so the accuracy
        // rule starts after the first epoch.
        let chance = 1.0 / self.net.spec.classes as f64;
        if !m.collapse && self.epoch > 0 && m.train_acc <= chance {
            m.collapse = true;
            m.collapse_reason = Some(format!(
                "training accuracy {:.4} at or below chance {:.4}",
                m.train_acc, chance
            ));
        }
        if let (Some(test), false) = (test, m.collapse) {
            m.test_acc = Some(self.evaluate(test)?);
        }
        m.min_constrained = self.net.min_constrained();
        m.seconds = start.elapsed().as_secs_f64();
        self.epoch += 1;
        self.history.push(m.clone());
        Ok(m)
    }

    pub fn evaluate(&self, data: &DatasetHandle) -> Result<f64> {
        evaluate(&self.net, data, self.cfg.test_subset, self.cfg.batch_size)
    }
}

fn collapsed(count: usize, reason: String) -> StepOutcome {
    StepOutcome {
        loss: f64::NAN,
        correct: 0,
        count,
        collapse: Some(reason),
    }
}

/// Classification accuracy on the first `limit` samples.
pub fn evaluate<S: Scalar>(net: &Network<S>, data: &DatasetHandle, limit: Option<usize>, batch: usize) -> Result<f64> {
    let n = limit.map_or(data.len(), |l| l.min(data.len()));
    let mut correct = 0;
    for start in (0..n).step_by(batch.max(1)) {
        let idx: Vec<usize> = (start..(start + batch).min(n)).collect();
        let (x, labels) = data.batch::<S>(&idx)?;
        let logits = net.predict(&x)?;
        correct += argmax_rows(&logits)
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / n.max(1) as f64)
}
