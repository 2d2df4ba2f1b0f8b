use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<S> {
    pub value: Tensor<S>,
    pub grad: Option<Tensor<S>>,
    /// Sign-constrained (Dale's law): kept elementwise ≥ 0 by projection.
    pub nonneg: bool,
}

impl<S: Scalar> Param<S> {
    pub fn new(value: Tensor<S>, nonneg: bool) -> Self {
        Self {
            value,
            grad: None,
            nonneg,
        }
    }

    pub fn bind(&self, tape: &mut Tape<S>, requires_grad: bool) -> Var {
        tape.leaf(self.value.clone(), requires_grad)
    }

    /// Moves the tape gradient of `var` into this parameter, accumulating.
    pub fn collect_grad(&mut self, tape: &mut Tape<S>, var: Var) -> Result<()> {
        if let Some(g) = tape.take_grad(var) {
            match self.grad.as_mut() {
                Some(acc) => acc.add_assign(&g)?,
                None => self.grad = Some(g),
            }
        }
        Ok(())
    }

    pub fn grad_or_err(&self, name: &str) -> Result<&Tensor<S>> {
        self.grad
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("missing gradient for {name}")))
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Clamps negative entries to zero when sign-constrained.
    pub fn project(&mut self) {
        if self.nonneg {
            self.value
                .map_inplace(|v| if v < S::ZERO { S::ZERO } else { v });
        }
    }
}
