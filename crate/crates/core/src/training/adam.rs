use crate::error::{Error, Result};
use crate::nn::{cast, Param, Real};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moments of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot<T> {
    pub name: String,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Optimizer state; `slots` follow the order of the trainable parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState<T> {
    pub step: u64,
    pub slots: Vec<AdamSlot<T>>,
}

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState<T>,
}

impl<T: Real> Default for Adam<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Adam<T> {
    pub fn new() -> Self {
        Self {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            state: AdamState {
                step: 0,
                slots: Vec::new(),
            },
        }
    }

    pub fn with_state(state: AdamState<T>) -> Self {
        Self {
            state,
            ..Self::new()
        }
    }

    /// Applies one update to every trainable parameter. If any gradient is
    /// non-finite nothing is modified and the offending tensor is reported.
    pub fn step(&mut self, params: Vec<&mut Param<T>>, lr: f64) -> Result<()> {
        let mut params: Vec<&mut Param<T>> = params.into_iter().filter(|p| p.trainable).collect();
        if let Some(p) = params.iter().find(|p| !p.grad.all_finite()) {
            let bad = p.grad.data().iter().filter(|g| !g.is_finite()).count();
            return Err(Error::NonFinite(format!(
                "{bad} non-finite gradient entries in `{}`; step skipped",
                p.name
            )));
        }
        if self.state.slots.is_empty() {
            self.state.slots = params
                .iter()
                .map(|p| AdamSlot {
                    name: p.name.clone(),
                    m: vec![T::zero(); p.value.len()],
                    v: vec![T::zero(); p.value.len()],
                })
                .collect();
        }
        if self.state.slots.len() != params.len()
            || self
                .state
                .slots
                .iter()
                .zip(&params)
                .any(|(s, p)| s.name != p.name || s.m.len() != p.value.len())
        {
            return Err(Error::Shape(
                "optimizer state does not match the parameters".into(),
            ));
        }

        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (slot, p) in self.state.slots.iter_mut().zip(params.iter_mut()) {
            let grad = p.grad.data().to_vec();
            for (((w, g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad)
                .zip(slot.m.iter_mut())
                .zip(slot.v.iter_mut())
            {
                let g = g.to_f64().unwrap();
                let m_new = b1 * m.to_f64().unwrap() + (1.0 - b1) * g;
                let v_new = b2 * v.to_f64().unwrap() + (1.0 - b2) * g * g;
                *m = cast(m_new);
                *v = cast(v_new);
                let update = lr * (m_new / bc1) / ((v_new / bc2).sqrt() + self.eps);
                *w = cast(w.to_f64().unwrap() - update);
            }
        }
        Ok(())
    }
}
