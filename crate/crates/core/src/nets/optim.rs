use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates for one parameter slice.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Applies one Adam update in place.
///
/// A NaN anywhere in `grads` aborts before any parameter is touched.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "adam shapes differ: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::invalid(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if let Some(i) = grads.iter().position(|g| g.is_nan()) {
        return Err(Error::Poisoned {
            step: state.step,
            what: format!("NaN gradient at parameter {i}"),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// `target ← ρ·target + (1 − ρ)·online`, element-wise.
pub fn polyak_update(target: &mut [f64], online: &[f64], rho: f64) {
    assert_eq!(target.len(), online.len(), "target/online shapes differ");
    for (t, &o) in target.iter_mut().zip(online) {
        *t = rho * *t + (1.0 - rho) * o;
    }
}
