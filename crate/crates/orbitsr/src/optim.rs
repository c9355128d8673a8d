//! Adam parameter updates with bias correction.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        AdamParams {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamParams {
    fn default() -> Self {
        Self::with_lr(1e-4)
    }
}

/// First/second-moment accumulators plus the step counter.
pub struct AdamState<E> {
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
    pub t: u64,
}

impl<E: Scalar> AdamState<E> {
    pub fn new(params: &[Tensor<E>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }
}

pub fn adam_step<E: Scalar>(
    params: &mut [Tensor<E>],
    grads: &[Tensor<E>],
    state: &mut AdamState<E>,
    hp: &AdamParams,
) -> Result<()> {
    if hp.lr < 0.0 {
        return Err(Error::InvalidArgument("adam: lr must be >= 0".into()));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = E::from_f64(hp.beta1);
    let b2 = E::from_f64(hp.beta2);
    let corr1 = E::from_f64(1.0 - hp.beta1.powi(t));
    let corr2 = E::from_f64(1.0 - hp.beta2.powi(t));
    let lr = E::from_f64(hp.lr);
    let eps = E::from_f64(hp.eps);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!(
                "adam: param {:?} vs grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
        for i in 0..p.numel() {
            let gi = g.data()[i];
            let mi = b1 * m.data()[i] + (E::one() - b1) * gi;
            let vi = b2 * v.data()[i] + (E::one() - b2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let mhat = mi / corr1;
            let vhat = vi / corr2;
            p.data_mut()[i] = p.data()[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut p = vec![Tensor::<f64>::filled([1, 1, 1, 2], 1.5)];
        let g = vec![Tensor::<f64>::zeros([1, 1, 1, 2])];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &AdamParams::with_lr(0.1)).unwrap();
        assert_eq!(p[0].data(), &[1.5, 1.5]);
    }

    #[test]
    fn first_step_closed_form() {
        // With constant grad g, m_hat = g, v_hat = g^2, so the update is
        // -lr * g / (|g| + eps').
        let g0 = 0.37;
        let mut p = vec![Tensor::<f64>::filled([1, 1, 1, 1], 2.0)];
        let g = vec![Tensor::<f64>::filled([1, 1, 1, 1], g0)];
        let mut st = AdamState::new(&p);
        let hp = AdamParams::with_lr(0.01);
        adam_step(&mut p, &g, &mut st, &hp).unwrap();
        let expect = 2.0 - hp.lr * g0 / (g0.abs() + hp.eps);
        assert!((p[0].data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn descends_quadratic() {
        // 100 steps on f(w) = w^2 from w=1, lr=0.1 -> |w| < 0.5
        let mut p = vec![Tensor::<f64>::filled([1, 1, 1, 1], 1.0)];
        let mut st = AdamState::new(&p);
        let hp = AdamParams::with_lr(0.1);
        for _ in 0..100 {
            let g = vec![p[0].map(|w| 2.0 * w)];
            adam_step(&mut p, &g, &mut st, &hp).unwrap();
        }
        assert!(p[0].data()[0].abs() < 0.5, "w = {}", p[0].data()[0]);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut p = vec![Tensor::<f64>::zeros([1, 1, 1, 2])];
        let g = vec![Tensor::<f64>::zeros([1, 1, 2, 2])];
        let mut st = AdamState::new(&p);
        assert!(adam_step(&mut p, &g, &mut st, &AdamParams::default()).is_err());
    }
}
