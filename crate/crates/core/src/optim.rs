//! Adam with bias-corrected moment estimates.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::{GradMap, ParamSet};
use crate::tensor::Tensor;

pub const DEFAULT_LR: f64 = 3e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::with_lr(DEFAULT_LR)
    }
}

/// First and second moments plus the step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
    t: u64,
}

impl AdamState {
    pub fn steps(&self) -> u64 {
        self.t
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update of `params` from `grads`. Every parameter needs a gradient
    /// of matching shape.
    pub fn step(&self, params: &mut ParamSet, grads: &GradMap, state: &mut AdamState) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::UnknownParam(name.clone()))?;
            if g.shape() != p.shape() {
                return Err(Error::dim("adam", p.shape(), g.shape()));
            }
        }
        if grads.len() != params.len() {
            let stray = grads.keys().find(|k| !params.contains(k)).cloned().unwrap_or_default();
            return Err(Error::UnknownParam(stray));
        }

        state.t += 1;
        let t = state.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let m = state
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let v = state
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(x: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("x", Tensor::scalar(x));
        p
    }

    fn grad(g: f64) -> GradMap {
        [("x".to_string(), Tensor::scalar(g))].into_iter().collect()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = scalar_set(1.5);
        let mut st = AdamState::default();
        Adam::default().step(&mut p, &grad(0.0), &mut st).unwrap();
        assert_eq!(p.get("x").unwrap().item(), 1.5);
    }

    #[test]
    fn first_step_has_magnitude_lr() {
        for g in [1e-3, 0.5, 40.0, -7.0] {
            let mut p = scalar_set(0.0);
            let mut st = AdamState::default();
            Adam::default().step(&mut p, &grad(g), &mut st).unwrap();
            let moved = p.get("x").unwrap().item();
            assert!((moved + DEFAULT_LR * g.signum()).abs() < 1e-8, "g={g} moved={moved}");
        }
    }

    #[test]
    fn ten_steps_match_reference_formula() {
        // independent straight-line Adam on f(x) = (x - 3)^2
        let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
        let (mut x_ref, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        let mut p = scalar_set(0.5);
        let mut st = AdamState::default();
        let opt = Adam::with_lr(lr);
        for t in 1..=10 {
            let g = 2.0 * (x_ref - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x_ref -= lr * mh / (vh.sqrt() + eps);

            let x = p.get("x").unwrap().item();
            opt.step(&mut p, &grad(2.0 * (x - 3.0)), &mut st).unwrap();
            assert!((p.get("x").unwrap().item() - x_ref).abs() < 1e-12);
        }
        assert_eq!(st.steps(), 10);
    }

    #[test]
    fn shape_mismatch_and_missing_grads_error() {
        let mut p = scalar_set(0.0);
        let mut st = AdamState::default();
        let bad: GradMap = [("x".to_string(), Tensor::zeros(&[2]))].into_iter().collect();
        assert!(Adam::default().step(&mut p, &bad, &mut st).is_err());
        assert!(Adam::default().step(&mut p, &GradMap::new(), &mut st).is_err());
        let mut extra = grad(1.0);
        extra.insert("y".into(), Tensor::scalar(1.0));
        assert!(Adam::default().step(&mut p, &extra, &mut st).is_err());
    }
}
