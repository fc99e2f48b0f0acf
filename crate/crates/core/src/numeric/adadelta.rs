use serde::{Deserialize, Serialize};

use super::tensor::ParamSet;

/// Per-parameter running averages kept by Adadelta.
#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState {
    pub accum_grad_sq: Vec<f64>,
    pub accum_update_sq: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdadeltaConfig {
    pub rho: f64,
    pub eps: f64,
}

impl Default for AdadeltaConfig {
    fn default() -> Self {
        AdadeltaConfig { rho: 0.95, eps: 1e-6 }
    }
}

/// Adadelta optimizer: step sizes come from the ratio of the RMS of past
/// updates to the RMS of past gradients, so there is no learning rate.
#[derive(Debug, Clone)]
pub struct Adadelta {
    pub config: AdadeltaConfig,
    states: Vec<AdadeltaState>,
}

impl Adadelta {
    pub fn new(config: AdadeltaConfig, params: &ParamSet) -> Self {
        let states = params
            .iter()
            .map(|(_, _, t)| AdadeltaState {
                accum_grad_sq: vec![0.0; t.len()],
                accum_update_sq: vec![0.0; t.len()],
            })
            .collect();
        Adadelta { config, states }
    }

    pub fn states(&self) -> &[AdadeltaState] {
        &self.states
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self, params: &mut ParamSet) {
        let AdadeltaConfig { rho, eps } = self.config;
        for (tensor, state) in params.iter_mut().zip(&mut self.states) {
            let (values, grads) = tensor.values_and_grad_mut();
            for i in 0..values.len() {
                let g = grads[i];
                let eg = &mut state.accum_grad_sq[i];
                *eg = rho * *eg + (1.0 - rho) * g * g;
                let ex = &mut state.accum_update_sq[i];
                let delta = -((*ex + eps).sqrt() / (*eg + eps).sqrt()) * g;
                *ex = rho * *ex + (1.0 - rho) * delta * delta;
                values[i] += delta;
                grads[i] = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::tensor::Tensor;

    fn one(w: f64) -> (ParamSet, crate::numeric::ParamId) {
        let mut p = ParamSet::new();
        let id = p.insert("w", Tensor::new(vec![1], vec![w]).unwrap());
        (p, id)
    }

    #[test]
    fn zero_gradient_only_decays_accumulators() {
        let (mut p, id) = one(1.25);
        let mut opt = Adadelta::new(AdadeltaConfig::default(), &p);
        p.get_mut(id).grad_mut()[0] = 2.0;
        opt.step(&mut p);
        let before = p.get(id).values()[0];
        let (eg, ex) = (opt.states()[0].accum_grad_sq[0], opt.states()[0].accum_update_sq[0]);
        opt.step(&mut p);
        assert_eq!(p.get(id).values()[0], before);
        assert_eq!(opt.states()[0].accum_grad_sq[0], 0.95 * eg);
        assert_eq!(opt.states()[0].accum_update_sq[0], 0.95 * ex);
    }

    #[test]
    fn two_steps_match_hand_arithmetic() {
        let (rho, eps) = (0.95f64, 1e-6f64);
        let (mut p, id) = one(0.5);
        let mut opt = Adadelta::new(AdadeltaConfig { rho, eps }, &p);
        let grads = [0.8, -0.3];

        let mut w = 0.5;
        let (mut eg, mut ex) = (0.0, 0.0);
        for g in grads {
            eg = rho * eg + (1.0 - rho) * g * g;
            let d = -((ex + eps).sqrt() / (eg + eps).sqrt()) * g;
            ex = rho * ex + (1.0 - rho) * d * d;
            w += d;

            p.get_mut(id).grad_mut()[0] = g;
            opt.step(&mut p);
        }
        // step 1: Eg = 0.032, d1 = -sqrt(1e-6)/sqrt(0.032001)*0.8
        let d1 = -(1e-6f64).sqrt() / (0.032001f64).sqrt() * 0.8;
        assert!((d1 + 0.0044720).abs() < 1e-6);
        assert!((p.get(id).values()[0] - w).abs() < 1e-15);
        assert!((opt.states()[0].accum_grad_sq[0] - eg).abs() < 1e-15);
        assert!((opt.states()[0].accum_update_sq[0] - ex).abs() < 1e-18);
        assert_eq!(p.get(id).grad().unwrap(), &[0.0]);
    }

    #[test]
    fn descends_a_quadratic() {
        let (mut p, id) = one(0.0);
        let mut opt = Adadelta::new(AdadeltaConfig::default(), &p);
        let loss = |w: f64| (w - 3.0) * (w - 3.0);
        let mut history = Vec::new();
        for _ in 0..100 {
            let w = p.get(id).values()[0];
            history.push(loss(w));
            p.get_mut(id).grad_mut()[0] = 2.0 * (w - 3.0);
            opt.step(&mut p);
        }
        let burn_in = 5;
        for pair in history[burn_in..].windows(2) {
            assert!(pair[1] < pair[0]);
        }
        assert!(history[99] < history[0]);
    }
}
