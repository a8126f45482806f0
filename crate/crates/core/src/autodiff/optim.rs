use serde::{Deserialize, Serialize};

use crate::autodiff::tensor::{Param, ParamRegistry, Partition};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.99,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Which parameters an optimizer step touches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Subset {
    All,
    Only(Partition),
    AllExcept(Vec<String>),
}

impl Subset {
    pub fn contains(&self, param: &Param) -> bool {
        match self {
            Subset::All => true,
            Subset::Only(p) => param.partition == *p,
            Subset::AllExcept(names) => !names.contains(&param.name),
        }
    }
}

/// Moments and step counts, one slot per registry position.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub config: AdamWConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: Vec<u64>,
}

impl AdamWState {
    pub fn new(config: AdamWConfig, registry: &ParamRegistry) -> Self {
        Self {
            config,
            first: registry.iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
            second: registry.iter().map(|p| vec![0.0; p.tensor.len()]).collect(),
            steps: vec![0; registry.len()],
        }
    }

    pub fn step_count(&self, idx: usize) -> u64 {
        self.steps[idx]
    }

    pub fn first_moment(&self, idx: usize) -> &[f64] {
        &self.first[idx]
    }

    pub fn second_moment(&self, idx: usize) -> &[f64] {
        &self.second[idx]
    }
}

/// One bias-corrected AdamW update with decoupled weight decay.
pub fn adamw_step(registry: &mut ParamRegistry, state: &mut AdamWState, subset: &Subset) {
    let AdamWConfig {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    for (idx, param) in registry.iter_mut().enumerate() {
        if !subset.contains(param) {
            continue;
        }
        state.steps[idx] += 1;
        let t = state.steps[idx] as i32;
        let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        let (m, v) = (&mut state.first[idx], &mut state.second[idx]);
        let grad = param.tensor.grad().to_vec();
        for (i, w) in param.tensor.values_mut().iter_mut().enumerate() {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            if weight_decay != 0.0 {
                *w -= lr * weight_decay * *w;
            }
            *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::tensor::Tensor;

    fn scalar_registry(value: f64) -> ParamRegistry {
        let mut r = ParamRegistry::new();
        r.insert("w", Partition::Local, Tensor::new(vec![1], vec![value]).unwrap())
            .unwrap();
        r
    }

    #[test]
    fn first_step_closed_form() {
        let mut reg = scalar_registry(0.0);
        reg.at_mut(0).tensor.grad_mut()[0] = 1.0;
        let mut st = AdamWState::new(AdamWConfig::default(), &reg);
        adamw_step(&mut reg, &mut st, &Subset::All);
        let want = -0.001 * 1.0 / (1.0 + 1e-8);
        assert!((reg.at(0).tensor.values()[0] - want).abs() < 1e-18);
    }

    #[test]
    fn two_steps_match_hand_recursion() {
        let (b1, b2, lr, eps) = (0.99f64, 0.999f64, 0.001f64, 1e-8f64);
        let g = 0.5;
        let mut reg = scalar_registry(1.0);
        let mut st = AdamWState::new(AdamWConfig::default(), &reg);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            reg.at_mut(0).tensor.grad_mut()[0] = g;
            adamw_step(&mut reg, &mut st, &Subset::All);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        assert_eq!(st.step_count(0), 2);
        assert!((st.first_moment(0)[0] - m).abs() < 1e-15);
        assert!((st.second_moment(0)[0] - v).abs() < 1e-15);
        assert!((reg.at(0).tensor.values()[0] - w).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_and_zero_lr_are_identity() {
        let mut reg = scalar_registry(0.7);
        let mut st = AdamWState::new(AdamWConfig::default(), &reg);
        adamw_step(&mut reg, &mut st, &Subset::All);
        assert_eq!(reg.at(0).tensor.values()[0], 0.7);

        let cfg = AdamWConfig {
            lr: 0.0,
            weight_decay: 0.1,
            ..AdamWConfig::default()
        };
        let mut st = AdamWState::new(cfg, &reg);
        reg.at_mut(0).tensor.grad_mut()[0] = 3.0;
        adamw_step(&mut reg, &mut st, &Subset::All);
        assert_eq!(reg.at(0).tensor.values()[0], 0.7);
    }

    #[test]
    fn subset_filters_parameters() {
        let mut reg = scalar_registry(0.0);
        reg.insert("s", Partition::Shared, Tensor::new(vec![1], vec![0.0]).unwrap())
            .unwrap();
        reg.iter_mut().for_each(|p| p.tensor.grad_mut()[0] = 1.0);
        let mut st = AdamWState::new(AdamWConfig::default(), &reg);
        adamw_step(&mut reg, &mut st, &Subset::Only(Partition::Shared));
        assert_eq!(reg.get("w").unwrap().tensor.values()[0], 0.0);
        assert!(reg.get("s").unwrap().tensor.values()[0] < 0.0);
        adamw_step(&mut reg, &mut st, &Subset::AllExcept(vec!["s".into()]));
        assert!(reg.get("w").unwrap().tensor.values()[0] < 0.0);
        assert_eq!(st.step_count(1), 1);
    }
}
