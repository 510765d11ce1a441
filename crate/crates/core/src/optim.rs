//! Adam and SGD with momentum over named parameter groups.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, Model};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    SgdMomentum {
        lr: f64,
        momentum: f64,
    },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        Self::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd_momentum(lr: f64) -> Self {
        Self::SgdMomentum { lr, momentum: 0.9 }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam_default()
    }
}

/// Moment buffers mirror the parameter groups they were first stepped with.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Velocity (SGD) or first-moment (Adam) buffers.
    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    fn ensure_buffers(&mut self, params: &[&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(
                "optimizer",
                format!("{} parameter groups, {} gradient groups", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(Error::shape(
                    "optimizer",
                    format!("group {i}: {} parameters, {} gradients", p.len(), g.len()),
                ));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params).any(|(b, p)| b.len() != p.len())
        {
            return Err(Error::shape(
                "optimizer",
                "parameter groups changed shape since the first step",
            ));
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        match self.kind {
            OptimizerKind::Adam { .. } => self.adam_step(params, grads),
            OptimizerKind::SgdMomentum { .. } => self.sgd_momentum_step(params, grads),
        }
    }

    /// Adam with bias-corrected moment estimates.
    pub fn adam_step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        let OptimizerKind::Adam {
            lr,
            beta1,
            beta2,
            eps,
        } = self.kind
        else {
            return Err(Error::InvalidArgument("optimizer is not Adam".into()));
        };
        self.ensure_buffers(params, grads)?;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (gi, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[gi], &mut self.second[gi]);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// `v <- momentum * v + g; p <- p - lr * v`.
    pub fn sgd_momentum_step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        let OptimizerKind::SgdMomentum { lr, momentum } = self.kind else {
            return Err(Error::InvalidArgument("optimizer is not SGD with momentum".into()));
        };
        self.ensure_buffers(params, grads)?;
        self.step += 1;
        for (gi, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let v = &mut self.first[gi];
            for i in 0..p.len() {
                v[i] = momentum * v[i] + g[i];
                p[i] -= lr * v[i];
            }
        }
        Ok(())
    }

    /// Applies one step to every parameter group of `model`.
    pub fn apply(&mut self, model: &mut Model, grads: &Gradients) -> Result<()> {
        let mut groups = model.param_groups_mut();
        for ((name, _), (gname, _)) in groups.iter().zip(&grads.groups) {
            if name != gname {
                return Err(Error::shape(
                    "optimizer",
                    format!("gradient group {gname} does not match parameter group {name}"),
                ));
            }
        }
        let mut params: Vec<&mut [f64]> = groups.iter_mut().map(|(_, p)| &mut **p).collect();
        let grads: Vec<&[f64]> = grads.groups.iter().map(|(_, g)| g.as_slice()).collect();
        self.step(&mut params, &grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(state: &mut OptimizerState, p: &mut Vec<f64>, g: &[f64]) {
        state.step(&mut [p.as_mut_slice()], &[g]).unwrap();
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut s = OptimizerState::new(OptimizerKind::adam_default());
        let mut p = vec![0.3, -1.2];
        for _ in 0..5 {
            run(&mut s, &mut p, &[0.0, 0.0]);
        }
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut s = OptimizerState::new(OptimizerKind::adam_default());
        let g = [2.5, -0.01, 1e-3];
        let mut p = vec![0.0; 3];
        run(&mut s, &mut p, &g);
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        for (pi, gi) in p.iter().zip(g) {
            let expected = -1e-3 * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-15);
            assert!((pi.abs() - 1e-3).abs() < 1e-7);
            assert_eq!(pi.signum(), -gi.signum());
        }
    }

    #[test]
    fn adam_groups_are_independent() {
        let mut joint = OptimizerState::new(OptimizerKind::adam_default());
        let (mut a, mut b) = (vec![1.0, 2.0], vec![3.0]);
        let (ga, gb) = ([0.5, -0.2], [4.0]);
        for _ in 0..3 {
            joint
                .step(&mut [a.as_mut_slice(), b.as_mut_slice()], &[&ga, &gb])
                .unwrap();
        }
        let mut solo = OptimizerState::new(OptimizerKind::adam_default());
        let mut a2 = vec![1.0, 2.0];
        for _ in 0..3 {
            run(&mut solo, &mut a2, &ga);
        }
        assert_eq!(a, a2);
    }

    #[test]
    fn sgd_without_momentum_is_plain_sgd() {
        let mut s = OptimizerState::new(OptimizerKind::SgdMomentum { lr: 0.1, momentum: 0.0 });
        let mut p = vec![1.0];
        run(&mut s, &mut p, &[2.0]);
        run(&mut s, &mut p, &[-1.0]);
        assert!((p[0] - (1.0 - 0.2 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_carries_velocity() {
        let (lr, alpha) = (0.1, 0.9);
        let mut s = OptimizerState::new(OptimizerKind::SgdMomentum { lr, momentum: alpha });
        let mut p = vec![0.0];
        run(&mut s, &mut p, &[1.0]);
        let before = p[0];
        let v = s.first_moments()[0][0];
        run(&mut s, &mut p, &[0.0]);
        assert!((p[0] - (before - lr * alpha * v)).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_two_constant_steps() {
        let (lr, alpha, g) = (0.05, 0.9, 0.7);
        let mut s = OptimizerState::new(OptimizerKind::SgdMomentum { lr, momentum: alpha });
        let mut p = vec![0.0];
        run(&mut s, &mut p, &[g]);
        run(&mut s, &mut p, &[g]);
        // v1 = g, v2 = alpha*g + g
        let expected = -(lr * g * (1.0 + (1.0 + alpha)));
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn shape_changes_are_rejected() {
        let mut s = OptimizerState::new(OptimizerKind::adam_default());
        let mut p = vec![0.0; 2];
        assert!(s.step(&mut [p.as_mut_slice()], &[&[1.0]]).is_err());
        run(&mut s, &mut p, &[1.0, 1.0]);
        let mut q = vec![0.0; 3];
        assert!(s.step(&mut [q.as_mut_slice()], &[&[1.0, 1.0, 1.0]]).is_err());
    }
}
