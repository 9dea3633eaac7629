//! Parameter updates: plain SGD and Adam.

use crate::{Error, Result};

use super::Tensor;

/// Adam hyperparameters. The defaults are the standard ones; only the
/// learning rate is usually worth touching.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

/// Adam state: first/second moment estimates per parameter tensor plus the
/// shared step counter. Slots are allocated on the first `step` call and
/// shape-checked on every later one.
pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    moments: Option<Vec<(Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Adam {
        Adam {
            cfg,
            t: 0,
            moments: None,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over a parameter list. `params` and `grads` must be the
    /// same tensors, in the same order, on every call.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "adam: {} parameter tensors vs {} gradient tensors",
                params.len(),
                grads.len()
            )));
        }
        if self.moments.is_none() {
            self.moments = Some(
                params
                    .iter()
                    .map(|p| (vec![0.0; p.len()], vec![0.0; p.len()]))
                    .collect(),
            );
        }
        let moments = self.moments.as_mut().unwrap();
        if moments.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam: initialized with {} tensors, called with {}",
                moments.len(),
                params.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(moments.iter_mut()) {
            if !p.same_shape(g) || p.len() != m.len() {
                return Err(Error::Shape(format!(
                    "adam: tensor shape changed between steps ({:?} vs {:?})",
                    p.shape(),
                    g.shape()
                )));
            }
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * gi;
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.data_mut()[i] -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
            }
        }
        Ok(())
    }
}

/// Vanilla gradient descent: `p -= lr * g`.
pub fn sgd_step(params: &mut [&mut Tensor], grads: &[&Tensor], learning_rate: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "sgd: {} parameter tensors vs {} gradient tensors",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        if !p.same_shape(g) {
            return Err(Error::Shape(format!(
                "sgd: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= learning_rate * gv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_moves_against_gradient() {
        let mut p = Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap();
        let g = Tensor::from_vec(&[2], vec![0.5, -0.25]).unwrap();
        sgd_step(&mut [&mut p], &[&g], 0.1).unwrap();
        assert_eq!(p.data(), &[1.0 - 0.05, -1.0 + 0.025]);
    }

    /// With bias correction the very first Adam step has magnitude close to
    /// the learning rate for any nonzero gradient.
    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        for &g0 in &[1e-4, 0.3, 7.0] {
            let mut adam = Adam::new(AdamConfig::with_learning_rate(0.01));
            let mut p = Tensor::from_vec(&[1], vec![2.0]).unwrap();
            let g = Tensor::from_vec(&[1], vec![g0]).unwrap();
            adam.step(&mut [&mut p], &[&g]).unwrap();
            let moved = 2.0 - p.data()[0];
            assert!(
                (moved - 0.01).abs() < 1e-5,
                "gradient {g0}: moved {moved}"
            );
        }
    }

    #[test]
    fn adam_hand_computed_second_step() {
        // lr=0.1, g=1 both steps, p0=0.
        // m1=0.1, v1=0.001, mhat=1, vhat=1      -> p1 = -0.1/(1+1e-8)
        // m2=0.19, v2=0.001999, bc1=0.19, bc2=0.001999 -> mhat=1, vhat=1
        //                                       -> p2 approx -0.2
        let mut adam = Adam::new(AdamConfig::with_learning_rate(0.1));
        let mut p = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let g = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        adam.step(&mut [&mut p], &[&g]).unwrap();
        assert!((p.data()[0] + 0.1).abs() < 1e-7);
        adam.step(&mut [&mut p], &[&g]).unwrap();
        assert!((p.data()[0] + 0.2).abs() < 1e-7);
        assert_eq!(adam.steps_taken(), 2);
    }

    #[test]
    fn adam_converges_on_a_quadratic() {
        // Minimize (p - 3)^2; gradient 2(p - 3).
        let mut adam = Adam::new(AdamConfig::with_learning_rate(0.1));
        let mut p = Tensor::from_vec(&[1], vec![-4.0]).unwrap();
        for _ in 0..500 {
            let g = Tensor::from_vec(&[1], vec![2.0 * (p.data()[0] - 3.0)]).unwrap();
            adam.step(&mut [&mut p], &[&g]).unwrap();
        }
        assert!((p.data()[0] - 3.0).abs() < 1e-3, "ended at {}", p.data()[0]);
    }

    #[test]
    fn adam_rejects_shape_drift() {
        let mut adam = Adam::new(AdamConfig::default());
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::zeros(&[2]);
        adam.step(&mut [&mut p], &[&g]).unwrap();
        let mut p3 = Tensor::zeros(&[3]);
        let g3 = Tensor::zeros(&[3]);
        assert!(adam.step(&mut [&mut p3], &[&g3]).is_err());
    }
}
