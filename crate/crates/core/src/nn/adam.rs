use crate::error::{check_len, Error, Result};
use crate::nn::{FeedforwardNet, Gradients};

/// Adam moment estimates for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Zeroed moments for tensors of the given lengths.
    pub fn new(tensor_lens: &[usize]) -> Self {
        AdamState {
            m: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            v: tensor_lens.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_net(net: &FeedforwardNet) -> Self {
        let lens: Vec<usize> = net
            .weights()
            .iter()
            .zip(net.biases())
            .flat_map(|(w, b)| [w.len(), b.len()])
            .collect();
        Self::new(&lens)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One bias-corrected Adam step. Gradients are validated before any
    /// parameter is touched, so a divergence error leaves everything as it was.
    pub fn apply(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        check_len("adam parameter tensors", self.m.len(), params.len())?;
        check_len("adam gradient tensors", self.m.len(), grads.len())?;
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            check_len("adam parameter tensor", self.m[i].len(), p.len())?;
            check_len("adam gradient tensor", self.m[i].len(), g.len())?;
        }
        if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::TrainingDivergence("non-finite gradient".into()));
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Applies one Adam step to every parameter of `net`.
pub fn adam_update(net: &mut FeedforwardNet, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    let g = grads.slices();
    let mut p = net.param_slices_mut();
    state.apply(&mut p, &g, lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut state = AdamState::new(&[3]);
        let mut w = vec![1.0, -2.0, 0.5];
        let before = w.clone();
        state.apply(&mut [&mut w[..]], &[&[0.0, 0.0, 0.0][..]], 1e-3).unwrap();
        assert_eq!(w, before);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut state = AdamState::new(&[1]);
        let mut w = [0.0];
        state.apply(&mut [&mut w[..]], &[&[1.0][..]], 1e-3).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction, so the step is lr / (1 + eps).
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((w[0] - expected).abs() < 1e-15, "{}", w[0]);
        assert!((state.first_moments()[0][0] - 0.1).abs() < 1e-15);
        assert!((state.second_moments()[0][0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        let mut state = AdamState::new(&[1]);
        let mut w = [0.0];
        for _ in 0..5000 {
            let g = 2.0 * (w[0] - 3.0);
            state.apply(&mut [&mut w[..]], &[&[g][..]], 1e-2).unwrap();
        }
        assert!((w[0] - 3.0).abs() < 1e-2, "w = {}", w[0]);
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut state = AdamState::new(&[2]);
        let mut w = vec![1.0, 1.0];
        let err = state
            .apply(&mut [&mut w[..]], &[&[f64::NAN, 0.0][..]], 1e-3)
            .unwrap_err();
        assert!(matches!(err, Error::TrainingDivergence(_)));
        assert_eq!(w, vec![1.0, 1.0]);
        assert_eq!(state.step(), 0);
    }

    #[test]
    fn second_moments_stay_non_negative() {
        let mut state = AdamState::new(&[4]);
        let mut w = [0.0; 4];
        for k in 0..50 {
            let g: Vec<f64> = (0..4).map(|i| ((k * 7 + i * 3) as f64).sin() * 10.0).collect();
            state.apply(&mut [&mut w[..]], &[&g[..]], 1e-2).unwrap();
        }
        assert!(state.second_moments()[0].iter().all(|&v| v >= 0.0));
    }
}
