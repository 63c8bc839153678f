use crate::error::{Error, Result};
use crate::nn::PopularityNet;

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update using the gradients stored on `net`, then clear them.
    pub fn step(&mut self, net: &mut PopularityNet) -> Result<()> {
        let mut params = net.named_params_mut();
        if let Some((name, _)) = params.iter().find(|(_, t)| t.grad.is_none()) {
            return Err(Error::State(format!("parameter `{name}` has no gradient")));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::State("optimizer state belongs to a different network".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((_, param), m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grad = param.grad.take().expect("checked above");
            for (((w, g), m), v) in param.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetConfig;

    fn tiny() -> PopularityNet {
        let cfg = NetConfig {
            conv_filters: vec![1],
            meta_dim: 2,
            meta_hidden: vec![],
            head_hidden: vec![],
            input_mels: 2,
            input_frames: 2,
        };
        PopularityNet::zeros(cfg).unwrap()
    }

    fn fill_grads(net: &mut PopularityNet, g: f64) {
        for (_, t) in net.named_params_mut() {
            let n = t.len();
            t.set_grad(vec![g; n]).unwrap();
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut net = tiny();
        let before = net.clone();
        fill_grads(&mut net, 0.0);
        Adam::new(0.001).step(&mut net).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = tiny();
        fill_grads(&mut net, 1.0);
        let mut opt = Adam::new(0.001);
        opt.step(&mut net).unwrap();
        for (_, t) in net.named_params() {
            for &w in t.data() {
                assert!((w + 0.001).abs() < 1e-10, "{w}");
            }
        }
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn missing_gradient_is_a_state_error() {
        let mut net = tiny();
        assert!(matches!(Adam::new(0.001).step(&mut net), Err(Error::State(_))));
        fill_grads(&mut net, 1.0);
        let mut opt = Adam::new(0.001);
        opt.step(&mut net).unwrap();
        // gradients are consumed by the step
        assert!(matches!(opt.step(&mut net), Err(Error::State(_))));
    }
}
