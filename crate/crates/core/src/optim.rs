use crate::nn::Parameterized;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update<P: Parameterized>(&mut self, params: &mut P, grads: &P) {
        let grads = grads.blocks("");
        let mut blocks = params.blocks_mut("");
        if self.first.is_empty() {
            self.first = blocks.iter().map(|b| vec![0.0; b.data.len()]).collect();
            self.second = self.first.clone();
        }
        assert_eq!(blocks.len(), grads.len(), "parameter/gradient layout mismatch");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (block, grad)) in blocks.iter_mut().zip(&grads).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for (j, (p, &g)) in block.data.iter_mut().zip(grad.data).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}
