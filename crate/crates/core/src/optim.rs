//! First-order optimizers over flat parameter slices.

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Plain gradient descent step.
pub fn sgd_step(params: &mut [f64], grad: &[f64], lr: f64) {
    params.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g);
}

pub fn l2_norm<'a>(parts: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    parts
        .into_iter()
        .flat_map(|p| p.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales the gradient parts jointly so their global norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(parts: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = l2_norm(parts.iter().map(|p| &**p));
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for part in parts.iter_mut() {
            part.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}
