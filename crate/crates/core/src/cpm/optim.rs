use serde::{Deserialize, Serialize};

/// Squared error and its derivative with respect to the prediction.
pub fn squared_error(pred: f64, target: f64) -> (f64, f64) {
    let e = pred - target;
    (e * e, 2.0 * e)
}

/// Softmax cross-entropy and its gradient (softmax minus one-hot) w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &[f64], class: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = m + sum.ln() - logits[class];
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[class] -= 1.0;
    (loss, grad)
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam state for a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, n: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let AdamConfig { learning_rate, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits() {
        let (l, _) = softmax_cross_entropy(&[0.0, 0.0, 0.0], 2);
        assert!((l - 3f64.ln()).abs() < 1e-15);
        assert_eq!(squared_error(0.4, 0.4), (0.0, 0.0));
    }

    #[test]
    fn cross_entropy_matches_log_sum_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let c = rng.random_range(0..3);
            let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
            let (l, g) = softmax_cross_entropy(&z, c);
            assert!((l - (lse - z[c])).abs() < 1e-12);
            // numerical check of softmax minus one-hot
            for k in 0..3 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[k] += 1e-6;
                zm[k] -= 1e-6;
                let num = (softmax_cross_entropy(&zp, c).0 - softmax_cross_entropy(&zm, c).0) / 2e-6;
                assert!((num - g[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![0.5; 4];
        let mut a = Adam::new(AdamConfig::default(), 4);
        a.step(&mut p, &[1.0; 4]);
        for v in &p {
            assert!((v - (0.5 - 0.001)).abs() < 1e-9);
        }
        let mut q = vec![0.5; 4];
        Adam::new(AdamConfig::default(), 4).step(&mut q, &[0.0; 4]);
        assert_eq!(q, vec![0.5; 4]);
    }

    #[test]
    fn adam_descends_quadratic() {
        let f = |p: &[f64]| 3.0 * (p[0] - 1.0).powi(2) + 0.5 * (p[1] + 2.0).powi(2);
        let mut p = vec![0.0, 0.0];
        let mut a = Adam::new(
            AdamConfig {
                learning_rate: 0.005,
                ..AdamConfig::default()
            },
            2,
        );
        let mut prev = f(&p);
        for step in 1..=100 {
            let g = [6.0 * (p[0] - 1.0), p[1] + 2.0];
            a.step(&mut p, &g);
            let cur = f(&p);
            if step > 5 {
                assert!(cur < prev, "step {step}: {cur} >= {prev}");
            }
            prev = cur;
        }
    }
}
