use super::{Grads, Params, Real};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay coefficient (0 disables it).
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias correction. Moment buffers are indexed by parameter
/// position, so the optimizer must always be stepped with the same
/// [`Params`] it was created for.
pub struct Adam<T: Real> {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &Params<T>) -> Self {
        let zeros = || params.iter().map(|(_, v)| vec![T::zero(); v.numel()]).collect();
        Adam {
            cfg,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update; parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &Params<T>, grads: &Grads<T>, lr: f64) -> Result<()> {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let (b1t, b2t) = (T::lit(b1), T::lit(b2));
        let step = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(self.cfg.eps);
        let decay = T::lit(1.0 - lr * self.cfg.weight_decay);
        for (i, (_, var)) in params.iter().enumerate() {
            let Some(g) = grads.get_var(var) else { continue };
            let mut data = var.tensor().to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..data.len() {
                m[j] = b1t * m[j] + (T::one() - b1t) * g[j];
                v[j] = b2t * v[j] + (T::one() - b2t) * g[j] * g[j];
                let vhat = (v[j] * inv_bc2).sqrt();
                data[j] = data[j] * decay - step * m[j] / (vhat + eps);
            }
            var.set_data(data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Tensor, Var};
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let w = Var::<f64>::new(&[2], vec![1.0, -1.0]).unwrap();
        let mut params = Params::new();
        params.insert("w", w.clone()).unwrap();
        let mut opt = Adam::new(AdamConfig::default(), &params);
        let loss = w.tensor().mul(&Tensor::from_vec(&[2], vec![3.0, -0.5]).unwrap()).unwrap().sum_all();
        let g = loss.backward().unwrap();
        opt.step(&params, &g, 0.01).unwrap();
        let d = w.tensor().to_vec();
        // bias-corrected first step is lr * sign(g)
        assert!((d[0] - 0.99).abs() < 1e-6);
        assert!((d[1] + 0.99).abs() < 1e-6);
    }

    #[test]
    fn minimises_quadratic() {
        let w = Var::<f64>::new(&[3], vec![2.0, -3.0, 0.5]).unwrap();
        let mut params = Params::new();
        params.insert("w", w.clone()).unwrap();
        let mut opt = Adam::new(AdamConfig::default(), &params);
        for _ in 0..2000 {
            let g = w.tensor().sqr().sum_all().backward().unwrap();
            opt.step(&params, &g, 0.05).unwrap();
        }
        assert!(w.tensor().data().iter().all(|v| v.abs() < 1e-2));
    }
}
