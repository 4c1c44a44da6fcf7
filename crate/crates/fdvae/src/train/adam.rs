//! Adam over `candle` variables.
//!
//! Parameters that receive no gradient in a step are left untouched (no
//! moment decay), which keeps variants that never exercise a component
//! bit-identical to variants built without it.

use candle_core::backprop::GradStore;
use candle_core::{Result, Tensor, Var};

pub struct Adam {
    vars: Vec<Var>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(vars: Vec<Var>, lr: f64) -> Result<Self> {
        Self::with_params(vars, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_params(vars: Vec<Var>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        let m = vars
            .iter()
            .map(|v| v.zeros_like())
            .collect::<Result<Vec<_>>>()?;
        let v_ = vars
            .iter()
            .map(|v| v.zeros_like())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            vars,
            m,
            v: v_,
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// One update over all owned variables that have a gradient in `grads`.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (i, var) in self.vars.iter().enumerate() {
            let Some(grad) = grads.get(var.as_tensor()) else {
                continue;
            };
            // Gradients reference the autograd graph of the step that made
            // them; detach before they enter the moment buffers, or every
            // step's graph stays resident for the rest of training.
            let grad = grad.detach();
            let m = ((&self.m[i] * self.beta1)? + (&grad * (1.0 - self.beta1))?)?;
            let v = ((&self.v[i] * self.beta2)? + (grad.sqr()? * (1.0 - self.beta2))?)?;
            let m_hat = (&m / bc1)?;
            let v_hat = (&v / bc2)?;
            let delta = (m_hat * self.lr)?.div(&(v_hat.sqrt()? + self.eps)?)?;
            var.set(&var.sub(&delta)?)?;
            self.m[i] = m;
            self.v[i] = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn value(v: &Var) -> f32 {
        v.as_tensor().to_vec1::<f32>().unwrap()[0]
    }

    #[test]
    fn first_step_has_learning_rate_magnitude() {
        // With zero moments, the bias-corrected first update is
        // lr * g/|g| (up to eps), regardless of gradient scale.
        let var = Var::from_vec(vec![0.0f32], 1, &crate::device()).unwrap();
        let mut opt = Adam::new(vec![var.clone()], 0.05).unwrap();
        let loss = (var.as_tensor() - 3.0).unwrap().sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        opt.step(&grads).unwrap();
        assert!((value(&var) - 0.05).abs() < 1e-4, "got {}", value(&var));
    }

    #[test]
    fn converges_on_a_quadratic_bowl() {
        let var = Var::from_vec(vec![0.0f32], 1, &crate::device()).unwrap();
        let mut opt = Adam::new(vec![var.clone()], 0.1).unwrap();
        for _ in 0..300 {
            let loss = (var.as_tensor() - 3.0).unwrap().sqr().unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            opt.step(&grads).unwrap();
        }
        assert!((value(&var) - 3.0).abs() < 0.05, "got {}", value(&var));
    }

    #[test]
    fn gradient_free_variables_stay_put() {
        let used = Var::from_vec(vec![1.0f32], 1, &crate::device()).unwrap();
        let unused = Var::from_vec(vec![5.0f32], 1, &crate::device()).unwrap();
        let mut opt = Adam::new(vec![used.clone(), unused.clone()], 0.1).unwrap();
        let loss = used.as_tensor().sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        opt.step(&grads).unwrap();
        assert_eq!(value(&unused), 5.0);
        assert_ne!(value(&used), 1.0);
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let var = Var::from_vec(vec![0.3f32, -0.2], 2, &crate::device()).unwrap();
            let mut opt = Adam::new(vec![var.clone()], 0.02).unwrap();
            for _ in 0..20 {
                let loss = var.as_tensor().sqr().unwrap().sum_all().unwrap();
                let grads = loss.backward().unwrap();
                opt.step(&grads).unwrap();
            }
            var.as_tensor().to_vec1::<f32>().unwrap()
        };
        assert_eq!(run(), run());
    }
}
