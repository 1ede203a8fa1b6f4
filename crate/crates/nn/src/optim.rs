use crate::real::Real;
use crate::NnError;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Real> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![T::ZERO; num_params],
            v: vec![T::ZERO; num_params],
        }
    }

    pub fn moments(&self) -> (&[T], &[T]) {
        (&self.m, &self.v)
    }

    pub fn update(&mut self, params: &mut [T], grads: &[T]) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::Shape {
                layer: None,
                msg: format!(
                    "adam state has {} entries, got {} params and {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (c1, c2) = (T::ONE - b1, T::ONE - b2);
        let lr_t = T::from_f64(self.lr * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t)));
        let eps_t = T::from_f64(self.eps * (1.0 - self.beta2.powi(t)).sqrt());
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = b1 * *m + c1 * g;
            *v = b2 * *v + c2 * g * g;
            *p -= lr_t * *m / (v.sqrt() + eps_t);
        }
        Ok(())
    }
}
