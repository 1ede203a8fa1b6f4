use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::real::Real;

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;

/// Diagonal Gaussian over a latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead<T> {
    pub mu: Vec<T>,
    pub logvar: Vec<T>,
}

impl<T: Real> GaussianHead<T> {
    /// Splits a `[mu | logvar]` row, clamping logvar.
    pub fn from_row(row: &[T]) -> Self {
        let d = row.len() / 2;
        let (lo, hi) = (T::from_f64(LOGVAR_MIN), T::from_f64(LOGVAR_MAX));
        Self {
            mu: row[..d].to_vec(),
            logvar: row[d..2 * d]
                .iter()
                .map(|&v| {
                    if v < lo {
                        lo
                    } else if v > hi {
                        hi
                    } else {
                        v
                    }
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Whether the clamp let the raw logvar through (gradient mask).
pub fn logvar_passes<T: Real>(raw: T) -> bool {
    raw >= T::from_f64(LOGVAR_MIN) && raw <= T::from_f64(LOGVAR_MAX)
}

/// Standard-normal noise vector.
pub fn standard_normal<T: Real>(dim: usize, rng: &mut dyn RngCore) -> Vec<T> {
    (0..dim)
        .map(|_| T::from_f64(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)))
        .collect()
}

/// `z = mu + exp(logvar / 2) * eps` for given noise.
pub fn reparam_with<T: Real>(head: &GaussianHead<T>, eps: &[T]) -> Vec<T> {
    let half = T::from_f64(0.5);
    head.mu
        .iter()
        .zip(&head.logvar)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect()
}

/// Draws `eps ~ N(0, I)` and returns `(z, eps)`; `eps` is needed for the
/// gradient `dz/dlogvar = exp(logvar / 2) * eps / 2`.
pub fn reparam_sample<T: Real>(head: &GaussianHead<T>, rng: &mut dyn RngCore) -> (Vec<T>, Vec<T>) {
    let eps = standard_normal(head.dim(), rng);
    (reparam_with(head, &eps), eps)
}

/// Gradients of `sum_i dl/dz_i * z_i` with respect to mu and logvar.
pub fn reparam_backward<T: Real>(head: &GaussianHead<T>, eps: &[T], dz: &[T]) -> (Vec<T>, Vec<T>) {
    let half = T::from_f64(0.5);
    let dlv = head
        .logvar
        .iter()
        .zip(eps)
        .zip(dz)
        .map(|((&lv, &e), &d)| d * half * (half * lv).exp() * e)
        .collect();
    (dz.to_vec(), dlv)
}

/// KL(N(mu, diag(exp(logvar))) || N(0, I)).
pub fn kl_standard_normal<T: Real>(head: &GaussianHead<T>) -> T {
    let half = T::from_f64(0.5);
    head.mu
        .iter()
        .zip(&head.logvar)
        .map(|(&m, &lv)| half * (m * m + lv.exp() - T::ONE - lv))
        .sum()
}

/// Gradients of the KL with respect to mu and logvar.
pub fn kl_backward<T: Real>(head: &GaussianHead<T>) -> (Vec<T>, Vec<T>) {
    let half = T::from_f64(0.5);
    (
        head.mu.clone(),
        head.logvar.iter().map(|&lv| half * (lv.exp() - T::ONE)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_closed_form_examples() {
        let zero = GaussianHead::<f64> {
            mu: vec![0.0; 3],
            logvar: vec![0.0; 3],
        };
        assert_eq!(kl_standard_normal(&zero), 0.0);
        let one = GaussianHead::<f64> {
            mu: vec![1.0],
            logvar: vec![0.0],
        };
        assert_eq!(kl_standard_normal(&one), 0.5);
    }

    #[test]
    fn clamp_applies() {
        let h = GaussianHead::from_row(&[0.0f32, 1.0, -50.0, 30.0]);
        assert_eq!(h.logvar, vec![-10.0, 10.0]);
        assert!(!logvar_passes(-50.0f32));
    }
}
