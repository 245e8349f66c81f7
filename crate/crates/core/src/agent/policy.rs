use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::{Mlp, MlpGrad};
use super::AgentError;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Diagonal Gaussian policy: an MLP for the mean and a state-independent
/// log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    pub mean: Mlp,
    pub log_std: Array1<f64>,
}

/// Gradient of a scalar loss with respect to the policy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub net: MlpGrad,
    pub log_std: Array1<f64>,
}

impl PolicyGrad {
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.net.flat();
        v.extend(self.log_std.iter());
        v
    }
}

pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], a: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(a)
        .map(|((m, ls), x)| {
            let z = (x - m) / ls.exp();
            -0.5 * z * z - ls - 0.5 * (2.0 * PI).ln()
        })
        .sum()
}

impl GaussianPolicy {
    pub fn new<R: Rng>(sizes: &[usize], init_log_std: f64, rng: &mut R) -> Self {
        let mean = Mlp::new(sizes, 0.01, rng);
        let m = mean.output_dim();
        Self {
            mean,
            log_std: Array1::from_elem(m, init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn clamped_log_std(&self) -> Vec<f64> {
        self.log_std.iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect()
    }

    pub fn std(&self) -> Vec<f64> {
        self.clamped_log_std().into_iter().map(f64::exp).collect()
    }

    pub fn means(&self, inputs: ArrayView2<f64>) -> Array2<f64> {
        self.mean.predict(inputs)
    }

    fn check(&self, input: &[f64]) -> Result<(), AgentError> {
        if input.len() != self.input_dim() {
            return Err(AgentError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    /// `(mean, std)` for one input.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Vec<f64>), AgentError> {
        self.check(input)?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        let mean: Vec<f64> = self.means(x).row(0).to_vec();
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(AgentError::NonFinite("policy mean".into()));
        }
        Ok((mean, self.std()))
    }

    /// Reparameterized sample `mean + std ⊙ ξ` and its log-probability.
    pub fn sample<R: Rng>(&self, input: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64), AgentError> {
        let (mean, std) = self.forward(input)?;
        let a: Vec<f64> = mean
            .iter()
            .zip(&std)
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let logp = gaussian_log_prob(&mean, &self.clamped_log_std(), &a);
        Ok((a, logp))
    }

    pub fn mean_action(&self, input: &[f64]) -> Result<Vec<f64>, AgentError> {
        Ok(self.forward(input)?.0)
    }

    pub fn log_probs(&self, inputs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Vec<f64> {
        let means = self.means(inputs);
        let ls = self.clamped_log_std();
        means
            .rows()
            .into_iter()
            .zip(actions.rows())
            .map(|(m, a)| gaussian_log_prob(m.as_slice().unwrap(), &ls, &a.to_vec()))
            .collect()
    }

    /// Entropy of the action distribution.
    pub fn entropy(&self) -> f64 {
        self.clamped_log_std()
            .iter()
            .map(|ls| ls + 0.5 * (2.0 * PI * std::f64::consts::E).ln())
            .sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.mean.flat();
        v.extend(self.log_std.iter());
        v
    }

    pub fn set_flat(&mut self, params: &[f64]) {
        let n = self.mean.num_params();
        self.mean.set_flat(&params[..n]);
        for (d, s) in self.log_std.iter_mut().zip(&params[n..]) {
            *d = *s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_gives_initial_std() {
        let p = GaussianPolicy {
            mean: Mlp::zeros(&[3, 4, 2]),
            log_std: Array1::from_elem(2, -0.5),
        };
        let (m, s) = p.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, vec![0.0, 0.0]);
        assert!(s.iter().all(|v| (v - (-0.5f64).exp()).abs() < 1e-15));
        assert!(matches!(p.forward(&[1.0]), Err(AgentError::DimensionMismatch { .. })));
    }

    #[test]
    fn log_prob_at_mean() {
        let ls = [-0.5, 0.3];
        let lp = gaussian_log_prob(&[0.2, -1.0], &ls, &[0.2, -1.0]);
        let expected = -(ls[0] + ls[1]) - (2.0 * PI).ln();
        assert!((lp - expected).abs() < 1e-14);
    }

    #[test]
    fn sample_log_prob_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = GaussianPolicy::new(&[3, 8, 2], -0.3, &mut rng);
        let x = [0.1, 0.2, -0.3];
        let (a, lp) = p.sample(&x, &mut rng).unwrap();
        let xv = ArrayView2::from_shape((1, 3), &x[..]).unwrap();
        let av = ArrayView2::from_shape((1, 2), &a[..]).unwrap();
        assert!((p.log_probs(xv, av)[0] - lp).abs() < 1e-12);
        assert_eq!(p.mean_action(&x).unwrap(), p.forward(&x).unwrap().0);
    }

    #[test]
    fn log_std_is_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = GaussianPolicy::new(&[1, 2], 0.0, &mut rng);
        p.log_std[0] = 10.0;
        p.log_std[1] = -10.0;
        assert_eq!(p.clamped_log_std(), vec![LOG_STD_MAX, LOG_STD_MIN]);
    }
}
