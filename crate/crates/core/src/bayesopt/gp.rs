//! Gaussian-process surrogate: Matérn-5/2 kernel with one length scale per
//! input, a signal variance and a fitted noise variance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erf;

use super::optim::nelder_mead;
use crate::error::{Error, Result};

const LOG_LENGTH: (f64, f64) = (-4.6, 2.3);
const LOG_SIGNAL: (f64, f64) = (-4.6, 4.6);
const LOG_NOISE: (f64, f64) = (-13.8, 0.0);
const JITTER: f64 = 1e-10;

/// Kernel hyperparameters in natural-log space.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    pub log_lengths: Vec<f64>,
    pub log_signal_var: f64,
    pub log_noise_var: f64,
}

impl KernelParams {
    pub fn initial(dim: usize) -> Self {
        KernelParams {
            log_lengths: vec![0.3f64.ln(); dim],
            log_signal_var: 0.0,
            log_noise_var: 0.01f64.ln(),
        }
    }

    fn to_vec(&self) -> Vec<f64> {
        let mut v = self.log_lengths.clone();
        v.push(self.log_signal_var);
        v.push(self.log_noise_var);
        v
    }

    fn from_vec(v: &[f64]) -> Self {
        let d = v.len() - 2;
        KernelParams {
            log_lengths: v[..d].to_vec(),
            log_signal_var: v[d],
            log_noise_var: v[d + 1],
        }
    }

    /// Project onto the admissible box; returns the squared distance moved.
    fn clamp(v: &mut [f64]) -> f64 {
        let d = v.len() - 2;
        let mut moved = 0.0;
        for (i, x) in v.iter_mut().enumerate() {
            let (lo, hi) = if i < d {
                LOG_LENGTH
            } else if i == d {
                LOG_SIGNAL
            } else {
                LOG_NOISE
            };
            let c = x.clamp(lo, hi);
            moved += (c - *x).powi(2);
            *x = c;
        }
        moved
    }

    fn random(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        KernelParams {
            log_lengths: (0..dim).map(|_| rng.gen_range(-2.5..0.5)).collect(),
            log_signal_var: rng.gen_range(-1.0..1.0),
            log_noise_var: rng.gen_range(-7.0..-1.0),
        }
    }
}

pub fn matern52(r: f64) -> f64 {
    let s = 5f64.sqrt() * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn kernel(a: &[f64], b: &[f64], p: &KernelParams) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(&p.log_lengths)
        .map(|((x, y), l)| ((x - y) / l.exp()).powi(2))
        .sum();
    p.log_signal_var.exp() * matern52(r2.sqrt())
}

fn gram(x: &[Vec<f64>], p: &KernelParams) -> DMatrix<f64> {
    let n = x.len();
    let noise = p.log_noise_var.exp() + JITTER;
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel(&x[i], &x[j], p);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += noise;
    }
    k
}

/// Log marginal likelihood of standardized targets `y`; `None` if the Gram
/// matrix is not positive definite.
pub fn log_marginal_likelihood(x: &[Vec<f64>], y: &DVector<f64>, p: &KernelParams) -> Option<f64> {
    let chol = Cholesky::new(gram(x, p))?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let n = y.len() as f64;
    Some(-0.5 * y.dot(&alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

#[derive(Debug, Clone)]
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_scale: f64,
    params: KernelParams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    y_std_min: f64,
}

impl GaussianProcess {
    /// Fit kernel parameters by maximizing the marginal likelihood from the
    /// default start plus `restarts` random starts.
    pub fn fit(x: &[Vec<f64>], y: &[f64], restarts: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        check_data(x, y)?;
        let dim = x[0].len();
        let (y_mean, y_scale) = standardization(y);
        let ys = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_scale));
        let neg_lml = |v: &[f64]| {
            let mut c = v.to_vec();
            let moved = KernelParams::clamp(&mut c);
            match log_marginal_likelihood(x, &ys, &KernelParams::from_vec(&c)) {
                Some(l) => -l + 1e3 * moved,
                None => f64::INFINITY,
            }
        };
        let mut starts = vec![KernelParams::initial(dim)];
        starts.extend((0..restarts).map(|_| KernelParams::random(dim, rng)));
        let mut best: Option<(Vec<f64>, f64)> = None;
        for s in starts {
            let (mut v, f) = nelder_mead(neg_lml, &s.to_vec(), 0.7, 60 * (dim + 2), 1e-6);
            KernelParams::clamp(&mut v);
            if f.is_finite() && best.as_ref().map_or(true, |b| f < b.1) {
                best = Some((v, f));
            }
        }
        let (v, _) = best.ok_or_else(|| Error::Numeric("GP likelihood is not finite at any start".into()))?;
        Self::with_params(x, y, KernelParams::from_vec(&v))
    }

    /// Condition on data with fixed kernel parameters.
    pub fn with_params(x: &[Vec<f64>], y: &[f64], params: KernelParams) -> Result<Self> {
        check_data(x, y)?;
        let (y_mean, y_scale) = standardization(y);
        let ys = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_scale));
        let chol = Cholesky::new(gram(x, &params))
            .ok_or_else(|| Error::Numeric("GP Gram matrix is not positive definite".into()))?;
        let alpha = chol.solve(&ys);
        let y_std_min = ys.min();
        Ok(GaussianProcess {
            x: x.to_vec(),
            y_mean,
            y_scale,
            params,
            chol,
            alpha,
            y_std_min,
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    /// Posterior mean and variance of the latent function, standardized units.
    pub(crate) fn predict_standardized(&self, q: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| kernel(xi, q, &self.params)));
        let mean = ks.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .expect("Cholesky factor has a positive diagonal");
        let var = (self.params.log_signal_var.exp() - v.norm_squared()).max(0.0);
        (mean, var)
    }

    /// Posterior mean and variance in the units of the training targets.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let (m, v) = self.predict_standardized(q);
        (self.y_mean + self.y_scale * m, v * self.y_scale * self.y_scale)
    }

    /// Expected improvement below the best observed target, with margin `xi`
    /// in standardized units.
    pub fn expected_improvement(&self, q: &[f64], xi: f64) -> f64 {
        let (m, v) = self.predict_standardized(q);
        expected_improvement(m, v.sqrt(), self.y_std_min, xi)
    }
}

/// EI for minimization of a Gaussian `N(mean, sd^2)` below `best - xi`.
pub fn expected_improvement(mean: f64, sd: f64, best: f64, xi: f64) -> f64 {
    let gain = best - mean - xi;
    if sd <= 1e-12 {
        return gain.max(0.0);
    }
    let z = gain / sd;
    let cdf = 0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (gain * cdf + sd * pdf).max(0.0)
}

fn check_data(x: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::Precondition(format!(
            "GP needs matching non-empty data, got {} inputs and {} targets",
            x.len(),
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) || x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("GP data contain non-finite values".into()));
    }
    Ok(())
}

fn standardization(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}
