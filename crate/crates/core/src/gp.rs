//! Gaussian-process regression on the unit hypercube.
//!
//! Matérn-5/2 kernel with one lengthscale per dimension and a learned
//! Gaussian noise term. Targets are standardised before fitting; kernel
//! hyperparameters maximise the log marginal likelihood by multistart
//! pattern search in log space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_variance: f64,
}

impl Kernel {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.signal_variance) || !self.lengthscales.iter().all(|&l| ok(l)) {
            return Err(config_err!("kernel variance and lengthscales must be positive"));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(config_err!("noise variance must be non-negative"));
        }
        Ok(())
    }

    /// Matérn-5/2 covariance `s2 (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r)`
    /// with `r` the lengthscale-weighted distance.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        let s5r = (5.0 * r2).sqrt();
        self.signal_variance * (1.0 + s5r + 5.0 * r2 / 3.0) * (-s5r).exp()
    }
}

/// Covariance matrix between two point sets, row-major `a.len() x b.len()`.
pub fn kernel_matrix(a: &[Vec<f64>], b: &[Vec<f64>], kernel: &Kernel) -> Result<Vec<Vec<f64>>> {
    kernel.validate()?;
    let dim = kernel.lengthscales.len();
    if a.iter().chain(b).any(|p| p.len() != dim) {
        return Err(shape_err!("points must have {dim} coordinates"));
    }
    if a.iter().chain(b).flatten().any(|v| !v.is_finite()) {
        return Err(config_err!("kernel inputs must be finite"));
    }
    Ok(a.iter()
        .map(|p| b.iter().map(|q| kernel.eval(p, q)).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    pub restarts: usize,
    pub signal_variance_bounds: (f64, f64),
    pub lengthscale_bounds: (f64, f64),
    pub noise_bounds: (f64, f64),
    pub jitter_start: f64,
    pub jitter_max: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            signal_variance_bounds: (1e-3, 1e3),
            lengthscale_bounds: (5e-2, 1.0),
            noise_bounds: (1e-8, 1e-2),
            jitter_start: 1e-10,
            jitter_max: 1e-4,
        }
    }
}

impl GpConfig {
    fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("signal variance", self.signal_variance_bounds),
            ("lengthscale", self.lengthscale_bounds),
            ("noise", self.noise_bounds),
        ] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(config_err!("{name} bounds must satisfy 0 < low <= high"));
            }
        }
        if self.restarts == 0 || !(self.jitter_start > 0.0 && self.jitter_start <= self.jitter_max) {
            return Err(config_err!("need restarts >= 1 and 0 < jitter_start <= jitter_max"));
        }
        Ok(())
    }
}

/// Lower Cholesky factor (row-major, `n x n`) of a symmetric matrix, or
/// `None` if it is not numerically positive definite.
pub fn cholesky(a: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = a.len();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `L x = b` for lower-triangular `L`.
fn solve_lower(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Solves `L^T x = b` for lower-triangular `L`.
fn solve_upper_transposed(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Log marginal likelihood of one multistart run, at its start and end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub start_lml: f64,
    pub final_lml: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    y_standardized: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    kernel: Kernel,
    jitter: f64,
    cholesky: Vec<f64>,
    alpha: Vec<f64>,
    log_marginal_likelihood: f64,
    restarts: Vec<RestartTrace>,
}

struct Factorized {
    jitter: f64,
    cholesky: Vec<f64>,
    alpha: Vec<f64>,
    lml: f64,
}

fn factorize(x: &[Vec<f64>], y: &[f64], kernel: &Kernel, config: &GpConfig) -> Result<Factorized> {
    let n = x.len();
    let k = kernel_matrix(x, x, kernel)?;
    let mut jitter = config.jitter_start;
    loop {
        let mut kj = k.clone();
        for (i, row) in kj.iter_mut().enumerate() {
            row[i] += kernel.noise_variance + jitter;
        }
        if let Some(l) = cholesky(&kj) {
            let alpha = solve_upper_transposed(&l, n, &solve_lower(&l, n, y));
            let data_fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
            let log_det: f64 = (0..n).map(|i| l[i * n + i].ln()).sum::<f64>() * 2.0;
            let lml = -0.5 * data_fit - 0.5 * log_det - 0.5 * n as f64 * LN_2PI;
            return Ok(Factorized {
                jitter,
                cholesky: l,
                alpha,
                lml,
            });
        }
        jitter *= 10.0;
        if jitter > config.jitter_max * (1.0 + 1e-9) {
            return Err(Error::Numerical(format!(
                "Cholesky failed with jitter up to {:e}",
                config.jitter_max
            )));
        }
    }
}

fn standardize(y: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    (y.iter().map(|v| (v - mean) / scale).collect(), mean, scale)
}

fn check_data(x: &[Vec<f64>], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(shape_err!("{} points but {} targets", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::State("a GP needs at least two observations".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(config_err!("targets must be finite"));
    }
    Ok(())
}

impl GpModel {
    /// Conditions on the data with fixed kernel hyperparameters.
    pub fn with_kernel(x: Vec<Vec<f64>>, y: &[f64], kernel: Kernel, config: &GpConfig) -> Result<Self> {
        check_data(&x, y)?;
        config.validate()?;
        let (ys, y_mean, y_scale) = standardize(y);
        let f = factorize(&x, &ys, &kernel, config)?;
        Ok(Self {
            x,
            y_standardized: ys,
            y_mean,
            y_scale,
            kernel,
            jitter: f.jitter,
            cholesky: f.cholesky,
            alpha: f.alpha,
            log_marginal_likelihood: f.lml,
            restarts: Vec::new(),
        })
    }

    /// Fits kernel hyperparameters by maximising the log marginal likelihood
    /// over `config.restarts` starting points (the first one fixed, the rest
    /// drawn from `rng`).
    pub fn fit<R: Rng + ?Sized>(x: Vec<Vec<f64>>, y: &[f64], config: &GpConfig, rng: &mut R) -> Result<Self> {
        check_data(&x, y)?;
        config.validate()?;
        let dim = x[0].len();
        if dim == 0 || x.iter().any(|p| p.len() != dim) {
            return Err(shape_err!("all points need the same positive dimension"));
        }
        let (ys, _, _) = standardize(y);

        let lower: Vec<f64> = std::iter::once(config.signal_variance_bounds.0)
            .chain(std::iter::repeat_n(config.lengthscale_bounds.0, dim))
            .chain(std::iter::once(config.noise_bounds.0))
            .map(f64::ln)
            .collect();
        let upper: Vec<f64> = std::iter::once(config.signal_variance_bounds.1)
            .chain(std::iter::repeat_n(config.lengthscale_bounds.1, dim))
            .chain(std::iter::once(config.noise_bounds.1))
            .map(f64::ln)
            .collect();
        // exp(ln b) can land an ulp outside b
        let bounded = |t: f64, (lo, hi): (f64, f64)| t.exp().clamp(lo, hi);
        let to_kernel = |theta: &[f64]| Kernel {
            signal_variance: bounded(theta[0], config.signal_variance_bounds),
            lengthscales: theta[1..=dim]
                .iter()
                .map(|&t| bounded(t, config.lengthscale_bounds))
                .collect(),
            noise_variance: bounded(theta[dim + 1], config.noise_bounds),
        };
        let objective = |theta: &[f64]| {
            factorize(&x, &ys, &to_kernel(theta), config)
                .map(|f| f.lml)
                .unwrap_or(f64::NEG_INFINITY)
        };

        let clamp = |theta: &mut Vec<f64>| {
            for ((t, lo), hi) in theta.iter_mut().zip(&lower).zip(&upper) {
                *t = t.clamp(*lo, *hi);
            }
        };
        let mut first: Vec<f64> = std::iter::once(1.0f64.ln())
            .chain(std::iter::repeat_n(0.5f64.ln(), dim))
            .chain(std::iter::once(1e-4f64.ln()))
            .collect();
        clamp(&mut first);
        let mut starts = vec![first];
        for _ in 1..config.restarts {
            starts.push(
                lower
                    .iter()
                    .zip(&upper)
                    .map(|(lo, hi)| if hi > lo { rng.random_range(*lo..*hi) } else { *lo })
                    .collect(),
            );
        }

        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut traces = Vec::with_capacity(starts.len());
        for start in starts {
            let start_lml = objective(&start);
            let (theta, lml) = pattern_search(start, start_lml, &lower, &upper, &objective);
            traces.push(RestartTrace {
                start_lml,
                final_lml: lml,
            });
            if lml.is_finite() && best.as_ref().is_none_or(|(b, _)| lml > *b) {
                best = Some((lml, theta));
            }
        }
        let (_, theta) = best.ok_or_else(|| {
            Error::Numerical("Cholesky failed at every restart".into())
        })?;
        let mut model = Self::with_kernel(x, y, to_kernel(&theta), config)?;
        model.restarts = traces;
        Ok(model)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.x
    }

    /// Targets after standardisation.
    pub fn standardized_targets(&self) -> &[f64] {
        &self.y_standardized
    }

    /// `(mean, scale)` used to standardise the targets.
    pub fn target_transform(&self) -> (f64, f64) {
        (self.y_mean, self.y_scale)
    }

    /// Diagonal jitter added on top of the noise variance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Log marginal likelihood of the standardised targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal_likelihood
    }

    pub fn restart_traces(&self) -> &[RestartTrace] {
        &self.restarts
    }

    /// Mean and latent variance before flooring, in standardised units.
    fn standardized_posterior(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.kernel.lengthscales.len() {
            return Err(shape_err!("query has {} coordinates, model has {}", x.len(), self.kernel.lengthscales.len()));
        }
        let n = self.x.len();
        let ks: Vec<f64> = self.x.iter().map(|p| self.kernel.eval(x, p)).collect();
        let mean: f64 = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = solve_lower(&self.cholesky, n, &ks);
        let var = self.kernel.signal_variance - v.iter().map(|t| t * t).sum::<f64>();
        Ok((mean, var))
    }

    /// Posterior mean and variance of the latent function at `x`, in the
    /// original target units. The variance is floored at zero.
    pub fn posterior(&self, x: &[f64]) -> Result<(f64, f64)> {
        let (m, v) = self.standardized_posterior(x)?;
        let mean = self.y_mean + self.y_scale * m;
        let var = (self.y_scale * self.y_scale * v).max(0.0);
        if !mean.is_finite() || !var.is_finite() {
            return Err(Error::Numerical("non-finite posterior".into()));
        }
        Ok((mean, var))
    }
}

/// Coordinate pattern search maximising `f` inside a box. Returns the best
/// point and value; never returns a value below the start.
fn pattern_search(
    mut theta: Vec<f64>,
    mut value: f64,
    lower: &[f64],
    upper: &[f64],
    f: &dyn Fn(&[f64]) -> f64,
) -> (Vec<f64>, f64) {
    let mut step = 1.0;
    let mut evals = 0;
    while step > 1e-3 && evals < 4000 {
        let mut improved = false;
        for i in 0..theta.len() {
            for dir in [1.0, -1.0] {
                let mut cand = theta.clone();
                cand[i] = (cand[i] + dir * step).clamp(lower[i], upper[i]);
                if cand[i] == theta[i] {
                    continue;
                }
                let v = f(&cand);
                evals += 1;
                if v > value {
                    theta = cand;
                    value = v;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (theta, value)
}
