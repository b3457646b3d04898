//! Robust weights for IRLS and the Student-t sensor model.

use std::fmt;
use std::str::FromStr;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const SIGMA_MIN: f64 = 1e-3;
/// Consistency factor turning the MAD into a Gaussian standard deviation.
pub const MAD_SCALE: f64 = 1.4826;

const SIGMA_REL_TOL: f64 = 1e-5;
const SIGMA_MAX_ITERS: usize = 50;
const NU_RANGE: (f64, f64) = (1.0, 100.0);

/// A weight function with its parameters fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightFunction {
    LeastSquares,
    L1 { epsilon: f64 },
    Huber { k: f64 },
    Tukey { c: f64 },
    Cauchy { c: f64 },
    TDistribution { nu: f64, sigma: f64 },
}

impl WeightFunction {
    pub fn validate(&self) -> Result<()> {
        let ok = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive, got {v}")))
            }
        };
        match *self {
            WeightFunction::LeastSquares => Ok(()),
            WeightFunction::L1 { epsilon } => ok("l1_epsilon", epsilon),
            WeightFunction::Huber { k } => ok("huber_k", k),
            WeightFunction::Tukey { c } => ok("tukey_c", c),
            WeightFunction::Cauchy { c } => ok("cauchy_c", c),
            WeightFunction::TDistribution { nu, sigma } => ok("t_nu", nu).and(ok("t_sigma", sigma)),
        }
    }

    #[inline]
    pub fn weight(&self, r: f64) -> f64 {
        match *self {
            WeightFunction::LeastSquares => 1.0,
            WeightFunction::L1 { epsilon } => 1.0 / r.abs().max(epsilon),
            WeightFunction::Huber { k } => {
                if r.abs() <= k {
                    1.0
                } else {
                    k / r.abs()
                }
            }
            WeightFunction::Tukey { c } => {
                if r.abs() <= c {
                    let u = 1.0 - (r / c) * (r / c);
                    u * u
                } else {
                    0.0
                }
            }
            WeightFunction::Cauchy { c } => 1.0 / (1.0 + (r / c) * (r / c)),
            WeightFunction::TDistribution { nu, sigma } => (nu + 1.0) / (nu + (r / sigma) * (r / sigma)),
        }
    }

    /// Cost whose derivative is `weight(r) * r`.
    pub fn rho(&self, r: f64) -> f64 {
        let a = r.abs();
        match *self {
            WeightFunction::LeastSquares => 0.5 * r * r,
            WeightFunction::L1 { epsilon } => {
                if a >= epsilon {
                    a - 0.5 * epsilon
                } else {
                    0.5 * r * r / epsilon
                }
            }
            WeightFunction::Huber { k } => {
                if a <= k {
                    0.5 * r * r
                } else {
                    k * a - 0.5 * k * k
                }
            }
            WeightFunction::Tukey { c } => {
                let c2 = c * c / 6.0;
                if a <= c {
                    let u = 1.0 - (r / c) * (r / c);
                    c2 * (1.0 - u * u * u)
                } else {
                    c2
                }
            }
            WeightFunction::Cauchy { c } => 0.5 * c * c * (r / c).mul_add(r / c, 1.0).ln(),
            WeightFunction::TDistribution { nu, sigma } => {
                0.5 * sigma * sigma * (nu + 1.0) * (r * r / (nu * sigma * sigma)).ln_1p()
            }
        }
    }
}

/// Which weight family a configuration selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightKind {
    LeastSquares,
    L1,
    Huber,
    Tukey,
    Cauchy,
    TDistribution,
}

impl WeightKind {
    /// Row order of the weight-function comparison table.
    pub const ALL: [WeightKind; 6] = [
        WeightKind::LeastSquares,
        WeightKind::L1,
        WeightKind::Tukey,
        WeightKind::Huber,
        WeightKind::Cauchy,
        WeightKind::TDistribution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightKind::LeastSquares => "least_squares",
            WeightKind::L1 => "l1",
            WeightKind::Huber => "huber",
            WeightKind::Tukey => "tukey",
            WeightKind::Cauchy => "cauchy",
            WeightKind::TDistribution => "t_distribution",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            WeightKind::LeastSquares => "LS",
            WeightKind::L1 => "l1",
            WeightKind::Huber => "Huber",
            WeightKind::Tukey => "Tukey",
            WeightKind::Cauchy => "Cauchy",
            WeightKind::TDistribution => "T-dist",
        }
    }
}

impl fmt::Display for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "least_squares" | "ls" => Ok(WeightKind::LeastSquares),
            "l1" => Ok(WeightKind::L1),
            "huber" => Ok(WeightKind::Huber),
            "tukey" => Ok(WeightKind::Tukey),
            "cauchy" => Ok(WeightKind::Cauchy),
            "t_distribution" | "t" | "tdist" | "t-dist" => Ok(WeightKind::TDistribution),
            other => Err(Error::invalid("weight", format!("unknown weight function `{other}`"))),
        }
    }
}

/// Weight family plus tuning constants; scales are re-estimated per iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustConfig {
    pub kind: WeightKind,
    /// Multiples of the robust scale estimate.
    pub huber_k: f64,
    pub tukey_c: f64,
    pub cauchy_c: f64,
    pub t_nu: f64,
    /// Initial t scale in pixels.
    pub t_sigma: f64,
    pub l1_epsilon: f64,
    pub sigma_min: f64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            kind: WeightKind::TDistribution,
            huber_k: 1.345,
            tukey_c: 4.6851,
            cauchy_c: 2.3849,
            t_nu: 5.0,
            t_sigma: 1.0,
            l1_epsilon: 1e-6,
            sigma_min: SIGMA_MIN,
        }
    }
}

impl RobustConfig {
    pub fn with_kind(kind: WeightKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("huber_k", self.huber_k),
            ("tukey_c", self.tukey_c),
            ("cauchy_c", self.cauchy_c),
            ("t_nu", self.t_nu),
            ("t_sigma", self.t_sigma),
            ("l1_epsilon", self.l1_epsilon),
            ("sigma_min", self.sigma_min),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Weight function for the current residuals. `prev_sigma` seeds the t scale.
    /// Returns the function and the scale estimate it used.
    pub fn instantiate(&self, residuals: &[f64], prev_sigma: f64) -> (WeightFunction, f64) {
        match self.kind {
            WeightKind::LeastSquares => (WeightFunction::LeastSquares, 1.0),
            WeightKind::L1 => (
                WeightFunction::L1 {
                    epsilon: self.l1_epsilon,
                },
                1.0,
            ),
            WeightKind::Huber | WeightKind::Tukey | WeightKind::Cauchy => {
                let s = mad_sigma(residuals).max(self.sigma_min);
                let wf = match self.kind {
                    WeightKind::Huber => WeightFunction::Huber { k: self.huber_k * s },
                    WeightKind::Tukey => WeightFunction::Tukey { c: self.tukey_c * s },
                    _ => WeightFunction::Cauchy { c: self.cauchy_c * s },
                };
                (wf, s)
            }
            WeightKind::TDistribution => {
                let seed = if prev_sigma > 0.0 && prev_sigma.is_finite() {
                    prev_sigma
                } else {
                    self.t_sigma
                };
                let sigma = if residuals.len() >= MIN_SIGMA_SAMPLES {
                    update_sigma_tdist_floored(residuals, self.t_nu, seed, self.sigma_min).unwrap_or(seed)
                } else {
                    seed
                };
                (
                    WeightFunction::TDistribution {
                        nu: self.t_nu,
                        sigma,
                    },
                    sigma,
                )
            }
        }
    }
}

/// Median of a slice (mean of the middle pair for even lengths). `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    let n = v.len();
    let (_, hi, _) = v.select_nth_unstable_by(n / 2, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        return Some(hi);
    }
    let lo = v[..n / 2].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Some(0.5 * (lo + hi))
}

/// `1.4826 * median(|r - median(r)|)`, zero for empty input.
pub fn mad_sigma(residuals: &[f64]) -> f64 {
    let Some(m) = median(residuals) else {
        return 0.0;
    };
    let dev: Vec<f64> = residuals.iter().map(|r| (r - m).abs()).collect();
    MAD_SCALE * median(&dev).unwrap_or(0.0)
}

pub const MIN_SIGMA_SAMPLES: usize = 10;

/// Fixed-point scale estimate of a zero-mean t-distribution with known `nu`.
pub fn update_sigma_tdist(residuals: &[f64], nu: f64, sigma_init: f64) -> Result<f64> {
    update_sigma_tdist_floored(residuals, nu, sigma_init, SIGMA_MIN)
}

pub fn update_sigma_tdist_floored(residuals: &[f64], nu: f64, sigma_init: f64, sigma_min: f64) -> Result<f64> {
    if residuals.len() < MIN_SIGMA_SAMPLES {
        return Err(Error::InsufficientData {
            found: residuals.len(),
            required: MIN_SIGMA_SAMPLES,
        });
    }
    if !(nu > 0.0) {
        return Err(Error::invalid("t_nu", format!("must be positive, got {nu}")));
    }
    if !(sigma_init > 0.0) {
        return Err(Error::invalid("t_sigma", format!("must be positive, got {sigma_init}")));
    }
    if residuals.iter().all(|r| *r == 0.0) {
        return Ok(sigma_min);
    }
    let n = residuals.len() as f64;
    let mut var = sigma_init * sigma_init;
    for _ in 0..SIGMA_MAX_ITERS {
        let next = residuals
            .iter()
            .map(|r| {
                let r2 = r * r;
                r2 * (nu + 1.0) / (nu + r2 / var)
            })
            .sum::<f64>()
            / n;
        let next = next.max(sigma_min * sigma_min);
        let rel = (next.sqrt() - var.sqrt()).abs() / var.sqrt();
        var = next;
        if rel < SIGMA_REL_TOL {
            break;
        }
    }
    Ok(var.sqrt().max(sigma_min))
}

/// Log-density of a zero-mean Student-t with scale `sigma`.
pub fn t_log_pdf(r: f64, nu: f64, sigma: f64) -> f64 {
    t_log_norm(nu, sigma) - 0.5 * (nu + 1.0) * (r * r / (nu * sigma * sigma)).ln_1p()
}

fn t_log_norm(nu: f64, sigma: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * std::f64::consts::PI).ln() - sigma.ln()
}

pub fn t_log_likelihood(residuals: &[f64], nu: f64, sigma: f64) -> f64 {
    let k = nu * sigma * sigma;
    let tail: f64 = residuals.iter().map(|r| (r * r / k).ln_1p()).sum();
    residuals.len() as f64 * t_log_norm(nu, sigma) - 0.5 * (nu + 1.0) * tail
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModelFit {
    pub nu0: f64,
    pub sigma0: f64,
    pub sample_count: usize,
    pub log_likelihood: f64,
}

pub const MIN_FIT_SAMPLES: usize = 1000;

/// Maximum-likelihood zero-mean t fit by coordinate ascent over `(sigma, nu)`.
pub fn fit_sensor_model(residuals: &[f64]) -> Result<SensorModelFit> {
    if residuals.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData {
            found: residuals.len(),
            required: MIN_FIT_SAMPLES,
        });
    }
    fit_t(residuals)
}

fn fit_t(residuals: &[f64]) -> Result<SensorModelFit> {
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("residuals", "non-finite value"));
    }
    let mut sigma = mad_sigma(residuals).max(SIGMA_MIN);
    let mut nu = 5.0;
    let mut ll = t_log_likelihood(residuals, nu, sigma);
    for _ in 0..100 {
        sigma = update_sigma_tdist(residuals, nu, sigma)?;
        nu = golden_section_max(|n| t_log_likelihood(residuals, n, sigma), NU_RANGE.0, NU_RANGE.1, 1e-6);
        let next = t_log_likelihood(residuals, nu, sigma);
        let done = (next - ll).abs() <= 1e-10 * next.abs().max(1.0);
        ll = next;
        if done {
            break;
        }
    }
    Ok(SensorModelFit {
        nu0: nu,
        sigma0: sigma,
        sample_count: residuals.len(),
        log_likelihood: ll,
    })
}

/// Maximizer of a unimodal `f` on `[lo, hi]`.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    while hi - lo > tol * (1.0 + lo.abs()) {
        if fa >= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseModel {
    Gaussian,
    Laplace,
    Cauchy,
    StudentT,
}

impl NoiseModel {
    pub fn name(self) -> &'static str {
        match self {
            NoiseModel::Gaussian => "gaussian",
            NoiseModel::Laplace => "laplace",
            NoiseModel::Cauchy => "cauchy",
            NoiseModel::StudentT => "t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelScore {
    pub model: NoiseModel,
    /// Scale parameter (std, b, gamma or sigma).
    pub scale: f64,
    /// Degrees of freedom for the t model.
    pub nu: Option<f64>,
    /// Mean held-out log-likelihood per sample.
    pub heldout_log_likelihood: f64,
}

/// Fits each model on the even-indexed residuals and ranks them by the
/// mean log-likelihood of the odd-indexed ones, best first.
pub fn compare_model_likelihoods(residuals: &[f64]) -> Result<Vec<ModelScore>> {
    const MIN: usize = 2 * MIN_SIGMA_SAMPLES;
    if residuals.len() < MIN {
        return Err(Error::InsufficientData {
            found: residuals.len(),
            required: MIN,
        });
    }
    let train: Vec<f64> = residuals.iter().step_by(2).copied().collect();
    let test: Vec<f64> = residuals.iter().skip(1).step_by(2).copied().collect();
    let n_test = test.len() as f64;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();

    let std = (train.iter().map(|r| r * r).sum::<f64>() / train.len() as f64).sqrt().max(SIGMA_MIN);
    let gauss = test
        .iter()
        .map(|r| -0.5 * ln2pi - std.ln() - 0.5 * (r / std).powi(2))
        .sum::<f64>();

    let b = (train.iter().map(|r| r.abs()).sum::<f64>() / train.len() as f64).max(SIGMA_MIN);
    let laplace = test.iter().map(|r| -(2.0 * b).ln() - r.abs() / b).sum::<f64>();

    let gamma = cauchy_scale(&train);
    let cauchy = test
        .iter()
        .map(|r| -(std::f64::consts::PI * gamma).ln() - (r / gamma).powi(2).ln_1p())
        .sum::<f64>();

    let t = fit_t(&train)?;
    let t_ll = t_log_likelihood(&test, t.nu0, t.sigma0);

    let mut scores = vec![
        ModelScore {
            model: NoiseModel::Gaussian,
            scale: std,
            nu: None,
            heldout_log_likelihood: gauss / n_test,
        },
        ModelScore {
            model: NoiseModel::Laplace,
            scale: b,
            nu: None,
            heldout_log_likelihood: laplace / n_test,
        },
        ModelScore {
            model: NoiseModel::Cauchy,
            scale: gamma,
            nu: None,
            heldout_log_likelihood: cauchy / n_test,
        },
        ModelScore {
            model: NoiseModel::StudentT,
            scale: t.sigma0,
            nu: Some(t.nu0),
            heldout_log_likelihood: t_ll / n_test,
        },
    ];
    scores.sort_by(|a, b| b.heldout_log_likelihood.total_cmp(&a.heldout_log_likelihood));
    Ok(scores)
}

/// ML scale of a zero-centered Cauchy: solves `sum g^2 / (g^2 + r^2) = n / 2`.
fn cauchy_scale(r: &[f64]) -> f64 {
    let half = r.len() as f64 / 2.0;
    let lhs = |g: f64| r.iter().map(|x| g * g / (g * g + x * x)).sum::<f64>();
    let max_abs = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let (mut lo, mut hi) = (SIGMA_MIN.ln(), (max_abs.max(SIGMA_MIN) * 10.0).ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if lhs(mid.exp()) < half {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}
