//! Oscillator phase-noise statistics and sample generation.
//!
//! A monostatic receiver downconverting with the same oscillator that
//! transmitted sees the differential PN process `xi(t, tau) = phi(t) -
//! phi(t - tau)`, a stationary Gaussian process whose variance depends on
//! the round-trip delay (range correlation effect). Two oscillator types
//! are modeled:
//!
//! * FRO — free-running oscillator, `phi` is a Wiener process; the
//!   differential variance grows linearly, `4 pi f3dB |tau|`.
//! * PLL — phase-locked loop, `phi` is a stationary Gauss-Markov process
//!   with variance `f3dB/floop` and decay rate `2 pi floop`; the
//!   differential variance saturates at `2 f3dB/floop`.
//!
//! The module exposes the variance, its delay derivative, the correlation
//! function, the `NM x NM` covariance matrix over the frame sample grid and
//! its delay derivative, plus two samplers: an exact joint-time-grid path
//! sampler (primary) and a covariance-factor sampler kept as an oracle.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::frame::OfdmConfig;

/// Relative diagonal-jitter ladder tried when a covariance factorization
/// fails; each value multiplies the diagonal level `sigma_xi^2(tau)`.
pub const JITTER_LADDER: [f64; 3] = [1e-12, 1e-10, 1e-8];

#[derive(Debug, Clone, Error)]
pub enum PnError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("variance derivative is undefined at lag 0 (kink of |tau|)")]
    UndefinedDerivative,
    #[error("covariance entry hits the variance-derivative kink (tau +- dt = 0 at delay {delay_s:.6e} s)")]
    DerivativeKink { delay_s: f64 },
    #[error(
        "covariance not factorizable at delay {delay_s:.6e} s even with jitter {max_jitter:.1e}"
    )]
    DegenerateCovariance { delay_s: f64, max_jitter: f64 },
    #[error("negative delay {delay_s:.6e} s")]
    NegativeDelay { delay_s: f64 },
}

/// Oscillator architecture with its spectral parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OscillatorModel {
    /// Free-running oscillator with the 3-dB bandwidth of its Lorentzian
    /// spectrum.
    Fro { f3db_hz: f64 },
    /// Phase-locked loop: Lorentzian 3-dB bandwidth plus loop bandwidth.
    Pll { f3db_hz: f64, floop_hz: f64 },
}

impl OscillatorModel {
    pub fn fro(f3db_hz: f64) -> Result<Self, PnError> {
        if f3db_hz <= 0.0 {
            return Err(PnError::NonPositive {
                name: "f3db_hz",
                value: f3db_hz,
            });
        }
        Ok(Self::Fro { f3db_hz })
    }

    pub fn pll(f3db_hz: f64, floop_hz: f64) -> Result<Self, PnError> {
        if f3db_hz <= 0.0 {
            return Err(PnError::NonPositive {
                name: "f3db_hz",
                value: f3db_hz,
            });
        }
        if floop_hz <= 0.0 {
            return Err(PnError::NonPositive {
                name: "floop_hz",
                value: floop_hz,
            });
        }
        Ok(Self::Pll { f3db_hz, floop_hz })
    }

    pub fn f3db_hz(&self) -> f64 {
        match self {
            Self::Fro { f3db_hz } | Self::Pll { f3db_hz, .. } => *f3db_hz,
        }
    }

    /// Same architecture with the PN variance scaled by `factor`
    /// (equivalently f3dB scaled); used for zero-PN limiting tests.
    pub fn with_variance_scaled(&self, factor: f64) -> Self {
        match *self {
            Self::Fro { f3db_hz } => Self::Fro {
                f3db_hz: f3db_hz * factor,
            },
            Self::Pll { f3db_hz, floop_hz } => Self::Pll {
                f3db_hz: f3db_hz * factor,
                floop_hz,
            },
        }
    }
}

/// Variance of the differential PN at a given lag (rad^2); even in the lag.
pub fn pn_variance(osc: &OscillatorModel, lag_s: f64) -> f64 {
    let a = lag_s.abs();
    match *osc {
        OscillatorModel::Fro { f3db_hz } => 4.0 * std::f64::consts::PI * f3db_hz * a,
        OscillatorModel::Pll { f3db_hz, floop_hz } => {
            2.0 * f3db_hz / floop_hz * (1.0 - (-2.0 * std::f64::consts::PI * floop_hz * a).exp())
        }
    }
}

/// Derivative of [`pn_variance`] with respect to the lag (rad^2/s).
///
/// Undefined at lag 0 (the |tau| kink); callers must stay off that point.
pub fn pn_variance_deriv(osc: &OscillatorModel, lag_s: f64) -> Result<f64, PnError> {
    if lag_s == 0.0 {
        return Err(PnError::UndefinedDerivative);
    }
    let sign = lag_s.signum();
    Ok(match *osc {
        OscillatorModel::Fro { f3db_hz } => 4.0 * std::f64::consts::PI * f3db_hz * sign,
        OscillatorModel::Pll { f3db_hz, floop_hz } => {
            4.0 * std::f64::consts::PI
                * f3db_hz
                * (-2.0 * std::f64::consts::PI * floop_hz * lag_s.abs()).exp()
                * sign
        }
    })
}

/// Correlation function of the differential PN process:
/// `[var(tau+dt) + var(tau-dt)]/2 - var(dt)`; even in `dt`.
///
/// For the FRO the expression telescopes to a triangular kernel, evaluated
/// in that closed form so the cancellation beyond the delay lag is exact.
pub fn pn_correlation(osc: &OscillatorModel, delta_t_s: f64, delay_s: f64) -> f64 {
    match *osc {
        OscillatorModel::Fro { f3db_hz } => {
            4.0 * std::f64::consts::PI * f3db_hz * (delay_s.abs() - delta_t_s.abs()).max(0.0)
        }
        OscillatorModel::Pll { .. } => {
            0.5 * (pn_variance(osc, delay_s + delta_t_s) + pn_variance(osc, delay_s - delta_t_s))
                - pn_variance(osc, delta_t_s)
        }
    }
}

/// Frame sample instants: entry `i = n + m N` sits at `i Ts + m Tcp`, so
/// pairwise differences reproduce `(i1-i2) Ts + (m1-m2) Tcp`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTimeGrid {
    times_s: Vec<f64>,
    samples_per_symbol: usize,
}

impl SampleTimeGrid {
    pub fn from_config(cfg: &OfdmConfig) -> Self {
        let ts = cfg.sample_interval_s();
        let tcp = cfg.cp_duration_s;
        let n = cfg.num_subcarriers;
        let times_s = (0..cfg.samples_per_frame())
            .map(|i| i as f64 * ts + (i / n) as f64 * tcp)
            .collect();
        Self {
            times_s,
            samples_per_symbol: n,
        }
    }

    pub fn times_s(&self) -> &[f64] {
        &self.times_s
    }

    pub fn len(&self) -> usize {
        self.times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_s.is_empty()
    }
}

/// Delay-dependent covariance matrix of the differential PN over one frame.
#[derive(Debug, Clone)]
pub struct PnCovariance {
    matrix: DMatrix<f64>,
    delay_s: f64,
    jitter_used: f64,
    factor: Option<Cholesky<f64, Dyn>>,
}

impl PnCovariance {
    /// Covariance entries (after any jitter applied to make the matrix
    /// factorizable).
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn delay_s(&self) -> f64 {
        self.delay_s
    }

    /// Relative diagonal jitter actually applied (0 if none was needed).
    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// Cholesky factor; `None` only for the identically-zero matrix
    /// (zero delay).
    pub fn factor(&self) -> Option<&Cholesky<f64, Dyn>> {
        self.factor.as_ref()
    }
}

/// Jitter handling for covariance factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JitterPolicy {
    /// Try the jitter ladder until a factorization succeeds.
    Ladder,
    /// Fail immediately if the bare matrix does not factorize.
    Forbid,
}

/// Builds `R(tau)` over the frame grid and ensures it is factorizable,
/// applying the smallest ladder jitter that succeeds (recorded in the
/// output).
pub fn build_covariance(
    osc: &OscillatorModel,
    grid: &SampleTimeGrid,
    delay_s: f64,
    jitter_policy: JitterPolicy,
) -> Result<PnCovariance, PnError> {
    if delay_s < 0.0 {
        return Err(PnError::NegativeDelay { delay_s });
    }
    let t = grid.times_s();
    let nm = t.len();
    let mut matrix = DMatrix::zeros(nm, nm);
    for i in 0..nm {
        for j in 0..=i {
            let v = pn_correlation(osc, t[i] - t[j], delay_s);
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    let diag = pn_variance(osc, delay_s);
    if diag == 0.0 {
        // Zero delay: the differential process is identically zero.
        return Ok(PnCovariance {
            matrix,
            delay_s,
            jitter_used: 0.0,
            factor: None,
        });
    }
    if let Some(factor) = Cholesky::new(matrix.clone()) {
        return Ok(PnCovariance {
            matrix,
            delay_s,
            jitter_used: 0.0,
            factor: Some(factor),
        });
    }
    if jitter_policy == JitterPolicy::Forbid {
        return Err(PnError::DegenerateCovariance {
            delay_s,
            max_jitter: 0.0,
        });
    }
    for &eps in &JITTER_LADDER {
        let mut jittered = matrix.clone();
        for i in 0..nm {
            jittered[(i, i)] += eps * diag;
        }
        if let Some(factor) = Cholesky::new(jittered.clone()) {
            return Ok(PnCovariance {
                matrix: jittered,
                delay_s,
                jitter_used: eps,
                factor: Some(factor),
            });
        }
    }
    Err(PnError::DegenerateCovariance {
        delay_s,
        max_jitter: *JITTER_LADDER.last().unwrap(),
    })
}

/// Entrywise delay derivative of the covariance,
/// `[var'(tau+dt) + var'(tau-dt)]/2`.
///
/// Errors if any entry lands exactly on the |.|-kink of the variance
/// derivative.
pub fn covariance_delay_deriv(
    osc: &OscillatorModel,
    grid: &SampleTimeGrid,
    delay_s: f64,
) -> Result<DMatrix<f64>, PnError> {
    let t = grid.times_s();
    let nm = t.len();
    let mut out = DMatrix::zeros(nm, nm);
    for i in 0..nm {
        for j in 0..=i {
            let dt = t[i] - t[j];
            if delay_s + dt == 0.0 || delay_s - dt == 0.0 {
                return Err(PnError::DerivativeKink { delay_s });
            }
            let v = 0.5
                * (pn_variance_deriv(osc, delay_s + dt)? + pn_variance_deriv(osc, delay_s - dt)?);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// How a PN realization was generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMethod {
    ExactPath,
    CovarianceFactor,
}

/// One sampled differential-PN vector over a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PnRealization {
    pub xi: DVector<f64>,
    pub seed: u64,
    pub method: SampleMethod,
}

impl PnRealization {
    /// All-zero realization (identity PN matrix); used for collapse tests.
    pub fn zero(len: usize, seed: u64) -> Self {
        Self {
            xi: DVector::zeros(len),
            seed,
            method: SampleMethod::ExactPath,
        }
    }
}

/// Samples the oscillator path `phi` jointly at all frame instants and
/// their delay-shifted copies, then forms `xi_i = phi(t_i) - phi(t_i - tau)`.
///
/// The joint grid is sorted and deduplicated, so the Wiener (FRO) and
/// stationary Gauss-Markov (PLL) recursions are exact: no discretization
/// bias at any delay, including delays off the sample lattice.
pub fn sample_pn_exact(
    osc: &OscillatorModel,
    grid: &SampleTimeGrid,
    delay_s: f64,
    seed: u64,
) -> Result<PnRealization, PnError> {
    if delay_s < 0.0 {
        return Err(PnError::NegativeDelay { delay_s });
    }
    let t = grid.times_s();
    let mut points: Vec<f64> = Vec::with_capacity(2 * t.len());
    points.extend_from_slice(t);
    points.extend(t.iter().map(|&v| v - delay_s));
    points.sort_by(f64::total_cmp);
    points.dedup();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut phi = vec![0.0f64; points.len()];
    match *osc {
        OscillatorModel::Fro { f3db_hz } => {
            let rate = 4.0 * std::f64::consts::PI * f3db_hz;
            for k in 1..points.len() {
                let dt = points[k] - points[k - 1];
                let g: f64 = rng.sample(StandardNormal);
                phi[k] = phi[k - 1] + (rate * dt).sqrt() * g;
            }
        }
        OscillatorModel::Pll { f3db_hz, floop_hz } => {
            let var = f3db_hz / floop_hz;
            let g0: f64 = rng.sample(StandardNormal);
            phi[0] = var.sqrt() * g0;
            for k in 1..points.len() {
                let dt = points[k] - points[k - 1];
                let rho = (-2.0 * std::f64::consts::PI * floop_hz * dt).exp();
                let g: f64 = rng.sample(StandardNormal);
                phi[k] = rho * phi[k - 1] + (var * (1.0 - rho * rho)).sqrt() * g;
            }
        }
    }

    let lookup = |v: f64| -> usize {
        points
            .binary_search_by(|p| p.total_cmp(&v))
            .expect("joint grid contains every frame instant")
    };
    let xi = DVector::from_iterator(
        t.len(),
        t.iter()
            .map(|&ti| phi[lookup(ti)] - phi[lookup(ti - delay_s)]),
    );
    Ok(PnRealization {
        xi,
        seed,
        method: SampleMethod::ExactPath,
    })
}

/// Draws `xi = L g` from the factorized covariance; retained as the
/// cross-validation oracle for the exact-path sampler.
pub fn sample_pn_covariance_factor(
    covariance: &PnCovariance,
    seed: u64,
) -> Result<PnRealization, PnError> {
    let nm = covariance.matrix().nrows();
    let xi = match covariance.factor() {
        None => DVector::zeros(nm),
        Some(chol) => {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let g = DVector::from_fn(nm, |_, _| rng.sample::<f64, _>(StandardNormal));
            chol.l() * g
        }
    };
    Ok(PnRealization {
        xi,
        seed,
        method: SampleMethod::CovarianceFactor,
    })
}
