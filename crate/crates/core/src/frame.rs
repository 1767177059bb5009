//! Discrete fast-time/slow-time OFDM radar observation model.
//!
//! An OFDM frame of `M` symbols and `N` subcarriers observed by a monostatic
//! radar receiver is represented as an `N x M` matrix, vectorized
//! column-major (fast-time index varies fastest). The noiseless target
//! return is
//!
//! ```text
//! q(tau, nu) = vec( F_N^H [ X (.) b(tau) c^H(nu) ] )
//! ```
//!
//! with a unitary inverse DFT per symbol, the delay steering vector `b`
//! across subcarriers and the Doppler steering vector `c` across symbols.
//! Observations add a multiplicative phase-noise term `exp(-j xi)` per
//! sample and circular complex Gaussian noise with per-entry variance
//! `2 sigma^2`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::phase_noise::PnRealization;
use crate::SPEED_OF_LIGHT;

/// Complex baseband samples of one frame, vectorized column-major over the
/// fast-time/slow-time matrix (entry `i = n + m N`).
pub type SignalVector = DVector<Complex64>;

/// Violations of the observation-model assumptions or of type invariants.
///
/// Model-assumption violations are hard errors rather than warnings so that
/// every bound is computed inside the validity region of the discrete model.
#[derive(Debug, Clone, Error)]
pub enum ModelError {
    #[error("symbol grid is {got_rows}x{got_cols}, frame needs {rows}x{cols}")]
    DimensionMismatch {
        got_rows: usize,
        got_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must be finite, got {value}")]
    NotFinite { name: &'static str, value: f64 },
    #[error("target delay {delay_s:.6e} s exceeds cyclic prefix duration {cp_s:.6e} s")]
    DelayExceedsCp { delay_s: f64, cp_s: f64 },
    #[error("normalized Doppler magnitude {doppler:.6e} is not below 1/N = {limit:.6e}")]
    DopplerTooLarge { doppler: f64, limit: f64 },
    #[error("narrowband assumption violated: fc*T*|nu| = {product:.3e} (must stay below 0.1)")]
    NarrowbandViolated { product: f64 },
    #[error("negative target delay {delay_s:.6e} s")]
    NegativeDelay { delay_s: f64 },
    #[error("phase-noise realization has {got} samples, frame needs {expected}")]
    PnLengthMismatch { got: usize, expected: usize },
}

/// Carrier/bandwidth/subcarrier/symbol geometry of one OFDM frame.
#[derive(Debug, Clone, PartialEq)]
pub struct OfdmConfig {
    /// Carrier frequency fc (Hz).
    pub carrier_freq_hz: f64,
    /// Subcarrier spacing (Hz).
    pub subcarrier_spacing_hz: f64,
    /// Number of subcarriers N.
    pub num_subcarriers: usize,
    /// Number of symbols M.
    pub num_symbols: usize,
    /// Cyclic prefix duration (s).
    pub cp_duration_s: f64,
}

impl OfdmConfig {
    pub fn new(
        carrier_freq_hz: f64,
        subcarrier_spacing_hz: f64,
        num_subcarriers: usize,
        num_symbols: usize,
        cp_duration_s: f64,
    ) -> Result<Self, ModelError> {
        for (name, value) in [
            ("carrier_freq_hz", carrier_freq_hz),
            ("subcarrier_spacing_hz", subcarrier_spacing_hz),
            ("cp_duration_s", cp_duration_s),
            ("num_subcarriers", num_subcarriers as f64),
            ("num_symbols", num_symbols as f64),
        ] {
            if !value.is_finite() {
                return Err(ModelError::NotFinite { name, value });
            }
            if value <= 0.0 {
                return Err(ModelError::NonPositive { name, value });
            }
        }
        Ok(Self {
            carrier_freq_hz,
            subcarrier_spacing_hz,
            num_subcarriers,
            num_symbols,
            cp_duration_s,
        })
    }

    /// 5G NR FR2-style default frame: fc = 28 GHz, 120 kHz spacing,
    /// 256 subcarriers, 10 symbols, 0.58 us cyclic prefix.
    pub fn nr_fr2_default() -> Self {
        Self::new(28.0e9, 120.0e3, 256, 10, 0.58e-6).expect("default config is valid")
    }

    /// Same geometry scaled down to `n` subcarriers and `m` symbols.
    pub fn nr_fr2_scaled(n: usize, m: usize) -> Self {
        let full = Self::nr_fr2_default();
        Self::new(
            full.carrier_freq_hz,
            full.subcarrier_spacing_hz,
            n,
            m,
            full.cp_duration_s,
        )
        .expect("scaled config is valid")
    }

    /// Elementary symbol duration T = 1/spacing (s).
    pub fn elementary_duration_s(&self) -> f64 {
        1.0 / self.subcarrier_spacing_hz
    }

    /// Total symbol duration including the cyclic prefix (s).
    pub fn total_symbol_duration_s(&self) -> f64 {
        self.cp_duration_s + self.elementary_duration_s()
    }

    /// Sample interval T/N (s).
    pub fn sample_interval_s(&self) -> f64 {
        self.elementary_duration_s() / self.num_subcarriers as f64
    }

    /// Total bandwidth N * spacing (Hz).
    pub fn bandwidth_hz(&self) -> f64 {
        self.num_subcarriers as f64 * self.subcarrier_spacing_hz
    }

    /// Samples per frame, N * M.
    pub fn samples_per_frame(&self) -> usize {
        self.num_subcarriers * self.num_symbols
    }
}

/// Data symbols of one frame, one entry per subcarrier per symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolGrid {
    entries: DMatrix<Complex64>,
}

impl SymbolGrid {
    /// Wraps a caller-provided grid; any unit-modulus alphabet works with
    /// the bounds and the reciprocal-filtering estimator.
    pub fn from_entries(cfg: &OfdmConfig, entries: DMatrix<Complex64>) -> Result<Self, ModelError> {
        if entries.nrows() != cfg.num_subcarriers || entries.ncols() != cfg.num_symbols {
            return Err(ModelError::DimensionMismatch {
                got_rows: entries.nrows(),
                got_cols: entries.ncols(),
                rows: cfg.num_subcarriers,
                cols: cfg.num_symbols,
            });
        }
        Ok(Self { entries })
    }

    /// Draws QPSK symbols (+-1 +-j)/sqrt(2) from a seeded stream,
    /// column-major so regeneration is bit-identical.
    pub fn qpsk(cfg: &OfdmConfig, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let entries = DMatrix::from_fn(cfg.num_subcarriers, cfg.num_symbols, |_, _| {
            let re = if rng.gen::<bool>() { s } else { -s };
            let im = if rng.gen::<bool>() { s } else { -s };
            Complex64::new(re, im)
        });
        Self { entries }
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    /// Squared Frobenius norm of the grid; equals `||q(tau,nu)||^2` for
    /// every delay/Doppler pair.
    pub fn frobenius_sq(&self) -> f64 {
        self.entries.iter().map(|x| x.norm_sqr()).sum()
    }
}

/// True target parameters: round-trip delay, normalized Doppler and
/// complex channel gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetTruth {
    /// Round-trip delay tau = 2R/c (s).
    pub delay_s: f64,
    /// Normalized Doppler nu = 2v/c (dimensionless).
    pub normalized_doppler: f64,
    /// Complex channel gain.
    pub gain: Complex64,
}

impl TargetTruth {
    pub fn new(delay_s: f64, normalized_doppler: f64, gain: Complex64) -> Result<Self, ModelError> {
        if delay_s < 0.0 {
            return Err(ModelError::NegativeDelay { delay_s });
        }
        if normalized_doppler.abs() >= 1.0 {
            return Err(ModelError::DopplerTooLarge {
                doppler: normalized_doppler.abs(),
                limit: 1.0,
            });
        }
        Ok(Self {
            delay_s,
            normalized_doppler,
            gain,
        })
    }

    /// Builds the truth from range (m) and radial velocity (m/s).
    pub fn from_range_velocity(
        range_m: f64,
        velocity_mps: f64,
        gain: Complex64,
    ) -> Result<Self, ModelError> {
        Self::new(
            2.0 * range_m / SPEED_OF_LIGHT,
            2.0 * velocity_mps / SPEED_OF_LIGHT,
            gain,
        )
    }

    pub fn range_m(&self) -> f64 {
        self.delay_s * SPEED_OF_LIGHT / 2.0
    }

    pub fn velocity_mps(&self) -> f64 {
        self.normalized_doppler * SPEED_OF_LIGHT / 2.0
    }
}

/// Additive sensor noise level.
///
/// `sigma_sq` is the per-real-dimension variance; each complex sample has
/// variance `2 sigma^2`, so SNR = |alpha|^2 / (2 sigma^2). A zero value is
/// accepted for the noiseless limiting case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma_sq: f64,
}

impl NoiseModel {
    pub fn new(sigma_sq: f64) -> Result<Self, ModelError> {
        if !sigma_sq.is_finite() {
            return Err(ModelError::NotFinite {
                name: "sigma_sq",
                value: sigma_sq,
            });
        }
        if sigma_sq < 0.0 {
            return Err(ModelError::NonPositive {
                name: "sigma_sq",
                value: sigma_sq,
            });
        }
        Ok(Self { sigma_sq })
    }

    /// Noise level realizing a given linear SNR for a given gain.
    pub fn from_snr(snr_linear: f64, gain: Complex64) -> Result<Self, ModelError> {
        Ok(Self {
            sigma_sq: snr_to_sigma_sq(snr_linear, gain)?,
        })
    }

    pub fn from_snr_db(snr_db: f64, gain: Complex64) -> Result<Self, ModelError> {
        Self::from_snr(10f64.powf(snr_db / 10.0), gain)
    }
}

/// Per-real-dimension noise variance realizing `SNR = |gain|^2/(2 sigma^2)`.
pub fn snr_to_sigma_sq(snr_linear: f64, gain: Complex64) -> Result<f64, ModelError> {
    if !snr_linear.is_finite() || snr_linear <= 0.0 {
        return Err(ModelError::NonPositive {
            name: "snr_linear",
            value: snr_linear,
        });
    }
    Ok(gain.norm_sqr() / (2.0 * snr_linear))
}

/// Frequency-domain delay steering vector, entry `n = exp(-j 2 pi n df tau)`.
pub fn delay_steering(cfg: &OfdmConfig, delay_s: f64) -> DVector<Complex64> {
    steering_with_slope(cfg, delay_s, 0)
}

/// Slow-time Doppler steering vector, entry `m = exp(-j 2 pi fc m Tsym nu)`.
///
/// The observation model applies this vector conjugated, so the received
/// signal carries the +j phase progression.
pub fn doppler_steering(cfg: &OfdmConfig, normalized_doppler: f64) -> DVector<Complex64> {
    let w = 2.0
        * std::f64::consts::PI
        * cfg.carrier_freq_hz
        * cfg.total_symbol_duration_s()
        * normalized_doppler;
    DVector::from_fn(cfg.num_symbols, |m, _| {
        Complex64::from_polar(1.0, -w * m as f64)
    })
}

/// Delay steering with the phase-slope factor `(-j 2 pi n df)^power` folded
/// in; power 0 is the plain steering vector.
fn steering_with_slope(cfg: &OfdmConfig, delay_s: f64, power: u32) -> DVector<Complex64> {
    let w = 2.0 * std::f64::consts::PI * cfg.subcarrier_spacing_hz;
    DVector::from_fn(cfg.num_subcarriers, |n, _| {
        let slope = Complex64::new(0.0, -w * n as f64).powu(power);
        slope * Complex64::from_polar(1.0, -w * n as f64 * delay_s)
    })
}

/// Conjugated Doppler steering (the factor actually present in the model)
/// with the slope `(+j 2 pi fc m Tsym)^power` folded in.
fn doppler_conj_with_slope(
    cfg: &OfdmConfig,
    normalized_doppler: f64,
    power: u32,
) -> DVector<Complex64> {
    let w = 2.0 * std::f64::consts::PI * cfg.carrier_freq_hz * cfg.total_symbol_duration_s();
    DVector::from_fn(cfg.num_symbols, |m, _| {
        let slope = Complex64::new(0.0, w * m as f64).powu(power);
        slope * Complex64::from_polar(1.0, w * m as f64 * normalized_doppler)
    })
}

/// Synthesizes `q` or one of its delay/Doppler partial derivatives; the
/// derivative order per axis is the power applied to the phase slopes.
fn synth(
    cfg: &OfdmConfig,
    symbols: &SymbolGrid,
    delay_s: f64,
    normalized_doppler: f64,
    delay_power: u32,
    doppler_power: u32,
) -> Result<SignalVector, ModelError> {
    let (n, m) = (cfg.num_subcarriers, cfg.num_symbols);
    if symbols.entries.nrows() != n || symbols.entries.ncols() != m {
        return Err(ModelError::DimensionMismatch {
            got_rows: symbols.entries.nrows(),
            got_cols: symbols.entries.ncols(),
            rows: n,
            cols: m,
        });
    }
    let b = steering_with_slope(cfg, delay_s, delay_power);
    let c_conj = doppler_conj_with_slope(cfg, normalized_doppler, doppler_power);
    let fft = FftPlanner::new().plan_fft_inverse(n);
    let scale = 1.0 / (n as f64).sqrt();

    let mut out = DVector::zeros(n * m);
    let mut col = vec![Complex64::default(); n];
    for j in 0..m {
        for i in 0..n {
            col[i] = symbols.entries[(i, j)] * b[i];
        }
        fft.process(&mut col);
        for i in 0..n {
            out[j * n + i] = col[i] * scale * c_conj[j];
        }
    }
    Ok(out)
}

/// Noiseless unit-gain target return `q(tau, nu)`, synthesized with one
/// length-N inverse FFT per symbol (unitary 1/sqrt(N) scaling).
pub fn synthesize_q(
    cfg: &OfdmConfig,
    symbols: &SymbolGrid,
    delay_s: f64,
    normalized_doppler: f64,
) -> Result<SignalVector, ModelError> {
    synth(cfg, symbols, delay_s, normalized_doppler, 0, 0)
}

/// Which derivatives of `q` to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeOrder {
    First,
    Second,
}

/// Analytic partial derivatives of `q(tau, nu)`.
#[derive(Debug, Clone)]
pub struct QDerivatives {
    pub d_delay: SignalVector,
    pub d_doppler: SignalVector,
    pub second: Option<QSecondDerivatives>,
}

#[derive(Debug, Clone)]
pub struct QSecondDerivatives {
    pub d2_delay: SignalVector,
    pub d2_doppler: SignalVector,
    pub d_delay_doppler: SignalVector,
}

/// Analytic first (and optionally second) derivatives of `q` with respect
/// to delay and normalized Doppler.
pub fn q_derivatives(
    cfg: &OfdmConfig,
    symbols: &SymbolGrid,
    delay_s: f64,
    normalized_doppler: f64,
    order: DerivativeOrder,
) -> Result<QDerivatives, ModelError> {
    let d_delay = synth(cfg, symbols, delay_s, normalized_doppler, 1, 0)?;
    let d_doppler = synth(cfg, symbols, delay_s, normalized_doppler, 0, 1)?;
    let second = match order {
        DerivativeOrder::First => None,
        DerivativeOrder::Second => Some(QSecondDerivatives {
            d2_delay: synth(cfg, symbols, delay_s, normalized_doppler, 2, 0)?,
            d2_doppler: synth(cfg, symbols, delay_s, normalized_doppler, 0, 2)?,
            d_delay_doppler: synth(cfg, symbols, delay_s, normalized_doppler, 1, 1)?,
        }),
    };
    Ok(QDerivatives {
        d_delay,
        d_doppler,
        second,
    })
}

/// Checks the discrete-model validity assumptions for a target.
pub fn validate_target(cfg: &OfdmConfig, truth: &TargetTruth) -> Result<(), ModelError> {
    if truth.delay_s > cfg.cp_duration_s {
        return Err(ModelError::DelayExceedsCp {
            delay_s: truth.delay_s,
            cp_s: cfg.cp_duration_s,
        });
    }
    let limit = 1.0 / cfg.num_subcarriers as f64;
    if truth.normalized_doppler.abs() >= limit {
        return Err(ModelError::DopplerTooLarge {
            doppler: truth.normalized_doppler.abs(),
            limit,
        });
    }
    let product =
        cfg.carrier_freq_hz * cfg.elementary_duration_s() * truth.normalized_doppler.abs();
    if product >= 0.1 {
        return Err(ModelError::NarrowbandViolated { product });
    }
    Ok(())
}

/// Synthesizes one observation `y = alpha diag(exp(-j xi)) q + z`.
///
/// `pn = None` gives the PN-free model. Noise entries are circular complex
/// Gaussian with per-entry variance `2 sigma^2`, drawn in sample order from
/// the seeded stream, so equal seeds give bit-identical noise.
pub fn synthesize_observation(
    cfg: &OfdmConfig,
    symbols: &SymbolGrid,
    truth: &TargetTruth,
    noise: &NoiseModel,
    pn: Option<&PnRealization>,
    rng_seed: u64,
) -> Result<SignalVector, ModelError> {
    validate_target(cfg, truth)?;
    let nm = cfg.samples_per_frame();
    let mut y = synthesize_q(cfg, symbols, truth.delay_s, truth.normalized_doppler)?;
    y *= truth.gain;
    if let Some(real) = pn {
        if real.xi.len() != nm {
            return Err(ModelError::PnLengthMismatch {
                got: real.xi.len(),
                expected: nm,
            });
        }
        for (entry, &xi) in y.iter_mut().zip(real.xi.iter()) {
            *entry *= Complex64::from_polar(1.0, -xi);
        }
    }
    if noise.sigma_sq > 0.0 {
        let sigma = noise.sigma_sq.sqrt();
        let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
        for entry in y.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *entry += Complex64::new(sigma * re, sigma * im);
        }
    }
    Ok(y)
}
