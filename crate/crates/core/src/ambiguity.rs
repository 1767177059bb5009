//! Batch evaluation of delay-Doppler inner products against a reference
//! vector.
//!
//! For a reference `v` (a noiseless mean or an observation), the inner
//! product with the model vector factorizes through the per-symbol DFT:
//!
//! ```text
//! v^H q(tau, nu) = sum_{n,m} G[n,m] exp(-j 2 pi n df tau) exp(+j 2 pi fc m Tsym nu)
//! G[n,m] = conj([F_N v][n,m]) * X[n,m]
//! ```
//!
//! so one FFT pass over `v` turns every subsequent objective evaluation
//! into a phase-weighted sum — exact (it IS `v^H q`), with no per-point
//! re-synthesis.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::frame::{ModelError, OfdmConfig, SignalVector, SymbolGrid};

/// Unitary per-symbol forward DFT of a frame vector, returned as the
/// `N x M` fast-time/slow-time matrix.
pub fn per_symbol_forward_dft(cfg: &OfdmConfig, v: &SignalVector) -> DMatrix<Complex64> {
    let (n, m) = (cfg.num_subcarriers, cfg.num_symbols);
    let fft = FftPlanner::new().plan_fft_forward(n);
    let scale = 1.0 / (n as f64).sqrt();
    let mut out = DMatrix::zeros(n, m);
    let mut col = vec![Complex64::default(); n];
    for j in 0..m {
        for i in 0..n {
            col[i] = v[j * n + i];
        }
        fft.process(&mut col);
        for i in 0..n {
            out[(i, j)] = col[i] * scale;
        }
    }
    out
}

/// Exact evaluator of `|v^H q(tau, nu)|^2` for a fixed reference `v`.
#[derive(Debug, Clone)]
pub struct DelayDopplerObjective {
    g: DMatrix<Complex64>,
    delay_rate: f64,
    doppler_rate: f64,
}

impl DelayDopplerObjective {
    pub fn new(
        cfg: &OfdmConfig,
        symbols: &SymbolGrid,
        reference: &SignalVector,
    ) -> Result<Self, ModelError> {
        let (n, m) = (cfg.num_subcarriers, cfg.num_symbols);
        if reference.len() != n * m {
            return Err(ModelError::DimensionMismatch {
                got_rows: reference.len(),
                got_cols: 1,
                rows: n * m,
                cols: 1,
            });
        }
        let spectrum = per_symbol_forward_dft(cfg, reference);
        let mut g = DMatrix::zeros(n, m);
        for j in 0..m {
            for i in 0..n {
                g[(i, j)] = spectrum[(i, j)].conj() * symbols.entries()[(i, j)];
            }
        }
        Ok(Self {
            g,
            delay_rate: 2.0 * std::f64::consts::PI * cfg.subcarrier_spacing_hz,
            doppler_rate: 2.0
                * std::f64::consts::PI
                * cfg.carrier_freq_hz
                * cfg.total_symbol_duration_s(),
        })
    }

    /// The inner product `v^H q(tau, nu)` itself.
    pub fn inner(&self, delay_s: f64, normalized_doppler: f64) -> Complex64 {
        let (n, m) = (self.g.nrows(), self.g.ncols());
        let mut acc = Complex64::default();
        for j in 0..m {
            let col_phase =
                Complex64::from_polar(1.0, self.doppler_rate * j as f64 * normalized_doppler);
            let mut col_acc = Complex64::default();
            for i in 0..n {
                let row_phase = Complex64::from_polar(1.0, -self.delay_rate * i as f64 * delay_s);
                col_acc += self.g[(i, j)] * row_phase;
            }
            acc += col_acc * col_phase;
        }
        acc
    }

    /// The objective `|v^H q(tau, nu)|^2`.
    pub fn eval(&self, delay_s: f64, normalized_doppler: f64) -> f64 {
        self.inner(delay_s, normalized_doppler).norm_sqr()
    }
}
