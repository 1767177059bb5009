//! Deterministic (PN-free) and hybrid Cramér-Rao bounds.
//!
//! Parameters are ordered `[tau, nu, alpha_R, alpha_I]`, extended by the
//! per-sample PN vector `xi` for the hybrid bound. The deterministic FIM
//! follows the Gaussian-mean form `(1/sigma^2) Re{ dmu_i^H dmu_j }`; the
//! hybrid FIM is the sum of an observation block (whose expectation over
//! PN is closed-form because the PN matrix is unitary) and a Gaussian prior
//! block built from the delay-dependent PN covariance.
//!
//! Matrix inversions are never formed explicitly: bounds come from
//! symmetric (Cholesky) solves against the delay and Doppler identity
//! columns.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::frame::{
    q_derivatives, synthesize_q, DerivativeOrder, ModelError, NoiseModel, OfdmConfig, SymbolGrid,
    TargetTruth,
};
use crate::phase_noise::{
    build_covariance, covariance_delay_deriv, JitterPolicy, OscillatorModel, PnError,
    SampleTimeGrid,
};
use crate::SPEED_OF_LIGHT;

/// Index of the delay parameter in every FIM/bound matrix.
pub const IDX_DELAY: usize = 0;
/// Index of the normalized-Doppler parameter.
pub const IDX_DOPPLER: usize = 1;
/// Index of the real part of the gain.
pub const IDX_GAIN_RE: usize = 2;
/// Index of the imaginary part of the gain.
pub const IDX_GAIN_IM: usize = 3;
/// Number of deterministic parameters; PN entries follow from this offset.
pub const DETERMINISTIC_PARAMS: usize = 4;

#[derive(Debug, Clone, Error)]
pub enum BoundError {
    #[error("Fisher information is singular; least-identifiable direction: {direction}")]
    Unidentifiable { direction: String },
    #[error("MCRB curvature matrix A is singular (condition estimate {condition:.3e})")]
    SingularCurvature { condition: f64 },
    #[error("averaging requires at least one realization")]
    EmptyAverage,
    #[error("{excluded} of {total} realizations failed to converge (over the 10% budget)")]
    ExcessiveExclusions { excluded: usize, total: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pn(#[from] PnError),
}

/// A Fisher information matrix over `[tau, nu, alpha_R, alpha_I, (xi...)]`.
#[derive(Debug, Clone)]
pub struct Fim {
    matrix: DMatrix<f64>,
}

impl Fim {
    /// Wraps a symmetric information matrix in the fixed parameter order.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn order(&self) -> usize {
        self.matrix.nrows()
    }

    /// Human-readable name of parameter `index`.
    pub fn parameter_name(index: usize) -> String {
        match index {
            IDX_DELAY => "delay".into(),
            IDX_DOPPLER => "doppler".into(),
            IDX_GAIN_RE => "gain_re".into(),
            IDX_GAIN_IM => "gain_im".into(),
            k => format!("pn[{}]", k - DETERMINISTIC_PARAMS),
        }
    }
}

/// Which bound a report carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundFamily {
    CrbPnFree,
    CrbHybrid,
    Mcrb,
    Lb,
    LbAveraged,
}

/// Delay/Doppler bound values with range/velocity RMSE conversions.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub family: BoundFamily,
    /// Bound on the delay variance (s^2).
    pub delay_var_s2: f64,
    /// Bound on the normalized-Doppler variance (dimensionless).
    pub doppler_var: f64,
    /// Realizations averaged (0 for closed-form bounds).
    pub n_realizations: usize,
    /// Realizations excluded from the average.
    pub n_excluded: usize,
    /// Master seed for Monte-Carlo families.
    pub seed: Option<u64>,
}

impl BoundReport {
    pub fn closed_form(family: BoundFamily, delay_var_s2: f64, doppler_var: f64) -> Self {
        Self {
            family,
            delay_var_s2,
            doppler_var,
            n_realizations: 0,
            n_excluded: 0,
            seed: None,
        }
    }

    /// Range RMSE bound in meters, `(c/2) sqrt(delay variance)`.
    pub fn range_rmse_m(&self) -> f64 {
        0.5 * SPEED_OF_LIGHT * self.delay_var_s2.sqrt()
    }

    /// Velocity RMSE bound in m/s, `(c/2) sqrt(Doppler variance)`.
    pub fn velocity_rmse_mps(&self) -> f64 {
        0.5 * SPEED_OF_LIGHT * self.doppler_var.sqrt()
    }
}

/// The four mean-derivative vectors `[d mu/d tau, d mu/d nu, d mu/d aR, d mu/d aI]`.
fn mean_derivatives(
    cfg: &OfdmConfig,
    symbols: &SymbolGrid,
    truth: &TargetTruth,
) -> Result<[DVector<Complex64>; 4], ModelError> {
    let q = synthesize_q(cfg, symbols, truth.delay_s, truth.normalized_doppler)?;
    let d = q_derivatives(
        cfg,
        symbols,
        truth.delay_s,
        truth.normalized_doppler,
        DerivativeOrder::First,
    )?;
    let alpha = truth.gain;
    let d_tau = d.d_delay.map(|v| alpha * v);
    let d_nu = d.d_doppler.map(|v| alpha * v);
    let d_ar = q.clone();
    let d_ai = q.map(|v| Complex64::i() * v);
    Ok([d_tau, d_nu, d_ar, d_ai])
}

/// Deterministic (PN-free) 4x4 FIM from the Gaussian-mean form.
pub fn deterministic_fim(
    cfg: &OfdmConfig,
    symbols: &SymbolGrid,
    truth: &TargetTruth,
    noise: &NoiseModel,
) -> Result<Fim, BoundError> {
    let d = mean_derivatives(cfg, symbols, truth)?;
    let mut matrix = DMatrix::zeros(4, 4);
    for i in 0..4 {
        for j in 0..=i {
            let v = d[i].dotc(&d[j]).re / noise.sigma_sq;
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    Ok(Fim::from_matrix(matrix))
}

/// Solves `J x = e_delay, e_doppler` via Cholesky and returns the two
/// inverse-diagonal entries; on failure names the least-identifiable
/// direction from a symmetric eigendecomposition.
fn delay_doppler_variances(fim: &Fim) -> Result<(f64, f64), BoundError> {
    let n = fim.order();
    match nalgebra::Cholesky::new(fim.matrix.clone()) {
        Some(chol) => {
            let mut rhs = DMatrix::zeros(n, 2);
            rhs[(IDX_DELAY, 0)] = 1.0;
            rhs[(IDX_DOPPLER, 1)] = 1.0;
            let sol = chol.solve(&rhs);
            Ok((sol[(IDX_DELAY, 0)], sol[(IDX_DOPPLER, 1)]))
        }
        None => {
            let eig = nalgebra::SymmetricEigen::new(fim.matrix.clone());
            let mut weakest = 0;
            for k in 1..n {
                if eig.eigenvalues[k].abs() < eig.eigenvalues[weakest].abs() {
                    weakest = k;
                }
            }
            let v = eig.eigenvectors.column(weakest);
            let mut dominant = 0;
            for k in 1..n {
                if v[k].abs() > v[dominant].abs() {
                    dominant = k;
                }
            }
            Err(BoundError::Unidentifiable {
                direction: Fim::parameter_name(dominant),
            })
        }
    }
}

/// Deterministic CRB on delay and Doppler from the PN-free FIM.
pub fn deterministic_crb(fim: &Fim) -> Result<BoundReport, BoundError> {
    let (delay_var, doppler_var) = delay_doppler_variances(fim)?;
    Ok(BoundReport::closed_form(
        BoundFamily::CrbPnFree,
        delay_var,
        doppler_var,
    ))
}

/// Observation block of the hybrid FIM, `(NM+4) x (NM+4)`.
///
/// The PN matrix is unitary, so every entry of the conditional FIM is
/// independent of the PN realization and the expectation over PN is the
/// closed form assembled here: the deterministic 4x4 block, a diagonal
/// xi-xi block `(|alpha|^2/sigma^2) |q_k|^2`, and rank-one-structured
/// xi-deterministic couplings.
pub fn hybrid_fim_observation(
    cfg: &OfdmConfig,
    symbols: &SymbolGrid,
    truth: &TargetTruth,
    noise: &NoiseModel,
) -> Result<Fim, BoundError> {
    let nm = cfg.samples_per_frame();
    let det = deterministic_fim(cfg, symbols, truth, noise)?;
    let q = synthesize_q(cfg, symbols, truth.delay_s, truth.normalized_doppler)?;
    let d = q_derivatives(
        cfg,
        symbols,
        truth.delay_s,
        truth.normalized_doppler,
        DerivativeOrder::First,
    )?;
    let s2 = noise.sigma_sq;
    let a2 = truth.gain.norm_sqr();
    let (a_re, a_im) = (truth.gain.re, truth.gain.im);

    let mut m = DMatrix::zeros(nm + 4, nm + 4);
    m.view_mut((0, 0), (4, 4)).copy_from(det.matrix());
    for k in 0..nm {
        let row = DETERMINISTIC_PARAMS + k;
        let q_abs2 = q[k].norm_sqr();
        m[(row, row)] = a2 * q_abs2 / s2;
        let cross_tau = (Complex64::i() * a2 * q[k].conj() * d.d_delay[k]).re / s2;
        let cross_nu = (Complex64::i() * a2 * q[k].conj() * d.d_doppler[k]).re / s2;
        m[(row, IDX_DELAY)] = cross_tau;
        m[(IDX_DELAY, row)] = cross_tau;
        m[(row, IDX_DOPPLER)] = cross_nu;
        m[(IDX_DOPPLER, row)] = cross_nu;
        let cross_ar = a_im * q_abs2 / s2;
        m[(row, IDX_GAIN_RE)] = cross_ar;
        m[(IDX_GAIN_RE, row)] = cross_ar;
        let cross_ai = -a_re * q_abs2 / s2;
        m[(row, IDX_GAIN_IM)] = cross_ai;
        m[(IDX_GAIN_IM, row)] = cross_ai;
    }
    Ok(Fim::from_matrix(m))
}

/// Prior block of the hybrid FIM from an explicit covariance and its delay
/// derivative: xi-xi block `R^-1`, delay-delay entry
/// `tr[(R^-1 R')^2] / 2`, everything else zero (Gaussian score identities).
pub fn prior_fim_from_matrices(
    covariance: &DMatrix<f64>,
    covariance_deriv: &DMatrix<f64>,
) -> Result<Fim, BoundError> {
    let chol = nalgebra::Cholesky::new(covariance.clone()).ok_or(BoundError::Pn(
        PnError::DegenerateCovariance {
            delay_s: f64::NAN,
            max_jitter: 0.0,
        },
    ))?;
    let r_inv = chol.inverse();
    assemble_prior(&r_inv, covariance_deriv)
}

fn assemble_prior(
    r_inv: &DMatrix<f64>,
    covariance_deriv: &DMatrix<f64>,
) -> Result<Fim, BoundError> {
    let nm = r_inv.nrows();
    let m1 = r_inv * covariance_deriv;
    let mut tau_tau = 0.0;
    for i in 0..nm {
        for j in 0..nm {
            tau_tau += m1[(i, j)] * m1[(j, i)];
        }
    }
    tau_tau *= 0.5;

    let mut m = DMatrix::zeros(nm + 4, nm + 4);
    m[(IDX_DELAY, IDX_DELAY)] = tau_tau;
    m.view_mut((DETERMINISTIC_PARAMS, DETERMINISTIC_PARAMS), (nm, nm))
        .copy_from(r_inv);
    Ok(Fim::from_matrix(m))
}

/// Prior block of the hybrid FIM for an oscillator at a given delay.
pub fn hybrid_fim_prior(
    osc: &OscillatorModel,
    grid: &SampleTimeGrid,
    delay_s: f64,
) -> Result<Fim, BoundError> {
    let cov = build_covariance(osc, grid, delay_s, JitterPolicy::Ladder)?;
    let deriv = covariance_delay_deriv(osc, grid, delay_s)?;
    let factor = cov
        .factor()
        .ok_or(BoundError::Pn(PnError::DegenerateCovariance {
            delay_s,
            max_jitter: 0.0,
        }))?;
    let r_inv = factor.inverse();
    assemble_prior(&r_inv, &deriv)
}

/// Hybrid CRB on delay and Doppler from the summed observation and prior
/// blocks.
pub fn hybrid_crb(obs: &Fim, prior: &Fim) -> Result<BoundReport, BoundError> {
    let sum = Fim::from_matrix(obs.matrix() + prior.matrix());
    let (delay_var, doppler_var) = delay_doppler_variances(&sum)?;
    Ok(BoundReport {
        family: BoundFamily::CrbHybrid,
        ..BoundReport::closed_form(BoundFamily::CrbHybrid, delay_var, doppler_var)
    })
}
