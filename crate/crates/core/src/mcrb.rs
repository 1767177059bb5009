//! Misspecified CRB machinery for a PN-unaware receiver.
//!
//! The true observation carries a multiplicative PN term; the assumed model
//! does not. For one PN realization the pseudo-true parameter is the
//! assumed-model parameter closest (in KL divergence, equivalently in mean
//! distance) to the true mean; the MCRB is the sandwich `A^-1 B A^-1` of
//! the expected curvature and score-outer-product of the misspecified
//! likelihood at that point, and the lower bound against the TRUE parameter
//! adds the squared pseudo-true bias. Averaging the bias-augmented bound
//! over PN realizations gives the expected performance.
//!
//! Per-realization computations are independent and run on a worker pool;
//! realization seeds derive from (master seed, realization index) only, so
//! sweeps share common random numbers across axis points, and the final
//! average reduces in realization order for reproducibility.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::ambiguity::DelayDopplerObjective;
use crate::crb::{BoundError, BoundFamily, BoundReport, IDX_DELAY, IDX_DOPPLER};
use crate::frame::{
    q_derivatives, synthesize_q, DerivativeOrder, NoiseModel, OfdmConfig, SignalVector, SymbolGrid,
    TargetTruth,
};
use crate::optim::{maximize2, SimplexOptions};
use crate::phase_noise::{sample_pn_exact, OscillatorModel, PnRealization, SampleTimeGrid};
use crate::{derive_seed, SPEED_OF_LIGHT};

/// Half-cell coarse grid steps over +-3 resolution cells around the truth.
const COARSE_HALF_CELLS: i64 = 6;

/// Simplex tolerance as a fraction of a resolution cell. Tighter than the
/// 1e-4 needed for search-noise-free bounds so that the first-order
/// stationarity residual (the convergence diagnostic) vanishes to ~1e-7.
const REFINE_TOL_CELLS: f64 = 1.0e-7;

const MAX_REFINE_ITERS: usize = 500;

/// Assumed-model parameter closest to the true (PN-bearing) mean, with the
/// search trail that produced it.
#[derive(Debug, Clone)]
pub struct PseudoTrueParams {
    pub delay_s: f64,
    pub normalized_doppler: f64,
    pub gain: Complex64,
    /// `|mu^H q|^2` at the returned point.
    pub objective_value: f64,
    pub converged: bool,
    /// Best objective value after each refinement iteration.
    pub search_trace: Vec<f64>,
}

/// A/B matrices, sandwich bound, pseudo-true bias and bias-augmented lower
/// bound for one PN realization.
#[derive(Debug, Clone)]
pub struct McrbReport {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub mcrb: DMatrix<f64>,
    pub bias_outer: DMatrix<f64>,
    pub lb: DMatrix<f64>,
    pub pn_seed: u64,
}

/// Delay resolution cell `1/B` (s).
fn delay_cell(cfg: &OfdmConfig) -> f64 {
    1.0 / cfg.bandwidth_hz()
}

/// Doppler resolution cell `1/(fc M Tsym)` (dimensionless).
fn doppler_cell(cfg: &OfdmConfig) -> f64 {
    1.0 / (cfg.carrier_freq_hz * cfg.num_symbols as f64 * cfg.total_symbol_duration_s())
}

/// True mean `alpha exp(-j xi) q(tau, nu)` of the PN-bearing model.
fn true_mean(
    cfg: &OfdmConfig,
    symbols: &SymbolGrid,
    truth: &TargetTruth,
    pn: &PnRealization,
) -> Result<SignalVector, BoundError> {
    let mut mu = synthesize_q(cfg, symbols, truth.delay_s, truth.normalized_doppler)?;
    for (entry, &xi) in mu.iter_mut().zip(pn.xi.iter()) {
        *entry *= truth.gain * Complex64::from_polar(1.0, -xi);
    }
    Ok(mu)
}

/// Two-stage pseudo-true parameter search: half-cell grid over +-3
/// resolution cells around the truth (batched inner products through the
/// per-symbol DFT of the mean), then simplex refinement of `|mu^H q|^2`;
/// the gain follows in closed form.
pub fn pseudo_true_search(
    cfg: &OfdmConfig,
    symbols: &SymbolGrid,
    truth: &TargetTruth,
    pn: &PnRealization,
) -> Result<PseudoTrueParams, BoundError> {
    let mu = true_mean(cfg, symbols, truth, pn)?;
    search_objective(cfg, symbols, &mu, truth.delay_s, truth.normalized_doppler)
}

/// Shared grid-then-simplex maximization of `|v^H q(tau, nu)|^2` around a
/// center point.
pub(crate) fn search_objective(
    cfg: &OfdmConfig,
    symbols: &SymbolGrid,
    reference: &SignalVector,
    center_delay: f64,
    center_doppler: f64,
) -> Result<PseudoTrueParams, BoundError> {
    let obj = DelayDopplerObjective::new(cfg, symbols, reference)?;
    let step_tau = 0.5 * delay_cell(cfg);
    let step_nu = 0.5 * doppler_cell(cfg);

    // The objective is periodic (period N delay cells, M Doppler cells);
    // the window must stay inside half a period or it picks up an aliased
    // copy of the peak on small frames.
    let half_steps =
        |period_cells: usize| -> i64 { COARSE_HALF_CELLS.min((period_cells as i64 - 1).max(1)) };
    let steps_tau = half_steps(cfg.num_subcarriers);
    let steps_nu = half_steps(cfg.num_symbols);

    let mut best = (center_delay, center_doppler);
    let mut best_value = f64::NEG_INFINITY;
    for k in -steps_tau..=steps_tau {
        for l in -steps_nu..=steps_nu {
            let tau = center_delay + k as f64 * step_tau;
            let nu = center_doppler + l as f64 * step_nu;
            let value = obj.eval(tau, nu);
            if value > best_value {
                best_value = value;
                best = (tau, nu);
            }
        }
    }

    let refine = maximize2(
        |tau, nu| obj.eval(tau, nu),
        [best.0, best.1],
        &SimplexOptions {
            x_tol: [
                REFINE_TOL_CELLS * delay_cell(cfg),
                REFINE_TOL_CELLS * doppler_cell(cfg),
            ],
            init_step: [0.5 * step_tau, 0.5 * step_nu],
            max_iters: MAX_REFINE_ITERS,
        },
    );

    let (delay_s, normalized_doppler) = (refine.x[0], refine.x[1]);
    let q0 = synthesize_q(cfg, symbols, delay_s, normalized_doppler)?;
    let gain = obj.inner(delay_s, normalized_doppler).conj() / q0.norm_squared();
    Ok(PseudoTrueParams {
        delay_s,
        normalized_doppler,
        gain,
        objective_value: refine.value,
        converged: refine.converged,
        search_trace: refine.trace,
    })
}

/// Closed Gaussian forms of the expected misspecified curvature (A) and
/// score outer product (B) at the pseudo-true point.
pub fn mcrb_matrices(
    cfg: &OfdmConfig,
    symbols: &SymbolGrid,
    truth: &TargetTruth,
    pn: &PnRealization,
    noise: &NoiseModel,
    pseudo: &PseudoTrueParams,
) -> Result<McrbReport, BoundError> {
    let mu = true_mean(cfg, symbols, truth, pn)?;
    let (tau0, nu0) = (pseudo.delay_s, pseudo.normalized_doppler);
    let alpha0 = pseudo.gain;
    let q0 = synthesize_q(cfg, symbols, tau0, nu0)?;
    let deriv = q_derivatives(cfg, symbols, tau0, nu0, DerivativeOrder::Second)?;
    let second = deriv.second.as_ref().expect("second order requested");

    let residual = &mu - &q0.map(|v| alpha0 * v);
    let d: [DVector<Complex64>; 4] = [
        deriv.d_delay.map(|v| alpha0 * v),
        deriv.d_doppler.map(|v| alpha0 * v),
        q0.clone(),
        q0.map(|v| Complex64::i() * v),
    ];

    // Second partials of the assumed mean; gain-gain entries vanish.
    let hess = |i: usize, j: usize| -> Option<DVector<Complex64>> {
        let (lo, hi) = (i.min(j), i.max(j));
        match (lo, hi) {
            (0, 0) => Some(second.d2_delay.map(|v| alpha0 * v)),
            (0, 1) => Some(second.d_delay_doppler.map(|v| alpha0 * v)),
            (1, 1) => Some(second.d2_doppler.map(|v| alpha0 * v)),
            (0, 2) => Some(deriv.d_delay.clone()),
            (0, 3) => Some(deriv.d_delay.map(|v| Complex64::i() * v)),
            (1, 2) => Some(deriv.d_doppler.clone()),
            (1, 3) => Some(deriv.d_doppler.map(|v| Complex64::i() * v)),
            _ => None,
        }
    };

    let s2 = noise.sigma_sq;
    let mut a = DMatrix::zeros(4, 4);
    let mut b = DMatrix::zeros(4, 4);
    for i in 0..4 {
        for j in 0..=i {
            let curvature = match hess(i, j) {
                Some(h) => residual.dotc(&h).re,
                None => 0.0,
            };
            let gram = d[i].dotc(&d[j]).re;
            let a_ij = (curvature - gram) / s2;
            let b_ij = residual.dotc(&d[i]).re * residual.dotc(&d[j]).re / (s2 * s2) + gram / s2;
            a[(i, j)] = a_ij;
            a[(j, i)] = a_ij;
            b[(i, j)] = b_ij;
            b[(j, i)] = b_ij;
        }
    }

    Ok(McrbReport {
        a,
        b,
        mcrb: DMatrix::zeros(4, 4),
        bias_outer: DMatrix::zeros(4, 4),
        lb: DMatrix::zeros(4, 4),
        pn_seed: pn.seed,
    })
}

/// Completes a report with the sandwich bound `A^-1 B A^-1`, the
/// pseudo-true bias outer product and the bias-augmented lower bound.
pub fn mcrb_and_lb(
    mut report: McrbReport,
    truth: &TargetTruth,
    pseudo: &PseudoTrueParams,
) -> Result<McrbReport, BoundError> {
    // A is negative definite at a proper interior maximizer, so factor -A.
    let neg_a = -&report.a;
    let chol = match nalgebra::Cholesky::new(neg_a.clone()) {
        Some(c) => c,
        None => {
            let eig = nalgebra::SymmetricEigen::new(neg_a);
            let max = eig.eigenvalues.amax();
            let mut min = f64::INFINITY;
            for v in eig.eigenvalues.iter() {
                min = min.min(v.abs());
            }
            return Err(BoundError::SingularCurvature {
                condition: max / min.max(f64::MIN_POSITIVE),
            });
        }
    };
    let half = chol.solve(&report.b);
    report.mcrb = chol.solve(&half.transpose()).transpose();

    let bias = DVector::from_vec(vec![
        truth.delay_s - pseudo.delay_s,
        truth.normalized_doppler - pseudo.normalized_doppler,
        truth.gain.re - pseudo.gain.re,
        truth.gain.im - pseudo.gain.im,
    ]);
    report.bias_outer = &bias * bias.transpose();
    report.lb = &report.mcrb + &report.bias_outer;
    Ok(report)
}

/// Lower-bound diagonals for one PN realization.
#[derive(Debug, Clone)]
pub struct RealizationLb {
    pub seed: u64,
    pub delay_lb_s2: f64,
    pub doppler_lb: f64,
    pub delay_mcrb_s2: f64,
    pub doppler_mcrb: f64,
    pub converged: bool,
}

impl RealizationLb {
    pub fn range_rmse_m(&self) -> f64 {
        0.5 * SPEED_OF_LIGHT * self.delay_lb_s2.sqrt()
    }
}

/// Averaged lower bound plus the per-realization values behind it.
#[derive(Debug, Clone)]
pub struct AveragedLb {
    pub report: BoundReport,
    pub realizations: Vec<RealizationLb>,
}

/// Full per-realization chain: sample (or inject) PN, search the
/// pseudo-true point, assemble A/B, complete MCRB and LB.
fn realization_lb(
    cfg: &OfdmConfig,
    symbols: &SymbolGrid,
    truth: &TargetTruth,
    noise: &NoiseModel,
    pn: &PnRealization,
) -> Result<RealizationLb, BoundError> {
    let pseudo = pseudo_true_search(cfg, symbols, truth, pn)?;
    if !pseudo.converged {
        return Ok(RealizationLb {
            seed: pn.seed,
            delay_lb_s2: f64::NAN,
            doppler_lb: f64::NAN,
            delay_mcrb_s2: f64::NAN,
            doppler_mcrb: f64::NAN,
            converged: false,
        });
    }
    let report = mcrb_matrices(cfg, symbols, truth, pn, noise, &pseudo)?;
    let report = mcrb_and_lb(report, truth, &pseudo)?;
    Ok(RealizationLb {
        seed: pn.seed,
        delay_lb_s2: report.lb[(IDX_DELAY, IDX_DELAY)],
        doppler_lb: report.lb[(IDX_DOPPLER, IDX_DOPPLER)],
        delay_mcrb_s2: report.mcrb[(IDX_DELAY, IDX_DELAY)],
        doppler_mcrb: report.mcrb[(IDX_DOPPLER, IDX_DOPPLER)],
        converged: true,
    })
}

/// Seed stream tag for PN realizations inside the averaged bound.
const PN_STREAM: u64 = 0x706e;

fn averaged_lb_impl<S>(
    cfg: &OfdmConfig,
    symbols: &SymbolGrid,
    truth: &TargetTruth,
    noise: &NoiseModel,
    n_realizations: usize,
    seed: u64,
    sampler: S,
) -> Result<AveragedLb, BoundError>
where
    S: Fn(u64) -> Result<PnRealization, BoundError> + Sync,
{
    if n_realizations == 0 {
        return Err(BoundError::EmptyAverage);
    }
    let realizations: Vec<RealizationLb> = (0..n_realizations)
        .into_par_iter()
        .map(|k| {
            let pn = sampler(derive_seed(seed, PN_STREAM, k as u64))?;
            realization_lb(cfg, symbols, truth, noise, &pn)
        })
        .collect::<Result<_, _>>()?;

    let excluded = realizations.iter().filter(|r| !r.converged).count();
    if 10 * excluded > n_realizations {
        return Err(BoundError::ExcessiveExclusions {
            excluded,
            total: n_realizations,
        });
    }
    let included = n_realizations - excluded;
    let mut delay_acc = 0.0;
    let mut doppler_acc = 0.0;
    for r in realizations.iter().filter(|r| r.converged) {
        delay_acc += r.delay_lb_s2;
        doppler_acc += r.doppler_lb;
    }
    Ok(AveragedLb {
        report: BoundReport {
            family: BoundFamily::LbAveraged,
            delay_var_s2: delay_acc / included as f64,
            doppler_var: doppler_acc / included as f64,
            n_realizations: included,
            n_excluded: excluded,
            seed: Some(seed),
        },
        realizations,
    })
}

/// PN-averaged lower bound: arithmetic mean of the per-realization LB
/// delay/Doppler diagonals over exact-path PN draws.
///
/// Non-converged pseudo-true searches are excluded and counted; more than
/// 10% exclusions is an error.
pub fn averaged_lb(
    cfg: &OfdmConfig,
    symbols: &SymbolGrid,
    truth: &TargetTruth,
    noise: &NoiseModel,
    osc: &OscillatorModel,
    n_realizations: usize,
    seed: u64,
) -> Result<AveragedLb, BoundError> {
    let grid = SampleTimeGrid::from_config(cfg);
    averaged_lb_impl(cfg, symbols, truth, noise, n_realizations, seed, |s| {
        sample_pn_exact(osc, &grid, truth.delay_s, s).map_err(BoundError::from)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crb::{deterministic_crb, deterministic_fim};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn setup(n: usize, m: usize) -> (OfdmConfig, SymbolGrid, TargetTruth, NoiseModel) {
        let cfg = OfdmConfig::nr_fr2_scaled(n, m);
        let grid = SymbolGrid::qpsk(&cfg, 7);
        let truth = TargetTruth::from_range_velocity(50.0, 20.0, Complex64::new(1.0, 0.0)).unwrap();
        let noise = NoiseModel::from_snr_db(20.0, truth.gain).unwrap();
        (cfg, grid, truth, noise)
    }

    #[test]
    fn zero_pn_recovers_truth_exactly() {
        let (cfg, grid, truth, _) = setup(16, 4);
        let pn = PnRealization::zero(cfg.samples_per_frame(), 0);
        let pseudo = pseudo_true_search(&cfg, &grid, &truth, &pn).unwrap();
        assert!(pseudo.converged);
        // The coarse grid is centered on the truth, which is the global
        // maximum, and the simplex returns the best point ever seen.
        assert_eq!(pseudo.delay_s.to_bits(), truth.delay_s.to_bits());
        assert_eq!(
            pseudo.normalized_doppler.to_bits(),
            truth.normalized_doppler.to_bits()
        );
        assert_relative_eq!(pseudo.gain.re, truth.gain.re, max_relative = 1e-12);
        assert_abs_diff_eq!(pseudo.gain.im, truth.gain.im, epsilon = 1e-12);
    }

    #[test]
    fn constant_pn_is_a_pure_gain_rotation() {
        let (cfg, grid, truth, _) = setup(16, 2);
        let theta = 0.7;
        let pn = PnRealization {
            xi: DVector::from_element(cfg.samples_per_frame(), theta),
            seed: 0,
            method: crate::phase_noise::SampleMethod::ExactPath,
        };
        let pseudo = pseudo_true_search(&cfg, &grid, &truth, &pn).unwrap();
        assert_eq!(pseudo.delay_s.to_bits(), truth.delay_s.to_bits());
        assert_eq!(
            pseudo.normalized_doppler.to_bits(),
            truth.normalized_doppler.to_bits()
        );
        let expect = truth.gain * Complex64::from_polar(1.0, -theta);
        assert_relative_eq!(pseudo.gain.re, expect.re, max_relative = 1e-10);
        assert_relative_eq!(pseudo.gain.im, expect.im, max_relative = 1e-10);
    }

    #[test]
    fn refined_optimum_dominates_dense_grid() {
        let (cfg, grid, truth, _) = setup(8, 2);
        let time_grid = SampleTimeGrid::from_config(&cfg);
        let osc = OscillatorModel::fro(100.0e3).unwrap();
        let pn = sample_pn_exact(&osc, &time_grid, truth.delay_s, 4242).unwrap();
        let pseudo = pseudo_true_search(&cfg, &grid, &truth, &pn).unwrap();
        assert!(pseudo.converged);

        let mu = true_mean(&cfg, &grid, &truth, &pn).unwrap();
        let obj = DelayDopplerObjective::new(&cfg, &grid, &mu).unwrap();
        let half_tau = 3.0 * delay_cell(&cfg);
        let half_nu = 3.0 * doppler_cell(&cfg);
        let mut grid_max = f64::NEG_INFINITY;
        for k in 0..200 {
            for l in 0..200 {
                let tau = truth.delay_s - half_tau + 2.0 * half_tau * k as f64 / 199.0;
                let nu = truth.normalized_doppler - half_nu + 2.0 * half_nu * l as f64 / 199.0;
                grid_max = grid_max.max(obj.eval(tau, nu));
            }
        }
        assert!(
            pseudo.objective_value >= grid_max * (1.0 - 1e-12),
            "refined {} below grid {}",
            pseudo.objective_value,
            grid_max
        );
    }

    #[test]
    fn correct_specification_collapses_to_deterministic_crb() {
        let (cfg, grid, truth, noise) = setup(16, 4);
        let pn = PnRealization::zero(cfg.samples_per_frame(), 0);
        let pseudo = pseudo_true_search(&cfg, &grid, &truth, &pn).unwrap();
        let report = mcrb_matrices(&cfg, &grid, &truth, &pn, &noise, &pseudo).unwrap();
        let fim = deterministic_fim(&cfg, &grid, &truth, &noise).unwrap();

        // A = -J and B = J entrywise.
        let scale = fim.matrix().amax();
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(
                    report.a[(i, j)] / scale,
                    -fim.matrix()[(i, j)] / scale,
                    epsilon = 1e-10
                );
                assert_abs_diff_eq!(
                    report.b[(i, j)] / scale,
                    fim.matrix()[(i, j)] / scale,
                    epsilon = 1e-10
                );
            }
        }

        let report = mcrb_and_lb(report, &truth, &pseudo).unwrap();
        let crb = deterministic_crb(&fim).unwrap();
        assert_relative_eq!(
            report.mcrb[(IDX_DELAY, IDX_DELAY)],
            crb.delay_var_s2,
            max_relative = 1e-8
        );
        assert_relative_eq!(
            report.lb[(IDX_DELAY, IDX_DELAY)],
            crb.delay_var_s2,
            max_relative = 1e-8
        );
        assert_relative_eq!(
            report.lb[(IDX_DOPPLER, IDX_DOPPLER)],
            crb.doppler_var,
            max_relative = 1e-8
        );
    }

    #[test]
    fn stationarity_residual_vanishes_at_the_pseudo_true_point() {
        let (cfg, grid, truth, _noise) = setup(8, 2);
        let time_grid = SampleTimeGrid::from_config(&cfg);
        let osc = OscillatorModel::fro(100.0e3).unwrap();
        let pn = sample_pn_exact(&osc, &time_grid, truth.delay_s, 99).unwrap();
        let pseudo = pseudo_true_search(&cfg, &grid, &truth, &pn).unwrap();
        assert!(pseudo.converged);

        let mu = true_mean(&cfg, &grid, &truth, &pn).unwrap();
        let q0 = synthesize_q(&cfg, &grid, pseudo.delay_s, pseudo.normalized_doppler).unwrap();
        let deriv = q_derivatives(
            &cfg,
            &grid,
            pseudo.delay_s,
            pseudo.normalized_doppler,
            DerivativeOrder::First,
        )
        .unwrap();
        let residual = &mu - &q0.map(|v| pseudo.gain * v);
        let d = [
            deriv.d_delay.map(|v| pseudo.gain * v),
            deriv.d_doppler.map(|v| pseudo.gain * v),
            q0.clone(),
            q0.map(|v| Complex64::i() * v),
        ];
        for (k, dk) in d.iter().enumerate() {
            let value = residual.dotc(dk).re.abs();
            let bound = 1e-6 * residual.norm() * dk.norm();
            assert!(
                value < bound,
                "coordinate {k}: residual projection {value:.3e} exceeds {bound:.3e}"
            );
        }
    }

    #[test]
    fn constant_pn_bias_is_confined_to_the_gain() {
        let (cfg, grid, truth, noise) = setup(8, 2);
        let theta = 0.7;
        let pn = PnRealization {
            xi: DVector::from_element(cfg.samples_per_frame(), theta),
            seed: 0,
            method: crate::phase_noise::SampleMethod::ExactPath,
        };
        let pseudo = pseudo_true_search(&cfg, &grid, &truth, &pn).unwrap();
        let report = mcrb_matrices(&cfg, &grid, &truth, &pn, &noise, &pseudo).unwrap();
        let report = mcrb_and_lb(report, &truth, &pseudo).unwrap();
        assert_relative_eq!(
            report.lb[(IDX_DELAY, IDX_DELAY)],
            report.mcrb[(IDX_DELAY, IDX_DELAY)],
            max_relative = 1e-9
        );
        assert_relative_eq!(
            report.lb[(IDX_DOPPLER, IDX_DOPPLER)],
            report.mcrb[(IDX_DOPPLER, IDX_DOPPLER)],
            max_relative = 1e-9
        );
        // The gain bias is the full rotation distance.
        let expect = (truth.gain - truth.gain * Complex64::from_polar(1.0, -theta)).norm_sqr();
        let got = report.bias_outer[(2, 2)] + report.bias_outer[(3, 3)];
        assert_relative_eq!(got, expect, max_relative = 1e-8);
    }

    #[test]
    fn lb_exceeds_mcrb_by_a_psd_rank_one_term() {
        let (cfg, grid, truth, noise) = setup(8, 2);
        let time_grid = SampleTimeGrid::from_config(&cfg);
        let osc = OscillatorModel::pll(100.0e3, 1.0e6).unwrap();
        let pn = sample_pn_exact(&osc, &time_grid, truth.delay_s, 7).unwrap();
        let pseudo = pseudo_true_search(&cfg, &grid, &truth, &pn).unwrap();
        let report = mcrb_and_lb(
            mcrb_matrices(&cfg, &grid, &truth, &pn, &noise, &pseudo).unwrap(),
            &truth,
            &pseudo,
        )
        .unwrap();
        let diff = &report.lb - &report.mcrb;
        assert!((&diff - &report.bias_outer).amax() <= 1e-15 * report.lb.amax().max(1e-300));
        let eig = nalgebra::SymmetricEigen::new(report.bias_outer.clone());
        let max = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
        let mut positive = 0;
        for v in eig.eigenvalues.iter() {
            assert!(*v >= -1e-12 * max);
            if *v > 1e-12 * max {
                positive += 1;
            }
        }
        assert!(positive <= 1, "bias outer product has rank {positive}");
        // MCRB itself is symmetric near-PSD.
        let eig = nalgebra::SymmetricEigen::new(report.mcrb.clone());
        let max = eig.eigenvalues.max();
        assert!(eig.eigenvalues.min() >= -1e-8 * max);
    }

    #[test]
    fn mcrb_scales_with_noise_while_bias_does_not() {
        let (cfg, grid, truth, noise) = setup(16, 4);
        let time_grid = SampleTimeGrid::from_config(&cfg);
        let osc = OscillatorModel::fro(100.0e3).unwrap();
        let pn = sample_pn_exact(&osc, &time_grid, truth.delay_s, 55).unwrap();
        let pseudo = pseudo_true_search(&cfg, &grid, &truth, &pn).unwrap();
        let run = |noise: &NoiseModel| {
            mcrb_and_lb(
                mcrb_matrices(&cfg, &grid, &truth, &pn, noise, &pseudo).unwrap(),
                &truth,
                &pseudo,
            )
            .unwrap()
        };
        let quieter = NoiseModel::new(noise.sigma_sq / 10.0).unwrap();
        let loud = run(&noise);
        let quiet = run(&quieter);
        // Sandwich part tracks 1/SNR; the pseudo-true bias ignores noise.
        assert_relative_eq!(
            quiet.mcrb[(IDX_DELAY, IDX_DELAY)],
            loud.mcrb[(IDX_DELAY, IDX_DELAY)] / 10.0,
            max_relative = 1e-2
        );
        assert_eq!(
            quiet.bias_outer[(IDX_DELAY, IDX_DELAY)],
            loud.bias_outer[(IDX_DELAY, IDX_DELAY)]
        );
    }

    #[test]
    fn averaged_lb_single_realization_matches_direct_chain() {
        let (cfg, grid, truth, noise) = setup(8, 2);
        let osc = OscillatorModel::fro(100.0e3).unwrap();
        let avg = averaged_lb(&cfg, &grid, &truth, &noise, &osc, 1, 5150).unwrap();
        assert_eq!(avg.report.n_realizations, 1);
        assert_eq!(avg.report.n_excluded, 0);

        let time_grid = SampleTimeGrid::from_config(&cfg);
        let pn = sample_pn_exact(
            &osc,
            &time_grid,
            truth.delay_s,
            derive_seed(5150, PN_STREAM, 0),
        )
        .unwrap();
        let pseudo = pseudo_true_search(&cfg, &grid, &truth, &pn).unwrap();
        let report = mcrb_and_lb(
            mcrb_matrices(&cfg, &grid, &truth, &pn, &noise, &pseudo).unwrap(),
            &truth,
            &pseudo,
        )
        .unwrap();
        assert_relative_eq!(
            avg.report.delay_var_s2,
            report.lb[(IDX_DELAY, IDX_DELAY)],
            max_relative = 1e-14
        );
        assert_relative_eq!(
            avg.report.doppler_var,
            report.lb[(IDX_DOPPLER, IDX_DOPPLER)],
            max_relative = 1e-14
        );
    }

    #[test]
    fn averaged_lb_with_injected_zero_pn_equals_deterministic_crb() {
        let (cfg, grid, truth, noise) = setup(16, 2);
        let nm = cfg.samples_per_frame();
        let avg = averaged_lb_impl(&cfg, &grid, &truth, &noise, 3, 1, |s| {
            Ok(PnRealization::zero(nm, s))
        })
        .unwrap();
        let crb =
            deterministic_crb(&deterministic_fim(&cfg, &grid, &truth, &noise).unwrap()).unwrap();
        assert_relative_eq!(
            avg.report.delay_var_s2,
            crb.delay_var_s2,
            max_relative = 1e-8
        );
        assert_relative_eq!(avg.report.doppler_var, crb.doppler_var, max_relative = 1e-8);
    }

    #[test]
    fn averaged_lb_rejects_zero_realizations() {
        let (cfg, grid, truth, noise) = setup(8, 2);
        let osc = OscillatorModel::fro(100.0e3).unwrap();
        assert!(matches!(
            averaged_lb(&cfg, &grid, &truth, &noise, &osc, 0, 1),
            Err(BoundError::EmptyAverage)
        ));
    }

    #[test]
    fn averaged_lb_is_reproducible_and_dominates_mean_mcrb() {
        let (cfg, grid, truth, noise) = setup(8, 2);
        let osc = OscillatorModel::fro(100.0e3).unwrap();
        let a = averaged_lb(&cfg, &grid, &truth, &noise, &osc, 8, 99).unwrap();
        let b = averaged_lb(&cfg, &grid, &truth, &noise, &osc, 8, 99).unwrap();
        assert_eq!(
            a.report.delay_var_s2.to_bits(),
            b.report.delay_var_s2.to_bits()
        );
        assert_eq!(
            a.report.doppler_var.to_bits(),
            b.report.doppler_var.to_bits()
        );
        let mean_mcrb: f64 = a.realizations.iter().map(|r| r.delay_mcrb_s2).sum::<f64>() / 8.0;
        assert!(a.report.delay_var_s2 >= mean_mcrb);
    }
}
