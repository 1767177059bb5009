//! Config-driven experiment sweeps and result emission.
//!
//! A sweep varies one axis (SNR, target range, oscillator 3-dB bandwidth,
//! PLL loop bandwidth) while the rest of the scene stays at its configured
//! defaults, computes the requested bound families per axis value (plus an
//! optional empirical RMSE campaign), and emits a CSV or JSON table.
//! Configs are flat UTF-8 `key = value` lines; unknown keys are rejected
//! by name. Identical config and seed give byte-identical CSV output.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::crb::{
    deterministic_crb, deterministic_fim, hybrid_crb, hybrid_fim_observation, hybrid_fim_prior,
};
use crate::estimator::{rmse_campaign, SymbolsPolicy};
use crate::frame::{validate_target, NoiseModel, OfdmConfig, SymbolGrid, TargetTruth};
use crate::mcrb::averaged_lb;
use crate::phase_noise::{OscillatorModel, SampleTimeGrid};

/// Experiment axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Snr,
    TargetRange,
    F3db,
    Floop,
}

impl SweepAxis {
    fn parse(value: &str) -> Option<Self> {
        match value {
            "snr" => Some(Self::Snr),
            "target_range" => Some(Self::TargetRange),
            "f3db" => Some(Self::F3db),
            "floop" => Some(Self::Floop),
            _ => None,
        }
    }

    fn as_str(&self) -> &'static str {
        match self {
            Self::Snr => "snr",
            Self::TargetRange => "target_range",
            Self::F3db => "f3db",
            Self::Floop => "floop",
        }
    }
}

/// Bound/measurement families a sweep can compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepFamily {
    /// Deterministic PN-free CRB.
    CrbFree,
    /// Hybrid CRB under PN.
    CrbHybrid,
    /// PN-averaged misspecified lower bound.
    LbAveraged,
    /// Empirical mismatched-ML RMSE campaign.
    Rmse,
}

/// Canonical family order (fixes the CSV column order).
pub const FAMILY_ORDER: [SweepFamily; 4] = [
    SweepFamily::CrbFree,
    SweepFamily::CrbHybrid,
    SweepFamily::LbAveraged,
    SweepFamily::Rmse,
];

impl SweepFamily {
    fn parse(value: &str) -> Option<Self> {
        match value {
            "crb_free" => Some(Self::CrbFree),
            "crb" => Some(Self::CrbHybrid),
            "lb" => Some(Self::LbAveraged),
            "rmse" => Some(Self::Rmse),
            _ => None,
        }
    }

    fn as_str(&self) -> &'static str {
        match self {
            Self::CrbFree => "crb_free",
            Self::CrbHybrid => "crb",
            Self::LbAveraged => "lb",
            Self::Rmse => "rmse",
        }
    }

    fn columns(&self) -> [&'static str; 2] {
        match self {
            Self::CrbFree => ["crb_free_range_m", "crb_free_vel_mps"],
            Self::CrbHybrid => ["crb_range_m", "crb_vel_mps"],
            Self::LbAveraged => ["lb_range_m", "lb_vel_mps"],
            Self::Rmse => ["rmse_range_m", "rmse_vel_mps"],
        }
    }
}

/// Oscillator kind selector (parameters live beside it so either kind can
/// be configured without losing the other's defaults).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OscKind {
    Fro,
    Pll,
}

impl OscKind {
    fn as_str(&self) -> &'static str {
        match self {
            Self::Fro => "fro",
            Self::Pll => "pll",
        }
    }
}

/// Declarative description of one experiment sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    /// Axis values, ascending: dB for SNR, meters for range, Hz otherwise.
    pub values: Vec<f64>,
    pub ofdm: OfdmConfig,
    pub target_range_m: f64,
    pub target_velocity_mps: f64,
    pub gain: Complex64,
    pub snr_db: f64,
    pub osc_kind: OscKind,
    pub f3db_hz: f64,
    pub floop_hz: f64,
    pub n_pn_realizations: usize,
    pub n_trials: usize,
    pub master_seed: u64,
    pub symbol_seed: u64,
    pub families: Vec<SweepFamily>,
}

impl Default for SweepSpec {
    /// Reference defaults: the full frame geometry, a 50 m / 20 m/s unit
    /// gain target, SNR 20 dB, FRO at 100 kHz (PLL loop 1 MHz when
    /// selected), 100 PN realizations, and an SNR axis of 0..60 dB.
    fn default() -> Self {
        Self {
            axis: SweepAxis::Snr,
            values: vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
            ofdm: OfdmConfig::nr_fr2_default(),
            target_range_m: 50.0,
            target_velocity_mps: 20.0,
            gain: Complex64::new(1.0, 0.0),
            snr_db: 20.0,
            osc_kind: OscKind::Fro,
            f3db_hz: 100.0e3,
            floop_hz: 1.0e6,
            n_pn_realizations: 100,
            n_trials: 500,
            master_seed: 1,
            symbol_seed: 7,
            families: vec![
                SweepFamily::CrbFree,
                SweepFamily::CrbHybrid,
                SweepFamily::LbAveraged,
            ],
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected 'key = value', got '{text}'")]
    Malformed { line: usize, text: String },
    #[error("unknown keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("key '{key}': unknown variant '{value}'")]
    UnknownVariant { key: String, value: String },
    #[error("key '{key}': {reason}")]
    Invalid { key: String, reason: String },
    #[error("model validity: {0}")]
    ModelValidity(String),
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = value.parse().map_err(|_| ConfigError::Invalid {
        key: key.into(),
        reason: format!("'{value}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(ConfigError::Invalid {
            key: key.into(),
            reason: format!("'{value}' is not finite"),
        });
    }
    Ok(v)
}

fn parse_usize(key: &str, value: &str) -> Result<usize, ConfigError> {
    value.parse().map_err(|_| ConfigError::Invalid {
        key: key.into(),
        reason: format!("'{value}' is not a non-negative integer"),
    })
}

fn parse_u64(key: &str, value: &str) -> Result<u64, ConfigError> {
    value.parse().map_err(|_| ConfigError::Invalid {
        key: key.into(),
        reason: format!("'{value}' is not an unsigned integer"),
    })
}

/// Parses flat `key = value` text (blank lines and `#` comments allowed)
/// into a fully-resolved sweep spec with defaults applied.
pub fn parse_config(text: &str) -> Result<SweepSpec, ConfigError> {
    let mut spec = SweepSpec::default();
    let mut unknown = Vec::new();
    let mut families_key = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Malformed {
                line: idx + 1,
                text: line.into(),
            });
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "ofdm.fc_hz" => spec.ofdm.carrier_freq_hz = parse_f64(key, value)?,
            "ofdm.subcarrier_spacing_hz" => {
                spec.ofdm.subcarrier_spacing_hz = parse_f64(key, value)?
            }
            "ofdm.n" => spec.ofdm.num_subcarriers = parse_usize(key, value)?,
            "ofdm.m" => spec.ofdm.num_symbols = parse_usize(key, value)?,
            "ofdm.cp_s" => spec.ofdm.cp_duration_s = parse_f64(key, value)?,
            "target.range_m" => spec.target_range_m = parse_f64(key, value)?,
            "target.velocity_mps" => spec.target_velocity_mps = parse_f64(key, value)?,
            "target.gain_re" => spec.gain.re = parse_f64(key, value)?,
            "target.gain_im" => spec.gain.im = parse_f64(key, value)?,
            "snr_db" => spec.snr_db = parse_f64(key, value)?,
            "osc.kind" => {
                spec.osc_kind = match value {
                    "fro" => OscKind::Fro,
                    "pll" => OscKind::Pll,
                    _ => {
                        return Err(ConfigError::UnknownVariant {
                            key: key.into(),
                            value: value.into(),
                        })
                    }
                }
            }
            "osc.f3db_hz" => spec.f3db_hz = parse_f64(key, value)?,
            "osc.floop_hz" => spec.floop_hz = parse_f64(key, value)?,
            "sweep.axis" => {
                spec.axis = SweepAxis::parse(value).ok_or_else(|| ConfigError::UnknownVariant {
                    key: key.into(),
                    value: value.into(),
                })?
            }
            "sweep.values" => {
                let mut values = Vec::new();
                for part in value.split(',') {
                    values.push(parse_f64(key, part.trim())?);
                }
                spec.values = values;
            }
            "lb.n_realizations" => spec.n_pn_realizations = parse_usize(key, value)?,
            "rmse.n_trials" => spec.n_trials = parse_usize(key, value)?,
            "seed" => spec.master_seed = parse_u64(key, value)?,
            "symbols.seed" => spec.symbol_seed = parse_u64(key, value)?,
            "families" => {
                let mut families = Vec::new();
                for part in value.split(',') {
                    let part = part.trim();
                    let family =
                        SweepFamily::parse(part).ok_or_else(|| ConfigError::UnknownVariant {
                            key: key.into(),
                            value: part.into(),
                        })?;
                    if !families.contains(&family) {
                        families.push(family);
                    }
                }
                families_key = Some(families);
            }
            _ => unknown.push(key.to_string()),
        }
    }
    if !unknown.is_empty() {
        return Err(ConfigError::UnknownKeys(unknown));
    }
    if let Some(families) = families_key {
        spec.families = families;
    }
    // Canonical family order regardless of how they were listed.
    spec.families = FAMILY_ORDER
        .iter()
        .copied()
        .filter(|f| spec.families.contains(f))
        .collect();
    spec.values.sort_by(f64::total_cmp);
    validate_spec(&spec)?;
    Ok(spec)
}

fn validate_spec(spec: &SweepSpec) -> Result<(), ConfigError> {
    if spec.values.is_empty() {
        return Err(ConfigError::Invalid {
            key: "sweep.values".into(),
            reason: "at least one axis value required".into(),
        });
    }
    if spec.families.is_empty() {
        return Err(ConfigError::Invalid {
            key: "families".into(),
            reason: "at least one family required".into(),
        });
    }
    OfdmConfig::new(
        spec.ofdm.carrier_freq_hz,
        spec.ofdm.subcarrier_spacing_hz,
        spec.ofdm.num_subcarriers,
        spec.ofdm.num_symbols,
        spec.ofdm.cp_duration_s,
    )
    .map_err(|e| ConfigError::ModelValidity(e.to_string()))?;
    if spec.axis == SweepAxis::Floop && spec.osc_kind != OscKind::Pll {
        return Err(ConfigError::Invalid {
            key: "sweep.axis".into(),
            reason: "a loop-bandwidth sweep requires osc.kind = pll".into(),
        });
    }
    // The fixed target must satisfy the discrete-model assumptions; axis
    // values replace it point by point and are checked where they are
    // actually consumed (bounds accept any delay, synthesis does not).
    if spec.axis != SweepAxis::TargetRange {
        let truth = TargetTruth::from_range_velocity(
            spec.target_range_m,
            spec.target_velocity_mps,
            spec.gain,
        )
        .map_err(|e| ConfigError::ModelValidity(e.to_string()))?;
        validate_target(&spec.ofdm, &truth)
            .map_err(|e| ConfigError::ModelValidity(e.to_string()))?;
    }
    OscillatorModel::fro(spec.f3db_hz).map_err(|e| ConfigError::ModelValidity(e.to_string()))?;
    if spec.osc_kind == OscKind::Pll {
        OscillatorModel::pll(spec.f3db_hz, spec.floop_hz)
            .map_err(|e| ConfigError::ModelValidity(e.to_string()))?;
    }
    Ok(())
}

/// Reads and parses a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<SweepSpec, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Canonical `key = value` echo of a fully-resolved spec.
pub fn resolved_echo(spec: &SweepSpec) -> String {
    let values = spec
        .values
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",");
    let families = spec
        .families
        .iter()
        .map(|f| f.as_str())
        .collect::<Vec<_>>()
        .join(",");
    format!(
        "families = {families}\n\
         lb.n_realizations = {}\n\
         ofdm.cp_s = {}\n\
         ofdm.fc_hz = {}\n\
         ofdm.m = {}\n\
         ofdm.n = {}\n\
         ofdm.subcarrier_spacing_hz = {}\n\
         osc.f3db_hz = {}\n\
         osc.floop_hz = {}\n\
         osc.kind = {}\n\
         rmse.n_trials = {}\n\
         seed = {}\n\
         snr_db = {}\n\
         sweep.axis = {}\n\
         sweep.values = {values}\n\
         symbols.seed = {}\n\
         target.gain_im = {}\n\
         target.gain_re = {}\n\
         target.range_m = {}\n\
         target.velocity_mps = {}\n",
        spec.n_pn_realizations,
        spec.ofdm.cp_duration_s,
        spec.ofdm.carrier_freq_hz,
        spec.ofdm.num_symbols,
        spec.ofdm.num_subcarriers,
        spec.ofdm.subcarrier_spacing_hz,
        spec.f3db_hz,
        spec.floop_hz,
        spec.osc_kind.as_str(),
        spec.n_trials,
        spec.master_seed,
        spec.snr_db,
        spec.axis.as_str(),
        spec.symbol_seed,
        spec.gain.im,
        spec.gain.re,
        spec.target_range_m,
        spec.target_velocity_mps,
    )
}

/// FNV-1a hash of the resolved config echo, hex-encoded.
pub fn config_hash(spec: &SweepSpec) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in resolved_echo(spec).bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// One sweep output row.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub axis_value: f64,
    /// (column, value) pairs in schema order; NaN marks a failed cell.
    pub cells: Vec<(String, f64)>,
    pub n_real: usize,
    pub n_excluded: usize,
    pub status: String,
    pub wall_time_s: f64,
}

/// Column names for a family selection, in schema order.
pub fn columns(families: &[SweepFamily]) -> Vec<String> {
    let mut cols = vec!["axis_value".to_string()];
    for family in FAMILY_ORDER.iter().filter(|f| families.contains(f)) {
        for c in family.columns() {
            cols.push(c.to_string());
        }
    }
    cols.push("n_real".into());
    cols.push("n_excluded".into());
    cols.push("status".into());
    cols
}

fn sanitize_status(msg: &str) -> String {
    msg.replace([',', '\n'], ";")
}

/// Computes every requested family at one axis point.
fn run_point(spec: &SweepSpec, axis_value: f64) -> ResultRow {
    let start = Instant::now();
    let mut cells = Vec::new();
    let mut statuses: Vec<String> = Vec::new();
    let mut n_real = 0usize;
    let mut n_excluded = 0usize;

    let snr_db = if spec.axis == SweepAxis::Snr {
        axis_value
    } else {
        spec.snr_db
    };
    let range_m = if spec.axis == SweepAxis::TargetRange {
        axis_value
    } else {
        spec.target_range_m
    };
    let f3db = if spec.axis == SweepAxis::F3db {
        axis_value
    } else {
        spec.f3db_hz
    };
    let floop = if spec.axis == SweepAxis::Floop {
        axis_value
    } else {
        spec.floop_hz
    };

    let mut push_family = |family: SweepFamily, outcome: Result<(f64, f64), String>| {
        let [range_col, vel_col] = family.columns();
        match outcome {
            Ok((r, v)) => {
                cells.push((range_col.to_string(), r));
                cells.push((vel_col.to_string(), v));
            }
            Err(msg) => {
                cells.push((range_col.to_string(), f64::NAN));
                cells.push((vel_col.to_string(), f64::NAN));
                statuses.push(format!("{}: {}", family.as_str(), sanitize_status(&msg)));
            }
        }
    };

    let scene = (|| -> Result<_, String> {
        let truth = TargetTruth::from_range_velocity(range_m, spec.target_velocity_mps, spec.gain)
            .map_err(|e| e.to_string())?;
        let noise = NoiseModel::from_snr_db(snr_db, spec.gain).map_err(|e| e.to_string())?;
        let osc = match spec.osc_kind {
            OscKind::Fro => OscillatorModel::fro(f3db),
            OscKind::Pll => OscillatorModel::pll(f3db, floop),
        }
        .map_err(|e| e.to_string())?;
        Ok((truth, noise, osc))
    })();

    match scene {
        Err(msg) => {
            for family in FAMILY_ORDER.iter().filter(|f| spec.families.contains(f)) {
                push_family(*family, Err(msg.clone()));
            }
        }
        Ok((truth, noise, osc)) => {
            let symbols = SymbolGrid::qpsk(&spec.ofdm, spec.symbol_seed);
            for family in FAMILY_ORDER.iter().filter(|f| spec.families.contains(f)) {
                let outcome: Result<(f64, f64), String> = match family {
                    SweepFamily::CrbFree => deterministic_fim(&spec.ofdm, &symbols, &truth, &noise)
                        .and_then(|fim| deterministic_crb(&fim))
                        .map(|r| (r.range_rmse_m(), r.velocity_rmse_mps()))
                        .map_err(|e| e.to_string()),
                    SweepFamily::CrbHybrid => (|| {
                        let grid = SampleTimeGrid::from_config(&spec.ofdm);
                        let jo = hybrid_fim_observation(&spec.ofdm, &symbols, &truth, &noise)?;
                        let jp = hybrid_fim_prior(&osc, &grid, truth.delay_s)?;
                        let r = hybrid_crb(&jo, &jp)?;
                        Ok((r.range_rmse_m(), r.velocity_rmse_mps()))
                    })()
                    .map_err(|e: crate::crb::BoundError| e.to_string()),
                    SweepFamily::LbAveraged => averaged_lb(
                        &spec.ofdm,
                        &symbols,
                        &truth,
                        &noise,
                        &osc,
                        spec.n_pn_realizations,
                        spec.master_seed,
                    )
                    .map(|avg| {
                        n_real = avg.report.n_realizations;
                        n_excluded = avg.report.n_excluded;
                        (avg.report.range_rmse_m(), avg.report.velocity_rmse_mps())
                    })
                    .map_err(|e| e.to_string()),
                    SweepFamily::Rmse => rmse_campaign(
                        &spec.ofdm,
                        &SymbolsPolicy::Fixed(symbols.clone()),
                        &truth,
                        &noise,
                        Some(&osc),
                        spec.n_trials,
                        spec.master_seed,
                    )
                    .map(|c| (c.range_rmse_m, c.velocity_rmse_mps))
                    .map_err(|e| e.to_string()),
                };
                push_family(*family, outcome);
            }
        }
    }

    let status = if statuses.is_empty() {
        "ok".to_string()
    } else {
        statuses.join("; ")
    };
    ResultRow {
        axis_value,
        cells,
        n_real,
        n_excluded,
        status,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

/// Runs a sweep: one row per axis value, in axis order; per-point failures
/// land in the row status and the sweep continues.
pub fn run_sweep(spec: &SweepSpec) -> Vec<ResultRow> {
    spec.values
        .par_iter()
        .map(|&value| run_point(spec, value))
        .collect()
}

/// Output serialization format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::Json => "json",
        })
    }
}

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("no rows to emit")]
    NoRows,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_value(v: f64) -> String {
    format!("{v:.8e}")
}

/// Renders rows as CSV: an optional leading `#` comment, a header naming
/// the columns, then one line per axis value with scientific-notation
/// values at 9 significant digits.
pub fn render_csv(
    rows: &[ResultRow],
    families: &[SweepFamily],
    comment: Option<&str>,
) -> Result<String, EmitError> {
    if rows.is_empty() {
        return Err(EmitError::NoRows);
    }
    let mut out = String::new();
    if let Some(c) = comment {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str(&columns(families).join(","));
    out.push('\n');
    for row in rows {
        let mut fields = vec![format_value(row.axis_value)];
        for (_, value) in &row.cells {
            fields.push(format_value(*value));
        }
        fields.push(row.n_real.to_string());
        fields.push(row.n_excluded.to_string());
        fields.push(row.status.clone());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Renders rows as JSON: an array of row objects plus a metadata object
/// (resolved config echo, its hash, master seed, tool version).
pub fn render_json(rows: &[ResultRow], spec: &SweepSpec) -> Result<String, EmitError> {
    if rows.is_empty() {
        return Err(EmitError::NoRows);
    }
    let mut meta = serde_json::Map::new();
    meta.insert("config".into(), resolved_echo(spec).into());
    meta.insert("config_hash".into(), config_hash(spec).into());
    meta.insert("seed".into(), spec.master_seed.into());
    meta.insert(
        "tool_version".into(),
        env!("CARGO_PKG_VERSION").to_string().into(),
    );

    let json_number = |v: f64| -> serde_json::Value {
        serde_json::Number::from_f64(v)
            .map(serde_json::Value::Number)
            .unwrap_or(serde_json::Value::Null)
    };
    let rows_json: Vec<serde_json::Value> = rows
        .iter()
        .map(|row| {
            let mut obj = serde_json::Map::new();
            obj.insert("axis_value".into(), json_number(row.axis_value));
            for (col, value) in &row.cells {
                obj.insert(col.clone(), json_number(*value));
            }
            obj.insert("n_real".into(), row.n_real.into());
            obj.insert("n_excluded".into(), row.n_excluded.into());
            obj.insert("status".into(), row.status.clone().into());
            obj.insert("wall_time_s".into(), json_number(row.wall_time_s));
            serde_json::Value::Object(obj)
        })
        .collect();

    let doc = serde_json::json!({
        "metadata": serde_json::Value::Object(meta),
        "rows": rows_json,
    });
    Ok(serde_json::to_string_pretty(&doc).expect("json render") + "\n")
}

/// Writes rendered results to a file; CSV carries the resolved-config hash
/// as its leading comment.
pub fn emit_results(
    rows: &[ResultRow],
    spec: &SweepSpec,
    format: OutputFormat,
    path: impl AsRef<Path>,
) -> Result<(), EmitError> {
    let text = match format {
        OutputFormat::Csv => render_csv(
            rows,
            &spec.families,
            Some(&format!("config_hash={}", config_hash(spec))),
        )?,
        OutputFormat::Json => render_json(rows, spec)?,
    };
    let mut file = std::fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn desk_spec(families: Vec<SweepFamily>) -> SweepSpec {
        SweepSpec {
            ofdm: OfdmConfig::nr_fr2_scaled(16, 4),
            values: vec![0.0, 10.0, 20.0],
            n_pn_realizations: 4,
            n_trials: 4,
            families,
            ..SweepSpec::default()
        }
    }

    #[test]
    fn empty_config_gives_reference_defaults() {
        let spec = parse_config("").unwrap();
        assert_eq!(spec, SweepSpec::default());
        assert_eq!(spec.ofdm.num_subcarriers, 256);
        assert_eq!(spec.ofdm.num_symbols, 10);
        assert_relative_eq!(spec.ofdm.carrier_freq_hz, 28.0e9);
        assert_relative_eq!(spec.f3db_hz, 100.0e3);
        assert_relative_eq!(spec.floop_hz, 1.0e6);
        assert_relative_eq!(spec.target_range_m, 50.0);
        assert_relative_eq!(spec.target_velocity_mps, 20.0);
        assert_relative_eq!(spec.snr_db, 20.0);
        assert_eq!(spec.n_pn_realizations, 100);
        assert_eq!(spec.values.len(), 7);
    }

    #[test]
    fn unknown_oscillator_kind_is_rejected() {
        match parse_config("osc.kind = XYZ") {
            Err(ConfigError::UnknownVariant { key, value }) => {
                assert_eq!(key, "osc.kind");
                assert_eq!(value, "XYZ");
            }
            other => panic!("expected unknown-variant error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_listed() {
        match parse_config("bogus.key = 1\nofdm.n = 64\nother = 2") {
            Err(ConfigError::UnknownKeys(keys)) => {
                assert_eq!(keys, vec!["bogus.key".to_string(), "other".to_string()]);
            }
            other => panic!("expected unknown-keys error, got {other:?}"),
        }
    }

    #[test]
    fn seven_value_axis_yields_seven_rows() {
        let spec = parse_config("sweep.axis = snr\nsweep.values = 0,10,20,30,40,50,60").unwrap();
        assert_eq!(spec.values.len(), 7);
        assert_eq!(spec.axis, SweepAxis::Snr);
    }

    #[test]
    fn inconsistent_fixed_target_fails_at_load() {
        // 200 m round trip exceeds the cyclic prefix.
        match parse_config("target.range_m = 200") {
            Err(ConfigError::ModelValidity(msg)) => {
                assert!(msg.contains("cyclic prefix"), "{msg}");
            }
            other => panic!("expected model-validity error, got {other:?}"),
        }
        // A range sweep axis is allowed to pass the same values through.
        let spec = parse_config("sweep.axis = target_range\nsweep.values = 20,100,200").unwrap();
        assert_eq!(spec.values, vec![20.0, 100.0, 200.0]);
    }

    #[test]
    fn floop_axis_requires_pll() {
        assert!(matches!(
            parse_config("sweep.axis = floop"),
            Err(ConfigError::Invalid { .. })
        ));
        assert!(parse_config("sweep.axis = floop\nosc.kind = pll").is_ok());
    }

    #[test]
    fn values_are_sorted_on_load() {
        let spec = parse_config("sweep.values = 30,10,20").unwrap();
        assert_eq!(spec.values, vec![10.0, 20.0, 30.0]);
    }

    #[test]
    fn pn_free_crb_rows_follow_the_snr_slope() {
        let spec = desk_spec(vec![SweepFamily::CrbFree]);
        let rows = run_sweep(&spec);
        assert_eq!(rows.len(), 3);
        for pair in rows.windows(2) {
            let r0 = pair[0].cells[0].1;
            let r1 = pair[1].cells[0].1;
            // 10 dB per step: RMSE scales by 10^(-1/2).
            assert_relative_eq!(r1 / r0, 10f64.powf(-0.5), max_relative = 1e-9);
        }
        for row in &rows {
            assert_eq!(row.status, "ok");
        }
    }

    #[test]
    fn csv_has_header_plus_one_line_per_value() {
        let spec = SweepSpec {
            values: vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
            ..desk_spec(vec![SweepFamily::CrbFree])
        };
        let rows = run_sweep(&spec);
        let csv = render_csv(&rows, &spec.families, None).unwrap();
        assert_eq!(csv.lines().count(), 8);
        assert_eq!(
            csv.lines().next().unwrap(),
            "axis_value,crb_free_range_m,crb_free_vel_mps,n_real,n_excluded,status"
        );
    }

    #[test]
    fn documented_schema_column_order() {
        let families = vec![
            SweepFamily::CrbFree,
            SweepFamily::CrbHybrid,
            SweepFamily::LbAveraged,
        ];
        assert_eq!(
            columns(&families),
            vec![
                "axis_value",
                "crb_free_range_m",
                "crb_free_vel_mps",
                "crb_range_m",
                "crb_vel_mps",
                "lb_range_m",
                "lb_vel_mps",
                "n_real",
                "n_excluded",
                "status"
            ]
        );
    }

    #[test]
    fn repeated_runs_are_byte_identical() {
        let spec = desk_spec(vec![
            SweepFamily::CrbFree,
            SweepFamily::CrbHybrid,
            SweepFamily::LbAveraged,
        ]);
        let a = render_csv(&run_sweep(&spec), &spec.families, Some("det")).unwrap();
        let b = render_csv(&run_sweep(&spec), &spec.families, Some("det")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trips_values_exactly() {
        let spec = desk_spec(vec![SweepFamily::CrbFree, SweepFamily::CrbHybrid]);
        let rows = run_sweep(&spec);
        let json = render_json(&rows, &spec).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&json).unwrap();
        let parsed_rows = doc["rows"].as_array().unwrap();
        assert_eq!(parsed_rows.len(), rows.len());
        for (row, parsed) in rows.iter().zip(parsed_rows) {
            assert_eq!(parsed["axis_value"].as_f64().unwrap(), row.axis_value);
            for (col, value) in &row.cells {
                assert_eq!(parsed[col].as_f64().unwrap(), *value, "column {col}");
            }
            assert_eq!(parsed["n_real"].as_u64().unwrap() as usize, row.n_real);
            assert_eq!(parsed["status"].as_str().unwrap(), row.status);
        }
        assert_eq!(
            doc["metadata"]["config_hash"].as_str().unwrap(),
            config_hash(&spec)
        );
    }

    #[test]
    fn per_point_failure_is_isolated() {
        // Range axis with one point beyond the CP limit: the rmse family
        // fails there (observation synthesis is CP-checked), bounds do not.
        let spec = SweepSpec {
            axis: SweepAxis::TargetRange,
            values: vec![50.0, 120.0],
            n_trials: 2,
            families: vec![SweepFamily::CrbFree, SweepFamily::Rmse],
            ..desk_spec(vec![])
        };
        let rows = run_sweep(&spec);
        assert_eq!(rows[0].status, "ok");
        assert!(rows[1].status.contains("rmse"), "{}", rows[1].status);
        assert!(rows[1].cells[0].1.is_finite(), "crb_free must still fill");
        assert!(rows[1].cells[2].1.is_nan(), "rmse range cell must be NaN");
        let csv = render_csv(&rows, &spec.families, None).unwrap();
        assert!(csv.contains("NaN"));
    }

    #[test]
    fn config_hash_tracks_spec_changes() {
        let a = SweepSpec::default();
        let mut b = SweepSpec::default();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.master_seed = 2;
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn emit_rejects_empty_rows() {
        assert!(matches!(
            render_csv(&[], &[SweepFamily::CrbFree], None),
            Err(EmitError::NoRows)
        ));
    }
}
