//! Experiment orchestration: parameter sweeps, one CSV per curve and a JSON
//! run manifest with the SHA-256 digest of every output.

mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{ChannelSynthesizer, TxElement, WavefrontModel};
use crate::error::{Error, Result};
use crate::geometry::{rayleigh_distance_for_aperture, ScenarioConfig};
use crate::scattering::generate_scatterers;
use crate::statistics::{
    correlation, frequency_correlation, model_error_deltas, ro_complexity, CapacityNormalization,
    CorrelationEstimate, Estimator, GramEnsemble, MonteCarlo, SpatialLag,
};

pub use config::{load_run_config, validate_config, ConfigFile, RunConfig};

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_MODEL: WavefrontModel = WavefrontModel::Subarray { max_h: 30, max_v: 30 };
pub const MANIFEST_FILE: &str = "manifest.json";

/// Reference apertures (width x height, m) and carriers of the Rayleigh table.
pub const RAYLEIGH_APERTURES: [(f64, f64); 3] = [(1.0, 0.1), (1.0, 2.0), (2.0, 2.0)];
pub const RAYLEIGH_FREQUENCIES: [f64; 2] = [2.4e9, 5.0e9];

/// Square array sides compared by the capacity sweep.
pub const CAPACITY_SIDES: [usize; 3] = [16, 32, 64];

const MAX_SWEEP_POINTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RayleighTable,
    ErrorVsArray,
    ErrorVsSubarray,
    ComplexitySweep,
    SpatialCcf,
    TemporalAcf,
    FrequencyCf,
    CapacitySweep,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::RayleighTable,
        ExperimentKind::ErrorVsArray,
        ExperimentKind::ErrorVsSubarray,
        ExperimentKind::ComplexitySweep,
        ExperimentKind::SpatialCcf,
        ExperimentKind::TemporalAcf,
        ExperimentKind::FrequencyCf,
        ExperimentKind::CapacitySweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::RayleighTable => "rayleigh_table",
            ExperimentKind::ErrorVsArray => "error_vs_array",
            ExperimentKind::ErrorVsSubarray => "error_vs_subarray",
            ExperimentKind::ComplexitySweep => "complexity_sweep",
            ExperimentKind::SpatialCcf => "spatial_ccf",
            ExperimentKind::TemporalAcf => "temporal_acf",
            ExperimentKind::FrequencyCf => "frequency_cf",
            ExperimentKind::CapacitySweep => "capacity_sweep",
        }
    }

    /// Sweep used when none is given; `None` for the fixed Rayleigh table.
    pub fn default_sweep(self, cfg: &ScenarioConfig) -> Option<Sweep> {
        let values = match self {
            ExperimentKind::RayleighTable => return None,
            ExperimentKind::ErrorVsArray => vec![8.0, 16.0, 32.0, 64.0],
            ExperimentKind::ErrorVsSubarray => {
                let mut v = vec![1.0, 2.0, 4.0, 8.0, 16.0, 30.0];
                let largest = cfg.bs_horizontal.min(cfg.bs_vertical);
                v.retain(|&p| p as usize <= largest);
                v.push(largest as f64);
                v.dedup();
                v
            }
            ExperimentKind::ComplexitySweep => {
                let largest = cfg.bs_horizontal.min(cfg.bs_vertical);
                let mut v = vec![1.0, 2.0, 4.0, 8.0, 16.0, 30.0];
                v.retain(|&p| p as usize <= largest);
                v
            }
            ExperimentKind::SpatialCcf => {
                let largest = cfg.bs_horizontal.min(33) - 1;
                (0..=largest).map(|d| d as f64).collect()
            }
            ExperimentKind::TemporalAcf => (0..=50).map(|i| i as f64 * 1e-3).collect(),
            ExperimentKind::FrequencyCf => {
                let step = cfg.bandwidth / 50.0;
                (0..=25).map(|i| i as f64 * step).collect()
            }
            ExperimentKind::CapacitySweep => (0..=8).map(|i| -10.0 + 5.0 * i as f64).collect(),
        };
        Some(Sweep { values })
    }

    /// Name and unit of the swept axis, used as the first CSV column.
    pub fn axis_label(self) -> &'static str {
        match self {
            ExperimentKind::RayleighTable => "frequency_hz",
            ExperimentKind::ErrorVsArray => "array_side_elements",
            ExperimentKind::ErrorVsSubarray | ExperimentKind::ComplexitySweep => "p_max_elements",
            ExperimentKind::SpatialCcf => "spacing_wavelengths",
            ExperimentKind::TemporalAcf => "dt_s",
            ExperimentKind::FrequencyCf => "df_hz",
            ExperimentKind::CapacitySweep => "snr_db",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown experiment `{s}`")))
    }
}

/// Values of the swept axis.
///
/// Parsed either from a comma-separated list (`8,16,32`) or an inclusive
/// range `start:step:stop`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    values: Vec<f64>,
}

impl Sweep {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("sweep has no values".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("sweep value {v} is not finite")));
        }
        if values.len() > MAX_SWEEP_POINTS {
            return Err(Error::InvalidArgument(format!(
                "sweep has {} points, limit is {MAX_SWEEP_POINTS}",
                values.len()
            )));
        }
        Ok(Self { values })
    }

    pub fn range(start: f64, step: f64, stop: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() || !start.is_finite() || !stop.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sweep range {start}:{step}:{stop} needs finite bounds and a positive step"
            )));
        }
        if stop < start {
            return Err(Error::InvalidArgument(format!(
                "sweep range stop {stop} is below start {start}"
            )));
        }
        let span = (stop - start) / step;
        if span > MAX_SWEEP_POINTS as f64 {
            return Err(Error::InvalidArgument(format!(
                "sweep range has more than {MAX_SWEEP_POINTS} points"
            )));
        }
        let n = (span + 1e-9).floor() as usize + 1;
        Self::new((0..n).map(|i| start + i as f64 * step).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values as element counts in `1..=max`.
    fn counts(&self, what: &str, max: usize) -> Result<Vec<usize>> {
        self.values
            .iter()
            .map(|&v| {
                if v.fract() != 0.0 || v < 1.0 || v > max as f64 {
                    Err(Error::InvalidArgument(format!(
                        "{what} {v} must be an integer with 1 <= {what} <= {max}"
                    )))
                } else {
                    Ok(v as usize)
                }
            })
            .collect()
    }
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let number = |t: &str| -> Result<f64> {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad sweep value `{}`", t.trim())))
        };
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [start, step, stop] => Self::range(number(start)?, number(step)?, number(stop)?),
            [list] => Self::new(
                list.split(',')
                    .filter(|t| !t.trim().is_empty())
                    .map(number)
                    .collect::<Result<_>>()?,
            ),
            _ => Err(Error::InvalidArgument(format!(
                "sweep `{s}` is neither a list nor start:step:stop"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub kind: ExperimentKind,
    /// `None` selects [`ExperimentKind::default_sweep`].
    pub sweep: Option<Sweep>,
    pub seed: u64,
    pub realizations: usize,
    pub model: WavefrontModel,
    /// Observation time, s.
    pub t: f64,
    pub normalization: CapacityNormalization,
    pub output: PathBuf,
}

impl Experiment {
    pub fn new(kind: ExperimentKind, output: impl Into<PathBuf>) -> Self {
        Self {
            kind,
            sweep: None,
            seed: DEFAULT_SEED,
            realizations: MonteCarlo::DEFAULT_REALIZATIONS,
            model: DEFAULT_MODEL,
            t: 0.0,
            normalization: CapacityNormalization::Ensemble,
            output: output.into(),
        }
    }

    fn monte_carlo(&self) -> MonteCarlo {
        MonteCarlo::new(self.realizations, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub kind: ExperimentKind,
    pub sweep: Vec<f64>,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub realizations: usize,
    pub model: WavefrontModel,
    pub t: f64,
    pub capacity_normalization: String,
    pub config: ScenarioConfig,
    pub experiments: Vec<ExperimentRecord>,
}

impl RunManifest {
    fn new(exp: &Experiment, cfg: &ScenarioConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: exp.seed,
            realizations: exp.realizations,
            model: exp.model,
            t: exp.t,
            capacity_normalization: format!("{:?}", exp.normalization),
            config: cfg.clone(),
            experiments: Vec::new(),
        }
    }

    /// Every output file paired with its digest, across all experiments.
    pub fn digests(&self) -> impl Iterator<Item = &OutputDigest> {
        self.experiments.iter().flat_map(|e| &e.outputs)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }
}

/// CSV text with a header row; floats use the shortest round-trip form and
/// infinities are spelled `inf` / `-inf`.
struct Table {
    name: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.into_inner()
            .map_err(|e| Error::io("<csv buffer>", e.into_error()))
    }
}

pub fn format_number(x: f64) -> String {
    if x == f64::NEG_INFINITY {
        "-inf".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else {
        x.to_string()
    }
}

fn correlation_table(name: String, axis: &str) -> Table {
    Table::new(name, &[axis, "re", "im", "magnitude", "n_realizations", "seed"])
}

fn push_correlation(table: &mut Table, axis: f64, c: &CorrelationEstimate, seed: u64) {
    table.push(vec![
        format_number(axis),
        format_number(c.value.re),
        format_number(c.value.im),
        format_number(c.value.norm()),
        c.used.to_string(),
        seed.to_string(),
    ]);
}

/// Model name usable in a file name, e.g. `subarray-30x30`.
fn model_slug(model: WavefrontModel) -> String {
    model.to_string().replace(':', "-")
}

/// Models compared on correlation curves: both references plus the chosen one.
fn compared_models(model: WavefrontModel) -> Vec<WavefrontModel> {
    let mut models = vec![WavefrontModel::Spherical, WavefrontModel::Planar];
    if !models.contains(&model) {
        models.push(model);
    }
    models
}

/// Mean of dB values; a single `-inf` (exact match) makes the mean `-inf`.
fn mean_db(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn rayleigh_table() -> Table {
    let mut table = Table::new(
        "rayleigh_table.csv",
        &["frequency_hz", "width_m", "height_m", "rayleigh_distance_m"],
    );
    for &f in &RAYLEIGH_FREQUENCIES {
        for &(w, h) in &RAYLEIGH_APERTURES {
            table.push(vec![
                format_number(f),
                format_number(w),
                format_number(h),
                format_number(rayleigh_distance_for_aperture(w, h, f)),
            ]);
        }
    }
    table
}

/// Mean Δ (dB) of every model over the fields of `mc`, against the spherical
/// reference of `cfg`.
fn mean_deltas(
    models: &[WavefrontModel],
    t: f64,
    cfg: &ScenarioConfig,
    mc: MonteCarlo,
) -> Result<Vec<f64>> {
    let per_field = (0..mc.realizations as u64)
        .into_par_iter()
        .map(|i| {
            let field = generate_scatterers(cfg, mc.seed, i)?;
            model_error_deltas(models, t, cfg, &field)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..models.len())
        .map(|m| {
            let column: Vec<f64> = per_field.iter().map(|row| row[m]).collect();
            mean_db(&column)
        })
        .collect())
}

fn delta_header(axis: &str) -> [&str; 4] {
    [axis, "delta_db", "n_realizations", "seed"]
}

fn error_vs_array(exp: &Experiment, cfg: &ScenarioConfig, sweep: &Sweep) -> Result<Vec<Table>> {
    let sides = sweep.counts("array side", usize::MAX)?;
    let axis = ExperimentKind::ErrorVsArray.axis_label();
    let mut planar = Table::new("error_vs_array_planar.csv", &delta_header(axis));
    let mut chosen: Option<Table> = None;
    for side in sides {
        let sized = ScenarioConfig {
            bs_horizontal: side,
            bs_vertical: side,
            ..cfg.clone()
        };
        let mut models = vec![WavefrontModel::Planar];
        let model = exp.model.clamped_to(&sized);
        let compare = !matches!(exp.model, WavefrontModel::Planar | WavefrontModel::Spherical);
        if compare {
            models.push(model);
        }
        let deltas = mean_deltas(&models, exp.t, &sized, exp.monte_carlo())?;
        let row = |d: f64| {
            vec![
                side.to_string(),
                format_number(d),
                exp.realizations.to_string(),
                exp.seed.to_string(),
            ]
        };
        planar.push(row(deltas[0]));
        if compare {
            chosen
                .get_or_insert_with(|| {
                    Table::new(
                        format!("error_vs_array_{}.csv", model_slug(exp.model)),
                        &delta_header(axis),
                    )
                })
                .push(row(deltas[1]));
        }
    }
    Ok(std::iter::once(planar).chain(chosen).collect())
}

fn error_vs_subarray(exp: &Experiment, cfg: &ScenarioConfig, sweep: &Sweep) -> Result<Vec<Table>> {
    let largest = cfg.bs_horizontal.min(cfg.bs_vertical);
    let sizes = sweep.counts("p_max", largest)?;
    let models: Vec<WavefrontModel> = sizes
        .iter()
        .map(|&p| WavefrontModel::subarray(p, p))
        .chain([WavefrontModel::Planar])
        .collect();
    let deltas = mean_deltas(&models, exp.t, cfg, exp.monte_carlo())?;
    let axis = ExperimentKind::ErrorVsSubarray.axis_label();
    let mut table = Table::new("error_vs_subarray.csv", &delta_header(axis));
    for (p, d) in sizes.iter().zip(&deltas) {
        table.push(vec![
            p.to_string(),
            format_number(*d),
            exp.realizations.to_string(),
            exp.seed.to_string(),
        ]);
    }
    let mut planar = Table::new("error_vs_subarray_planar.csv", &["model", "delta_db", "n_realizations", "seed"]);
    planar.push(vec![
        "planar".into(),
        format_number(deltas[sizes.len()]),
        exp.realizations.to_string(),
        exp.seed.to_string(),
    ]);
    Ok(vec![table, planar])
}

fn complexity_sweep(cfg: &ScenarioConfig, sweep: &Sweep) -> Result<Vec<Table>> {
    let largest = cfg.bs_horizontal.min(cfg.bs_vertical);
    let sizes = sweep.counts("p_max", largest)?;
    let header = [
        ExperimentKind::ComplexitySweep.axis_label(),
        "ro_total",
        "ro_los_per_pair",
        "ro_nlos_per_pair",
        "angle_sets",
    ];
    let mut table = Table::new("complexity_sweep.csv", &header);
    for p in sizes {
        let r = ro_complexity(WavefrontModel::subarray(p, p), cfg)?;
        table.push(vec![
            p.to_string(),
            r.ro_total.to_string(),
            format_number(r.ro_los_per_pair),
            format_number(r.ro_nlos_per_pair),
            r.angle_sets.to_string(),
        ]);
    }
    let mut reference = Table::new(
        "complexity_reference.csv",
        &["model", "ro_total", "ro_los_per_pair", "ro_nlos_per_pair", "angle_sets"],
    );
    for model in [WavefrontModel::Spherical, WavefrontModel::Planar] {
        let r = ro_complexity(model, cfg)?;
        reference.push(vec![
            model.to_string(),
            r.ro_total.to_string(),
            format_number(r.ro_los_per_pair),
            format_number(r.ro_nlos_per_pair),
            r.angle_sets.to_string(),
        ]);
    }
    Ok(vec![table, reference])
}

fn spatial_ccf(exp: &Experiment, cfg: &ScenarioConfig, sweep: &Sweep) -> Result<Vec<Table>> {
    let offsets: Vec<usize> = sweep
        .values()
        .iter()
        .map(|&v| {
            if v.fract() != 0.0 || v < 0.0 || v >= cfg.bs_horizontal as f64 {
                Err(Error::InvalidArgument(format!(
                    "BS offset {v} must be an integer with 0 <= offset <= {}",
                    cfg.bs_horizontal - 1
                )))
            } else {
                Ok(v as usize)
            }
        })
        .collect::<Result<_>>()?;
    let fields = exp.monte_carlo().fields(cfg)?;
    let axis = ExperimentKind::SpatialCcf.axis_label();
    let lambda = cfg.wavelength();
    let mut tables = Vec::new();
    for model in compared_models(exp.model) {
        let synth = ChannelSynthesizer::new(cfg, model)?;
        let slug = model_slug(model);
        let mut bs = correlation_table(format!("spatial_ccf_bs_{slug}.csv"), axis);
        for &d in &offsets {
            let lag = SpatialLag { dp_h: d, ..SpatialLag::ZERO };
            let c = correlation(&synth, lag.pair(), exp.t, 0.0, &fields, Estimator::PathResolved)?;
            push_correlation(&mut bs, d as f64 * cfg.bs_spacing / lambda, &c, exp.seed);
        }
        let mut mr = correlation_table(format!("spatial_ccf_mr_{slug}.csv"), axis);
        for d in 0..cfg.mr_elements {
            let lag = SpatialLag { dq: d, ..SpatialLag::ZERO };
            let c = correlation(&synth, lag.pair(), exp.t, 0.0, &fields, Estimator::PathResolved)?;
            push_correlation(&mut mr, d as f64 * cfg.mr_spacing / lambda, &c, exp.seed);
        }
        tables.push(bs);
        tables.push(mr);
    }
    Ok(tables)
}

fn temporal_acf(exp: &Experiment, cfg: &ScenarioConfig, sweep: &Sweep) -> Result<Vec<Table>> {
    let fields = exp.monte_carlo().fields(cfg)?;
    let axis = ExperimentKind::TemporalAcf.axis_label();
    let mut tables = Vec::new();
    for model in compared_models(exp.model) {
        let synth = ChannelSynthesizer::new(cfg, model)?;
        let mut table = correlation_table(format!("temporal_acf_{}.csv", model_slug(model)), axis);
        for &dt in sweep.values() {
            let c = correlation(&synth, SpatialLag::ZERO.pair(), exp.t, dt, &fields, Estimator::PathResolved)?;
            push_correlation(&mut table, dt, &c, exp.seed);
        }
        tables.push(table);
    }
    Ok(tables)
}

fn frequency_cf(exp: &Experiment, cfg: &ScenarioConfig, sweep: &Sweep) -> Result<Vec<Table>> {
    let fields = exp.monte_carlo().fields(cfg)?;
    let axis = ExperimentKind::FrequencyCf.axis_label();
    let mut tables = Vec::new();
    for model in compared_models(exp.model) {
        let synth = ChannelSynthesizer::new(cfg, model)?;
        let mut table = correlation_table(format!("frequency_cf_{}.csv", model_slug(model)), axis);
        for &df in sweep.values() {
            let c = frequency_correlation(
                &synth,
                TxElement::new(1, 1),
                1,
                exp.t,
                df,
                &fields,
                Estimator::PathResolved,
            )?;
            push_correlation(&mut table, df, &c, exp.seed);
        }
        tables.push(table);
    }
    Ok(tables)
}

/// Channel Gram matrices of `mc.realizations` fields for one scenario.
pub fn gram_ensemble(
    cfg: &ScenarioConfig,
    model: WavefrontModel,
    t: f64,
    mc: MonteCarlo,
) -> Result<GramEnsemble> {
    let synth = ChannelSynthesizer::new(cfg, model)?;
    let matrices = (0..mc.realizations as u64)
        .into_par_iter()
        .map(|i| {
            let field = generate_scatterers(cfg, mc.seed, i)?;
            let h = synth.channel_matrix(t, &field)?.h;
            let mut single = GramEnsemble::new();
            single.push(&h)?;
            Ok(single)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ensemble = GramEnsemble::new();
    for part in matrices {
        ensemble.extend(part)?;
    }
    Ok(ensemble)
}

fn capacity_sweep(exp: &Experiment, cfg: &ScenarioConfig, sweep: &Sweep) -> Result<Vec<Table>> {
    let header = [
        ExperimentKind::CapacitySweep.axis_label(),
        "capacity_bps_hz",
        "n_realizations",
        "seed",
    ];
    let mut tables = Vec::new();
    for side in CAPACITY_SIDES {
        let sized = ScenarioConfig {
            bs_horizontal: side,
            bs_vertical: side,
            ..cfg.clone()
        };
        let ensemble = gram_ensemble(&sized, exp.model.clamped_to(&sized), exp.t, exp.monte_carlo())?;
        let mut table = Table::new(format!("capacity_sweep_{side}x{side}.csv"), &header);
        for &snr_db in sweep.values() {
            let snr = 10f64.powf(snr_db / 10.0);
            let c = ensemble.ergodic_capacity(snr, exp.normalization)?;
            table.push(vec![
                format_number(snr_db),
                format_number(c),
                exp.realizations.to_string(),
                exp.seed.to_string(),
            ]);
        }
        tables.push(table);
    }
    Ok(tables)
}

fn write_tables(dir: &Path, tables: &[Table]) -> Result<Vec<OutputDigest>> {
    tables
        .iter()
        .map(|table| {
            let bytes = table.to_bytes()?;
            let path = dir.join(&table.name);
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            Ok(OutputDigest {
                file: table.name.clone(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            })
        })
        .collect()
}

fn execute(exp: &Experiment, cfg: &ScenarioConfig) -> Result<ExperimentRecord> {
    let start = Instant::now();
    let sweep = match (&exp.sweep, exp.kind.default_sweep(cfg)) {
        (Some(_), None) => {
            return Err(Error::InvalidArgument(format!("{} takes no sweep", exp.kind)));
        }
        (Some(s), Some(_)) => Some(s.clone()),
        (None, default) => default,
    };
    let tables = match (exp.kind, &sweep) {
        (ExperimentKind::RayleighTable, _) => vec![rayleigh_table()],
        (ExperimentKind::ErrorVsArray, Some(s)) => error_vs_array(exp, cfg, s)?,
        (ExperimentKind::ErrorVsSubarray, Some(s)) => error_vs_subarray(exp, cfg, s)?,
        (ExperimentKind::ComplexitySweep, Some(s)) => complexity_sweep(cfg, s)?,
        (ExperimentKind::SpatialCcf, Some(s)) => spatial_ccf(exp, cfg, s)?,
        (ExperimentKind::TemporalAcf, Some(s)) => temporal_acf(exp, cfg, s)?,
        (ExperimentKind::FrequencyCf, Some(s)) => frequency_cf(exp, cfg, s)?,
        (ExperimentKind::CapacitySweep, Some(s)) => capacity_sweep(exp, cfg, s)?,
        (kind, None) => unreachable!("{kind} always has a sweep"),
    };
    let outputs = write_tables(&exp.output, &tables)?;
    Ok(ExperimentRecord {
        kind: exp.kind,
        sweep: sweep.map(|s| s.values).unwrap_or_default(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        outputs,
    })
}

fn prepare(exp: &Experiment, cfg: &ScenarioConfig) -> Result<()> {
    cfg.validate()?;
    if exp.realizations == 0 {
        return Err(Error::InvalidArgument("need at least one realization".into()));
    }
    if !exp.t.is_finite() || exp.t < 0.0 {
        return Err(Error::InvalidArgument(format!("time must be finite and >= 0, got {}", exp.t)));
    }
    // array-size sweeps clamp the model per size; correlations use it as given
    if matches!(
        exp.kind,
        ExperimentKind::SpatialCcf | ExperimentKind::TemporalAcf | ExperimentKind::FrequencyCf
    ) {
        exp.model.check(cfg)?;
    }
    fs::create_dir_all(&exp.output).map_err(|e| Error::io(&exp.output, e))
}

/// Runs one experiment, writing its CSV files and `manifest.json` into
/// `exp.output`.
pub fn run_experiment(exp: &Experiment, cfg: &ScenarioConfig) -> Result<RunManifest> {
    prepare(exp, cfg)?;
    let mut manifest = RunManifest::new(exp, cfg);
    manifest.experiments.push(execute(exp, cfg)?);
    manifest.write(&exp.output)?;
    Ok(manifest)
}

/// Runs every experiment kind with default sweeps into one directory and one
/// manifest. `template.kind` and `template.sweep` are ignored.
pub fn run_all(template: &Experiment, cfg: &ScenarioConfig) -> Result<RunManifest> {
    if template.sweep.is_some() {
        return Err(Error::InvalidArgument(
            "a custom sweep applies to a single experiment, not to `all`".into(),
        ));
    }
    prepare(template, cfg)?;
    let mut manifest = RunManifest::new(template, cfg);
    for kind in ExperimentKind::ALL {
        let exp = Experiment {
            kind,
            sweep: None,
            ..template.clone()
        };
        manifest.experiments.push(execute(&exp, cfg)?);
    }
    manifest.write(&template.output)?;
    Ok(manifest)
}

/// Writes the scatterer field of realization `stream` as CSV.
pub fn export_field(cfg: &ScenarioConfig, seed: u64, stream: u64, path: &Path) -> Result<()> {
    let field = generate_scatterers(cfg, seed, stream)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    field.write_csv(std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Binary,
}

/// Writes the channel matrix of realization `stream` at time `t`.
pub fn export_channel(
    cfg: &ScenarioConfig,
    model: WavefrontModel,
    seed: u64,
    stream: u64,
    t: f64,
    format: MatrixFormat,
    path: &Path,
) -> Result<()> {
    let field = generate_scatterers(cfg, seed, stream)?;
    let realization = ChannelSynthesizer::new(cfg, model)?.channel_matrix(t, &field)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let writer = std::io::BufWriter::new(file);
    match format {
        MatrixFormat::Csv => realization.write_csv(writer),
        MatrixFormat::Binary => realization.write_binary(writer),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ScenarioConfig {
        ScenarioConfig {
            bs_horizontal: 8,
            bs_vertical: 8,
            mr_elements: 2,
            clusters: 2,
            rays_per_cluster: 5,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn sweep_parsing() {
        assert_eq!(Sweep::from_str("8,16, 32").unwrap().values(), &[8.0, 16.0, 32.0]);
        assert_eq!(Sweep::from_str("0:0.5:2").unwrap().values(), &[0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(Sweep::from_str("0:0.1:0.3").unwrap().values().len(), 4);
        assert!(Sweep::from_str("").is_err());
        assert!(Sweep::from_str("1:0:3").is_err());
        assert!(Sweep::from_str("3:1:1").is_err());
        assert!(Sweep::from_str("a,b").is_err());
        assert!(Sweep::from_str("1:2").is_err());
        assert!(Sweep::from_str("0:1e-9:1").is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in ExperimentKind::ALL {
            assert_eq!(kind.name().parse::<ExperimentKind>().unwrap(), kind);
        }
        assert!("fig3".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(f64::NEG_INFINITY), "-inf");
        assert_eq!(format_number(0.25), "0.25");
        assert_eq!(format_number(-3.0), "-3");
    }

    #[test]
    fn mean_db_propagates_sentinel() {
        assert_eq!(mean_db(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(mean_db(&[1.0, 3.0]), 2.0);
    }

    #[test]
    fn rayleigh_experiment_writes_six_cells() {
        let dir = tempfile::tempdir().unwrap();
        let exp = Experiment::new(ExperimentKind::RayleighTable, dir.path());
        let manifest = run_experiment(&exp, &ScenarioConfig::default()).unwrap();
        let text = fs::read_to_string(dir.path().join("rayleigh_table.csv")).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("frequency_hz,width_m,height_m,rayleigh_distance_m"));
        assert_eq!(manifest.digests().count(), 1);
        assert!(dir.path().join(MANIFEST_FILE).exists());
    }

    #[test]
    fn rayleigh_experiment_rejects_a_sweep() {
        let dir = tempfile::tempdir().unwrap();
        let mut exp = Experiment::new(ExperimentKind::RayleighTable, dir.path());
        exp.sweep = Some(Sweep::new(vec![1.0]).unwrap());
        assert!(run_experiment(&exp, &ScenarioConfig::default()).is_err());
    }

    #[test]
    fn oversized_subarray_sweep_cites_bounds() {
        let dir = tempfile::tempdir().unwrap();
        let mut exp = Experiment::new(ExperimentKind::ComplexitySweep, dir.path());
        exp.sweep = Some(Sweep::new(vec![4.0, 9.0]).unwrap());
        let err = run_experiment(&exp, &small_cfg()).unwrap_err().to_string();
        assert!(err.contains("1 <= p_max <= 8"), "{err}");
    }

    #[test]
    fn error_vs_subarray_reports_sentinel_for_unit_subarrays() {
        let dir = tempfile::tempdir().unwrap();
        let mut exp = Experiment::new(ExperimentKind::ErrorVsSubarray, dir.path());
        exp.realizations = 3;
        exp.model = WavefrontModel::subarray(4, 4);
        let cfg = small_cfg();
        run_experiment(&exp, &cfg).unwrap();
        let text = fs::read_to_string(dir.path().join("error_vs_subarray.csv")).unwrap();
        let first = text.lines().nth(1).unwrap();
        assert!(first.starts_with("1,-inf,3,1"), "{first}");
        let last = text.lines().last().unwrap();
        assert!(last.starts_with("8,"), "{last}");
        let planar = fs::read_to_string(dir.path().join("error_vs_subarray_planar.csv")).unwrap();
        let planar_delta = planar.lines().nth(1).unwrap().split(',').nth(1).unwrap().to_string();
        assert_eq!(last.split(',').nth(1).unwrap(), planar_delta);
    }

    #[test]
    fn correlation_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut exp = Experiment::new(ExperimentKind::TemporalAcf, dir.path());
        exp.realizations = 4;
        exp.seed = 5;
        exp.model = WavefrontModel::subarray(4, 4);
        exp.sweep = Some("0,0.01".parse().unwrap());
        let manifest = run_experiment(&exp, &small_cfg()).unwrap();
        let files: Vec<_> = manifest.digests().map(|d| d.file.clone()).collect();
        assert_eq!(
            files,
            [
                "temporal_acf_spherical.csv",
                "temporal_acf_planar.csv",
                "temporal_acf_subarray-4x4.csv"
            ]
        );
        let text = fs::read_to_string(dir.path().join(&files[2])).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "dt_s,re,im,magnitude,n_realizations,seed");
        let zero: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(zero[0], "0");
        assert!((zero[3].parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(&zero[4..], ["4", "5"]);
    }

    #[test]
    fn unwritable_output_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let exp = Experiment::new(ExperimentKind::RayleighTable, blocker.join("sub"));
        assert!(matches!(run_experiment(&exp, &ScenarioConfig::default()), Err(Error::Io { .. })));
    }
}
