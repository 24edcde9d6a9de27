//! Channel statistics: space-time and frequency correlation, capacity, the
//! model-error metric against the spherical reference and the real-operation
//! (RO) complexity model.

use nalgebra::{Cholesky, DMatrix};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{ChannelRealization, ChannelSynthesizer, MrSnapshot, TxElement, WavefrontModel, LOS_ONLY_K};
use crate::error::{Error, Result};
use crate::geometry::{partition_counts, ScenarioConfig};
use crate::scattering::{generate_scatterers, ScattererField};

/// Monte Carlo settings: realization `i` draws its field from stream `i` of
/// `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MonteCarlo {
    pub realizations: usize,
    pub seed: u64,
}

impl MonteCarlo {
    pub const DEFAULT_REALIZATIONS: usize = 500;

    pub fn new(realizations: usize, seed: u64) -> Self {
        Self { realizations, seed }
    }

    /// Generates all fields; the result is independent of thread scheduling.
    pub fn fields(&self, cfg: &ScenarioConfig) -> Result<Vec<ScattererField>> {
        if self.realizations == 0 {
            return Err(Error::InvalidArgument("need at least one realization".into()));
        }
        (0..self.realizations as u64)
            .into_par_iter()
            .map(|i| generate_scatterers(cfg, self.seed, i))
            .collect()
    }
}

/// Power weights `K/(K+1)` and `1/(K+1)` of the LoS and NLoS correlation parts.
pub fn rician_power_weights(k: f64) -> (f64, f64) {
    if k >= LOS_ONLY_K {
        (1.0, 0.0)
    } else {
        (k / (k + 1.0), 1.0 / (k + 1.0))
    }
}

/// Antenna pair `(p, q)` and `(p', q')` being correlated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkPair {
    pub p: TxElement,
    pub q: usize,
    pub p2: TxElement,
    pub q2: usize,
}

/// Element offsets from the reference pair `(p, q) = ((1, 1), 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SpatialLag {
    pub dp_h: usize,
    pub dp_v: usize,
    pub dq: usize,
}

impl SpatialLag {
    pub const ZERO: SpatialLag = SpatialLag {
        dp_h: 0,
        dp_v: 0,
        dq: 0,
    };

    pub fn pair(self) -> LinkPair {
        LinkPair {
            p: TxElement::new(1, 1),
            q: 1,
            p2: TxElement::new(1 + self.dp_h, 1 + self.dp_v),
            q2: 1 + self.dq,
        }
    }
}

/// How the expectation of the normalized CIR product is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Estimator {
    /// Rician decomposition: the deterministic LoS phasor product weighted by
    /// `K/(K+1)` plus the ray-averaged NLoS phasor products weighted by
    /// `1/(K+1)`. Cross terms between distinct rays vanish under the uniform
    /// ray phases and are dropped.
    #[default]
    PathResolved,
    /// `E[h1 h2* / (|h1| |h2|)]` of the summed narrowband CIRs, averaged over
    /// the fields. Realizations with a zero-magnitude CIR are skipped.
    Composite,
}

/// LoS and NLoS parts of a correlation with their power weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RicianParts {
    pub los_weight: f64,
    pub los: Complex64,
    pub nlos_weight: f64,
    pub nlos: Complex64,
}

impl RicianParts {
    pub fn combined(&self) -> Complex64 {
        self.los * self.los_weight + self.nlos * self.nlos_weight
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationEstimate {
    pub value: Complex64,
    /// Present for [`Estimator::PathResolved`].
    pub parts: Option<RicianParts>,
    pub used: usize,
    pub excluded: usize,
}

fn mean(values: &[Complex64]) -> Complex64 {
    values.iter().sum::<Complex64>() / values.len() as f64
}

fn normalized_product(a: Complex64, b: Complex64) -> Option<Complex64> {
    let scale = a.norm() * b.norm();
    (scale > 0.0 && scale.is_finite()).then(|| a * b.conj() / scale)
}

/// Space-time correlation of `pair` between `t` and `t + dt` over the given
/// fields.
pub fn correlation(
    synth: &ChannelSynthesizer<'_>,
    pair: LinkPair,
    t: f64,
    dt: f64,
    fields: &[ScattererField],
    estimator: Estimator,
) -> Result<CorrelationEstimate> {
    if fields.is_empty() {
        return Err(Error::InvalidArgument("need at least one realization".into()));
    }
    if !(dt >= 0.0) {
        return Err(Error::InvalidArgument(format!("time lag must be >= 0, got {dt}")));
    }
    let cfg = synth.config();
    let k = synth.wavenumber();
    let now = MrSnapshot::at(cfg, t)?;
    let later = MrSnapshot::at(cfg, t + dt)?;
    let (w_los, w_nlos) = rician_power_weights(cfg.rician_k);

    match estimator {
        Estimator::PathResolved => {
            let a = synth.los_path(pair.p, pair.q, &now)?.phasor(k);
            let b = synth.los_path(pair.p2, pair.q2, &later)?.phasor(k);
            let los = a * b.conj();
            let per_field = fields
                .par_iter()
                .map(|field| {
                    let x = synth.nlos_paths(pair.p, pair.q, &now, field)?;
                    let y = synth.nlos_paths(pair.p2, pair.q2, &later, field)?;
                    let sum: Complex64 = x
                        .iter()
                        .zip(&y)
                        .map(|(u, v)| u.phasor(k) * v.phasor(k).conj())
                        .sum();
                    Ok(sum / x.len() as f64)
                })
                .collect::<Result<Vec<_>>>()?;
            let parts = RicianParts {
                los_weight: w_los,
                los,
                nlos_weight: w_nlos,
                nlos: mean(&per_field),
            };
            Ok(CorrelationEstimate {
                value: parts.combined(),
                parts: Some(parts),
                used: fields.len(),
                excluded: 0,
            })
        }
        Estimator::Composite => {
            let (a_los, a_nlos) = crate::channel::rician_weights(cfg.rician_k);
            let per_field = fields
                .par_iter()
                .map(|field| {
                    let h1 = synth.los_at(pair.p, pair.q, &now)? * a_los
                        + synth.nlos_at(pair.p, pair.q, &now, field)? * a_nlos;
                    let h2 = synth.los_at(pair.p2, pair.q2, &later)? * a_los
                        + synth.nlos_at(pair.p2, pair.q2, &later, field)? * a_nlos;
                    Ok(normalized_product(h1, h2))
                })
                .collect::<Result<Vec<_>>>()?;
            let used: Vec<Complex64> = per_field.iter().flatten().copied().collect();
            let excluded = per_field.len() - used.len();
            if used.is_empty() {
                return Err(Error::InvalidArgument(
                    "every realization produced a zero-magnitude CIR".into(),
                ));
            }
            Ok(CorrelationEstimate {
                value: mean(&used),
                parts: None,
                used: used.len(),
                excluded,
            })
        }
    }
}

/// Space-time cross-correlation at spatial offset `lag` from the reference
/// pair and time lag `dt`.
pub fn st_ccf(
    lag: SpatialLag,
    dt: f64,
    t: f64,
    cfg: &ScenarioConfig,
    model: WavefrontModel,
    mc: MonteCarlo,
) -> Result<CorrelationEstimate> {
    let synth = ChannelSynthesizer::new(cfg, model)?;
    let fields = mc.fields(cfg)?;
    correlation(&synth, lag.pair(), t, dt, &fields, Estimator::PathResolved)
}

/// Temporal autocorrelation of the reference pair.
pub fn temporal_acf(
    dt: f64,
    t: f64,
    cfg: &ScenarioConfig,
    model: WavefrontModel,
    mc: MonteCarlo,
) -> Result<CorrelationEstimate> {
    st_ccf(SpatialLag::ZERO, dt, t, cfg, model, mc)
}

/// Frequency correlation of link `(p, q)` between `f_c` and `f_c + df`.
pub fn frequency_correlation(
    synth: &ChannelSynthesizer<'_>,
    p: TxElement,
    q: usize,
    t: f64,
    df: f64,
    fields: &[ScattererField],
    estimator: Estimator,
) -> Result<CorrelationEstimate> {
    if fields.is_empty() {
        return Err(Error::InvalidArgument("need at least one realization".into()));
    }
    if !(df >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "frequency lag must be >= 0, got {df}"
        )));
    }
    let cfg = synth.config();
    let f1 = cfg.carrier_frequency;
    let f2 = f1 + df;
    synth.check_band(f1)?;
    synth.check_band(f2)?;
    let (k1, k2) = (cfg.wavenumber_at(f1), cfg.wavenumber_at(f2));
    let mr = MrSnapshot::at(cfg, t)?;
    let (w_los, w_nlos) = rician_power_weights(cfg.rician_k);

    match estimator {
        Estimator::PathResolved => {
            let los_path = synth.los_path(p, q, &mr)?;
            let los = los_path.phasor(k1) * los_path.phasor(k2).conj();
            let per_field = fields
                .par_iter()
                .map(|field| {
                    let paths = synth.nlos_paths(p, q, &mr, field)?;
                    let sum: Complex64 = paths
                        .iter()
                        .map(|u| u.phasor(k1) * u.phasor(k2).conj())
                        .sum();
                    Ok(sum / paths.len() as f64)
                })
                .collect::<Result<Vec<_>>>()?;
            let parts = RicianParts {
                los_weight: w_los,
                los,
                nlos_weight: w_nlos,
                nlos: mean(&per_field),
            };
            Ok(CorrelationEstimate {
                value: parts.combined(),
                parts: Some(parts),
                used: fields.len(),
                excluded: 0,
            })
        }
        Estimator::Composite => {
            let per_field = fields
                .par_iter()
                .map(|field| {
                    let h1 = synth.transfer_at(p, q, &mr, f1, field)?;
                    let h2 = synth.transfer_at(p, q, &mr, f2, field)?;
                    Ok(normalized_product(h1, h2))
                })
                .collect::<Result<Vec<_>>>()?;
            let used: Vec<Complex64> = per_field.iter().flatten().copied().collect();
            let excluded = per_field.len() - used.len();
            if used.is_empty() {
                return Err(Error::InvalidArgument(
                    "every realization produced a zero-magnitude response".into(),
                ));
            }
            Ok(CorrelationEstimate {
                value: mean(&used),
                parts: None,
                used: used.len(),
                excluded,
            })
        }
    }
}

/// Frequency correlation of the reference link `((1, 1), 1)`.
pub fn frequency_cf(
    df: f64,
    t: f64,
    cfg: &ScenarioConfig,
    model: WavefrontModel,
    mc: MonteCarlo,
) -> Result<CorrelationEstimate> {
    let synth = ChannelSynthesizer::new(cfg, model)?;
    let fields = mc.fields(cfg)?;
    frequency_correlation(&synth, TxElement::new(1, 1), 1, t, df, &fields, Estimator::PathResolved)
}

/// Correlation values sampled along one lag axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSeries {
    pub lag_axis: Vec<f64>,
    pub values: Vec<Complex64>,
    pub t: f64,
    pub model: WavefrontModel,
    pub realizations: usize,
    pub seed: u64,
    pub excluded: usize,
}

/// `log2 det(I_Q + scale * H H^H)` via a Cholesky factorization.
fn log2_det_identity_plus(h: &DMatrix<Complex64>, scale: f64) -> Result<f64> {
    log2_det_identity_plus_gram(&(h * h.adjoint()), scale)
}

/// `log2 det(I + scale * G)` for a Hermitian positive semidefinite `G`.
fn log2_det_identity_plus_gram(gram: &DMatrix<Complex64>, scale: f64) -> Result<f64> {
    let q = gram.nrows();
    let m = DMatrix::<Complex64>::identity(q, q) + gram * Complex64::from(scale);
    let chol = Cholesky::new(m).ok_or_else(|| {
        Error::InvalidArgument("I + scale * H H^H is not positive definite".into())
    })?;
    let l = chol.l();
    let ln_det: f64 = (0..q).map(|i| 2.0 * l[(i, i)].re.ln()).sum();
    Ok(ln_det / std::f64::consts::LN_2)
}

fn frobenius_sq(h: &DMatrix<Complex64>) -> f64 {
    h.iter().map(|z| z.norm_sqr()).sum()
}

fn check_capacity_inputs(h: &DMatrix<Complex64>, snr: f64) -> Result<f64> {
    if !(snr >= 0.0) || !snr.is_finite() {
        return Err(Error::InvalidArgument(format!("SNR must be finite and >= 0, got {snr}")));
    }
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidArgument("channel matrix has non-finite entries".into()));
    }
    let norm_sq = frobenius_sq(h);
    if norm_sq == 0.0 {
        return Err(Error::ZeroChannel);
    }
    Ok(norm_sq)
}

/// Capacity of a `Q x P` matrix after scaling it to `||H||_F^2 = P Q`, in
/// bit/s/Hz.
pub fn capacity_of_matrix(h: &DMatrix<Complex64>, snr: f64) -> Result<f64> {
    let norm_sq = check_capacity_inputs(h, snr)?;
    let (q, p) = (h.nrows() as f64, h.ncols() as f64);
    // rescale (P Q / ||H||^2) folded into the SNR factor rho / P
    log2_det_identity_plus(h, snr / p * (p * q / norm_sq))
}

pub fn capacity(realization: &ChannelRealization, snr: f64) -> Result<f64> {
    capacity_of_matrix(&realization.h, snr)
}

/// How the power normalization is applied when averaging capacity over an
/// ensemble of channel realizations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CapacityNormalization {
    /// Every realization is scaled to `||H||_F^2 = P Q` on its own.
    PerRealization,
    /// One common scale makes the ensemble mean of `||H||_F^2` equal `P Q`.
    #[default]
    Ensemble,
}

/// Gram matrices `H H^H` and squared norms of an ensemble of channels, enough
/// to evaluate the ergodic capacity at any SNR.
#[derive(Debug, Clone, Default)]
pub struct GramEnsemble {
    grams: Vec<DMatrix<Complex64>>,
    norms: Vec<f64>,
    shape: Option<(usize, usize)>,
}

impl GramEnsemble {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_matrices<'m>(matrices: impl IntoIterator<Item = &'m DMatrix<Complex64>>) -> Result<Self> {
        let mut ensemble = Self::new();
        for h in matrices {
            ensemble.push(h)?;
        }
        Ok(ensemble)
    }

    pub fn push(&mut self, h: &DMatrix<Complex64>) -> Result<()> {
        if *self.shape.get_or_insert(h.shape()) != h.shape() {
            return Err(Error::InvalidArgument("ensemble matrices differ in shape".into()));
        }
        let norm_sq = check_capacity_inputs(h, 0.0)?;
        self.grams.push(h * h.adjoint());
        self.norms.push(norm_sq);
        Ok(())
    }

    /// Appends every member of `other`.
    pub fn extend(&mut self, other: GramEnsemble) -> Result<()> {
        if let Some(shape) = other.shape {
            if *self.shape.get_or_insert(shape) != shape {
                return Err(Error::InvalidArgument("ensemble matrices differ in shape".into()));
            }
        }
        self.grams.extend(other.grams);
        self.norms.extend(other.norms);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    /// Mean capacity in bit/s/Hz.
    pub fn ergodic_capacity(&self, snr: f64, normalization: CapacityNormalization) -> Result<f64> {
        let (q, p) = self
            .shape
            .ok_or_else(|| Error::InvalidArgument("empty ensemble".into()))?;
        if !(snr >= 0.0) || !snr.is_finite() {
            return Err(Error::InvalidArgument(format!("SNR must be finite and >= 0, got {snr}")));
        }
        let (q, p) = (q as f64, p as f64);
        let mean_norm = self.norms.iter().sum::<f64>() / self.norms.len() as f64;
        let values = self
            .grams
            .iter()
            .zip(&self.norms)
            .map(|(gram, &norm_sq)| {
                let reference = match normalization {
                    CapacityNormalization::PerRealization => norm_sq,
                    CapacityNormalization::Ensemble => mean_norm,
                };
                log2_det_identity_plus_gram(gram, snr / p * (p * q / reference))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Mean capacity over an ensemble of matrices of the same shape.
pub fn ergodic_capacity(
    matrices: &[&DMatrix<Complex64>],
    snr: f64,
    normalization: CapacityNormalization,
) -> Result<f64> {
    GramEnsemble::from_matrices(matrices.iter().copied())?.ergodic_capacity(snr, normalization)
}

/// Normalized absolute error of `model` against the spherical reference, dB.
///
/// Both models share the same scatterer field. Returns `f64::NEG_INFINITY`
/// when the two channels coincide exactly.
pub fn model_error_delta(
    model: WavefrontModel,
    t: f64,
    cfg: &ScenarioConfig,
    field: &ScattererField,
) -> Result<f64> {
    Ok(model_error_deltas(&[model], t, cfg, field)?[0])
}

/// [`model_error_delta`] for several models against one spherical reference.
pub fn model_error_deltas(
    models: &[WavefrontModel],
    t: f64,
    cfg: &ScenarioConfig,
    field: &ScattererField,
) -> Result<Vec<f64>> {
    if models.contains(&WavefrontModel::Spherical) {
        return Err(Error::InvalidArgument(
            "the spherical model is the reference; compare another model".into(),
        ));
    }
    for model in models {
        model.check(cfg)?;
    }
    let reference = ChannelSynthesizer::new(cfg, WavefrontModel::Spherical)?.channel_matrix(t, field)?;
    let inverse: Vec<f64> = reference
        .h
        .iter()
        .map(|s| {
            let denom = s.norm();
            if denom == 0.0 {
                Err(Error::DegenerateGeometry(
                    "spherical reference CIR vanished; relative error undefined".into(),
                ))
            } else {
                Ok(1.0 / denom)
            }
        })
        .collect::<Result<_>>()?;
    models
        .iter()
        .map(|&model| {
            let candidate = ChannelSynthesizer::new(cfg, model)?.channel_matrix(t, field)?;
            let total: f64 = candidate
                .h
                .iter()
                .zip(reference.h.iter())
                .zip(&inverse)
                .map(|((h, s), inv)| (h - s).norm() * inv)
                .sum();
            Ok(if total == 0.0 {
                f64::NEG_INFINITY
            } else {
                10.0 * total.log10()
            })
        })
        .collect()
}

/// RO cost of one angle computation, broken down by operation kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoTally {
    pub additions: u64,
    pub divisions: u64,
    pub squares: u64,
    pub square_roots: u64,
    /// Arctangent evaluations; each costs [`RoTally::ARCTANGENT_COST`] ROs.
    pub arctangents: u64,
    pub assignments: u64,
}

impl RoTally {
    pub const ARCTANGENT_COST: u64 = 16;

    pub const fn total(&self) -> u64 {
        self.additions
            + self.divisions
            + self.squares
            + self.square_roots
            + self.arctangents * Self::ARCTANGENT_COST
            + self.assignments
    }
}

/// Azimuth and elevation of departure toward the MR for one subarray.
pub const LOS_ANGLE_TALLY: RoTally = RoTally {
    additions: 6,
    divisions: 2,
    squares: 2,
    square_roots: 1,
    arctangents: 2,
    assignments: 4,
};

/// Departure and arrival angles of one scattered path for one subarray.
pub const NLOS_ANGLE_TALLY: RoTally = RoTally {
    additions: 10,
    divisions: 4,
    squares: 4,
    square_roots: 2,
    arctangents: 4,
    assignments: 4,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub ro_total: u64,
    /// Average LoS angle cost per antenna pair.
    pub ro_los_per_pair: f64,
    /// Average NLoS angle cost per antenna pair.
    pub ro_nlos_per_pair: f64,
    /// Number of distinct BS angle sets (subarrays).
    pub angle_sets: u64,
    pub model: WavefrontModel,
}

/// RO count for generating the angle parameters of every BS-MR pair.
pub fn ro_complexity(model: WavefrontModel, cfg: &ScenarioConfig) -> Result<ComplexityReport> {
    cfg.validate()?;
    model.check(cfg)?;
    let angle_sets = match model {
        WavefrontModel::Spherical => cfg.bs_elements() as u64,
        WavefrontModel::Planar => 1,
        WavefrontModel::Subarray { max_h, max_v } => {
            (partition_counts(cfg.bs_horizontal, max_h)? * partition_counts(cfg.bs_vertical, max_v)?)
                as u64
        }
    };
    let los = LOS_ANGLE_TALLY.total();
    let nlos = NLOS_ANGLE_TALLY.total();
    let share = angle_sets as f64 / cfg.bs_elements() as f64;
    Ok(ComplexityReport {
        ro_total: angle_sets * cfg.mr_elements as u64 * (los + nlos),
        ro_los_per_pair: los as f64 * share,
        ro_nlos_per_pair: nlos as f64 * share,
        angle_sets,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::scattering::Ray;
    use std::f64::consts::PI;

    fn small_cfg() -> ScenarioConfig {
        ScenarioConfig {
            bs_horizontal: 6,
            bs_vertical: 4,
            mr_elements: 3,
            ..ScenarioConfig::default()
        }
    }

    fn single_ray_field(position: Vec3, phase: f64) -> ScattererField {
        ScattererField::from_clusters(vec![vec![Ray { position, phase }]])
    }

    #[test]
    fn tallies_match_published_totals() {
        assert_eq!(LOS_ANGLE_TALLY.total(), 47);
        assert_eq!(NLOS_ANGLE_TALLY.total(), 88);
    }

    #[test]
    fn complexity_examples() {
        let cfg = ScenarioConfig::default();
        let sph = ro_complexity(WavefrontModel::Spherical, &cfg).unwrap();
        assert_eq!(sph.ro_total, 64 * 64 * 4 * 135);
        assert_eq!(sph.ro_total, 2_211_840);
        assert_eq!(sph.ro_los_per_pair, 47.0);
        let sub = ro_complexity(WavefrontModel::subarray(30, 30), &cfg).unwrap();
        assert_eq!(sub.ro_total, 4_860);
        assert_eq!(sub.angle_sets, 9);
        let unit = ro_complexity(WavefrontModel::subarray(1, 1), &cfg).unwrap();
        assert_eq!(unit.ro_total, sph.ro_total);
        let planar = ro_complexity(WavefrontModel::Planar, &cfg).unwrap();
        assert_eq!(planar.ro_total, 4 * 135);
        assert!(ro_complexity(WavefrontModel::subarray(65, 1), &cfg).is_err());
    }

    #[test]
    fn complexity_is_nonincreasing_in_subarray_size() {
        let cfg = ScenarioConfig::default();
        let mut prev = u64::MAX;
        for p in 1..=cfg.bs_horizontal {
            let r = ro_complexity(WavefrontModel::subarray(p, p), &cfg).unwrap().ro_total;
            assert!(r <= prev, "p={p}");
            prev = r;
        }
    }

    #[test]
    fn zero_lag_correlations_are_one() {
        let cfg = small_cfg();
        let mc = MonteCarlo::new(20, 3);
        for model in [WavefrontModel::Spherical, WavefrontModel::subarray(2, 2)] {
            let c = st_ccf(SpatialLag::ZERO, 0.0, 0.5, &cfg, model, mc).unwrap();
            assert!((c.value - Complex64::new(1.0, 0.0)).norm() < 1e-9);
            let a = temporal_acf(0.0, 1.0, &cfg, model, mc).unwrap();
            assert!((a.value - Complex64::new(1.0, 0.0)).norm() < 1e-9);
            let f = frequency_cf(0.0, 0.0, &cfg, model, mc).unwrap();
            assert!((f.value - Complex64::new(1.0, 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn path_resolved_estimate_splits_into_rician_parts() {
        let cfg = small_cfg();
        let mc = MonteCarlo::new(30, 9);
        let lag = SpatialLag { dp_h: 2, dp_v: 1, dq: 1 };
        let c = st_ccf(lag, 0.01, 0.0, &cfg, WavefrontModel::subarray(3, 2), mc).unwrap();
        let parts = c.parts.unwrap();
        assert_eq!(parts.los_weight, 0.5);
        assert_eq!(parts.nlos_weight, 0.5);
        assert!((parts.los.norm() - 1.0).abs() < 1e-12);
        assert!(parts.nlos.norm() <= 1.0 + 1e-12);
        assert!(c.value.norm() <= 1.0 + 1e-9);
    }

    #[test]
    fn single_ray_nlos_matches_closed_form() {
        let cfg = ScenarioConfig {
            rician_k: 0.0,
            clusters: 1,
            rays_per_cluster: 1,
            ..small_cfg()
        };
        let position = Vec3::new(20.0, -6.0, 4.0);
        let field = single_ray_field(position, -0.4);
        let synth = ChannelSynthesizer::new(&cfg, WavefrontModel::Spherical).unwrap();
        let pair = SpatialLag { dp_h: 3, dp_v: 0, dq: 2 }.pair();
        let (t, dt) = (0.2, 0.05);
        let c = correlation(&synth, pair, t, dt, &[field.clone()], Estimator::PathResolved).unwrap();

        // closed form: phase difference of the two path phasors, random phase cancels
        let k = 2.0 * PI * cfg.carrier_frequency / cfg.speed_of_light;
        let phase = |p: TxElement, q: usize, time: f64| -> f64 {
            let mr = MrSnapshot::at(&cfg, time).unwrap();
            let anchor =
                crate::geometry::bs_element_position(p.h, p.v, &cfg).unwrap();
            let e = mr.elements[q - 1];
            let kh = crate::geometry::centered_index(cfg.bs_horizontal, p.h);
            let kv = crate::geometry::centered_index(cfg.bs_vertical, p.v);
            let kq = crate::geometry::centered_index(cfg.mr_elements, q);
            let a_t = (position.y - anchor.y).atan2(position.x - anchor.x);
            let b_t = ((position.z - anchor.z)
                / ((position.x - anchor.x).powi(2) + (position.y - anchor.y).powi(2)).sqrt())
            .atan();
            let a_r = (position.y - e.y).atan2(position.x - e.x);
            let b_r = ((position.z - e.z)
                / ((position.x - e.x).powi(2) + (position.y - e.y).powi(2)).sqrt())
            .atan();
            let xi_r = (position - mr.center).norm();
            -k * xi_r
                + k * kh * cfg.bs_spacing * (a_t - cfg.bs_orientation).cos() * b_t.cos()
                + k * kv * cfg.bs_spacing * b_t.sin()
                + k * kq * cfg.mr_spacing * (a_r - cfg.mr_orientation).cos() * b_r.cos() * cfg.mr_tilt.cos()
                + k * kq * cfg.mr_spacing * b_r.sin() * cfg.mr_tilt.sin()
                + k * cfg.mr_speed * time * (a_r - cfg.mr_direction).cos() * b_r.cos()
        };
        let expected = Complex64::from_polar(1.0, phase(pair.p, pair.q, t) - phase(pair.p2, pair.q2, t + dt));
        assert!((c.value - expected).norm() < 1e-10, "{} vs {expected}", c.value);
        // the composite estimator agrees for one ray
        let d = correlation(&synth, pair, t, dt, &[field], Estimator::Composite).unwrap();
        assert!((d.value - expected).norm() < 1e-10);
    }

    #[test]
    fn static_los_channel_is_fully_correlated_in_time() {
        let cfg = ScenarioConfig {
            rician_k: 1e12,
            mr_speed: 0.0,
            ..small_cfg()
        };
        let mc = MonteCarlo::new(3, 1);
        for &dt in &[0.0, 0.01, 0.5, 3.0] {
            let a = temporal_acf(dt, 0.0, &cfg, WavefrontModel::Planar, mc).unwrap();
            assert!((a.value - Complex64::new(1.0, 0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn moving_los_channel_matches_phase_difference() {
        let cfg = ScenarioConfig {
            rician_k: 1e12,
            ..small_cfg()
        };
        let mc = MonteCarlo::new(2, 1);
        let synth = ChannelSynthesizer::new(&cfg, WavefrontModel::Spherical).unwrap();
        for &dt in &[0.001, 0.02, 0.3] {
            let a = temporal_acf(dt, 0.5, &cfg, WavefrontModel::Spherical, mc).unwrap();
            let h1 = synth.cir_los(TxElement::new(1, 1), 1, 0.5).unwrap();
            let h2 = synth.cir_los(TxElement::new(1, 1), 1, 0.5 + dt).unwrap();
            let expected = h1 * h2.conj();
            assert!((a.value - expected).norm() < 1e-9);
            assert!((a.value.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn two_ray_frequency_correlation_is_cosine() {
        let cfg = ScenarioConfig {
            rician_k: 1.0,
            clusters: 1,
            rays_per_cluster: 1,
            ..small_cfg()
        };
        let field = single_ray_field(Vec3::new(-15.0, 12.0, 6.0), 2.0);
        let synth = ChannelSynthesizer::new(&cfg, WavefrontModel::Spherical).unwrap();
        let p = TxElement::new(1, 1);
        let cir = synth.cir_total(p, 1, 0.0, &field).unwrap();
        let gap = cir.tau_nlos[0] - cir.tau_los;
        for i in 0..=25 {
            let df = i as f64 * 1e6;
            let c = frequency_correlation(&synth, p, 1, 0.0, df, &[field.clone()], Estimator::PathResolved)
                .unwrap();
            let expected = (PI * df * gap).cos().abs();
            assert!((c.value.norm() - expected).abs() < 1e-9, "df={df}");
        }
    }

    #[test]
    fn single_path_frequency_correlation_has_unit_modulus() {
        let cfg = ScenarioConfig {
            rician_k: 1e12,
            ..small_cfg()
        };
        let mc = MonteCarlo::new(2, 4);
        for i in 0..=10 {
            let c = frequency_cf(i as f64 * 2.5e6, 1.0, &cfg, WavefrontModel::Planar, mc).unwrap();
            assert!((c.value.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frequency_lag_outside_band_is_rejected() {
        let cfg = small_cfg();
        let mc = MonteCarlo::new(2, 4);
        assert!(frequency_cf(30e6, 0.0, &cfg, WavefrontModel::Planar, mc).is_err());
        assert!(frequency_cf(-1.0, 0.0, &cfg, WavefrontModel::Planar, mc).is_err());
    }

    #[test]
    fn zero_realizations_is_an_error() {
        let cfg = small_cfg();
        assert!(temporal_acf(0.0, 0.0, &cfg, WavefrontModel::Planar, MonteCarlo::new(0, 1)).is_err());
    }

    /// Eigenvalues of a 2x2 Hermitian matrix from its trace and determinant.
    fn hermitian_2x2_eigenvalues(m: &DMatrix<Complex64>) -> (f64, f64) {
        let a = m[(0, 0)].re;
        let d = m[(1, 1)].re;
        let b = m[(0, 1)];
        let mid = 0.5 * (a + d);
        let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
        (mid + rad, mid - rad)
    }

    #[test]
    fn capacity_examples() {
        let h = DMatrix::from_fn(1, 8, |_, j| Complex64::from_polar(0.3 + j as f64, j as f64));
        assert_eq!(capacity_of_matrix(&h, 0.0).unwrap(), 0.0);
        for &snr in &[0.0, 1.0, 10.0, 100.0] {
            let c = capacity_of_matrix(&h, snr).unwrap();
            assert!((c - (1.0 + snr).log2()).abs() < 1e-9);
        }
        // two orthogonal rows of equal norm
        let p = 6;
        let h = DMatrix::from_fn(2, p, |i, j| {
            Complex64::from_polar(1.7, 2.0 * PI * (i * j) as f64 / p as f64)
        });
        let snr = 7.0;
        let norm_sq: f64 = h.iter().map(|z| z.norm_sqr()).sum();
        let scaled = &h * Complex64::from((2.0 * p as f64 / norm_sq).sqrt());
        let gram = &scaled * scaled.adjoint();
        let (l1, l2) = hermitian_2x2_eigenvalues(&gram);
        let expected = (1.0 + snr / p as f64 * l1).log2() + (1.0 + snr / p as f64 * l2).log2();
        let c = capacity_of_matrix(&h, snr).unwrap();
        assert!((c - expected).abs() < 1e-12);
        assert!((c - 2.0 * (1.0 + snr).log2()).abs() < 1e-12);
    }

    #[test]
    fn capacity_errors() {
        let zero = DMatrix::<Complex64>::zeros(2, 3);
        assert!(matches!(capacity_of_matrix(&zero, 1.0), Err(Error::ZeroChannel)));
        let h = DMatrix::from_element(2, 3, Complex64::new(1.0, 0.0));
        assert!(capacity_of_matrix(&h, -1.0).is_err());
        let mut bad = h.clone();
        bad[(0, 0)] = Complex64::new(f64::NAN, 0.0);
        assert!(capacity_of_matrix(&bad, 1.0).is_err());
    }

    #[test]
    fn ensemble_normalization_of_single_matrix_is_per_realization() {
        let h = DMatrix::from_fn(3, 5, |i, j| Complex64::new((i + 2 * j) as f64 * 0.1 + 0.05, i as f64 - 0.5 * j as f64));
        for &snr in &[0.5, 3.0, 40.0] {
            let a = capacity_of_matrix(&h, snr).unwrap();
            let b = ergodic_capacity(&[&h], snr, CapacityNormalization::Ensemble).unwrap();
            let c = ergodic_capacity(&[&h], snr, CapacityNormalization::PerRealization).unwrap();
            assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_sentinel_and_reference_rejection() {
        let cfg = small_cfg();
        let field = generate_scatterers(&cfg, 2, 0).unwrap();
        let d = model_error_delta(WavefrontModel::subarray(1, 1), 0.0, &cfg, &field).unwrap();
        assert_eq!(d, f64::NEG_INFINITY);
        assert!(model_error_delta(WavefrontModel::Spherical, 0.0, &cfg, &field).is_err());
        let planar = model_error_delta(WavefrontModel::Planar, 0.0, &cfg, &field).unwrap();
        assert!(planar.is_finite());
    }
}
