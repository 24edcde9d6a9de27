//! Complex channel impulse responses under the spherical, planar and
//! subarray-decomposed wavefront models.
//!
//! Every path coefficient is a product of unit phasors: the bulk propagation
//! phase over the midpoint-to-midpoint path length, the BS steering terms
//! (evaluated with the angles seen from the anchor of the transmitting
//! element), the MR steering terms and the Doppler term. The three wavefront
//! models differ only in where the BS anchors sit:
//!
//! * spherical: one anchor per element,
//! * planar: a single anchor at the array midpoint,
//! * subarray: one anchor per subarray midpoint.
//!
//! Columns of the channel matrix are linearized as `p = (p_v - 1) * P_h + p_h`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    bs_element_position, centered_index, direction_cosines, los_arrival, mr_element_position,
    ray_angles, AngleConvention, Angles, ScenarioConfig, SubarrayPartition, Vec3,
};
use crate::scattering::{Ray, ScattererField};

/// Rician factors at or above this are treated as a pure LoS channel.
pub const LOS_ONLY_K: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WavefrontModel {
    Spherical,
    Planar,
    /// Largest subarray spans `max_h x max_v` elements.
    Subarray { max_h: usize, max_v: usize },
}

impl WavefrontModel {
    pub fn subarray(max_h: usize, max_v: usize) -> Self {
        WavefrontModel::Subarray { max_h, max_v }
    }

    /// Checks subarray dimensions against the array of `cfg`.
    pub fn check(&self, cfg: &ScenarioConfig) -> Result<()> {
        if let WavefrontModel::Subarray { max_h, max_v } = *self {
            if max_h == 0 || max_h > cfg.bs_horizontal || max_v == 0 || max_v > cfg.bs_vertical {
                return Err(Error::InvalidArgument(format!(
                    "subarray {max_h}x{max_v} outside the array bounds: the largest \
                     subarray must satisfy 1 <= size <= {} horizontally and \
                     1 <= size <= {} vertically",
                    cfg.bs_horizontal, cfg.bs_vertical
                )));
            }
        }
        Ok(())
    }

    /// Same model with subarray sizes clamped to the array of `cfg`.
    pub fn clamped_to(&self, cfg: &ScenarioConfig) -> Self {
        match *self {
            WavefrontModel::Subarray { max_h, max_v } => WavefrontModel::Subarray {
                max_h: max_h.clamp(1, cfg.bs_horizontal),
                max_v: max_v.clamp(1, cfg.bs_vertical),
            },
            other => other,
        }
    }
}

impl fmt::Display for WavefrontModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WavefrontModel::Spherical => f.write_str("spherical"),
            WavefrontModel::Planar => f.write_str("planar"),
            WavefrontModel::Subarray { max_h, max_v } => write!(f, "subarray:{max_h}x{max_v}"),
        }
    }
}

impl FromStr for WavefrontModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "spherical" => return Ok(WavefrontModel::Spherical),
            "planar" => return Ok(WavefrontModel::Planar),
            _ => {}
        }
        let bad = || {
            Error::InvalidArgument(format!(
                "unknown model `{s}` (expected spherical, planar or subarray:HxV)"
            ))
        };
        let dims = s.strip_prefix("subarray:").ok_or_else(bad)?;
        let (h, v) = dims.split_once(['x', 'X']).ok_or_else(bad)?;
        let max_h = h.trim().parse().map_err(|_| bad())?;
        let max_v = v.trim().parse().map_err(|_| bad())?;
        if max_h == 0 || max_v == 0 {
            return Err(bad());
        }
        Ok(WavefrontModel::Subarray { max_h, max_v })
    }
}

impl TryFrom<String> for WavefrontModel {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<WavefrontModel> for String {
    fn from(m: WavefrontModel) -> String {
        m.to_string()
    }
}

/// BS element `(h, v)`, both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TxElement {
    pub h: usize,
    pub v: usize,
}

impl TxElement {
    pub const fn new(h: usize, v: usize) -> Self {
        Self { h, v }
    }

    /// 1-based column `(v - 1) * P_h + h` of the channel matrix.
    pub fn column(self, cfg: &ScenarioConfig) -> usize {
        (self.v - 1) * cfg.bs_horizontal + self.h
    }

    pub fn from_column(p: usize, cfg: &ScenarioConfig) -> Result<Self> {
        if p == 0 || p > cfg.bs_elements() {
            return Err(Error::InvalidArgument(format!(
                "column {p} outside 1..={}",
                cfg.bs_elements()
            )));
        }
        Ok(Self {
            h: (p - 1) % cfg.bs_horizontal + 1,
            v: (p - 1) / cfg.bs_horizontal + 1,
        })
    }
}

/// Linear LoS/NLoS amplitude weights `sqrt(K/(K+1))`, `sqrt(1/(K+1))`.
pub fn rician_weights(k: f64) -> (f64, f64) {
    if k >= LOS_ONLY_K {
        (1.0, 0.0)
    } else {
        ((k / (k + 1.0)).sqrt(), (1.0 / (k + 1.0)).sqrt())
    }
}

/// MR array state at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct MrSnapshot {
    /// Time used by the Doppler term, s.
    pub t: f64,
    pub center: Vec3,
    /// Element positions, index `q - 1`.
    pub elements: Vec<Vec3>,
}

impl MrSnapshot {
    pub fn at(cfg: &ScenarioConfig, t: f64) -> Result<Self> {
        let elements = (1..=cfg.mr_elements)
            .map(|q| mr_element_position(q, t, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            t,
            center: cfg.mr_center(t),
            elements,
        })
    }

    /// Rigidly translated copy carrying Doppler time `t`.
    pub fn translated(&self, offset: Vec3, t: f64) -> Self {
        Self {
            t,
            center: self.center + offset,
            elements: self.elements.iter().map(|&e| e + offset).collect(),
        }
    }
}

/// Propagation path split into its length and its length-independent phase.
///
/// The full coefficient at frequency `f` is `exp(j (steering - 2 pi f length / c))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathTerms {
    /// Midpoint-to-midpoint path length, m.
    pub length: f64,
    /// Random phase, steering and Doppler phase, rad.
    pub steering: f64,
}

impl PathTerms {
    pub fn phase(&self, wavenumber: f64) -> f64 {
        self.steering - wavenumber * self.length
    }

    pub fn phasor(&self, wavenumber: f64) -> Complex64 {
        Complex64::from_polar(1.0, self.phase(wavenumber))
    }

    pub fn delay(&self, speed_of_light: f64) -> f64 {
        self.length / speed_of_light
    }
}

/// Weighted LoS and NLoS parts of one CIR with their delays.
#[derive(Debug, Clone, PartialEq)]
pub struct CirComponents {
    pub los: Complex64,
    pub nlos: Complex64,
    pub tau_los: f64,
    pub tau_nlos: Vec<f64>,
}

impl CirComponents {
    /// Narrowband coefficient: both parts summed at a single tap.
    pub fn combined(&self) -> Complex64 {
        self.los + self.nlos
    }
}

/// One channel matrix snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub t: f64,
    /// `Q x (P_h * P_v)`.
    pub h: DMatrix<Complex64>,
    pub tau_los: f64,
    pub tau_nlos: Vec<f64>,
    pub model: WavefrontModel,
}

impl ChannelRealization {
    pub fn rx_count(&self) -> usize {
        self.h.nrows()
    }

    pub fn tx_count(&self) -> usize {
        self.h.ncols()
    }

    /// Writes `p,q,re,im` rows with 1-based indices.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["p", "q", "re", "im"])?;
        for q in 0..self.h.nrows() {
            for p in 0..self.h.ncols() {
                let v = self.h[(q, p)];
                w.write_record([
                    (p + 1).to_string(),
                    (q + 1).to_string(),
                    v.re.to_string(),
                    v.im.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Raw dump: for each row `q`, for each column `p`, the real then the
    /// imaginary part as little-endian IEEE-754 binary64. No header.
    pub fn write_binary<W: Write>(&self, mut writer: W) -> Result<()> {
        let mut buf = Vec::with_capacity(16 * self.h.len());
        for q in 0..self.h.nrows() {
            for p in 0..self.h.ncols() {
                let v = self.h[(q, p)];
                buf.extend_from_slice(&v.re.to_le_bytes());
                buf.extend_from_slice(&v.im.to_le_bytes());
            }
        }
        writer.write_all(&buf).map_err(|e| Error::io("<binary>", e))
    }

    /// Inverse of [`ChannelRealization::write_binary`] for a known shape.
    pub fn read_binary_matrix(bytes: &[u8], rows: usize, cols: usize) -> Result<DMatrix<Complex64>> {
        if bytes.len() != rows * cols * 16 {
            return Err(Error::InvalidArgument(format!(
                "expected {} bytes for a {rows}x{cols} matrix, got {}",
                rows * cols * 16,
                bytes.len()
            )));
        }
        let value = |i: usize| f64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
        Ok(DMatrix::from_fn(rows, cols, |q, p| {
            let i = 2 * (q * cols + p);
            Complex64::new(value(i), value(i + 1))
        }))
    }
}

/// Evaluates CIRs for one scenario under one wavefront model.
#[derive(Debug, Clone)]
pub struct ChannelSynthesizer<'a> {
    cfg: &'a ScenarioConfig,
    model: WavefrontModel,
    anchors: Vec<Vec3>,
    /// Anchor index per matrix column (`p - 1`).
    anchor_of: Vec<usize>,
    /// Element block served by each anchor.
    groups: Vec<AnchorGroup>,
    /// `(cos, sin)` of the BS orientation.
    orientation: (f64, f64),
    wavenumber: f64,
}

/// Rectangular block of BS elements sharing one anchor; 0-based, end exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct AnchorGroup {
    h: (usize, usize),
    v: (usize, usize),
}

impl AnchorGroup {
    fn len(&self) -> usize {
        (self.h.1 - self.h.0) * (self.v.1 - self.v.0)
    }

    /// Whether row-times-column phasors are cheaper than one phasor per element.
    fn separable(&self) -> bool {
        self.len() > (self.h.1 - self.h.0) + (self.v.1 - self.v.0)
    }
}

fn anchor_groups(anchor_of: &[usize], anchors: usize, ph: usize) -> Result<Vec<AnchorGroup>> {
    let mut bounds = vec![(usize::MAX, 0, usize::MAX, 0, 0usize); anchors];
    for (col, &a) in anchor_of.iter().enumerate() {
        let (h, v) = (col % ph, col / ph);
        let b = &mut bounds[a];
        *b = (b.0.min(h), b.1.max(h + 1), b.2.min(v), b.3.max(v + 1), b.4 + 1);
    }
    bounds
        .into_iter()
        .map(|(h0, h1, v0, v1, n)| {
            let g = AnchorGroup { h: (h0, h1), v: (v0, v1) };
            if n == 0 || g.len() != n {
                return Err(Error::DegenerateGeometry(
                    "subarray elements do not form rectangular blocks".into(),
                ));
            }
            Ok(g)
        })
        .collect()
}

impl<'a> ChannelSynthesizer<'a> {
    pub fn new(cfg: &'a ScenarioConfig, model: WavefrontModel) -> Result<Self> {
        cfg.validate()?;
        model.check(cfg)?;
        let (ph, pv) = (cfg.bs_horizontal, cfg.bs_vertical);
        let (anchors, anchor_of) = match model {
            WavefrontModel::Spherical => {
                let mut anchors = Vec::with_capacity(ph * pv);
                for v in 1..=pv {
                    for h in 1..=ph {
                        anchors.push(bs_element_position(h, v, cfg)?);
                    }
                }
                (anchors, (0..ph * pv).collect())
            }
            WavefrontModel::Planar => (vec![cfg.bs_center()], vec![0; ph * pv]),
            WavefrontModel::Subarray { max_h, max_v } => {
                let partition = SubarrayPartition::new(cfg, max_h, max_v)?;
                let mut anchor_of = Vec::with_capacity(ph * pv);
                for v in 1..=pv {
                    for h in 1..=ph {
                        let (sh, sv) = partition.subarray_of(h, v)?;
                        anchor_of.push((sv - 1) * partition.counts_h + (sh - 1));
                    }
                }
                (partition.centers, anchor_of)
            }
        };
        let groups = anchor_groups(&anchor_of, anchors.len(), ph)?;
        Ok(Self {
            cfg,
            model,
            anchors,
            anchor_of,
            groups,
            orientation: (cfg.bs_orientation.cos(), cfg.bs_orientation.sin()),
            wavenumber: cfg.wavenumber_at(cfg.carrier_frequency),
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        self.cfg
    }

    pub fn model(&self) -> WavefrontModel {
        self.model
    }

    /// Carrier wavenumber `2 pi f_c / c`.
    pub fn wavenumber(&self) -> f64 {
        self.wavenumber
    }

    /// Positions the BS angles are evaluated from.
    pub fn anchors(&self) -> &[Vec3] {
        &self.anchors
    }

    fn check_indices(&self, p: TxElement, q: usize) -> Result<()> {
        if p.h == 0 || p.h > self.cfg.bs_horizontal || p.v == 0 || p.v > self.cfg.bs_vertical {
            return Err(Error::InvalidArgument(format!(
                "BS element ({}, {}) outside 1..={} x 1..={}",
                p.h, p.v, self.cfg.bs_horizontal, self.cfg.bs_vertical
            )));
        }
        if q == 0 || q > self.cfg.mr_elements {
            return Err(Error::InvalidArgument(format!(
                "MR element {q} outside 1..={}",
                self.cfg.mr_elements
            )));
        }
        Ok(())
    }

    fn anchor(&self, p: TxElement) -> Vec3 {
        self.anchors[self.anchor_of[p.column(self.cfg) - 1]]
    }

    /// Horizontal and vertical direction cosines of a departure seen by the
    /// BS array.
    fn bs_direction(&self, anchor: Vec3, target: Vec3, convention: AngleConvention) -> Result<(f64, f64)> {
        direction_cosines(anchor, target, convention, self.orientation)
    }

    fn bs_steering_from(&self, p: TxElement, (u, w): (f64, f64)) -> f64 {
        let cfg = self.cfg;
        let kh = centered_index(cfg.bs_horizontal, p.h);
        let kv = centered_index(cfg.bs_vertical, p.v);
        self.wavenumber * cfg.bs_spacing * (kh * u + kv * w)
    }

    fn mr_steering(&self, q: usize, arr: Angles, t: f64) -> f64 {
        let cfg = self.cfg;
        let kq = centered_index(cfg.mr_elements, q);
        self.wavenumber
            * (kq
                * cfg.mr_spacing
                * ((arr.azimuth - cfg.mr_orientation).cos()
                    * arr.elevation.cos()
                    * cfg.mr_tilt.cos()
                    + arr.elevation.sin() * cfg.mr_tilt.sin())
                + cfg.mr_speed * t * (arr.azimuth - cfg.mr_direction).cos() * arr.elevation.cos())
    }

    /// LoS path terms for the `(p, q)` pair at the given MR state.
    pub fn los_path(&self, p: TxElement, q: usize, mr: &MrSnapshot) -> Result<PathTerms> {
        self.check_indices(p, q)?;
        let (anchor, target) = (self.anchor(p), mr.elements[q - 1]);
        let arr = los_arrival(ray_angles(anchor, target, AngleConvention::DepartureLos)?);
        let dir = self.bs_direction(anchor, target, AngleConvention::DepartureLos)?;
        Ok(PathTerms {
            length: self.cfg.bs_center().distance(mr.center),
            steering: self.bs_steering_from(p, dir) + self.mr_steering(q, arr, mr.t),
        })
    }

    /// Terms of the path through one scatterer.
    pub fn nlos_path(&self, p: TxElement, q: usize, mr: &MrSnapshot, ray: &Ray) -> Result<PathTerms> {
        self.check_indices(p, q)?;
        let s = ray.position;
        let dir = self.bs_direction(self.anchor(p), s, AngleConvention::DepartureNlos)?;
        let arr = ray_angles(mr.elements[q - 1], s, AngleConvention::ArrivalNlos)?;
        Ok(PathTerms {
            length: self.cfg.bs_center().distance(s) + mr.center.distance(s),
            steering: ray.phase + self.bs_steering_from(p, dir) + self.mr_steering(q, arr, mr.t),
        })
    }

    pub fn nlos_paths(
        &self,
        p: TxElement,
        q: usize,
        mr: &MrSnapshot,
        field: &ScattererField,
    ) -> Result<Vec<PathTerms>> {
        if field.is_empty() {
            return Err(Error::EmptyField);
        }
        field.rays().map(|r| self.nlos_path(p, q, mr, r)).collect()
    }

    /// Unit-modulus LoS coefficient.
    pub fn los_at(&self, p: TxElement, q: usize, mr: &MrSnapshot) -> Result<Complex64> {
        Ok(self.los_path(p, q, mr)?.phasor(self.wavenumber))
    }

    /// Power-normalized NLoS coefficient `(1/sqrt(R)) sum_r exp(j phase_r)`.
    pub fn nlos_at(
        &self,
        p: TxElement,
        q: usize,
        mr: &MrSnapshot,
        field: &ScattererField,
    ) -> Result<Complex64> {
        let paths = self.nlos_paths(p, q, mr, field)?;
        let sum: Complex64 = paths.iter().map(|t| t.phasor(self.wavenumber)).sum();
        Ok(sum / (paths.len() as f64).sqrt())
    }

    pub fn cir_los(&self, p: TxElement, q: usize, t: f64) -> Result<Complex64> {
        self.los_at(p, q, &MrSnapshot::at(self.cfg, t)?)
    }

    pub fn cir_nlos(&self, p: TxElement, q: usize, t: f64, field: &ScattererField) -> Result<Complex64> {
        self.nlos_at(p, q, &MrSnapshot::at(self.cfg, t)?, field)
    }

    pub fn cir_total(
        &self,
        p: TxElement,
        q: usize,
        t: f64,
        field: &ScattererField,
    ) -> Result<CirComponents> {
        let mr = MrSnapshot::at(self.cfg, t)?;
        let (w_los, w_nlos) = rician_weights(self.cfg.rician_k);
        let los = self.los_path(p, q, &mr)?;
        let nlos = self.nlos_paths(p, q, &mr, field)?;
        let norm = (nlos.len() as f64).sqrt();
        let nlos_sum: Complex64 = nlos.iter().map(|t| t.phasor(self.wavenumber)).sum();
        let c = self.cfg.speed_of_light;
        Ok(CirComponents {
            los: los.phasor(self.wavenumber) * w_los,
            nlos: nlos_sum / norm * w_nlos,
            tau_los: los.delay(c),
            tau_nlos: nlos.iter().map(|t| t.delay(c)).collect(),
        })
    }

    /// Frequency response of the `(p, q)` link at `frequency`, with every
    /// path delayed by its own propagation time.
    pub fn transfer_function(
        &self,
        p: TxElement,
        q: usize,
        t: f64,
        frequency: f64,
        field: &ScattererField,
    ) -> Result<Complex64> {
        self.transfer_at(p, q, &MrSnapshot::at(self.cfg, t)?, frequency, field)
    }

    pub fn transfer_at(
        &self,
        p: TxElement,
        q: usize,
        mr: &MrSnapshot,
        frequency: f64,
        field: &ScattererField,
    ) -> Result<Complex64> {
        self.check_band(frequency)?;
        let k = self.cfg.wavenumber_at(frequency);
        let (w_los, w_nlos) = rician_weights(self.cfg.rician_k);
        let los = self.los_path(p, q, mr)?.phasor(k);
        let nlos = self.nlos_paths(p, q, mr, field)?;
        let norm = (nlos.len() as f64).sqrt();
        let nlos_sum: Complex64 = nlos.iter().map(|t| t.phasor(k)).sum();
        Ok(los * w_los + nlos_sum / norm * w_nlos)
    }

    pub fn check_band(&self, frequency: f64) -> Result<()> {
        let cfg = self.cfg;
        let half = 0.5 * cfg.bandwidth;
        if cfg.enforce_band && (frequency - cfg.carrier_frequency).abs() > half * (1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "frequency {frequency} Hz outside the band {} +/- {half} Hz",
                cfg.carrier_frequency
            )));
        }
        if !frequency.is_finite() || frequency <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "frequency must be positive, got {frequency}"
            )));
        }
        Ok(())
    }

    /// Full `Q x P` narrowband matrix at time `t`.
    ///
    /// The NLoS part is factored as `(Q x R) * (R x P)` over the rays. Inside
    /// a subarray the BS phasors are formed as row times column phasors.
    pub fn channel_matrix(&self, t: f64, field: &ScattererField) -> Result<ChannelRealization> {
        if field.is_empty() {
            return Err(Error::EmptyField);
        }
        let cfg = self.cfg;
        let mr = MrSnapshot::at(cfg, t)?;
        let (w_los, w_nlos) = rician_weights(cfg.rician_k);
        let (ph, pv) = (cfg.bs_horizontal, cfg.bs_vertical);
        let n_tx = ph * pv;
        let n_rx = cfg.mr_elements;
        let rays: Vec<&Ray> = field.rays().collect();
        let n_rays = rays.len();
        let k = self.wavenumber;
        let kd = k * cfg.bs_spacing;
        let bs_center = cfg.bs_center();
        let kh: Vec<f64> = (1..=ph).map(|h| centered_index(ph, h)).collect();
        let kv: Vec<f64> = (1..=pv).map(|v| centered_index(pv, v)).collect();

        // MR side of every scattered path, stored ray-major
        let mut rx_re = DMatrix::<f64>::zeros(n_rays, n_rx);
        let mut rx_im = DMatrix::<f64>::zeros(n_rays, n_rx);
        for (r, ray) in rays.iter().enumerate() {
            let length = bs_center.distance(ray.position) + mr.center.distance(ray.position);
            for q in 1..=n_rx {
                let arr = ray_angles(mr.elements[q - 1], ray.position, AngleConvention::ArrivalNlos)?;
                let phase = ray.phase + self.mr_steering(q, arr, mr.t) - k * length;
                let (sin, cos) = phase.sin_cos();
                rx_re[(r, q - 1)] = cos;
                rx_im[(r, q - 1)] = sin;
            }
        }

        // BS side: one direction per (anchor, ray), stored element-major
        let mut tx_re = DMatrix::<f64>::zeros(n_tx, n_rays);
        let mut tx_im = DMatrix::<f64>::zeros(n_tx, n_rays);
        let mut row_h = Vec::new();
        let mut row_v = Vec::new();
        for (r, ray) in rays.iter().enumerate() {
            let mut col_re = tx_re.column_mut(r);
            let mut col_im = tx_im.column_mut(r);
            for (anchor, group) in self.anchors.iter().zip(&self.groups) {
                let (u, w) = self.bs_direction(*anchor, ray.position, AngleConvention::DepartureNlos)?;
                if group.separable() {
                    row_h.clear();
                    row_h.extend((group.h.0..group.h.1).map(|h| Complex64::from_polar(1.0, kd * kh[h] * u)));
                    row_v.clear();
                    row_v.extend((group.v.0..group.v.1).map(|v| Complex64::from_polar(1.0, kd * kv[v] * w)));
                    for (v, ev) in (group.v.0..group.v.1).zip(&row_v) {
                        for (h, eh) in (group.h.0..group.h.1).zip(&row_h) {
                            let z = eh * ev;
                            col_re[v * ph + h] = z.re;
                            col_im[v * ph + h] = z.im;
                        }
                    }
                } else {
                    for v in group.v.0..group.v.1 {
                        for h in group.h.0..group.h.1 {
                            let (sin, cos) = (kd * (kh[h] * u + kv[v] * w)).sin_cos();
                            col_re[v * ph + h] = cos;
                            col_im[v * ph + h] = sin;
                        }
                    }
                }
            }
        }
        // (P x R) * (R x Q) as real products
        let re = &tx_re * &rx_re - &tx_im * &rx_im;
        let im = &tx_re * &rx_im + &tx_im * &rx_re;
        let scale = w_nlos / (n_rays as f64).sqrt();
        let mut h = DMatrix::from_fn(n_rx, n_tx, |q, p| Complex64::new(re[(p, q)], im[(p, q)]) * scale);

        // LoS: direction and MR phase per (anchor, q)
        let los_length = bs_center.distance(mr.center);
        for (anchor, group) in self.anchors.iter().zip(&self.groups) {
            for q in 1..=n_rx {
                let target = mr.elements[q - 1];
                let arr = los_arrival(ray_angles(*anchor, target, AngleConvention::DepartureLos)?);
                let dir = self.bs_direction(*anchor, target, AngleConvention::DepartureLos)?;
                let mr_phase = self.mr_steering(q, arr, mr.t);
                for v in group.v.0..group.v.1 {
                    for hh in group.h.0..group.h.1 {
                        let p = TxElement::new(hh + 1, v + 1);
                        let steering = self.bs_steering_from(p, dir) + mr_phase;
                        h[(q - 1, v * ph + hh)] += Complex64::from_polar(w_los, steering - k * los_length);
                    }
                }
            }
        }

        let c = cfg.speed_of_light;
        Ok(ChannelRealization {
            t,
            h,
            tau_los: los_length / c,
            tau_nlos: rays
                .iter()
                .map(|r| (bs_center.distance(r.position) + mr.center.distance(r.position)) / c)
                .collect(),
            model: self.model,
        })
    }
}

pub fn cir_los(
    p: TxElement,
    q: usize,
    t: f64,
    cfg: &ScenarioConfig,
    model: WavefrontModel,
) -> Result<Complex64> {
    ChannelSynthesizer::new(cfg, model)?.cir_los(p, q, t)
}

pub fn cir_nlos(
    p: TxElement,
    q: usize,
    t: f64,
    cfg: &ScenarioConfig,
    model: WavefrontModel,
    field: &ScattererField,
) -> Result<Complex64> {
    ChannelSynthesizer::new(cfg, model)?.cir_nlos(p, q, t, field)
}

pub fn cir_total(
    p: TxElement,
    q: usize,
    t: f64,
    cfg: &ScenarioConfig,
    model: WavefrontModel,
    field: &ScattererField,
) -> Result<CirComponents> {
    ChannelSynthesizer::new(cfg, model)?.cir_total(p, q, t, field)
}

pub fn channel_matrix(
    t: f64,
    cfg: &ScenarioConfig,
    model: WavefrontModel,
    field: &ScattererField,
) -> Result<ChannelRealization> {
    ChannelSynthesizer::new(cfg, model)?.channel_matrix(t, field)
}

pub fn transfer_function(
    p: TxElement,
    q: usize,
    t: f64,
    frequency: f64,
    cfg: &ScenarioConfig,
    model: WavefrontModel,
    field: &ScattererField,
) -> Result<Complex64> {
    ChannelSynthesizer::new(cfg, model)?.transfer_function(p, q, t, frequency, field)
}
