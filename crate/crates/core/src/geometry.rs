//! Scenario geometry: array element positions, the Rayleigh distance, subarray
//! partitioning of the BS planar array and the departure/arrival angle
//! conventions used by the channel coefficients.
//!
//! Global frame: the origin is the ground projection of the BS array midpoint,
//! `x` points toward the MR array midpoint and `z` points up. All distances are
//! in meters and all angles in radians.
//!
//! Element and subarray indices are 1-based throughout, matching the centered
//! index `k = (N - 2n + 1) / 2` used by the steering phases.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (other - self).norm()
    }

    /// Distance between the ground projections of two points.
    pub fn horizontal_distance(self, other: Vec3) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, rhs: f64) -> Vec3 {
        Vec3::new(self.x * rhs, self.y * rhs, self.z * rhs)
    }
}

/// How the mean angle of each cluster's rays is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMeans {
    /// Each cluster draws its own mean direction once; rays spread around it.
    #[default]
    PerCluster,
    /// Every ray is drawn around the global mean angles.
    Global,
}

/// Physical description of one BS-to-MR scenario.
///
/// `Default` is the reference deployment: 5 GHz carrier, 20 m mast, MR 50 m
/// away, 64x64 half-wavelength UPA at the BS and a 4-element ULA at the MR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Carrier frequency, Hz.
    pub carrier_frequency: f64,
    /// Propagation speed, m/s.
    pub speed_of_light: f64,
    /// BS mast height (ground to array bottom), m.
    pub bs_height: f64,
    /// Initial ground distance from the BS to the MR array midpoint, m.
    pub initial_distance: f64,
    /// BS elements along the horizontal axis.
    pub bs_horizontal: usize,
    /// BS elements along the vertical axis.
    pub bs_vertical: usize,
    /// MR ULA element count.
    pub mr_elements: usize,
    pub bs_spacing: f64,
    pub mr_spacing: f64,
    /// Azimuth orientation of the BS array, rad.
    pub bs_orientation: f64,
    /// Azimuth orientation of the MR array, rad.
    pub mr_orientation: f64,
    /// Elevation tilt of the MR array, rad.
    pub mr_tilt: f64,
    /// MR speed, m/s.
    pub mr_speed: f64,
    /// MR motion azimuth, rad.
    pub mr_direction: f64,
    /// Rician factor (linear).
    pub rician_k: f64,
    /// Von Mises concentration of the scatterer angles.
    pub kappa: f64,
    /// Mean azimuth of departure toward the scatterers, rad.
    pub mu_alpha: f64,
    /// Mean elevation of departure toward the scatterers, rad.
    pub mu_beta: f64,
    pub clusters: usize,
    pub rays_per_cluster: usize,
    pub cluster_means: ClusterMeans,
    /// Scatterer radial distance range measured from the BS array midpoint, m.
    pub scatter_radius_min: f64,
    pub scatter_radius_max: f64,
    /// Linear SNR used for capacity.
    pub snr: f64,
    /// Occupied bandwidth around the carrier, Hz.
    pub bandwidth: f64,
    /// Reject transfer-function evaluations outside the occupied band.
    pub enforce_band: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let carrier_frequency = 5.0e9;
        let half_wavelength = 0.5 * SPEED_OF_LIGHT / carrier_frequency;
        Self {
            carrier_frequency,
            speed_of_light: SPEED_OF_LIGHT,
            bs_height: 20.0,
            initial_distance: 50.0,
            bs_horizontal: 64,
            bs_vertical: 64,
            mr_elements: 4,
            bs_spacing: half_wavelength,
            mr_spacing: half_wavelength,
            bs_orientation: PI / 2.0,
            mr_orientation: PI / 2.0,
            mr_tilt: PI / 3.0,
            mr_speed: 5.0,
            mr_direction: PI / 2.0,
            rician_k: 1.0,
            kappa: 3.0,
            mu_alpha: 0.0,
            mu_beta: 0.0,
            clusters: 5,
            rays_per_cluster: 20,
            cluster_means: ClusterMeans::PerCluster,
            scatter_radius_min: 5.0,
            scatter_radius_max: 50.0,
            snr: 10.0,
            bandwidth: 50.0e6,
            enforce_band: true,
        }
    }
}

impl ScenarioConfig {
    pub fn wavelength(&self) -> f64 {
        self.speed_of_light / self.carrier_frequency
    }

    /// Free-space wavenumber `2*pi*f/c` at frequency `f`.
    pub fn wavenumber_at(&self, frequency: f64) -> f64 {
        2.0 * PI * frequency / self.speed_of_light
    }

    pub fn bs_elements(&self) -> usize {
        self.bs_horizontal * self.bs_vertical
    }

    pub fn rays(&self) -> usize {
        self.clusters * self.rays_per_cluster
    }

    /// Midpoint of the BS array.
    pub fn bs_center(&self) -> Vec3 {
        Vec3::new(
            0.0,
            0.0,
            self.bs_height + 0.5 * self.bs_vertical as f64 * self.bs_spacing,
        )
    }

    /// Midpoint of the MR array at time `t`.
    pub fn mr_center(&self, t: f64) -> Vec3 {
        let travel = self.mr_speed * t;
        Vec3::new(
            self.initial_distance + travel * self.mr_direction.cos(),
            travel * self.mr_direction.sin(),
            0.0,
        )
    }

    /// Checks every scenario invariant, naming the first offending field.
    pub fn validate(&self) -> Result<()> {
        fn positive(field: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be finite and > 0, got {v}")))
            }
        }
        fn non_negative(field: &str, v: f64) -> Result<()> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be finite and >= 0, got {v}")))
            }
        }
        fn finite(field: &str, v: f64) -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be finite, got {v}")))
            }
        }
        fn count(field: &str, v: usize) -> Result<()> {
            if v >= 1 {
                Ok(())
            } else {
                Err(Error::config(field, "must be >= 1"))
            }
        }

        positive("carrier_frequency", self.carrier_frequency)?;
        positive("speed_of_light", self.speed_of_light)?;
        non_negative("bs_height", self.bs_height)?;
        non_negative("initial_distance", self.initial_distance)?;
        count("bs_horizontal", self.bs_horizontal)?;
        count("bs_vertical", self.bs_vertical)?;
        count("mr_elements", self.mr_elements)?;
        positive("bs_spacing", self.bs_spacing)?;
        positive("mr_spacing", self.mr_spacing)?;
        finite("bs_orientation", self.bs_orientation)?;
        finite("mr_orientation", self.mr_orientation)?;
        finite("mr_tilt", self.mr_tilt)?;
        non_negative("mr_speed", self.mr_speed)?;
        finite("mr_direction", self.mr_direction)?;
        non_negative("rician_k", self.rician_k)?;
        non_negative("kappa", self.kappa)?;
        finite("mu_alpha", self.mu_alpha)?;
        finite("mu_beta", self.mu_beta)?;
        count("clusters", self.clusters)?;
        count("rays_per_cluster", self.rays_per_cluster)?;
        positive("scatter_radius_min", self.scatter_radius_min)?;
        positive("scatter_radius_max", self.scatter_radius_max)?;
        if self.scatter_radius_max < self.scatter_radius_min {
            return Err(Error::config(
                "scatter_radius_max",
                format!(
                    "must be >= scatter_radius_min ({}), got {}",
                    self.scatter_radius_min, self.scatter_radius_max
                ),
            ));
        }
        non_negative("snr", self.snr)?;
        positive("bandwidth", self.bandwidth)?;
        Ok(())
    }
}

/// Centered element index `(count - 2*index + 1) / 2` for a 1-based index.
pub fn centered_index(count: usize, index: usize) -> f64 {
    (count as f64 - 2.0 * index as f64 + 1.0) / 2.0
}

/// Position of the `q`-th MR element (1-based) at time `t`.
pub fn mr_element_position(q: usize, t: f64, cfg: &ScenarioConfig) -> Result<Vec3> {
    if q == 0 || q > cfg.mr_elements {
        return Err(Error::InvalidArgument(format!(
            "MR element index {q} outside 1..={}",
            cfg.mr_elements
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time must be >= 0, got {t}")));
    }
    let k = centered_index(cfg.mr_elements, q);
    let along = k * cfg.mr_spacing;
    let travel = cfg.mr_speed * t;
    Ok(Vec3::new(
        cfg.initial_distance
            + along * cfg.mr_orientation.cos() * cfg.mr_tilt.cos()
            + travel * cfg.mr_direction.cos(),
        along * cfg.mr_orientation.sin() * cfg.mr_tilt.cos() + travel * cfg.mr_direction.sin(),
        along * cfg.mr_tilt.sin(),
    ))
}

/// Position of BS element `(p_h, p_v)` computed directly from the centered
/// indices, without going through a partition.
pub fn bs_element_position(p_h: usize, p_v: usize, cfg: &ScenarioConfig) -> Result<Vec3> {
    if p_h == 0 || p_h > cfg.bs_horizontal || p_v == 0 || p_v > cfg.bs_vertical {
        return Err(Error::InvalidArgument(format!(
            "BS element ({p_h}, {p_v}) outside 1..={} x 1..={}",
            cfg.bs_horizontal, cfg.bs_vertical
        )));
    }
    let horizontal = -centered_index(cfg.bs_horizontal, p_h);
    let vertical = 0.5 * cfg.bs_vertical as f64 - centered_index(cfg.bs_vertical, p_v);
    let offset = horizontal * cfg.bs_spacing;
    Ok(Vec3::new(
        offset * cfg.bs_orientation.cos(),
        offset * cfg.bs_orientation.sin(),
        cfg.bs_height + vertical * cfg.bs_spacing,
    ))
}

/// Rayleigh distance `2 d^2 / lambda` of an aperture with diagonal `diagonal`.
pub fn rayleigh_distance_for_diagonal(diagonal: f64, wavelength: f64) -> f64 {
    2.0 * diagonal * diagonal / wavelength
}

/// Rayleigh distance of a `width x height` aperture at `frequency`.
pub fn rayleigh_distance_for_aperture(width: f64, height: f64, frequency: f64) -> f64 {
    let wavelength = SPEED_OF_LIGHT / frequency;
    rayleigh_distance_for_diagonal(width.hypot(height), wavelength)
}

/// Rayleigh distance of the configured BS array.
pub fn rayleigh_distance(cfg: &ScenarioConfig) -> f64 {
    subarray_rayleigh_distance(cfg.bs_horizontal, cfg.bs_vertical, cfg)
}

fn subarray_rayleigh_distance(h: usize, v: usize, cfg: &ScenarioConfig) -> f64 {
    let dh = (h - 1) as f64;
    let dv = (v - 1) as f64;
    2.0 * cfg.bs_spacing * cfg.bs_spacing * (dh * dh + dv * dv) / cfg.wavelength()
}

/// Largest square subarray size whose own Rayleigh distance does not exceed
/// the BS-to-MR midpoint distance at `t`. Axes are clamped to the array.
pub fn boundary_subarray_size(cfg: &ScenarioConfig, t: f64) -> usize {
    let range = cfg.bs_center().distance(cfg.mr_center(t));
    let largest = cfg.bs_horizontal.max(cfg.bs_vertical);
    (1..=largest)
        .take_while(|&p| {
            subarray_rayleigh_distance(p.min(cfg.bs_horizontal), p.min(cfg.bs_vertical), cfg)
                <= range
        })
        .last()
        .unwrap_or(1)
}

/// Number of subarrays along an axis of `elements` elements when the largest
/// subarray spans `max_size` of them.
pub fn partition_counts(elements: usize, max_size: usize) -> Result<usize> {
    if max_size == 0 || max_size > elements {
        return Err(Error::InvalidArgument(format!(
            "largest subarray size {max_size} must lie in 1..={elements}"
        )));
    }
    let rem = elements % max_size;
    Ok(if rem != 0 {
        (elements - rem) / max_size + 1
    } else {
        elements / max_size
    })
}

/// Size of the `index`-th (1-based) subarray along an axis.
pub fn subarray_size(index: usize, elements: usize, max_size: usize) -> Result<usize> {
    let counts = partition_counts(elements, max_size)?;
    if index == 0 || index > counts {
        return Err(Error::InvalidArgument(format!(
            "subarray index {index} outside 1..={counts}"
        )));
    }
    Ok(if index < counts {
        max_size
    } else {
        elements - (counts - 1) * max_size
    })
}

/// Index (1-based) of the subarray holding the `element`-th element.
pub fn element_to_subarray(element: usize, max_size: usize) -> Result<usize> {
    if element == 0 || max_size == 0 {
        return Err(Error::InvalidArgument(format!(
            "element {element} and subarray size {max_size} must both be >= 1"
        )));
    }
    let rem = element % max_size;
    Ok(if rem != 0 {
        (element - rem) / max_size + 1
    } else {
        element / max_size
    })
}

/// Decomposition of the BS UPA into rectangular subarrays.
#[derive(Debug, Clone, PartialEq)]
pub struct SubarrayPartition {
    pub p_max_h: usize,
    pub p_max_v: usize,
    pub counts_h: usize,
    pub counts_v: usize,
    pub sizes_h: Vec<usize>,
    pub sizes_v: Vec<usize>,
    /// Subarray midpoints, indexed `(sv - 1) * counts_h + (sh - 1)`.
    pub centers: Vec<Vec3>,
}

impl SubarrayPartition {
    pub fn new(cfg: &ScenarioConfig, p_max_h: usize, p_max_v: usize) -> Result<Self> {
        let counts_h = partition_counts(cfg.bs_horizontal, p_max_h)?;
        let counts_v = partition_counts(cfg.bs_vertical, p_max_v)?;
        let sizes_h = (1..=counts_h)
            .map(|i| subarray_size(i, cfg.bs_horizontal, p_max_h))
            .collect::<Result<Vec<_>>>()?;
        let sizes_v = (1..=counts_v)
            .map(|i| subarray_size(i, cfg.bs_vertical, p_max_v))
            .collect::<Result<Vec<_>>>()?;
        let mut partition = Self {
            p_max_h,
            p_max_v,
            counts_h,
            counts_v,
            sizes_h,
            sizes_v,
            centers: Vec::with_capacity(counts_h * counts_v),
        };
        for sv in 1..=counts_v {
            for sh in 1..=counts_h {
                let c = subarray_center(sh, sv, cfg, &partition)?;
                partition.centers.push(c);
            }
        }
        Ok(partition)
    }

    pub fn len(&self) -> usize {
        self.counts_h * self.counts_v
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, sh: usize, sv: usize) -> Result<Vec3> {
        self.check(sh, sv)?;
        Ok(self.centers[(sv - 1) * self.counts_h + (sh - 1)])
    }

    /// Subarray `(sh, sv)` containing element `(p_h, p_v)`.
    pub fn subarray_of(&self, p_h: usize, p_v: usize) -> Result<(usize, usize)> {
        let sh = element_to_subarray(p_h, self.p_max_h)?;
        let sv = element_to_subarray(p_v, self.p_max_v)?;
        self.check(sh, sv)?;
        Ok((sh, sv))
    }

    fn check(&self, sh: usize, sv: usize) -> Result<()> {
        if sh == 0 || sh > self.counts_h || sv == 0 || sv > self.counts_v {
            return Err(Error::InvalidArgument(format!(
                "subarray ({sh}, {sv}) outside 1..={} x 1..={}",
                self.counts_h, self.counts_v
            )));
        }
        Ok(())
    }
}

/// Midpoint of subarray `(sh, sv)` from the partition's dimensions.
pub fn subarray_center(
    sh: usize,
    sv: usize,
    cfg: &ScenarioConfig,
    partition: &SubarrayPartition,
) -> Result<Vec3> {
    partition.check(sh, sv)?;
    let horizontal = (sh - 1) as f64 * partition.p_max_h as f64
        + 0.5 * partition.sizes_h[sh - 1] as f64
        - 0.5 * cfg.bs_horizontal as f64;
    let vertical =
        (sv - 1) as f64 * partition.p_max_v as f64 + 0.5 * partition.sizes_v[sv - 1] as f64;
    let offset = horizontal * cfg.bs_spacing;
    Ok(Vec3::new(
        offset * cfg.bs_orientation.cos(),
        offset * cfg.bs_orientation.sin(),
        cfg.bs_height + vertical * cfg.bs_spacing,
    ))
}

/// Azimuth and elevation of a propagation direction, rad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angles {
    /// In `(-pi, pi]`.
    pub azimuth: f64,
    pub elevation: f64,
}

/// Sign convention for the elevation returned by [`ray_angles`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleConvention {
    /// LoS departure from the BS: elevation is measured as source height minus
    /// destination height (a depression angle toward the MR).
    DepartureLos,
    /// Departure from a BS anchor toward a scatterer: destination minus source.
    DepartureNlos,
    /// Arrival at an MR element from a scatterer, with `from` the MR element
    /// and `to` the scatterer: destination minus source.
    ArrivalNlos,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_half_open_upper(angle: f64) -> f64 {
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

pub fn ray_angles(from: Vec3, to: Vec3, convention: AngleConvention) -> Result<Angles> {
    let d = to - from;
    if d.x == 0.0 && d.y == 0.0 && d.z == 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "coincident endpoints at ({}, {}, {})",
            from.x, from.y, from.z
        )));
    }
    let horizontal = d.x.hypot(d.y);
    let rise = match convention {
        AngleConvention::DepartureLos => from.z - to.z,
        AngleConvention::DepartureNlos | AngleConvention::ArrivalNlos => to.z - from.z,
    };
    let mut azimuth = d.y.atan2(d.x);
    if azimuth <= -PI {
        azimuth = PI;
    }
    Ok(Angles {
        azimuth,
        elevation: rise.atan2(horizontal),
    })
}

/// `(cos(azimuth - orientation) * cos(elevation), sin(elevation))` of the
/// direction from `from` to `to`, evaluated from the separation vector without
/// forming the angles. `orientation` is given as its `(cos, sin)`.
pub fn direction_cosines(
    from: Vec3,
    to: Vec3,
    convention: AngleConvention,
    (cos_o, sin_o): (f64, f64),
) -> Result<(f64, f64)> {
    let d = to - from;
    let range = d.norm();
    if range == 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "coincident endpoints at ({}, {}, {})",
            from.x, from.y, from.z
        )));
    }
    let rise = match convention {
        AngleConvention::DepartureLos => -d.z,
        AngleConvention::DepartureNlos | AngleConvention::ArrivalNlos => d.z,
    };
    Ok(((d.x * cos_o + d.y * sin_o) / range, rise / range))
}

/// LoS arrival angles at the MR from the LoS departure angles:
/// azimuth `pi - alpha_T`, elevation unchanged.
pub fn los_arrival(departure: Angles) -> Angles {
    Angles {
        azimuth: wrap_half_open_upper(PI - departure.azimuth),
        elevation: departure.elevation,
    }
}
