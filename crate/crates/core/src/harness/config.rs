//! JSON scenario files.
//!
//! Every key is optional; omitted keys take the reference-deployment value.
//! Array spacings default to half a wavelength of the (possibly overridden)
//! carrier and `scatter_radius_max` defaults to `initial_distance`.

use serde::Deserialize;

use crate::channel::WavefrontModel;
use crate::error::{Error, Result};
use crate::geometry::{ClusterMeans, ScenarioConfig};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub carrier_frequency: Option<f64>,
    pub speed_of_light: Option<f64>,
    pub bs_height: Option<f64>,
    pub initial_distance: Option<f64>,
    pub bs_horizontal: Option<usize>,
    pub bs_vertical: Option<usize>,
    pub mr_elements: Option<usize>,
    pub bs_spacing: Option<f64>,
    pub mr_spacing: Option<f64>,
    pub bs_orientation: Option<f64>,
    pub mr_orientation: Option<f64>,
    pub mr_tilt: Option<f64>,
    pub mr_speed: Option<f64>,
    pub mr_direction: Option<f64>,
    pub rician_k: Option<f64>,
    pub kappa: Option<f64>,
    pub mu_alpha: Option<f64>,
    pub mu_beta: Option<f64>,
    pub clusters: Option<usize>,
    pub rays_per_cluster: Option<usize>,
    pub cluster_means: Option<ClusterMeans>,
    pub scatter_radius_min: Option<f64>,
    pub scatter_radius_max: Option<f64>,
    pub snr: Option<f64>,
    pub bandwidth: Option<f64>,
    pub enforce_band: Option<bool>,
    /// Wavefront model as `spherical`, `planar` or `subarray:HxV`.
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub realizations: Option<usize>,
}

/// Scenario plus the run settings a file may carry.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub model: Option<WavefrontModel>,
    pub seed: Option<u64>,
    pub realizations: Option<usize>,
}

impl ConfigFile {
    pub fn parse(raw: &str) -> Result<Self> {
        if raw.trim().is_empty() {
            return Ok(Self::default());
        }
        serde_json::from_str(raw).map_err(|e| Error::MalformedConfig(e.to_string()))
    }

    pub fn resolve(self) -> Result<RunConfig> {
        let base = ScenarioConfig::default();
        let carrier_frequency = self.carrier_frequency.unwrap_or(base.carrier_frequency);
        let speed_of_light = self.speed_of_light.unwrap_or(base.speed_of_light);
        let half_wavelength = 0.5 * speed_of_light / carrier_frequency;
        let initial_distance = self.initial_distance.unwrap_or(base.initial_distance);

        let scenario = ScenarioConfig {
            carrier_frequency,
            speed_of_light,
            bs_height: self.bs_height.unwrap_or(base.bs_height),
            initial_distance,
            bs_horizontal: self.bs_horizontal.unwrap_or(base.bs_horizontal),
            bs_vertical: self.bs_vertical.unwrap_or(base.bs_vertical),
            mr_elements: self.mr_elements.unwrap_or(base.mr_elements),
            bs_spacing: self.bs_spacing.unwrap_or(half_wavelength),
            mr_spacing: self.mr_spacing.unwrap_or(half_wavelength),
            bs_orientation: self.bs_orientation.unwrap_or(base.bs_orientation),
            mr_orientation: self.mr_orientation.unwrap_or(base.mr_orientation),
            mr_tilt: self.mr_tilt.unwrap_or(base.mr_tilt),
            mr_speed: self.mr_speed.unwrap_or(base.mr_speed),
            mr_direction: self.mr_direction.unwrap_or(base.mr_direction),
            rician_k: self.rician_k.unwrap_or(base.rician_k),
            kappa: self.kappa.unwrap_or(base.kappa),
            mu_alpha: self.mu_alpha.unwrap_or(base.mu_alpha),
            mu_beta: self.mu_beta.unwrap_or(base.mu_beta),
            clusters: self.clusters.unwrap_or(base.clusters),
            rays_per_cluster: self.rays_per_cluster.unwrap_or(base.rays_per_cluster),
            cluster_means: self.cluster_means.unwrap_or(base.cluster_means),
            scatter_radius_min: self.scatter_radius_min.unwrap_or(base.scatter_radius_min),
            scatter_radius_max: self.scatter_radius_max.unwrap_or(initial_distance),
            snr: self.snr.unwrap_or(base.snr),
            bandwidth: self.bandwidth.unwrap_or(base.bandwidth),
            enforce_band: self.enforce_band.unwrap_or(base.enforce_band),
        };
        scenario.validate()?;

        let model = match self.model {
            None => None,
            Some(text) => {
                let model: WavefrontModel = text
                    .parse()
                    .map_err(|e: Error| Error::config("model", e.to_string()))?;
                model
                    .check(&scenario)
                    .map_err(|e| Error::config("model", e.to_string()))?;
                Some(model)
            }
        };
        if self.realizations == Some(0) {
            return Err(Error::config("realizations", "must be >= 1"));
        }
        Ok(RunConfig {
            scenario,
            model,
            seed: self.seed,
            realizations: self.realizations,
        })
    }
}

pub fn load_run_config(raw: &str) -> Result<RunConfig> {
    ConfigFile::parse(raw)?.resolve()
}

/// Parses a scenario file, applying defaults and rejecting invalid fields.
pub fn validate_config(raw: &str) -> Result<ScenarioConfig> {
    load_run_config(raw).map(|r| r.scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(err: Error) -> String {
        match err {
            Error::Config { field, .. } => field,
            other => panic!("expected a field error, got {other}"),
        }
    }

    #[test]
    fn empty_input_gives_reference_profile() {
        assert_eq!(validate_config("").unwrap(), ScenarioConfig::default());
        assert_eq!(validate_config("  \n").unwrap(), ScenarioConfig::default());
        assert_eq!(validate_config("{}").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn spacings_follow_carrier() {
        let cfg = validate_config(r#"{"carrier_frequency": 2.4e9}"#).unwrap();
        let half = 0.5 * cfg.speed_of_light / 2.4e9;
        assert_eq!(cfg.bs_spacing, half);
        assert_eq!(cfg.mr_spacing, half);
        let cfg = validate_config(r#"{"carrier_frequency": 2.4e9, "bs_spacing": 0.1}"#).unwrap();
        assert_eq!(cfg.bs_spacing, 0.1);
    }

    #[test]
    fn radius_max_follows_distance() {
        let cfg = validate_config(r#"{"initial_distance": 80}"#).unwrap();
        assert_eq!(cfg.scatter_radius_max, 80.0);
    }

    #[test]
    fn zero_spacing_names_field() {
        let err = validate_config(r#"{"bs_spacing": 0}"#).unwrap_err();
        assert_eq!(field_of(err), "bs_spacing");
        let err = validate_config(r#"{"mr_elements": 0}"#).unwrap_err();
        assert_eq!(field_of(err), "mr_elements");
    }

    #[test]
    fn oversized_subarray_cites_bounds() {
        let err = load_run_config(r#"{"bs_horizontal": 16, "model": "subarray:20x4"}"#).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("model"), "{text}");
        assert!(text.contains("1 <= size <= 16"), "{text}");
    }

    #[test]
    fn malformed_and_unknown_fields_are_rejected() {
        assert!(matches!(validate_config("{"), Err(Error::MalformedConfig(_))));
        let err = validate_config(r#"{"carrier": 5e9}"#).unwrap_err();
        assert!(err.to_string().contains("carrier"));
        let err = validate_config(r#"{"bs_horizontal": -3}"#).unwrap_err();
        assert!(matches!(err, Error::MalformedConfig(_)));
    }

    #[test]
    fn run_settings_are_carried() {
        let run = load_run_config(r#"{"seed": 9, "realizations": 12, "model": "planar"}"#).unwrap();
        assert_eq!(run.seed, Some(9));
        assert_eq!(run.realizations, Some(12));
        assert_eq!(run.model, Some(WavefrontModel::Planar));
        assert!(load_run_config(r#"{"realizations": 0}"#).is_err());
    }
}
