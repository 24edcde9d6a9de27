//! Random scatterer field: von Mises angular law, cluster/ray placement around
//! the BS array midpoint and uniformly distributed ray phases.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ClusterMeans, ScenarioConfig, Vec3};

/// Placement attempts per ray before the configuration is declared unusable.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 100;

/// Smallest accepted ground distance between a scatterer and either array
/// midpoint, m.
pub const MIN_HORIZONTAL_CLEARANCE: f64 = 0.1;

/// Deterministic RNG for realization `stream` of the run seeded with `seed`.
///
/// Each realization owns an independent ChaCha stream, so results do not
/// depend on the order in which realizations are evaluated.
pub fn realization_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// Chebyshev coefficients for exp(-x) I0(x), Cephes i0.c.
const I0E_SMALL: [f64; 30] = [
    -4.415_341_646_479_339_379_50E-18,
    3.330_794_518_822_238_097_83E-17,
    -2.431_279_846_547_954_693_59E-16,
    1.715_391_285_555_133_030_61E-15,
    -1.168_533_287_799_345_168_08E-14,
    7.676_185_498_604_935_616_88E-14,
    -4.856_446_783_111_929_460_90E-13,
    2.955_052_663_129_639_834_61E-12,
    -1.726_826_291_441_555_707_23E-11,
    9.675_809_035_373_236_912_24E-11,
    -5.189_795_601_635_262_906_66E-10,
    2.659_823_724_682_386_650_35E-9,
    -1.300_025_009_986_248_042_12E-8,
    6.046_995_022_541_918_949_32E-8,
    -2.670_793_853_940_611_733_91E-7,
    1.117_387_539_120_103_718_15E-6,
    -4.416_738_358_458_750_563_59E-6,
    1.644_844_807_072_889_708_93E-5,
    -5.754_195_010_082_103_703_98E-5,
    1.885_028_850_958_416_557_29E-4,
    -5.763_755_745_385_823_658_85E-4,
    1.639_475_616_941_335_798_42E-3,
    -4.324_309_995_050_575_944_30E-3,
    1.054_646_039_459_499_831_83E-2,
    -2.373_741_480_589_946_881_56E-2,
    4.930_528_423_967_070_848_78E-2,
    -9.490_109_704_804_764_442_10E-2,
    1.716_209_015_222_087_753_49E-1,
    -3.046_826_723_431_983_986_83E-1,
    6.767_952_744_094_760_849_95E-1,
];

const I0E_LARGE: [f64; 25] = [
    -7.233_180_487_874_753_954_56E-18,
    -4.830_504_485_944_182_071_26E-18,
    4.465_621_420_296_759_999_01E-17,
    3.461_222_867_697_461_093_10E-17,
    -2.827_623_980_516_583_484_94E-16,
    -3.425_485_619_677_219_134_62E-16,
    1.772_560_133_056_526_383_60E-15,
    3.811_680_669_352_622_420_75E-15,
    -9.554_846_698_828_307_648_70E-15,
    -4.150_569_347_287_222_086_63E-14,
    1.540_086_217_521_409_826_91E-14,
    3.852_778_382_742_142_701_14E-13,
    7.180_124_451_383_666_233_67E-13,
    -1.794_178_531_506_806_117_78E-12,
    -1.321_581_184_044_771_311_88E-11,
    -3.149_916_527_963_241_364_54E-11,
    1.188_914_710_784_643_834_24E-11,
    4.940_602_388_224_969_589_10E-10,
    3.396_232_025_708_386_345_15E-9,
    2.266_668_990_498_178_064_59E-8,
    2.048_918_589_469_063_741_83E-7,
    2.891_370_520_834_756_482_97E-6,
    6.889_758_346_916_823_984_26E-5,
    3.369_116_478_255_694_089_90E-3,
    8.044_904_110_141_088_316_08E-1,
];

fn chebyshev(x: f64, coeffs: &[f64]) -> f64 {
    let mut b0 = coeffs[0];
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for &c in &coeffs[1..] {
        b2 = b1;
        b1 = b0;
        b0 = x * b1 - b2 + c;
    }
    0.5 * (b0 - b2)
}

/// Exponentially scaled modified Bessel function `exp(-|x|) I0(x)`.
pub fn bessel_i0e(x: f64) -> f64 {
    let x = x.abs();
    if x <= 8.0 {
        chebyshev(x / 2.0 - 2.0, &I0E_SMALL)
    } else {
        chebyshev(32.0 / x - 2.0, &I0E_LARGE) / x.sqrt()
    }
}

/// Modified Bessel function of the first kind, order zero.
pub fn bessel_i0(x: f64) -> f64 {
    bessel_i0e(x) * x.abs().exp()
}

/// Von Mises density `exp(kappa cos(alpha - mu)) / (2 pi I0(kappa))`.
pub fn von_mises_pdf(alpha: f64, mu: f64, kappa: f64) -> Result<f64> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "von Mises concentration must be finite and >= 0, got {kappa}"
        )));
    }
    // scaled form stays finite for large kappa
    Ok((kappa * ((alpha - mu).cos() - 1.0)).exp() / (2.0 * PI * bessel_i0e(kappa)))
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(angle: f64) -> f64 {
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Von Mises law with a precomputed wrapped-Cauchy envelope
/// (Best & Fisher rejection sampler).
#[derive(Debug, Clone, Copy)]
pub struct VonMises {
    mu: f64,
    kappa: f64,
    envelope: f64,
}

impl VonMises {
    pub fn new(mu: f64, kappa: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::InvalidArgument(format!("von Mises mean must be finite, got {mu}")));
        }
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "von Mises concentration must be finite and >= 0, got {kappa}"
            )));
        }
        let envelope = if kappa < 1e-5 {
            1.0 / kappa + kappa
        } else {
            let r = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
            let rho = (r - (2.0 * r).sqrt()) / (2.0 * kappa);
            (1.0 + rho * rho) / (2.0 * rho)
        };
        Ok(Self { mu, kappa, envelope })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn pdf(&self, alpha: f64) -> f64 {
        (self.kappa * ((alpha - self.mu).cos() - 1.0)).exp() / (2.0 * PI * bessel_i0e(self.kappa))
    }
}

impl Distribution<f64> for VonMises {
    /// Draws an angle in `[-pi, pi)`.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.kappa == 0.0 {
            return rng.random_range(-PI..PI);
        }
        if self.kappa > 1e6 {
            let normal = Normal::new(self.mu, (1.0 / self.kappa).sqrt())
                .expect("positive standard deviation");
            return wrap_angle(normal.sample(rng));
        }
        let s = self.envelope;
        let w = loop {
            let u: f64 = rng.random();
            let z = (PI * u).cos();
            let w = (1.0 + s * z) / (s + z);
            let y = self.kappa * (s - w);
            let v: f64 = rng.random();
            if y * (2.0 - y) - v >= 0.0 || (y / v).ln() + 1.0 - y >= 0.0 {
                break w;
            }
        };
        let mut angle = w.clamp(-1.0, 1.0).acos();
        if rng.random::<f64>() < 0.5 {
            angle = -angle;
        }
        wrap_angle(angle + self.mu)
    }
}

pub fn sample_von_mises<R: Rng + ?Sized>(mu: f64, kappa: f64, rng: &mut R) -> Result<f64> {
    Ok(VonMises::new(mu, kappa)?.sample(rng))
}

/// One propagation path through the scatterer at `position`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub position: Vec3,
    /// Random phase in `[-pi, pi)`.
    pub phase: f64,
}

/// Clusters of rays for one channel realization. Static over a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererField {
    pub clusters: Vec<Vec<Ray>>,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RayRecord {
    cluster: usize,
    ray: usize,
    x: f64,
    y: f64,
    z: f64,
    phase: f64,
}

impl ScattererField {
    /// Field built from explicit rays, for hand-constructed scenarios.
    pub fn from_clusters(clusters: Vec<Vec<Ray>>) -> Self {
        Self {
            clusters,
            seed: 0,
            stream: 0,
        }
    }

    pub fn rays(&self) -> impl Iterator<Item = &Ray> + '_ {
        self.clusters.iter().flatten()
    }

    pub fn ray_count(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.ray_count() == 0
    }

    /// Writes `cluster,ray,x,y,z,phase` rows (1-based cluster and ray indices).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (l, cluster) in self.clusters.iter().enumerate() {
            for (n, ray) in cluster.iter().enumerate() {
                w.serialize(RayRecord {
                    cluster: l + 1,
                    ray: n + 1,
                    x: ray.position.x,
                    y: ray.position.y,
                    z: ray.position.z,
                    phase: ray.phase,
                })?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Reads the layout produced by [`ScattererField::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut clusters: Vec<Vec<Ray>> = Vec::new();
        for record in r.deserialize() {
            let rec: RayRecord = record?;
            if rec.cluster == 0 || rec.ray == 0 {
                return Err(Error::InvalidArgument(
                    "cluster and ray indices are 1-based".into(),
                ));
            }
            if clusters.len() < rec.cluster {
                clusters.resize_with(rec.cluster, Vec::new);
            }
            let cluster = &mut clusters[rec.cluster - 1];
            if cluster.len() + 1 != rec.ray {
                return Err(Error::InvalidArgument(format!(
                    "ray {} of cluster {} out of order",
                    rec.ray, rec.cluster
                )));
            }
            cluster.push(Ray {
                position: Vec3::new(rec.x, rec.y, rec.z),
                phase: rec.phase,
            });
        }
        Ok(Self::from_clusters(clusters))
    }
}

/// Draws a field for realization `stream` of seed `seed`.
pub fn generate_scatterers(cfg: &ScenarioConfig, seed: u64, stream: u64) -> Result<ScattererField> {
    let mut rng = realization_rng(seed, stream);
    let clusters = draw_clusters(cfg, &mut rng)?;
    Ok(ScattererField {
        clusters,
        seed,
        stream,
    })
}

/// Cluster/ray draw from an arbitrary RNG.
pub fn draw_clusters<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Vec<Vec<Ray>>> {
    if cfg.clusters == 0 || cfg.rays_per_cluster == 0 {
        return Err(Error::config("clusters", "need at least one cluster and one ray"));
    }
    if !(cfg.scatter_radius_min > 0.0 && cfg.scatter_radius_max >= cfg.scatter_radius_min) {
        return Err(Error::config(
            "scatter_radius_max",
            "radius range must satisfy 0 < min <= max",
        ));
    }
    let origin = cfg.bs_center();
    let mr = cfg.mr_center(0.0);
    let global_az = VonMises::new(cfg.mu_alpha, cfg.kappa)?;
    let global_el = VonMises::new(cfg.mu_beta, cfg.kappa)?;

    let mut clusters = Vec::with_capacity(cfg.clusters);
    for l in 0..cfg.clusters {
        let (az_law, el_law) = match cfg.cluster_means {
            ClusterMeans::Global => (global_az, global_el),
            ClusterMeans::PerCluster => (
                VonMises::new(global_az.sample(rng), cfg.kappa)?,
                VonMises::new(global_el.sample(rng), cfg.kappa)?,
            ),
        };
        let mut rays = Vec::with_capacity(cfg.rays_per_cluster);
        for n in 0..cfg.rays_per_cluster {
            let mut placed = None;
            for _ in 0..MAX_PLACEMENT_ATTEMPTS {
                let azimuth = az_law.sample(rng);
                let elevation = el_law.sample(rng);
                let radius = if cfg.scatter_radius_max > cfg.scatter_radius_min {
                    rng.random_range(cfg.scatter_radius_min..cfg.scatter_radius_max)
                } else {
                    cfg.scatter_radius_min
                };
                let direction = Vec3::new(
                    elevation.cos() * azimuth.cos(),
                    elevation.cos() * azimuth.sin(),
                    elevation.sin(),
                );
                let p = origin + direction * radius;
                if p.z >= 0.0
                    && origin.horizontal_distance(p) >= MIN_HORIZONTAL_CLEARANCE
                    && mr.horizontal_distance(p) >= MIN_HORIZONTAL_CLEARANCE
                {
                    placed = Some(p);
                    break;
                }
            }
            let position = placed.ok_or_else(|| {
                Error::config(
                    "mu_beta",
                    format!(
                        "ray {} of cluster {} could not be placed above ground after {} attempts",
                        n + 1,
                        l + 1,
                        MAX_PLACEMENT_ATTEMPTS
                    ),
                )
            })?;
            let phase = rng.random_range(-PI..PI);
            rays.push(Ray { position, phase });
        }
        clusters.push(rays);
    }
    Ok(clusters)
}
