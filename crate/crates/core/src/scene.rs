//! Photogrammetric bench: point light sources around a camera lens, a marker
//! rotated about its centre, and the two standard bench layouts.
//!
//! World frame: the marker centre sits at `pose.centre`, the camera lens
//! disc lies in the plane `working_distance` in front of it (towards `-z`),
//! and source offsets are measured from the lens centre. The marker rotates
//! about the vertical (`y`) axis through its centre.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotate_about_point, Ray, Vec3};
use crate::sampling::{mix_key, StreamFamily};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaRange {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl ThetaRange {
    pub fn symmetric(limit: f64, step: f64) -> Self {
        Self {
            min: -limit,
            max: limit,
            step,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidScene(format!(
                "theta step {} must be positive",
                self.step
            )));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(Error::InvalidScene(format!(
                "theta range [{}, {}] is empty",
                self.min, self.max
            )));
        }
        if self.min < -90.0 || self.max > 90.0 {
            return Err(Error::InvalidScene(
                "entrance angles must lie within ±90°".into(),
            ));
        }
        Ok(())
    }

    /// Grid points `min + i * step`; halving the step keeps every old point
    /// bit-identical.
    pub fn values(&self) -> Vec<f64> {
        let count = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        (0..=count)
            .map(|i| self.min + i as f64 * self.step)
            .collect()
    }
}

/// Camera used in the lab bench; only its pixel footprint is derived from it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub resolution: [u32; 2],
    pub horizontal_fov_deg: f64,
    /// Object-space pixel size as quoted for 300 mm and 500 mm.
    pub quoted_mm_per_pixel: [f64; 2],
}

impl CameraModel {
    /// Object-space width of one pixel at `distance`.
    pub fn mm_per_pixel(&self, distance: f64) -> f64 {
        2.0 * distance * (self.horizontal_fov_deg / 2.0).to_radians().tan()
            / self.resolution[0] as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub working_distances: Vec<f64>,
    pub lens_diameter: f64,
    pub source_offsets: Vec<Vec3>,
    pub theta: ThetaRange,
    pub rays_per_point: u64,
    pub seed: u64,
    /// Object-space pixel size used to size the units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_footprint_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraModel>,
}

pub const DEFAULT_RAYS_PER_POINT: u64 = 20_000;
pub const DEFAULT_SEED: u64 = 20_220_401;

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.working_distances.is_empty()
            || self
                .working_distances
                .iter()
                .any(|w| !(*w > 0.0 && w.is_finite()))
        {
            return Err(Error::InvalidScene(
                "working distances must be positive".into(),
            ));
        }
        if !(self.lens_diameter > 0.0 && self.lens_diameter.is_finite()) {
            return Err(Error::InvalidScene("lens diameter must be positive".into()));
        }
        if self.source_offsets.is_empty() || self.source_offsets.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidScene(
                "at least one finite source offset is required".into(),
            ));
        }
        if self.rays_per_point == 0 {
            return Err(Error::InvalidScene(
                "rays_per_point must be at least 1".into(),
            ));
        }
        self.theta.validate()
    }

    pub fn with_rays(mut self, rays: u64) -> Self {
        self.rays_per_point = rays;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_distances(mut self, distances: Vec<f64>) -> Self {
        self.working_distances = distances;
        self
    }

    pub fn with_theta(mut self, theta: ThetaRange) -> Self {
        self.theta = theta;
        self
    }
}

/// Compact camera and light envelope on a robot wrist.
pub fn design_envelope_scene() -> SceneConfig {
    SceneConfig {
        working_distances: vec![300.0, 500.0],
        lens_diameter: 50.0,
        source_offsets: vec![Vec3::new(0.0, 35.0, 0.0)],
        theta: ThetaRange::symmetric(20.0, 2.0),
        rays_per_point: DEFAULT_RAYS_PER_POINT,
        seed: DEFAULT_SEED,
        pixel_footprint_mm: Some(0.4),
        camera: None,
    }
}

/// Lab bench: a 30 mm lens ringed by four LEDs at 22 mm on the diagonals.
pub fn experiment_scene() -> SceneConfig {
    let c = 22.0 / std::f64::consts::SQRT_2;
    SceneConfig {
        working_distances: vec![300.0, 500.0],
        lens_diameter: 30.0,
        source_offsets: vec![
            Vec3::new(c, c, 0.0),
            Vec3::new(-c, -c, 0.0),
            Vec3::new(-c, c, 0.0),
            Vec3::new(c, -c, 0.0),
        ],
        theta: ThetaRange::symmetric(20.0, 2.0),
        rays_per_point: DEFAULT_RAYS_PER_POINT,
        seed: DEFAULT_SEED,
        pixel_footprint_mm: None,
        camera: Some(CameraModel {
            resolution: [1920, 1200],
            horizontal_fov_deg: 71.2,
            quoted_mm_per_pixel: [0.4, 0.5],
        }),
    }
}

/// Angle at the marker between the camera lens centre and a source.
pub fn observation_angle(offset_mm: f64, working_distance_mm: f64) -> f64 {
    offset_mm.atan2(working_distance_mm).to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerPose {
    pub centre: Vec3,
    /// Rotation about the vertical axis through the centre.
    pub rotation_deg: f64,
}

impl MarkerPose {
    pub fn rotated(rotation_deg: f64) -> Self {
        Self {
            centre: Vec3::ZERO,
            rotation_deg,
        }
    }
}

/// Entrance aperture of one unit in its local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApertureDisc {
    pub z: f64,
    pub radius: f64,
}

/// Maps between the world frame and the local frame of a rotated unit.
#[derive(Debug, Clone, Copy)]
pub struct MarkerFrame {
    pose: MarkerPose,
    pivot: Vec3,
}

impl MarkerFrame {
    pub fn new(pose: MarkerPose, aperture: ApertureDisc) -> Self {
        Self {
            pose,
            pivot: Vec3::new(0.0, 0.0, aperture.z),
        }
    }

    pub fn to_local(&self, ray: &Ray) -> Ray {
        let shifted = Ray {
            origin: ray.origin - self.pose.centre + self.pivot,
            ..*ray
        };
        rotate_about_point(&shifted, self.pivot, Vec3::Y, -self.pose.rotation_deg)
    }

    pub fn to_world(&self, ray: &Ray) -> Ray {
        let rotated = rotate_about_point(ray, self.pivot, Vec3::Y, self.pose.rotation_deg);
        Ray {
            origin: rotated.origin - self.pivot + self.pose.centre,
            ..rotated
        }
    }
}

/// Where one bundle comes from and where the camera sits.
#[derive(Debug, Clone, Copy)]
pub struct Bench {
    pub source: Vec3,
    pub lens_centre: Vec3,
    pub lens_radius: f64,
}

impl Bench {
    pub fn new(scene: &SceneConfig, pose: &MarkerPose, distance: f64, source_index: usize) -> Self {
        let lens_centre = pose.centre - Vec3::Z * distance;
        Self {
            source: lens_centre + scene.source_offsets[source_index],
            lens_centre,
            lens_radius: scene.lens_diameter / 2.0,
        }
    }

    /// Whether a world-frame ray lands on the camera lens disc.
    pub fn lands_on_lens(&self, ray: &Ray) -> bool {
        if ray.direction.z >= 0.0 {
            return false;
        }
        let t = (self.lens_centre.z - ray.origin.z) / ray.direction.z;
        if t <= 0.0 {
            return false;
        }
        let p = ray.at(t);
        (p.x - self.lens_centre.x).hypot(p.y - self.lens_centre.y) <= self.lens_radius
    }
}

/// Deterministic ray generator for one (pose, distance, source) cell.
///
/// Rays are aimed at points spread uniformly over the entrance aperture.
/// Odd sample indices reuse the draws of their even partner mirrored across
/// the `x = 0` plane, so a bundle from an on-axis or vertically offset
/// source is symmetric about its meridional plane.
#[derive(Clone)]
pub struct Emitter {
    frame: MarkerFrame,
    aperture: ApertureDisc,
    source_local: Vec3,
    streams: StreamFamily,
}

impl Emitter {
    pub fn new(
        bench: &Bench,
        pose: &MarkerPose,
        aperture: ApertureDisc,
        seed: u64,
        key: u64,
    ) -> Self {
        let frame = MarkerFrame::new(*pose, aperture);
        let source_local = frame.to_local(&Ray::new(bench.source, Vec3::Z)).origin;
        Self {
            frame,
            aperture,
            source_local,
            streams: StreamFamily::new(seed, key),
        }
    }

    pub fn frame(&self) -> &MarkerFrame {
        &self.frame
    }

    pub fn streams(&self) -> &StreamFamily {
        &self.streams
    }

    /// Aperture point for sample `index`, in the local frame.
    pub fn target(&self, index: u64) -> Vec3 {
        let mut draws = self.streams.emission(index & !1);
        let r = self.aperture.radius * draws.uniform().sqrt();
        let phi = std::f64::consts::TAU * draws.uniform();
        let x = r * phi.cos();
        let x = if index & 1 == 1 { -x } else { x };
        Vec3::new(x, r * phi.sin(), self.aperture.z)
    }

    /// Ray `index` of the bundle, in the local frame.
    pub fn ray(&self, index: u64) -> Ray {
        let target = self.target(index);
        Ray::new(self.source_local, target - self.source_local)
    }
}

/// Stream key shared by every design evaluated at the same bench cell.
pub fn cell_key(theta_deg: f64, distance: f64, source_index: usize) -> u64 {
    mix_key(&[theta_deg.to_bits(), distance.to_bits(), source_index as u64])
}

/// `n` rays of one bundle, in the marker's local frame.
pub fn emit_bundle(
    scene: &SceneConfig,
    pose: &MarkerPose,
    aperture: ApertureDisc,
    distance: f64,
    source_index: usize,
    n: u64,
    seed: u64,
) -> Vec<Ray> {
    let bench = Bench::new(scene, pose, distance, source_index);
    let key = cell_key(pose.rotation_deg, distance, source_index);
    let emitter = Emitter::new(&bench, pose, aperture, seed, key);
    (0..n).map(|i| emitter.ray(i)).collect()
}
