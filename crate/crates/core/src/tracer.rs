//! Ray propagation through a [`SurfaceStack`] and bundle bookkeeping.
//!
//! The sequential tracer visits the stack in order, the way a lens design
//! program does. The non-sequential tracer finds the nearest interface at
//! every step, splits stochastically at Fresnel interfaces and scatters off
//! Lambertian surfaces; it doubles as an oracle for the sequential one.
//!
//! Bundles are cut into fixed-size chunks of sample indices. Chunks run in
//! parallel and are merged in index order, so every count and every weight
//! sum is independent of the number of worker threads.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::SurfaceStack;
use crate::geometry::{
    fresnel_unpolarized, intersect, lambertian_direction, reflect, refract, Hit, Interaction,
    MissReason, Ray, Surface, SurfaceKind, Vec3, MIN_TRAVEL,
};
use crate::sampling::RayStream;
use crate::scene::{cell_key, ApertureDisc, Bench, Emitter, MarkerPose, SceneConfig};

/// Rays per parallel work item.
const CHUNK: u64 = 2048;

/// Interaction budget of a non-sequential path.
const MAX_EVENTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Returned,
    LostAperture,
    LostTir,
    LostMiss,
    Absorbed,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Returned => "returned",
            Outcome::LostAperture => "lost_aperture",
            Outcome::LostTir => "lost_tir",
            Outcome::LostMiss => "lost_miss",
            Outcome::Absorbed => "absorbed",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<MissReason> for Outcome {
    fn from(m: MissReason) -> Self {
        match m {
            MissReason::NoIntersection => Outcome::LostMiss,
            MissReason::OutsideAperture => Outcome::LostAperture,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceResult {
    pub outcome: Outcome,
    /// Present exactly when the ray returned.
    pub exit_ray: Option<Ray>,
    pub path: Option<Vec<Vec3>>,
}

impl TraceResult {
    fn lost(outcome: Outcome, path: Option<Vec<Vec3>>) -> Self {
        Self {
            outcome,
            exit_ray: None,
            path,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    #[default]
    Sequential,
    #[serde(alias = "mc")]
    NonSequential,
}

/// Kahan–Babuska accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.carry);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BundleStats {
    pub emitted: u64,
    pub returned: u64,
    pub on_detector: u64,
    pub weight_on_detector: CompensatedSum,
    pub weight_sq_on_detector: CompensatedSum,
    pub lost_aperture: u64,
    pub lost_tir: u64,
    pub lost_miss: u64,
    pub absorbed: u64,
}

impl BundleStats {
    pub fn record(&mut self, outcome: Outcome, detected_weight: Option<f64>) {
        self.emitted += 1;
        match outcome {
            Outcome::Returned => self.returned += 1,
            Outcome::LostAperture => self.lost_aperture += 1,
            Outcome::LostTir => self.lost_tir += 1,
            Outcome::LostMiss => self.lost_miss += 1,
            Outcome::Absorbed => self.absorbed += 1,
        }
        if let Some(w) = detected_weight {
            self.on_detector += 1;
            self.weight_on_detector.add(w);
            self.weight_sq_on_detector.add(w * w);
        }
    }

    /// Associative merge of two partial tallies.
    pub fn merge(&mut self, other: &BundleStats) {
        self.emitted += other.emitted;
        self.returned += other.returned;
        self.on_detector += other.on_detector;
        self.weight_on_detector.merge(&other.weight_on_detector);
        self.weight_sq_on_detector
            .merge(&other.weight_sq_on_detector);
        self.lost_aperture += other.lost_aperture;
        self.lost_tir += other.lost_tir;
        self.lost_miss += other.lost_miss;
        self.absorbed += other.absorbed;
    }

    pub fn count(&self, outcome: Outcome) -> u64 {
        match outcome {
            Outcome::Returned => self.returned,
            Outcome::LostAperture => self.lost_aperture,
            Outcome::LostTir => self.lost_tir,
            Outcome::LostMiss => self.lost_miss,
            Outcome::Absorbed => self.absorbed,
        }
    }

    /// Loss counts keyed by outcome.
    pub fn losses(&self) -> BTreeMap<Outcome, u64> {
        [
            Outcome::LostAperture,
            Outcome::LostTir,
            Outcome::LostMiss,
            Outcome::Absorbed,
        ]
        .into_iter()
        .map(|o| (o, self.count(o)))
        .collect()
    }

    /// Unweighted fraction of emitted rays that reached the lens.
    pub fn hit_fraction(&self) -> f64 {
        if self.emitted == 0 {
            0.0
        } else {
            self.on_detector as f64 / self.emitted as f64
        }
    }
}

fn touching(ray: &Ray, surface: &Surface) -> Option<Hit> {
    // A ray starting on the next surface (a mirror in contact with glass)
    // interacts there immediately.
    let p = ray.origin;
    let on_surface = match surface.kind {
        SurfaceKind::Planar => (p.z - surface.vertex_z).abs() <= MIN_TRAVEL,
        SurfaceKind::Spherical => {
            let c = Vec3::new(0.0, 0.0, surface.vertex_z + surface.curvature_radius);
            ((p - c).norm() - surface.curvature_radius.abs()).abs() <= MIN_TRAVEL
                && (p.z - c.z) * surface.curvature_radius <= 0.0
        }
    };
    if !on_surface || p.radial() > surface.aperture_radius {
        return None;
    }
    let front = surface.front_normal(p);
    let from_front = front.dot(ray.direction) < 0.0;
    Some(Hit {
        t: 0.0,
        point: p,
        normal: if from_front { front } else { -front },
        from_front,
    })
}

/// Follows one ray through the stack in its prescribed order.
///
/// `stream` feeds the Lambertian scattering draws; specular stacks never
/// touch it.
pub fn trace_unit(
    stack: &SurfaceStack,
    ray: Ray,
    stream: &mut RayStream,
    record_path: bool,
) -> TraceResult {
    let mut ray = ray;
    let mut path = record_path.then(|| vec![ray.origin]);
    for surface in &stack.sequence {
        let hit = match intersect(&ray, surface) {
            Ok(hit) => hit,
            Err(miss) => match touching(&ray, surface) {
                Some(hit) => hit,
                None => return TraceResult::lost(miss.into(), path),
            },
        };
        if let Some(p) = path.as_mut() {
            p.push(hit.point);
        }
        ray.origin = hit.point;
        match surface.interaction {
            Interaction::Refract => {
                let (n1, n2) = (surface.n_before, surface.n_after);
                let out = refract(ray.direction, hit.normal, n1, n2);
                if out.tir {
                    return TraceResult::lost(Outcome::LostTir, path);
                }
                if stack.fresnel_enabled {
                    let cos_i = -ray.direction.dot(hit.normal);
                    ray.weight *= 1.0 - fresnel_unpolarized(cos_i, n1, n2);
                }
                ray.direction = out.dir_out;
                ray.medium_index = n2;
            }
            Interaction::Mirror => {
                ray.direction = reflect(ray.direction, hit.normal);
                ray.weight *= surface.reflectivity;
            }
            Interaction::Lambertian => {
                let (u1, u2) = (stream.uniform(), stream.uniform());
                ray.direction = lambertian_direction(hit.normal, u1, u2);
                ray.weight *= surface.reflectivity;
            }
            Interaction::Absorb => return TraceResult::lost(Outcome::Absorbed, path),
        }
    }
    if ray.direction.z < 0.0 {
        TraceResult {
            outcome: Outcome::Returned,
            exit_ray: Some(ray),
            path,
        }
    } else {
        TraceResult::lost(Outcome::LostMiss, path)
    }
}

/// Exit through the side wall of the unit cell, if any.
fn cell_wall_hit(ray: &Ray, radius: f64, z_min: f64, z_max: f64) -> Option<f64> {
    let (o, d) = (ray.origin, ray.direction);
    let a = d.x * d.x + d.y * d.y;
    if a < 1e-18 {
        return None;
    }
    let b = o.x * d.x + o.y * d.y;
    let c = o.x * o.x + o.y * o.y - radius * radius;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    [(-b - sq) / a, (-b + sq) / a].into_iter().find(|&t| {
        let z = o.z + t * d.z;
        t > MIN_TRAVEL && z > z_min && z < z_max
    })
}

/// Follows one ray by nearest-intersection search over the distinct
/// interfaces of the stack.
///
/// With Fresnel enabled each refracting interface reflects with the Fresnel
/// probability instead of attenuating the weight. Rays that cross the side
/// wall of the unit cell are lost to the neighbouring units. At most one
/// Lambertian bounce is followed.
pub fn trace_nonsequential_unit(
    stack: &SurfaceStack,
    ray: Ray,
    stream: &mut RayStream,
    record_path: bool,
) -> TraceResult {
    let surfaces = stack.physical();
    let z_min = stack.aperture_z;
    let z_max = stack.back_z() + MIN_TRAVEL;
    let mut ray = ray;
    let mut path = record_path.then(|| vec![ray.origin]);
    let mut diffuse_bounces = 0;

    for _ in 0..MAX_EVENTS {
        let nearest = surfaces
            .iter()
            .filter_map(|s| intersect(&ray, s).ok().map(|h| (h, s)))
            .min_by(|a, b| a.0.t.total_cmp(&b.0.t));
        let wall = cell_wall_hit(&ray, stack.cell_radius, z_min, z_max);

        let (hit, surface) = match (nearest, wall) {
            (Some((hit, _)), Some(tw)) if tw < hit.t => {
                if let Some(p) = path.as_mut() {
                    p.push(ray.at(tw));
                }
                return TraceResult::lost(Outcome::LostAperture, path);
            }
            (None, Some(tw)) => {
                if let Some(p) = path.as_mut() {
                    p.push(ray.at(tw));
                }
                return TraceResult::lost(Outcome::LostAperture, path);
            }
            (Some(found), _) => found,
            (None, None) => {
                return if ray.direction.z < 0.0 {
                    TraceResult {
                        outcome: Outcome::Returned,
                        exit_ray: Some(ray),
                        path,
                    }
                } else {
                    TraceResult::lost(Outcome::LostMiss, path)
                };
            }
        };

        if let Some(p) = path.as_mut() {
            p.push(hit.point);
        }
        ray.origin = hit.point;
        match surface.interaction {
            Interaction::Refract => {
                let (n1, n2) = if hit.from_front {
                    (surface.n_before, surface.n_after)
                } else {
                    (surface.n_after, surface.n_before)
                };
                let out = refract(ray.direction, hit.normal, n1, n2);
                let reflected = out.tir
                    || (stack.fresnel_enabled && {
                        let cos_i = -ray.direction.dot(hit.normal);
                        stream.uniform() < fresnel_unpolarized(cos_i, n1, n2)
                    });
                if reflected {
                    ray.direction = reflect(ray.direction, hit.normal);
                } else {
                    ray.direction = out.dir_out;
                    ray.medium_index = n2;
                }
            }
            Interaction::Mirror => {
                ray.direction = reflect(ray.direction, hit.normal);
                ray.weight *= surface.reflectivity;
            }
            Interaction::Lambertian => {
                if diffuse_bounces == 1 {
                    return TraceResult::lost(Outcome::Absorbed, path);
                }
                diffuse_bounces += 1;
                let (u1, u2) = (stream.uniform(), stream.uniform());
                ray.direction = lambertian_direction(hit.normal, u1, u2);
                ray.weight *= surface.reflectivity;
            }
            Interaction::Absorb => return TraceResult::lost(Outcome::Absorbed, path),
        }
    }
    TraceResult::lost(Outcome::Absorbed, path)
}

/// One bundle: a stack on the bench, seen from one source.
#[derive(Debug, Clone, Copy)]
pub struct BundleSpec<'a> {
    pub stack: &'a SurfaceStack,
    pub scene: &'a SceneConfig,
    pub pose: MarkerPose,
    pub distance: f64,
    pub source_index: usize,
    pub rays: u64,
    pub seed: u64,
}

impl<'a> BundleSpec<'a> {
    pub fn new(
        stack: &'a SurfaceStack,
        scene: &'a SceneConfig,
        pose: MarkerPose,
        distance: f64,
        source_index: usize,
    ) -> Self {
        Self {
            stack,
            scene,
            pose,
            distance,
            source_index,
            rays: scene.rays_per_point,
            seed: scene.seed,
        }
    }

    fn emitter(&self) -> (Bench, Emitter) {
        let bench = Bench::new(self.scene, &self.pose, self.distance, self.source_index);
        let aperture = ApertureDisc {
            z: self.stack.aperture_z,
            radius: self.stack.cell_radius,
        };
        let key = cell_key(self.pose.rotation_deg, self.distance, self.source_index);
        let emitter = Emitter::new(&bench, &self.pose, aperture, self.seed, key);
        (bench, emitter)
    }
}

type UnitTracer = fn(&SurfaceStack, Ray, &mut RayStream, bool) -> TraceResult;

fn run_bundle(spec: &BundleSpec<'_>, unit: UnitTracer) -> BundleStats {
    let (bench, emitter) = spec.emitter();
    let chunks = spec.rays.div_ceil(CHUNK);
    let partials: Vec<BundleStats> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut stats = BundleStats::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(spec.rays) {
                let ray = emitter.ray(i);
                let mut stream = emitter.streams().tracing(i);
                let result = unit(spec.stack, ray, &mut stream, false);
                let detected = result.exit_ray.and_then(|exit| {
                    let world = emitter.frame().to_world(&exit);
                    bench.lands_on_lens(&world).then_some(world.weight)
                });
                stats.record(result.outcome, detected);
            }
            stats
        })
        .collect();
    let mut total = BundleStats::default();
    for p in &partials {
        total.merge(p);
    }
    total
}

/// Sequential trace of a whole bundle.
pub fn trace_bundle(spec: &BundleSpec<'_>) -> BundleStats {
    run_bundle(spec, trace_unit)
}

/// Non-sequential Monte Carlo trace of a whole bundle.
pub fn trace_nonsequential_mc(spec: &BundleSpec<'_>) -> BundleStats {
    run_bundle(spec, trace_nonsequential_unit)
}

pub fn trace_with_mode(spec: &BundleSpec<'_>, mode: TraceMode) -> BundleStats {
    match mode {
        TraceMode::Sequential => trace_bundle(spec),
        TraceMode::NonSequential => trace_nonsequential_mc(spec),
    }
}

/// Per-ray record of a bundle, for offline inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct RayRecord {
    pub sample_index: u64,
    pub outcome: Outcome,
    /// World-frame exit direction, zero when the ray did not return.
    pub exit_dir: Vec3,
    pub weight: f64,
}

pub fn dump_bundle(spec: &BundleSpec<'_>, mode: TraceMode) -> Vec<RayRecord> {
    let (_, emitter) = spec.emitter();
    let unit: UnitTracer = match mode {
        TraceMode::Sequential => trace_unit,
        TraceMode::NonSequential => trace_nonsequential_unit,
    };
    (0..spec.rays)
        .into_par_iter()
        .map(|i| {
            let mut stream = emitter.streams().tracing(i);
            let result = unit(spec.stack, emitter.ray(i), &mut stream, false);
            let (exit_dir, weight) = match result.exit_ray {
                Some(exit) => {
                    let world = emitter.frame().to_world(&exit);
                    (world.direction, world.weight)
                }
                None => (Vec3::ZERO, 0.0),
            };
            RayRecord {
                sample_index: i,
                outcome: result.outcome,
                exit_dir,
                weight,
            }
        })
        .collect()
}

/// Tab-separated dump: index, outcome, exit direction, weight.
pub fn format_dump(records: &[RayRecord]) -> String {
    let mut out =
        String::from("sample_index\toutcome\texit_dir_x\texit_dir_y\texit_dir_z\tweight\n");
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.sample_index, r.outcome, r.exit_dir.x, r.exit_dir.y, r.exit_dir.z, r.weight
        ));
    }
    out
}

/// Axial position where a meridional ray launched parallel to the axis at
/// `height` crosses the axis after the forward refracting surfaces.
pub fn traced_axis_crossing(stack: &SurfaceStack, height: f64) -> Option<f64> {
    let mut ray = Ray::new(Vec3::new(0.0, height, -1.0), Vec3::Z);
    for surface in stack.forward() {
        let hit = intersect(&ray, surface).ok()?;
        let out = refract(ray.direction, hit.normal, surface.n_before, surface.n_after);
        if out.tir {
            return None;
        }
        ray.origin = hit.point;
        ray.direction = out.dir_out;
    }
    if ray.direction.y == 0.0 {
        return None;
    }
    let t = -ray.origin.y / ray.direction.y;
    Some(ray.origin.z + t * ray.direction.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::{build_stack, preset, Preset};
    use crate::geometry::Surface;
    use crate::sampling::StreamFamily;
    use crate::scene::design_envelope_scene;

    fn stream() -> RayStream {
        StreamFamily::new(0, 0).tracing(0)
    }

    fn axial_exit(p: Preset) -> Ray {
        let stack = build_stack(&preset(p)).unwrap();
        let ray = Ray::new(Vec3::new(0.0, 0.0, -5.0), Vec3::Z);
        let res = trace_unit(&stack, ray, &mut stream(), true);
        assert_eq!(res.outcome, Outcome::Returned, "{p}");
        res.exit_ray.unwrap()
    }

    #[test]
    fn axial_rays_retroreflect() {
        for p in [Preset::ClassicSphere, Preset::SelectedC, Preset::SelectedA] {
            let exit = axial_exit(p);
            assert!(exit.direction.angle_to(-Vec3::Z) < 1e-9, "{p}");
            assert_eq!(exit.weight, 1.0);
        }
    }

    #[test]
    fn rays_through_ball_centre_return_antiparallel() {
        let stack = build_stack(&preset(Preset::SelectedC)).unwrap();
        let centre = Vec3::new(0.0, 0.0, 0.5);
        for deg in [1.0, 5.0, 12.0, 20.0] {
            let a = f64::to_radians(deg);
            let dir = Vec3::new(a.sin() * 0.6, a.sin() * 0.8, a.cos());
            let ray = Ray::new(centre - dir * 3.0, dir);
            let res = trace_unit(&stack, ray, &mut stream(), false);
            let exit = res.exit_ray.expect("returned");
            assert!(exit.direction.angle_to(-dir) < 1e-9, "{deg}");
        }
    }

    #[test]
    fn fresnel_weight_on_axis() {
        let mut design = preset(Preset::SelectedC);
        design.fresnel_enabled = true;
        design.mirror_reflectivity = 0.9;
        let stack = build_stack(&design).unwrap();
        let ray = Ray::new(Vec3::new(0.0, 0.0, -5.0), Vec3::Z);
        let exit = trace_unit(&stack, ray, &mut stream(), false)
            .exit_ray
            .unwrap();
        let r0 = ((1.4585f64 - 1.0) / (1.4585 + 1.0)).powi(2);
        let expected = (1.0 - r0).powi(4) * 0.9;
        assert!(
            (exit.weight - expected).abs() < 1e-12,
            "{} vs {expected}",
            exit.weight
        );
    }

    #[test]
    fn path_records_every_interface() {
        let stack = build_stack(&preset(Preset::SelectedC)).unwrap();
        let ray = Ray::new(Vec3::new(0.0, 0.1, -5.0), Vec3::Z);
        let res = trace_unit(&stack, ray, &mut stream(), true);
        assert_eq!(res.path.unwrap().len(), 1 + stack.len());
    }

    #[test]
    fn absorbing_stack_detects_nothing() {
        let mut stack = build_stack(&preset(Preset::SelectedC)).unwrap();
        let t = stack.terminal;
        stack.sequence[t].interaction = Interaction::Absorb;
        let scene = design_envelope_scene();
        let spec = BundleSpec {
            rays: 4000,
            ..BundleSpec::new(&stack, &scene, MarkerPose::rotated(0.0), 300.0, 0)
        };
        for stats in [trace_bundle(&spec), trace_nonsequential_mc(&spec)] {
            assert_eq!(stats.on_detector, 0);
            assert_eq!(stats.returned, 0);
        }
    }

    #[test]
    fn dark_mirror_returns_no_flux() {
        let mut design = preset(Preset::SelectedC);
        design.mirror_reflectivity = 0.0;
        let stack = build_stack(&design).unwrap();
        let scene = design_envelope_scene();
        let spec = BundleSpec {
            rays: 4000,
            ..BundleSpec::new(&stack, &scene, MarkerPose::rotated(0.0), 300.0, 0)
        };
        assert_eq!(
            trace_nonsequential_mc(&spec).weight_on_detector.value(),
            0.0
        );
        assert_eq!(trace_bundle(&spec).weight_on_detector.value(), 0.0);
    }

    #[test]
    fn counts_balance() {
        let stack = build_stack(&preset(Preset::Previous)).unwrap();
        let scene = design_envelope_scene();
        let spec = BundleSpec {
            rays: 5000,
            ..BundleSpec::new(&stack, &scene, MarkerPose::rotated(15.0), 300.0, 0)
        };
        for stats in [trace_bundle(&spec), trace_nonsequential_mc(&spec)] {
            let lost: u64 = stats.losses().values().sum();
            assert_eq!(stats.returned + lost, stats.emitted);
            assert!(stats.on_detector <= stats.returned);
            assert_eq!(stats.emitted, 5000);
        }
    }

    #[test]
    fn cell_wall_geometry() {
        let ray = Ray::new(Vec3::new(0.0, 0.0, 0.5), Vec3::new(1.0, 0.0, 1.0));
        let t = cell_wall_hit(&ray, 0.5, 0.0, 2.0).unwrap();
        assert!((ray.at(t).radial() - 0.5).abs() < 1e-12);
        assert!(cell_wall_hit(&ray, 0.5, 0.0, 0.9).is_none());
        assert!(cell_wall_hit(&Ray::new(Vec3::ZERO, Vec3::Z), 0.5, 0.0, 2.0).is_none());
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut s = CompensatedSum::default();
        s.add(1e16);
        for _ in 0..1000 {
            s.add(1.0);
        }
        s.add(-1e16);
        assert_eq!(s.value(), 1000.0);
    }

    #[test]
    fn flat_plate_in_contact_is_reached() {
        // A ray leaving the rear pole starts on the plate itself.
        let surface = Surface::plane(2.0, 1.0);
        let ray = Ray::new(Vec3::new(0.0, 0.0, 2.0), Vec3::Z);
        assert!(intersect(&ray, &surface).is_err());
        assert!(touching(&ray, &surface).is_some());
    }
}
