//! Photogrammetric quantities derived from traced bundles: return fraction,
//! angularity curves, divergence and cross-design comparisons.
//!
//! A return fraction is the flux landing on the camera lens divided by the
//! flux sent at the unit cell, summed over every source of the scene and
//! scaled by the packing fill factor of the design.

use rayon::prelude::*;
use serde::Serialize;

use crate::designs::{build_stack, DesignFamily, SurfaceStack, UnitDesign};
use crate::error::{Error, Result};
use crate::geometry::{Ray, Vec3};
use crate::sampling::{fingerprint, mix_key, StreamFamily};
use crate::scene::{MarkerPose, SceneConfig};
use crate::tracer::{trace_unit, trace_with_mode, BundleSpec, BundleStats, TraceMode};

/// Name of the divergence statistic reported by [`divergence_histogram`].
pub const DIVERGENCE_STATISTIC: &str =
    "q80: half-angle of the cone about the retro direction enclosing 80% of returned flux";

/// Width of a divergence histogram bin.
pub const DIVERGENCE_BIN_DEG: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FractionEstimate {
    pub fraction: f64,
    pub stderr: f64,
    pub emitted: u64,
    pub on_detector: u64,
}

impl FractionEstimate {
    /// Pools the bundles of every source of one bench cell.
    pub fn from_stats(stats: &[BundleStats], fill_factor: f64) -> Self {
        let mut pooled = BundleStats::default();
        for s in stats {
            pooled.merge(s);
        }
        let n = pooled.emitted as f64;
        if pooled.emitted == 0 {
            return Self {
                fraction: 0.0,
                stderr: 0.0,
                emitted: 0,
                on_detector: 0,
            };
        }
        let mean = pooled.weight_on_detector.value() / n;
        let mean_sq = pooled.weight_sq_on_detector.value() / n;
        let var = (mean_sq - mean * mean).max(0.0);
        Self {
            fraction: fill_factor * mean,
            stderr: fill_factor * (var / n).sqrt(),
            emitted: pooled.emitted,
            on_detector: pooled.on_detector,
        }
    }
}

/// Return fraction against entrance angle at one working distance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResponseCurve {
    pub design: String,
    pub theta_deg: Vec<f64>,
    pub working_distance_mm: f64,
    pub return_fraction: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Hash of the design and scene that produced the curve.
    pub fingerprint: String,
}

impl ResponseCurve {
    pub fn len(&self) -> usize {
        self.theta_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta_deg.is_empty()
    }

    fn selected(&self, keep: impl Fn(f64) -> bool) -> Vec<f64> {
        self.theta_deg
            .iter()
            .zip(&self.return_fraction)
            .filter(|(t, _)| keep(**t))
            .map(|(_, f)| *f)
            .collect()
    }

    pub fn mean(&self) -> f64 {
        mean(&self.return_fraction)
    }

    /// Mean over entrance angles accepted by `keep`.
    pub fn mean_where(&self, keep: impl Fn(f64) -> bool) -> f64 {
        mean(&self.selected(keep))
    }

    /// Population standard deviation over the grid.
    pub fn std(&self) -> f64 {
        std_dev(&self.return_fraction)
    }

    /// Standard error of [`mean`](Self::mean), treating grid points as
    /// independent.
    pub fn mean_stderr(&self) -> f64 {
        mean_stderr(&self.stderr)
    }

    pub fn mean_stderr_where(&self, keep: impl Fn(f64) -> bool) -> f64 {
        let errs: Vec<f64> = self
            .theta_deg
            .iter()
            .zip(&self.stderr)
            .filter(|(t, _)| keep(**t))
            .map(|(_, e)| *e)
            .collect();
        mean_stderr(&errs)
    }

    /// Ratio of standard deviation to mean over the angles accepted by `keep`.
    pub fn coefficient_of_variation(&self, keep: impl Fn(f64) -> bool) -> f64 {
        let values = self.selected(keep);
        std_dev(&values) / mean(&values)
    }

    /// Value at `theta`, if it lies on the grid.
    pub fn at(&self, theta: f64) -> Option<(f64, f64)> {
        let i = self
            .theta_deg
            .iter()
            .position(|t| (t - theta).abs() < 1e-9)?;
        Some((self.return_fraction[i], self.stderr[i]))
    }

    /// Mean minus `lambda` standard deviations: a uniformity-weighted score.
    pub fn score(&self, lambda: f64) -> f64 {
        self.mean() - lambda * self.std()
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

fn mean_stderr(errs: &[f64]) -> f64 {
    errs.iter().map(|e| e * e).sum::<f64>().sqrt() / errs.len() as f64
}

/// Score of a set of curves: the unweighted mean of per-curve scores.
pub fn multi_distance_score(curves: &[ResponseCurve], lambda: f64) -> f64 {
    mean(&curves.iter().map(|c| c.score(lambda)).collect::<Vec<_>>())
}

/// Standard error of [`multi_distance_score`] at `lambda = 0`.
pub fn multi_distance_stderr(curves: &[ResponseCurve]) -> f64 {
    mean_stderr(
        &curves
            .iter()
            .map(ResponseCurve::mean_stderr)
            .collect::<Vec<_>>(),
    )
}

/// A labelled family of curves, one per working distance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub label: String,
    pub curves: Vec<ResponseCurve>,
}

impl Series {
    pub fn score(&self, lambda: f64) -> f64 {
        multi_distance_score(&self.curves, lambda)
    }

    pub fn curve_at(&self, distance: f64) -> Option<&ResponseCurve> {
        self.curves
            .iter()
            .find(|c| c.working_distance_mm == distance)
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta.is_finite() && theta.abs() <= 90.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "entrance angle {theta} outside [-90, 90] degrees"
        )))
    }
}

fn design_fingerprint(design: &UnitDesign, scene: &SceneConfig) -> String {
    fingerprint(&format!("{design:?}|{scene:?}"))
}

/// Evaluates designs on a bench with a chosen tracer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Evaluator {
    pub mode: TraceMode,
}

impl Evaluator {
    pub fn new(mode: TraceMode) -> Self {
        Self { mode }
    }

    fn cell(
        &self,
        stack: &SurfaceStack,
        scene: &SceneConfig,
        theta: f64,
        distance: f64,
    ) -> FractionEstimate {
        let pose = MarkerPose::rotated(theta);
        let stats: Vec<BundleStats> = (0..scene.source_offsets.len())
            .map(|i| trace_with_mode(&BundleSpec::new(stack, scene, pose, distance, i), self.mode))
            .collect();
        FractionEstimate::from_stats(&stats, stack.fill_factor)
    }

    pub fn return_fraction(
        &self,
        design: &UnitDesign,
        scene: &SceneConfig,
        theta: f64,
        distance: f64,
    ) -> Result<FractionEstimate> {
        check_theta(theta)?;
        scene.validate()?;
        let stack = build_stack(design)?;
        Ok(self.cell(&stack, scene, theta, distance))
    }

    /// One curve per working distance of the scene.
    pub fn curves(
        &self,
        label: &str,
        design: &UnitDesign,
        scene: &SceneConfig,
    ) -> Result<Vec<ResponseCurve>> {
        scene.validate()?;
        let stack = build_stack(design)?;
        let thetas = scene.theta.values();
        for &t in &thetas {
            check_theta(t)?;
        }
        let cells: Vec<(f64, f64)> = scene
            .working_distances
            .iter()
            .flat_map(|&d| thetas.iter().map(move |&t| (d, t)))
            .collect();
        let estimates: Vec<FractionEstimate> = cells
            .par_iter()
            .map(|&(d, t)| self.cell(&stack, scene, t, d))
            .collect();
        let print = design_fingerprint(design, scene);
        Ok(estimates
            .chunks(thetas.len())
            .zip(&scene.working_distances)
            .map(|(row, &d)| ResponseCurve {
                design: label.to_string(),
                theta_deg: thetas.clone(),
                working_distance_mm: d,
                return_fraction: row.iter().map(|e| e.fraction).collect(),
                stderr: row.iter().map(|e| e.stderr).collect(),
                fingerprint: print.clone(),
            })
            .collect())
    }

    pub fn series(&self, label: &str, design: &UnitDesign, scene: &SceneConfig) -> Result<Series> {
        Ok(Series {
            label: label.to_string(),
            curves: self.curves(label, design, scene)?,
        })
    }

    pub fn angularity_curve(
        &self,
        design: &UnitDesign,
        scene: &SceneConfig,
        distance: f64,
    ) -> Result<ResponseCurve> {
        let single = scene.clone().with_distances(vec![distance]);
        let mut curves = self.curves(design.family.tag(), design, &single)?;
        Ok(curves.remove(0))
    }

    pub fn compare_designs(
        &self,
        designs: &[(String, UnitDesign)],
        scene: &SceneConfig,
    ) -> Result<Vec<Series>> {
        if designs.is_empty() {
            return Err(Error::InvalidArgument("no designs to compare".into()));
        }
        designs
            .iter()
            .map(|(label, d)| self.series(label, d, scene))
            .collect()
    }

    pub fn robustness_sweep(
        &self,
        design: &UnitDesign,
        scene: &SceneConfig,
        delta_d: &[f64],
    ) -> Result<Vec<Series>> {
        delta_d
            .iter()
            .map(|&dd| {
                let shifted = with_gap_error(design, dd)?;
                self.series(&format!("delta_d={dd}"), &shifted, scene)
            })
            .collect()
    }
}

/// Sequential-mode return fraction of one bench cell.
pub fn return_fraction(
    design: &UnitDesign,
    scene: &SceneConfig,
    theta: f64,
    distance: f64,
) -> Result<FractionEstimate> {
    Evaluator::default().return_fraction(design, scene, theta, distance)
}

pub fn angularity_curve(
    design: &UnitDesign,
    scene: &SceneConfig,
    distance: f64,
) -> Result<ResponseCurve> {
    Evaluator::default().angularity_curve(design, scene, distance)
}

pub fn compare_designs(
    designs: &[(String, UnitDesign)],
    scene: &SceneConfig,
) -> Result<Vec<Series>> {
    Evaluator::default().compare_designs(designs, scene)
}

pub fn robustness_sweep(
    design: &UnitDesign,
    scene: &SceneConfig,
    delta_d: &[f64],
) -> Result<Vec<Series>> {
    Evaluator::default().robustness_sweep(design, scene, delta_d)
}

/// The design with its mirror displaced by `delta_d` along the axis while
/// the mirror curvature stays as manufactured.
pub fn with_gap_error(design: &UnitDesign, delta_d: f64) -> Result<UnitDesign> {
    let gap = design.gap + delta_d;
    if gap < 0.0 {
        return Err(Error::NegativeGap(gap));
    }
    let shifted = UnitDesign { gap, ..*design };
    build_stack(&shifted)?;
    Ok(shifted)
}

/// CSV with one row per (design, entrance angle, distance).
pub fn curves_to_csv<'a>(curves: impl IntoIterator<Item = &'a ResponseCurve>) -> String {
    let mut out = String::from("design,theta_deg,distance_mm,fraction,stderr\n");
    for c in curves {
        for i in 0..c.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.design, c.theta_deg[i], c.working_distance_mm, c.return_fraction[i], c.stderr[i]
            ));
        }
    }
    out
}

/// Angular spread of the light returned from collimated axial illumination.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceHistogram {
    /// Lower bin edges; bins are [`DIVERGENCE_BIN_DEG`] wide.
    pub angle_bins_deg: Vec<f64>,
    pub flux: Vec<f64>,
    /// Half-angle about the retro direction enclosing 80% of the flux.
    pub cone_angle_q80: f64,
    /// Three-sigma band on the cone angle from order statistics.
    pub q80_band: (f64, f64),
    pub returned: u64,
    pub emitted: u64,
    pub statistic: &'static str,
}

impl DivergenceHistogram {
    pub fn total_flux(&self) -> f64 {
        self.flux.iter().sum()
    }
}

fn disc_point(streams: &StreamFamily, index: u64, radius: f64, z: f64) -> Vec3 {
    let mut draws = streams.emission(index & !1);
    let r = radius * draws.uniform().sqrt();
    let phi = std::f64::consts::TAU * draws.uniform();
    let x = if index & 1 == 1 {
        -r * phi.cos()
    } else {
        r * phi.cos()
    };
    Vec3::new(x, r * phi.sin(), z)
}

/// Exit rays of a collimated beam tilted by `theta_deg` in the x-z plane.
fn collimated_exits(stack: &SurfaceStack, theta_deg: f64, n: u64, seed: u64) -> Vec<Ray> {
    let streams = StreamFamily::new(seed, mix_key(&[theta_deg.to_bits(), 0xC011_1A7E]));
    let t = theta_deg.to_radians();
    let dir = Vec3::new(t.sin(), 0.0, t.cos());
    let exits: Vec<Option<Ray>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let target = disc_point(&streams, i, stack.cell_radius, stack.aperture_z);
            let ray = Ray::new(target - dir * (4.0 * stack.cell_radius + 1.0), dir);
            let mut stream = streams.tracing(i);
            trace_unit(stack, ray, &mut stream, false).exit_ray
        })
        .collect();
    exits.into_iter().flatten().collect()
}

/// Weighted quantile of pre-sorted `(value, weight)` pairs.
fn weighted_quantile(sorted: &[(f64, f64)], total: f64, q: f64) -> f64 {
    let target = q.clamp(0.0, 1.0) * total;
    let mut acc = 0.0;
    for &(v, w) in sorted {
        acc += w;
        if acc >= target {
            return v;
        }
    }
    sorted.last().map_or(f64::NAN, |p| p.0)
}

pub fn divergence_histogram(design: &UnitDesign, n: u64, seed: u64) -> Result<DivergenceHistogram> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "divergence needs at least one ray".into(),
        ));
    }
    let stack = build_stack(design)?;
    let exits = collimated_exits(&stack, 0.0, n, seed);
    let mut samples: Vec<(f64, f64)> = exits
        .iter()
        .map(|r| (r.direction.angle_to(-Vec3::Z).to_degrees(), r.weight))
        .collect();
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));

    let bins = (90.0 / DIVERGENCE_BIN_DEG) as usize;
    let mut flux = vec![0.0; bins];
    for &(angle, w) in &samples {
        flux[((angle / DIVERGENCE_BIN_DEG) as usize).min(bins - 1)] += w;
    }
    let total: f64 = samples.iter().map(|s| s.1).sum();
    let m = samples.len() as f64;
    let half_band = if m > 0.0 {
        3.0 * (0.8 * 0.2 / m).sqrt()
    } else {
        0.0
    };
    Ok(DivergenceHistogram {
        angle_bins_deg: (0..bins).map(|i| i as f64 * DIVERGENCE_BIN_DEG).collect(),
        flux,
        cone_angle_q80: weighted_quantile(&samples, total, 0.8),
        q80_band: (
            weighted_quantile(&samples, total, 0.8 - half_band),
            weighted_quantile(&samples, total, 0.8 + half_band),
        ),
        returned: samples.len() as u64,
        emitted: n,
        statistic: DIVERGENCE_STATISTIC,
    })
}

/// Flux-weighted skewness of the in-plane deviation from the retro
/// direction under a collimated beam at `theta_deg`.
///
/// Zero for a distribution symmetric about the retro direction.
pub fn deviation_skewness(design: &UnitDesign, theta_deg: f64, n: u64, seed: u64) -> Result<f64> {
    check_theta(theta_deg)?;
    if design.family == DesignFamily::FullDiffuse {
        return Err(Error::InvalidArgument(
            "a diffuse plane has no retro direction".into(),
        ));
    }
    let stack = build_stack(design)?;
    let t = theta_deg.to_radians();
    let across = Vec3::new(t.cos(), 0.0, -t.sin());
    let exits = collimated_exits(&stack, theta_deg, n, seed);
    let total: f64 = exits.iter().map(|r| r.weight).sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("no flux returned".into()));
    }
    let dev: Vec<(f64, f64)> = exits
        .iter()
        .map(|r| (r.direction.dot(across), r.weight))
        .collect();
    let mu = dev.iter().map(|(x, w)| x * w).sum::<f64>() / total;
    let moment = |k: i32| dev.iter().map(|(x, w)| (x - mu).powi(k) * w).sum::<f64>() / total;
    let var = moment(2);
    Ok(if var > 0.0 {
        moment(3) / var.powf(1.5)
    } else {
        0.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::{preset, Preset};
    use crate::scene::{design_envelope_scene, ThetaRange};

    fn small_scene() -> SceneConfig {
        design_envelope_scene()
            .with_rays(4000)
            .with_theta(ThetaRange::symmetric(10.0, 5.0))
    }

    #[test]
    fn unweighted_stderr_is_binomial() {
        let mut s = BundleStats::default();
        for i in 0..1000 {
            s.record(
                crate::tracer::Outcome::Returned,
                (i % 4 == 0).then_some(1.0),
            );
        }
        let e = FractionEstimate::from_stats(&[s], 1.0);
        assert_eq!(e.fraction, 0.25);
        assert!((e.stderr - (0.25f64 * 0.75 / 1000.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn fractions_lie_in_unit_interval() {
        let scene = small_scene();
        for p in [Preset::Previous, Preset::FullDiffuse, Preset::SelectedC] {
            for c in Evaluator::default()
                .curves(p.name(), &preset(p), &scene)
                .unwrap()
            {
                assert_eq!(c.len(), 5);
                assert!(c.return_fraction.iter().all(|f| (0.0..=1.0).contains(f)));
            }
        }
    }

    #[test]
    fn curves_are_reproducible_and_refinable() {
        let design = preset(Preset::SelectedA);
        let scene = small_scene();
        let a = Evaluator::default().curves("a", &design, &scene).unwrap();
        let b = Evaluator::default().curves("a", &design, &scene).unwrap();
        assert_eq!(a, b);
        let fine = scene.clone().with_theta(ThetaRange::symmetric(10.0, 2.5));
        let f = Evaluator::default().curves("a", &design, &fine).unwrap();
        for (coarse, refined) in a.iter().zip(&f) {
            for (t, v) in coarse.theta_deg.iter().zip(&coarse.return_fraction) {
                assert_eq!(refined.at(*t).unwrap().0, *v);
            }
        }
    }

    #[test]
    fn zero_gap_error_reproduces_base_curve() {
        let design = preset(Preset::SelectedC);
        let scene = small_scene();
        let base = Evaluator::default()
            .series("delta_d=0", &design, &scene)
            .unwrap();
        let swept = robustness_sweep(&design, &scene, &[0.0]).unwrap();
        assert_eq!(swept[0].curves, base.curves);
    }

    #[test]
    fn gap_error_rejects_negative_gap() {
        let design = preset(Preset::SelectedC);
        assert!(matches!(
            with_gap_error(&design, -1.0),
            Err(Error::NegativeGap(_))
        ));
        let moved = with_gap_error(&design, 0.1).unwrap();
        assert_eq!(moved.mirror_radius, design.mirror_radius);
        assert!((moved.gap - design.gap - 0.1).abs() < 1e-15);
    }

    #[test]
    fn theta_outside_quarter_turn_is_rejected() {
        let scene = small_scene();
        assert!(return_fraction(&preset(Preset::SelectedC), &scene, 95.0, 300.0).is_err());
    }

    #[test]
    fn compare_needs_designs() {
        assert!(compare_designs(&[], &small_scene()).is_err());
    }

    #[test]
    fn csv_layout() {
        let c = ResponseCurve {
            design: "x".into(),
            theta_deg: vec![-1.0, 0.5],
            working_distance_mm: 300.0,
            return_fraction: vec![0.1, 0.25],
            stderr: vec![0.01, 0.02],
            fingerprint: String::new(),
        };
        assert_eq!(
            curves_to_csv([&c]),
            "design,theta_deg,distance_mm,fraction,stderr\nx,-1,300,0.1,0.01\nx,0.5,300,0.25,0.02\n"
        );
    }

    #[test]
    fn histogram_flux_matches_returned_weight() {
        let h = divergence_histogram(&preset(Preset::SelectedC), 5000, 7).unwrap();
        assert_eq!(h.flux.len(), h.angle_bins_deg.len());
        assert!((h.total_flux() - h.returned as f64).abs() < 1e-9);
        assert!(h.q80_band.0 <= h.cone_angle_q80 && h.cone_angle_q80 <= h.q80_band.1);
    }

    #[test]
    fn classic_cat_eye_is_symmetric_about_retro_direction() {
        let s = deviation_skewness(&preset(Preset::ClassicSphere), 0.0, 20_000, 3).unwrap();
        assert!(s.abs() < 1e-6, "{s}");
    }

    #[test]
    fn weighted_quantile_of_uniform_weights() {
        let v: Vec<(f64, f64)> = (1..=10).map(|i| (i as f64, 1.0)).collect();
        assert_eq!(weighted_quantile(&v, 10.0, 0.8), 8.0);
        assert_eq!(weighted_quantile(&v, 10.0, 0.05), 1.0);
    }
}
