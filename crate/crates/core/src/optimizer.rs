//! Grid search over marker geometry.
//!
//! The search runs in four steps. Step 1 sizes the unit from the pixel
//! footprint. Step 2 sweeps the lens-to-mirror distance. Step 3 bends the
//! mirror to the retroreflection condition of every candidate. Step 4
//! sweeps the aperture. Steps 2 to 4 are evaluated as one cross-product
//! grid; every candidate satisfies the retroreflection condition by
//! construction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::{DesignFamily, UnitDesign, N_FUSED_SILICA};
use crate::error::{Error, Result};
use crate::metrics::{multi_distance_stderr, Evaluator, Series};
use crate::sampling::fingerprint;
use crate::scene::SceneConfig;
use crate::tracer::TraceMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSize {
    pub a_max: f64,
    pub lens_radius: f64,
}

/// Largest aperture that stays below one pixel, and the lens that fills it.
pub fn step1_max_aperture(pixel_footprint_mm: f64) -> Result<UnitSize> {
    if !(pixel_footprint_mm > 0.0 && pixel_footprint_mm.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "pixel footprint {pixel_footprint_mm} must be positive"
        )));
    }
    Ok(UnitSize {
        a_max: pixel_footprint_mm,
        lens_radius: pixel_footprint_mm / 2.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Axis value: a focus offset or an aperture.
    pub value: f64,
    pub score: f64,
    pub stderr: f64,
}

fn score_series(series: &Series, lambda: f64) -> (f64, f64) {
    (series.score(lambda), multi_distance_stderr(&series.curves))
}

/// Scores one full-aperture candidate per focus offset.
pub fn step2_sweep_distance(
    family: DesignFamily,
    lens_radius: f64,
    index: f64,
    d_offsets: &[f64],
    scene: &SceneConfig,
) -> Result<Vec<SweepRow>> {
    let designs = d_offsets
        .iter()
        .map(|&off| {
            UnitDesign::from_focus_offset(family, lens_radius, index, 2.0 * lens_radius, off)
        })
        .collect::<Result<Vec<_>>>()?;
    designs
        .par_iter()
        .zip(d_offsets)
        .map(|(d, &off)| {
            let (score, stderr) = score_series(&Evaluator::default().series("", d, scene)?, 0.0);
            Ok(SweepRow {
                value: off,
                score,
                stderr,
            })
        })
        .collect()
}

/// Scores the design at `fraction · 2R_l` apertures, keeping its geometry.
pub fn step4_sweep_aperture(
    design: &UnitDesign,
    aperture_fractions: &[f64],
    scene: &SceneConfig,
) -> Result<Vec<SweepRow>> {
    let a_max = 2.0 * design.lens_radius;
    let designs = aperture_fractions
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "aperture fraction {f} outside (0, 1]"
                )));
            }
            let d = UnitDesign {
                aperture: f * a_max,
                ..*design
            };
            d.validate()?;
            Ok(d)
        })
        .collect::<Result<Vec<_>>>()?;
    designs
        .par_iter()
        .map(|d| {
            let (score, stderr) = score_series(&Evaluator::default().series("", d, scene)?, 0.0);
            Ok(SweepRow {
                value: d.aperture,
                score,
                stderr,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizationSpec {
    pub family: DesignFamily,
    /// Object-space pixel size at the shortest working distance.
    pub pixel_footprint_mm: f64,
    /// Candidate values of `d_f - d`.
    pub d_offsets: Vec<f64>,
    pub aperture_fractions: Vec<f64>,
    pub scene: SceneConfig,
    pub rays_per_cell: u64,
    pub seed: u64,
    #[serde(default = "default_index")]
    pub index: f64,
    /// Weight of the angular spread penalty in the score.
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub mode: TraceMode,
}

fn default_index() -> f64 {
    N_FUSED_SILICA
}

impl OptimizationSpec {
    pub fn validate(&self) -> Result<()> {
        step1_max_aperture(self.pixel_footprint_mm)?;
        if self.d_offsets.is_empty() || self.aperture_fractions.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if self.rays_per_cell == 0 {
            return Err(Error::InvalidArgument(
                "rays_per_cell must be positive".into(),
            ));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda {} must be non-negative",
                self.lambda
            )));
        }
        self.scene.validate()
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&format!("{self:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub offset: f64,
    pub aperture: f64,
    pub design: UnitDesign,
    pub score: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub best: UnitDesign,
    pub best_offset: f64,
    pub score: f64,
    pub grid: Vec<GridRow>,
    pub spec_fingerprint: String,
    pub seed: u64,
}

/// Whether `a` beats `b`: higher score, then larger aperture, then smaller
/// absolute offset.
fn better(a: &GridRow, b: &GridRow) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    if a.aperture != b.aperture {
        return a.aperture > b.aperture;
    }
    a.offset.abs() < b.offset.abs()
}

/// Index of the winning row under the tie-break rules.
pub fn argmax(grid: &[GridRow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, row) in grid.iter().enumerate() {
        if best.is_none_or(|b| better(row, &grid[b])) {
            best = Some(i);
        }
    }
    best
}

pub fn optimize(spec: &OptimizationSpec) -> Result<OptimizationReport> {
    spec.validate()?;
    let size = step1_max_aperture(spec.pixel_footprint_mm)?;
    let scene = spec
        .scene
        .clone()
        .with_rays(spec.rays_per_cell)
        .with_seed(spec.seed);
    let mut candidates = Vec::new();
    for &offset in &spec.d_offsets {
        for &fraction in &spec.aperture_fractions {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "aperture fraction {fraction} outside (0, 1]"
                )));
            }
            let aperture = fraction * size.a_max;
            let design = UnitDesign::from_focus_offset(
                spec.family,
                size.lens_radius,
                spec.index,
                aperture,
                offset,
            )?;
            candidates.push((offset, design));
        }
    }
    let evaluator = Evaluator::new(spec.mode);
    let grid = candidates
        .par_iter()
        .map(|(offset, design)| {
            let series = evaluator.series("", design, &scene)?;
            let (score, stderr) = score_series(&series, spec.lambda);
            Ok(GridRow {
                offset: *offset,
                aperture: design.aperture,
                design: *design,
                score,
                stderr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = argmax(&grid).ok_or(Error::EmptyGrid)?;
    Ok(OptimizationReport {
        best: grid[best].design,
        best_offset: grid[best].offset,
        score: grid[best].score,
        spec_fingerprint: spec.fingerprint(),
        seed: spec.seed,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::preset;
    use crate::designs::Preset;
    use crate::scene::{design_envelope_scene, ThetaRange};

    fn row(offset: f64, aperture: f64, score: f64) -> GridRow {
        GridRow {
            offset,
            aperture,
            design: preset(Preset::SelectedC),
            score,
            stderr: 0.0,
        }
    }

    #[test]
    fn step1_halves_the_footprint() {
        let s = step1_max_aperture(0.4).unwrap();
        assert_eq!((s.a_max, s.lens_radius), (0.4, 0.2));
        assert_eq!(step1_max_aperture(1.0).unwrap().lens_radius, 0.5);
        assert!(step1_max_aperture(0.0).is_err());
        assert!(step1_max_aperture(-1.0).is_err());
    }

    #[test]
    fn ties_prefer_larger_aperture_then_smaller_offset() {
        let grid = [
            row(0.1, 0.8, 1.0),
            row(0.05, 0.8, 1.0),
            row(0.0, 1.0, 1.0),
            row(0.2, 1.0, 1.0),
        ];
        assert_eq!(argmax(&grid), Some(2));
        let grid = [row(0.1, 0.8, 2.0), row(0.0, 1.0, 1.0)];
        assert_eq!(argmax(&grid), Some(0));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn single_offset_gives_single_row() {
        let scene = design_envelope_scene()
            .with_rays(500)
            .with_theta(ThetaRange::symmetric(4.0, 4.0));
        let rows =
            step2_sweep_distance(DesignFamily::BallC, 0.5, N_FUSED_SILICA, &[0.0], &scene).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(
            step2_sweep_distance(DesignFamily::BallC, 0.5, N_FUSED_SILICA, &[5.0], &scene).is_err()
        );
    }

    #[test]
    fn full_aperture_fraction_reproduces_design_score() {
        let scene = design_envelope_scene()
            .with_rays(500)
            .with_theta(ThetaRange::symmetric(4.0, 4.0));
        let design = preset(Preset::SelectedC);
        let rows = step4_sweep_aperture(&design, &[1.0], &scene).unwrap();
        let series = Evaluator::default().series("", &design, &scene).unwrap();
        assert_eq!(rows[0].score, series.score(0.0));
    }

    #[test]
    fn empty_grid_is_an_error() {
        let spec = OptimizationSpec {
            family: DesignFamily::BallC,
            pixel_footprint_mm: 1.0,
            d_offsets: vec![],
            aperture_fractions: vec![1.0],
            scene: design_envelope_scene(),
            rays_per_cell: 100,
            seed: 1,
            index: N_FUSED_SILICA,
            lambda: 0.0,
            mode: TraceMode::Sequential,
        };
        assert_eq!(optimize(&spec), Err(Error::EmptyGrid));
    }
}
