//! JSON run configuration.
//!
//! Every section rejects unknown keys. Lengths are millimetres and angles
//! are degrees throughout.

use std::path::{Path, PathBuf};

use catseye::designs::{
    default_thickness, preset, retro_mirror_radius, DesignFamily, Preset, UnitDesign,
    N_FUSED_SILICA,
};
use catseye::geometry::Vec3;
use catseye::scene::{design_envelope_scene, experiment_scene, SceneConfig, ThetaRange};
use catseye::tracer::TraceMode;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub design: Option<DesignSection>,
    #[serde(default)]
    pub designs: Vec<DesignSection>,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default)]
    pub run: RunSection,
    pub sweep: Option<SweepSection>,
    pub optimize: Option<OptimizeSection>,
}

/// A preset name with optional coating overrides, or an explicit geometry.
///
/// An explicit geometry names a family, `R_l` and `a`, and fixes the mirror
/// either by `offset` (`d_f - d`, mirror bent to the retro condition) or by
/// `d` with an optional `R_m`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct DesignSection {
    pub label: Option<String>,
    pub preset: Option<String>,
    pub family: Option<DesignFamily>,
    pub R_l: Option<f64>,
    pub a: Option<f64>,
    pub n: Option<f64>,
    pub t: Option<f64>,
    pub offset: Option<f64>,
    pub d: Option<f64>,
    pub R_m: Option<f64>,
    pub mirror_reflectivity: Option<f64>,
    pub fresnel_enabled: Option<bool>,
    pub fill_factor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedDesign {
    pub design: UnitDesign,
    /// Focus offset the design was built from, when given.
    pub offset: Option<f64>,
}

impl DesignSection {
    pub fn label(&self) -> String {
        self.label
            .clone()
            .or_else(|| self.preset.clone())
            .or_else(|| self.family.map(|f| f.tag().to_string()))
            .unwrap_or_else(|| "design".into())
    }

    pub fn resolve(&self) -> Result<ResolvedDesign, CliError> {
        let mut resolved = match (&self.preset, self.family) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "design sets both preset and family".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Config("design needs a preset or a family".into()))
            }
            (Some(name), None) => self.preset_design(name)?,
            (None, Some(family)) => self.family_design(family)?,
        };
        let d = &mut resolved.design;
        if let Some(r) = self.mirror_reflectivity {
            d.mirror_reflectivity = r;
        }
        if let Some(f) = self.fresnel_enabled {
            d.fresnel_enabled = f;
        }
        if let Some(f) = self.fill_factor {
            d.fill_factor = f;
        }
        d.validate()?;
        Ok(resolved)
    }

    fn preset_design(&self, name: &str) -> Result<ResolvedDesign, CliError> {
        let p: Preset = name
            .parse()
            .map_err(|e: catseye::Error| CliError::Config(e.to_string()))?;
        let geometric = [
            self.R_l,
            self.a,
            self.n,
            self.t,
            self.offset,
            self.d,
            self.R_m,
        ];
        if geometric.iter().any(Option::is_some) {
            return Err(CliError::Config(format!(
                "preset {name} takes no geometry keys; use family for a custom design"
            )));
        }
        let design = preset(p);
        Ok(ResolvedDesign {
            design,
            offset: design.focus_offset().ok(),
        })
    }

    fn family_design(&self, family: DesignFamily) -> Result<ResolvedDesign, CliError> {
        let missing = |k: &str| CliError::Config(format!("design family {family} needs {k}"));
        let r = self.R_l.ok_or_else(|| missing("R_l"))?;
        let a = self.a.ok_or_else(|| missing("a"))?;
        let n = self.n.unwrap_or(N_FUSED_SILICA);
        match (self.offset, self.d) {
            (Some(_), Some(_)) => Err(CliError::Config("give either offset or d, not both".into())),
            (None, None) => Err(missing("offset or d")),
            (Some(offset), None) => {
                if self.R_m.is_some() || self.t.is_some() {
                    return Err(CliError::Config(
                        "offset fixes t and R_m; use d to set them explicitly".into(),
                    ));
                }
                let design = UnitDesign::from_focus_offset(family, r, n, a, offset)?;
                Ok(ResolvedDesign {
                    design,
                    offset: Some(offset),
                })
            }
            (None, Some(gap)) => {
                let mirror_radius = match self.R_m {
                    Some(m) => m,
                    None => retro_mirror_radius(family, r, n, gap)?,
                };
                let design = UnitDesign {
                    family,
                    lens_radius: r,
                    mirror_radius,
                    gap,
                    aperture: a,
                    index: n,
                    thickness: self.t.unwrap_or_else(|| default_thickness(family, r)),
                    mirror_reflectivity: 1.0,
                    fresnel_enabled: false,
                    fill_factor: family.default_fill_factor(),
                };
                design.validate()?;
                Ok(ResolvedDesign {
                    design,
                    offset: design.focus_offset().ok(),
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenePreset {
    #[default]
    DesignEnvelope,
    Experiment,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub preset: Option<ScenePreset>,
    pub working_distances: Option<Vec<f64>>,
    pub lens_diameter: Option<f64>,
    pub source_offsets: Option<Vec<[f64; 3]>>,
    pub theta: Option<ThetaRange>,
    pub pixel_footprint_mm: Option<f64>,
}

impl SceneSection {
    pub fn resolve(&self, default: ScenePreset) -> Result<SceneConfig, CliError> {
        let mut scene = match self.preset.unwrap_or(default) {
            ScenePreset::DesignEnvelope => design_envelope_scene(),
            ScenePreset::Experiment => experiment_scene(),
        };
        if let Some(d) = &self.working_distances {
            scene.working_distances = d.clone();
        }
        if let Some(d) = self.lens_diameter {
            scene.lens_diameter = d;
        }
        if let Some(s) = &self.source_offsets {
            scene.source_offsets = s.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect();
        }
        if let Some(t) = self.theta {
            scene.theta = t;
        }
        if let Some(p) = self.pixel_footprint_mm {
            scene.pixel_footprint_mm = Some(p);
        }
        scene
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(scene)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub rays: Option<u64>,
    pub seed: Option<u64>,
    pub mode: Option<TraceMode>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Focus offsets `d_f - d`, mirror bent to the retro condition.
    Distance,
    /// Aperture diameters.
    Aperture,
    /// Mirror displacement errors with the mirror curvature held.
    DeltaD,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeSection {
    pub family: DesignFamily,
    pub pixel_footprint_mm: Option<f64>,
    pub d_offsets: Vec<f64>,
    #[serde(default = "full_aperture")]
    pub aperture_fractions: Vec<f64>,
    pub n: Option<f64>,
    #[serde(default)]
    pub lambda: f64,
}

fn full_aperture() -> Vec<f64> {
    vec![1.0]
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse(r#"{"desgin": {}}"#).is_err());
        assert!(parse(r#"{"design": {"preset": "previous", "colour": 1}}"#).is_err());
        assert!(parse(r#"{"run": {"rays": 10, "speed": 2}}"#).is_err());
    }

    #[test]
    fn preset_and_family_designs_resolve() {
        let cfg = parse(
            r#"{"designs": [
                {"preset": "selected_C"},
                {"family": "ball_C", "R_l": 0.5, "a": 1.0, "offset": 0.15},
                {"family": "ball_C", "R_l": 0.5, "a": 1.0, "d": 0.1, "R_m": 0.6, "label": "x"}
            ]}"#,
        )
        .unwrap();
        let a = cfg.designs[0].resolve().unwrap().design;
        let b = cfg.designs[1].resolve().unwrap().design;
        assert_eq!(a, b);
        let c = cfg.designs[2].resolve().unwrap().design;
        assert_eq!((c.gap, c.mirror_radius), (0.1, 0.6));
        assert_eq!(cfg.designs[2].label(), "x");
        assert_eq!(cfg.designs[0].label(), "selected_C");
    }

    #[test]
    fn bad_designs_map_to_the_right_error() {
        let cfg = parse(r#"{"design": {"preset": "nope"}}"#).unwrap();
        assert!(matches!(
            cfg.design.unwrap().resolve(),
            Err(CliError::Config(_))
        ));
        let cfg = parse(
            r#"{"design": {"family": "ball_C", "R_l": 0.5, "a": 1.0, "n": 1.0, "offset": 0.1}}"#,
        )
        .unwrap();
        assert!(matches!(
            cfg.design.unwrap().resolve(),
            Err(CliError::Physics(_))
        ));
        let cfg = parse(r#"{"design": {"preset": "previous", "R_l": 2}}"#).unwrap();
        assert!(matches!(
            cfg.design.unwrap().resolve(),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn scene_overrides_apply() {
        let cfg = parse(
            r#"{"scene": {"preset": "experiment", "working_distances": [400],
                "theta": {"min": -4, "max": 4, "step": 2}}}"#,
        )
        .unwrap();
        let s = cfg.scene.resolve(ScenePreset::DesignEnvelope).unwrap();
        assert_eq!(s.working_distances, vec![400.0]);
        assert_eq!(s.source_offsets.len(), 4);
        assert_eq!(s.theta.values().len(), 5);
    }
}
