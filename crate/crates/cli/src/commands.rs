//! Subcommand bodies. Each returns its outputs as text; writing them out is
//! left to the caller.

use std::fmt::Write;
use std::path::PathBuf;

use catseye::designs::{build_stack, petzval_radius, DesignFamily, UnitDesign, N_FUSED_SILICA};
use catseye::metrics::{curves_to_csv, with_gap_error, Evaluator, ResponseCurve, Series};
use catseye::optimizer::{optimize, OptimizationSpec};
use catseye::scene::{MarkerPose, SceneConfig};
use catseye::tracer::{dump_bundle, format_dump, BundleSpec, TraceMode};

use crate::config::{DesignSection, RunConfig, ScenePreset, SweepAxis};
use crate::report;
use crate::svg::{line_plot, PlotSeries};
use crate::CliError;

/// Flag values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub rays: Option<u64>,
    pub seed: Option<u64>,
    pub mode: Option<TraceMode>,
    pub out: Option<PathBuf>,
    pub plot: Option<PathBuf>,
    pub workers: Option<usize>,
}

/// Config and flags merged.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub overrides: Overrides,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub primary: String,
    pub plot: Option<String>,
}

impl Context {
    pub fn new(config: RunConfig, overrides: Overrides) -> Self {
        Self { config, overrides }
    }

    pub fn mode(&self) -> TraceMode {
        self.overrides
            .mode
            .or(self.config.run.mode)
            .unwrap_or_default()
    }

    pub fn out_path(&self) -> Option<PathBuf> {
        self.overrides
            .out
            .clone()
            .or_else(|| self.config.run.out.clone())
    }

    pub fn plot_path(&self) -> Option<PathBuf> {
        self.overrides
            .plot
            .clone()
            .or_else(|| self.config.run.plot.clone())
    }

    pub fn workers(&self) -> Option<usize> {
        self.overrides.workers.or(self.config.run.workers)
    }

    fn wants_plot(&self) -> bool {
        self.plot_path().is_some()
    }

    pub fn scene(&self, default: ScenePreset) -> Result<SceneConfig, CliError> {
        let mut scene = self.config.scene.resolve(default)?;
        if let Some(r) = self.overrides.rays.or(self.config.run.rays) {
            if r == 0 {
                return Err(CliError::Config("rays must be positive".into()));
            }
            scene.rays_per_point = r;
        }
        if let Some(s) = self.overrides.seed.or(self.config.run.seed) {
            scene.seed = s;
        }
        Ok(scene)
    }

    fn design_section(&self) -> Result<&DesignSection, CliError> {
        self.config
            .design
            .as_ref()
            .ok_or_else(|| CliError::Config("config has no design section".into()))
    }
}

fn fmt_mirror(r: f64) -> String {
    if r == 0.0 {
        "flat".into()
    } else {
        r.to_string()
    }
}

pub fn cmd_paraxial(ctx: &Context) -> Result<String, CliError> {
    let section = ctx.design_section()?;
    let resolved = section.resolve()?;
    let d = resolved.design;
    let mut out = String::new();
    let _ = writeln!(out, "design\t{}", section.label());
    let _ = writeln!(out, "family\t{}", d.family);
    let _ = writeln!(out, "R_l\t{}", d.lens_radius);
    let _ = writeln!(out, "n\t{}", d.index);
    let _ = writeln!(out, "a\t{}", d.aperture);
    let _ = writeln!(out, "t\t{}", d.thickness);
    let _ = writeln!(out, "d\t{}", d.gap);
    let _ = writeln!(out, "R_m\t{}", fmt_mirror(d.mirror_radius));
    if d.family != DesignFamily::FullDiffuse {
        let p = d.paraxial()?;
        let _ = writeln!(out, "f\t{}", p.focal_length);
        let _ = writeln!(out, "BFL\t{}", p.back_focal_length);
        let _ = writeln!(out, "d_f\t{}", p.focus_distance);
        let _ = writeln!(out, "offset\t{}", p.focus_distance - d.gap);
        let _ = writeln!(out, "power\t{}", p.power);
        let _ = writeln!(
            out,
            "petzval_radius\t{}",
            petzval_radius(d.family, d.lens_radius, d.index)?
        );
    }
    build_stack(&d)?;
    Ok(out)
}

/// Curves averaged over working distances, one plot line per series.
fn plot_series(series: &[Series]) -> Vec<PlotSeries> {
    series
        .iter()
        .map(|s| {
            let first = &s.curves[0];
            let points = first
                .theta_deg
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let sum: f64 = s.curves.iter().map(|c| c.return_fraction[i]).sum();
                    (t, 100.0 * sum / s.curves.len() as f64)
                })
                .collect();
            PlotSeries {
                label: s.label.clone(),
                points,
            }
        })
        .collect()
}

fn series_output(ctx: &Context, title: &str, series: &[Series]) -> Output {
    let curves: Vec<&ResponseCurve> = series.iter().flat_map(|s| &s.curves).collect();
    let plot = ctx.wants_plot().then(|| {
        line_plot(
            title,
            "entrance angle (deg)",
            "return fraction (%)",
            &plot_series(series),
        )
    });
    Output {
        primary: curves_to_csv(curves),
        plot,
    }
}

pub fn sweep_designs(
    base: &UnitDesign,
    label: &str,
    axis: SweepAxis,
    values: &[f64],
) -> Result<Vec<(String, UnitDesign)>, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep has no values".into()));
    }
    values
        .iter()
        .map(|&v| {
            let design = match axis {
                SweepAxis::Distance => {
                    if base.family == DesignFamily::FullDiffuse {
                        return Err(CliError::Config(
                            "a diffuse plane has no mirror distance".into(),
                        ));
                    }
                    UnitDesign {
                        mirror_reflectivity: base.mirror_reflectivity,
                        fresnel_enabled: base.fresnel_enabled,
                        fill_factor: base.fill_factor,
                        ..UnitDesign::from_focus_offset(
                            base.family,
                            base.lens_radius,
                            base.index,
                            base.aperture,
                            v,
                        )?
                    }
                }
                SweepAxis::Aperture => {
                    let d = UnitDesign {
                        aperture: v,
                        ..*base
                    };
                    build_stack(&d)?;
                    d
                }
                SweepAxis::DeltaD => with_gap_error(base, v)?,
            };
            let key = match axis {
                SweepAxis::Distance => "offset",
                SweepAxis::Aperture => "a",
                SweepAxis::DeltaD => "delta_d",
            };
            Ok((format!("{label}:{key}={v}"), design))
        })
        .collect()
}

pub fn cmd_sweep(ctx: &Context, axis: Option<SweepAxis>) -> Result<Output, CliError> {
    let section = ctx.design_section()?;
    let sweep = ctx.config.sweep.as_ref();
    let axis = axis
        .or(sweep.map(|s| s.axis))
        .ok_or_else(|| CliError::Config("sweep needs an axis".into()))?;
    let values = sweep.map(|s| s.values.clone()).unwrap_or_default();
    let base = section.resolve()?.design;
    let designs = sweep_designs(&base, &section.label(), axis, &values)?;
    let scene = ctx.scene(ScenePreset::DesignEnvelope)?;
    let series = Evaluator::new(ctx.mode()).compare_designs(&designs, &scene)?;
    Ok(series_output(
        ctx,
        &format!("{} sweep", section.label()),
        &series,
    ))
}

fn resolve_designs(ctx: &Context) -> Result<Vec<(String, UnitDesign)>, CliError> {
    ctx.config
        .designs
        .iter()
        .map(|s| Ok((s.label(), s.resolve()?.design)))
        .collect()
}

pub fn cmd_compare(ctx: &Context) -> Result<Output, CliError> {
    let designs = resolve_designs(ctx)?;
    if designs.len() < 2 {
        return Err(CliError::Config(
            "compare needs at least two designs".into(),
        ));
    }
    let scene = ctx.scene(ScenePreset::DesignEnvelope)?;
    let series = Evaluator::new(ctx.mode()).compare_designs(&designs, &scene)?;
    Ok(series_output(ctx, "design comparison", &series))
}

pub fn optimization_spec(ctx: &Context) -> Result<OptimizationSpec, CliError> {
    let section = ctx
        .config
        .optimize
        .as_ref()
        .ok_or_else(|| CliError::Config("config has no optimize section".into()))?;
    let scene = ctx.scene(ScenePreset::DesignEnvelope)?;
    let footprint = section
        .pixel_footprint_mm
        .or(scene.pixel_footprint_mm)
        .ok_or_else(|| CliError::Config("optimize needs pixel_footprint_mm".into()))?;
    if section.d_offsets.is_empty() || section.aperture_fractions.is_empty() {
        return Err(CliError::Config("optimize grid is empty".into()));
    }
    Ok(OptimizationSpec {
        family: section.family,
        pixel_footprint_mm: footprint,
        d_offsets: section.d_offsets.clone(),
        aperture_fractions: section.aperture_fractions.clone(),
        rays_per_cell: scene.rays_per_point,
        seed: scene.seed,
        scene,
        index: section.n.unwrap_or(N_FUSED_SILICA),
        lambda: section.lambda,
        mode: ctx.mode(),
    })
}

pub fn cmd_optimize(ctx: &Context) -> Result<String, CliError> {
    let spec = optimization_spec(ctx)?;
    let result = optimize(&spec)?;
    let doc = report::to_json(&spec, &result);
    report::validate(&doc).map_err(CliError::Internal)?;
    let mut text =
        serde_json::to_string_pretty(&doc).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn cmd_experiment(ctx: &Context) -> Result<Output, CliError> {
    let designs = match ctx.config.designs.len() {
        0 => vec![
            (
                "selected_C".to_string(),
                catseye::designs::preset(catseye::designs::Preset::SelectedC),
            ),
            (
                "previous".to_string(),
                catseye::designs::preset(catseye::designs::Preset::Previous),
            ),
        ],
        2 => resolve_designs(ctx)?,
        _ => {
            return Err(CliError::Config(
                "experiment takes exactly two designs: proposed, previous".into(),
            ))
        }
    };
    let scene = ctx.scene(ScenePreset::Experiment)?;
    let series = Evaluator::new(ctx.mode()).compare_designs(&designs, &scene)?;
    let (proposed, previous) = (&series[0], &series[1]);
    let mut csv = String::from(
        "theta_deg,distance_mm,proposed,proposed_stderr,previous,previous_stderr,ratio\n",
    );
    for (p, q) in proposed.curves.iter().zip(&previous.curves) {
        for i in 0..p.len() {
            let ratio = p.return_fraction[i] / q.return_fraction[i];
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                p.theta_deg[i],
                p.working_distance_mm,
                p.return_fraction[i],
                p.stderr[i],
                q.return_fraction[i],
                q.stderr[i],
                ratio
            );
        }
    }
    let plot = ctx.wants_plot().then(|| {
        let lines: Vec<PlotSeries> = series
            .iter()
            .flat_map(|s| {
                s.curves.iter().map(move |c| PlotSeries {
                    label: format!("{} {} mm", s.label, c.working_distance_mm),
                    points: c
                        .theta_deg
                        .iter()
                        .zip(&c.return_fraction)
                        .map(|(t, f)| (*t, 100.0 * f))
                        .collect(),
                })
            })
            .collect();
        line_plot(
            "bench comparison",
            "entrance angle (deg)",
            "return fraction (%)",
            &lines,
        )
    });
    Ok(Output { primary: csv, plot })
}

pub fn cmd_trace_dump(
    ctx: &Context,
    theta: f64,
    distance: Option<f64>,
    source: usize,
) -> Result<String, CliError> {
    let design = ctx.design_section()?.resolve()?.design;
    let scene = ctx.scene(ScenePreset::DesignEnvelope)?;
    if source >= scene.source_offsets.len() {
        return Err(CliError::Config(format!("source {source} does not exist")));
    }
    if theta.is_nan() || theta.abs() > 90.0 {
        return Err(CliError::Config(format!(
            "entrance angle {theta} outside [-90, 90]"
        )));
    }
    let distance = distance.unwrap_or(scene.working_distances[0]);
    let stack = build_stack(&design)?;
    let spec = BundleSpec::new(&stack, &scene, MarkerPose::rotated(theta), distance, source);
    Ok(format_dump(&dump_bundle(&spec, ctx.mode())))
}
