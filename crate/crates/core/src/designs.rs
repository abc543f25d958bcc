//! Parametric marker units, their paraxial properties, the mirror curvature
//! that keeps them retroreflective, and compilation into surface stacks.
//!
//! The mirror radius `R_m` of a [`UnitDesign`] uses the mirror convention:
//! positive when the mirror is concave towards the lens (centre of curvature
//! on the lens side), `0` for a flat mirror. [`build_stack`] converts it to
//! the signed surface radius of [`crate::geometry`].
//!
//! The gap `d` is always measured from the last glass vertex before the
//! mirror: the single refracting vertex for type A, the flat rear face for
//! type B and the rear pole of the ball for type C. The paraxial focus
//! distance `d_f` uses the same reference, so `d_f - d` is the defocus of
//! the mirror.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Interaction, Surface, SurfaceKind, N_AIR};

/// Refractive index of fused silica.
pub const N_FUSED_SILICA: f64 = 1.4585;

/// Area fraction covered by circular apertures in hexagonal packing.
pub const FILL_HEXAGONAL: f64 = 0.9069;

/// Area fraction of loosely (square) packed spheres.
pub const FILL_LOOSE_SPHERES: f64 = std::f64::consts::FRAC_PI_4;

const MIN_INDEX_EXCESS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DesignFamily {
    /// Single convex refracting surface, glass filling the gap to the mirror.
    #[serde(rename = "biconvex_A")]
    BiconvexA,
    /// Lenslet on a flat substrate, air gap to the mirror.
    #[serde(rename = "planoconvex_B")]
    PlanoconvexB,
    /// Glass ball with a separate concentric-family mirror.
    #[serde(rename = "ball_C")]
    BallC,
    /// Glass ball resting on a flat polished plate.
    #[serde(rename = "previous_flat")]
    PreviousFlat,
    /// Glass ball with its rear hemisphere mirrored.
    #[serde(rename = "classic_sphere")]
    ClassicSphere,
    /// Matte white plane without optics.
    #[serde(rename = "full_diffuse")]
    FullDiffuse,
}

impl DesignFamily {
    pub const ALL: [DesignFamily; 6] = [
        DesignFamily::BiconvexA,
        DesignFamily::PlanoconvexB,
        DesignFamily::BallC,
        DesignFamily::PreviousFlat,
        DesignFamily::ClassicSphere,
        DesignFamily::FullDiffuse,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            DesignFamily::BiconvexA => "biconvex_A",
            DesignFamily::PlanoconvexB => "planoconvex_B",
            DesignFamily::BallC => "ball_C",
            DesignFamily::PreviousFlat => "previous_flat",
            DesignFamily::ClassicSphere => "classic_sphere",
            DesignFamily::FullDiffuse => "full_diffuse",
        }
    }

    /// Whether the refracting element is a full glass sphere.
    pub fn is_ball(self) -> bool {
        matches!(
            self,
            DesignFamily::BallC | DesignFamily::PreviousFlat | DesignFamily::ClassicSphere
        )
    }

    pub fn default_fill_factor(self) -> f64 {
        match self {
            DesignFamily::BiconvexA | DesignFamily::PlanoconvexB => FILL_HEXAGONAL,
            DesignFamily::BallC | DesignFamily::PreviousFlat | DesignFamily::ClassicSphere => {
                FILL_LOOSE_SPHERES
            }
            DesignFamily::FullDiffuse => 1.0,
        }
    }
}

impl fmt::Display for DesignFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for DesignFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DesignFamily::ALL
            .into_iter()
            .find(|f| f.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidDesign(format!("unknown family `{s}`")))
    }
}

/// One retroreflecting unit of a marker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitDesign {
    pub family: DesignFamily,
    #[serde(rename = "R_l")]
    pub lens_radius: f64,
    /// Mirror radius in the mirror convention, `0` for flat.
    #[serde(rename = "R_m")]
    pub mirror_radius: f64,
    #[serde(rename = "d")]
    pub gap: f64,
    /// Clear aperture diameter.
    #[serde(rename = "a")]
    pub aperture: f64,
    #[serde(rename = "n")]
    pub index: f64,
    /// Lens thickness: centre thickness for type B, the diameter for balls.
    #[serde(rename = "t")]
    pub thickness: f64,
    pub mirror_reflectivity: f64,
    pub fresnel_enabled: bool,
    /// Multiplier on returned flux accounting for the array packing.
    pub fill_factor: f64,
}

impl UnitDesign {
    /// A design whose mirror sits `offset` millimetres in front of the
    /// paraxial focus and whose radius satisfies the retroreflection
    /// condition of its family.
    pub fn from_focus_offset(
        family: DesignFamily,
        lens_radius: f64,
        index: f64,
        aperture: f64,
        offset: f64,
    ) -> Result<Self> {
        let thickness = default_thickness(family, lens_radius);
        let focus = paraxial(family, lens_radius, index, Some(thickness))?.focus_distance;
        let gap = focus - offset;
        if gap < 0.0 {
            return Err(Error::NegativeGap(gap));
        }
        let design = UnitDesign {
            family,
            lens_radius,
            mirror_radius: retro_mirror_radius(family, lens_radius, index, gap)?,
            gap,
            aperture,
            index,
            thickness,
            mirror_reflectivity: 1.0,
            fresnel_enabled: false,
            fill_factor: family.default_fill_factor(),
        };
        design.validate()?;
        Ok(design)
    }

    pub fn paraxial(&self) -> Result<ParaxialSummary> {
        paraxial(
            self.family,
            self.lens_radius,
            self.index,
            Some(self.thickness),
        )
    }

    /// `d_f - d`: how far the mirror sits in front of the paraxial focus.
    pub fn focus_offset(&self) -> Result<f64> {
        Ok(self.paraxial()?.focus_distance - self.gap)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDesign(msg));
        let fields = [
            self.lens_radius,
            self.mirror_radius,
            self.gap,
            self.aperture,
            self.index,
            self.thickness,
            self.mirror_reflectivity,
            self.fill_factor,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter".into());
        }
        if self.family == DesignFamily::FullDiffuse {
            if self.aperture <= 0.0 {
                return bad(format!("aperture {} must be positive", self.aperture));
            }
        } else {
            if self.index <= 1.0 + MIN_INDEX_EXCESS {
                return Err(Error::DegenerateIndex(self.index));
            }
            if self.lens_radius <= 0.0 {
                return bad(format!("lens radius {} must be positive", self.lens_radius));
            }
            if self.aperture <= 0.0 || self.aperture > 2.0 * self.lens_radius * (1.0 + 1e-12) {
                return bad(format!(
                    "aperture {} must lie in (0, 2 R_l = {}]",
                    self.aperture,
                    2.0 * self.lens_radius
                ));
            }
        }
        if self.gap < 0.0 {
            return Err(Error::NegativeGap(self.gap));
        }
        if !(0.0..=1.0).contains(&self.mirror_reflectivity) {
            return bad(format!(
                "reflectivity {} outside [0, 1]",
                self.mirror_reflectivity
            ));
        }
        if !(self.fill_factor > 0.0 && self.fill_factor <= 1.0) {
            return bad(format!("fill factor {} outside (0, 1]", self.fill_factor));
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
        match self.family {
            f if f.is_ball() && !close(self.thickness, 2.0 * self.lens_radius) => {
                return bad(format!(
                    "ball thickness {} must equal its diameter {}",
                    self.thickness,
                    2.0 * self.lens_radius
                ));
            }
            DesignFamily::PreviousFlat if self.mirror_radius != 0.0 || self.gap != 0.0 => {
                return bad("a flat-backed ball needs R_m = 0 and d = 0".into());
            }
            DesignFamily::ClassicSphere
                if !close(self.mirror_radius, self.lens_radius) || self.gap != 0.0 =>
            {
                return bad("a mirrored ball needs R_m = R_l and d = 0".into());
            }
            DesignFamily::BiconvexA | DesignFamily::BallC if self.mirror_radius == 0.0 => {
                return bad("this family needs a curved mirror".into());
            }
            DesignFamily::PlanoconvexB => {
                let half = self.aperture / 2.0;
                let sag = self.lens_radius - (self.lens_radius.powi(2) - half * half).sqrt();
                if self.thickness < sag {
                    return bad(format!(
                        "thickness {} is less than the lens sag {sag}",
                        self.thickness
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Thickness implied by the family when none is given: the ball diameter,
/// or `R_l` for a type B lenslet (a hemisphere at full aperture).
pub fn default_thickness(family: DesignFamily, lens_radius: f64) -> f64 {
    match family {
        f if f.is_ball() => 2.0 * lens_radius,
        DesignFamily::PlanoconvexB => lens_radius,
        _ => 0.0,
    }
}

/// Paraxial properties of the focusing element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParaxialSummary {
    pub focal_length: f64,
    pub back_focal_length: f64,
    /// Paraxial focus measured from the gap reference vertex.
    pub focus_distance: f64,
    pub petzval_radius: f64,
    pub power: f64,
    pub power_front: f64,
    pub power_rear: f64,
}

pub fn paraxial(
    family: DesignFamily,
    lens_radius: f64,
    index: f64,
    thickness: Option<f64>,
) -> Result<ParaxialSummary> {
    check_optics(family, lens_radius, index)?;
    let (r, n) = (lens_radius, index);
    let petzval_radius = petzval_radius(family, r, n)?;
    let summary = match family {
        DesignFamily::BiconvexA => {
            let focus = n * r / (n - 1.0);
            ParaxialSummary {
                focal_length: focus,
                back_focal_length: focus,
                focus_distance: focus,
                petzval_radius,
                power: (n - 1.0) / r,
                power_front: (n - 1.0) / r,
                power_rear: 0.0,
            }
        }
        DesignFamily::PlanoconvexB => {
            match thickness {
                Some(t) if t.is_finite() && t > 0.0 => {}
                _ => {
                    return Err(Error::InvalidDesign(
                        "a type B lenslet needs a positive thickness".into(),
                    ))
                }
            }
            let power = (n - 1.0) / r;
            let bfl = r / (n * (n - 1.0));
            ParaxialSummary {
                focal_length: 1.0 / power,
                back_focal_length: bfl,
                focus_distance: bfl,
                petzval_radius,
                power,
                power_front: 0.0,
                power_rear: power,
            }
        }
        _ => {
            let surface_power = (n - 1.0) / r;
            let power = 2.0 * surface_power - surface_power * surface_power * 2.0 * r / n;
            let bfl = r * (2.0 - n) / (2.0 * (n - 1.0));
            ParaxialSummary {
                focal_length: 1.0 / power,
                back_focal_length: bfl,
                focus_distance: bfl,
                petzval_radius,
                power,
                power_front: surface_power,
                power_rear: surface_power,
            }
        }
    };
    Ok(summary)
}

fn check_optics(family: DesignFamily, lens_radius: f64, index: f64) -> Result<()> {
    if family == DesignFamily::FullDiffuse {
        return Err(Error::InvalidDesign(
            "a diffuse plane has no focusing element".into(),
        ));
    }
    if index.is_nan() || index <= 1.0 + MIN_INDEX_EXCESS {
        return Err(Error::DegenerateIndex(index));
    }
    if !(lens_radius > 0.0 && lens_radius.is_finite()) {
        return Err(Error::InvalidDesign(format!(
            "lens radius {lens_radius} must be positive"
        )));
    }
    Ok(())
}

/// Signed radius of the field-curvature (Petzval) surface.
///
/// Types A and C report the radius measured towards the lens, which for
/// both is where the centre lies. Type B reports it in the surface sign
/// convention, negative because its centre lies on the lens side.
pub fn petzval_radius(family: DesignFamily, lens_radius: f64, index: f64) -> Result<f64> {
    check_optics(family, lens_radius, index)?;
    let (r, n) = (lens_radius, index);
    Ok(match family {
        DesignFamily::BiconvexA => r / (n - 1.0),
        DesignFamily::PlanoconvexB => -n * r / (n - 1.0),
        _ => n * r / (2.0 * (n - 1.0)),
    })
}

/// Mirror radius (mirror convention) that makes the mirror follow the
/// focal surface when it sits at gap `gap`.
///
/// For every family the resulting mirror is concentric with the centre of
/// the focal surface: the lens centre for A, a point `n R_l / (n - 1)`
/// before the paraxial focus for B, and the ball centre for C.
pub fn retro_mirror_radius(
    family: DesignFamily,
    lens_radius: f64,
    index: f64,
    gap: f64,
) -> Result<f64> {
    check_optics(family, lens_radius, index)?;
    let (r, n) = (lens_radius, index);
    Ok(match family {
        DesignFamily::BiconvexA => gap - r,
        // The focal surface of the lenslet curves towards the lens with
        // radius n R_l / (n - 1); shifting it by d - BFL gives the mirror.
        DesignFamily::PlanoconvexB => r * (n + 1.0) / n + gap,
        _ => r + gap,
    })
}

/// Ordered interfaces met by a ray: forward pass, terminal reflector, then
/// the forward refractors in reverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceStack {
    pub sequence: Vec<Surface>,
    /// Index of the reflecting surface in `sequence`.
    pub terminal: usize,
    /// Plane of the entrance aperture disc.
    pub aperture_z: f64,
    /// Radius of the unit cell; rays leaving it are lost to neighbours.
    pub cell_radius: f64,
    pub fresnel_enabled: bool,
    pub fill_factor: f64,
}

impl SurfaceStack {
    /// Every distinct interface, in forward orientation.
    pub fn physical(&self) -> &[Surface] {
        &self.sequence[..=self.terminal]
    }

    /// Refracting surfaces of the forward pass.
    pub fn forward(&self) -> &[Surface] {
        &self.sequence[..self.terminal]
    }

    pub fn terminal_surface(&self) -> &Surface {
        &self.sequence[self.terminal]
    }

    /// Deepest axial extent of the unit.
    pub fn back_z(&self) -> f64 {
        self.physical()
            .iter()
            .map(|s| s.vertex_z.max(s.rim_z()))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn len(&self) -> usize {
        self.sequence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequence.is_empty()
    }
}

fn mirror_surface(
    vertex_z: f64,
    radius: f64,
    half_aperture: f64,
    medium: f64,
    refl: f64,
) -> Surface {
    let base = if radius == 0.0 {
        Surface::plane(vertex_z, half_aperture)
    } else {
        // The indented cap cannot be wider than a hemisphere.
        Surface::sphere(vertex_z, -radius, half_aperture.min(radius.abs()))
    };
    base.reflecting(Interaction::Mirror, medium, refl)
}

/// Axial position of a surface at radial distance `r`, if it reaches there.
fn surface_z(surface: &Surface, r: f64) -> Option<f64> {
    if r > surface.aperture_radius * (1.0 + 1e-12) {
        return None;
    }
    Some(match surface.kind {
        SurfaceKind::Planar => surface.vertex_z,
        SurfaceKind::Spherical => {
            let rc = surface.curvature_radius;
            surface.vertex_z + rc - rc.signum() * (rc * rc - r * r).max(0.0).sqrt()
        }
    })
}

pub fn build_stack(design: &UnitDesign) -> Result<SurfaceStack> {
    design.validate()?;
    let n = design.index;
    let r = design.lens_radius;
    let half = design.aperture / 2.0;
    let refl = design.mirror_reflectivity;

    let (forward, mirror) = match design.family {
        DesignFamily::BiconvexA => {
            let lens = Surface::sphere(0.0, r, half).refracting(N_AIR, n);
            let mirror = mirror_surface(design.gap, design.mirror_radius, half, n, refl);
            (vec![lens], mirror)
        }
        DesignFamily::PlanoconvexB => {
            let t = design.thickness;
            let lens = Surface::sphere(0.0, r, half).refracting(N_AIR, n);
            let back = Surface::plane(t, half).refracting(n, N_AIR);
            let mirror = mirror_surface(t + design.gap, design.mirror_radius, half, N_AIR, refl);
            (vec![lens, back], mirror)
        }
        DesignFamily::BallC | DesignFamily::PreviousFlat => {
            let front = Surface::sphere(0.0, r, half).refracting(N_AIR, n);
            let rear = Surface::sphere(2.0 * r, -r, half).refracting(n, N_AIR);
            let mirror = mirror_surface(
                2.0 * r + design.gap,
                design.mirror_radius,
                half,
                N_AIR,
                refl,
            );
            (vec![front, rear], mirror)
        }
        DesignFamily::ClassicSphere => {
            let front = Surface::sphere(0.0, r, half).refracting(N_AIR, n);
            let coating = mirror_surface(2.0 * r, r, half, n, refl);
            (vec![front], coating)
        }
        DesignFamily::FullDiffuse => {
            let plane = Surface::plane(0.0, half).reflecting(Interaction::Lambertian, N_AIR, refl);
            (Vec::new(), plane)
        }
    };

    if let Some(glass) = forward.last() {
        if design.family != DesignFamily::ClassicSphere {
            let reach = glass.aperture_radius.min(mirror.aperture_radius);
            for i in 0..=64 {
                let rho = reach * i as f64 / 64.0;
                if let (Some(zm), Some(zg)) = (surface_z(&mirror, rho), surface_z(glass, rho)) {
                    if zm < zg - 1e-9 {
                        return Err(Error::InvalidDesign(format!(
                            "mirror cuts into the glass at r = {rho:.4} mm"
                        )));
                    }
                }
            }
        }
    }

    let aperture_z = forward.first().map_or(0.0, |s| s.rim_z());
    let terminal = forward.len();
    let mut sequence = forward.clone();
    sequence.push(mirror);
    sequence.extend(forward.iter().rev().map(|s| s.reversed()));
    if !sequence.iter().all(Surface::is_valid) {
        return Err(Error::InvalidDesign(
            "stack contains an invalid surface".into(),
        ));
    }
    Ok(SurfaceStack {
        sequence,
        terminal,
        aperture_z,
        cell_radius: half,
        fresnel_enabled: design.fresnel_enabled,
        fill_factor: design.fill_factor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Previous,
    ClassicSphere,
    OkotechB,
    SussB,
    SelectedA,
    SelectedB,
    SelectedC,
    FullDiffuse,
}

impl Preset {
    pub const ALL: [Preset; 8] = [
        Preset::Previous,
        Preset::ClassicSphere,
        Preset::OkotechB,
        Preset::SussB,
        Preset::SelectedA,
        Preset::SelectedB,
        Preset::SelectedC,
        Preset::FullDiffuse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Previous => "previous",
            Preset::ClassicSphere => "classic_sphere",
            Preset::OkotechB => "okotech_B",
            Preset::SussB => "suss_B",
            Preset::SelectedA => "selected_A",
            Preset::SelectedB => "selected_B",
            Preset::SelectedC => "selected_C",
            Preset::FullDiffuse => "full_diffuse",
        }
    }

    /// True when a parameter of the preset is a default rather than a
    /// documented value (the custom type B aperture).
    pub fn has_assumed_aperture(self) -> bool {
        self == Preset::SelectedB
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

/// Mirror offset used for the catalogue lenslets.
const LENSLET_OFFSET: f64 = 0.03;

pub fn preset(name: Preset) -> UnitDesign {
    let n = N_FUSED_SILICA;
    let built = match name {
        Preset::SelectedA => {
            UnitDesign::from_focus_offset(DesignFamily::BiconvexA, 0.2, n, 0.4, 0.14)
        }
        Preset::SelectedC => UnitDesign::from_focus_offset(DesignFamily::BallC, 0.5, n, 1.0, 0.15),
        Preset::SelectedB => {
            let r = 0.2;
            let a = 2.0 * r * 60f64.to_radians().sin();
            UnitDesign::from_focus_offset(DesignFamily::PlanoconvexB, r, n, a, LENSLET_OFFSET)
        }
        Preset::OkotechB => lenslet(0.425, 0.111, 0.05),
        Preset::SussB => lenslet(0.35, 0.25, 0.9),
        Preset::Previous => Ok(ball(DesignFamily::PreviousFlat, 1.0, 0.0)),
        Preset::ClassicSphere => Ok(ball(DesignFamily::ClassicSphere, 1.0, 1.0)),
        Preset::FullDiffuse => Ok(UnitDesign {
            family: DesignFamily::FullDiffuse,
            lens_radius: 0.5,
            mirror_radius: 0.0,
            gap: 0.0,
            aperture: 1.0,
            index: n,
            thickness: 0.0,
            mirror_reflectivity: 0.9,
            fresnel_enabled: false,
            fill_factor: 1.0,
        }),
    };
    built.expect("preset parameters are valid")
}

fn ball(family: DesignFamily, r: f64, mirror_radius: f64) -> UnitDesign {
    UnitDesign {
        family,
        lens_radius: r,
        mirror_radius,
        gap: 0.0,
        aperture: 2.0 * r,
        index: N_FUSED_SILICA,
        thickness: 2.0 * r,
        mirror_reflectivity: 1.0,
        fresnel_enabled: false,
        fill_factor: family.default_fill_factor(),
    }
}

fn lenslet(r: f64, a: f64, t: f64) -> Result<UnitDesign> {
    let family = DesignFamily::PlanoconvexB;
    let n = N_FUSED_SILICA;
    let gap = paraxial(family, r, n, Some(t))?.focus_distance - LENSLET_OFFSET;
    let design = UnitDesign {
        family,
        lens_radius: r,
        mirror_radius: retro_mirror_radius(family, r, n, gap)?,
        gap,
        aperture: a,
        index: n,
        thickness: t,
        mirror_reflectivity: 1.0,
        fresnel_enabled: false,
        fill_factor: family.default_fill_factor(),
    };
    design.validate()?;
    Ok(design)
}
