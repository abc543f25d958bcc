//! Vector math, ray/surface intersection and local interface physics.
//!
//! The optical axis is `+z`, pointing into the marker. A spherical surface
//! has a signed curvature radius that is positive when its centre of
//! curvature lies at larger `z` than its vertex. All lengths are millimetres.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// Rays never intersect a surface closer than this along their path.
pub const MIN_TRAVEL: f64 = 1e-9;

/// Refractive index of the surrounding air.
pub const N_AIR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    #[inline]
    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Returns the unit vector in the same direction.
    ///
    /// A second Newton-style pass pulls the norm to within a couple of ulps
    /// of one, which the direction invariants rely on.
    #[inline]
    pub fn normalized(self) -> Vec3 {
        let v = self / self.norm();
        v / v.norm()
    }

    /// Distance of the point from the optical axis.
    #[inline]
    pub fn radial(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Angle between two unit vectors, accurate for nearly parallel inputs.
    pub fn angle_to(self, other: Vec3) -> f64 {
        self.cross(other).norm().atan2(self.dot(other))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit direction of travel.
    pub direction: Vec3,
    /// Product of every transmittance and reflectance met so far.
    pub weight: f64,
    /// Index of the medium the ray is currently travelling in.
    pub medium_index: f64,
}

impl Ray {
    /// A unit-weight ray in air.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction: direction.normalized(),
            weight: 1.0,
            medium_index: N_AIR,
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceKind {
    Spherical,
    Planar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    Refract,
    Mirror,
    Lambertian,
    Absorb,
}

/// A rotationally symmetric optical interface centred on the `z` axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub kind: SurfaceKind,
    pub vertex_z: f64,
    /// Signed radius; ignored for planar surfaces.
    pub curvature_radius: f64,
    pub aperture_radius: f64,
    /// Index on the side a forward (`+z`) ray arrives from.
    pub n_before: f64,
    pub n_after: f64,
    pub interaction: Interaction,
    /// Used by mirror and lambertian interactions only.
    pub reflectivity: f64,
}

impl Surface {
    pub fn sphere(vertex_z: f64, curvature_radius: f64, aperture_radius: f64) -> Self {
        Self {
            kind: SurfaceKind::Spherical,
            vertex_z,
            curvature_radius,
            aperture_radius,
            n_before: N_AIR,
            n_after: N_AIR,
            interaction: Interaction::Refract,
            reflectivity: 1.0,
        }
    }

    pub fn plane(vertex_z: f64, aperture_radius: f64) -> Self {
        Self {
            kind: SurfaceKind::Planar,
            curvature_radius: 0.0,
            ..Self::sphere(vertex_z, 0.0, aperture_radius)
        }
    }

    pub fn refracting(mut self, n_before: f64, n_after: f64) -> Self {
        self.interaction = Interaction::Refract;
        self.n_before = n_before;
        self.n_after = n_after;
        self
    }

    /// Reflective surface immersed in a medium of index `n`.
    pub fn reflecting(mut self, interaction: Interaction, n: f64, reflectivity: f64) -> Self {
        self.interaction = interaction;
        self.n_before = n;
        self.n_after = n;
        self.reflectivity = reflectivity;
        self
    }

    /// The same interface met by a ray travelling towards `-z`.
    pub fn reversed(mut self) -> Self {
        std::mem::swap(&mut self.n_before, &mut self.n_after);
        self
    }

    pub fn centre_z(&self) -> Option<f64> {
        match self.kind {
            SurfaceKind::Spherical => Some(self.vertex_z + self.curvature_radius),
            SurfaceKind::Planar => None,
        }
    }

    /// Axial position of the aperture rim.
    pub fn rim_z(&self) -> f64 {
        match self.kind {
            SurfaceKind::Planar => self.vertex_z,
            SurfaceKind::Spherical => {
                let r = self.curvature_radius;
                let h = self.aperture_radius.min(r.abs());
                let sag = r.abs() - (r * r - h * h).max(0.0).sqrt();
                self.vertex_z + sag * r.signum()
            }
        }
    }

    /// Unit normal at `point` facing the side a forward ray arrives from.
    pub fn front_normal(&self, point: Vec3) -> Vec3 {
        match self.kind {
            SurfaceKind::Planar => -Vec3::Z,
            SurfaceKind::Spherical => {
                let c = Vec3::new(0.0, 0.0, self.vertex_z + self.curvature_radius);
                ((point - c) / self.curvature_radius).normalized()
            }
        }
    }

    pub fn is_valid(&self) -> bool {
        let finite = self.vertex_z.is_finite()
            && self.aperture_radius.is_finite()
            && self.aperture_radius > 0.0
            && self.n_before >= 1.0
            && self.n_after >= 1.0
            && (0.0..=1.0).contains(&self.reflectivity);
        match self.kind {
            SurfaceKind::Planar => finite,
            SurfaceKind::Spherical => {
                finite
                    && self.curvature_radius != 0.0
                    && self.aperture_radius <= self.curvature_radius.abs() * (1.0 + 1e-12)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    /// Unit normal with a negative dot product against the ray direction.
    pub normal: Vec3,
    /// Whether the ray arrived from the forward (`n_before`) side.
    pub from_front: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissReason {
    NoIntersection,
    OutsideAperture,
}

/// First intersection of `ray` with the surface beyond [`MIN_TRAVEL`].
///
/// Spherical surfaces are caps: only the hemisphere containing the vertex
/// counts, further clipped to `aperture_radius`.
pub fn intersect(ray: &Ray, surface: &Surface) -> Result<Hit, MissReason> {
    let d = ray.direction;
    let o = ray.origin;
    let finish = |t: f64, point: Vec3| {
        let front = surface.front_normal(point);
        let from_front = front.dot(d) < 0.0;
        Hit {
            t,
            point,
            normal: if from_front { front } else { -front },
            from_front,
        }
    };
    let inside_aperture = |p: Vec3| p.radial() <= surface.aperture_radius * (1.0 + 1e-12);

    match surface.kind {
        SurfaceKind::Planar => {
            if d.z.abs() < 1e-15 {
                return Err(MissReason::NoIntersection);
            }
            let t = (surface.vertex_z - o.z) / d.z;
            if t <= MIN_TRAVEL {
                return Err(MissReason::NoIntersection);
            }
            let mut p = ray.at(t);
            p.z = surface.vertex_z;
            if inside_aperture(p) {
                Ok(finish(t, p))
            } else {
                Err(MissReason::OutsideAperture)
            }
        }
        SurfaceKind::Spherical => {
            let r = surface.curvature_radius;
            let c = Vec3::new(0.0, 0.0, surface.vertex_z + r);
            let oc = o - c;
            let b = oc.dot(d);
            // Perpendicular-distance form avoids cancellation for far origins.
            let closest = oc - d * b;
            let disc = r * r - closest.norm_squared();
            if disc < 0.0 {
                return Err(MissReason::NoIntersection);
            }
            let sq = disc.sqrt();
            let mut clipped = false;
            for t in [-b - sq, -b + sq] {
                if t <= MIN_TRAVEL {
                    continue;
                }
                let p = ray.at(t);
                // Vertex hemisphere: the vertex sits at centre - r along z.
                if (p.z - c.z) * r > 0.0 {
                    continue;
                }
                // Project back onto the sphere to kill rounding drift.
                let p = c + (p - c) * (r.abs() / (p - c).norm());
                if inside_aperture(p) {
                    return Ok(finish(t, p));
                }
                clipped = true;
            }
            Err(if clipped {
                MissReason::OutsideAperture
            } else {
                MissReason::NoIntersection
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refraction {
    pub dir_out: Vec3,
    /// Total internal reflection; `dir_out` is then the mirror direction.
    pub tir: bool,
}

/// Vector form of Snell's law. `normal` must face the incoming ray.
pub fn refract(dir: Vec3, normal: Vec3, n1: f64, n2: f64) -> Refraction {
    let eta = n1 / n2;
    let cos_i = -dir.dot(normal);
    let sin2_t = eta * eta * (1.0 - cos_i * cos_i).max(0.0);
    if sin2_t > 1.0 {
        return Refraction {
            dir_out: reflect(dir, normal),
            tir: true,
        };
    }
    let cos_t = (1.0 - sin2_t).sqrt();
    Refraction {
        dir_out: (dir * eta + normal * (eta * cos_i - cos_t)).normalized(),
        tir: false,
    }
}

/// Specular reflection about `normal`.
pub fn reflect(dir: Vec3, normal: Vec3) -> Vec3 {
    (dir - normal * (2.0 * dir.dot(normal))).normalized()
}

/// Power reflectance for unpolarised light, the mean of the s and p terms.
pub fn fresnel_unpolarized(cos_i: f64, n1: f64, n2: f64) -> f64 {
    let cos_i = cos_i.clamp(0.0, 1.0);
    let sin_t = n1 / n2 * (1.0 - cos_i * cos_i).sqrt();
    if sin_t >= 1.0 {
        return 1.0;
    }
    let cos_t = (1.0 - sin_t * sin_t).sqrt();
    let rs = (n1 * cos_i - n2 * cos_t) / (n1 * cos_i + n2 * cos_t);
    let rp = (n1 * cos_t - n2 * cos_i) / (n1 * cos_t + n2 * cos_i);
    (0.5 * (rs * rs + rp * rp)).clamp(0.0, 1.0)
}

/// Rotates a vector about a unit axis (Rodrigues).
pub fn rotate_vector(v: Vec3, axis: Vec3, angle_deg: f64) -> Vec3 {
    let (s, c) = angle_deg.to_radians().sin_cos();
    v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c))
}

/// Rigid rotation of a ray about an axis through `pivot`.
pub fn rotate_about_point(ray: &Ray, pivot: Vec3, axis: Vec3, angle_deg: f64) -> Ray {
    Ray {
        origin: pivot + rotate_vector(ray.origin - pivot, axis, angle_deg),
        direction: rotate_vector(ray.direction, axis, angle_deg).normalized(),
        ..*ray
    }
}

/// Cosine-weighted direction on the hemisphere around `normal` from two
/// uniform variates in `[0, 1)`.
pub fn lambertian_direction(normal: Vec3, u1: f64, u2: f64) -> Vec3 {
    let (tangent, bitangent) = orthonormal_basis(normal);
    let r = u1.sqrt();
    let phi = std::f64::consts::TAU * u2;
    let z = (1.0 - u1).max(0.0).sqrt();
    (tangent * (r * phi.cos()) + bitangent * (r * phi.sin()) + normal * z).normalized()
}

/// Two unit vectors completing `n` to a right-handed frame.
pub fn orthonormal_basis(n: Vec3) -> (Vec3, Vec3) {
    // Duff et al., branchless ONB.
    let sign = 1.0_f64.copysign(n.z);
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    (
        Vec3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x),
        Vec3::new(b, sign + n.y * n.y * a, -n.y),
    )
}
