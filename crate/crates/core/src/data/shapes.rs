//! Parametric primitives sampled uniformly over their surface.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{contract, Error, Result};
use crate::{PointCloud, Scalar, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    Sphere {
        radius: f64,
    },
    /// Full edge lengths along x, y, z.
    Box {
        extents: [f64; 3],
    },
    /// Axis along z, capped.
    Cylinder {
        radius: f64,
        height: f64,
    },
    /// Ring in the xy-plane.
    Torus {
        major: f64,
        minor: f64,
    },
}

impl Primitive {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Primitive::Sphere { radius } => radius > 0.0,
            Primitive::Box { extents } => extents.iter().all(|&e| e > 0.0),
            Primitive::Cylinder { radius, height } => radius > 0.0 && height > 0.0,
            Primitive::Torus { major, minor } => minor > 0.0 && major > minor,
        };
        if ok {
            Ok(())
        } else {
            Err(contract(format!("invalid primitive parameters: {self:?}")))
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Primitive::Sphere { radius } => 4.0 * PI * radius * radius,
            Primitive::Box { extents: [a, b, c] } => 2.0 * (a * b + b * c + c * a),
            Primitive::Cylinder { radius, height } => 2.0 * PI * radius * height + 2.0 * PI * radius * radius,
            Primitive::Torus { major, minor } => 4.0 * PI * PI * major * minor,
        }
    }

    /// One uniform surface sample in the primitive's local frame.
    pub fn sample(&self, rng: &mut SeededRng) -> [f64; 3] {
        match *self {
            Primitive::Sphere { radius } => loop {
                let v = [rng.normal(), rng.normal(), rng.normal()];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n > 1e-12 {
                    break v.map(|x| x / n * radius);
                }
            },
            Primitive::Box { extents } => {
                let [a, b, c] = extents;
                // Face pairs normal to x, y, z, weighted by area.
                let areas = [b * c, a * c, a * b];
                let axis = pick_weighted(&areas, rng);
                let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                let mut p = [0.0; 3];
                for (i, slot) in p.iter_mut().enumerate() {
                    *slot = if i == axis {
                        sign * extents[i] / 2.0
                    } else {
                        (rng.uniform() - 0.5) * extents[i]
                    };
                }
                p
            }
            Primitive::Cylinder { radius, height } => {
                let side = 2.0 * PI * radius * height;
                let cap = PI * radius * radius;
                match pick_weighted(&[side, cap, cap], rng) {
                    0 => {
                        let th = 2.0 * PI * rng.uniform();
                        [radius * th.cos(), radius * th.sin(), (rng.uniform() - 0.5) * height]
                    }
                    which => {
                        let r = radius * rng.uniform().sqrt();
                        let th = 2.0 * PI * rng.uniform();
                        let z = if which == 1 { height / 2.0 } else { -height / 2.0 };
                        [r * th.cos(), r * th.sin(), z]
                    }
                }
            }
            Primitive::Torus { major, minor } => loop {
                let u = 2.0 * PI * rng.uniform();
                let v = 2.0 * PI * rng.uniform();
                // Surface element is proportional to (R + r cos v).
                if rng.uniform() * (major + minor) <= major + minor * v.cos() {
                    let w = major + minor * v.cos();
                    break [w * u.cos(), w * u.sin(), minor * v.sin()];
                }
            },
        }
    }
}

fn pick_weighted(weights: &[f64], rng: &mut SeededRng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.uniform() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Rigid transform: rotation matrix then translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    /// Rotation `Rz(yaw)·Ry(pitch)·Rx(roll)`.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64, translation: [f64; 3]) -> Self {
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let (sy, cy) = yaw.sin_cos();
        Self {
            rotation: [
                [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
                [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
                [-sp, cp * sr, cp * cr],
            ],
            translation,
        }
    }

    pub fn random(rng: &mut SeededRng, max_offset: f64) -> Self {
        let angles = [rng.uniform(), rng.uniform(), rng.uniform()].map(|u| 2.0 * PI * u);
        let t = [rng.uniform(), rng.uniform(), rng.uniform()].map(|u| (2.0 * u - 1.0) * max_offset);
        Self::from_euler(angles[0], angles[1], angles[2], t)
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let mut out = self.translation;
        for (i, o) in out.iter_mut().enumerate() {
            *o += r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeKind {
    Sphere,
    Box,
    Cylinder,
    Torus,
    Composite,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Sphere,
        ShapeKind::Box,
        ShapeKind::Cylinder,
        ShapeKind::Torus,
        ShapeKind::Composite,
    ];

    pub fn category(self) -> u16 {
        self as u16
    }

    pub fn from_category(c: u16) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Box => "box",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Torus => "torus",
            ShapeKind::Composite => "composite",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| contract(format!("unknown shape kind `{s}`")))
    }
}

/// Posed primitive, or two posed primitives forming a composite.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSpec {
    pub parts: Vec<(Primitive, Pose)>,
    pub pose: Pose,
}

impl ShapeSpec {
    pub fn single(primitive: Primitive) -> Self {
        Self {
            parts: vec![(primitive, Pose::identity())],
            pose: Pose::identity(),
        }
    }

    pub fn kind(&self) -> ShapeKind {
        match self.parts.as_slice() {
            [(Primitive::Sphere { .. }, _)] => ShapeKind::Sphere,
            [(Primitive::Box { .. }, _)] => ShapeKind::Box,
            [(Primitive::Cylinder { .. }, _)] => ShapeKind::Cylinder,
            [(Primitive::Torus { .. }, _)] => ShapeKind::Torus,
            _ => ShapeKind::Composite,
        }
    }

    /// Random parameters and pose for `kind`.
    pub fn random(kind: ShapeKind, rng: &mut SeededRng) -> Self {
        let range = |rng: &mut SeededRng, lo: f64, hi: f64| lo + (hi - lo) * rng.uniform();
        let primitive = |k: ShapeKind, rng: &mut SeededRng| match k {
            ShapeKind::Sphere => Primitive::Sphere {
                radius: range(rng, 0.4, 1.0),
            },
            ShapeKind::Box => Primitive::Box {
                extents: [range(rng, 0.3, 1.2), range(rng, 0.3, 1.2), range(rng, 0.3, 1.2)],
            },
            ShapeKind::Cylinder => Primitive::Cylinder {
                radius: range(rng, 0.2, 0.6),
                height: range(rng, 0.4, 1.4),
            },
            _ => {
                let major = range(rng, 0.4, 0.8);
                Primitive::Torus {
                    major,
                    minor: range(rng, 0.1, 0.35).min(0.8 * major),
                }
            }
        };
        let parts = if kind == ShapeKind::Composite {
            let a = ShapeKind::ALL[rng.below(4)];
            let b = ShapeKind::ALL[rng.below(4)];
            let pa = primitive(a, rng);
            let pb = primitive(b, rng);
            vec![(pa, Pose::random(rng, 0.4)), (pb, Pose::random(rng, 0.4))]
        } else {
            vec![(primitive(kind, rng), Pose::identity())]
        };
        Self {
            parts,
            pose: Pose::random(rng, 0.2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.parts.is_empty() || self.parts.len() > 2 {
            return Err(contract("a shape has one primitive or a two-primitive composite"));
        }
        self.parts.iter().try_for_each(|(p, _)| p.validate())
    }

    /// Area-weighted samples over all parts, posed, before normalization.
    pub fn sample_raw(&self, n: usize, rng: &mut SeededRng) -> Result<Vec<[f64; 3]>> {
        self.validate()?;
        let areas: Vec<f64> = self.parts.iter().map(|(p, _)| p.area()).collect();
        Ok((0..n)
            .map(|_| {
                let i = if self.parts.len() == 1 {
                    0
                } else {
                    pick_weighted(&areas, rng)
                };
                let (prim, local) = &self.parts[i];
                self.pose.apply(local.apply(prim.sample(rng)))
            })
            .collect())
    }
}

/// Samples `n` surface points of `spec` and normalizes the result.
pub fn generate_shape<T: Scalar>(spec: &ShapeSpec, n: usize, rng: &mut SeededRng) -> Result<PointCloud<T>> {
    if n == 0 {
        return Err(contract("need at least one point"));
    }
    let raw = spec.sample_raw(n, rng)?;
    let cloud = PointCloud::<f64>::new(raw)?;
    Ok(cloud.normalize().0.cast())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_samples_on_unit_sphere() {
        let mut rng = SeededRng::new(1);
        let spec = ShapeSpec::single(Primitive::Sphere { radius: 1.0 });
        for p in spec.sample_raw(500, &mut rng).unwrap() {
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn box_samples_on_faces() {
        let mut rng = SeededRng::new(2);
        let ext = [0.5, 1.0, 2.0];
        let spec = ShapeSpec::single(Primitive::Box { extents: ext });
        for p in spec.sample_raw(500, &mut rng).unwrap() {
            let on_face = (0..3).any(|i| (p[i].abs() - ext[i] / 2.0).abs() < 1e-12);
            let inside = (0..3).all(|i| p[i].abs() <= ext[i] / 2.0 + 1e-12);
            assert!(on_face && inside, "{p:?}");
        }
    }

    #[test]
    fn box_face_selection_is_area_weighted() {
        // 1×1×2 box: the four 1×2 faces cover 8 of the 10 units of area.
        let mut rng = SeededRng::new(3);
        let spec = ShapeSpec::single(Primitive::Box {
            extents: [1.0, 1.0, 2.0],
        });
        let n = 10_000;
        let hits = spec
            .sample_raw(n, &mut rng)
            .unwrap()
            .iter()
            .filter(|p| (p[2].abs() - 1.0).abs() > 1e-12)
            .count();
        let p = 0.8;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((hits as f64 - n as f64 * p).abs() < 3.0 * sigma, "hits {hits}");
    }

    #[test]
    fn torus_and_cylinder_on_surface() {
        let mut rng = SeededRng::new(4);
        let (major, minor) = (0.7, 0.2);
        for p in ShapeSpec::single(Primitive::Torus { major, minor })
            .sample_raw(300, &mut rng)
            .unwrap()
        {
            let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - major;
            assert!(((ring * ring + p[2] * p[2]).sqrt() - minor).abs() < 1e-9);
        }
        for p in ShapeSpec::single(Primitive::Cylinder {
            radius: 0.5,
            height: 1.0,
        })
        .sample_raw(300, &mut rng)
        .unwrap()
        {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - 0.5).abs() < 1e-9 || ((p[2].abs() - 0.5).abs() < 1e-12 && r <= 0.5 + 1e-12));
        }
    }

    #[test]
    fn generated_shapes_are_normalized() {
        let mut rng = SeededRng::new(5);
        for kind in ShapeKind::ALL {
            let spec = ShapeSpec::random(kind, &mut rng);
            assert_eq!(spec.kind(), kind);
            let c: PointCloud<f32> = generate_shape(&spec, 256, &mut rng).unwrap();
            assert!(c.centroid().iter().all(|v| v.abs() < 1e-5));
            assert!(c.max_norm() <= 1.0 + 1e-5);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut rng = SeededRng::new(0);
        assert!(generate_shape::<f32>(&ShapeSpec::single(Primitive::Sphere { radius: -1.0 }), 10, &mut rng).is_err());
        assert!(generate_shape::<f32>(
            &ShapeSpec::single(Primitive::Torus { major: 0.1, minor: 0.2 }),
            10,
            &mut rng
        )
        .is_err());
        assert!(generate_shape::<f32>(&ShapeSpec::single(Primitive::Sphere { radius: 1.0 }), 0, &mut rng).is_err());
    }
}
