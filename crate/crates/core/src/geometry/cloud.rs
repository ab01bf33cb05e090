use std::io::{BufRead, Write};

use crate::error::{contract, Error, Result};
use crate::{Scalar, Tensor};

/// Ordered list of 3-D points, `N ≥ 1`, all coordinates finite.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud<T> {
    points: Vec<[T; 3]>,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new(points: Vec<[T; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(contract("point cloud must contain at least one point"));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(contract("point cloud contains a non-finite coordinate"));
        }
        Ok(Self { points })
    }

    /// From a flat `[x0, y0, z0, x1, ...]` buffer.
    pub fn from_flat(data: &[T]) -> Result<Self> {
        if !data.len().is_multiple_of(3) {
            return Err(contract(format!(
                "flat buffer of length {} is not a multiple of 3",
                data.len()
            )));
        }
        Self::new(data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        match t.shape() {
            [_, 3] => Self::from_flat(t.data()),
            s => Err(contract(format!("expected an [N, 3] tensor, got {s:?}"))),
        }
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&[self.len(), 3], self.flat().to_vec()).expect("cloud shape")
    }

    pub fn points(&self) -> &[[T; 3]] {
        &self.points
    }

    pub fn flat(&self) -> &[T] {
        self.points.as_flattened()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> PointCloud<U> {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| [U::of(p[0].to_f64c()), U::of(p[1].to_f64c()), U::of(p[2].to_f64c())])
                .collect(),
        }
    }

    pub fn centroid(&self) -> [T; 3] {
        let mut c = [T::zero(); 3];
        for p in &self.points {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        let n = T::from_usize(self.len()).unwrap();
        c.map(|v| v / n)
    }

    pub fn max_norm(&self) -> T {
        self.points.iter().map(norm).fold(T::zero(), T::max)
    }

    /// Centers on the centroid and scales so the farthest point has norm 1.
    /// Returns the normalized cloud, the removed center and the divisor; a
    /// degenerate cloud (all points identical) keeps scale 1.
    pub fn normalize(&self) -> (Self, [T; 3], T) {
        let center = self.centroid();
        let centered: Vec<[T; 3]> = self
            .points
            .iter()
            .map(|p| [p[0] - center[0], p[1] - center[1], p[2] - center[2]])
            .collect();
        let mut scale = centered.iter().map(norm).fold(T::zero(), T::max);
        if scale <= T::epsilon() {
            scale = T::one();
        }
        let points = centered.into_iter().map(|p| p.map(|v| v / scale)).collect();
        (Self { points }, center, scale)
    }

    /// Reads the `x y z` text format: one triple per line, `#` comments and
    /// blank lines ignored.
    pub fn read_xyz(reader: impl BufRead) -> Result<Self> {
        let mut points = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != 3 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected 3 values, found {}", vals.len()),
                });
            }
            let mut p = [T::zero(); 3];
            for (dst, s) in p.iter_mut().zip(&vals) {
                let v: f64 = s.parse().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("invalid number `{s}`"),
                })?;
                *dst = T::of(v);
            }
            points.push(p);
        }
        Self::new(points)
    }

    /// Writes the `x y z` text format using shortest round-trip formatting.
    pub fn write_xyz(&self, mut w: impl Write) -> Result<()> {
        for p in &self.points {
            writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
        }
        Ok(())
    }
}

pub(crate) fn norm<T: Scalar>(p: &[T; 3]) -> T {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}
