//! Quality fields over the projected body plane.
//!
//! A field is a set of peaks, each contributing
//! `amplitude * exp(-|p - center| / decay_length)`. Contributions are merged
//! by a [`CombineRule`] and clamped to `[0, 1]`.

use std::collections::HashSet;
use std::ops::{Add, Sub};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spar::LatentParams;

/// A location on the projected plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y).sqrt()
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn squared_distance(self, other: Point2) -> f64 {
        let d = self - other;
        d.x * d.x + d.y * d.y
    }

    /// Bitwise identity key, used for exact matching on candidate grids.
    pub fn key(self) -> (u64, u64) {
        (self.x.to_bits(), self.y.to_bits())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub center: Point2,
    pub amplitude: f64,
    pub decay_length: f64,
}

impl Peak {
    pub fn new(center: Point2, amplitude: f64, decay_length: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&amplitude) {
            return Err(Error::InvalidParameter(format!(
                "peak amplitude {amplitude} outside [0, 1]"
            )));
        }
        if !(decay_length > 0.0 && decay_length.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "peak decay_length {decay_length} must be positive"
            )));
        }
        if !center.is_finite() {
            return Err(Error::InvalidParameter("peak center not finite".into()));
        }
        Ok(Self {
            center,
            amplitude,
            decay_length,
        })
    }

    #[inline]
    pub fn value_at(&self, p: Point2) -> f64 {
        self.amplitude * (-p.distance(self.center) / self.decay_length).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineRule {
    #[default]
    PointwiseMax,
    ClippedSum,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QualityField {
    pub peaks: Vec<Peak>,
    pub combine_rule: CombineRule,
}

impl QualityField {
    pub fn new(peaks: Vec<Peak>, combine_rule: CombineRule) -> Self {
        Self {
            peaks,
            combine_rule,
        }
    }

    /// Field value at `p`, always in `[0, 1]`. An empty field is zero everywhere.
    pub fn eval(&self, p: Point2) -> f64 {
        let v = match self.combine_rule {
            CombineRule::PointwiseMax => self
                .peaks
                .iter()
                .map(|peak| peak.value_at(p))
                .fold(0.0, f64::max),
            CombineRule::ClippedSum => self.peaks.iter().map(|peak| peak.value_at(p)).sum(),
        };
        v.clamp(0.0, 1.0)
    }

    /// Copy with every peak moved by `(theta.t_x, theta.t_y)` and every
    /// amplitude multiplied by `theta.c` (capped at 1).
    pub fn transformed(&self, theta: &LatentParams) -> QualityField {
        let shift = Point2::new(theta.t_x, theta.t_y);
        let peaks = self
            .peaks
            .iter()
            .map(|p| Peak {
                center: p.center + shift,
                amplitude: (p.amplitude * theta.c).clamp(0.0, 1.0),
                decay_length: p.decay_length,
            })
            .collect();
        QualityField::new(peaks, self.combine_rule)
    }

    /// Stable content hash over the exact bit patterns of every peak.
    pub fn content_hash(&self) -> u64 {
        // FNV-1a; independent of std's hasher seeding.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        mix(self.combine_rule as u64);
        for p in &self.peaks {
            mix(p.center.x.to_bits());
            mix(p.center.y.to_bits());
            mix(p.amplitude.to_bits());
            mix(p.decay_length.to_bits());
        }
        h
    }
}

/// A disk-shaped search region discretized into candidate points.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: String,
    pub center: Point2,
    pub radius: f64,
    pub candidates: Vec<Point2>,
}

impl Region {
    pub fn new(id: impl Into<String>, center: Point2, radius: f64, grid_step: f64) -> Result<Self> {
        let candidates = sample_candidates(center, radius, grid_step)?;
        Ok(Self {
            id: id.into(),
            center,
            radius,
            candidates,
        })
    }
}

/// Uniform per-axis shift in `[-shift_range, shift_range]` and uniform scale
/// in `[scale_range.0, scale_range.1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub shift_range: f64,
    pub scale_range: (f64, f64),
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(self.shift_range >= 0.0 && self.shift_range.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "shift_range {} must be >= 0",
                self.shift_range
            )));
        }
        if !(lo > 0.0 && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidParameter(format!(
                "scale_range [{lo}, {hi}] must be positive and ordered"
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LatentParams {
        let s = self.shift_range;
        let (lo, hi) = self.scale_range;
        let t_x = rng.random_range(-s..=s);
        let t_y = rng.random_range(-s..=s);
        let c = rng.random_range(lo..=hi);
        LatentParams::new(t_x, t_y, c)
    }
}

/// Randomly shift and scale `field`, returning the perturbed copy together
/// with the exact parameters that were drawn.
pub fn perturb_field<R: Rng + ?Sized>(
    field: &QualityField,
    spec: &PerturbationSpec,
    rng: &mut R,
) -> Result<(QualityField, LatentParams)> {
    spec.validate()?;
    let theta = spec.sample(rng);
    Ok((field.transformed(&theta), theta))
}

/// Axis-aligned grid points within `radius` of `center`, in row-major order
/// (rows by increasing y, then increasing x). The center is always included.
pub fn sample_candidates(center: Point2, radius: f64, grid_step: f64) -> Result<Vec<Point2>> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::DegenerateCandidates(format!(
            "radius {radius} must be positive"
        )));
    }
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(Error::DegenerateCandidates(format!(
            "grid_step {grid_step} must be positive"
        )));
    }
    if !center.is_finite() {
        return Err(Error::DegenerateCandidates("center not finite".into()));
    }
    if grid_step > 2.0 * radius {
        return Ok(vec![center]);
    }
    // Lattice test in grid units so boundary points are not lost to rounding.
    let r_units = radius / grid_step;
    let r2 = r_units * r_units * (1.0 + 1e-9);
    let n = r_units.floor() as i64;
    let mut out = Vec::new();
    for j in -n..=n {
        for i in -n..=n {
            if ((i * i + j * j) as f64) > r2 {
                continue;
            }
            let p = Point2::new(
                center.x + i as f64 * grid_step,
                center.y + j as f64 * grid_step,
            );
            // Keep the strict Euclidean postcondition in floating point too.
            if p.distance(center) <= radius {
                out.push(p);
            }
        }
    }
    if !out.contains(&center) {
        out.push(center);
    }
    debug_assert_eq!(
        out.iter().map(|p| p.key()).collect::<HashSet<_>>().len(),
        out.len()
    );
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakDef {
    pub cx: f64,
    pub cy: f64,
    pub amplitude: f64,
    pub decay_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionDef {
    pub id: String,
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

/// On-disk field definition (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldFile {
    #[serde(default)]
    pub combine_rule: CombineRule,
    pub peaks: Vec<PeakDef>,
    #[serde(default)]
    pub regions: Vec<RegionDef>,
}

impl FieldFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("malformed field file {}: {e}", path.display())))
    }

    pub fn field(&self) -> Result<QualityField> {
        let peaks = self
            .peaks
            .iter()
            .map(|p| Peak::new(Point2::new(p.cx, p.cy), p.amplitude, p.decay_length))
            .collect::<Result<Vec<_>>>()?;
        Ok(QualityField::new(peaks, self.combine_rule))
    }

    /// Build regions, optionally overriding every radius.
    pub fn regions(&self, grid_step: f64, radius_override: Option<f64>) -> Result<Vec<Region>> {
        self.regions
            .iter()
            .map(|r| {
                Region::new(
                    r.id.clone(),
                    Point2::new(r.cx, r.cy),
                    radius_override.unwrap_or(r.radius),
                    grid_step,
                )
            })
            .collect()
    }
}
