//! Points, regions, drift fields and the radial drift kernels.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, precondition, Error, Result};

/// Slice arithmetic used in the hot loops.
pub(crate) mod vecops {
    #[inline]
    pub fn norm_sq(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[inline]
    pub fn norm(x: &[f64]) -> f64 {
        norm_sq(x).sqrt()
    }

    #[inline]
    pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    #[inline]
    pub fn dist(a: &[f64], b: &[f64]) -> f64 {
        dist_sq(a, b).sqrt()
    }

    #[inline]
    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }
}

/// A point of ℝⁿ. The first coordinate is the vertical one, the rest form `x^⊥`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PointN(Vec<f64>);

impl PointN {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return invalid("a point needs at least one coordinate");
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("point coordinates"));
        }
        Ok(Self(coords))
    }

    pub fn origin(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        Self(vec![0.0; dim])
    }

    /// Unit vector along the first axis, scaled.
    pub fn on_axis(dim: usize, value: f64) -> Self {
        let mut p = Self::origin(dim);
        p.0[0] = value;
        p
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn first(&self) -> f64 {
        self.0[0]
    }

    pub fn perp(&self) -> &[f64] {
        &self.0[1..]
    }

    pub fn norm(&self) -> f64 {
        vecops::norm(&self.0)
    }

    pub fn distance(&self, other: &PointN) -> f64 {
        vecops::dist(&self.0, &other.0)
    }

    pub fn dot(&self, other: &PointN) -> f64 {
        vecops::dot(&self.0, &other.0)
    }

    pub fn scaled(&self, lambda: f64) -> PointN {
        PointN(self.0.iter().map(|c| c * lambda).collect())
    }

    pub fn sub(&self, other: &PointN) -> PointN {
        PointN(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for PointN {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        PointN::new(v)
    }
}

impl From<PointN> for Vec<f64> {
    fn from(p: PointN) -> Self {
        p.0
    }
}

impl Index<usize> for PointN {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// `x/‖x‖`, or the zero vector at the origin.
pub fn unit_radial(x: &PointN) -> Result<PointN> {
    check_finite(x)?;
    let r = x.norm();
    if r == 0.0 {
        return Ok(PointN::origin(x.dim()));
    }
    Ok(PointN(x.0.iter().map(|c| c / r).collect()))
}

/// `F(‖x‖)/(‖x‖ ∨ 1/N) · u(x)`.
pub fn truncated_drift(x: &PointN, drift: &DriftField, n_trunc: f64) -> Result<PointN> {
    check_finite(x)?;
    if !(n_trunc > 0.0) {
        return precondition(format!("truncation level must be positive, got {n_trunc}"));
    }
    let r = x.norm();
    if r == 0.0 {
        return Ok(PointN::origin(x.dim()));
    }
    let mag = drift.eval(r) / r.max(1.0 / n_trunc);
    Ok(x.scaled(mag / r))
}

/// `(b − a)·u(b)` for `‖a‖ ≤ 1/2` and `1 ≤ ‖b‖ ≤ 5/2`; always at least 1/2.
pub fn radial_projection_bound(a: &PointN, b: &PointN) -> Result<f64> {
    check_finite(a)?;
    check_finite(b)?;
    if a.dim() != b.dim() {
        return invalid("radial_projection_bound: dimension mismatch");
    }
    const TOL: f64 = 1e-12;
    let (na, nb) = (a.norm(), b.norm());
    if na > 0.5 + TOL {
        return precondition(format!("‖a‖ = {na} exceeds 1/2"));
    }
    if !(1.0 - TOL..=2.5 + TOL).contains(&nb) {
        return precondition(format!("‖b‖ = {nb} outside [1, 5/2]"));
    }
    let u = unit_radial(b)?;
    Ok(b.sub(a).dot(&u))
}

fn check_finite(x: &PointN) -> Result<()> {
    if x.0.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("point coordinates"))
    }
}

/// Radial drift profile `F(r)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftProfile {
    /// `F ≡ value`.
    Constant { value: f64 },
    /// Piecewise-linear interpolation over increasing radii, constant beyond the ends.
    Table { radii: Vec<f64>, values: Vec<f64> },
    /// `F(r) = amplitude · r / (r + scale)`: vanishes at the origin, saturates far away.
    Saturating { amplitude: f64, scale: f64 },
}

impl DriftProfile {
    #[inline]
    fn eval(&self, r: f64) -> f64 {
        match self {
            DriftProfile::Constant { value } => *value,
            DriftProfile::Saturating { amplitude, scale } => amplitude * r / (r + scale),
            DriftProfile::Table { radii, values } => {
                if r <= radii[0] {
                    return values[0];
                }
                let last = radii.len() - 1;
                if r >= radii[last] {
                    return values[last];
                }
                let k = radii.partition_point(|&x| x <= r) - 1;
                let w = (r - radii[k]) / (radii[k + 1] - radii[k]);
                values[k] + w * (values[k + 1] - values[k])
            }
        }
    }

    fn validate_parameters(&self) -> Result<()> {
        match self {
            DriftProfile::Constant { value } => {
                if !value.is_finite() || *value < 0.0 {
                    return invalid(format!("constant drift must be finite and ≥ 0, got {value}"));
                }
            }
            DriftProfile::Saturating { amplitude, scale } => {
                if !amplitude.is_finite() || *amplitude < 0.0 {
                    return invalid(format!("saturating amplitude must be ≥ 0, got {amplitude}"));
                }
                if !scale.is_finite() || *scale <= 0.0 {
                    return invalid(format!("saturating scale must be > 0, got {scale}"));
                }
            }
            DriftProfile::Table { radii, values } => {
                if radii.is_empty() || radii.len() != values.len() {
                    return invalid("drift table needs equally many (≥ 1) radii and values");
                }
                if radii.iter().chain(values).any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("drift table"));
                }
                if radii[0] < 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
                    return invalid("drift table radii must be ≥ 0 and strictly increasing");
                }
                if values.iter().any(|&v| v < 0.0) {
                    return invalid("drift table values must be ≥ 0");
                }
            }
        }
        Ok(())
    }

    fn tight_bounds(&self) -> (f64, f64) {
        match self {
            DriftProfile::Constant { value } => (*value, 0.0),
            DriftProfile::Saturating { amplitude, scale } => (*amplitude, amplitude / scale),
            DriftProfile::Table { radii, values } => {
                let bound = values.iter().cloned().fold(0.0, f64::max);
                let lip = radii
                    .windows(2)
                    .zip(values.windows(2))
                    .map(|(r, v)| ((v[1] - v[0]) / (r[1] - r[0])).abs())
                    .fold(0.0, f64::max);
                (bound, lip)
            }
        }
    }
}

/// A validated drift profile with declared sup-norm and Lipschitz constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DriftProfile", into = "DriftProfile")]
pub struct DriftField {
    profile: DriftProfile,
    bound: f64,
    lipschitz: f64,
}

impl DriftField {
    /// Declared constants are checked against the profile on a sampling grid.
    pub fn with_declared(profile: DriftProfile, bound: f64, lipschitz: f64) -> Result<Self> {
        profile.validate_parameters()?;
        if !(bound >= 0.0 && bound.is_finite()) || !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return invalid("declared bound and Lipschitz constant must be finite and ≥ 0");
        }
        let field = Self { profile, bound, lipschitz };
        field.check_on_grid()?;
        Ok(field)
    }

    /// Uses the tightest constants implied by the profile parameters.
    pub fn from_profile(profile: DriftProfile) -> Result<Self> {
        profile.validate_parameters()?;
        let (bound, lipschitz) = profile.tight_bounds();
        Self::with_declared(profile, bound, lipschitz)
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::from_profile(DriftProfile::Constant { value })
    }

    pub fn zero() -> Self {
        Self::constant(0.0).expect("zero drift is valid")
    }

    fn check_on_grid(&self) -> Result<()> {
        let reach = match &self.profile {
            DriftProfile::Table { radii, .. } => 2.0 * radii[radii.len() - 1] + 1.0,
            DriftProfile::Saturating { scale, .. } => 50.0 * scale,
            DriftProfile::Constant { .. } => 1.0,
        }
        .max(10.0);
        let mut grid: Vec<f64> = (0..=4000).map(|i| reach * i as f64 / 4000.0).collect();
        if let DriftProfile::Table { radii, .. } = &self.profile {
            grid.extend_from_slice(radii);
            grid.sort_by(f64::total_cmp);
            grid.dedup();
        }
        let tol = 1e-9 * (1.0 + self.bound);
        let mut prev: Option<(f64, f64)> = None;
        for &r in &grid {
            let f = self.profile.eval(r);
            if !(f >= 0.0 && f <= self.bound + tol) {
                return invalid(format!("F({r}) = {f} outside [0, {}]", self.bound));
            }
            if let Some((r0, f0)) = prev {
                if r > r0 {
                    let slope = ((f - f0) / (r - r0)).abs();
                    if slope > self.lipschitz * (1.0 + 1e-9) + 1e-9 {
                        return invalid(format!(
                            "sampled slope {slope} near r = {r} exceeds declared Lipschitz {}",
                            self.lipschitz
                        ));
                    }
                }
            }
            prev = Some((r, f));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        self.profile.eval(r)
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn profile(&self) -> &DriftProfile {
        &self.profile
    }

    /// `Some(c)` when the profile is the constant `c`.
    pub fn as_constant(&self) -> Option<f64> {
        match self.profile {
            DriftProfile::Constant { value } => Some(value),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.bound == 0.0
    }

    /// The field `r ↦ F(r/λ)` seen after a spatial dilation by λ.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return precondition(format!("scale factor must be positive, got {lambda}"));
        }
        let profile = match &self.profile {
            DriftProfile::Constant { value } => DriftProfile::Constant { value: *value },
            DriftProfile::Saturating { amplitude, scale } => {
                DriftProfile::Saturating { amplitude: *amplitude, scale: scale * lambda }
            }
            DriftProfile::Table { radii, values } => DriftProfile::Table {
                radii: radii.iter().map(|r| r * lambda).collect(),
                values: values.clone(),
            },
        };
        Self::with_declared(profile, self.bound, self.lipschitz / lambda)
    }
}

impl TryFrom<DriftProfile> for DriftField {
    type Error = Error;
    fn try_from(p: DriftProfile) -> Result<Self> {
        DriftField::from_profile(p)
    }
}

impl From<DriftField> for DriftProfile {
    fn from(f: DriftField) -> Self {
        f.profile
    }
}

/// Initial sets used by the experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    /// `{x : x₁ ≥ level}` in dimension `dim`.
    HalfSpace { dim: usize, level: f64 },
    /// Complement of the open ball of `radius` about `center`.
    BallComplement { center: PointN, radius: f64 },
    /// The flat patch `{level} × B_radius(center_perp)` of a half-space boundary.
    LateralDisc { level: f64, center_perp: Vec<f64>, radius: f64 },
    /// `(a₁, a₁+δ) × B_δ(a^⊥)`.
    Cylinder { corner: PointN, delta: f64 },
}

impl Region {
    pub fn dim(&self) -> usize {
        match self {
            Region::HalfSpace { dim, .. } => *dim,
            Region::BallComplement { center, .. } => center.dim(),
            Region::LateralDisc { center_perp, .. } => center_perp.len() + 1,
            Region::Cylinder { corner, .. } => corner.dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                invalid(format!("{what} must be positive and finite, got {v}"))
            }
        };
        match self {
            Region::HalfSpace { dim, level } => {
                if *dim == 0 {
                    return invalid("half-space dimension must be ≥ 1");
                }
                if !level.is_finite() {
                    return Err(Error::NonFinite("half-space level"));
                }
            }
            Region::BallComplement { radius, .. } => positive(*radius, "ball radius")?,
            Region::LateralDisc { level, center_perp, radius } => {
                positive(*radius, "disc radius")?;
                if !level.is_finite() || center_perp.iter().any(|c| !c.is_finite()) {
                    return Err(Error::NonFinite("lateral disc"));
                }
            }
            Region::Cylinder { delta, .. } => positive(*delta, "cylinder δ")?,
        }
        Ok(())
    }

    /// Euclidean distance from `p` to the (closed) region.
    pub fn distance_from(&self, p: &[f64]) -> f64 {
        match self {
            Region::HalfSpace { level, .. } => (level - p[0]).max(0.0),
            Region::BallComplement { center, radius } => {
                (radius - vecops::dist(p, center.coords())).max(0.0)
            }
            Region::LateralDisc { level, center_perp, radius } => {
                let lateral = (vecops::dist(&p[1..], center_perp) - radius).max(0.0);
                ((p[0] - level).powi(2) + lateral * lateral).sqrt()
            }
            Region::Cylinder { corner, delta } => {
                let a1 = corner.first();
                let dx = (a1 - p[0]).max(p[0] - a1 - delta).max(0.0);
                let dr = (vecops::dist(&p[1..], corner.perp()) - delta).max(0.0);
                (dx * dx + dr * dr).sqrt()
            }
        }
    }

    /// The region dilated by λ about the origin.
    pub fn scaled(&self, lambda: f64) -> Region {
        match self {
            Region::HalfSpace { dim, level } => Region::HalfSpace { dim: *dim, level: level * lambda },
            Region::BallComplement { center, radius } => {
                Region::BallComplement { center: center.scaled(lambda), radius: radius * lambda }
            }
            Region::LateralDisc { level, center_perp, radius } => Region::LateralDisc {
                level: level * lambda,
                center_perp: center_perp.iter().map(|c| c * lambda).collect(),
                radius: radius * lambda,
            },
            Region::Cylinder { corner, delta } => {
                Region::Cylinder { corner: corner.scaled(lambda), delta: delta * lambda }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[f64]) -> PointN {
        PointN::new(v.to_vec()).unwrap()
    }

    #[test]
    fn unit_radial_examples() {
        assert_eq!(unit_radial(&p(&[3.0, 4.0])).unwrap(), p(&[0.6, 0.8]));
        assert_eq!(unit_radial(&p(&[0.0, 0.0])).unwrap(), p(&[0.0, 0.0]));
        assert_eq!(unit_radial(&p(&[0.0, 0.0, 5.0])).unwrap(), p(&[0.0, 0.0, 1.0]));
        assert!(PointN::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn truncated_drift_examples() {
        let one = DriftField::constant(1.0).unwrap();
        assert_eq!(truncated_drift(&p(&[2.0, 0.0]), &one, 10.0).unwrap(), p(&[0.5, 0.0]));
        assert_eq!(truncated_drift(&p(&[0.0, 0.0]), &one, 10.0).unwrap(), p(&[0.0, 0.0]));
        let v = truncated_drift(&p(&[0.05, 0.0]), &one, 10.0).unwrap();
        assert!((v[0] - 10.0).abs() < 1e-12 && v[1] == 0.0);
        assert!(truncated_drift(&p(&[1.0]), &one, 0.0).is_err());
    }

    #[test]
    fn projection_bound_examples() {
        assert_eq!(radial_projection_bound(&p(&[0.0, 0.0]), &p(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(radial_projection_bound(&p(&[0.5, 0.0]), &p(&[0.0, 1.0])).unwrap(), 1.0);
        assert!(radial_projection_bound(&p(&[0.6, 0.0]), &p(&[1.0, 0.0])).is_err());
        assert!(radial_projection_bound(&p(&[0.0, 0.0]), &p(&[3.0, 0.0])).is_err());
    }

    #[test]
    fn drift_validation_rejects_lies() {
        let prof = DriftProfile::Saturating { amplitude: 2.0, scale: 0.5 };
        assert!(DriftField::with_declared(prof.clone(), 2.0, 4.0).is_ok());
        assert!(DriftField::with_declared(prof.clone(), 1.0, 4.0).is_err());
        assert!(DriftField::with_declared(prof, 2.0, 1.0).is_err());
        assert!(DriftField::constant(-1.0).is_err());
        let table = DriftProfile::Table { radii: vec![0.0, 1.0, 2.0], values: vec![0.0, 1.0, 0.5] };
        let f = DriftField::from_profile(table).unwrap();
        assert_eq!((f.bound(), f.lipschitz()), (1.0, 1.0));
        assert_eq!(f.eval(0.5), 0.5);
        assert_eq!(f.eval(5.0), 0.5);
    }

    #[test]
    fn scaled_field_is_dilated_profile() {
        let f = DriftField::from_profile(DriftProfile::Saturating { amplitude: 1.0, scale: 1.0 }).unwrap();
        let g = f.scaled(2.0).unwrap();
        for r in [0.1, 0.7, 3.0] {
            assert!((g.eval(r) - f.eval(r / 2.0)).abs() < 1e-15);
        }
        assert_eq!(g.lipschitz(), 0.5);
    }

    #[test]
    fn region_distances() {
        let disc = Region::LateralDisc { level: 1.0, center_perp: vec![0.0], radius: 8.0 };
        assert_eq!(disc.distance_from(&[0.0, 0.0]), 1.0);
        assert_eq!(disc.distance_from(&[1.0, 11.0]), 3.0);
        let ball = Region::BallComplement { center: PointN::origin(2), radius: 1.0 };
        assert_eq!(ball.distance_from(&[0.0, 0.0]), 1.0);
        let cyl = Region::Cylinder { corner: p(&[1.0, 0.0]), delta: 0.5 };
        assert_eq!(cyl.distance_from(&[0.0, 0.0]), 1.0);
        assert_eq!(cyl.distance_from(&[1.2, 0.1]), 0.0);
    }
}
