//! Tracer clouds advected by the translated flow `dψ = f_N(ψ − B) dt`.
//!
//! Each outer step moves `B` by its exact Gaussian increment and then integrates
//! the drift with `B` frozen. The frozen drift is radial about `B`, so a tracer
//! stays on its ray and only the scalar distance `r = ‖ψ − B‖` evolves, by
//! `dr/dt = F(r)/(r ∨ 1/N)`. For constant `F` and `r ≥ 1/N` that ODE is solved in
//! closed form (`r² + 2Ft`); otherwise RK4 sub-steps with
//! `h ≤ 0.05·r/‖f_N‖` are used. Tracers never interact, which makes subsets of a
//! cloud evolve bit-identically to the corresponding members of the full cloud.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::gamma;

use crate::error::{invalid, precondition, Error, Result};
use crate::geometry::{vecops, DriftField, PointN, Region};
use crate::noise::{BrownianPath, NoiseStream};

/// Lateral radius used when a half-space in dimension ≥ 2 is discretized.
pub const DEFAULT_PATCH_RADIUS: f64 = 8.0;
/// Sub-step control: the drift may move a tracer by at most this fraction of its distance.
pub const SUBSTEP_FRACTION: f64 = 0.05;

/// Online refinement of the cloud near the closest tracer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RefinePolicy {
    None,
    /// Refine the argmin tracer while its nearest neighbour is farther than
    /// `ratio` times its distance to `B`, for distances below `below`.
    Adaptive { ratio: f64, max_level: u32, max_tracers: usize, below: f64 },
}

impl RefinePolicy {
    pub fn adaptive_for_budget(budget: usize) -> Self {
        RefinePolicy::Adaptive { ratio: 0.5, max_level: 14, max_tracers: 4 * budget.max(8), below: 1.0 }
    }
}

/// Drift is dropped for tracers laterally farther than `lateral_cutoff` from `B`
/// whose drift magnitude is below `magnitude_floor`; the skipped displacement is
/// accumulated as an error bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarField {
    pub lateral_cutoff: f64,
    #[serde(default = "default_magnitude_floor")]
    pub magnitude_floor: f64,
}

fn default_magnitude_floor() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub dim: usize,
    pub drift: DriftField,
    /// `N`; the hit threshold is `1/N`.
    pub truncation: f64,
    pub horizon: f64,
    pub dt: f64,
    pub region: Region,
    pub budget: usize,
    pub refine: RefinePolicy,
    #[serde(default)]
    pub far_field: Option<FarField>,
}

impl FlowConfig {
    /// Defaults: `N = 100`, `T = 10`, `Δt = 10⁻⁴`, budget `64·n`, adaptive refinement.
    pub fn new(region: Region, drift: DriftField) -> Self {
        let dim = region.dim();
        let budget = 64 * dim;
        Self {
            dim,
            drift,
            truncation: 100.0,
            horizon: 10.0,
            dt: 1e-4,
            region,
            budget,
            refine: RefinePolicy::adaptive_for_budget(budget),
            far_field: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.region.validate()?;
        if self.region.dim() != self.dim {
            return invalid(format!("region dimension {} differs from n = {}", self.region.dim(), self.dim));
        }
        if !(self.truncation > 0.0 && self.truncation.is_finite()) {
            return invalid(format!("truncation N must be positive, got {}", self.truncation));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) || !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid("horizon and dt must be positive and finite");
        }
        if self.budget == 0 {
            return invalid("tracer budget must be ≥ 1");
        }
        let gap = self.region.distance_from(&vec![0.0; self.dim]);
        if !(1.0 / self.truncation < gap) {
            return invalid(format!("threshold 1/N = {} must be below the initial distance {gap}", 1.0 / self.truncation));
        }
        if let RefinePolicy::Adaptive { ratio, max_tracers, below, .. } = self.refine {
            if !(ratio > 0.0) || !(below > 0.0) || max_tracers == 0 {
                return invalid("adaptive refinement needs ratio > 0, below > 0 and max_tracers ≥ 1");
            }
        }
        Ok(())
    }

    /// Number of outer steps covering the horizon.
    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt) - 1e-9).ceil().max(1.0) as usize
    }

    pub fn threshold(&self) -> f64 {
        1.0 / self.truncation
    }

    /// The configuration seen after dilating space by λ and time by λ².
    pub fn scaled(&self, lambda: f64) -> Result<FlowConfig> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return precondition(format!("λ must be positive, got {lambda}"));
        }
        let l2 = lambda * lambda;
        let refine = match self.refine {
            RefinePolicy::Adaptive { ratio, max_level, max_tracers, below } => {
                RefinePolicy::Adaptive { ratio, max_level, max_tracers, below: below * lambda }
            }
            RefinePolicy::None => RefinePolicy::None,
        };
        Ok(FlowConfig {
            dim: self.dim,
            drift: self.drift.scaled(lambda)?,
            truncation: self.truncation / lambda,
            horizon: self.horizon * l2,
            dt: self.dt * l2,
            region: self.region.scaled(lambda),
            budget: self.budget,
            refine,
            far_field: self
                .far_field
                .map(|f| FarField { lateral_cutoff: f.lateral_cutoff * lambda, magnitude_floor: f.magnitude_floor / lambda }),
        })
    }
}

/// Labelled tracers with initial and current positions (flat storage, stride `dim`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracerCloud {
    dim: usize,
    labels: Vec<u64>,
    initial: Vec<f64>,
    current: Vec<f64>,
    /// Local parameter spacing of each tracer on the boundary.
    cells: Vec<f64>,
    levels: Vec<u32>,
    next_label: u64,
    pub terminated: bool,
    pub time: f64,
    pub steps: usize,
}

impl TracerCloud {
    /// A cloud from explicit points (labels `0..`), all with spacing `cell`.
    pub fn from_points(dim: usize, points: &[Vec<f64>], cell: f64) -> Result<Self> {
        if dim == 0 {
            return invalid("cloud dimension must be ≥ 1");
        }
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return invalid("tracer dimension mismatch");
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("tracer position"));
            }
            flat.extend_from_slice(p);
        }
        let n = points.len();
        Ok(Self {
            dim,
            labels: (0..n as u64).collect(),
            initial: flat.clone(),
            current: flat,
            cells: vec![cell; n],
            levels: vec![0; n],
            next_label: n as u64,
            terminated: false,
            time: 0.0,
            steps: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u64] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u64 {
        self.labels[i]
    }

    pub fn initial(&self, i: usize) -> &[f64] {
        &self.initial[i * self.dim..(i + 1) * self.dim]
    }

    pub fn current(&self, i: usize) -> &[f64] {
        &self.current[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cell(&self, i: usize) -> f64 {
        self.cells[i]
    }

    pub fn index_of(&self, label: u64) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    /// The tracers whose labels are listed, in that order, reset to time 0.
    pub fn subset(&self, labels: &[u64]) -> Result<TracerCloud> {
        let mut out = TracerCloud {
            dim: self.dim,
            labels: Vec::new(),
            initial: Vec::new(),
            current: Vec::new(),
            cells: Vec::new(),
            levels: Vec::new(),
            next_label: self.next_label,
            terminated: false,
            time: 0.0,
            steps: 0,
        };
        for &l in labels {
            let i = self.index_of(l).ok_or_else(|| Error::Invalid(format!("no tracer labelled {l}")))?;
            out.labels.push(l);
            out.initial.extend_from_slice(self.initial(i));
            out.current.extend_from_slice(self.initial(i));
            out.cells.push(self.cells[i]);
            out.levels.push(self.levels[i]);
        }
        Ok(out)
    }

    /// Smallest and largest current first coordinate.
    pub fn vertical_extremes(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.len() {
            let x = self.current[i * self.dim];
            lo = lo.min(x);
            hi = hi.max(x);
        }
        (lo, hi)
    }

    /// Distance from `b` to the nearest tracer and its index.
    pub fn nearest_to(&self, b: &[f64]) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for i in 0..self.len() {
            let d = vecops::dist(self.current(i), b);
            if d < best.0 {
                best = (d, i);
            }
        }
        best
    }

    fn scaled(&self, lambda: f64) -> TracerCloud {
        let mut c = self.clone();
        c.initial.iter_mut().for_each(|x| *x *= lambda);
        c.current.iter_mut().for_each(|x| *x *= lambda);
        c.cells.iter_mut().for_each(|x| *x *= lambda);
        c.time *= lambda * lambda;
        c
    }

    pub(crate) fn positions(&self) -> &[f64] {
        &self.current
    }

    pub(crate) fn set_positions(&mut self, flat: &[f64]) {
        self.current.copy_from_slice(flat);
    }

    pub(crate) fn level(&self, i: usize) -> u32 {
        self.levels[i]
    }

    pub(crate) fn set_cell(&mut self, i: usize, cell: f64, level: u32) {
        self.cells[i] = cell;
        self.levels[i] = level;
    }

    /// Moves the origin to `b` and divides all coordinates by `factor`; the
    /// result starts a fresh stage (current positions become initial ones).
    pub(crate) fn recenter(&mut self, b: &[f64], factor: f64) {
        let dim = self.dim;
        for chunk in self.current.chunks_exact_mut(dim) {
            for (x, bc) in chunk.iter_mut().zip(b) {
                *x = (*x - bc) / factor;
            }
        }
        self.initial.copy_from_slice(&self.current);
        self.cells.iter_mut().for_each(|c| *c /= factor);
        self.time = 0.0;
        self.steps = 0;
    }

    pub(crate) fn has_initial_near(&self, x: &[f64], tol: f64) -> bool {
        (0..self.len()).any(|i| vecops::dist(self.initial(i), x) <= tol)
    }

    pub(crate) fn push_tracer(&mut self, init: &[f64], current: &[f64], cell: f64, level: u32) -> u64 {
        let label = self.next_label;
        self.next_label += 1;
        self.labels.push(label);
        self.initial.extend_from_slice(init);
        self.current.extend_from_slice(current);
        self.cells.push(cell);
        self.levels.push(level);
        label
    }
}

/// Per-step summary of a cloud update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSummary {
    pub min_distance: f64,
    pub argmin: usize,
    pub min_x1: f64,
    pub max_x1: f64,
    /// Displacement dropped by the far-field shortcut during this step.
    pub skipped: f64,
}

/// Radial drift kernel `r ↦ F(r)/(r ∨ 1/N)` with the integrator options.
#[derive(Clone, Copy, Debug)]
pub struct Kernel<'a> {
    drift: &'a DriftField,
    inv_n: f64,
    constant: Option<f64>,
    zero: bool,
    far: Option<FarField>,
}

impl<'a> Kernel<'a> {
    pub fn new(drift: &'a DriftField, truncation: f64, far: Option<FarField>) -> Self {
        Self { drift, inv_n: 1.0 / truncation, constant: drift.as_constant(), zero: drift.is_zero(), far }
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    #[inline]
    fn speed(&self, r: f64) -> f64 {
        self.drift.eval(r) / r.max(self.inv_n)
    }

    /// Distance from the frozen `B` after time `h`, starting from `r > 0`.
    #[inline]
    pub fn evolve_radius(&self, r: f64, h: f64) -> f64 {
        if let Some(c) = self.constant {
            if r >= self.inv_n {
                return (r * r + 2.0 * c * h).sqrt();
            }
        }
        let mut r = r;
        let mut rem = h;
        while rem > 0.0 {
            let g0 = self.speed(r);
            if g0 == 0.0 {
                break;
            }
            let hs = rem.min(SUBSTEP_FRACTION * r / g0);
            let k1 = g0;
            let k2 = self.speed(r + 0.5 * hs * k1);
            let k3 = self.speed(r + 0.5 * hs * k2);
            let k4 = self.speed(r + hs * k3);
            let next = r + hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            debug_assert!(next >= r, "drift sub-step decreased the distance");
            r = next;
            rem = if hs == rem { 0.0 } else { rem - hs };
        }
        r
    }

    /// Moves one tracer with `B` frozen at `b`; returns (distance before the
    /// drift, skipped displacement). The drift only pushes the tracer away
    /// from `b`, so the pre-drift distance is the minimum over the step.
    #[inline]
    pub fn advance_tracer(&self, psi: &mut [f64], b: &[f64], h: f64) -> (f64, f64) {
        let r = vecops::dist(psi, b);
        if self.zero || r == 0.0 {
            return (r, 0.0);
        }
        if let Some(far) = self.far {
            let lateral = vecops::dist(&psi[1..], &b[1..]);
            if lateral > far.lateral_cutoff {
                let mag = self.speed(r);
                if mag < far.magnitude_floor {
                    return (r, mag * h);
                }
            }
        }
        let r_new = self.evolve_radius(r, h);
        let ratio = r_new / r;
        for (p, bc) in psi.iter_mut().zip(b) {
            *p = bc + (*p - bc) * ratio;
        }
        (r, 0.0)
    }
}

impl TracerCloud {
    /// Moves every tracer for time `h` with `B` frozen at `b` (already advanced).
    pub fn advance_all(&mut self, b: &[f64], h: f64, kernel: &Kernel, want_distance: bool) -> StepSummary {
        if kernel.is_zero() && !want_distance {
            let (lo, hi) = self.vertical_extremes();
            return StepSummary { min_distance: f64::NAN, argmin: 0, min_x1: lo, max_x1: hi, skipped: 0.0 };
        }
        let dim = self.dim;
        let mut s = StepSummary {
            min_distance: f64::INFINITY,
            argmin: 0,
            min_x1: f64::INFINITY,
            max_x1: f64::NEG_INFINITY,
            skipped: 0.0,
        };
        for (i, psi) in self.current.chunks_exact_mut(dim).enumerate() {
            let (d, skipped) = kernel.advance_tracer(psi, b, h);
            s.skipped += skipped;
            if d < s.min_distance {
                s.min_distance = d;
                s.argmin = i;
            }
            s.min_x1 = s.min_x1.min(psi[0]);
            s.max_x1 = s.max_x1.max(psi[0]);
        }
        self.time += h;
        self.steps += 1;
        s
    }
}

/// One outer step: `B ← B + increment`, then the drift update; time advances by `dt`.
pub fn advance_cloud(
    cloud: &mut TracerCloud,
    b: &mut PointN,
    increment: &[f64],
    dt: f64,
    drift: &DriftField,
    truncation: f64,
) -> Result<StepSummary> {
    if cloud.terminated {
        return precondition("cannot advance a terminated cloud");
    }
    if increment.len() != cloud.dim || b.dim() != cloud.dim {
        return invalid("increment, B and cloud dimensions differ");
    }
    if !(truncation > 0.0) || !(dt >= 0.0) {
        return precondition("need N > 0 and dt ≥ 0");
    }
    let moved: Vec<f64> = b.coords().iter().zip(increment).map(|(x, d)| x + d).collect();
    *b = PointN::new(moved)?;
    let kernel = Kernel::new(drift, truncation, None);
    Ok(cloud.advance_all(b.coords(), dt, &kernel, true))
}

// ---------------------------------------------------------------------------
// Region discretization
// ---------------------------------------------------------------------------

/// Root of `x^{d+1} = x + 1`, the generator of the R_d low-discrepancy sequence.
fn harmonious(d: usize) -> f64 {
    let mut x: f64 = 2.0;
    for _ in 0..64 {
        let f = x.powi(d as i32 + 1) - x - 1.0;
        let df = (d as f64 + 1.0) * x.powi(d as i32) - 1.0;
        x -= f / df;
    }
    x
}

/// Point `k` of the R_d sequence in `[0,1)^d`.
fn rd_point(d: usize, k: usize) -> Vec<f64> {
    let g = harmonious(d);
    (0..d)
        .map(|j| {
            let alpha = (1.0 / g.powi(j as i32 + 1)).fract();
            (0.5 + alpha * (k + 1) as f64).fract()
        })
        .collect()
}

fn unit_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

fn normalized_or_axis(mut v: Vec<f64>) -> Vec<f64> {
    let r = vecops::norm(&v);
    if r > 0.0 && r.is_finite() {
        v.iter_mut().for_each(|x| *x /= r);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
        v[0] = 1.0;
    }
    v
}

/// `count` quasi-uniform unit vectors in ℝⁿ.
fn sphere_points(n: usize, count: usize) -> Vec<Vec<f64>> {
    match n {
        1 => [1.0, -1.0].iter().take(count.min(2)).map(|&s| vec![s]).collect(),
        2 => (0..count)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - (2.0 * k as f64 + 1.0) / count as f64;
                    let rho = (1.0 - z * z).max(0.0).sqrt();
                    let phi = golden * k as f64;
                    vec![z, rho * phi.cos(), rho * phi.sin()]
                })
                .collect()
        }
        _ => {
            let normal = unit_normal();
            (0..count)
                .map(|k| {
                    let u = rd_point(n, k);
                    let v: Vec<f64> = u.iter().map(|&x| normal.inverse_cdf(x)).collect();
                    normalized_or_axis(v)
                })
                .collect()
        }
    }
}

/// `count` quasi-uniform points in the closed unit ball of ℝᵈ (d ≥ 1).
fn ball_points(d: usize, count: usize) -> Vec<Vec<f64>> {
    match d {
        1 => {
            if count == 1 {
                return vec![vec![0.0]];
            }
            (0..count).map(|k| vec![-1.0 + 2.0 * k as f64 / (count - 1) as f64]).collect()
        }
        2 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let r = ((k as f64 + 0.5) / count as f64).sqrt();
                    let phi = golden * k as f64;
                    vec![r * phi.cos(), r * phi.sin()]
                })
                .collect()
        }
        _ => {
            let normal = unit_normal();
            (0..count)
                .map(|k| {
                    let u = rd_point(d + 1, k);
                    let v: Vec<f64> = u[..d].iter().map(|&x| normal.inverse_cdf(x)).collect();
                    let radius = u[d].powf(1.0 / d as f64);
                    normalized_or_axis(v).into_iter().map(|x| x * radius).collect()
                })
                .collect()
        }
    }
}

fn sphere_area(n: usize, radius: f64) -> f64 {
    let nf = n as f64;
    2.0 * std::f64::consts::PI.powf(nf / 2.0) / gamma(nf / 2.0) * radius.powf(nf - 1.0)
}

fn ball_volume(d: usize, radius: f64) -> f64 {
    let df = d as f64;
    std::f64::consts::PI.powf(df / 2.0) / gamma(df / 2.0 + 1.0) * radius.powf(df)
}

fn disc_cell(d: usize, radius: f64, count: usize) -> f64 {
    match d {
        0 => 0.0,
        1 => 2.0 * radius / (count.max(2) - 1) as f64,
        _ => (ball_volume(d, radius) / count as f64).powf(1.0 / d as f64),
    }
}

fn disc_cloud(level: f64, center_perp: &[f64], radius: f64, budget: usize) -> Vec<Vec<f64>> {
    let d = center_perp.len();
    if d == 0 {
        return vec![vec![level]];
    }
    ball_points(d, budget)
        .into_iter()
        .map(|q| {
            let mut p = Vec::with_capacity(d + 1);
            p.push(level);
            p.extend(q.iter().zip(center_perp).map(|(x, c)| c + radius * x));
            p
        })
        .collect()
}

/// Quasi-uniform tracers on the boundary of `region`; labels are `0..count`.
pub fn discretize_region(region: &Region, budget: usize) -> Result<TracerCloud> {
    region.validate()?;
    if budget == 0 {
        return invalid("tracer budget must be ≥ 1");
    }
    let n = region.dim();
    match region {
        Region::HalfSpace { level, .. } => {
            let disc = Region::LateralDisc { level: *level, center_perp: vec![0.0; n - 1], radius: DEFAULT_PATCH_RADIUS };
            discretize_region(&disc, budget)
        }
        Region::LateralDisc { level, center_perp, radius } => {
            let pts = disc_cloud(*level, center_perp, *radius, budget);
            TracerCloud::from_points(n, &pts, disc_cell(n - 1, *radius, budget))
        }
        Region::BallComplement { center, radius } => {
            let pts: Vec<Vec<f64>> = sphere_points(n, budget)
                .into_iter()
                .map(|u| u.iter().zip(center.coords()).map(|(x, c)| c + radius * x).collect())
                .collect();
            let cell = if n == 1 { 0.0 } else { (sphere_area(n, *radius) / budget as f64).powf(1.0 / (n - 1) as f64) };
            TracerCloud::from_points(n, &pts, cell)
        }
        Region::Cylinder { corner, delta } => {
            let a1 = corner.first();
            if n == 1 {
                let pts = [vec![a1], vec![a1 + delta]];
                return TracerCloud::from_points(1, &pts[..budget.min(2)], 0.0);
            }
            let d = n - 1;
            let face = ball_volume(d, *delta);
            let side = sphere_area(d, *delta) * delta;
            let total = 2.0 * face + side;
            let mut bottom = ((budget as f64) * face / total).round().max(1.0) as usize;
            let mut top = bottom;
            if budget < 3 {
                bottom = budget;
                top = 0;
            }
            let side_count = budget.saturating_sub(bottom + top);
            let mut pts = disc_cloud(a1, corner.perp(), *delta, bottom);
            if top > 0 {
                pts.extend(disc_cloud(a1 + delta, corner.perp(), *delta, top));
            }
            let dirs = sphere_points(d, side_count.max(1));
            let golden = (5f64.sqrt() - 1.0) / 2.0;
            for j in 0..side_count {
                let axial = a1 + delta * (0.5 + golden * j as f64).fract();
                let u = &dirs[j % dirs.len()];
                let mut p = vec![axial];
                p.extend(u.iter().zip(corner.perp()).map(|(x, c)| c + delta * x));
                pts.push(p);
            }
            let cell = ((2.0 * face + side) / budget as f64).powf(1.0 / d as f64);
            TracerCloud::from_points(n, &pts, cell)
        }
    }
}

/// Orthonormal basis of the hyperplane orthogonal to the unit vector `u`.
fn tangent_basis(u: &[f64]) -> Vec<Vec<f64>> {
    let n = u.len();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n.saturating_sub(1));
    for j in 0..n {
        if basis.len() + 1 == n {
            break;
        }
        let mut v = vec![0.0; n];
        v[j] = 1.0;
        let proj = vecops::dot(&v, u);
        for (vi, ui) in v.iter_mut().zip(u) {
            *vi -= proj * ui;
        }
        for b in &basis {
            let p = vecops::dot(&v, b);
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= p * bi;
            }
        }
        let norm = vecops::norm(&v);
        if norm > 0.1 {
            basis.push(v.iter().map(|x| x / norm).collect());
        }
    }
    basis
}

/// Boundary points at parameter distance `s` from `x` along the tangent axes.
pub(crate) fn boundary_neighbors(region: &Region, x: &[f64], s: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut out = Vec::new();
    let lateral = |x: &[f64], center: &[f64], radius: f64, out: &mut Vec<Vec<f64>>| {
        for j in 1..n {
            for sign in [-1.0, 1.0] {
                let mut y = x.to_vec();
                y[j] += sign * s;
                if vecops::dist(&y[1..], center) <= radius {
                    out.push(y);
                }
            }
        }
    };
    let on_sphere = |x: &[f64], center: &[f64], radius: f64, out: &mut Vec<Vec<f64>>| {
        let rel: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
        let r = vecops::norm(&rel);
        if r == 0.0 || rel.len() < 2 {
            return;
        }
        let u: Vec<f64> = rel.iter().map(|v| v / r).collect();
        for t in tangent_basis(&u) {
            for sign in [-1.0, 1.0] {
                let y: Vec<f64> = rel.iter().zip(&t).map(|(a, b)| a + sign * s * b).collect();
                let ny = vecops::norm(&y);
                out.push(y.iter().zip(center).map(|(v, c)| c + radius * v / ny).collect());
            }
        }
    };
    match region {
        Region::HalfSpace { .. } => lateral(x, &vec![0.0; n - 1], DEFAULT_PATCH_RADIUS, &mut out),
        Region::LateralDisc { center_perp, radius, .. } => lateral(x, center_perp, *radius, &mut out),
        Region::BallComplement { center, radius } => on_sphere(x, center.coords(), *radius, &mut out),
        Region::Cylinder { corner, delta } => {
            let a1 = corner.first();
            if n == 1 {
                return out;
            }
            if x[0] == a1 || x[0] == a1 + delta {
                lateral(x, corner.perp(), *delta, &mut out);
            } else {
                for sign in [-1.0, 1.0] {
                    let mut y = x.to_vec();
                    y[0] += sign * s;
                    if y[0] >= a1 && y[0] <= a1 + delta {
                        out.push(y);
                    }
                }
                let mut side = Vec::new();
                on_sphere(&x[1..], corner.perp(), *delta, &mut side);
                for q in side {
                    let mut y = vec![x[0]];
                    y.extend(q);
                    out.push(y);
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Flow runs
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub config: FlowConfig,
    pub seed: u64,
    pub path_index: u64,
    pub substream: u64,
    pub hit: bool,
    pub tau_hat: Option<f64>,
    /// `min_x ‖ψ(x) − B_t‖` at every grid time, starting at `t = 0`.
    pub min_distance: Vec<f64>,
    /// Label of the closest tracer at every grid time.
    pub argmin: Vec<u64>,
    pub cloud: TracerCloud,
    pub refinements: u64,
    pub budget_exhausted: bool,
    /// Total displacement dropped by the far-field shortcut (an error bound).
    pub far_field_error: f64,
    #[serde(skip)]
    pub path: Option<BrownianPath>,
}

impl FlowResult {
    pub fn steps(&self) -> usize {
        self.min_distance.len() - 1
    }

    /// Smallest distance reached and the step where it happened.
    pub fn closest_approach(&self) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for (k, &d) in self.min_distance.iter().enumerate() {
            if d < best.0 {
                best = (d, k);
            }
        }
        best
    }

    /// Compact record with the distance series sampled every `stride` steps.
    pub fn record(&self, stride: usize) -> FlowRecord {
        let stride = stride.max(1);
        let series = self
            .min_distance
            .iter()
            .enumerate()
            .filter(|(k, _)| k % stride == 0 || *k + 1 == self.min_distance.len())
            .map(|(k, &d)| (k as f64 * self.config.dt, d))
            .collect();
        FlowRecord {
            config: self.config.clone(),
            seed: self.seed,
            path_index: self.path_index,
            hit: self.hit,
            tau_hat: self.tau_hat,
            closest_approach: self.closest_approach().0,
            tracers: self.cloud.len(),
            refinements: self.refinements,
            budget_exhausted: self.budget_exhausted,
            min_distance: series,
        }
    }
}

/// Serializable summary of a flow realization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub config: FlowConfig,
    pub seed: u64,
    pub path_index: u64,
    pub hit: bool,
    pub tau_hat: Option<f64>,
    pub closest_approach: f64,
    pub tracers: usize,
    pub refinements: u64,
    pub budget_exhausted: bool,
    /// `(time, min distance)` pairs.
    pub min_distance: Vec<(f64, f64)>,
}

/// Replays one tracer from its initial position through steps `1..=upto` of
/// `path`, returning its position and its distance at each step (index 0 = t₀).
pub(crate) fn replay_tracer(init: &[f64], path: &BrownianPath, upto: usize, kernel: &Kernel) -> (Vec<f64>, Vec<f64>, f64) {
    let mut psi = init.to_vec();
    let mut dists = Vec::with_capacity(upto + 1);
    dists.push(vecops::dist(&psi, path.position(0)));
    let mut skipped = 0.0;
    for k in 1..=upto {
        let (d, s) = kernel.advance_tracer(&mut psi, path.position(k), path.dts()[k - 1]);
        dists.push(d);
        skipped += s;
    }
    (psi, dists, skipped)
}

struct Runner<'a> {
    config: &'a FlowConfig,
    kernel: Kernel<'a>,
    cloud: TracerCloud,
    min_distance: Vec<f64>,
    argmin: Vec<u64>,
    refinements: u64,
    budget_exhausted: bool,
    far_field_error: f64,
    spacing_check_every: usize,
}

enum StepOutcome {
    Continue,
    Hit(usize),
}

impl<'a> Runner<'a> {
    fn new(config: &'a FlowConfig, cloud: TracerCloud, b0: &[f64]) -> Self {
        let kernel = Kernel::new(&config.drift, config.truncation, config.far_field);
        let (d0, i0) = cloud.nearest_to(b0);
        let label = cloud.label(i0);
        Self {
            config,
            kernel,
            cloud,
            min_distance: vec![d0],
            argmin: vec![label],
            refinements: 0,
            budget_exhausted: false,
            far_field_error: 0.0,
            spacing_check_every: 1,
        }
    }

    /// Advances to step `k` (B already at `path.position(k)`).
    fn step(&mut self, path: &BrownianPath, k: usize) -> StepOutcome {
        let s = self.cloud.advance_all(path.position(k), path.dts()[k - 1], &self.kernel, true);
        self.far_field_error += s.skipped;
        self.min_distance.push(s.min_distance);
        self.argmin.push(self.cloud.label(s.argmin));
        let threshold = self.config.threshold();
        if s.min_distance <= threshold {
            return StepOutcome::Hit(k);
        }
        if let RefinePolicy::Adaptive { ratio, max_level, max_tracers, below } = self.config.refine {
            if s.min_distance < below && k.is_multiple_of(self.spacing_check_every) {
                if let Some(hit) = self.refine_online(path, k, s.argmin, ratio, max_level, max_tracers) {
                    return StepOutcome::Hit(hit);
                }
            }
        }
        StepOutcome::Continue
    }

    fn nearest_neighbor_distance(&self, i: usize) -> f64 {
        let x = self.cloud.current(i);
        let mut best = f64::INFINITY;
        for j in 0..self.cloud.len() {
            if j != i {
                best = best.min(vecops::dist(self.cloud.current(j), x));
            }
        }
        best
    }

    /// Inserts children around the closest tracer while the local spacing is
    /// coarse compared to its distance. Returns an earlier hit step if a child
    /// reveals one.
    fn refine_online(
        &mut self,
        path: &BrownianPath,
        k: usize,
        mut argmin: usize,
        ratio: f64,
        max_level: u32,
        max_tracers: usize,
    ) -> Option<usize> {
        for _ in 0..=max_level {
            let d = self.min_distance[k];
            if self.cloud.levels[argmin] >= max_level || self.cloud.cells[argmin] == 0.0 {
                return None;
            }
            if self.nearest_neighbor_distance(argmin) <= ratio * d {
                return None;
            }
            let fanout = 2 * (self.cloud.dim - 1);
            if self.cloud.len() + fanout > max_tracers {
                self.budget_exhausted = true;
                return None;
            }
            if let Some(hit) = self.insert_children(path, k, argmin) {
                return Some(hit);
            }
            argmin = self.cloud.index_of(self.argmin[k]).unwrap_or(argmin);
        }
        None
    }

    /// Adds the tangent neighbours of tracer `i` at half its spacing, replayed to step `k`.
    fn insert_children(&mut self, path: &BrownianPath, k: usize, i: usize) -> Option<usize> {
        let cell = self.cloud.cells[i] * 0.5;
        let level = self.cloud.levels[i] + 1;
        self.cloud.cells[i] = cell;
        self.cloud.levels[i] = level;
        let init = self.cloud.initial(i).to_vec();
        let children = boundary_neighbors(&self.config.region, &init, cell);
        self.refinements += 1;
        let mut earliest: Option<usize> = None;
        for child in children {
            if self.cloud.has_initial_near(&child, 1e-9 * cell) {
                continue;
            }
            let (psi, dists, skipped) = replay_tracer(&child, path, k, &self.kernel);
            self.far_field_error += skipped;
            let label = self.cloud.push_tracer(&child, &psi, cell, level);
            for (j, &dj) in dists.iter().enumerate() {
                if dj < self.min_distance[j] {
                    self.min_distance[j] = dj;
                    self.argmin[j] = label;
                }
            }
            if let Some(j) = dists.iter().position(|&dj| dj <= self.config.threshold()) {
                earliest = Some(earliest.map_or(j, |e: usize| e.min(j)));
            }
        }
        earliest
    }

    /// Rewinds every tracer to step `k` (used when refinement reveals an earlier hit).
    fn rewind_to(&mut self, path: &BrownianPath, k: usize) {
        for i in 0..self.cloud.len() {
            let init = self.cloud.initial(i).to_vec();
            let (psi, _, _) = replay_tracer(&init, path, k, &self.kernel);
            let dim = self.cloud.dim;
            self.cloud.current[i * dim..(i + 1) * dim].copy_from_slice(&psi);
        }
        self.cloud.steps = k;
        self.cloud.time = path.times()[k];
        self.min_distance.truncate(k + 1);
        self.argmin.truncate(k + 1);
    }

    fn finish(mut self, path: BrownianPath, stream: &NoiseStream, hit_step: Option<usize>) -> FlowResult {
        let tau_hat = hit_step.map(|k| path.times()[k]);
        let path = match hit_step {
            Some(k) if k < path.steps() => path.truncated(k),
            _ => path,
        };
        self.cloud.terminated = hit_step.is_some();
        FlowResult {
            config: self.config.clone(),
            seed: stream.seed,
            path_index: stream.path_index,
            substream: stream.substream,
            hit: hit_step.is_some(),
            tau_hat,
            min_distance: self.min_distance,
            argmin: self.argmin,
            cloud: self.cloud,
            refinements: self.refinements,
            budget_exhausted: self.budget_exhausted,
            far_field_error: self.far_field_error,
            path: Some(path),
        }
    }
}

fn run_with_cloud(config: &FlowConfig, cloud: TracerCloud, path_source: PathSource, stream: &NoiseStream) -> Result<FlowResult> {
    config.validate()?;
    let mut path = match &path_source {
        PathSource::Generate => BrownianPath::starting_at(&PointN::origin(config.dim)),
        PathSource::Given(p) => {
            if p.dim() != config.dim {
                return invalid("path dimension differs from flow dimension");
            }
            BrownianPath::starting_at(&PointN::new(p.position(0).to_vec())?)
        }
    };
    let total = match &path_source {
        PathSource::Generate => config.steps(),
        PathSource::Given(p) => p.steps(),
    };
    let mut runner = Runner::new(config, cloud, path.position(0));
    if runner.min_distance[0] <= config.threshold() {
        return runner_done(runner, path, stream, Some(0));
    }
    let mut inc = vec![0.0; config.dim];
    let mut hit_step = None;
    for k in 1..=total {
        match &path_source {
            PathSource::Generate => {
                stream.increment_with_dt((k - 1) as u64, config.dt, &mut inc);
                path.push_increment(config.dt, &inc);
            }
            PathSource::Given(p) => {
                let prev = p.position(k - 1);
                let next = p.position(k);
                for c in 0..config.dim {
                    inc[c] = next[c] - prev[c];
                }
                // Copy exact samples rather than re-adding increments.
                path.push_sample(p.dts()[k - 1], next);
            }
        }
        match runner.step(&path, k) {
            StepOutcome::Continue => {}
            StepOutcome::Hit(j) => {
                if j < k {
                    runner.rewind_to(&path, j);
                }
                hit_step = Some(j);
                break;
            }
        }
    }
    runner_done(runner, path, stream, hit_step)
}

fn runner_done(runner: Runner, path: BrownianPath, stream: &NoiseStream, hit: Option<usize>) -> Result<FlowResult> {
    Ok(runner.finish(path, stream, hit))
}

enum PathSource {
    Generate,
    Given(BrownianPath),
}

/// Integrates the flow of `config.region` to the horizon or the first hit.
pub fn run_flow(config: &FlowConfig, stream: &NoiseStream) -> Result<FlowResult> {
    config.validate()?;
    if stream.dim != config.dim {
        return invalid("stream dimension differs from flow dimension");
    }
    let cloud = discretize_region(&config.region, config.budget)?;
    run_with_cloud(config, cloud, PathSource::Generate, stream)
}

/// Same as [`run_flow`] with an explicit initial cloud.
pub fn run_flow_with_cloud(config: &FlowConfig, cloud: TracerCloud, stream: &NoiseStream) -> Result<FlowResult> {
    if cloud.dim() != config.dim || stream.dim != config.dim {
        return invalid("cloud, stream and flow dimensions differ");
    }
    run_with_cloud(config, cloud, PathSource::Generate, stream)
}

/// Runs the flow against a stored path (its own schedule), e.g. a transformed one.
pub fn run_flow_on_path(config: &FlowConfig, cloud: TracerCloud, path: &BrownianPath) -> Result<FlowResult> {
    let stream = NoiseStream::uniform(0, 0, config.dim, config.dt);
    run_with_cloud(config, cloud, PathSource::Given(path.clone()), &stream)
}

/// Adds tracers around the closest approach at spacing `cell/factor`, replays
/// them from `t = 0` along the stored path and merges; distances only decrease.
pub fn refine_cloud(result: &FlowResult, stream: &NoiseStream, factor: u32) -> Result<FlowResult> {
    if factor < 2 {
        return invalid("refinement factor must be ≥ 2");
    }
    let path = match &result.path {
        Some(p) => p.clone(),
        None => return Err(Error::ReplayUnavailable("flow result carries no stored path".into())),
    };
    if path.steps() != result.steps() {
        return Err(Error::ReplayUnavailable("stored path does not match the distance series".into()));
    }
    let _ = stream;
    let config = &result.config;
    let kernel = Kernel::new(&config.drift, config.truncation, config.far_field);
    let (_, k_star) = result.closest_approach();
    let label = result.argmin[k_star];
    let i = result.cloud.index_of(label).ok_or_else(|| Error::Invalid("argmin label missing from cloud".into()))?;
    let mut out = result.clone();
    let base = out.cloud.cells[i];
    if base == 0.0 {
        return Ok(out);
    }
    let fine = base / factor as f64;
    let init = out.cloud.initial(i).to_vec();
    let level = out.cloud.levels[i] + 1;
    out.cloud.cells[i] = fine;
    let mut candidates = Vec::new();
    for m in 1..=factor {
        candidates.extend(boundary_neighbors(&config.region, &init, fine * m as f64));
    }
    let upto = result.steps();
    let mut earliest: Option<usize> = None;
    for child in candidates {
        let (psi, dists, skipped) = replay_tracer(&child, &path, upto, &kernel);
        out.far_field_error += skipped;
        let new_label = out.cloud.push_tracer(&child, &psi, fine, level);
        for (j, &dj) in dists.iter().enumerate() {
            if dj < out.min_distance[j] {
                out.min_distance[j] = dj;
                out.argmin[j] = new_label;
            }
        }
        if let Some(j) = dists.iter().position(|&dj| dj <= config.threshold()) {
            earliest = Some(earliest.map_or(j, |e: usize| e.min(j)));
        }
    }
    out.refinements += 1;
    if let Some(j) = earliest {
        if !out.hit || j < upto {
            for idx in 0..out.cloud.len() {
                let init = out.cloud.initial(idx).to_vec();
                let (psi, _, _) = replay_tracer(&init, &path, j, &kernel);
                let dim = out.cloud.dim;
                out.cloud.current[idx * dim..(idx + 1) * dim].copy_from_slice(&psi);
            }
            out.cloud.steps = j;
            out.cloud.time = path.times()[j];
            out.cloud.terminated = true;
            out.min_distance.truncate(j + 1);
            out.argmin.truncate(j + 1);
            out.hit = true;
            out.tau_hat = Some(path.times()[j]);
            out.path = Some(path.truncated(j));
        }
    }
    Ok(out)
}

/// `(λψ_{λ⁻²t}, λB_{λ⁻²t}, λ𝒜₀, λ²τ̂)`: the same realization seen after dilating
/// space by λ, which is a flow record for the drift `F(x/λ)`.
pub fn scale_solution(result: &FlowResult, lambda: f64) -> Result<FlowResult> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return precondition(format!("λ must be positive, got {lambda}"));
    }
    let l2 = lambda * lambda;
    let mut out = result.clone();
    out.config = result.config.scaled(lambda)?;
    out.tau_hat = result.tau_hat.map(|t| t * l2);
    out.min_distance = result.min_distance.iter().map(|d| d * lambda).collect();
    out.cloud = result.cloud.scaled(lambda);
    out.far_field_error = result.far_field_error * lambda;
    out.path = result.path.as_ref().map(|p| p.scaled(lambda));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_disc(level: f64) -> Region {
        Region::LateralDisc { level, center_perp: vec![0.0], radius: 8.0 }
    }

    #[test]
    fn discretization_examples() {
        let hs = Region::HalfSpace { dim: 1, level: 1.0 };
        let c = discretize_region(&hs, 1).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.initial(0), &[1.0]);

        let ring = Region::BallComplement { center: PointN::origin(2), radius: 1.0 };
        let c = discretize_region(&ring, 8).unwrap();
        assert_eq!(c.len(), 8);
        for i in 0..8 {
            let a = c.initial(i);
            let b = c.initial((i + 1) % 8);
            assert!((vecops::norm(a) - 1.0).abs() < 1e-15);
            let ang = vecops::dot(a, b).clamp(-1.0, 1.0).acos();
            assert!((ang - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        }

        for n in [2usize, 3, 5, 16] {
            let disc = Region::LateralDisc { level: 1.0, center_perp: vec![0.0; n - 1], radius: 3.0 };
            let c = discretize_region(&disc, 50).unwrap();
            for i in 0..c.len() {
                assert_eq!(c.initial(i)[0], 1.0);
                assert!(vecops::norm(&c.initial(i)[1..]) <= 3.0 + 1e-12);
            }
            let sphere = Region::BallComplement { center: PointN::origin(n), radius: 2.0 };
            let c = discretize_region(&sphere, 40).unwrap();
            for i in 0..c.len() {
                assert!((vecops::norm(c.initial(i)) - 2.0).abs() < 1e-12);
            }
        }
        assert!(discretize_region(&ring, 0).is_err());
    }

    #[test]
    fn cylinder_surface_points() {
        for n in [2usize, 3] {
            let mut corner = vec![0.0; n];
            corner[0] = 1.0;
            let reg = Region::Cylinder { corner: PointN::new(corner).unwrap(), delta: 0.5 };
            let c = discretize_region(&reg, 60).unwrap();
            assert_eq!(c.len(), 60);
            for i in 0..c.len() {
                let p = c.initial(i);
                let lat = vecops::norm(&p[1..]);
                let on_face = (p[0] == 1.0 || p[0] == 1.5) && lat <= 0.5 + 1e-12;
                let on_side = (lat - 0.5).abs() < 1e-12 && p[0] >= 1.0 && p[0] <= 1.5;
                assert!(on_face || on_side, "{p:?}");
            }
        }
    }

    #[test]
    fn constant_drift_matches_radial_closed_form() {
        // Generic RK4 path (table profile) against r(t) = √(d² + 2ct).
        let flat = DriftField::from_profile(crate::geometry::DriftProfile::Table {
            radii: vec![0.0, 1.0],
            values: vec![0.7, 0.7],
        })
        .unwrap();
        let k = Kernel::new(&flat, 100.0, None);
        for d in [0.05, 0.3, 2.0] {
            let mut psi = vec![d, 0.0];
            let b = [0.0, 0.0];
            let mut r = d;
            for _ in 0..1000 {
                r = k.advance_tracer(&mut psi, &b, 1e-3).0;
            }
            let exact = (d * d + 2.0 * 0.7 * 1.0).sqrt();
            assert!((r - exact).abs() / exact < 1e-3, "{r} vs {exact}");
            assert!((psi[0] - exact).abs() / exact < 1e-3);
        }
    }

    #[test]
    fn zero_drift_leaves_cloud_fixed() {
        let cfg = FlowConfig { horizon: 0.5, dt: 1e-3, ..FlowConfig::new(half_disc(1.0), DriftField::zero()) };
        let res = run_flow(&cfg, &NoiseStream::uniform(3, 0, 2, cfg.dt)).unwrap();
        let fresh = discretize_region(&cfg.region, cfg.budget).unwrap();
        for i in 0..fresh.len() {
            assert_eq!(res.cloud.current(i), fresh.initial(i));
        }
    }

    #[test]
    fn substeps_never_decrease_distance_and_respect_bound() {
        let f = DriftField::from_profile(crate::geometry::DriftProfile::Saturating { amplitude: 3.0, scale: 0.2 }).unwrap();
        let n_trunc = 50.0;
        let k = Kernel::new(&f, n_trunc, None);
        for r0 in [1e-4, 0.01, 0.02, 0.5, 3.0] {
            for h in [1e-5, 1e-3, 0.1] {
                let mut psi = vec![r0, 0.0, 0.0];
                let (r1, _) = k.advance_tracer(&mut psi, &[0.0; 3], h);
                assert!(r1 >= r0);
                assert!(r1 - r0 <= n_trunc * f.bound() * h * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn result_records_serialize() {
        let cfg = FlowConfig { horizon: 0.2, dt: 1e-3, ..FlowConfig::new(half_disc(1.0), DriftField::constant(0.3).unwrap()) };
        let res = run_flow(&cfg, &NoiseStream::uniform(3, 1, 2, cfg.dt)).unwrap();
        let rec = res.record(10);
        let text = serde_json::to_string(&rec).unwrap();
        let back: FlowRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rec);
        assert_eq!(res.hit, res.tau_hat.is_some());
    }

    #[test]
    fn config_validation() {
        let mut cfg = FlowConfig::new(half_disc(1.0), DriftField::zero());
        assert!(cfg.validate().is_ok());
        cfg.truncation = 0.5;
        assert!(cfg.validate().is_err());
        cfg.truncation = 100.0;
        cfg.budget = 0;
        assert!(cfg.validate().is_err());
    }
}
