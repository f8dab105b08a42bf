//! Distance ladders: the distance `ρ` from `B` to a flowed region is tracked
//! until it halves or doubles, the configuration is rescaled to `ρ = 1` and
//! the next stage starts. `log₂ ρ` then performs a ±1 walk.
//!
//! Two ladders are provided. The not-hitting ladder starts each stage from the
//! complement of the unit ball around `B` and measures the distance to its
//! flowed boundary sphere. The hitting ladder starts from the half-space
//! `x₁ ≥ 1` (a lateral disc of radius `m` plus the undisturbed far field) and
//! measures `sup |B¹ − x₁|` over the boundary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::flow::{boundary_neighbors, discretize_region, replay_tracer, Kernel, RefinePolicy, TracerCloud};
use crate::geometry::{vecops, DriftField, PointN, Region};
use crate::noise::{bridge_points, BrownianPath, NoiseStream};
use crate::pathcover::k_infinity;
use crate::stats::{chi_square_2x2, mean_stderr, Proportion};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LadderKind {
    NotHitting,
    Hitting,
}

/// What the next stage starts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    /// A fresh region at distance ρ from `B` (sphere or half-space).
    Literal,
    /// The flowed tracers of the previous stage, rescaled.
    Carry,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxStages,
    Horizon,
    Absorbed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    pub n: usize,
    pub drift: DriftField,
    pub rho0: f64,
    pub max_stages: usize,
    /// Step in rescaled (ρ = 1) units.
    pub dt: f64,
    pub truncation: f64,
    pub budget: usize,
    pub lateral_radius: f64,
    /// Per-stage horizon in rescaled units.
    pub stage_horizon: f64,
    pub refine: RefinePolicy,
    pub reset: ResetMode,
    /// Sub-steps used to re-simulate a step on which a threshold is crossed.
    pub substeps: usize,
}

impl LadderConfig {
    pub fn new(n: usize, drift: DriftField) -> Self {
        let budget = 64 * n;
        Self {
            n,
            drift,
            rho0: 1.0,
            max_stages: 1,
            dt: 1e-3,
            truncation: 100.0,
            budget,
            lateral_radius: 8.0,
            stage_horizon: 100.0,
            refine: RefinePolicy::Adaptive { ratio: 0.5, max_level: 8, max_tracers: 4 * budget, below: 1.0 },
            reset: ResetMode::Literal,
            substeps: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.max_stages == 0 || self.budget == 0 {
            return invalid("ladder needs n ≥ 1, max_stages ≥ 1 and budget ≥ 1");
        }
        if !(self.rho0 > 0.0) || !(self.dt > 0.0) || !(self.stage_horizon > 0.0) || !(self.truncation > 0.0) {
            return invalid("ρ₀, dt, stage horizon and N must be positive");
        }
        if !(self.lateral_radius > 0.0) {
            return invalid("lateral radius m must be positive");
        }
        if self.substeps == 0 {
            return invalid("substeps must be ≥ 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    /// Physical time at which the stage ended (`τ_i`).
    pub time: f64,
    pub rho: f64,
    pub step: i8,
    /// Stage duration in rescaled units.
    pub rescaled_time: f64,
    /// `max(0, max x₁ − 1)` at the end of a hitting stage, unit scale.
    pub d_tau: f64,
    /// `ρ̃(τ) + B¹_τ − 1` at unit scale (hitting stages).
    pub d_formula: f64,
    pub crossing_refined: bool,
    pub tracers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeLadder {
    pub kind: LadderKind,
    pub reset: ResetMode,
    pub rho0: f64,
    pub seed: u64,
    pub path_index: u64,
    pub stages: Vec<Stage>,
    pub termination: Termination,
}

impl RegimeLadder {
    pub fn steps(&self) -> Vec<i8> {
        self.stages.iter().map(|s| s.step).collect()
    }

    pub fn step_sum(&self) -> i64 {
        self.stages.iter().map(|s| s.step as i64).sum()
    }

    pub fn final_rho(&self) -> f64 {
        self.stages.last().map_or(self.rho0, |s| s.rho)
    }

    /// `ρ₀·2^{ΣX} = ρ_m` exactly.
    pub fn bookkeeping_exact(&self) -> bool {
        let mut rho = self.rho0;
        for s in &self.stages {
            let next = if s.step > 0 { rho * 2.0 } else { rho / 2.0 };
            if next != s.rho {
                return false;
            }
            rho = next;
        }
        self.rho0 * 2f64.powi(self.step_sum() as i32) == self.final_rho()
    }

    pub fn first_step(&self) -> Option<i8> {
        self.stages.first().map(|s| s.step)
    }
}

/// Left-endpoint accumulation of the drift kernels at a test point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftAccumulator {
    pub p_perp: Vec<f64>,
    pub bound: f64,
    /// Outer edges `2e^k`, `k = 1..=k_∞`; the last bin is everything beyond.
    pub edges: Vec<f64>,
    pub lateral_bins: Vec<f64>,
    pub vertical_bins: Vec<f64>,
    pub lateral: f64,
    pub vertical: f64,
    pub tau1: f64,
    pub resolved: bool,
}

struct AccumState {
    p_perp: Vec<f64>,
    bound: f64,
    edges: Vec<f64>,
    lateral: Vec<f64>,
    vertical: Vec<f64>,
}

impl AccumState {
    fn new(n: usize, p_perp: &[f64], bound: f64) -> Self {
        let kinf = k_infinity(n);
        let edges: Vec<f64> = (1..=kinf).map(|k| 2.0 * (k as f64).exp()).collect();
        Self { p_perp: p_perp.to_vec(), bound, lateral: vec![0.0; kinf + 1], vertical: vec![0.0; kinf + 1], edges }
    }

    fn add(&mut self, b_perp: &[f64], h: f64) {
        let d = vecops::dist(b_perp, &self.p_perp);
        let bin = self.edges.iter().position(|&e| d < e).unwrap_or(self.edges.len());
        let q = 0.25 + d * d;
        self.lateral[bin] += h * self.bound / q.sqrt();
        self.vertical[bin] += h * self.bound / q;
    }

    fn finish(self, tau1: f64, resolved: bool) -> DriftAccumulator {
        DriftAccumulator {
            lateral: self.lateral.iter().sum(),
            vertical: self.vertical.iter().sum(),
            p_perp: self.p_perp,
            bound: self.bound,
            edges: self.edges,
            lateral_bins: self.lateral,
            vertical_bins: self.vertical,
            tau1,
            resolved,
        }
    }
}

struct StageOutcome {
    step: Option<i8>,
    time: f64,
    b_end: Vec<f64>,
    q_end: f64,
    max_x1: f64,
    refined: bool,
}

/// Seed tag offset for per-stage substreams.
const STAGE_TAG: u64 = 0x5747;

fn stage_quantity(kind: LadderKind, min_dist: f64, lo: f64, hi: f64, b1: f64, far_level: f64) -> f64 {
    match kind {
        LadderKind::NotHitting => min_dist,
        LadderKind::Hitting => (b1 - lo).max(hi - b1).max((b1 - far_level).abs()),
    }
}

fn verdict(q: f64) -> Option<i8> {
    if q <= 0.5 {
        Some(-1)
    } else if q >= 2.0 {
        Some(1)
    } else {
        None
    }
}

struct StageSim<'a> {
    kind: LadderKind,
    cfg: &'a LadderConfig,
    stream: NoiseStream,
    kernel: Kernel<'a>,
    region: Option<Region>,
    far_level: f64,
}

impl<'a> StageSim<'a> {
    fn needs_distance(&self) -> bool {
        self.kind == LadderKind::NotHitting || (!self.kernel.is_zero() && self.region.is_some())
    }

    fn measure(&self, cloud: &TracerCloud, b: &[f64], moved: Option<(f64, f64, f64)>) -> (f64, f64) {
        let (min_dist, lo, hi) = match moved {
            Some(v) => v,
            None => {
                let (lo, hi) = cloud.vertical_extremes();
                let d = if self.kind == LadderKind::NotHitting { cloud.nearest_to(b).0 } else { f64::NAN };
                (d, lo, hi)
            }
        };
        (stage_quantity(self.kind, min_dist, lo, hi, b[0], self.far_level), hi)
    }

    fn run(&self, cloud: &mut TracerCloud, mut accum: Option<&mut AccumState>) -> Result<StageOutcome> {
        let n = self.cfg.n;
        let dt = self.cfg.dt;
        let steps = ((self.cfg.stage_horizon / dt) - 1e-9).ceil() as usize;
        let static_cloud = self.kernel.is_zero();
        let (lo0, hi0) = cloud.vertical_extremes();
        let store_path = self.region.is_some() && !static_cloud;
        let mut path = BrownianPath::starting_at(&PointN::origin(n));
        let mut b = vec![0.0; n];
        let mut b_prev = vec![0.0; n];
        let mut inc = vec![0.0; n];
        let mut prev_positions = Vec::new();
        let want_distance = self.needs_distance();
        for k in 1..=steps {
            if let Some(acc) = accum.as_deref_mut() {
                acc.add(&b[1..], dt);
            }
            self.stream.increment_with_dt((k - 1) as u64, dt, &mut inc);
            b_prev.copy_from_slice(&b);
            for (x, d) in b.iter_mut().zip(&inc) {
                *x += d;
            }
            if store_path {
                path.push_increment(dt, &inc);
            }
            let (q, hi) = if static_cloud && self.kind == LadderKind::Hitting {
                (stage_quantity(self.kind, f64::NAN, lo0, hi0, b[0], self.far_level), hi0)
            } else {
                prev_positions.clear();
                prev_positions.extend_from_slice(cloud.positions());
                let s = cloud.advance_all(&b, dt, &self.kernel, want_distance);
                let mut q = stage_quantity(self.kind, s.min_distance, s.min_x1, s.max_x1, b[0], self.far_level);
                let mut hi = s.max_x1;
                if verdict(q).is_none()
                    && want_distance
                    && self.refine_forward(cloud, &mut prev_positions, &path, k, s.argmin, s.min_distance)
                {
                    let measured = self.measure(cloud, &b, None);
                    q = measured.0;
                    hi = measured.1;
                }
                (q, hi)
            };
            if let Some(step) = verdict(q) {
                let t_prev = (k - 1) as f64 * dt;
                let resolved = self.resolve_crossing(cloud, &prev_positions, &b_prev, &b, k, static_cloud, (lo0, hi0));
                let refined = resolved.is_some();
                let pieces = self.cfg.substeps;
                let (step, q_end, hi_end, used) = resolved.unwrap_or((step, q, hi, pieces));
                return Ok(StageOutcome {
                    step: Some(step),
                    time: t_prev + dt * used as f64 / pieces as f64,
                    b_end: b,
                    q_end,
                    max_x1: hi_end,
                    refined,
                });
            }
        }
        let (q, hi) = self.measure(cloud, &b, if static_cloud { Some((f64::NAN, lo0, hi0)) } else { None });
        Ok(StageOutcome { step: None, time: steps as f64 * dt, b_end: b, q_end: q, max_x1: hi, refined: false })
    }

    /// Re-simulates step `k` on `substeps` bridge sub-steps and returns the
    /// first threshold crossed, with the quantity and top level at that moment.
    #[allow(clippy::too_many_arguments)]
    fn resolve_crossing(
        &self,
        cloud: &mut TracerCloud,
        prev_positions: &[f64],
        b_prev: &[f64],
        b_next: &[f64],
        k: usize,
        static_cloud: bool,
        extremes: (f64, f64),
    ) -> Option<(i8, f64, f64, usize)> {
        let pieces = self.cfg.substeps;
        if pieces < 2 {
            return None;
        }
        let n = self.cfg.n;
        let mut pts = bridge_points(&self.stream, (k - 1) as u64, b_prev, b_next, self.cfg.dt, pieces);
        pts.extend_from_slice(b_next);
        let h = self.cfg.dt / pieces as f64;
        let moving = !(static_cloud && self.kind == LadderKind::Hitting);
        let saved = cloud.positions().to_vec();
        if moving {
            cloud.set_positions(prev_positions);
        }
        let time = cloud.time;
        let steps = cloud.steps;
        for j in 0..pieces {
            let bj = &pts[j * n..(j + 1) * n];
            let (q, hi) = if moving {
                let s = cloud.advance_all(bj, h, &self.kernel, self.kind == LadderKind::NotHitting);
                (stage_quantity(self.kind, s.min_distance, s.min_x1, s.max_x1, bj[0], self.far_level), s.max_x1)
            } else {
                (stage_quantity(self.kind, f64::NAN, extremes.0, extremes.1, bj[0], self.far_level), extremes.1)
            };
            if let Some(step) = verdict(q) {
                cloud.time = time;
                cloud.steps = steps;
                return Some((step, q, hi, j + 1));
            }
        }
        // The sub-stepped trajectory never crossed; keep the coarse state.
        if moving {
            cloud.set_positions(&saved);
        }
        cloud.time = time;
        cloud.steps = steps;
        None
    }

    /// Adds tangent children around the closest tracer when spacing is coarse
    /// compared to its distance. Children are replayed over the stage so far;
    /// only their current positions enter later measurements. Each child's
    /// state before step `k` is appended to `prev` for crossing resolution.
    fn refine_forward(
        &self,
        cloud: &mut TracerCloud,
        prev: &mut Vec<f64>,
        path: &BrownianPath,
        k: usize,
        argmin: usize,
        d: f64,
    ) -> bool {
        let (region, RefinePolicy::Adaptive { ratio, max_level, max_tracers, below }) = (&self.region, self.cfg.refine)
        else {
            return false;
        };
        let Some(region) = region else { return false };
        if !(d < below) || path.steps() < k {
            return false;
        }
        let mut changed = false;
        let mut i = argmin;
        for _ in 0..max_level {
            if cloud.level(i) >= max_level || cloud.cell(i) == 0.0 {
                break;
            }
            let x = cloud.current(i).to_vec();
            let spacing = (0..cloud.len())
                .filter(|&j| j != i)
                .map(|j| vecops::dist(cloud.current(j), &x))
                .fold(f64::INFINITY, f64::min);
            let d_i = vecops::dist(&x, path.position(k));
            if spacing <= ratio * d_i {
                break;
            }
            let fanout = 2 * (self.cfg.n - 1);
            if cloud.len() + fanout > max_tracers {
                break;
            }
            let cell = cloud.cell(i) * 0.5;
            let level = cloud.level(i) + 1;
            cloud.set_cell(i, cell, level);
            let init = cloud.initial(i).to_vec();
            for child in boundary_neighbors(region, &init, cell) {
                if cloud.has_initial_near(&child, 1e-9 * cell) {
                    continue;
                }
                let (mut psi, _, _) = replay_tracer(&child, path, k - 1, &self.kernel);
                prev.extend_from_slice(&psi);
                self.kernel.advance_tracer(&mut psi, path.position(k), path.dts()[k - 1]);
                cloud.push_tracer(&child, &psi, cell, level);
                changed = true;
            }
            i = cloud.nearest_to(path.position(k)).1;
        }
        changed
    }
}

fn stage_cloud(kind: LadderKind, cfg: &LadderConfig) -> Result<(TracerCloud, Region)> {
    let n = cfg.n;
    match kind {
        LadderKind::NotHitting => {
            let region = Region::BallComplement { center: PointN::origin(n), radius: 1.0 };
            Ok((discretize_region(&region, cfg.budget)?, region))
        }
        LadderKind::Hitting => {
            let region = Region::LateralDisc { level: 1.0, center_perp: vec![0.0; n - 1], radius: cfg.lateral_radius };
            if n == 1 {
                return Ok((discretize_region(&region, 1)?, region));
            }
            // The tracer straight above B is always present.
            let disc = discretize_region(&region, cfg.budget.saturating_sub(1).max(1))?;
            let mut pts = vec![PointN::on_axis(n, 1.0).into_vec()];
            pts.extend((0..disc.len()).map(|i| disc.initial(i).to_vec()));
            Ok((TracerCloud::from_points(n, &pts, disc.cell(0))?, region))
        }
    }
}

fn run_ladder_inner(
    kind: LadderKind,
    cfg: &LadderConfig,
    stream: &NoiseStream,
    mut accum: Option<&mut AccumState>,
) -> Result<RegimeLadder> {
    cfg.validate()?;
    if stream.dim != cfg.n {
        return invalid("stream dimension differs from ladder dimension");
    }
    let mut stages = Vec::new();
    let mut rho = cfg.rho0;
    let mut time = 0.0;
    let mut carried: Option<(TracerCloud, f64)> = None;
    let mut termination = Termination::MaxStages;
    for i in 0..cfg.max_stages {
        let (mut cloud, far_level, region) = match (cfg.reset, carried.take()) {
            (ResetMode::Carry, Some((cloud, level))) => (cloud, level, None),
            _ => {
                let (cloud, region) = stage_cloud(kind, cfg)?;
                (cloud, 1.0, Some(region))
            }
        };
        let drift = cfg.drift.scaled(1.0 / rho)?;
        let sim = StageSim {
            kind,
            cfg,
            stream: stream.with_dim(cfg.n).substream(STAGE_TAG + i as u64),
            kernel: Kernel::new(&drift, cfg.truncation * rho, None),
            region: region.filter(|_| matches!(cfg.refine, RefinePolicy::Adaptive { .. })),
            far_level,
        };
        let out = sim.run(&mut cloud, if i == 0 { accum.as_deref_mut() } else { None })?;
        let Some(step) = out.step else {
            termination = Termination::Horizon;
            break;
        };
        let factor = if step > 0 { 2.0 } else { 0.5 };
        time += rho * rho * out.time;
        rho *= factor;
        let (d_tau, d_formula) = match kind {
            LadderKind::Hitting => ((out.max_x1 - 1.0).max(0.0), out.q_end + out.b_end[0] - 1.0),
            LadderKind::NotHitting => (0.0, 0.0),
        };
        stages.push(Stage {
            time,
            rho,
            step,
            rescaled_time: out.time,
            d_tau,
            d_formula,
            crossing_refined: out.refined,
            tracers: cloud.len(),
        });
        if rho <= 1.0 / cfg.truncation {
            termination = Termination::Absorbed;
            break;
        }
        if cfg.reset == ResetMode::Carry {
            cloud.recenter(&out.b_end, factor);
            carried = Some((cloud, (far_level - out.b_end[0]) / factor));
        }
    }
    Ok(RegimeLadder { kind, reset: cfg.reset, rho0: cfg.rho0, seed: stream.seed, path_index: stream.path_index, stages, termination })
}

pub fn not_hitting_ladder(cfg: &LadderConfig, stream: &NoiseStream) -> Result<RegimeLadder> {
    run_ladder_inner(LadderKind::NotHitting, cfg, stream, None)
}

pub fn hitting_ladder(cfg: &LadderConfig, stream: &NoiseStream) -> Result<RegimeLadder> {
    run_ladder_inner(LadderKind::Hitting, cfg, stream, None)
}

pub fn run_ladder(kind: LadderKind, cfg: &LadderConfig, stream: &NoiseStream) -> Result<RegimeLadder> {
    run_ladder_inner(kind, cfg, stream, None)
}

/// Independent ladders on paths `0..paths` of `seed`, in path order.
pub fn ladder_ensemble(kind: LadderKind, cfg: &LadderConfig, paths: usize, seed: u64) -> Result<Vec<RegimeLadder>> {
    (0..paths)
        .into_par_iter()
        .map(|p| run_ladder(kind, cfg, &NoiseStream::uniform(seed, p as u64, cfg.n, cfg.dt)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepEstimate {
    pub up: Proportion,
    pub resolved: usize,
    pub unresolved: usize,
    /// Reference levels `1/3, 1/2, 2/3` contained in the interval.
    pub consistent_with: Vec<String>,
    pub verdict: String,
}

/// Minimum number of resolved first stages for a step estimate.
pub const MIN_RESOLVED: usize = 30;

/// `p̂ = P(X₁ = +1)` with a Wilson interval.
pub fn step_probability(ladders: &[RegimeLadder]) -> Result<StepEstimate> {
    let firsts: Vec<i8> = ladders.iter().filter_map(|l| l.first_step()).collect();
    if firsts.len() < MIN_RESOLVED {
        return Err(Error::InsufficientData(format!(
            "{} resolved first stages, need at least {MIN_RESOLVED}",
            firsts.len()
        )));
    }
    let ups = firsts.iter().filter(|&&x| x > 0).count() as u64;
    let up = Proportion::wilson(ups, firsts.len() as u64)?;
    let refs = [("1/3", 1.0 / 3.0), ("1/2", 0.5), ("2/3", 2.0 / 3.0)];
    let consistent_with: Vec<String> = refs.iter().filter(|(_, p)| up.contains(*p)).map(|(s, _)| s.to_string()).collect();
    let verdict = if up.upper < 0.5 {
        "downward drift: walk on log ρ biased toward 0".to_string()
    } else if up.lower > 0.5 {
        "upward drift: walk on log ρ biased toward ∞".to_string()
    } else {
        "undetermined: interval contains 1/2".to_string()
    };
    Ok(StepEstimate { up, resolved: firsts.len(), unresolved: ladders.len() - firsts.len(), consistent_with, verdict })
}

/// Mean of the per-ladder average step, with its standard error.
pub fn mean_step(ladders: &[RegimeLadder]) -> (f64, f64) {
    let per: Vec<f64> = ladders
        .iter()
        .filter(|l| !l.stages.is_empty())
        .map(|l| l.step_sum() as f64 / l.stages.len() as f64)
        .collect();
    mean_stderr(&per)
}

/// χ² p-value for independence of `X₂` from `X₁` over ladders with two stages.
pub fn restart_independence(ladders: &[RegimeLadder]) -> Result<f64> {
    let mut table = [[0u64; 2]; 2];
    for l in ladders {
        if l.stages.len() >= 2 {
            let a = usize::from(l.stages[0].step > 0);
            let b = usize::from(l.stages[1].step > 0);
            table[a][b] += 1;
        }
    }
    chi_square_2x2(table)
}

/// `P̂(D_{τ₁} < 1/4 − 2δ)` over ladders with a resolved first hitting stage.
pub fn d_bound_check(ladders: &[RegimeLadder], delta: f64) -> Result<Proportion> {
    if !(delta > 0.0 && delta <= 0.125) {
        return invalid(format!("δ must lie in (0, 1/8], got {delta}"));
    }
    let threshold = 0.25 - 2.0 * delta;
    let ds: Vec<f64> = ladders
        .iter()
        .filter(|l| l.kind == LadderKind::Hitting)
        .filter_map(|l| l.stages.first().map(|s| s.d_tau))
        .collect();
    let ok = ds.iter().filter(|&&d| d < threshold).count() as u64;
    Proportion::wilson(ok, ds.len() as u64)
}

/// Empirical `P(τ₁ > t)` (rescaled first-stage time) for each `t`.
pub fn first_stage_survival(ladders: &[RegimeLadder], ts: &[f64]) -> Result<Vec<Proportion>> {
    let times: Vec<f64> = ladders
        .iter()
        .map(|l| l.stages.first().map_or(f64::INFINITY, |s| s.rescaled_time))
        .collect();
    ts.iter()
        .map(|&t| Proportion::wilson(times.iter().filter(|&&x| x > t).count() as u64, times.len() as u64))
        .collect()
}

/// Drift kernels accumulated at the test point `(·, p⊥)` along the first
/// hitting-ladder stage, binned by the annulus of `‖B⊥ − p⊥‖`.
pub fn drift_accumulators(cfg: &LadderConfig, stream: &NoiseStream, p_perp: &[f64]) -> Result<DriftAccumulator> {
    if p_perp.len() + 1 != cfg.n {
        return invalid("test point must have n − 1 lateral coordinates");
    }
    let one = LadderConfig { max_stages: 1, ..cfg.clone() };
    let mut acc = AccumState::new(cfg.n, p_perp, cfg.drift.bound());
    let ladder = run_ladder_inner(LadderKind::Hitting, &one, stream, Some(&mut acc))?;
    let (tau1, resolved) = match ladder.stages.first() {
        Some(s) => (s.rescaled_time, true),
        None => (cfg.stage_horizon, false),
    };
    Ok(acc.finish(tau1, resolved))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, f: f64) -> LadderConfig {
        LadderConfig { budget: 16 * n, max_stages: 5, ..LadderConfig::new(n, DriftField::constant(f).unwrap()) }
    }

    #[test]
    fn zero_drift_hitting_ladder_is_level_crossing() {
        // With F ≡ 0 the first stage ends when B¹ reaches 1/2 or −1; X₁ = +1 iff −1 first.
        let c = LadderConfig { max_stages: 1, substeps: 1, ..cfg(2, 0.0) };
        for p in 0..40 {
            let stream = NoiseStream::uniform(3, p, 2, c.dt);
            let l = hitting_ladder(&c, &stream).unwrap();
            let s = stream.substream(STAGE_TAG);
            let mut b = 0.0;
            let mut inc = [0.0; 2];
            let mut k = 0u64;
            let expect = loop {
                s.increment_with_dt(k, c.dt, &mut inc);
                b += inc[0];
                k += 1;
                if (1.0 - b).abs() <= 0.5 {
                    break -1;
                }
                if (1.0 - b).abs() >= 2.0 {
                    break 1;
                }
            };
            assert_eq!(l.first_step(), Some(expect));
            assert_eq!(l.stages[0].d_tau, 0.0);
            assert!(l.stages[0].d_formula.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_drift_not_hitting_ladder_always_halves() {
        // The sphere is static and B starts at its center, so ρ = 1 − |B| ≤ 1
        // never doubles. The Δt/10 reference run must agree.
        let coarse = LadderConfig { max_stages: 1, ..cfg(2, 0.0) };
        let fine = LadderConfig { dt: coarse.dt / 10.0, ..coarse.clone() };
        for c in [&coarse, &fine] {
            let ladders = ladder_ensemble(LadderKind::NotHitting, c, 200, 17).unwrap();
            let est = step_probability(&ladders).unwrap();
            assert_eq!(est.up.successes, 0);
            assert_eq!(est.resolved, 200);
        }
    }

    #[test]
    fn strong_drift_pushes_sphere_outward() {
        let c = LadderConfig { budget: 32, ..cfg(2, 1000.0) };
        let mut ups = 0;
        for p in 0..20 {
            let l = not_hitting_ladder(&c, &NoiseStream::uniform(5, p, 2, c.dt)).unwrap();
            assert!(l.bookkeeping_exact());
            if l.steps().iter().take(5).all(|&x| x == 1) {
                ups += 1;
            }
            if l.steps().iter().all(|&x| x == 1) && l.stages.len() == 5 {
                assert_eq!(l.final_rho(), 32.0 * l.rho0);
            }
        }
        assert!(ups >= 19);
    }

    #[test]
    fn bookkeeping_and_estimates() {
        let ls = ladder_ensemble(LadderKind::Hitting, &LadderConfig { max_stages: 10, ..cfg(2, 0.0) }, 40, 11).unwrap();
        for l in &ls {
            assert!(l.bookkeeping_exact());
            assert!(l.stages.windows(2).all(|w| w[0].time <= w[1].time));
        }
        let est = step_probability(&ls).unwrap();
        assert_eq!(est.resolved, 40);
        assert!(step_probability(&ls[..10]).is_err());
        let d = d_bound_check(&ls, 0.05).unwrap();
        assert_eq!(d.estimate, 1.0);
        let edge = d_bound_check(&ls, 0.125).unwrap();
        assert_eq!(edge.estimate, 0.0);
    }

    #[test]
    fn accumulators_are_exact_sums_and_vanish_without_drift() {
        let zero = drift_accumulators(&cfg(4, 0.0), &NoiseStream::uniform(1, 0, 4, 1e-3), &[0.0; 3]).unwrap();
        assert_eq!((zero.lateral, zero.vertical), (0.0, 0.0));
        let c = LadderConfig { budget: 32, ..cfg(4, 0.5) };
        let acc = drift_accumulators(&c, &NoiseStream::uniform(1, 1, 4, 1e-3), &[0.0; 3]).unwrap();
        assert_eq!(acc.lateral, acc.lateral_bins.iter().sum::<f64>());
        assert_eq!(acc.vertical, acc.vertical_bins.iter().sum::<f64>());
        assert!(acc.lateral_bins.iter().chain(&acc.vertical_bins).all(|&v| v >= 0.0));
        assert!(acc.vertical <= 4.0 * 0.5 * acc.tau1 + 1e-9);
        // Far test point: kernels bounded by ‖F‖∞/(2e^{k∞}) per unit time.
        let far = drift_accumulators(&c, &NoiseStream::uniform(1, 1, 4, 1e-3), &[500.0, 0.0, 0.0]).unwrap();
        assert!(far.lateral < 0.5 * far.tau1 / 2.0);
    }

    #[test]
    fn carry_mode_runs() {
        let c = LadderConfig { reset: ResetMode::Carry, budget: 24, ..cfg(2, 2.0) };
        let l = not_hitting_ladder(&c, &NoiseStream::uniform(2, 0, 2, c.dt)).unwrap();
        assert!(l.bookkeeping_exact());
        let h = hitting_ladder(&c, &NoiseStream::uniform(2, 0, 2, c.dt)).unwrap();
        assert!(h.bookkeeping_exact());
    }
}
