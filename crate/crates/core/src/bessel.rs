//! Bessel processes of real dimension, their scale functions, and the
//! three-process comparison chain behind the ball exit-time estimate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, precondition, Result};
use crate::noise::{domain, first_exit_time, ExitMonitor, NoiseStream};
use crate::stats::{quantile, Proportion};

/// Deterministic drift may move at most this fraction of `D²/|ν−1|` per sub-step.
pub const STEP_CONTROL: f64 = 0.1;
/// Maximum number of bridge halvings of one outer step.
pub const MAX_SPLIT_DEPTH: u32 = 30;
/// Default absorption level standing in for 0.
pub const DEFAULT_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesselSpec {
    /// Real dimension ν ≥ 0.
    pub dimension: f64,
    pub start: f64,
    pub horizon: f64,
    pub dt: f64,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_floor() -> f64 {
    DEFAULT_FLOOR
}

impl BesselSpec {
    pub fn validate(&self) -> Result<()> {
        let fin = [self.dimension, self.start, self.horizon, self.dt, self.floor];
        if fin.iter().any(|v| !v.is_finite()) {
            return invalid("bessel spec values must be finite");
        }
        if self.dimension < 0.0 {
            return invalid(format!("dimension ν = {} must be ≥ 0", self.dimension));
        }
        if !(self.floor >= 0.0 && self.start > self.floor) {
            return invalid(format!("need start {} > floor {} ≥ 0", self.start, self.floor));
        }
        if !(self.horizon > 0.0 && self.dt > 0.0) {
            return invalid("horizon and dt must be positive");
        }
        Ok(())
    }
}

/// Stored Bessel trajectory on the outer grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BesselRun {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub absorbed: bool,
    pub absorption_time: Option<f64>,
    /// Number of bridge halvings performed.
    pub splits: u64,
}

/// Summary of a Bessel path without its trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BesselOutcome {
    pub absorbed: bool,
    pub absorption_time: Option<f64>,
    pub final_value: f64,
    pub min_value: f64,
}

enum Sub {
    Alive(f64),
    Absorbed(f64),
}

struct BesselStepper<'a> {
    drift_coef: f64,
    floor: f64,
    stream: &'a NoiseStream,
    splits: u64,
}

impl BesselStepper<'_> {
    /// Advances `d` over `[t, t+h]` with Brownian increment `dw`, halving via the
    /// Brownian bridge when the step is too coarse for the singular drift or
    /// lands at or below the floor.
    #[allow(clippy::too_many_arguments)]
    fn advance(&mut self, d: f64, t: f64, h: f64, dw: f64, step: u64, node: u64, depth: u32) -> Sub {
        let c = self.drift_coef;
        let candidate = d + c / (2.0 * d) * h + dw;
        let coarse = c != 0.0 && h > STEP_CONTROL * d * d / c.abs();
        let below = candidate <= self.floor;
        if (coarse || below) && depth < MAX_SPLIT_DEPTH {
            self.splits += 1;
            let z = self.stream.aux_normal(domain::BESSEL_BRIDGE, step, node);
            let first = 0.5 * dw + (0.25 * h).sqrt() * z;
            let half = 0.5 * h;
            return match self.advance(d, t, half, first, step, 2 * node, depth + 1) {
                Sub::Absorbed(ta) => Sub::Absorbed(ta),
                Sub::Alive(mid) => self.advance(mid, t + half, half, dw - first, step, 2 * node + 1, depth + 1),
            };
        }
        if !below {
            return Sub::Alive(candidate);
        }
        // Out of halvings: for ν > 1 the drift-implicit step keeps D positive.
        if c > 0.0 {
            let implicit = implicit_step(d + dw, c, h);
            if implicit > self.floor {
                return Sub::Alive(implicit);
            }
        }
        Sub::Absorbed(t + h)
    }
}

/// Positive root of `x = y + c·h/(2x)`, the drift-implicit Euler step.
#[inline]
fn implicit_step(y: f64, c: f64, h: f64) -> f64 {
    0.5 * (y + (y * y + 2.0 * c * h).sqrt())
}

fn integrate_bessel(spec: &BesselSpec, stream: &NoiseStream, mut observe: impl FnMut(f64, f64)) -> (BesselOutcome, u64) {
    let s1 = stream.with_dim(1);
    let mut stepper = BesselStepper { drift_coef: spec.dimension - 1.0, floor: spec.floor, stream: &s1, splits: 0 };
    let steps = (spec.horizon / spec.dt).ceil() as u64;
    let mut d = spec.start;
    let mut min_value = d;
    let mut t = 0.0;
    observe(t, d);
    let mut buf = [0.0];
    for k in 0..steps {
        let h = spec.dt.min(spec.horizon - t);
        if h <= 0.0 {
            break;
        }
        s1.increment_with_dt(k, h, &mut buf);
        match stepper.advance(d, t, h, buf[0], k, 1, 0) {
            Sub::Absorbed(ta) => {
                observe(ta, spec.floor);
                let outcome = BesselOutcome {
                    absorbed: true,
                    absorption_time: Some(ta),
                    final_value: spec.floor,
                    min_value: spec.floor,
                };
                return (outcome, stepper.splits);
            }
            Sub::Alive(next) => d = next,
        }
        t = if k + 1 == steps { spec.horizon } else { t + h };
        min_value = min_value.min(d);
        observe(t, d);
    }
    let outcome = BesselOutcome { absorbed: false, absorption_time: None, final_value: d, min_value };
    (outcome, stepper.splits)
}

/// Euler path of `dD = (ν−1)/(2D) dt + dW̃`, absorbed at the floor.
pub fn simulate_bessel(spec: &BesselSpec, stream: &NoiseStream) -> Result<BesselRun> {
    spec.validate()?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let (out, splits) = integrate_bessel(spec, stream, |t, d| {
        times.push(t);
        values.push(d);
    });
    Ok(BesselRun { times, values, absorbed: out.absorbed, absorption_time: out.absorption_time, splits })
}

/// Same integrator as [`simulate_bessel`] without storing the trajectory.
pub fn bessel_outcome(spec: &BesselSpec, stream: &NoiseStream) -> Result<BesselOutcome> {
    spec.validate()?;
    Ok(integrate_bessel(spec, stream, |_, _| {}).0)
}

/// Fraction of `paths` Bessel paths absorbed before the horizon.
pub fn absorption_frequency(spec: &BesselSpec, paths: u64, seed: u64) -> Result<Proportion> {
    spec.validate()?;
    let hits = (0..paths)
        .into_par_iter()
        .filter(|&i| {
            let s = NoiseStream::uniform(seed, i, 1, spec.dt);
            integrate_bessel(spec, &s, |_, _| {}).0.absorbed
        })
        .count() as u64;
    Proportion::wilson(hits, paths)
}

/// `P(hit a before b | start x)` from the scale function `s(r) = r^{2−ν}` (log at ν = 2).
pub fn scale_hit_probability(nu: f64, x: f64, a: f64, b: f64) -> Result<f64> {
    if ![nu, x, a, b].iter().all(|v| v.is_finite()) {
        return invalid("scale_hit_probability arguments must be finite");
    }
    if !(a > 0.0 && a < b && a <= x && x <= b) {
        return precondition(format!("need 0 < a ≤ x ≤ b with a < b, got a={a}, x={x}, b={b}"));
    }
    if x == a {
        return Ok(1.0);
    }
    if x == b {
        return Ok(0.0);
    }
    // (r^κ − 1)/κ is an affine image of r^κ and tends to ln r as κ → 0.
    let kappa = 2.0 - nu;
    let s = |r: f64| if kappa == 0.0 { r.ln() } else { (kappa * r.ln()).exp_m1() / kappa };
    let (sa, sx, sb) = (s(a), s(x), s(b));
    Ok(((sx - sb) / (sa - sb)).clamp(0.0, 1.0))
}

/// Probability that `D^(3)` (drift `2(n−1)`) started at `x` leaves `[1/4, 1/2]` at 1/4.
///
/// The harmonic function of `2(n−1)f' + f''/2` is `e^{−4(n−1)x}`, so
/// `h(x) = (e^{−4(n−1)x} − e^{−2(n−1)}) / (e^{−(n−1)} − e^{−2(n−1)})`.
pub fn harmonic_exit_prob(x: f64, n: u32) -> Result<f64> {
    if n == 0 {
        return invalid("dimension n must be ≥ 1");
    }
    if !(0.25..=0.5).contains(&x) {
        return precondition(format!("x = {x} outside [1/4, 1/2]"));
    }
    let c = f64::from(n - 1);
    if c == 0.0 {
        return Ok((0.5 - x) * 4.0);
    }
    let top = (-4.0 * c * (x - 0.25)).exp_m1() - (-c).exp_m1();
    Ok(top / -(-c).exp_m1())
}

/// Monte Carlo `P(σ > x)` for the exit time σ of n-dimensional BM from radius 1/2.
pub fn exit_time_tail(n: usize, trials: u64, x: f64, dt: f64, seed: u64) -> Result<Proportion> {
    if n == 0 || trials == 0 {
        return invalid("exit_time_tail needs n ≥ 1 and trials ≥ 1");
    }
    if !(x >= 0.0 && x.is_finite()) || !(dt > 0.0) {
        return precondition("exit_time_tail needs x ≥ 0 and dt > 0");
    }
    if x == 0.0 {
        return Proportion::wilson(trials, trials);
    }
    let survivors = (0..trials)
        .into_par_iter()
        .filter(|&i| {
            let s = NoiseStream::uniform(seed, i, n, dt);
            first_exit_time(&s, 0.5, x, ExitMonitor::Bridge).is_none()
        })
        .count() as u64;
    Proportion::wilson(survivors, trials)
}

/// Empirical ball-exit constant: the largest `C₁` with `P(σ > C₁/n) > 2/3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct C1Estimate {
    pub n: usize,
    pub c1: f64,
    pub trials: u64,
    pub mean_exit: f64,
}

pub fn estimate_c1(n: usize, trials: u64, dt: f64, seed: u64) -> Result<C1Estimate> {
    if n == 0 || trials < 3 {
        return invalid("estimate_c1 needs n ≥ 1 and at least 3 trials");
    }
    let cap = 100.0 * 0.25 / n as f64;
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let s = NoiseStream::uniform(seed, i, n, dt);
            first_exit_time(&s, 0.5, cap, ExitMonitor::Bridge).unwrap_or(cap)
        })
        .collect();
    let q = quantile(&samples, 1.0 / 3.0)?;
    let mean_exit = samples.iter().sum::<f64>() / samples.len() as f64;
    Ok(C1Estimate { n, c1: n as f64 * q, trials, mean_exit })
}

/// One path of the comparison chain. Times `σ₁…σ₅` are measured from the
/// restart at `σ₀`; `sigma = σ₀ + σ₁` is the exit time of the original motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub path_index: u64,
    pub sigma0: f64,
    pub sigma: Option<f64>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    pub sigma3: Option<f64>,
    pub sigma4: Option<f64>,
    pub sigma5: Option<f64>,
    /// Whether `D^(3)` left `[1/4, 1/2]` through 1/4.
    pub d3_exit_low: Option<bool>,
    /// `D^(1) ≤ D^(2) + slack` held at every common sub-step.
    pub dominance_ok: bool,
    pub max_violation: f64,
    pub splits: u64,
}

/// Ensemble of chain records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonChain {
    pub n: u32,
    pub dt: f64,
    pub records: Vec<ChainRecord>,
}

#[derive(Clone, Copy)]
struct ChainState {
    x: [f64; 3],
    active: [bool; 3],
    sigma: [Option<f64>; 5],
    d3_low: Option<bool>,
    violation: f64,
    splits: u64,
}

struct ChainStepper<'a> {
    c: f64,
    stream: &'a NoiseStream,
}

impl ChainStepper<'_> {
    fn drift(&self, which: usize, x: f64) -> f64 {
        match which {
            0 => self.c / (2.0 * x),
            1 if x < 0.25 => self.c / (2.0 * x),
            _ => 2.0 * self.c,
        }
    }

    fn singular(&self, which: usize, x: f64) -> bool {
        which == 0 || (which == 1 && x < 0.25)
    }

    #[allow(clippy::too_many_arguments)]
    fn advance(&self, st: &mut ChainState, t: f64, h: f64, dw: f64, step: u64, node: u64, depth: u32) {
        let mut split = false;
        for w in 0..3 {
            if !st.active[w] {
                continue;
            }
            let x = st.x[w];
            let cand = x + self.drift(w, x) * h + dw;
            if self.singular(w, x) && (h > STEP_CONTROL * x * x / self.c || cand <= 0.0) {
                split = true;
            }
        }
        if split && depth < MAX_SPLIT_DEPTH {
            st.splits += 1;
            let z = self.stream.aux_normal(domain::BESSEL_BRIDGE, step, node);
            let first = 0.5 * dw + (0.25 * h).sqrt() * z;
            let half = 0.5 * h;
            self.advance(st, t, half, first, step, 2 * node, depth + 1);
            self.advance(st, t + half, half, dw - first, step, 2 * node + 1, depth + 1);
            return;
        }
        let prev = st.x;
        let mut a = [0.0; 3];
        for w in 0..3 {
            if st.active[w] {
                a[w] = self.drift(w, prev[w]);
                st.x[w] = prev[w] + a[w] * h + dw;
                if st.x[w] <= 0.0 && self.singular(w, prev[w]) {
                    st.x[w] = implicit_step(prev[w] + dw, self.c, h);
                }
            }
        }
        let te = t + h;
        if st.active[0] && st.active[1] {
            let slack = h * a[0].max(a[1]) + 1e-12;
            st.violation = st.violation.max(st.x[0] - st.x[1] - slack);
        }
        if st.active[0] && st.x[0] >= 0.5 {
            st.active[0] = false;
            st.sigma[0] = Some(te);
        }
        if st.active[1] {
            if st.sigma[2].is_none() && (st.x[1] <= 0.25 || st.x[1] >= 0.5) {
                st.sigma[2] = Some(te);
            }
            if st.x[1] >= 0.5 {
                st.active[1] = false;
                st.sigma[1] = Some(te);
            }
        }
        if st.active[2] {
            if st.sigma[3].is_none() && (st.x[2] <= 0.25 || st.x[2] >= 0.5) {
                st.sigma[3] = Some(te);
                st.d3_low = Some(st.x[2] <= 0.25);
            }
            if st.x[2] >= 0.5 {
                st.active[2] = false;
                st.sigma[4] = Some(te);
            }
        }
    }
}

/// Simulates `σ₀` with the full n-dimensional motion, then `D^(1)`, `D^(2)`,
/// `D^(3)` from 3/8 under one shared one-dimensional noise.
pub fn run_comparison_chain(n: u32, stream: &NoiseStream, horizon: f64) -> Result<ChainRecord> {
    if n < 2 {
        return precondition(format!("comparison chain needs n ≥ 2, got {n}"));
    }
    let dt = stream.schedule.dt(0);
    if !(dt > 0.0) {
        return invalid("comparison chain needs a positive step");
    }
    let full = stream.with_dim(n as usize);
    let sigma0 = first_exit_time(&full, 0.375, horizon, ExitMonitor::Discrete);
    let Some(sigma0) = sigma0 else {
        return Ok(ChainRecord {
            path_index: stream.path_index,
            sigma0: horizon,
            sigma: None,
            sigma1: None,
            sigma2: None,
            sigma3: None,
            sigma4: None,
            sigma5: None,
            d3_exit_low: None,
            dominance_ok: true,
            max_violation: 0.0,
            splits: 0,
        });
    };
    let shared = stream.substream(1).with_dim(1);
    let stepper = ChainStepper { c: f64::from(n - 1), stream: &shared };
    let mut st = ChainState {
        x: [0.375; 3],
        active: [true; 3],
        sigma: [None; 5],
        d3_low: None,
        violation: f64::NEG_INFINITY,
        splits: 0,
    };
    let mut t = 0.0;
    let mut k = 0u64;
    let mut buf = [0.0];
    while st.active.iter().any(|&a| a) && t < horizon {
        shared.increment_with_dt(k, dt, &mut buf);
        stepper.advance(&mut st, t, dt, buf[0], k, 1, 0);
        t += dt;
        k += 1;
    }
    let max_violation = st.violation.max(0.0);
    Ok(ChainRecord {
        path_index: stream.path_index,
        sigma0,
        sigma: st.sigma[0].map(|s| s + sigma0),
        sigma1: st.sigma[0],
        sigma2: st.sigma[1],
        sigma3: st.sigma[2],
        sigma4: st.sigma[3],
        sigma5: st.sigma[4],
        d3_exit_low: st.d3_low,
        dominance_ok: st.violation <= 0.0,
        max_violation,
        splits: st.splits,
    })
}

/// Runs the chain on paths `0..paths`.
pub fn comparison_ensemble(n: u32, paths: u64, dt: f64, seed: u64, horizon: f64) -> Result<ComparisonChain> {
    let records = (0..paths)
        .into_par_iter()
        .map(|i| run_comparison_chain(n, &NoiseStream::uniform(seed, i, n as usize, dt), horizon))
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonChain { n, dt, records })
}

impl ComparisonChain {
    /// Frequency of `D^(3)` leaving through 1/4, over paths where it left.
    pub fn d3_low_exit(&self) -> Result<Proportion> {
        let decided: Vec<bool> = self.records.iter().filter_map(|r| r.d3_exit_low).collect();
        Proportion::wilson(decided.iter().filter(|&&b| b).count() as u64, decided.len() as u64)
    }

    pub fn dominance_fraction(&self) -> f64 {
        let ok = self.records.iter().filter(|r| r.dominance_ok).count();
        ok as f64 / self.records.len().max(1) as f64
    }

    /// Means of `σ₁, σ₂, σ₃` over paths where all three were observed.
    pub fn sigma_means(&self) -> [f64; 3] {
        let mut sums = [0.0; 3];
        let mut count = 0usize;
        for r in &self.records {
            if let (Some(a), Some(b), Some(c)) = (r.sigma1, r.sigma2, r.sigma3) {
                sums[0] += a;
                sums[1] += b;
                sums[2] += c;
                count += 1;
            }
        }
        sums.map(|s| s / count.max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::normal_cdf;

    #[test]
    fn scale_function_examples() {
        let p = scale_hit_probability(3.0, 1.0, 0.1, 10.0).unwrap();
        assert!((p - 0.9 / 9.9).abs() < 1e-12);
        assert_eq!(scale_hit_probability(3.0, 0.1, 0.1, 10.0).unwrap(), 1.0);
        assert_eq!(scale_hit_probability(3.0, 10.0, 0.1, 10.0).unwrap(), 0.0);
        assert!(scale_hit_probability(3.0, 1.0, 2.0, 1.5).is_err());
        // Log branch: ln(10/1)/ln(10/0.1) = 1/2.
        assert!((scale_hit_probability(2.0, 1.0, 0.1, 10.0).unwrap() - 0.5).abs() < 1e-12);
        // Continuity across ν = 2.
        let near = scale_hit_probability(2.0 + 1e-9, 1.0, 0.1, 10.0).unwrap();
        assert!((near - 0.5).abs() < 1e-6);
    }

    #[test]
    fn scale_function_is_monotone() {
        let (a, b) = (0.2, 5.0);
        for nu in [0.5, 1.0, 2.0, 3.0, 6.5] {
            let mut prev = 1.0;
            for i in 1..50 {
                let x = a + (b - a) * i as f64 / 50.0;
                let p = scale_hit_probability(nu, x, a, b).unwrap();
                assert!(p <= prev);
                prev = p;
            }
        }
        for x in [0.3, 1.0, 4.0] {
            let mut prev = 1.0;
            for nu in [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 5.0] {
                let p = scale_hit_probability(nu, x, a, b).unwrap();
                assert!(p <= prev + 1e-15, "nu={nu}, x={x}");
                prev = p;
            }
        }
    }

    #[test]
    fn harmonic_function_examples() {
        assert_eq!(harmonic_exit_prob(0.25, 2).unwrap(), 1.0);
        assert_eq!(harmonic_exit_prob(0.5, 2).unwrap(), 0.0);
        // (e^{−1.5} − e^{−2})/(e^{−1} − e^{−2}), evaluated independently to 12 digits.
        assert!((harmonic_exit_prob(0.375, 2).unwrap() - 0.377_540_668_798_1).abs() < 1e-12);
        assert!(harmonic_exit_prob(0.2, 2).is_err());
        for n in [1, 2, 5, 40, 400] {
            assert_eq!(harmonic_exit_prob(0.25, n).unwrap(), 1.0);
            assert_eq!(harmonic_exit_prob(0.5, n).unwrap(), 0.0);
            let mut prev = 1.0;
            for i in 1..=100 {
                let h = harmonic_exit_prob(0.25 + 0.25 * i as f64 / 100.0, n).unwrap();
                assert!(h <= prev);
                prev = h;
            }
        }
    }

    #[test]
    fn harmonic_function_solves_its_ode() {
        // 2(n−1) h' + h''/2 = 0 by central differences.
        let n = 3;
        let c = 2.0;
        let e = 1e-4;
        for x in [0.3, 0.375, 0.45] {
            let h = |y: f64| harmonic_exit_prob(y, n).unwrap();
            let d1 = (h(x + e) - h(x - e)) / (2.0 * e);
            let d2 = (h(x + e) - 2.0 * h(x) + h(x - e)) / (e * e);
            assert!((2.0 * c * d1 + 0.5 * d2).abs() < 1e-5);
        }
    }

    #[test]
    fn bessel_one_is_reflected_brownian_motion() {
        let spec = BesselSpec { dimension: 1.0, start: 1.0, horizon: 10.0, dt: 1e-3, floor: 0.0 };
        let p = absorption_frequency(&spec, 4000, 11).unwrap();
        let target = 2.0 * normal_cdf(-1.0 / 10f64.sqrt());
        assert!((p.estimate - target).abs() < 0.03, "{} vs {target}", p.estimate);
    }

    #[test]
    fn bessel_two_does_not_hit_zero() {
        let spec = BesselSpec { dimension: 2.0, start: 1.0, horizon: 1.0, dt: 1e-3, floor: 0.0 };
        for i in 0..1000 {
            let out = bessel_outcome(&spec, &NoiseStream::uniform(5, i, 1, spec.dt)).unwrap();
            assert!(!out.absorbed && out.min_value > 0.0);
        }
    }

    #[test]
    fn bessel_trajectory_matches_outcome() {
        let spec = BesselSpec { dimension: 3.0, start: 0.05, horizon: 0.5, dt: 1e-3, floor: 1e-3 };
        let s = NoiseStream::uniform(1, 3, 1, spec.dt);
        let run = simulate_bessel(&spec, &s).unwrap();
        let out = bessel_outcome(&spec, &s).unwrap();
        assert_eq!(run.absorbed, out.absorbed);
        assert_eq!(*run.values.last().unwrap(), out.final_value);
        assert_eq!(run.times.len(), run.values.len());
        assert!(run.splits > 0, "start near 0 must trigger step control");
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = BesselSpec { dimension: 2.0, start: 1e-3, horizon: 1.0, dt: 1e-3, floor: 1e-3 };
        assert!(simulate_bessel(&bad, &NoiseStream::uniform(0, 0, 1, 1e-3)).is_err());
        assert!(run_comparison_chain(1, &NoiseStream::uniform(0, 0, 1, 1e-3), 10.0).is_err());
    }

    #[test]
    fn exit_tail_edge_cases() {
        assert_eq!(exit_time_tail(2, 10, 0.0, 1e-3, 1).unwrap().estimate, 1.0);
        // Dynkin mean (1/2)²/n; Markov gives P(σ > 10·mean) ≤ 0.1, the true value is far smaller.
        let p = exit_time_tail(2, 2000, 10.0 * 0.125, 1e-3, 2).unwrap();
        assert!(p.estimate < 0.05);
    }
}
