//! Counter-based Gaussian noise and stored Brownian paths.
//!
//! Every standard normal is a pure function of `(seed, substream, path_index,
//! step, coordinate)`: the flattened lane `step·n + coordinate` selects a
//! Philox4x32-10 block, and Box–Muller turns one block into two normals (cosine
//! branch for even lanes, sine branch for odd lanes). Replaying a stream, or
//! generating a path in several segments, reproduces the same bits.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{vecops, PointN};

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// Philox4x32 with 10 rounds.
#[inline]
pub fn philox4x32(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = ctr;
    let mut k = key;
    for _ in 0..10 {
        let p0 = u64::from(PHILOX_M0) * u64::from(c[0]);
        let p1 = u64::from(PHILOX_M1) * u64::from(c[2]);
        let (hi0, lo0) = ((p0 >> 32) as u32, p0 as u32);
        let (hi1, lo1) = ((p1 >> 32) as u32, p1 as u32);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
        k[0] = k[0].wrapping_add(PHILOX_W0);
        k[1] = k[1].wrapping_add(PHILOX_W1);
    }
    c
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn split(x: u64) -> (u32, u32) {
    (x as u32, (x >> 32) as u32)
}

/// Uniform in the open interval (0, 1) from the top 53 bits.
#[inline]
fn open_unit(hi: u32, lo: u32) -> f64 {
    let bits = ((u64::from(hi) << 32) | u64::from(lo)) >> 11;
    (bits as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

#[inline]
fn box_muller(block: [u32; 4]) -> (f64, f64) {
    let u1 = open_unit(block[1], block[0]);
    let u2 = open_unit(block[3], block[2]);
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Auxiliary randomness domains, kept disjoint from the increments.
pub mod domain {
    pub const INCREMENT: u64 = 0;
    pub const BESSEL_BRIDGE: u64 = 1;
    pub const STEP_BRIDGE: u64 = 2;
    pub const RETURN_TRIAL: u64 = 3;
    pub const EXIT_BRIDGE: u64 = 4;
}

/// Time-step schedule of a stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Uniform { dt: f64 },
    Explicit { dts: Vec<f64> },
}

impl Schedule {
    pub fn uniform(dt: f64) -> Self {
        Schedule::Uniform { dt }
    }

    /// Step size of step `k` (from `t_k` to `t_{k+1}`).
    #[inline]
    pub fn dt(&self, k: usize) -> f64 {
        match self {
            Schedule::Uniform { dt } => *dt,
            Schedule::Explicit { dts } => dts[k],
        }
    }

    /// Number of steps available, `None` when unbounded.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> Option<usize> {
        match self {
            Schedule::Uniform { .. } => None,
            Schedule::Explicit { dts } => Some(dts.len()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |d: f64| d >= 0.0 && d.is_finite();
        let good = match self {
            Schedule::Uniform { dt } => ok(*dt),
            Schedule::Explicit { dts } => dts.iter().all(|&d| ok(d)),
        };
        if good {
            Ok(())
        } else {
            invalid("time steps must be finite and ≥ 0")
        }
    }

    /// Every step multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Schedule {
        match self {
            Schedule::Uniform { dt } => Schedule::Uniform { dt: dt * factor },
            Schedule::Explicit { dts } => Schedule::Explicit { dts: dts.iter().map(|d| d * factor).collect() },
        }
    }
}

/// A reproducible n-dimensional Gaussian stream for one path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseStream {
    pub seed: u64,
    pub path_index: u64,
    /// Independent sub-stream tag (stage number, experiment arm, ...).
    pub substream: u64,
    pub dim: usize,
    pub schedule: Schedule,
    #[serde(skip)]
    key: [u32; 2],
}

impl NoiseStream {
    pub fn new(seed: u64, path_index: u64, dim: usize, schedule: Schedule) -> Self {
        assert!(dim >= 1, "stream dimension must be positive");
        let mut s = Self { seed, path_index, substream: 0, dim, schedule, key: [0; 2] };
        s.key = s.derive_key(domain::INCREMENT, 0);
        s
    }

    pub fn uniform(seed: u64, path_index: u64, dim: usize, dt: f64) -> Self {
        Self::new(seed, path_index, dim, Schedule::uniform(dt))
    }

    /// Same seed and path, independent numbers.
    pub fn substream(&self, tag: u64) -> Self {
        let mut s = self.clone();
        s.substream = tag;
        s.key = s.derive_key(domain::INCREMENT, 0);
        s
    }

    pub fn with_dim(&self, dim: usize) -> Self {
        let mut s = self.clone();
        assert!(dim >= 1, "stream dimension must be positive");
        s.dim = dim;
        s
    }

    pub fn with_schedule(&self, schedule: Schedule) -> Self {
        let mut s = self.clone();
        s.schedule = schedule;
        s
    }

    /// Re-derives the cached key (needed after deserialization).
    pub fn rekeyed(mut self) -> Self {
        self.key = self.derive_key(domain::INCREMENT, 0);
        self
    }

    fn derive_key(&self, domain: u64, salt: u64) -> [u32; 2] {
        let mut h = splitmix64(self.seed);
        h = splitmix64(h ^ self.substream.wrapping_mul(0xA24B_AED4_963E_E407));
        h = splitmix64(h ^ domain.wrapping_mul(0x9FB2_1C65_1E98_DF25));
        h = splitmix64(h ^ salt);
        let (lo, hi) = split(h);
        [lo, hi]
    }

    #[inline]
    fn block(&self, key: [u32; 2], a: u64) -> [u32; 4] {
        let (a0, a1) = split(a);
        let (p0, p1) = split(self.path_index);
        philox4x32([a0, a1, p0, p1], key)
    }

    /// The standard normal for `(step, coord)`.
    pub fn normal(&self, step: u64, coord: usize) -> f64 {
        let lane = step * self.dim as u64 + coord as u64;
        let (c, s) = box_muller(self.block(self.key, lane >> 1));
        if lane & 1 == 0 {
            c
        } else {
            s
        }
    }

    /// Standard normals of all coordinates of `step`.
    #[inline]
    pub fn normals_into(&self, step: u64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        let base = step * self.dim as u64;
        let mut cached: Option<(u64, (f64, f64))> = None;
        for (c, slot) in out.iter_mut().enumerate() {
            let lane = base + c as u64;
            let pair = lane >> 1;
            let z = match cached {
                Some((p, v)) if p == pair => v,
                _ => {
                    let v = box_muller(self.block(self.key, pair));
                    cached = Some((pair, v));
                    v
                }
            };
            *slot = if lane & 1 == 0 { z.0 } else { z.1 };
        }
    }

    /// Gaussian increment of `step` with variance `dt(step)` per coordinate.
    #[inline]
    pub fn increment_into(&self, step: u64, out: &mut [f64]) {
        let h = self.schedule.dt(step as usize);
        self.increment_with_dt(step, h, out);
    }

    /// Increment of `step` scaled for an externally chosen step size.
    #[inline]
    pub fn increment_with_dt(&self, step: u64, dt: f64, out: &mut [f64]) {
        self.normals_into(step, out);
        let s = dt.sqrt();
        for v in out.iter_mut() {
            *v *= s;
        }
    }

    /// A standard normal from an auxiliary domain, indexed by `(a, b)`.
    pub fn aux_normal(&self, domain: u64, a: u64, b: u64) -> f64 {
        let key = self.derive_key(domain, b);
        box_muller(self.block(key, a)).0
    }

    /// A uniform on (0, 1) from an auxiliary domain, indexed by `(a, b)`.
    pub fn aux_uniform(&self, domain: u64, a: u64, b: u64) -> f64 {
        let key = self.derive_key(domain, b);
        let blk = self.block(key, a);
        open_unit(blk[1], blk[0])
    }
}

/// `steps` Gaussian increments with coordinate variance `Δt` of each step.
pub fn generate_increments(stream: &NoiseStream, steps: usize) -> Result<Vec<PointN>> {
    if steps == 0 {
        return invalid("generate_increments needs steps ≥ 1");
    }
    stream.schedule.validate()?;
    check_schedule_len(&stream.schedule, 0, steps)?;
    let mut buf = vec![0.0; stream.dim];
    (0..steps)
        .map(|k| {
            stream.increment_into(k as u64, &mut buf);
            PointN::new(buf.clone())
        })
        .collect()
}

fn check_schedule_len(s: &Schedule, start: usize, steps: usize) -> Result<()> {
    match s.len() {
        Some(len) if start + steps > len => {
            invalid(format!("schedule has {len} steps, requested up to {}", start + steps))
        }
        _ => Ok(()),
    }
}

/// A stored path `B` sampled on a grid; positions are kept flat (stride `dim`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrownianPath {
    dim: usize,
    times: Vec<f64>,
    dts: Vec<f64>,
    positions: Vec<f64>,
}

impl BrownianPath {
    /// A single-sample path at `start`.
    pub fn starting_at(start: &PointN) -> Self {
        Self { dim: start.dim(), times: vec![0.0], dts: Vec::new(), positions: start.coords().to_vec() }
    }

    /// Path of `steps` increments of `stream`, started at `start` (origin by default).
    pub fn generate(stream: &NoiseStream, steps: usize, start: Option<&PointN>) -> Result<Self> {
        let origin = PointN::origin(stream.dim);
        let start = start.unwrap_or(&origin);
        if start.dim() != stream.dim {
            return invalid("path start dimension differs from stream dimension");
        }
        let mut path = Self::starting_at(start);
        path.extend(stream, steps)?;
        Ok(path)
    }

    /// Appends the next `steps` increments of `stream` (step indices continue).
    pub fn extend(&mut self, stream: &NoiseStream, steps: usize) -> Result<()> {
        if stream.dim != self.dim {
            return invalid("stream dimension differs from path dimension");
        }
        stream.schedule.validate()?;
        let first = self.steps();
        check_schedule_len(&stream.schedule, first, steps)?;
        self.times.reserve(steps);
        self.dts.reserve(steps);
        self.positions.reserve(steps * self.dim);
        let mut inc = vec![0.0; self.dim];
        for k in first..first + steps {
            let h = stream.schedule.dt(k);
            stream.increment_with_dt(k as u64, h, &mut inc);
            self.push_increment(h, &inc);
        }
        Ok(())
    }

    /// Appends one step with the given increment.
    #[inline]
    pub fn push_increment(&mut self, dt: f64, inc: &[f64]) {
        let base = self.positions.len() - self.dim;
        for (c, d) in inc.iter().enumerate().take(self.dim) {
            let v = self.positions[base + c] + d;
            self.positions.push(v);
        }
        let t = self.times[self.times.len() - 1] + dt;
        self.times.push(t);
        self.dts.push(dt);
    }

    /// Appends an explicit sample.
    pub(crate) fn push_sample(&mut self, dt: f64, position: &[f64]) {
        self.positions.extend_from_slice(position);
        let t = self.times[self.times.len() - 1] + dt;
        self.times.push(t);
        self.dts.push(dt);
    }

    /// Concatenates `self` with a segment that starts where `self` ends.
    pub fn concat(&self, tail: &BrownianPath) -> Result<BrownianPath> {
        if tail.dim != self.dim {
            return invalid("concat: dimension mismatch");
        }
        if tail.position(0) != self.position(self.len() - 1) || tail.times[0] != self.horizon() {
            return invalid("concat: tail does not start at the end of the head");
        }
        let mut out = self.clone();
        out.times.extend_from_slice(&tail.times[1..]);
        out.dts.extend_from_slice(&tail.dts);
        out.positions.extend_from_slice(&tail.positions[self.dim..]);
        Ok(out)
    }

    /// Segment of `steps` increments starting from step `first` of `stream`,
    /// beginning at (`start`, `t0`).
    pub fn segment(stream: &NoiseStream, first: usize, steps: usize, start: &PointN, t0: f64) -> Result<Self> {
        let mut path = Self::starting_at(start);
        path.times[0] = t0;
        if stream.dim != path.dim {
            return invalid("stream dimension differs from path dimension");
        }
        check_schedule_len(&stream.schedule, first, steps)?;
        let mut inc = vec![0.0; path.dim];
        for k in first..first + steps {
            let h = stream.schedule.dt(k);
            stream.increment_with_dt(k as u64, h, &mut inc);
            path.push_increment(h, &inc);
        }
        Ok(path)
    }

    pub fn from_parts(dim: usize, times: Vec<f64>, positions: Vec<f64>) -> Result<Self> {
        if dim == 0 || times.is_empty() || positions.len() != times.len() * dim {
            return invalid("path parts have inconsistent lengths");
        }
        if times[0] != 0.0 && times.windows(2).any(|w| w[1] < w[0]) {
            return invalid("path times must be nondecreasing");
        }
        if positions.iter().chain(&times).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("path"));
        }
        let dts = times.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self { dim, times, dts, positions })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of samples (steps + 1).
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dts(&self) -> &[f64] {
        &self.dts
    }

    #[inline]
    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions_flat(&self) -> &[f64] {
        &self.positions
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Coordinates `range` of every sample, e.g. `1..n` for `B^⊥`.
    pub fn project(&self, range: std::ops::Range<usize>) -> Result<BrownianPath> {
        if range.start >= range.end || range.end > self.dim {
            return invalid(format!("projection {range:?} invalid for dimension {}", self.dim));
        }
        let d = range.end - range.start;
        let mut positions = Vec::with_capacity(self.len() * d);
        for i in 0..self.len() {
            positions.extend_from_slice(&self.position(i)[range.clone()]);
        }
        Ok(Self { dim: d, times: self.times.clone(), dts: self.dts.clone(), positions })
    }

    /// `(λB_{λ⁻²t})`: positions times λ, times and steps times λ².
    pub fn scaled(&self, lambda: f64) -> BrownianPath {
        let l2 = lambda * lambda;
        Self {
            dim: self.dim,
            times: self.times.iter().map(|t| t * l2).collect(),
            dts: self.dts.iter().map(|t| t * l2).collect(),
            positions: self.positions.iter().map(|x| x * lambda).collect(),
        }
    }

    /// Prefix of the first `steps` steps.
    pub fn truncated(&self, steps: usize) -> BrownianPath {
        let k = steps.min(self.steps());
        Self {
            dim: self.dim,
            times: self.times[..=k].to_vec(),
            dts: self.dts[..k].to_vec(),
            positions: self.positions[..(k + 1) * self.dim].to_vec(),
        }
    }

    /// Binary dump: `n`, step count (u64 LE), the Δt schedule and then all
    /// positions including the start, as little-endian f64.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&(self.steps() as u64).to_le_bytes())?;
        for d in &self.dts {
            w.write_all(&d.to_le_bytes())?;
        }
        for x in &self.positions {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let dim = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let steps = u64::from_le_bytes(word) as usize;
        if dim == 0 || dim > 1 << 20 || steps > 1 << 40 {
            return invalid("binary path header out of range");
        }
        let mut read_f64 = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut word)?;
            Ok(f64::from_le_bytes(word))
        };
        let mut dts = Vec::with_capacity(steps);
        for _ in 0..steps {
            dts.push(read_f64(&mut r)?);
        }
        let mut positions = Vec::with_capacity((steps + 1) * dim);
        for _ in 0..(steps + 1) * dim {
            positions.push(read_f64(&mut r)?);
        }
        let mut times = Vec::with_capacity(steps + 1);
        times.push(0.0);
        for d in &dts {
            let t = times[times.len() - 1] + d;
            times.push(t);
        }
        Ok(Self { dim, times, dts, positions })
    }
}

/// Largest `|B_coord|` over the stored samples.
pub fn running_max_abs(path: &BrownianPath, coordinate: usize) -> Result<f64> {
    if path.is_empty() {
        return invalid("running_max_abs on an empty path");
    }
    if coordinate >= path.dim() {
        return invalid(format!("coordinate {coordinate} out of range for dimension {}", path.dim()));
    }
    Ok((0..path.len()).map(|i| path.position(i)[coordinate].abs()).fold(0.0, f64::max))
}

/// Intermediate points of a Brownian bridge from `a` (time 0) to `b` (time `h`)
/// on `pieces` equal sub-steps; returns `pieces − 1` points, flat.
pub fn bridge_points(stream: &NoiseStream, step: u64, a: &[f64], b: &[f64], h: f64, pieces: usize) -> Vec<f64> {
    let dim = a.len();
    let mut out = Vec::with_capacity((pieces.saturating_sub(1)) * dim);
    let mut cur = a.to_vec();
    let sub = h / pieces as f64;
    for j in 1..pieces {
        let remaining = h - (j - 1) as f64 * sub;
        let w = sub / remaining;
        let sd = (sub * (remaining - sub) / remaining).max(0.0).sqrt();
        for c in 0..dim {
            let z = stream.aux_normal(domain::STEP_BRIDGE, step, (j * dim + c) as u64);
            cur[c] += w * (b[c] - cur[c]) + sd * z;
        }
        out.extend_from_slice(&cur);
    }
    out
}

/// How exits between grid points are handled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitMonitor {
    /// First sample at or beyond the sphere.
    Discrete,
    /// Also accept a bridge crossing between two inside samples, using the
    /// local half-space approximation `exp(−2 d₀ d₁ / Δt)`.
    Bridge,
}

/// Exit time of the stream's Brownian motion (started at the origin) from the
/// open ball of `radius`, or `None` if still inside at time `cap`.
pub fn first_exit_time(stream: &NoiseStream, radius: f64, cap: f64, monitor: ExitMonitor) -> Option<f64> {
    let mut x = vec![0.0; stream.dim];
    let mut inc = vec![0.0; stream.dim];
    let mut t = 0.0;
    let mut d_prev = radius;
    let mut k = 0u64;
    while t < cap {
        let h = stream.schedule.dt(k as usize);
        stream.increment_with_dt(k, h, &mut inc);
        for (xi, di) in x.iter_mut().zip(&inc) {
            *xi += di;
        }
        t += h;
        let r = vecops::norm(&x);
        if r >= radius {
            return Some(t);
        }
        let d_now = radius - r;
        if monitor == ExitMonitor::Bridge && h > 0.0 {
            let p = (-2.0 * d_prev * d_now / h).exp();
            if p > 1e-12 && stream.aux_uniform(domain::EXIT_BRIDGE, k, 0) < p {
                return Some(t - 0.5 * h);
            }
        }
        d_prev = d_now;
        k += 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn philox_known_answers() {
        // Reference vectors published with the Random123 library.
        assert_eq!(philox4x32([0; 4], [0; 2]), [0x6627_e8d5, 0xe169_c58d, 0xbc57_ac4c, 0x9b00_dbd8]);
        assert_eq!(
            philox4x32([u32::MAX; 4], [u32::MAX; 2]),
            [0x408f_276d, 0x41c8_3b0e, 0xa20b_c7c6, 0x6d54_51fd]
        );
        assert_eq!(
            philox4x32([0x243f_6a88, 0x85a3_08d3, 0x1319_8a2e, 0x0370_7344], [0xa409_3822, 0x299f_31d0]),
            [0xd16c_fe09, 0x94fd_cceb, 0x5001_e420, 0x2412_6ea1]
        );
    }

    #[test]
    fn zero_dt_gives_zero_increments() {
        let s = NoiseStream::uniform(1, 0, 3, 0.0);
        for inc in generate_increments(&s, 10).unwrap() {
            assert!(inc.coords().iter().all(|&v| v == 0.0));
        }
        assert!(generate_increments(&s, 0).is_err());
    }

    #[test]
    fn increments_are_pure_functions_of_their_indices() {
        let s = NoiseStream::uniform(42, 7, 3, 1.0);
        let a = generate_increments(&s, 50).unwrap();
        let b = generate_increments(&s.clone(), 50).unwrap();
        assert_eq!(a, b);
        for (k, inc) in a.iter().enumerate() {
            for c in 0..3 {
                assert_eq!(inc[c].to_bits(), s.normal(k as u64, c).to_bits());
            }
        }
        let other = generate_increments(&NoiseStream::uniform(42, 8, 3, 1.0), 50).unwrap();
        assert_ne!(a, other);
        let sub = generate_increments(&s.substream(1), 50).unwrap();
        assert_ne!(a, sub);
    }

    #[test]
    fn segments_concatenate_to_the_whole() {
        let s = NoiseStream::uniform(9, 3, 2, 1e-3);
        let whole = BrownianPath::generate(&s, 300, None).unwrap();
        let head = BrownianPath::generate(&s, 120, None).unwrap();
        let end = PointN::new(head.position(head.len() - 1).to_vec()).unwrap();
        let tail = BrownianPath::segment(&s, 120, 180, &end, head.horizon()).unwrap();
        let joined = head.concat(&tail).unwrap();
        assert_eq!(joined, whole);
        let mut grown = head.clone();
        grown.extend(&s, 180).unwrap();
        assert_eq!(grown, whole);
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let s = NoiseStream::new(5, 1, 3, Schedule::Explicit { dts: vec![0.1, 0.2, 0.05, 0.3] });
        let path = BrownianPath::generate(&s, 4, None).unwrap();
        let mut buf = Vec::new();
        path.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 4 * 8 + 5 * 3 * 8);
        assert_eq!(&buf[..8], &3u64.to_le_bytes());
        assert_eq!(BrownianPath::read_binary(buf.as_slice()).unwrap(), path);
        assert!(BrownianPath::generate(&s, 5, None).is_err());
    }

    #[test]
    fn running_max_examples() {
        let flat = BrownianPath::from_parts(1, vec![0.0, 1.0, 2.0], vec![0.0; 3]).unwrap();
        assert_eq!(running_max_abs(&flat, 0).unwrap(), 0.0);
        assert!(running_max_abs(&flat, 1).is_err());
        let p = BrownianPath::from_parts(2, vec![0.0, 1.0], vec![0.0, 0.0, -3.0, 1.0]).unwrap();
        assert_eq!(running_max_abs(&p, 0).unwrap(), 3.0);
    }

    #[test]
    fn bridge_points_end_consistent() {
        let s = NoiseStream::uniform(3, 0, 2, 1.0);
        let pts = bridge_points(&s, 5, &[0.0, 0.0], &[1.0, -1.0], 1.0, 10);
        assert_eq!(pts.len(), 18);
        assert!(pts.iter().all(|v| v.is_finite()));
        assert!(bridge_points(&s, 5, &[0.0], &[1.0], 1.0, 1).is_empty());
    }
}
