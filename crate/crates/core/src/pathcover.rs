//! Sequential covers of sampled paths by balls chained at exit points.
//!
//! Ball 0 is centered at the path start; ball `i + 1` is centered at the first
//! sample outside ball `i`. Exits are detected on the grid, so exit durations
//! are whole numbers of steps and the chaining is exact.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{vecops, PointN};
use crate::noise::{first_exit_time, BrownianPath, ExitMonitor, NoiseStream};
use crate::stats::{fit_line, ks_two_sample, mean_stderr, quantile, LineFit, Proportion};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverReport {
    pub radius: f64,
    pub horizon: f64,
    pub centers: Vec<PointN>,
    pub open_times: Vec<f64>,
    /// Exit time of each ball, `None` for a ball still open at the horizon.
    pub close_times: Vec<Option<f64>>,
    /// Exit durations σ_i of the closed balls.
    pub sigmas: Vec<f64>,
    pub count: usize,
}

impl CoverReport {
    /// Largest distance from a path sample to its nearest center.
    pub fn coverage_gap(&self, path: &BrownianPath) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..path.len() {
            let p = path.position(i);
            let near = self
                .centers
                .iter()
                .map(|c| vecops::dist(c.coords(), p))
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(near);
        }
        worst
    }
}

/// Greedy exit-time cover of `path` by balls of radius `r`.
pub fn sequential_cover(path: &BrownianPath, r: f64) -> Result<CoverReport> {
    if !(r > 0.0 && r.is_finite()) {
        return invalid(format!("cover radius must be positive, got {r}"));
    }
    if path.is_empty() {
        return invalid("cannot cover an empty path");
    }
    let t = path.times();
    let horizon = path.horizon();
    let mut report = CoverReport {
        radius: r,
        horizon,
        centers: vec![PointN::new(path.position(0).to_vec())?],
        open_times: vec![t[0]],
        close_times: vec![None],
        sigmas: Vec::new(),
        count: 1,
    };
    let mut center = path.position(0);
    let r2 = r * r;
    #[allow(clippy::needless_range_loop)]
    for k in 1..path.len() {
        let p = path.position(k);
        if vecops::dist_sq(p, center) >= r2 {
            let open = report.open_times[report.count - 1];
            report.close_times[report.count - 1] = Some(t[k]);
            report.sigmas.push(t[k] - open);
            if t[k] < horizon {
                report.centers.push(PointN::new(p.to_vec())?);
                report.open_times.push(t[k]);
                report.close_times.push(None);
                report.count += 1;
                center = p;
            } else {
                break;
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimumTail {
    pub n: usize,
    pub m: usize,
    pub k: f64,
    /// `P(min_{i≤m} σ_i < K/n)`.
    pub minimum: Proportion,
    /// `P(σ < K/n)` from the same exits.
    pub single: Proportion,
}

/// Estimates `P(min_{i≤m} σ_i < K/n)` for i.i.d. unit-ball exit times in ℝⁿ.
/// Each exit is only simulated up to `K/n`.
pub fn exit_time_minimum_tail(n: usize, m: usize, k: f64, trials: usize, dt: f64, seed: u64) -> Result<MinimumTail> {
    if !(k > 0.0 && k < 0.125) {
        return invalid(format!("K must lie in (0, 1/8), got {k}"));
    }
    if n == 0 || m == 0 || trials == 0 {
        return invalid("n, m and trials must be positive");
    }
    let cap = k / n as f64;
    let per_trial: Vec<(u64, u64)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut early = 0u64;
            for i in 0..m {
                let stream = NoiseStream::uniform(seed, (trial * m + i) as u64, n, dt);
                if matches!(first_exit_time(&stream, 1.0, cap, ExitMonitor::Bridge), Some(t) if t < cap) {
                    early += 1;
                }
            }
            (u64::from(early > 0), early)
        })
        .collect();
    let hits: u64 = per_trial.iter().map(|p| p.0).sum();
    let singles: u64 = per_trial.iter().map(|p| p.1).sum();
    Ok(MinimumTail {
        n,
        m,
        k,
        minimum: Proportion::wilson(hits, trials as u64)?,
        single: Proportion::wilson(singles, (trials * m) as u64)?,
    })
}

/// `k_∞ = ⌈ln n / 2⌉`, the largest annulus index used at dimension `n`.
pub fn k_infinity(n: usize) -> usize {
    ((n as f64).ln() / 2.0).ceil().max(1.0) as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub r: f64,
    pub horizon: f64,
    pub mean_count: f64,
    pub stderr: f64,
    pub paths: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    /// Slope of `log E[N̂]` against `log r`, per `n` with at least two radii.
    pub radius_slopes: Vec<(usize, LineFit)>,
    /// Slope of `E[N̂]` against `n`, per radius present for at least two `n`.
    pub dimension_slopes: Vec<(f64, LineFit)>,
    /// Raw counts per row, in row order.
    #[serde(skip)]
    pub counts: Vec<Vec<usize>>,
}

impl ScalingTable {
    pub fn row(&self, n: usize, r: f64) -> Option<&ScalingRow> {
        self.rows.iter().find(|row| row.n == n && row.r == r)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "r", "T", "mean_count", "stderr", "paths"]).map_err(csv_err)?;
        for row in &self.rows {
            out.write_record(&[
                row.n.to_string(),
                row.r.to_string(),
                row.horizon.to_string(),
                row.mean_count.to_string(),
                row.stderr.to_string(),
                row.paths.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Mean cover counts of the `(n−1)`-dimensional path `B^⊥` over a grid of
/// `n` and radii `e^k`, `k ∈ ks`. Cells with `k > k_∞(n)` are skipped. Each
/// path is generated once and covered at every radius.
pub fn cover_scaling_study(ns: &[usize], horizon: f64, ks: &[u32], paths: usize, dt: f64, seed: u64) -> Result<ScalingTable> {
    if ns.is_empty() || ks.is_empty() || paths == 0 {
        return invalid("scaling study needs dimensions, radii and paths");
    }
    if ns.iter().any(|&n| n < 2) {
        return invalid("cover study needs n ≥ 2");
    }
    let steps = ((horizon / dt) - 1e-9).ceil() as usize;
    let mut rows = Vec::new();
    let mut counts = Vec::new();
    for &n in ns {
        let kinf = k_infinity(n) as u32;
        let radii: Vec<f64> = ks.iter().filter(|&&k| k <= kinf).map(|&k| (k as f64).exp()).collect();
        if radii.is_empty() {
            continue;
        }
        let per_path: Vec<Vec<usize>> = (0..paths)
            .into_par_iter()
            .map(|p| -> Result<Vec<usize>> {
                let stream = NoiseStream::uniform(seed, p as u64, n - 1, dt);
                let path = BrownianPath::generate(&stream, steps, None)?;
                radii.iter().map(|&r| sequential_cover(&path, r).map(|c| c.count)).collect()
            })
            .collect::<Result<_>>()?;
        for (j, &r) in radii.iter().enumerate() {
            let sample: Vec<usize> = per_path.iter().map(|c| c[j]).collect();
            let xs: Vec<f64> = sample.iter().map(|&c| c as f64).collect();
            let (mean, se) = mean_stderr(&xs);
            rows.push(ScalingRow { n, r, horizon, mean_count: mean, stderr: se, paths });
            counts.push(sample);
        }
    }
    let mut radius_slopes = Vec::new();
    for &n in ns {
        let cells: Vec<&ScalingRow> = rows.iter().filter(|r| r.n == n).collect();
        if cells.len() >= 2 {
            let xs: Vec<f64> = cells.iter().map(|c| c.r.ln()).collect();
            let ys: Vec<f64> = cells.iter().map(|c| c.mean_count.ln()).collect();
            radius_slopes.push((n, fit_line(&xs, &ys)?));
        }
    }
    let mut dimension_slopes = Vec::new();
    for &k in ks {
        let r = (k as f64).exp();
        let cells: Vec<&ScalingRow> = rows.iter().filter(|row| row.r == r).collect();
        if cells.len() >= 2 {
            let xs: Vec<f64> = cells.iter().map(|c| c.n as f64).collect();
            let ys: Vec<f64> = cells.iter().map(|c| c.mean_count).collect();
            dimension_slopes.push((r, fit_line(&xs, &ys)?));
        }
    }
    Ok(ScalingTable { rows, radius_slopes, dimension_slopes, counts })
}

/// Cover counts of independent `d`-dimensional paths at radius `r` and horizon
/// `horizon`, with step `dt`.
pub fn cover_counts(d: usize, r: f64, horizon: f64, dt: f64, paths: usize, seed: u64, first_path: u64) -> Result<Vec<usize>> {
    let steps = ((horizon / dt) - 1e-9).ceil() as usize;
    (0..paths)
        .into_par_iter()
        .map(|p| {
            let stream = NoiseStream::uniform(seed, first_path + p as u64, d, dt);
            let path = BrownianPath::generate(&stream, steps, None)?;
            Ok(sequential_cover(&path, r)?.count)
        })
        .collect()
}

/// KS distance between counts at `(r, T)` and at `(1, T/r²)`, from independent
/// paths; the first uses step `Δt·r²` so both runs have the same step count.
pub fn brownian_scaling_ks(d: usize, r: f64, horizon: f64, dt: f64, paths: usize, seed: u64) -> Result<f64> {
    let wide = cover_counts(d, r, horizon, dt * r * r, paths, seed, 0)?;
    let unit = cover_counts(d, 1.0, horizon / (r * r), dt, paths, seed, paths as u64)?;
    let a: Vec<f64> = wide.iter().map(|&c| c as f64).collect();
    let b: Vec<f64> = unit.iter().map(|&c| c as f64).collect();
    ks_two_sample(&a, &b)
}

/// Empirical `level` quantile of cover counts.
pub fn count_quantile(counts: &[usize], level: f64) -> Result<f64> {
    let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    quantile(&xs, level)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_path(steps: usize, dt: f64) -> BrownianPath {
        let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
        let positions: Vec<f64> = (0..=steps).flat_map(|k| [k as f64 * dt, 0.0]).collect();
        BrownianPath::from_parts(2, times, positions).unwrap()
    }

    #[test]
    fn straight_line_cover() {
        let path = line_path(500, 0.01);
        let rep = sequential_cover(&path, 1.0).unwrap();
        assert_eq!(rep.count, 5);
        for (i, c) in rep.centers.iter().enumerate() {
            assert!((c[0] - i as f64).abs() < 1e-9);
        }
        assert_eq!(rep.sigmas.len(), 5);
        for s in &rep.sigmas {
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_path_single_ball() {
        let times: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let path = BrownianPath::from_parts(1, times, vec![0.5; 10]).unwrap();
        let rep = sequential_cover(&path, 0.1).unwrap();
        assert_eq!(rep.count, 1);
        assert!(rep.sigmas.is_empty());
        assert!(sequential_cover(&path, 0.0).is_err());
    }

    #[test]
    fn cover_invariants_on_random_paths() {
        for p in 0..20 {
            let s = NoiseStream::uniform(5, p, 3, 1e-3);
            let path = BrownianPath::generate(&s, 2000, None).unwrap();
            let rep = sequential_cover(&path, 0.3).unwrap();
            assert!(rep.coverage_gap(&path) < 0.3);
            assert!(rep.sigmas.iter().all(|&s| s > 0.0));
            for i in 1..rep.count {
                let exit = rep.close_times[i - 1].unwrap();
                let k = path.times().iter().position(|&t| t == exit).unwrap();
                assert_eq!(rep.centers[i].coords(), path.position(k));
            }
            let min_sigma = rep.sigmas.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(rep.count as f64 <= 1.0 + rep.horizon / min_sigma);
        }
    }

    #[test]
    fn minimum_tail_respects_union_bound() {
        let est = exit_time_minimum_tail(8, 10, 0.1, 300, 1e-4, 3).unwrap();
        assert!(est.minimum.estimate <= 10.0 * est.single.estimate + 1e-12);
        assert!(exit_time_minimum_tail(8, 10, 0.2, 10, 1e-4, 3).is_err());
        let tiny = exit_time_minimum_tail(4, 5, 1e-6, 50, 1e-5, 3).unwrap();
        assert_eq!(tiny.minimum.successes, 0);
    }

    #[test]
    fn k_infinity_values() {
        assert_eq!(k_infinity(4), 1);
        assert_eq!(k_infinity(16), 2);
        assert_eq!(k_infinity(64), 3);
    }
}
