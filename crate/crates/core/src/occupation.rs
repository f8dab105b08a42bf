//! Occupation times of sampled paths, total occupation of balls by transient
//! Brownian motion, tail curves and the Ciesielski–Taylor check.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{vecops, PointN};
use crate::noise::{domain, first_exit_time, BrownianPath, ExitMonitor, NoiseStream};
use crate::pathcover::csv_err;
use crate::stats::{fit_line, ks_two_sample, mean_stderr, LineFit, Proportion};

/// Left-endpoint sum `Σ Δt_k 1{‖B_{t_k} − c‖ ≤ r}`.
pub fn occupation_time(path: &BrownianPath, center: &PointN, r: f64) -> Result<f64> {
    check_ball(path, center, r)?;
    let r2 = r * r;
    let dts = path.dts();
    Ok((0..path.steps())
        .filter(|&k| vecops::dist_sq(path.position(k), center.coords()) <= r2)
        .map(|k| dts[k])
        .sum())
}

fn check_ball(path: &BrownianPath, center: &PointN, r: f64) -> Result<()> {
    if !(r > 0.0) {
        return invalid(format!("ball radius must be positive, got {r}"));
    }
    if center.dim() != path.dim() {
        return invalid("center dimension differs from path dimension");
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationHistogram {
    pub center: PointN,
    pub radius: f64,
    pub horizon: f64,
    pub occupied: f64,
    /// Outer radii of the shells, increasing; shell `j` is `[edges[j−1], edges[j])`
    /// with `edges[−1] = 0`.
    pub edges: Vec<f64>,
    pub shells: Vec<f64>,
    /// Step counts behind `occupied` and `shells`; these add up exactly.
    pub occupied_steps: u64,
    pub shell_steps: Vec<u64>,
}

/// Occupation of the ball and of the shells between consecutive `edges`.
/// Every step is credited to exactly one shell, so shells add up exactly.
pub fn occupation_histogram(path: &BrownianPath, center: &PointN, r: f64, edges: &[f64]) -> Result<OccupationHistogram> {
    check_ball(path, center, r)?;
    if edges.windows(2).any(|w| w[1] <= w[0]) || edges.first().is_some_and(|&e| e <= 0.0) {
        return invalid("shell edges must be positive and increasing");
    }
    let mut shells = vec![0.0; edges.len()];
    let mut shell_steps = vec![0u64; edges.len()];
    let mut occupied = 0.0;
    let mut occupied_steps = 0u64;
    let dts = path.dts();
    for (k, dt) in dts.iter().enumerate().take(path.steps()) {
        let d = vecops::dist(path.position(k), center.coords());
        if d <= r {
            occupied += dt;
            occupied_steps += 1;
        }
        if let Some(j) = edges.iter().position(|&e| d < e) {
            shells[j] += dts[k];
            shell_steps[j] += 1;
        }
    }
    Ok(OccupationHistogram {
        center: center.clone(),
        radius: r,
        horizon: path.horizon(),
        occupied,
        edges: edges.to_vec(),
        shells,
        occupied_steps,
        shell_steps,
    })
}

/// Annulus edges `2e^k`, `k = 1..=k_max`: `A¹ = B_{2e}`, `A^k = [2e^{k−1}, 2e^k)`.
pub fn annulus_edges(k_max: usize) -> Vec<f64> {
    (1..=k_max).map(|k| 2.0 * (k as f64).exp()).collect()
}

/// Total occupation of a ball.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TotalOccupation {
    pub value: f64,
    pub excursions: u32,
    pub converged: bool,
}

/// Upper bound on returns before a sample is flagged unconverged.
pub const MAX_EXCURSIONS: u32 = 10_000;

/// Total time `d`-dimensional BM from the center spends in the ball of radius
/// `r` (d ≥ 3). The path runs until it reaches `2r`; from there it returns to
/// the sphere of radius `r` with probability `(r/|x|)^{d−2}`, in which case it
/// restarts on that sphere (the functional is rotation invariant), otherwise
/// it never returns.
pub fn total_occupation(stream: &NoiseStream, r: f64) -> Result<TotalOccupation> {
    let d = stream.dim;
    if d < 3 {
        return invalid(format!("total occupation is infinite for d = {d} < 3"));
    }
    if !(r > 0.0) {
        return invalid("ball radius must be positive");
    }
    let outer = 2.0 * r;
    let r2 = r * r;
    let mut x = vec![0.0; d];
    let mut inc = vec![0.0; d];
    let mut value = 0.0;
    let mut k = 0u64;
    let mut excursions = 0u32;
    loop {
        loop {
            let h = stream.schedule.dt(k as usize);
            if vecops::norm_sq(&x) <= r2 {
                value += h;
            }
            stream.increment_with_dt(k, h, &mut inc);
            for (xi, di) in x.iter_mut().zip(&inc) {
                *xi += di;
            }
            k += 1;
            if vecops::norm_sq(&x) >= outer * outer {
                break;
            }
        }
        let dist = vecops::norm(&x);
        let back = (r / dist).powi(d as i32 - 2);
        if stream.aux_uniform(domain::RETURN_TRIAL, excursions as u64, 0) >= back {
            return Ok(TotalOccupation { value, excursions, converged: true });
        }
        excursions += 1;
        if excursions >= MAX_EXCURSIONS {
            return Ok(TotalOccupation { value, excursions, converged: false });
        }
        for xi in x.iter_mut() {
            *xi *= r / dist;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub s: f64,
    pub survival: Proportion,
    /// Whether `s > 8/n`, the range where the exponential bound is stated.
    pub in_bound_range: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub n: usize,
    pub r: f64,
    pub dt: f64,
    pub points: Vec<TailPoint>,
    /// Least-squares fit of `log P(L > s r²)` on `s`, over points with ≥ 50 exceedances.
    pub fit: Option<LineFit>,
    pub decay_rate: Option<f64>,
    pub unconverged: usize,
    /// The normalized samples `L/r²`.
    pub samples: Vec<f64>,
}

impl TailCurve {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "r", "s", "survival", "lower", "upper", "exceedances", "trials", "s_gt_8_over_n"])
            .map_err(csv_err)?;
        for p in &self.points {
            out.write_record(&[
                self.n.to_string(),
                self.r.to_string(),
                p.s.to_string(),
                p.survival.estimate.to_string(),
                p.survival.lower.to_string(),
                p.survival.upper.to_string(),
                p.survival.successes.to_string(),
                p.survival.trials.to_string(),
                p.in_bound_range.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Minimum exceedance count for a tail point to enter the decay fit.
pub const FIT_MIN_EXCEEDANCES: u64 = 50;

/// `P(L^{(n−1)}(B_r(0)) > s r²)` over a grid of `s`, for `(n−1)`-dimensional BM.
pub fn occupation_tail(n: usize, r: f64, s_grid: &[f64], trials: usize, dt: f64, seed: u64) -> Result<TailCurve> {
    if n < 4 {
        return invalid(format!("occupation tail needs n ≥ 4, got {n}"));
    }
    if s_grid.is_empty() || trials == 0 {
        return invalid("tail needs a nonempty s grid and trials");
    }
    let results: Vec<TotalOccupation> = (0..trials)
        .into_par_iter()
        .map(|p| total_occupation(&NoiseStream::uniform(seed, p as u64, n - 1, dt), r))
        .collect::<Result<_>>()?;
    let unconverged = results.iter().filter(|o| !o.converged).count();
    let samples: Vec<f64> = results.iter().map(|o| o.value / (r * r)).collect();
    tail_from_samples(n, r, dt, s_grid, samples, unconverged)
}

fn tail_from_samples(n: usize, r: f64, dt: f64, s_grid: &[f64], samples: Vec<f64>, unconverged: usize) -> Result<TailCurve> {
    let trials = samples.len() as u64;
    let mut points = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        let exceed = samples.iter().filter(|&&l| l > s).count() as u64;
        points.push(TailPoint { s, survival: Proportion::wilson(exceed, trials)?, in_bound_range: s > 8.0 / n as f64 });
    }
    let usable: Vec<&TailPoint> = points.iter().filter(|p| p.survival.successes >= FIT_MIN_EXCEEDANCES).collect();
    let fit = if usable.len() >= 2 {
        let xs: Vec<f64> = usable.iter().map(|p| p.s).collect();
        let ys: Vec<f64> = usable.iter().map(|p| p.survival.estimate.ln()).collect();
        Some(fit_line(&xs, &ys)?)
    } else {
        None
    };
    Ok(TailCurve { n, r, dt, points, decay_rate: fit.map(|f| -f.slope), fit, unconverged, samples })
}

/// KS distance between the normalized samples `L/r²` at radii `1` and `r`
/// (steps `Δt` and `Δt·r²`), from independent paths.
pub fn tail_scaling_ks(n: usize, r: f64, trials: usize, dt: f64, seed: u64) -> Result<f64> {
    if n < 4 {
        return invalid("occupation tail needs n ≥ 4");
    }
    let draw = |radius: f64, step: f64, offset: u64| -> Result<Vec<f64>> {
        (0..trials)
            .into_par_iter()
            .map(|p| {
                let stream = NoiseStream::uniform(seed, offset + p as u64, n - 1, step);
                total_occupation(&stream, radius).map(|o| o.value / (radius * radius))
            })
            .collect()
    };
    let unit = draw(1.0, dt, 0)?;
    let wide = draw(r, dt * r * r, trials as u64)?;
    ks_two_sample(&unit, &wide)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtSummary {
    pub n: usize,
    pub samples: usize,
    pub dt: f64,
    pub ks: f64,
    pub mean_exit: f64,
    pub mean_exit_stderr: f64,
    pub mean_occupation: f64,
    pub mean_occupation_stderr: f64,
    /// Occupation samples still accruing when the excursion cap was reached.
    pub unconverged: usize,
    /// Exit samples censored at the time cap.
    pub censored: usize,
}

/// Time cap for unit-ball exits (far beyond the mean `1/n`).
const EXIT_CAP: f64 = 60.0;

/// Compares exit times of n-dimensional BM from the unit ball with total
/// unit-ball occupation of (n+2)-dimensional BM, both started at the center.
pub fn ct_identity_check(n: usize, samples: usize, dt: f64, seed: u64) -> Result<CtSummary> {
    if n == 0 || samples == 0 {
        return invalid("ct check needs n ≥ 1 and samples ≥ 1");
    }
    if !(dt > 0.0) {
        return invalid("dt must be positive");
    }
    let exits: Vec<Option<f64>> = (0..samples)
        .into_par_iter()
        .map(|p| {
            let stream = NoiseStream::uniform(seed, p as u64, n, dt);
            first_exit_time(&stream, 1.0, EXIT_CAP, ExitMonitor::Bridge)
        })
        .collect();
    let censored = exits.iter().filter(|e| e.is_none()).count();
    let tau: Vec<f64> = exits.iter().map(|e| e.unwrap_or(EXIT_CAP)).collect();
    let occ: Vec<TotalOccupation> = (0..samples)
        .into_par_iter()
        .map(|p| total_occupation(&NoiseStream::uniform(seed, p as u64, n + 2, dt).substream(1), 1.0))
        .collect::<Result<_>>()?;
    let unconverged = occ.iter().filter(|o| !o.converged).count();
    let l: Vec<f64> = occ.iter().map(|o| o.value).collect();
    let (mean_exit, mean_exit_stderr) = mean_stderr(&tau);
    let (mean_occupation, mean_occupation_stderr) = mean_stderr(&l);
    let ks = ks_two_sample(&tau, &l)?;
    if ks.is_nan() {
        return Err(Error::NonFinite("ks statistic"));
    }
    Ok(CtSummary {
        n,
        samples,
        dt,
        ks,
        mean_exit,
        mean_exit_stderr,
        mean_occupation,
        mean_occupation_stderr,
        unconverged,
        censored,
    })
}

impl CtSummary {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["n", "samples", "dt", "ks", "mean_exit", "mean_occupation", "unconverged", "censored"])
            .map_err(csv_err)?;
        out.write_record(&[
            self.n.to_string(),
            self.samples.to_string(),
            self.dt.to_string(),
            self.ks.to_string(),
            self.mean_exit.to_string(),
            self.mean_occupation.to_string(),
            self.unconverged.to_string(),
            self.censored.to_string(),
        ])
        .map_err(csv_err)?;
        out.flush()?;
        Ok(())
    }
}

/// Ball-sup self-consistency: for each path and center `p`, the normalized
/// occupation `n·L(2B_{e^k}(p))/e^{2k}` of the `(n−1)`-dimensional path.
/// Returns the empirical `level` percentile `ρ̂` and the fraction at or below it.
pub fn ball_sup_percentile(paths: &[BrownianPath], centers: &[PointN], k: u32, n: usize, level: f64) -> Result<(f64, f64)> {
    if paths.is_empty() || centers.is_empty() {
        return invalid("ball-sup needs paths and centers");
    }
    let radius = 2.0 * (k as f64).exp();
    let scale = n as f64 / (2.0 * k as f64).exp();
    let mut values = Vec::with_capacity(paths.len() * centers.len());
    for path in paths {
        for c in centers {
            values.push(occupation_time(path, c, radius)? * scale);
        }
    }
    let rho = crate::stats::quantile(&values, level)?;
    let frac = values.iter().filter(|&&v| v <= rho).count() as f64 / values.len() as f64;
    Ok((rho, frac))
}
