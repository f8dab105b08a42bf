//! Monte Carlo estimation of hitting probabilities and `(n, c, α)` sweeps.
//!
//! Paths are independent work units keyed by `(seed, path index)`. Results are
//! collected in path order and aggregated by integer counts, so they do not
//! depend on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::flow::{refine_cloud, run_flow, FlowConfig, FlowResult, RefinePolicy};
use crate::geometry::{DriftField, PointN, Region};
use crate::noise::NoiseStream;
use crate::pathcover::csv_err;
use crate::stats::Proportion;

/// Paths whose closest approach is within this multiple of `1/N` get a refinement pass.
pub const NEAR_MISS_FACTOR: f64 = 3.0;
/// Refinement factor and round limit used for near misses.
pub const REFINE_FACTOR: u32 = 4;
pub const REFINE_ROUNDS: usize = 6;
/// Successive closest approaches closer than this count as converged.
pub const REFINE_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathOutcome {
    pub path_index: u64,
    pub hit: bool,
    pub tau_hat: Option<f64>,
    pub closest: f64,
    pub refined: bool,
    /// Refinement turned a miss into a hit.
    pub changed: bool,
    pub converged: bool,
    pub budget_exhausted: bool,
}

/// Repeated [`refine_cloud`] passes until the closest approach stabilizes.
pub fn refine_until_converged(
    result: &FlowResult,
    stream: &NoiseStream,
    factor: u32,
    rounds: usize,
    tol: f64,
) -> Result<(FlowResult, bool)> {
    let mut current = result.clone();
    let mut last = current.closest_approach().0;
    for _ in 0..rounds {
        let next = refine_cloud(&current, stream, factor)?;
        let d = next.closest_approach().0;
        let done = next.hit || (last - d).abs() < tol;
        current = next;
        if done {
            return Ok((current, true));
        }
        last = d;
    }
    Ok((current, false))
}

/// One realization plus the near-miss refinement pass.
pub fn simulate_path(config: &FlowConfig, seed: u64, path_index: u64) -> Result<PathOutcome> {
    let stream = NoiseStream::uniform(seed, path_index, config.dim, config.dt);
    let res = run_flow(config, &stream)?;
    let closest = res.closest_approach().0;
    let mut out = PathOutcome {
        path_index,
        hit: res.hit,
        tau_hat: res.tau_hat,
        closest,
        refined: false,
        changed: false,
        converged: true,
        budget_exhausted: res.budget_exhausted,
    };
    if !res.hit && closest <= NEAR_MISS_FACTOR * config.threshold() {
        let (fine, converged) = refine_until_converged(&res, &stream, REFINE_FACTOR, REFINE_ROUNDS, REFINE_TOLERANCE)?;
        out.refined = true;
        out.converged = converged;
        out.changed = fine.hit;
        out.hit = fine.hit;
        out.tau_hat = fine.tau_hat;
        out.closest = fine.closest_approach().0;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingEstimate {
    pub config: FlowConfig,
    pub seed: u64,
    pub paths: u64,
    pub hits: u64,
    pub estimate: Proportion,
    pub threshold: f64,
    pub refined_paths: u64,
    pub changed_paths: u64,
    /// Fraction of paths whose verdict changed under refinement.
    pub changed_fraction: f64,
    /// Fraction of refined paths whose refinement converged (1 if none).
    pub converged_fraction: f64,
    pub budget_exhausted: u64,
    #[serde(skip)]
    pub outcomes: Vec<PathOutcome>,
}

impl HittingEstimate {
    pub fn hit_flags(&self) -> Vec<bool> {
        self.outcomes.iter().map(|o| o.hit).collect()
    }
}

/// Hitting frequency over paths `0..paths` of `seed`.
pub fn estimate_hitting_probability(config: &FlowConfig, paths: usize, seed: u64) -> Result<HittingEstimate> {
    if paths == 0 {
        return invalid("need at least one path");
    }
    config.validate()?;
    let outcomes: Vec<PathOutcome> =
        (0..paths as u64).into_par_iter().map(|p| simulate_path(config, seed, p)).collect::<Result<_>>()?;
    aggregate(config, seed, outcomes)
}

fn aggregate(config: &FlowConfig, seed: u64, outcomes: Vec<PathOutcome>) -> Result<HittingEstimate> {
    let paths = outcomes.len() as u64;
    let hits = outcomes.iter().filter(|o| o.hit).count() as u64;
    let refined = outcomes.iter().filter(|o| o.refined).count() as u64;
    let changed = outcomes.iter().filter(|o| o.changed).count() as u64;
    let converged = outcomes.iter().filter(|o| o.refined && o.converged).count() as u64;
    let exhausted = outcomes.iter().filter(|o| o.budget_exhausted).count() as u64;
    Ok(HittingEstimate {
        config: config.clone(),
        seed,
        paths,
        hits,
        estimate: Proportion::wilson(hits, paths)?,
        threshold: config.threshold(),
        refined_paths: refined,
        changed_paths: changed,
        changed_fraction: changed as f64 / paths as f64,
        converged_fraction: if refined == 0 { 1.0 } else { converged as f64 / refined as f64 },
        budget_exhausted: exhausted,
        outcomes,
    })
}

/// Region family instantiated per dimension in sweeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionTemplate {
    /// `x₁ ≥ level`, truncated to a lateral disc of radius `m`.
    HalfSpace { level: f64, m: f64 },
    /// Complement of the ball of `radius` about the origin.
    BallComplement { radius: f64 },
}

impl RegionTemplate {
    pub fn build(&self, n: usize) -> Region {
        match self {
            RegionTemplate::HalfSpace { level, m } => {
                if n == 1 {
                    Region::HalfSpace { dim: 1, level: *level }
                } else {
                    Region::LateralDisc { level: *level, center_perp: vec![0.0; n - 1], radius: *m }
                }
            }
            RegionTemplate::BallComplement { radius } => Region::BallComplement { center: PointN::origin(n), radius: *radius },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub region: RegionTemplate,
    pub horizon: f64,
    pub dt: f64,
    pub truncation: f64,
    /// Tracers per dimension.
    pub budget_per_dim: usize,
    pub adaptive: bool,
}

impl SweepSpec {
    pub fn config(&self, n: usize, f: f64) -> Result<FlowConfig> {
        let budget = self.budget_per_dim * n;
        Ok(FlowConfig {
            dim: n,
            drift: DriftField::constant(f)?,
            truncation: self.truncation,
            horizon: self.horizon,
            dt: self.dt,
            region: self.region.build(n),
            budget,
            refine: if self.adaptive { RefinePolicy::adaptive_for_budget(budget) } else { RefinePolicy::None },
            far_field: None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n: usize,
    pub c: f64,
    pub alpha: f64,
    pub drift: f64,
    pub seed: u64,
    pub estimate: HittingEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub n: usize,
    pub alpha: f64,
    /// Adjacent pairs in increasing `c` where the hit rate went up.
    pub increases: usize,
    pub nonincreasing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub spec: SweepSpec,
    pub base_seed: u64,
    pub paths_per_cell: usize,
    pub cells: Vec<SweepCell>,
    pub trends: Vec<Trend>,
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of a sweep cell; depends only on the base seed and the cell coordinates.
pub fn cell_seed(base: u64, n: usize, c: f64, alpha: f64) -> u64 {
    mix64(mix64(mix64(mix64(base) ^ n as u64) ^ c.to_bits()) ^ alpha.to_bits())
}

/// Hitting estimates over the grid `F ≡ c·n^α`.
pub fn phase_sweep(spec: &SweepSpec, ns: &[usize], cs: &[f64], alphas: &[f64], paths: usize, seed: u64) -> Result<SweepTable> {
    if ns.is_empty() || cs.is_empty() || alphas.is_empty() {
        return invalid("sweep grids must be nonempty");
    }
    if cs.iter().any(|&c| !(c >= 0.0)) {
        return invalid("sweep coefficients c must be nonnegative");
    }
    let mut cells = Vec::new();
    for &n in ns {
        for &alpha in alphas {
            for &c in cs {
                let drift = c * (n as f64).powf(alpha);
                let cfg = spec.config(n, drift)?;
                let s = cell_seed(seed, n, c, alpha);
                let estimate = estimate_hitting_probability(&cfg, paths, s)?;
                cells.push(SweepCell { n, c, alpha, drift, seed: s, estimate });
            }
        }
    }
    let mut trends = Vec::new();
    for &n in ns {
        for &alpha in alphas {
            let mut row: Vec<&SweepCell> = cells.iter().filter(|x| x.n == n && x.alpha == alpha).collect();
            row.sort_by(|a, b| a.c.total_cmp(&b.c));
            let increases = row.windows(2).filter(|w| w[1].estimate.estimate.estimate > w[0].estimate.estimate.estimate).count();
            trends.push(Trend { n, alpha, increases, nonincreasing: increases == 0 });
        }
    }
    Ok(SweepTable { spec: spec.clone(), base_seed: seed, paths_per_cell: paths, cells, trends })
}

impl SweepTable {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "n", "c", "alpha", "drift", "seed", "paths", "hits", "p_hat", "lower", "upper", "threshold", "changed_fraction",
            "converged_fraction",
        ])
        .map_err(csv_err)?;
        for cell in &self.cells {
            let e = &cell.estimate;
            out.write_record(&[
                cell.n.to_string(),
                cell.c.to_string(),
                cell.alpha.to_string(),
                cell.drift.to_string(),
                cell.seed.to_string(),
                e.paths.to_string(),
                e.hits.to_string(),
                e.estimate.estimate.to_string(),
                e.estimate.lower.to_string(),
                e.estimate.upper.to_string(),
                e.threshold.to_string(),
                e.changed_fraction.to_string(),
                e.converged_fraction.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Hitting estimate for the cylinder `a + [0, δ] × B_δ(0)` using the other
/// fields of `base`.
pub fn cylinder_experiment(a: &PointN, delta: f64, base: &FlowConfig, paths: usize, seed: u64) -> Result<HittingEstimate> {
    if !(a.first() > 0.0) {
        return invalid(format!("cylinder corner needs a₁ > 0, got {}", a.first()));
    }
    if !(delta > 0.0) {
        return invalid(format!("cylinder size must be positive, got {delta}"));
    }
    if a.dim() != base.dim {
        return invalid("cylinder corner dimension differs from the flow dimension");
    }
    let cfg = FlowConfig { region: Region::Cylinder { corner: a.clone(), delta }, ..base.clone() };
    estimate_hitting_probability(&cfg, paths, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point_config(horizon: f64) -> FlowConfig {
        FlowConfig {
            truncation: 100.0,
            horizon,
            dt: 1e-3,
            budget: 1,
            refine: RefinePolicy::None,
            ..FlowConfig::new(Region::HalfSpace { dim: 1, level: 1.0 }, DriftField::zero())
        }
    }

    #[test]
    fn estimates_are_consistent() {
        let est = estimate_hitting_probability(&point_config(2.0), 200, 4).unwrap();
        assert!(est.hits <= est.paths);
        assert!(est.estimate.contains(est.estimate.estimate));
        assert_eq!(est.outcomes.len(), 200);
        assert!(estimate_hitting_probability(&point_config(2.0), 0, 4).is_err());
    }

    #[test]
    fn hit_flags_grow_with_horizon() {
        let short = estimate_hitting_probability(&point_config(1.0), 100, 8).unwrap();
        let long = estimate_hitting_probability(&point_config(3.0), 100, 8).unwrap();
        for (a, b) in short.hit_flags().iter().zip(long.hit_flags()) {
            assert!(!a || b);
        }
    }

    #[test]
    fn sweep_cells_are_reproducible() {
        let spec = SweepSpec {
            region: RegionTemplate::BallComplement { radius: 1.0 },
            horizon: 0.3,
            dt: 1e-3,
            truncation: 100.0,
            budget_per_dim: 8,
            adaptive: false,
        };
        let a = phase_sweep(&spec, &[2], &[0.0, 1.0], &[1.0], 6, 3).unwrap();
        let b = phase_sweep(&spec, &[2], &[1.0], &[1.0], 6, 3).unwrap();
        assert_eq!(a.cells[1], b.cells[0]);
        assert_eq!(a.trends.len(), 1);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn cylinder_preconditions() {
        let base = FlowConfig::new(Region::HalfSpace { dim: 2, level: 1.0 }, DriftField::zero());
        assert!(cylinder_experiment(&PointN::new(vec![0.0, 0.0]).unwrap(), 0.5, &base, 1, 1).is_err());
        assert!(cylinder_experiment(&PointN::new(vec![1.0, 0.0]).unwrap(), 0.0, &base, 1, 1).is_err());
    }
}
