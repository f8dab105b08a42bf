//! Subcommand parameters and their execution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use radflow::bessel::{absorption_frequency, BesselSpec};
use radflow::flow::run_flow;
use radflow::harness::{estimate_hitting_probability, phase_sweep, RegionTemplate, SweepSpec};
use radflow::occupation::{ct_identity_check, occupation_tail};
use radflow::pathcover::cover_scaling_study;
use radflow::regime::{
    drift_accumulators, ladder_ensemble, mean_step, step_probability, LadderConfig, LadderKind, ResetMode,
};
use radflow::{DriftField, NoiseStream, RefinePolicy};

use crate::config::{from_value, ConfigError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    Flow,
    Hitprob,
    Sweep,
    Ladder,
    Bessel,
    CtCheck,
    Cover,
    Occupation,
    DriftAccum,
}

impl CommandName {
    pub const ALL: [CommandName; 9] = [
        CommandName::Flow,
        CommandName::Hitprob,
        CommandName::Sweep,
        CommandName::Ladder,
        CommandName::Bessel,
        CommandName::CtCheck,
        CommandName::Cover,
        CommandName::Occupation,
        CommandName::DriftAccum,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CommandName::Flow => "flow",
            CommandName::Hitprob => "hitprob",
            CommandName::Sweep => "sweep",
            CommandName::Ladder => "ladder",
            CommandName::Bessel => "bessel",
            CommandName::CtCheck => "ct-check",
            CommandName::Cover => "cover",
            CommandName::Occupation => "occupation",
            CommandName::DriftAccum => "drift-accum",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            CommandName::Flow => "Simulate one flow realization and record its distance series",
            CommandName::Hitprob => "Estimate the probability that the flowed region hits B",
            CommandName::Sweep => "Hitting probability over a grid of dimensions and drift levels",
            CommandName::Ladder => "Run an ensemble of regime ladders and estimate the step law",
            CommandName::Bessel => "Absorption frequency of a Bessel process at a floor",
            CommandName::CtCheck => "Compare unit-ball exit times with total occupation two dimensions up",
            CommandName::Cover => "Sequential ball-cover counts and their radius scaling",
            CommandName::Occupation => "Tail of total ball occupation time",
            CommandName::DriftAccum => "Lateral and vertical drift accumulated over the first stage",
        }
    }
}

fn half_space() -> RegionTemplate {
    RegionTemplate::HalfSpace { level: 1.0, m: 8.0 }
}

/// A parameter struct holding the flow fields plus command-specific ones.
/// The fields are spelled out (not flattened) so unknown keys stay rejected.
macro_rules! flow_command {
    ($name:ident { $($field:ident : $ty:ty = $default:expr),* $(,)? }) => {
        #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name {
            $(pub $field: $ty,)*
            pub region: RegionTemplate,
            /// `N`; the hit threshold is `1/N`.
            pub truncation: f64,
            pub horizon: f64,
            pub dt: f64,
            pub budget_per_dim: usize,
            pub adaptive: bool,
        }

        impl Default for $name {
            fn default() -> Self {
                Self {
                    $($field: $default,)*
                    region: half_space(),
                    truncation: 100.0,
                    horizon: 10.0,
                    dt: 1e-3,
                    budget_per_dim: 16,
                    adaptive: true,
                }
            }
        }

        impl $name {
            fn spec(&self) -> SweepSpec {
                SweepSpec {
                    region: self.region.clone(),
                    horizon: self.horizon,
                    dt: self.dt,
                    truncation: self.truncation,
                    budget_per_dim: self.budget_per_dim,
                    adaptive: self.adaptive,
                }
            }
        }
    };
}

flow_command!(FlowRun { n: usize = 2, f: f64 = 0.3, path: u64 = 0, stride: usize = 100 });
flow_command!(HitprobRun { n: usize = 1, f: f64 = 0.0, paths: usize = 1000 });
flow_command!(SweepRun {
    ns: Vec<usize> = vec![2, 4],
    cs: Vec<f64> = vec![0.1, 1.0, 10.0],
    alphas: Vec<f64> = vec![1.0],
    paths: usize = 200,
});

fn check_flow(spec: &SweepSpec, n: usize, f: f64) -> Result<(), ConfigError> {
    check(n >= 1, "params.n: must be at least 1")?;
    check(spec.budget_per_dim >= 1, "params.budget_per_dim: must be at least 1")?;
    spec.config(n, f).and_then(|c| c.validate()).map_err(|e| ConfigError(format!("params: {e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderRun {
    pub kind: LadderKind,
    pub n: usize,
    pub f: f64,
    pub paths: usize,
    pub stages: usize,
    pub dt: f64,
    pub truncation: f64,
    pub budget_per_dim: usize,
    pub lateral_radius: f64,
    pub stage_horizon: f64,
    pub adaptive: bool,
    pub reset: ResetMode,
    pub substeps: usize,
}

impl Default for LadderRun {
    fn default() -> Self {
        let base = LadderConfig::new(2, DriftField::zero());
        Self {
            kind: LadderKind::Hitting,
            n: 2,
            f: 0.0,
            paths: 1000,
            stages: 1,
            dt: base.dt,
            truncation: base.truncation,
            budget_per_dim: 64,
            lateral_radius: base.lateral_radius,
            stage_horizon: base.stage_horizon,
            adaptive: true,
            reset: base.reset,
            substeps: base.substeps,
        }
    }
}

impl LadderRun {
    fn config(&self) -> Result<LadderConfig, radflow::Error> {
        let base = LadderConfig::new(self.n, DriftField::constant(self.f)?);
        let budget = self.budget_per_dim * self.n;
        Ok(LadderConfig {
            max_stages: self.stages,
            dt: self.dt,
            truncation: self.truncation,
            budget,
            lateral_radius: self.lateral_radius,
            stage_horizon: self.stage_horizon,
            refine: match base.refine {
                RefinePolicy::Adaptive { ratio, max_level, below, .. } if self.adaptive => {
                    RefinePolicy::Adaptive { ratio, max_level, max_tracers: 4 * budget, below }
                }
                _ => RefinePolicy::None,
            },
            reset: self.reset,
            substeps: self.substeps,
            ..base
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BesselRun {
    pub dimension: f64,
    pub start: f64,
    pub horizon: f64,
    pub dt: f64,
    pub floor: f64,
    pub paths: u64,
}

impl Default for BesselRun {
    fn default() -> Self {
        Self { dimension: 1.0, start: 1.0, horizon: 10.0, dt: 1e-4, floor: 1e-3, paths: 10_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CtRun {
    pub n: usize,
    pub samples: usize,
    pub dt: f64,
}

impl Default for CtRun {
    fn default() -> Self {
        Self { n: 2, samples: 10_000, dt: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverRun {
    pub ns: Vec<usize>,
    pub horizon: f64,
    /// Radii are `e^k`.
    pub ks: Vec<u32>,
    pub paths: usize,
    pub dt: f64,
}

impl Default for CoverRun {
    fn default() -> Self {
        Self { ns: vec![4, 16, 64], horizon: 20.0, ks: vec![1, 2], paths: 100, dt: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccupationRun {
    pub n: usize,
    pub r: f64,
    /// Thresholds for `L/r²`; empty means ten points up to five times the mean.
    pub s: Vec<f64>,
    pub trials: usize,
    pub dt: f64,
}

impl Default for OccupationRun {
    fn default() -> Self {
        Self { n: 4, r: 1.0, s: Vec::new(), trials: 4000, dt: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftAccumRun {
    pub n: usize,
    /// Drift is `F = c_star·n^{3/4}`.
    pub c_star: f64,
    pub paths: usize,
    pub dt: f64,
    pub budget: usize,
    /// Lateral test point; empty means the origin.
    pub p_perp: Vec<f64>,
}

impl Default for DriftAccumRun {
    fn default() -> Self {
        Self { n: 16, c_star: 0.05, paths: 1000, dt: 1e-3, budget: 128, p_perp: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Task {
    Flow(FlowRun),
    Hitprob(HitprobRun),
    Sweep(SweepRun),
    Ladder(LadderRun),
    Bessel(BesselRun),
    CtCheck(CtRun),
    Cover(CoverRun),
    Occupation(OccupationRun),
    DriftAccum(DriftAccumRun),
}

/// A named output file.
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

fn artifact(name: &str, bytes: Vec<u8>) -> Artifact {
    Artifact { name: name.to_string(), bytes }
}

fn json_artifact<T: Serialize>(name: &str, v: &T) -> Result<Artifact, radflow::Error> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    Ok(artifact(name, bytes))
}

fn jsonl_artifact<T: Serialize>(name: &str, items: &[T]) -> Result<Artifact, radflow::Error> {
    let mut bytes = Vec::new();
    for item in items {
        serde_json::to_writer(&mut bytes, item)?;
        bytes.push(b'\n');
    }
    Ok(artifact(name, bytes))
}

fn csv_artifact(
    name: &str,
    write: impl FnOnce(&mut Vec<u8>) -> Result<(), radflow::Error>,
) -> Result<Artifact, radflow::Error> {
    let mut bytes = Vec::new();
    write(&mut bytes)?;
    Ok(artifact(name, bytes))
}

fn check(ok: bool, msg: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError(msg.to_string()))
    }
}

impl Task {
    pub fn name(&self) -> CommandName {
        match self {
            Task::Flow(_) => CommandName::Flow,
            Task::Hitprob(_) => CommandName::Hitprob,
            Task::Sweep(_) => CommandName::Sweep,
            Task::Ladder(_) => CommandName::Ladder,
            Task::Bessel(_) => CommandName::Bessel,
            Task::CtCheck(_) => CommandName::CtCheck,
            Task::Cover(_) => CommandName::Cover,
            Task::Occupation(_) => CommandName::Occupation,
            Task::DriftAccum(_) => CommandName::DriftAccum,
        }
    }

    pub fn defaults(name: CommandName) -> Task {
        Task::from_params(name, json!({})).expect("defaults are valid")
    }

    pub fn from_params(name: CommandName, params: Value) -> Result<Task, ConfigError> {
        let p = "params";
        Ok(match name {
            CommandName::Flow => Task::Flow(from_value(params, p)?),
            CommandName::Hitprob => Task::Hitprob(from_value(params, p)?),
            CommandName::Sweep => Task::Sweep(from_value(params, p)?),
            CommandName::Ladder => Task::Ladder(from_value(params, p)?),
            CommandName::Bessel => Task::Bessel(from_value(params, p)?),
            CommandName::CtCheck => Task::CtCheck(from_value(params, p)?),
            CommandName::Cover => Task::Cover(from_value(params, p)?),
            CommandName::Occupation => Task::Occupation(from_value(params, p)?),
            CommandName::DriftAccum => Task::DriftAccum(from_value(params, p)?),
        })
    }

    pub fn params_value(&self) -> Value {
        let v = match self {
            Task::Flow(p) => serde_json::to_value(p),
            Task::Hitprob(p) => serde_json::to_value(p),
            Task::Sweep(p) => serde_json::to_value(p),
            Task::Ladder(p) => serde_json::to_value(p),
            Task::Bessel(p) => serde_json::to_value(p),
            Task::CtCheck(p) => serde_json::to_value(p),
            Task::Cover(p) => serde_json::to_value(p),
            Task::Occupation(p) => serde_json::to_value(p),
            Task::DriftAccum(p) => serde_json::to_value(p),
        };
        v.expect("parameters serialize")
    }

    /// Checks that do not need the library; the library re-validates on use.
    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            Task::Flow(p) => check_flow(&p.spec(), p.n, p.f),
            Task::Hitprob(p) => {
                check(p.paths >= 1, "params.paths: must be at least 1")?;
                check_flow(&p.spec(), p.n, p.f)
            }
            Task::Sweep(p) => {
                check(!p.ns.is_empty() && !p.cs.is_empty() && !p.alphas.is_empty(), "params: ns, cs and alphas must be non-empty")?;
                check(p.paths >= 1, "params.paths: must be at least 1")?;
                p.ns.iter().try_for_each(|&n| check_flow(&p.spec(), n, 0.0))
            }
            Task::Ladder(p) => {
                check(p.n >= 1 && p.paths >= 1 && p.stages >= 1, "params: n, paths and stages must be at least 1")?;
                p.config().map(|_| ()).map_err(|e| ConfigError(format!("params.f: {e}")))
            }
            Task::Bessel(p) => {
                check(p.paths >= 1, "params.paths: must be at least 1")?;
                bessel_spec(p).validate().map_err(|e| ConfigError(format!("params: {e}")))
            }
            Task::CtCheck(p) => check(p.n >= 1 && p.samples >= 2 && p.dt > 0.0, "params: need n ≥ 1, samples ≥ 2, dt > 0"),
            Task::Cover(p) => check(!p.ns.is_empty() && !p.ks.is_empty() && p.paths >= 1, "params: ns, ks and paths must be non-empty"),
            Task::Occupation(p) => check(p.n >= 4 && p.r > 0.0 && p.trials >= 1, "params: need n ≥ 4, r > 0, trials ≥ 1"),
            Task::DriftAccum(p) => {
                check(p.n >= 2 && p.paths >= 1, "params: need n ≥ 2 and paths ≥ 1")?;
                check(p.p_perp.is_empty() || p.p_perp.len() == p.n - 1, "params.p_perp: needs n − 1 coordinates")?;
                check(p.c_star >= 0.0 && p.c_star.is_finite(), "params.c_star: must be finite and ≥ 0")
            }
        }
    }

    /// Runs the experiment and returns its output files.
    pub fn run(&self, seed: u64) -> Result<Vec<Artifact>, radflow::Error> {
        match self {
            Task::Flow(p) => {
                let cfg = p.spec().config(p.n, p.f)?;
                let res = run_flow(&cfg, &NoiseStream::uniform(seed, p.path, cfg.dim, cfg.dt))?;
                Ok(vec![json_artifact("flow.json", &res.record(p.stride))?])
            }
            Task::Hitprob(p) => {
                let cfg = p.spec().config(p.n, p.f)?;
                let est = estimate_hitting_probability(&cfg, p.paths, seed)?;
                Ok(vec![json_artifact("hitprob.json", &est)?, jsonl_artifact("paths.jsonl", &est.outcomes)?])
            }
            Task::Sweep(p) => {
                let table = phase_sweep(&p.spec(), &p.ns, &p.cs, &p.alphas, p.paths, seed)?;
                Ok(vec![csv_artifact("sweep.csv", |b| table.write_csv(b))?, json_artifact("sweep.json", &table)?])
            }
            Task::Ladder(p) => {
                let cfg = p.config()?;
                let ladders = ladder_ensemble(p.kind, &cfg, p.paths, seed)?;
                let (mean, stderr) = mean_step(&ladders);
                let summary = json!({
                    "config": cfg,
                    "kind": p.kind,
                    "paths": ladders.len(),
                    "step_probability": step_probability(&ladders).ok(),
                    "mean_step": mean,
                    "mean_step_stderr": stderr,
                    "bookkeeping_exact": ladders.iter().all(|l| l.bookkeeping_exact()),
                });
                Ok(vec![json_artifact("ladder.json", &summary)?, jsonl_artifact("ladders.jsonl", &ladders)?])
            }
            Task::Bessel(p) => {
                let spec = bessel_spec(p);
                let freq = absorption_frequency(&spec, p.paths, seed)?;
                Ok(vec![json_artifact("bessel.json", &json!({ "spec": spec, "paths": p.paths, "absorbed": freq }))?])
            }
            Task::CtCheck(p) => {
                let s = ct_identity_check(p.n, p.samples, p.dt, seed)?;
                Ok(vec![json_artifact("ct.json", &s)?, csv_artifact("ct.csv", |b| s.write_csv(b))?])
            }
            Task::Cover(p) => {
                let table = cover_scaling_study(&p.ns, p.horizon, &p.ks, p.paths, p.dt, seed)?;
                Ok(vec![csv_artifact("cover.csv", |b| table.write_csv(b))?, json_artifact("cover.json", &table)?])
            }
            Task::Occupation(p) => {
                let grid = if p.s.is_empty() {
                    let mean = 1.0 / (p.n as f64 - 3.0);
                    (1..=10).map(|j| mean * j as f64 / 2.0).collect()
                } else {
                    p.s.clone()
                };
                let curve = occupation_tail(p.n, p.r, &grid, p.trials, p.dt, seed)?;
                Ok(vec![csv_artifact("tail.csv", |b| curve.write_csv(b))?, json_artifact("tail.json", &curve)?])
            }
            Task::DriftAccum(p) => {
                let f = p.c_star * (p.n as f64).powf(0.75);
                let cfg = LadderConfig { budget: p.budget, dt: p.dt, ..LadderConfig::new(p.n, DriftField::constant(f)?) };
                let p_perp = if p.p_perp.is_empty() { vec![0.0; p.n - 1] } else { p.p_perp.clone() };
                let accs = (0..p.paths as u64)
                    .into_par_iter()
                    .map(|i| drift_accumulators(&cfg, &NoiseStream::uniform(seed, i, p.n, cfg.dt), &p_perp))
                    .collect::<Result<Vec<_>, _>>()?;
                let within = accs.iter().filter(|a| a.vertical <= 0.125).count();
                let summary = json!({
                    "config": cfg,
                    "f": f,
                    "paths": accs.len(),
                    "vertical_at_most_one_eighth": within,
                    "fraction": within as f64 / accs.len() as f64,
                    "resolved": accs.iter().filter(|a| a.resolved).count(),
                });
                Ok(vec![json_artifact("drift.json", &summary)?, jsonl_artifact("accumulators.jsonl", &accs)?])
            }
        }
    }
}

fn bessel_spec(p: &BesselRun) -> BesselSpec {
    BesselSpec { dimension: p.dimension, start: p.start, horizon: p.horizon, dt: p.dt, floor: p.floor }
}
