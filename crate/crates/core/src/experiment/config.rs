use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ExperimentError;
use crate::cost::{ServerTiming, TimeModel};
use crate::domain::{ClusterSpec, ModelSpec, ServerSpec};
use crate::placement::Strategy;
use crate::sim::{MigrationSettings, Scenario, SimConfig, WorkloadSpec};
use crate::stats::{ActivationEvent, ActivationStats, CountingMode};

/// Seeds for every random stream of a run. Missing seeds are 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    /// Overrides the workload document's own seed when set.
    pub workload: Option<u64>,
    pub placement: u64,
    pub profile: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTimeModel {
    servers: Vec<ServerTiming>,
    #[serde(default)]
    non_moe_seconds: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    cluster: Value,
    model: Value,
    workload: Value,
    #[serde(default)]
    shift: Option<Value>,
    #[serde(default)]
    strategy: Option<Strategy>,
    #[serde(default)]
    strategies: Vec<Strategy>,
    time_model: RawTimeModel,
    #[serde(default)]
    migration: MigrationSettings,
    #[serde(default)]
    stats_tick: Option<f64>,
    #[serde(default)]
    counting: CountingMode,
    #[serde(default)]
    seeds: Seeds,
    #[serde(default)]
    stats: Option<PathBuf>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    ratio_window: Option<f64>,
}

/// Shorthand cluster document: every link shares one bandwidth and latency.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct UniformCluster {
    servers: Vec<ServerSpec>,
    /// Bytes per second.
    bandwidth: f64,
    #[serde(default)]
    latency: f64,
}

/// A fully resolved experiment: every referenced file loaded and checked.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub cluster: ClusterSpec,
    pub model: ModelSpec,
    pub workload: WorkloadSpec,
    /// Second workload phase appended after the first.
    pub shift: Option<WorkloadSpec>,
    pub strategy: Strategy,
    /// When non-empty, `simulate` and `sweep` run each of these.
    pub strategies: Vec<Strategy>,
    pub timings: Vec<ServerTiming>,
    pub non_moe_seconds: f64,
    pub migration: MigrationSettings,
    pub stats_tick: f64,
    pub counting: CountingMode,
    pub seeds: Seeds,
    /// Activation trace used instead of a generated profile.
    pub stats_trace: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Window of the local-ratio time series, seconds.
    pub ratio_window: f64,
}

fn config_err(context: &str, message: impl ToString) -> ExperimentError {
    ExperimentError::Config {
        context: context.to_string(),
        message: message.to_string(),
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String, ExperimentError> {
    fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json(path: &Path) -> Result<Value, ExperimentError> {
    serde_json::from_str(&read_file(path)?).map_err(|e| config_err(&path.display().to_string(), e))
}

/// A sub-document given inline or as a path relative to `base`.
fn resolve_value(value: Value, base: &Path) -> Result<Value, ExperimentError> {
    match value {
        Value::String(p) => read_json(&base.join(p)),
        v => Ok(v),
    }
}

pub fn parse_cluster(value: Value) -> Result<ClusterSpec, ExperimentError> {
    let cluster = if value.get("link_bandwidth").is_some() {
        serde_json::from_value::<ClusterSpec>(value).map_err(|e| config_err("cluster", e))?
    } else {
        let u: UniformCluster = serde_json::from_value(value).map_err(|e| config_err("cluster", e))?;
        ClusterSpec::uniform(u.servers, u.bandwidth, u.latency).map_err(|e| config_err("cluster", e))?
    };
    cluster.validate().map_err(|e| config_err("cluster", e))?;
    Ok(cluster)
}

pub fn parse_model(value: Value) -> Result<ModelSpec, ExperimentError> {
    let model: ModelSpec = serde_json::from_value(value).map_err(|e| config_err("model", e))?;
    model.validate().map_err(|e| config_err("model", e))?;
    Ok(model)
}

pub fn parse_workload(value: Value, model: &ModelSpec, context: &str) -> Result<WorkloadSpec, ExperimentError> {
    let w: WorkloadSpec = serde_json::from_value(value).map_err(|e| config_err(context, e))?;
    w.validate(model).map_err(|e| config_err(context, e))?;
    Ok(w)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = read_file(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    /// Parse a config document; relative paths resolve against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self, ExperimentError> {
        let value: Value = serde_json::from_str(text).map_err(|e| config_err("config", e))?;
        Self::from_value(value, base)
    }

    pub fn from_value(value: Value, base: &Path) -> Result<Self, ExperimentError> {
        let raw: RawConfig = serde_json::from_value(value).map_err(|e| config_err("config", e))?;
        let cluster = parse_cluster(resolve_value(raw.cluster, base)?)?;
        let model = parse_model(resolve_value(raw.model, base)?)?;
        let workload = parse_workload(resolve_value(raw.workload, base)?, &model, "workload")?;
        let shift = raw
            .shift
            .map(|v| parse_workload(resolve_value(v, base)?, &model, "shift"))
            .transpose()?;
        let stats_trace = raw.stats.map(|p| base.join(p));
        if let Some(p) = &stats_trace {
            if !p.is_file() {
                return Err(ExperimentError::Io {
                    path: p.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "stats trace not found"),
                });
            }
        }
        let cfg = Self {
            cluster,
            model,
            workload,
            shift,
            strategy: raw.strategy.unwrap_or(Strategy::Ours),
            strategies: raw.strategies,
            timings: raw.time_model.servers,
            non_moe_seconds: raw.time_model.non_moe_seconds,
            migration: raw.migration,
            stats_tick: raw.stats_tick.unwrap_or(30.0),
            counting: raw.counting,
            seeds: raw.seeds,
            stats_trace,
            output_dir: base.join(raw.output_dir.unwrap_or_else(|| PathBuf::from("out"))),
            ratio_window: raw.ratio_window.unwrap_or(60.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let n = self.cluster.num_servers();
        for (name, w) in std::iter::once(("workload", &self.workload)).chain(self.shift.iter().map(|w| ("shift", w))) {
            if w.servers.len() != n {
                return Err(config_err(
                    name,
                    format!("has {} server entries, cluster has {n}", w.servers.len()),
                ));
            }
        }
        if self.timings.len() != 1 && self.timings.len() != n {
            return Err(config_err(
                "time_model.servers",
                format!("needs 1 or {n} entries, got {}", self.timings.len()),
            ));
        }
        self.time_model()?;
        if !(self.non_moe_seconds >= 0.0) {
            return Err(config_err("time_model.non_moe_seconds", "must be >= 0"));
        }
        if !(self.migration.interval > 0.0) {
            return Err(config_err("migration.interval", "must be > 0"));
        }
        if !(self.stats_tick > 0.0) {
            return Err(config_err("stats_tick", "must be > 0"));
        }
        if !(self.ratio_window > 0.0) {
            return Err(config_err("ratio_window", "must be > 0"));
        }
        Ok(())
    }

    /// Per-server timings; a single entry applies to every server.
    pub fn server_timings(&self) -> Vec<ServerTiming> {
        if self.timings.len() == 1 {
            vec![self.timings[0]; self.cluster.num_servers()]
        } else {
            self.timings.clone()
        }
    }

    pub fn time_model(&self) -> Result<TimeModel, ExperimentError> {
        TimeModel::new(&self.cluster, self.server_timings()).map_err(|e| config_err("time_model", e))
    }

    /// Strategies to run: the list when given, otherwise the single one.
    pub fn run_strategies(&self) -> Vec<Strategy> {
        if self.strategies.is_empty() {
            vec![self.strategy]
        } else {
            self.strategies.clone()
        }
    }

    pub fn effective_workload(&self) -> WorkloadSpec {
        match self.seeds.workload {
            Some(s) => self.workload.reseeded(s),
            None => self.workload.clone(),
        }
    }

    pub fn sim_config(&self, strategy: Strategy) -> SimConfig {
        SimConfig {
            strategy,
            placement_seed: self.seeds.placement,
            migration: self.migration,
            stats_tick: self.stats_tick,
            non_moe_seconds: self.non_moe_seconds,
            counting: self.counting,
        }
    }

    pub fn scenario(&self, strategy: Strategy) -> Scenario {
        Scenario {
            cluster: self.cluster.clone(),
            model: self.model.clone(),
            workload: self.effective_workload(),
            timings: self.server_timings(),
            sim: self.sim_config(strategy),
            profile_seed: self.seeds.profile,
        }
    }

    /// Statistics that seed the initial placement: the configured trace,
    /// or a profiling run of the first workload phase.
    pub fn profile_stats(&self) -> Result<ActivationStats, ExperimentError> {
        match &self.stats_trace {
            Some(p) => read_trace(p, self.cluster.num_servers(), &self.model, self.counting),
            None => Ok(self.scenario(self.strategy).profile_stats()?),
        }
    }

    /// Set every seed at once.
    pub fn set_seed(&mut self, seed: u64) {
        self.seeds = Seeds {
            workload: Some(seed),
            placement: seed,
            profile: seed,
        };
    }

    /// Replace every off-diagonal link bandwidth.
    pub fn set_bandwidth(&mut self, bytes_per_second: f64) -> Result<(), ExperimentError> {
        let n = self.cluster.num_servers();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    self.cluster.link_bandwidth[i][j] = bytes_per_second;
                }
            }
        }
        self.cluster.validate().map_err(|e| config_err("cluster", e))
    }

    /// Spread `total` GPUs over the servers as evenly as possible, lower
    /// ids first, each a copy of the server's first GPU.
    pub fn set_total_gpus(&mut self, total: usize) -> Result<(), ExperimentError> {
        let n = self.cluster.num_servers();
        if total < n {
            return Err(config_err("gpus", format!("{total} GPUs cannot cover {n} servers")));
        }
        for (i, s) in self.cluster.servers.iter_mut().enumerate() {
            let count = total / n + usize::from(i < total % n);
            let template = s.gpus[0].clone();
            s.gpus = vec![template; count];
        }
        Ok(())
    }

    /// Set the mean inter-arrival time of every server in every phase.
    pub fn set_interarrival(&mut self, seconds: f64) -> Result<(), ExperimentError> {
        if !(seconds > 0.0) {
            return Err(config_err("arrival", "mean inter-arrival must be > 0"));
        }
        for w in std::iter::once(&mut self.workload).chain(self.shift.iter_mut()) {
            for s in &mut w.servers {
                s.mean_interarrival = seconds;
            }
        }
        Ok(())
    }
}

/// Parse one JSON-lines activation trace into counters. Errors carry the
/// 1-based line number.
pub fn read_trace(
    path: &Path,
    num_servers: usize,
    model: &ModelSpec,
    counting: CountingMode,
) -> Result<ActivationStats, ExperimentError> {
    let text = read_file(path)?;
    parse_trace(&text, path, num_servers, model, counting)
}

pub fn parse_trace(
    text: &str,
    path: &Path,
    num_servers: usize,
    model: &ModelSpec,
    counting: CountingMode,
) -> Result<ActivationStats, ExperimentError> {
    let mut stats = ActivationStats::with_mode(num_servers, model, counting);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| ExperimentError::Trace {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let ev: ActivationEvent = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        stats.ingest(&ev).map_err(|e| err(e.to_string()))?;
    }
    Ok(stats)
}
