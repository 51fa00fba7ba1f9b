use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use serde_json::Value;

use super::config::{parse_cluster, parse_model, parse_trace, parse_workload, read_file, ExperimentConfig, Seeds};
use super::format::{sig6, to_json_line, to_json_pretty};
use super::ExperimentError;
use crate::cost::proxy_cost;
use crate::domain::{validate_placement, Placement, PlacementWire, Violation};
use crate::placement::{
    brute_force_optimal, check_oracle_size, place, place_ours, ExpertCounts, Strategy, UtilityReport,
};
use crate::sim::{run, shift_requests, Metrics, Summary};
use crate::stats::CountingMode;

fn write(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    let io = |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, contents).map_err(io)
}

#[derive(Debug, Clone, Serialize)]
pub struct PlaceOutput {
    pub strategy: Strategy,
    pub placement: PlacementWire,
    pub proxy_cost: f64,
    pub utility: UtilityReport,
    /// Per-server per-layer counts, for the entropy-guided strategy.
    pub counts: Option<ExpertCounts>,
}

/// Place with the configured strategy on the profile statistics and write
/// `placement.json` and `report.json` to `out`.
pub fn cmd_place(cfg: &ExperimentConfig, out: &Path) -> Result<PlaceOutput, ExperimentError> {
    let stats = cfg.profile_stats()?;
    let (placement, counts) = match cfg.strategy {
        Strategy::Ours => {
            let r = place_ours(&cfg.cluster, &cfg.model, &stats)?;
            (r.placement, Some(r.counts))
        }
        s => (place(s, &cfg.cluster, &cfg.model, &stats, cfg.seeds.placement)?, None),
    };
    let report = validate_placement(&placement, &cfg.cluster, &cfg.model)
        .map_err(|e| ExperimentError::Internal(e.to_string()))?;
    if !report.is_ok() {
        return Err(ExperimentError::Internal(format!(
            "{} produced an invalid placement: {:?}",
            cfg.strategy, report.violations[0]
        )));
    }
    let budgets: Vec<usize> = match &counts {
        Some(c) => c.budgets(),
        None => (0..cfg.cluster.num_servers())
            .map(|n| (0..cfg.model.num_layers).map(|l| placement.server_set(n, l).len()).sum())
            .collect(),
    };
    let oracle_total = match check_oracle_size(&budgets, &cfg.model) {
        Ok(()) => Some(brute_force_optimal(&budgets, &stats, &cfg.model)?.total_utility),
        Err(_) => None,
    };
    let output = PlaceOutput {
        strategy: cfg.strategy,
        placement: placement.to_wire(),
        proxy_cost: proxy_cost(&placement, &stats),
        utility: UtilityReport::build(&placement, &stats, &budgets, oracle_total),
        counts,
    };
    write(&out.join("placement.json"), &to_json_pretty(&output.placement))?;
    write(&out.join("report.json"), &to_json_pretty(&output))?;
    Ok(output)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseSummary {
    pub phase: usize,
    pub requests: usize,
    pub mean_latency: f64,
    pub local_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
struct SummaryDoc<'a> {
    strategy: Strategy,
    migration_enabled: bool,
    seeds: Seeds,
    #[serde(flatten)]
    summary: &'a Summary,
    #[serde(skip_serializing_if = "Option::is_none")]
    phases: Option<Vec<PhaseSummary>>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub strategy: Strategy,
    pub dir: PathBuf,
    pub summary: Summary,
    pub metrics: Metrics,
}

/// Simulate one strategy under `cfg`, including the shift phase if any.
pub fn run_metrics(cfg: &ExperimentConfig, strategy: Strategy) -> Result<Metrics, ExperimentError> {
    let scenario = cfg.scenario(strategy);
    let requests = match &cfg.shift {
        Some(b) => {
            let b = match cfg.seeds.workload {
                Some(s) => b.reseeded(s.wrapping_add(1)),
                None => b.clone(),
            };
            shift_requests(&scenario.workload, &b, &cfg.model)?.0
        }
        None => scenario.requests()?,
    };
    let profile = cfg.profile_stats()?;
    Ok(run(
        &cfg.cluster,
        &cfg.model,
        &profile,
        &requests,
        cfg.time_model()?,
        &scenario.sim,
    )?)
}

/// Write `requests.csv`, `summary.json`, `migrations.jsonl` and
/// `local_ratio.csv` into `dir`.
pub fn write_metrics(
    dir: &Path,
    cfg: &ExperimentConfig,
    strategy: Strategy,
    metrics: &Metrics,
) -> Result<Summary, ExperimentError> {
    let mut csv = String::from("id,server,arrival,completion,latency,remote_invocations\n");
    for r in &metrics.requests {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.id,
            r.server,
            sig6(r.arrival),
            sig6(r.completion),
            sig6(r.latency),
            r.remote_invocations
        );
    }
    write(&dir.join("requests.csv"), &csv)?;

    let summary = metrics.summary();
    let phases = cfg.shift.as_ref().map(|_| {
        (0..2)
            .map(|phase| PhaseSummary {
                phase,
                requests: metrics.requests.iter().filter(|r| r.phase == phase).count(),
                mean_latency: metrics.phase_mean_latency(phase),
                local_ratio: metrics.phase_local_ratio(phase),
            })
            .collect()
    });
    let doc = SummaryDoc {
        strategy,
        migration_enabled: cfg.migration.enabled,
        seeds: cfg.seeds,
        summary: &summary,
        phases,
    };
    write(&dir.join("summary.json"), &to_json_pretty(&doc))?;

    let ledger: String = metrics.migrations.iter().map(to_json_line).collect();
    write(&dir.join("migrations.jsonl"), &ledger)?;

    let mut ratio = String::from("start,end,local_ratio\n");
    for p in metrics.local_compute_ratio(cfg.ratio_window) {
        let _ = writeln!(ratio, "{},{},{}", sig6(p.start), sig6(p.end), sig6(p.ratio));
    }
    write(&dir.join("local_ratio.csv"), &ratio)?;
    Ok(summary)
}

/// Simulate every configured strategy. With a strategy list each run gets
/// its own subdirectory of `out`; a single strategy writes into `out`.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<RunOutput>, ExperimentError> {
    let per_dir = !cfg.strategies.is_empty();
    cfg.run_strategies()
        .into_iter()
        .map(|strategy| {
            let dir = if per_dir {
                out.join(strategy.name())
            } else {
                out.to_path_buf()
            };
            let metrics = run_metrics(cfg, strategy)?;
            let summary = write_metrics(&dir, cfg, strategy, &metrics)?;
            Ok(RunOutput {
                strategy,
                dir,
                summary,
                metrics,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Total GPU count, spread evenly over the servers.
    Gpus,
    /// Link bandwidth in Mbps.
    Bandwidth,
    /// Mean Poisson inter-arrival seconds.
    Arrival,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Gpus => "gpus",
            Axis::Bandwidth => "bandwidth",
            Axis::Arrival => "arrival",
        }
    }

    /// `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig, ExperimentError> {
        let mut c = cfg.clone();
        match self {
            Axis::Gpus => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(ExperimentError::Usage(format!("gpu count must be a positive integer, got {value}")));
                }
                c.set_total_gpus(value as usize)?;
            }
            Axis::Bandwidth => c.set_bandwidth(value * 1e6 / 8.0)?,
            Axis::Arrival => c.set_interarrival(value)?,
        }
        Ok(c)
    }
}

impl FromStr for Axis {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gpus" => Ok(Axis::Gpus),
            "bandwidth" => Ok(Axis::Bandwidth),
            "arrival" => Ok(Axis::Arrival),
            _ => Err(ExperimentError::Usage(format!(
                "unknown axis `{s}` (expected gpus, bandwidth or arrival)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: f64,
    pub strategy: Strategy,
    pub requests: usize,
    pub mean_latency: f64,
    pub median_latency: f64,
    pub p95_latency: f64,
    pub local_ratio: f64,
    pub migrations: usize,
}

/// Run the config once per axis value (and strategy), in parallel, and
/// write `sweep.csv` plus one run directory per point under `out/runs`.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    axis: Axis,
    values: &[f64],
    out: &Path,
) -> Result<Vec<SweepRow>, ExperimentError> {
    if values.is_empty() {
        return Err(ExperimentError::Usage("sweep needs at least one value".into()));
    }
    let mut points = Vec::new();
    for &v in values {
        let c = axis.apply(cfg, v)?;
        for s in cfg.run_strategies() {
            points.push((v, s, c.clone()));
        }
    }
    let results: Vec<Result<SweepRow, ExperimentError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = points
            .iter()
            .map(|(v, s, c)| {
                scope.spawn(move || {
                    let metrics = run_metrics(c, *s)?;
                    let dir = out.join("runs").join(format!("{}_{}-{}", s.name(), axis.name(), sig6(*v)));
                    let summary = write_metrics(&dir, c, *s, &metrics)?;
                    Ok(SweepRow {
                        axis,
                        value: *v,
                        strategy: *s,
                        requests: summary.requests,
                        mean_latency: summary.global.mean,
                        median_latency: summary.global.median,
                        p95_latency: summary.global.p95,
                        local_ratio: summary.final_local_ratio,
                        migrations: summary.migrations,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(ExperimentError::Internal("sweep worker panicked".into()))))
            .collect()
    });
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut csv = format!(
        "{},strategy,requests,mean_latency,median_latency,p95_latency,local_ratio,migrations\n",
        axis.name()
    );
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            sig6(r.value),
            r.strategy,
            r.requests,
            sig6(r.mean_latency),
            sig6(r.median_latency),
            sig6(r.p95_latency),
            sig6(r.local_ratio),
            r.migrations
        );
    }
    write(&out.join("sweep.csv"), &csv)?;
    Ok(rows)
}

/// Outcome of checking one file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileCheck {
    pub path: PathBuf,
    pub kind: &'static str,
    /// First problem found, if any.
    pub error: Option<String>,
}

impl FileCheck {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

fn detect_kind(path: &Path, value: Option<&Value>) -> &'static str {
    if path.extension().is_some_and(|e| e == "jsonl") {
        return "trace";
    }
    let has = |k: &str| value.is_some_and(|v| v.get(k).is_some());
    if has("time_model") {
        "config"
    } else if has("layers") {
        "placement"
    } else if has("num_layers") {
        "model"
    } else if has("link_bandwidth") || has("bandwidth") {
        "cluster"
    } else if has("servers") {
        "workload"
    } else {
        "unknown"
    }
}

fn check_file(path: &Path, context: Option<&ExperimentConfig>) -> FileCheck {
    let text = match read_file(path) {
        Ok(t) => t,
        Err(e) => {
            return FileCheck {
                path: path.to_path_buf(),
                kind: "unknown",
                error: Some(e.to_string()),
            }
        }
    };
    let value: Option<Value> = serde_json::from_str(&text).ok();
    let kind = detect_kind(path, value.as_ref());
    let result: Result<(), String> = (|| {
        let value = || -> Result<Value, String> {
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
        };
        let need = |what: &str| format!("checking a {what} needs --config for the cluster and model");
        match kind {
            "trace" => match context {
                Some(c) => parse_trace(&text, path, c.cluster.num_servers(), &c.model, CountingMode::Tokens)
                    .map(|_| ())
                    .map_err(|e| e.to_string()),
                None => Err(need("trace")),
            },
            "config" => {
                let base = path.parent().unwrap_or(Path::new("."));
                ExperimentConfig::from_value(value()?, base).map(|_| ()).map_err(|e| e.to_string())
            }
            "cluster" => parse_cluster(value()?).map(|_| ()).map_err(|e| e.to_string()),
            "model" => parse_model(value()?).map(|_| ()).map_err(|e| e.to_string()),
            "workload" => match context {
                Some(c) => parse_workload(value()?, &c.model, "workload").map(|_| ()).map_err(|e| e.to_string()),
                None => Err(need("workload")),
            },
            "placement" => {
                let c = context.ok_or_else(|| need("placement"))?;
                let wire: PlacementWire = serde_json::from_value(value()?).map_err(|e| format!("placement: {e}"))?;
                let p = Placement::from_wire(&wire, &c.cluster, &c.model).map_err(|e| format!("placement: {e}"))?;
                let report = validate_placement(&p, &c.cluster, &c.model).map_err(|e| e.to_string())?;
                match report.violations.first() {
                    None => Ok(()),
                    Some(Violation::Coverage { layer, expert }) => {
                        Err(format!("placement: layer {layer} expert {expert} is not placed"))
                    }
                    Some(Violation::Memory { server, gpu, used, capacity, .. }) => Err(format!(
                        "placement: server {server} gpu {gpu} uses {used} bytes of {capacity}"
                    )),
                }
            }
            _ => {
                value()?;
                Err("cannot tell what kind of document this is".into())
            }
        }
    })();
    FileCheck {
        path: path.to_path_buf(),
        kind,
        error: result.err(),
    }
}

/// Check each file against its schema. Traces, workloads and placements
/// are checked against the cluster and model of `context`.
pub fn cmd_validate(paths: &[PathBuf], context: Option<&ExperimentConfig>) -> Result<Vec<FileCheck>, ExperimentError> {
    if paths.is_empty() && context.is_none() {
        return Err(ExperimentError::Usage("nothing to validate".into()));
    }
    Ok(paths.iter().map(|p| check_file(p, context)).collect())
}
