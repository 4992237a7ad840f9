//! Miss and hit delay as a function of content size.

use std::io;

use serde::Serialize;
use thiserror::Error;

use crate::controller::Mode;
use crate::exec::{self, Execution};
use crate::netmodel::Time;

use super::config::{ContentDecl, NodeRole, RequestDecl, ScenarioConfig};
use super::metrics::ServedBy;
use super::run::{run, RunError};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("no sizes given")]
    NoSizes,
    #[error("scenario needs a client and a server")]
    NoEndpoints,
    #[error("size {size}: {source}")]
    Run { size: usize, source: RunError },
    #[error("size {size}: {what} never completed")]
    Incomplete { size: usize, what: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SweepRow {
    pub size: usize,
    pub miss_delay: Time,
    pub hit_delay: Time,
    pub direct_delay: Time,
    /// The second request was answered by a cache.
    pub hit: bool,
    /// The hit was not faster than the miss.
    pub flagged: bool,
    /// Invariant violations across both runs.
    pub violations: usize,
}

/// Time left between the miss completing and the hit starting, so the cache
/// can finalize and acknowledge the copy.
fn settle_gap(cfg: &ScenarioConfig) -> Time {
    cfg.policy.grace + 1
}

fn endpoints(cfg: &ScenarioConfig) -> Option<(String, String)> {
    if let Some(r) = cfg.workload.iter().find(|r| r.method == "GET") {
        return Some((r.client.clone(), r.server.clone()));
    }
    let first = |role| cfg.nodes.iter().find(|n| n.role == role).map(|n| n.name.clone());
    Some((first(NodeRole::Client)?, first(NodeRole::Server)?))
}

/// The scenario's topology and policy with the workload replaced by a miss
/// followed by a repeat of the same `size`-byte content.
pub fn sweep_config(cfg: &ScenarioConfig, size: usize, mode: Mode) -> Option<ScenarioConfig> {
    let (client, server) = endpoints(cfg)?;
    let path = format!("/sweep-{size}.bin");
    let mut out = cfg.clone();
    out.name = format!("{}-{size}", cfg.name);
    out.policy.mode = mode;
    out.contents.retain(|c| !(c.server == server && c.path == path));
    out.contents.push(ContentDecl {
        line: 0,
        server: server.clone(),
        path: path.clone(),
        size,
    });
    let request = |label: &str, after: Option<String>| RequestDecl {
        line: 0,
        label: label.into(),
        client: client.clone(),
        server: server.clone(),
        path: path.clone(),
        at: 0,
        gap: if after.is_some() { settle_gap(cfg) } else { 0 },
        after,
        range: None,
        method: "GET".into(),
        body: 0,
    };
    out.workload = vec![request("miss", None), request("hit", Some("miss".into()))];
    Some(out)
}

fn one(cfg: &ScenarioConfig, size: usize) -> Result<SweepRow, SweepError> {
    let err = |source| SweepError::Run { size, source };
    let cf = sweep_config(cfg, size, Mode::ContentFlow).ok_or(SweepError::NoEndpoints)?;
    let direct = sweep_config(cfg, size, Mode::Direct).ok_or(SweepError::NoEndpoints)?;
    let report = run(&cf).map_err(err)?;
    let base = run(&direct).map_err(err)?;
    let delay = |r: &super::run::RunReport, label, what| {
        r.metrics
            .request(label)
            .and_then(|m| m.delay())
            .ok_or(SweepError::Incomplete { size, what })
    };
    let miss_delay = delay(&report, "miss", "miss")?;
    let hit_delay = delay(&report, "hit", "hit")?;
    let direct_delay = delay(&base, "miss", "direct request")?;
    let hit = report
        .metrics
        .request("hit")
        .is_some_and(|m| m.served_by == ServedBy::Cache);
    Ok(SweepRow {
        size,
        miss_delay,
        hit_delay,
        direct_delay,
        hit,
        flagged: !hit || hit_delay >= miss_delay,
        violations: report.violations.len() + base.violations.len(),
    })
}

/// One row per size, in the order given.
pub fn sweep(cfg: &ScenarioConfig, sizes: &[usize], execution: Execution) -> Result<Vec<SweepRow>, SweepError> {
    if sizes.is_empty() {
        return Err(SweepError::NoSizes);
    }
    endpoints(cfg).ok_or(SweepError::NoEndpoints)?;
    exec::map(execution, sizes.to_vec(), |size| one(cfg, size))
        .into_iter()
        .collect()
}

pub fn write_sweep_csv<W: io::Write>(rows: &[SweepRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record([
            "size",
            "miss_delay",
            "hit_delay",
            "direct_delay",
            "hit",
            "flagged",
            "violations",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
