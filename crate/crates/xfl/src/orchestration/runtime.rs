//! Scheduler and party activities, and the two ways of hosting them.

use std::collections::HashMap;
use std::thread;
use std::time::Duration;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use serde_json::Map;

use super::config::{Stage, TaskConfig};
use super::operators::{run_stage, Metrics, StageCtx};
use super::status::{JsonLines, StageState, StatusLine, TaskStatus};
use super::{OrchestrationError, RunEnv};
use crate::transport::{tcp, Endpoint, InProcHub, TransportError, ABORT_KEY};

pub const STAGE_KEY: &str = "sched/stage";
pub const DONE_KEY: &str = "sched/done";

/// How long the scheduler waits for reports once a stage has been aborted.
const ABORT_GRACE: Duration = Duration::from_secs(30);
const IDLE_POLL: Duration = Duration::from_secs(3600);

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Order {
    Stage { stage: Box<Stage> },
    Finish { ok: bool },
}

#[derive(Debug, Serialize, Deserialize)]
struct Report {
    stage: usize,
    state: StageState,
    metrics: Metrics,
    error: Option<String>,
}

fn encode<T: Serialize>(v: &T) -> Result<Vec<u8>, OrchestrationError> {
    serde_json::to_vec(v).map_err(|e| OrchestrationError::Control(e.to_string()))
}

fn decode<'a, T: Deserialize<'a>>(b: &'a [u8]) -> Result<T, OrchestrationError> {
    serde_json::from_slice(b).map_err(|e| OrchestrationError::Control(e.to_string()))
}

/// Drives the pipeline and records `<workdir>/<session>/status.jsonl`.
pub fn run_scheduler(ep: &Endpoint, cfg: &TaskConfig, env: &RunEnv) -> Result<TaskStatus, OrchestrationError> {
    let log = JsonLines::create(env.session_dir(&cfg.session_id).join("status.jsonl"))?;
    let mut finals: Vec<StatusLine> = Vec::new();
    let mut ok = true;

    for stage in &cfg.stages {
        let members = stage.participants();
        info!("stage {} ({}) starting on {}", stage.index, stage.operator.name(), members.join(", "));
        for m in &members {
            log.append(&line(stage.index, m, StageState::Running, Map::new(), None))?;
        }
        let mut reports: HashMap<String, Report> = HashMap::new();
        match ep.broadcast(&members, STAGE_KEY, &encode(&Order::Stage { stage: Box::new(stage.clone()) })?) {
            Ok(()) => collect_reports(ep, stage, &members, &mut reports)?,
            Err(TransportError::BroadcastFailed { members: unreachable, .. }) => {
                for m in &unreachable {
                    reports.insert(m.clone(), failed(stage.index, format!("unreachable: {m} did not acknowledge the stage")));
                }
                abort_others(ep, &members, &reports);
                let rest: Vec<String> = members.iter().filter(|m| !reports.contains_key(*m)).cloned().collect();
                wait_after_abort(ep, stage.index, &rest, &mut reports);
            }
            Err(e) => return Err(e.into()),
        }
        for m in &members {
            let r = reports.remove(m).unwrap_or_else(|| failed(stage.index, "no report".into()));
            let l = line(stage.index, m, r.state, r.metrics, r.error);
            log.append(&l)?;
            finals.push(l);
        }
        if let Some(f) = finals.iter().find(|l| l.stage == stage.index && l.state != StageState::Succeeded) {
            warn!("stage {} failed at {}: {}", stage.index, f.party, f.error.as_deref().unwrap_or("unknown cause"));
            ok = false;
            break;
        }
    }

    let finish = encode(&Order::Finish { ok })?;
    for p in cfg.party_names() {
        if let Err(e) = ep.post(&p, STAGE_KEY, finish.clone()) {
            debug!("finish to {p}: {e}");
        }
    }
    if !ep.flush(Duration::from_secs(5)) {
        warn!("some parties did not acknowledge the end of the task");
    }
    Ok(TaskStatus { session_id: cfg.session_id.clone(), lines: finals })
}

fn line(stage: usize, party: &str, state: StageState, metrics: Metrics, error: Option<String>) -> StatusLine {
    StatusLine { stage, party: party.to_owned(), state, metrics, error }
}

fn failed(stage: usize, error: String) -> Report {
    Report { stage, state: StageState::Failed, metrics: Map::new(), error: Some(error) }
}

/// Waits for every member's report; the first failure aborts the others.
fn collect_reports(
    ep: &Endpoint,
    stage: &Stage,
    members: &[String],
    reports: &mut HashMap<String, Report>,
) -> Result<(), OrchestrationError> {
    let mut pending: Vec<String> = members.to_vec();
    while !pending.is_empty() {
        let (who, bytes) = match ep.recv_from_any(DONE_KEY, &pending, IDLE_POLL) {
            Ok(x) => x,
            Err(TransportError::Timeout { .. }) => {
                debug!("stage {} still waiting for {}", stage.index, pending.join(", "));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        pending.retain(|p| *p != who);
        let report = match decode::<Report>(&bytes) {
            Ok(r) if r.stage == stage.index => r,
            Ok(r) => failed(stage.index, format!("report for stage {} during stage {}", r.stage, stage.index)),
            Err(e) => failed(stage.index, e.to_string()),
        };
        let is_failure = report.state != StageState::Succeeded;
        if is_failure {
            warn!("stage {}: {who} failed: {}", stage.index, report.error.as_deref().unwrap_or(""));
        }
        reports.insert(who, report);
        if is_failure {
            abort_others(ep, members, reports);
            wait_after_abort(ep, stage.index, &pending, reports);
            return Ok(());
        }
    }
    Ok(())
}

fn abort_others(ep: &Endpoint, members: &[String], reports: &HashMap<String, Report>) {
    let cause: Vec<String> = reports
        .iter()
        .filter(|(_, r)| r.state == StageState::Failed)
        .map(|(p, r)| format!("{p}: {}", r.error.as_deref().unwrap_or("")))
        .collect();
    let reason = cause.join("; ").into_bytes();
    for m in members.iter().filter(|m| !reports.contains_key(*m)) {
        if let Err(e) = ep.post(m, ABORT_KEY, reason.clone()) {
            debug!("abort to {m}: {e}");
        }
    }
}

fn wait_after_abort(ep: &Endpoint, stage: usize, pending: &[String], reports: &mut HashMap<String, Report>) {
    if pending.is_empty() {
        return;
    }
    match ep.gather_timeout(pending, DONE_KEY, ABORT_GRACE) {
        Ok(got) => {
            for (who, bytes) in got {
                let r = decode::<Report>(&bytes).unwrap_or_else(|e| failed(stage, e.to_string()));
                reports.insert(who, r);
            }
        }
        Err(e) => debug!("reports after abort: {e}"),
    }
    for p in pending {
        reports.entry(p.clone()).or_insert_with(|| failed(stage, "no report after abort".into()));
    }
}

/// Runs the stages the scheduler hands this party until told to finish.
/// Returns whether the whole task succeeded.
pub fn run_party(ep: &Endpoint, cfg: &TaskConfig, env: &RunEnv) -> Result<bool, OrchestrationError> {
    let me = ep.name().to_owned();
    let sched = cfg.scheduler.name.clone();
    let mut mine_ok = true;
    loop {
        let bytes = match ep.recv_timeout(STAGE_KEY, &sched, IDLE_POLL) {
            Ok(b) => b,
            Err(TransportError::Timeout { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        match decode::<Order>(&bytes)? {
            Order::Finish { ok } => {
                // give the acknowledgment of this order time to leave
                ep.flush(Duration::from_secs(2));
                thread::sleep(Duration::from_millis(100));
                return Ok(ok && mine_ok);
            }
            Order::Stage { stage } => {
                let report = run_one(ep, cfg, env, &stage, &me);
                if report.state != StageState::Succeeded {
                    mine_ok = false;
                }
                ep.send(&sched, DONE_KEY, encode(&report)?)?;
            }
        }
    }
}

fn run_one(ep: &Endpoint, cfg: &TaskConfig, env: &RunEnv, stage: &Stage, me: &str) -> Report {
    let Some(role) = stage.role_of(me) else {
        return failed(stage.index, format!("{me} has no role in stage {}", stage.index));
    };
    let dir = env.stage_dir(&cfg.session_id, stage.index, me);
    let log = match JsonLines::create(dir.join("metrics.jsonl")) {
        Ok(l) => l,
        Err(e) => return failed(stage.index, e.to_string()),
    };
    let ctx = StageCtx { cfg, env, stage, party: me, role, ch: ep.channel(&format!("s{}", stage.index)), log };
    info!("{me}: stage {} as {role}", stage.index);
    let (state, metrics, error) = match run_stage(&ctx) {
        Ok(m) => (StageState::Succeeded, m, None),
        Err(e) => {
            warn!("{me}: stage {} failed: {e}", stage.index);
            (StageState::Failed, Map::new(), Some(e.to_string()))
        }
    };
    let l = line(stage.index, me, state, metrics.clone(), error.clone());
    if let Err(e) = ctx.log.append(&l) {
        return failed(stage.index, e.to_string());
    }
    Report { stage: stage.index, state, metrics, error }
}

/// All activities as threads of this process over the in-process transport.
pub fn standalone_run(cfg: &TaskConfig, env: &RunEnv) -> Result<TaskStatus, OrchestrationError> {
    let hub = match &cfg.transport.faults {
        Some(f) => InProcHub::with_faults(f.clone()),
        None => InProcHub::new(),
    };
    standalone_run_on(&hub, cfg, env)
}

/// As [`standalone_run`] over a caller-supplied hub.
pub fn standalone_run_on(hub: &InProcHub, cfg: &TaskConfig, env: &RunEnv) -> Result<TaskStatus, OrchestrationError> {
    let channel = cfg.transport.channel.clone();
    let sched = hub.endpoint(&cfg.scheduler.name, &cfg.session_id, channel.clone())?;
    let mut endpoints = Vec::new();
    for p in &cfg.parties {
        endpoints.push(hub.endpoint(&p.name, &cfg.session_id, channel.clone())?);
    }
    let status = thread::scope(|s| {
        let handles: Vec<_> = endpoints
            .iter()
            .map(|ep| {
                thread::Builder::new()
                    .name(format!("xfl-{}", ep.name()))
                    .spawn_scoped(s, move || run_party(ep, cfg, env))
                    .map_err(|e| OrchestrationError::Usage(format!("cannot start thread: {e}")))
            })
            .collect::<Result<_, _>>()?;
        let status = run_scheduler(&sched, cfg, env);
        if status.is_err() {
            for ep in &endpoints {
                ep.abort();
            }
        }
        for (h, ep) in handles.into_iter().zip(&endpoints) {
            match h.join() {
                Ok(Ok(_)) => {}
                Ok(Err(e)) => warn!("{}: {e}", ep.name()),
                Err(_) => warn!("{}: activity panicked", ep.name()),
            }
        }
        status
    })?;
    Ok(status)
}

/// Runs one configured activity over TCP: the scheduler, or a party (plus the
/// scheduler when the party hosts it). Returns whether the task succeeded.
pub fn run_networked(cfg: &TaskConfig, env: &RunEnv, role: &str) -> Result<bool, OrchestrationError> {
    let hosted = cfg.scheduler.host.as_deref();
    let is_sched = role == cfg.scheduler.name;
    if is_sched && hosted.is_some() {
        return Err(OrchestrationError::Usage(format!(
            "the scheduler runs inside party {:?}; start that party instead",
            hosted.unwrap_or_default()
        )));
    }
    if !is_sched && cfg.party(role).is_none() {
        let mut known = vec![cfg.scheduler.name.clone()];
        known.extend(cfg.party_names());
        return Err(OrchestrationError::Usage(format!("unknown role {role:?} (known: {})", known.join(", "))));
    }
    let addresses = cfg.addresses()?;
    let mut peers = HashMap::new();
    for (name, a) in &addresses {
        peers.insert(name.clone(), tcp::resolve(a)?);
    }
    let channel = cfg.transport.channel.clone();
    let bind = |name: &str| tcp::bind(name, &cfg.session_id, channel.clone(), peers[name], &peers);

    if is_sched {
        let ep = bind(role)?;
        return Ok(run_scheduler(&ep, cfg, env)?.succeeded());
    }
    let ep = bind(role)?;
    if hosted == Some(role) {
        let sched_ep = bind(&cfg.scheduler.name)?;
        thread::scope(|s| {
            let sched = s.spawn(|| run_scheduler(&sched_ep, cfg, env));
            let party = run_party(&ep, cfg, env);
            let status = sched.join().map_err(|_| OrchestrationError::Usage("scheduler panicked".into()))??;
            Ok(party? && status.succeeded())
        })
    } else {
        run_party(&ep, cfg, env)
    }
}
