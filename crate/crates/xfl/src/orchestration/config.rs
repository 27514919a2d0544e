//! Task configuration: one JSON document per federation.
//!
//! ```json
//! {
//!   "session_id": "hlr",
//!   "seed": 7,
//!   "scheduler": { "name": "scheduler", "address": "127.0.0.1:7700" },
//!   "parties": [
//!     { "name": "alice", "address": "127.0.0.1:7701", "roles": "label_trainer" },
//!     { "name": "bob", "address": "127.0.0.1:7702", "roles": ["label_trainer"] },
//!     { "name": "assist", "address": "127.0.0.1:7703", "roles": "assist_trainer" }
//!   ],
//!   "operators": [
//!     { "name": "horizontal_logistic_regression",
//!       "params": { "train": "data/{party}.csv", "aggregator": "fedprox" } }
//!   ]
//! }
//! ```
//!
//! `roles` is either one role for every stage or a list with one entry per
//! operator (`null` skips the stage). Omitted parameters take the operator's
//! preset. Unknown fields are rejected so typos surface at validation time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use xfl_core::data::{NormAxis, NormKind};
use xfl_core::horizontal::{Aggregator, ModelKind, TrainConfig};
use xfl_core::numeric::FixedPointParams;
use xfl_core::vertical::{GossSpec, VlrParams, XgbParams};

use crate::transport::{ChannelConfig, FaultSpec};

/// Schema violation at a JSON path such as `operators[1].params.mu`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Scheduler,
    LabelTrainer,
    Trainer,
    AssistTrainer,
}

impl Role {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "scheduler" => Self::Scheduler,
            "label_trainer" => Self::LabelTrainer,
            "trainer" => Self::Trainer,
            "assist_trainer" => Self::AssistTrainer,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Scheduler => "scheduler",
            Self::LabelTrainer => "label_trainer",
            Self::Trainer => "trainer",
            Self::AssistTrainer => "assist_trainer",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Dataset location plus its CSV column conventions. `path` is a template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataRef {
    pub path: String,
    pub id_column: String,
    pub label_column: String,
}

/// Extra dataset transformed with parameters fitted on the main input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplyPair {
    pub input: DataRef,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerOp {
    pub input: DataRef,
    pub output: String,
    pub with_mean: bool,
    pub with_std: bool,
    pub apply: Vec<ApplyPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationOp {
    pub input: DataRef,
    pub output: String,
    pub axis: NormAxis,
    pub norm: NormKind,
    pub apply: Vec<ApplyPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSplitOp {
    pub input: DataRef,
    pub train_output: String,
    pub valid_output: String,
    pub train_ratio: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizontalOp {
    pub train: DataRef,
    pub valid: Option<DataRef>,
    pub model: ModelKind,
    pub training: TrainConfig,
    pub scale_bits: u32,
    pub ring_bits: u32,
}

impl HorizontalOp {
    pub fn fixed_point(&self) -> FixedPointParams {
        FixedPointParams::new(self.scale_bits, self.ring_bits).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerticalLrOp {
    pub train: DataRef,
    pub valid: Option<DataRef>,
    pub params: VlrParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerticalXgbOp {
    pub train: DataRef,
    pub valid: Option<DataRef>,
    pub params: XgbParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case")]
pub enum Operator {
    StandardScaler(ScalerOp),
    Normalization(NormalizationOp),
    DataSplit(DataSplitOp),
    HorizontalLinearRegression(HorizontalOp),
    HorizontalLogisticRegression(HorizontalOp),
    VerticalLogisticRegression(VerticalLrOp),
    VerticalXgboost(VerticalXgbOp),
}

pub const OPERATOR_NAMES: [&str; 7] = [
    "standard_scaler",
    "normalization",
    "data_split",
    "horizontal_linear_regression",
    "horizontal_logistic_regression",
    "vertical_logistic_regression",
    "vertical_xgboost",
];

impl Operator {
    pub fn name(&self) -> &'static str {
        match self {
            Self::StandardScaler(_) => OPERATOR_NAMES[0],
            Self::Normalization(_) => OPERATOR_NAMES[1],
            Self::DataSplit(_) => OPERATOR_NAMES[2],
            Self::HorizontalLinearRegression(_) => OPERATOR_NAMES[3],
            Self::HorizontalLogisticRegression(_) => OPERATOR_NAMES[4],
            Self::VerticalLogisticRegression(_) => OPERATOR_NAMES[5],
            Self::VerticalXgboost(_) => OPERATOR_NAMES[6],
        }
    }
}

/// One operator with the parties taking part, in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub index: usize,
    pub operator: Operator,
    pub roles: Vec<(String, Role)>,
}

impl Stage {
    pub fn participants(&self) -> Vec<String> {
        self.roles.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn with_role(&self, role: Role) -> Vec<String> {
        self.roles.iter().filter(|(_, r)| *r == role).map(|(n, _)| n.clone()).collect()
    }

    pub fn role_of(&self, party: &str) -> Option<Role> {
        self.roles.iter().find(|(n, _)| n == party).map(|(_, r)| *r)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedulerSpec {
    pub name: String,
    pub address: Option<String>,
    /// Party whose process also runs the scheduler.
    pub host: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartySpec {
    pub name: String,
    pub address: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportSettings {
    pub channel: ChannelConfig,
    /// Injected loss and latency for standalone runs.
    pub faults: Option<FaultSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub session_id: String,
    pub seed: u64,
    pub scheduler: SchedulerSpec,
    pub parties: Vec<PartySpec>,
    pub transport: TransportSettings,
    pub stages: Vec<Stage>,
}

impl TaskConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let v: Value = serde_json::from_str(text).map_err(|e| err("", format!("invalid JSON: {e}")))?;
        Self::from_value(&v)
    }

    pub fn from_value(v: &Value) -> Result<Self, ConfigError> {
        let root = Fields::new("", v)?;
        let session_id = root.req_str("session_id")?;
        check_name(&root.path_of("session_id"), &session_id)?;
        let seed = root.opt_u64("seed")?.unwrap_or(0);

        let sched = root.req_obj("scheduler")?;
        let scheduler = SchedulerSpec {
            name: sched.opt_str("name")?.unwrap_or_else(|| "scheduler".into()),
            address: sched.opt_str("address")?,
            host: sched.opt_str("host")?,
        };
        check_name(&sched.path_of("name"), &scheduler.name)?;
        sched.finish()?;

        let ops = root.req_array("operators")?;
        if ops.is_empty() {
            return Err(err("operators", "at least one operator is required"));
        }

        let party_values = root.req_array("parties")?;
        if party_values.is_empty() {
            return Err(err("parties", "at least one party is required"));
        }
        let mut parties = Vec::new();
        let mut party_roles: Vec<Vec<Option<Role>>> = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, pv) in party_values.iter().enumerate() {
            let p = Fields::new(format!("parties[{i}]"), pv)?;
            let name = p.req_str("name")?;
            check_name(&p.path_of("name"), &name)?;
            if name == scheduler.name {
                return Err(err(p.path_of("name"), format!("{name:?} is already the scheduler's name")));
            }
            if !seen.insert(name.clone()) {
                return Err(err(p.path_of("name"), format!("duplicate party name {name:?}")));
            }
            let roles = parse_roles(&p, ops.len())?;
            parties.push(PartySpec { name, address: p.opt_str("address")? });
            party_roles.push(roles);
            p.finish()?;
        }
        if let Some(h) = &scheduler.host {
            if !seen.contains(h) {
                return Err(err("scheduler.host", format!("unknown party {h:?}")));
            }
        }

        let transport = match root.opt_obj("transport")? {
            Some(t) => parse_transport(&t)?,
            None => TransportSettings { channel: ChannelConfig::default(), faults: None },
        };

        let mut stages = Vec::with_capacity(ops.len());
        for (k, ov) in ops.iter().enumerate() {
            let roles: Vec<(String, Role)> = parties
                .iter()
                .zip(&party_roles)
                .filter_map(|(p, r)| r[k].map(|role| (p.name.clone(), role)))
                .collect();
            let operator = parse_operator(&format!("operators[{k}]"), ov, seed, k)?;
            let stage = Stage { index: k, operator, roles };
            check_roles(&stage)?;
            stages.push(stage);
        }
        root.finish()?;
        Ok(Self { session_id, seed, scheduler, parties, transport, stages })
    }

    pub fn party_names(&self) -> Vec<String> {
        self.parties.iter().map(|p| p.name.clone()).collect()
    }

    pub fn party(&self, name: &str) -> Option<&PartySpec> {
        self.parties.iter().find(|p| p.name == name)
    }

    /// Position of a party in the `parties` list.
    pub fn party_index(&self, name: &str) -> Option<usize> {
        self.parties.iter().position(|p| p.name == name)
    }

    /// Every endpoint name with its address, for multi-process runs.
    pub fn addresses(&self) -> Result<BTreeMap<String, String>, ConfigError> {
        let mut out = BTreeMap::new();
        let a = self.scheduler.address.clone().ok_or_else(|| err("scheduler.address", "required for networked runs"))?;
        out.insert(self.scheduler.name.clone(), a);
        for (i, p) in self.parties.iter().enumerate() {
            let a = p.address.clone().ok_or_else(|| err(format!("parties[{i}].address"), "required for networked runs"))?;
            out.insert(p.name.clone(), a);
        }
        Ok(out)
    }

    /// The resolved configuration with every preset filled in.
    pub fn resolved(&self) -> Value {
        let c = &self.transport.channel;
        let mut transport = serde_json::json!({
            "connect_timeout_ms": c.connect_timeout.as_millis() as u64,
            "send_retry_limit": c.send_retry_limit,
            "backoff_base_ms": c.backoff_base.as_millis() as u64,
            "backoff_factor": c.backoff_factor,
            "backoff_cap_ms": c.backoff_cap.as_millis() as u64,
            "max_frame_bytes": c.max_frame_bytes,
            "recv_timeout_ms": c.recv_timeout.as_millis() as u64,
            "inbox_capacity": c.inbox_capacity,
        });
        if let Some(f) = &self.transport.faults {
            transport["faults"] = serde_json::json!({
                "drop_probability": f.drop_probability,
                "latency_min_ms": f.latency_min.as_millis() as u64,
                "latency_max_ms": f.latency_max.as_millis() as u64,
                "seed": f.seed,
            });
        }
        let parties: Vec<Value> = self
            .parties
            .iter()
            .map(|p| {
                let roles: Vec<Value> = self
                    .stages
                    .iter()
                    .map(|s| s.role_of(&p.name).map_or(Value::Null, |r| Value::from(r.as_str())))
                    .collect();
                serde_json::json!({ "name": p.name, "address": p.address, "roles": roles })
            })
            .collect();
        let operators: Vec<Value> = self
            .stages
            .iter()
            .map(|s| serde_json::json!({ "name": s.operator.name(), "params": operator_params(&s.operator) }))
            .collect();
        serde_json::json!({
            "session_id": self.session_id,
            "seed": self.seed,
            "scheduler": {
                "name": self.scheduler.name,
                "address": self.scheduler.address,
                "host": self.scheduler.host,
            },
            "parties": parties,
            "transport": transport,
            "operators": operators,
        })
    }
}

fn data_value(d: &DataRef) -> Value {
    serde_json::json!({ "path": d.path, "id_column": d.id_column, "label_column": d.label_column })
}

fn apply_value(a: &[ApplyPair]) -> Value {
    a.iter().map(|p| serde_json::json!({ "input": data_value(&p.input), "output": p.output })).collect()
}

fn j<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).unwrap_or(Value::Null)
}

/// Parameters in the same shape the parser accepts.
fn operator_params(op: &Operator) -> Value {
    match op {
        Operator::StandardScaler(o) => serde_json::json!({
            "input": data_value(&o.input),
            "output": o.output,
            "with_mean": o.with_mean,
            "with_std": o.with_std,
            "apply": apply_value(&o.apply),
        }),
        Operator::Normalization(o) => serde_json::json!({
            "input": data_value(&o.input),
            "output": o.output,
            "axis": j(&o.axis),
            "norm": j(&o.norm),
            "apply": apply_value(&o.apply),
        }),
        Operator::DataSplit(o) => serde_json::json!({
            "input": data_value(&o.input),
            "train_output": o.train_output,
            "valid_output": o.valid_output,
            "train_ratio": o.train_ratio,
            "seed": o.seed,
        }),
        Operator::HorizontalLinearRegression(o) | Operator::HorizontalLogisticRegression(o) => {
            let t = &o.training;
            serde_json::json!({
                "train": data_value(&o.train),
                "valid": o.valid.as_ref().map(data_value),
                "model": j(&o.model),
                "global_epochs": t.global_epochs,
                "local_epochs": t.local_epochs,
                "batch_size": t.batch_size,
                "learning_rate": t.learning_rate,
                "aggregator": j(&t.aggregator),
                "mu": t.mu,
                "seed": t.seed,
                "scale_bits": o.scale_bits,
                "ring_bits": o.ring_bits,
            })
        }
        Operator::VerticalLogisticRegression(o) => {
            let p = &o.params;
            serde_json::json!({
                "train": data_value(&o.train),
                "valid": o.valid.as_ref().map(data_value),
                "epochs": p.epochs,
                "batch_size": p.batch_size,
                "learning_rate": p.learning_rate,
                "key_bits": p.key_bits,
                "seed": p.seed,
            })
        }
        Operator::VerticalXgboost(o) => {
            let p = &o.params;
            serde_json::json!({
                "train": data_value(&o.train),
                "valid": o.valid.as_ref().map(data_value),
                "num_trees": p.num_trees,
                "depth": p.depth,
                "learning_rate": p.learning_rate,
                "lambda": p.lambda,
                "gamma": p.gamma,
                "goss": p.goss.map(|g| serde_json::json!({
                    "top_rate": g.top_rate,
                    "other_rate": g.other_rate,
                    "seed": g.seed,
                })),
                "key_bits": p.key_bits,
                "max_bins": p.max_bins,
            })
        }
    }
}

fn check_name(path: &str, name: &str) -> Result<(), ConfigError> {
    let ok = !name.is_empty()
        && name.len() <= 64
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(err(path, format!("{name:?} must be 1-64 characters from [A-Za-z0-9_.-]")))
    }
}

fn parse_roles(p: &Fields<'_>, n_stages: usize) -> Result<Vec<Option<Role>>, ConfigError> {
    let path = p.path_of("roles");
    let one = |path: &str, v: &Value| -> Result<Option<Role>, ConfigError> {
        match v {
            Value::Null => Ok(None),
            Value::String(s) => match Role::parse(s) {
                Some(Role::Scheduler) => {
                    Err(err(path, "the scheduler is declared in the top-level \"scheduler\" field"))
                }
                Some(r) => Ok(Some(r)),
                None => Err(err(
                    path,
                    format!("unknown role {s:?} (expected label_trainer, trainer or assist_trainer)"),
                )),
            },
            _ => Err(err(path, "expected a role name or null")),
        }
    };
    match p.get("roles") {
        None => Err(err(path, "missing required field")),
        Some(Value::Array(a)) => {
            if a.len() != n_stages {
                return Err(err(
                    path,
                    format!("expected {n_stages} entries (one per operator), got {}", a.len()),
                ));
            }
            a.iter().enumerate().map(|(i, v)| one(&format!("{path}[{i}]"), v)).collect()
        }
        Some(v) => {
            let r = one(&path, v)?;
            Ok(vec![r; n_stages])
        }
    }
}

fn parse_transport(t: &Fields<'_>) -> Result<TransportSettings, ConfigError> {
    let d = ChannelConfig::default();
    let ms = |key: &str, def: Duration| -> Result<Duration, ConfigError> {
        Ok(t.opt_u64(key)?.map_or(def, Duration::from_millis))
    };
    let channel = ChannelConfig {
        connect_timeout: ms("connect_timeout_ms", d.connect_timeout)?,
        send_retry_limit: t.opt_u32("send_retry_limit")?.unwrap_or(d.send_retry_limit),
        backoff_base: ms("backoff_base_ms", d.backoff_base)?,
        backoff_factor: t.opt_u32("backoff_factor")?.unwrap_or(d.backoff_factor),
        backoff_cap: ms("backoff_cap_ms", d.backoff_cap)?,
        max_frame_bytes: t.opt_u64("max_frame_bytes")?.unwrap_or(d.max_frame_bytes),
        recv_timeout: ms("recv_timeout_ms", d.recv_timeout)?,
        inbox_capacity: t.opt_usize("inbox_capacity")?.unwrap_or(d.inbox_capacity),
    };
    channel.validate().map_err(|e| err(t.path.clone(), e.to_string()))?;
    let faults = match t.opt_obj("faults")? {
        Some(f) => {
            let spec = FaultSpec {
                drop_probability: f.opt_f64("drop_probability")?.unwrap_or(0.0),
                latency_min: Duration::from_millis(f.opt_u64("latency_min_ms")?.unwrap_or(0)),
                latency_max: Duration::from_millis(f.opt_u64("latency_max_ms")?.unwrap_or(0)),
                seed: f.opt_u64("seed")?.unwrap_or(0),
            };
            spec.validate().map_err(|e| err(f.path.clone(), e.to_string()))?;
            f.finish()?;
            Some(spec)
        }
        None => None,
    };
    t.finish()?;
    Ok(TransportSettings { channel, faults })
}

fn parse_operator(path: &str, v: &Value, task_seed: u64, stage: usize) -> Result<Operator, ConfigError> {
    let o = Fields::new(path, v)?;
    let name = o.req_str("name")?;
    let empty = Value::Object(Map::new());
    let pv = o.get("params").unwrap_or(&empty);
    let p = Fields::new(o.path_of("params"), pv)?;
    let op = match name.as_str() {
        "standard_scaler" => Operator::StandardScaler(ScalerOp {
            input: p.req_data("input", stage)?,
            output: p.req_output("output", stage)?,
            with_mean: p.opt_bool("with_mean")?.unwrap_or(true),
            with_std: p.opt_bool("with_std")?.unwrap_or(true),
            apply: p.apply_list(stage)?,
        }),
        "normalization" => Operator::Normalization(NormalizationOp {
            input: p.req_data("input", stage)?,
            output: p.req_output("output", stage)?,
            axis: match p.opt_str("axis")?.as_deref() {
                None | Some("row") => NormAxis::Row,
                Some("column") => NormAxis::Column,
                Some(other) => return Err(err(p.path_of("axis"), format!("expected \"row\" or \"column\", got {other:?}"))),
            },
            norm: match p.opt_str("norm")?.as_deref() {
                None | Some("l2") => NormKind::L2,
                Some("l1") => NormKind::L1,
                Some("max") => NormKind::Max,
                Some(other) => {
                    return Err(err(p.path_of("norm"), format!("expected \"l1\", \"l2\" or \"max\", got {other:?}")))
                }
            },
            apply: p.apply_list(stage)?,
        }),
        "data_split" => {
            let ratio = p.opt_f64("train_ratio")?.unwrap_or(0.8);
            if !(ratio > 0.0 && ratio < 1.0) {
                return Err(err(p.path_of("train_ratio"), "must lie strictly between 0 and 1"));
            }
            Operator::DataSplit(DataSplitOp {
                input: p.req_data("input", stage)?,
                train_output: p.req_output("train_output", stage)?,
                valid_output: p.req_output("valid_output", stage)?,
                train_ratio: ratio,
                seed: p.opt_u64("seed")?.unwrap_or(task_seed),
            })
        }
        "horizontal_linear_regression" | "horizontal_logistic_regression" => {
            let linear = name == "horizontal_linear_regression";
            let model = parse_model(&p, linear)?;
            let op = parse_horizontal(&p, model, task_seed, linear, stage)?;
            if linear {
                Operator::HorizontalLinearRegression(op)
            } else {
                Operator::HorizontalLogisticRegression(op)
            }
        }
        "vertical_logistic_regression" => {
            let d = VlrParams::default();
            let params = VlrParams {
                epochs: p.opt_u32("epochs")?.unwrap_or(d.epochs),
                batch_size: p.opt_usize("batch_size")?.unwrap_or(d.batch_size),
                learning_rate: p.opt_f64("learning_rate")?.unwrap_or(d.learning_rate),
                key_bits: p.opt_u32("key_bits")?.unwrap_or(d.key_bits),
                seed: p.opt_u64("seed")?.unwrap_or(task_seed),
            };
            params.validate().map_err(|e| err(p.path.clone(), e.to_string()))?;
            Operator::VerticalLogisticRegression(VerticalLrOp {
                train: p.req_data("train", stage)?,
                valid: p.opt_data("valid", stage)?,
                params,
            })
        }
        "vertical_xgboost" => {
            let d = XgbParams::default();
            let goss = match p.opt_obj("goss")? {
                Some(g) => {
                    let spec = GossSpec {
                        top_rate: g.opt_f64("top_rate")?.unwrap_or(0.01),
                        other_rate: g.opt_f64("other_rate")?.unwrap_or(0.02),
                        seed: g.opt_u64("seed")?.unwrap_or(task_seed),
                    };
                    g.finish()?;
                    Some(spec)
                }
                None => None,
            };
            let params = XgbParams {
                num_trees: p.opt_u32("num_trees")?.unwrap_or(d.num_trees),
                depth: p.opt_u32("depth")?.unwrap_or(d.depth),
                learning_rate: p.opt_f64("learning_rate")?.unwrap_or(d.learning_rate),
                lambda: p.opt_f64("lambda")?.unwrap_or(d.lambda),
                gamma: p.opt_f64("gamma")?.unwrap_or(d.gamma),
                goss,
                key_bits: p.opt_u32("key_bits")?.unwrap_or(d.key_bits),
                max_bins: p.opt_usize("max_bins")?.unwrap_or(d.max_bins),
            };
            params.validate().map_err(|e| err(p.path.clone(), e.to_string()))?;
            Operator::VerticalXgboost(VerticalXgbOp {
                train: p.req_data("train", stage)?,
                valid: p.opt_data("valid", stage)?,
                params,
            })
        }
        other => {
            return Err(err(
                o.path_of("name"),
                format!("unknown operator {other:?} (known: {})", OPERATOR_NAMES.join(", ")),
            ))
        }
    };
    p.finish()?;
    o.finish()?;
    Ok(op)
}

fn parse_model(p: &Fields<'_>, linear: bool) -> Result<ModelKind, ConfigError> {
    let Some(m) = p.opt_obj("model")? else {
        return Ok(if linear { ModelKind::Linear } else { ModelKind::Logistic });
    };
    let kind = m.opt_str("kind")?;
    let classes = |m: &Fields<'_>| -> Result<usize, ConfigError> {
        let c = m.req_usize("classes")?;
        if c < 2 {
            return Err(err(m.path_of("classes"), "at least 2 classes are required"));
        }
        Ok(c)
    };
    let model = match (linear, kind.as_deref()) {
        (true, None | Some("linear")) => ModelKind::Linear,
        (false, None | Some("logistic")) => ModelKind::Logistic,
        (false, Some("softmax")) => ModelKind::Softmax { classes: classes(&m)? },
        (false, Some("mlp")) => {
            let hidden = m.req_usize("hidden")?;
            if hidden == 0 {
                return Err(err(m.path_of("hidden"), "must be at least 1"));
            }
            ModelKind::Mlp { hidden, classes: classes(&m)? }
        }
        (true, Some(k)) => return Err(err(m.path_of("kind"), format!("expected \"linear\", got {k:?}"))),
        (false, Some(k)) => {
            return Err(err(m.path_of("kind"), format!("expected \"logistic\", \"softmax\" or \"mlp\", got {k:?}")))
        }
    };
    m.finish()?;
    Ok(model)
}

fn parse_horizontal(
    p: &Fields<'_>,
    model: ModelKind,
    task_seed: u64,
    linear: bool,
    stage: usize,
) -> Result<HorizontalOp, ConfigError> {
    let d = TrainConfig::default();
    let aggregator = match p.opt_str("aggregator")?.as_deref() {
        None | Some("fedavg") => Aggregator::FedAvg,
        Some("fedprox") => Aggregator::FedProx,
        Some("scaffold") => Aggregator::Scaffold,
        Some(other) => {
            return Err(err(
                p.path_of("aggregator"),
                format!("expected \"fedavg\", \"fedprox\" or \"scaffold\", got {other:?}"),
            ))
        }
    };
    let training = TrainConfig {
        global_epochs: p.opt_u32("global_epochs")?.unwrap_or(d.global_epochs),
        local_epochs: p.opt_u32("local_epochs")?.unwrap_or(d.local_epochs),
        batch_size: p.opt_usize("batch_size")?.unwrap_or(d.batch_size),
        learning_rate: p.opt_f64("learning_rate")?.unwrap_or(if linear { 0.01 } else { d.learning_rate }),
        aggregator,
        mu: p.opt_f64("mu")?.unwrap_or(d.mu),
        seed: p.opt_u64("seed")?.unwrap_or(task_seed),
    };
    training.validate().map_err(|e| err(p.path.clone(), e.to_string()))?;
    let fp = FixedPointParams::default();
    let scale_bits = p.opt_u32("scale_bits")?.unwrap_or(fp.scale_bits());
    let ring_bits = p.opt_u32("ring_bits")?.unwrap_or(fp.ring_bits());
    FixedPointParams::new(scale_bits, ring_bits).map_err(|e| err(p.path.clone(), e.to_string()))?;
    Ok(HorizontalOp { train: p.req_data("train", stage)?, valid: p.opt_data("valid", stage)?, model, training, scale_bits, ring_bits })
}

fn check_roles(stage: &Stage) -> Result<(), ConfigError> {
    let count = |r: Role| stage.roles.iter().filter(|(_, x)| *x == r).count();
    let (lt, tr, at) = (count(Role::LabelTrainer), count(Role::Trainer), count(Role::AssistTrainer));
    let name = stage.operator.name();
    let fail = |msg: String| Err(err(format!("operators[{}]", stage.index), format!("{name}: {msg}")));
    match &stage.operator {
        Operator::StandardScaler(_) | Operator::Normalization(_) | Operator::DataSplit(_) => {
            if at > 0 {
                return fail("local operators take label_trainer or trainer parties only".into());
            }
            if lt + tr == 0 {
                return fail("no party takes part in this stage".into());
            }
        }
        Operator::HorizontalLinearRegression(_) | Operator::HorizontalLogisticRegression(_) => {
            if lt < 2 {
                return fail(format!("needs at least 2 label_trainer parties for secure aggregation, found {lt}"));
            }
            if at != 1 {
                return fail(format!("needs exactly 1 assist_trainer, found {at}"));
            }
            if tr > 0 {
                return fail(format!("trainer role is not used by horizontal operators, found {tr}"));
            }
        }
        Operator::VerticalLogisticRegression(_) | Operator::VerticalXgboost(_) => {
            if lt != 1 {
                return fail(format!("needs exactly 1 label_trainer, found {lt}"));
            }
            if tr < 1 {
                return fail("needs at least 1 trainer".into());
            }
            if at > 0 {
                return fail(format!("assist_trainer role is not used by vertical operators, found {at}"));
            }
        }
    }
    Ok(())
}

/// Placeholders allowed in path templates.
fn check_template(path: &str, t: &str, stage: usize) -> Result<(), ConfigError> {
    let mut rest = t;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or_else(|| err(path, format!("unclosed placeholder in {t:?}")))?;
        let key = &after[..close];
        match key {
            "workdir" | "session" | "party" | "stage" | "stage_dir" | "config_dir" => {}
            _ => match key.strip_prefix("stage_dir:").map(str::parse::<usize>) {
                Some(Ok(k)) if k < stage => {}
                Some(Ok(k)) => {
                    return Err(err(path, format!("{{stage_dir:{k}}} must name an earlier stage than {stage}")))
                }
                _ => return Err(err(path, format!("unknown placeholder {{{key}}}"))),
            },
        }
        rest = &after[close + 1..];
    }
    if t.split(['/', '\\']).any(|c| c == "..") {
        return Err(err(path, "\"..\" is not allowed in paths"));
    }
    Ok(())
}

/// Cursor over a JSON object that remembers which keys were read.
struct Fields<'a> {
    path: String,
    map: &'a Map<String, Value>,
    used: std::cell::RefCell<BTreeSet<String>>,
}

impl<'a> Fields<'a> {
    fn new(path: impl Into<String>, v: &'a Value) -> Result<Self, ConfigError> {
        let path = path.into();
        match v {
            Value::Object(map) => Ok(Self { path, map, used: Default::default() }),
            _ => Err(err(path, format!("expected an object, got {}", kind(v)))),
        }
    }

    fn path_of(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_owned()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.used.borrow_mut().insert(key.to_owned());
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn finish(&self) -> Result<(), ConfigError> {
        let used = self.used.borrow();
        match self.map.keys().find(|k| !used.contains(*k)) {
            Some(k) => Err(err(self.path_of(k), "unknown field")),
            None => Ok(()),
        }
    }

    fn missing(&self, key: &str) -> ConfigError {
        err(self.path_of(key), "missing required field")
    }

    fn opt_str(&self, key: &str) -> Result<Option<String>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(err(self.path_of(key), format!("expected a string, got {}", kind(v)))),
        }
    }

    fn req_str(&self, key: &str) -> Result<String, ConfigError> {
        self.opt_str(key)?.ok_or_else(|| self.missing(key))
    }

    fn opt_u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| err(self.path_of(key), format!("expected a nonnegative integer, got {}", kind(v)))),
        }
    }

    fn opt_u32(&self, key: &str) -> Result<Option<u32>, ConfigError> {
        match self.opt_u64(key)? {
            None => Ok(None),
            Some(x) => u32::try_from(x).map(Some).map_err(|_| err(self.path_of(key), "value too large")),
        }
    }

    fn opt_usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.opt_u64(key)? {
            None => Ok(None),
            Some(x) => usize::try_from(x).map(Some).map_err(|_| err(self.path_of(key), "value too large")),
        }
    }

    fn req_usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.opt_usize(key)?.ok_or_else(|| self.missing(key))
    }

    fn opt_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| err(self.path_of(key), format!("expected a number, got {}", kind(v)))),
        }
    }

    fn opt_bool(&self, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.as_bool().map(Some).ok_or_else(|| err(self.path_of(key), format!("expected a boolean, got {}", kind(v)))),
        }
    }

    fn opt_obj(&self, key: &str) -> Result<Option<Fields<'a>>, ConfigError> {
        self.get(key).map(|v| Fields::new(self.path_of(key), v)).transpose()
    }

    fn req_obj(&self, key: &str) -> Result<Fields<'a>, ConfigError> {
        self.opt_obj(key)?.ok_or_else(|| self.missing(key))
    }

    fn req_array(&self, key: &str) -> Result<&'a Vec<Value>, ConfigError> {
        match self.get(key) {
            None => Err(self.missing(key)),
            Some(Value::Array(a)) => Ok(a),
            Some(v) => Err(err(self.path_of(key), format!("expected an array, got {}", kind(v)))),
        }
    }

    /// A dataset: either a path template or `{path, id_column, label_column}`.
    fn opt_data(&self, key: &str, stage: usize) -> Result<Option<DataRef>, ConfigError> {
        let path = self.path_of(key);
        let d = match self.get(key) {
            None => return Ok(None),
            Some(Value::String(s)) => DataRef { path: s.clone(), id_column: "id".into(), label_column: "label".into() },
            Some(v @ Value::Object(_)) => {
                let f = Fields::new(path.clone(), v)?;
                let d = DataRef {
                    path: f.req_str("path")?,
                    id_column: f.opt_str("id_column")?.unwrap_or_else(|| "id".into()),
                    label_column: f.opt_str("label_column")?.unwrap_or_else(|| "label".into()),
                };
                f.finish()?;
                d
            }
            Some(v) => return Err(err(path, format!("expected a path or a dataset object, got {}", kind(v)))),
        };
        if d.path.is_empty() {
            return Err(err(path, "empty path"));
        }
        check_template(&path, &d.path, stage)?;
        Ok(Some(d))
    }

    fn req_data(&self, key: &str, stage: usize) -> Result<DataRef, ConfigError> {
        self.opt_data(key, stage)?.ok_or_else(|| self.missing(key))
    }

    /// Output paths must resolve inside the party's workdir.
    fn req_output(&self, key: &str, stage: usize) -> Result<String, ConfigError> {
        let t = self.req_str(key)?;
        let path = self.path_of(key);
        if !(t.starts_with("{stage_dir}") || t.starts_with("{workdir}")) {
            return Err(err(path, "output paths must start with {stage_dir} or {workdir}"));
        }
        check_template(&path, &t, stage)?;
        Ok(t)
    }

    fn apply_list(&self, stage: usize) -> Result<Vec<ApplyPair>, ConfigError> {
        let Some(v) = self.get("apply") else { return Ok(Vec::new()) };
        let path = self.path_of("apply");
        let Value::Array(items) = v else {
            return Err(err(path, format!("expected an array, got {}", kind(v))));
        };
        items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let f = Fields::new(format!("{path}[{i}]"), item)?;
                let pair = ApplyPair { input: f.req_data("input", stage)?, output: f.req_output("output", stage)? };
                f.finish()?;
                Ok(pair)
            })
            .collect()
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn horizontal() -> Value {
        serde_json::json!({
            "session_id": "s",
            "seed": 3,
            "scheduler": { "name": "sched" },
            "parties": [
                { "name": "a", "roles": "label_trainer" },
                { "name": "b", "roles": "label_trainer" },
                { "name": "c", "roles": "assist_trainer" }
            ],
            "operators": [
                { "name": "horizontal_logistic_regression",
                  "params": { "train": "data/{party}.csv", "aggregator": "fedprox" } }
            ]
        })
    }

    fn parse(v: &Value) -> Result<TaskConfig, ConfigError> {
        TaskConfig::from_value(v)
    }

    #[test]
    fn presets_fill_defaults() {
        let c = parse(&horizontal()).unwrap();
        let Operator::HorizontalLogisticRegression(op) = &c.stages[0].operator else { panic!() };
        assert_eq!(op.training.mu, 0.005);
        assert_eq!(op.training.global_epochs, 60);
        assert_eq!(op.training.local_epochs, 5);
        assert_eq!(op.training.aggregator, Aggregator::FedProx);
        assert_eq!(op.training.seed, 3);
        assert_eq!(op.model, ModelKind::Logistic);
        assert_eq!(c.stages[0].with_role(Role::LabelTrainer), ["a", "b"]);
    }

    #[test]
    fn unknown_operator_is_named() {
        let mut v = horizontal();
        v["operators"][0]["name"] = "gradient_magic".into();
        let e = parse(&v).unwrap_err();
        assert_eq!(e.path, "operators[0].name");
        assert!(e.message.contains("gradient_magic"));
    }

    #[test]
    fn errors_carry_paths() {
        let mut v = horizontal();
        v["operators"][0]["params"]["mu"] = "high".into();
        assert_eq!(parse(&v).unwrap_err().path, "operators[0].params.mu");
        let mut v = horizontal();
        v["parties"][1]["extra"] = 1.into();
        assert_eq!(parse(&v).unwrap_err().path, "parties[1].extra");
        let mut v = horizontal();
        v["parties"][0]["roles"] = serde_json::json!(["label_trainer", null]);
        assert_eq!(parse(&v).unwrap_err().path, "parties[0].roles");
    }

    #[test]
    fn role_counts_are_checked() {
        let mut v = horizontal();
        v["parties"][1]["roles"] = "assist_trainer".into();
        assert!(parse(&v).unwrap_err().message.contains("label_trainer"));

        let vertical = serde_json::json!({
            "session_id": "v",
            "scheduler": {},
            "parties": [
                { "name": "a", "roles": "trainer" },
                { "name": "b", "roles": "trainer" }
            ],
            "operators": [{ "name": "vertical_xgboost", "params": { "train": "x.csv" } }]
        });
        let e = parse(&vertical).unwrap_err();
        assert_eq!(e.path, "operators[0]");
        assert!(e.message.contains("exactly 1 label_trainer"));
    }

    #[test]
    fn output_paths_stay_in_workdir() {
        let v = serde_json::json!({
            "session_id": "l",
            "scheduler": {},
            "parties": [{ "name": "a", "roles": "trainer" }],
            "operators": [{ "name": "standard_scaler", "params": { "input": "in.csv", "output": "/tmp/out.csv" } }]
        });
        assert_eq!(parse(&v).unwrap_err().path, "operators[0].params.output");
        let mut v2 = v.clone();
        v2["operators"][0]["params"]["output"] = "{stage_dir}/../../x.csv".into();
        assert!(parse(&v2).is_err());
        let mut v3 = v;
        v3["operators"][0]["params"]["input"] = "{stage_dir:0}/x.csv".into();
        assert!(parse(&v3).unwrap_err().message.contains("earlier stage"));
    }

    #[test]
    fn resolved_config_parses_back_to_itself() {
        let c = parse(&horizontal()).unwrap();
        let again = parse(&c.resolved()).unwrap();
        assert_eq!(c, again);
    }
}
