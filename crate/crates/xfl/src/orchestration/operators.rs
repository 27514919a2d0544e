//! Role-specific routine of every operator for one party and one stage.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use xfl_core::crypto::PackParams;
use xfl_core::data::{binary_report, data_split, normalization, standard_scaler, MetricsReport, Table};
use xfl_core::horizontal::{mix_seed, Architecture, ModelKind, ModelState, Samples};
use xfl_core::numeric::FixedPointParams;
use xfl_core::secagg::PartyId;
use xfl_core::sigmoid;
use xfl_core::vertical::VlrPartyState;

use super::config::{
    DataRef, DataSplitOp, HorizontalOp, NormalizationOp, Operator, Role, ScalerOp, Stage, TaskConfig, VerticalLrOp,
    VerticalXgbOp,
};
use super::status::{JsonLines, StageState, StatusLine};
use super::{OrchestrationError, RunEnv};
use crate::io::{read_table, write_json, write_table, CsvSchema};
use crate::protocol::horizontal::{hfl_assist, hfl_party, HflSetup};
use crate::protocol::secagg::negotiate_masks;
use crate::protocol::vlr::{vlr_label_trainer, vlr_predict_label, vlr_predict_trainer, vlr_trainer, VlrSetup};
use crate::protocol::vxgb::{vxgb_label_trainer, vxgb_predict_label, vxgb_predict_trainer, vxgb_trainer, VxgbSetup};
use crate::protocol::ProtocolError;
use crate::transport::Channel;

/// Feature names each label trainer reports to the assist trainer.
pub const HFL_SCHEMA: &str = "hfl/schema";
/// Row count and id digest each trainer reports to the label trainer.
pub const ALIGN: &str = "align/ids";

pub type Metrics = Map<String, Value>;

pub(super) struct StageCtx<'a> {
    pub cfg: &'a TaskConfig,
    pub env: &'a RunEnv,
    pub stage: &'a Stage,
    pub party: &'a str,
    pub role: Role,
    pub ch: Channel,
    pub log: JsonLines,
}

impl StageCtx<'_> {
    pub fn stage_dir(&self) -> PathBuf {
        self.env.stage_dir(&self.cfg.session_id, self.stage.index, self.party)
    }

    /// Expands placeholders; relative results are taken against the
    /// configuration file's directory.
    pub fn expand(&self, template: &str) -> Result<PathBuf, OrchestrationError> {
        let mut out = String::new();
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let close = after
                .find('}')
                .ok_or_else(|| OrchestrationError::Usage(format!("unclosed placeholder in {template:?}")))?;
            let key = &after[..close];
            let value = match key {
                "workdir" => self.env.workdir.display().to_string(),
                "session" => self.cfg.session_id.clone(),
                "party" => self.party.to_owned(),
                "stage" => self.stage.index.to_string(),
                "stage_dir" => self.stage_dir().display().to_string(),
                "config_dir" => self.env.config_dir.display().to_string(),
                _ => match key.strip_prefix("stage_dir:").and_then(|k| k.parse::<usize>().ok()) {
                    Some(k) => self.env.stage_dir(&self.cfg.session_id, k, self.party).display().to_string(),
                    None => return Err(OrchestrationError::Usage(format!("unknown placeholder {{{key}}}"))),
                },
            };
            out.push_str(&value);
            rest = &after[close + 1..];
        }
        out.push_str(rest);
        Ok(self.env.config_dir.join(out))
    }

    /// Output location; refuses anything outside the workdir.
    pub fn output(&self, template: &str) -> Result<PathBuf, OrchestrationError> {
        let p = self.expand(template)?;
        if !p.starts_with(&self.env.workdir) || p.components().any(|c| c == std::path::Component::ParentDir) {
            return Err(OrchestrationError::Usage(format!("output {} lies outside the workdir", p.display())));
        }
        Ok(p)
    }

    pub fn load(&self, d: &DataRef) -> Result<Table, OrchestrationError> {
        Ok(read_table(&self.expand(&d.path)?, &schema(d))?)
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let idx = self.cfg.party_index(self.party).map_or(0, |i| i as u64 + 1);
        ChaCha20Rng::seed_from_u64(mix_seed(&[self.cfg.seed, self.stage.index as u64, idx]))
    }

    pub fn progress(&self, metrics: Metrics) -> Result<(), OrchestrationError> {
        self.log.append(&StatusLine {
            stage: self.stage.index,
            party: self.party.to_owned(),
            state: StageState::Running,
            metrics,
            error: None,
        })?;
        Ok(())
    }

    fn artifact<T: Serialize>(&self, name: &str, value: &T) -> Result<(), OrchestrationError> {
        Ok(write_json(&self.stage_dir().join(name), value)?)
    }

    fn progress_in_protocol(&self, metrics: Metrics) -> Result<(), ProtocolError> {
        self.progress(metrics).map_err(|e| ProtocolError::Violation(format!("cannot record metrics: {e}")))
    }
}

fn schema(d: &DataRef) -> CsvSchema {
    CsvSchema { id_column: d.id_column.clone(), label_column: d.label_column.clone() }
}

fn put(m: &mut Metrics, key: &str, v: impl Into<Value>) {
    m.insert(key.to_owned(), v.into());
}

fn put_report(m: &mut Metrics, r: &MetricsReport) {
    put(m, "ks", r.ks);
    put(m, "auc", r.auc);
    put(m, "accuracy", r.accuracy);
    put(m, "loss", r.loss);
}

/// Binary metrics, or none when the labels hold a single class.
fn report_metrics(probs: &[f64], labels: &[f64]) -> Metrics {
    let mut m = Metrics::new();
    match binary_report(probs, labels) {
        Ok(r) => put_report(&mut m, &r),
        Err(e) => log::warn!("metrics skipped: {e}"),
    }
    m
}

pub(super) fn run_stage(ctx: &StageCtx<'_>) -> Result<Metrics, OrchestrationError> {
    match &ctx.stage.operator {
        Operator::StandardScaler(op) => scaler(ctx, op),
        Operator::Normalization(op) => normalize(ctx, op),
        Operator::DataSplit(op) => split(ctx, op),
        Operator::HorizontalLinearRegression(op) | Operator::HorizontalLogisticRegression(op) => horizontal(ctx, op),
        Operator::VerticalLogisticRegression(op) => vertical_lr(ctx, op),
        Operator::VerticalXgboost(op) => vertical_xgb(ctx, op),
    }
}

fn table_metrics(t: &Table) -> Metrics {
    let mut m = Metrics::new();
    put(&mut m, "rows", t.n_rows());
    put(&mut m, "features", t.n_features());
    m
}

fn scaler(ctx: &StageCtx<'_>, op: &ScalerOp) -> Result<Metrics, OrchestrationError> {
    let table = ctx.load(&op.input)?;
    let (scaled, params) = standard_scaler(&table, op.with_mean, op.with_std);
    write_table(&ctx.output(&op.output)?, &scaled, &schema(&op.input))?;
    for a in &op.apply {
        let t = params.apply(&ctx.load(&a.input)?)?;
        write_table(&ctx.output(&a.output)?, &t, &schema(&a.input))?;
    }
    ctx.artifact("scaler.json", &params)?;
    Ok(table_metrics(&scaled))
}

fn normalize(ctx: &StageCtx<'_>, op: &NormalizationOp) -> Result<Metrics, OrchestrationError> {
    let table = ctx.load(&op.input)?;
    let (normed, params) = normalization(&table, op.axis, op.norm);
    write_table(&ctx.output(&op.output)?, &normed, &schema(&op.input))?;
    for a in &op.apply {
        let t = params.apply(&ctx.load(&a.input)?)?;
        write_table(&ctx.output(&a.output)?, &t, &schema(&a.input))?;
    }
    ctx.artifact("normalization.json", &params)?;
    Ok(table_metrics(&normed))
}

fn split(ctx: &StageCtx<'_>, op: &DataSplitOp) -> Result<Metrics, OrchestrationError> {
    let table = ctx.load(&op.input)?;
    let (train, valid) = data_split(&table, op.train_ratio, op.seed)?;
    write_table(&ctx.output(&op.train_output)?, &train, &schema(&op.input))?;
    write_table(&ctx.output(&op.valid_output)?, &valid, &schema(&op.input))?;
    let mut m = Metrics::new();
    put(&mut m, "rows", table.n_rows());
    put(&mut m, "train_rows", train.n_rows());
    put(&mut m, "valid_rows", valid.n_rows());
    Ok(m)
}

#[derive(Serialize, Deserialize)]
struct HorizontalModel {
    operator: String,
    architecture: Architecture,
    features: Vec<String>,
    state: ModelState,
}

/// Metrics of `global` on `data`, by model family.
fn horizontal_eval(arch: &Architecture, global: &ModelState, data: &Samples) -> Metrics {
    let params = global.flatten();
    let mut m = Metrics::new();
    if data.is_empty() {
        return m;
    }
    match arch.kind {
        ModelKind::Linear => {
            let mse = data
                .x
                .iter()
                .zip(&data.y)
                .map(|(x, y)| (arch.predict(params, x)[0] - y).powi(2))
                .sum::<f64>()
                / data.len() as f64;
            put(&mut m, "mse", mse);
        }
        ModelKind::Logistic => {
            let probs: Vec<f64> = data.x.iter().map(|x| arch.predict(params, x)[0]).collect();
            m = report_metrics(&probs, &data.y);
        }
        ModelKind::Softmax { .. } | ModelKind::Mlp { .. } => {
            let hits = data.x.iter().zip(&data.y).filter(|(x, y)| arch.predict_label(params, x) == **y).count();
            put(&mut m, "accuracy", hits as f64 / data.len() as f64);
            put(&mut m, "loss", arch.loss(params, &data.x, &data.y));
        }
    }
    m
}

fn horizontal(ctx: &StageCtx<'_>, op: &HorizontalOp) -> Result<Metrics, OrchestrationError> {
    let stage = ctx.stage;
    let label_trainers = stage.with_role(Role::LabelTrainer);
    let assist = stage.with_role(Role::AssistTrainer).pop().unwrap_or_default();
    let parties: Vec<PartyId> =
        label_trainers.iter().enumerate().map(|(i, n)| PartyId::new(i as u32, n.clone())).collect();
    let fp = op.fixed_point();
    let epochs = op.training.global_epochs;

    match ctx.role {
        Role::AssistTrainer => {
            let mut features: Option<(String, Vec<String>)> = None;
            for (name, bytes) in ctx.ch.gather(&label_trainers, HFL_SCHEMA)? {
                let f: Vec<String> =
                    serde_json::from_slice(&bytes).map_err(|e| OrchestrationError::Control(e.to_string()))?;
                match &features {
                    None => features = Some((name, f)),
                    Some((first, g)) if *g != f => {
                        return Err(ProtocolError::Violation(format!(
                            "feature columns of {name} differ from those of {first}"
                        ))
                        .into())
                    }
                    Some(_) => {}
                }
            }
            let features = features.map(|(_, f)| f).unwrap_or_default();
            let arch = Architecture::new(op.model, features.len());
            let setup = HflSetup { parties, assist, arch, cfg: op.training, fp };
            let global = hfl_assist(&ctx.ch, &setup, |round, _| {
                let mut m = Metrics::new();
                put(&mut m, "epoch", round + 1);
                ctx.progress_in_protocol(m)
            })?;
            let model =
                HorizontalModel { operator: stage.operator.name().into(), architecture: arch, features, state: global };
            ctx.artifact("model.json", &model)?;
            let mut m = Metrics::new();
            put(&mut m, "epochs", epochs);
            Ok(m)
        }
        Role::LabelTrainer => {
            let train = ctx.load(&op.train)?;
            let data = Samples::from_table(&train).map_err(ProtocolError::from)?;
            let eval_data = match &op.valid {
                Some(v) => Samples::from_table(&ctx.load(v)?).map_err(ProtocolError::from)?,
                None => data.clone(),
            };
            let features = train.feature_names().to_vec();
            let payload = serde_json::to_vec(&features).map_err(|e| OrchestrationError::Control(e.to_string()))?;
            ctx.ch.send(&assist, HFL_SCHEMA, payload)?;

            let me = parties
                .iter()
                .find(|p| p.name == ctx.party)
                .cloned()
                .ok_or_else(|| OrchestrationError::Usage(format!("{} is not a label trainer here", ctx.party)))?;
            let mut rng = ctx.rng();
            let plan =
                negotiate_masks(&ctx.ch, &parties, &me, &format!("{}/{}", ctx.cfg.session_id, stage.index), &mut rng)?;
            let arch = Architecture::new(op.model, features.len());
            let setup = HflSetup { parties: parties.clone(), assist, arch, cfg: op.training, fp };
            let mut last = Metrics::new();
            let global = hfl_party(&ctx.ch, &setup, &plan, &data, |round, g| {
                let mut m = Metrics::new();
                put(&mut m, "epoch", round + 1);
                m.extend(horizontal_eval(&arch, g, &eval_data));
                last = m.clone();
                ctx.progress_in_protocol(m)
            })?;
            let model =
                HorizontalModel { operator: stage.operator.name().into(), architecture: arch, features, state: global };
            ctx.artifact("model.json", &model)?;
            last.remove("epoch");
            put(&mut last, "epochs", epochs);
            put(&mut last, "rows", data.len());
            Ok(last)
        }
        r => Err(OrchestrationError::Usage(format!("role {r} has no horizontal routine"))),
    }
}

#[derive(Serialize, Deserialize, PartialEq, Eq)]
struct Alignment {
    train_rows: usize,
    train_digest: u32,
    valid_rows: Option<usize>,
    valid_digest: Option<u32>,
}

fn id_digest(t: &Table) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for id in t.ids() {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    h.finalize()
}

impl Alignment {
    fn of(train: &Table, valid: Option<&Table>) -> Self {
        Self {
            train_rows: train.n_rows(),
            train_digest: id_digest(train),
            valid_rows: valid.map(Table::n_rows),
            valid_digest: valid.map(id_digest),
        }
    }
}

/// Checks that every trainer holds the label trainer's rows in the same order.
fn check_alignment(ctx: &StageCtx<'_>, trainers: &[String], mine: &Alignment) -> Result<(), OrchestrationError> {
    for (name, bytes) in ctx.ch.gather(trainers, ALIGN)? {
        let theirs: Alignment =
            serde_json::from_slice(&bytes).map_err(|e| OrchestrationError::Control(e.to_string()))?;
        if theirs != *mine {
            return Err(ProtocolError::Violation(format!(
                "rows of {name} are not aligned with the label trainer's (ids or order differ)"
            ))
            .into());
        }
    }
    Ok(())
}

fn send_alignment(ctx: &StageCtx<'_>, label: &str, mine: &Alignment) -> Result<(), OrchestrationError> {
    let bytes = serde_json::to_vec(mine).map_err(|e| OrchestrationError::Control(e.to_string()))?;
    Ok(ctx.ch.send(label, ALIGN, bytes)?)
}

#[derive(Serialize, Deserialize)]
struct VlrModel {
    features: Vec<String>,
    #[serde(flatten)]
    state: VlrPartyState,
}

fn vertical_lr(ctx: &StageCtx<'_>, op: &VerticalLrOp) -> Result<Metrics, OrchestrationError> {
    let label = ctx.stage.with_role(Role::LabelTrainer).pop().unwrap_or_default();
    let trainers = ctx.stage.with_role(Role::Trainer);
    let setup = VlrSetup { label: label.clone(), trainers: trainers.clone(), params: op.params };
    let train = ctx.load(&op.train)?;
    let valid = op.valid.as_ref().map(|v| ctx.load(v)).transpose()?;
    let align = Alignment::of(&train, valid.as_ref());
    let rows = train.rows();
    let mut rng = ctx.rng();
    let mut m = Metrics::new();
    put(&mut m, "epochs", op.params.epochs);

    let state = match ctx.role {
        Role::LabelTrainer => {
            check_alignment(ctx, &trainers, &align)?;
            let labels = train.require_labels()?.to_vec();
            let mut last = Metrics::new();
            let state = vlr_label_trainer(&ctx.ch, &setup, &rows, &labels, &mut rng, |_| {}, |epoch, probs| {
                let mut e = Metrics::new();
                put(&mut e, "epoch", epoch + 1);
                e.extend(report_metrics(probs, &labels));
                last = e.clone();
                ctx.progress_in_protocol(e)
            })?;
            if let Some(v) = &valid {
                let probs = vlr_predict_label(&ctx.ch, &setup, &state, &v.rows())?;
                m.extend(report_metrics(&probs, v.require_labels()?));
                put(&mut m, "eval", "valid");
            } else {
                last.remove("epoch");
                m.extend(last);
                put(&mut m, "eval", "train");
            }
            state
        }
        Role::Trainer => {
            send_alignment(ctx, &label, &align)?;
            let state = vlr_trainer(&ctx.ch, &setup, &rows, &mut rng, |_| {})?;
            if let Some(v) = &valid {
                vlr_predict_trainer(&ctx.ch, &setup, &state, &v.rows())?;
            }
            state
        }
        r => return Err(OrchestrationError::Usage(format!("role {r} has no vertical routine"))),
    };
    put(&mut m, "rows", train.n_rows());
    ctx.artifact("model.json", &VlrModel { features: train.feature_names().to_vec(), state })?;
    Ok(m)
}

fn vertical_xgb(ctx: &StageCtx<'_>, op: &VerticalXgbOp) -> Result<Metrics, OrchestrationError> {
    let label = ctx.stage.with_role(Role::LabelTrainer).pop().unwrap_or_default();
    let trainers = ctx.stage.with_role(Role::Trainer);
    let setup = VxgbSetup {
        label: PartyId::new(0, label.clone()),
        trainers: trainers.iter().enumerate().map(|(i, n)| PartyId::new(i as u32 + 1, n.clone())).collect(),
        params: op.params,
        fp: FixedPointParams::default(),
        pack: PackParams::default(),
    };
    let train = ctx.load(&op.train)?;
    let valid = op.valid.as_ref().map(|v| ctx.load(v)).transpose()?;
    let align = Alignment::of(&train, valid.as_ref());
    let mut m = Metrics::new();
    put(&mut m, "epochs", op.params.num_trees);

    match ctx.role {
        Role::LabelTrainer => {
            check_alignment(ctx, &trainers, &align)?;
            let labels = train.require_labels()?.to_vec();
            let mut rng = ctx.rng();
            let mut last = Metrics::new();
            let out = vxgb_label_trainer(&ctx.ch, &setup, &train, &mut rng, |t, margins| {
                let probs: Vec<f64> = margins.iter().map(|&z| sigmoid(z)).collect();
                let mut e = Metrics::new();
                put(&mut e, "epoch", t + 1);
                e.extend(report_metrics(&probs, &labels));
                last = e.clone();
                ctx.progress_in_protocol(e)
            })?;
            if let Some(v) = &valid {
                let probs = vxgb_predict_label(&ctx.ch, &setup, &out.model, &out.splits, v)?;
                m.extend(report_metrics(&probs, v.require_labels()?));
                put(&mut m, "eval", "valid");
            } else {
                last.remove("epoch");
                m.extend(last);
                put(&mut m, "eval", "train");
            }
            ctx.artifact("model.json", &out.model)?;
            ctx.artifact("splits.json", &out.splits)?;
        }
        Role::Trainer => {
            send_alignment(ctx, &label, &align)?;
            let out = vxgb_trainer(&ctx.ch, &setup, &train)?;
            if let Some(v) = &valid {
                vxgb_predict_trainer(&ctx.ch, &setup, &out.splits, v)?;
            }
            ctx.artifact("splits.json", &out.splits)?;
            put(&mut m, "histogram_additions", out.histogram_additions);
        }
        r => return Err(OrchestrationError::Usage(format!("role {r} has no vertical routine"))),
    }
    put(&mut m, "rows", train.n_rows());
    Ok(m)
}
