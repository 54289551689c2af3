//! Training loop, ablation grid, learning-rate sweeps and metrics export.
//!
//! Per step: forward all heads, build the losses (with the weighted
//! contrastive term when DLR is on), backpropagate, coordinate the shared-scope
//! gradients when GMS is on, then take one per-group descent step.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::datagen::{
    cluster_examples, cp_split, evaluate, generate_synthetic, load_vqa_json, select, Accuracy, CPSplit, QAExample,
    SynthSpec, Vocabulary, DEFAULT_QTYPE_PREFIX_LEN,
};
use crate::error::{CedoError, Result};
use crate::gms::{coordinate, GmsConfig, GmsDiagnostics, GradientSet};
use crate::losses::{assemble, compute_dlr_weights, LossConfig, LossWeightTable};
use crate::mho::{apply_update, LearningRates};
use crate::model::{
    backward, flatten_group_grads, forward, unflatten_group_grads, Batch, GradScope, Head, ModelDims, ModelParams,
};
use crate::numeric::{Matrix, RngStream};

pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const METRICS_CSV_HEADER: &str = "kind,epoch,l_t,l_q,l_v,l_supcon,total,all,open,closed";
pub const SWEEP_CSV_HEADER: &str = "eta_q,eta_v,eta_c,all,open,closed";
pub const ABLATION_CSV_HEADER: &str = "method,mho,gms,dlr,all,open,closed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Mechanisms {
    pub mho: bool,
    pub gms: bool,
    pub dlr: bool,
}

impl Default for Mechanisms {
    fn default() -> Self {
        Mechanisms {
            mho: true,
            gms: true,
            dlr: true,
        }
    }
}

impl Mechanisms {
    pub const NONE: Mechanisms = Mechanisms {
        mho: false,
        gms: false,
        dlr: false,
    };
    pub const ALL: Mechanisms = Mechanisms {
        mho: true,
        gms: true,
        dlr: true,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataSource {
    Synthetic(SynthSpec),
    /// JSON corpus; without a split file the changing-priors split is built on load.
    Corpus {
        corpus: PathBuf,
        split: Option<PathBuf>,
        #[serde(default = "default_prefix_len")]
        qtype_prefix_len: usize,
    },
}

fn default_prefix_len() -> usize {
    DEFAULT_QTYPE_PREFIX_LEN
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub hidden_dim: usize,
    pub fused_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            hidden_dim: 32,
            fused_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Per-group rates, used when MHO is on.
    pub rates: LearningRates,
    /// Shared rate for every group when MHO is off.
    pub single_rate: f64,
    pub gms: GmsConfig,
    pub scope: GradScope,
    pub loss: LossConfig,
    pub mechanisms: Mechanisms,
    pub data: DataSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Architecture::default(),
            epochs: 60,
            batch_size: 64,
            seed: 0,
            rates: LearningRates::default(),
            single_rate: 0.003,
            gms: GmsConfig::default(),
            scope: GradScope::ClassifierOnly,
            // raw fused features make the contrastive term unbounded below
            loss: LossConfig {
                normalize_features: true,
                ..LossConfig::default()
            },
            mechanisms: Mechanisms::ALL,
            data: DataSource::Synthetic(SynthSpec::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CedoError::Config("batch_size must be positive".into()));
        }
        if self.arch.hidden_dim == 0 || self.arch.fused_dim == 0 {
            return Err(CedoError::Config("hidden and fused dims must be positive".into()));
        }
        self.effective_rates()?;
        self.gms.validate()?;
        self.loss.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CedoError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CedoError::Config(format!("{}: {e}", path.display())))
    }

    pub fn with_mechanisms(&self, mechanisms: Mechanisms) -> Self {
        TrainConfig {
            mechanisms,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.seed = seed;
        if let DataSource::Synthetic(spec) = &mut cfg.data {
            spec.seed = seed;
        }
        cfg
    }

    /// Per-group rates when MHO is on, otherwise the single shared rate.
    pub fn effective_rates(&self) -> Result<LearningRates> {
        let r = if self.mechanisms.mho {
            self.rates
        } else {
            LearningRates {
                eta_q: self.single_rate,
                eta_v: self.single_rate,
                eta_c: self.single_rate,
            }
        };
        r.validate().map_err(|e| CedoError::Config(e.to_string()))?;
        Ok(r)
    }

    /// The unimodal branch losses belong to GMS; the contrastive term to DLR.
    pub fn effective_loss(&self) -> LossConfig {
        LossConfig {
            enable_q_branch: self.loss.enable_q_branch && self.mechanisms.gms,
            enable_v_branch: self.loss.enable_v_branch && self.mechanisms.gms,
            enable_dlr: self.mechanisms.dlr,
            ..self.loss
        }
    }
}

/// Loss sums over an epoch divided by the number of training samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub l_t: f64,
    pub l_q: f64,
    pub l_v: f64,
    pub l_supcon: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmsSummary {
    pub steps: usize,
    /// Mean cosine over steps where it was defined (tq, tv, qv).
    pub mean_cosine: [Option<f64>; 3],
    /// Fraction of steps with surgery applied to t, q, v.
    pub surgery_rate: [f64; 3],
    pub mean_min_norm: f64,
    pub stationary_steps: usize,
    /// References used for surgery on t, q, v.
    pub pairing: [String; 3],
}

fn summarize(diags: &[GmsDiagnostics]) -> GmsSummary {
    let steps = diags.len();
    let mean_cosine = std::array::from_fn(|k| {
        let vals: Vec<f64> = diags.iter().filter_map(|d| d.cosines[k]).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    });
    let surgery_rate =
        std::array::from_fn(|k| diags.iter().filter(|d| d.surgery_applied[k]).count() as f64 / steps.max(1) as f64);
    GmsSummary {
        steps,
        mean_cosine,
        surgery_rate,
        mean_min_norm: diags.iter().map(|d| d.min_norm).sum::<f64>() / steps.max(1) as f64,
        stationary_steps: diags.iter().filter(|d| d.stationary).count(),
        pairing: ["q".into(), "v".into(), "q".into()],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub schema_version: u32,
    pub config: TrainConfig,
    pub epochs: Vec<EpochLosses>,
    pub steps: usize,
    pub train_accuracy: Accuracy,
    pub accuracy: Accuracy,
    pub gms: Option<GmsSummary>,
    pub train_size: usize,
    pub test_size: usize,
    /// Excluded from serialised metrics so that reruns are byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Everything a run produces; [`RunMetrics`] is the serialisable part.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: RunMetrics,
    pub params: ModelParams,
    pub vocabulary: Vocabulary,
    pub weight_table: Option<LossWeightTable>,
    pub diagnostics: Vec<GmsDiagnostics>,
}

/// A resolved dataset: pool, split, vocabulary.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub pool: Vec<QAExample>,
    pub split: CPSplit,
    pub vocabulary: Vocabulary,
}

impl PreparedData {
    pub fn train(&self) -> Result<Vec<&QAExample>> {
        select(&self.pool, &self.split.train)
    }

    pub fn test(&self) -> Result<Vec<&QAExample>> {
        select(&self.pool, &self.split.test)
    }
}

/// Stream labels for independent sub-streams of a run.
const STREAM_SPLIT: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;

pub fn prepare_data(source: &DataSource, seed: u64) -> Result<PreparedData> {
    let root = RngStream::new(seed);
    let (pool, split) = match source {
        DataSource::Synthetic(spec) => {
            let pool = generate_synthetic(spec)?;
            let split = cp_split(&cluster_examples(&pool), &mut root.fork(STREAM_SPLIT))?;
            (pool, split)
        }
        DataSource::Corpus {
            corpus,
            split,
            qtype_prefix_len,
        } => {
            let pool = load_vqa_json(corpus, *qtype_prefix_len)?;
            let split = match split {
                Some(p) => CPSplit::load(p)?,
                None => cp_split(&cluster_examples(&pool), &mut root.fork(STREAM_SPLIT))?,
            };
            (pool, split)
        }
    };
    if split.train.is_empty() {
        return Err(CedoError::Parse("training split is empty".into()));
    }
    let vocabulary = Vocabulary::from_examples(&pool);
    Ok(PreparedData {
        pool,
        split,
        vocabulary,
    })
}

fn ids_of(examples: &[&QAExample], vocab: &Vocabulary) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut answers = Vec::with_capacity(examples.len());
    let mut qtypes = Vec::with_capacity(examples.len());
    for e in examples {
        answers.push(
            vocab
                .answer_id(&e.answer)
                .ok_or_else(|| CedoError::Parse(format!("answer `{}` not in vocabulary", e.answer)))?,
        );
        qtypes.push(
            vocab
                .qtype_id(&e.qtype)
                .ok_or_else(|| CedoError::Parse(format!("qtype `{}` not in vocabulary", e.qtype)))?,
        );
    }
    Ok((answers, qtypes))
}

fn make_batch(examples: &[&QAExample], vocab: &Vocabulary, dims: ModelDims) -> Result<Batch> {
    let n = examples.len();
    let mut q = Vec::with_capacity(n * dims.question_dim);
    let mut v = Vec::with_capacity(n * dims.image_dim);
    for e in examples {
        q.extend_from_slice(&e.question_feature);
        v.extend_from_slice(&e.image_feature);
    }
    let (answers, qtypes) = ids_of(examples, vocab)?;
    Batch::new(
        Matrix::from_vec(n, dims.question_dim, q)?,
        Matrix::from_vec(n, dims.image_dim, v)?,
        answers,
        qtypes,
    )
}

/// Argmax of the joint head, mapped to answer labels.
pub fn predict(params: &ModelParams, examples: &[&QAExample], vocab: &Vocabulary) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(256) {
        let batch = make_batch(chunk, vocab, params.dims)?;
        for cache in forward(params, &batch)? {
            let logits = cache.logits(Head::Joint);
            let best = logits
                .iter()
                .enumerate()
                .fold(0, |b, (j, &z)| if z > logits[b] { j } else { b });
            out.push(vocab.answers[best].clone());
        }
    }
    Ok(out)
}

pub fn evaluate_params(params: &ModelParams, examples: &[&QAExample], vocab: &Vocabulary) -> Result<Accuracy> {
    let preds = predict(params, examples, vocab)?;
    evaluate(&preds, examples)
}

/// One optimisation step on a batch. Returns the loss bundle and diagnostics.
pub struct StepOutput {
    pub losses: crate::losses::LossBundle,
    pub diagnostics: Option<GmsDiagnostics>,
}

pub fn train_step(
    params: &mut ModelParams,
    batch: &Batch,
    cfg: &TrainConfig,
    table: Option<&LossWeightTable>,
    step: usize,
) -> Result<StepOutput> {
    let loss_cfg = cfg.effective_loss();
    let caches = forward(params, batch)?;
    let (losses, upstream) = assemble(&caches, &batch.answer_ids, &batch.qtype_ids, table, &loss_cfg)?;
    if !losses.total.is_finite() {
        return Err(CedoError::Divergence {
            step,
            detail: format!("total loss {}", losses.total),
        });
    }
    let grads = backward(params, &caches, &upstream)?;
    let mut update = grads.sum();
    let mut diagnostics = None;
    if cfg.mechanisms.gms {
        let scope = cfg.scope;
        let gs = GradientSet::new(
            flatten_group_grads(&grads.joint, scope),
            flatten_group_grads(&grads.question, scope),
            flatten_group_grads(&grads.image, scope),
            scope,
        )
        .map_err(|e| match e {
            CedoError::Numeric(d) => CedoError::Divergence { step, detail: d },
            other => other,
        })?;
        let out = coordinate(&gs, &cfg.gms)?;
        let replaced = unflatten_group_grads(&out.direction, params.dims, scope)?;
        for &g in scope.groups() {
            update.set_group_values(g, &replaced.group_values(g))?;
        }
        diagnostics = Some(GmsDiagnostics {
            step,
            cosines: out.report.cosines,
            alpha: out.pareto.weights,
            min_norm: out.pareto.min_norm,
            stationary: out.pareto.stationary,
            surgery_applied: out.report.applied,
            degenerate: out.report.degenerate,
        });
    }
    let rates = cfg.effective_rates()?;
    apply_update(params, &update, &rates, step).map_err(|e| match e {
        CedoError::Numeric(d) => CedoError::Divergence { step, detail: d },
        other => other,
    })?;
    Ok(StepOutput { losses, diagnostics })
}

pub fn train(cfg: &TrainConfig) -> Result<RunMetrics> {
    run(cfg).map(|o| o.metrics)
}

pub fn run(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = prepare_data(&cfg.data, cfg.seed)?;
    run_on(cfg, &data)
}

/// Trains on an already prepared dataset.
pub fn run_on(cfg: &TrainConfig, data: &PreparedData) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let train_set = data.train()?;
    let test_set = data.test()?;
    let first = train_set[0];
    let dims = ModelDims {
        question_dim: first.question_feature.dim(),
        image_dim: first.image_feature.dim(),
        hidden_dim: cfg.arch.hidden_dim,
        fused_dim: cfg.arch.fused_dim,
        num_answers: data.vocabulary.answers.len(),
    };
    let root = RngStream::new(cfg.seed);
    let mut params = ModelParams::init(dims, &mut root.fork(STREAM_INIT))?;
    let mut shuffle_rng = root.fork(STREAM_SHUFFLE);

    let (train_answers, train_qtypes) = ids_of(&train_set, &data.vocabulary)?;
    let weight_table = if cfg.mechanisms.dlr {
        Some(compute_dlr_weights(
            train_qtypes.iter().copied().zip(train_answers.iter().copied()),
        )?)
    } else {
        None
    };

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut diagnostics = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut sums = [0.0; 5];
        for chunk in order.chunks(cfg.batch_size) {
            let members: Vec<&QAExample> = chunk.iter().map(|&i| train_set[i]).collect();
            let batch = make_batch(&members, &data.vocabulary, dims)?;
            let out = train_step(&mut params, &batch, cfg, weight_table.as_ref(), step)?;
            let l = out.losses;
            for (s, v) in sums.iter_mut().zip([l.l_t, l.l_q, l.l_v, l.l_supcon, l.total]) {
                *s += v;
            }
            diagnostics.extend(out.diagnostics);
            step += 1;
        }
        let n = train_set.len() as f64;
        epochs.push(EpochLosses {
            epoch,
            l_t: sums[0] / n,
            l_q: sums[1] / n,
            l_v: sums[2] / n,
            l_supcon: sums[3] / n,
            total: sums[4] / n,
        });
        log::debug!("epoch {epoch}: total {:.6}", sums[4] / n);
    }

    let train_accuracy = evaluate_params(&params, &train_set, &data.vocabulary)?;
    let accuracy = evaluate_params(&params, &test_set, &data.vocabulary)?;
    let metrics = RunMetrics {
        schema_version: METRICS_SCHEMA_VERSION,
        config: cfg.clone(),
        epochs,
        steps: step,
        train_accuracy,
        accuracy,
        gms: cfg.mechanisms.gms.then(|| summarize(&diagnostics)),
        train_size: train_set.len(),
        test_size: test_set.len(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutcome {
        metrics,
        params,
        vocabulary: data.vocabulary.clone(),
        weight_table,
        diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub mechanisms: Mechanisms,
    pub metrics: RunMetrics,
}

/// The five ablation configurations in table order.
pub fn ablation_grid() -> [(&'static str, Mechanisms); 5] {
    let only = |mho, gms, dlr| Mechanisms { mho, gms, dlr };
    [
        ("Baseline", Mechanisms::NONE),
        ("w/ MHO", only(true, false, false)),
        ("w/ GMS", only(false, true, false)),
        ("w/ DLR", only(false, false, true)),
        ("CEDO", Mechanisms::ALL),
    ]
}

pub fn ablate(base: &TrainConfig) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let data = prepare_data(&base.data, base.seed)?;
    ablation_grid()
        .into_iter()
        .map(|(name, mech)| {
            let cfg = base.with_mechanisms(mech);
            Ok(AblationRow {
                method: name.to_string(),
                mechanisms: mech,
                metrics: run_on(&cfg, &data)?.metrics,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_CSV_HEADER}\n");
    let mark = |b: bool| if b { "y" } else { "-" };
    for r in rows {
        let a = r.metrics.accuracy;
        let _ = writeln!(
            out,
            "{},{},{},{},{:.2},{:.2},{:.2}",
            r.method,
            mark(r.mechanisms.mho),
            mark(r.mechanisms.gms),
            mark(r.mechanisms.dlr),
            a.all,
            a.open,
            a.closed
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Every combination; empty axes stay at the base rate.
    Cartesian,
    /// One axis at a time with the others held at the base rates.
    PerAxis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateGrid {
    pub eta_q: Vec<f64>,
    pub eta_v: Vec<f64>,
    pub eta_c: Vec<f64>,
    pub mode: SweepMode,
}

impl RateGrid {
    pub fn points(&self, base: LearningRates) -> Vec<LearningRates> {
        match self.mode {
            SweepMode::PerAxis => {
                let mut pts = Vec::new();
                pts.extend(self.eta_q.iter().map(|&q| LearningRates { eta_q: q, ..base }));
                pts.extend(self.eta_v.iter().map(|&v| LearningRates { eta_v: v, ..base }));
                pts.extend(self.eta_c.iter().map(|&c| LearningRates { eta_c: c, ..base }));
                pts
            }
            SweepMode::Cartesian => {
                let or_base = |xs: &[f64], b: f64| if xs.is_empty() { vec![b] } else { xs.to_vec() };
                let qs = or_base(&self.eta_q, base.eta_q);
                let vs = or_base(&self.eta_v, base.eta_v);
                let cs = or_base(&self.eta_c, base.eta_c);
                let mut pts = Vec::new();
                for &eta_q in &qs {
                    for &eta_v in &vs {
                        for &eta_c in &cs {
                            pts.push(LearningRates { eta_q, eta_v, eta_c });
                        }
                    }
                }
                pts
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rates: LearningRates,
    pub metrics: RunMetrics,
}

/// One run per grid point, with MHO forced on so the rates take effect.
pub fn sweep_rates(base: &TrainConfig, grid: &RateGrid) -> Result<Vec<SweepRow>> {
    let points = grid.points(base.rates);
    if points.is_empty() {
        return Err(CedoError::Config("rate grid is empty".into()));
    }
    let mut template = base.clone();
    template.mechanisms.mho = true;
    template.validate()?;
    let data = prepare_data(&template.data, template.seed)?;
    points
        .into_iter()
        .map(|rates| {
            let mut cfg = template.clone();
            cfg.rates = rates;
            Ok(SweepRow {
                rates,
                metrics: run_on(&cfg, &data)?.metrics,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        let a = r.metrics.accuracy;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.rates.eta_q, r.rates.eta_v, r.rates.eta_c, a.all, a.open, a.closed
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Csv,
}

/// CSV rows: one `epoch` row per epoch with losses, then one `final` row with
/// test accuracies. Unused cells are empty.
pub fn metrics_csv(metrics: &RunMetrics) -> String {
    let mut out = format!("{METRICS_CSV_HEADER}\n");
    for e in &metrics.epochs {
        let _ = writeln!(
            out,
            "epoch,{},{},{},{},{},{},,,",
            e.epoch, e.l_t, e.l_q, e.l_v, e.l_supcon, e.total
        );
    }
    let a = metrics.accuracy;
    let _ = writeln!(out, "final,,,,,,,{},{},{}", a.all, a.open, a.closed);
    out
}

pub fn export_metrics(metrics: &RunMetrics, path: &Path, format: ExportFormat) -> Result<()> {
    let text = match format {
        ExportFormat::Json => {
            let mut s = serde_json::to_string_pretty(metrics).map_err(|e| CedoError::Parse(e.to_string()))?;
            s.push('\n');
            s
        }
        ExportFormat::Csv => metrics_csv(metrics),
    };
    std::fs::write(path, text).map_err(|e| CedoError::io(path, e))
}

pub fn write_diagnostics(diags: &[GmsDiagnostics], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CedoError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for d in diags {
        let line = serde_json::to_string(d).map_err(|e| CedoError::Parse(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| CedoError::io(path, e))?;
    }
    w.flush().map_err(|e| CedoError::io(path, e))
}
