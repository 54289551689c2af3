//! Corpora, question-type labelling, the changing-priors split and accuracy.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CedoError, Result};
use crate::numeric::{RngStream, Vector};

pub const DEFAULT_QTYPE_PREFIX_LEN: usize = 2;
pub const YES_NO_QTYPE: &str = "yes/no";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerClass {
    Open,
    Closed,
}

impl AnswerClass {
    pub fn of(answer: &str) -> Self {
        if is_yes_no(answer) {
            AnswerClass::Closed
        } else {
            AnswerClass::Open
        }
    }
}

fn is_yes_no(answer: &str) -> bool {
    let a = answer.trim();
    a.eq_ignore_ascii_case("yes") || a.eq_ignore_ascii_case("no")
}

#[derive(Debug, Clone, PartialEq)]
pub struct QAExample {
    pub id: String,
    pub question: String,
    pub question_feature: Vector,
    pub image_feature: Vector,
    pub qtype: String,
    pub answer: String,
    pub answer_class: AnswerClass,
}

impl QAExample {
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.question.split_whitespace()
    }
}

/// Labels a question by its leading words; yes/no answers always map to `"yes/no"`.
pub fn label_qtype(question: &str, answer: &str, prefix_len: usize) -> Result<String> {
    if prefix_len == 0 {
        return Err(CedoError::Argument("qtype prefix length must be positive".into()));
    }
    let tokens: Vec<String> = question
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect();
    if tokens.is_empty() {
        return Err(CedoError::Argument("cannot label an empty question".into()));
    }
    if is_yes_no(answer) {
        return Ok(YES_NO_QTYPE.to_string());
    }
    Ok(tokens
        .iter()
        .take(prefix_len)
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join(" "))
}

/// Orders ids numerically when both are integers, lexicographically otherwise.
pub fn compare_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub qtype: String,
    pub answer: String,
    /// Frequency rank within the qtype, starting at 1.
    pub rank: usize,
    pub members: Vec<String>,
}

/// One cluster per (qtype, answer). Qtypes in lexicographic order; within a
/// qtype by descending size, ties by answer.
pub fn cluster_examples(pool: &[QAExample]) -> Vec<Cluster> {
    let mut groups: BTreeMap<&str, BTreeMap<&str, Vec<String>>> = BTreeMap::new();
    for ex in pool {
        groups
            .entry(ex.qtype.as_str())
            .or_default()
            .entry(ex.answer.as_str())
            .or_default()
            .push(ex.id.clone());
    }
    let mut clusters = Vec::new();
    for (qtype, answers) in groups {
        let mut list: Vec<(&str, Vec<String>)> = answers.into_iter().collect();
        list.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(b.0)));
        for (i, (answer, members)) in list.into_iter().enumerate() {
            clusters.push(Cluster {
                qtype: qtype.to_string(),
                answer: answer.to_string(),
                rank: i + 1,
                members,
            });
        }
    }
    clusters
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub qtype: String,
    pub answer: String,
    pub rank: usize,
    pub size: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub ratio_used: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CPSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub allocation_log: Vec<Allocation>,
}

impl CPSplit {
    /// Achieved train:test ratio (train / test).
    pub fn global_ratio(&self) -> f64 {
        self.train.len() as f64 / self.test.len().max(1) as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CedoError::Parse(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| CedoError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CedoError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CedoError::Parse(format!("{}: {e}", path.display())))
    }
}

/// Train share `(numerator, denominator, label)` for a cluster rank.
fn rank_ratio(rank: usize) -> (usize, usize, &'static str) {
    match rank {
        1 => (39, 40, "39:1"),
        2 => (1, 40, "1:39"),
        _ => (3, 4, "3:1"),
    }
}

/// `round(n · num / den)`, halves rounded away from zero, in exact integer arithmetic.
fn round_share(n: usize, num: usize, den: usize) -> usize {
    (2 * n * num + den) / (2 * den)
}

/// Changing-priors split: per qtype the most frequent answer goes 39:1 to
/// train, the second 1:39, the rest 3:1. Members are shuffled then prefix-split.
pub fn cp_split(clusters: &[Cluster], rng: &mut RngStream) -> Result<CPSplit> {
    if clusters.is_empty() {
        return Err(CedoError::Argument("cp_split needs at least one cluster".into()));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut allocation_log = Vec::with_capacity(clusters.len());
    for c in clusters {
        let (num, den, label) = rank_ratio(c.rank);
        let n = c.members.len();
        let k = round_share(n, num, den);
        let mut members = c.members.clone();
        rng.shuffle(&mut members);
        let (tr, te) = members.split_at(k);
        train.extend_from_slice(tr);
        test.extend_from_slice(te);
        allocation_log.push(Allocation {
            qtype: c.qtype.clone(),
            answer: c.answer.clone(),
            rank: c.rank,
            size: n,
            train_count: k,
            test_count: n - k,
            ratio_used: label.to_string(),
        });
    }
    Ok(CPSplit {
        train,
        test,
        allocation_log,
    })
}

/// Per qtype: `(answer, train count, test count)` in cluster order.
pub fn split_histograms(pool: &[QAExample], split: &CPSplit) -> BTreeMap<String, Vec<(String, usize, usize)>> {
    let train: HashSet<&str> = split.train.iter().map(String::as_str).collect();
    let test: HashSet<&str> = split.test.iter().map(String::as_str).collect();
    let mut out: BTreeMap<String, Vec<(String, usize, usize)>> = BTreeMap::new();
    for c in cluster_examples(pool) {
        let tr = c.members.iter().filter(|m| train.contains(m.as_str())).count();
        let te = c.members.iter().filter(|m| test.contains(m.as_str())).count();
        out.entry(c.qtype).or_default().push((c.answer, tr, te));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_qtypes: usize,
    pub answers_per_qtype: usize,
    pub samples: usize,
    pub question_dim: usize,
    pub image_dim: usize,
    /// Scale of the answer-conditioned image centres, in `[0, 1]`.
    pub signal_strength: f64,
    pub noise: f64,
    /// Exponent of the per-qtype answer frequencies `∝ 1/rank^s`.
    pub zipf_exponent: f64,
    /// Make the first qtype a yes/no question.
    pub include_yes_no: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_qtypes: 4,
            answers_per_qtype: 4,
            samples: 2400,
            question_dim: 8,
            image_dim: 16,
            signal_strength: 1.0,
            noise: 1.0,
            zipf_exponent: 1.0,
            include_yes_no: true,
            seed: 0,
        }
    }
}

const OPEN_PREFIXES: [&str; 6] = [
    "what organ",
    "how many",
    "where is",
    "which part",
    "what modality",
    "what color",
];

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_qtypes == 0 || self.answers_per_qtype == 0 || self.samples == 0 {
            return Err(CedoError::Argument("synthetic spec counts must be positive".into()));
        }
        if self.question_dim == 0 || self.image_dim == 0 {
            return Err(CedoError::Argument("synthetic feature dims must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return Err(CedoError::Argument(format!(
                "signal_strength must lie in [0, 1], got {}",
                self.signal_strength
            )));
        }
        if !(self.noise > 0.0) || !self.noise.is_finite() {
            return Err(CedoError::Argument("noise must be positive".into()));
        }
        if !(self.zipf_exponent > 0.0) || !self.zipf_exponent.is_finite() {
            return Err(CedoError::Argument("zipf_exponent must be positive".into()));
        }
        if self.samples < self.num_qtypes * self.answers_per_qtype {
            return Err(CedoError::Argument(
                "samples must cover every (qtype, answer) pair at least once".into(),
            ));
        }
        Ok(())
    }
}

/// Splits `total` in proportion to `weights` by largest remainder; ties go to lower indices.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let raw: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Synthetic corpus with question features carrying only the qtype and image
/// features carrying the answer. Answer frequencies within a qtype follow a Zipf law.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<QAExample>> {
    spec.validate()?;
    let mut rng = RngStream::new(spec.seed);

    struct QType {
        prefix: String,
        answers: Vec<String>,
    }
    let qtypes: Vec<QType> = (0..spec.num_qtypes)
        .map(|k| {
            if spec.include_yes_no && k == 0 {
                return QType {
                    prefix: "is there".into(),
                    answers: vec!["yes".into(), "no".into()],
                };
            }
            let prefix = OPEN_PREFIXES
                .get(k - usize::from(spec.include_yes_no))
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("kind{k} question"));
            let stem = prefix.split(' ').next_back().unwrap_or("a").to_string();
            let answers = (0..spec.answers_per_qtype).map(|i| format!("{stem}{i}")).collect();
            QType { prefix, answers }
        })
        .collect();

    let qtype_centres: Vec<Vec<f64>> = (0..qtypes.len())
        .map(|_| (0..spec.question_dim).map(|_| rng.standard_normal()).collect())
        .collect();
    let answer_centres: Vec<Vec<Vec<f64>>> = qtypes
        .iter()
        .map(|qt| {
            qt.answers
                .iter()
                .map(|_| (0..spec.image_dim).map(|_| rng.standard_normal()).collect())
                .collect()
        })
        .collect();

    let per_qtype = apportion(spec.samples, &vec![1.0; qtypes.len()]);
    let mut slots: Vec<(usize, usize)> = Vec::with_capacity(spec.samples);
    for (k, (qt, &n)) in qtypes.iter().zip(&per_qtype).enumerate() {
        let weights: Vec<f64> = (0..qt.answers.len())
            .map(|r| 1.0 / ((r + 1) as f64).powf(spec.zipf_exponent))
            .collect();
        for (a, c) in apportion(n, &weights).into_iter().enumerate() {
            slots.extend(std::iter::repeat_n((k, a), c));
        }
    }
    rng.shuffle(&mut slots);

    let width = spec.samples.to_string().len();
    let mut out = Vec::with_capacity(slots.len());
    for (idx, (k, a)) in slots.into_iter().enumerate() {
        let qt = &qtypes[k];
        let question_feature: Vector = qtype_centres[k]
            .iter()
            .map(|c| c + spec.noise * rng.standard_normal())
            .collect();
        let image_feature: Vector = answer_centres[k][a]
            .iter()
            .map(|c| spec.signal_strength * c + spec.noise * rng.standard_normal())
            .collect();
        let question = format!("{} sample {idx} ?", qt.prefix);
        let answer = qt.answers[a].clone();
        let qtype = label_qtype(&question, &answer, DEFAULT_QTYPE_PREFIX_LEN)?;
        out.push(QAExample {
            id: format!("s{idx:0width$}"),
            question,
            question_feature,
            image_feature,
            qtype,
            answer_class: AnswerClass::of(&answer),
            answer,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    question: &'a str,
    answer: &'a str,
    qtype: &'a str,
    q_feat: &'a [f64],
    v_feat: &'a [f64],
}

pub fn export_vqa_json(examples: &[QAExample], path: &Path) -> Result<()> {
    let records: Vec<RecordOut<'_>> = examples
        .iter()
        .map(|e| RecordOut {
            id: &e.id,
            question: &e.question,
            answer: &e.answer,
            qtype: &e.qtype,
            q_feat: &e.question_feature,
            v_feat: &e.image_feature,
        })
        .collect();
    let text = serde_json::to_string(&records).map_err(|e| CedoError::Parse(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CedoError::io(path, e))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".features.json");
    path.with_file_name(name)
}

fn feature_field(record: &Value, key: &str, index: usize) -> Result<Option<Vector>> {
    match record.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Array(xs)) => xs
            .iter()
            .map(|x| {
                x.as_f64()
                    .ok_or_else(|| CedoError::Parse(format!("record {index}: `{key}` holds a non-numeric entry")))
            })
            .collect::<Result<Vec<f64>>>()
            .map(|v| Some(Vector(v))),
        Some(_) => Err(CedoError::Parse(format!("record {index}: `{key}` must be an array"))),
    }
}

fn string_field(record: &Value, key: &str, index: usize) -> Result<Option<String>> {
    match record.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(Value::Number(n)) => Ok(Some(n.to_string())),
        Some(_) => Err(CedoError::Parse(format!("record {index}: `{key}` must be a string"))),
    }
}

/// Loads a JSON corpus: an array of `{id, question, answer, qtype?, q_feat, v_feat}`.
///
/// Records without features take them from `<stem>.features.json` next to the
/// corpus (an object `id -> {q_feat, v_feat}`). Unknown fields are ignored and
/// the result is ordered by id.
pub fn load_vqa_json(path: &Path, prefix_len: usize) -> Result<Vec<QAExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| CedoError::io(path, e))?;
    let root: Value = serde_json::from_str(&text).map_err(|e| CedoError::Parse(format!("{}: {e}", path.display())))?;
    let records = root
        .as_array()
        .ok_or_else(|| CedoError::Parse(format!("{}: top level must be an array", path.display())))?;

    let mut sidecar: Option<Value> = None;
    let mut out = Vec::with_capacity(records.len());
    let mut seen = HashSet::new();
    for (index, record) in records.iter().enumerate() {
        if !record.is_object() {
            return Err(CedoError::Parse(format!("record {index}: not an object")));
        }
        let missing = |key: &str| CedoError::Parse(format!("record {index}: missing `{key}`"));
        let id = string_field(record, "id", index)?.ok_or_else(|| missing("id"))?;
        let question = string_field(record, "question", index)?.ok_or_else(|| missing("question"))?;
        let answer = string_field(record, "answer", index)?.ok_or_else(|| missing("answer"))?;
        if !seen.insert(id.clone()) {
            return Err(CedoError::Parse(format!("record {index}: duplicate id `{id}`")));
        }
        let mut q_feat = feature_field(record, "q_feat", index)?;
        let mut v_feat = feature_field(record, "v_feat", index)?;
        if q_feat.is_none() || v_feat.is_none() {
            if sidecar.is_none() {
                let sp = sidecar_path(path);
                let st = std::fs::read_to_string(&sp).map_err(|_| {
                    CedoError::Parse(format!(
                        "record {index}: missing features and no sidecar at {}",
                        sp.display()
                    ))
                })?;
                sidecar =
                    Some(serde_json::from_str(&st).map_err(|e| CedoError::Parse(format!("{}: {e}", sp.display())))?);
            }
            let entry = sidecar
                .as_ref()
                .and_then(|s| s.get(&id))
                .ok_or_else(|| CedoError::Parse(format!("record {index}: id `{id}` absent from sidecar")))?;
            if q_feat.is_none() {
                q_feat = feature_field(entry, "q_feat", index)?;
            }
            if v_feat.is_none() {
                v_feat = feature_field(entry, "v_feat", index)?;
            }
        }
        let question_feature = q_feat.ok_or_else(|| missing("q_feat"))?;
        let image_feature = v_feat.ok_or_else(|| missing("v_feat"))?;
        let qtype = match string_field(record, "qtype", index)? {
            Some(_) if is_yes_no(&answer) => YES_NO_QTYPE.to_string(),
            Some(q) => q,
            None => label_qtype(&question, &answer, prefix_len)
                .map_err(|e| CedoError::Parse(format!("record {index}: {e}")))?,
        };
        out.push(QAExample {
            id,
            question,
            question_feature,
            image_feature,
            qtype,
            answer_class: AnswerClass::of(&answer),
            answer,
        });
    }
    if let Some(first) = out.first() {
        let (dq, dv) = (first.question_feature.dim(), first.image_feature.dim());
        for (i, e) in out.iter().enumerate() {
            if e.question_feature.dim() != dq || e.image_feature.dim() != dv {
                return Err(CedoError::Shape(format!(
                    "record {i} (`{}`): feature dims ({}, {}) differ from corpus dims ({dq}, {dv})",
                    e.id,
                    e.question_feature.dim(),
                    e.image_feature.dim()
                )));
            }
        }
    }
    out.sort_by(|a, b| compare_ids(&a.id, &b.id));
    Ok(out)
}

/// Dense ids for qtypes and answers, both in sorted label order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub qtypes: Vec<String>,
    pub answers: Vec<String>,
}

impl Vocabulary {
    pub fn from_examples(examples: &[QAExample]) -> Self {
        let mut qtypes: Vec<String> = examples.iter().map(|e| e.qtype.clone()).collect();
        let mut answers: Vec<String> = examples.iter().map(|e| e.answer.clone()).collect();
        qtypes.sort();
        qtypes.dedup();
        answers.sort();
        answers.dedup();
        Vocabulary { qtypes, answers }
    }

    pub fn qtype_id(&self, qtype: &str) -> Option<usize> {
        self.qtypes.binary_search_by(|q| q.as_str().cmp(qtype)).ok()
    }

    pub fn answer_id(&self, answer: &str) -> Option<usize> {
        self.answers.binary_search_by(|a| a.as_str().cmp(answer)).ok()
    }
}

/// Resolves split ids against a pool, preserving split order.
pub fn select<'a>(pool: &'a [QAExample], ids: &[String]) -> Result<Vec<&'a QAExample>> {
    let index: HashMap<&str, &QAExample> = pool.iter().map(|e| (e.id.as_str(), e)).collect();
    ids.iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| CedoError::Parse(format!("split references unknown id `{id}`")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub all: f64,
    pub open: f64,
    pub closed: f64,
    pub n_all: usize,
    pub n_open: usize,
    pub n_closed: usize,
}

fn pct(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        (10_000.0 * correct as f64 / total as f64).round() / 100.0
    }
}

/// Exact-match accuracy in percent (two decimals), overall and by answer class.
/// Empty strata report 0.
pub fn evaluate<S: AsRef<str>>(predictions: &[S], examples: &[&QAExample]) -> Result<Accuracy> {
    if predictions.len() != examples.len() {
        return Err(CedoError::Argument(format!(
            "{} predictions for {} examples",
            predictions.len(),
            examples.len()
        )));
    }
    let mut counts = [[0usize; 2]; 2];
    for (p, e) in predictions.iter().zip(examples) {
        let cls = match e.answer_class {
            AnswerClass::Open => 0,
            AnswerClass::Closed => 1,
        };
        counts[cls][1] += 1;
        if p.as_ref() == e.answer {
            counts[cls][0] += 1;
        }
    }
    let [open, closed] = counts;
    Ok(Accuracy {
        all: pct(open[0] + closed[0], open[1] + closed[1]),
        open: pct(open[0], open[1]),
        closed: pct(closed[0], closed[1]),
        n_all: open[1] + closed[1],
        n_open: open[1],
        n_closed: closed[1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(id: &str, qtype: &str, answer: &str) -> QAExample {
        QAExample {
            id: id.into(),
            question: format!("{qtype} x"),
            question_feature: Vector(vec![0.0]),
            image_feature: Vector(vec![0.0]),
            qtype: qtype.into(),
            answer: answer.into(),
            answer_class: AnswerClass::of(answer),
        }
    }

    #[test]
    fn qtype_labels() {
        assert_eq!(label_qtype("How many organs are shown?", "3", 2).unwrap(), "how many");
        assert_eq!(label_qtype("Is the lung healthy?", "yes", 2).unwrap(), "yes/no");
        assert_eq!(label_qtype("Is the lung healthy?", "No", 2).unwrap(), "yes/no");
        assert_eq!(label_qtype("What?", "liver", 2).unwrap(), "what");
        assert_eq!(label_qtype("Which lobe is affected", "left", 1).unwrap(), "which");
        assert!(label_qtype("   ", "yes", 2).is_err());
    }

    #[test]
    fn clustering_order() {
        assert_eq!(cluster_examples(&[example("1", "what", "a")]).len(), 1);
        let mut pool = Vec::new();
        for i in 0..80 {
            pool.push(example(&format!("a{i}"), "how many", "2"));
        }
        for i in 0..40 {
            pool.push(example(&format!("b{i}"), "how many", "3"));
        }
        let cs = cluster_examples(&pool);
        assert_eq!(cs.len(), 2);
        assert_eq!((cs[0].answer.as_str(), cs[0].rank, cs[0].members.len()), ("2", 1, 80));
        assert_eq!((cs[1].answer.as_str(), cs[1].rank), ("3", 2));

        let tie = vec![example("1", "what", "zeta"), example("2", "what", "alpha")];
        let cs = cluster_examples(&tie);
        assert_eq!(cs[0].answer, "alpha");
    }

    fn cluster(rank: usize, n: usize) -> Cluster {
        Cluster {
            qtype: "q".into(),
            answer: format!("r{rank}"),
            rank,
            members: (0..n).map(|i| format!("r{rank}-{i}")).collect(),
        }
    }

    #[test]
    fn cp_ratios() {
        let s = cp_split(
            &[cluster(1, 40), cluster(2, 40), cluster(3, 20)],
            &mut RngStream::new(0),
        )
        .unwrap();
        let log: Vec<(usize, usize)> = s.allocation_log.iter().map(|a| (a.train_count, a.test_count)).collect();
        assert_eq!(log, vec![(39, 1), (1, 39), (15, 5)]);
        assert_eq!(s.train.len() + s.test.len(), 100);
        assert!(cp_split(&[], &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn prior_flip_needs_comparable_top_clusters() {
        let counts = |n1, n2| {
            let s = cp_split(&[cluster(1, n1), cluster(2, n2)], &mut RngStream::new(0)).unwrap();
            let c = |a: &Allocation| (a.train_count, a.test_count);
            (c(&s.allocation_log[0]), c(&s.allocation_log[1]))
        };
        let ((tr1, te1), (tr2, te2)) = counts(40, 30);
        assert!(tr1 > tr2 && te2 > te1);
        // rank 1 keeps the test majority once n1 is large against n2
        let ((tr1, te1), (tr2, te2)) = counts(400, 8);
        assert_eq!(((tr1, te1), (tr2, te2)), ((390, 10), (0, 8)));
        assert!(te1 > te2);
    }

    #[test]
    fn cp_singletons() {
        let s = cp_split(&[cluster(1, 1), cluster(2, 1)], &mut RngStream::new(0)).unwrap();
        assert_eq!(s.train, vec!["r1-0".to_string()]);
        assert_eq!(s.test, vec!["r2-0".to_string()]);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        // 2 * 3/4 = 1.5 -> 2; 20 * 1/40 = 0.5 -> 1; 60 * 1/40 = 1.5 -> 2
        assert_eq!(round_share(2, 3, 4), 2);
        assert_eq!(round_share(20, 1, 40), 1);
        assert_eq!(round_share(60, 1, 40), 2);
        assert_eq!(round_share(10, 3, 4), 8);
        assert_eq!(round_share(19, 1, 40), 0);
    }

    #[test]
    fn synthetic_is_deterministic_and_skewed() {
        let spec = SynthSpec {
            num_qtypes: 3,
            answers_per_qtype: 4,
            samples: 2000,
            ..SynthSpec::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2000);
        for c in cluster_examples(&a).windows(2) {
            if c[0].qtype == c[1].qtype {
                assert!(c[0].members.len() > c[1].members.len());
            }
        }
        assert!(a
            .iter()
            .any(|e| e.qtype == YES_NO_QTYPE && e.answer_class == AnswerClass::Closed));
    }

    #[test]
    fn synthetic_rejects_bad_spec() {
        let bad = SynthSpec {
            signal_strength: 1.5,
            ..SynthSpec::default()
        };
        assert!(generate_synthetic(&bad).is_err());
        let bad = SynthSpec {
            samples: 0,
            ..SynthSpec::default()
        };
        assert!(generate_synthetic(&bad).is_err());
    }

    #[test]
    fn evaluate_examples() {
        let exs = [
            example("1", "yes/no", "yes"),
            example("2", "what", "liver"),
            example("3", "what", "lung"),
            example("4", "what", "heart"),
        ];
        let refs: Vec<&QAExample> = exs.iter().collect();
        let truth: Vec<&str> = exs.iter().map(|e| e.answer.as_str()).collect();
        let acc = evaluate(&truth, &refs).unwrap();
        assert_eq!((acc.all, acc.open, acc.closed), (100.0, 100.0, 100.0));
        let acc = evaluate(&["x"; 4], &refs).unwrap();
        assert_eq!((acc.all, acc.open, acc.closed), (0.0, 0.0, 0.0));
        let acc = evaluate(&["yes", "liver", "lung", "brain"], &refs).unwrap();
        assert_eq!((acc.all, acc.closed), (75.0, 100.0));
        assert!((acc.open - 66.67).abs() < 1e-12);
        assert!(evaluate(&["yes"], &refs).is_err());
    }

    #[test]
    fn json_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            samples: 50,
            ..SynthSpec::default()
        };
        let corpus = generate_synthetic(&spec).unwrap();
        let path = dir.path().join("corpus.json");
        export_vqa_json(&corpus, &path).unwrap();
        assert_eq!(load_vqa_json(&path, 2).unwrap(), corpus);

        let empty = dir.path().join("empty.json");
        std::fs::write(&empty, "[]").unwrap();
        assert!(load_vqa_json(&empty, 2).unwrap().is_empty());

        let bad = dir.path().join("bad.json");
        std::fs::write(
            &bad,
            r#"[{"id": 1, "question": "what is it", "q_feat": [1], "v_feat": [2]}]"#,
        )
        .unwrap();
        let msg = load_vqa_json(&bad, 2).unwrap_err().to_string();
        assert!(msg.contains("record 0") && msg.contains("answer"), "{msg}");

        let ragged = dir.path().join("ragged.json");
        std::fs::write(
            &ragged,
            r#"[{"id": 1, "question": "what a", "answer": "x", "q_feat": [1], "v_feat": [2]},
                {"id": 2, "question": "what b", "answer": "y", "q_feat": [1, 2], "v_feat": [2]}]"#,
        )
        .unwrap();
        assert!(matches!(load_vqa_json(&ragged, 2), Err(CedoError::Shape(_))));
    }

    #[test]
    fn sidecar_features_and_id_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.json");
        std::fs::write(
            &path,
            r#"[{"id": 10, "question": "Where is the liver?", "answer": "left", "extra": true},
                {"id": 2, "question": "Is it normal?", "answer": "No", "q_feat": [0.5], "v_feat": [1.5]}]"#,
        )
        .unwrap();
        std::fs::write(
            dir.path().join("corpus.features.json"),
            r#"{"10": {"q_feat": [1.0], "v_feat": [2.0]}}"#,
        )
        .unwrap();
        let exs = load_vqa_json(&path, 2).unwrap();
        assert_eq!(exs[0].id, "2");
        assert_eq!(exs[0].qtype, "yes/no");
        assert_eq!(exs[1].qtype, "where is");
        assert_eq!(exs[1].image_feature.as_ref(), &[2.0]);
    }
}
