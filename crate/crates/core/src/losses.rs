//! Cross-entropy heads, loss assembly, distribution-adapted weights and the
//! weighted supervised-contrastive term.
//!
//! The contrastive denominator sums over negatives only, `Σ_{n∈N_i}`, not over
//! every non-anchor sample as in the usual formulation. Because positives are
//! absent from the denominator the term is not bounded below, so it can be
//! negative.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CedoError, Result};
use crate::model::{ForwardCache, Head, SampleUpstream};
use crate::numeric::{dot, l2_norm, log_sum_exp, softmax};

/// `-log softmax(logits)[answer]`, evaluated in log space.
pub fn cross_entropy(logits: &[f64], answer: usize) -> Result<f64> {
    if answer >= logits.len() {
        return Err(CedoError::Argument(format!(
            "answer id {answer} out of range for {} classes",
            logits.len()
        )));
    }
    let (arg_max, &m) = logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| CedoError::Argument("empty logits".into()))?;
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != arg_max)
        .map(|(_, z)| (z - m).exp())
        .sum();
    Ok((m - logits[answer]) + rest.ln_1p())
}

/// Gradient of [`cross_entropy`] with respect to the logits.
pub fn cross_entropy_grad(logits: &[f64], answer: usize) -> Result<Vec<f64>> {
    if answer >= logits.len() {
        return Err(CedoError::Argument(format!(
            "answer id {answer} out of range for {} classes",
            logits.len()
        )));
    }
    let mut g = softmax(logits);
    g[answer] -= 1.0;
    Ok(g)
}

pub fn total_loss(l_t: f64, l_q: f64, l_v: f64) -> f64 {
    l_t + l_q + l_v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub temperature: f64,
    pub enable_q_branch: bool,
    pub enable_v_branch: bool,
    pub enable_dlr: bool,
    /// L2-normalise contrastive features before the inner products.
    pub normalize_features: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            temperature: 1.0,
            enable_q_branch: true,
            enable_v_branch: true,
            enable_dlr: true,
            normalize_features: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(CedoError::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Per-batch loss values. `total = l_t + l_q + l_v + l_supcon`, with disabled terms at zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_t: f64,
    pub l_q: f64,
    pub l_v: f64,
    pub l_supcon: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    /// Samples with this answer under the question type.
    pub count_m: usize,
    /// Samples under the question type.
    #[serde(rename = "count_M")]
    pub count_big_m: usize,
    pub w: f64,
    #[serde(rename = "W")]
    pub weight: f64,
}

/// Softplus-smoothed inverse-frequency weights keyed by (qtype id, answer id).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossWeightTable {
    entries: BTreeMap<(usize, usize), WeightEntry>,
    qtype_totals: BTreeMap<usize, usize>,
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Builds the weight table from the (qtype, answer) pairs of a training split.
pub fn compute_dlr_weights<I>(pairs: I) -> Result<LossWeightTable>
where
    I: IntoIterator<Item = (usize, usize)>,
{
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut qtype_totals: BTreeMap<usize, usize> = BTreeMap::new();
    for (qt, ans) in pairs {
        *counts.entry((qt, ans)).or_default() += 1;
        *qtype_totals.entry(qt).or_default() += 1;
    }
    if counts.is_empty() {
        return Err(CedoError::Argument(
            "cannot compute loss weights from an empty training split".into(),
        ));
    }
    let entries = counts
        .into_iter()
        .map(|((qt, ans), m)| {
            let big_m = qtype_totals[&qt];
            let w = 1.0 / (big_m as f64 * m as f64);
            let entry = WeightEntry {
                count_m: m,
                count_big_m: big_m,
                w,
                weight: softplus(w),
            };
            ((qt, ans), entry)
        })
        .collect();
    Ok(LossWeightTable { entries, qtype_totals })
}

impl LossWeightTable {
    pub fn get(&self, qtype: usize, answer: usize) -> Option<&WeightEntry> {
        self.entries.get(&(qtype, answer))
    }

    pub fn weight(&self, qtype: usize, answer: usize) -> Result<f64> {
        self.get(qtype, answer).map(|e| e.weight).ok_or_else(|| {
            CedoError::Argument(format!(
                "no loss weight for qtype {qtype} / answer {answer} (pair absent from training data)"
            ))
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &WeightEntry)> {
        self.entries.iter()
    }

    pub fn qtype_total(&self, qtype: usize) -> Option<usize> {
        self.qtype_totals.get(&qtype).copied()
    }

    /// Anchor weight for every sample: qtype from the anchor's question, answer from its label.
    pub fn anchor_weights(&self, qtypes: &[usize], answers: &[usize]) -> Result<Vec<f64>> {
        if qtypes.len() != answers.len() {
            return Err(CedoError::Shape(format!(
                "{} qtypes but {} answers",
                qtypes.len(),
                answers.len()
            )));
        }
        qtypes.iter().zip(answers).map(|(&q, &a)| self.weight(q, a)).collect()
    }

    /// JSON object `"qtype/answer" -> {count_m, count_M, w, W}`.
    pub fn to_json(&self, qtype_names: &[String], answer_names: &[String]) -> Result<serde_json::Value> {
        let mut map = serde_json::Map::new();
        for (&(q, a), entry) in &self.entries {
            let qn = qtype_names
                .get(q)
                .ok_or_else(|| CedoError::Argument(format!("no name for qtype id {q}")))?;
            let an = answer_names
                .get(a)
                .ok_or_else(|| CedoError::Argument(format!("no name for answer id {a}")))?;
            let value = serde_json::to_value(entry).map_err(|e| CedoError::Parse(e.to_string()))?;
            map.insert(format!("{qn}/{an}"), value);
        }
        Ok(serde_json::Value::Object(map))
    }

    pub fn export_json(&self, path: &Path, qtype_names: &[String], answer_names: &[String]) -> Result<()> {
        let value = self.to_json(qtype_names, answer_names)?;
        let text = serde_json::to_string_pretty(&value).map_err(|e| CedoError::Parse(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| CedoError::io(path, e))
    }
}

/// Value and per-feature gradients of the contrastive term.
#[derive(Debug, Clone, PartialEq)]
pub struct SupConOutput {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

fn normalized(x: &[f64]) -> (Vec<f64>, f64) {
    let n = l2_norm(x);
    if n == 0.0 {
        (vec![0.0; x.len()], 0.0)
    } else {
        (x.iter().map(|v| v / n).collect(), n)
    }
}

/// Weighted supervised-contrastive loss with explicit per-anchor weights.
///
/// For anchor `i`: `P_i = {p ≠ i : a_p = a_i}`, `N_i = {n : a_n ≠ a_i}`, and
/// `L_i = -(W_i/|P_i|) Σ_p [s_ip - log Σ_n exp(s_in)]` with `s_ab = x_aᵀx_b / τ`.
/// Anchors with empty `P_i` or `N_i` contribute nothing. Returns the sum over anchors.
pub fn supcon_with_weights(
    features: &[&[f64]],
    answers: &[usize],
    anchor_weights: &[f64],
    temperature: f64,
    normalize: bool,
) -> Result<SupConOutput> {
    let n = features.len();
    if answers.len() != n || anchor_weights.len() != n {
        return Err(CedoError::Shape(format!(
            "{n} features, {} answers, {} weights",
            answers.len(),
            anchor_weights.len()
        )));
    }
    if n < 2 {
        return Err(CedoError::Argument(
            "contrastive loss needs at least two samples".into(),
        ));
    }
    if !(temperature > 0.0) {
        return Err(CedoError::Argument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let dim = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(CedoError::Shape(format!(
            "feature dims disagree: {dim} vs {}",
            bad.len()
        )));
    }

    let (xs, norms): (Vec<Vec<f64>>, Vec<f64>) = if normalize {
        features.iter().map(|f| normalized(f)).unzip()
    } else {
        (features.iter().map(|f| f.to_vec()).collect(), vec![1.0; n])
    };

    let mut value = 0.0;
    let mut grads = vec![vec![0.0; dim]; n];
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && answers[p] == answers[i]).collect();
        let negatives: Vec<usize> = (0..n).filter(|&k| answers[k] != answers[i]).collect();
        if positives.is_empty() || negatives.is_empty() {
            continue;
        }
        let scale = anchor_weights[i] / positives.len() as f64;
        let neg_scores: Vec<f64> = negatives
            .iter()
            .map(|&k| dot(&xs[i], &xs[k]).map(|s| s / temperature))
            .collect::<Result<_>>()?;
        let lse = log_sum_exp(&neg_scores);
        let neg_probs = softmax(&neg_scores);

        for &p in &positives {
            let s = dot(&xs[i], &xs[p])? / temperature;
            value -= scale * (s - lse);
        }
        // dL_i/dx_i = -(W_i/τ) [mean_p x_p - Σ_n σ_n x_n]
        let np = positives.len() as f64;
        for d in 0..dim {
            let mean_pos: f64 = positives.iter().map(|&p| xs[p][d]).sum::<f64>() / np;
            let neg_avg: f64 = negatives.iter().zip(&neg_probs).map(|(&k, &pr)| pr * xs[k][d]).sum();
            grads[i][d] -= anchor_weights[i] / temperature * (mean_pos - neg_avg);
        }
        for &p in &positives {
            for d in 0..dim {
                grads[p][d] -= scale / temperature * xs[i][d];
            }
        }
        for (&k, &pr) in negatives.iter().zip(&neg_probs) {
            for d in 0..dim {
                grads[k][d] += anchor_weights[i] / temperature * pr * xs[i][d];
            }
        }
    }

    if normalize {
        for ((g, x), &norm) in grads.iter_mut().zip(&xs).zip(&norms) {
            if norm == 0.0 {
                g.iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            let radial = dot(g, x)?;
            for (gv, xv) in g.iter_mut().zip(x) {
                *gv = (*gv - radial * xv) / norm;
            }
        }
    }
    Ok(SupConOutput { value, grads })
}

/// Weighted supervised-contrastive loss with anchor weights looked up in `table`.
pub fn weighted_supcon(
    features: &[&[f64]],
    answers: &[usize],
    qtypes: &[usize],
    table: &LossWeightTable,
    cfg: &LossConfig,
) -> Result<f64> {
    let w = table.anchor_weights(qtypes, answers)?;
    supcon_with_weights(features, answers, &w, cfg.temperature, cfg.normalize_features).map(|o| o.value)
}

/// Computes every enabled loss over a batch (summed over samples) and the
/// upstream gradients needed by [`crate::model::backward`].
pub fn assemble(
    caches: &[ForwardCache],
    answers: &[usize],
    qtypes: &[usize],
    table: Option<&LossWeightTable>,
    cfg: &LossConfig,
) -> Result<(LossBundle, Vec<SampleUpstream>)> {
    if caches.len() != answers.len() || caches.len() != qtypes.len() {
        return Err(CedoError::Shape(format!(
            "{} caches, {} answers, {} qtypes",
            caches.len(),
            answers.len(),
            qtypes.len()
        )));
    }
    let mut bundle = LossBundle::default();
    let mut upstream = Vec::with_capacity(caches.len());
    for (cache, &a) in caches.iter().zip(answers) {
        let mut up = SampleUpstream::default();
        let lt = cache.logits(Head::Joint);
        bundle.l_t += cross_entropy(lt, a)?;
        up.set_logits(Head::Joint, cross_entropy_grad(lt, a)?);
        if cfg.enable_q_branch {
            let lq = cache.logits(Head::Question);
            bundle.l_q += cross_entropy(lq, a)?;
            up.set_logits(Head::Question, cross_entropy_grad(lq, a)?);
        }
        if cfg.enable_v_branch {
            let lv = cache.logits(Head::Image);
            bundle.l_v += cross_entropy(lv, a)?;
            up.set_logits(Head::Image, cross_entropy_grad(lv, a)?);
        }
        upstream.push(up);
    }
    if cfg.enable_dlr && caches.len() >= 2 {
        let table = table
            .ok_or_else(|| CedoError::Config("distribution-adapted rescaling enabled without a weight table".into()))?;
        let features: Vec<&[f64]> = caches.iter().map(|c| c.fused_embedding()).collect();
        let weights = table.anchor_weights(qtypes, answers)?;
        let out = supcon_with_weights(&features, answers, &weights, cfg.temperature, cfg.normalize_features)?;
        bundle.l_supcon = out.value;
        for (up, g) in upstream.iter_mut().zip(out.grads) {
            up.fused_embedding = Some(g);
        }
    }
    bundle.total = total_loss(bundle.l_t, bundle.l_q, bundle.l_v) + bundle.l_supcon;
    Ok((bundle, upstream))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(&[0.3; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-15);
        let v = cross_entropy(&[10.0, -10.0], 0).unwrap();
        let oracle = (-20f64).exp().ln_1p();
        assert!((v - oracle).abs() <= 1e-15 * oracle, "{v} vs {oracle}");
        assert!((v - 2.06e-9).abs() < 1e-11);
        assert!(matches!(cross_entropy(&[0.0; 4], 4), Err(CedoError::Argument(_))));
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(1.0, 2.0, 3.0), 6.0);
        assert_eq!(total_loss(0.0, 0.0, 0.0), 0.0);
        assert_eq!(total_loss(1.25, 0.0, 0.0), 1.25);
    }

    #[test]
    fn dlr_weight_values() {
        let pairs = std::iter::repeat_n((0, 0), 50).chain(std::iter::repeat_n((0, 1), 50));
        let t = compute_dlr_weights(pairs).unwrap();
        let e = t.get(0, 0).unwrap();
        assert_eq!((e.count_m, e.count_big_m), (50, 100));
        assert_eq!(e.w, 0.0002);
        assert!((e.weight - 0.693247).abs() < 1e-6);

        let t = compute_dlr_weights([(3, 7)]).unwrap();
        let e = t.get(3, 7).unwrap();
        assert_eq!(e.w, 1.0);
        assert!((e.weight - 1.313262).abs() < 1e-6);
        assert_eq!(e.weight, std::f64::consts::E.ln_1p());

        assert!((softplus(1e-300) - 2f64.ln()).abs() < 1e-15);
        assert!(compute_dlr_weights(std::iter::empty()).is_err());
    }

    #[test]
    fn dlr_count_scaling_is_exact() {
        let base = [(0usize, 0usize, 6usize), (0, 1, 3), (0, 2, 1)];
        for k in 1..5usize {
            let pairs = base.iter().flat_map(|&(q, a, c)| std::iter::repeat_n((q, a), c * k));
            let t = compute_dlr_weights(pairs).unwrap();
            for &(q, a, c) in &base {
                let e = t.get(q, a).unwrap();
                assert_eq!(e.w, 1.0 / ((10 * k) as f64 * (c * k) as f64));
            }
        }
    }

    #[test]
    fn json_export_keys() {
        let t = compute_dlr_weights([(0, 1), (0, 1), (1, 0)]).unwrap();
        let names_q = vec!["how many".to_string(), "yes/no".to_string()];
        let names_a = vec!["yes".to_string(), "2".to_string()];
        let j = t.to_json(&names_q, &names_a).unwrap();
        assert_eq!(j["how many/2"]["count_m"], 2);
        assert_eq!(j["how many/2"]["count_M"], 2);
        assert_eq!(j["yes/no/yes"]["w"], 1.0);
    }

    #[test]
    fn supcon_degenerate_batches() {
        let a = [1.0, 2.0];
        let b = [0.5, -1.0];
        let c = [3.0, 0.0];
        let f: Vec<&[f64]> = vec![&a, &b, &c];
        let w = [1.0; 3];
        assert_eq!(supcon_with_weights(&f, &[1, 1, 1], &w, 1.0, false).unwrap().value, 0.0);
        assert_eq!(supcon_with_weights(&f, &[0, 1, 2], &w, 1.0, false).unwrap().value, 0.0);
        let bad: Vec<&[f64]> = vec![&a, &[1.0]];
        assert!(matches!(
            supcon_with_weights(&bad, &[0, 0], &[1.0, 1.0], 1.0, false),
            Err(CedoError::Shape(_))
        ));
    }

    #[test]
    fn supcon_three_sample_hand_enumeration() {
        // answers [0, 0, 1]: anchors 0 and 1 each have one positive and negative 2;
        // anchor 2 has no positive.
        let x0 = [1.0, 0.5];
        let x1 = [0.2, -1.0];
        let x2 = [-0.3, 0.8];
        let d = |a: &[f64], b: &[f64]| a[0] * b[0] + a[1] * b[1];
        let w = [1.5, 0.7, 2.0];
        let tau = 0.5;
        let oracle = -w[0] * (d(&x0, &x1) / tau - d(&x0, &x2) / tau) - w[1] * (d(&x1, &x0) / tau - d(&x1, &x2) / tau);
        let f: Vec<&[f64]> = vec![&x0, &x1, &x2];
        let got = supcon_with_weights(&f, &[0, 0, 1], &w, tau, false).unwrap().value;
        assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
    }

    #[test]
    fn supcon_gradient_matches_finite_differences() {
        let mut rng = crate::numeric::RngStream::new(17);
        for normalize in [false, true] {
            let feats: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..3).map(|_| rng.standard_normal()).collect())
                .collect();
            let answers = [0, 1, 0, 2, 1, 0];
            let w: Vec<f64> = (0..6).map(|_| rng.uniform(0.7, 1.4).unwrap()).collect();
            let eval = |fs: &[Vec<f64>]| {
                let r: Vec<&[f64]> = fs.iter().map(|v| v.as_slice()).collect();
                supcon_with_weights(&r, &answers, &w, 0.8, normalize).unwrap()
            };
            let base = eval(&feats);
            for i in 0..6 {
                for d in 0..3 {
                    let mut plus = feats.clone();
                    plus[i][d] += 1e-6;
                    let mut minus = feats.clone();
                    minus[i][d] -= 1e-6;
                    let fd = (eval(&plus).value - eval(&minus).value) / 2e-6;
                    let an = base.grads[i][d];
                    assert!((fd - an).abs() <= 1e-6 * fd.abs().max(1.0), "{i},{d}: {fd} vs {an}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn cross_entropy_nonnegative(z in proptest::collection::vec(-50f64..50.0, 1..10), a in 0usize..10) {
            let a = a % z.len();
            prop_assert!(cross_entropy(&z, a).unwrap() >= 0.0);
        }

        #[test]
        fn dlr_weight_decreases_with_answer_count(counts in proptest::collection::btree_set(1usize..200, 2..6)) {
            let counts: Vec<usize> = counts.into_iter().collect();
            let pairs = counts.iter().enumerate().flat_map(|(a, &c)| std::iter::repeat_n((0usize, a), c));
            let t = compute_dlr_weights(pairs).unwrap();
            for a in 1..counts.len() {
                // counts are ascending, so weights must strictly fall
                prop_assert!(t.weight(0, a).unwrap() < t.weight(0, a - 1).unwrap());
            }
            prop_assert!(t.iter().all(|(_, e)| e.weight > 2f64.ln() - 1e-12));
        }
    }
}
