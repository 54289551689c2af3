//! Gradient coordination across the joint and unimodal losses: min-norm
//! convex combination on the simplex, pairwise conflict measurement,
//! projection surgery and the final combination.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CedoError, Result};
use crate::model::GradScope;
use crate::numeric::{axpy, dot, l2_norm, Vector};

/// Per-loss gradients flattened over one scope.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub g_t: Vector,
    pub g_q: Vector,
    pub g_v: Vector,
    pub scope: GradScope,
}

impl GradientSet {
    pub fn new(g_t: Vector, g_q: Vector, g_v: Vector, scope: GradScope) -> Result<Self> {
        if g_t.dim() != g_q.dim() || g_t.dim() != g_v.dim() {
            return Err(CedoError::Shape(format!(
                "gradient dims disagree: t={} q={} v={}",
                g_t.dim(),
                g_q.dim(),
                g_v.dim()
            )));
        }
        if g_t.iter().chain(g_q.iter()).chain(g_v.iter()).any(|x| !x.is_finite()) {
            return Err(CedoError::Numeric("gradient set contains non-finite entries".into()));
        }
        Ok(GradientSet { g_t, g_q, g_v, scope })
    }

    pub fn dim(&self) -> usize {
        self.g_t.dim()
    }

    /// Gradients in the order t, q, v.
    pub fn as_array(&self) -> [&[f64]; 3] {
        [&self.g_t, &self.g_q, &self.g_v]
    }
}

pub const PAIR_NAMES: [&str; 3] = ["tq", "tv", "qv"];

/// Convex-combination coefficients in the order t, q, v.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplexWeights {
    pub alpha_t: f64,
    pub alpha_q: f64,
    pub alpha_v: f64,
}

impl SimplexWeights {
    pub fn new(alpha_t: f64, alpha_q: f64, alpha_v: f64) -> Result<Self> {
        let w = SimplexWeights {
            alpha_t,
            alpha_q,
            alpha_v,
        };
        let arr = w.as_array();
        if arr.iter().any(|&a| !(a >= 0.0)) || (arr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CedoError::Argument(format!(
                "({alpha_t}, {alpha_q}, {alpha_v}) is not on the probability simplex"
            )));
        }
        Ok(w)
    }

    pub fn uniform() -> Self {
        SimplexWeights {
            alpha_t: 1.0 / 3.0,
            alpha_q: 1.0 / 3.0,
            alpha_v: 1.0 / 3.0,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha_t, self.alpha_q, self.alpha_v]
    }

    fn from_array(a: [f64; 3]) -> Self {
        SimplexWeights {
            alpha_t: a[0],
            alpha_q: a[1],
            alpha_v: a[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrthoMode {
    /// `G' = G - ((G_ref·G)/‖G‖²) G`: rescales `G` along its own direction.
    Literal,
    /// `G' = G - ((G·G_ref)/‖G_ref‖²) G_ref`: removes the component along the reference.
    Orthogonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    PlainSum,
    ParetoWeighted,
}

impl FromStr for OrthoMode {
    type Err = CedoError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(OrthoMode::Literal),
            "orthogonal" => Ok(OrthoMode::Orthogonal),
            other => Err(CedoError::Config(format!("unknown orthogonalization mode `{other}`"))),
        }
    }
}

impl FromStr for CombineMode {
    type Err = CedoError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain_sum" | "plain-sum" => Ok(CombineMode::PlainSum),
            "pareto_weighted" | "pareto-weighted" => Ok(CombineMode::ParetoWeighted),
            other => Err(CedoError::Config(format!("unknown combine mode `{other}`"))),
        }
    }
}

impl fmt::Display for OrthoMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OrthoMode::Literal => "literal",
            OrthoMode::Orthogonal => "orthogonal",
        })
    }
}

impl fmt::Display for CombineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CombineMode::PlainSum => "plain_sum",
            CombineMode::ParetoWeighted => "pareto_weighted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmsConfig {
    pub ortho_mode: OrthoMode,
    /// Only operate on pairs whose cosine is negative.
    pub conflict_only: bool,
    pub combine_mode: CombineMode,
    pub pareto_max_iters: usize,
    pub pareto_tol: f64,
    /// A min-norm below this marks the point Pareto-stationary.
    pub stationary_tol: f64,
}

impl Default for GmsConfig {
    fn default() -> Self {
        GmsConfig {
            ortho_mode: OrthoMode::Orthogonal,
            conflict_only: true,
            combine_mode: CombineMode::PlainSum,
            pareto_max_iters: 250,
            pareto_tol: 1e-9,
            stationary_tol: 1e-4,
        }
    }
}

impl GmsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pareto_max_iters == 0 {
            return Err(CedoError::Config("pareto_max_iters must be positive".into()));
        }
        if !(self.pareto_tol > 0.0) || !(self.stationary_tol > 0.0) {
            return Err(CedoError::Config("pareto tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// `(a·b)/(‖a‖‖b‖)` clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    let d = dot(a, b)?;
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(CedoError::Degenerate("cosine similarity of a zero vector".into()));
    }
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoSolution {
    pub weights: SimplexWeights,
    pub combined: Vector,
    pub min_norm: f64,
    pub stationary: bool,
    pub iterations: usize,
    /// Squared norm of the iterate after each step, starting with the initial point.
    pub trace: Vec<f64>,
}

/// Minimum-norm point of the convex hull of `{g_t, g_q, g_v}`.
///
/// Frank–Wolfe on the simplex with away steps. Both step types move the iterate
/// `u` along a segment towards a point `v` (the chosen vertex for a forward step,
/// the reflection away from the worst active vertex for an away step) and take
/// the exact line-search step `γ* = clamp(((u−v)·u)/‖u−v‖², 0, γ_max)`.
/// After every step the iterate jumps to the exact minimiser over the affine hull
/// of its active vertices when that point is feasible, so ill-conditioned
/// families do not zigzag.
pub fn pareto_min_norm(gs: &GradientSet, cfg: &GmsConfig) -> Result<ParetoSolution> {
    cfg.validate()?;
    let grads = gs.as_array();
    if grads.iter().any(|g| g.len() != gs.dim()) {
        return Err(CedoError::Shape("gradient dims disagree".into()));
    }
    let mut gram = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = dot(grads[i], grads[j])?;
            gram[i][j] = v;
            gram[j][i] = v;
        }
    }
    let quad = |a: &[f64; 3]| -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += a[i] * a[j] * gram[i][j];
            }
        }
        s.max(0.0)
    };

    // Start from the shortest vertex.
    let start = (0..3).min_by(|&i, &j| gram[i][i].total_cmp(&gram[j][j])).unwrap_or(0);
    let mut alpha = [0.0; 3];
    alpha[start] = 1.0;
    let mut value = quad(&alpha);
    let mut trace = vec![value];
    let mut iterations = 0;

    while iterations < cfg.pareto_max_iters {
        // ∇_α ‖Gα‖² / 2 = Mα; u·g_k = (Mα)_k
        let grad: [f64; 3] = std::array::from_fn(|k| (0..3).map(|j| gram[k][j] * alpha[j]).sum::<f64>());
        let u_dot_u: f64 = (0..3).map(|k| alpha[k] * grad[k]).sum();
        let fw = (0..3).min_by(|&i, &j| grad[i].total_cmp(&grad[j])).unwrap_or(0);
        let away = (0..3)
            .filter(|&k| alpha[k] > 0.0)
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]))
            .unwrap_or(fw);
        let fw_gap = u_dot_u - grad[fw];
        let away_gap = grad[away] - u_dot_u;
        if fw_gap.max(away_gap) <= cfg.pareto_tol {
            break;
        }
        iterations += 1;

        // Direction d = target - u in α-space; ‖Gd‖² and (-u·Gd) give the exact step.
        let (dir, gamma_max, is_forward) = if fw_gap >= away_gap {
            let mut d = alpha.map(|a| -a);
            d[fw] += 1.0;
            (d, 1.0, true)
        } else {
            let mut d = alpha;
            d[away] -= 1.0;
            let gm = if alpha[away] < 1.0 {
                alpha[away] / (1.0 - alpha[away])
            } else {
                f64::INFINITY
            };
            (d, gm, false)
        };
        let slope: f64 = (0..3).map(|k| dir[k] * grad[k]).sum();
        let curvature = quad_form(&gram, &dir);
        let gamma = if curvature > 0.0 {
            (-slope / curvature).clamp(0.0, gamma_max)
        } else {
            gamma_max.min(1.0)
        };
        let is_drop = !is_forward && gamma >= gamma_max;
        let mut next = alpha;
        for k in 0..3 {
            next[k] = (alpha[k] + gamma * dir[k]).max(0.0);
        }
        if is_drop {
            next[away] = 0.0;
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|a| *a /= total);
        let mut next_value = quad(&next);
        if next_value > value {
            // rounding only; keep the monotone iterate
            break;
        }
        if let Some(face) = face_minimizer(&gram, &next) {
            let face_value = quad(&face);
            if face_value <= next_value {
                next = face;
                next_value = face_value;
            }
        }
        let improvement = value - next_value;
        alpha = next;
        value = next_value;
        trace.push(value);
        if !is_drop && improvement < cfg.pareto_tol {
            break;
        }
    }

    let mut combined = Vector::zeros(gs.dim());
    for (a, g) in alpha.iter().zip(grads) {
        axpy(*a, g, &mut combined);
    }
    let min_norm = l2_norm(&combined);
    Ok(ParetoSolution {
        weights: SimplexWeights::from_array(alpha),
        combined,
        min_norm,
        stationary: min_norm < cfg.stationary_tol,
        iterations,
        trace,
    })
}

/// Minimiser of `‖Gα‖²` over the affine hull of the vertices active in `alpha`,
/// if it lies inside the simplex. Solves the bordered KKT system
/// `[M_S 1; 1ᵀ 0] [α_S; μ] = [0; 1]`.
fn face_minimizer(gram: &[[f64; 3]; 3], alpha: &[f64; 3]) -> Option<[f64; 3]> {
    let support: Vec<usize> = (0..3).filter(|&k| alpha[k] > 0.0).collect();
    let s = support.len();
    if s < 2 {
        return None;
    }
    let n = s + 1;
    let mut a = [[0.0; 5]; 4];
    for (r, &i) in support.iter().enumerate() {
        for (c, &j) in support.iter().enumerate() {
            a[r][c] = gram[i][j];
        }
        a[r][s] = 1.0;
        a[s][r] = 1.0;
    }
    a[s][n] = 1.0;
    let scale = support
        .iter()
        .map(|&i| gram[i][i])
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[pivot][col].abs() <= 1e-13 * scale.max(1.0) {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                let pivot_row = a[col];
                for (x, p) in a[row][col..=n].iter_mut().zip(&pivot_row[col..=n]) {
                    *x -= f * p;
                }
            }
        }
    }
    let mut out = [0.0; 3];
    for (r, &i) in support.iter().enumerate() {
        let v = a[r][n] / a[r][r];
        if !(v >= 0.0) {
            return None;
        }
        out[i] = v;
    }
    let total: f64 = out.iter().sum();
    Some(out.map(|v| v / total))
}

fn quad_form(gram: &[[f64; 3]; 3], d: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += d[i] * d[j] * gram[i][j];
        }
    }
    s
}

/// Pairwise cosines (tq, tv, qv) and which gradients were modified.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SurgeryReport {
    /// `None` when a pair contains a zero vector.
    pub cosines: [Option<f64>; 3],
    /// Surgery applied to t, q, v respectively.
    pub applied: [bool; 3],
    /// A required reference (or target, in literal mode) was zero.
    pub degenerate: [bool; 3],
}

/// Reference used for each gradient: t and v are corrected against q, q against v.
const REFERENCE: [usize; 3] = [1, 2, 1];

fn pair_index(a: usize, b: usize) -> usize {
    match (a.min(b), a.max(b)) {
        (0, 1) => 0,
        (0, 2) => 1,
        _ => 2,
    }
}

fn surgery(target: &[f64], reference: &[f64], mode: OrthoMode) -> Option<Vector> {
    let proj_dot = dot(target, reference).ok()?;
    match mode {
        OrthoMode::Literal => {
            let n2 = dot(target, target).ok()?;
            if n2 == 0.0 {
                return None;
            }
            let c = proj_dot / n2;
            Some(target.iter().map(|x| x - c * x).collect())
        }
        OrthoMode::Orthogonal => {
            let n2 = dot(reference, reference).ok()?;
            if n2 == 0.0 {
                return None;
            }
            let c = proj_dot / n2;
            Some(target.iter().zip(reference).map(|(x, r)| x - c * r).collect())
        }
    }
}

/// Projection surgery on every gradient against its paired reference. All
/// corrections read the original gradients.
pub fn orthogonalize(gs: &GradientSet, cfg: &GmsConfig) -> Result<(GradientSet, SurgeryReport)> {
    let grads = gs.as_array();
    let mut report = SurgeryReport::default();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        report.cosines[pair_index(a, b)] = cosine_similarity(grads[a], grads[b]).ok();
    }
    let mut out: [Vector; 3] = [gs.g_t.clone(), gs.g_q.clone(), gs.g_v.clone()];
    for (k, slot) in out.iter_mut().enumerate() {
        let r = REFERENCE[k];
        let cos = report.cosines[pair_index(k, r)];
        if cfg.conflict_only {
            match cos {
                Some(c) if c < 0.0 => {}
                Some(_) => continue,
                None => {
                    report.degenerate[k] = true;
                    log::debug!("gms: zero gradient in pair for slot {k}; passing through");
                    continue;
                }
            }
        }
        match surgery(grads[k], grads[r], cfg.ortho_mode) {
            Some(v) => {
                *slot = v;
                report.applied[k] = true;
            }
            None => {
                report.degenerate[k] = true;
                log::debug!("gms: zero reference for slot {k}; passing through");
            }
        }
    }
    let [g_t, g_q, g_v] = out;
    Ok((
        GradientSet {
            g_t,
            g_q,
            g_v,
            scope: gs.scope,
        },
        report,
    ))
}

pub fn combine(gs: &GradientSet, alpha: &SimplexWeights, cfg: &GmsConfig) -> Result<Vector> {
    let grads = gs.as_array();
    let dim = gs.dim();
    if grads.iter().any(|g| g.len() != dim) {
        return Err(CedoError::Shape("gradient dims disagree".into()));
    }
    let coeffs = match cfg.combine_mode {
        CombineMode::PlainSum => [1.0; 3],
        CombineMode::ParetoWeighted => alpha.as_array(),
    };
    let mut out = Vector::zeros(dim);
    for (c, g) in coeffs.iter().zip(grads) {
        if *c == 1.0 {
            out.iter_mut().zip(g.iter()).for_each(|(o, x)| *o += x);
        } else if *c != 0.0 {
            axpy(*c, g, &mut out);
        }
    }
    Ok(out)
}

/// One step's worth of diagnostics (a line of `gms_diag.jsonl`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmsDiagnostics {
    pub step: usize,
    pub cosines: [Option<f64>; 3],
    pub alpha: SimplexWeights,
    pub min_norm: f64,
    pub stationary: bool,
    pub surgery_applied: [bool; 3],
    pub degenerate: [bool; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmsOutput {
    pub direction: Vector,
    pub pareto: ParetoSolution,
    pub report: SurgeryReport,
}

/// Min-norm solve, surgery, then combination.
pub fn coordinate(gs: &GradientSet, cfg: &GmsConfig) -> Result<GmsOutput> {
    let pareto = pareto_min_norm(gs, cfg)?;
    let (corrected, report) = orthogonalize(gs, cfg)?;
    let direction = combine(&corrected, &pareto.weights, cfg)?;
    Ok(GmsOutput {
        direction,
        pareto,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(t: &[f64], q: &[f64], v: &[f64]) -> GradientSet {
        GradientSet::new(
            t.to_vec().into(),
            q.to_vec().into(),
            v.to_vec().into(),
            GradScope::ClassifierOnly,
        )
        .unwrap()
    }

    fn cfg(mode: OrthoMode, conflict_only: bool) -> GmsConfig {
        GmsConfig {
            ortho_mode: mode,
            conflict_only,
            ..GmsConfig::default()
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[0.3, -2.0], &[0.3, -2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-2.0, 0.0]).unwrap(), -1.0);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(CedoError::Degenerate(_))
        ));
    }

    #[test]
    fn identical_gradients_collapse() {
        let g = [0.4, -1.2, 2.0];
        let sol = pareto_min_norm(&set(&g, &g, &g), &GmsConfig::default()).unwrap();
        assert!((sol.min_norm - l2_norm(&g)).abs() < 1e-9);
        for (c, x) in sol.combined.iter().zip(g) {
            assert!((c - x).abs() < 1e-9);
        }
    }

    #[test]
    fn origin_on_edge_is_stationary() {
        let sol = pareto_min_norm(&set(&[1.0, 0.0], &[-1.0, 0.0], &[10.0, 10.0]), &GmsConfig::default()).unwrap();
        assert!(sol.min_norm < 1e-9, "{}", sol.min_norm);
        assert!(sol.stationary);
        let a = sol.weights.as_array();
        assert!((a[0] - 0.5).abs() < 1e-6 && (a[1] - 0.5).abs() < 1e-6 && a[2] < 1e-6);
    }

    #[test]
    fn grid_search_agreement_small_case() {
        let gs = set(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]);
        let sol = pareto_min_norm(&gs, &GmsConfig::default()).unwrap();
        let mut best = f64::INFINITY;
        let steps = 1000;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let (a, b) = (i as f64 / steps as f64, j as f64 / steps as f64);
                let c = 1.0 - a - b;
                let x = a + c;
                let y = b + c;
                best = best.min((x * x + y * y).sqrt());
            }
        }
        assert!((sol.min_norm - best).abs() < 1e-3);
        assert!((sol.min_norm - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn iterate_norm_is_monotone() {
        let gs = set(&[1.0, 0.2, -0.3], &[-0.8, 0.4, 0.1], &[0.1, -1.0, 0.5]);
        let sol = pareto_min_norm(&gs, &GmsConfig::default()).unwrap();
        for w in sol.trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn orthogonal_inputs_untouched() {
        for mode in [OrthoMode::Literal, OrthoMode::Orthogonal] {
            let gs = set(&[0.0, 3.0], &[1.0, 0.0], &[0.0, 2.0]);
            let (out, _) = orthogonalize(&gs, &cfg(mode, false)).unwrap();
            assert_eq!(out.g_q, gs.g_q);
        }
    }

    #[test]
    fn literal_mode_example() {
        let (out, report) = orthogonalize(
            &set(&[1.0, 0.0], &[2.0, 0.0], &[1.0, 1.0]),
            &cfg(OrthoMode::Literal, false),
        )
        .unwrap();
        assert_eq!(out.g_q.as_ref(), &[1.0, 0.0]);
        assert!(report.applied[1]);
    }

    #[test]
    fn orthogonal_mode_example() {
        let (out, _) = orthogonalize(
            &set(&[1.0, 0.0], &[1.0, 1.0], &[0.0, 2.0]),
            &cfg(OrthoMode::Orthogonal, false),
        )
        .unwrap();
        assert_eq!(out.g_q.as_ref(), &[1.0, 0.0]);
        assert_eq!(dot(&out.g_q, &[0.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn zero_reference_passes_through() {
        let gs = set(&[1.0, 2.0], &[1.0, -1.0], &[0.0, 0.0]);
        let (out, report) = orthogonalize(&gs, &cfg(OrthoMode::Orthogonal, false)).unwrap();
        assert_eq!(out.g_q, gs.g_q);
        assert!(report.degenerate[1]);
    }

    #[test]
    fn conflict_only_skips_aligned_pairs() {
        let gs = set(&[1.0, 0.5], &[1.0, 0.0], &[1.0, 1.0]);
        let (out, report) = orthogonalize(&gs, &GmsConfig::default()).unwrap();
        assert_eq!(out, gs);
        assert_eq!(report.applied, [false; 3]);
    }

    #[test]
    fn combine_examples() {
        let gs = set(&[1.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]);
        let plain = combine(&gs, &SimplexWeights::uniform(), &GmsConfig::default()).unwrap();
        assert_eq!(plain.as_ref(), &[2.0, 2.0]);
        let weighted = GmsConfig {
            combine_mode: CombineMode::ParetoWeighted,
            ..GmsConfig::default()
        };
        let vertex = SimplexWeights::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(combine(&gs, &vertex, &weighted).unwrap(), gs.g_t);
        let zeros = set(&[0.0; 2], &[0.0; 2], &[0.0; 2]);
        assert_eq!(
            combine(&zeros, &vertex, &GmsConfig::default()).unwrap().as_ref(),
            &[0.0, 0.0]
        );
    }

    #[test]
    fn mismatched_dims_rejected() {
        assert!(matches!(
            GradientSet::new(
                vec![1.0].into(),
                vec![1.0, 2.0].into(),
                vec![1.0].into(),
                GradScope::ClassifierOnly
            ),
            Err(CedoError::Shape(_))
        ));
    }

    #[test]
    fn ill_conditioned_interior_origin() {
        // tiny g_t, huge g_v; the origin sits at α = (0.44, 0.43, 0.13)
        let t = [-0.3067497194069528, -0.3802657697500875];
        let q = [16.407555880425196, 8.221729787043632];
        let v: Vec<f64> = (0..2).map(|d| -(0.44 * t[d] + 0.43 * q[d]) / 0.13).collect();
        let sol = pareto_min_norm(&set(&t, &q, &v), &GmsConfig::default()).unwrap();
        assert!(sol.min_norm < 1e-9, "{}", sol.min_norm);
        assert!(sol.stationary);
        let w = sol.weights.as_array();
        assert!((w[0] - 0.44).abs() < 1e-9 && (w[1] - 0.43).abs() < 1e-9);
        assert!(sol.iterations < 10);
    }
}
