//! Two-encoder multimodal classifier with hand-derived backpropagation.
//!
//! Layout: `e_q` and `e_v` are single linear+ReLU encoders; the fusion layer `g`
//! takes the concatenation `[h_v ; h_q]` through linear+ReLU; the classifier `c`
//! is linear. The question head feeds `[0 ; h_q]` through the same `g` and `c`,
//! the image head feeds `[h_v ; 0]`.
//!
//! Parameter groups: question = `e_q`, image = `e_v`, classifier = `g` and `c`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CedoError, Result};
use crate::numeric::{Matrix, RngStream, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub question_dim: usize,
    pub image_dim: usize,
    pub hidden_dim: usize,
    pub fused_dim: usize,
    pub num_answers: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("question_dim", self.question_dim),
            ("image_dim", self.image_dim),
            ("hidden_dim", self.hidden_dim),
            ("fused_dim", self.fused_dim),
            ("num_answers", self.num_answers),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(CedoError::Argument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Affine map `y = W x + b` with `W` stored as (out × in).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vector,
}

impl Layer {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Layer {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: Vector::zeros(out_dim),
        }
    }

    fn glorot(out_dim: usize, in_dim: usize, rng: &mut RngStream) -> Result<Self> {
        let s = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..out_dim * in_dim)
            .map(|_| rng.uniform(-s, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Layer {
            weight: Matrix::from_vec(out_dim, in_dim, data)?,
            bias: Vector::zeros(out_dim),
        })
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.weight.matvec(x)?;
        for (yi, bi) in y.iter_mut().zip(self.bias.iter()) {
            *yi += bi;
        }
        Ok(y)
    }

    pub fn num_params(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }

    fn shape(&self) -> (usize, usize) {
        self.weight.shape()
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weight.as_slice().iter().chain(self.bias.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weight.as_mut_slice().iter_mut().chain(self.bias.iter_mut())
    }
}

/// Trainable parameter groups of the optimiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Question,
    Image,
    Classifier,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Question, ParamGroup::Image, ParamGroup::Classifier];
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamGroup::Question => "question",
            ParamGroup::Image => "image",
            ParamGroup::Classifier => "classifier",
        })
    }
}

/// Model parameters. Gradients use the same layout (see [`ParamGrads`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub question_encoder: Layer,
    pub image_encoder: Layer,
    pub fusion: Layer,
    pub classifier: Layer,
}

pub type ParamGrads = ModelParams;

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        ModelParams {
            dims,
            question_encoder: Layer::zeros(dims.hidden_dim, dims.question_dim),
            image_encoder: Layer::zeros(dims.hidden_dim, dims.image_dim),
            fusion: Layer::zeros(dims.fused_dim, 2 * dims.hidden_dim),
            classifier: Layer::zeros(dims.num_answers, dims.fused_dim),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(dims: ModelDims, rng: &mut RngStream) -> Result<Self> {
        dims.validate()?;
        Ok(ModelParams {
            dims,
            question_encoder: Layer::glorot(dims.hidden_dim, dims.question_dim, rng)?,
            image_encoder: Layer::glorot(dims.hidden_dim, dims.image_dim, rng)?,
            fusion: Layer::glorot(dims.fused_dim, 2 * dims.hidden_dim, rng)?,
            classifier: Layer::glorot(dims.num_answers, dims.fused_dim, rng)?,
        })
    }

    pub fn layers(&self, group: ParamGroup) -> Vec<&Layer> {
        match group {
            ParamGroup::Question => vec![&self.question_encoder],
            ParamGroup::Image => vec![&self.image_encoder],
            ParamGroup::Classifier => vec![&self.fusion, &self.classifier],
        }
    }

    pub fn layers_mut(&mut self, group: ParamGroup) -> Vec<&mut Layer> {
        match group {
            ParamGroup::Question => vec![&mut self.question_encoder],
            ParamGroup::Image => vec![&mut self.image_encoder],
            ParamGroup::Classifier => vec![&mut self.fusion, &mut self.classifier],
        }
    }

    pub fn group_len(&self, group: ParamGroup) -> usize {
        self.layers(group).iter().map(|l| l.num_params()).sum()
    }

    pub fn group_values(&self, group: ParamGroup) -> Vec<f64> {
        self.layers(group)
            .into_iter()
            .flat_map(|l| l.values().copied())
            .collect()
    }

    pub fn set_group_values(&mut self, group: ParamGroup, values: &[f64]) -> Result<()> {
        let expected = self.group_len(group);
        if values.len() != expected {
            return Err(CedoError::Shape(format!(
                "{group} group holds {expected} values, got {}",
                values.len()
            )));
        }
        let targets = self.layers_mut(group).into_iter().flat_map(|l| l.values_mut());
        for (t, v) in targets.zip(values) {
            *t = *v;
        }
        Ok(())
    }

    /// Every parameter, in group order question, image, classifier.
    pub fn all_values(&self) -> Vec<f64> {
        ParamGroup::ALL.iter().flat_map(|&g| self.group_values(g)).collect()
    }

    pub fn set_all_values(&mut self, values: &[f64]) -> Result<()> {
        let total: usize = ParamGroup::ALL.iter().map(|&g| self.group_len(g)).sum();
        if values.len() != total {
            return Err(CedoError::Shape(format!(
                "model holds {total} values, got {}",
                values.len()
            )));
        }
        let mut offset = 0;
        for g in ParamGroup::ALL {
            let n = self.group_len(g);
            self.set_group_values(g, &values[offset..offset + n])?;
            offset += n;
        }
        Ok(())
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.dims == other.dims
            && self.question_encoder.shape() == other.question_encoder.shape()
            && self.image_encoder.shape() == other.image_encoder.shape()
            && self.fusion.shape() == other.fusion.shape()
            && self.classifier.shape() == other.classifier.shape()
    }

    fn add_assign(&mut self, other: &ModelParams) {
        for g in ParamGroup::ALL {
            let src: Vec<&Layer> = other.layers(g);
            for (dst, src) in self.layers_mut(g).into_iter().zip(src) {
                for (d, s) in dst.values_mut().zip(src.values()) {
                    *d += s;
                }
            }
        }
    }
}

/// A mini-batch of pre-extracted features.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub question_features: Matrix,
    pub image_features: Matrix,
    pub answer_ids: Vec<usize>,
    pub qtype_ids: Vec<usize>,
}

impl Batch {
    pub fn new(
        question_features: Matrix,
        image_features: Matrix,
        answer_ids: Vec<usize>,
        qtype_ids: Vec<usize>,
    ) -> Result<Self> {
        let n = question_features.rows();
        if image_features.rows() != n || answer_ids.len() != n || qtype_ids.len() != n {
            return Err(CedoError::Shape(format!(
                "batch lengths disagree: q={n} v={} answers={} qtypes={}",
                image_features.rows(),
                answer_ids.len(),
                qtype_ids.len()
            )));
        }
        Ok(Batch {
            question_features,
            image_features,
            answer_ids,
            qtype_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.answer_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answer_ids.is_empty()
    }
}

/// Output heads: joint `f`, question-only `f_q`, image-only `f_v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Joint,
    Question,
    Image,
}

impl Head {
    pub const ALL: [Head; 3] = [Head::Joint, Head::Question, Head::Image];

    fn index(self) -> usize {
        match self {
            Head::Joint => 0,
            Head::Question => 1,
            Head::Image => 2,
        }
    }
}

/// Fusion/classifier activations for one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadCache {
    pub fusion_input: Vec<f64>,
    pub fusion_pre: Vec<f64>,
    pub fused: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Forward activations of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub dims: ModelDims,
    pub question_input: Vec<f64>,
    pub image_input: Vec<f64>,
    pub question_pre: Vec<f64>,
    pub question_hidden: Vec<f64>,
    pub image_pre: Vec<f64>,
    pub image_hidden: Vec<f64>,
    pub heads: [HeadCache; 3],
}

impl ForwardCache {
    pub fn head(&self, head: Head) -> &HeadCache {
        &self.heads[head.index()]
    }

    pub fn logits(&self, head: Head) -> &[f64] {
        &self.head(head).logits
    }

    /// Joint fused embedding `R_t`; also the contrastive feature.
    pub fn fused_embedding(&self) -> &[f64] {
        &self.head(Head::Joint).fused
    }
}

fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

fn head_forward(params: &ModelParams, fusion_input: Vec<f64>) -> Result<HeadCache> {
    let fusion_pre = params.fusion.apply(&fusion_input)?;
    let fused = relu(&fusion_pre);
    let logits = params.classifier.apply(&fused)?;
    Ok(HeadCache {
        fusion_input,
        fusion_pre,
        fused,
        logits,
    })
}

pub fn forward_sample(params: &ModelParams, question: &[f64], image: &[f64]) -> Result<ForwardCache> {
    let dims = params.dims;
    if question.len() != dims.question_dim || image.len() != dims.image_dim {
        return Err(CedoError::Shape(format!(
            "sample dims (q={}, v={}) do not match model (q={}, v={})",
            question.len(),
            image.len(),
            dims.question_dim,
            dims.image_dim
        )));
    }
    let question_pre = params.question_encoder.apply(question)?;
    let question_hidden = relu(&question_pre);
    let image_pre = params.image_encoder.apply(image)?;
    let image_hidden = relu(&image_pre);

    let h = dims.hidden_dim;
    let mut joint = Vec::with_capacity(2 * h);
    joint.extend_from_slice(&image_hidden);
    joint.extend_from_slice(&question_hidden);
    let mut q_only = vec![0.0; 2 * h];
    q_only[h..].copy_from_slice(&question_hidden);
    let mut v_only = vec![0.0; 2 * h];
    v_only[..h].copy_from_slice(&image_hidden);

    let heads = [
        head_forward(params, joint)?,
        head_forward(params, q_only)?,
        head_forward(params, v_only)?,
    ];
    Ok(ForwardCache {
        dims,
        question_input: question.to_vec(),
        image_input: image.to_vec(),
        question_pre,
        question_hidden,
        image_pre,
        image_hidden,
        heads,
    })
}

pub fn forward(params: &ModelParams, batch: &Batch) -> Result<Vec<ForwardCache>> {
    if batch.question_features.cols() != params.dims.question_dim
        || batch.image_features.cols() != params.dims.image_dim
    {
        return Err(CedoError::Shape(format!(
            "batch feature dims (q={}, v={}) do not match model (q={}, v={})",
            batch.question_features.cols(),
            batch.image_features.cols(),
            params.dims.question_dim,
            params.dims.image_dim
        )));
    }
    (0..batch.len())
        .map(|i| forward_sample(params, batch.question_features.row(i), batch.image_features.row(i)))
        .collect()
}

/// Upstream gradients for one sample. `None` means the head's loss is absent.
#[derive(Debug, Clone, Default)]
pub struct SampleUpstream {
    pub logits: [Option<Vec<f64>>; 3],
    /// Gradient of the joint loss with respect to the fused embedding.
    pub fused_embedding: Option<Vec<f64>>,
}

impl SampleUpstream {
    pub fn set_logits(&mut self, head: Head, grad: Vec<f64>) {
        self.logits[head.index()] = Some(grad);
    }
}

/// Gradients of the joint, question-branch and image-branch losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub joint: ParamGrads,
    pub question: ParamGrads,
    pub image: ParamGrads,
}

impl LossGrads {
    pub fn zeros(dims: ModelDims) -> Self {
        LossGrads {
            joint: ParamGrads::zeros(dims),
            question: ParamGrads::zeros(dims),
            image: ParamGrads::zeros(dims),
        }
    }

    pub fn get(&self, head: Head) -> &ParamGrads {
        match head {
            Head::Joint => &self.joint,
            Head::Question => &self.question,
            Head::Image => &self.image,
        }
    }

    fn get_mut(&mut self, head: Head) -> &mut ParamGrads {
        match head {
            Head::Joint => &mut self.joint,
            Head::Question => &mut self.question,
            Head::Image => &mut self.image,
        }
    }

    /// Gradient of `L_t + L_q + L_v`.
    pub fn sum(&self) -> ParamGrads {
        let mut total = self.joint.clone();
        total.add_assign(&self.question);
        total.add_assign(&self.image);
        total
    }
}

fn check_cache(params: &ModelParams, cache: &ForwardCache) -> Result<()> {
    let d = params.dims;
    let ok = cache.dims == d
        && cache.question_input.len() == d.question_dim
        && cache.image_input.len() == d.image_dim
        && cache.question_pre.len() == d.hidden_dim
        && cache.image_pre.len() == d.hidden_dim
        && cache.heads.iter().all(|h| {
            h.fusion_input.len() == 2 * d.hidden_dim && h.fused.len() == d.fused_dim && h.logits.len() == d.num_answers
        });
    if ok {
        Ok(())
    } else {
        Err(CedoError::State(
            "forward cache does not match the model it is replayed against".into(),
        ))
    }
}

fn relu_mask(grad: &mut [f64], pre: &[f64]) {
    for (g, &p) in grad.iter_mut().zip(pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

fn accumulate_layer(layer: &mut Layer, grad_out: &[f64], input: &[f64]) {
    layer.weight.add_outer(grad_out, input);
    for (b, g) in layer.bias.iter_mut().zip(grad_out) {
        *b += g;
    }
}

fn head_backward(
    params: &ModelParams,
    cache: &ForwardCache,
    head: Head,
    d_logits: &[f64],
    d_fused_extra: Option<&[f64]>,
    out: &mut ParamGrads,
) -> Result<()> {
    let hc = cache.head(head);
    if d_logits.len() != params.dims.num_answers {
        return Err(CedoError::Shape(format!(
            "upstream logit gradient has length {}, expected {}",
            d_logits.len(),
            params.dims.num_answers
        )));
    }
    accumulate_layer(&mut out.classifier, d_logits, &hc.fused);
    let mut d_fused = params.classifier.weight.matvec_t(d_logits)?;
    if let Some(extra) = d_fused_extra {
        if extra.len() != d_fused.len() {
            return Err(CedoError::Shape(format!(
                "fused-embedding gradient has length {}, expected {}",
                extra.len(),
                d_fused.len()
            )));
        }
        for (d, e) in d_fused.iter_mut().zip(extra) {
            *d += e;
        }
    }
    relu_mask(&mut d_fused, &hc.fusion_pre);
    accumulate_layer(&mut out.fusion, &d_fused, &hc.fusion_input);
    let d_input = params.fusion.weight.matvec_t(&d_fused)?;
    let h = params.dims.hidden_dim;

    if head != Head::Question {
        let mut d_v = d_input[..h].to_vec();
        relu_mask(&mut d_v, &cache.image_pre);
        accumulate_layer(&mut out.image_encoder, &d_v, &cache.image_input);
    }
    if head != Head::Image {
        let mut d_q = d_input[h..].to_vec();
        relu_mask(&mut d_q, &cache.question_pre);
        accumulate_layer(&mut out.question_encoder, &d_q, &cache.question_input);
    }
    Ok(())
}

/// Exact gradients for each head's loss, summed over samples in order.
pub fn backward(params: &ModelParams, caches: &[ForwardCache], upstream: &[SampleUpstream]) -> Result<LossGrads> {
    if caches.len() != upstream.len() {
        return Err(CedoError::Shape(format!(
            "{} caches but {} upstream gradients",
            caches.len(),
            upstream.len()
        )));
    }
    let mut grads = LossGrads::zeros(params.dims);
    for (cache, up) in caches.iter().zip(upstream) {
        check_cache(params, cache)?;
        for head in Head::ALL {
            let extra = match head {
                Head::Joint => up.fused_embedding.as_deref(),
                _ => None,
            };
            let d_logits = match (&up.logits[head.index()], extra) {
                (Some(d), _) => d.clone(),
                (None, Some(_)) => vec![0.0; params.dims.num_answers],
                (None, None) => continue,
            };
            head_backward(params, cache, head, &d_logits, extra, grads.get_mut(head))?;
        }
    }
    Ok(grads)
}

/// Which parameters a flattened gradient covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradScope {
    /// Fusion and classifier layers, shared by all three losses.
    #[default]
    ClassifierOnly,
    AllParameters,
}

impl GradScope {
    pub fn groups(self) -> &'static [ParamGroup] {
        match self {
            GradScope::ClassifierOnly => &[ParamGroup::Classifier],
            GradScope::AllParameters => &ParamGroup::ALL,
        }
    }

    pub fn len(self, dims: ModelDims) -> usize {
        let p = ModelParams::zeros(dims);
        self.groups().iter().map(|&g| p.group_len(g)).sum()
    }
}

impl FromStr for GradScope {
    type Err = CedoError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classifier" | "classifier_only" | "classifier-only" => Ok(GradScope::ClassifierOnly),
            "all" | "all_parameters" | "all-parameters" => Ok(GradScope::AllParameters),
            other => Err(CedoError::Argument(format!("unknown gradient scope `{other}`"))),
        }
    }
}

impl fmt::Display for GradScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GradScope::ClassifierOnly => "classifier_only",
            GradScope::AllParameters => "all_parameters",
        })
    }
}

/// Flattens the groups in `scope`. Order: groups question, image, classifier;
/// within a group layers in forward order; within a layer row-major weight then bias.
pub fn flatten_group_grads(grads: &ParamGrads, scope: GradScope) -> Vector {
    scope.groups().iter().flat_map(|&g| grads.group_values(g)).collect()
}

/// Inverse of [`flatten_group_grads`]; groups outside `scope` are zero.
pub fn unflatten_group_grads(flat: &[f64], dims: ModelDims, scope: GradScope) -> Result<ParamGrads> {
    let mut out = ParamGrads::zeros(dims);
    let expected = scope.len(dims);
    if flat.len() != expected {
        return Err(CedoError::Shape(format!(
            "scope {scope} holds {expected} values, got {}",
            flat.len()
        )));
    }
    let mut offset = 0;
    for &g in scope.groups() {
        let n = out.group_len(g);
        out.set_group_values(g, &flat[offset..offset + n])?;
        offset += n;
    }
    Ok(out)
}

const CHECKPOINT_FORMAT: &str = "cedo-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    params: ModelParams,
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        params: params.clone(),
    };
    let text = serde_json::to_string(&ckpt).map_err(|e| CedoError::Parse(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CedoError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|e| CedoError::io(path, e))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| CedoError::Parse(format!("{}: {e}", path.display())))?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(CedoError::Parse(format!(
            "unsupported checkpoint {} v{}",
            ckpt.format, ckpt.version
        )));
    }
    let reference = ModelParams::zeros(ckpt.params.dims);
    if !reference.same_layout(&ckpt.params)
        || ckpt.params.question_encoder.bias.len() != ckpt.params.dims.hidden_dim
        || ckpt.params.image_encoder.bias.len() != ckpt.params.dims.hidden_dim
        || ckpt.params.fusion.bias.len() != ckpt.params.dims.fused_dim
        || ckpt.params.classifier.bias.len() != ckpt.params.dims.num_answers
    {
        return Err(CedoError::Shape("checkpoint tensors disagree with dims header".into()));
    }
    Ok(ckpt.params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            question_dim: 4,
            image_dim: 4,
            hidden_dim: 5,
            fused_dim: 5,
            num_answers: 3,
        }
    }

    fn random_batch(rng: &mut RngStream, d: ModelDims, n: usize) -> Batch {
        let q = (0..n * d.question_dim).map(|_| rng.standard_normal()).collect();
        let v = (0..n * d.image_dim).map(|_| rng.standard_normal()).collect();
        Batch::new(
            Matrix::from_vec(n, d.question_dim, q).unwrap(),
            Matrix::from_vec(n, d.image_dim, v).unwrap(),
            (0..n).map(|i| i % d.num_answers).collect(),
            vec![0; n],
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = ModelParams::init(dims(), &mut RngStream::new(1)).unwrap();
        let b = ModelParams::init(dims(), &mut RngStream::new(1)).unwrap();
        assert_eq!(
            a.all_values().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.all_values().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        for layer in [&a.question_encoder, &a.image_encoder, &a.fusion, &a.classifier] {
            let (o, i) = layer.weight.shape();
            let s = (6.0 / (o + i) as f64).sqrt();
            assert!(layer.weight.as_slice().iter().all(|w| w.abs() <= s));
            assert!(layer.bias.iter().all(|&b| b == 0.0));
        }
        let mut bad = dims();
        bad.hidden_dim = 0;
        assert!(matches!(
            ModelParams::init(bad, &mut RngStream::new(1)),
            Err(CedoError::Argument(_))
        ));
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let p = ModelParams::zeros(dims());
        let batch = random_batch(&mut RngStream::new(3), dims(), 4);
        for c in forward(&p, &batch).unwrap() {
            for h in Head::ALL {
                assert!(c.logits(h).iter().all(|&x| x == 0.0));
                assert_eq!(c.logits(h).len(), 3);
            }
        }
    }

    #[test]
    fn question_head_ignores_image_encoder() {
        let mut rng = RngStream::new(5);
        let p = ModelParams::init(dims(), &mut rng).unwrap();
        let batch = random_batch(&mut rng, dims(), 3);
        let before = forward(&p, &batch).unwrap();
        let mut perturbed = p.clone();
        for w in perturbed.image_encoder.weight.as_mut_slice() {
            *w += 0.37;
        }
        let after = forward(&perturbed, &batch).unwrap();
        for (b, a) in before.iter().zip(&after) {
            assert_eq!(b.logits(Head::Question), a.logits(Head::Question));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = RngStream::new(9);
        let p = ModelParams::init(dims(), &mut rng).unwrap();
        let batch = random_batch(&mut rng, dims(), 3);
        let caches = forward(&p, &batch).unwrap();
        let up: Vec<SampleUpstream> = caches
            .iter()
            .map(|_| {
                let mut u = SampleUpstream::default();
                for h in Head::ALL {
                    u.set_logits(h, vec![0.0; 3]);
                }
                u
            })
            .collect();
        let g = backward(&p, &caches, &up).unwrap();
        assert!(g.joint.all_values().iter().all(|&x| x == 0.0));
        assert!(g.question.all_values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn branch_isolation_in_backward() {
        let mut rng = RngStream::new(11);
        let p = ModelParams::init(dims(), &mut rng).unwrap();
        let batch = random_batch(&mut rng, dims(), 3);
        let caches = forward(&p, &batch).unwrap();
        let up: Vec<SampleUpstream> = caches
            .iter()
            .map(|_| {
                let mut u = SampleUpstream::default();
                for h in Head::ALL {
                    u.set_logits(h, vec![0.3, -0.1, -0.2]);
                }
                u
            })
            .collect();
        let g = backward(&p, &caches, &up).unwrap();
        assert!(g.question.group_values(ParamGroup::Image).iter().all(|&x| x == 0.0));
        assert!(g.image.group_values(ParamGroup::Question).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = RngStream::new(2);
        let p = ModelParams::init(dims(), &mut rng).unwrap();
        let batch = random_batch(&mut rng, dims(), 1);
        let caches = forward(&p, &batch).unwrap();
        let mut other = dims();
        other.fused_dim = 6;
        let q = ModelParams::init(other, &mut rng).unwrap();
        let up = vec![SampleUpstream::default()];
        assert!(matches!(backward(&q, &caches, &up), Err(CedoError::State(_))));
    }

    #[test]
    fn flatten_round_trip_and_lengths() {
        let p = ModelParams::init(dims(), &mut RngStream::new(4)).unwrap();
        let flat = flatten_group_grads(&p, GradScope::AllParameters);
        let back = unflatten_group_grads(&flat, dims(), GradScope::AllParameters).unwrap();
        assert_eq!(back, p);
        let c = flatten_group_grads(&p, GradScope::ClassifierOnly);
        assert_eq!(c.len(), p.group_len(ParamGroup::Classifier));
        let other = ModelParams::zeros(dims());
        assert_eq!(flatten_group_grads(&other, GradScope::ClassifierOnly).len(), c.len());
        assert!("encoders".parse::<GradScope>().is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let p = ModelParams::init(dims(), &mut RngStream::new(8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint(&path).unwrap();
        assert_eq!(
            p.all_values().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            q.all_values().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }
}
