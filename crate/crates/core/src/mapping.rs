//! Cross-modal mapping from word vectors to scene vectors, one function per
//! quantified expression.
//!
//! * `lin`: linear map without bias, solved in closed form (minimum-norm
//!   least squares).
//! * `nn-cos`: one affine layer trained to maximize `cos(prediction, scene)`.
//! * `nn-dot`: one affine layer trained to drive `prediction . scene` to 1.
//!
//! Both network variants use full-batch gradient descent on exact analytic
//! gradients.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::concept::ConceptInventory;
use crate::scenario::{Combination, Dataset, Expression, QuantKind, Split};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MappingError {
    #[error("expression {expression} does not belong to a {kind} dataset")]
    KindMismatch { expression: Expression, kind: QuantKind },
    #[error("concept {0:?} has no word vector in the inventory")]
    UnknownConcept(String),
    #[error("no training pairs")]
    EmptyBatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training diverged at epoch {epoch} (loss {loss}); try a smaller learning rate than {learning_rate}")]
    Diverged { epoch: usize, loss: f64, learning_rate: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("least-squares solve failed: {0}")]
    Solve(String),
    #[error("unknown {what} {value:?}")]
    Parse { what: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Lin,
    NnCos,
    NnDot,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Lin, Variant::NnCos, Variant::NnDot];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Lin => "lin",
            Variant::NnCos => "nn-cos",
            Variant::NnDot => "nn-dot",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = MappingError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| MappingError::Parse {
                what: "variant",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Identity,
    Relu,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative; the relu subgradient at 0 is 0.
    #[inline]
    fn slope(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl FromStr for Activation {
    type Err = MappingError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            _ => Err(MappingError::Parse {
                what: "activation",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init_scale: f64,
    /// Output activation of the network variants; `lin` is always identity.
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            epochs: 500,
            seed: 0,
            init_scale: 0.1,
            activation: Activation::Identity,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MappingError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(MappingError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(MappingError::InvalidConfig("epochs must be positive".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(MappingError::InvalidConfig("init_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingModel {
    pub expression: Expression,
    pub variant: Variant,
    /// `d_out x d_in`.
    pub weights: DMatrix<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub meta: TrainingMeta,
}

impl MappingModel {
    pub fn d_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weights.nrows()
    }

    pub fn predict(&self, word: &[f64]) -> Result<Vec<f64>, MappingError> {
        if word.len() != self.d_in() {
            return Err(MappingError::DimensionMismatch {
                expected: self.d_in(),
                got: word.len(),
            });
        }
        Ok((0..self.d_out())
            .map(|r| {
                let z: f64 = self
                    .weights
                    .row(r)
                    .iter()
                    .zip(word)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
                    + self.bias[r];
                self.activation.apply(z)
            })
            .collect())
    }

    pub fn parameters_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|x| x.is_finite())
    }
}

pub fn predict(model: &MappingModel, word: &[f64]) -> Result<Vec<f64>, MappingError> {
    model.predict(word)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub word: Vec<f64>,
    pub scene: Vec<f64>,
    pub concept: String,
    pub combination: Combination,
}

/// One (word, scene) pair per scenario of `expression` in `split`.
pub fn collect_pairs(
    ds: &Dataset,
    inventory: &ConceptInventory,
    expression: Expression,
    split: Split,
) -> Result<Vec<TrainingPair>, MappingError> {
    if expression.kind() != ds.kind {
        return Err(MappingError::KindMismatch {
            expression,
            kind: ds.kind,
        });
    }
    ds.split(split)
        .filter(|(_, s)| s.expression == expression)
        .map(|(_, s)| {
            let concept = inventory
                .get(&s.target)
                .ok_or_else(|| MappingError::UnknownConcept(s.target.clone()))?;
            Ok(TrainingPair {
                word: concept.word.clone(),
                scene: s.vector.clone(),
                concept: s.target.clone(),
                combination: s.combination,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: DMatrix<f64>,
    pub bias: Vec<f64>,
}

/// Pairs with identical words share one forward pass.
struct PreparedBatch {
    /// `d_in x U`, one column per distinct word.
    inputs_t: DMatrix<f64>,
    /// `U x d_in`.
    inputs: DMatrix<f64>,
    group: Vec<usize>,
    scenes: Vec<Vec<f64>>,
}

impl PreparedBatch {
    fn new(pairs: &[TrainingPair], d_in: usize, d_out: usize) -> Result<Self, MappingError> {
        if pairs.is_empty() {
            return Err(MappingError::EmptyBatch);
        }
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut distinct: Vec<&[f64]> = Vec::new();
        let mut group = Vec::with_capacity(pairs.len());
        for p in pairs {
            if p.word.len() != d_in {
                return Err(MappingError::DimensionMismatch {
                    expected: d_in,
                    got: p.word.len(),
                });
            }
            if p.scene.len() != d_out {
                return Err(MappingError::DimensionMismatch {
                    expected: d_out,
                    got: p.scene.len(),
                });
            }
            let key: Vec<u64> = p.word.iter().map(|x| x.to_bits()).collect();
            let g = *index.entry(key).or_insert_with(|| {
                distinct.push(&p.word);
                distinct.len() - 1
            });
            group.push(g);
        }
        let inputs_t = DMatrix::from_fn(d_in, distinct.len(), |r, c| distinct[c][r]);
        let inputs = inputs_t.transpose();
        Ok(Self {
            inputs_t,
            inputs,
            group,
            scenes: pairs.iter().map(|p| p.scene.clone()).collect(),
        })
    }
}

/// Per-pair loss and its gradient with respect to the prediction.
fn pair_loss(variant: Variant, pred: &[f64], scene: &[f64], grad: &mut [f64]) -> f64 {
    match variant {
        Variant::Lin => {
            let mut loss = 0.0;
            for ((g, p), y) in grad.iter_mut().zip(pred).zip(scene) {
                let r = p - y;
                *g = r;
                loss += r * r;
            }
            0.5 * loss
        }
        Variant::NnCos => {
            let pp: f64 = pred.iter().map(|x| x * x).sum();
            let yy: f64 = scene.iter().map(|x| x * x).sum();
            if pp == 0.0 || yy == 0.0 {
                grad.iter_mut().for_each(|g| *g = 0.0);
                return 1.0;
            }
            let (np, ny) = (pp.sqrt(), yy.sqrt());
            let py: f64 = pred.iter().zip(scene).map(|(a, b)| a * b).sum();
            let cos = py / (np * ny);
            for ((g, p), y) in grad.iter_mut().zip(pred).zip(scene) {
                *g = -(y / (np * ny) - cos * p / pp);
            }
            1.0 - cos
        }
        Variant::NnDot => {
            let t: f64 = pred.iter().zip(scene).map(|(a, b)| a * b).sum::<f64>() - 1.0;
            for (g, y) in grad.iter_mut().zip(scene) {
                *g = 2.0 * t * y;
            }
            t * t
        }
    }
}

fn batch_loss_and_grad(
    weights: &DMatrix<f64>,
    bias: &[f64],
    activation: Activation,
    variant: Variant,
    batch: &PreparedBatch,
    want_grad: bool,
) -> (f64, Option<Gradients>) {
    let d_out = weights.nrows();
    // d_out x U pre-activations, one column per distinct word
    let mut z = weights * &batch.inputs_t;
    for mut col in z.column_iter_mut() {
        for (v, b) in col.iter_mut().zip(bias) {
            *v += b;
        }
    }
    let p = z.map(|v| activation.apply(v));

    let n = batch.scenes.len() as f64;
    let mut dz = DMatrix::<f64>::zeros(d_out, z.ncols());
    let mut scratch = vec![0.0; d_out];
    let mut loss = 0.0;
    for (scene, &g) in batch.scenes.iter().zip(&batch.group) {
        let pred = p.column(g);
        let pred = pred.as_slice();
        loss += pair_loss(variant, pred, scene, &mut scratch);
        if want_grad {
            let zc = z.column(g);
            let mut dc = dz.column_mut(g);
            for r in 0..d_out {
                dc[r] += scratch[r] * activation.slope(zc[r]);
            }
        }
    }
    loss /= n;
    if !want_grad {
        return (loss, None);
    }
    dz /= n;
    let gw = &dz * &batch.inputs;
    let gb = dz.column_sum().iter().copied().collect();
    (loss, Some(Gradients { weights: gw, bias: gb }))
}

/// Mean per-pair loss of `variant` on `batch`, and its exact gradient with
/// respect to the model's weights and bias.
pub fn loss_and_grad(
    model: &MappingModel,
    batch: &[TrainingPair],
    variant: Variant,
) -> Result<(f64, Gradients), MappingError> {
    let prepared = PreparedBatch::new(batch, model.d_in(), model.d_out())?;
    let (loss, grads) = batch_loss_and_grad(&model.weights, &model.bias, model.activation, variant, &prepared, true);
    Ok((loss, grads.expect("gradient requested")))
}

pub fn loss(model: &MappingModel, batch: &[TrainingPair]) -> Result<f64, MappingError> {
    let prepared = PreparedBatch::new(batch, model.d_in(), model.d_out())?;
    Ok(batch_loss_and_grad(&model.weights, &model.bias, model.activation, model.variant, &prepared, false).0)
}

fn dims(pairs: &[TrainingPair]) -> Result<(usize, usize), MappingError> {
    let first = pairs.first().ok_or(MappingError::EmptyBatch)?;
    Ok((first.word.len(), first.scene.len()))
}

/// Minimum-norm least-squares linear map (no bias).
pub fn train_lin(pairs: &[TrainingPair], expression: Expression) -> Result<MappingModel, MappingError> {
    let (d_in, d_out) = dims(pairs)?;
    let n = pairs.len();
    for p in pairs {
        if p.word.len() != d_in || p.scene.len() != d_out {
            return Err(MappingError::DimensionMismatch {
                expected: d_in,
                got: p.word.len(),
            });
        }
    }
    let x = DMatrix::from_fn(n, d_in, |r, c| pairs[r].word[c]);
    let y = DMatrix::from_fn(n, d_out, |r, c| pairs[r].scene[c]);
    let svd = x.svd(true, true);
    let largest = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = largest * (n.max(d_in) as f64) * f64::EPSILON;
    let b = svd.solve(&y, eps).map_err(|e| MappingError::Solve(e.to_string()))?;
    let mut model = MappingModel {
        expression,
        variant: Variant::Lin,
        weights: b.transpose(),
        bias: vec![0.0; d_out],
        activation: Activation::Identity,
        meta: TrainingMeta {
            epochs: 0,
            initial_loss: f64::NAN,
            final_loss: f64::NAN,
            seed: 0,
        },
    };
    let residual = loss(&model, pairs)?;
    model.meta.initial_loss = residual;
    model.meta.final_loss = residual;
    Ok(model)
}

/// Full-batch gradient descent from `init`. `lin` keeps its bias at zero.
pub fn gradient_descent(
    mut model: MappingModel,
    pairs: &[TrainingPair],
    learning_rate: f64,
    epochs: usize,
) -> Result<MappingModel, MappingError> {
    let batch = PreparedBatch::new(pairs, model.d_in(), model.d_out())?;
    let learn_bias = model.variant != Variant::Lin;
    let mut initial = None;
    for epoch in 0..epochs {
        let (l, grads) = batch_loss_and_grad(&model.weights, &model.bias, model.activation, model.variant, &batch, true);
        if !l.is_finite() {
            return Err(MappingError::Diverged {
                epoch,
                loss: l,
                learning_rate,
            });
        }
        initial.get_or_insert(l);
        let g = grads.expect("gradient requested");
        model.weights -= &g.weights * learning_rate;
        if learn_bias {
            for (b, gb) in model.bias.iter_mut().zip(&g.bias) {
                *b -= learning_rate * gb;
            }
        }
    }
    let (final_loss, _) = batch_loss_and_grad(&model.weights, &model.bias, model.activation, model.variant, &batch, false);
    if !final_loss.is_finite() || !model.parameters_finite() {
        return Err(MappingError::Diverged {
            epoch: epochs,
            loss: final_loss,
            learning_rate,
        });
    }
    model.meta.epochs += epochs;
    model.meta.initial_loss = initial.unwrap_or(final_loss);
    model.meta.final_loss = final_loss;
    Ok(model)
}

/// Gaussian(0, init_scale^2) initialization, seeded.
pub fn init_model(
    expression: Expression,
    variant: Variant,
    d_in: usize,
    d_out: usize,
    cfg: &TrainConfig,
) -> MappingModel {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.init_scale).expect("positive init scale");
    // row-major draw order so the stream is layout independent
    let mut w = DMatrix::zeros(d_out, d_in);
    for r in 0..d_out {
        for c in 0..d_in {
            w[(r, c)] = normal.sample(&mut rng);
        }
    }
    let bias = (0..d_out).map(|_| normal.sample(&mut rng)).collect();
    // lin has no bias term; the draw still happens so the weight stream matches
    let bias = if variant == Variant::Lin { vec![0.0; d_out] } else { bias };
    MappingModel {
        expression,
        variant,
        weights: w,
        bias,
        activation: match variant {
            Variant::Lin => Activation::Identity,
            _ => cfg.activation,
        },
        meta: TrainingMeta {
            epochs: 0,
            initial_loss: f64::NAN,
            final_loss: f64::NAN,
            seed: cfg.seed,
        },
    }
}

pub fn train(
    pairs: &[TrainingPair],
    expression: Expression,
    variant: Variant,
    cfg: &TrainConfig,
) -> Result<MappingModel, MappingError> {
    cfg.validate()?;
    let (d_in, d_out) = dims(pairs)?;
    match variant {
        Variant::Lin => train_lin(pairs, expression),
        Variant::NnCos | Variant::NnDot => {
            let init = init_model(expression, variant, d_in, d_out, cfg);
            gradient_descent(init, pairs, cfg.learning_rate, cfg.epochs)
        }
    }
}
