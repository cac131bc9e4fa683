//! Fairwashing: the exact construction for logistic regression on flat data
//! manifolds, and the fine-tuning attack for general networks.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_input, OutputSelect, Tape};
use crate::dataio::LabeledDataset;
use crate::error::{Error, Result};
use crate::explain::Method;
use crate::manifold::{Projector, RowProjectors};
use crate::models::{accuracy, Classifier, LogRegModel, MlpModel, Optimizer, OptimizerKind, TrainConfig};
use crate::rng::RngState;
use crate::tensor::{dot, norm, Tensor};

/// Affine description `ŵᵢᵀx = bᵢ` of a flat data manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatManifoldSpec {
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    unit_norm: bool,
}

/// Absolute tolerance on `|ŵᵀx − b|`, relative to `max(1, ‖ŵ‖‖x‖)`.
pub const CONSTRAINT_TOL: f64 = 1e-9;

impl FlatManifoldSpec {
    pub fn new(normals: Vec<Vec<f64>>, offsets: Vec<f64>) -> Result<Self> {
        if normals.is_empty() || normals.len() != offsets.len() {
            return Err(Error::InvalidArgument("need one offset per normal".into()));
        }
        let dim = normals[0].len();
        if dim == 0 || normals.iter().any(|n| n.len() != dim) || normals.len() >= dim {
            return Err(Error::InvalidArgument("normals must share a dimension exceeding their count".into()));
        }
        let mut check = normals.clone();
        let rank = crate::linalg::orthonormalize(&mut check, 1e-10);
        if rank < normals.len() {
            return Err(Error::RankDeficient {
                requested: normals.len(),
                achieved: rank,
            });
        }
        let unit_norm = normals.iter().all(|n| (norm(n) - 1.0).abs() <= 1e-12);
        Ok(Self {
            normals,
            offsets,
            unit_norm,
        })
    }

    pub fn normals(&self) -> &[Vec<f64>] {
        &self.normals
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn unit_norm(&self) -> bool {
        self.unit_norm
    }

    /// Ambient dimension `D`.
    pub fn dim(&self) -> usize {
        self.normals[0].len()
    }

    /// Manifold dimension `d = D − #normals`.
    pub fn manifold_dim(&self) -> usize {
        self.dim() - self.normals.len()
    }

    /// Same manifold with unit-length normals (offsets rescaled accordingly).
    pub fn normalized(&self) -> Self {
        let (normals, offsets) = self
            .normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, b)| {
                let l = norm(n);
                (n.iter().map(|v| v / l).collect(), b / l)
            })
            .unzip();
        Self {
            normals,
            offsets,
            unit_norm: true,
        }
    }

    pub fn residual(&self, constraint: usize, x: &[f64]) -> f64 {
        dot(&self.normals[constraint], x) - self.offsets[constraint]
    }

    /// Fails on the first sample violating a constraint.
    pub fn check(&self, data: &Tensor) -> Result<()> {
        if data.cols() != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.dim()],
                found: vec![data.cols()],
            });
        }
        for sample in 0..data.rows() {
            let x = data.row(sample);
            for (constraint, n) in self.normals.iter().enumerate() {
                let residual = self.residual(constraint, x);
                if residual.abs() > CONSTRAINT_TOL * (norm(n) * norm(x)).max(1.0) {
                    return Err(Error::ConstraintViolated {
                        constraint,
                        sample,
                        residual,
                    });
                }
            }
        }
        Ok(())
    }

    /// Projector onto the tangent space `{v : ŵᵢᵀv = 0}`.
    pub fn projector(&self) -> Result<Projector> {
        Projector::complement_of(&self.normals, self.dim())
    }
}

/// `w̃ = w + Σ λᵢŵᵢ`, `c̃ = c − Σ λᵢbᵢ`: identical scores on the manifold.
/// `data`, when given, is checked against the constraints first.
pub fn analytic_fairwash(
    model: &LogRegModel,
    spec: &FlatManifoldSpec,
    lambda: &[f64],
    data: Option<&Tensor>,
) -> Result<LogRegModel> {
    if model.w.len() != spec.dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![spec.dim()],
            found: vec![model.w.len()],
        });
    }
    if lambda.len() != spec.normals().len() {
        return Err(Error::LengthMismatch {
            shape: vec![spec.normals().len()],
            len: lambda.len(),
        });
    }
    if let Some(data) = data {
        spec.check(data)?;
    }
    let mut w = model.w.clone();
    let mut c = model.c;
    for ((n, b), l) in spec.normals().iter().zip(spec.offsets()).zip(lambda) {
        for (wi, ni) in w.iter_mut().zip(n) {
            *wi += l * ni;
        }
        c -= l * b;
    }
    LogRegModel::new(w, c)
}

/// Component of `h` along each normal, `ŵᵢᵀh`: the quantities `solve_lambda`
/// sets to their target values.
pub fn normal_components(spec: &FlatManifoldSpec, h: &[f64]) -> Vec<f64> {
    spec.normals().iter().map(|n| dot(n, h)).collect()
}

/// Coefficients giving the attacked model's explanation the normal
/// components `target[i]`.
///
/// Gradient: `λᵢ = tᵢ − wᵀŵᵢ` (unit normals). x⊙Grad:
/// `λᵢ = (tᵢ − (x⊙w)ᵀŵᵢ) / ((x⊙ŵᵢ)ᵀŵᵢ)`. Both are exact for a single normal
/// or mutually orthogonal normals (with disjoint support for x⊙Grad).
pub fn solve_lambda(
    method: Method,
    w: &[f64],
    x: Option<&[f64]>,
    spec: &FlatManifoldSpec,
    target: &[f64],
) -> Result<Vec<f64>> {
    if target.len() != spec.normals().len() || w.len() != spec.dim() {
        return Err(Error::LengthMismatch {
            shape: vec![spec.normals().len(), spec.dim()],
            len: target.len(),
        });
    }
    match method {
        Method::Gradient => {
            if !spec.unit_norm() {
                return Err(Error::InvalidArgument("the gradient formula needs unit normals".into()));
            }
            Ok(spec
                .normals()
                .iter()
                .zip(target)
                .map(|(n, t)| t - dot(w, n))
                .collect())
        }
        Method::Xgrad => {
            let x = x.ok_or_else(|| Error::InvalidArgument("x⊙Grad needs the input point".into()))?;
            if x.len() != spec.dim() {
                return Err(Error::ShapeMismatch {
                    expected: vec![spec.dim()],
                    found: vec![x.len()],
                });
            }
            let xw: Vec<f64> = x.iter().zip(w).map(|(a, b)| a * b).collect();
            spec.normals()
                .iter()
                .zip(target)
                .enumerate()
                .map(|(i, (n, t))| {
                    let denom: f64 = x.iter().zip(n).map(|(a, b)| a * b * b).sum();
                    if denom == 0.0 {
                        return Err(Error::ZeroDenominator(format!(
                            "(x⊙ŵ)ᵀŵ for normal {i}: x vanishes on its support"
                        )));
                    }
                    Ok((t - dot(&xw, n)) / denom)
                })
                .collect()
        }
        other => Err(Error::InvalidArgument(format!(
            "no closed-form coefficients for {}",
            other.name()
        ))),
    }
}

/// Explanation the fine-tuning attack differentiates through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surrogate {
    Gradient,
    Xgrad,
}

/// How the surrogate map is compared to the target inside the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapComparison {
    /// `|h|` against the target (image convention).
    Abs,
    /// `h` against the target, signs kept.
    Signed,
}

/// Scale matching between explanations and a target.
///
/// Targets are usually normalized (`Σ|hᵗ| = 1`) while raw explanations are
/// not; normalizing inside the loss would make it invariant to the overall
/// gradient scale, so instead the target or the explanation is rescaled by a
/// constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum TargetScale {
    /// Target multiplied by the mean `Σ|h_g(x)|` of the original model over
    /// the training set.
    MeanMass,
    /// Explanation multiplied by the given factor, target used as is.
    Explanation(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Weight of the explanation term.
    pub gamma: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    /// Hard epoch cap.
    pub max_epochs: usize,
    /// Relative improvement of the epoch-mean loss below which an epoch
    /// counts as stalled.
    pub tolerance: f64,
    /// Consecutive stalled epochs before stopping.
    pub patience: usize,
    pub surrogate: Surrogate,
    pub comparison: MapComparison,
    pub scale: TargetScale,
    /// Accuracy drop (fraction) on the training set above which a warning
    /// record is emitted.
    pub accuracy_guard: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            gamma: 4.0,
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 1,
            max_epochs: 24,
            tolerance: 1e-3,
            patience: 3,
            surrogate: Surrogate::Gradient,
            comparison: MapComparison::Abs,
            scale: TargetScale::MeanMass,
            accuracy_guard: 0.02,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument("gamma must be non-negative".into()));
        }
        if let TargetScale::Explanation(s) = self.scale {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidArgument("explanation scale must be positive".into()));
            }
        }
        if !(self.tolerance >= 0.0) || !(self.accuracy_guard >= 0.0) {
            return Err(Error::InvalidArgument("tolerance and accuracy_guard must be non-negative".into()));
        }
        self.optimizer().validate()
    }

    fn optimizer(&self) -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            batch_size: self.batch_size,
            epochs: self.max_epochs,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

/// Target explanation: one map for every sample, or one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackTarget {
    Shared(Vec<f64>),
    PerSample(Tensor),
}

impl AttackTarget {
    fn check(&self, n: usize, dim: usize) -> Result<()> {
        let ok = match self {
            AttackTarget::Shared(t) => t.len() == dim,
            AttackTarget::PerSample(t) => t.rows() == n && t.cols() == dim,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: vec![n, dim],
                found: match self {
                    AttackTarget::Shared(t) => vec![t.len()],
                    AttackTarget::PerSample(t) => t.shape().to_vec(),
                },
            })
        }
    }

    fn rows(&self, idx: &[usize], scale: f64) -> Tensor {
        let dim = match self {
            AttackTarget::Shared(t) => t.len(),
            AttackTarget::PerSample(t) => t.cols(),
        };
        let mut data = Vec::with_capacity(idx.len() * dim);
        for &i in idx {
            let row = match self {
                AttackTarget::Shared(t) => t.as_slice(),
                AttackTarget::PerSample(t) => t.row(i),
            };
            data.extend(row.iter().map(|v| v * scale));
        }
        Tensor::from_parts(vec![idx.len(), dim], data)
    }
}

/// One line of the attack log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum AttackRecord {
    Start {
        samples: usize,
        target_scale: f64,
        initial_loss: f64,
        accuracy: f64,
    },
    Epoch {
        epoch: usize,
        output_loss: f64,
        explanation_loss: f64,
        loss: f64,
        accuracy: f64,
    },
    Warning {
        message: String,
    },
    Done {
        epochs: usize,
        steps: usize,
        final_loss: f64,
        reverted: bool,
    },
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub model: MlpModel,
    pub records: Vec<AttackRecord>,
    /// Full training-set loss before and after.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// The optimized model was worse than the original and was discarded.
    pub reverted: bool,
}

impl AttackOutcome {
    pub fn write_log(&self, out: &mut impl Write) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut *out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Per-row projectors applied to the surrogate map inside the loss.
#[derive(Clone)]
pub struct ProjectorSource {
    pub projectors: Arc<Vec<Projector>>,
}

struct Problem<'a> {
    data: &'a Tensor,
    classes: Vec<usize>,
    reference: Tensor,
    target: &'a AttackTarget,
    target_scale: f64,
    explanation_scale: f64,
    projectors: Option<&'a ProjectorSource>,
    config: &'a AttackConfig,
}

impl Problem<'_> {
    /// Records the loss for the samples `idx`; returns (loss, output term,
    /// explanation term, parameter vars).
    fn record(
        &self,
        model: &MlpModel,
        tape: &mut Tape,
        idx: &[usize],
    ) -> Result<(crate::autodiff::Var, f64, f64, Vec<crate::autodiff::Var>)> {
        let xb = self.data.gather_rows(idx);
        // A leaf, not a constant: the input gradient is only recorded for
        // differentiable inputs.
        let x = tape.leaf(xb);
        let (out, params) = model.record_with_params(tape, x)?;
        let ks: Vec<usize> = idx.iter().map(|&i| self.classes[i]).collect();
        let mut h = grad_input(tape, out, x, &OutputSelect::PerRow(ks))?;
        if self.config.surrogate == Surrogate::Xgrad {
            h = tape.mul(h, x)?;
        }
        if let Some(src) = self.projectors {
            let map = RowProjectors::new(src.projectors.clone(), idx.to_vec())?;
            h = tape.row_map(h, Arc::new(map))?;
        }
        if self.config.comparison == MapComparison::Abs {
            h = tape.abs(h);
        }
        if self.explanation_scale != 1.0 {
            h = tape.scale(h, self.explanation_scale);
        }
        let target = tape.constant(self.target.rows(idx, self.target_scale));
        let reference = tape.constant(self.reference.gather_rows(idx));
        let l1 = tape.squared_distance(out, reference)?;
        let l2 = tape.squared_distance(h, target)?;
        let weighted = tape.scale(l2, self.config.gamma);
        let loss = tape.add(l1, weighted)?;
        let (v1, v2) = (tape.value(l1).item(), tape.value(l2).item());
        Ok((loss, v1, v2, params.0))
    }

    /// Full-pass loss without updates.
    fn evaluate(&self, model: &MlpModel) -> Result<(f64, f64)> {
        let mut l1 = 0.0;
        let mut l2 = 0.0;
        let all: Vec<usize> = (0..self.data.rows()).collect();
        for chunk in all.chunks(500) {
            let mut tape = Tape::new();
            let (_, a, b, _) = self.record(model, &mut tape, chunk)?;
            l1 += a;
            l2 += b;
        }
        Ok((l1, l2))
    }
}

/// Mean `Σ|h_g(x)|` of the surrogate explanation over the data.
pub fn mean_explanation_mass(model: &MlpModel, data: &Tensor, surrogate: Surrogate) -> Result<f64> {
    let classes = crate::explain::predicted(model, data)?;
    let maps = match surrogate {
        Surrogate::Gradient => crate::explain::gradient_batch(model, data, &classes)?,
        Surrogate::Xgrad => crate::explain::xgrad_batch(model, data, &classes)?,
    };
    Ok(maps.data().iter().map(|v| v.abs()).sum::<f64>() / data.rows() as f64)
}

/// Fine-tunes `g` to minimize `Σ‖g̃(xᵢ) − g(xᵢ)‖² + γ Σ‖h_g̃(xᵢ) − hᵗ‖²` over
/// the logits, with `h` the surrogate explanation of the class `g` predicts.
pub fn finetune_attack(
    model: &MlpModel,
    data: &LabeledDataset,
    target: &AttackTarget,
    config: &AttackConfig,
) -> Result<AttackOutcome> {
    run_attack(model, data, target, config, None)
}

/// As [`finetune_attack`] with the surrogate map replaced by `P·h`, using the
/// projector of each training sample.
pub fn finetune_attack_tsp(
    model: &MlpModel,
    data: &LabeledDataset,
    target: &AttackTarget,
    config: &AttackConfig,
    projectors: &ProjectorSource,
) -> Result<AttackOutcome> {
    if projectors.projectors.len() != data.len() {
        return Err(Error::LengthMismatch {
            shape: vec![data.len()],
            len: projectors.projectors.len(),
        });
    }
    if projectors.projectors.iter().any(|p| p.dim() != data.dim()) {
        return Err(Error::ShapeMismatch {
            expected: vec![data.dim()],
            found: vec![projectors.projectors[0].dim()],
        });
    }
    run_attack(model, data, target, config, Some(projectors))
}

fn run_attack(
    model: &MlpModel,
    data: &LabeledDataset,
    target: &AttackTarget,
    config: &AttackConfig,
    projectors: Option<&ProjectorSource>,
) -> Result<AttackOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.dim() != model.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![model.input_dim()],
            found: vec![data.dim()],
        });
    }
    target.check(data.len(), data.dim())?;
    let x = data.inputs();
    let reference = model.predict(x)?;
    let classes = crate::explain::predicted(model, x)?;
    let (target_scale, explanation_scale) = match config.scale {
        TargetScale::MeanMass => (mean_explanation_mass(model, x, config.surrogate)?, 1.0),
        TargetScale::Explanation(s) => (1.0, s),
    };
    let problem = Problem {
        data: x,
        classes,
        reference,
        target,
        target_scale,
        explanation_scale,
        projectors,
        config,
    };

    let base_accuracy = accuracy(model, data)?;
    let (a, b) = problem.evaluate(model)?;
    let initial_loss = a + config.gamma * b;
    let mut records = vec![AttackRecord::Start {
        samples: data.len(),
        target_scale,
        initial_loss,
        accuracy: base_accuracy,
    }];

    let mut current = model.clone();
    let mut opt = Optimizer::for_model(&config.optimizer(), &current);
    let mut rng = RngState::new(config.seed);
    let mut steps = 0;
    let mut previous: Option<f64> = None;
    let mut stalled = 0;
    let mut epochs = 0;
    for epoch in 0..config.max_epochs {
        let order = rng.permutation(data.len());
        let (mut t1, mut t2) = (0.0, 0.0);
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let mut tape = Tape::new();
            let (loss, l1, l2, params) = problem.record(&current, &mut tape, batch)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, step, loss: value });
            }
            t1 += l1;
            t2 += l2;
            let grads = tape.grad(loss, &params)?;
            let grads: Vec<&Tensor> = grads.iter().map(|&g| tape.value(g)).collect();
            opt.step(&mut current.params_mut(), &grads);
            steps += 1;
        }
        epochs += 1;
        let n = data.len() as f64;
        let mean = (t1 + config.gamma * t2) / n;
        records.push(AttackRecord::Epoch {
            epoch,
            output_loss: t1 / n,
            explanation_loss: t2 / n,
            loss: mean,
            accuracy: accuracy(&current, data)?,
        });
        if let Some(p) = previous {
            if p - mean < config.tolerance * p.abs() {
                stalled += 1;
            } else {
                stalled = 0;
            }
        }
        previous = Some(mean);
        if stalled >= config.patience {
            break;
        }
    }

    let (a, b) = problem.evaluate(&current)?;
    let mut final_loss = a + config.gamma * b;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            epoch: epochs,
            step: 0,
            loss: final_loss,
        });
    }
    let reverted = final_loss > initial_loss;
    if reverted {
        records.push(AttackRecord::Warning {
            message: format!("final loss {final_loss:e} exceeds initial loss {initial_loss:e}; keeping the original model"),
        });
        current = model.clone();
        final_loss = initial_loss;
    }
    let final_accuracy = accuracy(&current, data)?;
    if base_accuracy - final_accuracy > config.accuracy_guard {
        records.push(AttackRecord::Warning {
            message: format!(
                "training accuracy dropped from {base_accuracy:.4} to {final_accuracy:.4}, beyond the guard of {}",
                config.accuracy_guard
            ),
        });
    }
    records.push(AttackRecord::Done {
        epochs,
        steps,
        final_loss,
        reverted,
    });
    Ok(AttackOutcome {
        model: current,
        records,
        initial_loss,
        final_loss,
        reverted,
    })
}
