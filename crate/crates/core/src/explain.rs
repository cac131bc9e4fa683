//! Gradient, x⊙Grad, Integrated Gradients and LRP explanation maps.
//!
//! All maps are computed for a chosen output `k` of the pre-softmax scores.
//! Batch functions take an `N x D` input and one class per row and return an
//! `N x D` tensor of raw relevances.

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_input, OutputSelect, Tape};
use crate::error::{Error, Result};
use crate::models::{argmax, Activation, Classifier, MlpModel};
use crate::tensor::{matmul_flags, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gradient,
    Xgrad,
    Intgrad,
    LrpEps,
    LrpZplus,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Gradient,
        Method::Xgrad,
        Method::Intgrad,
        Method::LrpEps,
        Method::LrpZplus,
    ];

    pub fn tag(self) -> u8 {
        match self {
            Method::Gradient => 0,
            Method::Xgrad => 1,
            Method::Intgrad => 2,
            Method::LrpEps => 3,
            Method::LrpZplus => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.iter().copied().find(|m| m.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Gradient => "gradient",
            Method::Xgrad => "xgrad",
            Method::Intgrad => "intgrad",
            Method::LrpEps => "lrp_eps",
            Method::LrpZplus => "lrp_zplus",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// How a map has been post-processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapNormalization {
    Raw,
    /// `|h| / Σ|h|`, the image convention.
    AbsSumOne,
    /// `h / Σ|h|`, signs kept (tabular data).
    SignedAbsSumOne,
}

impl MapNormalization {
    pub fn tag(self) -> u8 {
        match self {
            MapNormalization::Raw => 0,
            MapNormalization::AbsSumOne => 1,
            MapNormalization::SignedAbsSumOne => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(MapNormalization::Raw),
            1 => Some(MapNormalization::AbsSumOne),
            2 => Some(MapNormalization::SignedAbsSumOne),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationMap {
    values: Vec<f64>,
    shape: Vec<usize>,
    method: Method,
    normalization: MapNormalization,
    class: usize,
    projected: bool,
}

impl ExplanationMap {
    pub fn new(values: Vec<f64>, shape: Vec<usize>, method: Method, class: usize) -> Result<Self> {
        if shape.is_empty() || shape.iter().product::<usize>() != values.len() || values.is_empty() {
            return Err(Error::LengthMismatch {
                shape,
                len: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            values,
            shape,
            method,
            normalization: MapNormalization::Raw,
            class,
            projected: false,
        })
    }

    pub(crate) fn with_normalization(mut self, n: MapNormalization) -> Self {
        self.normalization = n;
        self
    }

    pub(crate) fn into_projected(mut self) -> Self {
        self.projected = true;
        self
    }

    /// Same metadata, new values (e.g. after projection).
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            values,
            ..self.clone()
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn normalization(&self) -> MapNormalization {
        self.normalization
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn projected(&self) -> bool {
        self.projected
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.values.len() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                found: self.shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }
}

/// Which normalization convention [`normalize_map`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// Absolute values summing to one.
    Image,
    /// Signed values whose absolute values sum to one.
    Signed,
}

pub fn normalize_values(values: &[f64], convention: Convention) -> Result<Vec<f64>> {
    let total: f64 = values.iter().map(|v| v.abs()).sum();
    if total == 0.0 {
        return Err(Error::ZeroMap);
    }
    Ok(match convention {
        Convention::Image => values.iter().map(|v| v.abs() / total).collect(),
        Convention::Signed => values.iter().map(|v| v / total).collect(),
    })
}

pub fn normalize_map(map: &ExplanationMap, convention: Convention) -> Result<ExplanationMap> {
    let values = normalize_values(&map.values, convention)?;
    let tag = match convention {
        Convention::Image => MapNormalization::AbsSumOne,
        Convention::Signed => MapNormalization::SignedAbsSumOne,
    };
    Ok(map.with_values(values).with_normalization(tag))
}

/// Row-wise [`normalize_values`] on a batch of maps.
pub fn normalize_rows(maps: &Tensor, convention: Convention) -> Result<Tensor> {
    let mut out = Vec::with_capacity(maps.len());
    for i in 0..maps.rows() {
        out.extend(normalize_values(maps.row(i), convention)?);
    }
    Tensor::new(maps.shape().to_vec(), out)
}

fn check_classes(model: &impl Classifier, x: &Tensor, classes: &[usize]) -> Result<()> {
    if x.cols() != model.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![x.rows(), model.input_dim()],
            found: x.shape().to_vec(),
        });
    }
    if classes.len() != x.rows() {
        return Err(Error::LengthMismatch {
            shape: vec![x.rows()],
            len: classes.len(),
        });
    }
    if let Some(&k) = classes.iter().find(|&&k| k >= model.output_dim()) {
        return Err(Error::ClassOutOfRange {
            index: k,
            classes: model.output_dim(),
        });
    }
    Ok(())
}

/// Predicted class per row (lowest index on ties).
pub fn predicted(model: &impl Classifier, x: &Tensor) -> Result<Vec<usize>> {
    let out = model.predict(x)?;
    Ok((0..out.rows()).map(|i| argmax(out.row(i))).collect())
}

/// `∇ₓ g_k(x)` for every row.
pub fn gradient_batch(model: &impl Classifier, x: &Tensor, classes: &[usize]) -> Result<Tensor> {
    check_classes(model, x, classes)?;
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = model.record(&mut tape, xv)?;
    let g = grad_input(&mut tape, out, xv, &OutputSelect::PerRow(classes.to_vec()))?;
    Ok(tape.value(g).clone())
}

pub fn xgrad_batch(model: &impl Classifier, x: &Tensor, classes: &[usize]) -> Result<Tensor> {
    gradient_batch(model, x, classes)?.zip_map(x, |g, xi| g * xi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntGradConfig {
    /// `None` is the all-zero baseline.
    pub baseline: Option<Vec<f64>>,
    pub steps: usize,
}

impl Default for IntGradConfig {
    fn default() -> Self {
        Self {
            baseline: None,
            steps: 128,
        }
    }
}

impl IntGradConfig {
    fn baseline_for(&self, dim: usize) -> Result<Vec<f64>> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("integrated gradients needs at least one step".into()));
        }
        match &self.baseline {
            None => Ok(vec![0.0; dim]),
            Some(b) if b.len() == dim => Ok(b.clone()),
            Some(b) => Err(Error::ShapeMismatch {
                expected: vec![dim],
                found: vec![b.len()],
            }),
        }
    }
}

/// Midpoint-rule average of `∇g_k` along the straight path from the baseline
/// to each row: `(1/N) Σ_j ∇g(x̄ + ((j − ½)/N)(x − x̄))`.
pub fn intgrad_mean_gradient(
    model: &impl Classifier,
    x: &Tensor,
    classes: &[usize],
    config: &IntGradConfig,
) -> Result<Tensor> {
    check_classes(model, x, classes)?;
    let base = config.baseline_for(x.cols())?;
    let n = config.steps;
    let mut acc = Tensor::zeros(&[x.rows(), x.cols()]);
    let d = x.cols();
    for j in 1..=n {
        let t = (j as f64 - 0.5) / n as f64;
        let mut point = x.clone();
        for row in point.data_mut().chunks_mut(d) {
            for (v, b) in row.iter_mut().zip(&base) {
                *v = b + t * (*v - b);
            }
        }
        let g = gradient_batch(model, &point, classes)?;
        for (a, gi) in acc.data_mut().iter_mut().zip(g.data()) {
            *a += gi;
        }
    }
    Ok(acc.map(|v| v / n as f64))
}

/// `(x − x̄) ⊙` mean path gradient.
pub fn intgrad_batch(model: &impl Classifier, x: &Tensor, classes: &[usize], config: &IntGradConfig) -> Result<Tensor> {
    let mean = intgrad_mean_gradient(model, x, classes, config)?;
    let base = config.baseline_for(x.cols())?;
    let d = x.cols();
    let mut out = mean;
    for (r, row) in out.data_mut().chunks_mut(d).enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v *= x.get(r, c) - base[c];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrpRule {
    /// All weights, stabilized denominator.
    Epsilon,
    /// Positive weights only.
    Zplus,
    /// Bounded-input rule; first layer only.
    Zb,
}

/// Relevance placed on the explained output before propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrpSeed {
    /// `R_k = 1`, all other outputs 0.
    Indicator,
    /// `R_k = g_k(x)`; with the ε-rule this makes LRP coincide with x⊙Grad on
    /// bias-free relu networks.
    Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrpConfig {
    pub epsilon: f64,
    /// One rule per layer, input layer first.
    pub rules: Vec<LrpRule>,
    /// Per-feature `(low, high)` bounds, required by the zB rule.
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
    pub seed: LrpSeed,
}

impl LrpConfig {
    pub const DEFAULT_EPSILON: f64 = 1e-6;

    pub fn epsilon(layers: usize, epsilon: f64) -> Self {
        Self {
            epsilon,
            rules: vec![LrpRule::Epsilon; layers],
            bounds: None,
            seed: LrpSeed::Indicator,
        }
    }

    pub fn zplus(layers: usize, epsilon: f64) -> Self {
        Self {
            epsilon,
            rules: vec![LrpRule::Zplus; layers],
            bounds: None,
            seed: LrpSeed::Indicator,
        }
    }

    /// z⁺ everywhere except zB on the input layer.
    pub fn zplus_zb(layers: usize, epsilon: f64, low: Vec<f64>, high: Vec<f64>) -> Self {
        let mut rules = vec![LrpRule::Zplus; layers];
        rules[0] = LrpRule::Zb;
        Self {
            epsilon,
            rules,
            bounds: Some((low, high)),
            seed: LrpSeed::Indicator,
        }
    }

    pub fn with_seed(mut self, seed: LrpSeed) -> Self {
        self.seed = seed;
        self
    }

    pub fn method(&self) -> Method {
        if self.rules.iter().all(|&r| r == LrpRule::Epsilon) {
            Method::LrpEps
        } else {
            Method::LrpZplus
        }
    }

    fn validate(&self, model: &MlpModel) -> Result<()> {
        if self.rules.len() != model.layers().len() {
            return Err(Error::InvalidArgument(format!(
                "{} LRP rules for {} layers",
                self.rules.len(),
                model.layers().len()
            )));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument("epsilon must be non-negative".into()));
        }
        if self.rules.iter().skip(1).any(|&r| r == LrpRule::Zb) {
            return Err(Error::InvalidArgument("the zB rule applies to the first layer only".into()));
        }
        if self.rules[0] == LrpRule::Zb {
            let (lo, hi) = self
                .bounds
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("zB rule needs input bounds".into()))?;
            let d = model.input_dim();
            if lo.len() != d || hi.len() != d {
                return Err(Error::ShapeMismatch {
                    expected: vec![d],
                    found: vec![lo.len(), hi.len()],
                });
            }
            if lo.iter().zip(hi).any(|(l, h)| l > h) {
                return Err(Error::InvalidArgument("zB bounds need low <= high".into()));
            }
        }
        for l in model.layers() {
            if let Activation::Softplus { .. } = l.activation {
                return Err(Error::UnsupportedActivation("softplus"));
            }
        }
        Ok(())
    }
}

/// Divides relevance by the (stabilized) denominators: `R / (z + ε·sign z)`
/// with `sign(0) = +1`.
fn stabilized_ratio(rel: &Tensor, z: &Tensor, eps: f64, rule: &str) -> Result<Tensor> {
    let mut out = Vec::with_capacity(rel.len());
    for (&r, &zj) in rel.data().iter().zip(z.data()) {
        let denom = zj + if zj >= 0.0 { eps } else { -eps };
        if denom == 0.0 {
            if r != 0.0 {
                return Err(Error::ZeroDenominator(format!("{rule} rule")));
            }
            out.push(0.0);
        } else {
            out.push(r / denom);
        }
    }
    Ok(Tensor::from_parts(rel.shape().to_vec(), out))
}

/// Layer-wise relevance propagation. Denominators are the weighted inputs
/// without bias.
pub fn lrp_batch(model: &MlpModel, x: &Tensor, classes: &[usize], config: &LrpConfig) -> Result<Tensor> {
    check_classes(model, x, classes)?;
    config.validate(model)?;
    let acts = model.activations(x)?;
    let out = acts.last().expect("non-empty");
    let (n, c) = (out.rows(), out.cols());
    let mut rel = Tensor::zeros(&[n, c]);
    for (r, &k) in classes.iter().enumerate() {
        let seed = match config.seed {
            LrpSeed::Indicator => 1.0,
            LrpSeed::Score => out.get(r, k),
        };
        rel.set(r, k, seed);
    }
    for (l, layer) in model.layers().iter().enumerate().rev() {
        let a = &acts[l];
        rel = match config.rules[l] {
            LrpRule::Epsilon | LrpRule::Zplus => {
                let w = if config.rules[l] == LrpRule::Zplus {
                    layer.weight.map(|v| v.max(0.0))
                } else {
                    layer.weight.clone()
                };
                let z = matmul_flags(a, &w, false, true)?;
                let s = stabilized_ratio(&rel, &z, config.epsilon, "relevance")?;
                let back = s.matmul(&w)?;
                a.zip_map(&back, |ai, ci| ai * ci)?
            }
            LrpRule::Zb => {
                let (lo, hi) = config.bounds.as_ref().expect("validated");
                let d = a.cols();
                let wp = layer.weight.map(|v| v.max(0.0));
                let wn = layer.weight.map(|v| v.min(0.0));
                let lo_t = Tensor::from_parts(vec![1, d], lo.clone());
                let hi_t = Tensor::from_parts(vec![1, d], hi.clone());
                let z = matmul_flags(a, &layer.weight, false, true)?;
                let zl = matmul_flags(&lo_t, &wp, false, true)?;
                let zh = matmul_flags(&hi_t, &wn, false, true)?;
                let m = z.cols();
                let mut z = z;
                for row in z.data_mut().chunks_mut(m) {
                    for ((v, l), h) in row.iter_mut().zip(zl.data()).zip(zh.data()) {
                        *v -= l + h;
                    }
                }
                let s = stabilized_ratio(&rel, &z, config.epsilon, "zB")?;
                let cw = s.matmul(&layer.weight)?;
                let cp = s.matmul(&wp)?;
                let cn = s.matmul(&wn)?;
                let mut out = vec![0.0; a.len()];
                for r in 0..a.rows() {
                    for i in 0..d {
                        out[r * d + i] = a.get(r, i) * cw.get(r, i) - lo[i] * cp.get(r, i) - hi[i] * cn.get(r, i);
                    }
                }
                Tensor::from_parts(vec![a.rows(), d], out)
            }
        };
    }
    Ok(rel)
}

/// Settings for [`explain_batch`] that select and parameterize a method.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodConfig {
    Gradient,
    Xgrad,
    Intgrad(IntGradConfig),
    Lrp(LrpConfig),
}

impl MethodConfig {
    pub fn method(&self) -> Method {
        match self {
            MethodConfig::Gradient => Method::Gradient,
            MethodConfig::Xgrad => Method::Xgrad,
            MethodConfig::Intgrad(_) => Method::Intgrad,
            MethodConfig::Lrp(c) => c.method(),
        }
    }
}

pub fn explain_batch(model: &MlpModel, x: &Tensor, classes: &[usize], config: &MethodConfig) -> Result<Tensor> {
    match config {
        MethodConfig::Gradient => gradient_batch(model, x, classes),
        MethodConfig::Xgrad => xgrad_batch(model, x, classes),
        MethodConfig::Intgrad(c) => intgrad_batch(model, x, classes, c),
        MethodConfig::Lrp(c) => lrp_batch(model, x, classes, c),
    }
}

fn single(values: Tensor, method: Method, k: usize) -> Result<ExplanationMap> {
    let d = values.cols();
    ExplanationMap::new(values.into_data(), vec![d], method, k)
}

fn row(x: &[f64]) -> Result<Tensor> {
    Tensor::row_vector(x.to_vec())
}

pub fn explain_gradient(model: &impl Classifier, x: &[f64], k: usize) -> Result<ExplanationMap> {
    single(gradient_batch(model, &row(x)?, &[k])?, Method::Gradient, k)
}

pub fn explain_xgrad(model: &impl Classifier, x: &[f64], k: usize) -> Result<ExplanationMap> {
    single(xgrad_batch(model, &row(x)?, &[k])?, Method::Xgrad, k)
}

pub fn explain_intgrad(model: &impl Classifier, x: &[f64], k: usize, config: &IntGradConfig) -> Result<ExplanationMap> {
    single(intgrad_batch(model, &row(x)?, &[k], config)?, Method::Intgrad, k)
}

pub fn explain_lrp(model: &MlpModel, x: &[f64], k: usize, config: &LrpConfig) -> Result<ExplanationMap> {
    single(lrp_batch(model, &row(x)?, &[k], config)?, config.method(), k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DenseLayer, LogRegModel};
    use crate::rng::RngState;

    fn bias_free(dims: &[usize], seed: u64) -> MlpModel {
        let mut m = MlpModel::init(dims, Activation::Relu, seed).unwrap();
        for l in m.layers_mut() {
            l.bias.data_mut().iter_mut().for_each(|b| *b = 0.0);
        }
        m
    }

    fn random_row(rng: &mut RngState, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.normal(0.0, 1.0)).collect()
    }

    #[test]
    fn logistic_regression_gradient_is_w() {
        let m = LogRegModel::new(vec![0.9, 0.1], 0.0).unwrap();
        let h = explain_gradient(&m, &[3.0, -2.0], 0).unwrap();
        assert_eq!(h.values(), &[0.9, 0.1]);
        let xg = explain_xgrad(&m, &[1.0, 0.5], 0).unwrap();
        assert_eq!(xg.values(), &[0.9, 0.05]);
        let zero = explain_xgrad(&m, &[0.0, 0.0], 0).unwrap();
        assert_eq!(zero.values(), &[0.0, 0.0]);
        assert!(matches!(explain_gradient(&m, &[1.0, 1.0], 1), Err(Error::ClassOutOfRange { .. })));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = MlpModel::init(&[5, 8, 3], Activation::Relu, 0).unwrap();
        let mut rng = RngState::new(4);
        for _ in 0..20 {
            let x = random_row(&mut rng, 5);
            let h = explain_gradient(&m, &x, 2).unwrap();
            let f = |v: &[f64]| m.predict(&Tensor::row_vector(v.to_vec()).unwrap()).unwrap().get(0, 2);
            for i in 0..5 {
                let mut xp = x.clone();
                xp[i] += 1e-4;
                let mut xm = x.clone();
                xm[i] -= 1e-4;
                let fd = (f(&xp) - f(&xm)) / 2e-4;
                let a = h.values()[i];
                assert!((fd - a).abs() <= 1e-5 * a.abs().max(fd.abs()).max(1.0));
            }
        }
    }

    #[test]
    fn intgrad_on_linear_model_is_exact() {
        let m = LogRegModel::new(vec![0.5, -2.0, 1.5], 0.3).unwrap();
        let x = [1.0, 2.0, -1.0];
        let base = vec![0.5, -1.0, 0.0];
        for steps in [1, 7, 128] {
            let cfg = IntGradConfig {
                baseline: Some(base.clone()),
                steps,
            };
            let h = explain_intgrad(&m, &x, 0, &cfg).unwrap();
            for i in 0..3 {
                assert!((h.values()[i] - (x[i] - base[i]) * m.w[i]).abs() < 1e-15);
            }
        }
        // zero baseline coincides with x⊙Grad
        let ig = explain_intgrad(&m, &x, 0, &IntGradConfig::default()).unwrap();
        let xg = explain_xgrad(&m, &x, 0).unwrap();
        assert_eq!(ig.values(), xg.values());
    }

    #[test]
    fn intgrad_single_step_uses_midpoint() {
        let m = MlpModel::init(&[4, 6, 2], Activation::Relu, 3).unwrap();
        let x = [0.5, -1.0, 2.0, 0.1];
        let base = [0.1, 0.2, -0.3, 0.0];
        let cfg = IntGradConfig {
            baseline: Some(base.to_vec()),
            steps: 1,
        };
        let h = explain_intgrad(&m, &x, 1, &cfg).unwrap();
        let mid: Vec<f64> = x.iter().zip(&base).map(|(a, b)| 0.5 * (a + b)).collect();
        let g = explain_gradient(&m, &mid, 1).unwrap();
        for i in 0..4 {
            assert_eq!(h.values()[i], (x[i] - base[i]) * g.values()[i]);
        }
        let bad = IntGradConfig {
            baseline: Some(vec![0.0; 3]),
            steps: 4,
        };
        assert!(explain_intgrad(&m, &x, 1, &bad).is_err());
    }

    #[test]
    fn intgrad_completeness() {
        let m = MlpModel::init(&[6, 16, 16, 3], Activation::Relu, 11).unwrap();
        let mut rng = RngState::new(12);
        let cfg = IntGradConfig {
            baseline: None,
            steps: 256,
        };
        for _ in 0..10 {
            let x = random_row(&mut rng, 6);
            let h = explain_intgrad(&m, &x, 0, &cfg).unwrap();
            let gx = m.predict(&Tensor::row_vector(x.clone()).unwrap()).unwrap().get(0, 0);
            let g0 = m.predict(&Tensor::zeros(&[1, 6])).unwrap().get(0, 0);
            let total: f64 = h.values().iter().sum();
            assert!((total - (gx - g0)).abs() <= 1e-3, "{total} vs {}", gx - g0);
        }
    }

    #[test]
    fn epsilon_lrp_equals_xgrad_on_bias_free_relu() {
        let mut rng = RngState::new(21);
        for seed in 0..20 {
            let m = bias_free(&[7, 12, 9, 4], seed);
            let x = random_row(&mut rng, 7);
            let cfg = LrpConfig::epsilon(3, 1e-9).with_seed(LrpSeed::Score);
            let r = explain_lrp(&m, &x, 1, &cfg).unwrap();
            let xg = explain_xgrad(&m, &x, 1).unwrap();
            let diff = r.values().iter().zip(xg.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-6, "diff {diff}");
            // the indicator seed differs only by the scale g_k(x)
            let ind = explain_lrp(&m, &x, 1, &LrpConfig::epsilon(3, 1e-9)).unwrap();
            let a = normalize_map(&ind, Convention::Image).unwrap();
            let b = normalize_map(&xg, Convention::Image);
            if let Ok(b) = b {
                let d = a.values().iter().zip(b.values()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                assert!(d <= 1e-6);
            }
        }
    }

    #[test]
    fn zplus_single_layer_rule() {
        let m = MlpModel::from_layers(vec![DenseLayer::new(
            Tensor::matrix(2, 3, vec![0.5, 1.0, 2.0, 0.3, 0.2, 0.1]).unwrap(),
            Tensor::zeros(&[2]),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap();
        let x = [1.0, 2.0, 0.5];
        let r = explain_lrp(&m, &x, 0, &LrpConfig::zplus(1, 1e-12)).unwrap();
        let total: f64 = [0.5, 2.0, 1.0].iter().sum();
        for (i, w) in [0.5, 1.0, 2.0].iter().enumerate() {
            assert!((r.values()[i] - x[i] * w / total).abs() < 1e-10);
        }
    }

    #[test]
    fn zplus_conserves_relevance() {
        let mut rng = RngState::new(30);
        for seed in 0..10 {
            let mut m = bias_free(&[8, 10, 6, 3], 100 + seed);
            // make every unit receive positive input from positive activations
            for l in m.layers_mut() {
                l.weight.data_mut().iter_mut().for_each(|w| *w = w.abs() + 0.01);
            }
            let x: Vec<f64> = (0..8).map(|_| rng.uniform_range(0.1, 1.0)).collect();
            let r = explain_lrp(&m, &x, 2, &LrpConfig::zplus(3, 1e-9)).unwrap();
            let s: f64 = r.values().iter().sum();
            assert!((s - 1.0).abs() <= 1e-3);
        }
    }

    #[test]
    fn zb_rule_at_bounds() {
        // zB numerators sum to their denominators, so relevance is conserved
        // through the input layer.
        let m = MlpModel::from_layers(vec![
            DenseLayer::new(Tensor::matrix(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap(), Tensor::zeros(&[2]), Activation::Relu)
                .unwrap(),
            DenseLayer::new(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap(), Tensor::zeros(&[1]), Activation::Identity)
                .unwrap(),
        ])
        .unwrap();
        let cfg = LrpConfig::zplus_zb(2, 0.0, vec![-1.0, -1.0], vec![1.0, 1.0]);
        let r = explain_lrp(&m, &[0.5, 0.25], 0, &cfg).unwrap();
        let s: f64 = r.values().iter().sum();
        assert!((s - 1.0).abs() < 1e-12, "zB is conservative, got {s}");
        let bad = LrpConfig {
            rules: vec![LrpRule::Zplus, LrpRule::Zb],
            ..cfg.clone()
        };
        assert!(explain_lrp(&m, &[0.5, 0.25], 0, &bad).is_err());
    }

    #[test]
    fn lrp_rejects_softplus_and_zero_denominators() {
        let m = MlpModel::init(&[3, 4, 2], Activation::Softplus { beta: 10.0 }, 0).unwrap();
        assert!(matches!(
            explain_lrp(&m, &[1.0, 2.0, 3.0], 0, &LrpConfig::epsilon(2, 1e-6)),
            Err(Error::UnsupportedActivation("softplus"))
        ));
        let lin = LogRegModel::new(vec![1.0, -1.0], 0.0).unwrap().to_mlp();
        assert!(matches!(
            explain_lrp(&lin, &[1.0, 1.0], 0, &LrpConfig::epsilon(1, 0.0)),
            Err(Error::ZeroDenominator(_))
        ));
    }

    #[test]
    fn normalization_conventions() {
        let m = ExplanationMap::new(vec![2.0, -2.0], vec![2], Method::Gradient, 0).unwrap();
        assert_eq!(normalize_map(&m, Convention::Signed).unwrap().values(), &[0.5, -0.5]);
        let m = ExplanationMap::new(vec![1.0, 3.0], vec![2], Method::Gradient, 0).unwrap();
        let once = normalize_map(&m, Convention::Image).unwrap();
        assert_eq!(once.values(), &[0.25, 0.75]);
        assert_eq!(normalize_map(&once, Convention::Image).unwrap(), once);
        let z = ExplanationMap::new(vec![0.0; 3], vec![3], Method::Gradient, 0).unwrap();
        assert!(matches!(normalize_map(&z, Convention::Image), Err(Error::ZeroMap)));
    }

    #[test]
    fn scale_equivariance_of_all_methods() {
        let m = bias_free(&[5, 7, 3], 8);
        let mut scaled = m.clone();
        let lam = 3.5;
        let last = scaled.layers_mut().last_mut().unwrap();
        last.weight.data_mut().iter_mut().for_each(|w| *w *= lam);
        let x = [0.3, -0.7, 1.2, 0.05, -0.4];
        // ε = 0 so the stabilizer does not perturb the exact scaling.
        let lrp = MethodConfig::Lrp(LrpConfig::epsilon(2, 0.0).with_seed(LrpSeed::Score));
        for cfg in [MethodConfig::Gradient, MethodConfig::Xgrad, MethodConfig::Intgrad(IntGradConfig::default()), lrp] {
            let xt = Tensor::row_vector(x.to_vec()).unwrap();
            let a = explain_batch(&m, &xt, &[1], &cfg).unwrap();
            let b = explain_batch(&scaled, &xt, &[1], &cfg).unwrap();
            for (p, q) in a.data().iter().zip(b.data()) {
                assert!((lam * p - q).abs() <= 1e-9 * q.abs().max(1.0), "{:?}", cfg.method());
            }
        }
    }
}
