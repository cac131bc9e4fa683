//! Similarity of explanation maps, agreement of model outputs, and pixel
//! flipping.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{ExplanationMap, MapNormalization};
use crate::models::{argmax, softmax_probs, Classifier};
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1-d Gaussian; the 2-d window is its outer product.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.len()],
            found: vec![b.len()],
        });
    }
    Ok(())
}

/// Valid-window Gaussian filtering of a `rows x cols` image.
fn filter(img: &[f64], rows: usize, cols: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (or, oc) = (rows - SSIM_WINDOW + 1, cols - SSIM_WINDOW + 1);
    let mut horiz = vec![0.0; rows * oc];
    for r in 0..rows {
        let row = &img[r * cols..(r + 1) * cols];
        for c in 0..oc {
            horiz[r * oc + c] = w.iter().zip(&row[c..c + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for c in 0..oc {
            out[r * oc + c] = (0..SSIM_WINDOW).map(|i| w[i] * horiz[(r + i) * oc + c]).sum();
        }
    }
    out
}

/// Mean structural similarity over all 11x11 windows fully inside the image,
/// with Gaussian weights (σ = 1.5) and the dynamic range taken jointly over
/// both maps. Two constant, equal-range maps (L = 0) count as identical.
pub fn ssim(a: &[f64], b: &[f64], rows: usize, cols: usize) -> Result<f64> {
    check_pair(a, b)?;
    if rows * cols != a.len() {
        return Err(Error::LengthMismatch {
            shape: vec![rows, cols],
            len: a.len(),
        });
    }
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "maps must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {rows}x{cols}"
        )));
    }
    let (lo, hi) = a
        .iter()
        .chain(b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    if range == 0.0 {
        return Ok(1.0);
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let w = gaussian_window();
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p * q).collect() };
    let mu_a = filter(a, rows, cols, &w);
    let mu_b = filter(b, rows, cols, &w);
    let e_aa = filter(&prod(a, a), rows, cols, &w);
    let e_bb = filter(&prod(b, b), rows, cols, &w);
    let e_ab = filter(&prod(a, b), rows, cols, &w);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Pearson correlation of the flattened maps.
pub fn pcc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok(sab / (saa.sqrt() * sbb.sqrt()))
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

pub const KL_FLOOR: f64 = 1e-12;

/// `Σ pᵢ log(pᵢ/qᵢ)` with both probabilities floored at 1e-12; terms with
/// `pᵢ = 0` vanish.
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi.max(KL_FLOOR).ln() - qi.max(KL_FLOOR).ln()))
        .sum())
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
}

impl Summary {
    /// Non-finite values are dropped.
    pub fn of(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        let mean = if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        };
        Self {
            count: v.len(),
            mean,
            p25: percentile(&v, 25.0),
            median: percentile(&v, 50.0),
            p75: percentile(&v, 75.0),
        }
    }
}

/// Per-sample comparison of two maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRecord {
    pub sample: usize,
    pub method: String,
    pub ssim: f64,
    /// `None` when either map is constant.
    pub pcc: Option<f64>,
    pub mse: f64,
}

impl MapRecord {
    pub fn compare(sample: usize, method: &str, a: &[f64], b: &[f64], rows: usize, cols: usize) -> Result<Self> {
        Ok(Self {
            sample,
            method: method.to_string(),
            ssim: ssim(a, b, rows, cols)?,
            pcc: match pcc(a, b) {
                Ok(v) => Some(v),
                Err(Error::ConstantInput) => None,
                Err(e) => return Err(e),
            },
            mse: mse(a, b)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub ssim: Summary,
    pub pcc: Summary,
    pub mse: Summary,
    /// Samples whose correlation was undefined.
    pub pcc_undefined: usize,
}

/// Agreement of two models on the same inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    /// Mean squared difference of the softmax outputs, times 1e5.
    pub output_mse_e5: f64,
    /// Mean KL divergence of the softmax outputs, times 1e3.
    pub kl_e3: f64,
    pub accuracy_original: f64,
    pub accuracy_attacked: f64,
}

/// Softmax-output agreement of `original` and `attacked` on `x` with labels.
pub fn model_agreement(
    original: &impl Classifier,
    attacked: &impl Classifier,
    x: &Tensor,
    labels: &[usize],
) -> Result<Agreement> {
    let p = softmax_probs(&original.predict(x)?);
    let q = softmax_probs(&attacked.predict(x)?);
    let n = x.rows();
    let mut kl_total = 0.0;
    let (mut hits_p, mut hits_q) = (0, 0);
    for i in 0..n {
        kl_total += kl(p.row(i), q.row(i))?;
        hits_p += usize::from(argmax(p.row(i)) == labels[i]);
        hits_q += usize::from(argmax(q.row(i)) == labels[i]);
    }
    Ok(Agreement {
        output_mse_e5: mse(p.data(), q.data())? * 1e5,
        kl_e3: kl_total / n as f64 * 1e3,
        accuracy_original: hits_p as f64 / n as f64,
        accuracy_attacked: hits_q as f64 / n as f64,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<MapRecord>,
    pub agreement: Option<Agreement>,
}

impl EvalReport {
    /// Aggregates per method, in order of first appearance.
    pub fn summaries(&self) -> Vec<MethodSummary> {
        let mut methods: Vec<&str> = Vec::new();
        for r in &self.records {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        methods
            .into_iter()
            .map(|m| {
                let rs: Vec<&MapRecord> = self.records.iter().filter(|r| r.method == m).collect();
                let ssim: Vec<f64> = rs.iter().map(|r| r.ssim).collect();
                let pcc: Vec<f64> = rs.iter().filter_map(|r| r.pcc).collect();
                let mse: Vec<f64> = rs.iter().map(|r| r.mse).collect();
                MethodSummary {
                    method: m.to_string(),
                    ssim: Summary::of(&ssim),
                    pcc: Summary::of(&pcc),
                    mse: Summary::of(&mse),
                    pcc_undefined: rs.len() - pcc.len(),
                }
            })
            .collect()
    }

    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "sample,method,ssim,pcc,mse")?;
        for r in &self.records {
            let pcc = r.pcc.map(|v| format!("{v:.17e}")).unwrap_or_default();
            writeln!(out, "{},{},{:.17e},{},{:.17e}", r.sample, r.method, r.ssim, pcc, r.mse)?;
        }
        Ok(())
    }

    pub fn write_json(&self, out: &mut impl Write) -> Result<()> {
        #[derive(Serialize)]
        struct Aggregates<'a> {
            methods: Vec<MethodSummary>,
            agreement: &'a Option<Agreement>,
        }
        serde_json::to_writer_pretty(
            &mut *out,
            &Aggregates {
                methods: self.summaries(),
                agreement: &self.agreement,
            },
        )?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlipConfig {
    pub steps: usize,
    pub max_sweeps: usize,
    pub tolerance: f64,
}

impl Default for FlipConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            max_sweeps: 100,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipCurve {
    pub fractions: Vec<f64>,
    pub confidence: Vec<f64>,
    pub auc: f64,
}

impl FlipCurve {
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "fraction,confidence")?;
        for (f, c) in self.fractions.iter().zip(&self.confidence) {
            writeln!(out, "{f:.17e},{c:.17e}")?;
        }
        Ok(())
    }
}

pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

/// Diffusion inpainting: masked pixels start at 0 and are replaced, in
/// Gauss-Seidel sweeps, by the mean of their 4-neighbours until the largest
/// change drops below the tolerance or the sweep budget is spent.
pub fn inpaint(img: &mut [f64], mask: &[bool], rows: usize, cols: usize, cfg: &FlipConfig) {
    let masked: Vec<usize> = (0..img.len()).filter(|&i| mask[i]).collect();
    for &i in &masked {
        img[i] = 0.0;
    }
    for _ in 0..cfg.max_sweeps {
        let mut delta: f64 = 0.0;
        for &i in &masked {
            let (r, c) = (i / cols, i % cols);
            let mut sum = 0.0;
            let mut n = 0.0;
            if r > 0 {
                sum += img[i - cols];
                n += 1.0;
            }
            if r + 1 < rows {
                sum += img[i + cols];
                n += 1.0;
            }
            if c > 0 {
                sum += img[i - 1];
                n += 1.0;
            }
            if c + 1 < cols {
                sum += img[i + 1];
                n += 1.0;
            }
            let v = sum / n;
            delta = delta.max((v - img[i]).abs());
            img[i] = v;
        }
        if delta < cfg.tolerance {
            break;
        }
    }
}

/// Removes pixels in the given order, `steps` equal batches, inpainting after
/// each batch, and tracks the softmax confidence of the originally predicted
/// class.
pub fn flip_curve_with_order(
    model: &impl Classifier,
    x: &[f64],
    shape: (usize, usize),
    order: &[usize],
    cfg: &FlipConfig,
) -> Result<FlipCurve> {
    let (rows, cols) = shape;
    let n = rows * cols;
    if x.len() != n || order.len() != n {
        return Err(Error::LengthMismatch {
            shape: vec![rows, cols],
            len: x.len().min(order.len()),
        });
    }
    if cfg.steps == 0 {
        return Err(Error::InvalidArgument("at least one flipping step is needed".into()));
    }
    let mut images = Vec::with_capacity((cfg.steps + 1) * n);
    images.extend_from_slice(x);
    let mut mask = vec![false; n];
    let mut flipped = 0;
    let mut fractions = vec![0.0];
    for s in 1..=cfg.steps {
        let upto = (s * n + cfg.steps / 2) / cfg.steps;
        for &p in &order[flipped..upto] {
            mask[p] = true;
        }
        flipped = upto;
        let mut img = x.to_vec();
        inpaint(&mut img, &mask, rows, cols, cfg);
        images.extend(img);
        fractions.push(s as f64 / cfg.steps as f64);
    }
    let batch = Tensor::new(vec![cfg.steps + 1, n], images)?;
    let probs = softmax_probs(&model.predict(&batch)?);
    let class = argmax(probs.row(0));
    let confidence: Vec<f64> = (0..probs.rows()).map(|i| probs.get(i, class)).collect();
    let auc = trapezoid(&fractions, &confidence);
    Ok(FlipCurve {
        fractions,
        confidence,
        auc,
    })
}

/// Pixel indices by descending relevance, lower index first on ties.
pub fn relevance_order(relevance: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..relevance.len()).collect();
    idx.sort_by(|&a, &b| relevance[b].total_cmp(&relevance[a]).then(a.cmp(&b)));
    idx
}

/// Pixel flipping in relevance order for an abs-sum-one image map.
pub fn pixel_flipping(
    model: &impl Classifier,
    x: &[f64],
    map: &ExplanationMap,
    cfg: &FlipConfig,
) -> Result<FlipCurve> {
    if map.shape().len() != 2 {
        return Err(Error::InvalidArgument("pixel flipping needs a 2-d image map".into()));
    }
    if map.normalization() != MapNormalization::AbsSumOne {
        return Err(Error::Contract("pixel flipping expects an abs-sum-one map".into()));
    }
    let shape = (map.shape()[0], map.shape()[1]);
    flip_curve_with_order(model, x, shape, &relevance_order(map.values()), cfg)
}

/// Mean AUC over `count` uniformly random flipping orders.
pub fn random_order_auc(
    model: &impl Classifier,
    x: &[f64],
    shape: (usize, usize),
    count: usize,
    seed: u64,
    cfg: &FlipConfig,
) -> Result<f64> {
    if count == 0 {
        return Err(Error::InvalidArgument("need at least one random order".into()));
    }
    let mut rng = RngState::new(seed);
    let mut total = 0.0;
    for _ in 0..count {
        let order = rng.permutation(x.len());
        total += flip_curve_with_order(model, x, shape, &order, cfg)?.auc;
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Activation, MlpModel};

    fn random(rng: &mut RngState, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.normal(0.0, 1.0)).collect()
    }

    /// Direct evaluation of the windowed formula, one window at a time.
    fn ssim_brute(a: &[f64], b: &[f64], rows: usize, cols: usize) -> f64 {
        let g = gaussian_window();
        let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
        let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
        let (c1, c2) = ((0.01 * (hi - lo)).powi(2), (0.03 * (hi - lo)).powi(2));
        let mut vals = Vec::new();
        for r in 0..=rows - 11 {
            for c in 0..=cols - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let w = g[i] * g[j];
                        let (x, y) = (a[(r + i) * cols + c + j], b[(r + i) * cols + c + j]);
                        ma += w * x;
                        mb += w * y;
                        saa += w * x * x;
                        sbb += w * y * y;
                        sab += w * x * y;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                vals.push(((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)));
            }
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn ssim_matches_brute_force() {
        let mut rng = RngState::new(1);
        let a = random(&mut rng, 256);
        let b = random(&mut rng, 256);
        let fast = ssim(&a, &b, 16, 16).unwrap();
        assert!((fast - ssim_brute(&a, &b, 16, 16)).abs() <= 1e-10);
        assert!((ssim(&a, &a, 16, 16).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim(&[2.0; 121], &[2.0; 121], 11, 11).unwrap(), 1.0);
        assert!(ssim(&a, &b, 8, 32).is_err());
        assert!(ssim(&a[..100], &b[..100], 10, 10).is_err());
    }

    #[test]
    fn ssim_of_negation_is_negative() {
        // locally zero-mean structure: a modulated checkerboard
        let a: Vec<f64> = (0..28 * 28)
            .map(|i| {
                let (r, c) = (i / 28, i % 28);
                let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
                sign * (1.0 + 0.3 * (r as f64 / 5.0).sin())
            })
            .collect();
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!(ssim(&a, &neg, 28, 28).unwrap() < -0.99);
    }

    #[test]
    fn pcc_cases() {
        let a = [1.0, 3.0, 2.0, 5.0];
        assert!((pcc(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pcc(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        let aff: Vec<f64> = a.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pcc(&a, &aff).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(pcc(&a, &[1.0; 4]), Err(Error::ConstantInput)));
    }

    #[test]
    fn mse_and_kl() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 2.5);
        assert!((kl(&[1.0, 0.0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(kl(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(kl(&[1.0, 0.0], &[0.0, 1.0]).unwrap() > 27.0);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn percentiles_interpolate() {
        let s = Summary::of(&[4.0, 1.0, 3.0, 2.0, f64::NAN]);
        assert_eq!(s.count, 4);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.p25, 1.75);
        assert_eq!(s.p75, 3.25);
    }

    #[test]
    fn report_outputs() {
        let mut report = EvalReport::default();
        let a: Vec<f64> = (0..121).map(|i| i as f64).collect();
        report.records.push(MapRecord::compare(0, "gradient", &a, &a, 11, 11).unwrap());
        report.records.push(MapRecord::compare(1, "gradient", &a, &[1.0; 121], 11, 11).unwrap());
        let s = report.summaries();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].pcc_undefined, 1);
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
        let mut json = Vec::new();
        report.write_json(&mut json).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
        assert_eq!(v["methods"][0]["ssim"]["count"], 2);
    }

    #[test]
    fn inpainting_fills_holes_smoothly() {
        let cfg = FlipConfig::default();
        let mut img = vec![1.0; 25];
        let mut mask = vec![false; 25];
        mask[12] = true;
        img[12] = 9.0;
        inpaint(&mut img, &mask, 5, 5, &cfg);
        assert_eq!(img[12], 1.0);
        let mut all = vec![3.0; 25];
        inpaint(&mut all, &[true; 25], 5, 5, &cfg);
        assert!(all.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flip_endpoints_do_not_depend_on_order() {
        let model = MlpModel::init(&[144, 16, 3], Activation::Relu, 3).unwrap();
        let mut rng = RngState::new(4);
        let x = random(&mut rng, 144);
        let cfg = FlipConfig {
            steps: 10,
            ..FlipConfig::default()
        };
        let a = flip_curve_with_order(&model, &x, (12, 12), &rng.permutation(144), &cfg).unwrap();
        let b = flip_curve_with_order(&model, &x, (12, 12), &rng.permutation(144), &cfg).unwrap();
        assert_eq!(a.confidence[0], b.confidence[0]);
        assert_eq!(a.confidence.last(), b.confidence.last());
        assert_eq!(a.fractions.len(), 11);
        assert!(a.fractions.windows(2).all(|w| w[1] > w[0]));
        let probs = softmax_probs(&model.predict(&Tensor::row_vector(x.clone()).unwrap()).unwrap());
        assert_eq!(a.confidence[0], probs.get(0, argmax(probs.row(0))));
    }

    #[test]
    fn relevance_order_breaks_ties_by_index() {
        assert_eq!(relevance_order(&[0.1, 0.5, 0.1, 0.5]), vec![1, 3, 0, 2]);
    }
}
