use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fairwash::attack::{
    analytic_fairwash, finetune_attack, finetune_attack_tsp, AttackRecord, AttackTarget, FlatManifoldSpec,
    ProjectorSource,
};
use fairwash::dataio::{
    gen_credit, load_idx, load_map, save_map, target_42, LabeledDataset, CREDIT_CONSTRAINT, CREDIT_WEIGHTS,
};
use fairwash::evalmetrics::{
    model_agreement, pixel_flipping, random_order_auc, EvalReport, FlipConfig, MapRecord, Summary,
};
use fairwash::explain::{
    explain_batch, gradient_batch, normalize_map, normalize_rows, normalize_values, predicted, xgrad_batch,
    Convention, ExplanationMap, IntGradConfig, LrpConfig, Method, MethodConfig,
};
use fairwash::manifold::{
    decoder_tangent, default_variant, hyperplane_projectors, load_projectors, project_rows, reconstruction_sweep,
    save_projectors, tsp_explanation, Projector,
};
use fairwash::models::{
    accuracy, load_autoencoder, load_model, round_to_f32, save_autoencoder, save_model, train_autoencoder,
    train_classifier, Activation, AutoencoderModel, LogRegModel, MlpModel, OptimizerKind, TrainConfig,
};
use fairwash::Tensor;
use serde_json::{json, Value};

use crate::config::{DataSpec, RunConfig, TangentMethod};
use crate::{CliError, CliResult};

/// Model artifacts in pipeline order; only the first is required downstream.
pub const MODELS: [&str; 3] = ["original", "attacked", "attacked_tsp"];

/// File names inside the output directory.
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.root.join(format!("{name}.fwm"))
    }

    pub fn maps(&self, projected: bool, model: &str, method: Method) -> PathBuf {
        let top = if projected { "maps_tsp" } else { "maps" };
        self.root.join(top).join(model).join(method.name())
    }

    pub fn map_file(dir: &Path, sample: usize) -> PathBuf {
        dir.join(format!("{sample:05}.fwmap"))
    }

    fn projectors(&self, split: &str) -> PathBuf {
        self.root.join(format!("projectors_{split}.fwproj"))
    }

    fn autoencoder(&self, class: usize) -> PathBuf {
        self.root.join("autoencoders").join(format!("class_{class}.fwae"))
    }
}

pub struct Splits {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Loads both splits and standardizes them with the training statistics.
pub fn load_splits(cfg: &RunConfig) -> CliResult<Splits> {
    let (train, test) = match &cfg.data {
        DataSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            train_limit,
            test_limit,
        } => {
            let mut train = load_idx(train_images, train_labels)?;
            let mut test = load_idx(test_images, test_labels)?;
            if let Some(n) = train_limit {
                train = train.head(*n)?;
            }
            if let Some(n) = test_limit {
                test = test.head(*n)?;
            }
            (train, test)
        }
        DataSpec::Credit {
            train_samples,
            test_samples,
        } => (
            gen_credit(*train_samples, cfg.seed)?,
            gen_credit(*test_samples, cfg.seed.wrapping_add(1))?,
        ),
    };
    if train.dim() != test.dim() {
        return Err(CliError::Data(format!(
            "train and test dimensions differ: {} vs {}",
            train.dim(),
            test.dim()
        )));
    }
    let train = train.normalize()?;
    let stats = train.normalization().expect("normalized above");
    let test = test.normalize_with(stats)?;
    Ok(Splits { train, test })
}

fn prepare(cfg: &RunConfig) -> CliResult<Layout> {
    fs::create_dir_all(&cfg.output_dir)?;
    Ok(Layout::new(&cfg.output_dir))
}

fn require(path: &Path, producer: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "missing artifact {}; run `{producer}` first",
            path.display()
        )))
    }
}

fn load_artifact_model(layout: &Layout, name: &str) -> CliResult<MlpModel> {
    let path = layout.model(name);
    require(&path, if name == "original" { "train" } else { "attack" })?;
    Ok(load_model(&path)?)
}

/// Leading test samples that are explained, projected and evaluated.
fn explained(cfg: &RunConfig, test: &LabeledDataset) -> CliResult<LabeledDataset> {
    Ok(test.head(cfg.explain.samples)?)
}

fn map_shape(data: &LabeledDataset) -> Vec<usize> {
    match data.image_shape() {
        Some((r, c)) => vec![r, c],
        None => vec![data.dim()],
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Replaces a generated directory so stale files of an earlier run cannot
/// survive.
fn fresh_dir(dir: &Path) -> CliResult<()> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> CliResult<Value> {
    let layout = prepare(cfg)?;
    let s = load_splits(cfg)?;
    let mut dims = vec![s.train.dim()];
    dims.extend(&cfg.model.hidden);
    dims.push(s.train.classes().max(s.test.classes()));
    let model = MlpModel::init(&dims, cfg.model.activation(), cfg.seed)?;
    let (mut model, history) = train_classifier(model, &s.train, &cfg.train.to_config(cfg.seed))?;
    // Downstream commands see the stored (f32) parameters; so does this one.
    round_to_f32(&mut model);
    save_model(&model, &layout.model("original"))?;
    let summary = json!({
        "command": "train",
        "dims": dims,
        "initial_loss": history.initial_loss,
        "epoch_losses": history.epoch_losses,
        "train_accuracy": accuracy(&model, &s.train)?,
        "test_accuracy": accuracy(&model, &s.test)?,
    });
    write_json(&layout.root().join("train.json"), &summary)?;
    Ok(summary)
}

/// Target map: the built-in "42" digits at the image resolution, or a map
/// file, normalized to absolute values summing to one.
pub fn attack_target(cfg: &RunConfig, data: &LabeledDataset) -> CliResult<Vec<f64>> {
    if cfg.attack.target == "42" {
        let (r, c) = data
            .image_shape()
            .ok_or_else(|| CliError::Config("target \"42\" needs image data".into()))?;
        return Ok(target_42(r, c));
    }
    let map = load_map(Path::new(&cfg.attack.target))?;
    if map.values().len() != data.dim() {
        return Err(CliError::Data(format!(
            "target map has {} values, inputs have {}",
            map.values().len(),
            data.dim()
        )));
    }
    Ok(normalize_values(map.values(), Convention::Image)?)
}

pub fn cmd_attack(cfg: &RunConfig) -> CliResult<Value> {
    let layout = prepare(cfg)?;
    let s = load_splits(cfg)?;
    let g = load_artifact_model(&layout, "original")?;
    let target = AttackTarget::Shared(attack_target(cfg, &s.train)?);
    let acfg = cfg.attack.to_config(cfg.seed);
    let (name, outcome) = if cfg.attack.tsp {
        let classes = s.train.labels().to_vec();
        let ps = projector_cache(cfg, &layout, "train", &s.train, &classes, &s.train, true)?;
        let source = ProjectorSource {
            projectors: Arc::new(ps),
        };
        ("attacked_tsp", finetune_attack_tsp(&g, &s.train, &target, &acfg, &source)?)
    } else {
        ("attacked", finetune_attack(&g, &s.train, &target, &acfg)?)
    };
    let mut attacked = outcome.model.clone();
    round_to_f32(&mut attacked);
    save_model(&attacked, &layout.model(name))?;
    let mut log = BufWriter::new(File::create(layout.root().join(format!("{name}.jsonl")))?);
    outcome.write_log(&mut log)?;
    log.flush()?;
    let epochs = outcome.records.iter().find_map(|r| match r {
        AttackRecord::Done { epochs, .. } => Some(*epochs),
        _ => None,
    });
    let agreement = model_agreement(&g, &attacked, s.test.inputs(), s.test.labels())?;
    Ok(json!({
        "command": "attack",
        "model": name,
        "initial_loss": outcome.initial_loss,
        "final_loss": outcome.final_loss,
        "reverted": outcome.reverted,
        "epochs": epochs,
        "test_agreement": agreement,
    }))
}

/// Per-class autoencoders, trained once and reused while the configuration
/// that produced them is unchanged.
fn autoencoders(cfg: &RunConfig, layout: &Layout, train: &LabeledDataset) -> CliResult<Vec<AutoencoderModel>> {
    let meta_path = layout.root().join("autoencoders").join("meta.json");
    let meta = serde_json::to_string_pretty(&json!({
        "seed": cfg.seed,
        "data": cfg.data,
        "tangent": cfg.tangent,
    }))?;
    let classes = train.classes();
    let cached = fs::read_to_string(&meta_path).ok().as_deref() == Some(meta.as_str())
        && (0..classes).all(|c| layout.autoencoder(c).is_file());
    if cached {
        return (0..classes)
            .map(|c| Ok(load_autoencoder(&layout.autoencoder(c))?))
            .collect();
    }
    fresh_dir(&layout.root().join("autoencoders"))?;
    let t = &cfg.tangent;
    let mut dims = vec![train.dim()];
    dims.extend(&t.ae_hidden);
    dims.push(t.d);
    let mut out = Vec::with_capacity(classes);
    for c in 0..classes {
        let idx: Vec<usize> = (0..train.len()).filter(|&i| train.labels()[i] == c).collect();
        if idx.is_empty() {
            return Err(CliError::Data(format!("no training samples of class {c}")));
        }
        let subset = train.subset(&idx)?;
        let seed = cfg.seed.wrapping_add(1 + 2 * c as u64);
        // Softplus keeps the decoder Jacobian full rank where relu units die.
        let act = Activation::Softplus {
            beta: Activation::DEFAULT_SOFTPLUS_BETA,
        };
        let ae = AutoencoderModel::init(&dims, act, seed)?;
        let tc = TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: t.ae_learning_rate,
            batch_size: 32,
            epochs: t.ae_epochs,
            seed,
            ..TrainConfig::default()
        };
        let (ae, _) = train_autoencoder(ae, &subset, &tc)?;
        save_autoencoder(&ae, &layout.autoencoder(c))?;
        // Use the stored precision, as a cached run would.
        out.push(load_autoencoder(&layout.autoencoder(c))?);
    }
    fs::write(&meta_path, meta)?;
    Ok(out)
}

/// Tangent projectors for the rows of `data` (`classes` picks the
/// autoencoder), cached in the output directory. The f32 cache is always
/// read back so that fresh and cached runs use identical projectors.
fn projector_cache(
    cfg: &RunConfig,
    layout: &Layout,
    split: &str,
    data: &LabeledDataset,
    classes: &[usize],
    train: &LabeledDataset,
    exclude_self: bool,
) -> CliResult<Vec<Projector>> {
    let path = layout.projectors(split);
    let meta_path = path.with_extension("json");
    let meta = serde_json::to_string_pretty(&json!({
        "seed": cfg.seed,
        "data": cfg.data,
        "tangent": cfg.tangent,
        "count": data.len(),
    }))?;
    let cached = path.is_file() && fs::read_to_string(&meta_path).ok().as_deref() == Some(meta.as_str());
    if !cached {
        let t = &cfg.tangent;
        let ps = match t.method {
            TangentMethod::Hyperplane => hyperplane_projectors(data.inputs(), train.inputs(), t.k, t.d, exclude_self)?,
            TangentMethod::Autoencoder => {
                let aes = autoencoders(cfg, layout, train)?;
                (0..data.len())
                    .map(|i| decoder_tangent(&aes[classes[i]], data.sample(i), t.d))
                    .collect::<fairwash::Result<_>>()?
            }
        };
        let entries: Vec<(usize, Projector)> = ps.into_iter().enumerate().collect();
        save_projectors(&entries, &path)?;
        fs::write(&meta_path, meta)?;
    }
    let entries = load_projectors(&path)?;
    if entries.len() != data.len() || entries.iter().enumerate().any(|(i, (idx, _))| *idx != i) {
        return Err(CliError::Data(format!("projector cache {} is inconsistent", path.display())));
    }
    Ok(entries.into_iter().map(|(_, p)| p).collect())
}

fn method_config(cfg: &RunConfig, method: Method, model: &MlpModel) -> MethodConfig {
    let layers = model.layers().len();
    match method {
        Method::Gradient => MethodConfig::Gradient,
        Method::Xgrad => MethodConfig::Xgrad,
        Method::Intgrad => MethodConfig::Intgrad(IntGradConfig {
            baseline: None,
            steps: cfg.explain.intgrad_steps,
        }),
        Method::LrpEps => MethodConfig::Lrp(LrpConfig::epsilon(layers, cfg.explain.lrp_epsilon)),
        Method::LrpZplus => MethodConfig::Lrp(LrpConfig::zplus(layers, cfg.explain.lrp_epsilon)),
    }
}

pub fn cmd_explain(cfg: &RunConfig) -> CliResult<Value> {
    let layout = prepare(cfg)?;
    let s = load_splits(cfg)?;
    let ex = explained(cfg, &s.test)?;
    let g = load_artifact_model(&layout, "original")?;
    // Every model is explained for the class the original model predicts.
    let classes = predicted(&g, ex.inputs())?;
    let shape = map_shape(&ex);
    let mut models = Vec::new();
    for name in MODELS {
        if name != "original" && !layout.model(name).is_file() {
            continue;
        }
        let model = load_artifact_model(&layout, name)?;
        for &method in &cfg.explain.methods {
            let maps = explain_batch(&model, ex.inputs(), &classes, &method_config(cfg, method, &model))?;
            let dir = layout.maps(false, name, method);
            fresh_dir(&dir)?;
            for (i, &k) in classes.iter().enumerate() {
                let map = ExplanationMap::new(maps.row(i).to_vec(), shape.clone(), method, k)?;
                save_map(&map, &Layout::map_file(&dir, i))?;
            }
        }
        models.push(name);
    }
    Ok(json!({
        "command": "explain",
        "models": models,
        "methods": cfg.explain.methods,
        "samples": ex.len(),
    }))
}

pub fn cmd_project(cfg: &RunConfig) -> CliResult<Value> {
    let layout = prepare(cfg)?;
    let s = load_splits(cfg)?;
    let ex = explained(cfg, &s.test)?;
    let g = load_artifact_model(&layout, "original")?;
    let classes = predicted(&g, ex.inputs())?;
    let ps = projector_cache(cfg, &layout, "test", &ex, &classes, &s.train, false)?;
    let mut projected = Vec::new();
    for name in MODELS {
        for &method in &cfg.explain.methods {
            let src = layout.maps(false, name, method);
            if !src.is_dir() {
                if name == "original" {
                    return Err(CliError::Data(format!(
                        "missing artifact {}; run `explain` first",
                        src.display()
                    )));
                }
                continue;
            }
            let dst = layout.maps(true, name, method);
            fresh_dir(&dst)?;
            for (i, p) in ps.iter().enumerate() {
                let file = Layout::map_file(&src, i);
                require(&file, "explain")?;
                let map = load_map(&file)?;
                let tsp = tsp_explanation(&map, p, ex.sample(i), None, default_variant(method))?;
                save_map(&tsp, &Layout::map_file(&dst, i))?;
            }
            projected.push(format!("{name}/{}", method.name()));
        }
    }
    Ok(json!({
        "command": "project",
        "tangent": cfg.tangent.method,
        "samples": ex.len(),
        "projected": projected,
    }))
}

/// Abs-sum-one maps of one model and method, or `None` if not produced.
fn read_maps(layout: &Layout, projected: bool, model: &str, method: Method, n: usize) -> CliResult<Option<Vec<ExplanationMap>>> {
    let dir = layout.maps(projected, model, method);
    if !dir.is_dir() {
        return Ok(None);
    }
    (0..n)
        .map(|i| {
            let file = Layout::map_file(&dir, i);
            require(&file, if projected { "project" } else { "explain" })?;
            Ok(normalize_map(&load_map(&file)?, Convention::Image)?)
        })
        .collect::<CliResult<Vec<_>>>()
        .map(Some)
}

pub fn cmd_evaluate(cfg: &RunConfig) -> CliResult<Value> {
    let layout = prepare(cfg)?;
    let s = load_splits(cfg)?;
    let ex = explained(cfg, &s.test)?;
    let (rows, cols) = ex
        .image_shape()
        .ok_or_else(|| CliError::Config("evaluate needs image data".into()))?;
    let g = load_artifact_model(&layout, "original")?;
    let target = attack_target(cfg, &s.train)?;
    let n = ex.len();
    let mut report = EvalReport::default();
    let mut gains = serde_json::Map::new();
    for &method in &cfg.explain.methods {
        for projected in [false, true] {
            let prefix = if projected {
                format!("tsp_{}", method.name())
            } else {
                method.name().to_string()
            };
            let Some(orig) = read_maps(&layout, projected, "original", method, n)? else {
                if projected {
                    continue;
                }
                return Err(CliError::Data("missing maps of the original model; run `explain` first".into()));
            };
            let base: Vec<f64> = orig
                .iter()
                .enumerate()
                .map(|(i, h)| {
                    let r = MapRecord::compare(i, &format!("{prefix}:original~target"), h.values(), &target, rows, cols)?;
                    let ssim = r.ssim;
                    report.records.push(r);
                    Ok(ssim)
                })
                .collect::<CliResult<_>>()?;
            for other in &MODELS[1..] {
                let Some(maps) = read_maps(&layout, projected, other, method, n)? else {
                    continue;
                };
                let mut diffs = Vec::with_capacity(n);
                for (i, h) in maps.iter().enumerate() {
                    let r = MapRecord::compare(i, &format!("{prefix}:{other}~target"), h.values(), &target, rows, cols)?;
                    diffs.push(r.ssim - base[i]);
                    report.records.push(r);
                    report.records.push(MapRecord::compare(
                        i,
                        &format!("{prefix}:original~{other}"),
                        orig[i].values(),
                        h.values(),
                        rows,
                        cols,
                    )?);
                }
                // Median over samples of the per-sample gain in similarity
                // to the target.
                gains.insert(format!("{prefix}:{other}"), json!(Summary::of(&diffs).median));
            }
        }
    }
    let mut agreements = serde_json::Map::new();
    for other in &MODELS[1..] {
        if layout.model(other).is_file() {
            let m = load_artifact_model(&layout, other)?;
            let a = model_agreement(&g, &m, s.test.inputs(), s.test.labels())?;
            if *other == "attacked" {
                report.agreement = Some(a);
            }
            agreements.insert(other.to_string(), serde_json::to_value(a)?);
        }
    }
    let mut csv = BufWriter::new(File::create(layout.root().join("report.csv"))?);
    report.write_csv(&mut csv)?;
    csv.flush()?;
    let mut js = BufWriter::new(File::create(layout.root().join("report.json"))?);
    report.write_json(&mut js)?;
    js.flush()?;

    let flip = flip_report(cfg, &layout, &g, &ex, (rows, cols))?;
    let medians: serde_json::Map<String, Value> = report
        .summaries()
        .into_iter()
        .map(|m| (m.method, json!(m.ssim.median)))
        .collect();
    let summary = json!({
        "command": "evaluate",
        "samples": n,
        "median_ssim": medians,
        "median_ssim_gain": gains,
        "agreement": agreements,
        "pixel_flipping": flip,
    });
    write_json(&layout.root().join("summary.json"), &summary)?;
    Ok(summary)
}

/// Pixel flipping of the original model for gradient and tsp-gradient maps
/// against random orders; writes flip.csv.
fn flip_report(
    cfg: &RunConfig,
    layout: &Layout,
    g: &MlpModel,
    ex: &LabeledDataset,
    shape: (usize, usize),
) -> CliResult<Value> {
    let n = cfg.eval.flip_samples.min(ex.len());
    if n == 0 || !cfg.explain.methods.contains(&Method::Gradient) {
        return Ok(Value::Null);
    }
    let fc = FlipConfig {
        steps: cfg.eval.flip_steps,
        ..FlipConfig::default()
    };
    let raw = read_maps(layout, false, "original", Method::Gradient, n)?
        .ok_or_else(|| CliError::Data("missing gradient maps; run `explain` first".into()))?;
    let tsp = read_maps(layout, true, "original", Method::Gradient, n)?;
    let mut w = BufWriter::new(File::create(layout.root().join("flip.csv"))?);
    writeln!(w, "sample,gradient,tsp_gradient,random")?;
    let (mut a_raw, mut a_tsp, mut a_rand) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..n {
        let x = ex.sample(i);
        let auc = pixel_flipping(g, x, &raw[i], &fc)?.auc;
        let auc_tsp = match &tsp {
            Some(t) => Some(pixel_flipping(g, x, &t[i], &fc)?.auc),
            None => None,
        };
        let seed = cfg.seed.wrapping_add(i as u64);
        let auc_rand = random_order_auc(g, x, shape, cfg.eval.random_orders, seed, &fc)?;
        let t = auc_tsp.map(|v| format!("{v:.17e}")).unwrap_or_default();
        writeln!(w, "{i},{auc:.17e},{t},{auc_rand:.17e}")?;
        a_raw.push(auc);
        a_tsp.extend(auc_tsp);
        a_rand.push(auc_rand);
    }
    w.flush()?;
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(json!({
        "samples": n,
        "mean_auc_gradient": mean(&a_raw),
        "mean_auc_tsp_gradient": mean(&a_tsp),
        "mean_auc_random": mean(&a_rand),
    }))
}

fn column_medians(maps: &Tensor) -> Vec<f64> {
    (0..maps.cols())
        .map(|j| {
            let col: Vec<f64> = (0..maps.rows()).map(|i| maps.get(i, j)).collect();
            Summary::of(&col).median
        })
        .collect()
}

/// Gradient or x⊙Grad maps of a logistic model, raw and projected.
fn credit_maps(model: &LogRegModel, x: &Tensor, method: Method, projectors: &[Projector]) -> CliResult<(Tensor, Tensor)> {
    let classes = vec![0; x.rows()];
    let raw = match method {
        Method::Xgrad => xgrad_batch(model, x, &classes)?,
        _ => gradient_batch(model, x, &classes)?,
    };
    let tsp = project_rows(&raw, projectors, method, x, None, default_variant(method))?;
    Ok((raw, tsp))
}

/// Logistic credit model, its fairwashed twin and their per-feature median
/// relevances over the accepted applicants.
pub fn cmd_credit_demo(cfg: &RunConfig) -> CliResult<Value> {
    let layout = prepare(cfg)?;
    let data = gen_credit(cfg.credit.samples, cfg.seed)?;
    let g = LogRegModel::new(CREDIT_WEIGHTS.to_vec(), 0.0)?;
    let spec = FlatManifoldSpec::new(vec![CREDIT_CONSTRAINT.to_vec()], vec![0.0])?;
    let gt = analytic_fairwash(&g, &spec, &[cfg.credit.lambda], Some(data.inputs()))?;
    let x = data.inputs();
    let mut max_score = 0.0f64;
    let mut max_prob = 0.0f64;
    let mut accepted = Vec::new();
    for i in 0..data.len() {
        let row = data.sample(i);
        max_score = max_score.max((g.score(row) - gt.score(row)).abs());
        max_prob = max_prob.max((g.probability(row) - gt.probability(row)).abs());
        if g.probability(row) > 0.5 {
            accepted.push(i);
        }
    }
    if accepted.is_empty() {
        return Err(CliError::Data("no applicant is accepted".into()));
    }
    let xa = x.gather_rows(&accepted);
    let p = spec.projector()?;
    let projectors = vec![p; xa.rows()];
    let names: Vec<String> = data
        .feature_names()
        .map(|n| n.to_vec())
        .unwrap_or_else(|| (0..data.dim()).map(|j| format!("x{j}")).collect());

    let mut csv = BufWriter::new(File::create(layout.root().join("credit_relevance.csv"))?);
    writeln!(csv, "model,explanation,method,{}", names.join(","))?;
    let mut tables = Vec::new();
    let mut tsp_diff = serde_json::Map::new();
    let mut gender = serde_json::Map::new();
    for method in [Method::Gradient, Method::Xgrad] {
        let (raw_g, tsp_g) = credit_maps(&g, &xa, method, &projectors)?;
        let (raw_t, tsp_t) = credit_maps(&gt, &xa, method, &projectors)?;
        tsp_diff.insert(method.name().into(), json!(tsp_g.max_abs_diff(&tsp_t)));
        for (model, explanation, maps) in [
            ("g", "raw", &raw_g),
            ("g_tilde", "raw", &raw_t),
            ("g", "tsp", &tsp_g),
            ("g_tilde", "tsp", &tsp_t),
        ] {
            let medians = column_medians(&normalize_rows(maps, Convention::Signed)?);
            let cells: Vec<String> = medians.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(csv, "{model},{explanation},{},{}", method.name(), cells.join(","))?;
            if explanation == "raw" {
                gender.insert(format!("{}:{model}", method.name()), json!(medians[0].abs()));
            }
            tables.push(json!({
                "model": model,
                "explanation": explanation,
                "method": method.name(),
                "median_relevance": names.iter().cloned().zip(medians.iter().map(|v| json!(v))).collect::<serde_json::Map<_, _>>(),
            }));
        }
    }
    csv.flush()?;
    let summary = json!({
        "command": "credit-demo",
        "samples": data.len(),
        "accepted": accepted.len(),
        "lambda": cfg.credit.lambda,
        "weights": g.w,
        "weights_fairwashed": gt.w,
        "max_score_diff": max_score,
        "max_probability_diff": max_prob,
        "gender_relevance": gender,
        "tsp_max_diff": tsp_diff,
        "tables": tables,
    });
    write_json(&layout.root().join("credit_report.json"), &summary)?;
    Ok(summary)
}

/// Hyperplane reconstruction error against the number of tangent directions.
pub fn cmd_tangent_sweep(cfg: &RunConfig) -> CliResult<Value> {
    let layout = prepare(cfg)?;
    let s = load_splits(cfg)?;
    let n = cfg.eval.sweep_samples.min(s.test.len());
    let k = cfg.tangent.k;
    let max_d = cfg.eval.sweep_max_d.min(k).min(s.train.dim());
    if n == 0 || max_d == 0 {
        return Err(CliError::Config("tangent sweep needs samples and directions".into()));
    }
    let curves: Vec<Vec<f64>> = (0..n)
        .map(|i| reconstruction_sweep(s.test.sample(i), s.train.inputs(), k, max_d))
        .collect::<fairwash::Result<_>>()?;
    let mut w = BufWriter::new(File::create(layout.root().join("tangent_sweep.csv"))?);
    writeln!(w, "d,mean,p25,median,p75")?;
    let mut means = Vec::with_capacity(max_d);
    for d in 0..max_d {
        let col: Vec<f64> = curves.iter().map(|c| c[d]).collect();
        let st = Summary::of(&col);
        writeln!(w, "{},{:.17e},{:.17e},{:.17e},{:.17e}", d + 1, st.mean, st.p25, st.median, st.p75)?;
        means.push(st.mean);
    }
    w.flush()?;
    Ok(json!({
        "command": "tangent-sweep",
        "samples": n,
        "k": k,
        "max_d": max_d,
        "mean_error": means,
    }))
}
