use std::path::Path;

use serde::Serialize;

use flowlab::config::KeyValues;
use flowlab::data::{scale_pixels_fixed, write_points_csv, DataKind, ImageDataset};
use flowlab::flow::{build_model, ExampleShape, FlowModel, ModelConfig, Variant, MODEL_KEYS};
use flowlab::likelihood::{log_likelihood, mean_bpd, write_breakdown_csv, LikelihoodBreakdown, Prior};
use flowlab::ood::{
    alpha_coeffs, compute_moments, concentration_check, conv_structure, ensemble_loglik, finite_range, gray_images,
    hadamard_check, hessian_check_cv, histogram_range, latent_stats, likelihood_bound_check, predict_gap_cv,
    predict_gap_from_sums, predict_gap_model, simulate_bounds, trend_slope, write_histogram_csv, write_json,
    write_sweep_csv, BoundReport, DataMoments, HessianCheck, SweepConfig, DEFAULT_HISTOGRAM_BINS,
};
use flowlab::tensor::{write_tensor, RngState, Tensor};
use flowlab::train::{
    load_checkpoint, save_checkpoint, train_until, write_metrics_csv, Checkpoint, OptimizerState, TrainConfig,
    TrainData, TRAIN_KEYS,
};
use flowlab::{Error, Result};

use crate::inputs::{layered_config, load_data, scaled_images};
use crate::manifest::RunManifest;
use crate::{ChecksArgs, Common, EvalArgs, PredictGapArgs, SampleArgs, SimulateBoundsArgs, StatsArgs, TrainArgs};

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn flags(common: &Common) -> KeyValues {
    let mut kv = KeyValues::new();
    if let Some(s) = common.seed {
        kv.set("seed", s);
    }
    kv
}

fn out_dir(common: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&common.out_dir)?;
    Ok(&common.out_dir)
}

fn data_rng(seed: u64, slot: u64) -> RngState {
    RngState::new(seed).child(slot)
}

/// Evaluation view: raw pixels get fixed per-example dequantization.
fn eval_tensor(ds: &ImageDataset, seed: u64) -> Result<Tensor> {
    match ds.kind {
        DataKind::RawPixels => Ok(scale_pixels_fixed(ds, seed)?.images),
        _ => Ok(ds.images.clone()),
    }
}

fn parse_prior(kv: &KeyValues) -> Result<Prior> {
    let scale: f64 = kv.get_or("prior_scale", 1.0)?;
    let prior = match kv.get_str("prior").unwrap_or("gaussian") {
        "gaussian" => Prior::Gaussian { sigma: scale },
        "logistic" => Prior::Logistic { scale },
        "laplace" => Prior::Laplace { scale },
        other => return Err(usage(format!("unknown prior {other:?}"))),
    };
    prior.validated()
}

fn check_input(model: &FlowModel, x: &Tensor, what: &str) -> Result<()> {
    let got = ExampleShape::of_batch(x)?;
    if got.len() != model.dim() {
        return Err(Error::ShapeMismatch {
            expected: model.input_shape().to_string(),
            got: format!("{got} ({what})"),
        });
    }
    Ok(())
}

fn preset(name: &str) -> Result<KeyValues> {
    let text = match name {
        "two-moons" => {
            "input_shape = 2\nvariant = nvp-exp\ncouplings = 4\nhidden = 32\nlr = 0.001\nsteps = 2000\n\
             batch_size = 64\ndataset = moons:2000\neval_dataset = moons:500\n"
        }
        "cv-gaussian" => {
            "input_shape = 4\nvariant = cv\ncouplings = 2\nhidden = 16\nlr = 0.001\nsteps = 2000\n\
             batch_size = 64\ndataset = gaussian:4:0.25:2000\neval_dataset = gaussian:4:0.25:500\n"
        }
        other => return Err(usage(format!("unknown preset {other:?} (two-moons, cv-gaussian)"))),
    };
    KeyValues::parse(text)
}

const TRAIN_EXTRA_KEYS: &[&str] = &["preset", "prior", "prior_scale", "dataset", "eval_dataset"];

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut flag_kv = flags(&args.common);
    if let Some(v) = &args.variant {
        flag_kv.set("variant", v);
    }
    if let Some(s) = args.sigma_psi {
        flag_kv.set("prior", "gaussian");
        flag_kv.set("prior_scale", s);
    }
    if let Some(l) = args.lambda {
        flag_kv.set("l2", l);
    }
    if let Some(d) = &args.dataset {
        flag_kv.set("dataset", d);
    }
    if let Some(p) = &args.preset {
        flag_kv.set("preset", p);
    }
    let file_kv = match &args.common.config {
        Some(p) => KeyValues::parse(&std::fs::read_to_string(p)?)?,
        None => KeyValues::new(),
    };
    let preset_name = flag_kv.get_str("preset").or(file_kv.get_str("preset"));
    let defaults = preset_name.map(preset).transpose()?.unwrap_or_default();
    let allowed: Vec<&str> = MODEL_KEYS
        .iter()
        .chain(TRAIN_KEYS)
        .chain(TRAIN_EXTRA_KEYS)
        .copied()
        .collect();
    let mut kv = layered_config(defaults, args.common.config.as_deref(), &flag_kv, &allowed)?;

    let seed: u64 = kv.get_or("seed", 0)?;
    let spec = kv
        .get_str("dataset")
        .ok_or_else(|| usage("no dataset: pass --dataset, set `dataset` in the config, or use a preset"))?
        .to_string();
    let train_ds = load_data(&spec, &mut data_rng(seed, 1))?;
    let eval_ds = kv
        .get_str("eval_dataset")
        .map(|s| load_data(s, &mut data_rng(seed, 2)))
        .transpose()?;
    let raw = train_ds.kind == DataKind::RawPixels;
    if let Some(e) = &eval_ds {
        if (e.kind == DataKind::RawPixels) != raw {
            return Err(usage("train and eval datasets must both be raw pixels or both not"));
        }
    }
    let base = TrainConfig {
        dequantize: raw,
        l2: if raw { 5e-2 } else { 0.0 },
        ..TrainConfig::default()
    };
    let cfg = TrainConfig::from_kv(&kv, &base)?;
    if !kv.contains("input_shape") {
        kv.set("input_shape", ExampleShape::of_batch(&train_ds.images)?);
    }

    let mut manifest = RunManifest::start("train", seed).with_config(&kv);
    manifest.input(format!("dataset={spec}"));
    if let Some(s) = kv.get_str("eval_dataset") {
        manifest.input(format!("eval_dataset={s}"));
    }
    let (mut model, prior, mut optimizer) = match &args.checkpoint {
        Some(path) => {
            manifest.input(format!("checkpoint={}", path.display()));
            let ck = load_checkpoint(path)?;
            let opt = ck.optimizer.unwrap_or_else(|| OptimizerState::new(&ck.model));
            (ck.model, ck.prior, opt)
        }
        None => {
            let model = build_model(&ModelConfig::from_kv(&kv)?, &mut data_rng(seed, 3))?;
            let opt = OptimizerState::new(&model);
            (model, parse_prior(&kv)?, opt)
        }
    };
    check_input(&model, &train_ds.images, "train data")?;
    if let Some(e) = &eval_ds {
        check_input(&model, &e.images, "eval data")?;
    }
    let data = TrainData {
        train: &train_ds.images,
        eval: eval_ds.as_ref().map(|e| &e.images),
    };
    let metrics = train_until(&mut model, &prior, data, &cfg, &mut optimizer, cfg.steps)?;

    let dir = out_dir(&args.common)?;
    save_checkpoint(
        manifest.output(dir, "model.flw"),
        &Checkpoint {
            model,
            prior,
            optimizer: Some(optimizer),
        },
    )?;
    write_metrics_csv(manifest.output(dir, "metrics.csv"), &metrics)?;
    if let Some(last) = metrics.last() {
        println!(
            "step {} loss {:.6} train_bpd {:.4} eval_bpd {:.4}",
            last.step, last.loss, last.train_bpd, last.eval_bpd
        );
    }
    manifest.finish(dir)
}

#[derive(Serialize)]
struct EvalSummary {
    dataset: String,
    examples: usize,
    mean_prior_term: f64,
    mean_volume_term: f64,
    mean_total: f64,
    mean_bpd: f64,
}

fn output_stem(spec: &str, taken: &[String]) -> String {
    let base = Path::new(spec)
        .file_stem()
        .and_then(|s| s.to_str())
        .filter(|_| Path::new(spec).exists())
        .unwrap_or(spec);
    let clean: String = base
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    let mut stem = clean.clone();
    let mut k = 1;
    while taken.contains(&stem) {
        stem = format!("{clean}_{k}");
        k += 1;
    }
    stem
}

fn shared_hist(
    dir: &Path,
    m: &mut RunManifest,
    stems: &[String],
    cols: &[Vec<f64>],
    suffix: &str,
    bins: usize,
) -> Result<()> {
    let all: Vec<f64> = cols.iter().flatten().copied().collect();
    let Some((lo, hi)) = finite_range(&all) else {
        return Ok(());
    };
    for (stem, col) in stems.iter().zip(cols) {
        write_histogram_csv(
            m.output(dir, &format!("{stem}_{suffix}.csv")),
            &histogram_range(col, bins, lo, hi)?,
        )?;
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let mut flag_kv = flags(&args.common);
    if let Some(b) = args.bins {
        flag_kv.set("bins", b);
    }
    if let Some(l) = args.lambda {
        flag_kv.set("lambda", l);
    }
    let kv = layered_config(
        KeyValues::new(),
        args.common.config.as_deref(),
        &flag_kv,
        &["seed", "bins", "lambda"],
    )?;
    let seed: u64 = kv.get_or("seed", 0)?;
    let bins: usize = kv.get_or("bins", DEFAULT_HISTOGRAM_BINS)?;
    let lambda: Option<f64> = kv.get("lambda")?;
    let mut manifest = RunManifest::start("eval", seed).with_config(&kv);
    manifest.input(format!("checkpoint={}", args.checkpoint.display()));
    let ck = load_checkpoint(&args.checkpoint)?;
    let mut members = vec![ck.model.clone()];
    for p in &args.ensemble {
        manifest.input(format!("ensemble={}", p.display()));
        members.push(load_checkpoint(p)?.model);
    }

    let dir = out_dir(&args.common)?;
    let mut stems = Vec::new();
    let mut rows_per: Vec<Vec<LikelihoodBreakdown>> = Vec::new();
    let mut summaries = Vec::new();
    for (i, spec) in args.dataset.iter().enumerate() {
        manifest.input(format!("dataset={spec}"));
        let ds = load_data(spec, &mut data_rng(seed, 1 + i as u64))?;
        let mut x = eval_tensor(&ds, seed)?;
        if let Some(l) = lambda {
            x = gray_images(&x, l)?;
        }
        check_input(&ck.model, &x, spec)?;
        let rows = log_likelihood(&ck.model, &ck.prior, &x)?;
        let stem = output_stem(spec, &stems);
        write_breakdown_csv(manifest.output(dir, &format!("{stem}_breakdown.csv")), &rows)?;
        if members.len() > 1 {
            let ens = ensemble_loglik(&members, &ck.prior, &x)?;
            let mut w = csv::Writer::from_path(manifest.output(dir, &format!("{stem}_ensemble.csv")))?;
            w.write_record(["example_id", "ensemble_loglik"])?;
            for (j, v) in ens.iter().enumerate() {
                w.write_record([j.to_string(), v.to_string()])?;
            }
            w.flush()?;
        }
        let n = rows.len().max(1) as f64;
        let summary = EvalSummary {
            dataset: spec.clone(),
            examples: rows.len(),
            mean_prior_term: rows.iter().map(|r| r.prior_term).sum::<f64>() / n,
            mean_volume_term: rows.iter().map(|r| r.volume_term).sum::<f64>() / n,
            mean_total: rows.iter().map(|r| r.total).sum::<f64>() / n,
            mean_bpd: mean_bpd(&rows),
        };
        println!(
            "{spec}: n {} total {:.4} prior {:.4} volume {:.4} bpd {:.4}",
            summary.examples, summary.mean_total, summary.mean_prior_term, summary.mean_volume_term, summary.mean_bpd
        );
        summaries.push(summary);
        stems.push(stem);
        rows_per.push(rows);
    }
    let col = |f: fn(&LikelihoodBreakdown) -> f64| -> Vec<Vec<f64>> {
        rows_per.iter().map(|rs| rs.iter().map(f).collect()).collect()
    };
    shared_hist(dir, &mut manifest, &stems, &col(|r| r.total), "hist", bins)?;
    shared_hist(dir, &mut manifest, &stems, &col(|r| r.prior_term), "hist_prior", bins)?;
    shared_hist(dir, &mut manifest, &stems, &col(|r| r.volume_term), "hist_volume", bins)?;
    write_json(manifest.output(dir, "eval_summary.json"), &summaries)?;
    manifest.finish(dir)
}

/// A moments file is either a `DataMoments` object or a bare array of channel variance sums.
fn read_moments(path: &Path) -> Result<DataMoments> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(arr) = value.as_array() {
        let sums = arr
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| usage(format!("{}: non-numeric channel sum", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(DataMoments::from_channel_sums(&sums));
    }
    Ok(serde_json::from_value(value)?)
}

pub fn predict_gap(args: &PredictGapArgs) -> Result<()> {
    let kv = layered_config(
        KeyValues::new(),
        args.common.config.as_deref(),
        &flags(&args.common),
        &["seed"],
    )?;
    let mut manifest = RunManifest::start("predict-gap", kv.get_or("seed", 0)?).with_config(&kv);
    manifest.input(format!("moments_q={}", args.moments_q.display()));
    manifest.input(format!("moments_p={}", args.moments_p.display()));
    let mq = read_moments(&args.moments_q)?;
    let mp = read_moments(&args.moments_p)?;
    let gap = match (&args.checkpoint, &args.alpha) {
        (Some(path), None) => {
            manifest.input(format!("checkpoint={}", path.display()));
            let ck = load_checkpoint(path)?;
            let sigma = match (args.sigma_psi, ck.prior) {
                (Some(s), _) => s,
                (None, Prior::Gaussian { sigma }) => sigma,
                (None, _) => return Err(usage("non-Gaussian prior: pass --sigma-psi")),
            };
            if mq.count == 0 || mp.count == 0 {
                predict_gap_cv(&alpha_coeffs(&ck.model)?, &mq, &mp, sigma)?
            } else {
                predict_gap_model(&ck.model, &mq, &mp, sigma)?
            }
        }
        (None, Some(alpha)) => predict_gap_from_sums(
            alpha,
            &mq.channel_variance_sums,
            &mp.channel_variance_sums,
            args.sigma_psi.unwrap_or(1.0),
        )?,
        _ => return Err(usage("pass exactly one of --checkpoint or --alpha")),
    };
    let dir = out_dir(&args.common)?;
    write_json(manifest.output(dir, "gap.json"), &gap)?;
    println!("predicted gap {:.6} nats", gap.total);
    manifest.finish(dir)
}

pub fn simulate(args: &SimulateBoundsArgs) -> Result<()> {
    const SWEEP_KEYS: &[&str] = &[
        "seed",
        "n_train",
        "n_eval",
        "noise",
        "couplings",
        "hidden",
        "steps",
        "batch_size",
        "lr",
        "bound_points",
    ];
    let kv = layered_config(
        KeyValues::new(),
        args.common.config.as_deref(),
        &flags(&args.common),
        SWEEP_KEYS,
    )?;
    let d = SweepConfig::default();
    let cfg = SweepConfig {
        n_train: kv.get_or("n_train", d.n_train)?,
        n_eval: kv.get_or("n_eval", d.n_eval)?,
        noise: kv.get_or("noise", d.noise)?,
        couplings: kv.get_or("couplings", d.couplings)?,
        hidden: kv.get_or("hidden", d.hidden)?,
        steps: kv.get_or("steps", d.steps)?,
        batch_size: kv.get_or("batch_size", d.batch_size)?,
        lr: kv.get_or("lr", d.lr)?,
        seed: kv.get_or("seed", d.seed)?,
        bound_points: kv.get_or("bound_points", d.bound_points)?,
    };
    let variant: Variant = args.variant.parse()?;
    let mut manifest = RunManifest::start("simulate-bounds", cfg.seed).with_config(&kv);
    manifest.input(format!("dims={:?}", args.dims));
    manifest.input(format!("variant={variant}"));
    let rows = simulate_bounds(&args.dims, variant, &cfg)?;
    let dir = out_dir(&args.common)?;
    write_sweep_csv(std::fs::File::create(manifest.output(dir, "sweep.csv"))?, &rows)?;
    if rows.len() >= 2 {
        let xs: Vec<f64> = rows.iter().map(|r| r.dim as f64).collect();
        let slope = |f: fn(&flowlab::ood::SweepRow) -> f64| trend_slope(&xs, &rows.iter().map(f).collect::<Vec<_>>());
        let summary = serde_json::json!({
            "prior_slope": slope(|r| r.prior_mean),
            "volume_slope": slope(|r| r.volume_mean),
            "total_slope": slope(|r| r.total_mean),
        });
        write_json(manifest.output(dir, "sweep_summary.json"), &summary)?;
    }
    for r in &rows {
        println!(
            "D {:>3}: prior {:>10.4} volume {:>10.4} volume<=0 {} bound {}",
            r.dim, r.prior_mean, r.volume_mean, r.volume_nonpositive, r.bound_satisfied
        );
    }
    manifest.finish(dir)
}

pub fn stats(args: &StatsArgs) -> Result<()> {
    let mut flag_kv = flags(&args.common);
    if let Some(l) = args.lambda {
        flag_kv.set("lambda", l);
    }
    let kv = layered_config(
        KeyValues::new(),
        args.common.config.as_deref(),
        &flag_kv,
        &["seed", "lambda"],
    )?;
    let seed: u64 = kv.get_or("seed", 0)?;
    let mut manifest = RunManifest::start("stats", seed).with_config(&kv);
    manifest.input(format!("dataset={}", args.dataset));
    let ds = load_data(&args.dataset, &mut data_rng(seed, 1))?;
    let mut x = scaled_images(&ds);
    if let Some(l) = kv.get::<f64>("lambda")? {
        x = gray_images(&x, l)?;
    }
    let dir = out_dir(&args.common)?;
    let m = compute_moments(&x)?;
    write_json(manifest.output(dir, "moments.json"), &m)?;
    println!("channel variance sums {:?}", m.channel_variance_sums);
    if let Some(path) = &args.checkpoint {
        manifest.input(format!("checkpoint={}", path.display()));
        let ck = load_checkpoint(path)?;
        let x = eval_tensor(&ds, seed)?;
        let x = match kv.get::<f64>("lambda")? {
            Some(l) => gray_images(&x, l)?,
            None => x,
        };
        check_input(&ck.model, &x, &args.dataset)?;
        write_json(manifest.output(dir, "latent_stats.json"), &latent_stats(&ck.model, &x)?)?;
    }
    manifest.finish(dir)
}

fn draw_samples(ck: &Checkpoint, n: usize, rng: &mut RngState) -> Result<Tensor> {
    let d = ck.model.dim();
    let z = Tensor::new(vec![n, d], (0..n * d).map(|_| ck.prior.sample(rng)).collect())?;
    ck.model.model_inverse(&z)
}

pub fn sample(args: &SampleArgs) -> Result<()> {
    let mut flag_kv = flags(&args.common);
    if let Some(n) = args.n {
        flag_kv.set("n", n);
    }
    let kv = layered_config(
        KeyValues::new(),
        args.common.config.as_deref(),
        &flag_kv,
        &["seed", "n"],
    )?;
    let seed: u64 = kv.get_or("seed", 0)?;
    let n: usize = kv.get_or("n", 100)?;
    let mut manifest = RunManifest::start("sample", seed).with_config(&kv);
    manifest.input(format!("checkpoint={}", args.checkpoint.display()));
    let ck = load_checkpoint(&args.checkpoint)?;
    let x = draw_samples(&ck, n, &mut RngState::new(seed))?;
    let dir = out_dir(&args.common)?;
    write_tensor(manifest.output(dir, "samples.flt"), &x)?;
    let shape = ck.model.input_shape();
    if shape.h == 1 && shape.w == 1 {
        let flat = x.clone().reshape(vec![n, shape.c])?;
        write_points_csv(manifest.output(dir, "samples.csv"), &flat)?;
    }
    println!("wrote {n} samples of shape {}", ck.model.input_shape());
    manifest.finish(dir)
}

/// Midpoint test `f((a+b)/2) = (f(a)+f(b))/2` over consecutive point pairs.
fn is_affine(model: &FlowModel, points: &Tensor) -> Result<bool> {
    for i in 1..points.n_examples() {
        let (a, b) = (points.example(i - 1), points.example(i));
        let mid: Vec<f64> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        let (fa, fb, fm) = (
            model.forward_example(a)?.0,
            model.forward_example(b)?.0,
            model.forward_example(&mid)?.0,
        );
        let scale = 1.0 + fa.iter().chain(&fb).fold(0.0f64, |m, v| m.max(v.abs()));
        if fm
            .iter()
            .zip(fa.iter().zip(&fb))
            .any(|(m, (x, y))| (m - 0.5 * (x + y)).abs() > 1e-9 * scale)
        {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Serialize)]
struct ChecksOutput {
    points: usize,
    lipschitz: f64,
    lipschitz_source: String,
    reports: Vec<BoundReport>,
    concentration: Option<Vec<flowlab::ood::ConcentrationRow>>,
    hessian: Option<HessianCheck>,
    affine: bool,
    notes: Vec<String>,
    all_satisfied: bool,
}

pub fn checks(args: &ChecksArgs) -> Result<()> {
    let kv = layered_config(
        KeyValues::new(),
        args.common.config.as_deref(),
        &flags(&args.common),
        &["seed", "points", "concentration_samples"],
    )?;
    let seed: u64 = kv.get_or("seed", 0)?;
    let n_points: usize = kv.get_or("points", 100)?;
    let n_conc: usize = kv.get_or("concentration_samples", 5000)?;
    let mut manifest = RunManifest::start("checks", seed).with_config(&kv);
    manifest.input(format!("checkpoint={}", args.checkpoint.display()));
    let ck = load_checkpoint(&args.checkpoint)?;
    let root = RngState::new(seed);
    let points = match &args.dataset {
        Some(spec) => {
            manifest.input(format!("dataset={spec}"));
            let x = eval_tensor(&load_data(spec, &mut root.child(1))?, seed)?;
            check_input(&ck.model, &x, spec)?;
            x.select(&(0..n_points.min(x.n_examples())).collect::<Vec<_>>())
        }
        None => draw_samples(&ck, n_points, &mut root.child(2))?,
    };
    let model = &ck.model;
    let mut notes = Vec::new();
    let had = hadamard_check(model, &points)?;
    let mut lipschitz = had.lipschitz_estimate;
    let mut source = "max finite-difference Jacobian column norm (lower bound on the true constant)".to_string();
    if let Ok(s) = conv_structure(model) {
        let spectral = s.total_kernel().spectral_norm();
        if spectral > lipschitz {
            lipschitz = spectral;
            source = "spectral norm of the composed 1x1 kernels".into();
        }
    }
    let mut reports = vec![had.hadamard, had.lipschitz];
    match likelihood_bound_check(model, &ck.prior, &points, lipschitz) {
        Ok(r) => reports.push(r),
        Err(Error::InvalidConfig(m)) => notes.push(format!("likelihood bound skipped: {m}")),
        Err(e) => return Err(e),
    }

    let m = compute_moments(&points)?;
    let sd: Vec<f64> = m.variance.iter().map(|v| v.sqrt()).collect();
    let scale = lipschitz * m.variance.iter().sum::<f64>().sqrt();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let deltas: Vec<f64> = [0.5, 1.0, 1.5, 2.0, 3.0].iter().map(|k| k * scale).collect();
    let f = |x: &[f64]| model.forward_example(x).map(|(z, _)| z).expect("dimension checked");
    let mean = m.mean.clone();
    let sampler = |rng: &mut RngState| mean.iter().zip(&sd).map(|(m, s)| m + s * rng.normal()).collect();
    let concentration = match concentration_check(f, lipschitz, &m.mean, sampler, &deltas, n_conc, &mut root.child(3)) {
        Ok(c) => {
            reports.push(c.report);
            Some(c.rows)
        }
        Err(Error::InvalidLipschitz { claimed, observed }) => {
            notes.push(format!(
                "concentration check not applicable: sampled pairs exceed L = {claimed} (observed {observed})"
            ));
            None
        }
        Err(e) => return Err(e),
    };

    let hessian = if model.is_constant_volume() && matches!(ck.prior, Prior::Gaussian { .. }) {
        match hessian_check_cv(model, &ck.prior, points.example(0)) {
            Ok(h) => Some(h),
            Err(Error::InvalidConfig(m) | Error::NotConstantVolume(m)) => {
                notes.push(format!("hessian check skipped: {m}"));
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        notes.push("hessian check needs a constant-volume model with a Gaussian prior".into());
        None
    };
    let affine = is_affine(model, &points)?;
    if hessian.is_some() && !affine {
        notes.push("model is not affine at the sampled points; curvature results are informational only".into());
    }
    if let Some(h) = hessian.as_ref().filter(|_| affine) {
        if !h.closed_form_ok {
            notes.push(
                "closed-form -alpha^2/sigma^2 curvature differs from FD; the exact form -||W e_c||^2/sigma^2 is the one checked"
                    .into(),
            );
        }
    }
    let all_satisfied = reports.iter().all(|r| r.satisfied)
        && hessian
            .as_ref()
            .filter(|_| affine)
            .is_none_or(|h| h.volume_ok && h.exact_form_ok);
    for r in &reports {
        println!(
            "{:<22} {} ({}/{} points)",
            r.name,
            if r.satisfied { "ok" } else { "VIOLATED" },
            r.checked - r.violations,
            r.checked
        );
    }
    let out = ChecksOutput {
        points: points.n_examples(),
        lipschitz,
        lipschitz_source: source,
        reports,
        concentration,
        hessian,
        affine,
        notes,
        all_satisfied,
    };
    let dir = out_dir(&args.common)?;
    write_json(manifest.output(dir, "checks.json"), &out)?;
    println!("all satisfied: {all_satisfied}");
    manifest.finish(dir)
}
