//! Subcommand implementations: thin glue between clap and the library.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Deserialize;

use fdd_core::checkpoint::{load_checkpoint, save_checkpoint};
use fdd_core::corpus::{self, CorpusSpec, Generator};
use fdd_core::dae::{self, DaeConfig, DaeModel, NoiseSpec, StopReason, TrainingConfig};
use fdd_core::disturb::{self, DisturbanceKind, DisturbanceSpec};
use fdd_core::error::Error;
use fdd_core::featfile;
use fdd_core::gradcam as gc;
use fdd_core::harness;
use fdd_core::imageio::{self, ImageTensor};
use fdd_core::pipeline::{self, Critic, MatchMode, MetricReport, MetricSpec};
use fdd_core::util::{derive_seed, hex};
use fdd_core::{FeatureSet, Result};

/// Feature caching directory; when set, `score` persists encoded
/// features keyed by (encoder hash, image-set hash).
pub const CACHE_DIR_ENV: &str = "FDD_CACHE_DIR";

// --- train-dae ---------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    noise: NoiseSection,
    #[serde(default)]
    train: TrainSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ModelSection {
    input_h: usize,
    input_w: usize,
    input_c: usize,
    encoder_channels: Vec<usize>,
    latent_dim: usize,
    seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = DaeConfig::desk(0);
        ModelSection {
            input_h: d.input_h,
            input_w: d.input_w,
            input_c: d.input_c,
            encoder_channels: d.encoder_channels,
            latent_dim: d.latent_dim,
            seed: d.seed,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct NoiseSection {
    sigma: f64,
    seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection { sigma: 0.1, seed: 0 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainSection {
    batch_size: usize,
    lr: f64,
    max_epochs: usize,
    early_stop_patience: usize,
    holdout_fraction: f64,
    seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainingConfig::default();
        TrainSection {
            batch_size: t.batch_size,
            lr: t.lr,
            max_epochs: t.max_epochs,
            early_stop_patience: t.early_stop_patience,
            holdout_fraction: t.holdout_fraction,
            seed: t.seed,
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn train_dae(
    corpus_arg: &str,
    config: &Path,
    out: &Path,
    resume: Option<&Path>,
    seed: Option<u64>,
    history: Option<&Path>,
    strict: bool,
) -> Result<()> {
    let text = fs::read_to_string(config)
        .map_err(|e| Error::input(format!("cannot read config {}: {e}", config.display())))?;
    let mut file: TrainFile =
        toml::from_str(&text).map_err(|e| Error::config(e.to_string()))?;
    if let Some(s) = seed {
        file.model.seed = derive_seed(s, 0);
        file.noise.seed = derive_seed(s, 1);
        file.train.seed = derive_seed(s, 2);
    }

    let cfg = DaeConfig {
        input_h: file.model.input_h,
        input_w: file.model.input_w,
        input_c: file.model.input_c,
        encoder_channels: file.model.encoder_channels.clone(),
        latent_dim: file.model.latent_dim,
        seed: file.model.seed,
    };
    let model = match resume {
        Some(p) => {
            let m = load_checkpoint(p)?;
            let c = &m.config;
            if (c.input_h, c.input_w, c.input_c, c.latent_dim)
                != (cfg.input_h, cfg.input_w, cfg.input_c, cfg.latent_dim)
                || c.encoder_channels != cfg.encoder_channels
            {
                return Err(Error::config(format!(
                    "resume checkpoint architecture {}x{}x{} channels {:?} latent {} \
                     does not match the [model] section",
                    c.input_h, c.input_w, c.input_c, c.encoder_channels, c.latent_dim
                )));
            }
            m
        }
        None => dae::build_dae(&cfg)?,
    };

    let images = load_corpus(corpus_arg, &model.config, strict)?;
    let noise = NoiseSpec {
        sigma: file.noise.sigma,
        seed: file.noise.seed,
    };
    let tc = TrainingConfig {
        batch_size: file.train.batch_size,
        lr: file.train.lr,
        max_epochs: file.train.max_epochs,
        early_stop_patience: file.train.early_stop_patience,
        holdout_fraction: file.train.holdout_fraction,
        seed: file.train.seed,
    };

    let outcome = dae::train_dae(model, &images, &noise, &tc)?;
    if outcome.stop == StopReason::NanAbort {
        eprintln!("warning: loss went non-finite; keeping the best earlier checkpoint");
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_checkpoint(&outcome.model, out)?;

    let hist_path = history
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(format!("{}.history.csv", out.display())));
    let mut csv = String::from("epoch,loss\n");
    for r in &outcome.model.history {
        csv.push_str(&format!("{},{}\n", r.epoch, r.train_loss));
    }
    fs::write(&hist_path, csv)?;

    println!(
        "trained {} epoch(s), stop={:?}, best epoch {} (monitored loss {:.6})",
        outcome.model.history.len(),
        outcome.stop,
        outcome.best_epoch,
        outcome.best_loss,
    );
    println!("checkpoint: {}", out.display());
    println!("history: {}", hist_path.display());
    Ok(())
}

// --- score -------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn score(
    metric: &str,
    encoder: &Path,
    real_dir: &Path,
    gen_dir: &Path,
    json: bool,
    out: Option<&Path>,
    match_mode: &str,
    seed: u64,
    strict: bool,
) -> Result<()> {
    let model = load_checkpoint(encoder)?;
    let spec = MetricSpec {
        critic: Critic::parse(metric)?,
        match_mode: MatchMode::parse(match_mode)?,
        seed,
    };
    let real = load_dir(real_dir, &model, strict)?;
    let gen = load_dir(gen_dir, &model, strict)?;

    let report = match cache_dir() {
        Some(dir) => evaluate_disk_cached(&spec, &model, &real, &gen, &dir)?,
        None => pipeline::evaluate(&spec, &model, &real, &gen)?,
    };

    let line = report.json_line();
    if let Some(p) = out {
        fs::write(p, format!("{line}\n"))?;
    }
    if json {
        println!("{line}");
    } else {
        println!("{:.6}", report.score);
    }
    Ok(())
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

/// Encode through an on-disk feature cache in `dir`.
fn disk_cached_features(model: &DaeModel, images: &[ImageTensor], dir: &Path) -> Result<FeatureSet> {
    fs::create_dir_all(dir)?;
    let ehash = model.encoder_hash();
    let name = format!(
        "{}-{}.feat",
        hex(&ehash),
        hex(&pipeline::image_set_hash(images))
    );
    let path = dir.join(name);
    if path.is_file() {
        let file = featfile::read_features(&path)?;
        if file.encoder_hash == ehash {
            return Ok(file.features);
        }
    }
    let feats = dae::encode(model, images)?;
    featfile::write_features(&feats, &ehash, &path)?;
    Ok(feats)
}

fn evaluate_disk_cached(
    spec: &MetricSpec,
    model: &DaeModel,
    real: &[ImageTensor],
    gen: &[ImageTensor],
    dir: &Path,
) -> Result<MetricReport> {
    if real.len() < 2 || gen.len() < 2 {
        return Err(Error::input(format!(
            "evaluation needs ≥ 2 images per set, got {} real and {} generated",
            real.len(),
            gen.len()
        )));
    }
    let start = Instant::now();
    let fr = disk_cached_features(model, real, dir)?;
    let fg = disk_cached_features(model, gen, dir)?;
    let score = pipeline::score_features(spec, &fr, &fg)?;
    Ok(MetricReport {
        metric: spec.critic.metric_name().to_string(),
        score,
        n_real: real.len(),
        n_gen: gen.len(),
        seed: spec.seed,
        config_hash: spec.config_hash(model),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

// --- disturb -----------------------------------------------------------

pub fn disturb(
    input: &Path,
    out: &Path,
    spec_str: &str,
    seed: Option<u64>,
    strict: bool,
) -> Result<()> {
    let mut spec = DisturbanceSpec::parse(spec_str)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    if spec.alpha > 0.0 {
        let tiles = match spec.kind {
            DisturbanceKind::PatchMask => Some(disturb::mask_tile_count(spec.alpha, spec.patch_grid)),
            DisturbanceKind::PatchSwap | DisturbanceKind::Mixed => {
                Some(disturb::swap_pair_count(spec.alpha, spec.patch_grid))
            }
            _ => None,
        };
        if tiles == Some(0) {
            eprintln!(
                "warning: alpha {} rounds to zero tiles on a {}x{} grid; images pass through unchanged",
                spec.alpha, spec.patch_grid, spec.patch_grid
            );
        }
    }

    // Native resolution: disturbances act on images as stored.
    let paths = imageio::png_paths(input)?;
    let mut images = Vec::new();
    let mut names = Vec::new();
    for p in &paths {
        let loaded = imageio::decode_png(p).and_then(|raw| imageio::preprocess(&raw, raw.h, raw.w, raw.c));
        match loaded {
            Ok(img) => {
                images.push(img);
                names.push(p.file_name().map(|n| n.to_owned()).ok_or_else(|| {
                    Error::input(format!("path {} has no file name", p.display()))
                })?);
            }
            Err(e) if !strict => eprintln!("warning: skipping {}: {e}", p.display()),
            Err(e) => return Err(e),
        }
    }
    if images.is_empty() {
        return Err(Error::input(format!(
            "no usable PNG images in {}",
            input.display()
        )));
    }

    let disturbed = disturb::apply_set(&images, &spec)?;
    fs::create_dir_all(out)?;
    for (img, name) in disturbed.iter().zip(&names) {
        imageio::save_png(img, &out.join(name))?;
    }
    println!("disturbed {} image(s) -> {}", disturbed.len(), out.display());
    Ok(())
}

// --- sensitivity -------------------------------------------------------

fn default_disturbances() -> Vec<DisturbanceSpec> {
    vec![
        DisturbanceSpec::new(DisturbanceKind::SaltPepper, 0.01, 0),
        DisturbanceSpec::new(DisturbanceKind::Gaussian, 0.01, 0),
        DisturbanceSpec::new(DisturbanceKind::PatchMask, 0.25, 0),
        DisturbanceSpec::new(DisturbanceKind::PatchSwap, 0.25, 0),
        DisturbanceSpec::new(DisturbanceKind::Mixed, 0.25, 0),
    ]
}

fn parse_disturbance_list(s: &str) -> Result<Vec<DisturbanceSpec>> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| DisturbanceSpec::parse(p.trim()))
        .collect()
}

fn parse_metric_list(s: &str, seed: u64) -> Result<Vec<MetricSpec>> {
    let specs: Vec<MetricSpec> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| Critic::parse(p.trim()).map(|c| MetricSpec::new(c, seed)))
        .collect::<Result<_>>()?;
    if specs.is_empty() {
        return Err(Error::input("no metrics given"));
    }
    Ok(specs)
}

#[allow(clippy::too_many_arguments)]
pub fn sensitivity(
    encoder: &Path,
    data: &Path,
    groups: usize,
    k: usize,
    disturbances: Option<&str>,
    metrics: &str,
    seed: u64,
    out_dir: &Path,
    strict: bool,
) -> Result<()> {
    let model = load_checkpoint(encoder)?;
    let images = load_dir(data, &model, strict)?;
    let cfg = harness::SensitivityConfig {
        n_groups: groups,
        group_size: k,
        disturbances: match disturbances {
            Some(s) => parse_disturbance_list(s)?,
            None => default_disturbances(),
        },
        metrics: parse_metric_list(metrics, seed)?,
        seed,
    };
    let result = harness::sensitivity_test(&model, &images, &cfg)?;

    fs::create_dir_all(out_dir)?;
    let cells_path = out_dir.join("sensitivity.csv");
    let summary_path = out_dir.join("sensitivity_summary.csv");
    fs::write(&cells_path, harness::sensitivity_csv(&result))?;
    fs::write(&summary_path, harness::sensitivity_summary_csv(&result))?;

    for s in &result.summary {
        println!(
            "{} @ {}: mean={:.6} std={:.6}",
            s.metric, s.disturbance, s.mean, s.std
        );
    }
    println!("wrote {} and {}", cells_path.display(), summary_path.display());
    Ok(())
}

// --- consistency -------------------------------------------------------

fn default_ladder(kind: DisturbanceKind) -> Vec<f64> {
    let max = match kind {
        DisturbanceKind::Gaussian => 0.16,
        DisturbanceKind::PatchSwap | DisturbanceKind::Mixed => 0.5,
        DisturbanceKind::SaltPepper | DisturbanceKind::PatchMask => 1.0,
    };
    [0.25, 0.5, 0.75, 1.0].iter().map(|f| f * max).collect()
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::input(format!("bad ladder level `{}`", p.trim())))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn consistency(
    encoder: &Path,
    data: &Path,
    kind: &str,
    ladder: Option<&str>,
    grid: usize,
    k: usize,
    metrics: &str,
    seed: u64,
    out: &Path,
    strict: bool,
) -> Result<()> {
    let model = load_checkpoint(encoder)?;
    let images = load_dir(data, &model, strict)?;
    let dkind = DisturbanceKind::parse(kind)?;
    let levels = match ladder {
        Some(s) => parse_f64_list(s)?,
        None => default_ladder(dkind),
    };
    let mut base = DisturbanceSpec::new(dkind, 0.0, seed);
    base.patch_grid = grid;
    let mspecs = parse_metric_list(metrics, seed)?;

    let result = harness::consistency_test(&model, &images, &base, &levels, &mspecs, k, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, harness::consistency_csv(&result))?;

    for (metric, ok) in &result.verdicts {
        println!("{metric} monotone={ok}");
    }
    println!("wrote {}", out.display());
    Ok(())
}

// --- rank --------------------------------------------------------------

pub fn rank(scores: &Path, json: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(scores)
        .map_err(|e| Error::input(format!("cannot read {}: {e}", scores.display())))?;
    let records = harness::parse_ranking_csv(&text)?;
    let result = harness::model_ranking(&records)?;

    println!("human order: [{}]", result.human_order.join(", "));
    for m in &result.per_metric {
        let r = m
            .pearson_r
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "undefined".to_string());
        println!(
            "{} order: [{}] agrees_with_human={} pearson_r={}",
            m.metric,
            m.order.join(", "),
            m.agrees_with_human,
            r
        );
    }
    let mut disagreements = Vec::new();
    for (i, a) in result.per_metric.iter().enumerate() {
        for b in &result.per_metric[i + 1..] {
            if a.order != b.order {
                disagreements.push(format!("{} vs {}", a.metric, b.metric));
            }
        }
    }
    if !disagreements.is_empty() {
        println!("disagreement: {} rank models differently", disagreements.join(", "));
    }

    if let Some(p) = json {
        fs::write(p, harness::ranking_json(&result))?;
    }
    Ok(())
}

// --- gradcam -----------------------------------------------------------

pub fn gradcam(
    encoder: &Path,
    images_dir: &Path,
    layer: Option<&str>,
    out_dir: &Path,
    strict: bool,
) -> Result<()> {
    let model = load_checkpoint(encoder)?;
    let images = load_dir(images_dir, &model, strict)?;
    let layer_id = match layer {
        Some(l) => l.to_string(),
        None => model
            .conv_layer_ids()
            .last()
            .cloned()
            .expect("a valid config has at least one conv layer"),
    };
    let maps = gc::gradcam(&model, &images, &layer_id)?;

    fs::create_dir_all(out_dir)?;
    for (i, (img, map)) in images.iter().zip(&maps).enumerate() {
        let over = gc::overlay(img, map)?;
        imageio::save_png(&over, &out_dir.join(format!("gradcam_{i:05}.png")))?;
        fs::write(
            out_dir.join(format!("gradcam_{i:05}.csv")),
            gc::attention_csv(map),
        )?;
    }
    println!(
        "wrote {} attention map(s) at {} -> {}",
        maps.len(),
        layer_id,
        out_dir.display()
    );
    Ok(())
}

// --- make-corpus -------------------------------------------------------

pub fn make_corpus(generator: &str, count: usize, size: usize, seed: u64, out: &Path) -> Result<()> {
    let spec = CorpusSpec::new(Generator::parse(generator)?, count, size, seed);
    let images = corpus::generate(&spec)?;
    fs::create_dir_all(out)?;
    for (i, img) in images.iter().enumerate() {
        imageio::save_png(img, &out.join(format!("img_{i:05}.png")))?;
    }
    println!("wrote {} image(s) -> {}", images.len(), out.display());
    Ok(())
}

// --- shared helpers ----------------------------------------------------

/// Loads a directory of PNGs at the model's input shape.
fn load_dir(dir: &Path, model: &DaeModel, strict: bool) -> Result<Vec<ImageTensor>> {
    let (images, skipped) = imageio::load_images(
        dir,
        model.config.input_h,
        model.config.input_w,
        model.config.input_c,
        strict,
    )?;
    if skipped > 0 {
        eprintln!(
            "warning: skipped {skipped} undecodable file(s) in {}",
            dir.display()
        );
    }
    Ok(images)
}

/// `--corpus` accepts a directory or a generator spec like
/// `shapes:count=500,size=64,seed=1`.
fn load_corpus(arg: &str, cfg: &DaeConfig, strict: bool) -> Result<Vec<ImageTensor>> {
    let path = Path::new(arg);
    if path.is_dir() {
        let (images, skipped) =
            imageio::load_images(path, cfg.input_h, cfg.input_w, cfg.input_c, strict)?;
        if skipped > 0 {
            eprintln!("warning: skipped {skipped} undecodable file(s) in {arg}");
        }
        return Ok(images);
    }
    let spec = parse_corpus_string(arg)?;
    if spec.size != cfg.input_h || spec.size != cfg.input_w || cfg.input_c != 1 {
        return Err(Error::config(format!(
            "generated corpus is {0}x{0}x1 but the model expects {1}x{2}x{3}",
            spec.size, cfg.input_h, cfg.input_w, cfg.input_c
        )));
    }
    corpus::generate(&spec)
}

/// Parses `generator:count=N[,size=S][,seed=K]`.
fn parse_corpus_string(s: &str) -> Result<CorpusSpec> {
    let (gen_str, rest) = match s.split_once(':') {
        Some((g, r)) => (g, r),
        None => (s, ""),
    };
    let generator = Generator::parse(gen_str.trim()).map_err(|_| {
        Error::input(format!(
            "corpus `{s}` is neither an existing directory nor a generator spec"
        ))
    })?;
    let mut count = None;
    let mut size = 64usize;
    let mut seed = 0u64;
    for part in rest.split(',').filter(|p| !p.trim().is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::input(format!("malformed corpus option `{part}`")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "count" => {
                count = Some(value.parse::<usize>().map_err(|_| {
                    Error::input(format!("bad count `{value}` in corpus spec"))
                })?)
            }
            "size" => {
                size = value.parse::<usize>().map_err(|_| {
                    Error::input(format!("bad size `{value}` in corpus spec"))
                })?
            }
            "seed" => {
                seed = value.parse::<u64>().map_err(|_| {
                    Error::input(format!("bad seed `{value}` in corpus spec"))
                })?
            }
            other => return Err(Error::input(format!("unknown corpus option `{other}`"))),
        }
    }
    let count = count.ok_or_else(|| Error::input("corpus spec needs count=<n>"))?;
    Ok(CorpusSpec::new(generator, count, size, seed))
}
