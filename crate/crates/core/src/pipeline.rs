//! End-to-end metric evaluation: preprocess → encode → critic.
//!
//! A `MetricSpec` names a critic (Fréchet → "fdd", polynomial-kernel
//! MMD → "kdd", persistence topology → "tdd"), a matched-N mode, and a
//! seed; the encoder model is passed alongside. Feature rows are
//! sorted canonically before any critic runs, so scores are invariant
//! to the bitwise level under reordering of either image set, and
//! seeded subsampling stays reproducible.
//!
//! A `FeatureCache` keyed by (encoder digest, image-set digest) lets
//! experiment harnesses encode each set exactly once per encoder.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::critics::{
    frechet_distance, mmd2_poly, subsample_rows, summarize, topology_distance, LpExponent,
    PolyKernel,
};
use crate::dae::{encode, DaeModel};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::imageio::ImageTensor;
use crate::util::{derive_seed, sha256, sha256_hex};

/// Distribution-distance critic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Critic {
    Frechet,
    Mmd2Poly,
    Topology,
}

impl Critic {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "frechet" | "fdd" => Ok(Critic::Frechet),
            "mmd2_poly" | "kdd" => Ok(Critic::Mmd2Poly),
            "topology" | "tdd" => Ok(Critic::Topology),
            other => Err(Error::input(format!("unknown critic `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Critic::Frechet => "frechet",
            Critic::Mmd2Poly => "mmd2_poly",
            Critic::Topology => "topology",
        }
    }

    /// Metric label used in reports.
    pub fn metric_name(&self) -> &'static str {
        match self {
            Critic::Frechet => "fdd",
            Critic::Mmd2Poly => "kdd",
            Critic::Topology => "tdd",
        }
    }
}

/// How to reconcile sets of different sizes before the critic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MatchMode {
    /// Leave sizes as they are (critics that need matched N handle it
    /// themselves).
    #[default]
    None,
    /// Seeded subsample of the larger set down to the smaller N.
    Seeded,
    /// Deterministic decimation: every (n/k)-th canonical row. Needs
    /// the larger size to be a multiple of the smaller.
    Stride,
}

impl MatchMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MatchMode::None),
            "seeded" => Ok(MatchMode::Seeded),
            "stride" => Ok(MatchMode::Stride),
            other => Err(Error::input(format!("unknown match mode `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MatchMode::None => "none",
            MatchMode::Seeded => "seeded",
            MatchMode::Stride => "stride",
        }
    }
}

/// One metric configuration (the encoder travels separately).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSpec {
    pub critic: Critic,
    pub match_mode: MatchMode,
    pub seed: u64,
}

impl MetricSpec {
    pub fn new(critic: Critic, seed: u64) -> Self {
        MetricSpec {
            critic,
            match_mode: MatchMode::None,
            seed,
        }
    }

    /// Canonical description of (spec, encoder); its digest goes into
    /// every report.
    pub fn canonical_string(&self, model: &DaeModel) -> String {
        let mut s = String::new();
        write!(
            s,
            "critic={};match={};seed={};encoder={};input={}x{}x{};latent={}",
            self.critic.name(),
            self.match_mode.name(),
            self.seed,
            crate::util::hex(&model.encoder_hash()),
            model.config.input_h,
            model.config.input_w,
            model.config.input_c,
            model.config.latent_dim,
        )
        .expect("string write");
        s
    }

    pub fn config_hash(&self, model: &DaeModel) -> String {
        sha256_hex(self.canonical_string(model).as_bytes())
    }
}

/// Result of one evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub score: f64,
    pub n_real: usize,
    pub n_gen: usize,
    pub seed: u64,
    pub config_hash: String,
    /// Wall time is metadata: excluded from CSV rows so reruns are
    /// byte-identical.
    pub wall_time_s: f64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "metric,score,n_real,n_gen,seed,config_hash";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.metric, self.score, self.n_real, self.n_gen, self.seed, self.config_hash
        )
    }

    pub fn json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Cache of encoded feature sets keyed by (encoder, image contents).
#[derive(Debug, Default)]
pub struct FeatureCache {
    map: HashMap<([u8; 32], [u8; 32]), FeatureSet>,
    encode_calls: usize,
}

/// Digest of an image set (order-sensitive over per-image digests).
pub fn image_set_hash(images: &[ImageTensor]) -> [u8; 32] {
    let mut bytes = Vec::with_capacity(images.len() * 32);
    for img in images {
        bytes.extend_from_slice(&img.content_hash());
    }
    sha256(&bytes)
}

impl FeatureCache {
    pub fn new() -> Self {
        FeatureCache::default()
    }

    /// Number of times the encoder actually ran (cache misses).
    pub fn encode_calls(&self) -> usize {
        self.encode_calls
    }

    /// Returns the latent features for an image set, encoding at most
    /// once per (encoder, contents) pair.
    pub fn features_for(&mut self, model: &DaeModel, images: &[ImageTensor]) -> Result<FeatureSet> {
        let key = (model.encoder_hash(), image_set_hash(images));
        if let Some(hit) = self.map.get(&key) {
            return Ok(hit.clone());
        }
        self.encode_calls += 1;
        let features = encode(model, images)?;
        self.map.insert(key, features.clone());
        Ok(features)
    }
}

/// Sorts rows lexicographically (total order over f64 bits), making
/// downstream scores independent of input image order.
fn canonical_rows(set: &FeatureSet) -> Result<FeatureSet> {
    let mut idx: Vec<usize> = (0..set.n()).collect();
    idx.sort_by(|&i, &j| {
        let (a, b) = (set.row(i), set.row(j));
        for (x, y) in a.iter().zip(b) {
            let ord = x.total_cmp(y);
            if ord != std::cmp::Ordering::Equal {
                return ord;
            }
        }
        std::cmp::Ordering::Equal
    });
    set.select(&idx)
}

fn matched(
    spec: &MetricSpec,
    a: FeatureSet,
    b: FeatureSet,
) -> Result<(FeatureSet, FeatureSet)> {
    if a.n() == b.n() || spec.match_mode == MatchMode::None {
        return Ok((a, b));
    }
    let target = a.n().min(b.n());
    let shrink = |set: FeatureSet| -> Result<FeatureSet> {
        if set.n() == target {
            return Ok(set);
        }
        match spec.match_mode {
            MatchMode::None => unreachable!(),
            MatchMode::Seeded => subsample_rows(&set, target, derive_seed(spec.seed, 2)),
            MatchMode::Stride => {
                if !set.n().is_multiple_of(target) {
                    return Err(Error::input(format!(
                        "stride matching needs divisible sizes, got {} vs {target}",
                        set.n()
                    )));
                }
                let step = set.n() / target;
                let idx: Vec<usize> = (0..target).map(|i| i * step).collect();
                set.select(&idx)
            }
        }
    };
    Ok((shrink(a)?, shrink(b)?))
}

/// Scores two already-encoded feature sets under a spec. Rows are
/// canonicalized here, so callers need not worry about ordering.
pub fn score_features(spec: &MetricSpec, real: &FeatureSet, gen: &FeatureSet) -> Result<f64> {
    if real.dim() != gen.dim() {
        return Err(Error::input(format!(
            "feature dimensions differ: {} vs {}",
            real.dim(),
            gen.dim()
        )));
    }
    let (a, b) = matched(spec, canonical_rows(real)?, canonical_rows(gen)?)?;
    let score = match spec.critic {
        Critic::Frechet => frechet_distance(&summarize(&a)?, &summarize(&b)?)?,
        Critic::Mmd2Poly => mmd2_poly(&a, &b, PolyKernel::default_for_dim(a.dim()))?,
        Critic::Topology => topology_distance(&a, &b, LpExponent::default(), derive_seed(spec.seed, 1))?,
    };
    if matches!(spec.critic, Critic::Frechet | Critic::Topology) && score < 0.0 {
        return Err(Error::numerical(format!(
            "{} returned negative score {score}",
            spec.critic.metric_name()
        )));
    }
    if !score.is_finite() {
        return Err(Error::numerical(format!(
            "{} returned non-finite score {score}",
            spec.critic.metric_name()
        )));
    }
    Ok(score)
}

fn validate_sets(real: &[ImageTensor], gen: &[ImageTensor]) -> Result<()> {
    if real.len() < 2 || gen.len() < 2 {
        return Err(Error::input(format!(
            "evaluation needs ≥ 2 images per set, got {} real and {} generated",
            real.len(),
            gen.len()
        )));
    }
    Ok(())
}

/// Evaluates one spec on one (real, generated) pair through a cache.
pub fn evaluate_cached(
    spec: &MetricSpec,
    model: &DaeModel,
    real: &[ImageTensor],
    gen: &[ImageTensor],
    cache: &mut FeatureCache,
) -> Result<MetricReport> {
    validate_sets(real, gen)?;
    let start = Instant::now();
    let fr = cache.features_for(model, real)?;
    let fg = cache.features_for(model, gen)?;
    let score = score_features(spec, &fr, &fg)?;
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

/// Evaluates one spec on one pair with a throwaway cache.
pub fn evaluate(
    spec: &MetricSpec,
    model: &DaeModel,
    real: &[ImageTensor],
    gen: &[ImageTensor],
) -> Result<MetricReport> {
    evaluate_cached(spec, model, real, gen, &mut FeatureCache::new())
}

/// Cross-product evaluation: pairs outer, specs inner, sharing one
/// feature cache so each set is encoded once per encoder.
pub fn evaluate_matrix(
    specs: &[(MetricSpec, &DaeModel)],
    pairs: &[(&[ImageTensor], &[ImageTensor])],
    cache: &mut FeatureCache,
) -> Result<Vec<MetricReport>> {
    let mut reports = Vec::with_capacity(specs.len() * pairs.len());
    for &(real, gen) in pairs {
        for (spec, model) in specs {
            reports.push(evaluate_cached(spec, model, real, gen, cache)?);
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate, CorpusSpec, Generator};
    use crate::dae::{build_dae, DaeConfig};

    fn tiny_model(seed: u64) -> DaeModel {
        build_dae(&DaeConfig {
            input_h: 16,
            input_w: 16,
            input_c: 1,
            encoder_channels: vec![4],
            latent_dim: 8,
            seed,
        })
        .unwrap()
    }

    fn tiny_corpus(count: usize, seed: u64) -> Vec<ImageTensor> {
        let mut spec = CorpusSpec::new(Generator::Shapes, count, 16, seed);
        spec.params.scale = (0.2, 0.35);
        generate(&spec).unwrap()
    }

    #[test]
    fn identical_sets_score_zero_fdd() {
        let model = tiny_model(1);
        let imgs = tiny_corpus(8, 2);
        let report = evaluate(
            &MetricSpec::new(Critic::Frechet, 0),
            &model,
            &imgs,
            &imgs,
        )
        .unwrap();
        assert!(report.score.abs() < 1e-6, "score {}", report.score);
        assert_eq!(report.metric, "fdd");
        assert_eq!((report.n_real, report.n_gen), (8, 8));
    }

    #[test]
    fn scores_are_deterministic_bits() {
        let model = tiny_model(3);
        let real = tiny_corpus(7, 4);
        let gen = tiny_corpus(7, 5);
        for critic in [Critic::Frechet, Critic::Mmd2Poly, Critic::Topology] {
            let spec = MetricSpec::new(critic, 9);
            let a = evaluate(&spec, &model, &real, &gen).unwrap().score;
            let b = evaluate(&spec, &model, &real, &gen).unwrap().score;
            assert_eq!(a.to_bits(), b.to_bits(), "{critic:?}");
        }
    }

    #[test]
    fn permuting_images_leaves_score_bits_unchanged() {
        let model = tiny_model(3);
        let real = tiny_corpus(9, 6);
        let gen = tiny_corpus(9, 7);
        let mut shuffled = gen.clone();
        shuffled.reverse();
        shuffled.swap(0, 3);
        for critic in [Critic::Frechet, Critic::Mmd2Poly, Critic::Topology] {
            let spec = MetricSpec::new(critic, 11);
            let a = evaluate(&spec, &model, &real, &gen).unwrap().score;
            let b = evaluate(&spec, &model, &real, &shuffled).unwrap().score;
            assert_eq!(a.to_bits(), b.to_bits(), "{critic:?}");
        }
    }

    #[test]
    fn duplicating_gen_set_is_invisible_under_stride_matching() {
        let model = tiny_model(13);
        let real = tiny_corpus(6, 8);
        let gen = tiny_corpus(6, 9);
        let mut doubled = gen.clone();
        doubled.extend(gen.iter().cloned());
        for critic in [Critic::Frechet, Critic::Mmd2Poly, Critic::Topology] {
            let spec = MetricSpec {
                critic,
                match_mode: MatchMode::Stride,
                seed: 1,
            };
            let base = evaluate(&spec, &model, &real, &gen).unwrap().score;
            let dup = evaluate(&spec, &model, &real, &doubled).unwrap().score;
            assert_eq!(base.to_bits(), dup.to_bits(), "{critic:?}");
        }
    }

    #[test]
    fn stride_matching_rejects_indivisible_sizes() {
        let model = tiny_model(13);
        let real = tiny_corpus(4, 8);
        let gen = tiny_corpus(7, 9);
        let spec = MetricSpec {
            critic: Critic::Frechet,
            match_mode: MatchMode::Stride,
            seed: 1,
        };
        assert!(evaluate(&spec, &model, &real, &gen).is_err());
        // Seeded matching handles any sizes.
        let spec = MetricSpec {
            critic: Critic::Frechet,
            match_mode: MatchMode::Seeded,
            seed: 1,
        };
        assert!(evaluate(&spec, &model, &real, &gen).is_ok());
    }

    #[test]
    fn undersized_sets_are_rejected() {
        let model = tiny_model(1);
        let imgs = tiny_corpus(2, 2);
        let one = &imgs[..1];
        for critic in [Critic::Frechet, Critic::Mmd2Poly, Critic::Topology] {
            let err = evaluate(&MetricSpec::new(critic, 0), &model, one, &imgs);
            assert!(err.is_err(), "{critic:?}");
        }
    }

    #[test]
    fn cache_encodes_each_set_once() {
        let model = tiny_model(5);
        let real = tiny_corpus(5, 10);
        let gen = tiny_corpus(5, 11);
        let mut cache = FeatureCache::new();
        evaluate_cached(&MetricSpec::new(Critic::Frechet, 0), &model, &real, &gen, &mut cache)
            .unwrap();
        assert_eq!(cache.encode_calls(), 2);
        evaluate_cached(&MetricSpec::new(Critic::Topology, 0), &model, &real, &gen, &mut cache)
            .unwrap();
        evaluate_cached(&MetricSpec::new(Critic::Mmd2Poly, 0), &model, &real, &gen, &mut cache)
            .unwrap();
        assert_eq!(cache.encode_calls(), 2, "cache missed on identical sets");
        // A different encoder re-encodes.
        let other = tiny_model(6);
        evaluate_cached(&MetricSpec::new(Critic::Frechet, 0), &other, &real, &gen, &mut cache)
            .unwrap();
        assert_eq!(cache.encode_calls(), 4);
    }

    #[test]
    fn matrix_order_and_reduction() {
        let model = tiny_model(5);
        let real = tiny_corpus(5, 10);
        let gen_a = tiny_corpus(5, 11);
        let gen_b = tiny_corpus(5, 12);
        let specs = vec![
            (MetricSpec::new(Critic::Frechet, 0), &model),
            (MetricSpec::new(Critic::Mmd2Poly, 0), &model),
            (MetricSpec::new(Critic::Topology, 0), &model),
        ];
        let pairs: Vec<(&[ImageTensor], &[ImageTensor])> =
            vec![(&real, &gen_a), (&real, &gen_b)];
        let mut cache = FeatureCache::new();
        let reports = evaluate_matrix(&specs, &pairs, &mut cache).unwrap();
        assert_eq!(reports.len(), 6);
        // Pairs outer, specs inner.
        let metrics: Vec<&str> = reports.iter().map(|r| r.metric.as_str()).collect();
        assert_eq!(metrics, vec!["fdd", "kdd", "tdd", "fdd", "kdd", "tdd"]);
        assert_eq!(cache.encode_calls(), 3);
        // Single-cell matrix reduces to evaluate.
        let lone = evaluate(&specs[0].0, &model, &real, &gen_a).unwrap();
        assert_eq!(lone.score.to_bits(), reports[0].score.to_bits());
    }

    #[test]
    fn config_hash_tracks_every_ingredient() {
        let model = tiny_model(5);
        let base = MetricSpec::new(Critic::Frechet, 0);
        let h0 = base.config_hash(&model);
        assert_eq!(h0.len(), 64);

        let mut diff = base.clone();
        diff.critic = Critic::Topology;
        assert_ne!(h0, diff.config_hash(&model));

        let mut diff = base.clone();
        diff.seed = 1;
        assert_ne!(h0, diff.config_hash(&model));

        let mut diff = base.clone();
        diff.match_mode = MatchMode::Seeded;
        assert_ne!(h0, diff.config_hash(&model));

        let other_model = tiny_model(6);
        assert_ne!(h0, base.config_hash(&other_model));

        let canon = base.canonical_string(&model);
        assert!(canon.contains("critic=frechet"));
        assert!(canon.contains("seed=0"));
        assert!(canon.contains("latent=8"));
    }

    #[test]
    fn csv_and_json_rows_are_stable() {
        let model = tiny_model(1);
        let imgs = tiny_corpus(4, 2);
        let gen = tiny_corpus(4, 3);
        let spec = MetricSpec::new(Critic::Frechet, 7);
        let a = evaluate(&spec, &model, &imgs, &gen).unwrap();
        let b = evaluate(&spec, &model, &imgs, &gen).unwrap();
        // CSV rows exclude wall time → byte-identical.
        assert_eq!(a.csv_row(), b.csv_row());
        assert!(a.csv_row().starts_with("fdd,"));
        // JSON carries the full report.
        let json = a.json_line();
        assert!(json.contains("\"config_hash\""));
        assert!(json.contains("\"wall_time_s\""));
        assert!(json.contains("\"seed\":7"));
    }
}
