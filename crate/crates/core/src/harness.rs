//! Experiment protocols: sensitivity across disturbance kinds,
//! consistency along an intensity ladder, model ranking against human
//! judgments, and pairwise Pearson correlation.
//!
//! Sensitivity shuffles the dataset (seeded), partitions it into
//! `n_groups` groups of `K` images, corrupts each group with every
//! disturbance, and scores corrupted-vs-original per group and metric.
//! Disturbance seeds are derived per (group, disturbance) by the
//! harness — the seed field of the configured specs is ignored.
//!
//! CSV outputs carry a `# config=<hash>` header and no timestamps, so
//! reruns with the same seed are byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dae::{shuffle, DaeModel};
use crate::disturb::{apply_set, DisturbanceKind, DisturbanceSpec};
use crate::error::{Error, Result};
use crate::imageio::ImageTensor;
use crate::pipeline::{evaluate_cached, FeatureCache, MetricSpec};
use crate::util::{derive_seed, sha256_hex};

/// Disturbance label used in tables: spec string without the seed
/// (seeds are harness-derived and covered by the config hash).
pub fn disturbance_label(spec: &DisturbanceSpec) -> String {
    let mut s = format!("{}:alpha={}", spec.kind.name(), spec.alpha);
    if spec.kind == DisturbanceKind::Mixed {
        let _ = write!(s, ",alpha_noise={}", spec.alpha_noise);
    }
    if matches!(
        spec.kind,
        DisturbanceKind::PatchMask | DisturbanceKind::PatchSwap | DisturbanceKind::Mixed
    ) {
        let _ = write!(s, ",grid={}", spec.patch_grid);
    }
    s
}

// --- sensitivity ------------------------------------------------------

/// Configuration of one sensitivity run.
#[derive(Debug, Clone)]
pub struct SensitivityConfig {
    pub n_groups: usize,
    pub group_size: usize,
    pub disturbances: Vec<DisturbanceSpec>,
    pub metrics: Vec<MetricSpec>,
    pub seed: u64,
}

impl SensitivityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_groups < 2 {
            return Err(Error::input("sensitivity needs at least 2 groups"));
        }
        if self.group_size < 2 {
            return Err(Error::input("sensitivity group size must be ≥ 2"));
        }
        if self.disturbances.is_empty() {
            return Err(Error::input("sensitivity needs at least one disturbance"));
        }
        if self.metrics.is_empty() {
            return Err(Error::input("sensitivity needs at least one metric"));
        }
        for d in &self.disturbances {
            d.validate()?;
        }
        Ok(())
    }

    fn canonical_string(&self, model: &DaeModel) -> String {
        let ds: Vec<String> = self.disturbances.iter().map(disturbance_label).collect();
        let ms: Vec<String> = self
            .metrics
            .iter()
            .map(|m| m.canonical_string(model))
            .collect();
        format!(
            "sensitivity;groups={};k={};seed={};disturbances=[{}];metrics=[{}]",
            self.n_groups,
            self.group_size,
            self.seed,
            ds.join("|"),
            ms.join("|"),
        )
    }

    pub fn config_hash(&self, model: &DaeModel) -> String {
        sha256_hex(self.canonical_string(model).as_bytes())
    }
}

/// One scored (group, disturbance, metric) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityCell {
    pub group: usize,
    pub disturbance: String,
    pub metric: String,
    pub score: f64,
}

/// Mean/std across groups for one (disturbance, metric).
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySummary {
    pub disturbance: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct SensitivityResult {
    pub cells: Vec<SensitivityCell>,
    pub summary: Vec<SensitivitySummary>,
    pub config_hash: String,
}

/// Splits `0..n_items` into `n_groups` disjoint seeded groups of `k`.
pub fn split_groups(
    n_items: usize,
    n_groups: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let need = n_groups
        .checked_mul(k)
        .ok_or_else(|| Error::input("group count overflow"))?;
    if n_items < need {
        return Err(Error::input(format!(
            "need {need} images for {n_groups} groups of {k}, got {n_items}"
        )));
    }
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle(&mut order, &mut rng);
    Ok(order[..need].chunks(k).map(|c| c.to_vec()).collect())
}

/// Runs the sensitivity protocol.
pub fn sensitivity_test(
    model: &DaeModel,
    dataset: &[ImageTensor],
    cfg: &SensitivityConfig,
) -> Result<SensitivityResult> {
    cfg.validate()?;
    let groups = split_groups(
        dataset.len(),
        cfg.n_groups,
        cfg.group_size,
        derive_seed(cfg.seed, 0),
    )?;

    let mut cache = FeatureCache::new();
    let mut cells = Vec::with_capacity(cfg.n_groups * cfg.disturbances.len() * cfg.metrics.len());
    for (g, idx) in groups.iter().enumerate() {
        let original: Vec<ImageTensor> = idx.iter().map(|&i| dataset[i].clone()).collect();
        for (di, dspec) in cfg.disturbances.iter().enumerate() {
            let mut per = dspec.clone();
            per.seed = derive_seed(derive_seed(cfg.seed, 1 + g as u64), di as u64);
            let corrupted = apply_set(&original, &per)?;
            let label = disturbance_label(dspec);
            for mspec in &cfg.metrics {
                let report = evaluate_cached(mspec, model, &original, &corrupted, &mut cache)?;
                cells.push(SensitivityCell {
                    group: g,
                    disturbance: label.clone(),
                    metric: report.metric,
                    score: report.score,
                });
            }
        }
    }

    // Mean and sample std across groups, in (disturbance, metric)
    // configuration order.
    let mut summary = Vec::new();
    for dspec in &cfg.disturbances {
        let label = disturbance_label(dspec);
        for mspec in &cfg.metrics {
            let metric = mspec.critic.metric_name();
            let scores: Vec<f64> = cells
                .iter()
                .filter(|c| c.disturbance == label && c.metric == metric)
                .map(|c| c.score)
                .collect();
            let n = scores.len() as f64;
            let mean = scores.iter().sum::<f64>() / n;
            let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
            summary.push(SensitivitySummary {
                disturbance: label.clone(),
                metric: metric.to_string(),
                mean,
                std: var.sqrt(),
            });
        }
    }

    Ok(SensitivityResult {
        cells,
        summary,
        config_hash: cfg.config_hash(model),
    })
}

/// RFC 4180 quoting: fields with commas or quotes get wrapped.
fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Renders the per-cell table as CSV.
pub fn sensitivity_csv(result: &SensitivityResult) -> String {
    let mut out = format!("# config={}\n", result.config_hash);
    out.push_str("group,disturbance,metric,score\n");
    for c in &result.cells {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            c.group,
            csv_field(&c.disturbance),
            c.metric,
            c.score
        );
    }
    out
}

/// Renders the mean/std summary as CSV.
pub fn sensitivity_summary_csv(result: &SensitivityResult) -> String {
    let mut out = format!("# config={}\n", result.config_hash);
    out.push_str("disturbance,metric,mean,std\n");
    for s in &result.summary {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            csv_field(&s.disturbance),
            s.metric,
            s.mean,
            s.std
        );
    }
    out
}

// --- consistency ------------------------------------------------------

/// One scored ladder level for one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyRow {
    pub level: f64,
    pub metric: String,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct ConsistencyResult {
    pub rows: Vec<ConsistencyRow>,
    /// Per metric: true iff scores are non-decreasing along the ladder
    /// with at least one strict increase.
    pub verdicts: Vec<(String, bool)>,
    pub config_hash: String,
}

/// Non-decreasing with ≥ 1 strict increase.
pub fn monotonic_verdict(scores: &[f64]) -> bool {
    if scores.len() < 2 {
        return false;
    }
    let mut strict = false;
    for w in scores.windows(2) {
        if w[1] < w[0] {
            return false;
        }
        if w[1] > w[0] {
            strict = true;
        }
    }
    strict
}

/// Runs the consistency protocol: one disturbance kind at escalating
/// intensities on a seeded K-image sample.
pub fn consistency_test(
    model: &DaeModel,
    dataset: &[ImageTensor],
    base: &DisturbanceSpec,
    ladder: &[f64],
    metrics: &[MetricSpec],
    k: usize,
    seed: u64,
) -> Result<ConsistencyResult> {
    if ladder.len() < 2 {
        return Err(Error::input("consistency ladder needs at least 2 levels"));
    }
    if !ladder.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::input("consistency ladder must be strictly increasing"));
    }
    if metrics.is_empty() {
        return Err(Error::input("consistency needs at least one metric"));
    }
    if k < 2 {
        return Err(Error::input("consistency sample size must be ≥ 2"));
    }
    if dataset.len() < k {
        return Err(Error::input(format!(
            "consistency needs {k} images, got {}",
            dataset.len()
        )));
    }

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    shuffle(&mut order, &mut rng);
    let sample: Vec<ImageTensor> = order[..k].iter().map(|&i| dataset[i].clone()).collect();

    let mut cache = FeatureCache::new();
    let mut rows = Vec::with_capacity(ladder.len() * metrics.len());
    for (li, &alpha) in ladder.iter().enumerate() {
        let mut spec = base.clone();
        spec.alpha = alpha;
        spec.seed = derive_seed(seed, 1 + li as u64);
        spec.validate()?;
        let corrupted = apply_set(&sample, &spec)?;
        for mspec in metrics {
            let report = evaluate_cached(mspec, model, &sample, &corrupted, &mut cache)?;
            rows.push(ConsistencyRow {
                level: alpha,
                metric: report.metric,
                score: report.score,
            });
        }
    }

    let mut verdicts = Vec::with_capacity(metrics.len());
    for mspec in metrics {
        let metric = mspec.critic.metric_name();
        let series: Vec<f64> = rows
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| r.score)
            .collect();
        verdicts.push((metric.to_string(), monotonic_verdict(&series)));
    }

    let ladder_str: Vec<String> = ladder.iter().map(|l| l.to_string()).collect();
    let ms: Vec<String> = metrics.iter().map(|m| m.canonical_string(model)).collect();
    let config_hash = sha256_hex(
        format!(
            "consistency;base={};ladder=[{}];k={k};seed={seed};metrics=[{}]",
            disturbance_label(base),
            ladder_str.join("|"),
            ms.join("|"),
        )
        .as_bytes(),
    );

    Ok(ConsistencyResult {
        rows,
        verdicts,
        config_hash,
    })
}

/// Renders the ladder table as CSV; each row repeats its metric's
/// overall verdict.
pub fn consistency_csv(result: &ConsistencyResult) -> String {
    let mut out = format!("# config={}\n", result.config_hash);
    out.push_str("level,metric,score,verdict\n");
    for r in &result.rows {
        let verdict = result
            .verdicts
            .iter()
            .find(|(m, _)| *m == r.metric)
            .map(|(_, v)| *v)
            .unwrap_or(false);
        let _ = writeln!(out, "{},{},{},{}", r.level, r.metric, r.score, verdict);
    }
    out
}

// --- ranking ----------------------------------------------------------

/// One generative model's ingested scores and human judgment.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingRecord {
    pub model: String,
    /// metric name → score (lower = better for all metrics here).
    pub scores: BTreeMap<String, f64>,
    /// Fraction of outputs judged implausible by humans, in [0, 1].
    pub human_error: f64,
}

/// Per-metric ranking outcome.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRanking {
    pub metric: String,
    /// Pearson r against human error; `None` when a series has zero
    /// variance (undefined).
    pub pearson_r: Option<f64>,
    /// Model names best (lowest score) to worst.
    pub order: Vec<String>,
    pub agrees_with_human: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RankingResult {
    pub human_order: Vec<String>,
    pub per_metric: Vec<MetricRanking>,
    pub config_hash: String,
}

/// Ranks ingested model scores against human error.
pub fn model_ranking(records: &[RankingRecord]) -> Result<RankingResult> {
    if records.len() < 3 {
        return Err(Error::input(format!(
            "ranking needs ≥ 3 models, got {}",
            records.len()
        )));
    }
    let metric_names: Vec<String> = records[0].scores.keys().cloned().collect();
    if metric_names.is_empty() {
        return Err(Error::input("ranking records carry no metric scores"));
    }
    for r in records {
        if !(0.0..=1.0).contains(&r.human_error) {
            return Err(Error::input(format!(
                "human error for {} must lie in [0, 1], got {}",
                r.model, r.human_error
            )));
        }
        let keys: Vec<String> = r.scores.keys().cloned().collect();
        if keys != metric_names {
            return Err(Error::input(format!(
                "model {} reports metrics {keys:?}, expected {metric_names:?}",
                r.model
            )));
        }
    }
    let mut names: Vec<&str> = records.iter().map(|r| r.model.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::input("duplicate model names in ranking records"));
    }

    let order_by = |key: &dyn Fn(&RankingRecord) -> f64| -> Vec<String> {
        let mut idx: Vec<usize> = (0..records.len()).collect();
        idx.sort_by(|&i, &j| {
            key(&records[i])
                .total_cmp(&key(&records[j]))
                .then_with(|| records[i].model.cmp(&records[j].model))
        });
        idx.into_iter().map(|i| records[i].model.clone()).collect()
    };

    let human_order = order_by(&|r: &RankingRecord| r.human_error);
    let human_series: Vec<f64> = records.iter().map(|r| r.human_error).collect();

    let mut per_metric = Vec::with_capacity(metric_names.len());
    for metric in &metric_names {
        let series: Vec<f64> = records.iter().map(|r| r.scores[metric]).collect();
        let order = order_by(&|r: &RankingRecord| r.scores[metric]);
        per_metric.push(MetricRanking {
            metric: metric.clone(),
            pearson_r: pearson(&series, &human_series),
            agrees_with_human: order == human_order,
            order,
        });
    }

    let mut canon = String::from("ranking");
    for r in records {
        let _ = write!(canon, ";model={},human={}", r.model, r.human_error);
        for (m, s) in &r.scores {
            let _ = write!(canon, ",{m}={s}");
        }
    }

    Ok(RankingResult {
        human_order,
        per_metric,
        config_hash: sha256_hex(canon.as_bytes()),
    })
}

/// Parses ranking CSV rows `model,metric,score,human_error`, ignoring
/// blank lines and `#` comments.
pub fn parse_ranking_csv(text: &str) -> Result<Vec<RankingRecord>> {
    let mut by_model: BTreeMap<String, RankingRecord> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if lineno == 0 && line.to_lowercase().starts_with("model,") {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::input(format!(
                "ranking CSV line {} needs model,metric,score,human_error",
                lineno + 1
            )));
        }
        let (model, metric) = (parts[0].to_string(), parts[1].to_string());
        let score: f64 = parts[2]
            .parse()
            .map_err(|_| Error::input(format!("bad score `{}` on line {}", parts[2], lineno + 1)))?;
        let human_error: f64 = parts[3].parse().map_err(|_| {
            Error::input(format!("bad human_error `{}` on line {}", parts[3], lineno + 1))
        })?;
        let entry = by_model.entry(model.clone()).or_insert_with(|| RankingRecord {
            model,
            scores: BTreeMap::new(),
            human_error,
        });
        if (entry.human_error - human_error).abs() > 1e-12 {
            return Err(Error::input(format!(
                "model {} has conflicting human_error values",
                entry.model
            )));
        }
        if entry.scores.insert(metric.clone(), score).is_some() {
            return Err(Error::input(format!(
                "duplicate score for model {} metric {metric}",
                entry.model
            )));
        }
    }
    if by_model.is_empty() {
        return Err(Error::input("ranking CSV holds no data rows"));
    }
    Ok(by_model.into_values().collect())
}

/// Serializes a ranking result as pretty JSON.
pub fn ranking_json(result: &RankingResult) -> String {
    serde_json::to_string_pretty(result).expect("ranking serializes")
}

// --- correlation ------------------------------------------------------

/// Pearson correlation coefficient; `None` when either series has zero
/// variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Pairwise Pearson matrix over metric rows (each row = one metric's
/// measurements). Zero-variance rows yield `None` entries.
pub fn pearson_matrix(rows: &[Vec<f64>]) -> Result<Vec<Vec<Option<f64>>>> {
    if rows.is_empty() {
        return Err(Error::input("correlation matrix needs at least one row"));
    }
    let len = rows[0].len();
    if len < 3 {
        return Err(Error::input(format!(
            "correlation needs ≥ 3 measurements per metric, got {len}"
        )));
    }
    if rows.iter().any(|r| r.len() != len) {
        return Err(Error::input("correlation rows differ in length"));
    }
    let n = rows.len();
    let mut m = vec![vec![None; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let r = if i == j {
                pearson(&rows[i], &rows[i]).map(|_| 1.0)
            } else {
                pearson(&rows[i], &rows[j])
            };
            m[i][j] = r;
            m[j][i] = r;
        }
    }
    Ok(m)
}
