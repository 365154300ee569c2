//! Distribution distances over latent feature sets: Fréchet distance
//! between Gaussian fits, unbiased squared MMD with a polynomial
//! kernel, and a 0-dimensional-persistence topology distance.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureSet;

/// Mean vector and covariance matrix of a feature set.
#[derive(Debug, Clone)]
pub struct GaussianSummary {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// Fits mean and unbiased covariance (divisor N−1) to the rows of a
/// feature set; the covariance is explicitly symmetrized.
pub fn summarize(features: &FeatureSet) -> Result<GaussianSummary> {
    let (n, d) = (features.n(), features.dim());
    if n < 2 {
        return Err(Error::input(format!(
            "covariance needs at least 2 rows, got {n}"
        )));
    }
    let mut mu = vec![0.0; d];
    for i in 0..n {
        for (m, &v) in mu.iter_mut().zip(features.row(i)) {
            *m += v;
        }
    }
    for m in &mut mu {
        *m /= n as f64;
    }

    let mut sigma = DMatrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for i in 0..n {
        for (c, (&v, &m)) in centered.iter_mut().zip(features.row(i).iter().zip(&mu)) {
            *c = v - m;
        }
        for j in 0..d {
            let cj = centered[j];
            if cj == 0.0 {
                continue;
            }
            for k in j..d {
                sigma[(j, k)] += cj * centered[k];
            }
        }
    }
    let denom = (n - 1) as f64;
    for j in 0..d {
        for k in j..d {
            let v = sigma[(j, k)] / denom;
            sigma[(j, k)] = v;
            sigma[(k, j)] = v;
        }
    }
    Ok(GaussianSummary {
        mu: DVector::from_vec(mu),
        sigma,
    })
}

/// Eigendecomposition of a PSD matrix with roundoff-aware clamping.
/// Eigenvalues below n·ε·λmax (spurious mass from rank-deficient
/// inputs) clamp to exactly zero; anything below −1e-8·max(|trace|, 1)
/// is rejected. Returns (clamped eigenvalues, eigenvectors).
fn psd_eigen(a: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if a.nrows() != a.ncols() {
        return Err(Error::shape(format!(
            "matrix square root needs a square matrix, got {}×{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "matrix contains non-finite values".to_string(),
        ));
    }
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    let mut asym = 0.0f64;
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if asym > 1e-8 * scale {
        return Err(Error::input(format!(
            "matrix is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    // Work on the symmetrized matrix so eigenvectors are orthogonal.
    let sym = (a + a.transpose()) * 0.5;
    let trace = sym.trace();
    let n = sym.nrows();
    let eig = sym.symmetric_eigen();
    let neg_tol = 1e-8 * trace.abs().max(1.0);
    let mut vals = eig.eigenvalues;
    let lambda_max = vals.iter().fold(0.0f64, |acc, &v| acc.max(v));
    // Below this, an eigenvalue is indistinguishable from zero at this
    // matrix's scale; its square root would otherwise inject √ε noise.
    let zero_tol = 32.0 * n as f64 * f64::EPSILON * lambda_max;
    for v in vals.iter_mut() {
        if *v < -neg_tol {
            return Err(Error::numerical(format!(
                "matrix has a significantly negative eigenvalue {v:.3e}"
            )));
        }
        if *v < zero_tol {
            *v = 0.0;
        }
    }
    Ok((vals, eig.eigenvectors))
}

/// Symmetric PSD square root via eigendecomposition. Mildly negative
/// eigenvalues (roundoff from rank-deficient covariances) clamp to
/// zero; anything below −1e-8·max(|trace|, 1) is rejected.
pub fn matrix_sqrt_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (mut vals, vecs) = psd_eigen(a)?;
    for v in vals.iter_mut() {
        *v = v.sqrt();
    }
    let root = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
    Ok((&root + root.transpose()) * 0.5)
}

/// Fréchet distance between two Gaussian summaries:
/// ‖μa − μb‖² + Tr(Σa + Σb − 2·(Σa Σb)^½). The cross term is computed
/// as the trace of the PSD root of Σa^½ Σb Σa^½, which is symmetric and
/// has the same spectrum as Σa Σb.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    let d = a.mu.len();
    if b.mu.len() != d || a.sigma.nrows() != d || b.sigma.nrows() != d {
        return Err(Error::input(format!(
            "summary dimensions differ: {} vs {}",
            d,
            b.mu.len()
        )));
    }
    let diff = &a.mu - &b.mu;
    let mean_term = diff.dot(&diff);

    let sa_root = matrix_sqrt_psd(&a.sigma)?;
    let inner = &sa_root * &b.sigma * &sa_root;
    // Only the trace of the root is needed: summing √λ directly skips
    // the lossy reconstruction of the full root matrix.
    let (vals, _) = psd_eigen(&inner)?;
    let cross_trace: f64 = vals.iter().map(|v| v.sqrt()).sum();
    let value = mean_term + a.sigma.trace() + b.sigma.trace() - 2.0 * cross_trace;
    // f64::max would silently turn NaN into 0, so test finiteness first.
    if !value.is_finite() {
        return Err(Error::numerical(format!(
            "Fréchet distance came out {value}"
        )));
    }
    if value < -1e-6 {
        return Err(Error::numerical(format!(
            "Fréchet distance came out {value:.3e}, beyond roundoff tolerance"
        )));
    }
    Ok(value.max(0.0))
}

/// Polynomial kernel (γ·⟨x,y⟩ + c)^degree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyKernel {
    pub degree: i32,
    pub gamma: f64,
    pub coef: f64,
}

impl PolyKernel {
    /// Convention used by kernel-based image-set distances: cubic,
    /// γ = 1/D, offset 1.
    pub fn default_for_dim(d: usize) -> Self {
        PolyKernel {
            degree: 3,
            gamma: 1.0 / d as f64,
            coef: 1.0,
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut dot = 0.0;
        for (a, b) in x.iter().zip(y) {
            dot += a * b;
        }
        (self.gamma * dot + self.coef).powi(self.degree)
    }
}

/// Unbiased squared MMD with a polynomial kernel. Within-set sums skip
/// the diagonal. Arguments are internally put in a canonical order, so
/// `mmd2_poly(a, b, k)` and `mmd2_poly(b, a, k)` are bit-identical.
pub fn mmd2_poly(a: &FeatureSet, b: &FeatureSet, kernel: PolyKernel) -> Result<f64> {
    if a.n() < 2 || b.n() < 2 {
        return Err(Error::input(format!(
            "unbiased MMD needs at least 2 rows per set, got {} and {}",
            a.n(),
            b.n()
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::input(format!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let (x, y) = if a.total_cmp(b).is_le() { (a, b) } else { (b, a) };

    let mut within_x = 0.0;
    for i in 0..x.n() {
        for j in 0..x.n() {
            if i != j {
                within_x += kernel.eval(x.row(i), x.row(j));
            }
        }
    }
    within_x /= (x.n() * (x.n() - 1)) as f64;

    let mut within_y = 0.0;
    for i in 0..y.n() {
        for j in 0..y.n() {
            if i != j {
                within_y += kernel.eval(y.row(i), y.row(j));
            }
        }
    }
    within_y /= (y.n() * (y.n() - 1)) as f64;

    let mut cross = 0.0;
    for i in 0..x.n() {
        for j in 0..y.n() {
            cross += kernel.eval(x.row(i), y.row(j));
        }
    }
    cross /= (x.n() * y.n()) as f64;

    Ok(within_x + within_y - 2.0 * cross)
}

/// Birth/death pairs of 0-dimensional homology for a point cloud under
/// the Euclidean metric; deaths are the MST edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceDiagram {
    pairs: Vec<(f64, f64)>,
}

impl PersistenceDiagram {
    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    /// Death values in ascending order.
    pub fn deaths(&self) -> Vec<f64> {
        self.pairs.iter().map(|&(_, d)| d).collect()
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        true
    }
}

fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(y) {
        let d = a - b;
        acc += d * d;
    }
    acc.sqrt()
}

/// 0-dimensional persistence of a point cloud: single-linkage merges
/// over pairwise Euclidean distances (Kruskal's MST). Returns exactly
/// N−1 finite pairs, births all zero, deaths ascending; the essential
/// component is excluded.
pub fn persistence_0d(points: &FeatureSet) -> Result<PersistenceDiagram> {
    let n = points.n();
    if n < 2 {
        return Err(Error::input(format!(
            "persistence needs at least 2 points, got {n}"
        )));
    }
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            edges.push((euclidean(points.row(i), points.row(j)), i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut dsu = DisjointSet::new(n);
    let mut pairs = Vec::with_capacity(n - 1);
    for (w, i, j) in edges {
        if dsu.union(i, j) {
            pairs.push((0.0, w));
            if pairs.len() == n - 1 {
                break;
            }
        }
    }
    Ok(PersistenceDiagram { pairs })
}

/// ℓp norm exponent; `Inf` is the max norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LpExponent {
    P(f64),
    Inf,
}

impl Default for LpExponent {
    fn default() -> Self {
        LpExponent::P(2.0)
    }
}

/// Topology distance: ℓp between the sorted death vectors of the two
/// clouds' 0-dimensional persistence diagrams. When the sets differ in
/// size, the larger one is subsampled (seeded, without replacement) to
/// match.
pub fn topology_distance(
    a: &FeatureSet,
    b: &FeatureSet,
    p: LpExponent,
    seed: u64,
) -> Result<f64> {
    if a.n() < 2 || b.n() < 2 {
        return Err(Error::input(format!(
            "topology distance needs at least 2 points per set, got {} and {}",
            a.n(),
            b.n()
        )));
    }
    let target = a.n().min(b.n());
    let asub;
    let bsub;
    let (a, b) = if a.n() == b.n() {
        (a, b)
    } else if a.n() > target {
        asub = subsample_rows(a, target, seed)?;
        (&asub, b)
    } else {
        bsub = subsample_rows(b, target, seed)?;
        (a, &bsub)
    };

    let da = persistence_0d(a)?.deaths();
    let db = persistence_0d(b)?.deaths();
    Ok(lp_distance(&da, &db, p))
}

/// Seeded subsample of `k` distinct rows, preserving original order.
pub fn subsample_rows(set: &FeatureSet, k: usize, seed: u64) -> Result<FeatureSet> {
    if k > set.n() {
        return Err(Error::input(format!(
            "cannot subsample {k} rows from {}",
            set.n()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..set.n()).collect();
    idx.shuffle(&mut rng);
    let mut chosen = idx[..k].to_vec();
    chosen.sort_unstable();
    set.select(&chosen)
}

fn lp_distance(a: &[f64], b: &[f64], p: LpExponent) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    match p {
        LpExponent::Inf => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max),
        LpExponent::P(p) => {
            let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).abs().powf(p)).sum();
            sum.powf(1.0 / p)
        }
    }
}
