//! Seeded image corruption operators.
//!
//! Five operators: salt-and-pepper impulses, additive Gaussian noise,
//! patch masking, patch swapping, and a swap+noise mix. Intensity α is
//! the fraction of affected pixel sites for the noise operators and
//! the fraction of affected tiles (or tile pairs) for the patch
//! operators. Everything is deterministic given (image, spec).
//!
//! Patch tiling truncates: tiles are `floor(H/grid) × floor(W/grid)`,
//! anchored at the top-left, so all tiles are the same size and any
//! leftover bottom/right strip is never touched.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imageio::ImageTensor;
use crate::util::derive_seed;

/// Default side count of the patch grid.
pub const DEFAULT_PATCH_GRID: usize = 4;
/// Default Gaussian component intensity inside `mixed`.
pub const DEFAULT_MIXED_NOISE_ALPHA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DisturbanceKind {
    SaltPepper,
    Gaussian,
    PatchMask,
    PatchSwap,
    Mixed,
}

impl DisturbanceKind {
    pub fn name(&self) -> &'static str {
        match self {
            DisturbanceKind::SaltPepper => "salt_pepper",
            DisturbanceKind::Gaussian => "gaussian",
            DisturbanceKind::PatchMask => "patch_mask",
            DisturbanceKind::PatchSwap => "patch_swap",
            DisturbanceKind::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "salt_pepper" => Ok(DisturbanceKind::SaltPepper),
            "gaussian" => Ok(DisturbanceKind::Gaussian),
            "patch_mask" => Ok(DisturbanceKind::PatchMask),
            "patch_swap" => Ok(DisturbanceKind::PatchSwap),
            "mixed" => Ok(DisturbanceKind::Mixed),
            other => Err(Error::input(format!("unknown disturbance kind `{other}`"))),
        }
    }

    fn uses_grid(&self) -> bool {
        matches!(
            self,
            DisturbanceKind::PatchMask | DisturbanceKind::PatchSwap | DisturbanceKind::Mixed
        )
    }
}

/// A fully specified corruption.
///
/// For `mixed`, `alpha` drives the patch-swap component and
/// `alpha_noise` the Gaussian component (default 0.01).
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSpec {
    pub kind: DisturbanceKind,
    pub alpha: f64,
    pub seed: u64,
    pub patch_grid: usize,
    pub alpha_noise: f64,
}

impl DisturbanceSpec {
    pub fn new(kind: DisturbanceKind, alpha: f64, seed: u64) -> Self {
        DisturbanceSpec {
            kind,
            alpha,
            seed,
            patch_grid: DEFAULT_PATCH_GRID,
            alpha_noise: DEFAULT_MIXED_NOISE_ALPHA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) || !self.alpha.is_finite() {
            return Err(Error::input(format!(
                "disturbance alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.kind.uses_grid() && self.patch_grid < 2 {
            return Err(Error::input(format!(
                "patch grid must be ≥ 2, got {}",
                self.patch_grid
            )));
        }
        if self.kind == DisturbanceKind::Mixed
            && (!(0.0..=1.0).contains(&self.alpha_noise) || !self.alpha_noise.is_finite())
        {
            return Err(Error::input(format!(
                "mixed noise alpha must lie in [0, 1], got {}",
                self.alpha_noise
            )));
        }
        Ok(())
    }

    /// Parses a CLI spec string such as
    /// `patch_swap:alpha=0.25,grid=4,seed=7`.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind_str, rest) = match s.split_once(':') {
            Some((k, r)) => (k, r),
            None => (s, ""),
        };
        let kind = DisturbanceKind::parse(kind_str.trim())?;
        let mut alpha = None;
        let mut seed = 0u64;
        let mut grid = DEFAULT_PATCH_GRID;
        let mut alpha_noise = DEFAULT_MIXED_NOISE_ALPHA;
        for part in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::input(format!("malformed disturbance option `{part}`")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "alpha" => {
                    alpha = Some(value.parse::<f64>().map_err(|_| {
                        Error::input(format!("bad alpha `{value}` in disturbance spec"))
                    })?)
                }
                "seed" => {
                    seed = value.parse::<u64>().map_err(|_| {
                        Error::input(format!("bad seed `{value}` in disturbance spec"))
                    })?
                }
                "grid" => {
                    grid = value.parse::<usize>().map_err(|_| {
                        Error::input(format!("bad grid `{value}` in disturbance spec"))
                    })?
                }
                "alpha_noise" => {
                    alpha_noise = value.parse::<f64>().map_err(|_| {
                        Error::input(format!("bad alpha_noise `{value}` in disturbance spec"))
                    })?
                }
                other => {
                    return Err(Error::input(format!(
                        "unknown disturbance option `{other}`"
                    )))
                }
            }
        }
        let alpha =
            alpha.ok_or_else(|| Error::input("disturbance spec needs alpha=<value>"))?;
        let spec = DisturbanceSpec {
            kind,
            alpha,
            seed,
            patch_grid: grid,
            alpha_noise,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for DisturbanceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:alpha={}", self.kind.name(), self.alpha)?;
        if self.kind == DisturbanceKind::Mixed {
            write!(f, ",alpha_noise={}", self.alpha_noise)?;
        }
        if self.kind.uses_grid() {
            write!(f, ",grid={}", self.patch_grid)?;
        }
        write!(f, ",seed={}", self.seed)
    }
}

/// Draws `k` distinct values from `0..n` (partial Fisher–Yates).
fn sample_without_replacement(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    debug_assert!(k <= n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Sets a fraction α of pixel sites (all channels of a site) to −1 or
/// +1 with equal probability; sites are drawn without replacement so
/// exactly `round(α·H·W)` sites change value classes.
pub fn salt_pepper(img: &ImageTensor, alpha: f64, seed: u64) -> Result<ImageTensor> {
    check_alpha(alpha)?;
    let mut out = img.clone();
    let sites = img.h() * img.w();
    let k = (alpha * sites as f64).round() as usize;
    if k == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = sample_without_replacement(sites, k, &mut rng);
    for site in chosen {
        let (y, x) = (site / img.w(), site % img.w());
        let v = if rng.gen_range(0..2u8) == 0 { -1.0 } else { 1.0 };
        for c in 0..img.c() {
            *out.at_mut(y, x, c) = v;
        }
    }
    Ok(out)
}

/// Adds elementwise N(0, α) noise (standard deviation √α) and clamps
/// the result back to [-1, 1].
pub fn gaussian_noise(img: &ImageTensor, alpha: f64, seed: u64) -> Result<ImageTensor> {
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(Error::input(format!(
            "gaussian noise alpha must be ≥ 0, got {alpha}"
        )));
    }
    if alpha == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, alpha.sqrt()).expect("validated");
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (*v + normal.sample(&mut rng)).clamp(-1.0, 1.0);
    }
    Ok(out)
}

/// Number of tiles `patch_mask` fills for a given α and grid.
pub fn mask_tile_count(alpha: f64, grid: usize) -> usize {
    (alpha * (grid * grid) as f64).round() as usize
}

/// Number of tile pairs `patch_swap` exchanges for a given α and grid.
pub fn swap_pair_count(alpha: f64, grid: usize) -> usize {
    (alpha * (grid * grid) as f64).round() as usize
}

struct Tiling {
    grid: usize,
    tile_h: usize,
    tile_w: usize,
}

fn tiling(img: &ImageTensor, grid: usize) -> Result<Tiling> {
    if grid < 2 {
        return Err(Error::input(format!("patch grid must be ≥ 2, got {grid}")));
    }
    let tile_h = img.h() / grid;
    let tile_w = img.w() / grid;
    if tile_h == 0 || tile_w == 0 {
        return Err(Error::input(format!(
            "patch grid {grid} exceeds image extent {}×{}",
            img.h(),
            img.w()
        )));
    }
    Ok(Tiling { grid, tile_h, tile_w })
}

impl Tiling {
    /// Top-left corner of tile index `t` (row-major over the grid).
    fn corner(&self, t: usize) -> (usize, usize) {
        let (ty, tx) = (t / self.grid, t % self.grid);
        (ty * self.tile_h, tx * self.tile_w)
    }
}

/// Fills `round(α·grid²)` tiles (chosen without replacement) with the
/// background constant +1. If α > 0 rounds to zero tiles the image is
/// returned unchanged; callers may warn via `mask_tile_count`.
pub fn patch_mask(img: &ImageTensor, alpha: f64, seed: u64, grid: usize) -> Result<ImageTensor> {
    check_alpha(alpha)?;
    let t = tiling(img, grid)?;
    let k = mask_tile_count(alpha, grid).min(grid * grid);
    let mut out = img.clone();
    if k == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for tile in sample_without_replacement(grid * grid, k, &mut rng) {
        let (y0, x0) = t.corner(tile);
        for y in y0..y0 + t.tile_h {
            for x in x0..x0 + t.tile_w {
                for c in 0..img.c() {
                    *out.at_mut(y, x, c) = 1.0;
                }
            }
        }
    }
    Ok(out)
}

/// Swaps `round(α·grid²)` disjoint tile pairs. The pixel multiset is
/// exactly preserved; applying the same spec twice restores the image.
pub fn patch_swap(img: &ImageTensor, alpha: f64, seed: u64, grid: usize) -> Result<ImageTensor> {
    check_alpha(alpha)?;
    let t = tiling(img, grid)?;
    let pairs = swap_pair_count(alpha, grid);
    let tiles = grid * grid;
    if pairs > tiles / 2 {
        return Err(Error::input(format!(
            "patch_swap needs {pairs} disjoint pairs but a {grid}×{grid} grid holds at most {}",
            tiles / 2
        )));
    }
    let mut out = img.clone();
    if pairs == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = sample_without_replacement(tiles, 2 * pairs, &mut rng);
    for p in chosen.chunks_exact(2) {
        let (ay, ax) = t.corner(p[0]);
        let (by, bx) = t.corner(p[1]);
        for dy in 0..t.tile_h {
            for dx in 0..t.tile_w {
                for c in 0..img.c() {
                    let a = out.at(ay + dy, ax + dx, c);
                    let b = out.at(by + dy, bx + dx, c);
                    *out.at_mut(ay + dy, ax + dx, c) = b;
                    *out.at_mut(by + dy, bx + dx, c) = a;
                }
            }
        }
    }
    Ok(out)
}

/// Patch swap followed by Gaussian noise, with independent parameters.
/// Swapping first keeps the noise statistics independent of tiling.
pub fn mixed(
    img: &ImageTensor,
    alpha_noise: f64,
    alpha_swap: f64,
    noise_seed: u64,
    swap_seed: u64,
    grid: usize,
) -> Result<ImageTensor> {
    let swapped = patch_swap(img, alpha_swap, swap_seed, grid)?;
    gaussian_noise(&swapped, alpha_noise, noise_seed)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
        return Err(Error::input(format!(
            "disturbance alpha must lie in [0, 1], got {alpha}"
        )));
    }
    Ok(())
}

/// Applies one spec to one image.
pub fn apply(img: &ImageTensor, spec: &DisturbanceSpec) -> Result<ImageTensor> {
    spec.validate()?;
    match spec.kind {
        DisturbanceKind::SaltPepper => salt_pepper(img, spec.alpha, spec.seed),
        DisturbanceKind::Gaussian => gaussian_noise(img, spec.alpha, spec.seed),
        DisturbanceKind::PatchMask => patch_mask(img, spec.alpha, spec.seed, spec.patch_grid),
        DisturbanceKind::PatchSwap => patch_swap(img, spec.alpha, spec.seed, spec.patch_grid),
        DisturbanceKind::Mixed => mixed(
            img,
            spec.alpha_noise,
            spec.alpha,
            derive_seed(spec.seed, 1),
            derive_seed(spec.seed, 0),
            spec.patch_grid,
        ),
    }
}

/// Applies one spec across a set, giving image `i` the sub-seed
/// `derive_seed(spec.seed, i)` so corruptions differ per image while
/// the whole set stays reproducible.
pub fn apply_set(images: &[ImageTensor], spec: &DisturbanceSpec) -> Result<Vec<ImageTensor>> {
    spec.validate()?;
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let mut per = spec.clone();
            per.seed = derive_seed(spec.seed, i as u64);
            apply(img, &per)
        })
        .collect()
}
