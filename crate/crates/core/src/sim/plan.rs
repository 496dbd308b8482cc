use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::entity_rng;
use crate::agreement::csv_err;
use crate::detection::GroundTruth;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.70, val: 0.15, test: 0.15 }
    }
}

impl SplitRatios {
    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::Config(format!("split ratios must be positive: {self:?}")));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1: {self:?}")));
        }
        Ok(())
    }

    /// `(floor(train·n), floor(val·n), remainder)`.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // the 1e-9 nudge keeps products such as 0.7 · 10 from landing just below an integer
        let take = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
        let train = take(self.train).min(n);
        let val = take(self.val).min(n - train);
        (train, val, n - train - val)
    }
}

/// One Monte Carlo train/validation/test partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fold_id: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub ratios: SplitRatios,
    pub seed: u64,
}

/// Independent random partitions of `case_ids`, one per fold. Folds may
/// overlap in their test sets.
pub fn monte_carlo_splits(case_ids: &[String], ratios: SplitRatios, folds: usize, seed: u64) -> Result<Vec<SplitPlan>> {
    ratios.validate()?;
    if case_ids.len() < 3 {
        return Err(Error::Config(format!("need at least 3 cases, got {}", case_ids.len())));
    }
    if folds == 0 {
        return Err(Error::Config("need at least one fold".into()));
    }
    let unique: BTreeSet<&String> = case_ids.iter().collect();
    if unique.len() != case_ids.len() {
        return Err(Error::Config("case ids must be unique".into()));
    }
    let (n_train, n_val, _) = ratios.sizes(case_ids.len());
    Ok((0..folds)
        .map(|fold_id| {
            let mut shuffled = case_ids.to_vec();
            shuffled.shuffle(&mut entity_rng(seed, &format!("fold/{fold_id}")));
            let test = shuffled.split_off(n_train + n_val);
            let val = shuffled.split_off(n_train);
            SplitPlan { fold_id, train: shuffled, val, test, ratios, seed }
        })
        .collect())
}

/// A square training patch in pixel coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRect {
    pub image_id: String,
    pub x0: u32,
    pub y0: u32,
    pub size: u32,
    /// Whether a ground-truth point lies inside the closed rectangle.
    pub has_mf: bool,
}

impl PatchRect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (x0, y0, s) = (self.x0 as f64, self.y0 as f64, self.size as f64);
        (x0..=x0 + s).contains(&x) && (y0..=y0 + s).contains(&y)
    }
}

/// Plans `n_patches` patches of `patch_size` pixels.
///
/// The first `⌈mf_fraction · n⌉` patches are placed around a uniformly chosen
/// ground-truth point (uniform offset among positions that keep the point
/// inside and the patch inside the image). The rest are uniform over a
/// uniformly chosen image. `has_mf` is recomputed for every patch.
pub fn patch_sampling_plan(
    gt: &GroundTruth,
    patch_size: u32,
    mf_fraction: f64,
    n_patches: usize,
    seed: u64,
) -> Result<Vec<PatchRect>> {
    if patch_size == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&mf_fraction) {
        return Err(Error::Config(format!("mf_fraction must lie in [0, 1], got {mf_fraction}")));
    }
    if gt.images.is_empty() {
        return Err(Error::Config("no images to sample from".into()));
    }
    if let Some(small) = gt.images.iter().find(|i| i.width_px < patch_size || i.height_px < patch_size) {
        return Err(Error::Config(format!(
            "image `{}` ({}x{}) is smaller than the {patch_size} px patch",
            small.image_id, small.width_px, small.height_px
        )));
    }
    let n_mf = ((mf_fraction * n_patches as f64) - 1e-9).ceil().max(0.0) as usize;
    if n_mf > 0 && gt.points.is_empty() {
        return Err(Error::Infeasible("patches with mitotic figures requested but the ground truth is empty".into()));
    }

    let index = crate::model::ImageIndex::new(&gt.images);
    let mut rng = entity_rng(seed, "patches");
    let mut rects = Vec::with_capacity(n_patches);
    for k in 0..n_patches {
        let (image, x0, y0) = if k < n_mf {
            let p = &gt.points[rng.random_range(0..gt.points.len())];
            let img = index.require(&p.image_id)?;
            let x0 = around(&mut rng, p.x_px, img.width_px, patch_size);
            let y0 = around(&mut rng, p.y_px, img.height_px, patch_size);
            (img, x0, y0)
        } else {
            let img = &gt.images[rng.random_range(0..gt.images.len())];
            (img, rng.random_range(0..=img.width_px - patch_size), rng.random_range(0..=img.height_px - patch_size))
        };
        let mut rect = PatchRect { image_id: image.image_id.clone(), x0, y0, size: patch_size, has_mf: false };
        rect.has_mf = gt.points.iter().any(|p| p.image_id == rect.image_id && rect.contains(p.x_px, p.y_px));
        rects.push(rect);
    }
    Ok(rects)
}

/// Uniform start offset along one axis such that `[start, start + size]`
/// holds `coord` and stays within `[0, extent]`.
fn around(rng: &mut impl Rng, coord: f64, extent: u32, size: u32) -> u32 {
    let cell = (coord.floor().max(0.0) as u32).min(extent - 1);
    let lo = (cell + 1).saturating_sub(size);
    let hi = cell.min(extent - size);
    rng.random_range(lo..=hi)
}

/// Writes `image_id,x0,y0,size,has_mf` rows.
pub fn write_patch_csv<W: Write>(rects: &[PatchRect], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rects.is_empty() {
        w.write_record(["image_id", "x0", "y0", "size", "has_mf"]).map_err(csv_err)?;
    }
    for r in rects {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
