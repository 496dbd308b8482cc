use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::entity_rng;
use crate::consensus::DEFAULT_RADIUS_UM;
use crate::error::{Error, Result};
use crate::model::{GtPoint, ImageMeta, Label, PointAnnotation, Study};

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Behaviour of one simulated rater.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaterProfile {
    pub rater_id: String,
    /// Probability of annotating a true mitotic figure.
    pub sensitivity: f64,
    pub fp_rate_per_mm2: f64,
    /// Per-axis Gaussian localization noise.
    pub jitter_sigma_um: f64,
}

impl RaterProfile {
    pub fn perfect(rater_id: impl Into<String>) -> Self {
        Self { rater_id: rater_id.into(), sensitivity: 1.0, fp_rate_per_mm2: 0.0, jitter_sigma_um: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.sensitivity)
            && self.fp_rate_per_mm2.is_finite()
            && self.fp_rate_per_mm2 >= 0.0
            && self.jitter_sigma_um.is_finite()
            && self.jitter_sigma_um >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid rater profile {self:?}")));
        }
        Ok(())
    }
}

fn poisson(rng: &mut impl Rng, mean: f64) -> Result<usize> {
    if !(mean.is_finite() && mean >= 0.0) {
        return Err(Error::Config(format!("Poisson mean must be ≥ 0, got {mean}")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(mean).map_err(|e| Error::Config(e.to_string()))?;
    Ok(d.sample(rng) as usize)
}

fn uniform_point(rng: &mut impl Rng, image: &ImageMeta) -> (f64, f64) {
    (
        rng.random_range(0.0..=image.width_px as f64),
        rng.random_range(0.0..=image.height_px as f64),
    )
}

fn far_from(p: (f64, f64), others: &[(f64, f64)], min_px: f64) -> bool {
    others.iter().all(|q| (p.0 - q.0).hypot(p.1 - q.1) >= min_px)
}

/// Poisson-distributed true mitotic figures placed uniformly over the image,
/// pairwise at least `3·radius_um` apart.
pub fn generate_ground_truth(
    image: &ImageMeta,
    mf_density_per_mm2: f64,
    radius_um: f64,
    seed: u64,
) -> Result<Vec<GtPoint>> {
    let mut rng = entity_rng(seed, &format!("gt/{}", image.image_id));
    let wanted = poisson(&mut rng, mf_density_per_mm2 * image.area_mm2())?;
    let min_px = 3.0 * radius_um / image.mpp;
    let mut placed: Vec<(f64, f64)> = Vec::with_capacity(wanted);
    while placed.len() < wanted {
        let spot = (0..MAX_PLACEMENT_ATTEMPTS)
            .map(|_| uniform_point(&mut rng, image))
            .find(|p| far_from(*p, &placed, min_px));
        match spot {
            Some(p) => placed.push(p),
            None => return Err(Error::Saturation { wanted, placed: placed.len() }),
        }
    }
    Ok(placed
        .into_iter()
        .map(|(x_px, y_px)| GtPoint { image_id: image.image_id.clone(), x_px, y_px })
        .collect())
}

/// Annotations of one rater on one image.
///
/// Each true figure is kept with probability `sensitivity` and displaced by
/// Gaussian jitter (clamped to the image). False positives are Poisson with
/// mean `fp_rate · area`, placed at least `3·radius_um` from every true figure.
pub fn simulate_rater(
    gt: &[GtPoint],
    profile: &RaterProfile,
    image: &ImageMeta,
    radius_um: f64,
    seed: u64,
) -> Result<Vec<PointAnnotation>> {
    profile.validate()?;
    let mut rng = entity_rng(seed, &format!("rater/{}/{}", profile.rater_id, image.image_id));
    let sigma_px = profile.jitter_sigma_um / image.mpp;
    let jitter = Normal::new(0.0, sigma_px).map_err(|e| Error::Config(e.to_string()))?;
    let (w, h) = (image.width_px as f64, image.height_px as f64);

    let mut points = Vec::new();
    for g in gt.iter().filter(|g| g.image_id == image.image_id) {
        let keep = rng.random::<f64>() < profile.sensitivity;
        let (dx, dy) = (jitter.sample(&mut rng), jitter.sample(&mut rng));
        if keep {
            points.push(((g.x_px + dx).clamp(0.0, w), (g.y_px + dy).clamp(0.0, h)));
        }
    }

    let n_fp = poisson(&mut rng, profile.fp_rate_per_mm2 * image.area_mm2())?;
    let gt_px: Vec<(f64, f64)> = gt.iter().filter(|g| g.image_id == image.image_id).map(|g| (g.x_px, g.y_px)).collect();
    let min_px = 3.0 * radius_um / image.mpp;
    for placed in 0..n_fp {
        let spot = (0..MAX_PLACEMENT_ATTEMPTS)
            .map(|_| uniform_point(&mut rng, image))
            .find(|p| far_from(*p, &gt_px, min_px))
            .ok_or(Error::Saturation { wanted: n_fp, placed })?;
        points.push(spot);
    }

    Ok(points
        .into_iter()
        .enumerate()
        .map(|(n, (x_px, y_px))| PointAnnotation {
            annotation_id: format!("{}/{}/{n:04}", image.image_id, profile.rater_id),
            rater_id: profile.rater_id.clone(),
            image_id: image.image_id.clone(),
            x_px,
            y_px,
            label: Label::HeAndPhh3,
        })
        .collect())
}

/// A complete simulated rater panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyPreset {
    pub name: String,
    pub seed: u64,
    /// Per-image density of true figures is drawn uniformly from this range.
    pub mf_density_per_mm2: (f64, f64),
    /// Separation unit for ground-truth and false-positive placement.
    pub radius_um: f64,
    pub raters: Vec<RaterProfile>,
}

impl StudyPreset {
    /// A panel whose sensitivities and precisions have the given means and
    /// sample standard deviations.
    ///
    /// Sensitivities sit on evenly spaced standardized offsets; precisions use
    /// the same offsets in a seeded random order so the two are not
    /// correlated. Each precision is turned into a false-positive rate by
    /// moment matching: `fp_rate = sensitivity · density · (1 − precision) / precision`
    /// with the mean of the density range.
    #[allow(clippy::too_many_arguments)]
    pub fn calibrated(
        name: &str,
        n_raters: usize,
        sensitivity: (f64, f64),
        precision: (f64, f64),
        jitter_sigma_um: f64,
        mf_density_per_mm2: (f64, f64),
        seed: u64,
    ) -> Result<Self> {
        if n_raters < 2 {
            return Err(Error::Config(format!("a study needs at least 2 raters, got {n_raters}")));
        }
        let n = n_raters as f64;
        let spread = (n * (n + 1.0) / (3.0 * (n - 1.0) * (n - 1.0))).sqrt();
        let offsets: Vec<f64> = (0..n_raters).map(|i| (-1.0 + 2.0 * i as f64 / (n - 1.0)) / spread).collect();
        let mut shuffled = offsets.clone();
        shuffled.shuffle(&mut entity_rng(seed, &format!("preset/{name}")));

        let density = 0.5 * (mf_density_per_mm2.0 + mf_density_per_mm2.1);
        let width = (n_raters - 1).to_string().len();
        let raters = offsets
            .iter()
            .zip(&shuffled)
            .enumerate()
            .map(|(i, (zs, zp))| {
                let sens = (sensitivity.0 + sensitivity.1 * zs).clamp(0.05, 0.99);
                let prec = (precision.0 + precision.1 * zp).clamp(0.05, 0.99);
                RaterProfile {
                    rater_id: format!("rater_{i:0width$}"),
                    sensitivity: sens,
                    fp_rate_per_mm2: sens * density * (1.0 - prec) / prec,
                    jitter_sigma_um,
                }
            })
            .collect();
        let preset = Self {
            name: name.to_owned(),
            seed,
            mf_density_per_mm2,
            radius_um: DEFAULT_RADIUS_UM,
            raters,
        };
        preset.validate()?;
        Ok(preset)
    }

    /// H&E-only phase: sensitivity 0.67 ± 0.19, precision 0.53 ± 0.20.
    pub fn p1(seed: u64) -> Self {
        Self::calibrated("P1", 13, (0.67, 0.19), (0.53, 0.20), 1.5, (2.0, 40.0), seed)
            .expect("built-in preset is valid")
    }

    /// PHH3-assisted phase: sensitivity 0.77 ± 0.19, precision 0.78 ± 0.17.
    pub fn p2(seed: u64) -> Self {
        Self::calibrated("P2", 13, (0.77, 0.19), (0.78, 0.17), 1.5, (2.0, 40.0), seed)
            .expect("built-in preset is valid")
    }

    /// `n` perfect raters.
    pub fn perfect(n: usize, mf_density_per_mm2: f64, seed: u64) -> Self {
        Self {
            name: "perfect".into(),
            seed,
            mf_density_per_mm2: (mf_density_per_mm2, mf_density_per_mm2),
            radius_um: DEFAULT_RADIUS_UM,
            raters: (0..n).map(|i| RaterProfile::perfect(format!("rater_{i:02}"))).collect(),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.raters.len() < 2 {
            return Err(Error::Config("a study needs at least 2 raters".into()));
        }
        let (lo, hi) = self.mf_density_per_mm2;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(Error::Config(format!("invalid density range ({lo}, {hi})")));
        }
        crate::consensus::validate_radius(self.radius_um)?;
        let mut ids = std::collections::BTreeSet::new();
        for r in &self.raters {
            r.validate()?;
            if !ids.insert(&r.rater_id) {
                return Err(Error::Config(format!("duplicate rater `{}`", r.rater_id)));
            }
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let p: Self = serde_json::from_slice(bytes).map_err(|e| Error::Schema(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("preset serializes")
    }
}

/// `n` images of 6000 × 6320 px at 0.25 µm/px, i.e. 2.37 mm² each.
pub fn synthetic_images(n: usize) -> Vec<ImageMeta> {
    (0..n)
        .map(|i| ImageMeta { image_id: format!("roi_{i:02}"), width_px: 6000, height_px: 6320, mpp: 0.25 })
        .collect()
}

/// Simulates every rater of the preset on every image. The returned study
/// embeds the ground truth and the full rater roster.
pub fn simulate_study(preset: &StudyPreset, images: &[ImageMeta]) -> Result<Study> {
    preset.validate()?;
    let mut gt = Vec::new();
    let mut annotations = Vec::new();
    for image in images {
        let (lo, hi) = preset.mf_density_per_mm2;
        let density = if lo == hi {
            lo
        } else {
            entity_rng(preset.seed, &format!("density/{}", image.image_id)).random_range(lo..=hi)
        };
        let points = generate_ground_truth(image, density, preset.radius_um, preset.seed)?;
        for profile in &preset.raters {
            annotations.extend(simulate_rater(&points, profile, image, preset.radius_um, preset.seed)?);
        }
        gt.extend(points);
    }
    Study::with_roster(
        images.to_vec(),
        annotations,
        preset.raters.iter().map(|r| r.rater_id.clone()).collect(),
        Some(gt),
    )
}
