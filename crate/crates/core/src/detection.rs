//! Detector evaluation against point ground truths: distance-based TP/FP
//! assignment, all-points interpolated average precision and the best-F1
//! operating point, run side by side for several ground-truth definitions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::agreement::Prf;
use crate::consensus::{validate_radius, ConsensusSet, DEFAULT_RADIUS_UM};
use crate::error::{Error, Result};
use crate::model::{filter_labels, pixel_distance, GtPoint, ImageIndex, ImageMeta, LabelFilter, Located, Study};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub radius_um: f64,
    /// Applied when the ground truth comes from a raw annotation file.
    pub label_filter: LabelFilter,
    /// Detections below this confidence are dropped before scoring.
    pub min_confidence: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { radius_um: DEFAULT_RADIUS_UM, label_filter: LabelFilter::he_visible(), min_confidence: 0.0 }
    }
}

/// Ground-truth points together with the images they live on.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub images: Vec<ImageMeta>,
    pub points: Vec<GtPoint>,
}

impl GroundTruth {
    pub fn new(images: Vec<ImageMeta>, points: Vec<GtPoint>) -> Result<Self> {
        let index = ImageIndex::new(&images);
        for p in &points {
            index.require(&p.image_id)?;
        }
        Ok(Self { images, points })
    }

    pub fn from_consensus(set: &ConsensusSet) -> Self {
        Self { images: set.images.clone(), points: set.points() }
    }

    /// Every annotation passing `filter` counts as a ground-truth point.
    pub fn from_study(study: &Study, filter: &LabelFilter) -> Self {
        let points = filter_labels(study.annotations(), filter)
            .into_iter()
            .map(|a| GtPoint { image_id: a.image_id, x_px: a.x_px, y_px: a.y_px })
            .collect();
        Self { images: study.images().to_vec(), points }
    }

    /// The ground truth embedded in a simulated study, if any.
    pub fn embedded(study: &Study) -> Option<Self> {
        study
            .ground_truth()
            .map(|gt| Self { images: study.images().to_vec(), points: gt.to_vec() })
    }

    /// Reads either a consensus file (has `entries`) or an annotation file
    /// (has `annotations`).
    pub fn from_json(bytes: &[u8], filter: &LabelFilter) -> Result<Self> {
        let probe: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| Error::Schema(e.to_string()))?;
        if probe.get("entries").is_some() {
            Ok(Self::from_consensus(&ConsensusSet::from_json(bytes)?))
        } else if probe.get("annotations").is_some() {
            Ok(Self::from_study(&Study::from_json(bytes)?, filter))
        } else {
            Err(Error::Schema("ground truth must be a consensus or annotation file".into()))
        }
    }

    pub fn image_ids(&self) -> BTreeSet<&str> {
        self.images.iter().map(|i| i.image_id.as_str()).collect()
    }
}

/// A detection after TP/FP assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDetection {
    pub confidence: f64,
    pub is_tp: bool,
    /// Position of the detection in the input list.
    pub detection_index: usize,
}

impl ScoredDetection {
    pub fn new(confidence: f64, is_tp: bool) -> Self {
        Self { confidence, is_tp, detection_index: 0 }
    }
}

/// Assigns each detection TP or FP.
///
/// Per image, detections are visited by descending confidence (ties in input
/// order); each claims the nearest still-unclaimed ground-truth point within
/// the radius. The result is sorted by descending confidence, ties by input
/// order.
pub fn score_detections<D: Located + HasConfidence>(
    detections: &[D],
    gt: &GroundTruth,
    config: &EvalConfig,
) -> Result<Vec<ScoredDetection>> {
    validate_radius(config.radius_um)?;
    let index = ImageIndex::new(&gt.images);

    let mut gt_by_image: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for p in &gt.points {
        gt_by_image.entry(p.image_id.as_str()).or_default().push(p.position());
    }
    let mut det_by_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in detections.iter().enumerate() {
        index.require(d.image_id())?;
        if d.confidence() >= config.min_confidence {
            det_by_image.entry(d.image_id()).or_default().push(i);
        }
    }

    let mut scored = Vec::new();
    for (image_id, mut dets) in det_by_image {
        let mpp = index.require(image_id)?.mpp;
        let gts = gt_by_image.get(image_id).map(Vec::as_slice).unwrap_or(&[]);
        let mut used = vec![false; gts.len()];
        dets.sort_by(|&a, &b| detections[b].confidence().total_cmp(&detections[a].confidence()));
        for i in dets {
            let d = &detections[i];
            let mut best: Option<(f64, usize)> = None;
            for (j, &g) in gts.iter().enumerate() {
                if used[j] {
                    continue;
                }
                let dist = pixel_distance(d.position(), g) * mpp;
                if dist <= config.radius_um && best.is_none_or(|(bd, _)| dist < bd) {
                    best = Some((dist, j));
                }
            }
            if let Some((_, j)) = best {
                used[j] = true;
            }
            scored.push(ScoredDetection { confidence: d.confidence(), is_tp: best.is_some(), detection_index: i });
        }
    }
    scored.sort_by_key(|s| s.detection_index);
    scored.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(scored)
}

/// Anything carrying a detector confidence.
pub trait HasConfidence {
    fn confidence(&self) -> f64;
}

impl HasConfidence for crate::model::Detection {
    fn confidence(&self) -> f64 {
        self.confidence
    }
}

/// Cumulative precision/recall at every detection in confidence order.
fn cumulative(scored: &[ScoredDetection], n_gt: usize) -> Vec<(usize, f64, f64, f64)> {
    let mut order: Vec<&ScoredDetection> = scored.iter().collect();
    order.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut tp = 0usize;
    order
        .iter()
        .enumerate()
        .map(|(i, s)| {
            tp += usize::from(s.is_tp);
            let precision = tp as f64 / (i + 1) as f64;
            let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
            (tp, recall, precision, s.confidence)
        })
        .collect()
}

/// All-points interpolated average precision under the monotone precision
/// envelope.
///
/// With no ground truth, AP is 1 when there are also no detections and 0
/// otherwise.
pub fn average_precision(scored: &[ScoredDetection], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if scored.is_empty() { 1.0 } else { 0.0 };
    }
    let curve = cumulative(scored, n_gt);
    exact_average_precision(&curve, n_gt).unwrap_or_else(|| {
        let mut envelope: Vec<f64> = curve.iter().map(|c| c.2).collect();
        for i in (0..envelope.len().saturating_sub(1)).rev() {
            envelope[i] = envelope[i].max(envelope[i + 1]);
        }
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for (c, env) in curve.iter().zip(&envelope) {
            if c.1 > prev_recall {
                ap += (c.1 - prev_recall) * env;
                prev_recall = c.1;
            }
        }
        ap
    })
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// The same integral in rational arithmetic, rounded once at the end. `None`
/// when the reduced fraction does not fit exactly in `f64` operands.
fn exact_average_precision(curve: &[(usize, f64, f64, f64)], n_gt: usize) -> Option<f64> {
    // envelope[i] = max_{j ≥ i} tp_j / (j + 1)
    let mut envelope: Vec<(u128, u128)> = curve.iter().enumerate().map(|(i, c)| (c.0 as u128, i as u128 + 1)).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        let (a, b) = envelope[i];
        let (c, d) = envelope[i + 1];
        if c * b > a * d {
            envelope[i] = (c, d);
        }
    }
    let (mut num, mut den) = (0u128, 1u128);
    let mut prev_tp = 0;
    for (c, &(a, b)) in curve.iter().zip(&envelope) {
        if c.0 > prev_tp {
            prev_tp = c.0;
            let n = num.checked_mul(b)?.checked_add(a.checked_mul(den)?)?;
            let d = den.checked_mul(b)?;
            let g = gcd(n, d).max(1);
            (num, den) = (n / g, d / g);
        }
    }
    let den = den.checked_mul(n_gt as u128)?;
    let g = gcd(num, den).max(1);
    let (num, den) = (num / g, den / g);
    const EXACT: u128 = 1 << 53;
    (num < EXACT && den < EXACT).then(|| num as f64 / den as f64)
}

/// Results against one ground-truth definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtEval {
    pub ap: f64,
    pub best_f1: f64,
    /// Confidence of the last accepted detection at the best-F1 cut; `None`
    /// when there are no detections.
    pub best_f1_confidence: Option<f64>,
    pub n_gt: usize,
    pub n_det: usize,
    /// `[recall, precision, confidence]` after each detection.
    pub pr_curve: Vec<[f64; 3]>,
}

pub fn evaluate(scored: &[ScoredDetection], n_gt: usize) -> GtEval {
    let curve = cumulative(scored, n_gt);
    let mut best_f1 = Prf::from_counts(0, 0, n_gt).f1;
    let mut best_f1_confidence = None;
    for (i, &(tp, _, _, conf)) in curve.iter().enumerate() {
        let f1 = Prf::from_counts(tp, i + 1 - tp, n_gt - tp).f1;
        if best_f1_confidence.is_none() || f1 > best_f1 {
            best_f1 = f1;
            best_f1_confidence = Some(conf);
        }
    }
    GtEval {
        ap: average_precision(scored, n_gt),
        best_f1,
        best_f1_confidence,
        n_gt,
        n_det: scored.len(),
        pr_curve: curve.iter().map(|&(_, r, p, c)| [r, p, c]).collect(),
    }
}

/// Evaluation report keyed by ground-truth name.
pub type EvalReport = BTreeMap<String, GtEval>;

/// Scores the same detections against several ground-truth definitions
/// covering the same images.
pub fn cross_label_eval<D: Located + HasConfidence>(
    detections: &[D],
    ground_truths: &[(&str, &GroundTruth)],
    config: &EvalConfig,
) -> Result<EvalReport> {
    if let Some((first_name, first)) = ground_truths.first() {
        let ids = first.image_ids();
        for (name, gt) in &ground_truths[1..] {
            if gt.image_ids() != ids {
                return Err(Error::ImageSetMismatch(format!("`{first_name}` vs `{name}`")));
            }
        }
    }
    let mut report = EvalReport::new();
    for (name, gt) in ground_truths {
        let scored = score_detections(detections, gt, config)?;
        report.insert((*name).to_owned(), evaluate(&scored, gt.points.len()));
    }
    Ok(report)
}
