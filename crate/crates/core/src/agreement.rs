//! Object-level agreement between raters and leave-one-out consensus, the
//! intraclass correlation of mitotic counts, and consensus-threshold sweeps.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::consensus::{self, validate_radius, ConsensusConfig, ConsensusSet};
use crate::error::{Error, Result};
use crate::model::{pixel_distance, ImageIndex, LabelFilter, Located, PointAnnotation, Study};

/// One accepted pair; indices refer to the input slices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub left: usize,
    pub right: usize,
    pub distance_um: f64,
}

/// A one-to-one pairing of two point sets under a distance cap.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matching {
    /// Sorted by distance ascending.
    pub pairs: Vec<MatchedPair>,
    pub unmatched_left: Vec<usize>,
    pub unmatched_right: Vec<usize>,
}

impl Matching {
    pub fn tp(&self) -> usize {
        self.pairs.len()
    }
}

/// Greedy global matching.
///
/// All same-image cross pairs within `radius_um` are sorted by
/// `(distance, left index, right index)`; a pair is accepted when both of its
/// endpoints are still free.
pub fn match_points<L, R>(left: &[L], right: &[R], radius_um: f64, images: &ImageIndex) -> Result<Matching>
where
    L: Located,
    R: Located,
{
    validate_radius(radius_um)?;
    let mut right_by_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (j, r) in right.iter().enumerate() {
        images.require(r.image_id())?;
        right_by_image.entry(r.image_id()).or_default().push(j);
    }

    let mut candidates = Vec::new();
    for (i, l) in left.iter().enumerate() {
        let mpp = images.require(l.image_id())?.mpp;
        let Some(rs) = right_by_image.get(l.image_id()) else { continue };
        for &j in rs {
            let d = pixel_distance(l.position(), right[j].position()) * mpp;
            if d <= radius_um {
                candidates.push(MatchedPair { left: i, right: j, distance_um: d });
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.distance_um
            .total_cmp(&b.distance_um)
            .then(a.left.cmp(&b.left))
            .then(a.right.cmp(&b.right))
    });

    let mut left_used = vec![false; left.len()];
    let mut right_used = vec![false; right.len()];
    let mut pairs = Vec::new();
    for c in candidates {
        if !left_used[c.left] && !right_used[c.right] {
            left_used[c.left] = true;
            right_used[c.right] = true;
            pairs.push(c);
        }
    }
    Ok(Matching {
        pairs,
        unmatched_left: (0..left.len()).filter(|&i| !left_used[i]).collect(),
        unmatched_right: (0..right.len()).filter(|&j| !right_used[j]).collect(),
    })
}

/// Precision, recall and F1 from pooled counts.
///
/// Precision is 1 when nothing was predicted, recall is 1 when there is
/// nothing to find, and F1 is 0 when both precision and recall are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { tp, fp, fn_, precision, recall, f1 }
    }
}

/// Scores one rater's annotations against a consensus that excluded them.
/// Counts are pooled over all images.
pub fn rater_prf(rater_annotations: &[PointAnnotation], consensus: &ConsensusSet, radius_um: f64) -> Result<Prf> {
    let index = ImageIndex::new(&consensus.images);
    let m = match_points(rater_annotations, &consensus.entries, radius_um, &index)?;
    Ok(Prf::from_counts(m.tp(), m.unmatched_left.len(), m.unmatched_right.len()))
}

/// One line of the agreement report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementRow {
    pub phase_tag: String,
    pub rater_id: String,
    pub threshold: usize,
    pub prf: Prf,
}

/// Options shared by the agreement and sweep computations.
#[derive(Debug, Clone, PartialEq)]
pub struct AgreementConfig {
    pub consensus: ConsensusConfig,
    /// Rater-to-consensus matching radius; the clustering radius by default.
    pub match_radius_um: f64,
    pub phase_tag: String,
}

impl Default for AgreementConfig {
    fn default() -> Self {
        let consensus = ConsensusConfig::default();
        Self { match_radius_um: consensus.radius_um, consensus, phase_tag: String::new() }
    }
}

impl AgreementConfig {
    pub fn new(consensus: ConsensusConfig, phase_tag: impl Into<String>) -> Self {
        Self { match_radius_um: consensus.radius_um, consensus, phase_tag: phase_tag.into() }
    }
}

fn check_loo_threshold(study: &Study, t: usize) -> Result<()> {
    let others = study.raters().len().saturating_sub(1);
    if t < 1 || t > others {
        return Err(Error::Config(format!(
            "threshold {t} outside 1..={others} (leave-one-out over {} raters)",
            study.raters().len()
        )));
    }
    Ok(())
}

/// Every rater of the study against the consensus of the remaining raters.
pub fn leave_one_out_agreement(study: &Study, config: &AgreementConfig) -> Result<Vec<AgreementRow>> {
    let t = config.consensus.min_raters;
    threshold_sweep(study, config, t, t)
}

/// Leave-one-out agreement for every threshold in `t_min..=t_max`.
///
/// Rows are ordered by `(threshold, rater_id)`.
pub fn threshold_sweep(study: &Study, config: &AgreementConfig, t_min: usize, t_max: usize) -> Result<Vec<AgreementRow>> {
    config.consensus.validate()?;
    validate_radius(config.match_radius_um)?;
    if t_min > t_max {
        return Err(Error::Config(format!("t_min {t_min} exceeds t_max {t_max}")));
    }
    check_loo_threshold(study, t_min)?;
    check_loo_threshold(study, t_max)?;

    let filter = &config.consensus.label_filter;
    let per_rater = study
        .raters()
        .iter()
        .map(|r| {
            let clusters = consensus::study_clusters(study, config.consensus.radius_um, filter, Some(r))?;
            Ok((r, clusters, study.rater_annotations(r, filter)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(per_rater.len() * (t_max - t_min + 1));
    for t in t_min..=t_max {
        let cfg = config.consensus.with_min_raters(t);
        for (rater, clusters, own) in &per_rater {
            let set = consensus::assemble(study, &cfg, clusters, Some(rater))?;
            rows.push(AgreementRow {
                phase_tag: config.phase_tag.clone(),
                rater_id: (*rater).clone(),
                threshold: t,
                prf: rater_prf(own, &set, config.match_radius_um)?,
            });
        }
    }
    Ok(rows)
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: f64::NAN, sd: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, sd }
    }
}

/// Macro averages over raters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AgreementSummary {
    pub precision: MeanSd,
    pub recall: MeanSd,
    pub f1: MeanSd,
}

impl AgreementSummary {
    pub fn of(rows: &[AgreementRow]) -> Self {
        let pick = |f: fn(&Prf) -> f64| rows.iter().map(|r| f(&r.prf)).collect::<Vec<_>>();
        Self {
            precision: MeanSd::of(&pick(|p| p.precision)),
            recall: MeanSd::of(&pick(|p| p.recall)),
            f1: MeanSd::of(&pick(|p| p.f1)),
        }
    }
}

#[derive(Serialize)]
struct AgreementRecord<'a> {
    phase_tag: &'a str,
    rater_id: &'a str,
    threshold: usize,
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    precision: f64,
    recall: f64,
    f1: f64,
}

/// Writes the agreement CSV report.
pub fn write_agreement_csv<W: Write>(rows: &[AgreementRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(AgreementRecord {
            phase_tag: &r.phase_tag,
            rater_id: &r.rater_id,
            threshold: r.threshold,
            tp: r.prf.tp,
            fp: r.prf.fp,
            fn_: r.prf.fn_,
            precision: r.prf.precision,
            recall: r.prf.recall,
            f1: r.prf.f1,
        })
        .map_err(csv_err)?;
    }
    if rows.is_empty() {
        w.write_record(["phase_tag", "rater_id", "threshold", "tp", "fp", "fn", "precision", "recall", "f1"])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Schema(format!("{other:?}")),
    }
}

/// Images × raters table of mitotic counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    image_ids: Vec<String>,
    rater_ids: Vec<String>,
    counts: Vec<f64>,
}

impl CountMatrix {
    /// Builds a matrix from rows (one per image). Rows must be rectangular.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch("count matrix rows have different lengths".into()));
        }
        Ok(Self {
            image_ids: (0..rows.len()).map(|i| format!("image_{i}")).collect(),
            rater_ids: (0..k).map(|j| format!("rater_{j}")).collect(),
            counts: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn n_images(&self) -> usize {
        self.image_ids.len()
    }

    pub fn n_raters(&self) -> usize {
        self.rater_ids.len()
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn rater_ids(&self) -> &[String] {
        &self.rater_ids
    }

    pub fn get(&self, image: usize, rater: usize) -> f64 {
        self.counts[image * self.n_raters() + rater]
    }

    pub fn row(&self, image: usize) -> &[f64] {
        let k = self.n_raters();
        &self.counts[image * k..(image + 1) * k]
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.n_raters())
            .map(|r| (0..self.n_images()).map(|i| self.get(i, r)).sum())
            .collect()
    }
}

/// Number of annotations per (image, rater) after label filtering. Rows follow
/// the study's image order, columns its rater roster.
pub fn mitotic_count_matrix(study: &Study, filter: &LabelFilter) -> CountMatrix {
    let images: BTreeMap<&str, usize> =
        study.images().iter().enumerate().map(|(i, m)| (m.image_id.as_str(), i)).collect();
    let raters: BTreeMap<&str, usize> =
        study.raters().iter().enumerate().map(|(j, r)| (r.as_str(), j)).collect();
    let k = raters.len();
    let mut counts = vec![0.0; images.len() * k];
    for a in study.annotations().iter().filter(|a| filter.contains(a.label)) {
        counts[images[a.image_id.as_str()] * k + raters[a.rater_id.as_str()]] += 1.0;
    }
    CountMatrix {
        image_ids: study.images().iter().map(|m| m.image_id.clone()).collect(),
        rater_ids: study.raters().to_vec(),
        counts,
    }
}

/// ICC(2,1) together with the mean squares it was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IccReport {
    pub n_images: usize,
    pub k_raters: usize,
    pub icc_2_1: f64,
    pub ms_r: f64,
    pub ms_c: f64,
    pub ms_e: f64,
}

/// Two-way random effects, absolute agreement, single-rater ICC.
///
/// Uses the mean squares of a two-way ANOVA without replication: between
/// images (`ms_r`), between raters (`ms_c`) and residual (`ms_e`).
pub fn icc(matrix: &CountMatrix) -> Result<IccReport> {
    let (n, k) = (matrix.n_images(), matrix.n_raters());
    if n < 2 || k < 2 {
        return Err(Error::Config(format!("ICC needs at least 2 images and 2 raters, got {n}x{k}")));
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = matrix.counts.iter().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = (0..n).map(|i| matrix.row(i).iter().sum::<f64>() / kf).collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| (0..n).map(|i| matrix.get(i, j)).sum::<f64>() / nf)
        .collect();

    let ss_r = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_c = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let mut ss_e = 0.0;
    for (i, rm) in row_means.iter().enumerate() {
        for (j, cm) in col_means.iter().enumerate() {
            ss_e += (matrix.get(i, j) - rm - cm + grand).powi(2);
        }
    }

    let ms_r = ss_r / (nf - 1.0);
    let ms_c = ss_c / (kf - 1.0);
    let ms_e = ss_e / ((nf - 1.0) * (kf - 1.0));
    let denom = ms_r + (kf - 1.0) * ms_e + kf / nf * (ms_c - ms_e);
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::Degenerate("ICC denominator is zero (no variance in the counts)".into()));
    }
    Ok(IccReport { n_images: n, k_raters: k, icc_2_1: (ms_r - ms_e) / denom, ms_r, ms_c, ms_e })
}
