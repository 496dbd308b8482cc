//! Multi-rater consensus by sequential distance-based clustering.
//!
//! Annotations are visited in canonical order. Each one joins the nearest
//! existing cluster on the same image whose centroid lies within the radius
//! (ties go to the lowest cluster id) or opens a new cluster. A cluster becomes
//! a consensus mitotic figure when it holds annotations from at least
//! `min_raters` distinct raters.

use std::collections::{BTreeMap, BTreeSet};

use rustc_hash::FxHashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    pixel_distance, GtPoint, ImageIndex, ImageMeta, LabelFilter, Located,
    PointAnnotation, Study,
};

pub const DEFAULT_RADIUS_UM: f64 = 7.5;
pub const DEFAULT_MIN_RATERS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusConfig {
    pub radius_um: f64,
    pub min_raters: usize,
    #[serde(rename = "labels")]
    pub label_filter: LabelFilter,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            radius_um: DEFAULT_RADIUS_UM,
            min_raters: DEFAULT_MIN_RATERS,
            label_filter: LabelFilter::he_visible(),
        }
    }
}

impl ConsensusConfig {
    pub fn with_min_raters(&self, min_raters: usize) -> Self {
        Self { min_raters, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        validate_radius(self.radius_um)?;
        validate_min_raters(self.min_raters)
    }
}

pub(crate) fn validate_radius(radius_um: f64) -> Result<()> {
    if !(radius_um.is_finite() && radius_um > 0.0) {
        return Err(Error::Config(format!("radius_um must be > 0, got {radius_um}")));
    }
    Ok(())
}

fn validate_min_raters(min_raters: usize) -> Result<()> {
    if min_raters < 1 {
        return Err(Error::Config("min_raters must be at least 1".into()));
    }
    Ok(())
}

/// A group of annotations borrowed from the clustered input.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster<'a> {
    pub cluster_id: usize,
    pub image_id: &'a str,
    pub members: Vec<&'a PointAnnotation>,
    /// Distance (µm) from each member to the centroid at the moment it joined;
    /// zero for the seed.
    pub join_distances_um: Vec<f64>,
    sum: (f64, f64),
}

impl<'a> Cluster<'a> {
    fn seed(cluster_id: usize, a: &'a PointAnnotation) -> Self {
        Self {
            cluster_id,
            image_id: &a.image_id,
            members: vec![a],
            join_distances_um: vec![0.0],
            sum: (a.x_px, a.y_px),
        }
    }

    fn join(&mut self, a: &'a PointAnnotation, distance_um: f64) {
        self.sum.0 += a.x_px;
        self.sum.1 += a.y_px;
        self.members.push(a);
        self.join_distances_um.push(distance_um);
    }

    /// Arithmetic mean of the member coordinates.
    pub fn center(&self) -> (f64, f64) {
        let n = self.members.len() as f64;
        (self.sum.0 / n, self.sum.1 / n)
    }

    pub fn distinct_raters(&self) -> BTreeSet<&'a str> {
        self.members.iter().map(|m| m.rater_id.as_str()).collect()
    }

    pub fn n_distinct_raters(&self) -> usize {
        self.distinct_raters().len()
    }
}

/// Uniform grid over centroids of one image, cell edge ≥ radius in pixels.
struct CentroidGrid {
    cell_px: f64,
    cells: FxHashMap<(i64, i64), Vec<usize>>,
}

impl CentroidGrid {
    fn new(radius_px: f64) -> Self {
        // slack so that a centroid within the radius is never two cells away
        Self { cell_px: radius_px * (1.0 + 1e-9), cells: FxHashMap::default() }
    }

    fn cell(&self, (x, y): (f64, f64)) -> (i64, i64) {
        ((x / self.cell_px).floor() as i64, (y / self.cell_px).floor() as i64)
    }

    fn insert(&mut self, slot: usize, at: (f64, f64)) {
        let key = self.cell(at);
        self.cells.entry(key).or_default().push(slot);
    }

    fn relocate(&mut self, slot: usize, from: (f64, f64), to: (f64, f64)) {
        let (a, b) = (self.cell(from), self.cell(to));
        if a == b {
            return;
        }
        if let Some(v) = self.cells.get_mut(&a) {
            v.retain(|&s| s != slot);
        }
        self.cells.entry(b).or_default().push(slot);
    }

    fn near(&self, at: (f64, f64)) -> impl Iterator<Item = usize> + '_ {
        let (cx, cy) = self.cell(at);
        (-1..=1)
            .flat_map(move |dx| (-1..=1).map(move |dy| (cx + dx, cy + dy)))
            .filter_map(|k| self.cells.get(&k))
            .flatten()
            .copied()
    }
}

/// Clusters annotations in the order given (callers pass canonical order).
///
/// Cluster ids are assigned in creation order across all images.
pub fn cluster_annotations<'a>(
    annotations: impl IntoIterator<Item = &'a PointAnnotation>,
    radius_um: f64,
    images: &ImageIndex,
) -> Result<Vec<Cluster<'a>>> {
    validate_radius(radius_um)?;
    let mut clusters: Vec<Cluster<'a>> = Vec::new();
    let mut grids: Vec<(&'a str, f64, CentroidGrid)> = Vec::new();
    // canonical input visits one image at a time, so the last grid usually matches
    let mut current = usize::MAX;

    for a in annotations {
        if grids.get(current).is_none_or(|g| g.0 != a.image_id) {
            current = match grids.iter().position(|g| g.0 == a.image_id) {
                Some(i) => i,
                None => {
                    let mpp = images.require(&a.image_id)?.mpp;
                    grids.push((&a.image_id, mpp, CentroidGrid::new(radius_um / mpp)));
                    grids.len() - 1
                }
            };
        }
        let (_, mpp, grid) = &mut grids[current];
        let mpp = *mpp;

        let p = (a.x_px, a.y_px);
        let mut best: Option<(f64, usize)> = None;
        for slot in grid.near(p) {
            let d = pixel_distance(p, clusters[slot].center()) * mpp;
            if d > radius_um {
                continue;
            }
            let better = match best {
                None => true,
                Some((bd, bs)) => d < bd || (d == bd && clusters[slot].cluster_id < clusters[bs].cluster_id),
            };
            if better {
                best = Some((d, slot));
            }
        }

        match best {
            Some((d, slot)) => {
                let before = clusters[slot].center();
                clusters[slot].join(a, d);
                grid.relocate(slot, before, clusters[slot].center());
            }
            None => {
                let slot = clusters.len();
                clusters.push(Cluster::seed(slot, a));
                grid.insert(slot, p);
            }
        }
    }
    Ok(clusters)
}

/// A consensus mitotic figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusEntry {
    pub image_id: String,
    pub x_px: f64,
    pub y_px: f64,
    pub n_raters: usize,
}

impl Located for ConsensusEntry {
    fn image_id(&self) -> &str {
        &self.image_id
    }
    fn position(&self) -> (f64, f64) {
        (self.x_px, self.y_px)
    }
}

/// Keeps clusters backed by at least `min_raters` distinct raters, in
/// cluster-id order.
pub fn consensus(clusters: &[Cluster], min_raters: usize) -> Result<Vec<ConsensusEntry>> {
    validate_min_raters(min_raters)?;
    Ok(clusters
        .iter()
        .filter_map(|c| {
            let n_raters = c.n_distinct_raters();
            (n_raters >= min_raters).then(|| {
                let (x_px, y_px) = c.center();
                ConsensusEntry { image_id: c.image_id.to_owned(), x_px, y_px, n_raters }
            })
        })
        .collect())
}

/// A ground-truth set derived from multi-rater annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusSet {
    pub config: ConsensusConfig,
    pub images: Vec<ImageMeta>,
    pub source_raters: Vec<String>,
    pub entries: Vec<ConsensusEntry>,
}

impl ConsensusSet {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let set: ConsensusSet = serde_json::from_slice(bytes).map_err(|e| Error::Schema(e.to_string()))?;
        set.config.validate()?;
        let index = ImageIndex::new(&set.images);
        for e in &set.entries {
            index.require(&e.image_id)?;
            if e.n_raters < set.config.min_raters {
                return Err(Error::Range(format!(
                    "entry on {} has {} raters, below min_raters {}",
                    e.image_id, e.n_raters, set.config.min_raters
                )));
            }
        }
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("consensus serializes")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn points(&self) -> Vec<GtPoint> {
        self.entries
            .iter()
            .map(|e| GtPoint { image_id: e.image_id.clone(), x_px: e.x_px, y_px: e.y_px })
            .collect()
    }

    /// Number of entries on each image of the set (zero-filled).
    pub fn counts_per_image(&self) -> BTreeMap<&str, usize> {
        let mut counts: BTreeMap<&str, usize> = self.images.iter().map(|i| (i.image_id.as_str(), 0)).collect();
        for e in &self.entries {
            *counts.entry(e.image_id.as_str()).or_default() += 1;
        }
        counts
    }
}

fn check_against_roster(config: &ConsensusConfig, n_raters: usize) -> Result<()> {
    config.validate()?;
    if config.min_raters > n_raters {
        return Err(Error::Config(format!(
            "min_raters {} exceeds the {} raters of the study",
            config.min_raters, n_raters
        )));
    }
    Ok(())
}

/// Clusters of the study's filtered annotations, optionally leaving one rater out.
pub fn study_clusters<'a>(
    study: &'a Study,
    radius_um: f64,
    filter: &LabelFilter,
    excluded_rater: Option<&str>,
) -> Result<Vec<Cluster<'a>>> {
    if let Some(r) = excluded_rater {
        if !study.has_rater(r) {
            return Err(Error::UnknownRater(r.to_owned()));
        }
    }
    let kept = study
        .annotations()
        .iter()
        .filter(|a| filter.contains(a.label) && Some(a.rater_id.as_str()) != excluded_rater);
    cluster_annotations(kept, radius_um, study.index())
}

pub(crate) fn assemble(
    study: &Study,
    config: &ConsensusConfig,
    clusters: &[Cluster],
    excluded_rater: Option<&str>,
) -> Result<ConsensusSet> {
    Ok(ConsensusSet {
        config: config.clone(),
        images: study.images().to_vec(),
        source_raters: study
            .raters()
            .iter()
            .filter(|r| Some(r.as_str()) != excluded_rater)
            .cloned()
            .collect(),
        entries: consensus(clusters, config.min_raters)?,
    })
}

/// Consensus over all raters of the study.
pub fn build_consensus(study: &Study, config: &ConsensusConfig) -> Result<ConsensusSet> {
    check_against_roster(config, study.raters().len())?;
    let clusters = study_clusters(study, config.radius_um, &config.label_filter, None)?;
    assemble(study, config, &clusters, None)
}

/// Consensus over every rater except `excluded_rater`, whose annotations are
/// removed before clustering.
pub fn leave_one_out_consensus(
    study: &Study,
    excluded_rater: &str,
    config: &ConsensusConfig,
) -> Result<ConsensusSet> {
    if !study.has_rater(excluded_rater) {
        return Err(Error::UnknownRater(excluded_rater.to_owned()));
    }
    check_against_roster(config, study.raters().len() - 1)?;
    let clusters = study_clusters(study, config.radius_um, &config.label_filter, Some(excluded_rater))?;
    assemble(study, config, &clusters, Some(excluded_rater))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Label;

    fn ann(id: &str, rater: &str, x: f64, y: f64) -> PointAnnotation {
        PointAnnotation {
            annotation_id: id.into(),
            rater_id: rater.into(),
            image_id: "img".into(),
            x_px: x,
            y_px: y,
            label: Label::HeAndPhh3,
        }
    }

    fn index() -> ImageIndex {
        // mpp 1.0 so pixel offsets read as micrometers
        ImageIndex::new(&[ImageMeta::new("img", 1000, 1000, 1.0).unwrap()])
    }

    #[test]
    fn close_pair_forms_one_cluster() {
        let anns = [ann("1", "A", 100.0, 100.0), ann("2", "B", 105.0, 100.0)];
        let c = cluster_annotations(&anns, 7.5, &index())
            .unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].n_distinct_raters(), 2);
        assert_eq!(c[0].center(), (102.5, 100.0));
    }

    #[test]
    fn distant_pair_forms_two_clusters() {
        let anns = [ann("1", "A", 100.0, 100.0), ann("2", "B", 120.0, 100.0)];
        let c = cluster_annotations(&anns, 7.5, &index())
            .unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn centroid_drift_on_a_line() {
        let pts = [ann("1", "A", 100.0, 50.0), ann("2", "B", 106.0, 50.0), ann("3", "C", 112.0, 50.0)];
        let c = cluster_annotations(&pts, 7.5, &index()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].members.len(), 2);
        assert_eq!(c[0].center(), (103.0, 50.0));
        assert_eq!(c[1].members[0].annotation_id, "3");
        assert_eq!(c[0].join_distances_um, vec![0.0, 6.0]);
    }

    #[test]
    fn tie_goes_to_lowest_cluster_id() {
        let pts = [ann("1", "A", 100.0, 50.0), ann("2", "B", 110.0, 50.0), ann("3", "C", 105.0, 50.0)];
        let c = cluster_annotations(&pts, 7.5, &index()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].members.len(), 2);
        assert_eq!(c[1].members.len(), 1);
    }

    #[test]
    fn distinct_rater_threshold() {
        let anns = [ann("1", "A", 10.0, 10.0), ann("2", "A", 11.0, 10.0)];
        let c = cluster_annotations(&anns, 7.5, &index()).unwrap();
        assert_eq!(c.len(), 1);
        assert!(consensus(&c, 2).unwrap().is_empty());
        assert_eq!(consensus(&c, 1).unwrap().len(), 1);
        assert!(matches!(consensus(&c, 0), Err(Error::Config(_))));
    }

    #[test]
    fn six_rater_cluster_is_included() {
        let pts: Vec<_> = (0..6).map(|i| ann(&i.to_string(), &format!("r{i}"), 50.0 + i as f64 * 0.5, 50.0)).collect();
        let c = cluster_annotations(&pts, 7.5, &index()).unwrap();
        let e = consensus(&c, 6).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].n_raters, 6);
    }

    #[test]
    fn unknown_image_is_a_reference_error() {
        let mut a = ann("1", "A", 1.0, 1.0);
        a.image_id = "missing".into();
        assert!(matches!(cluster_annotations(&[a], 7.5, &index()), Err(Error::Reference(_))));
    }

    fn study() -> Study {
        let img = ImageMeta::new("img", 1000, 1000, 1.0).unwrap();
        Study::with_roster(
            vec![img],
            vec![ann("a1", "A", 10.0, 10.0), ann("a2", "A", 500.0, 500.0), ann("b1", "B", 12.0, 10.0)],
            vec!["A".into(), "B".into(), "C".into()],
            None,
        )
        .unwrap()
    }

    #[test]
    fn leave_one_out_of_two_raters() {
        let s = study();
        let cfg = ConsensusConfig::default().with_min_raters(1);
        let loo = leave_one_out_consensus(&s, "A", &cfg).unwrap();
        assert_eq!(loo.entries.len(), 1);
        assert_eq!((loo.entries[0].x_px, loo.entries[0].y_px), (12.0, 10.0));
        assert_eq!(loo.source_raters, ["B", "C"]);
    }

    #[test]
    fn excluding_silent_rater_is_a_noop() {
        let s = study();
        let cfg = ConsensusConfig::default().with_min_raters(1);
        let full = build_consensus(&s, &cfg).unwrap();
        let loo = leave_one_out_consensus(&s, "C", &cfg).unwrap();
        assert_eq!(full.entries, loo.entries);
        assert!(matches!(leave_one_out_consensus(&s, "Z", &cfg), Err(Error::UnknownRater(_))));
    }

    #[test]
    fn min_raters_above_roster_is_config_error() {
        let s = study();
        let cfg = ConsensusConfig::default().with_min_raters(4);
        assert!(matches!(build_consensus(&s, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn consensus_json_round_trip() {
        let s = study();
        let set = build_consensus(&s, &ConsensusConfig::default().with_min_raters(1)).unwrap();
        let back = ConsensusSet::from_json(set.to_json().as_bytes()).unwrap();
        assert_eq!(back, set);
    }
}
