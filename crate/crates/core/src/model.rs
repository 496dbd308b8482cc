//! Domain types for point annotations and detections, plus the JSON
//! annotation and detection file formats.
//!
//! Coordinates are stored in pixels; every distance threshold is expressed in
//! micrometers and converted through the image's isotropic resolution (`mpp`).
//! Annotations are kept in the canonical order `(image_id, rater_id,
//! annotation_id)` because the clustering in [`crate::consensus`] is
//! order-sensitive.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three annotation classes available to raters when both stains are
/// overlaid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Label {
    /// Identifiable in both H&E and PHH3.
    HeAndPhh3,
    /// Identifiable in H&E only.
    HeOnly,
    /// Identifiable in PHH3 only.
    Phh3Only,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::HeAndPhh3, Label::HeOnly, Label::Phh3Only];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::HeAndPhh3 => "HE_AND_PHH3",
            Label::HeOnly => "HE_ONLY",
            Label::Phh3Only => "PHH3_ONLY",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HE_AND_PHH3" => Ok(Label::HeAndPhh3),
            "HE_ONLY" => Ok(Label::HeOnly),
            "PHH3_ONLY" => Ok(Label::Phh3Only),
            other => Err(Error::Config(format!("unknown label `{other}`"))),
        }
    }
}

/// A non-empty set of labels to keep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Label>", into = "Vec<Label>")]
pub struct LabelFilter {
    labels: BTreeSet<Label>,
}

impl LabelFilter {
    pub fn new(labels: impl IntoIterator<Item = Label>) -> Result<Self> {
        let labels: BTreeSet<Label> = labels.into_iter().collect();
        if labels.is_empty() {
            return Err(Error::Config("label filter must not be empty".into()));
        }
        Ok(Self { labels })
    }

    /// Every label.
    pub fn all() -> Self {
        Self { labels: Label::ALL.into_iter().collect() }
    }

    /// Labels recognisable in H&E: `HE_AND_PHH3` and `HE_ONLY`.
    pub fn he_visible() -> Self {
        Self { labels: [Label::HeAndPhh3, Label::HeOnly].into_iter().collect() }
    }

    pub fn contains(&self, label: Label) -> bool {
        self.labels.contains(&label)
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.labels.iter().copied()
    }
}

impl Default for LabelFilter {
    fn default() -> Self {
        Self::he_visible()
    }
}

impl TryFrom<Vec<Label>> for LabelFilter {
    type Error = Error;

    fn try_from(v: Vec<Label>) -> Result<Self> {
        LabelFilter::new(v)
    }
}

impl From<LabelFilter> for Vec<Label> {
    fn from(f: LabelFilter) -> Self {
        f.labels.into_iter().collect()
    }
}

impl FromStr for LabelFilter {
    type Err = Error;

    /// Parses a comma separated list such as `he_and_phh3,he_only`.
    fn from_str(s: &str) -> Result<Self> {
        let labels = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(Label::from_str)
            .collect::<Result<Vec<_>>>()?;
        LabelFilter::new(labels)
    }
}

impl fmt::Display for LabelFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.labels.iter().map(|l| l.as_str().to_ascii_lowercase()).collect();
        f.write_str(&parts.join(","))
    }
}

/// Keeps the annotations whose label passes `filter`, preserving order.
pub fn filter_labels(annotations: &[PointAnnotation], filter: &LabelFilter) -> Vec<PointAnnotation> {
    annotations.iter().filter(|a| filter.contains(a.label)).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageMeta {
    pub image_id: String,
    pub width_px: u32,
    pub height_px: u32,
    /// Micrometers per pixel.
    #[serde(rename = "mpp_um_per_px")]
    pub mpp: f64,
}

impl ImageMeta {
    pub fn new(image_id: impl Into<String>, width_px: u32, height_px: u32, mpp: f64) -> Result<Self> {
        let meta = Self { image_id: image_id.into(), width_px, height_px, mpp };
        meta.validate()?;
        Ok(meta)
    }

    fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::Range(format!("image {} has zero size", self.image_id)));
        }
        if !(self.mpp.is_finite() && self.mpp > 0.0) {
            return Err(Error::Range(format!("image {} has mpp {} (must be > 0)", self.image_id, self.mpp)));
        }
        Ok(())
    }

    /// Imaged tissue area in mm².
    pub fn area_mm2(&self) -> f64 {
        self.width_px as f64 * self.height_px as f64 * self.mpp * self.mpp / 1e6
    }

    pub fn width_um(&self) -> f64 {
        self.width_px as f64 * self.mpp
    }

    pub fn height_um(&self) -> f64 {
        self.height_px as f64 * self.mpp
    }

    /// Whether `(x, y)` lies inside the closed pixel rectangle of the image.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x.is_finite()
            && y.is_finite()
            && (0.0..=self.width_px as f64).contains(&x)
            && (0.0..=self.height_px as f64).contains(&y)
    }
}

/// A point-like object placed on an image.
pub trait Located {
    fn image_id(&self) -> &str;
    fn position(&self) -> (f64, f64);
}

/// Physical distance in micrometers between two points of the same image.
pub fn distance_um<A, B>(a: &A, b: &B, mpp: f64) -> Result<f64>
where
    A: Located + ?Sized,
    B: Located + ?Sized,
{
    if a.image_id() != b.image_id() {
        return Err(Error::CrossImage(a.image_id().to_owned(), b.image_id().to_owned()));
    }
    Ok(pixel_distance(a.position(), b.position()) * mpp)
}

#[inline]
pub(crate) fn pixel_distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    (dx * dx + dy * dy).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointAnnotation {
    pub annotation_id: String,
    pub rater_id: String,
    pub image_id: String,
    pub x_px: f64,
    pub y_px: f64,
    pub label: Label,
}

impl PointAnnotation {
    fn canonical_key(&self) -> (&str, &str, &str) {
        (&self.image_id, &self.rater_id, &self.annotation_id)
    }
}

impl Located for PointAnnotation {
    fn image_id(&self) -> &str {
        &self.image_id
    }
    fn position(&self) -> (f64, f64) {
        (self.x_px, self.y_px)
    }
}

/// A bare ground-truth location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtPoint {
    pub image_id: String,
    pub x_px: f64,
    pub y_px: f64,
}

impl Located for GtPoint {
    fn image_id(&self) -> &str {
        &self.image_id
    }
    fn position(&self) -> (f64, f64) {
        (self.x_px, self.y_px)
    }
}

/// A detector output. When a box is present the center is its midpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub image_id: String,
    pub x_px: f64,
    pub y_px: f64,
    pub confidence: f64,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
}

impl Detection {
    pub fn new(image_id: impl Into<String>, x_px: f64, y_px: f64, confidence: f64) -> Self {
        Self { image_id: image_id.into(), x_px, y_px, confidence, bbox: None }
    }

    /// Builds a detection from a box; the center is the box midpoint.
    pub fn from_box(image_id: impl Into<String>, bbox: [f64; 4], confidence: f64) -> Self {
        Self {
            image_id: image_id.into(),
            x_px: 0.5 * (bbox[0] + bbox[2]),
            y_px: 0.5 * (bbox[1] + bbox[3]),
            confidence,
            bbox: Some(bbox),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.x_px.is_finite() && self.y_px.is_finite()) {
            return Err(Error::Range(format!("detection on {} has non-finite center", self.image_id)));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Range(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        if let Some([x0, y0, x1, y1]) = self.bbox {
            if !(x0 < x1 && y0 < y1) {
                return Err(Error::Range(format!("degenerate box [{x0}, {y0}, {x1}, {y1}]")));
            }
            let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
            let tol = 1e-6 * (1.0 + cx.abs().max(cy.abs()));
            if (cx - self.x_px).abs() > tol || (cy - self.y_px).abs() > tol {
                return Err(Error::Range(format!(
                    "detection center ({}, {}) is not the box midpoint ({cx}, {cy})",
                    self.x_px, self.y_px
                )));
            }
        }
        Ok(())
    }
}

impl Located for Detection {
    fn image_id(&self) -> &str {
        &self.image_id
    }
    fn position(&self) -> (f64, f64) {
        (self.x_px, self.y_px)
    }
}

/// Image lookup by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageIndex {
    images: BTreeMap<String, ImageMeta>,
}

impl ImageIndex {
    pub fn new<'a>(images: impl IntoIterator<Item = &'a ImageMeta>) -> Self {
        Self { images: images.into_iter().map(|m| (m.image_id.clone(), m.clone())).collect() }
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageMeta> {
        self.images.get(image_id)
    }

    pub fn require(&self, image_id: &str) -> Result<&ImageMeta> {
        self.get(image_id).ok_or_else(|| Error::Reference(format!("unknown image_id `{image_id}`")))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.images.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationFileRaw {
    images: Vec<ImageMeta>,
    annotations: Vec<PointAnnotation>,
    #[serde(default)]
    raters: Option<Vec<String>>,
    #[serde(default)]
    ground_truth: Option<Vec<GtPoint>>,
}

#[derive(Serialize)]
struct AnnotationFileOut<'a> {
    images: &'a [ImageMeta],
    raters: &'a [String],
    annotations: &'a [PointAnnotation],
    #[serde(skip_serializing_if = "Option::is_none")]
    ground_truth: Option<&'a [GtPoint]>,
}

/// A validated multi-rater annotation document in canonical order.
///
/// Besides `images` and `annotations`, the file may list `raters` explicitly
/// (so that raters without any annotation still count as study participants)
/// and may embed the `ground_truth` a simulator placed.
#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    images: Vec<ImageMeta>,
    annotations: Vec<PointAnnotation>,
    raters: Vec<String>,
    ground_truth: Option<Vec<GtPoint>>,
    index: ImageIndex,
}

impl Study {
    /// Validates and canonicalises. Raters are taken from the annotations.
    pub fn new(images: Vec<ImageMeta>, annotations: Vec<PointAnnotation>) -> Result<Self> {
        Self::build(images, annotations, None, None)
    }

    /// Like [`Study::new`] with an explicit rater roster and optional embedded
    /// ground truth.
    pub fn with_roster(
        images: Vec<ImageMeta>,
        annotations: Vec<PointAnnotation>,
        raters: Vec<String>,
        ground_truth: Option<Vec<GtPoint>>,
    ) -> Result<Self> {
        Self::build(images, annotations, Some(raters), ground_truth)
    }

    fn build(
        mut images: Vec<ImageMeta>,
        mut annotations: Vec<PointAnnotation>,
        raters: Option<Vec<String>>,
        ground_truth: Option<Vec<GtPoint>>,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for img in &images {
            img.validate()?;
            if !seen.insert(img.image_id.as_str()) {
                return Err(Error::DuplicateId(format!("image_id `{}`", img.image_id)));
            }
        }
        images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let index = ImageIndex::new(&images);

        let mut ids = BTreeSet::new();
        for a in &annotations {
            let img = index.require(&a.image_id)?;
            if !img.contains(a.x_px, a.y_px) {
                return Err(Error::Range(format!(
                    "annotation `{}` at ({}, {}) outside image `{}` ({}x{})",
                    a.annotation_id, a.x_px, a.y_px, img.image_id, img.width_px, img.height_px
                )));
            }
            if !ids.insert(a.annotation_id.as_str()) {
                return Err(Error::DuplicateId(format!("annotation_id `{}`", a.annotation_id)));
            }
        }
        annotations.sort_by(|a, b| a.canonical_key().cmp(&b.canonical_key()));

        let annotated: BTreeSet<&str> = annotations.iter().map(|a| a.rater_id.as_str()).collect();
        let raters = match raters {
            None => annotated.iter().map(|s| s.to_string()).collect(),
            Some(list) => {
                let mut roster = BTreeSet::new();
                for r in &list {
                    if !roster.insert(r.as_str()) {
                        return Err(Error::DuplicateId(format!("rater `{r}`")));
                    }
                }
                if let Some(missing) = annotated.iter().find(|r| !roster.contains(*r)) {
                    return Err(Error::Reference(format!("rater `{missing}` is not in the roster")));
                }
                roster.into_iter().map(str::to_owned).collect()
            }
        };

        let ground_truth = match ground_truth {
            None => None,
            Some(mut gt) => {
                for p in &gt {
                    let img = index.require(&p.image_id)?;
                    if !img.contains(p.x_px, p.y_px) {
                        return Err(Error::Range(format!(
                            "ground-truth point ({}, {}) outside image `{}`",
                            p.x_px, p.y_px, p.image_id
                        )));
                    }
                }
                sort_gt(&mut gt);
                Some(gt)
            }
        };

        Ok(Self { images, annotations, raters, ground_truth, index })
    }

    /// Parses an annotation file.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let raw: AnnotationFileRaw =
            serde_json::from_slice(bytes).map_err(|e| Error::Schema(e.to_string()))?;
        Self::build(raw.images, raw.annotations, raw.raters, raw.ground_truth)
    }

    pub fn to_json(&self) -> String {
        let out = AnnotationFileOut {
            images: &self.images,
            raters: &self.raters,
            annotations: &self.annotations,
            ground_truth: self.ground_truth.as_deref(),
        };
        serde_json::to_string_pretty(&out).expect("annotation document serializes")
    }

    pub fn images(&self) -> &[ImageMeta] {
        &self.images
    }

    pub fn annotations(&self) -> &[PointAnnotation] {
        &self.annotations
    }

    /// Sorted rater roster.
    pub fn raters(&self) -> &[String] {
        &self.raters
    }

    pub fn ground_truth(&self) -> Option<&[GtPoint]> {
        self.ground_truth.as_deref()
    }

    pub fn index(&self) -> &ImageIndex {
        &self.index
    }

    pub fn has_rater(&self, rater_id: &str) -> bool {
        self.raters.binary_search_by(|r| r.as_str().cmp(rater_id)).is_ok()
    }

    /// Annotations of one rater that pass `filter`, in canonical order.
    pub fn rater_annotations(&self, rater_id: &str, filter: &LabelFilter) -> Vec<PointAnnotation> {
        self.annotations
            .iter()
            .filter(|a| a.rater_id == rater_id && filter.contains(a.label))
            .cloned()
            .collect()
    }
}

pub(crate) fn sort_gt(points: &mut [GtPoint]) {
    points.sort_by(|a, b| {
        a.image_id
            .cmp(&b.image_id)
            .then(a.x_px.total_cmp(&b.x_px))
            .then(a.y_px.total_cmp(&b.y_px))
    });
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct DetectionFileRaw {
    detections: Vec<Detection>,
}

/// Parses a detection file. Input order is kept; it breaks confidence ties.
pub fn parse_detections(bytes: &[u8]) -> Result<Vec<Detection>> {
    let raw: DetectionFileRaw = serde_json::from_slice(bytes).map_err(|e| Error::Schema(e.to_string()))?;
    for d in &raw.detections {
        d.validate()?;
    }
    Ok(raw.detections)
}

pub fn detections_to_json(detections: &[Detection]) -> String {
    serde_json::to_string_pretty(&DetectionFileRaw { detections: detections.to_vec() })
        .expect("detections serialize")
}
