//! Independent reference implementations used by the integration and
//! acceptance tests. None of them call into the library's algorithms; they
//! only share its plain data types.

#![allow(dead_code)]

use mitoeval::model::{ImageMeta, Label, PointAnnotation};
use rand::Rng;

pub fn ann(id: &str, rater: &str, image: &str, x: f64, y: f64) -> PointAnnotation {
    PointAnnotation {
        annotation_id: id.into(),
        rater_id: rater.into(),
        image_id: image.into(),
        x_px: x,
        y_px: y,
        label: Label::HeAndPhh3,
    }
}

pub fn image(id: &str, w: u32, h: u32, mpp: f64) -> ImageMeta {
    ImageMeta::new(id, w, h, mpp).unwrap()
}

pub fn fixture(name: &str) -> Vec<u8> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Canonical form of a partition: member index lists, each sorted, sorted by
/// first element.
pub fn canonical_partition(mut groups: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort();
    groups
}

/// Connected components of the graph joining points within `link` of each
/// other, by repeated flooding.
pub fn connected_components(points: &[(f64, f64)], link: f64) -> Vec<Vec<usize>> {
    let mut label = vec![usize::MAX; points.len()];
    let mut groups = Vec::new();
    for start in 0..points.len() {
        if label[start] != usize::MAX {
            continue;
        }
        let id = groups.len();
        let mut stack = vec![start];
        let mut members = Vec::new();
        label[start] = id;
        while let Some(i) = stack.pop() {
            members.push(i);
            for j in 0..points.len() {
                if label[j] == usize::MAX && dist(points[i], points[j]) <= link {
                    label[j] = id;
                    stack.push(j);
                }
            }
        }
        groups.push(members);
    }
    canonical_partition(groups)
}

/// A literal step-by-step run of sequential nearest-centroid clustering on one
/// image: centroids are recomputed from the member list at every step.
///
/// Returns member index lists in creation order.
pub fn sequential_trace(points: &[(f64, f64)], radius: f64) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for (c, members) in clusters.iter().enumerate() {
            let n = members.len() as f64;
            let sx: f64 = members.iter().map(|&m| points[m].0).sum();
            let sy: f64 = members.iter().map(|&m| points[m].1).sum();
            let d = dist(p, (sx / n, sy / n));
            // strict comparison keeps the earliest cluster on ties
            if d <= radius && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, c));
            }
        }
        match best {
            Some((_, c)) => clusters[c].push(i),
            None => clusters.push(vec![i]),
        }
    }
    clusters
}

/// Points split into well-separated groups: members within `radius / 2` of
/// each other, groups at least `3 · radius` apart.
pub fn separated_groups(rng: &mut impl Rng, n_points: usize, radius: f64) -> Vec<(f64, f64)> {
    let mut centers: Vec<(f64, f64)> = Vec::new();
    let mut points = Vec::new();
    let spread = radius / 4.0 - 1e-9;
    while points.len() < n_points {
        let open_new = centers.is_empty() || rng.random_bool(0.4);
        let c = if open_new {
            loop {
                let c = (rng.random_range(0.0..40.0 * radius), rng.random_range(0.0..40.0 * radius));
                if centers.iter().all(|&o| dist(c, o) >= 3.0 * radius + 2.0 * spread) {
                    centers.push(c);
                    break c;
                }
            }
        } else {
            centers[rng.random_range(0..centers.len())]
        };
        // inside a disc of radius `spread`, so any two members are ≤ radius/2 apart
        let r = spread * rng.random::<f64>().sqrt();
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        points.push((c.0 + 10.0 * radius + r * a.cos(), c.1 + 10.0 * radius + r * a.sin()));
    }
    points
}

/// Maximum-cardinality one-to-one matching under a distance cap by exhaustive
/// search; ties in cardinality go to the smallest total distance.
pub fn optimal_matching(left: &[(f64, f64)], right: &[(f64, f64)], radius: f64) -> (usize, f64) {
    fn go(i: usize, used: u32, left: &[(f64, f64)], right: &[(f64, f64)], radius: f64) -> (usize, f64) {
        if i == left.len() {
            return (0, 0.0);
        }
        let mut best = go(i + 1, used, left, right, radius);
        for (j, &r) in right.iter().enumerate() {
            let d = dist(left[i], r);
            if used & (1 << j) == 0 && d <= radius {
                let (n, total) = go(i + 1, used | (1 << j), left, right, radius);
                let cand = (n + 1, total + d);
                if cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                    best = cand;
                }
            }
        }
        best
    }
    assert!(right.len() <= 32);
    go(0, 0, left, right, radius)
}

/// ICC(2,1) from exact integer sums of squares.
///
/// With T the grand total, R_i row totals and C_j column totals:
/// `nk·SS_rows = n·ΣR_i² − T²`, `nk·SS_cols = k·ΣC_j² − T²`,
/// `nk·SS_total = nk·Σx² − T²`, and the residual is what is left over.
pub fn icc_oracle(m: &[Vec<i64>]) -> Option<f64> {
    let n = m.len() as i128;
    let k = m[0].len() as i128;
    let t: i128 = m.iter().flatten().map(|&x| x as i128).sum();
    let sum_sq: i128 = m.iter().flatten().map(|&x| (x as i128) * (x as i128)).sum();
    let rows: i128 = m.iter().map(|r| r.iter().map(|&x| x as i128).sum::<i128>().pow(2)).sum();
    let cols: i128 = (0..k as usize).map(|j| m.iter().map(|r| r[j] as i128).sum::<i128>().pow(2)).sum();
    let nk = n * k;
    let ss_r = n * rows - t * t;
    let ss_c = k * cols - t * t;
    let ss_t = nk * sum_sq - t * t;
    let ss_e = ss_t - ss_r - ss_c;
    // mean squares, all scaled by nk
    let (ms_r, ms_c, ms_e) = (
        ss_r as f64 / (n - 1) as f64,
        ss_c as f64 / (k - 1) as f64,
        ss_e as f64 / ((n - 1) * (k - 1)) as f64,
    );
    let (nf, kf) = (n as f64, k as f64);
    let denom = ms_r + (kf - 1.0) * ms_e + kf / nf * (ms_c - ms_e);
    (denom != 0.0).then(|| (ms_r - ms_e) / denom)
}

/// All-points interpolated AP straight from the definition: for every TP,
/// the best precision achieved at any cutoff at or beyond it.
pub fn ap_oracle(flags_in_rank_order: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if flags_in_rank_order.is_empty() { 1.0 } else { 0.0 };
    }
    let n = flags_in_rank_order.len();
    let prec_at = |cut: usize| {
        let tp = flags_in_rank_order[..=cut].iter().filter(|&&f| f).count();
        tp as f64 / (cut + 1) as f64
    };
    let mut ap = 0.0;
    for (i, &hit) in flags_in_rank_order.iter().enumerate() {
        if hit {
            let best = (i..n).map(prec_at).fold(0.0, f64::max);
            ap += best / n_gt as f64;
        }
    }
    ap
}

/// A from-scratch fusion forward pass on flat arrays, used as the function
/// for finite differences. Layout is `(c, y, x)`; `w` is `C × 2C`.
#[allow(clippy::too_many_arguments)]
pub fn fusion_reference(
    c: usize,
    hw: usize,
    h: &[f64],
    p: &[f64],
    gamma: &[f64],
    beta: &[f64],
    w: &[f64],
    bias: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; c * hw];
    for loc in 0..hw {
        let v: Vec<f64> = (0..2 * c).map(|ch| if ch < c { h[ch * hw + loc] } else { p[(ch - c) * hw + loc] }).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
        let y: Vec<f64> = v.iter().enumerate().map(|(j, x)| gamma[j] * (x - mean) / (var + eps).sqrt() + beta[j]).collect();
        for o in 0..c {
            let z: f64 = bias[o] + (0..2 * c).map(|j| w[o * 2 * c + j] * y[j]).sum::<f64>();
            out[o * hw + loc] = z.max(0.0);
        }
    }
    out
}

/// Matching radius used by the matching fixtures.
pub const MATCH_R: f64 = 7.5;

/// Left and right point sets of a matching instance.
pub type PointPairs = (Vec<(f64, f64)>, Vec<(f64, f64)>);

/// Sites 4R apart; each holds a left/right pair, a lone left or a lone right.
/// Every point has at most one candidate and all pair distances differ.
pub fn unique_candidate_instance(rng: &mut impl Rng) -> PointPairs {
    let (mut left, mut right) = (Vec::new(), Vec::new());
    for site in 0..rng.random_range(1..=10) {
        let base = (100.0 + 4.0 * MATCH_R * site as f64, 100.0 + rng.random_range(0.0..MATCH_R));
        match rng.random_range(0..3) {
            0 if left.len() < 8 && right.len() < 8 => {
                let d = MATCH_R * (site as f64 + rng.random::<f64>()) / 11.0;
                left.push(base);
                right.push((base.0 + d, base.1));
            }
            1 if left.len() < 8 => left.push(base),
            _ if right.len() < 8 => right.push(base),
            _ => {}
        }
    }
    (left, right)
}

/// Places L1, L2 and R2 so that the four distances are 3, 6, 5 and 7 with R1
/// at the origin.
pub fn cross_fixture() -> PointPairs {
    let r1: (f64, f64) = (500.0, 500.0);
    let l1 = (r1.0 + 3.0, r1.1);
    // L2 on the circle of radius 5 around R1
    let l2 = (r1.0 - 3.0, r1.1 + 4.0);
    // R2 at distance 6 from L1 and 7 from L2: intersect the two circles
    let (dx, dy) = (l2.0 - l1.0, l2.1 - l1.1);
    let d = dx.hypot(dy);
    let a = (36.0 - 49.0 + d * d) / (2.0 * d);
    let h = (36.0 - a * a).sqrt();
    let r2 = (l1.0 + a * dx / d + h * dy / d, l1.1 + a * dy / d - h * dx / d);
    (vec![l1, l2], vec![r1, r2])
}
