//! Dual-stain mid-fusion block `ReLU(Conv1x1(LayerNorm(Cat(H, P))))` with
//! an exact reverse-mode backward pass and a central finite-difference check.
//!
//! Feature maps are dense `C×H×W` arrays in row-major `(c, y, x)` order.
//! LayerNorm normalizes the `2C` channel values at each spatial location and
//! applies a per-channel affine transform. The 1×1 convolution maps `2C`
//! channels back to `C`. Everything runs in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::ShapeMismatch(format!("empty feature map {c}x{h}x{w}")));
        }
        if data.len() != c * h * w {
            return Err(Error::ShapeMismatch(format!(
                "feature map {c}x{h}x{w} needs {} values, got {}",
                c * h * w,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Range("feature map contains non-finite values".into()));
        }
        Ok(Self { c, h, w, data })
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Parameters of one fusion block for `C` channels per stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightsFile", into = "WeightsFile")]
pub struct FusionWeights {
    pub c: usize,
    pub epsilon: f64,
    /// Length `2C`.
    pub ln_gamma: Vec<f64>,
    /// Length `2C`.
    pub ln_beta: Vec<f64>,
    /// Row-major `C × 2C`.
    pub conv_weight: Vec<f64>,
    /// Length `C`.
    pub conv_bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    c: usize,
    epsilon: f64,
    ln_gamma: Vec<f64>,
    ln_beta: Vec<f64>,
    conv_weight: Vec<Vec<f64>>,
    conv_bias: Vec<f64>,
}

impl TryFrom<WeightsFile> for FusionWeights {
    type Error = Error;

    fn try_from(f: WeightsFile) -> Result<Self> {
        if f.conv_weight.len() != f.c || f.conv_weight.iter().any(|r| r.len() != 2 * f.c) {
            return Err(Error::ShapeMismatch(format!("conv_weight must be {}x{}", f.c, 2 * f.c)));
        }
        let w = FusionWeights {
            c: f.c,
            epsilon: f.epsilon,
            ln_gamma: f.ln_gamma,
            ln_beta: f.ln_beta,
            conv_weight: f.conv_weight.into_iter().flatten().collect(),
            conv_bias: f.conv_bias,
        };
        w.validate()?;
        Ok(w)
    }
}

impl From<FusionWeights> for WeightsFile {
    fn from(w: FusionWeights) -> Self {
        let cols = 2 * w.c;
        WeightsFile {
            c: w.c,
            epsilon: w.epsilon,
            conv_weight: w.conv_weight.chunks(cols.max(1)).map(<[f64]>::to_vec).collect(),
            ln_gamma: w.ln_gamma,
            ln_beta: w.ln_beta,
            conv_bias: w.conv_bias,
        }
    }
}

impl FusionWeights {
    /// γ = 1, β = 0, zero convolution.
    pub fn identity_norm(c: usize) -> Self {
        Self {
            c,
            epsilon: DEFAULT_EPSILON,
            ln_gamma: vec![1.0; 2 * c],
            ln_beta: vec![0.0; 2 * c],
            conv_weight: vec![0.0; 2 * c * c],
            conv_bias: vec![0.0; c],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.c;
        if c == 0 {
            return Err(Error::ShapeMismatch("fusion block needs c ≥ 1".into()));
        }
        let checks = [
            ("ln_gamma", self.ln_gamma.len(), 2 * c),
            ("ln_beta", self.ln_beta.len(), 2 * c),
            ("conv_weight", self.conv_weight.len(), 2 * c * c),
            ("conv_bias", self.conv_bias.len(), c),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::ShapeMismatch(format!("{name} has {got} values, expected {want}")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize")
    }
}

/// Stacks `p` after `h` along the channel axis.
pub fn concat_channels(h: &FeatureMap, p: &FeatureMap) -> Result<FeatureMap> {
    if h.shape() != p.shape() {
        return Err(Error::ShapeMismatch(format!("cannot concatenate {:?} and {:?}", h.shape(), p.shape())));
    }
    let mut data = Vec::with_capacity(2 * h.data.len());
    data.extend_from_slice(&h.data);
    data.extend_from_slice(&p.data);
    Ok(FeatureMap { c: 2 * h.c, h: h.h, w: h.w, data })
}

/// Per-location normalized values and inverse standard deviations.
fn normalize(x: &FeatureMap, epsilon: f64) -> (Vec<f64>, Vec<f64>) {
    let (n, plane) = (x.c, x.plane());
    let mut xhat = vec![0.0; x.data.len()];
    let mut rstd = vec![0.0; plane];
    for loc in 0..plane {
        let mean = (0..n).map(|c| x.data[c * plane + loc]).sum::<f64>() / n as f64;
        let var = (0..n).map(|c| (x.data[c * plane + loc] - mean).powi(2)).sum::<f64>() / n as f64;
        let r = 1.0 / (var + epsilon).sqrt();
        rstd[loc] = r;
        for c in 0..n {
            xhat[c * plane + loc] = (x.data[c * plane + loc] - mean) * r;
        }
    }
    (xhat, rstd)
}

/// LayerNorm across channels at each spatial location (biased variance).
pub fn layer_norm(x: &FeatureMap, gamma: &[f64], beta: &[f64], epsilon: f64) -> Result<FeatureMap> {
    if gamma.len() != x.c || beta.len() != x.c {
        return Err(Error::ShapeMismatch(format!(
            "affine parameters of length {}/{} for {} channels",
            gamma.len(),
            beta.len(),
            x.c
        )));
    }
    let (xhat, _) = normalize(x, epsilon);
    Ok(affine(&xhat, x, gamma, beta))
}

fn affine(xhat: &[f64], like: &FeatureMap, gamma: &[f64], beta: &[f64]) -> FeatureMap {
    let plane = like.plane();
    let data = xhat
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let c = i / plane;
            gamma[c] * v + beta[c]
        })
        .collect();
    FeatureMap { c: like.c, h: like.h, w: like.w, data }
}

/// Pointwise linear map over channels: `out[c] = Σ_j weight[c][j]·x[j] + bias[c]`.
///
/// `weight` is row-major `bias.len() × x.channels()`.
pub fn conv1x1(x: &FeatureMap, weight: &[f64], bias: &[f64]) -> Result<FeatureMap> {
    let (c_in, c_out) = (x.c, bias.len());
    if c_out == 0 || weight.len() != c_out * c_in {
        return Err(Error::ShapeMismatch(format!(
            "weight of length {} does not map {c_in} to {c_out} channels",
            weight.len()
        )));
    }
    let plane = x.plane();
    let mut data = vec![0.0; c_out * plane];
    for co in 0..c_out {
        let row = &weight[co * c_in..(co + 1) * c_in];
        for loc in 0..plane {
            let mut acc = bias[co];
            for (j, wj) in row.iter().enumerate() {
                acc += wj * x.data[j * plane + loc];
            }
            data[co * plane + loc] = acc;
        }
    }
    Ok(FeatureMap { c: c_out, h: x.h, w: x.w, data })
}

pub fn relu(x: &FeatureMap) -> FeatureMap {
    FeatureMap { data: x.data.iter().map(|v| v.max(0.0)).collect(), ..x.clone() }
}

struct ForwardCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
    normed: FeatureMap,
    pre_activation: FeatureMap,
}

fn check_inputs(h: &FeatureMap, p: &FeatureMap, weights: &FusionWeights) -> Result<()> {
    weights.validate()?;
    if h.c != weights.c {
        return Err(Error::ShapeMismatch(format!("input has {} channels, weights expect {}", h.c, weights.c)));
    }
    if h.shape() != p.shape() {
        return Err(Error::ShapeMismatch(format!("stream shapes differ: {:?} vs {:?}", h.shape(), p.shape())));
    }
    Ok(())
}

fn forward_cached(h: &FeatureMap, p: &FeatureMap, weights: &FusionWeights) -> Result<ForwardCache> {
    check_inputs(h, p, weights)?;
    let cat = concat_channels(h, p)?;
    let (xhat, rstd) = normalize(&cat, weights.epsilon);
    let normed = affine(&xhat, &cat, &weights.ln_gamma, &weights.ln_beta);
    let pre_activation = conv1x1(&normed, &weights.conv_weight, &weights.conv_bias)?;
    Ok(ForwardCache { xhat, rstd, normed, pre_activation })
}

/// Fused features, shape `C×H×W`.
pub fn fuse_forward(h: &FeatureMap, p: &FeatureMap, weights: &FusionWeights) -> Result<FeatureMap> {
    Ok(relu(&forward_cached(h, p, weights)?.pre_activation))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionGrads {
    pub d_h: FeatureMap,
    pub d_p: FeatureMap,
    pub d_gamma: Vec<f64>,
    pub d_beta: Vec<f64>,
    pub d_conv_weight: Vec<f64>,
    pub d_conv_bias: Vec<f64>,
}

/// Reverse-mode gradients of `Σ upstream ⊙ fuse_forward(h, p)`.
/// The ReLU derivative at exactly zero is taken as 0.
pub fn fuse_backward(
    h: &FeatureMap,
    p: &FeatureMap,
    weights: &FusionWeights,
    upstream: &FeatureMap,
) -> Result<FusionGrads> {
    let cache = forward_cached(h, p, weights)?;
    if upstream.shape() != h.shape() {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient {:?} does not match output {:?}",
            upstream.shape(),
            h.shape()
        )));
    }
    let (c, plane) = (weights.c, h.plane());
    let n = 2 * c;

    let dz: Vec<f64> = upstream
        .data
        .iter()
        .zip(&cache.pre_activation.data)
        .map(|(g, z)| if *z > 0.0 { *g } else { 0.0 })
        .collect();

    let mut d_conv_bias = vec![0.0; c];
    let mut d_conv_weight = vec![0.0; c * n];
    let mut dy = vec![0.0; n * plane];
    for co in 0..c {
        for loc in 0..plane {
            let g = dz[co * plane + loc];
            d_conv_bias[co] += g;
            for j in 0..n {
                d_conv_weight[co * n + j] += g * cache.normed.data[j * plane + loc];
                dy[j * plane + loc] += weights.conv_weight[co * n + j] * g;
            }
        }
    }

    let mut d_gamma = vec![0.0; n];
    let mut d_beta = vec![0.0; n];
    let mut dx = vec![0.0; n * plane];
    for loc in 0..plane {
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..n {
            let i = j * plane + loc;
            d_gamma[j] += dy[i] * cache.xhat[i];
            d_beta[j] += dy[i];
            let dxhat = dy[i] * weights.ln_gamma[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * cache.xhat[i];
        }
        let r = cache.rstd[loc];
        for j in 0..n {
            let i = j * plane + loc;
            let dxhat = dy[i] * weights.ln_gamma[j];
            dx[i] = r / n as f64 * (n as f64 * dxhat - sum_dxhat - cache.xhat[i] * sum_dxhat_xhat);
        }
    }

    let half = c * plane;
    Ok(FusionGrads {
        d_h: FeatureMap { c, h: h.h, w: h.w, data: dx[..half].to_vec() },
        d_p: FeatureMap { c, h: h.h, w: h.w, data: dx[half..].to_vec() },
        d_gamma,
        d_beta,
        d_conv_weight,
        d_conv_bias,
    })
}

/// Outcome of comparing `fuse_backward` with central differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub n_components: usize,
    /// `max |analytic − numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter group and index of the worst component.
    pub worst: String,
}

fn scalar_loss(h: &FeatureMap, p: &FeatureMap, weights: &FusionWeights, upstream: &FeatureMap) -> Result<f64> {
    let out = fuse_forward(h, p, weights)?;
    Ok(out.data.iter().zip(&upstream.data).map(|(a, b)| a * b).sum())
}

/// Checks every gradient component against a central difference with the
/// given step.
pub fn gradient_check(
    h: &FeatureMap,
    p: &FeatureMap,
    weights: &FusionWeights,
    upstream: &FeatureMap,
    step: f64,
) -> Result<GradCheckReport> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {step}")));
    }
    let grads = fuse_backward(h, p, weights, upstream)?;
    let mut report = GradCheckReport { n_components: 0, max_rel_error: 0.0, max_abs_error: 0.0, worst: String::new() };

    let analytic: [(&str, &[f64]); 6] = [
        ("d_h", grads.d_h.data()),
        ("d_p", grads.d_p.data()),
        ("d_gamma", &grads.d_gamma),
        ("d_beta", &grads.d_beta),
        ("d_conv_weight", &grads.d_conv_weight),
        ("d_conv_bias", &grads.d_conv_bias),
    ];
    for (group, (name, values)) in analytic.into_iter().enumerate() {
        for (i, &a) in values.iter().enumerate() {
            let loss_at = |delta: f64| {
                let (mut hh, mut pp, mut ww) = (h.clone(), p.clone(), weights.clone());
                let slot = match group {
                    0 => &mut hh.data[i],
                    1 => &mut pp.data[i],
                    2 => &mut ww.ln_gamma[i],
                    3 => &mut ww.ln_beta[i],
                    4 => &mut ww.conv_weight[i],
                    _ => &mut ww.conv_bias[i],
                };
                *slot += delta;
                scalar_loss(&hh, &pp, &ww, upstream)
            };
            let numeric = (loss_at(step)? - loss_at(-step)?) / (2.0 * step);
            let abs = (a - numeric).abs();
            let rel = abs / 1f64.max(a.abs()).max(numeric.abs());
            report.n_components += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}

/// A self-contained fusion test case.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionCase {
    pub he: FeatureMap,
    pub phh3: FeatureMap,
    pub weights: FusionWeights,
    pub upstream: FeatureMap,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapsFile {
    c: usize,
    h: usize,
    w: usize,
    he: Vec<f64>,
    phh3: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    upstream_grad: Option<Vec<f64>>,
}

impl FusionCase {
    /// Standard-normal feature maps and upstream gradient, γ ~ U(0.5, 1.5),
    /// β ~ U(−0.5, 0.5), weights ~ U(−1, 1).
    pub fn random(c: usize, h: usize, w: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = rand_distr::StandardNormal;
        let map = |rng: &mut ChaCha8Rng| FeatureMap {
            c,
            h,
            w,
            data: (0..c * h * w).map(|_| rng.sample::<f64, _>(normal)).collect(),
        };
        let he = map(&mut rng);
        let phh3 = map(&mut rng);
        let upstream = map(&mut rng);
        let weights = FusionWeights {
            c,
            epsilon: DEFAULT_EPSILON,
            ln_gamma: (0..2 * c).map(|_| rng.random_range(0.5..1.5)).collect(),
            ln_beta: (0..2 * c).map(|_| rng.random_range(-0.5..0.5)).collect(),
            conv_weight: (0..2 * c * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
            conv_bias: (0..c).map(|_| rng.random_range(-0.5..0.5)).collect(),
        };
        Self { he, phh3, weights, upstream }
    }

    /// Builds a case from a weight file and a feature-map file. The upstream
    /// gradient defaults to all ones (plain sum loss).
    pub fn from_json(weights: &[u8], maps: &[u8]) -> Result<Self> {
        let weights = FusionWeights::from_json(weights)?;
        let m: MapsFile = serde_json::from_slice(maps).map_err(|e| Error::Schema(e.to_string()))?;
        let he = FeatureMap::new(m.c, m.h, m.w, m.he)?;
        let phh3 = FeatureMap::new(m.c, m.h, m.w, m.phh3)?;
        let upstream = match m.upstream_grad {
            Some(g) => FeatureMap::new(m.c, m.h, m.w, g)?,
            None => FeatureMap { data: vec![1.0; m.c * m.h * m.w], ..FeatureMap::zeros(m.c, m.h, m.w) },
        };
        check_inputs(&he, &phh3, &weights)?;
        Ok(Self { he, phh3, weights, upstream })
    }

    /// The feature-map file for this case.
    pub fn maps_json(&self) -> String {
        let (c, h, w) = self.he.shape();
        serde_json::to_string_pretty(&MapsFile {
            c,
            h,
            w,
            he: self.he.data.clone(),
            phh3: self.phh3.data.clone(),
            upstream_grad: Some(self.upstream.data.clone()),
        })
        .expect("maps serialize")
    }

    pub fn forward(&self) -> Result<FeatureMap> {
        fuse_forward(&self.he, &self.phh3, &self.weights)
    }

    pub fn backward(&self) -> Result<FusionGrads> {
        fuse_backward(&self.he, &self.phh3, &self.weights, &self.upstream)
    }

    pub fn gradient_check(&self, step: f64) -> Result<GradCheckReport> {
        gradient_check(&self.he, &self.phh3, &self.weights, &self.upstream, step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(c: usize, h: usize, w: usize, data: &[f64]) -> FeatureMap {
        FeatureMap::new(c, h, w, data.to_vec()).unwrap()
    }

    #[test]
    fn concat_single_pixel() {
        let out = concat_channels(&map(1, 1, 1, &[2.0]), &map(1, 1, 1, &[-3.0])).unwrap();
        assert_eq!(out.data(), [2.0, -3.0]);
        assert!(matches!(
            concat_channels(&map(1, 1, 2, &[1.0, 2.0]), &map(1, 2, 1, &[1.0, 2.0])),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn concat_of_equal_maps_is_half_symmetric() {
        let a = FusionCase::random(3, 2, 2, 1).he;
        let out = concat_channels(&a, &a).unwrap();
        let n = a.data().len();
        assert_eq!(out.data()[..n], out.data()[n..]);
    }

    #[test]
    fn layer_norm_examples() {
        let zero = FeatureMap::zeros(4, 2, 2);
        assert!(layer_norm(&zero, &[1.0; 4], &[0.0; 4], 1e-5).unwrap().data().iter().all(|v| *v == 0.0));

        let x = map(2, 1, 1, &[3.0, 1.0]);
        let y = layer_norm(&x, &[1.0, 1.0], &[0.0, 0.0], 1e-5).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-4);
        assert!((y.data()[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn conv_examples() {
        let x = FusionCase::random(2, 3, 3, 5);
        let cat = concat_channels(&x.he, &x.phh3).unwrap();
        // [I | 0] picks the first half
        let w = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let out = conv1x1(&cat, &w, &[0.0, 0.0]).unwrap();
        assert_eq!(out.data(), x.he.data());
        let constant = conv1x1(&cat, &[0.0; 8], &[0.25, -2.0]).unwrap();
        assert!(constant.data()[..9].iter().all(|v| *v == 0.25));
        assert!(constant.data()[9..].iter().all(|v| *v == -2.0));
        assert!(conv1x1(&cat, &[0.0; 7], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn forward_worked_example() {
        let w = FusionWeights {
            conv_weight: vec![0.5, -0.5],
            ..FusionWeights::identity_norm(1)
        };
        let out = fuse_forward(&map(1, 1, 1, &[3.0]), &map(1, 1, 1, &[1.0]), &w).unwrap();
        assert!((out.data()[0] - 1.0).abs() < 1e-4);
        assert!(out.data()[0] < 1.0);
    }

    #[test]
    fn zero_and_dead_cases() {
        let w = FusionCase::random(2, 2, 2, 3).weights;
        let zero_bias = FusionWeights { conv_bias: vec![0.0; 2], ln_beta: vec![0.0; 4], ..w.clone() };
        let z = FeatureMap::zeros(2, 2, 2);
        assert!(fuse_forward(&z, &z, &zero_bias).unwrap().data().iter().all(|v| *v == 0.0));

        let dead = FusionWeights { conv_weight: vec![0.0; 8], conv_bias: vec![-1.0, -1.0], ..w };
        let case = FusionCase::random(2, 2, 2, 4);
        assert!(fuse_forward(&case.he, &case.phh3, &dead).unwrap().data().iter().all(|v| *v == 0.0));
        let g = fuse_backward(&case.he, &case.phh3, &dead, &case.upstream).unwrap();
        assert!(g.d_h.data().iter().chain(g.d_p.data()).all(|v| *v == 0.0));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let case = FusionCase::random(2, 3, 3, 9);
        let g = fuse_backward(&case.he, &case.phh3, &case.weights, &FeatureMap::zeros(2, 3, 3)).unwrap();
        let all = g
            .d_h
            .data()
            .iter()
            .chain(g.d_p.data())
            .chain(&g.d_gamma)
            .chain(&g.d_beta)
            .chain(&g.d_conv_weight)
            .chain(&g.d_conv_bias);
        assert!(all.into_iter().all(|v| *v == 0.0));
    }

    #[test]
    fn builtin_gradient_check_passes() {
        let r = FusionCase::random(2, 3, 3, 11).gradient_check(1e-6).unwrap();
        assert_eq!(r.n_components, 18 + 18 + 4 + 4 + 8 + 2);
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn weight_file_round_trip_and_shape_errors() {
        let w = FusionCase::random(3, 1, 1, 2).weights;
        assert_eq!(FusionWeights::from_json(w.to_json().as_bytes()).unwrap(), w);
        let bad = r#"{"c":1,"epsilon":1e-5,"ln_gamma":[1,1],"ln_beta":[0,0],"conv_weight":[[1,2,3]],"conv_bias":[0]}"#;
        assert!(FusionWeights::from_json(bad.as_bytes()).is_err());
    }
}
