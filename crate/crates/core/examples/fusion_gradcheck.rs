//! Runs the mid-fusion block forward and checks its backward pass numerically.

use mitoeval::fusion::{fuse_forward, FeatureMap, FusionCase, FusionWeights};

fn main() -> mitoeval::Result<()> {
    // one channel per stream: normalized (3, 1) is (1, -1), so 0.5·1 − 0.5·(−1) ≈ 1
    let h = FeatureMap::new(1, 1, 1, vec![3.0])?;
    let p = FeatureMap::new(1, 1, 1, vec![1.0])?;
    let mut w = FusionWeights::identity_norm(1);
    w.conv_weight = vec![0.5, -0.5];
    println!("worked example: {:.6}", fuse_forward(&h, &p, &w)?.data()[0]);

    for (c, hh, ww, seed) in [(2, 3, 3, 1), (4, 5, 2, 2), (8, 4, 4, 3)] {
        let case = FusionCase::random(c, hh, ww, seed);
        let out = case.forward()?;
        let report = case.gradient_check(1e-6)?;
        println!(
            "C={c} {hh}x{ww}: output {:?}, {} components, max rel error {:.2e} at {}",
            out.shape(),
            report.n_components,
            report.max_rel_error,
            report.worst
        );
    }
    Ok(())
}
