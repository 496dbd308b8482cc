//! Plans Monte Carlo splits for 84 cases and a patch sampling plan on a simulated study.

use mitoeval::detection::GroundTruth;
use mitoeval::sim::{monte_carlo_splits, patch_sampling_plan, simulate_study, synthetic_images, SplitRatios, StudyPreset};

fn main() -> mitoeval::Result<()> {
    let cases: Vec<String> = (0..84).map(|i| format!("case_{i:03}")).collect();
    for plan in monte_carlo_splits(&cases, SplitRatios::default(), 5, 42)? {
        println!(
            "fold {}: {} train, {} val, {} test, first test case {}",
            plan.fold_id,
            plan.train.len(),
            plan.val.len(),
            plan.test.len(),
            plan.test[0]
        );
    }

    let study = simulate_study(&StudyPreset::p2(42), &synthetic_images(4))?;
    let gt = GroundTruth::embedded(&study).expect("simulated studies embed their ground truth");
    let rects = patch_sampling_plan(&gt, 512, 0.5, 400, 42)?;
    let with_mf = rects.iter().filter(|r| r.has_mf).count();
    println!("{} ground-truth figures, {with_mf}/{} patches contain one", gt.points.len(), rects.len());
    Ok(())
}
