//! Scores one detection list against two ground truths built from the same panel.

use std::path::Path;

use mitoeval::consensus::{build_consensus, ConsensusConfig};
use mitoeval::detection::{cross_label_eval, EvalConfig, GroundTruth};
use mitoeval::model::{parse_detections, LabelFilter, Study};

fn main() -> mitoeval::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let study = Study::from_json(&std::fs::read(dir.join("panel_7_raters.json"))?)?;
    let detections = parse_detections(&std::fs::read(dir.join("panel_detections.json"))?)?;

    let consensus = GroundTruth::from_consensus(&build_consensus(&study, &ConsensusConfig::default())?);
    let every_mark = GroundTruth::from_study(&study, &LabelFilter::he_visible());
    let report = cross_label_eval(&detections, &[("consensus", &consensus), ("every_mark", &every_mark)], &EvalConfig::default())?;
    for (name, e) in &report {
        let at = e.best_f1_confidence.map_or("-".into(), |c| format!("{c:.2}"));
        println!("{name}: n_gt {}, n_det {}, AP {:.4}, best F1 {:.4} at confidence {at}", e.n_gt, e.n_det, e.ap, e.best_f1);
        for [recall, precision, conf] in &e.pr_curve {
            println!("  conf {conf:.2}: recall {recall:.3}, precision {precision:.3}");
        }
    }
    Ok(())
}
