//! Leave-one-out agreement and mitotic-count ICC for two simulated panels.

use mitoeval::agreement::{icc, leave_one_out_agreement, mitotic_count_matrix, AgreementConfig, AgreementSummary};
use mitoeval::model::LabelFilter;
use mitoeval::sim::{simulate_study, synthetic_images, StudyPreset};

fn main() -> mitoeval::Result<()> {
    let images = synthetic_images(20);
    for preset in [StudyPreset::p1(11), StudyPreset::p2(11)] {
        let study = simulate_study(&preset, &images)?;
        let rows = leave_one_out_agreement(&study, &AgreementConfig::new(Default::default(), &preset.name))?;
        let s = AgreementSummary::of(&rows);
        let report = icc(&mitotic_count_matrix(&study, &LabelFilter::he_visible()))?;
        println!(
            "{}: F1 {:.2} ± {:.2}, precision {:.2} ± {:.2}, recall {:.2} ± {:.2}, ICC(2,1) {:.3}",
            preset.name, s.f1.mean, s.f1.sd, s.precision.mean, s.precision.sd, s.recall.mean, s.recall.sd, report.icc_2_1
        );
        for r in rows.iter().take(3) {
            println!("  {} tp {} fp {} fn {} F1 {:.3}", r.rater_id, r.prf.tp, r.prf.fp, r.prf.fn_, r.prf.f1);
        }
    }
    Ok(())
}
