//! Sweeps the consensus threshold from 2 to 7 and writes the table as CSV to stdout.

use mitoeval::agreement::{threshold_sweep, write_agreement_csv, AgreementConfig};
use mitoeval::sim::{simulate_study, synthetic_images, StudyPreset};

fn main() -> mitoeval::Result<()> {
    let study = simulate_study(&StudyPreset::p1(3), &synthetic_images(10))?;
    let rows = threshold_sweep(&study, &AgreementConfig::default(), 2, 7)?;
    for t in 2..=7 {
        let at: Vec<_> = rows.iter().filter(|r| r.threshold == t).collect();
        let mean = |f: fn(&&mitoeval::agreement::AgreementRow) -> f64| at.iter().map(f).sum::<f64>() / at.len() as f64;
        println!(
            "t = {t}: precision {:.3}, recall {:.3}, F1 {:.3}",
            mean(|r| r.prf.precision),
            mean(|r| r.prf.recall),
            mean(|r| r.prf.f1)
        );
    }
    write_agreement_csv(&rows[..5], std::io::stdout())
}
