//! Clusters a seven-rater panel and prints the consensus at each threshold.

use std::path::Path;

use mitoeval::consensus::{build_consensus, consensus, study_clusters, ConsensusConfig};
use mitoeval::model::{LabelFilter, Study};

fn main() -> mitoeval::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/panel_7_raters.json");
    let study = Study::from_json(&std::fs::read(path)?)?;
    println!("{} raters, {} annotations", study.raters().len(), study.annotations().len());

    let clusters = study_clusters(&study, 7.5, &LabelFilter::he_visible(), None)?;
    for c in &clusters {
        let (x, y) = c.center();
        println!("cluster {:>2} on {}: ({x:.1}, {y:.1}) px, {} raters", c.cluster_id, c.image_id, c.n_distinct_raters());
    }
    for t in 1..=7 {
        println!("t = {t}: {} consensus figures", consensus(&clusters, t)?.len());
    }

    let set = build_consensus(&study, &ConsensusConfig::default())?;
    println!("{}", set.to_json());
    Ok(())
}
