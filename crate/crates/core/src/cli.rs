//! The `mitoeval` command line.
//!
//! Every subcommand reads files, writes exactly one `--out` file plus its
//! [`RunManifest`], and exits with 0 on success, 2 for bad input files, 3 for
//! bad flags or configurations and 4 when a numerical check fails.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::agreement::{
    icc, leave_one_out_agreement, mitotic_count_matrix, threshold_sweep, write_agreement_csv, AgreementConfig,
    AgreementSummary,
};
use crate::consensus::{build_consensus, ConsensusConfig, DEFAULT_MIN_RATERS, DEFAULT_RADIUS_UM};
use crate::detection::{cross_label_eval, EvalConfig, GroundTruth};
use crate::error::{Error, Result};
use crate::fusion::FusionCase;
use crate::manifest::RunManifest;
use crate::model::{parse_detections, LabelFilter, Study};
use crate::sim::{
    monte_carlo_splits, patch_sampling_plan, simulate_study, synthetic_images, write_patch_csv, SplitRatios,
    StudyPreset,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "mitoeval", version, about = "Consensus, agreement and detector evaluation for mitotic figure studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster annotations and keep clusters supported by enough raters.
    Consensus(ConsensusArgs),
    /// Each rater against the leave-one-out consensus of the others (CSV).
    Agreement(AgreementArgs),
    /// Leave-one-out agreement for every threshold in t-min..=t-max (CSV).
    Sweep(SweepArgs),
    /// ICC(2,1) of per-image mitotic counts (JSON).
    Icc(IccArgs),
    /// Average precision and best F1 of detections against named ground truths (JSON).
    Eval(EvalArgs),
    /// Simulate a rater study from a preset (annotation JSON with embedded ground truth).
    Simulate(SimulateArgs),
    /// Monte Carlo train/validation/test splits (JSON).
    Splits(SplitsArgs),
    /// Patch sampling plan around ground-truth points (CSV).
    Patches(PatchesArgs),
    /// Finite-difference check of the fusion block gradients (JSON).
    FuseCheck(FuseCheckArgs),
}

#[derive(Debug, Args)]
pub struct ConsensusOpts {
    /// Annotation file.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Clustering radius in micrometers.
    #[arg(long, default_value_t = DEFAULT_RADIUS_UM)]
    pub radius_um: f64,
    /// Minimum number of distinct raters per consensus point.
    #[arg(long, default_value_t = DEFAULT_MIN_RATERS)]
    pub min_raters: usize,
    /// Comma-separated labels that count as mitotic figures.
    #[arg(long, default_value = "he_and_phh3,he_only")]
    pub labels: LabelFilter,
}

impl ConsensusOpts {
    fn config(&self) -> ConsensusConfig {
        ConsensusConfig { radius_um: self.radius_um, min_raters: self.min_raters, label_filter: self.labels.clone() }
    }
}

#[derive(Debug, Args)]
pub struct ConsensusArgs {
    #[command(flatten)]
    pub opts: ConsensusOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AgreementOpts {
    #[command(flatten)]
    pub consensus: ConsensusOpts,
    /// Rater-to-consensus matching radius in micrometers [default: the clustering radius].
    #[arg(long)]
    pub match_radius_um: Option<f64>,
    /// Free-text tag copied into every row, e.g. the annotation phase.
    #[arg(long, default_value = "")]
    pub phase_tag: String,
}

impl AgreementOpts {
    fn config(&self) -> AgreementConfig {
        let mut config = AgreementConfig::new(self.consensus.config(), self.phase_tag.clone());
        if let Some(r) = self.match_radius_um {
            config.match_radius_um = r;
        }
        config
    }
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    #[command(flatten)]
    pub opts: AgreementOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub opts: AgreementOpts,
    #[arg(long, default_value_t = 2)]
    pub t_min: usize,
    #[arg(long, default_value_t = 7)]
    pub t_max: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IccArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, default_value = "he_and_phh3,he_only")]
    pub labels: LabelFilter,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Detection file.
    #[arg(long)]
    pub detections: PathBuf,
    /// Named ground truth, NAME=PATH; a consensus or annotation file. Repeatable.
    #[arg(long = "gt", value_parser = parse_named_path, required = true)]
    pub gt: Vec<(String, PathBuf)>,
    #[arg(long, default_value_t = DEFAULT_RADIUS_UM)]
    pub radius_um: f64,
    /// Labels kept when a ground truth is an annotation file.
    #[arg(long, default_value = "he_and_phh3,he_only")]
    pub labels: LabelFilter,
    #[arg(long, default_value_t = 0.0)]
    pub min_confidence: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// P1, P2 or a preset JSON file.
    #[arg(long, default_value = "P2")]
    pub preset: String,
    #[arg(long, default_value_t = 20)]
    pub n_images: usize,
    /// Overrides the preset seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitsArgs {
    /// File with one case id per line.
    #[arg(long, conflicts_with = "n_cases", required_unless_present = "n_cases")]
    pub cases: Option<PathBuf>,
    /// Generate ids case_000, case_001, ...
    #[arg(long)]
    pub n_cases: Option<usize>,
    /// train/val/test fractions.
    #[arg(long, default_value = "0.70/0.15/0.15", value_parser = parse_ratios)]
    pub ratios: SplitRatios,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PatchesArgs {
    /// Ground truth: a consensus or annotation file.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value = "he_and_phh3,he_only")]
    pub labels: LabelFilter,
    #[arg(long, default_value_t = 512)]
    pub patch_size: u32,
    /// Fraction of patches placed around a ground-truth point.
    #[arg(long, default_value_t = 0.5)]
    pub mf_fraction: f64,
    #[arg(long, default_value_t = 1000)]
    pub n_patches: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuseCheckArgs {
    /// Weight file; requires --maps.
    #[arg(long, requires = "maps", conflicts_with = "seed")]
    pub weights: Option<PathBuf>,
    /// Feature-map file; requires --weights.
    #[arg(long, requires = "weights")]
    pub maps: Option<PathBuf>,
    /// Draw a random case instead of reading files.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 4)]
    pub channels: usize,
    #[arg(long, default_value_t = 3)]
    pub height: usize,
    #[arg(long, default_value_t = 3)]
    pub width: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_named_path(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_owned(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=PATH, got `{s}`")),
    }
}

fn parse_ratios(s: &str) -> std::result::Result<SplitRatios, String> {
    let parts: Vec<f64> = s
        .split('/')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad ratio `{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [train, val, test] => Ok(SplitRatios { train, val, test }),
        _ => Err(format!("expected TRAIN/VAL/TEST, got `{s}`")),
    }
}

fn read_input(path: &Path, manifest: &mut RunManifest) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path)?;
    manifest.add_input(path, &bytes);
    Ok(bytes)
}

fn to_json<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_config() { EXIT_CONFIG } else { EXIT_INPUT };
        Self { code, message: e.to_string() }
    }
}

/// Runs one parsed command. Returns the text printed on success.
pub fn execute(command: &Command) -> std::result::Result<String, Failure> {
    match command {
        Command::Consensus(a) => {
            let config = a.opts.config();
            let mut m = RunManifest::new("consensus", serde_json::to_value(&config).expect("config"), None);
            config.validate()?;
            let study = Study::from_json(&read_input(&a.opts.annotations, &mut m)?)?;
            let set = build_consensus(&study, &config)?;
            m.write_with_output(&a.out, (set.to_json() + "\n").as_bytes())?;
            Ok(format!("{} consensus points from {} raters", set.len(), set.source_raters.len()))
        }
        Command::Agreement(a) => {
            let config = a.opts.config();
            let mut m = RunManifest::new("agreement", agreement_config_json(&config), None);
            let study = Study::from_json(&read_input(&a.opts.consensus.annotations, &mut m)?)?;
            let rows = leave_one_out_agreement(&study, &config)?;
            let mut csv = Vec::new();
            write_agreement_csv(&rows, &mut csv)?;
            m.write_with_output(&a.out, &csv)?;
            let s = AgreementSummary::of(&rows);
            Ok(format!(
                "F1 {:.3} ± {:.3}, precision {:.3} ± {:.3}, recall {:.3} ± {:.3}",
                s.f1.mean, s.f1.sd, s.precision.mean, s.precision.sd, s.recall.mean, s.recall.sd
            ))
        }
        Command::Sweep(a) => {
            let config = a.opts.config();
            let mut cfg = agreement_config_json(&config);
            cfg["t_min"] = json!(a.t_min);
            cfg["t_max"] = json!(a.t_max);
            let mut m = RunManifest::new("sweep", cfg, None);
            let study = Study::from_json(&read_input(&a.opts.consensus.annotations, &mut m)?)?;
            let rows = threshold_sweep(&study, &config, a.t_min, a.t_max)?;
            let mut csv = Vec::new();
            write_agreement_csv(&rows, &mut csv)?;
            m.write_with_output(&a.out, &csv)?;
            Ok(format!("{} rows", rows.len()))
        }
        Command::Icc(a) => {
            let mut m = RunManifest::new("icc", json!({ "labels": a.labels }), None);
            let study = Study::from_json(&read_input(&a.annotations, &mut m)?)?;
            let counts = mitotic_count_matrix(&study, &a.labels);
            let report = icc(&counts)?;
            let rows: Vec<&[f64]> = (0..counts.n_images()).map(|i| counts.row(i)).collect();
            let out = json!({
                "icc": report,
                "image_ids": counts.image_ids(),
                "rater_ids": counts.rater_ids(),
                "counts": rows,
            });
            m.write_with_output(&a.out, &to_json(&out))?;
            Ok(format!("ICC(2,1) = {:.4}", report.icc_2_1))
        }
        Command::Eval(a) => {
            let config = EvalConfig { radius_um: a.radius_um, label_filter: a.labels.clone(), min_confidence: a.min_confidence };
            let names: Vec<&str> = a.gt.iter().map(|(n, _)| n.as_str()).collect();
            let cfg = json!({
                "radius_um": config.radius_um,
                "labels": config.label_filter,
                "min_confidence": config.min_confidence,
                "gt": names,
            });
            let mut m = RunManifest::new("eval", cfg, None);
            let detections = parse_detections(&read_input(&a.detections, &mut m)?)?;
            let mut gts = Vec::new();
            for (name, path) in &a.gt {
                gts.push((name.as_str(), GroundTruth::from_json(&read_input(path, &mut m)?, &a.labels)?));
            }
            let refs: Vec<(&str, &GroundTruth)> = gts.iter().map(|(n, g)| (*n, g)).collect();
            let report = cross_label_eval(&detections, &refs, &config)?;
            m.write_with_output(&a.out, &to_json(&report))?;
            Ok(report.iter().map(|(n, e)| format!("{n}: AP {:.4}, best F1 {:.4}", e.ap, e.best_f1)).collect::<Vec<_>>().join("\n"))
        }
        Command::Simulate(a) => {
            let mut m = RunManifest::new("simulate", json!({}), a.seed);
            let preset = match a.preset.as_str() {
                "P1" | "p1" => StudyPreset::p1(0),
                "P2" | "p2" => StudyPreset::p2(0),
                path => StudyPreset::from_json(&read_input(Path::new(path), &mut m)?)?,
            };
            let preset = a.seed.map_or_else(|| preset.clone(), |s| preset.with_seed(s));
            m.seed = Some(preset.seed);
            m.config = json!({ "preset": preset, "n_images": a.n_images });
            let study = simulate_study(&preset, &synthetic_images(a.n_images))?;
            m.write_with_output(&a.out, (study.to_json() + "\n").as_bytes())?;
            Ok(format!("{} annotations on {} images", study.annotations().len(), study.images().len()))
        }
        Command::Splits(a) => {
            let cfg = json!({ "ratios": a.ratios, "folds": a.folds, "n_cases": a.n_cases });
            let mut m = RunManifest::new("splits", cfg, Some(a.seed));
            let cases: Vec<String> = match (&a.cases, a.n_cases) {
                (Some(path), _) => {
                    let bytes = read_input(path, &mut m)?;
                    let text = String::from_utf8(bytes).map_err(|e| Error::Schema(e.to_string()))?;
                    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned).collect()
                }
                (None, Some(n)) => (0..n).map(|i| format!("case_{i:03}")).collect(),
                (None, None) => unreachable!("clap requires one of --cases/--n-cases"),
            };
            let plans = monte_carlo_splits(&cases, a.ratios, a.folds, a.seed)?;
            m.write_with_output(&a.out, &to_json(&plans))?;
            let (tr, va, te) = a.ratios.sizes(cases.len());
            Ok(format!("{} folds of {tr}/{va}/{te}", plans.len()))
        }
        Command::Patches(a) => {
            let cfg = json!({
                "labels": a.labels,
                "patch_size": a.patch_size,
                "mf_fraction": a.mf_fraction,
                "n_patches": a.n_patches,
            });
            let mut m = RunManifest::new("patches", cfg, Some(a.seed));
            let gt = GroundTruth::from_json(&read_input(&a.gt, &mut m)?, &a.labels)?;
            let plan = patch_sampling_plan(&gt, a.patch_size, a.mf_fraction, a.n_patches, a.seed)?;
            let mut csv = Vec::new();
            write_patch_csv(&plan, &mut csv)?;
            m.write_with_output(&a.out, &csv)?;
            Ok(format!("{} patches, {} with a mitotic figure", plan.len(), plan.iter().filter(|p| p.has_mf).count()))
        }
        Command::FuseCheck(a) => fuse_check(a),
    }
}

fn fuse_check(a: &FuseCheckArgs) -> std::result::Result<String, Failure> {
    if !(a.tolerance.is_finite() && a.tolerance > 0.0) {
        return Err(Error::Config(format!("tolerance must be > 0, got {}", a.tolerance)).into());
    }
    let mut cfg = json!({ "step": a.step, "tolerance": a.tolerance });
    let mut m = RunManifest::new("fuse-check", json!({}), a.seed);
    let case = match (&a.weights, &a.maps, a.seed) {
        (Some(w), Some(p), _) => {
            let weights = read_input(w, &mut m)?;
            let maps = read_input(p, &mut m)?;
            FusionCase::from_json(&weights, &maps)?
        }
        (None, None, Some(seed)) => {
            if a.channels == 0 || a.height == 0 || a.width == 0 {
                return Err(Error::Config("channels, height and width must be ≥ 1".into()).into());
            }
            cfg["shape"] = json!([a.channels, a.height, a.width]);
            FusionCase::random(a.channels, a.height, a.width, seed)
        }
        _ => return Err(Error::Config("give --weights and --maps, or --seed".into()).into()),
    };
    m.config = cfg;
    let report = case.gradient_check(a.step)?;
    let passed = report.max_rel_error < a.tolerance;
    let out = json!({ "report": report, "tolerance": a.tolerance, "passed": passed });
    m.write_with_output(&a.out, &to_json(&out))?;
    let line = format!(
        "max relative error {:.3e} over {} components (worst {})",
        report.max_rel_error, report.n_components, report.worst
    );
    if passed {
        Ok(line)
    } else {
        Err(Failure { code: EXIT_CHECK_FAILED, message: format!("{line} exceeds tolerance {:e}", a.tolerance) })
    }
}

fn agreement_config_json(config: &AgreementConfig) -> serde_json::Value {
    json!({
        "consensus": config.consensus,
        "match_radius_um": config.match_radius_um,
        "phase_tag": config.phase_tag,
    })
}

/// Parses `args`, runs the command and returns the process exit code.
/// Results go to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
