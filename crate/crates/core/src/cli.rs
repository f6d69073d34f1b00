//! Command-line front end. `run` parses argv, executes one subcommand and maps
//! the outcome to an exit code: 0 success, 1 usage error, 2 data error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::atlas::{build_masks, procedural_parcellation, RegionMasks};
use crate::clinical::{ClinicalRecord, Embedder, EmbedderSpec};
use crate::dbm::{dbm_pipeline, DbmConfig};
use crate::error::Error;
use crate::model::{FusionConfig, ModelConfig, TrainConfig};
use crate::pipeline::{
    evaluate_files, fit_model, manifest_features, predict_all, predictions_csv, run_ablation,
    EvalReport, FitOptions, ModelState,
};
use crate::pswm::{pswm_forward, weight_map, PriorWeights};
use crate::synthcohort::{generate_cohort, CohortSpec};
use crate::volume::{read_field, read_labels, write_volume, GridGeometry};

#[derive(Debug, Parser)]
#[command(name = "morphogate", version, about = "DBM features with region-gated patient-specific weighting")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Root seed; overrides the stage seed of the chosen subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum worker threads (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort from a JSON spec.
    GenCohort {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Atlas utilities.
    Atlas {
        #[command(subcommand)]
        command: AtlasCommand,
    },
    /// Smoothed log-Jacobian map of a displacement field.
    Dbm {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        sigma_mm: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        clamp_eps: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        max_nonpos: f64,
    },
    /// Patient-specific weight map for one clinical record.
    Weights {
        #[arg(long)]
        record: PathBuf,
        /// Defaults to the prior stored in the model.
        #[arg(long)]
        prior: Option<PathBuf>,
        /// Trained model checkpoint providing the offset MLP.
        #[arg(long)]
        mlp: PathBuf,
        #[arg(long)]
        atlas: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train a model on a labeled manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        atlas: PathBuf,
        /// Defaults to a uniform prior.
        #[arg(long)]
        prior: Option<PathBuf>,
        #[command(flatten)]
        hp: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict with a trained model.
    Predict {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Defaults to the atlas the model was trained with.
        #[arg(long)]
        atlas: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against the labels of a manifest.
    Evaluate {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.3)]
        tau: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the five component configurations and compare test accuracy.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        /// Evaluation manifest; repeat for several sets.
        #[arg(long = "test", required = true)]
        tests: Vec<PathBuf>,
        #[arg(long)]
        atlas: PathBuf,
        #[arg(long)]
        prior: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[command(flatten)]
        hp: TrainArgs,
        /// CSV table; a markdown copy goes to stdout.
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge evaluation reports into markdown and CSV.
    Report {
        /// Evaluation JSON, optionally `name=path`; repeat for several sets.
        #[arg(long = "eval", required = true)]
        evals: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the markdown path with a `.csv` extension.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum AtlasCommand {
    /// Procedural Voronoi parcellation of an ellipsoidal brain mask.
    Gen {
        #[arg(long, value_delimiter = ',', default_value = "32,40,32")]
        dims: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,1,1")]
        spacing: Vec<f64>,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long = "atlas-seed", default_value_t = 7)]
        atlas_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.05)]
    weight_decay: f64,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 0.1)]
    mlp_init_scale: f64,
    /// Dimension of the hashing embedder.
    #[arg(long, default_value_t = 64)]
    embed_dim: usize,
    /// Precomputed embeddings (JSON map subject_id -> vector) instead of hashing.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    sigma_mm: f64,
    #[arg(long, default_value_t = 0.3)]
    tau: f64,
}

enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(flag: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("--{flag}: {e}"))
}

fn log(event: &str, fields: serde_json::Value) {
    let mut obj = json!({ "event": event });
    if let (Some(o), serde_json::Value::Object(extra)) = (obj.as_object_mut(), fields) {
        o.extend(extra);
    }
    eprintln!("{obj}");
}

/// Runs the CLI on `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            log("error", json!({ "kind": "usage", "message": format!("--threads: {e}") }));
            return 1;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            log("error", json!({ "kind": "usage", "message": msg }));
            1
        }
        Err(CliError::Data(e)) => {
            log("error", json!({ "kind": "data", "message": e.to_string() }));
            2
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenCohort { spec, out_dir } => gen_cohort(spec, out_dir, cli.seed),
        Command::Atlas {
            command:
                AtlasCommand::Gen {
                    dims,
                    spacing,
                    m,
                    atlas_seed,
                    out,
                },
        } => atlas_gen(dims, spacing, *m, cli.seed.unwrap_or(*atlas_seed), out),
        Command::Dbm {
            field,
            sigma_mm,
            out,
            clamp_eps,
            max_nonpos,
        } => {
            let cfg = DbmConfig {
                sigma_mm: *sigma_mm,
                max_nonpositive_fraction: *max_nonpos,
                clamp_epsilon: *clamp_eps,
            };
            cfg.validate().map_err(|e| usage("sigma-mm/clamp-eps/max-nonpos", e))?;
            let (lj, report) = dbm_pipeline(&read_field(field)?, &cfg)?;
            write_volume(&lj.into(), out)?;
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
            Ok(())
        }
        Command::Weights {
            record,
            prior,
            mlp,
            atlas,
            out,
            report,
        } => weights(record, prior.as_deref(), mlp, atlas, out, report.as_deref()),
        Command::Train {
            manifest,
            atlas,
            prior,
            hp,
            out,
        } => train_cmd(manifest, atlas, prior.as_deref(), hp, cli.seed.unwrap_or(1), out),
        Command::Predict {
            manifest,
            model,
            atlas,
            out,
        } => predict_cmd(manifest, model, atlas.as_deref(), out),
        Command::Evaluate {
            preds,
            manifest,
            tau,
            out,
        } => {
            let report = evaluate_files(preds, manifest, *tau)?;
            let text = serde_json::to_string_pretty(&report).expect("report serializes");
            match out {
                Some(p) => fs::write(p, &text).map_err(|e| Error::io(p, e))?,
                None => println!("{text}"),
            }
            log(
                "evaluate",
                json!({ "n": report.n, "acc": report.acc_percent, "tpr": report.tpr_percent,
                        "fpr": report.fpr_percent, "ece": report.calibration.ece }),
            );
            Ok(())
        }
        Command::Ablate {
            manifest,
            tests,
            atlas,
            prior,
            seeds,
            hp,
            out,
        } => ablate_cmd(manifest, tests, atlas, prior.as_deref(), seeds, hp, out),
        Command::Report { evals, out, csv } => report_cmd(evals, out, csv.as_deref()),
    }
}

fn gen_cohort(spec_path: &Path, out_dir: &Path, seed: Option<u64>) -> CliResult<()> {
    let text = fs::read_to_string(spec_path).map_err(|e| Error::io(spec_path, e))?;
    let mut spec: CohortSpec =
        serde_json::from_str(&text).map_err(|e| usage("spec", format!("{}: {e}", spec_path.display())))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| usage("spec", e))?;
    let files = generate_cohort(&spec, out_dir)?;
    log(
        "gen-cohort",
        json!({ "n_subjects": files.n_subjects, "manifest": files.manifest, "atlas": files.atlas }),
    );
    Ok(())
}

fn atlas_gen(dims: &[usize], spacing: &[f64], m: usize, seed: u64, out: &Path) -> CliResult<()> {
    if dims.len() != 3 || spacing.len() != 3 {
        return Err(usage("dims/spacing", "expected three comma-separated values"));
    }
    let geometry =
        GridGeometry::new([dims[0], dims[1], dims[2]], [spacing[0], spacing[1], spacing[2]]).map_err(|e| usage("dims", e))?;
    if m == 0 {
        return Err(usage("m", "must be positive"));
    }
    let labels = procedural_parcellation(&geometry, m, seed)?;
    let masks = build_masks(&labels, m)?;
    write_volume(&labels.into(), out)?;
    log("atlas", json!({ "m": m, "seed": seed, "digest": masks.digest(), "out": out }));
    Ok(())
}

fn load_masks(atlas: &Path) -> CliResult<RegionMasks> {
    let labels = read_labels(atlas)?;
    let m = labels.max_label() as usize;
    Ok(build_masks(&labels, m)?)
}

fn load_prior(prior: Option<&Path>, m: usize) -> CliResult<PriorWeights> {
    let p = match prior {
        Some(path) => PriorWeights::load(path)?,
        None => PriorWeights::uniform(m),
    };
    if p.m() != m {
        return Err(Error::DimensionMismatch(format!("prior has {} regions, atlas has {m}", p.m())).into());
    }
    Ok(p)
}

fn fit_options(hp: &TrainArgs, m: usize, seed: u64) -> CliResult<FitOptions> {
    let embedder = match &hp.embeddings {
        Some(path) => EmbedderSpec::File { path: path.clone() },
        None => EmbedderSpec::Hashing {
            dim: hp.embed_dim,
            seed: 0,
        },
    };
    let dbm = DbmConfig::with_sigma(hp.sigma_mm);
    dbm.validate().map_err(|e| usage("sigma-mm", e))?;
    let train = TrainConfig {
        lr: hp.lr,
        weight_decay: hp.weight_decay,
        warmup_epochs: hp.warmup,
        max_epochs: hp.epochs,
        batch_size: hp.batch,
        early_stop_patience: hp.patience,
        val_fraction: hp.val_fraction,
        seed,
        mlp_init_scale: hp.mlp_init_scale,
        ..TrainConfig::default()
    };
    train.validate().map_err(|e| usage("lr/epochs/batch", e))?;
    if !(hp.tau.is_finite()) {
        return Err(usage("tau", "must be finite"));
    }
    Ok(FitOptions {
        model: ModelConfig {
            hidden: hp.hidden,
            fusion: FusionConfig { lambda: hp.lambda },
            ..ModelConfig::new(m, hp.embed_dim)
        },
        train,
        embedder,
        dbm,
        tau: hp.tau,
    })
}

/// Embedder plus the model config with the embedder's true dimension.
fn resolve_embedder(opts: &mut FitOptions) -> CliResult<Embedder> {
    let embedder = Embedder::from_spec(&opts.embedder)?;
    opts.model.embed_dim = embedder.dim();
    opts.model.validate().map_err(|e| usage("hidden/lambda", e))?;
    Ok(embedder)
}

fn train_cmd(manifest: &Path, atlas: &Path, prior: Option<&Path>, hp: &TrainArgs, seed: u64, out: &Path) -> CliResult<()> {
    let masks = load_masks(atlas)?;
    let mut opts = fit_options(hp, masks.m(), seed)?;
    let prior = load_prior(prior, masks.m())?;
    let embedder = resolve_embedder(&mut opts)?;
    let subjects = manifest_features(manifest, &masks, &opts.dbm, &embedder, opts.tau)?;
    let (mut state, tlog) = fit_model(&subjects, &prior, &masks, &opts)?;
    state.atlas_path = Some(atlas.to_path_buf());
    for e in &tlog.epochs {
        log(
            "epoch",
            json!({ "epoch": e.epoch, "lr": e.lr, "train_loss": e.train_loss, "val_loss": e.val_loss }),
        );
    }
    state.save(out)?;
    log(
        "train",
        json!({ "n_train": tlog.n_train, "n_val": tlog.n_val, "best_epoch": tlog.best_epoch,
                "stopped_early": tlog.stopped_early, "out": out }),
    );
    Ok(())
}

fn predict_cmd(manifest: &Path, model: &Path, atlas: Option<&Path>, out: &Path) -> CliResult<()> {
    let state = ModelState::load(model)?;
    let atlas = match (atlas, &state.atlas_path) {
        (Some(a), _) => a.to_path_buf(),
        (None, Some(a)) => a.clone(),
        (None, None) => return Err(usage("atlas", "model does not record its atlas; pass --atlas")),
    };
    let masks = load_masks(&atlas)?;
    state.check_atlas(&masks)?;
    let embedder = Embedder::from_spec(&state.embedder)?;
    let subjects = manifest_features(manifest, &masks, &state.dbm, &embedder, state.tau)?;
    let rows = predict_all(&state, &subjects)?;
    fs::write(out, predictions_csv(&rows)).map_err(|e| Error::io(out, e))?;
    log("predict", json!({ "n": rows.len(), "out": out }));
    Ok(())
}

fn weights(
    record: &Path,
    prior: Option<&Path>,
    mlp: &Path,
    atlas: &Path,
    out: &Path,
    report: Option<&Path>,
) -> CliResult<()> {
    let state = ModelState::load(mlp)?;
    let masks = load_masks(atlas)?;
    let text = fs::read_to_string(record).map_err(|e| Error::io(record, e))?;
    let rec: ClinicalRecord = serde_json::from_str(&text).map_err(|e| Error::parse("record", record, e))?;
    rec.validate()?;
    let prior = match prior {
        Some(_) => load_prior(prior, masks.m())?,
        None => state.prior.clone(),
    };
    let t = Embedder::from_spec(&state.embedder)?.embed(&rec)?;
    let fw = pswm_forward(&t.vector, &prior, &state.params.mlp, &state.model.gate, state.model.ablation.gate)?;
    let map = weight_map(&fw.w, &masks)?;
    write_volume(&map.into(), out)?;
    if let Some(path) = report {
        let mut csv = String::from("region_index,prior,delta,gate\n");
        for r in 0..masks.m() {
            let _ = writeln!(csv, "{},{:?},{:?},{:?}", r + 1, prior.values()[r], fw.delta[r], fw.w[r]);
        }
        fs::write(path, csv).map_err(|e| Error::io(path, e))?;
    }
    log("weights", json!({ "subject_id": rec.subject_id, "gates": fw.w }));
    Ok(())
}

fn ablate_cmd(
    manifest: &Path,
    tests: &[PathBuf],
    atlas: &Path,
    prior: Option<&Path>,
    seeds: &[u64],
    hp: &TrainArgs,
    out: &Path,
) -> CliResult<()> {
    if seeds.is_empty() {
        return Err(usage("seeds", "at least one seed is required"));
    }
    let masks = load_masks(atlas)?;
    let mut opts = fit_options(hp, masks.m(), seeds[0])?;
    let prior = load_prior(prior, masks.m())?;
    let embedder = resolve_embedder(&mut opts)?;
    let train = manifest_features(manifest, &masks, &opts.dbm, &embedder, opts.tau)?;
    let sets = tests
        .iter()
        .map(|t| manifest_features(t, &masks, &opts.dbm, &embedder, opts.tau))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&[_]> = sets.iter().map(Vec::as_slice).collect();
    let rows = run_ablation(&train, &refs, &prior, &masks, &opts, seeds)?;

    let names: Vec<String> = tests
        .iter()
        .map(|t| t.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    let mut csv = String::from("config,dbm,prior,patient");
    let mut md = String::from("| config | DBM | prior | patient |");
    for n in &names {
        let _ = write!(csv, ",acc_{n}");
        let _ = write!(md, " ACC {n} (%) |");
    }
    csv.push('\n');
    md.push_str("\n|---|---|---|---|");
    md.push_str(&"---|".repeat(names.len()));
    md.push('\n');
    let tick = |b: bool| if b { "x" } else { "" };
    for r in &rows {
        let _ = write!(csv, "{},{},{},{}", r.name, r.dbm, r.prior, r.patient);
        let _ = write!(md, "| {} | {} | {} | {} |", r.name, tick(r.dbm), tick(r.prior), tick(r.patient));
        for a in &r.mean_acc {
            let _ = write!(csv, ",{a:?}");
            let _ = write!(md, " {:.2} |", 100.0 * a);
        }
        csv.push('\n');
        md.push('\n');
    }
    fs::write(out, csv).map_err(|e| Error::io(out, e))?;
    print!("{md}");
    log("ablate", json!({ "rows": rows.len(), "seeds": seeds, "out": out }));
    Ok(())
}

fn report_cmd(evals: &[String], out: &Path, csv: Option<&Path>) -> CliResult<()> {
    let mut reports: Vec<(String, EvalReport)> = Vec::new();
    for spec in evals {
        let (name, path) = match spec.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let n = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                (n, p)
            }
        };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let report: EvalReport =
            serde_json::from_str(&text).map_err(|e| Error::parse("evaluation report", &path, e))?;
        reports.push((name, report));
    }
    let csv_path = csv.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("csv"));
    fs::write(out, report_markdown(&reports)).map_err(|e| Error::io(out, e))?;
    fs::write(&csv_path, report_csv(&reports)).map_err(|e| Error::io(&csv_path, e))?;
    log("report", json!({ "sets": reports.len(), "markdown": out, "csv": csv_path }));
    Ok(())
}

fn report_markdown(reports: &[(String, EvalReport)]) -> String {
    let mut md = String::from("# Evaluation report\n\n## Metrics\n\n");
    md.push_str("| set | n | TP | FN | FP | TN | ACC (%) | TPR (%) | FPR (%) |\n|---|---|---|---|---|---|---|---|---|\n");
    for (name, r) in reports {
        let c = &r.counts;
        let _ = writeln!(
            md,
            "| {name} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.n, c.tp, c.fn_, c.fp, c.tn, r.acc_percent, r.tpr_percent, r.fpr_percent
        );
    }
    md.push_str("\n## Calibration\n");
    for (name, r) in reports {
        let _ = writeln!(md, "\n### {name}\n\nECE: {:.4}\n", r.calibration.ece);
        md.push_str("| bin | count | mean prob | fraction positive |\n|---|---|---|---|\n");
        for b in r.calibration.bins.iter().filter(|b| b.count > 0) {
            let _ = writeln!(
                md,
                "| [{:.2}, {:.2}) | {} | {:.3} | {:.3} |",
                b.lower,
                b.upper,
                b.count,
                b.mean_prob.unwrap_or(f64::NAN),
                b.frac_positive.unwrap_or(f64::NAN)
            );
        }
    }
    md.push_str("\n## Net benefit\n");
    for (name, r) in reports {
        let _ = writeln!(md, "\n### {name}\n");
        md.push_str("| threshold | model | treat all | treat none |\n|---|---|---|---|\n");
        for row in &r.net_benefit {
            let _ = writeln!(
                md,
                "| {:.2} | {:.4} | {:.4} | {:.4} |",
                row.threshold, row.model, row.treat_all, row.treat_none
            );
        }
    }
    md
}

fn report_csv(reports: &[(String, EvalReport)]) -> String {
    let mut csv = String::from("set,section,key,value\n");
    for (name, r) in reports {
        let m = &r.metrics;
        for (k, v) in [("acc", m.acc.value()), ("tpr", m.tpr.value()), ("fpr", m.fpr.value()), ("ece", r.calibration.ece)] {
            let _ = writeln!(csv, "{name},metric,{k},{v:?}");
        }
        for row in &r.net_benefit {
            let t = row.threshold;
            let _ = writeln!(csv, "{name},net_benefit,model@{t:.2},{:?}", row.model);
            let _ = writeln!(csv, "{name},net_benefit,treat_all@{t:.2},{:?}", row.treat_all);
        }
    }
    csv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["morphogate"]), 1);
        assert_eq!(run(["morphogate", "frobnicate"]), 1);
        assert_eq!(run(["morphogate", "dbm", "--field", "x.vol"]), 1);
        assert_eq!(run(["morphogate", "--help"]), 0);
    }

    #[test]
    fn missing_input_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("lj.vol");
        let code = run([
            "morphogate",
            "dbm",
            "--field",
            dir.path().join("absent.vol").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
        assert!(!out.exists());
    }

    #[test]
    fn bad_flag_values_fail_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("lj.vol");
        let code = run([
            "morphogate",
            "dbm",
            "--field",
            "whatever.vol",
            "--sigma-mm=-1",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
        assert!(!out.exists());
    }

    #[test]
    fn atlas_gen_writes_labels() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("atlas.vol");
        let code = run([
            "morphogate", "atlas", "gen", "--dims", "12,12,12", "--m", "4", "--seed", "3", "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        assert_eq!(read_labels(&out).unwrap().max_label(), 4);
    }

    #[test]
    fn unknown_manifest_reports_path() {
        let e = crate::pipeline::read_manifest(Path::new("/nonexistent/m.jsonl")).unwrap_err();
        assert!(e.to_string().contains("/nonexistent/m.jsonl"));
    }
}
