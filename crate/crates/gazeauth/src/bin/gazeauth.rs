//! Command-line front end. All logic lives in the library; each verb
//! loads a config, calls the corresponding pipeline, and writes the
//! owning module's file formats under `<out>/<id>/`.
//!
//! Exit codes: 0 success, 1 config error, 2 data error, 3 numerical
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gazeauth::error::{Error, Result};
use gazeauth::harness::{
    config_hash, partition_by_accuracy, run_experiment, sweep_duration, sweep_train_size,
    train_model, write_experiment_outputs, ExperimentConfig, ExperimentResult,
};
use gazeauth::identify::{fit_scaling_curve, gallery_sweep, CurveFamily, SweepMetric};
use gazeauth::permanence::{permanence_report, PermanenceConfig};
use gazeauth::signal::Dataset;
use gazeauth::synth::{generate_dataset, SynthConfig};
use gazeauth::training::write_loss_history_csv;

#[derive(Parser)]
#[command(
    name = "gazeauth",
    about = "Gaze-based biometric authentication toolkit",
    version
)]
struct Cli {
    /// Configuration file (JSON). Verb-specific schema; defaults apply
    /// when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory root.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Dataset manifest path (overrides the config's dataset field).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,

    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct IdArg {
    /// Experiment identifier; outputs land in <out>/<id>/.
    #[arg(long)]
    id: Option<String>,
}

#[derive(Subcommand)]
enum Verb {
    /// Generate a synthetic gaze dataset (manifest + recording CSVs).
    Synth(IdArg),
    /// Train an embedder and store the model artifact.
    Train(IdArg),
    /// Run one verification/identification experiment.
    Eval(IdArg),
    /// Train and evaluate once per training-population size.
    SweepTrainSize {
        #[command(flatten)]
        id: IdArg,
        /// Comma-separated training subset sizes, e.g. 25,50,100.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
    },
    /// Evaluate one model across enrollment/verification durations.
    SweepDuration {
        #[command(flatten)]
        id: IdArg,
        /// Comma-separated chunk pairs, e.g. 1:1,2:2,4:4.
        #[arg(long, value_delimiter = ',', required = true)]
        combos: Vec<String>,
    },
    /// Subsample galleries of each size and fit scaling curves.
    SweepGallery {
        #[command(flatten)]
        id: IdArg,
        /// Comma-separated gallery sizes.
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        /// Subsets per size.
        #[arg(long, default_value_t = 100)]
        subsamples: usize,
    },
    /// Assign accuracy tiers to users with both random-saccade runs.
    AccuracyTiers(IdArg),
    /// Embedding-feature reliability analysis (ICC, normality screen).
    Permanence(IdArg),
    /// Aggregate result.json files under the output root into a summary.
    Report(IdArg),
}

fn load_experiment_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dataset) = &cli.dataset {
        cfg.dataset = Some(dataset.clone());
    }
    Ok(cfg)
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let path = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset manifest given (--dataset or config field)".into()))?;
    Dataset::load(path)
}

fn out_dir(cli: &Cli, id: &str) -> Result<PathBuf> {
    let dir = cli.out.join(id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    Ok(dir)
}

fn resolve_id(arg: &IdArg, fallback: &str) -> String {
    arg.id.clone().unwrap_or_else(|| fallback.to_string())
}

fn parse_combo(text: &str) -> Result<(usize, usize)> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("bad chunk pair '{text}', expected N:M")))?;
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| Error::Config(format!("bad chunk count '{s}': {e}")))
    };
    Ok((parse(a)?, parse(b)?))
}

fn cmd_synth(cli: &Cli, id: &IdArg) -> Result<()> {
    let mut cfg: SynthConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("synth config parse {}: {e}", path.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    let dir = out_dir(cli, &resolve_id(id, "dataset"))?;
    let manifest = generate_dataset(&cfg, &dir)?;
    log::info!(
        "wrote {} users ({} recordings) to {}",
        manifest.users.len(),
        manifest.users.iter().map(|u| u.recordings.len()).sum::<usize>(),
        dir.display()
    );
    println!("{}", dir.join("manifest.json").display());
    Ok(())
}

fn cmd_train(cli: &Cli, id: &IdArg) -> Result<()> {
    let cfg = load_experiment_config(cli)?;
    let dataset = load_dataset(&cfg)?;
    let dir = out_dir(cli, &resolve_id(id, &cfg.id))?;
    let (artifact, histories, n_train_users) = train_model(&cfg, &dataset)?;
    artifact.save(&dir.join("model.json"))?;
    for (fold, history) in histories.iter().enumerate() {
        let name = if histories.len() == 1 {
            "loss_history.csv".to_string()
        } else {
            format!("loss_history_fold{fold}.csv")
        };
        write_loss_history_csv(history, &dir.join(name))?;
    }
    cfg.save(&dir.join("train_config.json"))?;
    log::info!(
        "trained {} model(s) on {n_train_users} users; artifact at {}",
        artifact.models.len(),
        dir.join("model.json").display()
    );
    println!("{}", dir.join("model.json").display());
    Ok(())
}

fn cmd_eval(cli: &Cli, id: &IdArg) -> Result<()> {
    let mut cfg = load_experiment_config(cli)?;
    if let Some(id) = &id.id {
        cfg.id = id.clone();
    }
    let dataset = load_dataset(&cfg)?;
    let dir = out_dir(cli, &cfg.id)?;
    let run = run_experiment(&cfg, &dataset)?;
    write_experiment_outputs(&run, &dir)?;
    log::info!("experiment {} done: config hash {}", cfg.id, config_hash(&cfg));
    println!(
        "{}: EER {:.4}%, Rank-1 IR {:.2}% ({} genuine / {} impostor pairs)",
        cfg.id,
        run.result.verification.eer_pct,
        run.result.identification.rank1_ir_pct,
        run.result.verification.n_gen,
        run.result.verification.n_imp
    );
    Ok(())
}

fn write_summary_csv(rows: &[(usize, ExperimentResult)], path: &Path) -> Result<()> {
    let mut out = String::from("N,eer_pct,frr_pct,d_prime,rank1_ir_pct,n_enrolled\n");
    for (n, r) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            n,
            r.verification.eer_pct,
            r.verification.frr_at_far[0].frr_pct,
            r.verification.d_prime,
            r.identification.rank1_ir_pct,
            r.n_enrolled
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn cmd_sweep_train_size(cli: &Cli, id: &IdArg, sizes: &[usize]) -> Result<()> {
    let mut cfg = load_experiment_config(cli)?;
    if let Some(id) = &id.id {
        cfg.id = id.clone();
    }
    let dataset = load_dataset(&cfg)?;
    let dir = out_dir(cli, &cfg.id)?;
    let rows = sweep_train_size(sizes, &cfg, &dataset)?;
    write_summary_csv(&rows, &dir.join("train_size_sweep.csv"))?;
    for (n, result) in &rows {
        result.save(&dir.join(format!("result_n{n}.json")))?;
    }
    println!("{}", dir.join("train_size_sweep.csv").display());
    Ok(())
}

fn cmd_sweep_duration(cli: &Cli, id: &IdArg, combos: &[String]) -> Result<()> {
    let mut cfg = load_experiment_config(cli)?;
    if let Some(id) = &id.id {
        cfg.id = id.clone();
    }
    let dataset = load_dataset(&cfg)?;
    let dir = out_dir(cli, &cfg.id)?;
    let pairs: Vec<(usize, usize)> = combos.iter().map(|c| parse_combo(c)).collect::<Result<_>>()?;
    let rows = sweep_duration(&pairs, &cfg, &dataset)?;
    let mut out = String::from("enroll_chunks,verify_chunks,eer_pct,frr_pct,d_prime,rank1_ir_pct\n");
    for (n_e, n_v, verification, identification) in &rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            n_e,
            n_v,
            verification.eer_pct,
            verification.frr_at_far[0].frr_pct,
            verification.d_prime,
            identification.rank1_ir_pct
        ));
    }
    let path = dir.join("duration_sweep.csv");
    std::fs::write(&path, out).map_err(|e| Error::io(path.display().to_string(), e))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_sweep_gallery(cli: &Cli, id: &IdArg, sizes: &[usize], subsamples: usize) -> Result<()> {
    let mut cfg = load_experiment_config(cli)?;
    if let Some(id) = &id.id {
        cfg.id = id.clone();
    }
    let dataset = load_dataset(&cfg)?;
    let dir = out_dir(cli, &cfg.id)?;
    let run = run_experiment(&cfg, &dataset)?;
    let far_target = cfg.far_targets[0];
    let sweep = gallery_sweep(&run.eval_pool, sizes, subsamples, cfg.seed, far_target)?;
    sweep.write_csv(&dir.join("gallery_sweep.csv"))?;
    sweep.write_raw_csv(&dir.join("gallery_sweep_raw.csv"))?;
    // Fit each family to the Rank-1 IR P95 points and report its
    // below-chance extrapolation.
    let obs: Vec<(f64, f64)> = sweep
        .rows
        .iter()
        .filter(|r| r.metric == SweepMetric::Rank1Ir)
        .map(|r| (r.n as f64, r.p95))
        .collect();
    for family in [
        CurveFamily::Sqrt,
        CurveFamily::Power,
        CurveFamily::Log,
        CurveFamily::Linear,
    ] {
        match fit_scaling_curve(&obs, family) {
            Ok(fit) => {
                let name = format!("curve_fit_{}.json", format!("{family:?}").to_lowercase());
                fit.save(&dir.join(name))?;
            }
            Err(e) => log::warn!("{family:?} fit failed: {e}"),
        }
    }
    println!("{}", dir.join("gallery_sweep.csv").display());
    Ok(())
}

fn cmd_accuracy_tiers(cli: &Cli, id: &IdArg) -> Result<()> {
    let cfg = load_experiment_config(cli)?;
    let dataset = load_dataset(&cfg)?;
    let dir = out_dir(cli, &resolve_id(id, &cfg.id))?;
    let tiers = partition_by_accuracy(&dataset.manifest, &[1.0 / 3.0, 2.0 / 3.0])?;
    let accuracy: std::collections::BTreeMap<_, _> = dataset
        .manifest
        .users
        .iter()
        .map(|u| (u.user_id.clone(), u.accuracy_error_deg))
        .collect();
    let mut out = String::from("user_id,tier,accuracy_error_deg\n");
    for (user, tier) in &tiers {
        out.push_str(&format!("{},{},{}\n", user, tier, accuracy[user]));
    }
    let path = dir.join("accuracy_tiers.csv");
    std::fs::write(&path, out).map_err(|e| Error::io(path.display().to_string(), e))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_permanence(cli: &Cli, id: &IdArg) -> Result<()> {
    let mut cfg = load_experiment_config(cli)?;
    if let Some(id) = &id.id {
        cfg.id = id.clone();
    }
    let dataset = load_dataset(&cfg)?;
    let dir = out_dir(cli, &cfg.id)?;
    let (artifact, _, _) = train_model(&cfg, &dataset)?;
    let table = gazeauth::harness::permanence_table(&cfg, &dataset, &artifact)?;
    let perm_cfg = PermanenceConfig {
        seed: cfg.seed,
        ..PermanenceConfig::default()
    };
    let report = permanence_report(&table, &perm_cfg)?;
    report.save(&dir.join("permanence.json"))?;
    report.write_csv(&dir.join("permanence.csv"))?;
    println!(
        "ICC min/median/max: {:.4}/{:.4}/{:.4} over {} features ({} users)",
        report.icc_min, report.icc_median, report.icc_max, report.n_features, report.n_users
    );
    Ok(())
}

fn cmd_report(cli: &Cli, id: &IdArg) -> Result<()> {
    let root = &cli.out;
    let mut results: Vec<ExperimentResult> = Vec::new();
    let entries =
        std::fs::read_dir(root).map_err(|e| Error::io(root.display().to_string(), e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let candidate = dir.join("result.json");
        if candidate.exists() {
            results.push(ExperimentResult::load(&candidate)?);
        }
        // Train-size sweeps store one result per subset size.
        let mut sweep_files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(dir.display().to_string(), e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .map(|n| n.starts_with("result_n") && n.ends_with(".json"))
                    .unwrap_or(false)
            })
            .collect();
        sweep_files.sort();
        for f in sweep_files {
            results.push(ExperimentResult::load(&f)?);
        }
    }
    if results.is_empty() {
        return Err(Error::Data(format!(
            "no result.json files found under {}",
            root.display()
        )));
    }
    results.sort_by(|a, b| a.id.cmp(&b.id));
    let dir = out_dir(cli, &resolve_id(id, "summary"))?;
    let mut out = String::from(
        "id,n_train_users,n_enrolled,n_excluded,eer_pct,frr_pct,d_prime,rank1_ir_pct,n_gen,n_imp\n",
    );
    for r in &results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.id,
            r.n_train_users,
            r.n_enrolled,
            r.n_excluded,
            r.verification.eer_pct,
            r.verification.frr_at_far[0].frr_pct,
            r.verification.d_prime,
            r.identification.rank1_ir_pct,
            r.verification.n_gen,
            r.verification.n_imp
        ));
    }
    let path = dir.join("summary.csv");
    std::fs::write(&path, &out).map_err(|e| Error::io(path.display().to_string(), e))?;
    let json = serde_json::to_string_pretty(&results)
        .map_err(|e| Error::Data(format!("summary serialization: {e}")))?;
    std::fs::write(dir.join("summary.json"), json)
        .map_err(|e| Error::io(dir.join("summary.json").display().to_string(), e))?;
    println!("{}", path.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match &cli.verb {
        Verb::Synth(id) => cmd_synth(cli, id),
        Verb::Train(id) => cmd_train(cli, id),
        Verb::Eval(id) => cmd_eval(cli, id),
        Verb::SweepTrainSize { id, sizes } => cmd_sweep_train_size(cli, id, sizes),
        Verb::SweepDuration { id, combos } => cmd_sweep_duration(cli, id, combos),
        Verb::SweepGallery {
            id,
            sizes,
            subsamples,
        } => cmd_sweep_gallery(cli, id, sizes, *subsamples),
        Verb::AccuracyTiers(id) => cmd_accuracy_tiers(cli, id),
        Verb::Permanence(id) => cmd_permanence(cli, id),
        Verb::Report(id) => cmd_report(cli, id),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
