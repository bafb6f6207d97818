//! Command-line surface: train tokenizers, attack merge lists, inspect
//! them, and run controlled experiments.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data or
//! format error, 4 attack finished without converging (the estimate file
//! is still written).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use tokmix::bpe::{train, MergeList};
use tokmix::corpus::read_manifest;
use tokmix::error::Error;
use tokmix::harness::{self, config::parse_experiment_config, ExperimentKind};
use tokmix::inference::{infer_mixture, AttackConfig, SolverChoice};
use tokmix::merge_io::{
    dedupe_redundant, detect_format, display_token, parse_merge_list, serialize_merge_list,
    strip_manual_prefix, MergeFormat, RawTokenizerFile,
};
use tokmix::pretokenize::{pretokenize, PretokenRules, SpaceAttachment, WordTable};
use tokmix::timeline::{read_timeline, replay, write_timeline, PairCountTimeline};

#[derive(Parser)]
#[command(
    name = "tokmix",
    version,
    about = "Infer the training-data mixture of a BPE tokenizer from its merge list"
)]
struct Cli {
    /// Worker threads for parallel stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PretokenizeMode {
    /// Split on whitespace and discard the separators.
    Discard,
    /// Attach one leading space to each word (commercial-list convention).
    Attach,
}

impl PretokenizeMode {
    fn rules(self) -> PretokenRules {
        match self {
            PretokenizeMode::Discard => PretokenRules::default(),
            PretokenizeMode::Attach => PretokenRules {
                space_attachment: SpaceAttachment::AttachLeadingSpace,
                ..PretokenRules::default()
            },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Auto,
    Plain,
    HfMerges,
    RankVocab,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormatArg {
    Plain,
    HfMerges,
    RankVocab,
}

impl OutFormatArg {
    fn format(self) -> MergeFormat {
        match self {
            OutFormatArg::Plain => MergeFormat::Plain,
            OutFormatArg::HfMerges => MergeFormat::HfMerges,
            OutFormatArg::RankVocab => MergeFormat::RankVocab,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Embedded,
    External,
}

#[derive(Subcommand)]
enum Command {
    /// Train a merge list on the concatenated manifest corpora.
    Train(TrainArgs),
    /// Estimate the category mixture behind a merge list.
    Attack(AttackArgs),
    /// Print the first merges of a list in readable form.
    Inspect(InspectArgs),
    /// Run a controlled experiment from a config file.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Category manifest (`id<TAB>name<TAB>path` lines).
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    num_merges: usize,
    #[arg(long, value_enum, default_value_t = PretokenizeMode::Discard)]
    pretokenize: PretokenizeMode,
    #[arg(long, value_enum, default_value_t = OutFormatArg::Plain)]
    out_format: OutFormatArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    /// Merge-list file of the target tokenizer.
    #[arg(long)]
    merges: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,
    /// Category manifest; per-category timelines are replayed from these.
    #[arg(long, conflicts_with = "timelines")]
    manifest: Option<PathBuf>,
    /// Directory of prebuilt `.pctl` timelines (alternative to --manifest).
    #[arg(long)]
    timelines: Option<PathBuf>,
    /// Cache directory for replayed timelines.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Merge horizon; defaults to everything after --offset.
    #[arg(long = "T")]
    t_horizon: Option<usize>,
    /// Skip this many leading merges (attack an extension suffix).
    #[arg(long, default_value_t = 0)]
    offset: usize,
    /// Violation tolerance; omit for the scaled default.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_enum, default_value_t = SolverArg::Embedded)]
    solver: SolverArg,
    /// External solver command; `{lp}` and `{sol}` expand to file paths.
    /// Falls back to TOKMIX_SOLVER_CMD.
    #[arg(long)]
    solver_cmd: Option<String>,
    #[arg(long, value_enum, default_value_t = PretokenizeMode::Attach)]
    pretokenize: PretokenizeMode,
    /// Keep redundant merges instead of removing never-firing rules.
    #[arg(long)]
    no_dedupe: bool,
    /// Remove a leading run of whitespace-only merges before attacking.
    #[arg(long)]
    strip_whitespace_prefix: bool,
    #[arg(long, default_value_t = 50)]
    max_rounds: usize,
    /// Most-violated constraints added per round (0 = all).
    #[arg(long, default_value_t = 0)]
    batch_limit: usize,
    /// Estimate CSV (`category,name,alpha_hat`); diagnostics go to
    /// `<out>.diag`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    merges: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Auto)]
    format: FormatArg,
    /// How many merges to print.
    #[arg(long, default_value_t = 50)]
    top: usize,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the config file's seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
        {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    let outcome = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Attack(args) => cmd_attack(args),
        Command::Inspect(args) => cmd_inspect(args),
        Command::Experiment(args) => cmd_experiment(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Parse { .. } | Error::Config { .. } => 2,
        _ => 3,
    }
}

/// Manifest problems are configuration errors (exit 2), not data errors.
fn read_manifest_cfg(path: &Path) -> Result<Vec<tokmix::corpus::CategorySpec>, Error> {
    read_manifest(path).map_err(|e| Error::Config {
        line: None,
        msg: format!("manifest {}: {e}", path.display()),
    })
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode, Error> {
    let specs = read_manifest_cfg(&args.manifest)?;
    let rules = args.pretokenize.rules();
    let mut table = WordTable::new();
    for spec in &specs {
        let data = std::fs::read(&spec.source).map_err(|e| Error::io(&spec.source, e))?;
        table.absorb(&pretokenize(&data, &rules)?);
    }
    let outcome = train(&table, args.num_merges);
    if outcome.merges.len() < args.num_merges {
        println!(
            "training stopped at {} of {} merges ({:?})",
            outcome.merges.len(),
            args.num_merges,
            outcome.stop
        );
    }
    let bytes = serialize_merge_list(&outcome.merges, args.out_format.format())?;
    std::fs::write(&args.out, bytes).map_err(|e| Error::io(&args.out, e))?;
    println!(
        "wrote {} merges to {}",
        outcome.merges.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_merge_list(path: &Path, format: FormatArg) -> Result<MergeList, Error> {
    let payload = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = match format {
        FormatArg::Plain => MergeFormat::Plain,
        FormatArg::HfMerges => MergeFormat::HfMerges,
        FormatArg::RankVocab => MergeFormat::RankVocab,
        FormatArg::Auto => {
            let detected = detect_format(&payload)?;
            println!("detected merge format: {detected}");
            detected
        }
    };
    parse_merge_list(&RawTokenizerFile::new(format, payload))
}

fn cmd_inspect(args: InspectArgs) -> Result<ExitCode, Error> {
    let merges = load_merge_list(&args.merges, args.format)?;
    println!(
        "merge list: {} rules, vocab {} ({} base)",
        merges.len(),
        merges.vocab_len(),
        merges.base_len()
    );
    println!("{:>8}  {}", "rank", "merge");
    for (k, l, r) in merges.iter_rules().take(args.top) {
        println!("{:>8}  {} {}", k, display_token(l), display_token(r));
    }
    Ok(ExitCode::SUCCESS)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

fn cmd_attack(args: AttackArgs) -> Result<ExitCode, Error> {
    let mut merges = load_merge_list(&args.merges, args.format)?;

    if args.strip_whitespace_prefix {
        let (stripped, n) = strip_manual_prefix(&merges);
        if n > 0 {
            println!("stripped {n} manual whitespace merges from the head");
        }
        merges = stripped;
    }
    if !args.no_dedupe {
        let (cleaned, removed) = dedupe_redundant(&merges);
        if !removed.is_empty() {
            println!("removed {} redundant merges", removed.len());
        }
        merges = cleaned;
    }

    if args.offset >= merges.len() {
        return Err(Error::invalid(format!(
            "--offset {} leaves no merges of the {}-rule list",
            args.offset,
            merges.len()
        )));
    }
    let t_horizon = match args.t_horizon {
        Some(t) => {
            if args.offset + t > merges.len() {
                return Err(Error::invalid(format!(
                    "--T {} with --offset {} exceeds the {}-rule list",
                    t,
                    args.offset,
                    merges.len()
                )));
            }
            t
        }
        None => merges.len() - args.offset,
    };
    let horizon_end = args.offset + t_horizon;

    let started = Instant::now();
    let (names, timelines) = match (&args.manifest, &args.timelines) {
        (Some(manifest), None) => {
            let specs = read_manifest_cfg(manifest)?;
            let rules = args.pretokenize.rules();
            let vocab_hash = merges.vocab_hash();
            if let Some(cache) = &args.cache {
                std::fs::create_dir_all(cache).map_err(|e| Error::io(cache, e))?;
            }
            let timelines: Vec<PairCountTimeline> = specs
                .par_iter()
                .map(|spec| {
                    let data =
                        std::fs::read(&spec.source).map_err(|e| Error::io(&spec.source, e))?;
                    if data.is_empty() {
                        return Err(Error::MissingData(format!(
                            "category {} ({}) is empty",
                            spec.id, spec.name
                        )));
                    }
                    let cache_path = args.cache.as_ref().map(|dir| {
                        dir.join(format!(
                            "cat{:03}_{:016x}_{:016x}_S{}.pctl",
                            spec.id,
                            fnv1a(&data),
                            vocab_hash,
                            horizon_end
                        ))
                    });
                    if let Some(path) = &cache_path {
                        if path.exists() {
                            let tl = read_timeline(path)?;
                            if tl.vocab_hash() == vocab_hash && tl.steps() >= horizon_end {
                                log::info!("category {}: timeline cache hit", spec.id);
                                return Ok(tl);
                            }
                        }
                    }
                    let table = pretokenize(&data, &rules)?;
                    let mut tl = replay(&table, &merges, horizon_end)?;
                    tl.category_id = spec.id;
                    if let Some(path) = &cache_path {
                        write_timeline(&tl, path)?;
                    }
                    Ok(tl)
                })
                .collect::<Result<_, Error>>()?;
            let names = specs.iter().map(|s| s.name.clone()).collect::<Vec<_>>();
            (names, timelines)
        }
        (None, Some(dir)) => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "pctl"))
                .collect();
            if paths.is_empty() {
                return Err(Error::MissingData(format!(
                    "no .pctl timelines in {}",
                    dir.display()
                )));
            }
            paths.sort();
            let mut timelines = Vec::with_capacity(paths.len());
            for p in &paths {
                timelines.push(read_timeline(p)?);
            }
            timelines.sort_by_key(|tl| tl.category_id);
            let names = timelines
                .iter()
                .map(|tl| format!("cat{}", tl.category_id))
                .collect();
            (names, timelines)
        }
        _ => {
            return Err(Error::Config {
                line: None,
                msg: "exactly one of --manifest or --timelines is required".into(),
            })
        }
    };

    let mut cfg = AttackConfig::new(t_horizon);
    cfg.offset = args.offset;
    cfg.epsilon = args.epsilon;
    cfg.max_rounds = args.max_rounds;
    cfg.batch_limit = args.batch_limit;
    cfg.solver = match args.solver {
        SolverArg::Embedded => SolverChoice::Embedded,
        SolverArg::External => {
            let cmd = args
                .solver_cmd
                .clone()
                .or_else(|| std::env::var("TOKMIX_SOLVER_CMD").ok())
                .ok_or_else(|| Error::Config {
                    line: None,
                    msg: "--solver external needs --solver-cmd or TOKMIX_SOLVER_CMD".into(),
                })?;
            SolverChoice::External(cmd)
        }
    };

    let estimate = infer_mixture(&merges, &timelines, &cfg)?;
    let runtime = started.elapsed().as_secs_f64();

    let mut csv = String::from("category,name,alpha_hat\n");
    for (i, (name, a)) in names.iter().zip(&estimate.alpha_hat).enumerate() {
        let _ = writeln!(csv, "{i},{name},{a:.9}");
    }
    std::fs::write(&args.out, csv).map_err(|e| Error::io(&args.out, e))?;

    let mut diag = String::new();
    let _ = writeln!(diag, "objective = {:.12e}", estimate.objective);
    let _ = writeln!(diag, "rounds = {}", estimate.rounds);
    let _ = writeln!(diag, "constraints = {}", estimate.constraints_used);
    let _ = writeln!(diag, "converged = {}", estimate.converged);
    let _ = writeln!(diag, "T = {t_horizon}");
    let _ = writeln!(diag, "offset = {}", args.offset);
    let _ = writeln!(diag, "runtime_s = {runtime:.3}");
    let mut diag_name = args
        .out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "estimate".into());
    diag_name.push_str(".diag");
    let diag_path = args.out.with_file_name(diag_name);
    std::fs::write(&diag_path, diag).map_err(|e| Error::io(&diag_path, e))?;

    println!(
        "estimate written to {} ({} rounds, {} constraints, objective {:.3e})",
        args.out.display(),
        estimate.rounds,
        estimate.constraints_used,
        estimate.objective
    );
    if !estimate.converged {
        eprintln!("warning: attack did not converge within the round budget");
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_experiment(args: ExperimentArgs) -> Result<ExitCode, Error> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| Error::Config {
        line: None,
        msg: format!("config {}: {e}", args.config.display()),
    })?;
    let mut cfg = parse_experiment_config(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;

    match cfg.kind {
        ExperimentKind::Controlled => {
            let rows = harness::run_controlled(&cfg)?;
            harness::write_report_csvs(&args.out_dir, &rows)?;
            print_summary(&rows);
        }
        ExperimentKind::Withheld => {
            let rows = harness::run_withheld(&cfg)?;
            harness::write_report_csvs(&args.out_dir, &rows)?;
            print_summary(&rows);
        }
        ExperimentKind::Shift => {
            let rows = harness::run_shift(&cfg)?;
            harness::write_report_csvs(&args.out_dir, &rows)?;
            print_summary(&rows);
        }
        ExperimentKind::Scaling => {
            for (label, rows) in harness::run_scaling(&cfg)? {
                let dir = args.out_dir.join(&label);
                harness::write_report_csvs(&dir, &rows)?;
                println!("[{label}]");
                print_summary(&rows);
            }
        }
    }
    println!("reports written to {}", args.out_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn print_summary(rows: &[harness::ReportRow]) {
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("warning: {failed} trial(s) failed; see trials.csv");
    }
    for s in harness::summarize(rows) {
        println!(
            "  {:>7}: mean log10 MSE {:8.3} (std {:.3}, {} trials)",
            s.method.name(),
            s.mean_log10_mse,
            s.std_log10_mse,
            s.trials
        );
    }
}
