//! Command-line front end: population generation, full studies, single
//! tasks, feature selection, FRF ingestion and the sensitivity demo.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use modal_transfer::dataset::{LabeledDataset, TransferTask};
use modal_transfer::population::{
    generate_population, sensitivity_demo, PopulationConfig, Structure,
};
use modal_transfer::study::{
    evaluate_task, frf_task, run_numerical_study_lenient, synthetic_blade_pair, BladePairConfig,
    EvalOptions, FrfDataset, Method, MethodSpec, SelectedHyper, StudyConfig, TaskResult,
};
use modal_transfer::tfc::{select_features, TfcConfig, Theta};
use modal_transfer::{Error, Result};

#[derive(Parser)]
#[command(
    name = "modal-transfer",
    about = "Vibration-based damage diagnosis across structures",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the structure population and write its datasets.
    GeneratePopulation(GeneratePopulation),
    /// Run the full multi-structure transfer study.
    RunStudy(RunStudy),
    /// Evaluate methods on one source-target pair.
    RunTask(RunTask),
    /// Select a feature subset for one source-target pair.
    SelectFeatures(SelectFeatures),
    /// Validate an FRF file and optionally convert it.
    IngestFrf(IngestFrf),
    /// Write the mode-shape versus frequency-shift sensitivity curves.
    DemoSensitivity(DemoSensitivity),
}

#[derive(Args)]
struct GeneratePopulation {
    /// Population config, .json or .toml (defaults when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "population")]
    out: PathBuf,
    /// Worker threads (defaults to the core count).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct RunStudy {
    /// Study config, .json or .toml (defaults when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the population seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for report.json and the CSV tables.
    #[arg(long, default_value = "study")]
    out: PathBuf,
    /// Comma-separated method subset, e.g. "NCA,TFC,TFC+BDA".
    #[arg(long, value_delimiter = ',')]
    methods: Vec<Method>,
    /// Worker threads (defaults to the core count).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct TaskSource {
    /// Source FRF file (.json or .csv). Needs --target-frf and --window.
    #[arg(long, requires = "target_frf")]
    source_frf: Option<PathBuf>,
    /// Target FRF file (.json or .csv).
    #[arg(long, requires = "source_frf")]
    target_frf: Option<PathBuf>,
    /// Magnitude bins per identified mode window.
    #[arg(long, default_value_t = 20)]
    window: usize,
    /// Source structure index of a generated population.
    #[arg(long, conflicts_with = "source_frf", requires = "target_structure")]
    source_structure: Option<usize>,
    /// Target structure index of a generated population.
    #[arg(long, conflicts_with = "target_frf", requires = "source_structure")]
    target_structure: Option<usize>,
    /// Population config for the structure mode, .json or .toml.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the population seed (structure mode).
    #[arg(long)]
    seed: Option<u64>,
}

impl TaskSource {
    /// Builds the task plus the mode-window grouping (FRF mode only).
    fn build(&self) -> Result<(TransferTask, Option<modal_transfer::tfc::FeatureGroups>)> {
        match (&self.source_frf, &self.target_frf) {
            (Some(s), Some(t)) => {
                let source = FrfDataset::load(s)?;
                let target = FrfDataset::load(t)?;
                let (task, groups) = frf_task(&source, &target, self.window)?;
                Ok((task, Some(groups)))
            }
            _ => {
                let (s, t) = match (self.source_structure, self.target_structure) {
                    (Some(s), Some(t)) => (s, t),
                    _ => {
                        return Err(Error::InvalidConfig(
                            "pass either --source-frf/--target-frf or \
                             --source-structure/--target-structure"
                                .into(),
                        ))
                    }
                };
                let mut config = match &self.config {
                    Some(path) => modal_transfer::population::load_config(path)?,
                    None => PopulationConfig::default(),
                };
                if let Some(seed) = self.seed {
                    config.seed = seed;
                }
                let needed = s.max(t) + 1;
                if config.n_structures < needed {
                    return Err(Error::InvalidConfig(format!(
                        "structure {} is outside the population of {}",
                        s.max(t),
                        config.n_structures
                    )));
                }
                config.n_structures = needed;
                let population = generate_population(&config)?;
                let pick = |i: usize| -> &Structure { &population[i] };
                if s == t {
                    return Err(Error::InvalidConfig(
                        "source and target structures must differ".into(),
                    ));
                }
                let task = TransferTask::new(
                    format!("s{s:02}-t{t:02}"),
                    pick(s).dataset.clone(),
                    pick(s).modal.clone(),
                    pick(t).dataset.clone(),
                    pick(t).modal.clone(),
                )?;
                Ok((task, None))
            }
        }
    }
}

#[derive(Args)]
struct RunTask {
    #[command(flatten)]
    task: TaskSource,
    /// Comma-separated method subset, e.g. "NCA,TFC+BDA".
    #[arg(long, value_delimiter = ',')]
    methods: Vec<Method>,
    /// Score by leave-one-out over all rows instead of the train/test split.
    #[arg(long)]
    loo: bool,
    /// Subset size of the TFC family.
    #[arg(long, default_value_t = 6)]
    subset_size: usize,
    /// Modal-similarity weight of the subset objective.
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    /// Latent dimension of plain TCA/BDA.
    #[arg(long, default_value_t = 5)]
    latent_dim: usize,
    /// Regularizer of the TCA/BDA latent step.
    #[arg(long, default_value_t = 0.1)]
    latent_mu: f64,
    /// Write the task result JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to the core count).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SelectFeatures {
    #[command(flatten)]
    task: TaskSource,
    /// Number of feature groups to keep.
    #[arg(long, default_value_t = 6)]
    subset_size: usize,
    /// Modal-similarity weight of the subset objective.
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    /// Source-loss cross-validation folds.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Write the selection JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IngestFrf {
    /// FRF file to validate (.json or .csv).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Generate the synthetic two-domain demo pair instead of reading a file.
    #[arg(long, conflicts_with = "input")]
    demo: bool,
    /// Demo seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Converted copy (.json or .csv by extension); for --demo, a directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DemoSensitivity {
    /// Chain size.
    #[arg(long, default_value_t = 100)]
    dof: usize,
    /// Stiffness reduction applied at each candidate site.
    #[arg(long, default_value_t = 0.05)]
    reduction: f64,
    /// Modes to export (from the lowest).
    #[arg(long, default_value_t = 2)]
    modes: usize,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn set_jobs(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Error::InvalidConfig("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, text)?;
            Ok(())
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn generate_population_cmd(args: &GeneratePopulation) -> Result<ExitCode> {
    set_jobs(args.jobs)?;
    let mut config = match &args.config {
        Some(path) => modal_transfer::population::load_config(path)?,
        None => PopulationConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    let population = generate_population(&config)?;
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(
        args.out.join("population.json"),
        format!("{}\n", serde_json::to_string_pretty(&config)?),
    )?;
    for structure in &population {
        let base = format!("structure_{:02}", structure.index);
        std::fs::write(
            args.out.join(format!("{base}.csv")),
            dataset_csv(&structure.dataset),
        )?;
        std::fs::write(
            args.out.join(format!("modal_{:02}.json", structure.index)),
            format!("{}\n", structure.modal.to_json()?),
        )?;
    }
    log::info!(
        "wrote {} structures to {}",
        population.len(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn dataset_csv(ds: &LabeledDataset) -> String {
    let mut text = String::from("label,split");
    for j in 0..ds.n_features() {
        text.push_str(&format!(",feature_{j}"));
    }
    text.push('\n');
    for i in 0..ds.n_samples() {
        text.push_str(&format!("{},{}", ds.labels[i], ds.split[i]));
        for v in ds.features.row(i) {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    text
}

fn run_study_cmd(args: &RunStudy) -> Result<ExitCode> {
    set_jobs(args.jobs)?;
    let mut config = match &args.config {
        Some(path) => StudyConfig::load(path)?,
        None => StudyConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.population.seed = seed;
    }
    if !args.methods.is_empty() {
        config.methods = args.methods.clone();
    }
    config.validate()?;
    let start = std::time::Instant::now();
    let report = run_numerical_study_lenient(&config)?;
    report.write_outputs(&args.out)?;
    log::info!(
        "study finished in {:.1} s; outputs in {}",
        start.elapsed().as_secs_f64(),
        args.out.display()
    );
    match report.check_failures() {
        Ok(()) => Ok(ExitCode::SUCCESS),
        Err(e) => {
            eprintln!("study degraded: {e}");
            Ok(ExitCode::from(2))
        }
    }
}

fn resolve_methods(methods: &[Method], args: &RunTask) -> Vec<MethodSpec> {
    let hyper = SelectedHyper {
        tfc: Theta {
            d: args.subset_size,
            lambda: args.lambda,
        },
        tca: Theta {
            d: args.latent_dim,
            lambda: args.latent_mu,
        },
        bda: Theta {
            d: args.latent_dim,
            lambda: args.latent_mu,
        },
    };
    methods
        .iter()
        .map(|&m| MethodSpec::resolve(m, &hyper))
        .collect()
}

fn run_task_cmd(args: &RunTask) -> Result<ExitCode> {
    set_jobs(args.jobs)?;
    let (task, groups) = args.task.build()?;
    let methods = if args.methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        args.methods.clone()
    };
    let specs = resolve_methods(&methods, args);
    let opts = EvalOptions {
        groups,
        loo: args.loo,
        ..EvalOptions::default()
    };
    let result: TaskResult = evaluate_task(&task, &specs, &opts);
    write_or_print(
        args.out.as_deref(),
        &serde_json::to_string_pretty(&result)?,
    )?;
    if result.failed() {
        eprintln!("a method failed on task {}", result.task_id);
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn select_features_cmd(args: &SelectFeatures) -> Result<ExitCode> {
    let (task, groups) = args.task.build()?;
    let config = TfcConfig {
        subset_size: args.subset_size,
        lambda: args.lambda,
        folds: args.folds,
        groups,
        ..TfcConfig::new(args.subset_size, args.lambda)
    };
    let selection = select_features(&task, &config)?;
    write_or_print(
        args.out.as_deref(),
        &serde_json::to_string_pretty(&selection)?,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn ingest_frf_cmd(args: &IngestFrf) -> Result<ExitCode> {
    if args.demo {
        let config = BladePairConfig {
            seed: args.seed,
            ..BladePairConfig::default()
        };
        let (source, target) = synthetic_blade_pair(&config)?;
        let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("frf-demo"));
        std::fs::create_dir_all(&dir)?;
        for ds in [&source, &target] {
            std::fs::write(
                dir.join(format!("{}.json", ds.domain_id)),
                format!("{}\n", ds.to_json()?),
            )?;
        }
        println!(
            "wrote {} and {} ({} + {} samples) to {}",
            source.domain_id,
            target.domain_id,
            source.n_samples(),
            target.n_samples(),
            dir.display()
        );
        return Ok(ExitCode::SUCCESS);
    }
    let input = args.input.as_ref().ok_or_else(|| {
        Error::InvalidConfig("pass --input FILE or --demo".into())
    })?;
    let ds = FrfDataset::load(input)?;
    println!(
        "{}: {} samples, {} classes, {} grid bins, {} modes, shapes {}",
        ds.domain_id,
        ds.n_samples(),
        {
            let mut labels = ds.labels.clone();
            labels.sort_unstable();
            labels.dedup();
            labels.len()
        },
        ds.frequencies_hz.len(),
        ds.natural_frequencies_hz.len(),
        if ds.mode_shapes.is_some() { "present" } else { "absent" },
    );
    if let Some(out) = &args.out {
        match out.extension().and_then(|e| e.to_str()) {
            Some("json") => std::fs::write(out, format!("{}\n", ds.to_json()?))?,
            Some("csv") => {
                let mut buffer = Vec::new();
                ds.to_csv(&mut buffer)?;
                std::fs::write(out, buffer)?;
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "output must end in .json or .csv, found {:?}",
                    other.unwrap_or("<none>")
                )))
            }
        }
        println!("converted copy written to {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn demo_sensitivity_cmd(args: &DemoSensitivity) -> Result<ExitCode> {
    let curves = sensitivity_demo(args.dof, args.reduction)?;
    let keep = args.modes.min(curves.len());
    let mut text = String::from("mode,site,displacement,frequency_shift\n");
    for curve in &curves[..keep] {
        for (site, (d, f)) in curve
            .displacement
            .iter()
            .zip(&curve.frequency_shift)
            .enumerate()
        {
            text.push_str(&format!("{},{},{d},{f}\n", curve.mode, site + 1));
        }
    }
    match &args.out {
        Some(path) => {
            std::fs::write(path, &text)?;
            println!("wrote {keep} mode curves to {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    std::env::set_var("OPENBLAS_NUM_THREADS", "1");
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GeneratePopulation(args) => generate_population_cmd(args),
        Command::RunStudy(args) => run_study_cmd(args),
        Command::RunTask(args) => run_task_cmd(args),
        Command::SelectFeatures(args) => select_features_cmd(args),
        Command::IngestFrf(args) => ingest_frf_cmd(args),
        Command::DemoSensitivity(args) => demo_sensitivity_cmd(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
