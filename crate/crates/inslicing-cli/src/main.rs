//! Command-line front end: train surrogates, run single optimizations,
//! execute full comparison experiments, and inspect learned models.
//!
//! One JSON config file drives every subcommand (each reads its own
//! sections); command-line flags override file values. Exit codes: 0 on
//! success (an infeasible optimization outcome is still a successful run),
//! 2 for usage/config errors, 3 for runtime failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use inslicing::ga::generation_csv;
use inslicing::harness::{
    prepare_surrogates, run_experiment, run_gbo, run_with_surrogates, Budget, ExperimentConfig,
    HybridParams, Method, RunTrace, ScenarioSource,
};
use inslicing::kan::symbolic::extract_symbolic;
use inslicing::kan::train::train;
use inslicing::kan::{KanConfig, KanModel, SliceSurrogates, TrainOptions, TrainingSet};
use inslicing::simulator::{generate_scenario_with, Scenario, ScenarioOptions};
use inslicing::trustregion::trace_csv;

#[derive(Parser)]
#[command(name = "inslicing", version, about = "Slice configuration optimization toolkit")]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override for the invoked subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Emit per-iteration refinement and per-generation traces.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario and write scenario.json.
    GenScenario {
        #[arg(long)]
        slices: Option<usize>,
        #[arg(long)]
        resources: Option<usize>,
    },
    /// Train one surrogate model per slice and save them.
    TrainKan {
        /// Training steps override.
        #[arg(long)]
        steps: Option<usize>,
        /// Samples per slice override.
        #[arg(long)]
        samples: Option<usize>,
        /// Directory of pre-collected training CSVs (slice_<i>.csv).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run one optimization and write the solution and its traces.
    Optimize {
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        budget_evals: Option<u64>,
        #[arg(long)]
        budget_secs: Option<f64>,
        /// Train surrogates now instead of loading them from the models dir.
        #[arg(long)]
        train_first: bool,
        /// Directory holding slice_<i>.json surrogate models.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Surrogate training steps when --train-first is given.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run the full comparison experiment from the config file.
    Experiment {
        #[arg(long)]
        budget_evals: Option<u64>,
        #[arg(long)]
        budget_secs: Option<f64>,
    },
    /// Print the closed-form expression extracted from a model file.
    Explain {
        model: PathBuf,
    },
}

/// The shared config file: one document, per-subcommand sections.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default)]
struct FileConfig {
    /// Scenario shared by every subcommand; overrides the experiment's.
    scenario: Option<ScenarioSource>,
    scenario_options: Option<ScenarioOptions>,
    experiment: ExperimentConfig,
    train: TrainSection,
    optimize: OptimizeSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
struct TrainSection {
    out_dir: String,
    seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            out_dir: "models".into(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
struct OptimizeSection {
    method: String,
    seed: u64,
    out_dir: String,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        Self {
            method: "inslicing".into(),
            seed: 1,
            out_dir: ".".into(),
        }
    }
}

/// Errors that are the caller's fault (usage, config, missing files).
struct UsageError(String);

enum CmdError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<UsageError> for CmdError {
    fn from(e: UsageError) -> Self {
        CmdError::Usage(e.0)
    }
}

impl From<inslicing::Error> for CmdError {
    fn from(e: inslicing::Error) -> Self {
        CmdError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CmdError {
    fn from(e: std::io::Error) -> Self {
        CmdError::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CmdError::Usage(msg)) => {
            eprintln!("error: {}", msg);
            ExitCode::from(2)
        }
        Err(CmdError::Runtime(err)) => {
            eprintln!("error: {:#}", err);
            ExitCode::from(3)
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<FileConfig, CmdError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| UsageError(format!("cannot read config {}: {}", p.display(), e)))?;
            serde_json::from_str(&text)
                .map_err(|e| UsageError(format!("malformed config {}: {}", p.display(), e)).into())
        }
    }
}

fn resolve_scenario(config: &FileConfig, seed_override: Option<u64>) -> Result<Scenario, CmdError> {
    let source = config
        .scenario
        .clone()
        .unwrap_or_else(|| config.experiment.scenario.clone());
    let options = config
        .scenario_options
        .clone()
        .or_else(|| config.experiment.scenario_options.clone())
        .unwrap_or_default();
    match source {
        ScenarioSource::Path(path) => Scenario::load(Path::new(&path)).map_err(|e| {
            UsageError(format!("cannot load scenario {}: {}", path, e)).into()
        }),
        ScenarioSource::Generate {
            slices,
            resources,
            seed,
        } => {
            let seed = seed_override.unwrap_or(seed);
            Ok(generate_scenario_with(slices, resources, seed, &options)?)
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CmdError> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CmdError> {
    let mut config = load_config(&cli.config)?;

    match cli.command {
        Command::GenScenario { slices, resources } => {
            if let (Some(s), Some(r)) = (slices, resources) {
                config.scenario = Some(ScenarioSource::Generate {
                    slices: s,
                    resources: r,
                    seed: cli.seed.unwrap_or(7),
                });
            }
            let scenario = resolve_scenario(&config, cli.seed)?;
            let out = cli.out.unwrap_or_else(|| PathBuf::from("."));
            ensure_dir(&out)?;
            let path = out.join("scenario.json");
            scenario.save(&path)?;
            println!(
                "wrote {} ({} slices x {} resources, seed {})",
                path.display(),
                scenario.spec.num_slices,
                scenario.spec.num_resources(),
                scenario.seed
            );
            Ok(())
        }

        Command::TrainKan { steps, samples, data } => {
            let scenario = resolve_scenario(&config, None)?;
            let seed = cli.seed.unwrap_or(config.train.seed);
            let out = cli
                .out
                .unwrap_or_else(|| PathBuf::from(&config.train.out_dir));
            ensure_dir(&out)?;

            let mut settings = config.experiment.surrogate.clone();
            if let Some(s) = steps {
                settings.train.steps = s;
            }
            if let Some(n) = samples {
                settings.samples_per_slice = n;
            }

            let (surrogates, traces) = match data {
                Some(dir) => {
                    // Pre-collected CSV datasets, one per slice.
                    let mut models = Vec::new();
                    let mut traces = Vec::new();
                    for i in 0..scenario.spec.num_slices {
                        let path = dir.join(format!("slice_{}.csv", i));
                        if !path.exists() {
                            return Err(UsageError(format!(
                                "missing training data {}",
                                path.display()
                            ))
                            .into());
                        }
                        let dataset = TrainingSet::load(&path)?;
                        let mut model = KanModel::new(
                            dataset.input_dim(),
                            &KanConfig {
                                seed: seed.wrapping_add(i as u64),
                                ..settings.kan.clone()
                            },
                        );
                        let opts = TrainOptions {
                            shuffle_seed: seed.wrapping_add(1000 + i as u64),
                            ..settings.train.clone()
                        };
                        traces.push(train(&mut model, &dataset, &opts)?);
                        models.push(model);
                    }
                    (SliceSurrogates { models }, traces)
                }
                None => prepare_surrogates(&scenario, &settings, seed)?,
            };

            let mut trace_csv_text = String::from("slice,step,train_rmse,test_rmse\n");
            for (i, (model, trace)) in surrogates.models.iter().zip(&traces).enumerate() {
                model.save(&out.join(format!("slice_{}.json", i)))?;
                for s in &trace.steps {
                    trace_csv_text.push_str(&format!(
                        "{},{},{:.6},{:.6}\n",
                        i, s.step, s.train_rmse, s.test_rmse
                    ));
                }
            }
            std::fs::write(out.join("training_trace.csv"), trace_csv_text)?;
            println!(
                "trained {} models ({} steps each) into {}",
                surrogates.models.len(),
                settings.train.steps,
                out.display()
            );
            Ok(())
        }

        Command::Optimize {
            method,
            budget_evals,
            budget_secs,
            train_first,
            models,
            steps,
        } => {
            let scenario = resolve_scenario(&config, None)?;
            let method: Method = method
                .unwrap_or_else(|| config.optimize.method.clone())
                .parse()
                .map_err(|e| UsageError(format!("{}", e)))?;
            let seed = cli.seed.unwrap_or(config.optimize.seed);
            let out = cli
                .out
                .unwrap_or_else(|| PathBuf::from(&config.optimize.out_dir));
            ensure_dir(&out)?;

            let mut experiment = config.experiment.clone();
            if let Some(b) = budget_evals {
                experiment.budget_evals = b;
            }
            if let Some(s) = budget_secs {
                experiment.budget_secs = Some(s);
            }
            if let Some(s) = steps {
                experiment.surrogate.train.steps = s;
            }
            let params: HybridParams = hybrid_params_for(&experiment, seed);

            let trace: RunTrace = match method {
                Method::Gbo => run_gbo(&scenario, &params, &experiment.gbo)?,
                m => {
                    let models_dir = models.unwrap_or_else(|| PathBuf::from(&config.train.out_dir));
                    let surrogates = if train_first {
                        prepare_surrogates(&scenario, &params.surrogate, seed)?.0
                    } else {
                        load_models(&models_dir, scenario.spec.num_slices)?
                    };
                    run_with_surrogates(&scenario, m, &params, &surrogates)?
                }
            };

            // Solution document plus the per-evaluation trace.
            let solution = serde_json::json!({
                "method": trace.method,
                "seed": trace.seed,
                "evaluations": trace.evaluations,
                "solution": trace.solution,
            });
            std::fs::write(
                out.join("solution.json"),
                serde_json::to_string_pretty(&solution).map_err(inslicing::Error::from)?,
            )?;
            let mut rows = String::from("eval,phase,best_cost,feasible\n");
            for r in &trace.rows {
                rows.push_str(&format!(
                    "{},{},{:.6},{}\n",
                    r.eval, r.phase, r.best_cost, r.feasible
                ));
            }
            std::fs::write(out.join("trace.csv"), rows)?;
            if !trace.ga_generations.is_empty() {
                std::fs::write(
                    out.join("generations.csv"),
                    generation_csv(&trace.ga_generations),
                )?;
            }
            if cli.verbose && !trace.trm_iterations.is_empty() {
                std::fs::write(out.join("trm_trace.csv"), trace_csv(&trace.trm_iterations))?;
            }
            println!(
                "{}: cost {:.6}, surrogate-feasible {}, ground-truth feasible {}",
                method,
                trace.solution.cost,
                trace.solution.optimizer_feasible,
                trace.solution.feasible
            );
            Ok(())
        }

        Command::Experiment {
            budget_evals,
            budget_secs,
        } => {
            let mut experiment = config.experiment.clone();
            if let Some(s) = config.scenario.clone() {
                experiment.scenario = s;
            }
            if let Some(o) = config.scenario_options.clone() {
                experiment.scenario_options = Some(o);
            }
            if let Some(b) = budget_evals {
                experiment.budget_evals = b;
            }
            if let Some(s) = budget_secs {
                experiment.budget_secs = Some(s);
            }
            if let Some(seed) = cli.seed {
                experiment.seeds = vec![seed];
            }
            let out = cli.out.unwrap_or_else(|| PathBuf::from("results"));
            let outcome = run_experiment(&experiment)?;
            outcome.write_to(&out)?;
            println!(
                "experiment complete: {} runs, {} failures, results in {}",
                outcome.traces.len(),
                outcome.failures.len(),
                out.display()
            );
            for (scenario, method, seed, msg) in &outcome.failures {
                eprintln!("failed cell {}/{}/{}: {}", scenario, method, seed, msg);
            }
            Ok(())
        }

        Command::Explain { model } => {
            let text = std::fs::read_to_string(&model)
                .map_err(|e| UsageError(format!("cannot read model {}: {}", model.display(), e)))?;
            let model = KanModel::from_json(&text)
                .map_err(|e| CmdError::Runtime(anyhow::anyhow!("corrupt model file: {}", e)))?;
            let expr = extract_symbolic(&model)?;
            println!("P(x) = {}", expr.render());
            println!(
                "fidelity: symbolic-vs-network RMSE {:.6}{}",
                expr.fit_rmse,
                if expr.low_fidelity { " (low fidelity)" } else { "" }
            );
            Ok(())
        }
    }
}

fn hybrid_params_for(experiment: &ExperimentConfig, seed: u64) -> HybridParams {
    let mut ga = experiment.ga.clone();
    if experiment.auto_decay_horizon {
        ga.total_generations =
            ((experiment.budget_evals / ga.population_size as u64).max(1)) as usize;
    }
    HybridParams {
        ga,
        trm: experiment.trm.clone(),
        trm_interval: experiment.trm_interval,
        budget: match experiment.budget_secs {
            Some(secs) => Budget::Secs(secs),
            None => Budget::Evals(experiment.budget_evals),
        },
        penalty: experiment.penalty,
        surrogate: experiment.surrogate.clone(),
        seed,
    }
}

fn load_models(dir: &Path, num_slices: usize) -> Result<SliceSurrogates, CmdError> {
    let mut models = Vec::with_capacity(num_slices);
    for i in 0..num_slices {
        let path = dir.join(format!("slice_{}.json", i));
        if !path.exists() {
            return Err(UsageError(format!(
                "missing model {} (run `train-kan` or pass --train-first)",
                path.display()
            ))
            .into());
        }
        models.push(KanModel::load(&path)?);
    }
    Ok(SliceSurrogates { models })
}
