use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dmfusion::distill::{LabelSource, TrainingSetup};
use dmfusion::evalbench::{EvalReport, Method, Slice};
use dmfusion::fedlearn::{checkpoint, train::write_curve_csv, ModelParams};
use dmfusion::fusion::export::{global_map_kitti, read_jsonl, write_jsonl};
use dmfusion::fusion::{fuse_frame, FusionMethod, LocalMap, WeightMode};
use dmfusion::orchestrator::system::vehicle_frames;
use dmfusion::orchestrator::{federated_training, run_experiment, write_bench_outputs, FrameInputs, RunConfig, Seeds, TrainingLabels};
use dmfusion::simworld::generate_scenario;
use dmfusion::simworld::io::write_scenario;
use dmfusion::{Error, Exec};

#[derive(Debug, Parser)]
#[command(name = "dmf", version, about = "Cooperative dynamic-map fusion toolkit")]
struct Cli {
    /// TOML run configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; derives the scenario, sensing and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    weight_mode: Option<WeightModeArg>,
    /// Overlap pruning threshold on pairwise IoU.
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Run on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WeightModeArg {
    Confidence,
    Literal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum TrainMethod {
    PerfectFl,
    Edfl,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum FuseMethod {
    ThreeStage,
    Mean,
    MaxScore,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FuseFormat {
    Jsonl,
    Kitti,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the scenario as JSON lines.
    Simulate {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write every vehicle's local map for every frame.
        #[arg(long)]
        local_maps: Option<PathBuf>,
        /// Detector parameters for the local maps; pretrained when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Federated training over the training window; writes a checkpoint.
    Train {
        #[arg(long, value_enum)]
        method: TrainMethod,
        #[arg(long)]
        out: PathBuf,
        /// Per-round, per-vehicle loss curve as CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Fuse local maps (JSON lines, grouped by frame time) into global maps.
    Fuse {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "three_stage")]
        method: FuseMethod,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: FuseFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and test the chosen methods; writes report.json and report.csv.
    Evaluate {
        /// Methods to run, comma separated; all when absent.
        #[arg(long, value_delimiter = ',')]
        method: Vec<Method>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Radar CSV (per-slice AP of every method) from a report.json.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every method end to end; writes report.json, report.csv and radar.csv.
    Bench {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

fn load_config(cli: &Cli) -> dmfusion::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Invalid(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::from_toml_str(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = Seeds::from_base(seed);
    }
    if let Some(mode) = cli.weight_mode {
        cfg.fusion.weight_mode = match mode {
            WeightModeArg::Confidence => WeightMode::Confidence,
            WeightModeArg::Literal => WeightMode::Literal,
        };
    }
    if let Some(delta) = cli.delta {
        cfg.fusion.delta = delta;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output(path: Option<&Path>) -> dmfusion::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: Cli) -> dmfusion::Result<()> {
    let cfg = load_config(&cli)?;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match &cli.command {
        Command::Simulate {
            out,
            local_maps,
            checkpoint,
        } => {
            let scenario = generate_scenario(&cfg.scenario, cfg.seeds.scenario)?;
            write_scenario(output(out.as_deref())?, &scenario)?;
            if let Some(path) = local_maps {
                let params = match checkpoint {
                    Some(p) => checkpoint::read(BufReader::new(File::open(p)?))?,
                    None => ModelParams::pretrained(),
                };
                let held = vec![params; scenario.num_vehicles()];
                let mut w = output(Some(path))?;
                for frame in 0..scenario.num_frames() {
                    let inputs = FrameInputs {
                        scenario: &scenario,
                        frame,
                        visible: None,
                        sensing: &cfg.sensing,
                        params: &held,
                        sensing_seed: cfg.seeds.sensing,
                    };
                    let locals: Vec<LocalMap> = vehicle_frames(&inputs, exec)?.into_iter().map(|v| v.local).collect();
                    write_jsonl(&mut w, &locals)?;
                }
            }
        }
        Command::Train { method, out, curve } => {
            let scenario = generate_scenario(&cfg.scenario, cfg.seeds.scenario)?;
            let labels = match method {
                TrainMethod::PerfectFl => TrainingLabels::Perfect {
                    gate: cfg.distill.truth_gate,
                },
                TrainMethod::Edfl => TrainingLabels::Distilled(LabelSource::Distilled {
                    registry: cfg.teachers.clone(),
                    scope: cfg.distill.scope,
                    student_threshold: cfg.distill.student_threshold,
                }),
            };
            let init = ModelParams::pretrained();
            let train = cfg.train_config();
            let setup = TrainingSetup {
                scenario: &scenario,
                sensing: &cfg.sensing,
                fusion: &cfg.fusion,
                train: &train,
                init: &init,
                sensing_seed: cfg.seeds.sensing,
            };
            let run = federated_training(&setup, &labels, exec)?;
            checkpoint::write(BufWriter::new(File::create(out)?), &run.outcome.params)?;
            if let Some(path) = curve {
                write_curve_csv(BufWriter::new(File::create(path)?), &run.outcome.curve)?;
            }
            let t = run.ledger.total();
            eprintln!("{} rounds, {} messages, {} bytes", run.outcome.rounds, t.messages, t.bytes);
        }
        Command::Fuse {
            input,
            method,
            format,
            out,
        } => {
            let locals: Vec<LocalMap> = read_jsonl(BufReader::new(File::open(input)?))?;
            let method = match method {
                FuseMethod::ThreeStage => FusionMethod::ThreeStage,
                FuseMethod::Mean => FusionMethod::Mean,
                FuseMethod::MaxScore => FusionMethod::MaxScore,
            };
            let mut w = output(out.as_deref())?;
            for group in locals.chunk_by(|a, b| a.frame_time == b.frame_time) {
                let fused = fuse_frame(group, &cfg.fusion, method)?;
                match format {
                    FuseFormat::Jsonl => write_jsonl(&mut w, std::slice::from_ref(&fused.global))?,
                    FuseFormat::Kitti => {
                        writeln!(w, "# frame_time {}", fused.global.frame_time)?;
                        w.write_all(global_map_kitti(&fused.global).as_bytes())?;
                    }
                }
            }
            w.flush()?;
        }
        Command::Evaluate { method, out } => {
            let mut cfg = cfg;
            if !method.is_empty() {
                cfg.experiment.methods = method.clone();
                cfg.validate()?;
            }
            let run = run_experiment(&cfg, exec)?;
            std::fs::create_dir_all(out)?;
            run.report.write_json(BufWriter::new(File::create(out.join("report.json"))?))?;
            run.report.write_csv(BufWriter::new(File::create(out.join("report.csv"))?))?;
            print_summary(&run.report);
        }
        Command::Report { input, out } => {
            let report: EvalReport = serde_json::from_reader(BufReader::new(File::open(input)?))?;
            report.write_radar_csv(output(out.as_deref())?)?;
        }
        Command::Bench { out } => {
            let mut cfg = cfg;
            cfg.experiment.methods = Method::ALL.to_vec();
            let run = run_experiment(&cfg, exec)?;
            write_bench_outputs(&run.report, out)?;
            print_summary(&run.report);
        }
    }
    Ok(())
}

fn print_summary(report: &EvalReport) {
    println!("{:<20} {:>8} {:>8} {:>12} {:>14}", "method", "AP", "HD", "messages", "bytes");
    for m in &report.methods {
        let ap = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<20} {:>8} {:>8} {:>12} {:>14}",
            m.method.name(),
            ap(m.all_vehicles.ap),
            ap(m.slice_ap(Slice::HD)),
            m.traffic.messages,
            m.traffic.bytes
        );
    }
}
