use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use focal_petr::cost_model::{format_sweep_table, ratio_sweep, write_sweep_csv, HeadConfig};
use focal_petr::encoding::EncodingMode;
use focal_petr::harness::dump::{dump_attention, dump_maps, write_target_table};
use focal_petr::harness::pipeline::write_report;
use focal_petr::harness::{generate_scene, render_targets, run_pipeline, RunOptions, SceneConfig, ScoreSource, SyntheticScene};
use focal_petr::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "focal-petr", version, about = "Multi-camera focal token sampling pipeline on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene file.
    Gen {
        #[arg(long)]
        seed: Option<u64>,
        /// Scene configuration JSON; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write per-token targets of a scene as CSV.
    Targets {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline and write a JSON report.
    Run(RunArgs),
    /// Tabulate head FLOPs and memory over sampling ratios.
    Sweep {
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.25, 0.5, 0.75, 1.0])]
        ratios: Vec<f64>,
        /// Head configuration JSON; the full-resolution setting when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV output path; the table always goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write score maps as PGM images and a token CSV table.
    DumpMaps {
        #[command(flatten)]
        run: SceneArgs,
        #[arg(long, default_value = "focal")]
        mode: EncodingMode,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value = "oracle")]
        scores: ScoreSource,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct SceneArgs {
    /// Scene file; generated from --config/--seed when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long, default_value = "focal")]
    mode: EncodingMode,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value = "oracle")]
    scores: ScoreSource,
    /// Directory for per-layer attention PGM and CSV files.
    #[arg(long)]
    dump_attn: Option<PathBuf>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<SceneConfig> {
    let mut cfg = match path {
        Some(p) => SceneConfig::from_json_file(p)?,
        None => SceneConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn load_scene(args: &SceneArgs) -> Result<SyntheticScene> {
    match &args.scene {
        Some(path) => {
            if args.config.is_some() || args.seed.is_some() {
                log::warn!("--scene given; ignoring --config and --seed");
            }
            SyntheticScene::read(path)
        }
        None => generate_scene(&load_config(args.config.as_deref(), args.seed)?),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io { path: p.to_path_buf(), source: e }),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::Io { path: "<stdout>".into(), source: e }),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { seed, config, out } => {
            let scene = generate_scene(&load_config(config.as_deref(), seed)?)?;
            emit(out.as_deref(), &scene.to_json()?)
        }
        Command::Targets { scene, out } => {
            let truth = render_targets(&SyntheticScene::read(&scene)?)?;
            let mut buf = Vec::new();
            write_target_table(&truth, &mut buf)?;
            emit(out.as_deref(), &String::from_utf8_lossy(&buf))
        }
        Command::Run(args) => {
            let scene = load_scene(&args.scene)?;
            let opts = RunOptions { mode: args.mode, rho: args.rho, alpha: args.alpha, scores: args.scores };
            let output = run_pipeline(&scene, &opts)?;
            if let Some(dir) = &args.dump_attn {
                let files = dump_attention(dir, &output.trace)?;
                log::info!("wrote {} attention files to {}", files.len(), dir.display());
            }
            let r = &output.report;
            log::info!(
                "sampled {}/{} tokens, center recall {:.3}",
                r.sampled_tokens,
                r.total_tokens,
                r.foreground_recall
            );
            match &args.out {
                Some(p) => write_report(r, p),
                None => emit(None, &r.to_json()?),
            }
        }
        Command::Sweep { ratios, config, out } => {
            let head = match config {
                Some(p) => HeadConfig::from_json_file(&p)?,
                None => HeadConfig::reference_scale(),
            };
            let rows = ratio_sweep(&head, &ratios)?;
            print!("{}", format_sweep_table(&rows));
            if let Some(p) = out {
                let file = fs::File::create(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                write_sweep_csv(&rows, file)?;
            }
            Ok(())
        }
        Command::DumpMaps { run, mode, rho, alpha, scores, out } => {
            let scene = load_scene(&run)?;
            let output = run_pipeline(&scene, &RunOptions { mode, rho, alpha, scores })?;
            let files = dump_maps(&out, &output.truth, &output.maps)?;
            log::info!("wrote {} files to {}", files.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
