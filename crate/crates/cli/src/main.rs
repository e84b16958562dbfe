use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use geomoe_cli::commands::{
    cmd_check_grad, cmd_eval_depth, cmd_eval_normal, cmd_eval_pointmap, cmd_eval_pose,
    cmd_gen_scene, cmd_report, parse_depth_alignment, PointmapAlign, PoseMode,
};
use geomoe_cli::config::RunConfig;
use geomoe_cli::train::train_toy;
use geomoe_cli::CliError;

#[derive(Parser)]
#[command(
    name = "geomoe",
    version,
    about = "Synthetic-scene generation, geometry metrics, gradient checks, and a toy MoE trainer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlignArg {
    #[value(name = "sim3-icp")]
    Sim3Icp,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoseModeArg {
    Angular,
    Distance,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene config to depth/pointmap/normal tensors (plus PLY),
    /// optionally with a perturbed copy.
    GenScene {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Noise config; when given, writes perturbed outputs under pred/.
        #[arg(long)]
        perturb: Option<PathBuf>,
    },
    /// Accuracy / completion / normal-consistency metrics between pointmaps.
    EvalPointmap {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "sim3-icp")]
        align: AlignArg,
        #[arg(long, default_value_t = 1)]
        pixel_stride: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Absolute relative error and threshold accuracy between depth maps.
    EvalDepth {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// "median-scale" or "none".
        #[arg(long, default_value = "median-scale")]
        alignment: String,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Angular (RRA/RTA/AUC) and distance (ATE/RPE) pose metrics.
    EvalPose {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        mode: PoseModeArg,
        #[arg(long, default_value_t = 30)]
        max_threshold: u32,
        #[arg(long, default_value_t = 1)]
        rpe_stride: usize,
        /// Keyframe subsampling stride applied to both trajectories.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Mean/median angular error and delta_11.25 between normal maps.
    EvalNormal {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Finite-difference verification of every analytic gradient.
    CheckGrad {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
    /// Two-stage toy training of the MoE layer on the domain token task.
    TrainToy {
        /// Run config (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for logs, the final report, and the model.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretty-print stored metric reports.
    Report {
        files: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenScene {
            scene,
            out,
            perturb,
        } => cmd_gen_scene(&scene, &out, perturb.as_deref()),
        Command::EvalPointmap {
            pred,
            gt,
            align,
            pixel_stride,
            report,
        } => {
            let align = match align {
                AlignArg::Sim3Icp => PointmapAlign::Sim3Icp,
                AlignArg::None => PointmapAlign::None,
            };
            cmd_eval_pointmap(&pred, &gt, align, pixel_stride, report.as_deref()).map(|_| ())
        }
        Command::EvalDepth {
            pred,
            gt,
            alignment,
            report,
        } => {
            let alignment = parse_depth_alignment(&alignment)?;
            cmd_eval_depth(&pred, &gt, alignment, report.as_deref()).map(|_| ())
        }
        Command::EvalPose {
            pred,
            gt,
            mode,
            max_threshold,
            rpe_stride,
            stride,
            report,
        } => {
            let mode = match mode {
                PoseModeArg::Angular => PoseMode::Angular,
                PoseModeArg::Distance => PoseMode::Distance,
                PoseModeArg::Both => PoseMode::Both,
            };
            cmd_eval_pose(
                &pred,
                &gt,
                mode,
                max_threshold,
                rpe_stride,
                stride,
                report.as_deref(),
            )
            .map(|_| ())
        }
        Command::EvalNormal { pred, gt, report } => {
            cmd_eval_normal(&pred, &gt, report.as_deref()).map(|_| ())
        }
        Command::CheckGrad { seed, instances } => {
            let checks = cmd_check_grad(seed, instances);
            let failed = checks.iter().filter(|c| !c.pass).count();
            if failed > 0 {
                return Err(CliError::Metric(format!(
                    "{failed} gradient comparison(s) exceeded the tolerance"
                )));
            }
            Ok(())
        }
        Command::TrainToy { config, out } => {
            let cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            let outcome = train_toy(&cfg, out.as_deref())?;
            println!(
                "train-toy seed={} lambda_moe={} loss {:.6} -> {:.6} (task mse {:.6}, lb {:.4})",
                outcome.seed,
                outcome.lambda_moe,
                outcome.initial_total,
                outcome.final_total,
                outcome.final_task_mse,
                outcome.final_lb_loss
            );
            println!(
                "  purity per domain: {:?} (mean {:.3}, min {:.3})",
                outcome
                    .purity
                    .iter()
                    .map(|p| (p * 1000.0).round() / 1000.0)
                    .collect::<Vec<_>>(),
                outcome.mean_purity,
                outcome.min_purity
            );
            println!(
                "  max expert share {:.3}, dispatch f {:?}, clip events {}",
                outcome.max_expert_share,
                outcome
                    .dispatch_f
                    .iter()
                    .map(|p| (p * 1000.0).round() / 1000.0)
                    .collect::<Vec<_>>(),
                outcome.clip_events
            );
            Ok(())
        }
        Command::Report { files } => {
            if files.is_empty() {
                return Err(CliError::Config("no report files given".to_string()));
            }
            let tables = cmd_report(&files)?;
            print!("{tables}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
