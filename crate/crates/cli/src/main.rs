use std::path::PathBuf;
use std::process::ExitCode;

use cgf_core::pipeline::{run_pipeline, PipelineConfig, PipelineError, Stage, StageRun, StageToggles};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cgf", version, about = "Grasp trajectory generation, planning baselines and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic demonstrations for the configured objects.
    GenDemos(Common),
    /// Map human keypoints to joint trajectories.
    Retarget(Common),
    /// Train the generative model on retargeted demonstrations.
    Train(Common),
    /// Sample trajectories from the trained model.
    Sample(Common),
    /// Plan with the sampling-based planner and the linear baseline.
    PlanRrt(Common),
    /// Plan with sampling-based model-predictive control.
    PlanCem(Common),
    /// Filter every trajectory set through the lift proxy.
    Evaluate(Common),
    /// Write the smoothness and cost tables.
    Report(Common),
    /// Run every enabled stage in order.
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration file (JSON). Flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for all stage artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Demonstration directory.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Hand model file; the bundled toy hand when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Start from the full-scale defaults instead of the desk-scale ones.
    #[arg(long)]
    full_scale: bool,
    /// Also write per-frame plotting data with the report.
    #[arg(long)]
    plot_data: bool,
    #[arg(long)]
    epochs: Option<usize>,
    /// Latent codes sampled per object.
    #[arg(long)]
    codes_per_object: Option<usize>,
    #[arg(long)]
    sample_frames: Option<usize>,
    #[arg(long)]
    rrt_plans: Option<usize>,
    #[arg(long)]
    rrt_max_nodes: Option<usize>,
    #[arg(long)]
    rrt_step_size: Option<f64>,
    /// Collision sphere radius of non-fingertip keypoints, meters.
    #[arg(long)]
    link_radius: Option<f64>,
    #[arg(long)]
    cem_plans: Option<usize>,
    #[arg(long)]
    cem_popsize: Option<usize>,
    #[arg(long)]
    cem_steps: Option<usize>,
    #[arg(long)]
    contact_threshold: Option<f64>,
    #[arg(long)]
    metric_frames: Option<usize>,
    /// Write the effective configuration to this file and exit.
    #[arg(long)]
    dump_config: Option<PathBuf>,
}

impl Common {
    fn config(&self, stages: StageToggles, from_file: bool) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None if self.full_scale => PipelineConfig::full_scale(),
            None => PipelineConfig::default(),
        };
        if !(from_file && self.config.is_some()) {
            cfg.stages = stages;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = &self.data_dir {
            cfg.data_dir = v.clone();
        }
        if let Some(v) = &self.model {
            cfg.model = Some(v.clone());
        }
        if self.plot_data {
            cfg.plot_data = true;
        }
        macro_rules! set {
            ($field:expr, $flag:expr) => {
                if let Some(v) = $flag {
                    $field = v;
                }
            };
        }
        set!(cfg.train.epochs, self.epochs);
        set!(cfg.sample.codes_per_object, self.codes_per_object);
        set!(cfg.sample.frames, self.sample_frames);
        set!(cfg.rrt.plans, self.rrt_plans);
        set!(cfg.rrt.config.max_nodes, self.rrt_max_nodes);
        set!(cfg.rrt.config.step_size, self.rrt_step_size);
        set!(cfg.rrt.link_radius, self.link_radius);
        set!(cfg.cem.plans, self.cem_plans);
        set!(cfg.cem.config.popsize, self.cem_popsize);
        set!(cfg.cem.config.steps, self.cem_steps);
        set!(cfg.proxy.contact_threshold, self.contact_threshold);
        set!(cfg.metric_frames, self.metric_frames);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    let (common, stages, from_file) = match &cli.command {
        Command::Run(c) => (c, StageToggles::default(), true),
        Command::GenDemos(c) => (c, StageToggles::only(Stage::GenDemos), false),
        Command::Retarget(c) => (c, StageToggles::only(Stage::Retarget), false),
        Command::Train(c) => (c, StageToggles::only(Stage::Train), false),
        Command::Sample(c) => (c, StageToggles::only(Stage::Sample), false),
        Command::PlanRrt(c) => (c, StageToggles::only(Stage::PlanRrt), false),
        Command::PlanCem(c) => (c, StageToggles::only(Stage::PlanCem), false),
        Command::Evaluate(c) => (c, StageToggles::only(Stage::Evaluate), false),
        Command::Report(c) => (c, StageToggles::only(Stage::Report), false),
    };
    let cfg = common.config(stages, from_file)?;
    if let Some(path) = &common.dump_config {
        cfg.save(path)?;
        return Ok(());
    }
    let report = run_pipeline(&cfg)?;
    for s in &report.stages {
        let status = match s.status {
            StageRun::Ran => "ran",
            StageRun::Skipped => "skipped (up to date)",
            StageRun::Disabled => continue,
        };
        println!("{:<10} {status}", s.stage.name());
    }
    for f in &report.report_files {
        println!("wrote {}", cfg.out_dir.join(f).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
