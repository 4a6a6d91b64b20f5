//! Command surface of the `armdance` binary.

use std::path::{Path, PathBuf};

use armdance_core::diffusion::{
    ddim_sample, postprocess, read_weights, segment_dataset, train_with_progress, write_weights,
    ConditionSet, DiffusionError, LossWeights, ModelParams, TrainConfig, Variant,
};
use armdance_core::kinematics::RobotModel;
use armdance_core::metrics::{evaluate, robot_paths, EvalPair, MetricError};
use armdance_core::optimize::{optimize_trajectory, OptimizeConfig, OptimizeError};
use armdance_core::retarget::{retarget, scaled_reference_paths, transform, HumanMotion, RetargetConfig, RetargetError};
use armdance_core::trajectory::JointTrajectory;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use thiserror::Error;

use crate::io::{json_files, read_json, read_robot, write_json, IoError};
use crate::synth::{synth_human_motion, SynthConfig, SynthError};

#[derive(Debug, Parser)]
#[command(name = "armdance", version, about = "Dance motion retargeting and generation for a desktop arm")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Collision repair settings shared by every command that optimizes.
#[derive(Clone, Copy, Debug, Args)]
pub struct PsoArgs {
    #[arg(long, default_value_t = 50)]
    pub pso_particles: usize,
    #[arg(long, default_value_t = 30)]
    pub pso_iters: usize,
    /// Fitness below which a repaired frame is accepted.
    #[arg(long, default_value_t = 1.0)]
    pub threshold: f64,
    /// Draw the swarm's random coefficients once per run instead of every iteration.
    #[arg(long)]
    pub pso_fixed_coefficients: bool,
}

impl PsoArgs {
    pub fn config(&self) -> Result<OptimizeConfig<f64>, CliError> {
        let mut cfg = OptimizeConfig::default();
        cfg.pso.particles = self.pso_particles;
        cfg.pso.max_iters = self.pso_iters;
        cfg.pso.threshold = self.threshold;
        cfg.pso.fixed_coefficients = self.pso_fixed_coefficients;
        cfg.pso.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic human motion clips.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        clips: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Map a human clip onto the arm.
    Retarget {
        /// Robot description (TOML); the canonical arm when omitted.
        #[arg(long)]
        robot: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip collision repair, smoothing and time parameterization.
        #[arg(long)]
        no_optimize: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        pso: PsoArgs,
    },
    /// Repair collisions, smooth and time-parameterize a joint trajectory.
    Optimize {
        #[arg(long)]
        robot: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        pso: PsoArgs,
    },
    /// Train a diffusion model on a directory of joint trajectories.
    Train {
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Hidden width.
        #[arg(long, default_value_t = 64)]
        h: usize,
        #[arg(long)]
        robot: Option<PathBuf>,
    },
    /// Sample a motion between two endpoints and make it executable.
    Generate {
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
        start: [f64; 3],
        #[arg(long, value_parser = parse_triple, allow_hyphen_values = true)]
        end: [f64; 3],
        #[arg(long)]
        lvalid: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        robot: Option<PathBuf>,
        #[command(flatten)]
        pso: PsoArgs,
    },
    /// Compare robot trajectories with the human clips of the same file name.
    Eval {
        #[arg(long)]
        human: PathBuf,
        /// Directory of robot joint trajectories.
        #[arg(long)]
        robot: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        robot_config: Option<PathBuf>,
    },
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated numbers, got `{s}`"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse::<f64>().map_err(|_| format!("`{p}` is not a number"))?;
        if !o.is_finite() {
            return Err(format!("`{p}` is not finite"));
        }
    }
    Ok(out)
}

/// Failures after argument parsing; all map to exit code 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Retarget(#[from] RetargetError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    Input(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io",
            CliError::Synth(_) => "synth",
            CliError::Retarget(_) => "retarget",
            CliError::Optimize(_) => "optimize",
            CliError::Diffusion(_) => "diffusion",
            CliError::Metric(_) => "metrics",
            CliError::Input(_) => "input",
        }
    }

    pub fn to_json(&self) -> Value {
        json!({ "error": self.kind(), "message": self.to_string() })
    }
}

/// Runs one command and returns its summary.
pub fn run(command: Command) -> Result<Value, CliError> {
    match command {
        Command::Synth { out, clips, seed } => synth(&out, clips, seed),
        Command::Retarget { robot, input, out, no_optimize, seed, pso } => {
            retarget_cmd(robot.as_deref(), &input, &out, no_optimize, seed, &pso.config()?)
        }
        Command::Optimize { robot, input, out, seed, pso } => {
            let model = read_robot(robot.as_deref())?;
            let traj: JointTrajectory<f64> = read_json(&input)?;
            traj.validate().map_err(OptimizeError::from)?;
            let (optimized, report) = optimize_trajectory(&model, &traj, &pso.config()?, seed)?;
            write_json(&out, &optimized)?;
            Ok(json!({ "frames": optimized.len(), "duration": optimized.duration(), "report": report }))
        }
        Command::Train { variant, data, out, epochs, seed, h, robot } => {
            train_cmd(robot.as_deref(), variant, &data, &out, epochs, seed, h)
        }
        Command::Generate { variant, weights, start, end, lvalid, out, seed, robot, pso } => {
            let opt = pso.config()?;
            let model = read_robot(robot.as_deref())?;
            let w = read_weights(&weights)?;
            if w.variant != variant {
                return Err(CliError::Input(format!("weights hold a {} model, not {variant}", w.variant)));
            }
            let cond = ConditionSet { start, end, l_valid: lvalid };
            let sample = ddim_sample(&w, &cond, &model, seed)?;
            let (traj, report) = postprocess(&model, &sample, &cond, variant, &opt, seed)?;
            write_json(&out, &traj)?;
            Ok(json!({ "frames": traj.len(), "report": report }))
        }
        Command::Eval { human, robot, out, robot_config } => eval_cmd(robot_config.as_deref(), &human, &robot, &out),
    }
}

fn synth(out: &Path, clips: usize, seed: u64) -> Result<Value, CliError> {
    let cfg = SynthConfig { clips, seed, ..Default::default() };
    let motions = synth_human_motion::<f64>(&cfg)?;
    std::fs::create_dir_all(out).map_err(|source| IoError::Fs { path: out.to_path_buf(), source })?;
    for (k, m) in motions.iter().enumerate() {
        write_json(&out.join(format!("clip_{k:04}.json")), m)?;
    }
    Ok(json!({ "clips": motions.len(), "out": out }))
}

fn retarget_cmd(
    robot: Option<&Path>,
    input: &Path,
    out: &Path,
    no_optimize: bool,
    seed: u64,
    opt: &OptimizeConfig<f64>,
) -> Result<Value, CliError> {
    let model = read_robot(robot)?;
    let motion: HumanMotion<f64> = read_json(input)?;
    let cfg = RetargetConfig::default();
    if no_optimize {
        let r = retarget(&model, &motion, &cfg)?;
        write_json(out, &r.trajectory)?;
        let flagged = r.status.iter().filter(|s| s.is_flagged()).count();
        return Ok(json!({ "frames": r.trajectory.len(), "flagged": flagged, "scale": r.scale }));
    }
    let t = transform(&model, &motion, &cfg, opt, seed)?;
    write_json(out, &t.optimized)?;
    let flagged = t.retargeted.status.iter().filter(|s| s.is_flagged()).count();
    Ok(json!({
        "frames": t.optimized.len(),
        "flagged": flagged,
        "scale": t.retargeted.scale,
        "duration": t.optimized.duration(),
        "report": t.report,
    }))
}

/// Loads every joint trajectory in `dir` and cuts it into training samples.
pub fn load_dataset(
    model: &RobotModel<f64>,
    dir: &Path,
    variant: Variant,
) -> Result<Vec<armdance_core::diffusion::MotionSample<f64>>, CliError> {
    let mut samples = Vec::new();
    for path in json_files(dir)? {
        let traj: JointTrajectory<f64> = read_json(&path)?;
        traj.validate().map_err(OptimizeError::from)?;
        samples.extend(segment_dataset(model, &traj.resample_uniform(), variant));
    }
    Ok(samples)
}

fn train_cmd(
    robot: Option<&Path>,
    variant: Variant,
    data: &Path,
    out: &Path,
    epochs: usize,
    seed: u64,
    h: usize,
) -> Result<Value, CliError> {
    let model = read_robot(robot)?;
    let samples = load_dataset(&model, data, variant)?;
    let params = ModelParams { hidden: h, ..Default::default() };
    let cfg = TrainConfig { epochs, seed, ..Default::default() };
    let (weights, report) = train_with_progress(&samples, variant, &params, &LossWeights::default(), &cfg, |e, loss| {
        if e % 50 == 0 || e == epochs {
            eprintln!("epoch {e}/{epochs} loss {loss:.5}");
        }
    })?;
    write_weights(&weights, out)?;
    Ok(json!({
        "samples": samples.len(),
        "epochs": epochs,
        "first_loss": report.epoch_losses.first(),
        "final_loss": report.epoch_losses.last(),
        "seconds": report.seconds,
    }))
}

fn eval_cmd(robot_config: Option<&Path>, human: &Path, robot: &Path, out: &Path) -> Result<Value, CliError> {
    let model = read_robot(robot_config)?;
    let cfg = RetargetConfig::default();
    let mut pairs = Vec::new();
    for robot_file in json_files(robot)? {
        let name = robot_file.file_name().expect("listed files have names");
        let human_file = human.join(name);
        if !human_file.exists() {
            return Err(CliError::Input(format!("no human clip {} for {}", human_file.display(), robot_file.display())));
        }
        let traj: JointTrajectory<f64> = read_json(&robot_file)?;
        traj.validate().map_err(OptimizeError::from)?;
        let motion: HumanMotion<f64> = read_json(&human_file)?;
        let (human_c, human_b) = scaled_reference_paths(&model, &motion, &cfg)?;
        let (robot_c, robot_b) = robot_paths(&model, &traj);
        pairs.push(EvalPair { robot_c, robot_b, human_c, human_b });
    }
    let report = evaluate(&pairs)?;
    write_json(out, &report)?;
    Ok(json!({ "pairs": pairs.len(), "report": report }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triples_parse() {
        assert_eq!(parse_triple("0.1, -2,3e-1").unwrap(), [0.1, -2.0, 0.3]);
        assert!(parse_triple("1,2").is_err());
        assert!(parse_triple("1,x,3").is_err());
        assert!(parse_triple("1,inf,3").is_err());
    }

    #[test]
    fn error_json_names_the_kind() {
        let e = CliError::Input("bad".into());
        assert_eq!(e.to_json(), json!({ "error": "input", "message": "bad" }));
    }
}
