use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use uncloc::eval::experiment::{
    debug_frame, run_calibration, run_sequence, run_single_frame, write_outputs, write_success_csv,
    RunError, SuccessSummary,
};
use uncloc::eval::scenario::{Ablation, ScenarioConfig};
use uncloc::perception::{write_pgm16, NUM_CLASSES};
use uncloc::raster::Raster;

#[derive(Parser)]
#[command(
    name = "uncloc",
    about = "Uncertainty-aware map-based localization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Relocalize perturbed poses frame by frame.
    SingleFrame(Common),
    /// Track a trajectory with the sliding-window pose graph.
    Sequence(Common),
    /// ECE and ENCE of the synthetic perception over the trajectory.
    Calibration(Common),
    /// Dump the rasters of one frame.
    RenderDebug {
        #[command(flatten)]
        common: Common,
        /// Trajectory index of the frame to dump.
        #[arg(long, default_value_t = 0)]
        frame: usize,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Component to disable; may be repeated.
    #[arg(long, value_parser = parse_ablation)]
    ablate: Vec<Ablation>,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    Ablation::parse(s)
        .ok_or_else(|| format!("expected uncertainty, cauchy, lights or borders, got {s:?}"))
}

impl Common {
    fn load(&self) -> Result<ScenarioConfig, RunError> {
        let mut cfg = ScenarioConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        for a in &self.ablate {
            if !cfg.ablate.contains(a) {
                cfg.ablate.push(*a);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, RunError> {
    std::fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::SingleFrame(c) => {
            let cfg = c.load()?;
            let (map, traj) = cfg.load_inputs()?;
            let records = run_single_frame(&cfg, &map, &traj)?;
            write_outputs(&cfg.output_dir, &records)?;
            let s = SuccessSummary::of(&records);
            write_success_csv(&s, create(&cfg.output_dir, "success.csv")?)?;
            println!(
                "{} frames, success rate {:.1}%",
                s.frames,
                100.0 * s.success_rate
            );
        }
        Command::Sequence(c) => {
            let cfg = c.load()?;
            let (map, traj) = cfg.load_inputs()?;
            let records = run_sequence(&cfg, &map, &traj)?;
            write_outputs(&cfg.output_dir, &records)?;
            println!("{} frames tracked", records.len());
        }
        Command::Calibration(c) => {
            let cfg = c.load()?;
            let (map, traj) = cfg.load_inputs()?;
            let (ece, ence) = run_calibration(&cfg, &map, &traj)?;
            let mut w = csv::Writer::from_writer(create(&cfg.output_dir, "calibration.csv")?);
            w.write_record(["metric", "value"]).map_err(csv_err)?;
            w.write_record(["ece", &format!("{ece:.16e}")])
                .map_err(csv_err)?;
            w.write_record(["ence", &format!("{ence:.16e}")])
                .map_err(csv_err)?;
            w.flush()?;
            println!("ECE {ece:.4}, ENCE {ence:.4}");
        }
        Command::RenderDebug { common, frame } => {
            let cfg = common.load()?;
            let (map, traj) = cfg.load_inputs()?;
            let (render, cost_map) = debug_frame(&cfg, &map, &traj, frame)?;
            let dir = &cfg.output_dir;
            let d = &render.dirichlet;
            write_pgm16(&d.uncertainty(), create(dir, "uncertainty.pgm")?)?;
            for k in 0..NUM_CLASSES {
                write_pgm16(
                    &d.class_probability(k),
                    create(dir, &format!("prob_class{k}.pgm"))?,
                )?;
            }
            let classes: Raster<f64> = d
                .argmax()
                .map(|c| c.map_or(1.0, |k| k as f64 / (NUM_CLASSES - 1) as f64));
            write_pgm16(&classes, create(dir, "argmax.pgm")?)?;
            match cost_map {
                Some(cm) => {
                    let mut w = create(dir, "costmap.f32")?;
                    cm.write_f32_dump(&mut w)?;
                }
                None => eprintln!("no border pixels in frame {frame}; cost map skipped"),
            }
            println!(
                "{} detections, dumps in {}",
                render.detections.len(),
                dir.display()
            );
        }
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> RunError {
    RunError::Io(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
