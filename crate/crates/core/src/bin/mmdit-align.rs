use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mmdit_align::harness::{
    depth_stages, run_eval, run_resume, run_sample, run_sweep, run_train, Checkpoint, RunConfig, SampleRequest,
    TeacherSource, DEFAULT_LAMBDAS,
};
use mmdit_align::supervision::{load_teacher_file, TeacherSet};

#[derive(Parser)]
#[command(name = "mmdit-align", version, about = "Toy MM-DiT with text-feature alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides shared by `train` and `sweep`.
#[derive(Args)]
struct RunArgs {
    /// TOML run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    /// `synthetic` or a path to a TEMB file.
    #[arg(long)]
    teacher: Option<TeacherSource>,
}

impl RunArgs {
    fn resolve(&self) -> Result<(RunConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        if let Some(steps) = self.steps {
            cfg.run.steps = steps;
        }
        if let Some(t) = &self.teacher {
            cfg.teacher.source = t.clone();
        }
        if let Some(out) = &self.out {
            cfg.run.out = out.clone();
        }
        let out = cfg.run.out.clone();
        Ok((cfg, out))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration, or continue a checkpoint with --resume.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Alignment weight; 0 keeps the branch built but inert.
        #[arg(long)]
        lambda: Option<f64>,
        /// Tap depth n (1-based block index); 0 disables supervision.
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long, conflicts_with_all = ["config", "seed", "teacher", "lambda", "depth"])]
        resume: Option<PathBuf>,
    },
    /// Draw latents for one caption from a checkpoint into a LATS file.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        caption: u64,
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Euler steps.
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "samples.lats")]
        out: PathBuf,
    },
    /// Train every (lambda, depth) cell and report the Pareto front.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated weights.
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<f64>,
        /// Comma-separated tap depths; defaults to thirds of the model.
        #[arg(long, value_delimiter = ',')]
        depth: Vec<usize>,
    },
    /// Held-out FID analogue and alignment score for a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Summarise a TEMB file.
    InspectTeacher {
        #[arg(long)]
        teacher: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            run,
            lambda,
            depth,
            resume,
        } => {
            let (out, log) = if let Some(ckpt) = resume {
                let total = match run.steps {
                    Some(s) => s,
                    None => Checkpoint::load(&ckpt)?.config.run.steps,
                };
                let out = run.out.clone().unwrap_or_else(|| PathBuf::from("runs/resumed"));
                (out.clone(), run_resume(&ckpt, total, &out)?.log)
            } else {
                let (mut cfg, out) = run.resolve()?;
                if let Some(l) = lambda {
                    cfg.align.lambda = l;
                }
                match depth {
                    Some(0) => cfg.align.enabled = false,
                    Some(n) => cfg.align.depth_n = n,
                    None => {}
                }
                (out.clone(), run_train(&cfg, &out)?.log)
            };
            if let Some(last) = log.last() {
                let align = last.losses.align.map_or("-".to_string(), |a| format!("{a:.6}"));
                println!(
                    "step {}: fm {:.6} align {align} total {:.6}",
                    last.step, last.losses.fm, last.losses.total
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Sample {
            checkpoint,
            caption,
            count,
            steps,
            seed,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let req = SampleRequest {
                caption_id: caption,
                steps,
                count,
                seed,
                align: None,
            };
            run_sample(&ckpt, &req)?.save(&out)?;
            println!("wrote {count} latents to {}", out.display());
        }
        Command::Sweep { run, lambda, depth } => {
            let (cfg, out) = run.resolve()?;
            let lambdas = if lambda.is_empty() { DEFAULT_LAMBDAS.to_vec() } else { lambda };
            let depths = if depth.is_empty() { depth_stages(cfg.model.depth) } else { depth };
            let sweep = run_sweep(&cfg, &lambdas, &depths, &out)?;
            print!("{}", sweep.report.to_table());
        }
        Command::Eval { checkpoint } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let report = run_eval(&ckpt)?;
            println!("step,fid_analogue,alignment_score,count");
            println!("{},{},{},{}", ckpt.step(), report.fid, report.alignment_score, report.count);
        }
        Command::InspectTeacher { teacher } => {
            let set = load_teacher_file(&teacher).with_context(|| format!("reading {}", teacher.display()))?;
            inspect(&set)?;
        }
    }
    Ok(())
}

fn inspect(set: &TeacherSet) -> Result<()> {
    if set.is_empty() {
        bail!("teacher file holds no captions");
    }
    println!("captions {} tokens {} width {}", set.len(), set.tokens(), set.width());
    println!("caption_id,mean_token_norm");
    for emb in set.iter() {
        let v = emb.vectors();
        let w = emb.width();
        let norms: f64 = v.data().chunks(w).map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt()).sum();
        println!("{},{:.6}", emb.caption_id(), norms / emb.tokens() as f64);
    }
    Ok(())
}
