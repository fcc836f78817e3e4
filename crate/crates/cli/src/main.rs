mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use hkge::data::Split;
use hkge::eval::TieBreak;
use hkge::model::{CurvatureMode, GeometryKind};
use hkge::training::OptimizerKind;

use config::RunConfig;

/// Train, evaluate and analyse hyperbolic hierarchical KG embeddings.
#[derive(Parser)]
#[command(name = "hkge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and keep the best validated checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Score a split with a saved checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out_dir of --config>/checkpoint.hkge`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        split: Option<Split>,
        /// Also write per-relation metrics.
        #[arg(long)]
        per_relation: bool,
        #[arg(long)]
        tie_break: Option<TieBreak>,
        #[arg(long)]
        eval_seed: Option<u64>,
    },
    /// Train the component-ablation grid, or the curvature-mode sweep.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        train: TrainFlags,
        /// Compare the four curvature modes instead of the component grid.
        #[arg(long)]
        curvature_sweep: bool,
    },
    /// Hierarchy diagnostics of relation subgraphs.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Relations to analyse (comma separated); all when omitted.
        #[arg(long, value_delimiter = ',')]
        relations: Vec<String>,
        /// Triangle samples per relation.
        #[arg(long)]
        samples: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ModelFlags {
    #[arg(long)]
    dim: Option<usize>,
    /// hyperbolic or euclidean
    #[arg(long)]
    geometry: Option<GeometryKind>,
    /// fixed, global, relation or attention
    #[arg(long)]
    curvature_mode: Option<CurvatureMode>,
    #[arg(long)]
    no_inter_level: bool,
    #[arg(long)]
    no_intra_level: bool,
    #[arg(long)]
    init_scale: Option<f64>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    neg_samples: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Validation rounds without improvement before stopping; 0 disables.
    #[arg(long)]
    patience: Option<usize>,
    /// adagrad or adam
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    grad_clip: Option<f64>,
    /// random, pessimistic or optimistic
    #[arg(long)]
    tie_break: Option<TieBreak>,
    #[arg(long)]
    eval_seed: Option<u64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Common {
    fn resolve(self, command: &str) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.command = command.to_owned();
        if self.dataset_dir.is_some() {
            cfg.dataset_dir = self.dataset_dir;
        }
        if self.out_dir.is_some() {
            cfg.out_dir = self.out_dir;
        }
        set(&mut cfg.train.seed, self.seed);
        set(&mut cfg.train.threads, self.threads);
        Ok(cfg)
    }
}

impl ModelFlags {
    fn apply(self, cfg: &mut RunConfig) {
        let m = &mut cfg.model;
        set(&mut m.dim, self.dim);
        set(&mut m.geometry, self.geometry);
        set(&mut m.curvature_mode, self.curvature_mode);
        set(&mut m.init_scale, self.init_scale);
        if self.no_inter_level {
            m.use_inter_level = false;
        }
        if self.no_intra_level {
            m.use_intra_level = false;
        }
    }
}

impl TrainFlags {
    fn apply(self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        set(&mut t.epochs, self.epochs);
        set(&mut t.lr, self.lr);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.neg_samples, self.neg_samples);
        set(&mut t.eval_every, self.eval_every);
        set(&mut t.patience, self.patience);
        set(&mut t.optimizer, self.optimizer);
        set(&mut t.tie_break, self.tie_break);
        set(&mut t.eval_seed, self.eval_seed);
        if self.grad_clip.is_some() {
            t.grad_clip = self.grad_clip;
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, model, train } => {
            let mut cfg = common.resolve("train")?;
            model.apply(&mut cfg);
            train.apply(&mut cfg);
            commands::train(&cfg)
        }
        Command::Eval {
            common,
            checkpoint,
            split,
            per_relation,
            tie_break,
            eval_seed,
        } => {
            // the config file's out_dir names the training run, whose
            // checkpoint is the default
            let run_dir = match &common.config {
                Some(path) => RunConfig::load(path)?.out_dir,
                None => None,
            };
            let explicit_out = common.out_dir.is_some();
            let mut cfg = common.resolve("eval")?;
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            if cfg.checkpoint.is_none() {
                cfg.checkpoint = run_dir.map(|d| d.join(commands::CHECKPOINT_FILE));
            }
            set(&mut cfg.split, split);
            cfg.per_relation |= per_relation;
            set(&mut cfg.train.tie_break, tie_break);
            set(&mut cfg.train.eval_seed, eval_seed);
            if !explicit_out {
                cfg.out_dir = None;
            }
            commands::eval(&mut cfg)
        }
        Command::Ablate {
            common,
            model,
            train,
            curvature_sweep,
        } => {
            let mut cfg = common.resolve("ablate")?;
            model.apply(&mut cfg);
            train.apply(&mut cfg);
            cfg.curvature_sweep |= curvature_sweep;
            commands::ablate(&cfg)
        }
        Command::Analyze {
            common,
            relations,
            samples,
        } => {
            let mut cfg = common.resolve("analyze")?;
            if !relations.is_empty() {
                cfg.relations = relations;
            }
            set(&mut cfg.samples, samples);
            commands::analyze(&cfg)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
