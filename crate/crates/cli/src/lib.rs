//! The `opic` command-line harness: dataset generation, training,
//! leave-one-group-out runs, prediction, evaluation and reports.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

use opic_core::models::{TrainConfig, UNetConfig};

use args::{Cli, Command, TrainOpts};
use commands::{PredictRequest, PredictSource, TrainRequest};
use config::ExperimentConfig;
pub use error::{CliError, CliResult};

pub const THREADS_VAR: &str = "OPIC_NUM_THREADS";

/// Caps the worker pool when `OPIC_NUM_THREADS` is set.
pub fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_VAR} must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size thread pool: {e}")))
}

/// Defaults, then the config file, then command-line flags.
pub fn training_config(opts: &TrainOpts) -> CliResult<(TrainConfig, UNetConfig)> {
    let ExperimentConfig { train: mut t, net: mut n, .. } = ExperimentConfig::load(opts.config.as_deref())?;
    if let Some(v) = opts.seed {
        t.seed = v;
    }
    if let Some(v) = opts.epochs {
        t.epochs = v;
    }
    if let Some(v) = opts.batch {
        t.batch_size = v;
    }
    if let Some(v) = opts.lr {
        t.lr = v;
    }
    if let Some(v) = opts.loss {
        t.loss = v;
    }
    if let Some(v) = opts.rc_finetune_epochs {
        t.rc_finetune_epochs = v;
    }
    if let Some(w) = &opts.widths {
        n.widths = w.clone();
    }
    t.ablate_group_average |= opts.ablate_group_average;
    Ok((t, n))
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => {
            let mut cfg = ExperimentConfig::load(a.config.as_deref())?.synth;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(h) = a.hemispheres {
                cfg.hemispheres = h as usize;
            }
            let (cohort, _) = commands::cmd_synth(&cfg, &a.out)?;
            println!("wrote {}\n{}", a.out.display(), commands::cohort_summary(&cohort));
        }
        Command::Train(a) => {
            let (mut train, net) = training_config(&a.opts)?;
            if a.holdout_group.is_some() {
                train.holdout_group = a.holdout_group.clone();
            }
            if !a.holdout_tasks.is_empty() {
                train.holdout_tasks = a.holdout_tasks.clone();
            }
            let req = TrainRequest {
                model: a.model,
                train,
                net,
            };
            let t = commands::cmd_train(&a.data, &a.out, &req)?;
            println!(
                "best epoch {} of {}, validation loss {:.5}",
                t.best_epoch,
                t.history.len() - 1,
                t.best_val_loss()
            );
        }
        Command::Logo(a) => {
            let (train, net) = training_config(&a.opts)?;
            let s = commands::cmd_logo(&a.data, &a.out, &train, &net)?;
            for f in &s.folds {
                println!(
                    "fold {} (held out {}): best epoch {}, validation loss {:.5}",
                    f.fold, f.group, f.best_epoch, f.best_val_loss
                );
            }
            println!("predictions in {}", a.out.join(&s.predictions).display());
        }
        Command::Predict(a) => {
            let source = match (&a.checkpoint, a.linear) {
                (Some(c), false) => PredictSource::Checkpoint(c.clone()),
                (None, true) => PredictSource::Linear,
                _ => return Err(CliError::Usage("predict needs --checkpoint DIR or --linear".into())),
            };
            let req = PredictRequest {
                source,
                method: a.method.clone(),
                zero_map: a.zero_map,
                tasks: a.tasks.clone(),
            };
            let idx = commands::cmd_predict(&a.data, &a.out, &req)?;
            println!("wrote {} predictions to {}", idx.entries.len(), a.out.display());
        }
        Command::Eval(a) => {
            let r = commands::cmd_eval(&a.data, &a.predictions, &a.out)?;
            print!("{}", commands::format_report(&r));
        }
        Command::Report(a) => {
            let text = commands::cmd_report(&a.data)?;
            if let Some(p) = &a.out {
                opic_core::io::write_atomic(p, text.as_bytes())?;
            }
            print!("{text}");
        }
    }
    Ok(())
}
