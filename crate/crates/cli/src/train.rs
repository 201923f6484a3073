use std::path::Path;

use dsnerf::fields::{Checkpoint, FieldParams};
use dsnerf::synth::Dataset;
use dsnerf::train::{fit, latest_checkpoint, CheckpointMeta, FitOptions, LogRecord, TrainConfig};

use crate::args::{Precision, TrainCmdArgs};
use crate::config::{precision_name, resolve_train, write_json, RunConfig, RESOLVED_CONFIG};

pub fn load_dataset(path: &Path) -> anyhow::Result<Dataset> {
    Ok(Dataset::load(path)?)
}

/// Fit `config` into `run_dir` and return the final parameters.
pub fn train_into(
    ds: &Dataset,
    config: &TrainConfig,
    precision: Precision,
    run_dir: &Path,
    resume: Option<Checkpoint<f64>>,
) -> anyhow::Result<FieldParams<f64>> {
    let every = match config.iterations {
        Some(n) => (n / 20).max(1),
        None => 100,
    };
    let report = move |r: &LogRecord| {
        if r.iter % every == 0 {
            eprintln!("iter {:>6}  epoch {:>4}  loss {:.6}  lr {:.2e}", r.iter, r.epoch, r.loss, r.lr);
        }
    };
    let opts = FitOptions {
        run_dir: Some(run_dir.to_path_buf()),
        resume,
        on_iter: Some(&report),
    };
    let params = match precision {
        Precision::F32 => fit::<f32>(ds, config, opts)?.params.cast(),
        Precision::F64 => fit::<f64>(ds, config, opts)?.params,
    };
    Ok(params)
}

pub fn run(a: TrainCmdArgs) -> anyhow::Result<()> {
    let ds = load_dataset(&a.train.data)?;
    let (config, resume) = if a.resume {
        let path = latest_checkpoint(&a.run)?.ok_or_else(|| {
            dsnerf::Error::InvalidInput(format!("no checkpoint to resume in {}", a.run.display()))
        })?;
        let ck = Checkpoint::<f64>::load(&path)?;
        let meta = CheckpointMeta::from_checkpoint(&ck)?;
        eprintln!("resuming from {} at step {}", path.display(), ck.step);
        (resolve_train(&a.train, Some(meta.train))?, Some(ck))
    } else {
        (resolve_train(&a.train, None)?, None)
    };
    let resolved = RunConfig {
        data: a.train.data.clone(),
        run_dir: a.run.clone(),
        seed: config.seed,
        precision: precision_name(a.train.precision).into(),
        deterministic: a.train.deterministic,
        threads: rayon::current_num_threads(),
        train: config.clone(),
    };
    write_json(&a.run.join(RESOLVED_CONFIG), &resolved)?;
    train_into(&ds, &config, a.train.precision, &a.run, resume)?;
    let last = latest_checkpoint(&a.run)?;
    if let Some(p) = last {
        println!("{}", p.display());
    }
    Ok(())
}
