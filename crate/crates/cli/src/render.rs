use std::path::{Path, PathBuf};

use dsnerf::fields::{Checkpoint, FieldParams};
use dsnerf::mesh::Pose;
use dsnerf::render::FrameContext;
use dsnerf::synth::{frame_file_name, Dataset, PosesFile};
use dsnerf::train::{latest_checkpoint, CheckpointMeta, Evaluator};
use dsnerf::Real;

use crate::args::{Precision, RenderArgs};
use crate::train::load_dataset;

pub const OPACITY_DIR: &str = "opacity";

/// A checkpoint named directly or the latest one of a run directory.
pub fn resolve_checkpoint(checkpoint: Option<&Path>, run: Option<&Path>) -> anyhow::Result<PathBuf> {
    match (checkpoint, run) {
        (Some(p), _) => Ok(p.to_path_buf()),
        (None, Some(r)) => Ok(latest_checkpoint(r)?
            .ok_or_else(|| dsnerf::Error::InvalidInput(format!("no checkpoint in {}", r.display())))?),
        (None, None) => Err(dsnerf::Error::Usage("pass --checkpoint or --run".into()).into()),
    }
}

enum Target {
    Frame(usize),
    Pose(usize, Pose<f64>),
}

fn render_all<T: Real>(
    ds: &Dataset,
    params: &FieldParams<f64>,
    meta: &CheckpointMeta,
    a: &RenderArgs,
    targets: &[Target],
    cameras: &[usize],
) -> anyhow::Result<usize> {
    let params: FieldParams<T> = params.cast();
    let samples = a.samples.unwrap_or(meta.train.samples_per_ray);
    let ev = Evaluator::new(ds, &params, meta.train.mapping, meta.train.outlier, samples)?;
    std::fs::create_dir_all(a.out.join(OPACITY_DIR))?;
    let mut written = 0;
    for t in targets {
        let (ctx, stem): (FrameContext<T>, String) = match t {
            Target::Frame(f) if a.zero_latent => (ev.pose_context(&ds.pose(*f)?.cast())?, format!("f{f}")),
            Target::Frame(f) => (ev.context(*f)?, format!("f{f}")),
            Target::Pose(i, p) => (ev.pose_context(&p.cast())?, format!("p{i}")),
        };
        for &c in cameras {
            let img = ev.render_context(&ctx, c)?;
            let name = match t {
                Target::Frame(f) => frame_file_name(*f, c),
                Target::Pose(..) => format!("{stem}_c{c}.png"),
            };
            img.image.save_png(&a.out.join(&name))?;
            std::fs::write(a.out.join(OPACITY_DIR).join(&name), img.opacity_png_bytes()?)?;
            written += 1;
        }
    }
    Ok(written)
}

pub fn run(a: RenderArgs) -> anyhow::Result<()> {
    let ds = load_dataset(&a.data)?;
    let path = resolve_checkpoint(a.checkpoint.as_deref(), a.run.as_deref())?;
    let ck = Checkpoint::<f64>::load(&path)?;
    let meta = CheckpointMeta::from_checkpoint(&ck)?;
    let targets: Vec<Target> = match &a.pose_file {
        Some(p) => PosesFile::load(p)?
            .poses()?
            .into_iter()
            .enumerate()
            .map(|(i, pose)| Target::Pose(i, pose))
            .collect(),
        None if a.frame.is_empty() => (0..ds.frame_count()).map(Target::Frame).collect(),
        None => a.frame.iter().map(|&f| Target::Frame(f)).collect(),
    };
    for t in &targets {
        if let Target::Frame(f) = t {
            if *f >= ds.frame_count() {
                return Err(dsnerf::Error::InvalidInput(format!("frame {f} out of range")).into());
            }
        }
    }
    let cameras: Vec<usize> = if a.camera.is_empty() { (0..ds.cameras.len()).collect() } else { a.camera.clone() };
    if let Some(&c) = cameras.iter().find(|&&c| c >= ds.cameras.len()) {
        return Err(dsnerf::Error::InvalidInput(format!("camera {c} out of range")).into());
    }
    let n = match a.precision {
        Precision::F32 => render_all::<f32>(&ds, &ck.params, &meta, &a, &targets, &cameras)?,
        Precision::F64 => render_all::<f64>(&ds, &ck.params, &meta, &a, &targets, &cameras)?,
    };
    println!("rendered {n} images to {}", a.out.display());
    Ok(())
}
