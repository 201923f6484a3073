use std::path::Path;

use dsnerf::imaging::Image;
use dsnerf::metrics::{comparison_strip, score, stack_rows, EvalReport};
use dsnerf::synth::Dataset;
use dsnerf::train::{eval_mask, novel_pose_views, novel_view_views, training_views, ViewId};

use crate::args::{EvalArgs, SplitArg};
use crate::config::write_json;
use crate::train::load_dataset;

/// Parse `f{frame}_c{camera}.png`.
pub fn parse_view_name(name: &str) -> Option<ViewId> {
    let rest = name.strip_prefix('f')?.strip_suffix(".png")?;
    let (f, c) = rest.split_once("_c")?;
    Some(ViewId {
        frame: f.parse().ok()?,
        camera: c.parse().ok()?,
    })
}

fn split_views(ds: &Dataset, split: SplitArg) -> Option<Vec<ViewId>> {
    match split {
        SplitArg::All => None,
        SplitArg::Train => Some(training_views(ds)),
        SplitArg::NovelView => Some(novel_view_views(ds)),
        SplitArg::NovelPose => Some(novel_pose_views(ds)),
    }
}

/// Predictions found in `dir`, in frame-then-camera order.
pub fn find_predictions(ds: &Dataset, dir: &Path, split: SplitArg) -> anyhow::Result<Vec<ViewId>> {
    let wanted = split_views(ds, split);
    let mut views = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let Some(v) = parse_view_name(&entry.file_name().to_string_lossy()) else {
            continue;
        };
        if v.frame >= ds.frame_count() || v.camera >= ds.cameras.len() {
            continue;
        }
        if wanted.as_ref().is_none_or(|w| w.contains(&v)) {
            views.push(v);
        }
    }
    views.sort_by_key(|v| (v.frame, v.camera));
    if views.is_empty() {
        return Err(dsnerf::Error::InvalidInput(format!("no predictions in {}", dir.display())).into());
    }
    Ok(views)
}

pub fn evaluate_dir(ds: &Dataset, dir: &Path, split: SplitArg) -> anyhow::Result<(EvalReport, Vec<(Image, Image)>)> {
    let mut scores = Vec::new();
    let mut pairs = Vec::new();
    for v in find_predictions(ds, dir, split)? {
        let name = dsnerf::synth::frame_file_name(v.frame, v.camera);
        let pred = Image::load_png(&dir.join(&name))?;
        let truth = ds.image(v.frame, v.camera)?;
        let mask = eval_mask(ds, v)?;
        scores.push(score(&format!("f{}_c{}", v.frame, v.camera), &pred, &truth, &mask)?);
        pairs.push((pred, truth));
    }
    Ok((EvalReport::new(scores)?, pairs))
}

pub fn run(a: EvalArgs) -> anyhow::Result<()> {
    let ds = load_dataset(&a.data)?;
    if a.self_check {
        ds.self_check()?;
        eprintln!(
            "dataset ok: {} frames, {} cameras",
            ds.frame_count(),
            ds.cameras.len()
        );
    }
    let Some(pred) = &a.pred else {
        return Ok(());
    };
    let (report, pairs) = evaluate_dir(&ds, pred, a.split)?;
    if let Some(g) = &a.grid {
        let strips = pairs
            .iter()
            .map(|(p, t)| comparison_strip(p, t))
            .collect::<dsnerf::Result<Vec<_>>>()?;
        stack_rows(&strips)?.save_png(g)?;
    }
    match &a.out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}
