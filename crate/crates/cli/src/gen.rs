use dsnerf::synth::{make_dataset, SceneSpec};

use crate::args::GenArgs;
use crate::config::{layered, write_json};

/// The scene description is echoed next to the generated files.
pub const SCENE_FILE: &str = "scene.json";

pub fn run(a: GenArgs) -> anyhow::Result<()> {
    let mut spec = layered(&SceneSpec::default(), a.config.as_deref())?;
    if let Some(s) = a.size {
        // Keep the field of view.
        spec.focal *= s as f64 / spec.image_size as f64;
        spec.image_size = s;
    }
    if let Some(f) = a.frames {
        spec.train_frames = f;
    }
    if let Some(c) = a.cameras {
        spec.train_cameras = c;
    }
    if a.out.exists() && std::fs::read_dir(&a.out)?.next().is_some() {
        if !a.force {
            return Err(dsnerf::Error::Usage(format!(
                "{} is not empty (pass --force to replace it)",
                a.out.display()
            ))
            .into());
        }
        std::fs::remove_dir_all(&a.out)?;
    }
    let summary = make_dataset(&spec, a.seed, &a.out)?;
    write_json(
        &a.out.join(SCENE_FILE),
        &serde_json::json!({ "seed": a.seed, "scene": spec }),
    )?;
    println!(
        "wrote {} images ({} frames x {} cameras) to {}",
        summary.images,
        summary.frames,
        summary.cameras,
        a.out.display()
    );
    Ok(())
}
