use std::fmt::Write as _;

use dsnerf::fields::{FieldParams, LightingMode};
use dsnerf::render::Mapping;
use dsnerf::synth::Dataset;
use dsnerf::train::{constant_baseline, novel_pose_views, novel_view_views, Evaluator, TrainConfig};
use dsnerf::Real;
use serde::Serialize;

use crate::args::{AblateArgs, Precision, Variant};
use crate::config::{config_hash, precision_name, resolve_train, write_json, RunConfig, RESOLVED_CONFIG};
use crate::train::{load_dataset, train_into};

pub const REPORT_JSON: &str = "ablation.json";
pub const REPORT_MD: &str = "ablation.md";

pub fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Full => "full",
        Variant::InverseLbs => "inverse-lbs",
        Variant::NoLighting => "no-lighting",
        Variant::LightingColor => "lighting-color",
    }
}

/// `base` changed in the one respect the variant names.
pub fn variant_config(base: &TrainConfig, v: Variant, knn: usize) -> TrainConfig {
    let mut c = base.clone();
    match v {
        Variant::Full => {
            c.mapping = Mapping::Barycentric;
            c.field.lighting = LightingMode::Scalar;
        }
        Variant::InverseLbs => {
            c.mapping = Mapping::InverseLbs { k: knn };
            c.field.lighting = LightingMode::Scalar;
        }
        Variant::NoLighting => {
            c.mapping = Mapping::Barycentric;
            c.field.lighting = LightingMode::Off;
        }
        Variant::LightingColor => {
            c.mapping = Mapping::Barycentric;
            c.field.lighting = LightingMode::Color;
        }
    }
    c
}

#[derive(Clone, Debug, Serialize)]
pub struct Scores {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub variant: Variant,
    pub novel_view: Scores,
    pub novel_pose: Scores,
    pub parameters: usize,
    pub lighting_parameters: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub seed: u64,
    pub config_hash: String,
    pub baseline: Row0,
    pub rows: Vec<Row>,
}

/// The constant-color baseline.
#[derive(Clone, Debug, Serialize)]
pub struct Row0 {
    pub novel_view: Scores,
    pub novel_pose: Scores,
}

fn scores_of<T: Real>(ds: &Dataset, params: &FieldParams<f64>, c: &TrainConfig, samples: usize) -> anyhow::Result<(Scores, Scores)> {
    let p: FieldParams<T> = params.cast();
    let ev = Evaluator::new(ds, &p, c.mapping, c.outlier, samples)?;
    let nv = ev.evaluate(&novel_view_views(ds))?.report;
    let np = ev.evaluate(&novel_pose_views(ds))?.report;
    Ok((
        Scores { psnr: nv.mean_psnr, ssim: nv.mean_ssim },
        Scores { psnr: np.mean_psnr, ssim: np.mean_ssim },
    ))
}

pub fn markdown(r: &AblationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| variant | novel view PSNR | novel view SSIM | novel pose PSNR | novel pose SSIM |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    let b = &r.baseline;
    let _ = writeln!(
        s,
        "| constant color | {:.3} | {:.4} | {:.3} | {:.4} |",
        b.novel_view.psnr, b.novel_view.ssim, b.novel_pose.psnr, b.novel_pose.ssim
    );
    for row in &r.rows {
        let _ = writeln!(
            s,
            "| {} | {:.3} | {:.4} | {:.3} | {:.4} |",
            variant_name(row.variant),
            row.novel_view.psnr,
            row.novel_view.ssim,
            row.novel_pose.psnr,
            row.novel_pose.ssim
        );
    }
    s
}

pub fn run(a: AblateArgs) -> anyhow::Result<()> {
    let ds = load_dataset(&a.train.data)?;
    let base = resolve_train(&a.train, None)?;
    let mut variants = a.variants.clone();
    variants.sort();
    variants.dedup();

    let nv = constant_baseline(&ds, &novel_view_views(&ds))?.report;
    let np = constant_baseline(&ds, &novel_pose_views(&ds))?.report;
    let mut report = AblationReport {
        seed: base.seed,
        config_hash: config_hash(&base)?,
        baseline: Row0 {
            novel_view: Scores { psnr: nv.mean_psnr, ssim: nv.mean_ssim },
            novel_pose: Scores { psnr: np.mean_psnr, ssim: np.mean_ssim },
        },
        rows: Vec::new(),
    };
    for v in variants {
        let config = variant_config(&base, v, a.train.knn);
        config.validate()?;
        let dir = a.out.join(variant_name(v));
        eprintln!("training {}", variant_name(v));
        write_json(
            &dir.join(RESOLVED_CONFIG),
            &RunConfig {
                data: a.train.data.clone(),
                run_dir: dir.clone(),
                seed: config.seed,
                precision: precision_name(a.train.precision).into(),
                deterministic: a.train.deterministic,
                threads: rayon::current_num_threads(),
                train: config.clone(),
            },
        )?;
        let params = train_into(&ds, &config, a.train.precision, &dir, None)?;
        let (nv, np) = match a.train.precision {
            Precision::F32 => scores_of::<f32>(&ds, &params, &config, a.eval_samples)?,
            Precision::F64 => scores_of::<f64>(&ds, &params, &config, a.eval_samples)?,
        };
        report.rows.push(Row {
            variant: v,
            novel_view: nv,
            novel_pose: np,
            parameters: params.param_count(),
            lighting_parameters: params.lighting.as_ref().map_or(0, |m| m.param_count()),
        });
    }
    write_json(&a.out.join(REPORT_JSON), &report)?;
    let md = markdown(&report);
    std::fs::write(a.out.join(REPORT_MD), &md)?;
    print!("{md}");
    Ok(())
}
