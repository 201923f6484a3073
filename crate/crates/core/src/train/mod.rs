//! Optimization of the fields against a synthetic dataset.

mod eval;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barymap::OutlierBounds;
use crate::error::{Error, Result};
use crate::fields::{init_params, Checkpoint, FieldConfig, FieldParams, Latent, Moments, Tape};
use crate::imaging::{Image, Mask};
use crate::linalg::Vec3;
use crate::mesh::{lbs_pose, Pose};
use crate::metrics::projected_bbox_mask;
use crate::render::{
    generate_rays, march_ray, record_marches, CanonicalSpace, Camera, FrameGeometry, MarchConfig, Mapping, Ray,
};
use crate::scalar::Real;
use crate::synth::Dataset;

pub use eval::{
    constant_baseline, eval_mask, novel_pose_context, novel_pose_views, novel_view_views, pearson, surface_lightness,
    training_views, Evaluation, Evaluator, LightnessSample, NormalSource, ViewId,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Total iterations; overrides `epochs` when set.
    pub iterations: Option<usize>,
    pub rays_per_batch: usize,
    pub samples_per_ray: usize,
    pub lr: f64,
    /// Learning rate reached at the last iteration, as a fraction of `lr`.
    pub lr_decay: f64,
    /// Fraction of each batch drawn from face pixels.
    pub face_fraction: f64,
    pub seed: u64,
    pub field: FieldConfig,
    pub outlier: OutlierBounds,
    pub adam: AdamConfig,
    /// Global gradient norm limit; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub jitter: bool,
    pub mapping: Mapping,
    /// Ray shards per batch; defaults to the worker count.
    pub shards: Option<usize>,
    /// Periodic checkpoints kept besides the best one.
    pub keep_last: usize,
    /// Iterations between checkpoints; defaults to one epoch.
    pub checkpoint_every: Option<usize>,
    /// Composite every batch over a random uniform background color instead
    /// of the dataset's. Against a fixed black background a half-transparent
    /// surface is indistinguishable from a darker one.
    pub random_background: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            iterations: None,
            rays_per_batch: 5000,
            samples_per_ray: 64,
            lr: 5e-4,
            lr_decay: 0.1,
            face_fraction: 0.05,
            seed: 0,
            field: FieldConfig::default(),
            outlier: OutlierBounds::default(),
            adam: AdamConfig::default(),
            clip_norm: Some(10.0),
            jitter: true,
            mapping: Mapping::Barycentric,
            shards: None,
            keep_last: 3,
            random_background: false,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    /// Settings sized for a single desktop core.
    pub fn desk() -> Self {
        TrainConfig {
            rays_per_batch: 384,
            samples_per_ray: 24,
            lr: 2e-3,
            field: FieldConfig {
                hidden_width: 64,
                light_width: 32,
                pose_width: 32,
                pe_frequencies: 6,
                ..FieldConfig::default()
            },
            random_background: true,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        if self.rays_per_batch == 0 || self.samples_per_ray < 2 || self.keep_last == 0 {
            return Err(Error::Config("ray, sample and checkpoint counts must be positive".into()));
        }
        if self.iterations == Some(0) || (self.iterations.is_none() && self.epochs == 0) {
            return Err(Error::Config("training needs at least one iteration".into()));
        }
        if !(0.0..=1.0).contains(&self.face_fraction) {
            return Err(Error::Config("face_fraction must lie in [0, 1]".into()));
        }
        if !(self.lr >= 0.0 && self.lr_decay > 0.0) {
            return Err(Error::Config("learning rate must be non-negative and decay positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        if self.shards == Some(0) || self.checkpoint_every == Some(0) {
            return Err(Error::Config("shards and checkpoint_every must be positive".into()));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::Config("invalid Adam constants".into()));
        }
        OutlierBounds::new(self.outlier.alpha, self.outlier.beta, self.outlier.gamma)?;
        Ok(())
    }

    pub fn march(&self) -> MarchConfig {
        MarchConfig {
            samples_per_ray: self.samples_per_ray,
            jitter: self.jitter,
            outlier: self.outlier,
        }
    }
}

/// `lr0 · factor^(step/total)`.
pub fn lr_schedule(step: usize, total: usize, lr0: f64, factor: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    lr0 * factor.powf(step.min(total) as f64 / total as f64)
}

/// Mean over rays of the squared L2 color error.
pub fn loss_mse<T: Real>(pred: &[[T; 3]], target: &[[T; 3]]) -> Result<T> {
    if pred.len() != target.len() {
        return Err(Error::InvalidInput(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let sum = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (0..3).map(|c| (p[c] - t[c]) * (p[c] - t[c])).fold(T::zero(), |a, b| a + b))
        .fold(T::zero(), |a, b| a + b);
    Ok(sum / T::from_usize_lossy(pred.len()))
}

/// Empty Adam state shaped like `params`.
pub fn adam_state<T: Real>(params: &FieldParams<T>) -> Moments<T> {
    Moments {
        step: 0,
        m: params.zero_blocks(),
        v: params.zero_blocks(),
    }
}

/// One bias-corrected Adam update of every block.
pub fn adam_step<T: Real>(
    params: Vec<&mut Array2<T>>,
    grads: &[Array2<T>],
    state: &mut Moments<T>,
    lr: f64,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || grads.len() != state.m.len() || grads.len() != state.v.len() {
        return Err(Error::InvalidInput("parameter, gradient and moment block counts differ".into()));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || g.shape() != state.m[i].shape() {
            return Err(Error::InvalidInput(format!("block {i} shape mismatch")));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient block {i}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = T::lit(1.0 - b1.powi(t));
    let c2 = T::lit(1.0 - b2.powi(t));
    let (b1, b2, eps, lr) = (T::lit(b1), T::lit(b2), T::lit(config.eps), T::lit(lr));
    for ((p, g), (m, v)) in params.into_iter().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        });
    }
    Ok(())
}

pub fn global_norm<T: Real>(grads: &[Array2<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| {
            let v = x.to_f64_lossy();
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Scale gradients down to global norm `max` if they exceed it; returns the
/// norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Array2<T>], max: f64) -> f64 {
    let n = global_norm(grads);
    if n > max {
        let k = T::lit(max / n);
        for g in grads.iter_mut() {
            g.mapv_inplace(|x| x * k);
        }
    }
    n
}

/// One supervised (frame, camera) image.
#[derive(Clone, Debug)]
pub struct TrainView {
    /// Index into [`TrainData::frames`].
    pub frame: usize,
    pub camera: usize,
    pub image: Image,
    pub mask: Mask,
    pub face_pixels: Vec<(usize, usize)>,
    pub bbox_pixels: Vec<(usize, usize)>,
}

/// A training frame with its cached geometry.
#[derive(Clone, Debug)]
pub struct TrainFrame<T> {
    /// Frame index in the dataset.
    pub dataset_frame: usize,
    pub pose: Pose<T>,
    pub geometry: FrameGeometry<T>,
}

/// Everything training reads, loaded once.
#[derive(Clone, Debug)]
pub struct TrainData<T> {
    pub canonical: CanonicalSpace<T>,
    pub frames: Vec<TrainFrame<T>>,
    /// Indexed by dataset camera id.
    pub cameras: Vec<Camera<T>>,
    pub views: Vec<TrainView>,
    pub background: [f64; 3],
}

impl<T: Real> TrainData<T> {
    pub fn load(ds: &Dataset, mapping: Mapping, dilation: f64) -> Result<Self> {
        let mesh = std::sync::Arc::new(ds.mesh.cast::<T>());
        let canonical = CanonicalSpace::new(&mesh, &ds.canonical_pose()?.cast())?;
        let cameras = (0..ds.cameras.len())
            .map(|c| ds.camera(c).map(|cam| cam.cast()))
            .collect::<Result<Vec<_>>>()?;
        let mut frames = Vec::new();
        let mut views = Vec::new();
        for (row, &f) in ds.train_frames().iter().enumerate() {
            let pose: Pose<T> = ds.pose(f)?.cast();
            let world = lbs_pose(&mesh, &pose)?;
            let geometry = FrameGeometry::new(world, &canonical, mapping, T::lit(dilation))?;
            for c in ds.train_cameras() {
                let image = ds.image(f, c)?;
                let face_pixels = ds.face_mask(f, c)?.pixels();
                let bbox = projected_bbox_mask(&cameras[c], &geometry.world);
                let bbox_pixels = if bbox.is_empty() {
                    (0..image.height).flat_map(|y| (0..image.width).map(move |x| (x, y))).collect()
                } else {
                    bbox.pixels()
                };
                views.push(TrainView {
                    frame: row,
                    camera: c,
                    image,
                    mask: ds.mask(f, c)?,
                    face_pixels,
                    bbox_pixels,
                });
            }
            frames.push(TrainFrame {
                dataset_frame: f,
                pose,
                geometry,
            });
        }
        if views.is_empty() {
            return Err(Error::Format("dataset has no training views".into()));
        }
        Ok(TrainData {
            canonical,
            frames,
            cameras,
            views,
            background: ds.light.background,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.views.iter().map(|v| v.image.width * v.image.height).sum()
    }

    pub fn epoch_iterations(&self, rays_per_batch: usize) -> usize {
        self.pixel_count().div_ceil(rays_per_batch).max(1)
    }
}

/// Rays of one training iteration, all from one view.
#[derive(Clone, Debug)]
pub struct RayBatch<T> {
    pub view: usize,
    pub rays: Vec<Ray<T>>,
    pub targets: Vec<[T; 3]>,
    /// Leading rays drawn from face pixels.
    pub face_rays: usize,
    /// Color composited behind the rays and shown by background pixels.
    pub background: [T; 3],
}

impl<T: Real> RayBatch<T> {
    /// Swap the background: rays outside the foreground mask of their view
    /// now target `color`. Exact because ground-truth pixels are either
    /// fully covered or empty.
    pub fn recolor_background(&mut self, data: &TrainData<T>, color: [T; 3]) {
        let mask = &data.views[self.view].mask;
        for (ray, target) in self.rays.iter().zip(self.targets.iter_mut()) {
            if !mask.get(ray.pixel.0, ray.pixel.1) {
                *target = color;
            }
        }
        self.background = color;
    }
}

/// Pick one view, draw `⌈face_fraction·m⌉` rays from its face pixels (none
/// when it has no face pixels) and the rest from its projected box.
pub fn sample_ray_batch<T: Real, R: Rng>(data: &TrainData<T>, m: usize, face_fraction: f64, rng: &mut R) -> Result<RayBatch<T>> {
    let vi = rng.random_range(0..data.views.len());
    let view = &data.views[vi];
    let n_face = if view.face_pixels.is_empty() {
        0
    } else {
        ((face_fraction * m as f64).ceil() as usize).min(m)
    };
    let mut pixels = Vec::with_capacity(m);
    for i in 0..m {
        let pool = if i < n_face { &view.face_pixels } else { &view.bbox_pixels };
        pixels.push(pool[rng.random_range(0..pool.len())]);
    }
    let rays = generate_rays(&data.cameras[view.camera], &pixels, data.frames[view.frame].dataset_frame)?;
    let targets = pixels.iter().map(|&(x, y)| view.image.get(x, y).map(T::lit)).collect();
    Ok(RayBatch {
        view: vi,
        rays,
        targets,
        face_rays: n_face,
        background: data.background.map(T::lit),
    })
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Loss and parameter gradients of one batch. Shards run in parallel, each
/// on a private tape, and are summed in shard order.
pub fn batch_gradients<T: Real>(
    params: &FieldParams<T>,
    data: &TrainData<T>,
    batch: &RayBatch<T>,
    march: &MarchConfig,
    shards: usize,
    seed: u64,
) -> Result<(f64, Vec<Array2<T>>)> {
    let m = batch.rays.len();
    if m == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let view = &data.views[batch.view];
    let frame = &data.frames[view.frame];
    let bg = batch.background;
    let denom = T::from_usize_lossy(m);
    let shards = shards.clamp(1, m);
    let per = m.div_ceil(shards);
    let parts = (0..shards)
        .into_par_iter()
        .map(|s| -> Result<(f64, Option<Vec<Array2<T>>>)> {
            let lo = (s * per).min(m);
            let hi = ((s + 1) * per).min(m);
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, s as u64));
            let mut marches = Vec::new();
            let mut targets = Vec::new();
            let mut constant = 0.0;
            for i in lo..hi {
                let t = batch.targets[i];
                match march_ray(&batch.rays[i], &frame.geometry, &data.canonical, march, &mut rng)? {
                    Some(mr) if mr.kept() > 0 => {
                        marches.push(mr);
                        targets.push(t);
                    }
                    _ => {
                        constant += (0..3)
                            .map(|c| {
                                let d = (bg[c] - t[c]).to_f64_lossy();
                                d * d
                            })
                            .sum::<f64>();
                    }
                }
            }
            let constant = constant / m as f64;
            if marches.is_empty() {
                return Ok((constant, None));
            }
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, Latent::Frame(view.frame))?;
            let j = params.pose_feature_graph(&mut tape, &bound, &frame.pose)?;
            let rec = record_marches(
                &mut tape,
                params,
                &bound,
                j,
                &marches,
                &frame.geometry,
                &data.canonical,
                Vec3::zero(),
                bg,
            )?;
            let rgb = tape.slice_cols(rec.output, 0, 3)?;
            let target = Array2::from_shape_fn((targets.len(), 3), |(r, c)| targets[r][c]);
            let loss = tape.squared_error(rgb, target, denom)?;
            let value = tape.value(loss)[[0, 0]].to_f64_lossy();
            let mut grads = tape.grad(loss, &bound.targets())?;
            Ok((constant + value, Some(params.collect_grads(&bound, &mut grads))))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    let mut acc = params.zero_blocks();
    for (loss, grads) in parts {
        total += loss;
        if let Some(g) = grads {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += &b;
            }
        }
    }
    Ok((total, acc))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

/// Where and how a run persists its state.
#[derive(Default)]
pub struct FitOptions<'a> {
    /// Checkpoints and the log go here when set.
    pub run_dir: Option<PathBuf>,
    pub resume: Option<Checkpoint<f64>>,
    /// Called after every iteration.
    pub on_iter: Option<&'a (dyn Fn(&LogRecord) + Sync)>,
}

pub struct FitResult<T> {
    pub params: FieldParams<T>,
    pub moments: Moments<T>,
    pub step: usize,
    pub log: Vec<LogRecord>,
}

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LOG_FILE: &str = "train_log.ndjson";

/// Metadata stored with every training checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub train: TrainConfig,
    pub train_frames: Vec<usize>,
    pub mean_translation: [f64; 3],
    pub total_iterations: usize,
    /// Mean loss since the previous checkpoint.
    pub loss: f64,
}

impl CheckpointMeta {
    pub fn from_checkpoint<T>(ck: &Checkpoint<T>) -> Result<Self> {
        serde_json::from_value(ck.extra.clone())
            .map_err(|e| Error::Format(format!("checkpoint lacks training metadata: {e}")))
    }
}

fn step_checkpoint_name(step: usize) -> String {
    format!("step_{step:08}.ckpt")
}

/// Latest periodic checkpoint under `run_dir`, if any.
pub fn latest_checkpoint(run_dir: &Path) -> Result<Option<PathBuf>> {
    let dir = run_dir.join(CHECKPOINT_DIR);
    if !dir.exists() {
        return Ok(None);
    }
    let mut names: Vec<String> = std::fs::read_dir(&dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("step_") && n.ends_with(".ckpt"))
        .collect();
    names.sort();
    Ok(names.pop().map(|n| dir.join(n)))
}

fn write_checkpoint<T: Real>(
    dir: &Path,
    params: &FieldParams<T>,
    moments: &Moments<T>,
    step: usize,
    meta: &CheckpointMeta,
    keep_last: usize,
    best: &mut Option<f64>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let ck = Checkpoint {
        params: params.cast::<f64>(),
        step: step as u64,
        moments: Some(Moments {
            step: moments.step,
            m: moments.m.iter().map(|b| b.mapv(|x| x.to_f64_lossy())).collect(),
            v: moments.v.iter().map(|b| b.mapv(|x| x.to_f64_lossy())).collect(),
        }),
        extra: serde_json::to_value(meta)?,
    };
    ck.save(&dir.join(step_checkpoint_name(step)))?;
    if best.is_none_or(|b| meta.loss < b) {
        *best = Some(meta.loss);
        ck.save(&dir.join("best.ckpt"))?;
    }
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("step_") && n.ends_with(".ckpt"))
        .collect();
    names.sort();
    while names.len() > keep_last {
        std::fs::remove_file(dir.join(names.remove(0)))?;
    }
    Ok(())
}

/// Train the fields on the training views of `ds`.
pub fn fit<T: Real>(ds: &Dataset, config: &TrainConfig, opts: FitOptions<'_>) -> Result<FitResult<T>> {
    config.validate()?;
    let data = TrainData::<T>::load(ds, config.mapping, config.outlier.gamma)?;
    fit_data(ds, &data, config, opts)
}

/// [`fit`] on preloaded data.
pub fn fit_data<T: Real>(
    ds: &Dataset,
    data: &TrainData<T>,
    config: &TrainConfig,
    opts: FitOptions<'_>,
) -> Result<FitResult<T>> {
    config.validate()?;
    let frame_count = data.frames.len();
    let epoch_iters = data.epoch_iterations(config.rays_per_batch);
    let total = config.iterations.unwrap_or(config.epochs * epoch_iters);
    let every = config.checkpoint_every.unwrap_or(epoch_iters);
    let shards = config.shards.unwrap_or_else(rayon::current_num_threads);
    let march = config.march();

    let (mut params, mut moments, start) = match &opts.resume {
        Some(ck) => {
            if ck.params.config != config.field || ck.params.frame_count() != frame_count {
                return Err(Error::Config("checkpoint does not match the field configuration".into()));
            }
            let params: FieldParams<T> = ck.params.cast();
            let moments = match &ck.moments {
                Some(m) => Moments {
                    step: m.step,
                    m: m.m.iter().map(|b| b.mapv(T::lit)).collect(),
                    v: m.v.iter().map(|b| b.mapv(T::lit)).collect(),
                },
                None => adam_state(&params),
            };
            (params, moments, ck.step as usize)
        }
        None => {
            let p = init_params::<T>(&config.field, frame_count, config.seed)?;
            let m = adam_state(&p);
            (p, m, 0)
        }
    };

    let mut log_file = match &opts.run_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(dir.join(LOG_FILE))?,
            )
        }
        None => None,
    };
    let meta_base = CheckpointMeta {
        train: config.clone(),
        train_frames: data.frames.iter().map(|f| f.dataset_frame).collect(),
        mean_translation: ds.mean_train_translation()?.to_array(),
        total_iterations: total,
        loss: 0.0,
    };
    let mut best: Option<f64> = None;
    let mut window = (0.0, 0usize);
    let mut log = Vec::new();
    let t0 = Instant::now();
    for step in start..total {
        let step_seed = mix(config.seed, step as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed);
        let mut batch = sample_ray_batch(data, config.rays_per_batch, config.face_fraction, &mut rng)?;
        if config.random_background {
            let color = [(); 3].map(|_| T::lit(rng.random::<f64>()));
            batch.recolor_background(data, color);
        }
        let (loss, mut grads) = batch_gradients(&params, data, &batch, &march, shards, mix(step_seed, 1))?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at iteration {step}")));
        }
        if let Some(c) = config.clip_norm {
            clip_global_norm(&mut grads, c);
        }
        let lr = lr_schedule(step, total, config.lr, config.lr_decay);
        adam_step(params.blocks_mut(), &grads, &mut moments, lr, &config.adam)?;
        let rec = LogRecord {
            iter: step,
            epoch: step / epoch_iters,
            loss,
            lr,
            wall_ms: t0.elapsed().as_millis() as u64,
        };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&rec)?)?;
        }
        if let Some(cb) = opts.on_iter {
            cb(&rec);
        }
        log.push(rec);
        window.0 += loss;
        window.1 += 1;
        let done = step + 1;
        if let Some(dir) = &opts.run_dir {
            if done % every == 0 || done == total {
                let meta = CheckpointMeta {
                    loss: window.0 / window.1 as f64,
                    ..meta_base.clone()
                };
                write_checkpoint(&dir.join(CHECKPOINT_DIR), &params, &moments, done, &meta, config.keep_last, &mut best)?;
                window = (0.0, 0);
            }
        }
    }
    if let Some(dir) = &opts.run_dir {
        // A resumed run that was already complete still leaves a final checkpoint.
        if start >= total {
            let meta = CheckpointMeta {
                loss: f64::NAN,
                ..meta_base
            };
            if latest_checkpoint(dir)?.is_none() {
                write_checkpoint(&dir.join(CHECKPOINT_DIR), &params, &moments, total, &meta, config.keep_last, &mut best)?;
            }
        }
    }
    Ok(FitResult {
        params,
        moments,
        step: total.max(start),
        log,
    })
}
