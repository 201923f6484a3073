use std::sync::Arc;

use crate::barymap::OutlierBounds;
use crate::error::{Error, Result};
use crate::fields::{body_samples, light_rows, lightness_rows, pose_feature, FieldParams, Latent};
use crate::imaging::{Image, Mask};
use crate::linalg::Vec3;
use crate::mesh::{lbs_pose, Pose, SkinnedMesh};
use crate::metrics::{mean_masked_color, projected_bbox_mask, score, EvalReport};
use crate::render::{
    map_depths, render_image, world_normal, CanonicalSpace, FrameContext, FrameGeometry, LatentSource, Mapping,
    Ray, RenderConfig, RenderedImage,
};
use crate::scalar::Real;
use crate::synth::{Dataset, PosedScene};

/// Frame context for a pose outside the training set: zero latent, and
/// lighting queried as if the avatar stood at `mean_translation`.
pub fn novel_pose_context<T: Real>(
    pose: &Pose<T>,
    mean_translation: Vec3<T>,
    mesh: &Arc<SkinnedMesh<T>>,
    canonical: &CanonicalSpace<T>,
    mapping: Mapping,
    dilation: T,
) -> Result<FrameContext<T>> {
    let world = lbs_pose(mesh, pose)?;
    Ok(FrameContext {
        geometry: FrameGeometry::new(world, canonical, mapping, dilation)?,
        latent: LatentSource::Zero,
        light_offset: mean_translation - pose.root_translation,
    })
}

/// One (frame, camera) pair of the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ViewId {
    pub frame: usize,
    pub camera: usize,
}

fn cross(frames: &[usize], cameras: &[usize]) -> Vec<ViewId> {
    frames
        .iter()
        .flat_map(|&frame| cameras.iter().map(move |&camera| ViewId { frame, camera }))
        .collect()
}

/// Training frames seen from training cameras.
pub fn training_views(ds: &Dataset) -> Vec<ViewId> {
    cross(&ds.train_frames(), &ds.train_cameras())
}

/// Training frames seen from held-out cameras.
pub fn novel_view_views(ds: &Dataset) -> Vec<ViewId> {
    cross(&ds.train_frames(), &ds.heldout_cameras())
}

/// Held-out poses seen from training cameras.
pub fn novel_pose_views(ds: &Dataset) -> Vec<ViewId> {
    cross(&ds.novel_pose_frames(), &ds.train_cameras())
}

/// Evaluation mask: the projected bounding box of the posed proxy.
pub fn eval_mask(ds: &Dataset, view: ViewId) -> Result<Mask> {
    let posed = lbs_pose(&ds.mesh, &ds.pose(view.frame)?)?;
    Ok(projected_bbox_mask(&ds.camera(view.camera)?, &posed))
}

fn view_name(v: ViewId) -> String {
    format!("f{}_c{}", v.frame, v.camera)
}

/// Predictions and their scores.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub views: Vec<ViewId>,
    pub predictions: Vec<Image>,
}

fn score_views(ds: &Dataset, views: &[ViewId], preds: Vec<Image>) -> Result<Evaluation> {
    let mut scores = Vec::with_capacity(views.len());
    for (v, p) in views.iter().zip(&preds) {
        let truth = ds.image(v.frame, v.camera)?;
        scores.push(score(&view_name(*v), p, &truth, &eval_mask(ds, *v)?)?);
    }
    Ok(Evaluation {
        report: EvalReport::new(scores)?,
        views: views.to_vec(),
        predictions: preds,
    })
}

/// Renders dataset views with trained parameters.
pub struct Evaluator<'a, T> {
    pub ds: &'a Dataset,
    pub params: &'a FieldParams<T>,
    pub mesh: Arc<SkinnedMesh<T>>,
    pub canonical: CanonicalSpace<T>,
    pub mapping: Mapping,
    pub dilation: T,
    pub render: RenderConfig,
    pub mean_translation: Vec3<T>,
    train_frames: Vec<usize>,
}

impl<'a, T: Real> Evaluator<'a, T> {
    pub fn new(
        ds: &'a Dataset,
        params: &'a FieldParams<T>,
        mapping: Mapping,
        outlier: OutlierBounds,
        samples_per_ray: usize,
    ) -> Result<Self> {
        let train_frames = ds.train_frames();
        if params.frame_count() != train_frames.len() {
            return Err(Error::Config(format!(
                "parameters hold {} latent rows, dataset has {} training frames",
                params.frame_count(),
                train_frames.len()
            )));
        }
        let mesh = Arc::new(ds.mesh.cast::<T>());
        let canonical = CanonicalSpace::new(&mesh, &ds.canonical_pose()?.cast())?;
        let mut render = RenderConfig {
            background: ds.light.background,
            ..RenderConfig::default()
        };
        render.march.samples_per_ray = samples_per_ray;
        render.march.outlier = outlier;
        Ok(Evaluator {
            ds,
            params,
            mesh,
            canonical,
            mapping,
            dilation: T::lit(outlier.gamma),
            render,
            mean_translation: ds.mean_train_translation()?.cast(),
            train_frames,
        })
    }

    /// Context of a dataset frame: its own latent row for training frames,
    /// the novel-pose protocol otherwise.
    pub fn context(&self, frame: usize) -> Result<FrameContext<T>> {
        let pose: Pose<T> = self.ds.pose(frame)?.cast();
        match self.train_frames.iter().position(|&f| f == frame) {
            Some(row) => Ok(FrameContext {
                geometry: FrameGeometry::new(lbs_pose(&self.mesh, &pose)?, &self.canonical, self.mapping, self.dilation)?,
                latent: LatentSource::Frame(row),
                light_offset: Vec3::zero(),
            }),
            None => self.pose_context(&pose),
        }
    }

    /// Context of an arbitrary pose under the novel-pose protocol.
    pub fn pose_context(&self, pose: &Pose<T>) -> Result<FrameContext<T>> {
        novel_pose_context(pose, self.mean_translation, &self.mesh, &self.canonical, self.mapping, self.dilation)
    }

    pub fn render_context(&self, ctx: &FrameContext<T>, camera: usize) -> Result<RenderedImage> {
        render_image(&self.ds.camera(camera)?.cast(), ctx, &self.canonical, self.params, &self.render)
    }

    pub fn render(&self, view: ViewId) -> Result<RenderedImage> {
        self.render_context(&self.context(view.frame)?, view.camera)
    }

    pub fn evaluate(&self, views: &[ViewId]) -> Result<Evaluation> {
        let mut preds = Vec::with_capacity(views.len());
        let mut cached: Option<(usize, FrameContext<T>)> = None;
        for v in views {
            if cached.as_ref().is_none_or(|(f, _)| *f != v.frame) {
                cached = Some((v.frame, self.context(v.frame)?));
            }
            let ctx = &cached.as_ref().expect("context").1;
            preds.push(self.render_context(ctx, v.camera)?.image);
        }
        score_views(self.ds, views, preds)
    }
}

/// Every view filled with the mean foreground color of the training images.
pub fn constant_baseline(ds: &Dataset, views: &[ViewId]) -> Result<Evaluation> {
    let mut pairs = Vec::new();
    for v in training_views(ds) {
        pairs.push((ds.image(v.frame, v.camera)?, ds.mask(v.frame, v.camera)?));
    }
    let refs: Vec<(&Image, &Mask)> = pairs.iter().map(|(i, m)| (i, m)).collect();
    let color = mean_masked_color(&refs)?;
    let preds = views
        .iter()
        .map(|v| {
            let cam = &ds.cameras[v.camera];
            Image::filled(cam.width, cam.height, color)
        })
        .collect();
    score_views(ds, views, preds)
}

/// Which normal enters the lighting network when probing surface lightness.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NormalSource {
    /// The density-gradient normal the renderer uses.
    #[default]
    Model,
    /// The interpolated mesh normal the oracle shades with.
    Oracle,
}

/// Predicted lightness next to the oracle Lambert factor at one surface point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LightnessSample {
    pub predicted: f64,
    pub oracle: f64,
}

/// Probe the lighting network at every visible surface point of the given
/// training views (one point per foreground pixel).
pub fn surface_lightness<T: Real>(
    ds: &Dataset,
    params: &FieldParams<T>,
    views: &[ViewId],
    mapping: Mapping,
    outlier: OutlierBounds,
    normals: NormalSource,
) -> Result<Vec<LightnessSample>> {
    let train = ds.train_frames();
    let mesh = Arc::new(ds.mesh.cast::<T>());
    let canonical = CanonicalSpace::new(&mesh, &ds.canonical_pose()?.cast())?;
    let light = ds.light.light;
    let mut out = Vec::new();
    for v in views {
        let row = train
            .iter()
            .position(|&f| f == v.frame)
            .ok_or_else(|| Error::InvalidInput(format!("frame {} is not a training frame", v.frame)))?;
        let pose64 = ds.pose(v.frame)?;
        let scene = PosedScene::new(lbs_pose(&ds.mesh, &pose64)?, &ds.albedo);
        let pose: Pose<T> = pose64.cast();
        let geom = FrameGeometry::new(lbs_pose(&mesh, &pose)?, &canonical, mapping, T::lit(outlier.gamma))?;
        let cam = ds.camera(v.camera)?;
        let origin = cam.center();
        let feature = pose_feature(params, &pose)?;

        let mut samples = Vec::new();
        let mut oracle = Vec::new();
        let mut oracle_normals = Vec::new();
        let mut dirs = Vec::new();
        for (x, y) in ds.mask(v.frame, v.camera)?.pixels() {
            let dir = cam.pixel_direction(x, y)?;
            let Some(hit) = scene.trace(origin, dir) else { continue };
            let sp = scene.shading_point(origin, dir, &hit);
            let ray = Ray {
                origin: origin.cast::<T>(),
                dir: dir.cast::<T>(),
                pixel: (x, y),
                frame: v.frame,
            };
            let m = map_depths(&ray, vec![T::lit(hit.t)], &geom, &canonical, &outlier)?;
            let Some(s) = m.samples.into_iter().next().flatten() else { continue };
            samples.push(s);
            oracle.push(light.lambert_factor(sp.point, sp.normal));
            oracle_normals.push(sp.normal.cast::<T>());
            dirs.push(ray.dir);
        }
        if samples.is_empty() {
            continue;
        }
        let n: Vec<Vec3<T>> = match normals {
            NormalSource::Oracle => oracle_normals,
            NormalSource::Model => {
                let points: Vec<Vec3<T>> = samples.iter().map(|s| s.p_c).collect();
                let body = body_samples(params, &points, &feature, Latent::Frame(row))?;
                samples
                    .iter()
                    .zip(&body.density_grad)
                    .map(|(s, g)| world_normal(s, *g, &geom, &canonical))
                    .collect::<Result<_>>()?
            }
        };
        let p: Vec<Vec3<T>> = samples.iter().map(|s| s.p_w).collect();
        let s = lightness_rows(params, &light_rows(&p, &dirs, &n))?;
        out.extend(s.iter().zip(oracle).map(|(s, o)| LightnessSample {
            predicted: s.to_f64_lossy(),
            oracle: o,
        }));
    }
    Ok(out)
}

/// Pearson correlation; `None` when either series is constant or too short.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / (saa * sbb).sqrt())
}

