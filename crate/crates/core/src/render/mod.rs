//! Rays, geometry-guided sampling, the dual-space per-sample pipeline and
//! volume rendering quadrature.

mod bounds;
mod camera;

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barymap::{build_face_index, is_outlier, FaceIndex, InverseLbsMapper, LocalCoords, MeshFrames, OutlierBounds};
use crate::error::{Error, Result};
use crate::fields::{
    body_samples, density_gradient, density_normal, light_rows, BodySamples, BoundParams, CompositeLayout,
    FieldParams, Latent, PoseFeature, Tape, Var,
};
use crate::imaging::{gray16_png_bytes, Image};
use crate::linalg::{Mat3, Vec3};
use crate::mesh::{lbs_pose, Pose, PosedMesh, SkinnedMesh};
use crate::scalar::Real;

pub use bounds::{ray_bounds, FaceBoxes};
pub use camera::{generate_rays, Camera, CameraFile, Ray};

/// Stratified depths in `[near, far]`: bin midpoints, or one uniform draw
/// per bin when `jitter` is set.
pub fn sample_points<T: Real, R: Rng>(near: T, far: T, k: usize, jitter: bool, rng: &mut R) -> Result<Vec<T>> {
    if !(near < far) || !near.is_finite() || !far.is_finite() {
        return Err(Error::InvalidInterval {
            near: near.to_f64_lossy(),
            far: far.to_f64_lossy(),
        });
    }
    if k < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples per ray, got {k}")));
    }
    let width = (far - near) / T::from_usize_lossy(k);
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let offset = if jitter {
            T::lit(rng.random::<f64>())
        } else {
            T::lit(0.5)
        };
        out.push(near + width * (T::from_usize_lossy(i) + offset));
    }
    Ok(out)
}

/// `δ_k = m_{k+1} − m_k`, with the last interval repeating the previous one.
pub fn interval_lengths<T: Real>(depths: &[T]) -> Vec<T> {
    let n = depths.len();
    let mut out: Vec<T> = depths.windows(2).map(|w| w[1] - w[0]).collect();
    if n >= 2 {
        out.push(out[n - 2]);
    } else if n == 1 {
        out.push(T::zero());
    }
    out
}

/// Per-ray samples feeding the volume rendering sum.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch<T> {
    pub depths: Vec<T>,
    pub deltas: Vec<T>,
    pub sigma: Vec<T>,
    pub color: Vec<[T; 3]>,
    pub outlier: Vec<bool>,
}

/// Transmittance before each sample and after the last one.
pub fn transmittance<T: Real>(batch: &SampleBatch<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(batch.sigma.len() + 1);
    let mut acc = T::zero();
    out.push(T::one());
    for (s, d) in batch.sigma.iter().zip(&batch.deltas) {
        acc += *s * *d;
        out.push((-acc).exp());
    }
    out
}

/// `C = Σ T_k α(σ_k δ_k) c_k + T_{K+1}·background` and the accumulated
/// opacity `1 − T_{K+1}`. Colors are clamped to `[0, 1]` here.
pub fn composite<T: Real>(batch: &SampleBatch<T>, background: [T; 3]) -> ([T; 3], T) {
    let trans = transmittance(batch);
    let mut rgb = [T::zero(); 3];
    for k in 0..batch.sigma.len() {
        let w = trans[k] - trans[k + 1];
        for c in 0..3 {
            rgb[c] += w * batch.color[k][c].max(T::zero()).min(T::one());
        }
    }
    let last = *trans.last().expect("non-empty");
    for c in 0..3 {
        rgb[c] += last * background[c];
    }
    (rgb, T::one() - last)
}

/// How world points reach the canonical space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Mapping {
    #[default]
    Barycentric,
    /// Interpolated inverse skinning over the `k` nearest posed vertices.
    InverseLbs { k: usize },
}

/// The proxy mesh in the canonical pose.
#[derive(Clone, Debug)]
pub struct CanonicalSpace<T> {
    pub mesh: PosedMesh<T>,
    pub frames: MeshFrames<T>,
}

impl<T: Real> CanonicalSpace<T> {
    pub fn new(rest: &Arc<SkinnedMesh<T>>, canonical_pose: &Pose<T>) -> Result<Self> {
        let mesh = lbs_pose(rest, canonical_pose)?;
        let frames = MeshFrames::new(&mesh)?;
        Ok(CanonicalSpace { mesh, frames })
    }
}

/// Everything precomputed for rendering one posed frame.
#[derive(Clone, Debug)]
pub struct FrameGeometry<T> {
    pub world: PosedMesh<T>,
    pub frames: MeshFrames<T>,
    pub index: FaceIndex<T>,
    pub boxes: FaceBoxes<T>,
    inverse_lbs: Option<InverseLbsMapper<T>>,
}

impl<T: Real> FrameGeometry<T> {
    pub fn new(world: PosedMesh<T>, canonical: &CanonicalSpace<T>, mapping: Mapping, dilation: T) -> Result<Self> {
        if !world.corresponds_to(&canonical.mesh) {
            return Err(Error::Correspondence("frame and canonical meshes differ".into()));
        }
        let inverse_lbs = match mapping {
            Mapping::Barycentric => None,
            Mapping::InverseLbs { k } => Some(InverseLbsMapper::new(&world, &canonical.mesh.pose, k)?),
        };
        Ok(FrameGeometry {
            frames: MeshFrames::new(&world)?,
            index: build_face_index(&world)?,
            boxes: FaceBoxes::new(&world, dilation),
            world,
            inverse_lbs,
        })
    }

    pub fn mapping(&self) -> Mapping {
        match &self.inverse_lbs {
            None => Mapping::Barycentric,
            Some(m) => Mapping::InverseLbs { k: m.k() },
        }
    }
}

/// A sample that passed the outlier test, mapped to canonical space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MappedSample<T> {
    pub p_w: Vec3<T>,
    pub p_c: Vec3<T>,
    pub coords: LocalCoords<T>,
    /// Linear map taking canonical directions to world directions when the
    /// mapping is not barycentric.
    to_world: Option<Mat3<T>>,
}

/// Geometry stage of one ray.
#[derive(Clone, Debug)]
pub struct RayMarch<T> {
    pub ray: Ray<T>,
    pub depths: Vec<T>,
    pub deltas: Vec<T>,
    /// `None` marks an outlier.
    pub samples: Vec<Option<MappedSample<T>>>,
}

impl<T: Real> RayMarch<T> {
    pub fn kept(&self) -> usize {
        self.samples.iter().filter(|s| s.is_some()).count()
    }
}

/// Encode every depth against the world mesh, drop outliers and map the
/// rest to canonical space.
pub fn map_depths<T: Real>(
    ray: &Ray<T>,
    depths: Vec<T>,
    geom: &FrameGeometry<T>,
    canonical: &CanonicalSpace<T>,
    bounds: &OutlierBounds,
) -> Result<RayMarch<T>> {
    let deltas = interval_lengths(&depths);
    let mut samples = Vec::with_capacity(depths.len());
    for &m in &depths {
        let p_w = ray.origin + ray.dir * m;
        let face = geom.index.nearest_face(p_w);
        let coords = geom.frames.encode_on_face(face, p_w);
        if is_outlier(&coords, bounds) {
            samples.push(None);
            continue;
        }
        let sample = match &geom.inverse_lbs {
            None => MappedSample {
                p_w,
                p_c: canonical.frames.decode(&coords),
                coords,
                to_world: None,
            },
            Some(mapper) => {
                let a = mapper.transform_at(p_w)?;
                let inv = a
                    .linear
                    .try_inverse(T::lit(1e-12))
                    .ok_or(Error::SingularTransform(a.linear.det().to_f64_lossy()))?;
                MappedSample {
                    p_w,
                    p_c: a.apply(p_w),
                    coords,
                    to_world: Some(inv),
                }
            }
        };
        samples.push(Some(sample));
    }
    Ok(RayMarch {
        ray: *ray,
        depths,
        deltas,
        samples,
    })
}

/// Sampling settings shared by rendering and training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarchConfig {
    pub samples_per_ray: usize,
    pub jitter: bool,
    pub outlier: OutlierBounds,
}

impl Default for MarchConfig {
    fn default() -> Self {
        MarchConfig {
            samples_per_ray: 64,
            jitter: false,
            outlier: OutlierBounds::default(),
        }
    }
}

/// Bound the ray by the dilated proxy mesh and sample it; `None` on a miss.
pub fn march_ray<T: Real, R: Rng>(
    ray: &Ray<T>,
    geom: &FrameGeometry<T>,
    canonical: &CanonicalSpace<T>,
    config: &MarchConfig,
    rng: &mut R,
) -> Result<Option<RayMarch<T>>> {
    let Some((near, far)) = geom.boxes.intersect(ray.origin, ray.dir) else {
        return Ok(None);
    };
    if !(near < far) {
        return Ok(None);
    }
    let depths = sample_points(near, far, config.samples_per_ray, config.jitter, rng)?;
    map_depths(ray, depths, geom, canonical, &config.outlier).map(Some)
}

/// World-space normal of a kept sample from its canonical density gradient.
pub fn world_normal<T: Real>(
    sample: &MappedSample<T>,
    grad: Vec3<T>,
    geom: &FrameGeometry<T>,
    canonical: &CanonicalSpace<T>,
) -> Result<Vec3<T>> {
    let fallback = canonical.frames.frame(sample.coords.face_idx).unit_normal;
    let n_c = density_normal(grad, fallback);
    match sample.to_world {
        None => canonical.frames.map_direction_to(&geom.frames, &sample.coords, n_c),
        Some(m) => (m * n_c).try_normalize(T::lit(1e-12)).ok_or(Error::DegenerateDirection),
    }
}

/// Density/texture and shading functions evaluated by the pipeline.
pub trait SampleField<T: Real>: Sync {
    /// `σ`, `t` and `∇σ` at canonical points.
    fn body(&self, points: &[Vec3<T>]) -> Result<BodySamples<T>>;
    /// Colors from textures and lighting inputs `[p_w, d_w, n_w]` per row.
    fn shade(&self, light_rows: &Array2<T>, texture: &[[T; 3]]) -> Result<Vec<[T; 3]>>;
}

/// The learned fields with a fixed pose feature and latent.
pub struct NeuralField<'a, T> {
    pub params: &'a FieldParams<T>,
    pub feature: PoseFeature<T>,
    pub latent: LatentSource,
}

/// Latent conditioning of a rendered frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentSource {
    Frame(usize),
    Zero,
}

impl LatentSource {
    pub fn as_latent<'a, T>(self) -> Latent<'a, T> {
        match self {
            LatentSource::Frame(i) => Latent::Frame(i),
            LatentSource::Zero => Latent::Zero,
        }
    }
}

impl<'a, T: Real> NeuralField<'a, T> {
    pub fn new(params: &'a FieldParams<T>, pose: &Pose<T>, latent: LatentSource) -> Result<Self> {
        Ok(NeuralField {
            params,
            feature: crate::fields::pose_feature(params, pose)?,
            latent,
        })
    }
}

impl<T: Real> SampleField<T> for NeuralField<'_, T> {
    fn body(&self, points: &[Vec3<T>]) -> Result<BodySamples<T>> {
        body_samples(self.params, points, &self.feature, self.latent.as_latent())
    }

    fn shade(&self, rows: &Array2<T>, texture: &[[T; 3]]) -> Result<Vec<[T; 3]>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, self.latent.as_latent())?;
        let x = tape.leaf(rows.clone());
        let t = tape.leaf(texture_rows(texture));
        let (c, _) = self.params.shade_graph(&mut tape, &bound, x, t)?;
        Ok(tape.value(c).rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect())
    }
}

fn texture_rows<T: Real>(t: &[[T; 3]]) -> Array2<T> {
    Array2::from_shape_fn((t.len(), 3), |(i, c)| t[i][c])
}

fn kept_samples<T: Real>(marches: &[RayMarch<T>]) -> Vec<&MappedSample<T>> {
    marches.iter().flat_map(|m| m.samples.iter().flatten()).collect()
}

fn lighting_inputs<T: Real>(
    marches: &[RayMarch<T>],
    normals: &[Vec3<T>],
    light_offset: Vec3<T>,
) -> Array2<T> {
    let mut p = Vec::with_capacity(normals.len());
    let mut d = Vec::with_capacity(normals.len());
    for m in marches {
        for s in m.samples.iter().flatten() {
            p.push(s.p_w + light_offset);
            d.push(m.ray.dir);
        }
    }
    light_rows(&p, &d, normals)
}

/// Evaluate fields on all kept samples of `marches` and return one
/// [`SampleBatch`] per ray. Outliers get `σ = 0`, `c = 0`.
pub fn shade_marches<T: Real>(
    marches: &[RayMarch<T>],
    geom: &FrameGeometry<T>,
    canonical: &CanonicalSpace<T>,
    field: &dyn SampleField<T>,
    light_offset: Vec3<T>,
) -> Result<Vec<SampleBatch<T>>> {
    let kept = kept_samples(marches);
    let (sigma, colors) = if kept.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let points: Vec<Vec3<T>> = kept.iter().map(|s| s.p_c).collect();
        let body = field.body(&points)?;
        let normals = kept
            .iter()
            .zip(&body.density_grad)
            .map(|(s, g)| world_normal(s, *g, geom, canonical))
            .collect::<Result<Vec<_>>>()?;
        let rows = lighting_inputs(marches, &normals, light_offset);
        let colors = field.shade(&rows, &body.texture)?;
        (body.sigma, colors)
    };
    let mut next = 0;
    let mut out = Vec::with_capacity(marches.len());
    for m in marches {
        let n = m.depths.len();
        let mut batch = SampleBatch {
            depths: m.depths.clone(),
            deltas: m.deltas.clone(),
            sigma: vec![T::zero(); n],
            color: vec![[T::zero(); 3]; n],
            outlier: m.samples.iter().map(|s| s.is_none()).collect(),
        };
        for (k, s) in m.samples.iter().enumerate() {
            if s.is_some() {
                batch.sigma[k] = sigma[next];
                batch.color[k] = colors[next];
                next += 1;
            }
        }
        out.push(batch);
    }
    Ok(out)
}

/// Run the full per-sample pipeline on given depths along one ray.
pub fn evaluate_samples<T: Real>(
    depths: Vec<T>,
    ray: &Ray<T>,
    geom: &FrameGeometry<T>,
    canonical: &CanonicalSpace<T>,
    field: &dyn SampleField<T>,
    bounds: &OutlierBounds,
    light_offset: Vec3<T>,
) -> Result<SampleBatch<T>> {
    let m = map_depths(ray, depths, geom, canonical, bounds)?;
    Ok(shade_marches(std::slice::from_ref(&m), geom, canonical, field, light_offset)?
        .pop()
        .expect("one batch"))
}

/// Nodes recorded for a batch of rays.
#[derive(Clone, Copy, Debug)]
pub struct RecordedRays {
    /// `rays × 4`: RGB and opacity.
    pub output: Var,
    /// Scalar lightness per kept sample, when the lighting mode has one.
    pub lightness: Option<Var>,
    pub kept_samples: usize,
}

/// Record the differentiable pipeline for `marches` on `tape`.
///
/// Normals are computed from the density gradient and enter the lighting
/// network as constants.
#[allow(clippy::too_many_arguments)]
pub fn record_marches<T: Real>(
    tape: &mut Tape<T>,
    params: &FieldParams<T>,
    bound: &BoundParams,
    feature: Var,
    marches: &[RayMarch<T>],
    geom: &FrameGeometry<T>,
    canonical: &CanonicalSpace<T>,
    light_offset: Vec3<T>,
    background: [T; 3],
) -> Result<RecordedRays> {
    let kept = kept_samples(marches);
    let mut offsets = Vec::with_capacity(marches.len() + 1);
    let mut deltas = Vec::with_capacity(kept.len());
    offsets.push(0);
    for m in marches {
        for (k, s) in m.samples.iter().enumerate() {
            if s.is_some() {
                deltas.push(m.deltas[k]);
            }
        }
        offsets.push(deltas.len());
    }
    let layout = CompositeLayout {
        ray_offsets: offsets,
        deltas,
        background,
    };
    let points: Vec<Vec3<T>> = kept.iter().map(|s| s.p_c).collect();
    let p = tape.leaf(crate::fields::points_to_rows(&points));
    let (sigma, tex) = params.body_graph(tape, bound, p, feature)?;
    let grad = density_gradient(tape, sigma, p)?;
    let normals = kept
        .iter()
        .enumerate()
        .map(|(i, s)| world_normal(s, Vec3::from_array([grad[[i, 0]], grad[[i, 1]], grad[[i, 2]]]), geom, canonical))
        .collect::<Result<Vec<_>>>()?;
    let light = tape.leaf(lighting_inputs(marches, &normals, light_offset));
    let (color, lightness) = params.shade_graph(tape, bound, light, tex)?;
    let output = tape.composite(sigma, color, layout)?;
    Ok(RecordedRays {
        output,
        lightness,
        kept_samples: kept.len(),
    })
}

/// Settings of a full-image render.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub march: MarchConfig,
    pub background: [f64; 3],
    /// Rays evaluated together.
    pub chunk_rays: usize,
    /// Seeds jitter when `march.jitter` is set.
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            march: MarchConfig::default(),
            background: [0.0; 3],
            chunk_rays: 512,
            seed: 0,
        }
    }
}

/// Rendered color and accumulated opacity.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub image: Image,
    pub opacity: Vec<f64>,
}

impl RenderedImage {
    pub fn opacity_png_bytes(&self) -> Result<Vec<u8>> {
        gray16_png_bytes(self.image.width, self.image.height, &self.opacity)
    }
}

/// What a frame render needs besides the camera: the posed proxy, the
/// latent choice and the placement offset for lighting queries.
#[derive(Clone, Debug)]
pub struct FrameContext<T> {
    pub geometry: FrameGeometry<T>,
    pub latent: LatentSource,
    /// Added to world points before querying the lighting network.
    pub light_offset: Vec3<T>,
}

/// Render every pixel of `camera` with the learned fields.
pub fn render_image<T: Real>(
    camera: &Camera<T>,
    ctx: &FrameContext<T>,
    canonical: &CanonicalSpace<T>,
    params: &FieldParams<T>,
    config: &RenderConfig,
) -> Result<RenderedImage> {
    let field = NeuralField::new(params, &ctx.geometry.world.pose, ctx.latent)?;
    render_with_field(camera, ctx, canonical, &field, config)
}

/// Render every pixel of `camera` with an arbitrary field.
pub fn render_with_field<T: Real>(
    camera: &Camera<T>,
    ctx: &FrameContext<T>,
    canonical: &CanonicalSpace<T>,
    field: &dyn SampleField<T>,
    config: &RenderConfig,
) -> Result<RenderedImage> {
    let (w, h) = (camera.width, camera.height);
    let pixels: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).collect();
    let bg = config.background.map(T::lit);
    let chunk = config.chunk_rays.max(1);
    let results = pixels
        .par_chunks(chunk)
        .enumerate()
        .map(|(ci, px)| -> Result<Vec<([T; 3], T)>> {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (ci as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let rays = generate_rays(camera, px, 0)?;
            let mut slots: Vec<Option<usize>> = Vec::with_capacity(rays.len());
            let mut marches = Vec::new();
            for r in &rays {
                match march_ray(r, &ctx.geometry, canonical, &config.march, &mut rng)? {
                    Some(m) if m.kept() > 0 => {
                        slots.push(Some(marches.len()));
                        marches.push(m);
                    }
                    _ => slots.push(None),
                }
            }
            let batches = shade_marches(&marches, &ctx.geometry, canonical, field, ctx.light_offset)?;
            Ok(slots
                .iter()
                .map(|s| match s {
                    Some(i) => composite(&batches[*i], bg),
                    None => (bg, T::zero()),
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut image = Image::filled(w, h, config.background);
    let mut opacity = vec![0.0; w * h];
    for (i, (rgb, a)) in results.into_iter().flatten().enumerate() {
        image.data[i] = rgb.map(|v| v.to_f64_lossy());
        opacity[i] = a.to_f64_lossy();
    }
    Ok(RenderedImage { image, opacity })
}
