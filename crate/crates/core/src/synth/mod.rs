//! Synthetic ground truth: a posed capsule body traced exactly and shaded
//! by a point light with an ambient term.

mod dataset;

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Image, Mask};
use crate::linalg::{vec3, Vec3};
use crate::mesh::{canonical_pose, gen_capsule_body, lbs_pose, BodyPoseParams, BodySpec, Pose, PosedMesh, Region, SkinnedMesh};
use crate::render::{Camera, FaceBoxes};

pub use dataset::{
    frame_file_name, AlbedoFile, CamerasFile, Dataset, FrameRecord, LightFile, PoseRecord, PosesFile, Split,
    DATASET_FORMAT_VERSION,
};

/// Point light plus ambient term, fixed in the world.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightSpec {
    pub position: [f64; 3],
    pub intensity: f64,
    pub ambient: f64,
}

impl Default for LightSpec {
    fn default() -> Self {
        LightSpec {
            position: [1.2, 1.8, 1.2],
            intensity: 2.5,
            ambient: 0.25,
        }
    }
}

impl LightSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.intensity >= 0.0 && self.ambient >= 0.0) || self.position.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("light intensity and ambient must be non-negative".into()));
        }
        Ok(())
    }

    /// `ambient + intensity·max(0, n·l)/r²` at surface point `x` with unit normal `n`.
    pub fn lambert_factor(&self, x: Vec3<f64>, n: Vec3<f64>) -> f64 {
        let to_light = Vec3::from_f64(self.position) - x;
        let r2 = to_light.norm_squared();
        if r2 <= 0.0 {
            return self.ambient;
        }
        let cos = n.dot(to_light / r2.sqrt()).max(0.0);
        self.ambient + self.intensity * cos / r2
    }
}

/// Everything needed to render ground truth images.
#[derive(Clone, Debug)]
pub struct Scene {
    pub mesh: Arc<SkinnedMesh<f64>>,
    pub poses: Vec<Pose<f64>>,
    pub cameras: Vec<Camera<f64>>,
    pub light: LightSpec,
    /// Per-vertex albedo.
    pub albedo: Vec<[f64; 3]>,
    pub background: [f64; 3],
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.light.validate()?;
        if self.albedo.len() != self.mesh.vertices.len() {
            return Err(Error::InvalidInput("albedo count does not match vertex count".into()));
        }
        for p in &self.poses {
            p.validate(self.mesh.joint_count())?;
        }
        for c in &self.cameras {
            c.validate()?;
        }
        Ok(())
    }
}

/// A rendered ground truth view.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub image: Image,
    pub mask: Mask,
    pub face_mask: Mask,
}

/// Closest ray–triangle hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceHit {
    pub t: f64,
    pub face: usize,
    /// Barycentric weights of vertices 1 and 2.
    pub b1: f64,
    pub b2: f64,
}

/// Möller–Trumbore; returns `(t, b1, b2)` for hits with `t > eps`.
pub fn intersect_triangle(origin: Vec3<f64>, dir: Vec3<f64>, tri: [Vec3<f64>; 3]) -> Option<(f64, f64, f64)> {
    const EPS: f64 = 1e-12;
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(e2);
    let det = e1.dot(p);
    if det.abs() < EPS {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let b1 = s.dot(p) * inv;
    if !(0.0..=1.0).contains(&b1) {
        return None;
    }
    let q = s.cross(e1);
    let b2 = dir.dot(q) * inv;
    if b2 < 0.0 || b1 + b2 > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv;
    (t > 1e-9).then_some((t, b1, b2))
}

/// Exact closest hit of a ray against the posed mesh.
pub fn trace(posed: &PosedMesh<f64>, boxes: &FaceBoxes<f64>, origin: Vec3<f64>, dir: Vec3<f64>) -> Option<SurfaceHit> {
    let mut best: Option<SurfaceHit> = None;
    boxes.for_each_candidate(origin, dir, |face| {
        if let Some((t, b1, b2)) = intersect_triangle(origin, dir, posed.face_vertices(face)) {
            let closer = match &best {
                None => true,
                Some(h) => t < h.t || (t == h.t && face < h.face),
            };
            if closer {
                best = Some(SurfaceHit { t, face, b1, b2 });
            }
        }
    });
    best
}

/// Area-weighted vertex normals of a posed mesh.
pub fn vertex_normals(posed: &PosedMesh<f64>) -> Vec<Vec3<f64>> {
    let mut acc = vec![Vec3::zero(); posed.vertices.len()];
    for f in posed.faces() {
        let [a, b, c] = f.map(|i| posed.vertices[i]);
        let n = (b - a).cross(c - a);
        for &i in f {
            acc[i] += n;
        }
    }
    acc.into_iter().map(|n| n.try_normalize(1e-300).unwrap_or(vec3(0.0, 0.0, 1.0))).collect()
}

/// Surface attributes at a hit: point, interpolated unit normal, albedo.
pub struct ShadingPoint {
    pub point: Vec3<f64>,
    pub normal: Vec3<f64>,
    pub albedo: [f64; 3],
}

/// Precomputed per-pose tracing state.
pub struct PosedScene<'a> {
    pub posed: PosedMesh<f64>,
    pub boxes: FaceBoxes<f64>,
    normals: Vec<Vec3<f64>>,
    albedo: &'a [[f64; 3]],
}

impl<'a> PosedScene<'a> {
    pub fn new(posed: PosedMesh<f64>, albedo: &'a [[f64; 3]]) -> Self {
        PosedScene {
            boxes: FaceBoxes::new(&posed, 1e-9),
            normals: vertex_normals(&posed),
            posed,
            albedo,
        }
    }

    pub fn trace(&self, origin: Vec3<f64>, dir: Vec3<f64>) -> Option<SurfaceHit> {
        trace(&self.posed, &self.boxes, origin, dir)
    }

    pub fn shading_point(&self, origin: Vec3<f64>, dir: Vec3<f64>, hit: &SurfaceHit) -> ShadingPoint {
        let f = self.posed.faces()[hit.face];
        let w = [1.0 - hit.b1 - hit.b2, hit.b1, hit.b2];
        let mut n = Vec3::zero();
        let mut albedo = [0.0; 3];
        for k in 0..3 {
            n += self.normals[f[k]] * w[k];
            for c in 0..3 {
                albedo[c] += self.albedo[f[k]][c] * w[k];
            }
        }
        ShadingPoint {
            point: origin + dir * hit.t,
            normal: n.try_normalize(1e-300).unwrap_or(vec3(0.0, 0.0, 1.0)),
            albedo,
        }
    }
}

/// Trace every pixel of `camera` against `scene`.
pub fn render_posed(scene: &PosedScene<'_>, light: &LightSpec, background: [f64; 3], camera: &Camera<f64>) -> Result<GroundTruth> {
    let (w, h) = (camera.width, camera.height);
    let origin = camera.center();
    let rows: Vec<Vec<Option<([f64; 3], bool)>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let dir = camera.pixel_direction(x, y)?;
                    Ok(scene.trace(origin, dir).map(|hit| {
                        let sp = scene.shading_point(origin, dir, &hit);
                        let k = light.lambert_factor(sp.point, sp.normal);
                        let head = scene.posed.source.region_labels[hit.face] == Region::Head;
                        (sp.albedo.map(|a| (a * k).clamp(0.0, 1.0)), head)
                    }))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut image = Image::filled(w, h, background);
    let mut mask = Mask::empty(w, h);
    let mut face_mask = Mask::empty(w, h);
    for (y, row) in rows.iter().enumerate() {
        for (x, px) in row.iter().enumerate() {
            if let Some((c, head)) = px {
                image.set(x, y, *c);
                mask.set(x, y, true);
                face_mask.set(x, y, *head);
            }
        }
    }
    Ok(GroundTruth { image, mask, face_mask })
}

/// Ground truth for one frame and camera of a scene.
pub fn render_groundtruth(scene: &Scene, frame: usize, camera: usize) -> Result<GroundTruth> {
    let pose = scene
        .poses
        .get(frame)
        .ok_or_else(|| Error::InvalidInput(format!("frame {frame} out of range")))?;
    let cam = scene
        .cameras
        .get(camera)
        .ok_or_else(|| Error::InvalidInput(format!("camera {camera} out of range")))?;
    let posed = lbs_pose(&scene.mesh, pose)?;
    render_posed(&PosedScene::new(posed, &scene.albedo), &scene.light, scene.background, cam)
}

/// Smooth color bands over the rest shape, with a uniform head color.
pub fn default_albedo(mesh: &SkinnedMesh<f64>) -> Vec<[f64; 3]> {
    let mut head = vec![false; mesh.vertices.len()];
    for (f, label) in mesh.faces.iter().zip(&mesh.region_labels) {
        if *label == Region::Head {
            for &i in f {
                head[i] = true;
            }
        }
    }
    mesh.vertices
        .iter()
        .zip(head)
        .map(|(p, is_head)| {
            if is_head {
                [0.92, 0.76, 0.6]
            } else {
                [
                    0.55 + 0.3 * (4.0 * p.y + 1.3).sin(),
                    0.45 + 0.25 * (6.0 * p.x + 3.0 * p.z).cos(),
                    0.45 + 0.3 * (3.0 * p.y - 2.0 * p.x + 0.5).sin(),
                ]
            }
        })
        .collect()
}

/// Largest per-joint rotation angle between two poses, in radians.
pub fn max_joint_angle(a: &Pose<f64>, b: &Pose<f64>) -> f64 {
    a.joint_rotations
        .iter()
        .zip(&b.joint_rotations)
        .map(|(p, q)| p.angle_to(*q))
        .fold(0.0, f64::max)
}

/// Smallest [`max_joint_angle`] between `pose` and any pose in `set`.
pub fn distance_to_set(pose: &Pose<f64>, set: &[Pose<f64>]) -> f64 {
    set.iter().map(|p| max_joint_angle(pose, p)).fold(f64::INFINITY, f64::min)
}

/// Parameters of the generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub body: BodySpec,
    pub image_size: usize,
    pub focal: f64,
    pub ring_radius: f64,
    pub ring_height: f64,
    pub look_at: [f64; 3],
    pub train_cameras: usize,
    /// Ring angle of the held-out camera, degrees.
    pub heldout_camera_deg: f64,
    pub train_frames: usize,
    pub light: LightSpec,
    pub background: [f64; 3],
    /// Minimum joint-angle distance of a held-out pose to every training pose, degrees.
    pub min_novel_pose_deg: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            body: BodySpec::default(),
            image_size: 64,
            focal: 80.0,
            ring_radius: 3.0,
            ring_height: 1.0,
            look_at: [0.0, 0.9, 0.0],
            train_cameras: 4,
            heldout_camera_deg: 45.0,
            train_frames: 10,
            light: LightSpec::default(),
            background: [0.0; 3],
            min_novel_pose_deg: 30.0,
        }
    }
}

/// Training trajectory: one walking-like cycle with a seeded phase, turning
/// back and forth by about 40 degrees.
pub fn training_pose_params(count: usize, seed: u64) -> Vec<BodyPoseParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let drift: f64 = rng.random_range(-0.05..0.05);
    (0..count)
        .map(|i| {
            let a = phase + std::f64::consts::TAU * i as f64 / count as f64;
            let s = a.sin();
            let c = a.cos();
            let progress = if count > 1 { i as f64 / (count - 1) as f64 - 0.5 } else { 0.0 };
            BodyPoseParams {
                root_yaw: 0.7 * c,
                root_translation: [0.06 * s + drift, 0.01 * c, 0.2 * progress],
                spine_bend: 0.05 + 0.04 * c,
                spine_twist: 0.1 * s,
                neck_nod: 0.08 * c,
                shoulder_abduct: [0.1 * c, -0.1 * c],
                shoulder_flex: [-0.3 * s, 0.3 * s],
                elbow_flex: [0.35 + 0.15 * c, 0.35 - 0.15 * c],
                hip_flex: [0.35 * s, -0.35 * s],
                hip_abduct: [0.03 * c, 0.03 * c],
                knee_flex: [0.2 + 0.2 * c.max(0.0), 0.2 + 0.2 * (-c).max(0.0)],
            }
        })
        .collect()
}

/// Three poses well outside the training trajectory.
pub fn novel_pose_params(translation: [f64; 3]) -> Vec<BodyPoseParams> {
    let base = BodyPoseParams {
        root_translation: translation,
        elbow_flex: [0.3, 0.3],
        knee_flex: [0.2, 0.2],
        ..Default::default()
    };
    vec![
        // Reaching forward with the left arm.
        BodyPoseParams {
            shoulder_flex: [1.1, -0.1],
            elbow_flex: [0.2, 0.6],
            ..base.clone()
        },
        // Raised knee.
        BodyPoseParams {
            hip_flex: [0.95, -0.1],
            knee_flex: [1.2, 0.15],
            spine_bend: 0.1,
            ..base.clone()
        },
        // Arms raised sideways, torso leaning.
        BodyPoseParams {
            shoulder_abduct: [0.75, 0.75],
            spine_bend: 0.25,
            neck_nod: -0.2,
            ..base
        },
    ]
}

/// Poses of a scene with their split.
pub struct ScenePoses {
    pub train: Vec<Pose<f64>>,
    pub novel: Vec<Pose<f64>>,
}

impl ScenePoses {
    pub fn generate(spec: &SceneSpec, seed: u64) -> Result<Self> {
        let train: Vec<Pose<f64>> = training_pose_params(spec.train_frames, seed)
            .iter()
            .map(|p| p.to_pose())
            .collect();
        let mean = mean_translation(&train);
        let novel: Vec<Pose<f64>> = novel_pose_params(mean.to_array()).iter().map(|p| p.to_pose()).collect();
        for (i, p) in novel.iter().enumerate() {
            let d = distance_to_set(p, &train).to_degrees();
            if d < spec.min_novel_pose_deg {
                return Err(Error::InvalidSpec(format!(
                    "held-out pose {i} is only {d:.1} degrees from the training set"
                )));
            }
        }
        Ok(ScenePoses { train, novel })
    }
}

pub fn mean_translation(poses: &[Pose<f64>]) -> Vec3<f64> {
    if poses.is_empty() {
        return Vec3::zero();
    }
    poses.iter().fold(Vec3::zero(), |acc, p| acc + p.root_translation) / poses.len() as f64
}

/// Training ring cameras followed by the held-out camera.
pub fn ring_cameras(spec: &SceneSpec) -> Result<Vec<Camera<f64>>> {
    let target = Vec3::from_f64(spec.look_at);
    let at = |deg: f64| {
        let a = deg.to_radians();
        let eye = vec3(spec.ring_radius * a.sin(), spec.ring_height, spec.ring_radius * a.cos());
        Camera::look_at(eye, target, spec.focal, spec.image_size, spec.image_size)
    };
    let mut out = (0..spec.train_cameras)
        .map(|i| at(360.0 * i as f64 / spec.train_cameras as f64))
        .collect::<Result<Vec<_>>>()?;
    out.push(at(spec.heldout_camera_deg)?);
    Ok(out)
}

/// Summary of a written dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSummary {
    pub frames: usize,
    pub cameras: usize,
    pub images: usize,
}

/// Generate the synthetic scene and write it under `out`.
pub fn make_dataset(spec: &SceneSpec, seed: u64, out: &Path) -> Result<DatasetSummary> {
    spec.light.validate()?;
    if spec.train_cameras == 0 || spec.train_frames == 0 || spec.image_size == 0 {
        return Err(Error::InvalidSpec("camera, frame and image counts must be positive".into()));
    }
    let mesh = Arc::new(gen_capsule_body::<f64>(&spec.body)?);
    let poses = ScenePoses::generate(spec, seed)?;
    let cameras = ring_cameras(spec)?;
    let albedo = default_albedo(&mesh);
    let scene = Scene {
        mesh: mesh.clone(),
        poses: poses.train.iter().chain(&poses.novel).cloned().collect(),
        cameras: cameras.clone(),
        light: spec.light,
        albedo: albedo.clone(),
        background: spec.background,
    };
    scene.validate()?;

    for sub in ["frames", "masks", "face_masks"] {
        std::fs::create_dir_all(out.join(sub))?;
    }
    let n_train = poses.train.len();
    let mut frames = Vec::new();
    for (i, p) in scene.poses.iter().enumerate() {
        frames.push(FrameRecord {
            index: i,
            split: if i < n_train { Split::Train } else { Split::NovelPose },
            pose: PoseRecord::from_pose(p),
        });
    }
    let canonical: Pose<f64> = canonical_pose();
    PosesFile {
        version: DATASET_FORMAT_VERSION,
        joint_count: mesh.joint_count(),
        canonical: PoseRecord::from_pose(&canonical),
        frames,
    }
    .save(&out.join("poses.json"))?;
    CamerasFile {
        version: DATASET_FORMAT_VERSION,
        cameras: cameras
            .iter()
            .enumerate()
            .map(|(i, c)| crate::render::CameraFile::from_camera(&format!("c{i}"), c, i < spec.train_cameras))
            .collect(),
    }
    .save(&out.join("cameras.json"))?;
    LightFile {
        version: DATASET_FORMAT_VERSION,
        light: spec.light,
        background: spec.background,
    }
    .save(&out.join("light.json"))?;
    AlbedoFile {
        version: DATASET_FORMAT_VERSION,
        colors: albedo,
    }
    .save(&out.join("albedo.json"))?;
    crate::mesh::MeshFile::from_mesh(&*mesh).save(&out.join("mesh.json"))?;

    let mut images = 0;
    for (f, pose) in scene.poses.iter().enumerate() {
        let ps = PosedScene::new(lbs_pose(&mesh, pose)?, &scene.albedo);
        for (c, cam) in cameras.iter().enumerate() {
            let gt = render_posed(&ps, &scene.light, scene.background, cam)?;
            let name = frame_file_name(f, c);
            gt.image.save_png(&out.join("frames").join(&name))?;
            gt.mask.save_png(&out.join("masks").join(&name))?;
            gt.face_mask.save_png(&out.join("face_masks").join(&name))?;
            images += 1;
        }
    }
    Ok(DatasetSummary {
        frames: scene.poses.len(),
        cameras: cameras.len(),
        images,
    })
}
