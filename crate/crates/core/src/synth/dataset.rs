use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::LightSpec;
use crate::error::{Error, Result};
use crate::imaging::{Image, Mask};
use crate::linalg::{Quat, Vec3};
use crate::mesh::{MeshFile, Pose, SkinnedMesh};
use crate::render::{Camera, CameraFile};

pub const DATASET_FORMAT_VERSION: u32 = 1;

pub fn frame_file_name(frame: usize, camera: usize) -> String {
    format!("f{frame}_c{camera}.png")
}

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn check_version(found: u32, what: &str) -> Result<()> {
    if found != DATASET_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{what} version {found}, expected {DATASET_FORMAT_VERSION}"
        )));
    }
    Ok(())
}

/// A pose as stored on disk: `[w, x, y, z]` per joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub rotations: Vec<[f64; 4]>,
    pub translation: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose(p: &Pose<f64>) -> Self {
        PoseRecord {
            rotations: p.joint_rotations.iter().map(|q| q.to_array()).collect(),
            translation: p.root_translation.to_array(),
        }
    }

    pub fn to_pose(&self, joint_count: usize) -> Result<Pose<f64>> {
        let pose = Pose {
            joint_rotations: self.rotations.iter().map(|q| Quat::from_array(*q)).collect(),
            root_translation: Vec3::from_array(self.translation),
        };
        pose.validate(joint_count)?;
        Ok(pose)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    NovelPose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub index: usize,
    pub split: Split,
    pub pose: PoseRecord,
}

/// `poses.json`: the canonical pose and every frame's pose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosesFile {
    pub version: u32,
    pub joint_count: usize,
    pub canonical: PoseRecord,
    pub frames: Vec<FrameRecord>,
}

impl PosesFile {
    pub fn load(path: &Path) -> Result<Self> {
        let f: Self = load_json(path)?;
        check_version(f.version, "poses")?;
        for (i, r) in f.frames.iter().enumerate() {
            if r.index != i {
                return Err(Error::Format(format!("frame record {i} has index {}", r.index)));
            }
            r.pose.to_pose(f.joint_count)?;
        }
        f.canonical.to_pose(f.joint_count)?;
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(self, path)
    }

    pub fn poses(&self) -> Result<Vec<Pose<f64>>> {
        self.frames.iter().map(|r| r.pose.to_pose(self.joint_count)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CamerasFile {
    pub version: u32,
    pub cameras: Vec<CameraFile>,
}

impl CamerasFile {
    pub fn load(path: &Path) -> Result<Self> {
        let f: Self = load_json(path)?;
        check_version(f.version, "cameras")?;
        for c in &f.cameras {
            c.to_camera::<f64>()?;
        }
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(self, path)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightFile {
    pub version: u32,
    pub light: LightSpec,
    pub background: [f64; 3],
}

impl LightFile {
    pub fn load(path: &Path) -> Result<Self> {
        let f: Self = load_json(path)?;
        check_version(f.version, "light")?;
        f.light.validate()?;
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(self, path)
    }
}

/// Per-vertex albedo used by the oracle renderer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlbedoFile {
    pub version: u32,
    pub colors: Vec<[f64; 3]>,
}

impl AlbedoFile {
    pub fn load(path: &Path) -> Result<Self> {
        let f: Self = load_json(path)?;
        check_version(f.version, "albedo")?;
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_json(self, path)
    }
}

/// A dataset directory with its metadata loaded.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub mesh: Arc<SkinnedMesh<f64>>,
    pub cameras: Vec<CameraFile>,
    pub poses: PosesFile,
    pub light: LightFile,
    pub albedo: Vec<[f64; 3]>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let mesh: SkinnedMesh<f64> = MeshFile::load(&root.join("mesh.json"))
            .map_err(|e| Error::Format(format!("mesh.json: {e}")))?
            .into_mesh()?;
        let poses = PosesFile::load(&root.join("poses.json"))?;
        if poses.joint_count != mesh.joint_count() {
            return Err(Error::Format(format!(
                "poses declare {} joints, mesh has {}",
                poses.joint_count,
                mesh.joint_count()
            )));
        }
        let cameras = CamerasFile::load(&root.join("cameras.json"))?.cameras;
        let light = LightFile::load(&root.join("light.json"))?;
        let albedo = AlbedoFile::load(&root.join("albedo.json"))?.colors;
        if albedo.len() != mesh.vertices.len() {
            return Err(Error::Format("albedo count does not match mesh".into()));
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            mesh: Arc::new(mesh),
            cameras,
            poses,
            light,
            albedo,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.poses.frames.len()
    }

    pub fn frames_in(&self, split: Split) -> Vec<usize> {
        self.poses.frames.iter().filter(|r| r.split == split).map(|r| r.index).collect()
    }

    pub fn train_frames(&self) -> Vec<usize> {
        self.frames_in(Split::Train)
    }

    pub fn novel_pose_frames(&self) -> Vec<usize> {
        self.frames_in(Split::NovelPose)
    }

    pub fn train_cameras(&self) -> Vec<usize> {
        (0..self.cameras.len()).filter(|&i| self.cameras[i].train).collect()
    }

    pub fn heldout_cameras(&self) -> Vec<usize> {
        (0..self.cameras.len()).filter(|&i| !self.cameras[i].train).collect()
    }

    pub fn camera(&self, i: usize) -> Result<Camera<f64>> {
        self.cameras
            .get(i)
            .ok_or_else(|| Error::InvalidInput(format!("camera {i} out of range")))?
            .to_camera()
    }

    pub fn pose(&self, frame: usize) -> Result<Pose<f64>> {
        self.poses
            .frames
            .get(frame)
            .ok_or_else(|| Error::InvalidInput(format!("frame {frame} out of range")))?
            .pose
            .to_pose(self.poses.joint_count)
    }

    pub fn canonical_pose(&self) -> Result<Pose<f64>> {
        self.poses.canonical.to_pose(self.poses.joint_count)
    }

    pub fn image_path(&self, frame: usize, camera: usize) -> PathBuf {
        self.root.join("frames").join(frame_file_name(frame, camera))
    }

    pub fn image(&self, frame: usize, camera: usize) -> Result<Image> {
        Image::load_png(&self.image_path(frame, camera))
    }

    pub fn mask(&self, frame: usize, camera: usize) -> Result<Mask> {
        Mask::load_png(&self.root.join("masks").join(frame_file_name(frame, camera)))
    }

    pub fn face_mask(&self, frame: usize, camera: usize) -> Result<Mask> {
        Mask::load_png(&self.root.join("face_masks").join(frame_file_name(frame, camera)))
    }

    /// Mean root translation over the training frames.
    pub fn mean_train_translation(&self) -> Result<Vec3<f64>> {
        let poses = self
            .train_frames()
            .iter()
            .map(|&f| self.pose(f))
            .collect::<Result<Vec<_>>>()?;
        Ok(super::mean_translation(&poses))
    }

    /// Check that every image of every (frame, camera) exists and matches
    /// its camera's size, and that training images have foreground.
    pub fn self_check(&self) -> Result<()> {
        if self.train_frames().is_empty() || self.train_cameras().is_empty() {
            return Err(Error::Format("dataset has no training frames or cameras".into()));
        }
        for f in 0..self.frame_count() {
            for c in 0..self.cameras.len() {
                let cam = &self.cameras[c];
                let img = self.image(f, c)?;
                let mask = self.mask(f, c)?;
                let face = self.face_mask(f, c)?;
                for (w, h) in [(img.width, img.height), (mask.width, mask.height), (face.width, face.height)] {
                    if (w, h) != (cam.width, cam.height) {
                        return Err(Error::Format(format!(
                            "{} is {w}x{h}, camera is {}x{}",
                            frame_file_name(f, c),
                            cam.width,
                            cam.height
                        )));
                    }
                }
                if face.data.iter().zip(&mask.data).any(|(f, m)| *f && !*m) {
                    return Err(Error::Format(format!("face mask outside foreground in {}", frame_file_name(f, c))));
                }
                if self.poses.frames[f].split == Split::Train && cam.train && mask.is_empty() {
                    return Err(Error::Format(format!("empty training mask {}", frame_file_name(f, c))));
                }
            }
        }
        Ok(())
    }
}
