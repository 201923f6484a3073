use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{JointTree, Region, SkinnedMesh};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::scalar::Real;

pub const MESH_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointsFile {
    /// Parent index per joint, `-1` for the root.
    pub parents: Vec<i64>,
    pub rest_offsets: Vec<[f64; 3]>,
}

/// On-disk JSON form of a [`SkinnedMesh`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeshFile {
    pub version: u32,
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
    pub joints: JointsFile,
    pub blend_weights: Vec<Vec<f64>>,
    pub region_labels: Vec<Region>,
}

impl MeshFile {
    pub fn from_mesh<T: Real>(mesh: &SkinnedMesh<T>) -> Self {
        MeshFile {
            version: MESH_FORMAT_VERSION,
            vertices: mesh.vertices.iter().map(|v| v.to_f64()).collect(),
            faces: mesh.faces.clone(),
            joints: JointsFile {
                parents: mesh
                    .joints
                    .parents
                    .iter()
                    .map(|p| p.map_or(-1, |p| p as i64))
                    .collect(),
                rest_offsets: mesh.joints.rest_offsets.iter().map(|v| v.to_f64()).collect(),
            },
            blend_weights: mesh
                .blend_weights
                .iter()
                .map(|r| r.iter().map(|w| w.to_f64_lossy()).collect())
                .collect(),
            region_labels: mesh.region_labels.clone(),
        }
    }

    /// Convert and validate every length and invariant.
    pub fn into_mesh<T: Real>(self) -> Result<SkinnedMesh<T>> {
        if self.version != MESH_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported mesh version {} (expected {MESH_FORMAT_VERSION})",
                self.version
            )));
        }
        let parents = self
            .joints
            .parents
            .iter()
            .enumerate()
            .map(|(j, &p)| match p {
                -1 => Ok(None),
                p if p >= 0 => Ok(Some(p as usize)),
                p => Err(Error::InvalidMesh(format!("joint {j} has parent {p}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let joints = JointTree::new(
            parents,
            self.joints.rest_offsets.iter().map(|v| Vec3::from_f64(*v)).collect(),
        )?;
        let mesh = SkinnedMesh {
            vertices: self.vertices.iter().map(|v| Vec3::from_f64(*v)).collect(),
            faces: self.faces,
            joints,
            blend_weights: self
                .blend_weights
                .iter()
                .map(|r| r.iter().map(|w| T::lit(*w)).collect())
                .collect(),
            region_labels: self.region_labels,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}
