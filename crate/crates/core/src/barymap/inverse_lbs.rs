//! Inverse linear blend skinning with blend weights interpolated from nearby
//! posed vertices. Used as the comparison baseline for barycentric mapping.

use std::sync::Arc;

use super::PointGrid;
use crate::error::{Error, Result};
use crate::linalg::{Affine, Vec3};
use crate::mesh::{blend_transforms, skinning_transforms, Pose, PosedMesh, SkinnedMesh};
use crate::scalar::Real;

const SINGULAR_DET: f64 = 1e-12;

/// Maps points of one posed mesh into another pose through interpolated
/// skinning weights.
#[derive(Clone, Debug)]
pub struct InverseLbsMapper<T> {
    rest: Arc<SkinnedMesh<T>>,
    vertex_grid: PointGrid<T>,
    src_transforms: Vec<Affine<T>>,
    dst_transforms: Vec<Affine<T>>,
    k: usize,
}

impl<T: Real> InverseLbsMapper<T> {
    pub fn new(posed: &PosedMesh<T>, dst_pose: &Pose<T>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("neighbor count must be at least 1".into()));
        }
        let rest = posed.source.clone();
        Ok(InverseLbsMapper {
            src_transforms: skinning_transforms(&rest.joints, &posed.pose)?,
            dst_transforms: skinning_transforms(&rest.joints, dst_pose)?,
            vertex_grid: PointGrid::new(posed.vertices.clone()),
            rest,
            k,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Inverse-distance weighted blend of the `k` nearest posed vertices'
    /// weight rows, renormalized.
    pub fn interpolated_weights(&self, p: Vec3<T>) -> Vec<T> {
        let neighbors = self.vertex_grid.k_nearest(p, self.k);
        let nj = self.rest.joint_count();
        if let Some(&(i, d2)) = neighbors.first() {
            if d2 == T::zero() {
                return self.rest.blend_weights[i].clone();
            }
        }
        let mut row = vec![T::zero(); nj];
        let mut total = T::zero();
        for (i, d2) in neighbors {
            let w = T::one() / d2.sqrt();
            total += w;
            for (acc, bw) in row.iter_mut().zip(&self.rest.blend_weights[i]) {
                *acc += w * *bw;
            }
        }
        let s: T = row.iter().copied().sum();
        let norm = if s > T::zero() { s } else { total };
        row.iter_mut().for_each(|w| *w /= norm);
        row
    }

    /// The composite affine map `G_dst · G_src⁻¹` used at `p`.
    pub fn transform_at(&self, p: Vec3<T>) -> Result<Affine<T>> {
        let w = self.interpolated_weights(p);
        let g_src = blend_transforms(&self.src_transforms, &w);
        let det = g_src.linear.det();
        let inv = g_src
            .try_inverse(T::lit(SINGULAR_DET))
            .ok_or(Error::SingularTransform(det.to_f64_lossy()))?;
        let g_dst = blend_transforms(&self.dst_transforms, &w);
        Ok(g_dst.compose(&inv))
    }

    pub fn map(&self, p: Vec3<T>) -> Result<Vec3<T>> {
        Ok(self.transform_at(p)?.apply(p))
    }
}

/// Map `p` from `posed` (which must equal `lbs_pose(rest, pose)`) into
/// `dst_pose` by inverting the interpolated blend transform.
pub fn inverse_lbs_map<T: Real>(
    posed: &PosedMesh<T>,
    rest: &Arc<SkinnedMesh<T>>,
    pose: &Pose<T>,
    dst_pose: &Pose<T>,
    p: Vec3<T>,
    k: usize,
) -> Result<Vec3<T>> {
    if !Arc::ptr_eq(&posed.source, rest) && posed.source.faces != rest.faces {
        return Err(Error::Correspondence("posed mesh was not built from this template".into()));
    }
    let mut posed = posed.clone();
    posed.pose = pose.clone();
    InverseLbsMapper::new(&posed, dst_pose, k)?.map(p)
}
