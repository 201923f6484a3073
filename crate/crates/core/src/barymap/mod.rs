//! Barycentric mapping between posed instances of the same skinned mesh.
//!
//! A point is described relative to its nearest face (by centroid distance)
//! as `(face, u, v, h)`: the barycentric coordinates of its projection onto
//! the face plane and its signed height above that plane. Re-instantiating
//! the same description on the corresponding face of another pose maps the
//! point between spaces without any learned parameters.

mod grid;
mod inverse_lbs;

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::mesh::{FaceFrame, PosedMesh};
use crate::scalar::Real;

pub use grid::{nearest_brute_force, PointGrid};
pub use inverse_lbs::{inverse_lbs_map, InverseLbsMapper};

/// Pose-independent local description of a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalCoords<T> {
    pub face_idx: usize,
    pub u: T,
    pub v: T,
    pub h: T,
}

/// Nearest-centroid lookup over the faces of one posed mesh.
#[derive(Clone, Debug)]
pub struct FaceIndex<T> {
    grid: PointGrid<T>,
}

impl<T: Real> FaceIndex<T> {
    pub fn centroids(&self) -> &[Vec3<T>] {
        self.grid.points()
    }

    pub fn face_count(&self) -> usize {
        self.grid.len()
    }

    /// Face whose centroid is nearest to `p` (lowest index on ties).
    pub fn nearest_face(&self, p: Vec3<T>) -> usize {
        self.grid.nearest(p).expect("face index is never empty")
    }

    /// Linear-scan reference used by tests and benchmarks.
    pub fn nearest_face_brute_force(&self, p: Vec3<T>) -> usize {
        nearest_brute_force(self.grid.points(), p).expect("face index is never empty")
    }
}

pub fn build_face_index<T: Real>(posed: &PosedMesh<T>) -> Result<FaceIndex<T>> {
    if posed.face_count() == 0 {
        return Err(Error::InvalidInput("cannot index an empty mesh".into()));
    }
    let centroids = (0..posed.face_count())
        .map(|f| {
            FaceFrame::from_triangle(f, posed.face_vertices(f))?;
            Ok(posed.centroid(f))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FaceIndex {
        grid: PointGrid::new(centroids),
    })
}

/// Solve `p = o + u·e_u + v·e_v + h·n` for `(u, v, h)` in one face frame.
#[inline]
pub fn local_in_frame<T: Real>(frame: &FaceFrame<T>, p: Vec3<T>) -> (T, T, T) {
    let d = p - frame.origin;
    let h = d.dot(frame.unit_normal);
    let uu = frame.edge_u.dot(frame.edge_u);
    let uv = frame.edge_u.dot(frame.edge_v);
    let vv = frame.edge_v.dot(frame.edge_v);
    let du = d.dot(frame.edge_u);
    let dv = d.dot(frame.edge_v);
    let det = uu * vv - uv * uv;
    let u = (vv * du - uv * dv) / det;
    let v = (uu * dv - uv * du) / det;
    (u, v, h)
}

/// Per-face frames of one posed mesh, computed once.
#[derive(Clone, Debug)]
pub struct MeshFrames<T> {
    frames: Vec<FaceFrame<T>>,
}

impl<T: Real> MeshFrames<T> {
    pub fn new(posed: &PosedMesh<T>) -> Result<Self> {
        let frames = (0..posed.face_count())
            .map(|f| FaceFrame::from_triangle(f, posed.face_vertices(f)))
            .collect::<Result<Vec<_>>>()?;
        Ok(MeshFrames { frames })
    }

    pub fn frame(&self, face: usize) -> &FaceFrame<T> {
        &self.frames[face]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn encode_on_face(&self, face: usize, p: Vec3<T>) -> LocalCoords<T> {
        let (u, v, h) = local_in_frame(&self.frames[face], p);
        LocalCoords { face_idx: face, u, v, h }
    }

    pub fn decode(&self, c: &LocalCoords<T>) -> Vec3<T> {
        self.frames[c.face_idx].point(c.u, c.v, c.h)
    }

    /// Map a direction at `coords` from `self` to `dst` through the endpoint
    /// construction, reusing the start point's face for the endpoint.
    pub fn map_direction_to(&self, dst: &MeshFrames<T>, coords: &LocalCoords<T>, dir: Vec3<T>) -> Result<Vec3<T>> {
        let start = self.decode(coords);
        let end = self.encode_on_face(coords.face_idx, start + dir);
        let diff = dst.decode(&end) - dst.decode(coords);
        diff.try_normalize(T::lit(1e-12)).ok_or(Error::DegenerateDirection)
    }
}

/// Describe `p` relative to its nearest-centroid face of `posed`.
pub fn encode_local<T: Real>(posed: &PosedMesh<T>, p: Vec3<T>, index: &FaceIndex<T>) -> Result<LocalCoords<T>> {
    if index.face_count() != posed.face_count() {
        return Err(Error::Correspondence(format!(
            "face index has {} faces, mesh has {}",
            index.face_count(),
            posed.face_count()
        )));
    }
    let face = index.nearest_face(p);
    encode_on_face(posed, face, p)
}

/// Describe `p` relative to a given face (no nearest-face query).
pub fn encode_on_face<T: Real>(posed: &PosedMesh<T>, face: usize, p: Vec3<T>) -> Result<LocalCoords<T>> {
    let frame = crate::mesh::face_frame(posed, face)?;
    let (u, v, h) = local_in_frame(&frame, p);
    Ok(LocalCoords { face_idx: face, u, v, h })
}

/// `o + u·e_u + v·e_v + h·(e_u × e_v)/‖e_u × e_v‖` on the face of `posed`.
pub fn decode_local<T: Real>(posed: &PosedMesh<T>, coords: &LocalCoords<T>) -> Result<Vec3<T>> {
    let frame = crate::mesh::face_frame(posed, coords.face_idx)?;
    Ok(frame.point(coords.u, coords.v, coords.h))
}

fn check_pair<T: Real>(src: &PosedMesh<T>, dst: &PosedMesh<T>) -> Result<()> {
    if src.corresponds_to(dst) {
        Ok(())
    } else {
        Err(Error::Correspondence(
            "source and destination meshes do not share face indexing".into(),
        ))
    }
}

/// Map `p` from `src` to `dst`; also returns the local coordinates so the
/// caller can map directions at the same point.
pub fn map_point<T: Real>(
    src: &PosedMesh<T>,
    src_index: &FaceIndex<T>,
    dst: &PosedMesh<T>,
    p: Vec3<T>,
) -> Result<(Vec3<T>, LocalCoords<T>)> {
    check_pair(src, dst)?;
    let coords = encode_local(src, p, src_index)?;
    Ok((decode_local(dst, &coords)?, coords))
}

/// Map a unit direction anchored at `coords` from `src` to `dst`.
///
/// The endpoint `p + dir` is encoded against the same face as the start point.
pub fn map_direction<T: Real>(
    src: &PosedMesh<T>,
    dst: &PosedMesh<T>,
    coords: &LocalCoords<T>,
    dir: Vec3<T>,
) -> Result<Vec3<T>> {
    check_pair(src, dst)?;
    let tol = T::lit(1e-6).max(crate::mesh::unit_tolerance::<T>());
    if (dir.norm() - T::one()).abs() > tol {
        return Err(Error::InvalidInput(format!("direction norm {} is not 1", dir.norm())));
    }
    let start = decode_local(src, coords)?;
    let end_coords = encode_on_face(src, coords.face_idx, start + dir)?;
    let diff = decode_local(dst, &end_coords)? - decode_local(dst, coords)?;
    diff.try_normalize(T::lit(1e-12)).ok_or(Error::DegenerateDirection)
}

/// Bounds of the outlier test on local coordinates.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OutlierBounds {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for OutlierBounds {
    fn default() -> Self {
        OutlierBounds {
            alpha: -4.0,
            beta: 5.0,
            gamma: 0.1,
        }
    }
}

impl OutlierBounds {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if !(alpha < beta) || !(gamma > 0.0) {
            return Err(Error::Config(format!(
                "outlier bounds need alpha < beta and gamma > 0 (got {alpha}, {beta}, {gamma})"
            )));
        }
        Ok(OutlierBounds { alpha, beta, gamma })
    }
}

/// True when `u` or `v` leaves `[alpha, beta]` or `|h| > gamma`.
pub fn is_outlier<T: Real>(coords: &LocalCoords<T>, bounds: &OutlierBounds) -> bool {
    let (u, v, h) = (
        coords.u.to_f64_lossy(),
        coords.v.to_f64_lossy(),
        coords.h.to_f64_lossy(),
    );
    u < bounds.alpha
        || v < bounds.alpha
        || u > bounds.beta
        || v > bounds.beta
        || h.abs() > bounds.gamma
        || !(u.is_finite() && v.is_finite() && h.is_finite())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::linalg::{vec3, Affine, Quat};
    use crate::mesh::{lbs_pose, JointTree, Pose, Region, SkinnedMesh};

    fn one_face() -> PosedMesh<f64> {
        let mesh = Arc::new(SkinnedMesh {
            vertices: vec![vec3(0.2, 0.1, 0.0), vec3(1.3, 0.0, 0.4), vec3(0.1, 0.9, -0.2)],
            faces: vec![[0, 1, 2]],
            joints: JointTree::new(vec![None], vec![Vec3::zero()]).unwrap(),
            blend_weights: vec![vec![1.0]; 3],
            region_labels: vec![Region::Body],
        });
        lbs_pose(&mesh, &Pose::identity(1)).unwrap()
    }

    #[test]
    fn one_face_mesh_always_returns_face_zero() {
        let posed = one_face();
        let index = build_face_index(&posed).unwrap();
        for q in [vec3(10.0, 0.0, 0.0), vec3(-3.0, 2.0, 1.0), Vec3::zero()] {
            assert_eq!(index.nearest_face(q), 0);
        }
    }

    #[test]
    fn vertex_and_centroid_coordinates() {
        let posed = one_face();
        let index = build_face_index(&posed).unwrap();
        let c = encode_local(&posed, posed.vertices[0], &index).unwrap();
        assert_eq!((c.u, c.v, c.h), (0.0, 0.0, 0.0));
        let c = encode_local(&posed, posed.centroid(0), &index).unwrap();
        assert!((c.u - 1.0 / 3.0).abs() < 1e-12 && (c.v - 1.0 / 3.0).abs() < 1e-12 && c.h.abs() < 1e-12);
        let n = crate::mesh::face_frame(&posed, 0).unwrap().unit_normal;
        let c2 = encode_local(&posed, posed.centroid(0) + n * 0.05, &index).unwrap();
        assert!((c2.h - 0.05).abs() < 1e-12);
        assert!((c2.u - c.u).abs() < 1e-12 && (c2.v - c.v).abs() < 1e-12);
    }

    #[test]
    fn decode_of_zero_coords_is_first_vertex() {
        let posed = one_face();
        let p = decode_local(&posed, &LocalCoords { face_idx: 0, u: 0.0, v: 0.0, h: 0.0 }).unwrap();
        assert_eq!(p, posed.vertices[0]);
    }

    #[test]
    fn rigid_destination_commutes() {
        let posed = one_face();
        let index = build_face_index(&posed).unwrap();
        let rigid = Affine {
            linear: Quat::from_axis_angle(vec3(0.3, -1.0, 0.2), 2.1).to_mat3(),
            translation: vec3(1.0, 2.0, -0.5),
        };
        let moved = posed.transformed(&rigid);
        let p = vec3(0.4, 0.5, 0.3);
        let (q, coords) = map_point(&posed, &index, &moved, p).unwrap();
        assert!((q - rigid.apply(p)).norm() < 1e-12);
        let d = vec3(0.2, -0.7, 0.4).normalize();
        let md = map_direction(&posed, &moved, &coords, d).unwrap();
        assert!((md - rigid.linear * d).norm() < 1e-12);
    }

    #[test]
    fn outlier_truth_table() {
        let b = OutlierBounds::default();
        let c = |u: f64, v: f64, h: f64| LocalCoords { face_idx: 0, u, v, h };
        assert!(!is_outlier(&c(1.0 / 3.0, 1.0 / 3.0, 0.0), &b));
        assert!(is_outlier(&c(0.3, 0.3, 0.2), &b));
        assert!(is_outlier(&c(-5.0, 0.3, 0.0), &b));
        assert!(is_outlier(&c(0.3, 5.5, 0.0), &b));
        assert!(!is_outlier(&c(-4.0, 5.0, -0.1), &b));
        assert!(OutlierBounds::new(1.0, 1.0, 0.1).is_err());
        assert!(OutlierBounds::new(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn mismatched_meshes_are_rejected() {
        let a = one_face();
        let other = Arc::new(SkinnedMesh {
            faces: vec![[0, 2, 1]],
            ..(*a.source).clone()
        });
        let b = lbs_pose(&other, &Pose::identity(1)).unwrap();
        let index = build_face_index(&a).unwrap();
        assert!(matches!(map_point(&a, &index, &b, Vec3::zero()), Err(Error::Correspondence(_))));
    }
}
