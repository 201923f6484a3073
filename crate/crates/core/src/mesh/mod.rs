//! Skinned triangle meshes, forward linear blend skinning and per-face frames.
//!
//! A [`SkinnedMesh`] is the rest-pose template; [`lbs_pose`] instantiates it as
//! a [`PosedMesh`] that keeps the template's face list, so face `i` in one pose
//! always corresponds to face `i` in any other pose.

mod body;
mod io;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use body::{
    canonical_pose, gen_capsule_body, joint_names, BodyPoseParams, BodySpec, JOINT_COUNT,
};
pub use io::{MeshFile, MESH_FORMAT_VERSION};

use crate::error::{Error, Result};
use crate::linalg::{Affine, Quat, Vec3};
use crate::scalar::Real;

/// Minimum face area accepted in rest or posed meshes (m²).
pub const MIN_FACE_AREA: f64 = 1e-12;

/// Tolerance for "sums to one" / "has unit norm" checks at precision `T`.
pub fn unit_tolerance<T: Real>() -> T {
    T::lit(1e-9).max(T::epsilon() * T::lit(64.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Head,
    Body,
    Limb,
}

/// Kinematic tree. `parents[0]` is `None`; every other joint has a parent.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTree<T> {
    pub parents: Vec<Option<usize>>,
    pub rest_offsets: Vec<Vec3<T>>,
}

impl<T: Real> JointTree<T> {
    pub fn new(parents: Vec<Option<usize>>, rest_offsets: Vec<Vec3<T>>) -> Result<Self> {
        let tree = JointTree {
            parents,
            rest_offsets,
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.parents.len();
        if n == 0 {
            return Err(Error::InvalidMesh("joint tree is empty".into()));
        }
        if self.rest_offsets.len() != n {
            return Err(Error::InvalidMesh(format!(
                "{} parents but {} rest offsets",
                n,
                self.rest_offsets.len()
            )));
        }
        if self.parents[0].is_some() {
            return Err(Error::InvalidMesh("joint 0 must be the root".into()));
        }
        for (j, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                None => return Err(Error::InvalidMesh(format!("joint {j} has no parent"))),
                Some(p) if *p >= n || *p == j => {
                    return Err(Error::InvalidMesh(format!("joint {j} has invalid parent {p}")))
                }
                _ => {}
            }
        }
        // Every joint must reach the root without revisiting a joint.
        for start in 0..n {
            let mut j = start;
            let mut steps = 0;
            while let Some(p) = self.parents[j] {
                j = p;
                steps += 1;
                if steps > n {
                    return Err(Error::InvalidMesh(format!("cycle through joint {start}")));
                }
            }
        }
        Ok(())
    }

    /// Joints ordered so every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.len();
        let mut children = vec![Vec::new(); n];
        for (j, p) in self.parents.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(j);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![0];
        while let Some(j) = stack.pop() {
            order.push(j);
            for &c in children[j].iter().rev() {
                stack.push(c);
            }
        }
        order
    }

    pub fn children(&self, joint: usize) -> Vec<usize> {
        self.parents
            .iter()
            .enumerate()
            .filter(|(_, p)| **p == Some(joint))
            .map(|(j, _)| j)
            .collect()
    }

    /// World positions of the joints in the rest pose.
    pub fn rest_positions(&self) -> Vec<Vec3<T>> {
        let mut pos = vec![Vec3::zero(); self.len()];
        for j in self.topological_order() {
            pos[j] = match self.parents[j] {
                Some(p) => pos[p] + self.rest_offsets[j],
                None => self.rest_offsets[j],
            };
        }
        pos
    }

    pub fn cast<U: Real>(&self) -> JointTree<U> {
        JointTree {
            parents: self.parents.clone(),
            rest_offsets: self.rest_offsets.iter().map(|v| v.cast()).collect(),
        }
    }
}

/// Per-joint local rotations plus a root translation.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose<T> {
    pub joint_rotations: Vec<Quat<T>>,
    pub root_translation: Vec3<T>,
}

impl<T: Real> Pose<T> {
    pub fn identity(joint_count: usize) -> Self {
        Pose {
            joint_rotations: vec![Quat::identity(); joint_count],
            root_translation: Vec3::zero(),
        }
    }

    pub fn validate(&self, joint_count: usize) -> Result<()> {
        if self.joint_rotations.len() != joint_count {
            return Err(Error::InvalidPose(format!(
                "{} rotations for {} joints",
                self.joint_rotations.len(),
                joint_count
            )));
        }
        let tol = unit_tolerance::<T>();
        for (j, q) in self.joint_rotations.iter().enumerate() {
            if (q.norm() - T::one()).abs() > tol {
                return Err(Error::InvalidPose(format!(
                    "joint {j} quaternion norm {}",
                    q.norm()
                )));
            }
        }
        if !self.root_translation.is_finite() {
            return Err(Error::InvalidPose("non-finite root translation".into()));
        }
        Ok(())
    }

    /// Pre-compose a rigid motion `(rotation, translation)` onto the root.
    pub fn rigidly_moved(&self, rotation: Quat<T>, translation: Vec3<T>) -> Self {
        let mut out = self.clone();
        out.joint_rotations[0] = rotation * self.joint_rotations[0];
        out.root_translation = rotation.rotate(self.root_translation) + translation;
        out
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        Pose {
            joint_rotations: self.joint_rotations.iter().map(|q| q.cast()).collect(),
            root_translation: self.root_translation.cast(),
        }
    }
}

/// Rest-pose template mesh with skeleton and skinning weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinnedMesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub faces: Vec<[usize; 3]>,
    pub joints: JointTree<T>,
    /// Dense `vertices × joints` weights; each row is a probability vector.
    pub blend_weights: Vec<Vec<T>>,
    pub region_labels: Vec<Region>,
}

impl<T: Real> SkinnedMesh<T> {
    pub fn validate(&self) -> Result<()> {
        self.joints.validate()?;
        let nv = self.vertices.len();
        if self.faces.is_empty() {
            return Err(Error::InvalidMesh("mesh has no faces".into()));
        }
        if self.blend_weights.len() != nv {
            return Err(Error::InvalidMesh(format!(
                "{} weight rows for {} vertices",
                self.blend_weights.len(),
                nv
            )));
        }
        if self.region_labels.len() != self.faces.len() {
            return Err(Error::InvalidMesh(format!(
                "{} region labels for {} faces",
                self.region_labels.len(),
                self.faces.len()
            )));
        }
        for (i, v) in self.vertices.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
            }
        }
        for (f, tri) in self.faces.iter().enumerate() {
            let [a, b, c] = *tri;
            if a >= nv || b >= nv || c >= nv {
                return Err(Error::InvalidMesh(format!("face {f} index out of range")));
            }
            if a == b || b == c || a == c {
                return Err(Error::InvalidMesh(format!("face {f} repeats a vertex")));
            }
            let area = triangle_area(self.vertices[a], self.vertices[b], self.vertices[c]);
            if !(area.to_f64_lossy() > MIN_FACE_AREA) {
                return Err(Error::DegenerateFace {
                    face: f,
                    area: area.to_f64_lossy(),
                });
            }
        }
        let nj = self.joints.len();
        let tol = unit_tolerance::<T>();
        for (i, row) in self.blend_weights.iter().enumerate() {
            if row.len() != nj {
                return Err(Error::InvalidMesh(format!(
                    "vertex {i} has {} weights for {} joints",
                    row.len(),
                    nj
                )));
            }
            if row.iter().any(|w| !(*w >= T::zero())) {
                return Err(Error::InvalidMesh(format!("vertex {i} has a negative weight")));
            }
            let s: T = row.iter().copied().sum();
            if (s - T::one()).abs() > tol {
                return Err(Error::InvalidMesh(format!("vertex {i} weights sum to {s}")));
            }
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn cast<U: Real>(&self) -> SkinnedMesh<U> {
        SkinnedMesh {
            vertices: self.vertices.iter().map(|v| v.cast()).collect(),
            faces: self.faces.clone(),
            joints: self.joints.cast(),
            blend_weights: self
                .blend_weights
                .iter()
                .map(|r| r.iter().map(|w| U::lit(w.to_f64_lossy())).collect())
                .collect(),
            region_labels: self.region_labels.clone(),
        }
    }
}

/// A skinned mesh instantiated in a specific pose.
#[derive(Clone, Debug)]
pub struct PosedMesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub source: Arc<SkinnedMesh<T>>,
    pub pose: Pose<T>,
}

impl<T: Real> PosedMesh<T> {
    /// Wrap externally computed vertex positions (e.g. a rigidly moved copy).
    pub fn from_vertices(
        source: Arc<SkinnedMesh<T>>,
        pose: Pose<T>,
        vertices: Vec<Vec3<T>>,
    ) -> Result<Self> {
        if vertices.len() != source.vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "{} posed vertices for a {}-vertex template",
                vertices.len(),
                source.vertices.len()
            )));
        }
        Ok(PosedMesh {
            vertices,
            source,
            pose,
        })
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.source.faces
    }

    pub fn face_count(&self) -> usize {
        self.source.faces.len()
    }

    pub fn face_vertices(&self, face: usize) -> [Vec3<T>; 3] {
        let [a, b, c] = self.source.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn centroid(&self, face: usize) -> Vec3<T> {
        let [a, b, c] = self.face_vertices(face);
        (a + b + c) / T::lit(3.0)
    }

    /// Whether `other` shares this mesh's face indexing.
    pub fn corresponds_to(&self, other: &PosedMesh<T>) -> bool {
        Arc::ptr_eq(&self.source, &other.source)
            || (self.source.faces == other.source.faces
                && self.vertices.len() == other.vertices.len())
    }

    /// Copy with every vertex mapped through `transform`.
    pub fn transformed(&self, transform: &Affine<T>) -> Self {
        PosedMesh {
            vertices: self.vertices.iter().map(|v| transform.apply(*v)).collect(),
            source: self.source.clone(),
            pose: self.pose.clone(),
        }
    }
}

pub fn triangle_area<T: Real>(a: Vec3<T>, b: Vec3<T>, c: Vec3<T>) -> T {
    (b - a).cross(c - a).norm() / T::lit(2.0)
}

/// Skinning transforms `G_j` mapping rest-pose points to posed points for
/// each joint.
///
/// The root rotation pivots about the world origin, so a mesh skinned fully
/// to the root maps as `v ↦ R·v + t`.
pub fn skinning_transforms<T: Real>(joints: &JointTree<T>, pose: &Pose<T>) -> Result<Vec<Affine<T>>> {
    pose.validate(joints.len())?;
    let rest = joints.rest_positions();
    let mut world = vec![Affine::identity(); joints.len()];
    for j in joints.topological_order() {
        let rot = Affine::rotation(pose.joint_rotations[j]);
        world[j] = match joints.parents[j] {
            None => Affine::translation(pose.root_translation)
                .compose(&rot)
                .compose(&Affine::translation(joints.rest_offsets[j])),
            Some(p) => world[p]
                .compose(&Affine::translation(joints.rest_offsets[j]))
                .compose(&rot),
        };
    }
    Ok(world
        .iter()
        .zip(rest)
        .map(|(w, r)| w.compose(&Affine::translation(-r)))
        .collect())
}

/// Weighted blend `Σ_j w_j G_j`.
pub fn blend_transforms<T: Real>(transforms: &[Affine<T>], weights: &[T]) -> Affine<T> {
    let mut out = Affine::zero();
    for (g, &w) in transforms.iter().zip(weights) {
        if w != T::zero() {
            out.add_scaled(g, w);
        }
    }
    out
}

/// Forward linear blend skinning.
pub fn lbs_pose<T: Real>(mesh: &Arc<SkinnedMesh<T>>, pose: &Pose<T>) -> Result<PosedMesh<T>> {
    let transforms = skinning_transforms(&mesh.joints, pose)?;
    let vertices = mesh
        .vertices
        .iter()
        .zip(&mesh.blend_weights)
        .map(|(v, w)| {
            let mut out = Vec3::zero();
            for (g, &wj) in transforms.iter().zip(w) {
                if wj != T::zero() {
                    out += g.apply(*v) * wj;
                }
            }
            out
        })
        .collect();
    Ok(PosedMesh {
        vertices,
        source: mesh.clone(),
        pose: pose.clone(),
    })
}

/// Local frame of a face: origin at its first vertex, two edges and the unit
/// normal of their cross product.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FaceFrame<T> {
    pub origin: Vec3<T>,
    pub edge_u: Vec3<T>,
    pub edge_v: Vec3<T>,
    pub unit_normal: Vec3<T>,
}

impl<T: Real> FaceFrame<T> {
    pub fn from_triangle(face: usize, tri: [Vec3<T>; 3]) -> Result<Self> {
        let edge_u = tri[1] - tri[0];
        let edge_v = tri[2] - tri[0];
        let cross = edge_u.cross(edge_v);
        let twice_area = cross.norm();
        let area = twice_area.to_f64_lossy() / 2.0;
        if !(area >= MIN_FACE_AREA) {
            return Err(Error::DegenerateFace { face, area });
        }
        Ok(FaceFrame {
            origin: tri[0],
            edge_u,
            edge_v,
            unit_normal: cross / twice_area,
        })
    }

    /// `o + u·edge_u + v·edge_v + h·n`.
    #[inline]
    pub fn point(&self, u: T, v: T, h: T) -> Vec3<T> {
        self.origin + self.edge_u * u + self.edge_v * v + self.unit_normal * h
    }
}

pub fn face_frame<T: Real>(posed: &PosedMesh<T>, face_idx: usize) -> Result<FaceFrame<T>> {
    if face_idx >= posed.face_count() {
        return Err(Error::InvalidInput(format!(
            "face {face_idx} out of range for {} faces",
            posed.face_count()
        )));
    }
    FaceFrame::from_triangle(face_idx, posed.face_vertices(face_idx))
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::splat(T::infinity()),
            max: Vec3::splat(T::neg_infinity()),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3<T>>) -> Self {
        let mut b = Aabb::empty();
        for p in points {
            b.grow(*p);
        }
        b
    }

    pub fn grow(&mut self, p: Vec3<T>) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }

    pub fn union(&self, o: &Self) -> Self {
        Aabb {
            min: self.min.min(o.min),
            max: self.max.max(o.max),
        }
    }

    pub fn dilated(&self, d: T) -> Self {
        Aabb {
            min: self.min - Vec3::splat(d),
            max: self.max + Vec3::splat(d),
        }
    }

    pub fn contains(&self, p: Vec3<T>) -> bool {
        p.x >= self.min.x
            && p.y >= self.min.y
            && p.z >= self.min.z
            && p.x <= self.max.x
            && p.y <= self.max.y
            && p.z <= self.max.z
    }

    pub fn center(&self) -> Vec3<T> {
        (self.min + self.max) / T::lit(2.0)
    }

    pub fn extent(&self) -> Vec3<T> {
        self.max - self.min
    }

    pub fn corners(&self) -> [Vec3<T>; 8] {
        let (a, b) = (self.min, self.max);
        std::array::from_fn(|i| {
            Vec3 {
                x: if i & 1 == 0 { a.x } else { b.x },
                y: if i & 2 == 0 { a.y } else { b.y },
                z: if i & 4 == 0 { a.z } else { b.z },
            }
        })
    }

    /// Slab test: parametric `[t_enter, t_exit]` of `origin + t·dir` with
    /// `t ≥ 0`, or `None` on a miss.
    pub fn intersect_ray(&self, origin: Vec3<T>, inv_dir: Vec3<T>) -> Option<(T, T)> {
        let mut t0 = T::zero();
        let mut t1 = T::infinity();
        for a in 0..3 {
            let ta = (self.min[a] - origin[a]) * inv_dir[a];
            let tb = (self.max[a] - origin[a]) * inv_dir[a];
            let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            // NaN (origin on a slab plane with a zero direction) keeps the bounds.
            if lo > t0 {
                t0 = lo;
            }
            if hi < t1 {
                t1 = hi;
            }
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// Bounding box of the posed vertices grown by `dilation` on every side.
pub fn mesh_aabb<T: Real>(posed: &PosedMesh<T>, dilation: T) -> Aabb<T> {
    Aabb::from_points(&posed.vertices).dilated(dilation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::vec3;

    fn single_triangle(tri: [Vec3<f64>; 3]) -> Arc<SkinnedMesh<f64>> {
        Arc::new(SkinnedMesh {
            vertices: tri.to_vec(),
            faces: vec![[0, 1, 2]],
            joints: JointTree::new(vec![None], vec![Vec3::zero()]).unwrap(),
            blend_weights: vec![vec![1.0]; 3],
            region_labels: vec![Region::Body],
        })
    }

    fn two_joint_chain() -> Arc<SkinnedMesh<f64>> {
        Arc::new(SkinnedMesh {
            vertices: vec![vec3(0.5, 0.0, 0.0), vec3(2.0, 0.0, 0.0), vec3(2.0, 0.5, 0.0)],
            faces: vec![[0, 1, 2]],
            joints: JointTree::new(
                vec![None, Some(0)],
                vec![Vec3::zero(), vec3(1.0, 0.0, 0.0)],
            )
            .unwrap(),
            blend_weights: vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]],
            region_labels: vec![Region::Limb],
        })
    }

    #[test]
    fn identity_pose_is_identity_map() {
        let mesh = two_joint_chain();
        let posed = lbs_pose(&mesh, &Pose::identity(2)).unwrap();
        assert_eq!(posed.vertices, mesh.vertices);
    }

    #[test]
    fn rigid_root_motion() {
        let tri = [vec3(0.3, 1.0, 0.0), vec3(1.0, 0.2, 0.5), vec3(0.0, 0.0, 2.0)];
        let mut mesh = (*single_triangle(tri)).clone();
        mesh.joints.rest_offsets[0] = vec3(0.0, 0.9, 0.0);
        let mesh = Arc::new(mesh);
        let q = Quat::from_axis_angle(vec3(0.2, 1.0, -0.3), 0.8);
        let t = vec3(0.5, -1.0, 2.0);
        let pose = Pose {
            joint_rotations: vec![q],
            root_translation: t,
        };
        let posed = lbs_pose(&mesh, &pose).unwrap();
        for (p, v) in posed.vertices.iter().zip(&mesh.vertices) {
            assert!((*p - (q.rotate(*v) + t)).norm() < 1e-14);
        }
    }

    #[test]
    fn two_joint_elbow_matches_hand_computed_chain() {
        // Joint 1 sits at (1,0,0); rotating it 90° about z sends the rest point
        // (2,0,0) to (1,0,0) + Rz·(1,0,0) = (1,1,0). A half/half blend lands at
        // the midpoint of (2,0,0) and (1,1,0).
        let mesh = two_joint_chain();
        let mut pose = Pose::identity(2);
        pose.joint_rotations[1] = Quat::from_axis_angle(vec3(0.0, 0.0, 1.0), std::f64::consts::FRAC_PI_2);
        let posed = lbs_pose(&mesh, &pose).unwrap();
        assert!((posed.vertices[0] - vec3(0.5, 0.0, 0.0)).norm() < 1e-15);
        assert!((posed.vertices[1] - vec3(1.5, 0.5, 0.0)).norm() < 1e-15);
        // Fully on joint 1: (1,0,0) + Rz·(1,0.5,0) = (0.5, 1, 0).
        assert!((posed.vertices[2] - vec3(0.5, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn pose_joint_count_mismatch_is_rejected() {
        let mesh = two_joint_chain();
        assert!(matches!(lbs_pose(&mesh, &Pose::identity(3)), Err(Error::InvalidPose(_))));
        let mut pose = Pose::identity(2);
        pose.joint_rotations[1] = Quat::new(1.0, 0.1, 0.0, 0.0);
        assert!(matches!(lbs_pose(&mesh, &pose), Err(Error::InvalidPose(_))));
    }

    #[test]
    fn face_frame_of_unit_right_triangle() {
        let mesh = single_triangle([vec3(0.0, 0.0, 0.0), vec3(1.0, 0.0, 0.0), vec3(0.0, 1.0, 0.0)]);
        let posed = lbs_pose(&mesh, &Pose::identity(1)).unwrap();
        let f = face_frame(&posed, 0).unwrap();
        assert_eq!(f.origin, vec3(0.0, 0.0, 0.0));
        assert_eq!(f.edge_u, vec3(1.0, 0.0, 0.0));
        assert_eq!(f.edge_v, vec3(0.0, 1.0, 0.0));
        assert_eq!(f.unit_normal, vec3(0.0, 0.0, 1.0));
    }

    #[test]
    fn face_frame_rotates_with_the_triangle() {
        let tri = [vec3(0.1, 0.2, 0.3), vec3(1.0, 0.4, -0.2), vec3(-0.3, 0.9, 0.5)];
        let q = Quat::from_axis_angle(vec3(1.0, -2.0, 0.5), 1.1);
        let base = lbs_pose(&single_triangle(tri), &Pose::identity(1)).unwrap();
        let rotated = lbs_pose(&single_triangle(tri.map(|v| q.rotate(v))), &Pose::identity(1)).unwrap();
        let a = face_frame(&base, 0).unwrap();
        let b = face_frame(&rotated, 0).unwrap();
        assert!((q.rotate(a.origin) - b.origin).norm() < 1e-14);
        assert!((q.rotate(a.edge_u) - b.edge_u).norm() < 1e-14);
        assert!((q.rotate(a.edge_v) - b.edge_v).norm() < 1e-14);
        assert!((q.rotate(a.unit_normal) - b.unit_normal).norm() < 1e-14);
    }

    #[test]
    fn degenerate_posed_face_is_an_error() {
        let posed = PosedMesh::from_vertices(
            two_joint_chain(),
            Pose::identity(2),
            vec![Vec3::zero(), vec3(1.0, 0.0, 0.0), vec3(2.0, 0.0, 0.0)],
        )
        .unwrap();
        assert!(matches!(face_frame(&posed, 0), Err(Error::DegenerateFace { face: 0, .. })));
    }

    #[test]
    fn aabb_of_single_vertex() {
        let mesh = Arc::new(SkinnedMesh {
            vertices: vec![Vec3::zero(), vec3(1.0, 0.0, 0.0), vec3(0.0, 1.0, 0.0)],
            ..(*single_triangle([Vec3::zero(), vec3(1.0, 0.0, 0.0), vec3(0.0, 1.0, 0.0)])).clone()
        });
        let posed =
            PosedMesh::from_vertices(mesh, Pose::identity(1), vec![Vec3::zero(); 3]).unwrap();
        let b = mesh_aabb(&posed, 0.1);
        assert_eq!(b.min, Vec3::splat(-0.1));
        assert_eq!(b.max, Vec3::splat(0.1));
        let exact = mesh_aabb(&posed, 0.0);
        assert_eq!(exact.min, Vec3::zero());
        assert_eq!(exact.max, Vec3::zero());
    }

    #[test]
    fn invalid_trees_are_rejected() {
        let off = vec![Vec3::<f64>::zero(); 3];
        assert!(JointTree::new(vec![None, Some(2), Some(1)], off.clone()).is_err());
        assert!(JointTree::new(vec![Some(1), None, Some(0)], off.clone()).is_err());
        assert!(JointTree::new(vec![None, Some(0), None], off.clone()).is_err());
        let t = JointTree::new(vec![None, Some(2), Some(0)], off).unwrap();
        assert_eq!(t.topological_order(), vec![0, 2, 1]);
    }
}
