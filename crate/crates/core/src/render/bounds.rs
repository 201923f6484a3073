use super::Ray;
use crate::linalg::Vec3;
use crate::mesh::{Aabb, PosedMesh};
use crate::scalar::Real;

const CLUSTER_SIZE: usize = 16;

#[derive(Clone, Debug)]
struct Cluster<T> {
    bbox: Aabb<T>,
    start: usize,
    end: usize,
}

/// Per-face boxes grouped into spatially coherent clusters: a two-level
/// hierarchy for ray queries against the proxy mesh.
#[derive(Clone, Debug)]
pub struct FaceBoxes<T> {
    dilation: T,
    global: Aabb<T>,
    clusters: Vec<Cluster<T>>,
    /// Face ids in cluster order.
    order: Vec<usize>,
    /// Dilated box of `order[i]`.
    boxes: Vec<Aabb<T>>,
}

fn spread_bits(v: u32) -> u64 {
    let mut x = (v & 0x3ff) as u64;
    x = (x | (x << 16)) & 0x0300_00ff;
    x = (x | (x << 8)) & 0x0300_f00f;
    x = (x | (x << 4)) & 0x030c_30c3;
    x = (x | (x << 2)) & 0x0924_9249;
    x
}

fn morton<T: Real>(p: Vec3<T>, bbox: &Aabb<T>) -> u64 {
    let ext = bbox.extent();
    let q = |a: usize| -> u32 {
        let e = ext[a];
        if e <= T::zero() {
            return 0;
        }
        let t = ((p[a] - bbox.min[a]) / e).max(T::zero()).min(T::one());
        (t * T::lit(1023.0)).to_u32().unwrap_or(0)
    };
    spread_bits(q(0)) | (spread_bits(q(1)) << 1) | (spread_bits(q(2)) << 2)
}

impl<T: Real> FaceBoxes<T> {
    pub fn new(posed: &PosedMesh<T>, dilation: T) -> Self {
        let faces = posed.face_count();
        let raw: Vec<Aabb<T>> = (0..faces)
            .map(|f| Aabb::from_points(&posed.face_vertices(f)))
            .collect();
        let global = raw.iter().fold(Aabb::empty(), |acc, b| acc.union(b));
        let mut order: Vec<usize> = (0..faces).collect();
        let codes: Vec<u64> = raw.iter().map(|b| morton(b.center(), &global)).collect();
        order.sort_by_key(|&f| (codes[f], f));
        let boxes: Vec<Aabb<T>> = order.iter().map(|&f| raw[f].dilated(dilation)).collect();
        let clusters = (0..faces)
            .step_by(CLUSTER_SIZE)
            .map(|start| {
                let end = (start + CLUSTER_SIZE).min(faces);
                let bbox = boxes[start..end].iter().fold(Aabb::empty(), |acc, b| acc.union(b));
                Cluster { bbox, start, end }
            })
            .collect();
        FaceBoxes {
            dilation,
            global: if faces == 0 { global } else { global.dilated(dilation) },
            clusters,
            order,
            boxes,
        }
    }

    pub fn dilation(&self) -> T {
        self.dilation
    }

    /// Union of all dilated face boxes.
    pub fn global(&self) -> &Aabb<T> {
        &self.global
    }

    /// Entry and exit depth of the ray through the union of dilated face
    /// boxes, or `None` on a miss.
    pub fn intersect(&self, origin: Vec3<T>, dir: Vec3<T>) -> Option<(T, T)> {
        let inv = inverse(dir);
        self.global.intersect_ray(origin, inv)?;
        let mut near = T::infinity();
        let mut far = T::neg_infinity();
        for c in &self.clusters {
            let Some((c0, c1)) = c.bbox.intersect_ray(origin, inv) else {
                continue;
            };
            if c0 >= near && c1 <= far {
                continue;
            }
            for b in &self.boxes[c.start..c.end] {
                if let Some((t0, t1)) = b.intersect_ray(origin, inv) {
                    near = near.min(t0);
                    far = far.max(t1);
                }
            }
        }
        (near <= far).then_some((near, far))
    }

    /// Call `f` with every face whose dilated box the ray hits.
    pub fn for_each_candidate(&self, origin: Vec3<T>, dir: Vec3<T>, mut f: impl FnMut(usize)) {
        let inv = inverse(dir);
        if self.global.intersect_ray(origin, inv).is_none() {
            return;
        }
        for c in &self.clusters {
            if c.bbox.intersect_ray(origin, inv).is_none() {
                continue;
            }
            for i in c.start..c.end {
                if self.boxes[i].intersect_ray(origin, inv).is_some() {
                    f(self.order[i]);
                }
            }
        }
    }
}

fn inverse<T: Real>(d: Vec3<T>) -> Vec3<T> {
    Vec3::from_array([T::one() / d.x, T::one() / d.y, T::one() / d.z])
}

/// `(near, far)` of a ray against the dilated per-face boxes of `posed`.
pub fn ray_bounds<T: Real>(ray: &Ray<T>, posed: &PosedMesh<T>, dilation: T) -> Option<(T, T)> {
    FaceBoxes::new(posed, dilation).intersect(ray.origin, ray.dir)
}
