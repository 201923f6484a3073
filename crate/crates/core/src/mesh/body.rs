//! Synthetic articulated body: a smooth union of capsules meshed with surface
//! nets, skinned to a 15-joint humanoid skeleton.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{JointTree, Pose, Region, SkinnedMesh};
use crate::error::{Error, Result};
use crate::linalg::{vec3, Quat, Vec3};
use crate::scalar::Real;

pub const JOINT_COUNT: usize = 15;

const PELVIS: usize = 0;
const SPINE: usize = 1;
const NECK: usize = 2;
const L_SHOULDER: usize = 3;
const L_ELBOW: usize = 4;
const L_WRIST: usize = 5;
const R_SHOULDER: usize = 6;
const R_ELBOW: usize = 7;
const R_WRIST: usize = 8;
const L_HIP: usize = 9;
const L_KNEE: usize = 10;
const L_ANKLE: usize = 11;
const R_HIP: usize = 12;
const R_KNEE: usize = 13;
const R_ANKLE: usize = 14;

const PARENTS: [Option<usize>; JOINT_COUNT] = [
    None,
    Some(PELVIS),
    Some(SPINE),
    Some(SPINE),
    Some(L_SHOULDER),
    Some(L_ELBOW),
    Some(SPINE),
    Some(R_SHOULDER),
    Some(R_ELBOW),
    Some(PELVIS),
    Some(L_HIP),
    Some(L_KNEE),
    Some(PELVIS),
    Some(R_HIP),
    Some(R_KNEE),
];

pub fn joint_names() -> [&'static str; JOINT_COUNT] {
    [
        "pelvis",
        "spine",
        "neck",
        "l_shoulder",
        "l_elbow",
        "l_wrist",
        "r_shoulder",
        "r_elbow",
        "r_wrist",
        "l_hip",
        "l_knee",
        "l_ankle",
        "r_hip",
        "r_knee",
        "r_ankle",
    ]
}

/// Rest-pose arm abduction from the downward body axis.
const REST_ARM_ABDUCTION_DEG: f64 = 55.0;
/// Canonical X-pose arm abduction.
const CANONICAL_ARM_ABDUCTION_DEG: f64 = 45.0;
/// Canonical X-pose outward leg rotation.
const CANONICAL_LEG_ABDUCTION_DEG: f64 = 5.0;

/// Dimensions (meters) and tessellation of the synthetic body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BodySpec {
    /// Grid resolution expressed as segments around the upper arm.
    pub radial_segments: usize,
    pub pelvis_height: f64,
    pub pelvis_radius: f64,
    pub torso_radius: f64,
    pub torso_length: f64,
    pub neck_radius: f64,
    pub head_radius: f64,
    pub shoulder_width: f64,
    pub upper_arm_length: f64,
    pub upper_arm_radius: f64,
    pub forearm_length: f64,
    pub forearm_radius: f64,
    pub hand_length: f64,
    pub hand_radius: f64,
    pub hip_width: f64,
    pub thigh_length: f64,
    pub thigh_radius: f64,
    pub shin_length: f64,
    pub shin_radius: f64,
    pub foot_length: f64,
    pub foot_radius: f64,
    /// Smooth-union blend distance between capsules.
    pub blend_radius: f64,
    /// Skinning support as a multiple of each capsule radius.
    pub weight_support: f64,
}

impl Default for BodySpec {
    fn default() -> Self {
        BodySpec {
            radial_segments: 9,
            pelvis_height: 0.95,
            pelvis_radius: 0.11,
            torso_radius: 0.14,
            torso_length: 0.32,
            neck_radius: 0.05,
            head_radius: 0.1,
            shoulder_width: 0.34,
            upper_arm_length: 0.28,
            upper_arm_radius: 0.05,
            forearm_length: 0.25,
            forearm_radius: 0.043,
            hand_length: 0.09,
            hand_radius: 0.04,
            hip_width: 0.18,
            thigh_length: 0.42,
            thigh_radius: 0.075,
            shin_length: 0.41,
            shin_radius: 0.055,
            foot_length: 0.12,
            foot_radius: 0.045,
            blend_radius: 0.04,
            weight_support: 1.5,
        }
    }
}

pub const MIN_RADIAL_SEGMENTS: usize = 8;

#[derive(Clone, Copy, Debug)]
struct Capsule {
    a: Vec3<f64>,
    b: Vec3<f64>,
    radius: f64,
    joint: usize,
    region: Region,
}

impl Capsule {
    fn axis_distance(&self, p: Vec3<f64>) -> f64 {
        let ab = self.b - self.a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 {
            ((p - self.a).dot(ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (p - (self.a + ab * t)).norm()
    }

    fn sdf(&self, p: Vec3<f64>) -> f64 {
        self.axis_distance(p) - self.radius
    }
}

fn smooth_min(a: f64, b: f64, k: f64) -> f64 {
    if k <= 0.0 {
        return a.min(b);
    }
    let h = (k - (a - b).abs()).max(0.0) / k;
    a.min(b) - h * h * k / 4.0
}

fn arm_direction(side: f64, abduction_deg: f64) -> Vec3<f64> {
    let a = abduction_deg.to_radians();
    vec3(side * a.sin(), -a.cos(), 0.0)
}

struct Skeleton {
    rest_positions: [Vec3<f64>; JOINT_COUNT],
    capsules: Vec<Capsule>,
}

impl BodySpec {
    pub fn validate(&self) -> Result<()> {
        if self.radial_segments < MIN_RADIAL_SEGMENTS {
            return Err(Error::InvalidSpec(format!(
                "radial_segments {} below minimum {MIN_RADIAL_SEGMENTS}",
                self.radial_segments
            )));
        }
        let dims = [
            self.pelvis_height,
            self.pelvis_radius,
            self.torso_radius,
            self.torso_length,
            self.neck_radius,
            self.head_radius,
            self.shoulder_width,
            self.upper_arm_length,
            self.upper_arm_radius,
            self.forearm_length,
            self.forearm_radius,
            self.hand_length,
            self.hand_radius,
            self.hip_width,
            self.thigh_length,
            self.thigh_radius,
            self.shin_length,
            self.shin_radius,
            self.foot_length,
            self.foot_radius,
            self.weight_support,
        ];
        if dims.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidSpec("body dimensions must be positive".into()));
        }
        if !(self.blend_radius >= 0.0) {
            return Err(Error::InvalidSpec("blend_radius must be non-negative".into()));
        }
        Ok(())
    }

    /// Grid cell size used by the mesher.
    pub fn cell_size(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.upper_arm_radius / self.radial_segments as f64
    }

    fn skeleton(&self) -> Skeleton {
        let pelvis = vec3(0.0, self.pelvis_height, 0.0);
        let spine = pelvis + vec3(0.0, 0.15, 0.0);
        let torso_bottom = pelvis + vec3(0.0, 0.07, 0.0);
        let torso_top = torso_bottom + vec3(0.0, self.torso_length, 0.0);
        let neck = torso_top + vec3(0.0, 0.06, 0.0);
        let shoulder_y = torso_top.y + 0.04;
        let mut rest = [Vec3::zero(); JOINT_COUNT];
        rest[PELVIS] = pelvis;
        rest[SPINE] = spine;
        rest[NECK] = neck;

        let mut capsules = vec![
            Capsule {
                a: pelvis + vec3(-0.07, -0.02, 0.0),
                b: pelvis + vec3(0.07, -0.02, 0.0),
                radius: self.pelvis_radius,
                joint: PELVIS,
                region: Region::Body,
            },
            Capsule {
                a: torso_bottom,
                b: torso_top,
                radius: self.torso_radius,
                joint: SPINE,
                region: Region::Body,
            },
            Capsule {
                a: neck - vec3(0.0, 0.04, 0.0),
                b: neck + vec3(0.0, 0.08, 0.0),
                radius: self.neck_radius,
                joint: NECK,
                region: Region::Body,
            },
            Capsule {
                a: neck + vec3(0.0, 0.16, 0.0),
                b: neck + vec3(0.0, 0.19, 0.01),
                radius: self.head_radius,
                joint: NECK,
                region: Region::Head,
            },
        ];

        for (side, shoulder, elbow, wrist) in [
            (1.0, L_SHOULDER, L_ELBOW, L_WRIST),
            (-1.0, R_SHOULDER, R_ELBOW, R_WRIST),
        ] {
            let dir = arm_direction(side, REST_ARM_ABDUCTION_DEG);
            let s = vec3(side * self.shoulder_width / 2.0, shoulder_y, 0.0);
            let e = s + dir * self.upper_arm_length;
            let w = e + dir * self.forearm_length;
            rest[shoulder] = s;
            rest[elbow] = e;
            rest[wrist] = w;
            capsules.push(Capsule {
                a: s,
                b: e,
                radius: self.upper_arm_radius,
                joint: shoulder,
                region: Region::Limb,
            });
            capsules.push(Capsule {
                a: e,
                b: w,
                radius: self.forearm_radius,
                joint: elbow,
                region: Region::Limb,
            });
            capsules.push(Capsule {
                a: w,
                b: w + dir * self.hand_length,
                radius: self.hand_radius,
                joint: wrist,
                region: Region::Limb,
            });
        }

        for (side, hip, knee, ankle) in [(1.0, L_HIP, L_KNEE, L_ANKLE), (-1.0, R_HIP, R_KNEE, R_ANKLE)] {
            let h = pelvis + vec3(side * self.hip_width / 2.0, -0.04, 0.0);
            let k = h - vec3(0.0, self.thigh_length, 0.0);
            let a = k - vec3(0.0, self.shin_length, 0.0);
            rest[hip] = h;
            rest[knee] = k;
            rest[ankle] = a;
            capsules.push(Capsule {
                a: h,
                b: k,
                radius: self.thigh_radius,
                joint: hip,
                region: Region::Limb,
            });
            capsules.push(Capsule {
                a: k,
                b: a,
                radius: self.shin_radius,
                joint: knee,
                region: Region::Limb,
            });
            capsules.push(Capsule {
                a: a - vec3(0.0, 0.02, 0.02),
                b: a + vec3(0.0, -0.03, self.foot_length),
                radius: self.foot_radius,
                joint: ankle,
                region: Region::Limb,
            });
        }
        Skeleton {
            rest_positions: rest,
            capsules,
        }
    }
}

fn body_sdf(capsules: &[Capsule], k: f64, p: Vec3<f64>) -> f64 {
    capsules
        .iter()
        .map(|c| c.sdf(p))
        .fold(f64::INFINITY, |acc, d| if acc.is_infinite() { d } else { smooth_min(acc, d, k) })
}

/// Surface nets over a regular grid: one vertex per sign-changing cell, one
/// quad per sign-changing grid edge, oriented so normals point outward.
fn surface_nets(
    sdf: impl Fn(Vec3<f64>) -> f64,
    lo: Vec3<f64>,
    hi: Vec3<f64>,
    h: f64,
) -> (Vec<Vec3<f64>>, Vec<[usize; 3]>) {
    let dims = [
        ((hi.x - lo.x) / h).ceil() as usize + 1,
        ((hi.y - lo.y) / h).ceil() as usize + 1,
        ((hi.z - lo.z) / h).ceil() as usize + 1,
    ];
    let idx = |i: usize, j: usize, k: usize| (k * dims[1] + j) * dims[0] + i;
    let point = |i: usize, j: usize, k: usize| lo + vec3(i as f64, j as f64, k as f64) * h;
    let mut values = vec![0.0; dims[0] * dims[1] * dims[2]];
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                values[idx(i, j, k)] = sdf(point(i, j, k));
            }
        }
    }

    const CORNERS: [[usize; 3]; 8] = [
        [0, 0, 0],
        [1, 0, 0],
        [0, 1, 0],
        [1, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [0, 1, 1],
        [1, 1, 1],
    ];
    const EDGES: [[usize; 2]; 12] = [
        [0, 1],
        [2, 3],
        [4, 5],
        [6, 7],
        [0, 2],
        [1, 3],
        [4, 6],
        [5, 7],
        [0, 4],
        [1, 5],
        [2, 6],
        [3, 7],
    ];

    let mut cell_vertex: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    for k in 0..dims[2] - 1 {
        for j in 0..dims[1] - 1 {
            for i in 0..dims[0] - 1 {
                let vals: [f64; 8] = std::array::from_fn(|c| {
                    let o = CORNERS[c];
                    values[idx(i + o[0], j + o[1], k + o[2])]
                });
                let inside = vals.iter().filter(|v| **v < 0.0).count();
                if inside == 0 || inside == 8 {
                    continue;
                }
                let mut acc = Vec3::zero();
                let mut n = 0.0;
                for [a, b] in EDGES {
                    if (vals[a] < 0.0) != (vals[b] < 0.0) {
                        let t = vals[a] / (vals[a] - vals[b]);
                        let pa = point(i + CORNERS[a][0], j + CORNERS[a][1], k + CORNERS[a][2]);
                        let pb = point(i + CORNERS[b][0], j + CORNERS[b][1], k + CORNERS[b][2]);
                        acc += pa + (pb - pa) * t;
                        n += 1.0;
                    }
                }
                cell_vertex.insert([i, j, k], vertices.len());
                vertices.push(acc / n);
            }
        }
    }

    let mut faces = Vec::new();
    for k in 1..dims[2] - 1 {
        for j in 1..dims[1] - 1 {
            for i in 1..dims[0] - 1 {
                let base = [i, j, k];
                let v0 = values[idx(i, j, k)];
                for axis in 0..3 {
                    let mut next = base;
                    next[axis] += 1;
                    if next[axis] >= dims[axis] {
                        continue;
                    }
                    let v1 = values[idx(next[0], next[1], next[2])];
                    if (v0 < 0.0) == (v1 < 0.0) {
                        continue;
                    }
                    // Cells around the edge, counter-clockwise about +axis.
                    let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
                    let offsets = [(1, 1), (0, 1), (0, 0), (1, 0)];
                    let mut quad = [0usize; 4];
                    let mut ok = true;
                    for (q, (du, dv)) in offsets.iter().enumerate() {
                        let mut c = base;
                        c[ua] -= du;
                        c[va] -= dv;
                        match cell_vertex.get(&c) {
                            Some(v) => quad[q] = *v,
                            None => ok = false,
                        }
                    }
                    if !ok {
                        continue;
                    }
                    // Outward normal is +axis when the edge leaves the inside.
                    if v0 >= 0.0 {
                        quad.reverse();
                    }
                    let [a, b, c, d] = quad;
                    let ac = (vertices[a] - vertices[c]).norm_squared();
                    let bd = (vertices[b] - vertices[d]).norm_squared();
                    if ac <= bd {
                        faces.push([a, b, c]);
                        faces.push([a, c, d]);
                    } else {
                        faces.push([a, b, d]);
                        faces.push([b, c, d]);
                    }
                }
            }
        }
    }
    (vertices, faces)
}

/// Generate the synthetic skinned humanoid in its rest pose.
pub fn gen_capsule_body<T: Real>(spec: &BodySpec) -> Result<SkinnedMesh<T>> {
    spec.validate()?;
    let skel = spec.skeleton();
    let h = spec.cell_size();
    let mut lo = Vec3::splat(f64::INFINITY);
    let mut hi = Vec3::splat(f64::NEG_INFINITY);
    for c in &skel.capsules {
        let r = Vec3::splat(c.radius);
        lo = lo.min(c.a - r).min(c.b - r);
        hi = hi.max(c.a + r).max(c.b + r);
    }
    // Offset the grid by a fraction of a cell so lattice points rarely land
    // exactly on the zero level set.
    let margin = Vec3::splat(2.0 * h + 0.137 * h);
    let (vertices, faces) = surface_nets(
        |p| body_sdf(&skel.capsules, spec.blend_radius, p),
        lo - margin,
        hi + margin,
        h,
    );

    let parents = PARENTS.to_vec();
    let mut offsets = Vec::with_capacity(JOINT_COUNT);
    for (j, p) in parents.iter().enumerate() {
        offsets.push(match p {
            Some(p) => skel.rest_positions[j] - skel.rest_positions[*p],
            None => skel.rest_positions[j],
        });
    }
    let joints = JointTree::new(parents.clone(), offsets)?;

    let nearest_capsule = |p: Vec3<f64>| -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in skel.capsules.iter().enumerate() {
            let d = c.sdf(p);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    };

    let blend_weights: Vec<Vec<f64>> = vertices
        .iter()
        .map(|&v| {
            let own = skel.capsules[nearest_capsule(v)].joint;
            let mut candidates = vec![own];
            if let Some(p) = parents[own] {
                candidates.push(p);
            }
            candidates.extend((0..JOINT_COUNT).filter(|j| parents[*j] == Some(own)));
            let mut row = vec![0.0; JOINT_COUNT];
            for &j in &candidates {
                let w = skel
                    .capsules
                    .iter()
                    .filter(|c| c.joint == j)
                    .map(|c| (1.0 - c.axis_distance(v) / (spec.weight_support * c.radius)).max(0.0))
                    .fold(0.0, f64::max);
                row[j] = w;
            }
            let s: f64 = row.iter().sum();
            if s <= 0.0 {
                row[own] = 1.0;
            } else {
                row.iter_mut().for_each(|w| *w /= s);
            }
            row
        })
        .collect();

    let region_labels = faces
        .iter()
        .map(|f| {
            let c = (vertices[f[0]] + vertices[f[1]] + vertices[f[2]]) / 3.0;
            skel.capsules[nearest_capsule(c)].region
        })
        .collect();

    let mesh = SkinnedMesh {
        vertices,
        faces,
        joints,
        blend_weights,
        region_labels,
    };
    mesh.validate()?;
    Ok(mesh.cast())
}

/// Named joint angles (radians) for the synthetic skeleton, relative to the
/// canonical X-pose.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BodyPoseParams {
    pub root_yaw: f64,
    pub root_translation: [f64; 3],
    pub spine_bend: f64,
    pub spine_twist: f64,
    pub neck_nod: f64,
    /// Positive raises the arm sideways.
    pub shoulder_abduct: [f64; 2],
    /// Positive swings the arm forward.
    pub shoulder_flex: [f64; 2],
    pub elbow_flex: [f64; 2],
    /// Positive swings the leg forward.
    pub hip_flex: [f64; 2],
    pub hip_abduct: [f64; 2],
    pub knee_flex: [f64; 2],
}

impl BodyPoseParams {
    pub fn to_pose<T: Real>(&self) -> Pose<T> {
        let x = vec3(1.0, 0.0, 0.0);
        let y = vec3(0.0, 1.0, 0.0);
        let z = vec3(0.0, 0.0, 1.0);
        let rot = |axis: Vec3<f64>, angle: f64| Quat::from_axis_angle(axis, angle);
        let mut q = [Quat::<f64>::identity(); JOINT_COUNT];
        q[PELVIS] = rot(y, self.root_yaw);
        q[SPINE] = rot(y, self.spine_twist) * rot(x, self.spine_bend);
        q[NECK] = rot(x, self.neck_nod);
        let arm_delta = (REST_ARM_ABDUCTION_DEG - CANONICAL_ARM_ABDUCTION_DEG).to_radians();
        let leg_delta = CANONICAL_LEG_ABDUCTION_DEG.to_radians();
        for (s, side, shoulder, elbow, hip, knee) in [
            (0, 1.0, L_SHOULDER, L_ELBOW, L_HIP, L_KNEE),
            (1, -1.0, R_SHOULDER, R_ELBOW, R_HIP, R_KNEE),
        ] {
            let outward = z * side;
            let arm = arm_direction(side, REST_ARM_ABDUCTION_DEG);
            let forward_axis = arm.cross(z);
            q[shoulder] = rot(outward, self.shoulder_abduct[s] - arm_delta)
                * rot(forward_axis, self.shoulder_flex[s]);
            q[elbow] = rot(forward_axis, self.elbow_flex[s]);
            q[hip] = rot(outward, self.hip_abduct[s] + leg_delta) * rot(-x, self.hip_flex[s]);
            q[knee] = rot(x, self.knee_flex[s]);
        }
        Pose {
            joint_rotations: q.iter().map(|q| q.cast()).collect(),
            root_translation: Vec3::from_f64(self.root_translation),
        }
    }
}

/// The fixed X-pose: arms 45° from the body axis, legs slightly apart.
pub fn canonical_pose<T: Real>() -> Pose<T> {
    BodyPoseParams::default().to_pose()
}
