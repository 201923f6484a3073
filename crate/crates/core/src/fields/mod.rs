//! Learnable fields: the canonical-space body network, the world-space
//! lighting network, the pose encoder and the per-frame latent table.

pub mod checkpoint;
mod mlp;
pub mod tape;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{vec3, Vec3};
use crate::mesh::Pose;
use crate::scalar::Real;

pub use checkpoint::{Checkpoint, Moments, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mlp::{BoundMlp, Dense, Mlp};
pub use tape::{encoded_width, positional_encode_rows, sigmoid, softplus, CompositeLayout, Gradients, Tape, Var};

/// Below this gradient norm the density normal falls back to the mesh.
pub const NORMAL_EPS: f64 = 1e-8;

/// How the world-space network turns texture into color.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LightingMode {
    /// `c = s·t` with a scalar lightness `s` predicted from `(p, d, n)`.
    #[default]
    Scalar,
    /// No lighting network; `c = t`.
    Off,
    /// The network predicts RGB from `(p, d, n, t)`.
    Color,
}

/// Architecture of all fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub joint_count: usize,
    pub hidden_width: usize,
    /// Hidden layers of the body network.
    pub body_layers: usize,
    /// Hidden layer that also receives the full network input.
    pub body_shortcut: usize,
    pub light_width: usize,
    pub light_layers: usize,
    pub pose_width: usize,
    /// Affine layers of the pose encoder.
    pub pose_layers: usize,
    pub pose_feature_dim: usize,
    pub latent_dim: usize,
    /// Positional-encoding frequencies for canonical points.
    pub pe_frequencies: usize,
    pub include_input: bool,
    /// Positional-encoding frequencies for lighting inputs (0 = raw).
    pub light_pe_frequencies: usize,
    pub lighting: LightingMode,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            joint_count: crate::mesh::JOINT_COUNT,
            hidden_width: 128,
            body_layers: 8,
            body_shortcut: 4,
            light_width: 128,
            light_layers: 4,
            pose_width: 64,
            pose_layers: 3,
            pose_feature_dim: 32,
            latent_dim: 8,
            pe_frequencies: 10,
            include_input: true,
            light_pe_frequencies: 0,
            lighting: LightingMode::Scalar,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("joint_count", self.joint_count),
            ("hidden_width", self.hidden_width),
            ("body_layers", self.body_layers),
            ("light_width", self.light_width),
            ("light_layers", self.light_layers),
            ("pose_width", self.pose_width),
            ("pose_layers", self.pose_layers),
            ("pose_feature_dim", self.pose_feature_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.body_shortcut == 0 || self.body_shortcut >= self.body_layers {
            return Err(Error::Config(format!(
                "body_shortcut {} must lie in 1..{}",
                self.body_shortcut, self.body_layers
            )));
        }
        Ok(())
    }

    pub fn pose_input_dim(&self) -> usize {
        4 * self.joint_count.saturating_sub(1)
    }

    pub fn body_input_dim(&self) -> usize {
        encoded_width(3, self.pe_frequencies, self.include_input) + self.pose_feature_dim + self.latent_dim
    }

    pub fn light_input_dim(&self) -> usize {
        let raw = encoded_width(9, self.light_pe_frequencies, true);
        match self.lighting {
            LightingMode::Color => raw + 3,
            _ => raw,
        }
    }
}

/// All learnable state.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams<T> {
    pub config: FieldConfig,
    pub body: Mlp<T>,
    pub lighting: Option<Mlp<T>>,
    pub pose_encoder: Mlp<T>,
    /// One latent row per training frame.
    pub latent_table: Array2<T>,
}

impl<T: Real> FieldParams<T> {
    /// All-zero parameters of the configured shape.
    pub fn zeros(config: &FieldConfig, frame_count: usize) -> Result<Self> {
        config.validate()?;
        let body = Mlp::zeros(
            config.body_input_dim(),
            &vec![config.hidden_width; config.body_layers],
            4,
            Some(config.body_shortcut),
        )?;
        let lighting = match config.lighting {
            LightingMode::Off => None,
            mode => Some(Mlp::zeros(
                config.light_input_dim(),
                &vec![config.light_width; config.light_layers],
                if mode == LightingMode::Color { 3 } else { 1 },
                None,
            )?),
        };
        let pose_encoder = Mlp::zeros(
            config.pose_input_dim(),
            &vec![config.pose_width; config.pose_layers - 1],
            config.pose_feature_dim,
            None,
        )?;
        Ok(FieldParams {
            config: config.clone(),
            body,
            lighting,
            pose_encoder,
            latent_table: Array2::zeros((frame_count, config.latent_dim)),
        })
    }

    pub fn frame_count(&self) -> usize {
        self.latent_table.nrows()
    }

    /// Parameter blocks in declaration order: body, lighting, pose encoder,
    /// latent table.
    pub fn blocks(&self) -> Vec<&Array2<T>> {
        let mut out: Vec<&Array2<T>> = self.body.blocks().collect();
        if let Some(l) = &self.lighting {
            out.extend(l.blocks());
        }
        out.extend(self.pose_encoder.blocks());
        out.push(&self.latent_table);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Array2<T>> {
        let mut out: Vec<&mut Array2<T>> = self.body.blocks_mut().collect();
        if let Some(l) = &mut self.lighting {
            out.extend(l.blocks_mut());
        }
        out.extend(self.pose_encoder.blocks_mut());
        out.push(&mut self.latent_table);
        out
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Zero arrays shaped like [`FieldParams::blocks`].
    pub fn zero_blocks(&self) -> Vec<Array2<T>> {
        self.blocks().iter().map(|b| Array2::zeros(b.raw_dim())).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expect = FieldParams::<T>::zeros(&self.config, self.frame_count())?;
        for (i, (a, b)) in self.blocks().iter().zip(expect.blocks()).enumerate() {
            if a.shape() != b.shape() {
                return Err(Error::Config(format!(
                    "parameter block {i} has shape {:?}, config implies {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        if self.blocks().len() != expect.blocks().len() {
            return Err(Error::Config("parameter block count does not match config".into()));
        }
        if self.blocks().iter().any(|b| b.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite("parameters".into()));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> FieldParams<U> {
        let mut out = FieldParams::<U>::zeros(&self.config, self.frame_count()).expect("validated config");
        for (dst, src) in out.blocks_mut().into_iter().zip(self.blocks()) {
            *dst = src.mapv(|x| U::lit(x.to_f64_lossy()));
        }
        out
    }

    /// Record all parameters on `tape`. The latent input is the table row of
    /// a training frame, zeros, or an explicit vector.
    pub fn bind(&self, tape: &mut Tape<T>, latent: Latent<'_, T>) -> Result<BoundParams> {
        let latent_dim = self.config.latent_dim;
        let (latent_var, latent_row) = match latent {
            Latent::Frame(i) => {
                if i >= self.frame_count() {
                    return Err(Error::InvalidInput(format!(
                        "frame {i} has no latent row ({} frames)",
                        self.frame_count()
                    )));
                }
                let row = self.latent_table.row(i).to_owned().insert_axis(Axis(0));
                (tape.leaf(row), Some(i))
            }
            Latent::Zero => (tape.leaf(Array2::zeros((1, latent_dim))), None),
            Latent::Value(v) => {
                if v.len() != latent_dim {
                    return Err(Error::Config(format!("latent has {} entries, expected {latent_dim}", v.len())));
                }
                (tape.leaf(Array2::from_shape_vec((1, latent_dim), v.to_vec()).expect("shape")), None)
            }
        };
        Ok(BoundParams {
            body: self.body.bind(tape),
            lighting: self.lighting.as_ref().map(|l| l.bind(tape)),
            pose: self.pose_encoder.bind(tape),
            latent: latent_var,
            latent_row,
        })
    }

    /// Flattened non-root joint quaternions, sign-fixed to `w ≥ 0`.
    pub fn pose_input(&self, pose: &Pose<T>) -> Result<Array2<T>> {
        let expect = self.config.pose_input_dim();
        let got = 4 * pose.joint_rotations.len().saturating_sub(1);
        if got != expect {
            return Err(Error::Config(format!(
                "pose encoder expects {expect} inputs, pose provides {got}"
            )));
        }
        let mut flat = Vec::with_capacity(expect);
        for q in pose.joint_rotations.iter().skip(1) {
            let sign = if q.w < T::zero() { -T::one() } else { T::one() };
            flat.extend(q.to_array().iter().map(|c| *c * sign));
        }
        Ok(Array2::from_shape_vec((1, expect), flat).expect("shape"))
    }

    /// Pose encoder graph; returns the `1 × J` feature node.
    pub fn pose_feature_graph(&self, tape: &mut Tape<T>, bound: &BoundParams, pose: &Pose<T>) -> Result<Var> {
        let x = tape.leaf(self.pose_input(pose)?);
        self.pose_encoder.forward(tape, &bound.pose, x)
    }

    /// Body network graph on canonical points `p_c` (`n × 3`) with pose
    /// feature `j` (`1 × J`). Returns `(σ: n × 1, t: n × 3)`.
    pub fn body_graph(&self, tape: &mut Tape<T>, bound: &BoundParams, p_c: Var, j: Var) -> Result<(Var, Var)> {
        let n = tape.value(p_c).nrows();
        let enc = tape.encode(p_c, self.config.pe_frequencies, self.config.include_input);
        let jb = tape.broadcast_rows(j, n)?;
        let lb = tape.broadcast_rows(bound.latent, n)?;
        let x = tape.concat(&[enc, jb, lb])?;
        let out = self.body.forward(tape, &bound.body, x)?;
        let raw_sigma = tape.slice_cols(out, 0, 1)?;
        let raw_tex = tape.slice_cols(out, 1, 4)?;
        Ok((tape.softplus(raw_sigma), tape.sigmoid(raw_tex)))
    }

    /// World-space shading graph. `light_in` holds `[p_w, d_w, n_w]` rows.
    /// Returns the color node and, in scalar mode, the lightness node.
    pub fn shade_graph(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        light_in: Var,
        tex: Var,
    ) -> Result<(Var, Option<Var>)> {
        match (self.config.lighting, &self.lighting, &bound.lighting) {
            (LightingMode::Off, _, _) => Ok((tex, None)),
            (LightingMode::Scalar, Some(mlp), Some(b)) => {
                let x = tape.encode(light_in, self.config.light_pe_frequencies, true);
                let z = mlp.forward(tape, b, x)?;
                let sp = tape.softplus(z);
                let s = tape.scale(sp, T::one() / T::LN_2());
                Ok((tape.mul_col(tex, s)?, Some(s)))
            }
            (LightingMode::Color, Some(mlp), Some(b)) => {
                let x = tape.encode(light_in, self.config.light_pe_frequencies, true);
                let x = tape.concat(&[x, tex])?;
                let z = mlp.forward(tape, b, x)?;
                Ok((tape.sigmoid(z), None))
            }
            _ => Err(Error::Config("lighting network missing for configured mode".into())),
        }
    }

    /// Gradients of every parameter block, in [`FieldParams::blocks`] order.
    /// Blocks the root does not depend on get zeros.
    pub fn collect_grads(&self, bound: &BoundParams, grads: &mut Gradients<T>) -> Vec<Array2<T>> {
        let mut out = self.zero_blocks();
        let mut vars: Vec<Var> = Vec::new();
        let flat = |b: &BoundMlp| b.iter().flat_map(|(w, bb)| [*w, *bb]).collect::<Vec<_>>();
        vars.extend(flat(&bound.body));
        if let Some(l) = &bound.lighting {
            vars.extend(flat(l));
        }
        vars.extend(flat(&bound.pose));
        for (slot, v) in out.iter_mut().zip(&vars) {
            if let Some(g) = grads.take(*v) {
                *slot = g;
            }
        }
        if let (Some(row), Some(g)) = (bound.latent_row, grads.take(bound.latent)) {
            let table = out.last_mut().expect("latent block");
            table.row_mut(row).assign(&g.row(0));
        }
        out
    }
}

/// Which latent vector conditions the body network.
#[derive(Clone, Copy, Debug)]
pub enum Latent<'a, T> {
    /// The learned row of a training frame.
    Frame(usize),
    /// All zeros, used for poses outside the training set.
    Zero,
    Value(&'a [T]),
}

/// Tape nodes of all parameters.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub body: BoundMlp,
    pub lighting: Option<BoundMlp>,
    pub pose: BoundMlp,
    pub latent: Var,
    latent_row: Option<usize>,
}

impl BoundParams {
    /// Every node whose gradient the optimizer needs.
    pub fn targets(&self) -> Vec<Var> {
        let mut out: Vec<Var> = Vec::new();
        let mut push = |b: &BoundMlp| out.extend(b.iter().flat_map(|(w, bb)| [*w, *bb]));
        push(&self.body);
        if let Some(l) = &self.lighting {
            push(l);
        }
        push(&self.pose);
        if self.latent_row.is_some() {
            out.push(self.latent);
        }
        out
    }
}

/// Seeded initialization: uniform fan-in weights, zero biases, latent rows
/// drawn from a standard normal.
pub fn init_params<T: Real>(config: &FieldConfig, frame_count: usize, seed: u64) -> Result<FieldParams<T>> {
    let mut params = FieldParams::zeros(config, frame_count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    params.body.init_uniform(&mut rng);
    if let Some(l) = &mut params.lighting {
        l.init_uniform(&mut rng);
    }
    params.pose_encoder.init_uniform(&mut rng);
    params.latent_table.mapv_inplace(|_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::lit(z)
    });
    Ok(params)
}

/// Positional encoding of one vector: `[x,] sin(2^k π x), cos(2^k π x)` for
/// `k = 0..L`. With `L = 0` the raw input is returned.
pub fn positional_encode<T: Real>(x: &[T], frequencies: usize, include_input: bool) -> Vec<T> {
    let row = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("shape");
    positional_encode_rows(&row, frequencies, include_input).into_raw_vec_and_offset().0
}

/// Learned encoding of a pose.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseFeature<T> {
    pub values: Vec<T>,
}

impl<T: Real> PoseFeature<T> {
    pub fn as_row(&self) -> Array2<T> {
        Array2::from_shape_vec((1, self.values.len()), self.values.clone()).expect("shape")
    }
}

pub fn pose_feature<T: Real>(params: &FieldParams<T>, pose: &Pose<T>) -> Result<PoseFeature<T>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, Latent::Zero)?;
    let j = params.pose_feature_graph(&mut tape, &bound, pose)?;
    Ok(PoseFeature {
        values: tape.value(j).iter().copied().collect(),
    })
}

fn check_finite<T: Real>(what: &str, v: Vec3<T>) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Evaluation(format!("non-finite {what}")))
    }
}

/// Density and texture of many canonical points, plus `∇σ` per point.
#[derive(Clone, Debug)]
pub struct BodySamples<T> {
    pub sigma: Vec<T>,
    pub texture: Vec<[T; 3]>,
    pub density_grad: Vec<Vec3<T>>,
}

/// Evaluate the body network on rows of `points` and differentiate the
/// density with respect to the input point.
pub fn body_samples<T: Real>(
    params: &FieldParams<T>,
    points: &[Vec3<T>],
    feature: &PoseFeature<T>,
    latent: Latent<'_, T>,
) -> Result<BodySamples<T>> {
    if let Some(p) = points.iter().find(|p| !p.is_finite()) {
        return Err(Error::Evaluation(format!("non-finite canonical point {p:?}")));
    }
    if feature.values.len() != params.config.pose_feature_dim {
        return Err(Error::Config(format!(
            "pose feature has {} entries, expected {}",
            feature.values.len(),
            params.config.pose_feature_dim
        )));
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, latent)?;
    let p = tape.leaf(points_to_rows(points));
    let j = tape.leaf(feature.as_row());
    let (sigma, tex) = params.body_graph(&mut tape, &bound, p, j)?;
    let grad = density_gradient(&mut tape, sigma, p)?;
    let sv = tape.value(sigma);
    let tv = tape.value(tex);
    Ok(BodySamples {
        sigma: sv.column(0).to_vec(),
        texture: tv.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect(),
        density_grad: grad.rows().into_iter().map(|r| vec3(r[0], r[1], r[2])).collect(),
    })
}

/// Row-wise `∂σ/∂p` for a density node computed independently per row.
pub fn density_gradient<T: Real>(tape: &mut Tape<T>, sigma: Var, p: Var) -> Result<Array2<T>> {
    let total = tape.sum(sigma);
    let mut grads = tape.grad(total, &[p])?;
    Ok(grads
        .take(p)
        .unwrap_or_else(|| Array2::zeros(tape.value(p).raw_dim())))
}

/// `−∇σ/‖∇σ‖`, or the normalized fallback when the gradient vanishes.
pub fn density_normal<T: Real>(grad: Vec3<T>, fallback: Vec3<T>) -> Vec3<T> {
    match (-grad).try_normalize(T::lit(NORMAL_EPS)) {
        Some(n) if grad.is_finite() => n,
        _ => fallback.try_normalize(T::zero()).unwrap_or_else(|| vec3(T::zero(), T::zero(), T::one())),
    }
}

pub fn points_to_rows<T: Real>(points: &[Vec3<T>]) -> Array2<T> {
    let mut out = Array2::zeros((points.len(), 3));
    for (i, p) in points.iter().enumerate() {
        out[[i, 0]] = p.x;
        out[[i, 1]] = p.y;
        out[[i, 2]] = p.z;
    }
    out
}

/// `(σ, t)` of the body network at one canonical point.
pub fn body_forward<T: Real>(
    params: &FieldParams<T>,
    p_c: Vec3<T>,
    feature: &PoseFeature<T>,
    latent: &[T],
) -> Result<(T, [T; 3])> {
    check_finite("canonical point", p_c)?;
    let out = body_samples(params, &[p_c], feature, Latent::Value(latent))?;
    Ok((out.sigma[0], out.texture[0]))
}

/// Unit normal `−∇σ/‖∇σ‖` at a canonical point; `fallback` (normally the
/// nearest canonical face normal) is used when `‖∇σ‖ < 1e-8`.
pub fn body_normal<T: Real>(
    params: &FieldParams<T>,
    p_c: Vec3<T>,
    feature: &PoseFeature<T>,
    latent: &[T],
    fallback: Vec3<T>,
) -> Result<Vec3<T>> {
    check_finite("canonical point", p_c)?;
    let out = body_samples(params, &[p_c], feature, Latent::Value(latent))?;
    Ok(density_normal(out.density_grad[0], fallback))
}

/// Scalar lightness at a world point seen along `d_w` with normal `n_w`.
pub fn light_forward<T: Real>(params: &FieldParams<T>, p_w: Vec3<T>, d_w: Vec3<T>, n_w: Vec3<T>) -> Result<T> {
    check_finite("world point", p_w)?;
    check_finite("view direction", d_w)?;
    check_finite("normal", n_w)?;
    let tol = T::lit(1e-6).max(crate::mesh::unit_tolerance::<T>());
    for (name, v) in [("view direction", d_w), ("normal", n_w)] {
        if (v.norm() - T::one()).abs() > tol {
            return Err(Error::InvalidInput(format!("{name} is not unit length")));
        }
    }
    match params.config.lighting {
        LightingMode::Off => Ok(T::one()),
        LightingMode::Color => Err(Error::Config("color lighting has no scalar lightness".into())),
        LightingMode::Scalar => {
            let s = lightness_rows(params, &light_rows(&[p_w], &[d_w], &[n_w]))?;
            Ok(s[0])
        }
    }
}

/// Lightness for many `[p, d, n]` rows (scalar mode only).
pub fn lightness_rows<T: Real>(params: &FieldParams<T>, rows: &Array2<T>) -> Result<Vec<T>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, Latent::Zero)?;
    let x = tape.leaf(rows.clone());
    let tex = tape.leaf(Array2::ones((rows.nrows(), 3)));
    let (_, s) = params.shade_graph(&mut tape, &bound, x, tex)?;
    let s = s.ok_or_else(|| Error::Config("lighting mode has no scalar lightness".into()))?;
    Ok(tape.value(s).column(0).to_vec())
}

/// Pack `[p, d, n]` lighting inputs as rows.
pub fn light_rows<T: Real>(p: &[Vec3<T>], d: &[Vec3<T>], n: &[Vec3<T>]) -> Array2<T> {
    let mut out = Array2::zeros((p.len(), 9));
    for i in 0..p.len() {
        for (k, v) in [p[i], d[i], n[i]].iter().enumerate() {
            out[[i, 3 * k]] = v.x;
            out[[i, 3 * k + 1]] = v.y;
            out[[i, 3 * k + 2]] = v.z;
        }
    }
    out
}

/// `c = s·t`.
pub fn shade<T: Real>(s: T, t: [T; 3]) -> [T; 3] {
    [s * t[0], s * t[1], s * t[2]]
}
