use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{vec3, Mat3, Vec3};
use crate::scalar::Real;

/// Pinhole camera. `rotation`/`translation` map world to camera
/// coordinates; the camera looks along `+z` with `+y` pointing down.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

/// A world-space ray through a pixel center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    pub dir: Vec3<T>,
    pub pixel: (usize, usize),
    pub frame: usize,
}

impl<T: Real> Camera<T> {
    /// Camera at `eye` looking at `target` with world `+y` up.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, focal: T, width: usize, height: usize) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(T::lit(1e-12))
            .ok_or_else(|| Error::InvalidInput("camera eye and target coincide".into()))?;
        let up = vec3(T::zero(), T::one(), T::zero());
        let right = forward
            .cross(up)
            .try_normalize(T::lit(1e-9))
            .ok_or_else(|| Error::InvalidInput("camera looks straight up or down".into()))?;
        let down = forward.cross(right);
        let rotation = Mat3::from_rows([right.to_array(), down.to_array(), forward.to_array()]);
        let cam = Camera {
            fx: focal,
            fy: focal,
            cx: T::from_usize_lossy(width) / T::lit(2.0),
            cy: T::from_usize_lossy(height) / T::lit(2.0),
            width,
            height,
            rotation,
            translation: -(rotation * eye),
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("image size must be positive".into()));
        }
        let tol = T::lit(1e-9).max(crate::mesh::unit_tolerance::<T>() * T::lit(16.0));
        if !(self.rotation.orthonormality_error() <= tol) {
            return Err(Error::InvalidInput("camera rotation is not orthonormal".into()));
        }
        if !self.translation.is_finite() || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::InvalidInput("non-finite camera parameters".into()));
        }
        Ok(())
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Vec3<T> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Viewing axis in world coordinates.
    pub fn axis(&self) -> Vec3<T> {
        self.rotation.row(2)
    }

    pub fn to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation * p + self.translation
    }

    /// Continuous pixel coordinates of `p`, or `None` behind the camera.
    pub fn project(&self, p: Vec3<T>) -> Option<(T, T)> {
        let c = self.to_camera(p);
        if c.z <= T::zero() {
            return None;
        }
        Some((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy))
    }

    /// Unit world direction through the center of pixel `(x, y)`.
    pub fn pixel_direction(&self, x: usize, y: usize) -> Result<Vec3<T>> {
        if x >= self.width || y >= self.height {
            return Err(Error::InvalidPixel {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        let half = T::lit(0.5);
        let d = vec3(
            (T::from_usize_lossy(x) + half - self.cx) / self.fx,
            (T::from_usize_lossy(y) + half - self.cy) / self.fy,
            T::one(),
        );
        Ok((self.rotation.transpose() * d).normalize())
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let c = |v: T| U::lit(v.to_f64_lossy());
        Camera {
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
            width: self.width,
            height: self.height,
            rotation: self.rotation.cast(),
            translation: self.translation.cast(),
        }
    }
}

/// One ray per listed pixel, tagged with `frame`.
pub fn generate_rays<T: Real>(camera: &Camera<T>, pixels: &[(usize, usize)], frame: usize) -> Result<Vec<Ray<T>>> {
    let origin = camera.center();
    pixels
        .iter()
        .map(|&(x, y)| {
            Ok(Ray {
                origin,
                dir: camera.pixel_direction(x, y)?,
                pixel: (x, y),
                frame,
            })
        })
        .collect()
}

/// On-disk camera description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub name: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    /// Whether the camera supervises training.
    pub train: bool,
}

impl CameraFile {
    pub fn from_camera(name: &str, cam: &Camera<f64>, train: bool) -> Self {
        CameraFile {
            name: name.to_string(),
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            rotation: cam.rotation.m,
            translation: cam.translation.to_array(),
            train,
        }
    }

    pub fn to_camera<T: Real>(&self) -> Result<Camera<T>> {
        let cam = Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            rotation: Mat3::from_rows(self.rotation),
            translation: Vec3::from_array(self.translation),
        };
        cam.validate()?;
        Ok(cam.cast())
    }
}
