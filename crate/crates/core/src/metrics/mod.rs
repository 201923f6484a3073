//! Masked image quality metrics.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::imaging::{Image, Mask};
use crate::mesh::{mesh_aabb, PosedMesh};
use crate::render::Camera;
use crate::scalar::Real;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise convex hull (monotone chain), collinear points dropped.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite points"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn inside_hull(hull: &[(f64, f64)], p: (f64, f64)) -> bool {
    if hull.len() < 3 {
        return false;
    }
    (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= 0.0)
}

/// Pixels whose centers lie in the convex hull of the projected corners of
/// the posed mesh's bounding box.
///
/// A box straddling the camera plane covers the whole image; a box fully
/// behind the camera gives an empty mask.
pub fn projected_bbox_mask<T: Real>(camera: &Camera<T>, posed: &PosedMesh<T>) -> Mask {
    let (w, h) = (camera.width, camera.height);
    let bbox = mesh_aabb(posed, T::zero());
    let corners = bbox.corners();
    let projected: Vec<Option<(T, T)>> = corners.iter().map(|c| camera.project(*c)).collect();
    let visible = projected.iter().filter(|p| p.is_some()).count();
    if visible == 0 {
        return Mask::empty(w, h);
    }
    if visible < corners.len() {
        return Mask {
            width: w,
            height: h,
            data: vec![true; w * h],
        };
    }
    let pts: Vec<(f64, f64)> = projected
        .iter()
        .flatten()
        .map(|(x, y)| (x.to_f64_lossy(), y.to_f64_lossy()))
        .collect();
    let hull = convex_hull(&pts);
    let mut mask = Mask::empty(w, h);
    for y in 0..h {
        for x in 0..w {
            mask.set(x, y, inside_hull(&hull, (x as f64 + 0.5, y as f64 + 0.5)));
        }
    }
    mask
}

fn check_shapes(a: &Image, b: &Image, mask: &Mask) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) || (a.width, a.height) != (mask.width, mask.height) {
        return Err(Error::InvalidInput(format!(
            "shape mismatch: {}x{}, {}x{}, mask {}x{}",
            a.width, a.height, b.width, b.height, mask.width, mask.height
        )));
    }
    Ok(())
}

/// Mean squared error over masked pixels and all channels.
pub fn mse_masked(a: &Image, b: &Image, mask: &Mask) -> Result<f64> {
    check_shapes(a, b, mask)?;
    let n = mask.count();
    if n == 0 {
        return Err(Error::InvalidInput("empty evaluation mask".into()));
    }
    let mut sum = 0.0;
    for i in (0..a.data.len()).filter(|&i| mask.data[i]) {
        for c in 0..3 {
            let d = a.data[i][c] - b.data[i][c];
            sum += d * d;
        }
    }
    Ok(sum / (3 * n) as f64)
}

/// `10·log10(1/MSE)` over masked pixels; `+∞` for identical images.
pub fn psnr_masked(a: &Image, b: &Image, mask: &Mask) -> Result<f64> {
    let mse = mse_masked(a, b, mask)?;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over channels and
/// over windows that fit inside the image and whose center is masked.
pub fn ssim(a: &Image, b: &Image, mask: &Mask) -> Result<f64> {
    check_shapes(a, b, mask)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "image {w}x{h} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let g = gaussian_window();
    let r = SSIM_WINDOW / 2;
    let mut total = 0.0;
    let mut count = 0usize;
    for cy in r..h - r {
        for cx in r..w - r {
            if !mask.get(cx, cy) {
                continue;
            }
            for c in 0..3 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let wt = g[dx] * g[dy];
                        let (x, y) = (cx + dx - r, cy + dy - r);
                        let va = a.get(x, y)[c];
                        let vb = b.get(x, y)[c];
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                }
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
                let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
                total += num / den;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput("no SSIM window is centered inside the mask".into()));
    }
    Ok(total / (3 * count) as f64)
}

/// Mean color of the masked pixels over a set of images.
pub fn mean_masked_color(images: &[(&Image, &Mask)]) -> Result<[f64; 3]> {
    let mut sum = [0.0; 3];
    let mut n = 0usize;
    for (img, mask) in images {
        for i in (0..img.data.len()).filter(|&i| mask.data[i]) {
            for c in 0..3 {
                sum[c] += img.data[i][c];
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("no foreground pixels".into()));
    }
    Ok(sum.map(|s| s / n as f64))
}

fn ser_psnr<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_psnr<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
        Repr::Str(s) => Err(serde::de::Error::custom(format!("bad PSNR value {s:?}"))),
    }
}

/// Scores of one image pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub name: String,
    /// dB; `"inf"` in JSON for identical images.
    #[serde(serialize_with = "ser_psnr", deserialize_with = "de_psnr")]
    pub psnr: f64,
    pub ssim: f64,
    /// Fraction of pixels inside the evaluation mask.
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: Vec<ImageScore>,
    #[serde(serialize_with = "ser_psnr", deserialize_with = "de_psnr")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_coverage: f64,
}

impl EvalReport {
    pub fn new(images: Vec<ImageScore>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidInput("no images to aggregate".into()));
        }
        let n = images.len() as f64;
        Ok(EvalReport {
            mean_psnr: images.iter().map(|s| s.psnr).sum::<f64>() / n,
            mean_ssim: images.iter().map(|s| s.ssim).sum::<f64>() / n,
            mean_coverage: images.iter().map(|s| s.coverage).sum::<f64>() / n,
            images,
        })
    }
}

/// Score a prediction against ground truth inside `mask`.
pub fn score(name: &str, pred: &Image, truth: &Image, mask: &Mask) -> Result<ImageScore> {
    Ok(ImageScore {
        name: name.to_string(),
        psnr: psnr_masked(pred, truth, mask)?,
        ssim: ssim(pred, truth, mask)?,
        coverage: mask.count() as f64 / mask.data.len() as f64,
    })
}

/// Prediction, ground truth and 4× amplified absolute difference side by side.
pub fn comparison_strip(pred: &Image, truth: &Image) -> Result<Image> {
    if (pred.width, pred.height) != (truth.width, truth.height) {
        return Err(Error::InvalidInput("comparison images differ in size".into()));
    }
    let (w, h) = (pred.width, pred.height);
    let mut out = Image::filled(3 * w, h, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            let p = pred.get(x, y);
            let t = truth.get(x, y);
            out.set(x, y, p);
            out.set(w + x, y, t);
            out.set(2 * w + x, y, std::array::from_fn(|c| (4.0 * (p[c] - t[c]).abs()).min(1.0)));
        }
    }
    Ok(out)
}

/// Stack strips vertically.
pub fn stack_rows(rows: &[Image]) -> Result<Image> {
    let Some(first) = rows.first() else {
        return Err(Error::InvalidInput("nothing to stack".into()));
    };
    if rows.iter().any(|r| r.width != first.width) {
        return Err(Error::InvalidInput("strips differ in width".into()));
    }
    let mut data = Vec::new();
    for r in rows {
        data.extend_from_slice(&r.data);
    }
    Ok(Image {
        width: first.width,
        height: rows.iter().map(|r| r.height).sum(),
        data,
    })
}
