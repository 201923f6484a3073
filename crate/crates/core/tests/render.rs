use std::sync::Arc;

use dsnerf::barymap::{build_face_index, decode_local, encode_local, is_outlier, map_direction, OutlierBounds};
use dsnerf::fields::{init_params, BodySamples, FieldConfig, Latent, LightingMode, Tape};
use dsnerf::linalg::{vec3, Mat3, Vec3};
use dsnerf::mesh::{canonical_pose, gen_capsule_body, lbs_pose, mesh_aabb, BodyPoseParams, BodySpec, SkinnedMesh};
use dsnerf::render::*;
use dsnerf::Result;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn body() -> Arc<SkinnedMesh<f64>> {
    Arc::new(gen_capsule_body(&BodySpec::default()).unwrap())
}

fn walking() -> BodyPoseParams {
    BodyPoseParams {
        root_yaw: 0.3,
        spine_bend: 0.2,
        elbow_flex: [0.6, 0.2],
        hip_flex: [0.4, -0.3],
        knee_flex: [0.5, 0.1],
        ..Default::default()
    }
}

fn fixture(mapping: Mapping) -> (CanonicalSpace<f64>, FrameGeometry<f64>) {
    let rest = body();
    let canonical = CanonicalSpace::new(&rest, &canonical_pose()).unwrap();
    let world = lbs_pose(&rest, &walking().to_pose()).unwrap();
    let geom = FrameGeometry::new(world, &canonical, mapping, 0.1).unwrap();
    (canonical, geom)
}

fn small_config(lighting: LightingMode) -> FieldConfig {
    FieldConfig {
        hidden_width: 16,
        light_width: 16,
        pose_width: 8,
        pose_feature_dim: 4,
        latent_dim: 2,
        pe_frequencies: 2,
        lighting,
        ..Default::default()
    }
}

fn front_camera(w: usize, h: usize) -> Camera<f64> {
    Camera::look_at(vec3(0.0, 0.9, 3.0), vec3(0.0, 0.9, 0.0), 40.0, w, h).unwrap()
}

#[test]
fn principal_point_ray_follows_optical_axis() {
    let mut cam = front_camera(64, 64);
    // Put the principal point on a pixel center.
    cam.cx = 20.5;
    cam.cy = 40.5;
    let d = cam.pixel_direction(20, 40).unwrap();
    assert!((d - cam.axis()).norm() < 1e-12);
}

#[test]
fn identity_extrinsics_place_origin_at_zero() {
    let cam = Camera {
        fx: 50.0,
        fy: 50.0,
        cx: 32.0,
        cy: 32.0,
        width: 64,
        height: 64,
        rotation: Mat3::identity(),
        translation: Vec3::zero(),
    };
    let rays = generate_rays(&cam, &[(0, 0), (63, 63)], 3).unwrap();
    assert!(rays.iter().all(|r| r.origin == Vec3::zero() && r.frame == 3));
}

#[test]
fn all_directions_are_unit() {
    let cam: Camera<f64> = Camera::look_at(vec3(1.0, 2.0, 3.0), vec3(0.0, 0.5, 0.0), 70.0, 64, 64).unwrap();
    let px: Vec<_> = (0..64).flat_map(|y| (0..64).map(move |x| (x, y))).collect();
    for r in generate_rays(&cam, &px, 0).unwrap() {
        assert!((r.dir.norm() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn out_of_bounds_pixel_is_rejected() {
    let cam = front_camera(8, 8);
    assert!(matches!(
        generate_rays(&cam, &[(8, 0)], 0),
        Err(dsnerf::Error::InvalidPixel { x: 8, .. })
    ));
}

#[test]
fn projection_inverts_back_projection() {
    let cam = front_camera(64, 48);
    let d = cam.pixel_direction(10, 30).unwrap();
    let (x, y) = cam.project(cam.center() + d * 2.0).unwrap();
    assert!((x - 10.5).abs() < 1e-9 && (y - 30.5).abs() < 1e-9);
}

#[test]
fn camera_file_round_trip() {
    let cam = front_camera(64, 48);
    let file = CameraFile::from_camera("c0", &cam, true);
    let text = serde_json::to_string(&file).unwrap();
    let back: CameraFile = serde_json::from_str(&text).unwrap();
    assert_eq!(back.to_camera::<f64>().unwrap(), cam);
}

#[test]
fn ray_pointing_away_misses() {
    let rest = body();
    let posed = lbs_pose(&rest, &canonical_pose()).unwrap();
    let ray = Ray {
        origin: vec3(0.0, 1.0, 3.0),
        dir: vec3(0.0, 0.0, 1.0),
        pixel: (0, 0),
        frame: 0,
    };
    assert_eq!(ray_bounds(&ray, &posed, 0.1), None);
}

/// Entry and exit of a ray through a capsule of radius `r` around segment
/// `a`–`b`, by dense root bracketing of the distance function.
fn capsule_hits(o: Vec3<f64>, d: Vec3<f64>, a: Vec3<f64>, b: Vec3<f64>, r: f64) -> (f64, f64) {
    let dist = |t: f64| {
        let p = o + d * t;
        let ab = b - a;
        let s = ((p - a).dot(ab) / ab.dot(ab)).clamp(0.0, 1.0);
        (p - (a + ab * s)).norm() - r
    };
    let bisect = |mut lo: f64, mut hi: f64| {
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if (dist(lo) < 0.0) == (dist(mid) < 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let n = 10_000;
    let ts: Vec<f64> = (0..=n).map(|i| 6.0 * i as f64 / n as f64).collect();
    let first = ts.windows(2).find(|w| dist(w[0]) >= 0.0 && dist(w[1]) < 0.0).unwrap();
    let last = ts.windows(2).rev().find(|w| dist(w[0]) < 0.0 && dist(w[1]) >= 0.0).unwrap();
    (bisect(first[0], first[1]), bisect(last[0], last[1]))
}

#[test]
fn torso_ray_brackets_the_capsule() {
    let spec = BodySpec::default();
    let rest = Arc::new(gen_capsule_body::<f64>(&spec).unwrap());
    let posed = lbs_pose(&rest, &canonical_pose()).unwrap();
    let bottom = vec3(0.0, spec.pelvis_height + 0.07, 0.0);
    let top = bottom + vec3(0.0, spec.torso_length, 0.0);
    let center = (bottom + top) * 0.5;
    let ray = Ray {
        origin: center + vec3(0.0, 0.0, 3.0),
        dir: vec3(0.0, 0.0, -1.0),
        pixel: (0, 0),
        frame: 0,
    };
    let dilation = 0.1;
    let (near, far) = ray_bounds(&ray, &posed, dilation).unwrap();
    let (t0, t1) = capsule_hits(ray.origin, ray.dir, bottom, top, spec.torso_radius);
    // Meshing error of the implicit surface is at most a grid cell.
    let slack = 2.0 * spec.cell_size();
    assert!(near <= t0 + slack && near >= t0 - dilation - slack, "near {near} vs {t0}");
    assert!(far >= t1 - slack && far <= t1 + dilation + slack, "far {far} vs {t1}");
}

#[test]
fn bounds_stay_inside_global_box() {
    let (_, geom) = fixture(Mapping::Barycentric);
    let global = mesh_aabb(&geom.world, 0.1);
    let center = global.center();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut hits = 0;
    for _ in 0..10_000 {
        let origin = center
            + vec3(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
        let target = center
            + vec3(
                rng.random_range(-0.6..0.6),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.3..0.3),
            );
        let dir = (target - origin).normalize();
        let Some((near, far)) = geom.boxes.intersect(origin, dir) else {
            continue;
        };
        hits += 1;
        let inv = vec3(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let (g0, g1) = global.intersect_ray(origin, inv).unwrap();
        assert!(near >= g0 - 1e-9 && far <= g1 + 1e-9 && near <= far);
    }
    assert!(hits > 1000, "{hits}");
}

#[test]
fn candidates_cover_every_hit_face_box() {
    let (_, geom) = fixture(Mapping::Barycentric);
    let origin = vec3(0.1, 1.1, 2.5);
    let dir = vec3(-0.05, -0.1, -1.0).normalize();
    let mut found = Vec::new();
    geom.boxes.for_each_candidate(origin, dir, |f| found.push(f));
    found.sort();
    let inv = vec3(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
    let expected: Vec<usize> = (0..geom.world.face_count())
        .filter(|&f| {
            dsnerf::mesh::Aabb::from_points(&geom.world.face_vertices(f))
                .dilated(0.1)
                .intersect_ray(origin, inv)
                .is_some()
        })
        .collect();
    assert_eq!(found, expected);
}

#[test]
fn two_midpoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(sample_points(0.0, 1.0, 2, false, &mut rng).unwrap(), vec![0.25, 0.75]);
}

#[test]
fn jittered_samples_stay_in_their_bins() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (near, far, k) = (0.5, 2.5, 8);
    let width = (far - near) / k as f64;
    for _ in 0..100_000 / k {
        let d = sample_points(near, far, k, true, &mut rng).unwrap();
        for (i, m) in d.iter().enumerate() {
            let lo = near + width * i as f64;
            assert!(*m >= lo && *m <= lo + width);
        }
        assert!(d.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn deterministic_sampling_is_bit_identical() {
    let a = sample_points(0.1, 3.7, 64, false, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = sample_points(0.1, 3.7, 64, false, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn empty_interval_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        sample_points(1.0, 1.0, 4, false, &mut rng),
        Err(dsnerf::Error::InvalidInterval { .. })
    ));
}

fn uniform_batch(k: usize, sigma: f64, color: [f64; 3]) -> SampleBatch<f64> {
    let depths = sample_points(0.0, 1.0, k, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    SampleBatch {
        deltas: vec![1.0 / k as f64; k],
        sigma: vec![sigma; k],
        color: vec![color; k],
        outlier: vec![false; k],
        depths,
    }
}

#[test]
fn last_interval_repeats_previous() {
    assert_eq!(interval_lengths(&[0.0, 0.5, 1.5]), vec![0.5, 1.0, 1.0]);
}

#[test]
fn zero_density_shows_background() {
    let b = uniform_batch(16, 0.0, [1.0, 0.0, 0.0]);
    let (c, a) = composite(&b, [0.2, 0.4, 0.6]);
    assert_eq!(c, [0.2, 0.4, 0.6]);
    assert_eq!(a, 0.0);
}

#[test]
fn opaque_sample_saturates() {
    let b = SampleBatch {
        depths: vec![1.0],
        deltas: vec![1.0],
        sigma: vec![1000.0],
        color: vec![[1.0, 0.0, 0.0]],
        outlier: vec![false],
    };
    let (c, a): ([f64; 3], f64) = composite(&b, [0.0, 0.0, 1.0]);
    for (x, y) in c.iter().zip([1.0, 0.0, 0.0]) {
        assert!((x - y).abs() < 1e-9);
    }
    assert!((a - 1.0).abs() < 1e-9);
}

fn homogeneous_error(k: usize) -> f64 {
    let color = [0.3, 0.6, 0.9];
    let (c, _) = composite(&uniform_batch(k, 2.0, color), [0.0; 3]);
    let exact = 1.0 - (-2.0f64).exp();
    (0..3).map(|i| ((c[i] - color[i] * exact) / (color[i] * exact)).abs()).fold(0.0, f64::max)
}

#[test]
fn homogeneous_medium_matches_analytic_solution() {
    assert!(homogeneous_error(256) < 1e-3, "{}", homogeneous_error(256));
    // Constant density telescopes exactly, so only round-off remains.
    let errs: Vec<f64> = [16, 32, 64, 128, 256].iter().map(|&k| homogeneous_error(k)).collect();
    assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-14), "{errs:?}");
}

/// Density 2 on `[0, 1]` with gray level `c(m) = m`: the exact color is
/// `∫ 2e^{-2m} m dm = 1/2 − (3/2)e^{-2}`.
fn graded_error(k: usize) -> f64 {
    let mut b = uniform_batch(k, 2.0, [0.0; 3]);
    b.color = b.depths.iter().map(|m| [*m; 3]).collect();
    let (c, _) = composite(&b, [0.0; 3]);
    let exact = 0.5 - 1.5 * (-2.0f64).exp();
    ((c[0] - exact) / exact).abs()
}

#[test]
fn quadrature_converges_as_samples_double() {
    let errs: Vec<f64> = [16, 32, 64, 128, 256].iter().map(|&k| graded_error(k)).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    assert!(errs[4] < 1e-3, "{errs:?}");
}

proptest! {
    #[test]
    fn transmittance_and_opacity_are_well_behaved(
        sigma in prop::collection::vec(0.0f64..50.0, 2..40),
        col in prop::collection::vec(0.0f64..0.7, 3),
        bg in 0.0f64..0.7,
    ) {
        let k = sigma.len();
        let b = SampleBatch {
            depths: (0..k).map(|i| i as f64 * 0.1).collect(),
            deltas: vec![0.1; k],
            sigma,
            color: vec![[col[0], col[1], col[2]]; k],
            outlier: vec![false; k],
        };
        let t = transmittance(&b);
        prop_assert!(t.windows(2).all(|w| w[1] <= w[0]));
        let (c, a) = composite(&b, [bg; 3]);
        prop_assert!((0.0..=1.0).contains(&a));
        let bound = col.iter().copied().fold(bg, f64::max);
        prop_assert!(c.iter().all(|v| *v <= bound + 1e-9));
    }
}

/// Closed-form stand-in for the networks.
struct AnalyticField;

fn analytic_sigma(p: Vec3<f64>) -> f64 {
    let c = vec3(0.0, 1.1, 0.0);
    30.0 * (-(p - c).norm_squared() * 4.0).exp()
}

fn analytic_grad(p: Vec3<f64>) -> Vec3<f64> {
    let c = vec3(0.0, 1.1, 0.0);
    (p - c) * (-8.0 * analytic_sigma(p))
}

fn analytic_tex(p: Vec3<f64>) -> [f64; 3] {
    [0.5 + 0.2 * p.x, 0.3 + 0.1 * p.y, 0.4 + 0.3 * p.z]
}

fn analytic_light(p: Vec3<f64>, d: Vec3<f64>, n: Vec3<f64>) -> f64 {
    1.0 + 0.3 * n.dot(vec3(0.6, 0.8, 0.0)) + 0.1 * d.z + 0.05 * p.y
}

impl SampleField<f64> for AnalyticField {
    fn body(&self, points: &[Vec3<f64>]) -> Result<BodySamples<f64>> {
        Ok(BodySamples {
            sigma: points.iter().map(|p| analytic_sigma(*p)).collect(),
            texture: points.iter().map(|p| analytic_tex(*p)).collect(),
            density_grad: points.iter().map(|p| analytic_grad(*p)).collect(),
        })
    }

    fn shade(&self, rows: &Array2<f64>, texture: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        Ok(rows
            .rows()
            .into_iter()
            .zip(texture)
            .map(|(r, t)| {
                let v = |o: usize| vec3(r[o], r[o + 1], r[o + 2]);
                let s = analytic_light(v(0), v(3), v(6));
                t.map(|x| s * x)
            })
            .collect())
    }
}

fn torso_ray() -> Ray<f64> {
    Ray {
        origin: vec3(0.05, 1.15, 2.0),
        dir: vec3(0.0, 0.0, -1.0),
        pixel: (0, 0),
        frame: 0,
    }
}

#[test]
fn pipeline_wiring_matches_direct_analytic_evaluation() {
    let (canonical, geom) = fixture(Mapping::Barycentric);
    let ray = torso_ray();
    let (near, far) = geom.boxes.intersect(ray.origin, ray.dir).unwrap();
    let depths = sample_points(near, far, 64, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let bounds = OutlierBounds::default();
    let batch = evaluate_samples(depths.clone(), &ray, &geom, &canonical, &AnalyticField, &bounds, Vec3::zero()).unwrap();

    let index = build_face_index(&geom.world).unwrap();
    let mut kept = 0;
    for (k, m) in depths.iter().enumerate() {
        let p_w = ray.origin + ray.dir * *m;
        let coords = encode_local(&geom.world, p_w, &index).unwrap();
        if is_outlier(&coords, &bounds) {
            assert!(batch.outlier[k]);
            assert_eq!(batch.sigma[k], 0.0);
            assert_eq!(batch.color[k], [0.0; 3]);
            continue;
        }
        kept += 1;
        let p_c = decode_local(&canonical.mesh, &coords).unwrap();
        let n_c = (-analytic_grad(p_c)).normalize();
        let n_w = map_direction(&canonical.mesh, &geom.world, &coords, n_c).unwrap();
        let s = analytic_light(p_w, ray.dir, n_w);
        let expect = analytic_tex(p_c).map(|x| s * x);
        assert!((batch.sigma[k] - analytic_sigma(p_c)).abs() < 1e-9);
        for c in 0..3 {
            assert!((batch.color[k][c] - expect[c]).abs() < 1e-9);
        }
    }
    assert!(kept > 0 && kept < depths.len(), "{kept}");
}

#[test]
fn samples_outside_band_give_background() {
    let (canonical, geom) = fixture(Mapping::Barycentric);
    let ray = Ray {
        origin: vec3(0.0, 1.1, 5.0),
        dir: vec3(0.0, 0.0, 1.0),
        pixel: (0, 0),
        frame: 0,
    };
    let depths: Vec<f64> = (0..16).map(|i| 0.5 + 0.1 * i as f64).collect();
    let b = evaluate_samples(depths, &ray, &geom, &canonical, &AnalyticField, &OutlierBounds::default(), Vec3::zero())
        .unwrap();
    assert!(b.outlier.iter().all(|o| *o));
    assert_eq!(composite(&b, [0.1, 0.2, 0.3]), ([0.1, 0.2, 0.3], 0.0));
}

#[test]
fn neutral_lighting_passes_texture_through() {
    let (canonical, geom) = fixture(Mapping::Barycentric);
    let config = small_config(LightingMode::Scalar);
    let mut params = init_params::<f64>(&config, 2, 3).unwrap();
    for b in params.lighting.as_mut().unwrap().blocks_mut() {
        b.fill(0.0);
    }
    let field = NeuralField::new(&params, &geom.world.pose, LatentSource::Frame(1)).unwrap();
    let ray = torso_ray();
    let (near, far) = geom.boxes.intersect(ray.origin, ray.dir).unwrap();
    let depths = sample_points(near, far, 32, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let bounds = OutlierBounds::default();
    let batch = evaluate_samples(depths.clone(), &ray, &geom, &canonical, &field, &bounds, Vec3::zero()).unwrap();
    let index = build_face_index(&geom.world).unwrap();
    let latent: Vec<f64> = params.latent_table.row(1).to_vec();
    for (k, m) in depths.iter().enumerate() {
        if batch.outlier[k] {
            continue;
        }
        let coords = encode_local(&geom.world, ray.origin + ray.dir * *m, &index).unwrap();
        let p_c = decode_local(&canonical.mesh, &coords).unwrap();
        let (_, t) = dsnerf::fields::body_forward(&params, p_c, &field.feature, &latent).unwrap();
        for c in 0..3 {
            assert!((batch.color[k][c] - t[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn facing_away_renders_background() {
    let (canonical, geom) = fixture(Mapping::Barycentric);
    let params = init_params::<f64>(&small_config(LightingMode::Scalar), 1, 0).unwrap();
    let cam = Camera::look_at(vec3(0.0, 0.9, 3.0), vec3(0.0, 0.9, 6.0), 40.0, 16, 16).unwrap();
    let ctx = FrameContext {
        geometry: geom,
        latent: LatentSource::Zero,
        light_offset: Vec3::zero(),
    };
    let config = RenderConfig {
        background: [1.0, 1.0, 1.0],
        ..Default::default()
    };
    let out = render_image(&cam, &ctx, &canonical, &params, &config).unwrap();
    assert!(out.image.data.iter().all(|c| *c == [1.0; 3]));
    assert!(out.opacity.iter().all(|a| *a == 0.0));
}

#[test]
fn negative_density_bias_renders_background() {
    let (canonical, geom) = fixture(Mapping::Barycentric);
    let mut params = init_params::<f64>(&small_config(LightingMode::Scalar), 1, 0).unwrap();
    for b in params.blocks_mut() {
        b.fill(0.0);
    }
    params.body.layers.last_mut().unwrap().bias[[0, 0]] = -200.0;
    let ctx = FrameContext {
        geometry: geom,
        latent: LatentSource::Zero,
        light_offset: Vec3::zero(),
    };
    let out = render_image(&front_camera(16, 16), &ctx, &canonical, &params, &RenderConfig::default()).unwrap();
    assert!(out.image.data.iter().all(|c| c.iter().all(|v| v.abs() < 1e-12)));
    assert!(out.opacity.iter().all(|a| *a < 1e-12));
}

#[test]
fn repeated_renders_are_bit_identical() {
    let (canonical, geom) = fixture(Mapping::Barycentric);
    let params = init_params::<f64>(&small_config(LightingMode::Scalar), 1, 5).unwrap();
    let ctx = FrameContext {
        geometry: geom,
        latent: LatentSource::Frame(0),
        light_offset: Vec3::zero(),
    };
    let config = RenderConfig {
        chunk_rays: 37,
        ..Default::default()
    };
    let cam = front_camera(24, 24);
    let a = render_image(&cam, &ctx, &canonical, &params, &config).unwrap();
    let b = render_image(&cam, &ctx, &canonical, &params, &config).unwrap();
    assert_eq!(a.image.to_png_bytes().unwrap(), b.image.to_png_bytes().unwrap());
    assert_eq!(a.opacity_png_bytes().unwrap(), b.opacity_png_bytes().unwrap());
    assert!(a.opacity.iter().any(|v| *v > 0.0));
}

fn marches_for(geom: &FrameGeometry<f64>, canonical: &CanonicalSpace<f64>, k: usize) -> Vec<RayMarch<f64>> {
    let cam = front_camera(12, 12);
    let px: Vec<_> = (0..12).flat_map(|y| (0..12).map(move |x| (x, y))).collect();
    let config = MarchConfig {
        samples_per_ray: k,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    generate_rays(&cam, &px, 0)
        .unwrap()
        .iter()
        .filter_map(|r| march_ray(r, geom, canonical, &config, &mut rng).unwrap())
        .filter(|m| m.kept() > 0)
        .collect()
}

#[test]
fn recorded_graph_matches_inference_path() {
    for mode in [LightingMode::Scalar, LightingMode::Color, LightingMode::Off] {
        for mapping in [Mapping::Barycentric, Mapping::InverseLbs { k: 4 }] {
            let (canonical, geom) = fixture(mapping);
            let params = init_params::<f64>(&small_config(mode), 2, 9).unwrap();
            let marches = marches_for(&geom, &canonical, 16);
            assert!(!marches.is_empty());
            let bg = [0.2, 0.3, 0.4];
            let field = NeuralField::new(&params, &geom.world.pose, LatentSource::Frame(1)).unwrap();
            let batches = shade_marches(&marches, &geom, &canonical, &field, Vec3::zero()).unwrap();

            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, Latent::Frame(1)).unwrap();
            let j = params.pose_feature_graph(&mut tape, &bound, &geom.world.pose).unwrap();
            let rec = record_marches(&mut tape, &params, &bound, j, &marches, &geom, &canonical, Vec3::zero(), bg)
                .unwrap();
            let out = tape.value(rec.output);
            assert_eq!(out.nrows(), marches.len());
            for (i, b) in batches.iter().enumerate() {
                let (c, a) = composite(b, bg);
                for ch in 0..3 {
                    assert!((out[[i, ch]] - c[ch]).abs() < 1e-10, "{mode:?} {mapping:?}");
                }
                assert!((out[[i, 3]] - a).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn inverse_lbs_mapping_feeds_the_same_pipeline() {
    let (canonical, geom) = fixture(Mapping::InverseLbs { k: 4 });
    assert_eq!(geom.mapping(), Mapping::InverseLbs { k: 4 });
    let ray = torso_ray();
    let (near, far) = geom.boxes.intersect(ray.origin, ray.dir).unwrap();
    let depths = sample_points(near, far, 32, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let b = evaluate_samples(depths, &ray, &geom, &canonical, &AnalyticField, &OutlierBounds::default(), Vec3::zero())
        .unwrap();
    assert!(b.sigma.iter().any(|s| *s > 0.0));
    assert!(b.color.iter().flatten().all(|c| c.is_finite()));
}
