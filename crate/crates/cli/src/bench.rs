use std::sync::Arc;
use std::time::Instant;

use dsnerf::barymap::{build_face_index, map_point};
use dsnerf::fields::init_params;
use dsnerf::linalg::{vec3, Vec3};
use dsnerf::mesh::{canonical_pose, gen_capsule_body, lbs_pose, mesh_aabb, BodySpec, SkinnedMesh};
use dsnerf::render::{render_image, Camera, CanonicalSpace, FrameContext, FrameGeometry, LatentSource, Mapping, RenderConfig};
use dsnerf::synth::training_pose_params;
use dsnerf::train::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::BenchArgs;
use crate::config::{config_hash, write_json};

#[derive(Debug, Serialize)]
struct Machine {
    os: &'static str,
    arch: &'static str,
    logical_cpus: usize,
    threads: usize,
    version: &'static str,
}

#[derive(Debug, Serialize)]
struct Settings {
    faces: Vec<usize>,
    queries: usize,
    repeats: usize,
    image_size: usize,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct MeshBench {
    target_faces: usize,
    faces: usize,
    index_build_ms: f64,
    accelerated_points_per_sec: f64,
    brute_force_points_per_sec: f64,
    speedup: f64,
    map_point_points_per_sec: f64,
    /// Brute-force answers reproduced by the accelerated query.
    agreement: f64,
}

#[derive(Debug, Serialize)]
struct RenderBench {
    width: usize,
    height: usize,
    samples_per_ray: usize,
    rays_per_sec: f64,
}

#[derive(Debug, Serialize)]
struct Report {
    machine: Machine,
    config_hash: String,
    settings: Settings,
    closest_face: Vec<MeshBench>,
    render: RenderBench,
}

/// Body-sized ellipsoid with `4r²` faces, `r` chosen so the count is
/// closest to `target`. The body generator cannot go below a few thousand
/// faces, so the timing meshes are built here at exact sizes.
fn ellipsoid(target: usize) -> anyhow::Result<SkinnedMesh<f64>> {
    let rings = ((target as f64 / 4.0).sqrt().round() as usize).max(2);
    let slices = 2 * rings;
    let body = gen_capsule_body::<f64>(&BodySpec { radial_segments: 8, ..BodySpec::default() })?;
    let radii = vec3(0.35, 0.9, 0.2);
    let center = vec3(0.0, 0.9, 0.0);
    let at = |theta: f64, phi: f64| {
        center + vec3(theta.sin() * phi.cos() * radii.x, theta.cos() * radii.y, theta.sin() * phi.sin() * radii.z)
    };
    let mut vertices = vec![at(0.0, 0.0), at(std::f64::consts::PI, 0.0)];
    for i in 0..rings {
        let theta = std::f64::consts::PI * (i + 1) as f64 / (rings + 1) as f64;
        for j in 0..slices {
            vertices.push(at(theta, std::f64::consts::TAU * j as f64 / slices as f64));
        }
    }
    let v = |i: usize, j: usize| 2 + i * slices + j % slices;
    let mut faces = Vec::with_capacity(2 * slices * rings);
    for j in 0..slices {
        faces.push([0, v(0, j + 1), v(0, j)]);
        faces.push([1, v(rings - 1, j), v(rings - 1, j + 1)]);
        for i in 0..rings - 1 {
            faces.push([v(i, j), v(i, j + 1), v(i + 1, j)]);
            faces.push([v(i, j + 1), v(i + 1, j + 1), v(i + 1, j)]);
        }
    }
    let nj = body.joint_count();
    let mut root = vec![0.0; nj];
    root[0] = 1.0;
    let mesh = SkinnedMesh {
        blend_weights: vec![root; vertices.len()],
        region_labels: vec![body.region_labels[0]; faces.len()],
        vertices,
        faces,
        joints: body.joints,
    };
    mesh.validate()?;
    Ok(mesh)
}

/// Fastest of `repeats` timings of `f`, in seconds.
fn fastest(repeats: usize, mut f: impl FnMut()) -> f64 {
    (0..repeats.max(1))
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

fn bench_mesh(target: usize, a: &BenchArgs) -> anyhow::Result<MeshBench> {
    let mesh = Arc::new(ellipsoid(target)?);
    let pose = training_pose_params(1, a.seed)[0].to_pose();
    let world = lbs_pose(&mesh, &pose)?;
    let canonical = lbs_pose(&mesh, &canonical_pose())?;
    let t = Instant::now();
    let index = build_face_index(&world)?;
    let build = t.elapsed().as_secs_f64();

    let bb = mesh_aabb(&world, 0.1);
    let e = bb.extent();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let queries: Vec<Vec3<f64>> = (0..a.queries.max(1))
        .map(|_| bb.min + vec3(rng.random::<f64>() * e.x, rng.random::<f64>() * e.y, rng.random::<f64>() * e.z))
        .collect();
    let brute_n = queries.len().min(2000);

    let mut sink = 0usize;
    let fast = fastest(a.repeats, || sink ^= queries.iter().map(|q| index.nearest_face(*q)).sum::<usize>());
    let brute = fastest(a.repeats, || {
        sink ^= queries[..brute_n].iter().map(|q| index.nearest_face_brute_force(*q)).sum::<usize>()
    });
    let mut mapped = Ok(());
    let map = fastest(a.repeats, || {
        for q in &queries {
            if let Err(e) = map_point(&world, &index, &canonical, *q) {
                mapped = Err(e);
            }
        }
    });
    mapped?;
    std::hint::black_box(sink);
    let agree = queries[..brute_n]
        .iter()
        .filter(|q| index.nearest_face(**q) == index.nearest_face_brute_force(**q))
        .count();
    let fast_rate = queries.len() as f64 / fast;
    let brute_rate = brute_n as f64 / brute;
    Ok(MeshBench {
        target_faces: target,
        faces: mesh.faces.len(),
        index_build_ms: build * 1e3,
        accelerated_points_per_sec: fast_rate,
        brute_force_points_per_sec: brute_rate,
        speedup: fast_rate / brute_rate,
        map_point_points_per_sec: queries.len() as f64 / map,
        agreement: agree as f64 / brute_n as f64,
    })
}

fn bench_render(a: &BenchArgs) -> anyhow::Result<RenderBench> {
    let config = TrainConfig::desk();
    let mesh: Arc<SkinnedMesh<f32>> = Arc::new(gen_capsule_body(&BodySpec::default())?);
    let canonical = CanonicalSpace::new(&mesh, &canonical_pose())?;
    let pose = training_pose_params(1, a.seed)[0].to_pose::<f32>();
    let geometry = FrameGeometry::new(lbs_pose(&mesh, &pose)?, &canonical, Mapping::Barycentric, 0.1)?;
    let ctx = FrameContext {
        geometry,
        latent: LatentSource::Zero,
        light_offset: Vec3::zero(),
    };
    let params = init_params::<f32>(&config.field, 1, a.seed)?;
    let camera = Camera::look_at(vec3(0.0, 1.0, 3.0), vec3(0.0, 0.9, 0.0), 80.0 * a.image_size as f32 / 64.0, a.image_size, a.image_size)?;
    let mut render = RenderConfig::default();
    render.march.samples_per_ray = config.samples_per_ray;
    let mut out = Ok(());
    let secs = fastest(a.repeats, || {
        if let Err(e) = render_image(&camera, &ctx, &canonical, &params, &render) {
            out = Err(e);
        }
    });
    out?;
    Ok(RenderBench {
        width: a.image_size,
        height: a.image_size,
        samples_per_ray: render.march.samples_per_ray,
        rays_per_sec: (a.image_size * a.image_size) as f64 / secs,
    })
}

pub fn run(a: BenchArgs) -> anyhow::Result<()> {
    if a.image_size == 0 || a.faces.is_empty() {
        return Err(dsnerf::Error::Usage("image size and face list must be non-empty".into()).into());
    }
    let settings = Settings {
        faces: a.faces.clone(),
        queries: a.queries,
        repeats: a.repeats,
        image_size: a.image_size,
        seed: a.seed,
    };
    let mut meshes = Vec::new();
    for &f in &a.faces {
        let b = bench_mesh(f, &a)?;
        eprintln!(
            "F={:>6}: accelerated {:.3e} pts/s, brute force {:.3e} pts/s ({:.1}x)",
            b.faces, b.accelerated_points_per_sec, b.brute_force_points_per_sec, b.speedup
        );
        meshes.push(b);
    }
    let render = bench_render(&a)?;
    eprintln!("render: {:.3e} rays/s", render.rays_per_sec);
    let report = Report {
        machine: Machine {
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            threads: rayon::current_num_threads(),
            version: env!("CARGO_PKG_VERSION"),
        },
        config_hash: config_hash(&settings)?,
        settings,
        closest_face: meshes,
        render,
    };
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
