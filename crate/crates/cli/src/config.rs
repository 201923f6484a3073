use std::path::{Path, PathBuf};

use anyhow::Context;
use dsnerf::fields::LightingMode;
use dsnerf::render::Mapping;
use dsnerf::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::args::{LightingArg, MappingArg, Precision, Preset, TrainArgs};

/// Shard count used by `--deterministic` when none is configured.
pub const DETERMINISTIC_SHARDS: usize = 4;

/// Name of the resolved configuration echoed into run directories.
pub const RESOLVED_CONFIG: &str = "config.json";

/// Overlay `patch` onto `base`, recursing into objects.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

pub fn read_json(path: &Path) -> anyhow::Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| dsnerf::Error::Config(format!("{}: {e}", path.display())).into())
}

/// `base` overlaid with the JSON file at `path`, if any.
pub fn layered<T: Serialize + DeserializeOwned>(base: &T, path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else {
        return Ok(serde_json::from_value(serde_json::to_value(base)?)?);
    };
    let mut v = serde_json::to_value(base)?;
    merge(&mut v, read_json(path)?);
    serde_json::from_value(v).map_err(|e| dsnerf::Error::Config(format!("{}: {e}", path.display())).into())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

/// Hex SHA-256 of the canonical JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Everything a training run was started with, after merging.
#[derive(Clone, Debug, Serialize, serde::Deserialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub run_dir: PathBuf,
    pub seed: u64,
    pub precision: String,
    pub deterministic: bool,
    pub threads: usize,
    pub train: TrainConfig,
}

/// Preset, then config file, then flags.
pub fn resolve_train(args: &TrainArgs, base: Option<TrainConfig>) -> anyhow::Result<TrainConfig> {
    let preset = base.unwrap_or_else(|| match args.preset {
        Preset::Desk => TrainConfig::desk(),
        Preset::Full => TrainConfig::default(),
    });
    let mut c = layered(&preset, args.config.as_deref())?;
    if let Some(s) = args.seed {
        c.seed = s;
    }
    if let Some(n) = args.iters {
        c.iterations = Some(n);
    }
    if let Some(n) = args.epochs {
        c.epochs = n;
        if args.iters.is_none() {
            c.iterations = None;
        }
    }
    if let Some(lr) = args.lr {
        c.lr = lr;
    }
    if let Some(n) = args.rays {
        c.rays_per_batch = n;
    }
    if let Some(n) = args.samples {
        c.samples_per_ray = n;
    }
    if let Some(w) = args.width {
        c.field.hidden_width = w;
    }
    if let Some(l) = args.lighting {
        c.field.lighting = match l {
            LightingArg::Scalar => LightingMode::Scalar,
            LightingArg::Off => LightingMode::Off,
            LightingArg::Color => LightingMode::Color,
        };
    }
    if let Some(m) = args.mapping {
        c.mapping = match m {
            MappingArg::Barycentric => Mapping::Barycentric,
            MappingArg::InverseLbs => Mapping::InverseLbs { k: args.knn },
        };
    }
    if let Some(n) = args.checkpoint_every {
        c.checkpoint_every = Some(n);
    }
    if let Some(n) = args.shards {
        c.shards = Some(n);
    }
    if args.deterministic {
        c.jitter = false;
        c.shards = Some(c.shards.unwrap_or(DETERMINISTIC_SHARDS));
    }
    c.validate()?;
    Ok(c)
}

pub fn precision_name(p: Precision) -> &'static str {
    match p {
        Precision::F32 => "f32",
        Precision::F64 => "f64",
    }
}
