use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Intrinsics;
use crate::map::{DepthMap, FlowMap, Map, Map3};
use crate::selection::GlobalPose;
use crate::synthesis::{ObjectSpec, SceneObject, SceneSample};

use super::{
    read_depth, read_flow, read_map3, read_mask, write_depth, write_flow, write_map3, write_mask,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFiles {
    pub flow_total: String,
    pub flow_ego: String,
    pub depth_t: String,
    pub depth_t1: String,
    pub depth_t1_valid: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub mask: String,
    pub flow: String,
    pub depth_offset: f64,
    pub motion: GlobalPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub schema_version: u32,
    pub seed: u64,
    /// Sub-seeds actually used, one per generation stage.
    pub seed_trail: Vec<u64>,
    pub height: usize,
    pub width: usize,
    pub intrinsics: Intrinsics,
    pub camera_motion: GlobalPose,
    pub objects: Vec<ObjectRecord>,
    pub files: SceneFiles,
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::InvalidArgument(format!(
            "{} already exists (use --force to overwrite)",
            path.display()
        )));
    }
    Ok(())
}

fn manifest_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Writes `sample` into `dir` and returns the manifest path.
pub fn write_scene(dir: impl AsRef<Path>, sample: &SceneSample, force: bool) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    refuse_overwrite(&manifest_path, force)?;
    fs::create_dir_all(dir)?;

    let files = SceneFiles {
        flow_total: "flow_total.flo".into(),
        flow_ego: "flow_ego.flo".into(),
        depth_t: "depth_t.pfm".into(),
        depth_t1: "depth_t1.pfm".into(),
        depth_t1_valid: "depth_t1_valid.png".into(),
    };
    write_flow(dir.join(&files.flow_total), &sample.flow_total)?;
    write_flow(dir.join(&files.flow_ego), &sample.flow_ego)?;
    write_depth(dir.join(&files.depth_t), &sample.depth_t)?;
    write_depth(dir.join(&files.depth_t1), &sample.depth_t1)?;
    write_mask(dir.join(&files.depth_t1_valid), &sample.depth_t1_valid)?;

    let mut objects = Vec::with_capacity(sample.objects.len());
    for (i, obj) in sample.objects.iter().enumerate() {
        let rec = ObjectRecord {
            mask: format!("object_{i:02}_mask.png"),
            flow: format!("object_{i:02}_flow.flo"),
            depth_offset: obj.spec.depth_offset,
            motion: GlobalPose::from_motion(&obj.spec.motion),
        };
        write_mask(dir.join(&rec.mask), &obj.spec.mask)?;
        write_flow(dir.join(&rec.flow), &obj.flow)?;
        objects.push(rec);
    }

    let manifest = SceneManifest {
        schema_version: SCHEMA_VERSION,
        seed: sample.seed,
        seed_trail: sample.seed_trail.clone(),
        height: sample.depth_t.height(),
        width: sample.depth_t.width(),
        intrinsics: sample.intrinsics,
        camera_motion: GlobalPose::from_motion(&sample.camera_motion),
        objects,
        files,
    };
    fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest_path)
}

fn load_checked<T>(
    manifest: &Path,
    base: &Path,
    rel: &str,
    (h, w): (usize, usize),
    read: impl FnOnce(&Path) -> Result<Map<T>>,
) -> Result<Map<T>> {
    let path = base.join(rel);
    if !path.is_file() {
        return Err(manifest_err(
            manifest,
            format!("referenced file {rel} is missing"),
        ));
    }
    let map = read(&path)?;
    if (map.height(), map.width()) != (h, w) {
        return Err(manifest_err(
            manifest,
            format!(
                "{rel} is {}x{}, manifest says {h}x{w}",
                map.height(),
                map.width()
            ),
        ));
    }
    Ok(map)
}

fn read_manifest(path: &Path) -> Result<SceneManifest> {
    let text = fs::read(path)?;
    let value: serde_json::Value = serde_json::from_slice(&text)?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => {
            return Err(manifest_err(
                path,
                format!("unsupported schema_version {v}"),
            ))
        }
        None => return Err(manifest_err(path, "missing schema_version")),
    }
    let m: SceneManifest = serde_json::from_value(value)?;
    if m.height == 0 || m.width == 0 {
        return Err(manifest_err(path, "zero image dimension"));
    }
    m.intrinsics
        .validate()
        .map_err(|e| manifest_err(path, e.to_string()))?;
    Ok(m)
}

/// Loads and validates a scene. Either the manifest file or its directory may
/// be given.
pub fn load_scene(path: impl AsRef<Path>) -> Result<(SceneManifest, SceneSample)> {
    let mut path = path.as_ref().to_path_buf();
    if path.is_dir() {
        path = path.join(MANIFEST_FILE);
    }
    let m = read_manifest(&path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let dims = (m.height, m.width);
    let p = path.as_path();
    let flow_total = load_checked(p, base, &m.files.flow_total, dims, |f| read_flow(f))?;
    let flow_ego = load_checked(p, base, &m.files.flow_ego, dims, |f| read_flow(f))?;
    let depth_t = load_checked(p, base, &m.files.depth_t, dims, |f| read_depth(f))?;
    let depth_t1 = load_checked(p, base, &m.files.depth_t1, dims, |f| read_depth(f))?;
    let depth_t1_valid = load_checked(p, base, &m.files.depth_t1_valid, dims, |f| read_mask(f))?;
    let mut objects = Vec::with_capacity(m.objects.len());
    for rec in &m.objects {
        let mask = load_checked(p, base, &rec.mask, dims, |f| read_mask(f))?;
        let flow = load_checked(p, base, &rec.flow, dims, |f| read_flow(f))?;
        objects.push(SceneObject {
            spec: ObjectSpec {
                mask,
                depth_offset: rec.depth_offset,
                motion: rec.motion.to_motion(),
            },
            flow,
        });
    }
    let sample = SceneSample {
        seed: m.seed,
        seed_trail: m.seed_trail.clone(),
        intrinsics: m.intrinsics,
        depth_t,
        depth_t1,
        depth_t1_valid,
        flow_total,
        flow_ego,
        objects,
        camera_motion: m.camera_motion.to_motion(),
    };
    Ok((m, sample))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFiles {
    pub flow_ego: String,
    pub depth_t1: String,
    pub rotation: String,
    pub translation: String,
    pub log_var_rotation: String,
    pub log_var_translation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineSummary {
    /// `total` or `ego`.
    pub target: String,
    pub cost: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub schema_version: u32,
    /// Name of the scene directory the prediction belongs to.
    pub scene: String,
    pub height: usize,
    pub width: usize,
    /// Final pose (refined when refinement ran).
    pub pose: GlobalPose,
    pub selected: GlobalPose,
    pub naive: GlobalPose,
    pub patch_size: usize,
    pub window: usize,
    pub weight_sign: String,
    pub degenerate_windows: usize,
    pub refine: Option<RefineSummary>,
    pub files: Option<PredictionFiles>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMaps {
    pub flow_ego: FlowMap,
    pub depth_t1: DepthMap,
    pub rotation: Map3,
    pub translation: Map3,
    pub log_var_rotation: Map3,
    pub log_var_translation: Map3,
}

/// Writes the prediction JSON at `path` and its array sidecars next to it,
/// named after the JSON file stem.
pub fn write_prediction(
    path: impl AsRef<Path>,
    mut record: PredictionRecord,
    maps: &PredictionMaps,
    force: bool,
) -> Result<PredictionRecord> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("bad output path {}", path.display())))?
        .to_string();
    let files = PredictionFiles {
        flow_ego: format!("{stem}.flow_ego.flo"),
        depth_t1: format!("{stem}.depth_t1.pfm"),
        rotation: format!("{stem}.rotation.pfm"),
        translation: format!("{stem}.translation.pfm"),
        log_var_rotation: format!("{stem}.log_var_rotation.pfm"),
        log_var_translation: format!("{stem}.log_var_translation.pfm"),
    };
    let base = path.parent().unwrap_or(Path::new("."));
    let names = [
        &files.flow_ego,
        &files.depth_t1,
        &files.rotation,
        &files.translation,
        &files.log_var_rotation,
        &files.log_var_translation,
    ];
    refuse_overwrite(path, force)?;
    for n in names {
        refuse_overwrite(&base.join(n), force)?;
    }
    if !base.as_os_str().is_empty() {
        fs::create_dir_all(base)?;
    }
    write_flow(base.join(&files.flow_ego), &maps.flow_ego)?;
    write_depth(base.join(&files.depth_t1), &maps.depth_t1)?;
    write_map3(base.join(&files.rotation), &maps.rotation)?;
    write_map3(base.join(&files.translation), &maps.translation)?;
    write_map3(base.join(&files.log_var_rotation), &maps.log_var_rotation)?;
    write_map3(
        base.join(&files.log_var_translation),
        &maps.log_var_translation,
    )?;
    record.schema_version = SCHEMA_VERSION;
    record.files = Some(files);
    fs::write(path, serde_json::to_vec_pretty(&record)?)?;
    Ok(record)
}

/// Loads a prediction record; the sidecar maps are loaded when present.
pub fn load_prediction(
    path: impl AsRef<Path>,
) -> Result<(PredictionRecord, Option<PredictionMaps>)> {
    let path = path.as_ref();
    let record: PredictionRecord = serde_json::from_slice(&fs::read(path)?)?;
    if record.schema_version != SCHEMA_VERSION {
        return Err(manifest_err(
            path,
            format!("unsupported schema_version {}", record.schema_version),
        ));
    }
    let Some(files) = &record.files else {
        return Ok((record, None));
    };
    let base = path.parent().unwrap_or(Path::new("."));
    let dims = (record.height, record.width);
    let maps = PredictionMaps {
        flow_ego: load_checked(path, base, &files.flow_ego, dims, |f| read_flow(f))?,
        depth_t1: load_checked(path, base, &files.depth_t1, dims, |f| read_depth(f))?,
        rotation: load_checked(path, base, &files.rotation, dims, |f| read_map3(f))?,
        translation: load_checked(path, base, &files.translation, dims, |f| read_map3(f))?,
        log_var_rotation: load_checked(path, base, &files.log_var_rotation, dims, |f| {
            read_map3(f)
        })?,
        log_var_translation: load_checked(path, base, &files.log_var_translation, dims, |f| {
            read_map3(f)
        })?,
    };
    Ok((record, Some(maps)))
}
