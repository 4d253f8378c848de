use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use flowvo::io::{
    heat_map, load_prediction, load_scene, percentile_magnitude, visualize_flow, write_prediction,
    write_rgb, write_scene, PredictionMaps, PredictionRecord, RefineSummary, MANIFEST_FILE,
    SCHEMA_VERSION,
};
use flowvo::metrics::{epe, pose_errors, EpeNorm, EvalReport, L1Reduce, SceneEval};
use flowvo::refine::{reconstruct_ego_flow, refine_pose, uncertainty_weights, RefineConfig};
use flowvo::selection::{aggregate, naive_average, partition};
use flowvo::synthesis::generate_batch;
use flowvo::{estimate_pixelwise, EstimatorConfig, GlobalPose, SceneConfig, WeightSign};
use rayon::prelude::*;

use crate::{
    EstimateArgs, EvaluateArgs, GenerateArgs, NormArg, ReduceArg, RefineTarget, SignArg,
    VisualizeArgs,
};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<flowvo::Error> for CliError {
    fn from(e: flowvo::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Io(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(CliError::Validation(format!(
            "{} already exists (use --force to overwrite)",
            path.display()
        )));
    }
    Ok(())
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    if a.count == 0 {
        return Err(CliError::Validation("--count must be >= 1".into()));
    }
    let base = SceneConfig::default();
    let (rot, trans) = (
        a.max_rotation.unwrap_or(base.camera_rotation_max),
        a.max_translation.unwrap_or(base.camera_translation_max),
    );
    let cfg = base
        .with_objects(a.objects.0, a.objects.1)
        .with_camera_motion(rot, trans);
    cfg.validate()?;
    let dirs: Vec<PathBuf> = (0..a.count)
        .map(|i| a.out.join(format!("scene_{i:05}")))
        .collect();
    for d in &dirs {
        refuse_overwrite(&d.join(MANIFEST_FILE), a.force)?;
    }
    let seeds: Vec<u64> = (0..a.count as u64)
        .map(|i| a.seed.checked_add(i))
        .collect::<Option<_>>()
        .ok_or_else(|| CliError::Validation("seed range overflows u64".into()))?;
    fs::create_dir_all(&a.out)?;
    let scenes = generate_batch(&seeds, a.height, a.width, &cfg);
    scenes
        .into_par_iter()
        .zip(dirs.par_iter())
        .try_for_each(|(scene, dir)| -> Result<()> {
            write_scene(dir, &scene?, a.force)?;
            Ok(())
        })?;
    println!("wrote {} scene(s) to {}", a.count, a.out.display());
    Ok(())
}

fn scene_name(manifest: &Path) -> String {
    let dir = if manifest.is_dir() {
        manifest
    } else {
        manifest.parent().unwrap_or(Path::new("."))
    };
    let abs = dir.canonicalize().unwrap_or_else(|_| dir.to_path_buf());
    abs.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into())
}

pub fn estimate(a: &EstimateArgs) -> Result<()> {
    let (manifest, scene) = load_scene(&a.scene)?;
    let grid = scene.grid();
    let cfg = EstimatorConfig::default().with_window(a.window);
    let pose = estimate_pixelwise(
        &scene.flow_total,
        &scene.depth_t,
        &scene.intrinsics,
        grid,
        &cfg,
    )?;
    let patches = partition(manifest.height, manifest.width, a.patch_size)?;
    let sign = match a.weight_sign {
        SignArg::Negated => WeightSign::Negated,
        SignArg::AsPrinted => WeightSign::AsPrinted,
    };
    let selected = aggregate(&pose, &patches, sign)?;
    let naive = naive_average(&pose);

    let refine_cfg = RefineConfig::default();
    let (final_pose, refine) = if a.refine {
        let (target, weights, label) = match a.refine_target {
            RefineTarget::Total => (&scene.flow_total, Some(uncertainty_weights(&pose)), "total"),
            RefineTarget::Ego => (&scene.flow_ego, None, "ego"),
        };
        let res = refine_pose(
            &selected,
            target,
            &scene.intrinsics,
            &scene.depth_t,
            grid,
            weights.as_ref(),
            &refine_cfg,
        )?;
        let summary = RefineSummary {
            target: label.into(),
            cost: res.cost,
            iterations: res.iterations,
            accepted_steps: res.accepted_steps,
        };
        (res.pose, Some(summary))
    } else {
        (selected, None)
    };

    let (flow_ego, depth_t1) = reconstruct_ego_flow(
        &final_pose,
        &scene.intrinsics,
        &scene.depth_t,
        grid,
        refine_cfg.near_plane,
    )?;
    let record = PredictionRecord {
        schema_version: SCHEMA_VERSION,
        scene: scene_name(&a.scene),
        height: manifest.height,
        width: manifest.width,
        pose: final_pose,
        selected,
        naive,
        patch_size: a.patch_size,
        window: a.window,
        weight_sign: match a.weight_sign {
            SignArg::Negated => "negated".into(),
            SignArg::AsPrinted => "as-printed".into(),
        },
        degenerate_windows: pose.degenerate_windows,
        refine,
        files: None,
    };
    let maps = PredictionMaps {
        flow_ego,
        depth_t1,
        rotation: pose.rotation,
        translation: pose.translation,
        log_var_rotation: pose.log_var_rotation,
        log_var_translation: pose.log_var_translation,
    };
    write_prediction(&a.out, record, &maps, a.force)?;
    println!(
        "rotation {:?} translation {:?} -> {}",
        final_pose.rotation,
        final_pose.translation,
        a.out.display()
    );
    Ok(())
}

fn scene_dirs(gt: &Path) -> Result<Vec<PathBuf>> {
    if gt.join(MANIFEST_FILE).is_file() {
        return Ok(vec![gt.to_path_buf()]);
    }
    let mut dirs = Vec::new();
    for e in fs::read_dir(gt)? {
        let p = e?.path();
        if p.join(MANIFEST_FILE).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn prediction_files(pred: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for e in fs::read_dir(pred)? {
        let p = e?.path();
        if p.is_file() && p.extension().is_some_and(|x| x == "json") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    refuse_overwrite(&a.out, a.force)?;
    let gts = scene_dirs(&a.gt)?;
    let preds = prediction_files(&a.pred)?;
    if gts.len() != preds.len() {
        return Err(CliError::Validation(format!(
            "{} prediction(s) in {} but {} ground-truth scene(s) in {}",
            preds.len(),
            a.pred.display(),
            gts.len(),
            a.gt.display()
        )));
    }
    let reduce = match a.l1_reduce {
        ReduceArg::Mean => L1Reduce::Mean,
        ReduceArg::Sum => L1Reduce::Sum,
    };
    let norm = match a.epe {
        NormArg::L1 => EpeNorm::L1,
        NormArg::L2 => EpeNorm::L2,
    };
    let mut loaded = Vec::with_capacity(preds.len());
    for p in &preds {
        loaded.push(load_prediction(p)?);
    }
    let mut rows = Vec::with_capacity(gts.len());
    for dir in &gts {
        let name = scene_name(dir);
        let (record, maps) = loaded
            .iter()
            .find(|(r, _)| r.scene == name)
            .ok_or_else(|| CliError::Validation(format!("no prediction for scene {name}")))?;
        let maps = maps.as_ref().ok_or_else(|| {
            CliError::Validation(format!("prediction for {name} has no flow file"))
        })?;
        let (_, scene) = load_scene(dir)?;
        let gt = GlobalPose::from_motion(&scene.camera_motion);
        let (r_err, t_err) = pose_errors(&record.pose, &gt, reduce);
        rows.push(SceneEval {
            scene: name,
            epe: epe(&maps.flow_ego, &scene.flow_ego, norm)?,
            r_err,
            t_err,
        });
    }
    let report = EvalReport::from_scenes(rows, reduce, norm);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out, serde_json::to_vec_pretty(&report)?)?;
    println!(
        "{} scene(s): EPE {:.6} px, R_err {:.3e} rad, T_err {:.3e}",
        report.scenes.len(),
        report.epe,
        report.r_err,
        report.t_err
    );
    Ok(())
}

pub fn visualize(a: &VisualizeArgs) -> Result<()> {
    let (_, scene) = load_scene(&a.scene)?;
    let (log_var_r, log_var_t) = match &a.pred {
        Some(p) => {
            let (_, maps) = load_prediction(p)?;
            let maps =
                maps.ok_or_else(|| CliError::Validation("prediction has no map files".into()))?;
            (maps.log_var_rotation, maps.log_var_translation)
        }
        None => {
            let cfg = EstimatorConfig::default().with_window(a.window);
            let pose = estimate_pixelwise(
                &scene.flow_total,
                &scene.depth_t,
                &scene.intrinsics,
                scene.grid(),
                &cfg,
            )?;
            (pose.log_var_rotation, pose.log_var_translation)
        }
    };
    let mean = |m: &flowvo::Map3| m.map(|v| (v[0] + v[1] + v[2]) / 3.0);
    let norm = Some(percentile_magnitude(&scene.flow_total, 0.99)).filter(|n| *n > 0.0);

    let mut panels = vec![
        (
            "flow_total.png".to_string(),
            visualize_flow(&scene.flow_total, norm),
        ),
        (
            "flow_ego.png".to_string(),
            visualize_flow(&scene.flow_ego, norm),
        ),
    ];
    for (i, obj) in scene.objects.iter().enumerate() {
        panels.push((
            format!("object_{i:02}_flow.png"),
            visualize_flow(&obj.flow, norm),
        ));
    }
    panels.push((
        "uncertainty_rotation.png".into(),
        heat_map(&mean(&log_var_r)),
    ));
    panels.push((
        "uncertainty_translation.png".into(),
        heat_map(&mean(&log_var_t)),
    ));

    for (name, _) in &panels {
        refuse_overwrite(&a.out.join(name), a.force)?;
    }
    fs::create_dir_all(&a.out)?;
    for (name, img) in &panels {
        write_rgb(a.out.join(name), img)?;
    }
    println!("wrote {} panel(s) to {}", panels.len(), a.out.display());
    Ok(())
}
