//! On-disk formats: Middlebury flow, PFM, PNG masks and panels, JSON
//! manifests and predictions.

mod flo;
mod manifest;
mod pfm;
mod png;
mod visualize;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub use flo::{decode_flow, encode_flow, read_flow, write_flow, FLO_MAGIC};
pub use manifest::{
    load_prediction, load_scene, write_prediction, write_scene, ObjectRecord, PredictionFiles,
    PredictionMaps, PredictionRecord, RefineSummary, SceneFiles, SceneManifest, MANIFEST_FILE,
    SCHEMA_VERSION,
};
pub use pfm::{
    decode_depth, decode_map3, encode_depth, encode_map3, read_depth, read_map3, write_depth,
    write_map3,
};
pub use png::{read_mask, write_mask, write_rgb};
pub use visualize::{flow_color, heat_map, percentile_magnitude, visualize_flow, RgbImage};

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> crate::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}
