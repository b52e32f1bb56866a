//! On-disk formats: dataset archives (a JSON manifest next to a raw
//! little-endian int8 blob, row-major `segments × channels × width`) and
//! model checkpoints (JSON for the float and quantized networks, a JSON
//! manifest plus a bit-packed u64 blob for the edge layer). Round-trips are
//! bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edge::{EdgeLayer, EdgeLearnConfig};
use crate::eeg::{LabeledDataset, Segment};
use crate::quant::QuantizedCnn;
use crate::tensor::CnnModel;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed archive {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("json error on {path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

fn io_err(path: &Path, source: std::io::Error) -> ArchiveError {
    ArchiveError::Io { path: path.display().to_string(), source }
}

fn json_err(path: &Path, source: serde_json::Error) -> ArchiveError {
    ArchiveError::Json { path: path.display().to_string(), source }
}

/// Descriptor stored alongside a segment blob.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub montage: Vec<String>,
    pub channels: usize,
    pub width: usize,
    pub seed: u64,
    pub kind: String,
    pub labels: Vec<u8>,
    /// `(participant, trial)` per segment.
    pub sources: Vec<(u32, u32)>,
    pub blob: String,
}

/// Write a dataset as `manifest.json` plus one raw int8 blob.
pub fn write_dataset(
    dir: &Path,
    dataset: &LabeledDataset,
    seed: u64,
    kind: &str,
) -> Result<(), ArchiveError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let blob_name = "segments.i8";
    let manifest = DatasetManifest {
        format: "eeg-segments-v1".to_string(),
        montage: dataset.channel_names.clone(),
        channels: dataset.channel_names.len(),
        width: dataset.width,
        seed,
        kind: kind.to_string(),
        labels: dataset.segments.iter().map(|s| s.label).collect(),
        sources: dataset.segments.iter().map(|s| (s.participant, s.trial)).collect(),
        blob: blob_name.to_string(),
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| json_err(&manifest_path, e))?;
    fs::write(&manifest_path, json).map_err(|e| io_err(&manifest_path, e))?;

    let blob_path = dir.join(blob_name);
    let mut file = fs::File::create(&blob_path).map_err(|e| io_err(&blob_path, e))?;
    for seg in &dataset.segments {
        // i8 → u8 is a bit reinterpretation; little-endian by construction.
        let bytes: Vec<u8> = seg.data.iter().map(|&v| v as u8).collect();
        file.write_all(&bytes).map_err(|e| io_err(&blob_path, e))?;
    }
    Ok(())
}

/// Read a dataset archive back, bit-exactly.
pub fn read_dataset(dir: &Path) -> Result<(LabeledDataset, DatasetManifest), ArchiveError> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| json_err(&manifest_path, e))?;

    let blob_path = dir.join(&manifest.blob);
    let mut bytes = Vec::new();
    fs::File::open(&blob_path)
        .map_err(|e| io_err(&blob_path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(&blob_path, e))?;

    let seg_len = manifest.channels * manifest.width;
    let expected = seg_len * manifest.labels.len();
    if bytes.len() != expected {
        return Err(ArchiveError::Malformed {
            path: blob_path.display().to_string(),
            reason: format!("blob holds {} bytes, expected {expected}", bytes.len()),
        });
    }
    if manifest.sources.len() != manifest.labels.len() {
        return Err(ArchiveError::Malformed {
            path: manifest_path.display().to_string(),
            reason: "labels and sources lengths differ".to_string(),
        });
    }

    let mut dataset = LabeledDataset::new(manifest.montage.clone(), manifest.width);
    for (i, (&label, &(participant, trial))) in
        manifest.labels.iter().zip(&manifest.sources).enumerate()
    {
        let data: Vec<i8> = bytes[i * seg_len..(i + 1) * seg_len].iter().map(|&b| b as i8).collect();
        dataset.segments.push(Segment {
            participant,
            trial,
            label,
            channels: manifest.channels,
            width: manifest.width,
            data,
        });
    }
    Ok((dataset, manifest))
}

/// Float model checkpoint as JSON (shortest-roundtrip float encoding keeps
/// parameters bit-exact).
pub fn write_cnn_model(path: &Path, model: &CnnModel) -> Result<(), ArchiveError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let json = serde_json::to_string(model).map_err(|e| json_err(path, e))?;
    fs::write(path, json).map_err(|e| io_err(path, e))
}

pub fn read_cnn_model(path: &Path) -> Result<CnnModel, ArchiveError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_err(path, e))
}

pub fn write_quantized_model(path: &Path, model: &QuantizedCnn) -> Result<(), ArchiveError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let json = serde_json::to_string(model).map_err(|e| json_err(path, e))?;
    fs::write(path, json).map_err(|e| io_err(path, e))
}

pub fn read_quantized_model(path: &Path) -> Result<QuantizedCnn, ArchiveError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_err(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EdgeManifest {
    format: String,
    input_dim: usize,
    num_classes: usize,
    neurons_per_class: usize,
    num_weights: usize,
    plasticity: Vec<f64>,
    config: EdgeLearnConfig,
    blob: String,
}

/// Edge layer checkpoint: JSON manifest plus row-major bit-packed weights,
/// one little-endian u64 per 64 inputs.
pub fn write_edge_layer(dir: &Path, layer: &EdgeLayer) -> Result<(), ArchiveError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let blob_name = "edge_weights.u64";
    let manifest = EdgeManifest {
        format: "edge-layer-v1".to_string(),
        input_dim: layer.input_dim(),
        num_classes: layer.num_classes(),
        neurons_per_class: layer.neurons() / layer.num_classes(),
        num_weights: layer.num_weights(),
        plasticity: layer.plasticity().to_vec(),
        config: layer_config(layer),
        blob: blob_name.to_string(),
    };
    let manifest_path = dir.join("edge_manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| json_err(&manifest_path, e))?;
    fs::write(&manifest_path, json).map_err(|e| io_err(&manifest_path, e))?;

    let blob_path = dir.join(blob_name);
    let mut file = fs::File::create(&blob_path).map_err(|e| io_err(&blob_path, e))?;
    for n in 0..layer.neurons() {
        for word in layer.row_words(n) {
            file.write_all(&word.to_le_bytes()).map_err(|e| io_err(&blob_path, e))?;
        }
    }
    Ok(())
}

// The layer does not expose its config directly; reconstruct the part the
// archive needs from public accessors.
fn layer_config(layer: &EdgeLayer) -> EdgeLearnConfig {
    layer.learn_config()
}

pub fn read_edge_layer(dir: &Path) -> Result<EdgeLayer, ArchiveError> {
    let manifest_path = dir.join("edge_manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
    let manifest: EdgeManifest =
        serde_json::from_str(&text).map_err(|e| json_err(&manifest_path, e))?;

    let blob_path = dir.join(&manifest.blob);
    let mut bytes = Vec::new();
    fs::File::open(&blob_path)
        .map_err(|e| io_err(&blob_path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(&blob_path, e))?;

    let words_per_row = manifest.input_dim.div_ceil(64);
    let neurons = manifest.num_classes * manifest.neurons_per_class;
    let expected = neurons * words_per_row * 8;
    if bytes.len() != expected {
        return Err(ArchiveError::Malformed {
            path: blob_path.display().to_string(),
            reason: format!("blob holds {} bytes, expected {expected}", bytes.len()),
        });
    }
    if manifest.plasticity.len() != neurons {
        return Err(ArchiveError::Malformed {
            path: manifest_path.display().to_string(),
            reason: "plasticity length does not match neuron count".to_string(),
        });
    }
    let rows: Vec<u64> = bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("exact chunks")))
        .collect();
    Ok(EdgeLayer::from_parts(
        manifest.input_dim,
        manifest.num_classes,
        manifest.neurons_per_class,
        manifest.num_weights,
        rows,
        manifest.plasticity,
        manifest.config,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edge::init_edge_layer;
    use crate::eeg::Segment;

    #[test]
    fn dataset_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = LabeledDataset::new(vec!["Cz".into(), "Pz".into()], 6);
        for i in 0..5u32 {
            ds.segments.push(Segment {
                participant: i % 3,
                trial: i,
                label: (i % 2) as u8,
                channels: 2,
                width: 6,
                data: (0..12).map(|j| ((i as i32 * 31 + j) % 255 - 127) as i8).collect(),
            });
        }
        write_dataset(dir.path(), &ds, 99, "countdown-nominal").unwrap();
        let (back, manifest) = read_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(manifest.seed, 99);
        assert_eq!(manifest.kind, "countdown-nominal");

        // Rewriting produces identical bytes.
        let blob1 = std::fs::read(dir.path().join("segments.i8")).unwrap();
        write_dataset(dir.path(), &back, 99, "countdown-nominal").unwrap();
        let blob2 = std::fs::read(dir.path().join("segments.i8")).unwrap();
        assert_eq!(blob1, blob2);
    }

    #[test]
    fn model_checkpoints_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let model = CnnModel::new((1, 8, 12), 3).unwrap();
        let path = dir.path().join("stage1.json");
        write_cnn_model(&path, &model).unwrap();
        assert_eq!(read_cnn_model(&path).unwrap(), model);

        let q = crate::quant::quantize_cnn(&model);
        let qpath = dir.path().join("stage2.json");
        write_quantized_model(&qpath, &q).unwrap();
        assert_eq!(read_quantized_model(&qpath).unwrap(), q);
    }

    #[test]
    fn edge_layer_roundtrip_preserves_bits_and_plasticity() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EdgeLearnConfig { neurons_per_class: 7, seed: 5, ..Default::default() };
        let mut layer = init_edge_layer(130, 9, &cfg).unwrap();
        // Mutate state so the roundtrip is not trivially the initial layer.
        let p = crate::runtime::SpikePattern { dims: vec![130], active: vec![3, 70, 128] };
        crate::edge::edge_learn_step(&mut layer, &p, 1).unwrap();
        write_edge_layer(dir.path(), &layer).unwrap();
        let back = read_edge_layer(dir.path()).unwrap();
        assert_eq!(back.input_dim(), layer.input_dim());
        assert_eq!(back.num_weights(), layer.num_weights());
        assert_eq!(back.plasticity(), layer.plasticity());
        for n in 0..layer.neurons() {
            assert_eq!(back.row_words(n), layer.row_words(n));
        }
    }
}
