//! Versioned binary checkpoints: a JSON header describing the model shape
//! followed by named little-endian f64 arrays. 64-bit values round-trip
//! bit-exact, including negative zero and subnormals.
//!
//! Layout: magic `CTRLABCK`, u32 format version, u32 header length, header
//! JSON, then the raw array payloads in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DelayModel, Model, ModelError, ModelKind, WideDeepConfig, WideDeepModel};
use crate::losses::LossKind;

const MAGIC: &[u8; 8] = b"CTRLABCK";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A trained model state at one snapshot version.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    /// Jointly trained delay model, when the loss fits one.
    pub delay: Option<DelayModel>,
    /// Loss the parameters were trained under.
    pub loss: LossKind,
    /// Whether predictions must pass through the fake-negative calibration
    /// transform before use.
    pub calibrated: bool,
    /// Snapshot version, strictly increasing within a run.
    pub version: u64,
    /// Training step count at emission.
    pub step: u64,
}

/// Conventional file name for a snapshot version within a run directory.
pub fn snapshot_file_name(version: u64) -> String {
    format!("snapshot_{version}.ckpt")
}

#[derive(Serialize, Deserialize)]
struct ArrayMeta {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    loss: LossKind,
    calibrated: bool,
    version: u64,
    step: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    logistic_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    wide_deep: Option<WideDeepConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    delay_dim: Option<usize>,
    arrays: Vec<ArrayMeta>,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let mut arrays: Vec<(String, Vec<f64>)> = ckpt
        .model
        .named_arrays()
        .into_iter()
        .map(|(name, values)| (format!("model.{name}"), values))
        .collect();
    if let Some(delay) = &ckpt.delay {
        arrays.push(("delay.weights".to_string(), delay.weights().to_vec()));
    }

    let header = Header {
        kind: ckpt.model.kind(),
        loss: ckpt.loss,
        calibrated: ckpt.calibrated,
        version: ckpt.version,
        step: ckpt.step,
        logistic_dim: match &ckpt.model {
            Model::Logistic(m) => Some(m.dim()),
            Model::WideDeep(_) => None,
        },
        wide_deep: match &ckpt.model {
            Model::Logistic(_) => None,
            Model::WideDeep(m) => Some(m.config().clone()),
        },
        delay_dim: ckpt.delay.as_ref().map(|d| d.dim()),
        arrays: arrays.iter().map(|(name, v)| ArrayMeta { name: name.clone(), len: v.len() }).collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let header_len = u32::try_from(header_json.len())
        .map_err(|_| CheckpointError::Format("header too large".into()))?;

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&header_len.to_le_bytes())?;
    out.write_all(&header_json)?;
    for (_, values) in &arrays {
        for v in values {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact(&mut reader, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(CheckpointError::Format("bad magic; not a checkpoint file".into()));
    }
    let mut u32buf = [0u8; 4];
    read_exact(&mut reader, &mut u32buf, "format version")?;
    let format = u32::from_le_bytes(u32buf);
    if format != FORMAT_VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported format version {format}, expected {FORMAT_VERSION}"
        )));
    }
    read_exact(&mut reader, &mut u32buf, "header length")?;
    let header_len = u32::from_le_bytes(u32buf) as usize;
    let mut header_json = vec![0u8; header_len];
    read_exact(&mut reader, &mut header_json, "header")?;
    let header: Header = serde_json::from_slice(&header_json)?;

    let mut model = match header.kind {
        ModelKind::Logistic => {
            let dim = header
                .logistic_dim
                .ok_or_else(|| CheckpointError::Format("logistic checkpoint missing dim".into()))?;
            Model::new_logistic(dim)
        }
        ModelKind::WideDeep => {
            let config = header
                .wide_deep
                .clone()
                .ok_or_else(|| CheckpointError::Format("wide_deep checkpoint missing config".into()))?;
            Model::WideDeep(WideDeepModel::zeros(config)?)
        }
    };
    let mut delay = header.delay_dim.map(DelayModel::new);

    for meta in &header.arrays {
        let mut values = vec![0.0f64; meta.len];
        let mut buf = [0u8; 8];
        for v in &mut values {
            read_exact(&mut reader, &mut buf, &meta.name)?;
            *v = f64::from_le_bytes(buf);
        }
        if let Some(name) = meta.name.strip_prefix("model.") {
            model.set_named_array(name, &values)?;
        } else if meta.name == "delay.weights" {
            let d = delay
                .as_mut()
                .ok_or_else(|| CheckpointError::Format("delay array without delay_dim".into()))?;
            d.set_params_flat(&values)?;
        } else {
            return Err(CheckpointError::Format(format!("unknown array {:?}", meta.name)));
        }
    }

    Ok(Checkpoint {
        model,
        delay,
        loss: header.loss,
        calibrated: header.calibrated,
        version: header.version,
        step: header.step,
    })
}

fn read_exact<R: Read>(reader: &mut R, buf: &mut [u8], what: &str) -> Result<(), CheckpointError> {
    reader
        .read_exact(buf)
        .map_err(|e| CheckpointError::Format(format!("truncated while reading {what}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureLayout;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tricky_values(n: usize) -> Vec<f64> {
        let specials = [
            0.0,
            -0.0,
            1.0,
            -1.0,
            1e-300,
            -1e-300,
            f64::MIN_POSITIVE,
            std::f64::consts::PI,
            f64::from_bits(0x3ff0_0000_0000_0001), // 1.0 + one ulp
            1e300,
        ];
        (0..n).map(|i| specials[i % specials.len()] * (1.0 + i as f64)).collect()
    }

    #[test]
    fn logistic_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(snapshot_file_name(3));

        let mut model = Model::new_logistic(9);
        model.set_params_flat(&tricky_values(10)).unwrap();
        let mut delay = DelayModel::new(9);
        delay.set_params_flat(&tricky_values(9)).unwrap();
        let ckpt = Checkpoint {
            model,
            delay: Some(delay),
            loss: LossKind::DelayedFeedback,
            calibrated: false,
            version: 3,
            step: 128,
        };
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();

        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.model.params_flat()), bits(&ckpt.model.params_flat()));
        assert_eq!(
            bits(&back.delay.as_ref().unwrap().params_flat()),
            bits(&ckpt.delay.as_ref().unwrap().params_flat())
        );
        assert_eq!(back.version, 3);
        assert_eq!(back.step, 128);
        assert_eq!(back.loss, LossKind::DelayedFeedback);
        assert!(!back.calibrated);
    }

    #[test]
    fn wide_deep_round_trip_preserves_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(snapshot_file_name(1));

        let layout =
            FeatureLayout::from_cardinalities(&[("a".into(), 2), ("b".into(), 3)], 8).unwrap();
        let config = crate::models::WideDeepConfig {
            cross_pairs: vec![("a".to_string(), "b".to_string())],
            cross_dim: 4,
            embed_dim: 2,
            ..crate::models::WideDeepConfig::new(layout, vec![3])
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = Model::init_wide_deep(config, &mut rng).unwrap();
        let ckpt = Checkpoint {
            model,
            delay: None,
            loss: LossKind::FnCalibration,
            calibrated: true,
            version: 1,
            step: 64,
        };
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert!(back.calibrated);
        assert_eq!(back.model.kind(), ModelKind::WideDeep);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.model.params_flat()), bits(&ckpt.model.params_flat()));
        match (&back.model, &ckpt.model) {
            (Model::WideDeep(a), Model::WideDeep(b)) => assert_eq!(a.config(), b.config()),
            _ => panic!("kind changed"),
        }
    }

    #[test]
    fn rejects_foreign_and_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("not_a_checkpoint");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Format(_))));

        let good = dir.path().join(snapshot_file_name(0));
        let ckpt = Checkpoint {
            model: Model::new_logistic(4),
            delay: None,
            loss: LossKind::Log,
            calibrated: false,
            version: 0,
            step: 0,
        };
        save_checkpoint(&ckpt, &good).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let truncated = dir.path().join("truncated.ckpt");
        std::fs::write(&truncated, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(load_checkpoint(&truncated), Err(CheckpointError::Format(_))));
    }
}
