//! Calibrator checkpoint, same framing as the model checkpoint:
//!
//! ```text
//! u8 version | "SCSP" | 32-byte model digest | str soft token | config
//! | u8 trained | u32 layers | u32 count, count×tensor | 32-byte soft digest
//! ```

use std::path::Path;

use super::soft::{Distance, SeparatorPolicy, SoftPromptEncoder, SoftPromptToken};
use super::summarize::Calibration;
use super::train::CalibrationConfig;
use crate::codec::{check_header, Reader, Writer};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::lm::model::{EncoderParams, WeightDigest};
use crate::lm::FrozenLm;

pub const CALIBRATOR_FORMAT_VERSION: u8 = 1;
const MAGIC: &[u8; 4] = b"SCSP";

#[derive(Clone, Debug, PartialEq)]
pub struct StoredCalibrator {
    pub calibration: Calibration,
    pub config: CalibrationConfig,
    pub model_digest: WeightDigest,
}

pub fn encode_calibrator(cal: &Calibration, config: &CalibrationConfig, lm: &FrozenLm) -> Result<Vec<u8>> {
    let digest = lm
        .weight_digest()
        .ok_or_else(|| Error::contract("calibrator can only be bound to a frozen model"))?;
    let mut w = Writer::default();
    w.u8(CALIBRATOR_FORMAT_VERSION);
    w.bytes(MAGIC);
    w.bytes(&digest.0);
    w.str(&cal.token.text);
    w.u8(match config.distance {
        Distance::Mse => 0,
        Distance::CrossEntropy => 1,
    });
    w.f64(config.learning_rate);
    w.u32(config.max_epochs);
    w.f64(config.convergence_tol);
    w.u32(config.patience);
    w.u64(config.seed);
    w.u8(match config.separator_policy {
        SeparatorPolicy::PromptFirst => 0,
        SeparatorPolicy::NoteFirst => 1,
    });
    // 0 encodes the per-epoch schedule.
    w.u32(config.batch_size.unwrap_or(0));
    w.u8(cal.encoder.trained as u8);
    let params = cal.encoder.params();
    w.u32(params.blocks.len());
    let tensors = params.named_tensors("soft");
    w.u32(tensors.len());
    for (name, t) in &tensors {
        w.tensor(name, t);
    }
    w.bytes(&cal.encoder.digest().0);
    Ok(w.buf)
}

/// Decodes a calibrator and checks it was trained against `lm`.
pub fn decode_calibrator(bytes: &[u8], lm: &FrozenLm) -> Result<StoredCalibrator> {
    let mut r = Reader::new(bytes);
    check_header(&mut r, CALIBRATOR_FORMAT_VERSION, MAGIC)?;
    let model_digest = WeightDigest(r.take(32)?.try_into().unwrap());
    let actual = lm.compute_digest();
    if model_digest != actual {
        return Err(Error::DigestMismatch {
            expected: model_digest.to_string(),
            found: actual.to_string(),
        });
    }
    let text = r.str()?;
    let distance = match r.u8()? {
        0 => Distance::Mse,
        1 => Distance::CrossEntropy,
        x => return Err(Error::Checkpoint(format!("unknown distance tag {x}"))),
    };
    let learning_rate = r.f64()?;
    let max_epochs = r.u32()?;
    let convergence_tol = r.f64()?;
    let patience = r.u32()?;
    let seed = r.u64()?;
    let separator_policy = match r.u8()? {
        0 => SeparatorPolicy::PromptFirst,
        1 => SeparatorPolicy::NoteFirst,
        x => return Err(Error::Checkpoint(format!("unknown separator tag {x}"))),
    };
    let batch_size = Some(r.u32()?).filter(|&b| b > 0);
    let trained = r.u8()? != 0;
    let layers = r.u32()?;
    if layers != lm.config().encoder_layers {
        return Err(Error::Checkpoint(format!(
            "calibrator has {layers} encoder layers, model has {}",
            lm.config().encoder_layers
        )));
    }
    let names: Vec<String> = lm.encoder().named_tensors("soft").into_iter().map(|(n, _)| n).collect();
    let count = r.u32()?;
    if count != names.len() {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {count}", names.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, (_, reference)) in names.iter().zip(lm.encoder().named_tensors("soft")) {
        let t = r.tensor(name, true)?;
        if t.shape() != reference.shape() {
            return Err(Error::Checkpoint(format!("tensor {name} has shape {:?}", t.shape())));
        }
        tensors.push(t);
    }
    let stored = WeightDigest(r.take(32)?.try_into().unwrap());
    if !r.at_end() {
        return Err(Error::Checkpoint(format!("trailing bytes after offset {}", r.position())));
    }
    let encoder = SoftPromptEncoder {
        params: EncoderParams::from_tensors(tensors, layers)?,
        heads: lm.config().heads,
        trained,
    };
    let found = encoder.digest();
    if found != stored {
        return Err(Error::DigestMismatch {
            expected: stored.to_string(),
            found: found.to_string(),
        });
    }
    let config = CalibrationConfig {
        distance,
        learning_rate,
        max_epochs,
        convergence_tol,
        patience,
        seed,
        separator_policy,
        batch_size,
    };
    Ok(StoredCalibrator {
        calibration: Calibration {
            encoder,
            token: SoftPromptToken::new(&text, lm)?,
        },
        config,
        model_digest,
    })
}

pub fn save_calibrator(path: &Path, cal: &Calibration, config: &CalibrationConfig, lm: &FrozenLm) -> Result<()> {
    fsutil::write_atomic(path, &encode_calibrator(cal, config, lm)?)
}

pub fn load_calibrator(path: &Path, lm: &FrozenLm) -> Result<StoredCalibrator> {
    decode_calibrator(&fsutil::read(path)?, lm)
}
