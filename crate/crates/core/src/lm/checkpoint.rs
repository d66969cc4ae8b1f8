//! Binary model checkpoint:
//!
//! ```text
//! u8 version | "SCLM" | 6×u32 config | u32 n, n×str vocab
//! | u32 count, count×tensor | u8 frozen | u8 has_digest [| 32-byte digest]
//! ```
//! Strings are u32-length-prefixed UTF-8; tensors are name, u32 ndim, u32 dims,
//! f64 data, all little-endian.

use std::path::Path;

use super::model::{DecoderParams, EncoderParams, FrozenLm, ModelConfig, WeightDigest};
use super::vocab::Vocabulary;
use crate::codec::{check_header, Reader, Writer};
use crate::error::{Error, Result};
use crate::fsutil;

pub const MODEL_FORMAT_VERSION: u8 = 1;
const MAGIC: &[u8; 4] = b"SCLM";

pub fn encode_model(lm: &FrozenLm) -> Vec<u8> {
    let mut w = Writer::default();
    w.u8(MODEL_FORMAT_VERSION);
    w.bytes(MAGIC);
    let c = &lm.config;
    for v in [c.d_model, c.heads, c.encoder_layers, c.decoder_layers, c.ffn_dim, c.max_seq_len] {
        w.u32(v);
    }
    w.u32(lm.vocab.len());
    for t in lm.vocab.tokens() {
        w.str(t);
    }
    let tensors = lm.named_tensors();
    w.u32(tensors.len());
    for (name, t) in &tensors {
        w.tensor(name, t);
    }
    w.u8(lm.frozen as u8);
    match lm.digest {
        Some(d) => {
            w.u8(1);
            w.bytes(&d.0);
        }
        None => w.u8(0),
    }
    w.buf
}

pub fn decode_model(bytes: &[u8]) -> Result<FrozenLm> {
    let mut r = Reader::new(bytes);
    check_header(&mut r, MODEL_FORMAT_VERSION, MAGIC)?;
    let mut cfg = [0usize; 6];
    for c in &mut cfg {
        *c = r.u32()?;
    }
    let config = ModelConfig {
        d_model: cfg[0],
        heads: cfg[1],
        encoder_layers: cfg[2],
        decoder_layers: cfg[3],
        ffn_dim: cfg[4],
        max_seq_len: cfg[5],
    };
    config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let n = r.u32()?;
    let tokens = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let vocab = Vocabulary::from_ordered(tokens)?;

    // A throwaway skeleton supplies the expected names in order.
    let skeleton = FrozenLm::new_random(Vocabulary::from_words(std::iter::empty()), config, 0)?;
    let names: Vec<String> = skeleton.named_tensors().into_iter().map(|(n, _)| n).collect();
    let count = r.u32()?;
    if count != names.len() {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {count}", names.len())));
    }
    let n_enc = skeleton.encoder.tensors().len();
    let mut tensors = Vec::with_capacity(count);
    for name in &names {
        tensors.push(r.tensor(name, true)?);
    }
    let dec_tensors = tensors.split_off(n_enc);
    let encoder = EncoderParams::from_tensors(tensors, config.encoder_layers)?;
    let decoder = DecoderParams::from_tensors(dec_tensors, config.decoder_layers)?;
    let frozen = r.u8()? != 0;
    let digest = match r.u8()? {
        0 => None,
        _ => Some(WeightDigest(r.take(32)?.try_into().unwrap())),
    };
    if !r.at_end() {
        return Err(Error::Checkpoint(format!("trailing bytes after offset {}", r.position())));
    }
    let mut lm = FrozenLm {
        config,
        vocab,
        encoder,
        decoder,
        frozen: false,
        digest: None,
    };
    check_shapes(&lm)?;
    let actual = lm.compute_digest();
    if let Some(expected) = digest {
        if expected != actual {
            return Err(Error::DigestMismatch {
                expected: expected.to_string(),
                found: actual.to_string(),
            });
        }
    }
    if frozen {
        lm.freeze();
    } else {
        lm.digest = digest;
    }
    Ok(lm)
}

fn check_shapes(lm: &FrozenLm) -> Result<()> {
    let reference = FrozenLm::new_random(lm.vocab.clone(), lm.config, 0)?;
    for ((name, a), (_, b)) in lm.named_tensors().into_iter().zip(reference.named_tensors()) {
        if a.shape() != b.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                a.shape(),
                b.shape()
            )));
        }
    }
    Ok(())
}

pub fn save_model(lm: &FrozenLm, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &encode_model(lm))
}

pub fn load_model(path: &Path) -> Result<FrozenLm> {
    decode_model(&fsutil::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FrozenLm {
        let cfg = ModelConfig {
            d_model: 8,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            ffn_dim: 8,
            max_seq_len: 16,
        };
        FrozenLm::new_random(Vocabulary::build(["a b c ."]), cfg, 3).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut lm = small();
        lm.freeze();
        let back = decode_model(&encode_model(&lm)).unwrap();
        assert_eq!(back, lm);
        assert!(back.is_frozen());
        let unfrozen = small();
        assert_eq!(decode_model(&encode_model(&unfrozen)).unwrap(), unfrozen);
    }

    #[test]
    fn corruption_is_detected() {
        let mut lm = small();
        lm.freeze();
        let mut bytes = encode_model(&lm);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(decode_model(&bytes), Err(Error::DigestMismatch { .. }) | Err(Error::Checkpoint(_))));

        let bytes = encode_model(&lm);
        assert!(decode_model(&bytes[..bytes.len() - 5]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = 9;
        assert!(decode_model(&wrong).unwrap_err().to_string().contains("version"));
    }
}
