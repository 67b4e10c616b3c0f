//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! | bytes | field                                                   |
//! |-------|---------------------------------------------------------|
//! | 8     | magic `HOPWCKPT`                                        |
//! | 4     | format version (u32, currently 1)                       |
//! | 4     | d (u32)                                                 |
//! | 4     | m, relation count (u32)                                 |
//! | 4     | T, step budget (u32)                                    |
//! | 4     | flags (u32; bit 0 = mask ablation)                      |
//! | 8     | mask threshold (f64)                                    |
//! | 8     | clamp ceiling (f64)                                     |
//! | 8     | encoder seed (u64)                                      |
//! | 32    | SHA-256 of the relation labels joined by `\n`           |
//! | 4 + … | relation count (u32), then per label: u32 length, UTF-8 |
//! | 8     | parameter count (u64)                                   |
//! | 4 × n | f32 parameters, blocks in [`ParamGroup::ALL`] order     |

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{ParamGroup, ReasonerParams, ReasonerShape, ReasoningOptions};
use crate::error::{Error, Result};
use crate::kg::Vocab;

pub const MAGIC: &[u8; 8] = b"HOPWCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ReasonerParams,
    pub options: ReasoningOptions,
    pub encoder_seed: u64,
    pub relations: Vocab,
}

/// SHA-256 over relation labels joined with newlines.
pub fn vocab_hash(relations: &Vocab) -> [u8; 32] {
    let mut h = Sha256::new();
    for (i, name) in relations.names().iter().enumerate() {
        if i > 0 {
            h.update(b"\n");
        }
        h.update(name.as_bytes());
    }
    h.finalize().into()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = self.params.shape;
        let mut out = Vec::with_capacity(128 + 4 * self.params.param_count());
        out.extend_from_slice(MAGIC);
        for v in [
            FORMAT_VERSION,
            s.dim as u32,
            s.relations as u32,
            s.steps as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let flags: u32 = u32::from(self.options.mask_off);
        out.extend_from_slice(&flags.to_le_bytes());
        out.extend_from_slice(&self.options.mask_threshold.to_le_bytes());
        out.extend_from_slice(&self.options.clamp.to_le_bytes());
        out.extend_from_slice(&self.encoder_seed.to_le_bytes());
        out.extend_from_slice(&vocab_hash(&self.relations));
        out.extend_from_slice(&(self.relations.len() as u32).to_le_bytes());
        for name in self.relations.names() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        out.extend_from_slice(&(self.params.param_count() as u64).to_le_bytes());
        for g in ParamGroup::ALL {
            for &x in self.params.group(g) {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let shape = ReasonerShape {
            dim: r.u32()? as usize,
            relations: r.u32()? as usize,
            steps: r.u32()? as usize,
        };
        shape
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let flags = r.u32()?;
        let options = ReasoningOptions {
            mask_off: flags & 1 == 1,
            mask_threshold: r.f64()?,
            clamp: r.f64()?,
        };
        let encoder_seed = r.u64()?;
        let hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let count = r.u32()? as usize;
        let mut names = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            names.push(
                String::from_utf8(raw.to_vec())
                    .map_err(|_| Error::Checkpoint("relation label is not UTF-8".into()))?,
            );
        }
        let relations = Vocab::from_names(names).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if relations.len() != shape.relations {
            return Err(Error::Checkpoint(format!(
                "{} relation labels for m = {}",
                relations.len(),
                shape.relations
            )));
        }
        if vocab_hash(&relations) != hash {
            return Err(Error::Checkpoint(
                "relation vocabulary hash mismatch".into(),
            ));
        }
        let mut params = ReasonerParams::zeros(shape);
        let n = r.u64()? as usize;
        if n != params.param_count() {
            return Err(Error::Checkpoint(format!(
                "{n} parameters stored, shape needs {}",
                params.param_count()
            )));
        }
        for g in ParamGroup::ALL {
            for x in params.group_mut(g) {
                *x = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as f64;
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        params
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Self {
            params,
            options,
            encoder_seed,
            relations,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    /// Rounds parameters to f32, as they would be after a save/load cycle.
    pub fn quantized(mut self) -> Self {
        for g in ParamGroup::ALL {
            for x in self.params.group_mut(g) {
                *x = *x as f32 as f64;
            }
        }
        self
    }

    /// Fails unless `relations` matches the vocabulary the model was trained on.
    pub fn check_relations(&self, relations: &Vocab) -> Result<()> {
        if vocab_hash(relations) != vocab_hash(&self.relations) {
            return Err(Error::Checkpoint(
                "graph relation vocabulary differs from the checkpoint's".into(),
            ));
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let shape = ReasonerShape {
            dim: 8,
            relations: 3,
            steps: 2,
        };
        Checkpoint {
            params: ReasonerParams::init(shape, 4).unwrap(),
            options: ReasoningOptions {
                mask_off: true,
                ..ReasoningOptions::default()
            },
            encoder_seed: 77,
            relations: Vocab::from_names(["father", "son", "brother"]).unwrap(),
        }
    }

    #[test]
    fn roundtrip_equals_quantized() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck.quantized());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        // Flip a byte inside the first relation label.
        let mut bad = bytes.clone();
        let label_start = 8 + 4 * 5 + 8 * 3 + 32 + 4 + 4;
        bad[label_start] ^= 0x01;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn relation_check() {
        let ck = sample();
        assert!(ck.check_relations(&ck.relations.clone()).is_ok());
        let other = Vocab::from_names(["father", "brother", "son"]).unwrap();
        assert!(ck.check_relations(&other).is_err());
    }
}
