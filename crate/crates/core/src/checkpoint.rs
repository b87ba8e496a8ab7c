//! Model checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "ADAUC1" | mode: u8 | n_widths: u32 | widths: u32 × n_widths
//!          | n_params: u64 | θ: f64 × n_params | a: f64 | b: f64 | α: f64
//! ```

use std::path::Path;

use crate::io::write_atomic;
use crate::model::ScorerParams;
use crate::objective::AuxParams;
use crate::trainer::TrainMode;
use crate::{Error, Result};

const MAGIC: &[u8; 6] = b"ADAUC1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub mode: TrainMode,
    pub params: ScorerParams,
    pub aux: AuxParams,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let widths = self.params.widths();
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.push(self.mode.tag());
        out.extend((widths.len() as u32).to_le_bytes());
        for &w in widths {
            out.extend((w as u32).to_le_bytes());
        }
        out.extend((self.params.num_params() as u64).to_le_bytes());
        for v in self.params.as_flat() {
            out.extend(v.to_le_bytes());
        }
        for v in [self.aux.a, self.aux.b, self.aux.alpha] {
            out.extend(v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(6)? != MAGIC {
            return Err(Error::format("checkpoint", "missing ADAUC1 magic"));
        }
        let mode = TrainMode::from_tag(r.take(1)?[0])?;
        let n_widths = r.u32()? as usize;
        if n_widths > 1024 {
            return Err(Error::format("checkpoint", "implausible layer count"));
        }
        let widths = (0..n_widths)
            .map(|_| r.u32().map(|w| w as usize))
            .collect::<Result<Vec<_>>>()?;
        let n_params = r.u64()? as usize;
        if n_params > bytes.len() / 8 {
            return Err(Error::format(
                "checkpoint",
                "parameter count exceeds file size",
            ));
        }
        let flat = (0..n_params).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let params = ScorerParams::from_flat(&widths, flat)?;
        let aux = AuxParams::new(r.f64()?, r.f64()?, r.f64()?)?;
        if r.at != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(Self { mode, params, aux })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let out = self
            .bytes
            .get(self.at..self.at + n)
            .ok_or_else(|| Error::format("checkpoint", "truncated file"))?;
        self.at += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let ck = Checkpoint {
            mode: TrainMode::AtFosc,
            params: ScorerParams::init(&[5, 3, 1], 4).unwrap(),
            aux: AuxParams::new(0.71, 0.12, -0.59).unwrap(),
        };
        let bytes = ck.encode();
        assert_eq!(&bytes[..6], b"ADAUC1");
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let ck = Checkpoint {
            mode: TrainMode::Natural,
            params: ScorerParams::init(&[2, 1], 1).unwrap(),
            aux: AuxParams::new(0.5, 0.5, 0.0).unwrap(),
        };
        let bytes = ck.encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::decode(&extra).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(Checkpoint::decode(&bad).is_err());
        let mut bad_mode = bytes;
        bad_mode[6] = 9;
        assert!(Checkpoint::decode(&bad_mode).is_err());
    }
}
