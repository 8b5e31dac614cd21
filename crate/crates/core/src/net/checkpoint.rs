//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "RSPM"  u32 version
//! u8 len + ASCII variant name
//! u32 input_size  u32 hidden_size  u32 attn_size
//! u32 block count
//! per block: u8 len + ASCII name, u8 ndim, ndim × u32 dims, f64 values
//! ```
//!
//! Blocks appear in [`ModelParams::blocks`] order. Loading checks every
//! name and shape and rejects truncated or trailing bytes.

use std::fs;
use std::path::Path;

use super::{Architecture, ModelParams, NetError, Result, Variant};

pub const MAGIC: &[u8; 4] = b"RSPM";
pub const VERSION: u32 = 1;

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.push(s.len() as u8);
    out.extend_from_slice(s.as_bytes());
}

pub fn to_bytes(model: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, model.arch.variant.name());
    for n in [
        model.arch.input_size,
        model.arch.hidden_size,
        model.arch.attn_size,
    ] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    let blocks = model.blocks();
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in blocks {
        put_str(&mut out, &b.name);
        out.push(b.shape.len() as u8);
        for d in &b.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in b.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            NetError::Checkpoint(format!("truncated at byte {}", self.bytes.len()))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u8()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| NetError::Checkpoint("name is not valid text".into()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(NetError::Checkpoint("not a model checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NetError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let variant: Variant = r.string()?.parse()?;
    let input_size = r.u32()? as usize;
    let hidden_size = r.u32()? as usize;
    let attn_size = r.u32()? as usize;
    if input_size == 0 || hidden_size == 0 || (variant.uses_attention() && attn_size == 0) {
        return Err(NetError::Checkpoint("zero-sized layer".into()));
    }
    let arch = Architecture {
        variant,
        input_size,
        hidden_size,
        attn_size,
    };
    let mut model = ModelParams::zeros(arch);
    let count = r.u32()? as usize;
    let mut blocks = model.blocks_mut();
    if count != blocks.len() {
        return Err(NetError::Checkpoint(format!(
            "{count} blocks, {} expects {}",
            variant,
            blocks.len()
        )));
    }
    for block in blocks.iter_mut() {
        let name = r.string()?;
        if name != block.name {
            return Err(NetError::Checkpoint(format!(
                "expected block {}, found {name}",
                block.name
            )));
        }
        let ndim = r.u8()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if shape != block.shape {
            return Err(NetError::Checkpoint(format!(
                "block {name} has shape {shape:?}, expected {:?}",
                block.shape
            )));
        }
        for v in block.values.iter_mut() {
            *v = r.f64()?;
        }
    }
    drop(blocks);
    if r.pos != bytes.len() {
        return Err(NetError::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &ModelParams) -> Result<()> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_every_variant() {
        for v in Variant::ALL {
            let m = ModelParams::init(Architecture::new(v, 5, 3), 11);
            assert_eq!(from_bytes(&to_bytes(&m)).unwrap(), m);
        }
    }

    #[test]
    fn header_bytes() {
        let m = ModelParams::init(Architecture::new(Variant::GruAt, 2, 2), 0);
        let b = to_bytes(&m);
        assert_eq!(&b[..4], b"RSPM");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(b[8], 6);
        assert_eq!(&b[9..15], b"GRU-AT");
        assert_eq!(&b[15..19], &[1, 0, 0, 0]);
        assert_eq!(&b[19..23], &[2, 0, 0, 0]);
    }

    #[test]
    fn dense_bias_is_little_endian_f64() {
        let mut m = ModelParams::zeros(Architecture::new(Variant::Lstm, 2, 2));
        m.dense_b[1] = 1.0;
        let b = to_bytes(&m);
        // 1.0 = 0x3FF0000000000000
        assert_eq!(&b[b.len() - 8..], &[0, 0, 0, 0, 0, 0, 0xF0, 0x3F]);
    }

    #[test]
    fn rejects_damage() {
        let m = ModelParams::init(Architecture::new(Variant::BiLstmAt, 3, 2), 1);
        let b = to_bytes(&m);
        assert!(from_bytes(&b[..b.len() - 1]).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        assert!(from_bytes(&[]).is_err());
    }
}
