//! Binary model files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "PMNT"
//! version    u8
//! head       u8       0 = two-channel, 1 = siamese
//! input      u32      patch side
//! n_blocks   u32
//! blocks     n_blocks x (in_ch u32, out_ch u32, kernel u32)
//! n_floats   u64      length of the parameter blob
//! blob       n_floats x f32, per layer weight then bias, declaration order
//! crc32      u32      checksum of the blob bytes
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{ConvBlock, ConvNetError, HeadKind, LayerParams, NetSpec, NetworkParams, Tensor};

pub const MODEL_MAGIC: [u8; 4] = *b"PMNT";
pub const MODEL_VERSION: u8 = 1;

pub fn write_model(params: &NetworkParams, out: &mut impl Write) -> Result<(), ConvNetError> {
    let spec = params.spec();
    let mut header = Vec::new();
    header.extend_from_slice(&MODEL_MAGIC);
    header.push(MODEL_VERSION);
    header.push(match spec.head {
        HeadKind::TwoChannel => 0,
        HeadKind::Siamese => 1,
    });
    header.extend_from_slice(&(spec.input_size as u32).to_le_bytes());
    header.extend_from_slice(&(spec.blocks.len() as u32).to_le_bytes());
    for b in &spec.blocks {
        for v in [b.in_ch, b.out_ch, b.kernel] {
            header.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
    let mut blob = Vec::with_capacity(params.n_params() * 4);
    for layer in params.layers() {
        for v in layer.weight.data().iter().chain(layer.bias.data()) {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    header.extend_from_slice(&(params.n_params() as u64).to_le_bytes());
    out.write_all(&header)?;
    out.write_all(&blob)?;
    out.write_all(&crc32fast::hash(&blob).to_le_bytes())?;
    Ok(())
}

pub fn save_model(params: &NetworkParams, path: impl AsRef<Path>) -> Result<(), ConvNetError> {
    let mut bytes = Vec::new();
    write_model(params, &mut bytes)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkParams, ConvNetError> {
    let mut file = fs::File::open(path)?;
    read_model(&mut file)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ConvNetError> {
        let end = self.pos.checked_add(n).ok_or(ConvNetError::ChecksumMismatch)?;
        let out = self.bytes.get(self.pos..end).ok_or(ConvNetError::ChecksumMismatch)?;
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, ConvNetError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ConvNetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ConvNetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses a model. Truncation anywhere is reported as a checksum failure.
pub fn read_model(input: &mut impl Read) -> Result<NetworkParams, ConvNetError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let magic = cur.take(4).map_err(|_| ConvNetError::BadMagic)?;
    if magic != MODEL_MAGIC {
        return Err(ConvNetError::BadMagic);
    }
    let version = cur.u8()?;
    if version != MODEL_VERSION {
        return Err(ConvNetError::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let head = match cur.u8()? {
        0 => HeadKind::TwoChannel,
        1 => HeadKind::Siamese,
        other => {
            return Err(ConvNetError::InvalidSpec(format!("unknown head tag {other}")));
        }
    };
    let input_size = cur.u32()? as usize;
    let n_blocks = cur.u32()? as usize;
    if n_blocks > 64 {
        return Err(ConvNetError::InvalidSpec(format!("{n_blocks} blocks")));
    }
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        blocks.push(ConvBlock {
            in_ch: cur.u32()? as usize,
            out_ch: cur.u32()? as usize,
            kernel: cur.u32()? as usize,
        });
    }
    let n_floats = cur.u64()? as usize;
    let blob = cur.take(n_floats.checked_mul(4).ok_or(ConvNetError::ChecksumMismatch)?)?;
    let stored = cur.u32()?;
    if cur.pos != bytes.len() || crc32fast::hash(blob) != stored {
        return Err(ConvNetError::ChecksumMismatch);
    }

    let spec = NetSpec::new(input_size, blocks, head)?;
    let shapes = NetworkParams::shapes(&spec);
    let expected: usize = shapes
        .iter()
        .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
        .sum();
    if expected != n_floats {
        return Err(ConvNetError::ShapeMismatch(format!(
            "spec needs {expected} parameters, file holds {n_floats}"
        )));
    }
    let mut floats = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut layers = Vec::with_capacity(shapes.len());
    for (w, b) in shapes {
        let nw = w.iter().product();
        let nb = b.iter().product();
        let weight = Tensor::new(w, floats.by_ref().take(nw).collect())?;
        let bias = Tensor::new(b, floats.by_ref().take(nb).collect())?;
        layers.push(LayerParams { weight, bias });
    }
    NetworkParams::from_layers(&spec, layers)
}
