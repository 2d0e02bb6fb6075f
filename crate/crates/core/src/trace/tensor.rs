//! `.hst` tensor files.
//!
//! Layout (all little-endian):
//!
//! ```text
//! offset  size  field
//! 0       2     magic  b"HS"
//! 2       2     version (u16, currently 1)
//! 4       4     L (u32)
//! 8       4     T (u32)
//! 12      4     D (u32)
//! 16      4*L*T*D  f32 payload, index order [layer][time][dim]
//! ```
//!
//! Logits files reuse the layout with `L = 1` and `D = vocab_size`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 2] = *b"HS";
pub const TENSOR_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorHeader {
    pub layers: u32,
    pub steps: u32,
    pub dim: u32,
}

impl TensorHeader {
    pub fn value_count(&self) -> usize {
        self.layers as usize * self.steps as usize * self.dim as usize
    }

    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut buf = [0u8; HEADER_LEN];
        buf[0..2].copy_from_slice(&MAGIC);
        buf[2..4].copy_from_slice(&TENSOR_VERSION.to_le_bytes());
        buf[4..8].copy_from_slice(&self.layers.to_le_bytes());
        buf[8..12].copy_from_slice(&self.steps.to_le_bytes());
        buf[12..16].copy_from_slice(&self.dim.to_le_bytes());
        buf
    }

    fn decode(buf: &[u8; HEADER_LEN], path: &Path) -> Result<Self> {
        if buf[0..2] != MAGIC {
            return Err(Error::format(format!(
                "{}: bad magic {:?}",
                path.display(),
                &buf[0..2]
            )));
        }
        let version = u16::from_le_bytes([buf[2], buf[3]]);
        if version != TENSOR_VERSION {
            return Err(Error::format(format!(
                "{}: unsupported tensor version {version}",
                path.display()
            )));
        }
        let word = |i: usize| u32::from_le_bytes([buf[i], buf[i + 1], buf[i + 2], buf[i + 3]]);
        Ok(Self {
            layers: word(4),
            steps: word(8),
            dim: word(12),
        })
    }
}

pub fn write_tensor(path: &Path, header: TensorHeader, data: &[f32]) -> Result<()> {
    if data.len() != header.value_count() {
        return Err(Error::format(format!(
            "{}: {} values do not fill {}x{}x{}",
            path.display(),
            data.len(),
            header.layers,
            header.steps,
            header.dim
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    out.write_all(&header.encode()).map_err(io)?;
    for v in data {
        out.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_tensor(path: &Path) -> Result<(TensorHeader, Vec<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut input = BufReader::new(file);
    let mut head = [0u8; HEADER_LEN];
    input.read_exact(&mut head).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(format!("{}: truncated header", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    let header = TensorHeader::decode(&head, path)?;
    let count = header.value_count();
    let expected_len = HEADER_LEN as u64 + 4 * count as u64;
    if file_len != expected_len {
        return Err(Error::format(format!(
            "{}: header {}x{}x{} implies {expected_len} bytes, file has {file_len}",
            path.display(),
            header.layers,
            header.steps,
            header.dim
        )));
    }
    let mut raw = vec![0u8; 4 * count];
    input.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok((header, data))
}
