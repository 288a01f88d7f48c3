//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MCHSR1"
//! u32 byte length, then the NetworkConfig as UTF-8 JSON
//! for each layer in declaration order:
//!     weight: u32 x4 dims (out, in, k, k), then f32 values
//!     bias:   u32 x4 dims (out, 1, 1, 1),  then f32 values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NetworkConfig, NetworkParams};
use crate::error::{Error, IoContext, Result};
use crate::tensor::{ConvParams, Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"MCHSR1";

fn write_tensor(w: &mut impl Write, dims: [usize; 4], data: &[f32]) -> Result<()> {
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Data(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint(w: &mut impl Write, params: &NetworkParams<f32>) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    let cfg = serde_json::to_string(params.config())?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(cfg.as_bytes())?;
    for layer in params.layers() {
        write_tensor(w, layer.weight.shape().dims(), layer.weight.data())?;
        write_tensor(w, [layer.bias.len(), 1, 1, 1], &layer.bias)?;
    }
    Ok(())
}

/// Tracks the byte offset so parse errors can point into the file.
struct Cursor<R> {
    inner: R,
    offset: usize,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|_| Error::Parse {
            offset: self.offset,
            message: format!("truncated checkpoint while reading {what}"),
        })?;
        self.offset += n;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn tensor(&mut self, expected: Shape, what: &str) -> Result<Vec<f32>> {
        let start = self.offset;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = self.u32(what)? as usize;
        }
        if dims != expected.dims() {
            return Err(Error::Parse {
                offset: start,
                message: format!("{what}: stored dims {dims:?} do not match config ({expected})"),
            });
        }
        let raw = self.bytes(expected.len() * 4, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

pub fn read_checkpoint(r: impl Read) -> Result<NetworkParams<f32>> {
    let mut cur = Cursor { inner: r, offset: 0 };
    let magic = cur.bytes(CHECKPOINT_MAGIC.len(), "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Parse { offset: 0, message: "missing MCHSR1 magic".into() });
    }
    let len = cur.u32("config length")? as usize;
    let cfg_offset = cur.offset;
    let text = String::from_utf8(cur.bytes(len, "config")?)
        .map_err(|_| Error::Parse { offset: cfg_offset, message: "config is not UTF-8".into() })?;
    let config: NetworkConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Parse { offset: cfg_offset, message: format!("bad config JSON: {e}") })?;
    config.validate()?;

    let mut layers = Vec::new();
    for (name, o, i, k) in config.layer_specs() {
        let wshape = Shape::new(o, i, k, k);
        let weight = cur.tensor(wshape, &format!("{name}.weight"))?;
        let bias = cur.tensor(Shape::new(o, 1, 1, 1), &format!("{name}.bias"))?;
        layers.push(ConvParams::new(Tensor::from_vec(wshape, weight)?, bias)?);
    }
    let mut rest = [0u8; 1];
    if cur.inner.read(&mut rest)? != 0 {
        return Err(Error::Parse { offset: cur.offset, message: "trailing bytes after last layer".into() });
    }
    NetworkParams::from_layers(&config, layers)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &NetworkParams<f32>) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).with_path(path)?);
    write_checkpoint(&mut w, params)?;
    w.flush().with_path(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<NetworkParams<f32>> {
    let path = path.as_ref();
    read_checkpoint(BufReader::new(File::open(path).with_path(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> NetworkConfig {
        NetworkConfig { scale: 2, feat_ch: 4, groups: 1, blocks: 2, convs_per_rdb: 2, lrhs_in_ch: 3, hrls_in_ch: 6 }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let p = NetworkParams::<f32>::init(&cfg(), 11).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        assert_eq!(&buf[..6], b"MCHSR1");
        let q = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(p, q);
        let mut again = Vec::new();
        write_checkpoint(&mut again, &q).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn size_matches_layout() {
        let p = NetworkParams::<f32>::init(&cfg(), 0).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();
        let cfg_len = serde_json::to_string(&cfg()).unwrap().len();
        let expected = 6 + 4 + cfg_len + p.layers().len() * 2 * 16 + p.num_parameters() * 4;
        assert_eq!(buf.len(), expected);
    }

    #[test]
    fn corrupt_inputs_are_parse_errors() {
        let p = NetworkParams::<f32>::init(&cfg(), 0).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &p).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(bad.as_slice()), Err(Error::Parse { offset: 0, .. })));

        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(truncated), Err(Error::Parse { .. })));

        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(read_checkpoint(trailing.as_slice()).is_err());
    }
}
