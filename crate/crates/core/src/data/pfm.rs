//! Portable float map (PFM) reading and writing.
//!
//! Header: `PF` (3 channels) or `Pf` (1 channel), then `width height`, then
//! a scale whose sign gives the byte order (negative = little-endian). Rows
//! are stored bottom to top with interleaved channels.

use std::fs;
use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PfmWriteOptions {
    pub allow_nonfinite: bool,
}

pub fn encode_pfm(img: &Tensor<f32>, opts: PfmWriteOptions) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.n != 1 {
        return Err(Error::Data(format!("PFM holds a single image, got batch of {}", s.n)));
    }
    let tag = match s.c {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::Data(format!("PFM supports 1 or 3 channels, got {c}"))),
    };
    if !opts.allow_nonfinite {
        if let Some(pos) = img.data().iter().position(|v| !v.is_finite()) {
            let (x, y, c) = (pos % s.w, (pos / s.w) % s.h, pos / s.plane());
            return Err(Error::Data(format!(
                "non-finite value at channel {c} (x={x}, y={y}); pass allow_nonfinite to write anyway"
            )));
        }
    }
    let header = format!("{tag}\n{} {}\n-1.0\n", s.w, s.h);
    let mut out = Vec::with_capacity(header.len() + s.len() * 4);
    out.extend_from_slice(header.as_bytes());
    for y in (0..s.h).rev() {
        for x in 0..s.w {
            for c in 0..s.c {
                out.extend_from_slice(&img.at(0, c, y, x).to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderParser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse { offset: self.pos, message: message.into() })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn token(&mut self, what: &str) -> Result<&'a str> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return self.err(format!("expected {what}, found end of data"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).or_else(|_| {
            self.pos = start;
            self.err(format!("{what} is not ASCII"))
        })
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let start = self.pos;
        let tok = self.token(what)?;
        tok.parse().or_else(|_| {
            self.pos = start;
            self.skip_ws();
            self.err(format!("invalid {what} \"{tok}\""))
        })
    }
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut p = HeaderParser { bytes, pos: 0 };
    let channels = match p.token("PF/Pf tag")? {
        "PF" => 3,
        "Pf" => 1,
        other => {
            p.pos = 0;
            return p.err(format!("bad magic \"{other}\", expected PF or Pf"));
        }
    };
    let width: usize = p.number("width")?;
    let height: usize = p.number("height")?;
    if width == 0 || height == 0 {
        return p.err("zero image dimension");
    }
    let scale: f64 = p.number("scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return p.err("scale must be a nonzero finite number");
    }
    // exactly one whitespace byte separates the header from the raster
    if p.pos >= bytes.len() || !bytes[p.pos].is_ascii_whitespace() {
        return p.err("missing whitespace after scale");
    }
    p.pos += 1;
    let little = scale < 0.0;
    let count = width * height * channels;
    let raster = &bytes[p.pos..];
    if raster.len() != count * 4 {
        return p.err(format!(
            "raster has {} bytes, expected {} for {width}x{height}x{channels}",
            raster.len(),
            count * 4
        ));
    }
    let shape = Shape::new(1, channels, height, width);
    let mut data = vec![0f32; count];
    for (i, chunk) in raster.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let c = i % channels;
        let x = (i / channels) % width;
        let row = i / (channels * width);
        data[shape.index(0, c, height - 1 - row, x)] = v;
    }
    Tensor::from_vec(shape, data)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).with_path(path)?;
    decode_pfm(&bytes).map_err(|e| match e {
        Error::Parse { offset, message } => Error::Parse { offset, message: format!("{}: {message}", path.display()) },
        other => other,
    })
}

pub fn write_pfm(path: impl AsRef<Path>, img: &Tensor<f32>) -> Result<()> {
    write_pfm_with(path, img, PfmWriteOptions::default())
}

pub fn write_pfm_with(path: impl AsRef<Path>, img: &Tensor<f32>, opts: PfmWriteOptions) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pfm(img, opts)?;
    fs::write(path, bytes).with_path(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gray_pixel_layout() {
        let img = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![2.5f32]).unwrap();
        let bytes = encode_pfm(&img, PfmWriteOptions::default()).unwrap();
        let header = b"Pf\n1 1\n-1.0\n";
        assert_eq!(header.len(), 12);
        assert_eq!(&bytes[..12], header);
        assert_eq!(bytes.len(), 12 + 4);
        assert_eq!(&bytes[12..], &2.5f32.to_le_bytes());
    }

    #[test]
    fn rows_are_bottom_to_top() {
        // 1 wide, 2 tall: top 1.0, bottom 2.0
        let img = Tensor::from_vec(Shape::new(1, 1, 2, 1), vec![1.0f32, 2.0]).unwrap();
        let bytes = encode_pfm(&img, PfmWriteOptions::default()).unwrap();
        let raster = &bytes[bytes.len() - 8..];
        assert_eq!(&raster[..4], &2.0f32.to_le_bytes());
    }

    #[test]
    fn big_endian_matches_little_endian() {
        let img =
            Tensor::from_fn(Shape::new(1, 3, 2, 3), |_, c, y, x| (c as f32 + 0.5) * (y * 3 + x) as f32 - 1.25).unwrap();
        let le = encode_pfm(&img, PfmWriteOptions::default()).unwrap();
        let header = b"PF\n3 2\n1.0\n";
        let mut be = header.to_vec();
        let raster = &le[b"PF\n3 2\n-1.0\n".len()..];
        for chunk in raster.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            be.extend_from_slice(&v.to_be_bytes());
        }
        assert_eq!(decode_pfm(&be).unwrap(), img);
        assert_eq!(decode_pfm(&le).unwrap(), img);
    }

    #[test]
    fn malformed_headers_report_offsets() {
        assert!(matches!(decode_pfm(b"P6\n1 1\n-1.0\n"), Err(Error::Parse { offset: 0, .. })));
        match decode_pfm(b"Pf\nx 1\n-1.0\n\0\0\0\0") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("{other:?}"),
        }
        assert!(decode_pfm(b"Pf\n1 1\n-1.0\n\0\0").is_err());
        assert!(decode_pfm(b"Pf\n1 1\n0\n\0\0\0\0").is_err());
    }

    #[test]
    fn nonfinite_write_needs_opt_in() {
        let img = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0f32, f32::NAN]).unwrap();
        assert!(matches!(encode_pfm(&img, PfmWriteOptions::default()), Err(Error::Data(_))));
        let bytes = encode_pfm(&img, PfmWriteOptions { allow_nonfinite: true }).unwrap();
        assert!(decode_pfm(&bytes).unwrap().data()[1].is_nan());
        let two = Tensor::<f32>::zeros(Shape::new(1, 2, 1, 1)).unwrap();
        assert!(encode_pfm(&two, PfmWriteOptions::default()).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_bit_exact(c in prop::sample::select(vec![1usize, 3]), h in 1usize..6, w in 1usize..6, vals in prop::collection::vec(-1e3f32..1e4, 90)) {
            let shape = Shape::new(1, c, h, w);
            let data = vals.iter().cycle().take(shape.len()).copied().collect();
            let img = Tensor::from_vec(shape, data).unwrap();
            let back = decode_pfm(&encode_pfm(&img, PfmWriteOptions::default()).unwrap()).unwrap();
            prop_assert_eq!(
                back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                img.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
