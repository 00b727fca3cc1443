//! Binary dataset file and PGM image I/O.
//!
//! Dataset layout (little-endian): the 8-byte magic `CMMADS1\n`; `u32` n,
//! m, A; `f32` X row-major (n·m values); `f32` Y row-major (n·A values);
//! then for train, validation and test in turn a `u32` count followed by
//! that many `u32` indices.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DataError, MultimodalDataset};
use crate::ndgrad::Tensor;

pub const DATASET_MAGIC: &[u8; 8] = b"CMMADS1\n";

pub fn write_dataset<W: Write>(d: &MultimodalDataset, mut w: W) -> Result<(), DataError> {
    w.write_all(DATASET_MAGIC)?;
    for v in [d.len(), d.x_dim(), d.y_dim()] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    for &v in d.x.data().iter().chain(d.y.data()) {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    for split in [&d.train, &d.validation, &d.test] {
        w.write_all(&(split.len() as u32).to_le_bytes())?;
        for &i in split.iter() {
            w.write_all(&(i as u32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DataError> {
        let end = self.pos.checked_add(n).ok_or(DataError::Truncated(what))?;
        if end > self.buf.len() {
            return Err(DataError::Truncated(what));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>, DataError> {
        let bytes = self.take(n.checked_mul(4).ok_or(DataError::Truncated(what))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn indices(&mut self, what: &'static str) -> Result<Vec<usize>, DataError> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n.checked_mul(4).ok_or(DataError::Truncated(what))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect())
    }
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<MultimodalDataset, DataError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    let magic = c.take(8, "magic")?;
    if magic != DATASET_MAGIC {
        return Err(DataError::BadMagic(magic.to_vec()));
    }
    let n = c.u32("header")? as usize;
    let m = c.u32("header")? as usize;
    let a = c.u32("header")? as usize;
    if n == 0 || m == 0 || a == 0 {
        return Err(DataError::InvalidSplits(format!("empty dimensions n={n} m={m} A={a}")));
    }
    let x = c.f32s(n * m, "images")?;
    let y = c.f32s(n * a, "attributes")?;
    let train = c.indices("train split")?;
    let validation = c.indices("validation split")?;
    let test = c.indices("test split")?;
    MultimodalDataset::new(
        Tensor::matrix(n, m, x).expect("sized above"),
        Tensor::matrix(n, a, y).expect("sized above"),
        train,
        validation,
        test,
    )
}

pub fn save_dataset(d: &MultimodalDataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_dataset(d, BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<MultimodalDataset, DataError> {
    read_dataset(BufReader::new(File::open(path)?))
}

/// Writes a binary (P5) greyscale image with maxval 255, mapping each
/// value to `round(255 · v)` after clamping to [0, 1].
pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[f64]) -> Result<(), DataError> {
    if pixels.len() != width * height {
        return Err(DataError::Pgm(format!(
            "{} pixels for a {width}x{height} image",
            pixels.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = pixels
        .iter()
        .map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Reads a binary (P5) PGM with maxval ≤ 255; values are scaled to [0, 1].
pub fn read_pgm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>), DataError> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < buf.len() && buf[pos] == b'#' {
            while pos < buf.len() && buf[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(DataError::Pgm("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(DataError::Pgm(format!("expected P5, found {:?}", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| DataError::Pgm(format!("bad header field {s:?}")));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(DataError::Pgm(format!("unsupported maxval {maxval}")));
    }
    pos += 1;
    let data = buf
        .get(pos..pos + w * h)
        .ok_or_else(|| DataError::Pgm("truncated pixel data".into()))?;
    Ok((w, h, data.iter().map(|&b| b as f64 / maxval as f64).collect()))
}
