//! Binary tensor files, named tensor containers and PGM images.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::blocks::ParamStore;
use crate::engine::Tensor;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"KTSR";
pub const TENSOR_VERSION: u32 = 1;
pub const STORE_MAGIC: &[u8; 4] = b"KTSC";
pub const STORE_VERSION: u32 = 1;

/// Appends one tensor record: magic, version, ndim, `u64` dims, `f32`
/// payload, all little-endian.
pub fn encode_tensor(t: &Tensor<f32>, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Sequential little-endian reader that reports absolute offsets.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            reason: reason.into(),
        }
    }

    pub fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4, what)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8, what)?.try_into().expect("8 bytes")))
    }

    pub fn tensor(&mut self) -> Result<Tensor<f32>> {
        let start = self.pos;
        if self.bytes(4, "magic")? != TENSOR_MAGIC {
            self.pos = start;
            return Err(self.fail("bad magic, expected KTSR"));
        }
        let version = self.u32("version")?;
        if version != TENSOR_VERSION {
            self.pos -= 4;
            return Err(self.fail(format!("unsupported version {version}")));
        }
        let ndim = self.u32("ndim")? as usize;
        let mut dims = Vec::with_capacity(ndim.min(16));
        let mut numel: usize = 1;
        for _ in 0..ndim {
            let d = self.u64("dimension")?;
            let d = usize::try_from(d).map_err(|_| self.fail("dimension overflows usize"))?;
            numel = numel.checked_mul(d).ok_or_else(|| self.fail("element count overflows"))?;
            dims.push(d);
        }
        let len = numel.checked_mul(4).ok_or_else(|| self.fail("payload size overflows"))?;
        let payload = self.bytes(len, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Tensor::new(dims, data)
    }
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut r = Reader::new(bytes);
    let t = r.tensor()?;
    if !r.is_empty() {
        return Err(Error::Format {
            offset: r.offset(),
            reason: "trailing bytes after tensor payload".into(),
        });
    }
    Ok(t)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * t.ndim() + 4 * t.numel());
    encode_tensor(t, &mut buf);
    write_file(path.as_ref(), &buf)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    decode_tensor(&read_file(path.as_ref())?)
}

/// Container of named tensors: magic `KTSC`, version, `u64` record count,
/// then per record a `u32` name length, UTF-8 name and a tensor record.
pub fn encode_store(store: &ParamStore, out: &mut Vec<u8>) {
    out.extend_from_slice(STORE_MAGIC);
    out.extend_from_slice(&STORE_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_tensor(t, out);
    }
}

pub fn decode_store(r: &mut Reader<'_>) -> Result<ParamStore> {
    let start = r.offset();
    if r.bytes(4, "container magic")? != STORE_MAGIC {
        return Err(Error::Format {
            offset: start,
            reason: "bad magic, expected KTSC".into(),
        });
    }
    let version = r.u32("container version")?;
    if version != STORE_VERSION {
        return Err(Error::Format {
            offset: start + 4,
            reason: format!("unsupported container version {version}"),
        });
    }
    let count = r.u64("record count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let at = r.offset();
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.bytes(len, "name")?).map_err(|_| Error::Format {
            offset: at + 4,
            reason: "record name is not UTF-8".into(),
        })?;
        if store.contains(name) {
            return Err(Error::Format {
                offset: at,
                reason: format!("duplicate record `{name}`"),
            });
        }
        let name = name.to_string();
        store.insert(name, r.tensor()?);
    }
    Ok(store)
}

pub fn save_store(path: impl AsRef<Path>, store: &ParamStore) -> Result<()> {
    let mut buf = Vec::new();
    encode_store(store, &mut buf);
    write_file(path.as_ref(), &buf)
}

pub fn load_store(path: impl AsRef<Path>) -> Result<ParamStore> {
    let bytes = read_file(path.as_ref())?;
    let mut r = Reader::new(&bytes);
    let store = decode_store(&mut r)?;
    if !r.is_empty() {
        return Err(Error::Format {
            offset: r.offset(),
            reason: "trailing bytes after container".into(),
        });
    }
    Ok(store)
}

/// Binary 16-bit PGM (`P5`, maxval 65535, big-endian samples) of an `H×W`
/// image whose values are clipped to `[0, 1]`.
pub fn encode_pgm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let [h, w] = match *image.shape() {
        [h, w] => [h, w],
        [1, 1, h, w] | [1, h, w] => [h, w],
        ref s => return Err(Error::shape("export_image", format!("expected an H×W image, got {s:?}"))),
    };
    let mut out = Vec::with_capacity(32 + 2 * h * w);
    write!(out, "P5\n{w} {h}\n65535\n").expect("write to vec");
    for &v in image.data() {
        let q = (f64::from(v).clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    Ok(out)
}

pub fn export_image(image: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_pgm(image)?)
}

/// Parses a binary PGM (8- or 16-bit) into an `H×W` image scaled by its
/// maxval to `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0usize;
    let fail = |pos: usize, reason: &str| Error::Format {
        offset: pos as u64,
        reason: reason.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(fail(0, "not a binary PGM (missing P5)"));
    }
    pos += 2;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(fail(pos, "truncated PGM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| fail(start, "expected a decimal header field"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(fail(pos, "missing whitespace after PGM header"));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(fail(pos, "invalid PGM dimensions or maxval"));
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = w * h * bps;
    if bytes.len() - pos < need {
        return Err(fail(pos, "truncated PGM raster"));
    }
    let raster = &bytes[pos..pos + need];
    let scale = 1.0 / maxval as f32;
    Ok(Tensor::from_fn([h, w], |i| {
        let v = if bps == 1 {
            raster[i] as f32
        } else {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as f32
        };
        (v * scale).min(1.0)
    }))
}

pub fn import_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    decode_pgm(&read_file(path.as_ref())?)
}
