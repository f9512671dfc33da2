//! `SPLF` weight containers.
//!
//! ```text
//! magic "SPLF" | version u32 | feature_dim u32 | section count u32
//! per section: name length u32 | name | rows u32 | cols u32 | data offset u64
//! f32 row-major matrices at their offsets
//! ```
//! All integers and floats are little-endian. Vectors are stored as
//! `rows x 1` matrices.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::decode::DecoderParams;
use crate::ptf::GruParams;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPLF";
pub const VERSION: u32 = 1;

pub const GRU_SECTIONS: [&str; 9] = ["gru.Wz", "gru.Uz", "gru.bz", "gru.Wr", "gru.Ur", "gru.br", "gru.Wh", "gru.Uh", "gru.bh"];
pub const DECODER_SECTIONS: [&str; 2] = ["dec.W", "dec.b"];

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub feature_dim: usize,
    pub sections: Vec<(String, DMatrix<f64>)>,
}

impl WeightFile {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            sections: Vec::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn insert(&mut self, name: &str, m: DMatrix<f64>) {
        match self.sections.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = m,
            None => self.sections.push((name.to_string(), m)),
        }
    }

    fn vector(&self, name: &str) -> Result<DVector<f64>> {
        let m = self.get(name).ok_or_else(|| Error::invalid(format!("missing section {name}")))?;
        if m.ncols() != 1 {
            return Err(Error::mismatch(format!("section {name} is {}x{}, expected a column", m.nrows(), m.ncols())));
        }
        Ok(m.column(0).into_owned())
    }

    fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        self.get(name).cloned().ok_or_else(|| Error::invalid(format!("missing section {name}")))
    }

    pub fn has_gru(&self) -> bool {
        GRU_SECTIONS.iter().any(|s| self.get(s).is_some())
    }

    pub fn has_decoder(&self) -> bool {
        DECODER_SECTIONS.iter().any(|s| self.get(s).is_some())
    }

    pub fn gru(&self) -> Result<GruParams> {
        let p = GruParams {
            w_z: self.matrix("gru.Wz")?,
            u_z: self.matrix("gru.Uz")?,
            b_z: self.vector("gru.bz")?,
            w_r: self.matrix("gru.Wr")?,
            u_r: self.matrix("gru.Ur")?,
            b_r: self.vector("gru.br")?,
            w_h: self.matrix("gru.Wh")?,
            u_h: self.matrix("gru.Uh")?,
            b_h: self.vector("gru.bh")?,
        };
        p.validate()?;
        if p.dim() != self.feature_dim {
            return Err(Error::mismatch(format!("GRU is {}-dim, file declares {}", p.dim(), self.feature_dim)));
        }
        Ok(p)
    }

    pub fn decoder(&self) -> Result<DecoderParams> {
        let p = DecoderParams {
            weight: self.matrix("dec.W")?,
            bias: self.vector("dec.b")?,
        };
        p.validate(self.feature_dim)?;
        Ok(p)
    }

    pub fn set_gru(&mut self, p: &GruParams) {
        let col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        self.insert("gru.Wz", p.w_z.clone());
        self.insert("gru.Uz", p.u_z.clone());
        self.insert("gru.bz", col(&p.b_z));
        self.insert("gru.Wr", p.w_r.clone());
        self.insert("gru.Ur", p.u_r.clone());
        self.insert("gru.br", col(&p.b_r));
        self.insert("gru.Wh", p.w_h.clone());
        self.insert("gru.Uh", p.u_h.clone());
        self.insert("gru.bh", col(&p.b_h));
    }

    pub fn set_decoder(&mut self, p: &DecoderParams) {
        self.insert("dec.W", p.weight.clone());
        self.insert("dec.b", DMatrix::from_column_slice(p.bias.len(), 1, p.bias.as_slice()));
    }
}

pub fn write_weights(w: &WeightFile, path: &Path) -> Result<()> {
    let table_len: usize = w.sections.iter().map(|(n, _)| 4 + n.len() + 16).sum();
    let mut offset = (16 + table_len) as u64;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(w.feature_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(w.sections.len() as u32).to_le_bytes());
    for (name, m) in &w.sections {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
        buf.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
        buf.extend_from_slice(&offset.to_le_bytes());
        offset += (m.len() * 4) as u64;
    }
    for (_, m) in &w.sections {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                buf.extend_from_slice(&(m[(r, c)] as f32).to_le_bytes());
            }
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_weights(path: &Path) -> Result<WeightFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    let mut cur = Cursor {
        path,
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(4, "magic")? != MAGIC {
        return Err(fail(0, "not an SPLF file".into()));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let feature_dim = cur.u32("feature dim")? as usize;
    let count = cur.u32("section count")? as usize;
    let mut out = WeightFile::new(feature_dim);
    let mut table = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let at = cur.pos;
        let len = cur.u32("section name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "section name")?)
            .map_err(|_| fail(at + 4, "section name is not UTF-8".into()))?
            .to_string();
        if !GRU_SECTIONS.contains(&name.as_str()) && !DECODER_SECTIONS.contains(&name.as_str()) {
            return Err(fail(at, format!("unknown section {name:?}")));
        }
        let rows = cur.u32("rows")? as usize;
        let cols = cur.u32("cols")? as usize;
        let offset = cur.u64("data offset")? as usize;
        table.push((at, name, rows, cols, offset));
    }
    for (at, name, rows, cols, offset) in table {
        let n = rows.checked_mul(cols).and_then(|n| n.checked_mul(4)).ok_or_else(|| fail(at, "section too large".into()))?;
        if offset.checked_add(n).is_none_or(|end| end > bytes.len()) {
            return Err(fail(at, format!("section {name} data runs past end of file")));
        }
        let data = &bytes[offset..offset + n];
        let m = DMatrix::from_fn(rows, cols, |r, c| {
            let o = 4 * (r * cols + c);
            f64::from(f32::from_le_bytes(data[o..o + 4].try_into().unwrap()))
        });
        if m.iter().any(|v| !v.is_finite()) {
            return Err(fail(offset, format!("section {name} has non-finite values")));
        }
        out.insert(&name, m);
    }
    Ok(out)
}
