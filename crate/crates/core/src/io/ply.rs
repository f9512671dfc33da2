//! Binary little-endian PLY in the common Gaussian-splatting layout.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::decode::GaussianPrimitiveSet;
use crate::{Error, Result};

const REST_DEGREE_1: usize = 9;

fn property_names(sh_degree: u8) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"].map(String::from).to_vec();
    if sh_degree == 1 {
        names.extend((0..REST_DEGREE_1).map(|i| format!("f_rest_{i}")));
    }
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

/// Row of raw property values for primitive `i`, in `property_names` order.
fn encode_row(p: &GaussianPrimitiveSet, i: usize, out: &mut Vec<f32>) {
    out.extend_from_slice(&p.means[i]);
    out.extend_from_slice(&[0.0; 3]);
    let sh = p.sh_of(i);
    out.extend_from_slice(&sh[..3]);
    if p.sh_degree == 1 {
        // Channel-major: all band-1 coefficients of red, then green, then blue.
        for c in 0..3 {
            for k in 1..4 {
                out.push(sh[3 * k + c]);
            }
        }
    }
    out.push(p.opacity_logits[i]);
    out.extend_from_slice(&p.log_scales[i]);
    out.extend_from_slice(&p.rotations[i]);
}

pub fn export_ply(prims: &GaussianPrimitiveSet, path: &Path) -> Result<()> {
    prims.validate()?;
    let names = property_names(prims.sh_degree);
    let mut buf = Vec::with_capacity(256 + prims.len() * names.len() * 4);
    buf.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
    buf.extend_from_slice(format!("element vertex {}\n", prims.len()).as_bytes());
    for n in &names {
        buf.extend_from_slice(format!("property float {n}\n").as_bytes());
    }
    buf.extend_from_slice(b"end_header\n");
    let mut row = Vec::with_capacity(names.len());
    for i in 0..prims.len() {
        row.clear();
        encode_row(prims, i, &mut row);
        for v in &row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn import_ply(path: &Path) -> Result<GaussianPrimitiveSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(path, &bytes)
}

fn format_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

pub(crate) fn parse_ply(path: &Path, bytes: &[u8]) -> Result<GaussianPrimitiveSet> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|e| start + e)
            .ok_or_else(|| format_err(path, start, "unterminated header"))?;
        *pos = end + 1;
        let line = std::str::from_utf8(&bytes[start..end]).map_err(|_| format_err(path, start, "header is not UTF-8"))?;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };

    let (off, magic) = next_line(&mut pos)?;
    if magic != "ply" {
        return Err(format_err(path, off, "missing `ply` magic"));
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut prop_offsets: Vec<usize> = Vec::new();
    loop {
        let (off, line) = next_line(&mut pos)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => return Err(format_err(path, off, format!("unsupported format {other:?}"))),
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(format_err(path, off, "duplicate vertex element"));
                }
                count = Some(n.parse().map_err(|_| format_err(path, off, format!("bad vertex count {n:?}")))?);
            }
            ["element", name, ..] => return Err(format_err(path, off, format!("unexpected element {name:?}"))),
            ["property", ty, name] => {
                if count.is_none() {
                    return Err(format_err(path, off, "property before element"));
                }
                if !matches!(*ty, "float" | "float32") {
                    return Err(format_err(path, off, format!("property {name} has type {ty}, expected float")));
                }
                if props.iter().any(|p| p == name) {
                    return Err(format_err(path, off, format!("duplicate property {name}")));
                }
                props.push(name.to_string());
                prop_offsets.push(off);
            }
            _ => return Err(format_err(path, off, format!("malformed header line {line:?}"))),
        }
    }
    let count = count.ok_or_else(|| format_err(path, pos, "no vertex element"))?;
    let header_end = pos;

    let rest = props.iter().filter(|p| p.starts_with("f_rest_")).count();
    let degree = match rest {
        0 => 0,
        REST_DEGREE_1 => 1,
        n => return Err(format_err(path, header_end, format!("{n} f_rest properties, expected 0 or 9"))),
    };
    let expected = property_names(degree);
    for (p, &off) in props.iter().zip(&prop_offsets) {
        if !expected.contains(p) {
            return Err(format_err(path, off, format!("unknown property {p:?}")));
        }
    }
    if let Some(missing) = expected.iter().find(|e| !props.contains(e)) {
        return Err(format_err(path, header_end, format!("missing property {missing:?}")));
    }
    let column: Vec<usize> = expected.iter().map(|e| props.iter().position(|p| p == e).unwrap()).collect();

    let stride = props.len() * 4;
    let body = &bytes[header_end..];
    let need = count
        .checked_mul(stride)
        .ok_or_else(|| format_err(path, header_end, "vertex count overflows"))?;
    if body.len() < need {
        return Err(format_err(path, bytes.len(), format!("truncated body: {} of {need} bytes", body.len())));
    }
    if body.len() > need {
        return Err(format_err(path, header_end + need, "trailing bytes after vertex data"));
    }

    let mut out = GaussianPrimitiveSet::new(degree)?;
    let mut row = vec![0f32; props.len()];
    for i in 0..count {
        for (j, v) in row.iter_mut().enumerate() {
            let o = i * stride + 4 * j;
            *v = f32::from_le_bytes(body[o..o + 4].try_into().unwrap());
        }
        let get = |name_idx: usize| row[column[name_idx]];
        out.means.push([get(0), get(1), get(2)]);
        let mut sh = vec![get(6), get(7), get(8)];
        let mut k = 9;
        if degree == 1 {
            let mut band = [0f32; 9];
            for c in 0..3 {
                for b in 0..3 {
                    band[3 * b + c] = get(k + 3 * c + b);
                }
            }
            sh.extend_from_slice(&band);
            k += REST_DEGREE_1;
        }
        out.sh.extend_from_slice(&sh);
        out.opacity_logits.push(get(k));
        out.log_scales.push([get(k + 1), get(k + 2), get(k + 3)]);
        out.rotations.push([get(k + 4), get(k + 5), get(k + 6), get(k + 7)]);
    }
    out.validate()
        .map_err(|e| format_err(path, header_end, format!("invalid primitive data: {e}")))?;
    Ok(out)
}
