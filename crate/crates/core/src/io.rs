//! Persistence formats.
//!
//! `ISPFLD01` field container, little-endian:
//!
//! ```text
//! offset 0   8 bytes  b"ISPFLD01"
//! offset 8   u32      rows
//! offset 12  u32      cols
//! offset 16  u8       dtype: 0 = real64, 1 = complex128 (re, im interleaved)
//! offset 17  payload  row-major
//! ```
//!
//! A bundle is a sequence of such records in one file plus a text manifest
//! `<file>.manifest` with one `name rows cols offset` line per record. Bundles
//! hold checkpoints and dataset archives and are written atomically.
//!
//! Images export as binary PGM (`P5`, 8-bit) with the linear range in a
//! `<file>.range` sidecar.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::CMatrix;

pub const MAGIC: [u8; 8] = *b"ISPFLD01";
const HEADER_LEN: usize = 17;

/// A real or complex matrix as stored in an `ISPFLD01` record.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Real { rows: usize, cols: usize, data: Vec<f64> },
    Complex { rows: usize, cols: usize, data: Vec<Complex64> },
}

impl Field {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Field::Real { rows, cols, .. } | Field::Complex { rows, cols, .. } => (*rows, *cols),
        }
    }

    pub fn from_cmatrix(m: &CMatrix) -> Self {
        let (rows, cols) = m.shape();
        let data = (0..rows).flat_map(|r| (0..cols).map(move |c| m[(r, c)])).collect();
        Field::Complex { rows, cols, data }
    }

    pub fn from_real(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let data = (0..rows).flat_map(|r| (0..cols).map(move |c| m[(r, c)])).collect();
        Field::Real { rows, cols, data }
    }

    /// Complex view; real records are promoted.
    pub fn to_cmatrix(&self) -> CMatrix {
        match self {
            Field::Complex { rows, cols, data } => CMatrix::from_row_slice(*rows, *cols, data),
            Field::Real { rows, cols, data } => {
                CMatrix::from_row_iterator(*rows, *cols, data.iter().map(|&v| Complex64::new(v, 0.0)))
            }
        }
    }

    /// Real view; fails on complex records.
    pub fn to_real(&self) -> Result<DMatrix<f64>> {
        match self {
            Field::Real { rows, cols, data } => Ok(DMatrix::from_row_slice(*rows, *cols, data)),
            Field::Complex { .. } => Err(Error::Dimension("expected a real field, found complex".into())),
        }
    }

    fn encoded_len(&self) -> usize {
        let (r, c) = self.shape();
        HEADER_LEN
            + r * c
                * match self {
                    Field::Real { .. } => 8,
                    Field::Complex { .. } => 16,
                }
    }
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::DimOverflow(vec![v as u64]))
}

/// Encodes one record.
pub fn write_field<W: Write>(mut w: W, field: &Field) -> Result<()> {
    let (rows, cols) = field.shape();
    let mut buf = Vec::with_capacity(field.encoded_len());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&dim_u32(rows)?.to_le_bytes());
    buf.extend_from_slice(&dim_u32(cols)?.to_le_bytes());
    match field {
        Field::Real { data, .. } => {
            buf.push(0);
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Field::Complex { data, .. } => {
            buf.push(1);
            for z in data {
                buf.extend_from_slice(&z.re.to_le_bytes());
                buf.extend_from_slice(&z.im.to_le_bytes());
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Decodes one record from the start of `bytes`, returning it and its length.
pub fn decode_field(bytes: &[u8]) -> Result<(Field, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    if bytes[..8] != MAGIC {
        return Err(Error::Format {
            path: PathBuf::new(),
            message: format!("not an ISPFLD01 record (magic {})", hex(&bytes[..8])),
        });
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let width = match bytes[16] {
        0 => 8,
        1 => 16,
        t => {
            return Err(Error::Format { path: PathBuf::new(), message: format!("unknown dtype tag {t}") });
        }
    };
    let count = (rows as u64).checked_mul(cols as u64).and_then(|n| n.checked_mul(width));
    let payload = count.ok_or(Error::DimOverflow(vec![rows as u64, cols as u64]))?;
    let need = HEADER_LEN as u64 + payload;
    if (bytes.len() as u64) < need {
        return Err(Error::Truncated { expected: need as usize, found: bytes.len() });
    }
    let body = &bytes[HEADER_LEN..need as usize];
    let f64_at = |i: usize| f64::from_le_bytes(body[8 * i..8 * i + 8].try_into().unwrap());
    let field = if width == 8 {
        Field::Real { rows, cols, data: (0..rows * cols).map(f64_at).collect() }
    } else {
        Field::Complex {
            rows,
            cols,
            data: (0..rows * cols).map(|i| Complex64::new(f64_at(2 * i), f64_at(2 * i + 1))).collect(),
        }
    };
    Ok((field, need as usize))
}

/// Reads exactly one record.
pub fn read_field<R: Read>(mut r: R) -> Result<Field> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    Ok(decode_field(&bytes)?.0)
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Format { message, .. } => Error::Format { path: path.to_path_buf(), message },
        e => e,
    })
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_field(path: &Path, field: &Field) -> Result<()> {
    let mut buf = Vec::new();
    write_field(&mut buf, field)?;
    write_atomic(path, &buf)
}

pub fn load_field(path: &Path) -> Result<Field> {
    with_path(path, decode_field(&fs::read(path)?).map(|(f, _)| f))
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

/// Writes named records to `path` and the manifest beside it.
pub fn write_bundle(path: &Path, entries: &[(String, Field)]) -> Result<()> {
    let mut data = Vec::new();
    let mut manifest = String::new();
    for (name, field) in entries {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Format { path: path.to_path_buf(), message: format!("bad record name `{name}`") });
        }
        let (r, c) = field.shape();
        manifest.push_str(&format!("{name} {r} {c} {}\n", data.len()));
        write_field(&mut data, field)?;
    }
    write_atomic(path, &data)?;
    write_atomic(&manifest_path(path), manifest.as_bytes())
}

/// Reads a bundle back in manifest order.
pub fn read_bundle(path: &Path) -> Result<Vec<(String, Field)>> {
    let data = fs::read(path)?;
    let manifest = fs::read_to_string(manifest_path(path))?;
    let bad = |message: String| Error::Format { path: path.to_path_buf(), message };
    let mut out = Vec::new();
    for (i, line) in manifest.lines().enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [name, rows, cols, offset] = parts[..] else {
            return Err(bad(format!("manifest line {} malformed", i + 1)));
        };
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("manifest line {}: `{s}` is not a count", i + 1)));
        let (rows, cols, offset) = (num(rows)?, num(cols)?, num(offset)?);
        if offset > data.len() {
            return Err(Error::Truncated { expected: offset, found: data.len() });
        }
        let (field, _) = with_path(path, decode_field(&data[offset..]))?;
        if field.shape() != (rows, cols) {
            return Err(bad(format!("record `{name}` is {:?}, manifest says {rows}x{cols}", field.shape())));
        }
        out.push((name.to_string(), field));
    }
    Ok(out)
}

pub fn range_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".range");
    PathBuf::from(p)
}

/// Writes a row-major image as 8-bit PGM, mapping `[min, max]` linearly to
/// `[0, 255]`, and records the range in the sidecar.
pub fn write_pgm(path: &Path, values: &[f64], rows: usize, cols: usize) -> Result<()> {
    if values.len() != rows * cols {
        return Err(Error::Dimension(format!("{} values for a {rows}x{cols} image", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("cannot export non-finite pixels".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut buf = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    buf.extend(values.iter().map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 }));
    write_atomic(path, &buf)?;
    write_atomic(&range_path(path), format!("min {lo:.17e}\nmax {hi:.17e}\n").as_bytes())
}

/// Reads a PGM written by [`write_pgm`] back to values using the sidecar.
pub fn read_pgm(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| Error::Format { path: path.to_path_buf(), message: m.into() };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("only 8-bit P5 images are supported"));
    }
    let cols: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let rows: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let pixels = bytes
        .get(pos..pos + rows * cols)
        .ok_or(Error::Truncated { expected: pos + rows * cols, found: bytes.len() })?;
    let range = fs::read_to_string(range_path(path))?;
    let get = |key: &str| -> Result<f64> {
        range
            .lines()
            .find_map(|l| l.strip_prefix(key).map(|v| v.trim().parse::<f64>()))
            .ok_or_else(|| bad("range sidecar incomplete"))?
            .map_err(|_| bad("range sidecar unreadable"))
    };
    let (lo, hi) = (get("min")?, get("max")?);
    Ok((pixels.iter().map(|&p| lo + (hi - lo) * p as f64 / 255.0).collect(), rows, cols))
}

/// Human-readable CSV of a complex matrix: one row per matrix row, each entry
/// as two columns `re,im` with 17 significant digits.
pub fn write_cmatrix_csv<W: Write>(mut w: W, m: &CMatrix) -> Result<()> {
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:.16e},{:.16e}", m[(r, c)].re, m[(r, c)].im)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
