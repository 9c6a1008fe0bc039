//! Measured scattered fields as CSV.
//!
//! ```text
//! nr=2,ni=2,frequency=4e8,ring_radius=3,aperture=360
//! 1.0,0.5,-2.0,0.0
//! 0.25,0.0,3.0,-1.5
//! ```
//!
//! The first line holds `key=value` pairs (`nr`, `ni`, `frequency` required;
//! `ring_radius`, `aperture` optional). Then one line per receiver with `ni`
//! complex entries written as `re,im` pairs. Blank lines and lines starting
//! with `#` are skipped.

use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::CMatrix;

/// Scattered field matrix plus the geometry it was recorded with.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredData {
    /// `Nr × Ni`.
    pub es: CMatrix,
    pub frequency: f64,
    pub ring_radius: Option<f64>,
    pub aperture: Option<f64>,
}

pub fn parse_measured_csv(text: &str, path: &Path) -> Result<MeasuredData> {
    let bad = |line: usize, message: String| Error::Format { path: path.to_path_buf(), message: format!("line {line}: {message}") };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
    let (mut nr, mut ni, mut frequency, mut ring_radius, mut aperture) = (None, None, None, None, None);
    for pair in header.split(',') {
        let (k, v) = pair.split_once('=').ok_or_else(|| bad(hline, format!("header entry `{pair}` is not key=value")))?;
        let v = v.trim();
        let num = || v.parse::<f64>().map_err(|_| bad(hline, format!("`{v}` is not a number")));
        let count = || v.parse::<usize>().map_err(|_| bad(hline, format!("`{v}` is not a count")));
        match k.trim() {
            "nr" => nr = Some(count()?),
            "ni" => ni = Some(count()?),
            "frequency" => frequency = Some(num()?),
            "ring_radius" => ring_radius = Some(num()?),
            "aperture" => aperture = Some(num()?),
            other => return Err(bad(hline, format!("unknown header key `{other}`"))),
        }
    }
    let missing = |k: &str| bad(hline, format!("header lacks `{k}`"));
    let nr = nr.ok_or_else(|| missing("nr"))?;
    let ni = ni.ok_or_else(|| missing("ni"))?;
    let frequency = frequency.ok_or_else(|| missing("frequency"))?;
    let mut es = CMatrix::zeros(nr, ni);
    let mut row = 0;
    for (lno, line) in lines {
        if row == nr {
            return Err(bad(lno, format!("more than {nr} receiver rows")));
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 2 * ni {
            return Err(bad(lno, format!("expected {} values ({ni} re,im pairs), found {}", 2 * ni, cells.len())));
        }
        for l in 0..ni {
            let parse = |s: &str| s.parse::<f64>().map_err(|_| bad(lno, format!("`{s}` is not a number")));
            es[(row, l)] = Complex64::new(parse(cells[2 * l])?, parse(cells[2 * l + 1])?);
        }
        row += 1;
    }
    if row != nr {
        return Err(Error::Format { path: path.to_path_buf(), message: format!("expected {nr} receiver rows, found {row}") });
    }
    Ok(MeasuredData { es, frequency, ring_radius, aperture })
}

pub fn import_measured_csv(path: &Path) -> Result<MeasuredData> {
    parse_measured_csv(&std::fs::read_to_string(path)?, path)
}

pub fn format_measured_csv(data: &MeasuredData) -> String {
    let (nr, ni) = data.es.shape();
    let mut out = format!("nr={nr},ni={ni},frequency={:e}", data.frequency);
    if let Some(r) = data.ring_radius {
        out.push_str(&format!(",ring_radius={r:e}"));
    }
    if let Some(a) = data.aperture {
        out.push_str(&format!(",aperture={a:e}"));
    }
    out.push('\n');
    for q in 0..nr {
        let cells: Vec<String> = (0..ni).map(|l| format!("{:.16e},{:.16e}", data.es[(q, l)].re, data.es[(q, l)].im)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn export_measured_csv(path: &Path, data: &MeasuredData) -> Result<()> {
    crate::io::write_atomic(path, format_measured_csv(data).as_bytes())
}
