use std::io::{BufRead, Write};

use super::IoError;

/// Single-band georeferenced grid. `origin_x`/`origin_y` locate the
/// lower-left corner; `values` are row-major with the top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster2D {
    pub width: usize,
    pub height: usize,
    pub cell_size: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub nodata: f64,
    pub values: Vec<f64>,
}

impl Raster2D {
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        if row >= self.height || col >= self.width {
            return None;
        }
        Some(self.values[row * self.width + col])
    }

    pub fn is_nodata(&self, row: usize, col: usize) -> bool {
        self.get(row, col).is_some_and(|v| v == self.nodata)
    }

    /// Mean over all non-nodata cells.
    pub fn valid_mean(&self) -> Option<f64> {
        let (sum, n) = self
            .values
            .iter()
            .filter(|&&v| v != self.nodata)
            .fold((0.0, 0usize), |(s, n), &v| (s + v, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

#[derive(Default)]
struct Header {
    ncols: Option<usize>,
    nrows: Option<usize>,
    xll: Option<(f64, bool)>,
    yll: Option<(f64, bool)>,
    cellsize: Option<f64>,
    nodata: Option<f64>,
}

const DEFAULT_NODATA: f64 = -9999.0;

/// Reads an ESRI ASCII Grid. Header keys are case-insensitive; both the
/// `xllcorner` and `xllcenter` conventions are accepted. `NODATA_value` is
/// optional and defaults to -9999.
pub fn import_ascii_grid<R: BufRead>(reader: R) -> Result<Raster2D, IoError> {
    let mut header = Header::default();
    let mut lines = reader.lines().enumerate();
    let mut pending: Option<(usize, String)> = None;

    for (idx, line) in lines.by_ref() {
        let lineno = idx + 1;
        let line = line.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => IoError::parse(lineno, "not valid UTF-8"),
            _ => IoError::Io(e),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut toks = trimmed.split_whitespace();
        let key = toks.next().unwrap_or_default();
        if !key.starts_with(|c: char| c.is_ascii_alphabetic()) || key.parse::<f64>().is_ok() {
            pending = Some((lineno, line));
            break;
        }
        let value = toks
            .next()
            .ok_or_else(|| IoError::parse(lineno, format!("header key `{key}` has no value")))?;
        if toks.next().is_some() {
            return Err(IoError::parse(
                lineno,
                format!("trailing tokens after `{key}`"),
            ));
        }
        let num = |v: &str| -> Result<f64, IoError> {
            v.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| IoError::parse(lineno, format!("invalid value `{v}` for `{key}`")))
        };
        let count = |v: &str| -> Result<usize, IoError> {
            v.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| IoError::parse(lineno, format!("invalid value `{v}` for `{key}`")))
        };
        match key.to_ascii_lowercase().as_str() {
            "ncols" => header.ncols = Some(count(value)?),
            "nrows" => header.nrows = Some(count(value)?),
            "xllcorner" => header.xll = Some((num(value)?, false)),
            "xllcenter" => header.xll = Some((num(value)?, true)),
            "yllcorner" => header.yll = Some((num(value)?, false)),
            "yllcenter" => header.yll = Some((num(value)?, true)),
            "cellsize" => {
                let c = num(value)?;
                if c <= 0.0 {
                    return Err(IoError::parse(lineno, "cellsize must be positive"));
                }
                header.cellsize = Some(c);
            }
            "nodata_value" => {
                header.nodata = Some(value.parse::<f64>().map_err(|_| {
                    IoError::parse(lineno, format!("invalid value `{value}` for `{key}`"))
                })?)
            }
            _ => {
                return Err(IoError::parse(
                    lineno,
                    format!("unknown header key `{key}`"),
                ))
            }
        }
    }

    let missing = |k: &str| IoError::Format(format!("missing header key `{k}`"));
    let width = header.ncols.ok_or_else(|| missing("ncols"))?;
    let height = header.nrows.ok_or_else(|| missing("nrows"))?;
    let (xll, x_center) = header.xll.ok_or_else(|| missing("xllcorner"))?;
    let (yll, y_center) = header.yll.ok_or_else(|| missing("yllcorner"))?;
    let cell_size = header.cellsize.ok_or_else(|| missing("cellsize"))?;
    let nodata = header.nodata.unwrap_or(DEFAULT_NODATA);
    if width.checked_mul(height).is_none() {
        return Err(IoError::Format("grid dimensions overflow".into()));
    }
    let origin_x = if x_center { xll - 0.5 * cell_size } else { xll };
    let origin_y = if y_center { yll - 0.5 * cell_size } else { yll };

    let mut values = Vec::new();
    let mut row = 0usize;
    let rest = lines.map(|(idx, l)| (idx + 1, l));
    let first = pending.map(|(n, l)| (n, Ok(l)));
    for (lineno, line) in first.into_iter().chain(rest) {
        let line = line.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => IoError::parse(lineno, "not valid UTF-8"),
            _ => IoError::Io(e),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if row == height {
            return Err(IoError::parse(
                lineno,
                format!("unexpected data after row {height}"),
            ));
        }
        let before = values.len();
        for tok in trimmed.split_whitespace() {
            if values.len() - before == width {
                return Err(IoError::parse(
                    lineno,
                    format!("row {} has more than {width} values", row + 1),
                ));
            }
            let v: f64 = tok.parse().map_err(|_| {
                IoError::parse(lineno, format!("row {}: invalid value `{tok}`", row + 1))
            })?;
            values.push(v);
        }
        let got = values.len() - before;
        if got != width {
            return Err(IoError::parse(
                lineno,
                format!("row {} has {got} values, expected {width}", row + 1),
            ));
        }
        row += 1;
    }
    if row != height {
        return Err(IoError::Format(format!(
            "expected {height} data rows, found {row}"
        )));
    }

    Ok(Raster2D {
        width,
        height,
        cell_size,
        origin_x,
        origin_y,
        nodata,
        values,
    })
}

pub fn export_ascii_grid<W: Write>(raster: &Raster2D, mut w: W) -> std::io::Result<()> {
    writeln!(w, "ncols {}", raster.width)?;
    writeln!(w, "nrows {}", raster.height)?;
    writeln!(w, "xllcorner {}", raster.origin_x)?;
    writeln!(w, "yllcorner {}", raster.origin_y)?;
    writeln!(w, "cellsize {}", raster.cell_size)?;
    writeln!(w, "NODATA_value {}", raster.nodata)?;
    for row in raster.values.chunks(raster.width.max(1)) {
        let mut first = true;
        for v in row {
            if !first {
                w.write_all(b" ")?;
            }
            write!(w, "{v}")?;
            first = false;
        }
        writeln!(w)?;
    }
    Ok(())
}
