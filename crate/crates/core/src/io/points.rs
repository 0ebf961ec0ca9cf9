use std::io::{BufRead, Write};

use super::IoError;

/// One laser return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRecord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: u16,
    pub return_number: u8,
    pub num_returns: u8,
}

impl PointRecord {
    pub fn is_last_return(&self) -> bool {
        self.return_number == self.num_returns
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<PointRecord>,
}

impl PointCloud {
    pub fn new(points: Vec<PointRecord>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn field<T: std::str::FromStr>(tok: &str, name: &str, line: usize) -> Result<T, IoError> {
    tok.parse::<T>()
        .map_err(|_| IoError::parse(line, format!("invalid {name} `{tok}`")))
}

/// Parses whitespace-separated `x y z intensity return_number num_returns`
/// lines. Blank lines and lines starting with `#` are skipped; line numbers in
/// errors are 1-based.
pub fn parse_point_cloud<R: BufRead>(reader: R) -> Result<PointCloud, IoError> {
    let mut points = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => IoError::parse(lineno, "not valid UTF-8"),
            _ => IoError::Io(e),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != 6 {
            return Err(IoError::parse(
                lineno,
                format!("expected 6 fields, found {}", toks.len()),
            ));
        }
        let x: f64 = field(toks[0], "x", lineno)?;
        let y: f64 = field(toks[1], "y", lineno)?;
        let z: f64 = field(toks[2], "z", lineno)?;
        let intensity: u16 = field(toks[3], "intensity", lineno)?;
        let return_number: u8 = field(toks[4], "return_number", lineno)?;
        let num_returns: u8 = field(toks[5], "num_returns", lineno)?;
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(IoError::Validation {
                line: lineno,
                message: "non-finite coordinate".into(),
            });
        }
        if return_number < 1 {
            return Err(IoError::Validation {
                line: lineno,
                message: "return_number must be >= 1".into(),
            });
        }
        if return_number > num_returns {
            return Err(IoError::Validation {
                line: lineno,
                message: format!("return_number {return_number} exceeds num_returns {num_returns}"),
            });
        }
        points.push(PointRecord {
            x,
            y,
            z,
            intensity,
            return_number,
            num_returns,
        });
    }
    Ok(PointCloud { points })
}

/// Writes a cloud in the format read by [`parse_point_cloud`]. Coordinates use
/// the shortest representation that parses back to the same `f64`.
pub fn write_point_cloud<W: Write>(cloud: &PointCloud, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# x y z intensity return_number num_returns")?;
    for p in &cloud.points {
        writeln!(
            w,
            "{} {} {} {} {} {}",
            p.x, p.y, p.z, p.intensity, p.return_number, p.num_returns
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<PointCloud, IoError> {
        parse_point_cloud(s.as_bytes())
    }

    #[test]
    fn single_line_maps_fields() {
        let cloud = parse("1.0 2.0 10.5 300 1 2").unwrap();
        assert_eq!(
            cloud.points,
            vec![PointRecord {
                x: 1.0,
                y: 2.0,
                z: 10.5,
                intensity: 300,
                return_number: 1,
                num_returns: 2
            }]
        );
    }

    #[test]
    fn empty_stream() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn comments_and_blank_lines_skipped() {
        let cloud = parse("# header\n\n1 2 3 4 1 1\n   \n# x\n5 6 7 8 2 3\n").unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.points[1].return_number, 2);
    }

    #[test]
    fn return_number_exceeding_count_is_rejected() {
        match parse("1 2 3 100 3 2") {
            Err(IoError::Validation { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        match parse("1 2 3 4 1 1\n1 2 three 4 1 1\n") {
            Err(IoError::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains('z'));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse("1 2 3"),
            Err(IoError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse("1 2 3 4 0 1"),
            Err(IoError::Validation { line: 1, .. })
        ));
        assert!(matches!(
            parse("1 2 3 70000 1 1"),
            Err(IoError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse("1 2 NaN 7 1 1"),
            Err(IoError::Validation { line: 1, .. })
        ));
    }

    #[test]
    fn invalid_utf8_is_a_parse_error() {
        let bytes: &[u8] = &[b'1', b' ', 0xff, 0xfe, b'\n'];
        assert!(matches!(
            parse_point_cloud(bytes),
            Err(IoError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn write_then_parse_is_identity() {
        let cloud = PointCloud::new(vec![
            PointRecord {
                x: 0.1,
                y: -3.25e-7,
                z: 1234.5678901234,
                intensity: 65535,
                return_number: 2,
                num_returns: 3,
            },
            PointRecord {
                x: 1e300,
                y: 0.0,
                z: -0.0,
                intensity: 0,
                return_number: 1,
                num_returns: 1,
            },
        ]);
        let mut buf = Vec::new();
        write_point_cloud(&cloud, &mut buf).unwrap();
        assert_eq!(parse_point_cloud(buf.as_slice()).unwrap(), cloud);
    }
}
