//! Dataset CSV reading/writing and round-trip-exact JSON output.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::model::{ClusterIndex, Dataset, SpatialIndex};

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Pretty JSON formatter writing every float with 17 significant digits.
struct ExactFloats<'a>(PrettyFormatter<'a>);

impl Formatter for ExactFloats<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> std::io::Result<()> {
        if v.is_finite() {
            write!(w, "{v:.16e}")
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> std::io::Result<()> {
        self.write_f64(w, v as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serialize `value` as pretty JSON with exact floats.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Column {
    X(usize),
    Y,
    Entity,
    Day,
    Coord1,
    Coord2,
    Region,
}

fn parse_header(name: &str, col: usize) -> Result<Column> {
    let c = match name {
        "y" => Column::Y,
        "entity" => Column::Entity,
        "day" => Column::Day,
        "coord1" => Column::Coord1,
        "coord2" => Column::Coord2,
        "region" => Column::Region,
        _ => match name.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
            Some(j) if j >= 1 && !name[1..].starts_with('0') => Column::X(j - 1),
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    column: col,
                    message: format!("unknown column '{name}'"),
                })
            }
        },
    };
    Ok(c)
}

/// Read a dataset from CSV with header `x1..xp, y` and optional
/// `entity, day` or `coord1, coord2, region` columns. Ids are 1-based in the
/// file and 0-based in memory. Columns may appear in any order; unknown or
/// duplicate columns are rejected.
pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let csv_err = |e: csv::Error| {
        let (line, message) = match e.position() {
            Some(p) => (p.line(), e.to_string()),
            None => (0, e.to_string()),
        };
        Error::Parse {
            line,
            column: 0,
            message,
        }
    };
    let header = rdr.headers().map_err(csv_err)?.clone();
    let mut cols = Vec::with_capacity(header.len());
    for (j, name) in header.iter().enumerate() {
        let c = parse_header(name.trim(), j + 1)?;
        if cols.contains(&c) {
            return Err(Error::Parse {
                line: 1,
                column: j + 1,
                message: format!("duplicate column '{name}'"),
            });
        }
        cols.push(c);
    }
    let p = cols.iter().filter(|c| matches!(c, Column::X(_))).count();
    let missing = |what: &str| Error::Parse {
        line: 1,
        column: 0,
        message: format!("missing column {what}"),
    };
    for j in 0..p {
        if !cols.contains(&Column::X(j)) {
            return Err(missing(&format!("x{}", j + 1)));
        }
    }
    if p == 0 {
        return Err(missing("x1"));
    }
    if !cols.contains(&Column::Y) {
        return Err(missing("y"));
    }
    let has = |c: Column| cols.contains(&c);
    let clustered = has(Column::Entity) || has(Column::Day);
    let spatial = has(Column::Coord1) || has(Column::Coord2) || has(Column::Region);
    if clustered && !(has(Column::Entity) && has(Column::Day)) {
        return Err(missing("entity/day (both are required)"));
    }
    if spatial && !(has(Column::Coord1) && has(Column::Coord2) && has(Column::Region)) {
        return Err(missing("coord1/coord2/region (all are required)"));
    }
    if clustered && spatial {
        return Err(Error::Parse {
            line: 1,
            column: 0,
            message: "a dataset carries either a cluster or a spatial index, not both".into(),
        });
    }

    let mut x = Vec::new();
    let mut y = Vec::new();
    let (mut entity, mut day, mut region) = (Vec::new(), Vec::new(), Vec::new());
    let mut coords = Vec::new();
    let mut row = vec![0.0; p];
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let mut coord = [0.0; 2];
        for (j, field) in rec.iter().enumerate() {
            let field = field.trim();
            let bad = |what: &str| Error::Parse {
                line,
                column: j + 1,
                message: format!("'{field}' is not {what}"),
            };
            let real = || -> Result<f64> {
                let v: f64 = field.parse().map_err(|_| bad("a number"))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(bad("a finite number"))
                }
            };
            let id = || -> Result<usize> {
                match field.parse::<usize>() {
                    Ok(v) if v >= 1 => Ok(v - 1),
                    _ => Err(bad("a positive integer id")),
                }
            };
            match cols[j] {
                Column::X(k) => row[k] = real()?,
                Column::Y => y.push(real()?),
                Column::Entity => entity.push(id()?),
                Column::Day => day.push(id()?),
                Column::Region => region.push(id()?),
                Column::Coord1 => coord[0] = real()?,
                Column::Coord2 => coord[1] = real()?,
            }
        }
        x.extend_from_slice(&row);
        coords.push(coord);
    }
    let n = y.len();
    if n == 0 {
        return Err(Error::Parse {
            line: 2,
            column: 0,
            message: "no data rows".into(),
        });
    }
    let data = Dataset::new(DMatrix::from_row_slice(n, p, &x), DVector::from_vec(y))?;
    if clustered {
        let q1 = entity.iter().max().map_or(0, |m| m + 1);
        let q2 = day.iter().max().map_or(0, |m| m + 1);
        return data.with_clusters(ClusterIndex::new(entity, day, q1, q2)?);
    }
    if spatial {
        let q = region.iter().max().map_or(0, |m| m + 1);
        return data.with_spatial(SpatialIndex::new(coords, region, q)?);
    }
    Ok(data)
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path)?)
}

/// Write a dataset in the format accepted by [`read_dataset`].
pub fn write_dataset<W: Write>(data: &Dataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header: Vec<String> = (1..=data.p()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    if data.clusters().is_some() {
        header.extend(["entity".into(), "day".into()]);
    }
    if data.spatial().is_some() {
        header.extend(["coord1".into(), "coord2".into(), "region".into()]);
    }
    out.write_record(&header).map_err(io)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = (0..data.p()).map(|j| fmt_f64(data.x()[(i, j)])).collect();
        rec.push(fmt_f64(data.y()[i]));
        if let Some(c) = data.clusters() {
            rec.push((c.entity()[i] + 1).to_string());
            rec.push((c.day()[i] + 1).to_string());
        }
        if let Some(s) = data.spatial() {
            rec.push(fmt_f64(s.coords()[i][0]));
            rec.push(fmt_f64(s.coords()[i][1]));
            rec.push((s.region()[i] + 1).to_string());
        }
        out.write_record(&rec).map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_json() {
        let v = vec![0.1, 1.0 / 3.0, -2.5e-300, 12345.678901234567];
        let s = to_json(&v).unwrap();
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(v, back);
        assert!(s.contains("1.0000000000000001e-1"));
    }

    #[test]
    fn clustered_round_trip() {
        let text = "x1,x2,y,entity,day\n1,0.5,1,1,1\n1,-0.5,0,2,1\n1,0.25,1,1,2\n1,2,0,2,2\n";
        let d = read_dataset(text.as_bytes()).unwrap();
        assert_eq!(d.n(), 4);
        assert_eq!(d.clusters().unwrap().entity(), &[0, 1, 0, 1]);
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let e = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(d.x(), e.x());
        assert_eq!(d.y(), e.y());
    }

    #[test]
    fn diagnostics_point_at_the_cell() {
        let err = read_dataset("x1,y,colour\n1,2,3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, column: 3, .. }), "{err}");
        let err = read_dataset("x1,y\n1,2\n1,abc\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, column: 2, .. }), "{err}");
        let err = read_dataset("x1,y,entity\n1,2,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let err = read_dataset("x2,y\n1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }
}
