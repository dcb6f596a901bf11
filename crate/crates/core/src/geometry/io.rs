//! ASCII `.xyz` and `.normals` files.
//!
//! `.xyz`: one point per line, 3 (position) or 6 (position + normal)
//! whitespace-separated columns. `.normals`: 3 columns, row `i` is the normal
//! of point `i`. Blank lines and lines starting with `#` are skipped. Values
//! are written with Rust's shortest round-trip float formatting, so a write
//! followed by a read reproduces every coordinate bit-for-bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{GeometryError, PointCloud, Vec3};

fn rows<R: Read>(reader: R) -> impl Iterator<Item = Result<(usize, Vec<f64>), GeometryError>> {
    BufReader::new(reader)
        .lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let line_no = i + 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(GeometryError::Io(e))),
            };
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                return None;
            }
            let values: Result<Vec<f64>, _> = trimmed.split_whitespace().map(str::parse::<f64>).collect();
            Some(match values {
                Ok(v) if v.iter().all(|x| x.is_finite()) => Ok((line_no, v)),
                _ => Err(GeometryError::MalformedLine(line_no)),
            })
        })
}

pub fn parse_xyz<R: Read>(reader: R) -> Result<PointCloud, GeometryError> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut columns = None;
    for row in rows(reader) {
        let (line_no, v) = row?;
        if v.len() != 3 && v.len() != 6 {
            return Err(GeometryError::MalformedLine(line_no));
        }
        // mixing 3- and 6-column rows is not a valid file either
        if *columns.get_or_insert(v.len()) != v.len() {
            return Err(GeometryError::MalformedLine(line_no));
        }
        points.push(Vec3::new(v[0], v[1], v[2]));
        if v.len() == 6 {
            let n = Vec3::new(v[3], v[4], v[5]);
            if n.norm() == 0.0 {
                return Err(GeometryError::MalformedLine(line_no));
            }
            normals.push(n);
        }
    }
    if points.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    if normals.is_empty() {
        PointCloud::new(points)
    } else {
        PointCloud::with_normals(points, normals)
    }
}

pub fn load_xyz<P: AsRef<Path>>(path: P) -> Result<PointCloud, GeometryError> {
    parse_xyz(File::open(path)?)
}

pub fn write_xyz<W: Write>(writer: W, cloud: &PointCloud) -> Result<(), GeometryError> {
    let mut w = BufWriter::new(writer);
    match cloud.normals() {
        Some(ns) => {
            for (p, n) in cloud.points().iter().zip(ns) {
                writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z)?;
            }
        }
        None => {
            for p in cloud.points() {
                writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_xyz<P: AsRef<Path>>(path: P, cloud: &PointCloud) -> Result<(), GeometryError> {
    write_xyz(File::create(path)?, cloud)
}

pub fn read_normals<R: Read>(reader: R) -> Result<Vec<Vec3>, GeometryError> {
    let mut out = Vec::new();
    for row in rows(reader) {
        let (line_no, v) = row?;
        if v.len() != 3 {
            return Err(GeometryError::MalformedLine(line_no));
        }
        out.push(Vec3::new(v[0], v[1], v[2]));
    }
    Ok(out)
}

pub fn load_normals<P: AsRef<Path>>(path: P) -> Result<Vec<Vec3>, GeometryError> {
    read_normals(File::open(path)?)
}

pub fn write_normals<W: Write>(writer: W, normals: &[Vec3]) -> Result<(), GeometryError> {
    let mut w = BufWriter::new(writer);
    for n in normals {
        writeln!(w, "{} {} {}", n.x, n.y, n.z)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_normals<P: AsRef<Path>>(path: P, normals: &[Vec3]) -> Result<(), GeometryError> {
    write_normals(File::create(path)?, normals)
}
