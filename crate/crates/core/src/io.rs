//! File formats.
//!
//! Binary files are little-endian. A field file (`FODF`) is
//!
//! ```text
//! magic "FODF" | version u32 = 1 | nx ny nz u32 | spacing f64 | sphere level u8 | values f64…
//! ```
//!
//! with values ordered x-fastest, then y, z, and orientation slowest. A kernel
//! table file (`FODK`) stores `radius u32` in place of the dimensions and adds
//! the source orientation as the slowest axis. Orientations are always the
//! icosphere of the stored level.
//!
//! Streamline files are text: one fiber per line as `x1 y1 z1 x2 y2 z2 …`;
//! blank lines and lines starting with `#` are ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::convolution::{FodField, KernelTable};
use crate::discretization::{GridSpec, SphereSampling};
use crate::fbc::Tractogram;
use crate::lie_se3::Vec3;
use crate::Error;

const FIELD_MAGIC: &[u8; 4] = b"FODF";
const KERNEL_MAGIC: &[u8; 4] = b"FODK";
const VERSION: u32 = 1;

fn sphere_level(sphere: &SphereSampling) -> Result<u8, Error> {
    sphere
        .icosphere_level()
        .ok_or_else(|| Error::Format("only icosphere samplings can be stored".into()))
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N], Error> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf)
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("file is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, Error> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_f64(r: &mut impl Read) -> Result<f64, Error> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

fn read_header(r: &mut impl Read, magic: &[u8; 4]) -> Result<(), Error> {
    let found = read_array::<4>(r)?;
    if &found != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&found),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    Ok(())
}

fn read_sphere(r: &mut impl Read) -> Result<Arc<SphereSampling>, Error> {
    let [level] = read_array::<1>(r)?;
    SphereSampling::icosphere(level as u32)
        .map(Arc::new)
        .map_err(|e| Error::Format(e.to_string()))
}

fn read_payload(r: &mut impl Read, count: usize) -> Result<Vec<f64>, Error> {
    let bytes = count
        .checked_mul(8)
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    let mut buf = Vec::new();
    r.take(bytes as u64 + 1).read_to_end(&mut buf)?;
    if buf.len() != bytes {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {bytes}",
            buf.len()
        )));
    }
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn write_payload(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_field(w: &mut impl Write, field: &FodField) -> Result<(), Error> {
    let level = sphere_level(field.sphere())?;
    let grid = field.grid();
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for d in grid.dims() {
        let d = u32::try_from(d).map_err(|_| Error::Format("grid dimension exceeds u32".into()))?;
        w.write_all(&d.to_le_bytes())?;
    }
    w.write_all(&grid.spacing().to_le_bytes())?;
    w.write_all(&[level])?;
    write_payload(w, field.values())?;
    Ok(())
}

pub fn read_field(r: &mut impl Read) -> Result<FodField, Error> {
    read_header(r, FIELD_MAGIC)?;
    let dims = [read_u32(r)?, read_u32(r)?, read_u32(r)?].map(|d| d as usize);
    let spacing = read_f64(r)?;
    let grid = GridSpec::new(dims, spacing).map_err(|e| Error::Format(e.to_string()))?;
    let sphere = read_sphere(r)?;
    let values = read_payload(r, grid.len() * sphere.len())?;
    FodField::new(grid, sphere, values).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_kernel(w: &mut impl Write, table: &KernelTable) -> Result<(), Error> {
    let level = sphere_level(table.sphere())?;
    let radius =
        u32::try_from(table.radius()).map_err(|_| Error::Format("radius exceeds u32".into()))?;
    w.write_all(KERNEL_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&radius.to_le_bytes())?;
    w.write_all(&table.spacing().to_le_bytes())?;
    w.write_all(&[level])?;
    write_payload(w, table.values())?;
    Ok(())
}

/// Reads a table; its recorded column mass is that of the stored values.
pub fn read_kernel(r: &mut impl Read) -> Result<KernelTable, Error> {
    read_header(r, KERNEL_MAGIC)?;
    let radius = read_u32(r)? as usize;
    let spacing = read_f64(r)?;
    let sphere = read_sphere(r)?;
    let n = sphere.len();
    let count = (2 * radius + 1).pow(3) * n * n;
    let values = read_payload(r, count)?;
    KernelTable::from_values(radius, spacing, sphere, values).map_err(|e| Error::Format(e.to_string()))
}

/// Parses a streamline file. Errors carry the 1-based line number.
pub fn read_tractogram(r: impl BufRead) -> Result<Tractogram, Error> {
    let mut lists = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let numbers = text
            .split_whitespace()
            .map(|tok| match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    line: line_no,
                    message: format!("invalid number {tok:?}"),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if numbers.len() % 3 != 0 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("{} numbers is not a multiple of 3", numbers.len()),
            });
        }
        lists.push(
            numbers
                .chunks_exact(3)
                .map(|c| Vec3::new(c[0], c[1], c[2]))
                .collect::<Vec<_>>(),
        );
        lines.push(line_no);
    }
    Tractogram::from_point_lists(lists).map_err(|e| match e {
        Error::DegenerateFiber { fiber } => Error::Parse {
            line: lines[fiber],
            message: "fiber has fewer than two distinct points".into(),
        },
        other => other,
    })
}

/// Writes one fiber per line with shortest round-trip formatting.
pub fn write_tractogram(w: &mut impl Write, tr: &Tractogram) -> std::io::Result<()> {
    for fiber in tr.fibers() {
        let mut first = true;
        for p in fiber.points() {
            for c in p.iter() {
                if !first {
                    w.write_all(b" ")?;
                }
                write!(w, "{c:?}")?;
                first = false;
            }
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_field(path: &Path) -> Result<FodField, Error> {
    read_field(&mut BufReader::new(File::open(path)?))
}

pub fn save_field(path: &Path, field: &FodField) -> Result<(), Error> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(&mut w, field)?;
    w.flush()?;
    Ok(())
}

pub fn load_kernel(path: &Path) -> Result<KernelTable, Error> {
    read_kernel(&mut BufReader::new(File::open(path)?))
}

pub fn save_kernel(path: &Path, table: &KernelTable) -> Result<(), Error> {
    let mut w = BufWriter::new(File::create(path)?);
    write_kernel(&mut w, table)?;
    w.flush()?;
    Ok(())
}

pub fn load_tractogram(path: &Path) -> Result<Tractogram, Error> {
    read_tractogram(BufReader::new(File::open(path)?))
}

pub fn save_tractogram(path: &Path, tr: &Tractogram) -> Result<(), Error> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tractogram(&mut w, tr)?;
    w.flush()?;
    Ok(())
}
