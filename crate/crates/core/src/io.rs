//! Field file formats: flat little-endian binary with a four-byte magic,
//! plus an 8-bit PGM export for eyeballing intensities.
//!
//! `F2D1` holds one scalar field (`n1`, `n2` as little-endian u32, then the
//! values row-major as little-endian f64). `F2D2` is the magic followed by
//! two complete `F2D1` records on the same grid, a vector field. `F2DT`
//! stores a time series: dimensions plus the step count, then `nt + 1`
//! scalar payloads without per-slice headers. Round trips are bit exact;
//! loaded scalar and vector grids default to a single time step because the
//! spatial formats do not carry one.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField, VectorField};
use crate::transport::TimeSeriesField;

const MAGIC_SCALAR: &[u8; 4] = b"F2D1";
const MAGIC_VECTOR: &[u8; 4] = b"F2D2";
const MAGIC_SERIES: &[u8; 4] = b"F2DT";

/// Largest accepted per-axis dimension; rejects garbage headers before any
/// large allocation happens.
const MAX_DIM: u32 = 1 << 15;

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("truncated file while reading {what}"))
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_magic(r: &mut impl Read, want: &[u8; 4]) -> Result<()> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, "magic")?;
    if &b != want {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&b),
            String::from_utf8_lossy(want)
        )));
    }
    Ok(())
}

fn read_dims(r: &mut impl Read) -> Result<(usize, usize)> {
    let n1 = read_u32(r, "dimensions")?;
    let n2 = read_u32(r, "dimensions")?;
    if n1 == 0 || n2 == 0 || n1 > MAX_DIM || n2 > MAX_DIM {
        return Err(Error::Format(format!("implausible dimensions {n1}x{n2}")));
    }
    Ok((n1 as usize, n2 as usize))
}

fn read_values(r: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    read_exact(r, &mut bytes, "field payload")?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")))
        .collect())
}

fn write_scalar_record(w: &mut impl Write, f: &ScalarField) -> Result<()> {
    let g = f.grid();
    w.write_all(MAGIC_SCALAR)?;
    w.write_all(&(g.n1 as u32).to_le_bytes())?;
    w.write_all(&(g.n2 as u32).to_le_bytes())?;
    for v in f.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_scalar_record(r: &mut impl Read) -> Result<ScalarField> {
    read_magic(r, MAGIC_SCALAR)?;
    let (n1, n2) = read_dims(r)?;
    let grid = GridSpec::new(n1, n2, 1)?;
    let values = read_values(r, n1 * n2)?;
    ScalarField::from_values(grid, values)
}

pub fn save_scalar(path: impl AsRef<Path>, f: &ScalarField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_scalar_record(&mut w, f)?;
    w.flush()?;
    Ok(())
}

pub fn load_scalar(path: impl AsRef<Path>) -> Result<ScalarField> {
    read_scalar_record(&mut BufReader::new(File::open(path)?))
}

pub fn save_vector(path: impl AsRef<Path>, v: &VectorField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC_VECTOR)?;
    write_scalar_record(&mut w, v.c1())?;
    write_scalar_record(&mut w, v.c2())?;
    w.flush()?;
    Ok(())
}

pub fn load_vector(path: impl AsRef<Path>) -> Result<VectorField> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, MAGIC_VECTOR)?;
    let c1 = read_scalar_record(&mut r)?;
    let c2 = read_scalar_record(&mut r)?;
    if !c1.grid().same_shape(&c2.grid()) {
        return Err(Error::Format(format!(
            "vector components disagree on dimensions: {}x{} vs {}x{}",
            c1.grid().n1,
            c1.grid().n2,
            c2.grid().n1,
            c2.grid().n2
        )));
    }
    VectorField::from_components(c1, c2)
}

pub fn save_series(path: impl AsRef<Path>, ts: &TimeSeriesField) -> Result<()> {
    let g = ts.grid();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC_SERIES)?;
    w.write_all(&(g.n1 as u32).to_le_bytes())?;
    w.write_all(&(g.n2 as u32).to_le_bytes())?;
    w.write_all(&(g.nt as u32).to_le_bytes())?;
    for slice in ts.slices() {
        for v in slice.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_series(path: impl AsRef<Path>) -> Result<TimeSeriesField> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, MAGIC_SERIES)?;
    let (n1, n2) = read_dims(&mut r)?;
    let nt = read_u32(&mut r, "step count")?;
    if nt == 0 || nt > MAX_DIM {
        return Err(Error::Format(format!("implausible step count {nt}")));
    }
    let grid = GridSpec::new(n1, n2, nt as usize)?;
    let mut slices = Vec::with_capacity(grid.nt + 1);
    for _ in 0..=grid.nt {
        let values = read_values(&mut r, grid.len())?;
        slices.push(ScalarField::from_values(grid, values)?);
    }
    TimeSeriesField::from_slices(grid, slices)
}

/// 8-bit binary PGM of the field with values clamped to `[0, 1]` and scaled
/// by 255. Deliberately no min/max stretching: renders of related fields
/// stay comparable to each other.
pub fn write_pgm(path: impl AsRef<Path>, f: &ScalarField) -> Result<()> {
    let g = f.grid();
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", g.n2, g.n1)?;
    let bytes: Vec<u8> = f
        .values()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}
