//! Field snapshot files.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! b"EALFLD01"                  magic
//! u32 d, u32 N, f64 t, u32 count
//! count × (u32 len, len bytes) field names, UTF-8
//! count × N^d f64             field values, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Grid, State, VectorField};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EALFLD01";

/// Named fields on a grid at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub grid: Grid,
    pub t: f64,
    pub fields: Vec<(String, Vec<f64>)>,
}

impl Snapshot {
    /// `rho`, then `u_x` (and `u_y` in 2D).
    pub fn from_state(grid: &Grid, state: &State) -> Self {
        let mut fields = vec![("rho".to_string(), state.rho.clone())];
        for (a, name) in ["u_x", "u_y"].iter().enumerate().take(grid.dim()) {
            fields.push((name.to_string(), state.u.comp(a).to_vec()));
        }
        Self { grid: *grid, t: state.t, fields }
    }

    pub fn field(&self, name: &str) -> Option<&[f64]> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn to_state(&self) -> Result<State> {
        let rho = self.field("rho").ok_or_else(|| Error::Format("snapshot has no rho field".into()))?;
        let mut comps = Vec::new();
        for name in ["u_x", "u_y"].iter().take(self.grid.dim()) {
            let c = self.field(name).ok_or_else(|| Error::Format(format!("snapshot has no {name} field")))?;
            comps.push(c.to_vec());
        }
        State::new(&self.grid, self.t, rho.to_vec(), VectorField::from_components(comps)?)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.grid.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.grid.n() as u32).to_le_bytes())?;
        w.write_all(&self.t.to_le_bytes())?;
        w.write_all(&(self.fields.len() as u32).to_le_bytes())?;
        for (name, _) in &self.fields {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
        }
        for (_, values) in &self.fields {
            self.grid.check_len(values.len())?;
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad snapshot magic".into()));
        }
        let dim = read_u32(r)? as usize;
        let n = read_u32(r)? as usize;
        let grid = Grid::new(dim, n).map_err(|e| Error::Format(e.to_string()))?;
        let t = read_f64(r)?;
        let count = read_u32(r)? as usize;
        if count > 64 {
            return Err(Error::Format(format!("implausible field count {count}")));
        }
        let mut names = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            if len > 256 {
                return Err(Error::Format(format!("implausible name length {len}")));
            }
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            names.push(String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))?);
        }
        let mut fields = Vec::with_capacity(count);
        for name in names {
            let mut values = Vec::with_capacity(grid.len());
            for _ in 0..grid.len() {
                values.push(read_f64(r)?);
            }
            fields.push((name, values));
        }
        Ok(Self { grid, t, fields })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// CSV with an `x` column followed by one column per field; 1D only.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        if self.grid.dim() != 1 {
            return Err(Error::Format("CSV export is only defined for d = 1".into()));
        }
        write!(w, "x")?;
        for (name, _) in &self.fields {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for i in 0..self.grid.len() {
            write!(w, "{:.17e}", self.grid.node(i)[0])?;
            for (_, v) in &self.fields {
                write!(w, ",{:.17e}", v[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_roundtrip_2d() {
        let g = Grid::new(2, 4).unwrap();
        let rho = g.sample(|x| 1.0 + 0.1 * x[0].sin());
        let u = VectorField::from_components(vec![g.sample(|x| x[1]), g.sample(|x| -x[0])]).unwrap();
        let state = State::new(&g, 0.25, rho, u).unwrap();
        let snap = Snapshot::from_state(&g, &state);
        let mut buf = Vec::new();
        snap.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = Snapshot::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, snap);
        assert_eq!(back.to_state().unwrap(), state);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(Snapshot::read_from(&mut &b"NOTMAGIC\0\0\0\0"[..]).is_err());
        let g = Grid::new(1, 4).unwrap();
        let snap = Snapshot { grid: g, t: 0.0, fields: vec![("rho".into(), vec![1.0; 4])] };
        let mut buf = Vec::new();
        snap.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(Snapshot::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let g = Grid::new(1, 4).unwrap();
        let snap = Snapshot { grid: g, t: 0.0, fields: vec![("rho".into(), vec![1.0; 4]), ("u_x".into(), vec![0.5; 4])] };
        let mut out = Vec::new();
        snap.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,rho,u_x");
        assert_eq!(lines.len(), 5);
    }
}
