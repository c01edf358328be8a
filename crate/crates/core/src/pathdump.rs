//! Binary path dump for offline inspection.
//!
//! Layout: a 32-byte header (magic `RBSD`, version, and the four array
//! dimensions as little-endian u32, padded with zeros), followed by row-major
//! little-endian f64 arrays: states `(N+1) x n`, knot mark indices `N+1`,
//! observed increments `N x d`, unobserved increments `N x m`.

use crate::error::{Error, Result};
use crate::forward::MarkedPath;
use std::io::{Read, Write};

pub const MAGIC: [u8; 4] = *b"RBSD";
pub const VERSION: u32 = 1;

pub fn write_path(path: &MarkedPath, out: &mut impl Write) -> Result<()> {
    let n_steps = path.tgrid.steps() as u32;
    let n = path.dim() as u32;
    let d = (path.w_inc.len() / path.tgrid.steps().max(1)) as u32;
    let m = (path.v_inc.len() / path.tgrid.steps().max(1)) as u32;
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&n_steps.to_le_bytes())?;
    out.write_all(&n.to_le_bytes())?;
    out.write_all(&d.to_le_bytes())?;
    out.write_all(&m.to_le_bytes())?;
    out.write_all(&[0u8; 8])?;
    let mut write_f64s = |vals: &mut dyn Iterator<Item = f64>| -> Result<()> {
        for v in vals {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    };
    write_f64s(&mut path.x.iter().copied())?;
    write_f64s(&mut path.i_idx.iter().map(|&i| i as f64))?;
    write_f64s(&mut path.w_inc.iter().copied())?;
    write_f64s(&mut path.v_inc.iter().copied())?;
    Ok(())
}

/// Arrays recovered from a dump.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpedPath {
    pub steps: usize,
    pub dim_x: usize,
    pub dim_w: usize,
    pub dim_v: usize,
    pub x: Vec<f64>,
    pub i_idx: Vec<f64>,
    pub w_inc: Vec<f64>,
    pub v_inc: Vec<f64>,
}

pub fn read_path(input: &mut impl Read) -> Result<DumpedPath> {
    let mut header = [0u8; 32];
    input.read_exact(&mut header)?;
    if header[..4] != MAGIC {
        return Err(Error::Validation("bad magic in path dump".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
    if u32_at(4) != VERSION {
        return Err(Error::Validation(format!("unsupported dump version {}", u32_at(4))));
    }
    let steps = u32_at(8) as usize;
    let dim_x = u32_at(12) as usize;
    let dim_w = u32_at(16) as usize;
    let dim_v = u32_at(20) as usize;
    let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; count * 8];
        input.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    Ok(DumpedPath {
        steps,
        dim_x,
        dim_w,
        dim_v,
        x: read_f64s((steps + 1) * dim_x)?,
        i_idx: read_f64s(steps + 1)?,
        w_inc: read_f64s(steps * dim_w)?,
        v_inc: read_f64s(steps * dim_v)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{simulate_randomized_path, Measure};
    use crate::model::make_uniform_grid;
    use crate::problems;

    #[test]
    fn round_trip() {
        let b = problems::by_name("uncontrolled2d", None).unwrap();
        let tgrid = make_uniform_grid(1.0, 6).unwrap();
        let p = simulate_randomized_path(&b.spec, &b.grid, &tgrid, Measure::Reference, 3, 0).unwrap();
        let mut buf = Vec::new();
        write_path(&p, &mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 8 * (7 * 2 + 7 + 6 + 6));
        let d = read_path(&mut buf.as_slice()).unwrap();
        assert_eq!(d.steps, 6);
        assert_eq!(d.x, p.x);
        assert_eq!(d.w_inc, p.w_inc);
        assert_eq!(d.i_idx.len(), 7);
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = vec![0u8; 64];
        assert!(read_path(&mut buf.as_slice()).is_err());
    }
}
