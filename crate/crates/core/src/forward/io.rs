//! Binary dump and restore of simulation clouds.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic    [u8; 8]  b"MLBSDECL"
//! version  u32      1
//! k        u32      fine level
//! M        u64      path count
//! d        u32
//! q        u32
//! mode     u8       0 exact, 1 euler-subsample, 2 euler-coupled
//! coarse   u8       1 if coarse arrays follow
//! seed     u64
//! fine grid points       (2^k + 1) f64
//! coarse grid points     (2^(k-1) + 1) f64, if coarse
//! fine states            [i][m][c] f64
//! fine increments        [i][m][c] f64
//! coarse states          [j][m][c] f64, if coarse
//! coarse increments      [j][m][c] f64, if coarse
//! ```

use std::io::{Read, Write};

use super::cloud::{LevelLayout, SimulationCloud};
use super::CouplingMode;
use crate::error::{Error, Result};
use crate::timegrid::TimeGrid;

const MAGIC: &[u8; 8] = b"MLBSDECL";
const VERSION: u32 = 1;

fn mode_code(mode: CouplingMode) -> u8 {
    match mode {
        CouplingMode::Exact => 0,
        CouplingMode::EulerSubsample => 1,
        CouplingMode::EulerCoupled => 2,
    }
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub fn dump_cloud<W: Write>(cloud: &SimulationCloud, mut w: W) -> Result<()> {
    let layout = &cloud.layout;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(layout.fine.level() as u32).to_le_bytes())?;
    w.write_all(&(cloud.paths as u64).to_le_bytes())?;
    w.write_all(&(layout.d as u32).to_le_bytes())?;
    w.write_all(&(layout.q as u32).to_le_bytes())?;
    w.write_all(&[mode_code(cloud.mode), layout.coarse.is_some() as u8])?;
    w.write_all(&cloud.seed.to_le_bytes())?;
    write_f64s(&mut w, layout.fine.points())?;
    if let Some(c) = &layout.coarse {
        write_f64s(&mut w, c.points())?;
    }
    write_f64s(&mut w, &cloud.fine)?;
    write_f64s(&mut w, &cloud.dw)?;
    if layout.coarse.is_some() {
        write_f64s(&mut w, &cloud.coarse)?;
        write_f64s(&mut w, &cloud.coarse_dw)?;
    }
    w.flush()?;
    Ok(())
}

pub fn restore_cloud<R: Read>(mut r: R) -> Result<SimulationCloud> {
    let bad = |msg: &str| Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string()));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a cloud dump"));
    }
    if read_u32(&mut r)? != VERSION {
        return Err(bad("unsupported cloud dump version"));
    }
    let k = read_u32(&mut r)? as usize;
    let paths = read_u64(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let q = read_u32(&mut r)? as usize;
    let mode = match read_u8(&mut r)? {
        0 => CouplingMode::Exact,
        1 => CouplingMode::EulerSubsample,
        2 => CouplingMode::EulerCoupled,
        _ => return Err(bad("unknown coupling mode")),
    };
    let has_coarse = match read_u8(&mut r)? {
        0 => false,
        1 => true,
        _ => return Err(bad("bad coarse flag")),
    };
    if k > 30 || paths == 0 || d == 0 || q == 0 || (has_coarse && k == 0) {
        return Err(bad("implausible header"));
    }
    let seed = read_u64(&mut r)?;
    let n = 1usize << k;
    let fine = TimeGrid::from_points(k, read_f64s(&mut r, n + 1)?)?;
    let coarse = if has_coarse { Some(TimeGrid::from_points(k - 1, read_f64s(&mut r, n / 2 + 1)?)?) } else { None };
    let layout = LevelLayout::new(d, q, fine, coarse)?;
    let fine_states = read_f64s(&mut r, (n + 1) * paths * d)?;
    let dw = read_f64s(&mut r, n * paths * q)?;
    let (coarse_states, coarse_dw) = if has_coarse {
        (read_f64s(&mut r, (n / 2 + 1) * paths * d)?, read_f64s(&mut r, n / 2 * paths * q)?)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(SimulationCloud { layout, paths, seed, mode, fine: fine_states, dw, coarse: coarse_states, coarse_dw })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::forward::{simulate_cloud, ForwardModel};
    use crate::timegrid::GridFamily;

    #[test]
    fn roundtrip() {
        let model = Arc::new(ForwardModel::brownian(vec![0.0, 1.0]).unwrap());
        let fam = GridFamily::graded(1.0, 0.5).unwrap();
        let cloud = simulate_cloud(&model, &fam.grid(2), Some(&fam.grid(1)), 7, 3, None).unwrap();
        let mut buf = Vec::new();
        dump_cloud(&cloud, &mut buf).unwrap();
        let back = restore_cloud(&buf[..]).unwrap();
        assert_eq!(back.fine, cloud.fine);
        assert_eq!(back.dw, cloud.dw);
        assert_eq!(back.coarse, cloud.coarse);
        assert_eq!(back.coarse_dw, cloud.coarse_dw);
        assert_eq!(back.layout.alpha, cloud.layout.alpha);
        assert_eq!(back.seed, 3);
        buf[0] = b'X';
        assert!(restore_cloud(&buf[..]).is_err());
    }
}
