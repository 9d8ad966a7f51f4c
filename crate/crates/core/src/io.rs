//! Plain-text state files and OBJ mesh export.
//!
//! A state file is
//!
//! ```text
//! hsphere-state 1
//! vertices <n> dim <K> subdivisions <s|none>
//! x y z u_0 … u_{K−1}        (one line per vertex, 17 significant digits)
//! ```
//!
//! The domain coordinates are stored so that loading against a different
//! mesh is detected.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::energy::MapState;
use crate::error::{Error, Result};
use crate::mesh::DomainMesh;

const MAGIC: &str = "hsphere-state 1";

pub fn write_state<W: Write>(mut w: W, mesh: &DomainMesh, u: &MapState) -> Result<()> {
    mesh.check_state(u)?;
    let k = u.dim();
    writeln!(w, "{MAGIC}")?;
    let sub = mesh.subdivisions().map_or("none".to_string(), |s| s.to_string());
    writeln!(w, "vertices {} dim {} subdivisions {}", mesh.num_vertices(), k, sub)?;
    for (x, y) in mesh.vertices().iter().zip(u.as_slice().chunks(k)) {
        let mut line = String::with_capacity(24 * (3 + k));
        for (i, v) in x.iter().chain(y.iter()).enumerate() {
            if i > 0 {
                line.push(' ');
            }
            line.push_str(&format!("{v:.16e}"));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_state<R: BufRead>(r: R, mesh: &DomainMesh) -> Result<MapState> {
    let mut lines = r.lines();
    let mut next = |what: &str| -> Result<String> {
        lines.next().transpose()?.ok_or_else(|| Error::FormatError(format!("missing {what}")))
    };
    let magic = next("header")?;
    if magic.trim() != MAGIC {
        return Err(Error::FormatError(format!("unknown header `{}`", magic.trim())));
    }
    let dims = next("dimension line")?;
    let f: Vec<&str> = dims.split_whitespace().collect();
    if f.len() != 6 || f[0] != "vertices" || f[2] != "dim" || f[4] != "subdivisions" {
        return Err(Error::FormatError(format!("bad dimension line `{dims}`")));
    }
    let nv: usize = f[1].parse().map_err(|_| Error::FormatError("bad vertex count".into()))?;
    let k: usize = f[3].parse().map_err(|_| Error::FormatError("bad dimension".into()))?;
    if k == 0 {
        return Err(Error::FormatError("zero dimension".into()));
    }
    let sub = match f[5] {
        "none" => None,
        s => Some(s.parse::<u32>().map_err(|_| Error::FormatError("bad subdivision level".into()))?),
    };
    if nv != mesh.num_vertices() || sub != mesh.subdivisions() {
        return Err(Error::MeshMismatch(format!(
            "file has {nv} vertices (subdivisions {}), mesh has {} (subdivisions {})",
            f[5],
            mesh.num_vertices(),
            mesh.subdivisions().map_or("none".to_string(), |s| s.to_string())
        )));
    }
    let mut data = Vec::with_capacity(nv * k);
    for (i, x) in mesh.vertices().iter().enumerate() {
        let line = next("vertex line")?;
        let vals = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::FormatError(format!("line {}: {e}", i + 3)))?;
        if vals.len() != 3 + k {
            return Err(Error::FormatError(format!("line {}: expected {} values", i + 3, 3 + k)));
        }
        if (0..3).any(|j| (vals[j] - x[j]).abs() > 1e-12) {
            return Err(Error::MeshMismatch(format!("vertex {i} differs from the mesh")));
        }
        data.extend_from_slice(&vals[3..]);
    }
    if let Some(extra) = next("end").ok().filter(|l| !l.trim().is_empty()) {
        return Err(Error::FormatError(format!("trailing content `{extra}`")));
    }
    MapState::new(k, data)
}

pub fn save_state(path: impl AsRef<Path>, mesh: &DomainMesh, u: &MapState) -> Result<()> {
    write_state(BufWriter::new(File::create(path)?), mesh, u)
}

pub fn load_state(path: impl AsRef<Path>, mesh: &DomainMesh) -> Result<MapState> {
    read_state(BufReader::new(File::open(path)?), mesh)
}

/// Wavefront OBJ of the domain mesh, or of the image of `u` when given
/// (first three coordinates).
pub fn write_obj<W: Write>(mut w: W, mesh: &DomainMesh, u: Option<&MapState>) -> Result<()> {
    match u {
        Some(u) => {
            mesh.check_state(u)?;
            for y in u.as_slice().chunks(u.dim()) {
                let c = |i: usize| y.get(i).copied().unwrap_or(0.0);
                writeln!(w, "v {:.16e} {:.16e} {:.16e}", c(0), c(1), c(2))?;
            }
        }
        None => {
            for x in mesh.vertices() {
                writeln!(w, "v {:.16e} {:.16e} {:.16e}", x[0], x[1], x[2])?;
            }
        }
    }
    for t in mesh.triangles() {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_obj(path: impl AsRef<Path>, mesh: &DomainMesh, u: Option<&MapState>) -> Result<()> {
    write_obj(BufWriter::new(File::create(path)?), mesh, u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(m: &DomainMesh) -> MapState {
        MapState::from_fn(m, 4, |x| vec![x[0].sin() / 3.0, 1e-300 * x[1], -x[2] * 7.123456789, std::f64::consts::PI])
    }

    #[test]
    fn round_trip_is_exact() {
        let m = DomainMesh::icosphere(2).unwrap();
        let u = state(&m);
        let mut buf = Vec::new();
        write_state(&mut buf, &m, &u).unwrap();
        let v = read_state(&buf[..], &m).unwrap();
        assert_eq!(u, v);
    }

    #[test]
    fn mismatch_and_format_errors() {
        let m = DomainMesh::icosphere(2).unwrap();
        let u = state(&m);
        let mut buf = Vec::new();
        write_state(&mut buf, &m, &u).unwrap();
        let other = DomainMesh::icosphere(3).unwrap();
        assert!(matches!(read_state(&buf[..], &other), Err(Error::MeshMismatch(_))));
        let text = String::from_utf8(buf).unwrap().replacen("hsphere-state 1", "hsphere-state 0", 1);
        assert!(matches!(read_state(text.as_bytes(), &m), Err(Error::FormatError(_))));
    }
}
