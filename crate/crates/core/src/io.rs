//! Snapshot CSV, metrics JSON and legacy VTK output.
//!
//! Every writer renders into a temporary file in the target directory and
//! renames it into place, so readers never see a partial file.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracles::{FdmGrid, FdmSolution};
use crate::particles::ParticleSet;

pub const SNAPSHOT_HEADER: [&str; 13] = [
    "id",
    "x",
    "y",
    "z",
    "volume",
    "temperature",
    "qx",
    "qy",
    "qz",
    "boundary",
    "nx",
    "ny",
    "nz",
];

/// One line of the metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub scenario: String,
    pub method: String,
    pub h: f64,
    pub ppc: u32,
    pub dt: f64,
    pub time: f64,
    pub rmse: Option<f64>,
    pub l2: Option<f64>,
    pub excluded_points: usize,
    pub runtime_seconds: f64,
}

fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// `{:.16e}` keeps 17 significant digits, enough to round-trip any `f64`.
fn num(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").unwrap();
}

fn snapshot_row(
    out: &mut String,
    id: u64,
    x: [f64; 3],
    vol: f64,
    t: f64,
    q: [f64; 3],
    b: bool,
    n: [f64; 3],
) {
    write!(out, "{id}").unwrap();
    for v in x.into_iter().chain([vol, t]).chain(q) {
        out.push(',');
        num(out, v);
    }
    out.push_str(if b { ",1" } else { ",0" });
    for v in n {
        out.push(',');
        num(out, v);
    }
    out.push('\n');
}

pub fn write_snapshot_csv(particles: &ParticleSet, path: &Path) -> Result<()> {
    let mut out = SNAPSHOT_HEADER.join(",");
    out.push('\n');
    for p in 0..particles.len() {
        snapshot_row(
            &mut out,
            particles.id[p],
            particles.position[p],
            particles.volume[p],
            particles.temperature[p],
            particles.flux[p],
            particles.boundary[p],
            particles.normal[p],
        );
    }
    atomic_write(path, out.as_bytes())
}

/// Writes a reference snapshot in the particle CSV layout. Radial grids put
/// the radius in `x`; `volume` is the node spacing (or its square in 2D).
pub fn write_fdm_csv(fdm: &FdmSolution, k: usize, path: &Path) -> Result<()> {
    let mut out = SNAPSHOT_HEADER.join(",");
    out.push('\n');
    let field = &fdm.fields[k];
    let mut emit = |i: usize, x: [f64; 3], vol: f64| {
        snapshot_row(
            &mut out, i as u64, x, vol, field[i], [0.0; 3], false, [0.0; 3],
        );
    };
    match &fdm.grid {
        FdmGrid::Radial { r } => {
            for (i, &ri) in r.iter().enumerate() {
                emit(i, [ri, 0.0, 0.0], fdm.spacing);
            }
        }
        FdmGrid::Planar { x, y } => {
            for (j, &yj) in y.iter().enumerate() {
                for (i, &xi) in x.iter().enumerate() {
                    emit(i + x.len() * j, [xi, yj, 0.0], fdm.spacing * fdm.spacing);
                }
            }
        }
    }
    atomic_write(path, out.as_bytes())
}

/// Reads a snapshot CSV.
///
/// `x`, `y`, `volume` and `temperature` are required. Missing `id` columns
/// number the rows from 0; other missing columns read as 0 (`boundary` as
/// false). The set is 3D when a `z` column holds any nonzero value.
pub fn load_points_from_csv(path: &Path) -> Result<ParticleSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let headers = reader
        .headers()
        .map_err(|e| parse(1, e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(parse(1, "empty file".into()));
    }
    let column: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    for required in ["x", "y", "volume", "temperature"] {
        if !column.contains_key(required) {
            return Err(parse(1, format!("missing column `{required}`")));
        }
    }

    struct Row {
        id: u64,
        x: [f64; 3],
        vol: f64,
        t: f64,
        q: [f64; 3],
        b: bool,
        n: [f64; 3],
    }
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k as u64 + 2;
        let record = record.map_err(|e| {
            let line = e.position().map_or(line, |p| p.line());
            parse(line, e.to_string())
        })?;
        let get = |name: &str| -> Result<Option<f64>> {
            match column.get(name) {
                None => Ok(None),
                Some(&i) => {
                    let s = record.get(i).unwrap_or("");
                    s.parse::<f64>()
                        .map(Some)
                        .map_err(|_| parse(line, format!("column `{name}`: cannot parse `{s}`")))
                }
            }
        };
        let req = |name: &str| get(name).map(|v| v.unwrap());
        let opt = |name: &str| get(name).map(|v| v.unwrap_or(0.0));
        let id = match column.get("id") {
            None => k as u64,
            Some(&i) => {
                let s = record.get(i).unwrap_or("");
                s.parse::<u64>()
                    .map_err(|_| parse(line, format!("column `id`: cannot parse `{s}`")))?
            }
        };
        let b = match column.get("boundary") {
            None => false,
            Some(&i) => match record.get(i).unwrap_or("") {
                "0" => false,
                "1" => true,
                s => {
                    return Err(parse(
                        line,
                        format!("column `boundary`: expected 0 or 1, got `{s}`"),
                    ))
                }
            },
        };
        let row = Row {
            id,
            x: [req("x")?, req("y")?, opt("z")?],
            vol: req("volume")?,
            t: req("temperature")?,
            q: [opt("qx")?, opt("qy")?, opt("qz")?],
            b,
            n: [opt("nx")?, opt("ny")?, opt("nz")?],
        };
        if !(row.vol > 0.0) {
            return Err(Error::Validation {
                path: path.to_path_buf(),
                line,
                message: format!("volume must be positive, got {}", row.vol),
            });
        }
        if row.x.iter().chain([&row.t]).any(|v| !v.is_finite()) {
            return Err(Error::Validation {
                path: path.to_path_buf(),
                line,
                message: "non-finite position or temperature".into(),
            });
        }
        rows.push(row);
    }

    let dim = if rows.iter().any(|r| r.x[2] != 0.0) {
        3
    } else {
        2
    };
    let mut set = ParticleSet::new(dim);
    for r in rows {
        set.push(r.x, r.vol);
        let p = set.len() - 1;
        set.id[p] = r.id;
        set.temperature[p] = r.t;
        set.flux[p] = r.q;
        set.boundary[p] = r.b;
        set.normal[p] = r.n;
    }
    Ok(set)
}

pub fn write_metrics_json(report: &MetricsRecord, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// Legacy ASCII VTK polydata with one vertex per particle.
pub fn write_vtk(particles: &ParticleSet, path: &Path) -> Result<()> {
    let n = particles.len();
    let mut out =
        String::from("# vtk DataFile Version 3.0\nparticle snapshot\nASCII\nDATASET POLYDATA\n");
    writeln!(out, "POINTS {n} double").unwrap();
    for x in &particles.position {
        writeln!(out, "{:.16e} {:.16e} {:.16e}", x[0], x[1], x[2]).unwrap();
    }
    writeln!(out, "VERTICES {n} {}", 2 * n).unwrap();
    for p in 0..n {
        writeln!(out, "1 {p}").unwrap();
    }
    writeln!(out, "POINT_DATA {n}").unwrap();
    out.push_str("SCALARS temperature double 1\nLOOKUP_TABLE default\n");
    for t in &particles.temperature {
        num(&mut out, *t);
        out.push('\n');
    }
    out.push_str("SCALARS boundary int 1\nLOOKUP_TABLE default\n");
    for &b in &particles.boundary {
        out.push_str(if b { "1\n" } else { "0\n" });
    }
    out.push_str("VECTORS flux double\n");
    for q in &particles.flux {
        writeln!(out, "{:.16e} {:.16e} {:.16e}", q[0], q[1], q[2]).unwrap();
    }
    atomic_write(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> ParticleSet {
        let mut s = ParticleSet::new(2);
        s.push([0.1, 0.2, 0.0], 0.0025);
        s.push([1.0 / 3.0, std::f64::consts::PI, 0.0], 1e-7);
        s.temperature = vec![0.1 + 0.2, -1.0 / 7.0];
        s.flux[1] = [1e-300, -2.5, 0.0];
        s.boundary[1] = true;
        s.normal[1] = [0.6, 0.8, 0.0];
        s
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = sample_set();
        write_snapshot_csv(&s, &path).unwrap();
        let back = load_points_from_csv(&path).unwrap();
        assert_eq!(back.dim(), 2);
        assert_eq!(back.id, s.id);
        assert_eq!(back.position, s.position);
        assert_eq!(back.volume, s.volume);
        assert_eq!(back.temperature, s.temperature);
        assert_eq!(back.flux, s.flux);
        assert_eq!(back.boundary, s.boundary);
        assert_eq!(back.normal, s.normal);
    }

    #[test]
    fn empty_set_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        write_snapshot_csv(&ParticleSet::new(2), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "id,x,y,z,volume,temperature,qx,qy,qz,boundary,nx,ny,nz\n"
        );
    }

    #[test]
    fn optional_columns_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "x,y,z,volume,temperature\n0.5,0.5,0.25,0.001,3\n").unwrap();
        let s = load_points_from_csv(&path).unwrap();
        assert_eq!(s.dim(), 3);
        assert_eq!(s.id, vec![0]);
        assert_eq!(s.flux[0], [0.0; 3]);
        assert!(!s.boundary[0]);
    }

    #[test]
    fn load_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x,y,volume,temperature\n0,0,1,0\n0,abc,1,0\n").unwrap();
        match load_points_from_csv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(
            &path,
            "x,y,volume,temperature\n0,0,1,0\n0,0,1,0\n0,0,-1,0\n",
        )
        .unwrap();
        match load_points_from_csv(&path) {
            Err(Error::Validation { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&path, "").unwrap();
        assert!(matches!(
            load_points_from_csv(&path),
            Err(Error::Parse { .. })
        ));
        std::fs::write(&path, "x,y,temperature\n0,0,0\n").unwrap();
        assert!(matches!(
            load_points_from_csv(&path),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            load_points_from_csv(&dir.path().join("missing.csv")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn metrics_json_has_documented_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let rec = MetricsRecord {
            scenario: "rod-constant".into(),
            method: "vhfm".into(),
            h: 0.1,
            ppc: 2,
            dt: 1e-3,
            time: 1.0,
            rmse: Some(2.4e-4),
            l2: None,
            excluded_points: 0,
            runtime_seconds: 0.5,
        };
        write_metrics_json(&rec, &path).unwrap();
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "dt",
                "excluded_points",
                "h",
                "l2",
                "method",
                "ppc",
                "rmse",
                "runtime_seconds",
                "scenario",
                "time"
            ]
        );
        let back: MetricsRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn vtk_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.vtk");
        write_vtk(&sample_set(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert_eq!(lines[3], "DATASET POLYDATA");
        assert_eq!(lines[4], "POINTS 2 double");
        assert!(text.contains("VERTICES 2 4\n1 0\n1 1\n"));
        assert!(text.contains("POINT_DATA 2\nSCALARS temperature double 1\nLOOKUP_TABLE default\n"));
    }

    #[test]
    fn unwritable_path_reports_it() {
        let err =
            write_snapshot_csv(&sample_set(), Path::new("/nonexistent-dir/x.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.csv"));
    }
}
