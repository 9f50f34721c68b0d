//! Legacy-VTK ASCII output (unstructured grid, triangle cells) for meshes and
//! solution fields. Zero-dependency writer; files load in standard viewers.

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::stepper::SystemState;
use std::io::Write as _;
use std::path::Path;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.display().to_string(), message: e.to_string() }
}

fn write_header(f: &mut impl std::io::Write, mesh: &Mesh, title: &str, path: &Path) -> Result<()> {
    let err = io_err(path);
    writeln!(f, "# vtk DataFile Version 3.0").map_err(&err)?;
    writeln!(f, "{title}").map_err(&err)?;
    writeln!(f, "ASCII").map_err(&err)?;
    writeln!(f, "DATASET UNSTRUCTURED_GRID").map_err(&err)?;
    writeln!(f, "POINTS {} double", mesh.vertex_count()).map_err(&err)?;
    for v in &mesh.vertices {
        writeln!(f, "{:.12e} {:.12e} 0", v[0], v[1]).map_err(&err)?;
    }
    writeln!(f, "CELLS {} {}", mesh.triangle_count(), 4 * mesh.triangle_count()).map_err(&err)?;
    for t in &mesh.triangles {
        writeln!(f, "3 {} {} {}", t[0], t[1], t[2]).map_err(&err)?;
    }
    writeln!(f, "CELL_TYPES {}", mesh.triangle_count()).map_err(&err)?;
    for _ in 0..mesh.triangle_count() {
        writeln!(f, "5").map_err(&err)?;
    }
    Ok(())
}

/// Dump the bare mesh for inspection.
pub fn write_mesh(path: &Path, mesh: &Mesh) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut f = std::io::BufWriter::new(file);
    write_header(&mut f, mesh, "triangulation", path)?;
    f.flush().map_err(io_err(path))?;
    Ok(())
}

/// Write displacement (vector), pressure, xi and eta as point data at the
/// mesh vertices. P2 displacement coefficients are nodal, so vertex values
/// are read off directly.
pub fn write_solution(path: &Path, mesh: &Mesh, state: &SystemState) -> Result<()> {
    let err = io_err(path);
    let file = std::fs::File::create(path).map_err(&err)?;
    let mut f = std::io::BufWriter::new(file);
    let nv = mesh.vertex_count();
    write_header(&mut f, mesh, &format!("solution at t = {}", state.time), path)?;
    writeln!(f, "POINT_DATA {nv}").map_err(&err)?;
    writeln!(f, "VECTORS displacement double").map_err(&err)?;
    for v in 0..nv {
        writeln!(f, "{:.12e} {:.12e} 0", state.u[2 * v], state.u[2 * v + 1]).map_err(&err)?;
    }
    for (name, data) in [("pressure", &state.p), ("xi", &state.xi), ("eta", &state.eta)] {
        writeln!(f, "SCALARS {name} double 1").map_err(&err)?;
        writeln!(f, "LOOKUP_TABLE default").map_err(&err)?;
        for v in 0..nv {
            writeln!(f, "{:.12e}", data[v]).map_err(&err)?;
        }
    }
    f.flush().map_err(&err)?;
    Ok(())
}
