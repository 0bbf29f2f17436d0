//! Legacy-VTK (ASCII) and CSV writers for meshes and nodal fields.

use std::io::Write;

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

/// Named nodal data attached to an export.
pub enum Field<'a> {
    Scalar(&'a str, &'a [f64]),
    Vector(&'a str, &'a [[f64; 2]]),
}

impl Field<'_> {
    fn len(&self) -> usize {
        match self {
            Field::Scalar(_, v) => v.len(),
            Field::Vector(_, v) => v.len(),
        }
    }

    fn name(&self) -> &str {
        match self {
            Field::Scalar(n, _) | Field::Vector(n, _) => n,
        }
    }
}

fn check(mesh: &TriMesh, fields: &[Field]) -> Result<()> {
    for f in fields {
        if f.len() != mesh.n_vertices() {
            return Err(Error::Shape(format!(
                "field `{}` has {} values for {} vertices",
                f.name(),
                f.len(),
                mesh.n_vertices()
            )));
        }
    }
    Ok(())
}

pub fn write_vtk<W: Write>(mut w: W, mesh: &TriMesh, title: &str, fields: &[Field]) -> Result<()> {
    check(mesh, fields)?;
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.lines().next().unwrap_or(""))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.n_vertices())?;
    for p in mesh.vertices() {
        writeln!(w, "{:.17e} {:.17e} 0", p[0], p[1])?;
    }
    let nt = mesh.n_triangles();
    writeln!(w, "CELLS {} {}", nt, 4 * nt)?;
    for t in mesh.triangles() {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(w, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(w, "5")?;
    }
    if !fields.is_empty() {
        writeln!(w, "POINT_DATA {}", mesh.n_vertices())?;
    }
    for f in fields {
        match f {
            Field::Scalar(name, v) => {
                writeln!(w, "SCALARS {name} double 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                for x in *v {
                    writeln!(w, "{x:.17e}")?;
                }
            }
            Field::Vector(name, v) => {
                writeln!(w, "VECTORS {name} double")?;
                for x in *v {
                    writeln!(w, "{:.17e} {:.17e} 0", x[0], x[1])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per vertex: `x,y` then every field (vectors as `name_x,name_y`).
pub fn write_nodal_csv<W: Write>(mut w: W, mesh: &TriMesh, fields: &[Field]) -> Result<()> {
    check(mesh, fields)?;
    let mut header = vec!["x".to_string(), "y".to_string()];
    for f in fields {
        match f {
            Field::Scalar(n, _) => header.push(n.to_string()),
            Field::Vector(n, _) => {
                header.push(format!("{n}_x"));
                header.push(format!("{n}_y"));
            }
        }
    }
    writeln!(w, "{}", header.join(","))?;
    for (i, p) in mesh.vertices().iter().enumerate() {
        write!(w, "{:.17e},{:.17e}", p[0], p[1])?;
        for f in fields {
            match f {
                Field::Scalar(_, v) => write!(w, ",{:.17e}", v[i])?,
                Field::Vector(_, v) => write!(w, ",{:.17e},{:.17e}", v[i][0], v[i][1])?,
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
