//! Wavefront OBJ subset: `v` and `f` records plus comments. Polygonal faces
//! are fan-triangulated; texture/normal references in faces are ignored.

use std::io::{BufRead, Write};

use glam::DVec3;

use super::{GeometryError, TriangleMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadReport {
    pub vertices: usize,
    pub triangles: usize,
    pub dropped_degenerate: usize,
}

// Records we accept and skip without interpretation.
const IGNORED: &[&str] = &[
    "vt", "vn", "vp", "o", "g", "s", "usemtl", "mtllib", "l", "p",
];

pub fn load_mesh<R: BufRead>(source: R) -> Result<(TriangleMesh, LoadReport), GeometryError> {
    let mut vertices: Vec<DVec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    // Source line of each triangle, for error reporting after validation.
    let mut tri_lines: Vec<usize> = Vec::new();

    for (idx, line) in source.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let mut tokens = line.split_whitespace();
        let Some(keyword) = tokens.next() else {
            continue;
        };
        let parse_err = |message: String| GeometryError::Parse {
            line: lineno,
            message,
        };
        match keyword {
            "v" => {
                let coords: Vec<&str> = tokens.collect();
                if coords.len() < 3 || coords.len() > 4 {
                    return Err(parse_err(format!(
                        "vertex needs 3 coordinates, found {}",
                        coords.len()
                    )));
                }
                let mut xyz = [0.0; 3];
                for (k, c) in coords.iter().take(3).enumerate() {
                    xyz[k] = c
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| parse_err(format!("bad coordinate '{c}'")))?;
                }
                vertices.push(DVec3::from_array(xyz));
            }
            "f" => {
                let mut corners = Vec::with_capacity(4);
                for tok in tokens {
                    let head = tok.split('/').next().unwrap_or("");
                    let raw: i64 = head
                        .parse()
                        .map_err(|_| parse_err(format!("bad face index '{tok}'")))?;
                    let resolved = match raw {
                        0 => return Err(parse_err("face index 0 is invalid".into())),
                        r if r > 0 => r - 1,
                        r => vertices.len() as i64 + r,
                    };
                    if resolved < 0 || resolved > u32::MAX as i64 {
                        return Err(parse_err(format!("face index {raw} out of range")));
                    }
                    corners.push(resolved as u32);
                }
                if corners.len() < 3 {
                    return Err(parse_err(format!(
                        "face needs at least 3 vertices, found {}",
                        corners.len()
                    )));
                }
                for k in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[k], corners[k + 1]]);
                    tri_lines.push(lineno);
                }
            }
            k if IGNORED.contains(&k) => {}
            other => return Err(parse_err(format!("unsupported record '{other}'"))),
        }
    }

    let vertex_count = vertices.len();
    let (mesh, dropped) = TriangleMesh::new(vertices, triangles).map_err(|e| match e {
        GeometryError::IndexOutOfRange {
            triangle,
            index,
            count,
        } => GeometryError::Parse {
            line: tri_lines[triangle],
            message: format!("vertex index {} exceeds vertex count {count}", index + 1),
        },
        other => other,
    })?;
    if mesh.triangle_count() == 0 {
        return Err(GeometryError::EmptyScene { dropped });
    }
    let report = LoadReport {
        vertices: vertex_count,
        triangles: mesh.triangle_count(),
        dropped_degenerate: dropped,
    };
    Ok((mesh, report))
}

/// Writes `v`/`f` records with shortest round-trip float formatting, so
/// `load_mesh(write_obj(m)) == m` for meshes without degenerate triangles.
pub fn write_obj<W: Write>(mesh: &TriangleMesh, mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "# {} vertices, {} triangles",
        mesh.vertices().len(),
        mesh.triangle_count()
    )?;
    for v in mesh.vertices() {
        writeln!(out, "v {:?} {:?} {:?}", v.x, v.y, v.z)?;
    }
    for t in mesh.triangles() {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}
