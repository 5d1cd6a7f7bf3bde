//! Plain-text mesh format:
//!
//! ```text
//! plapmesh 1
//! <#vertices> <#elements>
//! x y                  (one line per vertex)
//! v0 v1 v2 refedge     (one line per element)
//! ```

use std::io::{BufRead, Write};

use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::real::Real;

pub fn write_plapmesh<T: Real, W: Write>(mesh: &TriangleMesh<T>, mut w: W) -> Result<()> {
    writeln!(w, "plapmesh 1")?;
    writeln!(w, "{} {}", mesh.num_vertices(), mesh.num_elements())?;
    for v in mesh.vertices() {
        writeln!(w, "{} {}", v[0], v[1])?;
    }
    for (t, tri) in mesh.elements().iter().enumerate() {
        writeln!(w, "{} {} {} {}", tri[0], tri[1], tri[2], mesh.refinement_edge(t))?;
    }
    Ok(())
}

/// Reads a mesh and validates all invariants.
pub fn read_plapmesh<T: Real, R: BufRead>(r: R) -> Result<TriangleMesh<T>> {
    let mut lines = r
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(s))) => Ok((i, s)),
            Some((_, Err(e))) => Err(e.into()),
            None => Err(Error::Parse {
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            }),
        }
    };
    let (line, header) = next("header")?;
    if header.split_whitespace().collect::<Vec<_>>() != ["plapmesh", "1"] {
        return Err(Error::Parse {
            line,
            msg: format!("bad header {header:?}"),
        });
    }
    let (line, counts) = next("counts")?;
    let counts: Vec<usize> = parse_fields(line, &counts, 2)?;
    let (nv, ne) = (counts[0], counts[1]);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, s) = next("vertex")?;
        let xy: Vec<f64> = parse_fields(line, &s, 2)?;
        if !xy.iter().all(|x| x.is_finite()) {
            return Err(Error::Parse {
                line,
                msg: "non-finite coordinate".into(),
            });
        }
        vertices.push([T::lit(xy[0]), T::lit(xy[1])]);
    }
    let mut elements = Vec::with_capacity(ne);
    let mut refinement_edge = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (line, s) = next("element")?;
        let f: Vec<usize> = parse_fields(line, &s, 4)?;
        if f[3] > 2 {
            return Err(Error::Parse {
                line,
                msg: format!("refinement edge {} not in 0..=2", f[3]),
            });
        }
        elements.push([f[0], f[1], f[2]]);
        refinement_edge.push(f[3] as u8);
    }
    if let Ok((line, _)) = next("end of file") {
        return Err(Error::Parse {
            line,
            msg: "trailing content after last element".into(),
        });
    }
    TriangleMesh::new(vertices, elements, refinement_edge)
}

fn parse_fields<F: std::str::FromStr>(line: usize, s: &str, n: usize) -> Result<Vec<F>> {
    let out: Vec<F> = s
        .split_whitespace()
        .map(|tok| tok.parse::<F>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse {
            line,
            msg: format!("cannot parse {s:?}"),
        })?;
    if out.len() != n {
        return Err(Error::Parse {
            line,
            msg: format!("expected {n} fields, found {}", out.len()),
        });
    }
    Ok(out)
}
