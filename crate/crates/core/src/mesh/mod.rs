//! Conforming triangulations of polygonal domains.
//!
//! Elements are stored as counter-clockwise vertex triples. Local edge `i` of an
//! element is the edge opposite its local vertex `i`, i.e. the segment
//! `(v[i+1], v[i+2])` (indices modulo 3). Each element carries the local index
//! of its refinement edge, which newest-vertex bisection splits next.

mod io;
mod refine;

pub use io::{read_plapmesh, write_plapmesh};
pub use refine::Refinement;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::real::Real;

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_mesh_id() -> u64 {
    NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed)
}

/// Identity of a mesh instance: a process-unique id plus the number of
/// refinement rounds that produced it. Discrete functions remember the stamp
/// of the mesh they were built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MeshStamp {
    pub id: u64,
    pub generation: u32,
}

/// A mesh edge with its one (boundary) or two (interior) incident elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    /// Canonical vertex pair, smaller index first.
    pub vertices: [usize; 2],
    pub elements: (usize, Option<usize>),
}

impl Edge {
    #[inline]
    pub fn is_boundary(&self) -> bool {
        self.elements.1.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct TriangleMesh<T> {
    vertices: Vec<[T; 2]>,
    elements: Vec<[usize; 3]>,
    refinement_edge: Vec<u8>,
    edges: Vec<Edge>,
    element_edges: Vec<[usize; 3]>,
    boundary_vertex: Vec<bool>,
    num_interior_edges: usize,
    stamp: MeshStamp,
}

#[inline]
pub(crate) fn canonical(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl<T: Real> TriangleMesh<T> {
    /// Builds and fully validates a mesh from raw arrays.
    pub fn new(
        vertices: Vec<[T; 2]>,
        elements: Vec<[usize; 3]>,
        refinement_edge: Vec<u8>,
    ) -> Result<Self> {
        if elements.len() != refinement_edge.len() {
            return Err(Error::InvalidMesh(format!(
                "{} elements but {} refinement-edge tags",
                elements.len(),
                refinement_edge.len()
            )));
        }
        if elements.is_empty() {
            return Err(Error::InvalidMesh("mesh has no elements".into()));
        }
        for (t, tri) in elements.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::InvalidMesh(format!(
                    "element {t} references a vertex out of range"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidMesh(format!("element {t} repeats a vertex")));
            }
            if refinement_edge[t] > 2 {
                return Err(Error::InvalidMesh(format!(
                    "element {t} has refinement edge index {}",
                    refinement_edge[t]
                )));
            }
        }
        let mesh = Self::assemble(vertices, elements, refinement_edge, 0)?;
        mesh.validate()?;
        Ok(mesh)
    }

    /// Builds topology without the geometric validation pass. The caller
    /// guarantees positive orientation and conformity.
    pub(crate) fn assemble(
        vertices: Vec<[T; 2]>,
        elements: Vec<[usize; 3]>,
        refinement_edge: Vec<u8>,
        generation: u32,
    ) -> Result<Self> {
        let mut lookup: HashMap<(usize, usize), usize> =
            HashMap::with_capacity(elements.len() * 2);
        let mut edges: Vec<Edge> = Vec::with_capacity(elements.len() * 3 / 2 + 8);
        let mut element_edges = Vec::with_capacity(elements.len());
        for (t, tri) in elements.iter().enumerate() {
            let mut local = [0usize; 3];
            for (i, slot) in local.iter_mut().enumerate() {
                let a = tri[(i + 1) % 3];
                let b = tri[(i + 2) % 3];
                let key = canonical(a, b);
                match lookup.get(&key) {
                    Some(&e) => {
                        let edge = &mut edges[e];
                        if edge.elements.1.is_some() {
                            return Err(Error::InvalidMesh(format!(
                                "edge ({a}, {b}) is shared by more than two elements"
                            )));
                        }
                        let first = &elements[edge.elements.0];
                        let same_direction = (0..3)
                            .any(|j| first[(j + 1) % 3] == a && first[(j + 2) % 3] == b);
                        if same_direction {
                            return Err(Error::InvalidMesh(format!(
                                "elements {} and {t} traverse edge ({a}, {b}) in the same direction",
                                edge.elements.0
                            )));
                        }
                        edge.elements.1 = Some(t);
                        *slot = e;
                    }
                    None => {
                        let e = edges.len();
                        lookup.insert(key, e);
                        edges.push(Edge {
                            vertices: [key.0, key.1],
                            elements: (t, None),
                        });
                        *slot = e;
                    }
                }
            }
            element_edges.push(local);
        }
        let mut boundary_vertex = vec![false; vertices.len()];
        let mut num_interior_edges = 0;
        for e in &edges {
            if e.is_boundary() {
                boundary_vertex[e.vertices[0]] = true;
                boundary_vertex[e.vertices[1]] = true;
            } else {
                num_interior_edges += 1;
            }
        }
        Ok(TriangleMesh {
            vertices,
            elements,
            refinement_edge,
            edges,
            element_edges,
            boundary_vertex,
            num_interior_edges,
            stamp: MeshStamp {
                id: fresh_mesh_id(),
                generation,
            },
        })
    }

    /// Checks every structural and geometric invariant: positive orientation,
    /// edge incidence, unused vertices and hanging nodes on boundary edges.
    pub fn validate(&self) -> Result<()> {
        for t in 0..self.num_elements() {
            let a = self.signed_area(t);
            if !(a > T::zero()) {
                return Err(Error::InvalidMesh(format!(
                    "element {t} has non-positive signed area {a:e}"
                )));
            }
            if self.refinement_edge[t] > 2 {
                return Err(Error::InvalidMesh(format!("element {t}: bad refinement edge")));
            }
        }
        let mut used = vec![false; self.vertices.len()];
        for tri in &self.elements {
            for &v in tri {
                used[v] = true;
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(Error::InvalidMesh(format!("vertex {v} belongs to no element")));
        }
        for (e, edge) in self.edges.iter().enumerate() {
            let (t0, t1) = edge.elements;
            if !self.element_edges[t0].contains(&e) || t1.is_some_and(|t| !self.element_edges[t].contains(&e)) {
                return Err(Error::InvalidMesh(format!("edge {e}: inconsistent incidence")));
            }
        }
        // A hanging node is always an endpoint of some boundary-flagged edge,
        // so it suffices to test boundary vertices against boundary edges.
        let bverts: Vec<usize> = (0..self.vertices.len())
            .filter(|&v| self.boundary_vertex[v])
            .collect();
        let tol = T::lit(1e-10);
        for edge in self.edges.iter().filter(|e| e.is_boundary()) {
            let p = self.vertices[edge.vertices[0]];
            let q = self.vertices[edge.vertices[1]];
            let (xmin, xmax) = (p[0].min(q[0]), p[0].max(q[0]));
            let (ymin, ymax) = (p[1].min(q[1]), p[1].max(q[1]));
            let len = (q[0] - p[0]).hypot(q[1] - p[1]);
            for &v in &bverts {
                if v == edge.vertices[0] || v == edge.vertices[1] {
                    continue;
                }
                let z = self.vertices[v];
                if z[0] < xmin - tol || z[0] > xmax + tol || z[1] < ymin - tol || z[1] > ymax + tol {
                    continue;
                }
                let cross = (q[0] - p[0]) * (z[1] - p[1]) - (q[1] - p[1]) * (z[0] - p[0]);
                if cross.abs() <= tol * len * len {
                    return Err(Error::InvalidMesh(format!(
                        "hanging vertex {v} on edge ({}, {})",
                        edge.vertices[0], edge.vertices[1]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn stamp(&self) -> MeshStamp {
        self.stamp
    }

    pub fn generation(&self) -> u32 {
        self.stamp.generation
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Number of interior edges, i.e. free Crouzeix-Raviart unknowns.
    pub fn num_interior_edges(&self) -> usize {
        self.num_interior_edges
    }

    pub fn vertices(&self) -> &[[T; 2]] {
        &self.vertices
    }

    pub fn vertex(&self, v: usize) -> [T; 2] {
        self.vertices[v]
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn element(&self, t: usize) -> [usize; 3] {
        self.elements[t]
    }

    pub fn refinement_edges(&self) -> &[u8] {
        &self.refinement_edge
    }

    pub fn refinement_edge(&self, t: usize) -> usize {
        self.refinement_edge[t] as usize
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    /// Global edge ids of the three local edges of `t`.
    pub fn element_edges(&self, t: usize) -> [usize; 3] {
        self.element_edges[t]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    pub fn element_coords(&self, t: usize) -> [[T; 2]; 3] {
        let [a, b, c] = self.elements[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn signed_area(&self, t: usize) -> T {
        let [p0, p1, p2] = self.element_coords(t);
        T::lit(0.5) * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    pub fn area(&self, t: usize) -> T {
        self.signed_area(t)
    }

    pub fn total_area(&self) -> T {
        (0..self.num_elements()).map(|t| self.area(t)).sum()
    }

    /// `h_T = |T|^{1/2}`.
    pub fn element_size(&self, t: usize) -> T {
        self.area(t).sqrt()
    }

    /// `h_F = |F|`, the edge length.
    pub fn face_size(&self, e: usize) -> T {
        let [a, b] = self.edges[e].vertices;
        let (p, q) = (self.vertices[a], self.vertices[b]);
        (q[0] - p[0]).hypot(q[1] - p[1])
    }

    /// Length of the longest edge of `t`.
    pub fn element_diam(&self, t: usize) -> T {
        self.element_edges[t]
            .iter()
            .map(|&e| self.face_size(e))
            .fold(T::zero(), T::max)
    }

    pub fn max_diam(&self) -> T {
        (0..self.num_elements())
            .map(|t| self.element_diam(t))
            .fold(T::zero(), T::max)
    }

    pub fn edge_midpoint(&self, e: usize) -> [T; 2] {
        let [a, b] = self.edges[e].vertices;
        let (p, q) = (self.vertices[a], self.vertices[b]);
        let h = T::lit(0.5);
        [h * (p[0] + q[0]), h * (p[1] + q[1])]
    }

    /// Physical point with barycentric coordinates `lambda` in element `t`.
    pub fn point_at(&self, t: usize, lambda: [T; 3]) -> [T; 2] {
        let [p0, p1, p2] = self.element_coords(t);
        [
            lambda[0] * p0[0] + lambda[1] * p1[0] + lambda[2] * p2[0],
            lambda[0] * p0[1] + lambda[1] * p1[1] + lambda[2] * p2[1],
        ]
    }

    /// Barycentric coordinates of `x` with respect to element `t`.
    pub fn barycentric(&self, t: usize, x: [T; 2]) -> [T; 3] {
        let [p0, p1, p2] = self.element_coords(t);
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let l1 = ((x[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (x[1] - p0[1])) / det;
        let l2 = ((p1[0] - p0[0]) * (x[1] - p0[1]) - (x[0] - p0[0]) * (p1[1] - p0[1])) / det;
        [T::one() - l1 - l2, l1, l2]
    }

    /// Gradients of the three barycentric coordinates of `t`.
    pub fn barycentric_gradients(&self, t: usize) -> Result<[[T; 2]; 3]> {
        let [p0, p1, p2] = self.element_coords(t);
        let two_area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        if !(two_area > T::zero()) {
            return Err(Error::NumericalDegeneracy {
                element: t,
                area: (two_area / T::lit(2.0)).as_f64(),
            });
        }
        let p = [p0, p1, p2];
        let mut g = [[T::zero(); 2]; 3];
        for (i, gi) in g.iter_mut().enumerate() {
            let a = p[(i + 1) % 3];
            let b = p[(i + 2) % 3];
            *gi = [(a[1] - b[1]) / two_area, (b[0] - a[0]) / two_area];
        }
        Ok(g)
    }

    /// Newest-vertex bisection of the marked elements plus conforming closure.
    pub fn bisect(&self, marked: &[usize]) -> Result<TriangleMesh<T>> {
        Ok(self.bisect_with_parents(marked)?.mesh)
    }

    /// Bisects every element once (with closure), `rounds` times.
    pub fn refine_uniform(&self, rounds: usize) -> Result<TriangleMesh<T>> {
        let mut mesh = self.clone();
        for _ in 0..rounds {
            let all: Vec<usize> = (0..mesh.num_elements()).collect();
            mesh = mesh.bisect(&all)?;
        }
        Ok(mesh)
    }
}

/// Uniform mesh of `(0,1)^2` with `n x n` cells, each split along the
/// `(0,0)-(1,1)` diagonal. The hypotenuse is every element's refinement edge.
pub fn make_unit_square_mesh<T: Real>(n: usize) -> Result<TriangleMesh<T>> {
    if n == 0 {
        return Err(Error::invalid("unit square mesh needs n >= 1"));
    }
    structured_mesh(n, |_, _| true, 1)
}

/// Uniform mesh of the L-shaped domain `(0,2)^2 \ [1,2)^2`; each of the three
/// unit blocks carries an `n x n` grid, so the reentrant corner `(1,1)` is a
/// vertex for every `n >= 1`.
pub fn make_lshape_mesh<T: Real>(n: usize) -> Result<TriangleMesh<T>> {
    if n == 0 {
        return Err(Error::invalid("L-shape mesh needs n >= 1 cells per unit block"));
    }
    structured_mesh(n, |i, j| !(i >= n && j >= n), 2)
}

fn structured_mesh<T: Real>(
    n: usize,
    keep_cell: impl Fn(usize, usize) -> bool,
    blocks: usize,
) -> Result<TriangleMesh<T>> {
    let m = n * blocks;
    let h = T::one() / T::from_usize_lossy(n);
    let mut index = vec![usize::MAX; (m + 1) * (m + 1)];
    let mut vertices = Vec::new();
    let mut cells = Vec::new();
    for j in 0..m {
        for i in 0..m {
            if keep_cell(i, j) {
                cells.push((i, j));
            }
        }
    }
    let mut vid = |i: usize, j: usize, vertices: &mut Vec<[T; 2]>| {
        let k = j * (m + 1) + i;
        if index[k] == usize::MAX {
            index[k] = vertices.len();
            vertices.push([T::from_usize_lossy(i) * h, T::from_usize_lossy(j) * h]);
        }
        index[k]
    };
    let mut elements = Vec::with_capacity(cells.len() * 2);
    let mut refinement_edge = Vec::with_capacity(cells.len() * 2);
    for &(i, j) in &cells {
        let v00 = vid(i, j, &mut vertices);
        let v10 = vid(i + 1, j, &mut vertices);
        let v11 = vid(i + 1, j + 1, &mut vertices);
        let v01 = vid(i, j + 1, &mut vertices);
        // right angles at v10 and v01: the hypotenuse v00-v11 is opposite them
        elements.push([v00, v10, v11]);
        refinement_edge.push(1);
        elements.push([v00, v11, v01]);
        refinement_edge.push(2);
    }
    TriangleMesh::assemble(vertices, elements, refinement_edge, 0)
}
