//! Newest-vertex bisection with conforming closure.

use std::collections::{HashMap, VecDeque};

use super::{canonical, TriangleMesh};
use crate::error::{Error, Result};
use crate::real::Real;

/// Result of a refinement round: the new mesh and, for each new element, the
/// index of the element of the previous mesh that contains it.
#[derive(Debug, Clone)]
pub struct Refinement<T> {
    pub mesh: TriangleMesh<T>,
    pub parent: Vec<usize>,
}

impl<T: Real> TriangleMesh<T> {
    pub fn bisect_with_parents(&self, marked: &[usize]) -> Result<Refinement<T>> {
        if let Some(&bad) = marked.iter().find(|&&t| t >= self.num_elements()) {
            return Err(Error::invalid(format!(
                "marked element {bad} out of range (mesh has {} elements)",
                self.num_elements()
            )));
        }
        if marked.is_empty() {
            return Ok(Refinement {
                mesh: self.clone(),
                parent: (0..self.num_elements()).collect(),
            });
        }

        // Closure: an element with any marked edge must have its refinement
        // edge marked as well. Marks only ever propagate to neighbours.
        let mut edge_marked = vec![false; self.num_edges()];
        let mut queue = VecDeque::new();
        for &t in marked {
            let e = self.element_edges[t][self.refinement_edge(t)];
            if !edge_marked[e] {
                edge_marked[e] = true;
                queue.push_back(e);
            }
        }
        while let Some(e) = queue.pop_front() {
            let (t0, t1) = self.edges[e].elements;
            for t in std::iter::once(t0).chain(t1) {
                let r = self.element_edges[t][self.refinement_edge(t)];
                if !edge_marked[r] {
                    edge_marked[r] = true;
                    queue.push_back(r);
                }
            }
        }

        let mut vertices = self.vertices.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        for (e, _) in edge_marked.iter().enumerate().filter(|(_, &m)| m) {
            let [a, b] = self.edges[e].vertices;
            midpoint.insert((a, b), vertices.len());
            vertices.push(self.edge_midpoint(e));
        }

        let mut elements = Vec::with_capacity(self.num_elements() + 4 * midpoint.len());
        let mut refinement_edge = Vec::with_capacity(elements.capacity());
        let mut parent = Vec::with_capacity(elements.capacity());
        let mut stack = Vec::new();
        for t in 0..self.num_elements() {
            stack.push((self.elements[t], self.refinement_edge[t] as usize));
            while let Some((tri, r)) = stack.pop() {
                let c = tri[r];
                let a = tri[(r + 1) % 3];
                let b = tri[(r + 2) % 3];
                match midpoint.get(&canonical(a, b)) {
                    None => {
                        elements.push(tri);
                        refinement_edge.push(r as u8);
                        parent.push(t);
                    }
                    Some(&m) => {
                        // the new vertex is opposite each child's refinement edge;
                        // push in reverse so children come out in (c,a,m), (c,m,b) order
                        stack.push(([c, m, b], 1));
                        stack.push(([c, a, m], 2));
                    }
                }
            }
        }

        let mesh = TriangleMesh::assemble(vertices, elements, refinement_edge, self.generation() + 1)?;
        Ok(Refinement { mesh, parent })
    }
}

#[cfg(test)]
mod tests {
    use super::super::{make_lshape_mesh, make_unit_square_mesh};
    use super::*;
    use std::collections::HashSet;

    fn angle_class(m: &TriangleMesh<f64>, t: usize) -> [i64; 3] {
        let p = m.element_coords(t);
        let mut ang = [0.0f64; 3];
        for i in 0..3 {
            let a = p[i];
            let b = p[(i + 1) % 3];
            let c = p[(i + 2) % 3];
            let u = [b[0] - a[0], b[1] - a[1]];
            let v = [c[0] - a[0], c[1] - a[1]];
            ang[i] = (u[0] * v[1] - u[1] * v[0]).atan2(u[0] * v[0] + u[1] * v[1]);
        }
        ang.sort_by(|x, y| x.partial_cmp(y).unwrap());
        ang.map(|x| (x * 1e6).round() as i64)
    }

    #[test]
    fn empty_marking_is_identity() {
        let m = make_unit_square_mesh::<f64>(3).unwrap();
        let r = m.bisect(&[]).unwrap();
        assert_eq!(r.elements(), m.elements());
        assert_eq!(r.vertices(), m.vertices());
        assert_eq!(r.stamp(), m.stamp());
    }

    #[test]
    fn single_mark_forces_neighbour() {
        let m = make_unit_square_mesh::<f64>(1).unwrap();
        let r = m.bisect_with_parents(&[0]).unwrap();
        assert_eq!(r.mesh.num_elements(), 4);
        assert_eq!(r.mesh.num_vertices(), 5);
        assert_eq!(r.parent, vec![0, 0, 1, 1]);
        r.mesh.validate().unwrap();
        assert_eq!(r.mesh.generation(), 1);
    }

    #[test]
    fn out_of_range_mark_is_rejected() {
        let m = make_unit_square_mesh::<f64>(1).unwrap();
        assert!(matches!(m.bisect(&[2]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn closure_across_non_compatible_neighbour() {
        // after one round the refinement edges of neighbours no longer coincide
        let m = make_unit_square_mesh::<f64>(2).unwrap().bisect(&[0]).unwrap();
        for t in 0..m.num_elements() {
            let r = m.bisect(&[t]).unwrap();
            r.validate().unwrap();
            assert!(r.num_elements() > m.num_elements());
        }
    }

    #[test]
    fn similarity_classes_bounded() {
        let m0 = make_unit_square_mesh::<f64>(2).unwrap();
        let mut m = m0.clone();
        let mut classes = HashSet::new();
        for _ in 0..6 {
            for t in 0..m.num_elements() {
                classes.insert(angle_class(&m, t));
            }
            m = m.refine_uniform(1).unwrap();
        }
        for t in 0..m.num_elements() {
            classes.insert(angle_class(&m, t));
        }
        assert!(classes.len() <= 4 * m0.num_elements(), "{} classes", classes.len());
    }

    #[test]
    fn invariants_under_random_refinement() {
        let mut m = make_lshape_mesh::<f64>(2).unwrap();
        let mut state = 12345u64;
        for _ in 0..8 {
            let before: Vec<[f64; 2]> = m.vertices().to_vec();
            let mut marked = Vec::new();
            for t in 0..m.num_elements() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                if (state >> 33) % 5 == 0 {
                    marked.push(t);
                }
            }
            let r = m.bisect_with_parents(&marked).unwrap();
            r.mesh.validate().unwrap();
            // nestedness: old vertices keep their index and position
            assert_eq!(&r.mesh.vertices()[..before.len()], &before[..]);
            for &t in &marked {
                assert!(r.parent.iter().filter(|&&p| p == t).count() >= 2);
            }
            assert!((r.mesh.total_area() - 3.0).abs() <= 3.0 * 1e-12);
            // each child lies inside its parent
            for (c, &p) in r.parent.iter().enumerate() {
                let cen = r.mesh.point_at(c, [1.0 / 3.0; 3]);
                assert!(m.barycentric(p, cen).iter().all(|&l| l > -1e-12));
            }
            m = r.mesh;
        }
    }
}
