//! Crouzeix-Raviart functions: one value per edge midpoint, linear on each
//! element. On element `T` the basis function of local edge `i` is
//! `phi_i = 1 - 2 lambda_i`, where `lambda_i` is the barycentric coordinate of
//! the vertex opposite that edge.

use std::io::Write;

use crate::error::{Error, Result};
use crate::mesh::{MeshStamp, TriangleMesh};
use crate::quadrature::{gauss3_unit, QuadratureRule};
use crate::real::{norm2, Real};

/// A Crouzeix-Raviart function bound to one mesh instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CrFunction<T> {
    stamp: MeshStamp,
    dofs: Vec<T>,
}

/// A continuous piecewise linear function with one value per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformingP1Function<T> {
    stamp: MeshStamp,
    dofs: Vec<T>,
}

/// Set of elements an integral runs over.
#[derive(Debug, Clone, Copy)]
pub enum Region<'a> {
    All,
    Elements(&'a [usize]),
}

pub(crate) fn check_exponent<T: Real>(p: T) -> Result<()> {
    if p > T::one() && p.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("exponent p must lie in (1, inf), got {p}")))
    }
}

fn check_stamp<T: Real>(mesh: &TriangleMesh<T>, found: MeshStamp) -> Result<()> {
    if mesh.stamp() == found {
        Ok(())
    } else {
        Err(Error::StaleFunction {
            expected: mesh.stamp(),
            found,
        })
    }
}

impl<T: Real> CrFunction<T> {
    pub fn zeros(mesh: &TriangleMesh<T>) -> Self {
        CrFunction {
            stamp: mesh.stamp(),
            dofs: vec![T::zero(); mesh.num_edges()],
        }
    }

    pub fn from_dofs(mesh: &TriangleMesh<T>, dofs: Vec<T>) -> Result<Self> {
        if dofs.len() != mesh.num_edges() {
            return Err(Error::invalid(format!(
                "{} dofs for a mesh with {} edges",
                dofs.len(),
                mesh.num_edges()
            )));
        }
        Ok(CrFunction {
            stamp: mesh.stamp(),
            dofs,
        })
    }

    pub fn stamp(&self) -> MeshStamp {
        self.stamp
    }

    pub fn dofs(&self) -> &[T] {
        &self.dofs
    }

    pub fn dofs_mut(&mut self) -> &mut [T] {
        &mut self.dofs
    }

    pub fn into_dofs(self) -> Vec<T> {
        self.dofs
    }

    /// Fails with [`Error::StaleFunction`] unless `self` was built on `mesh`.
    pub fn check(&self, mesh: &TriangleMesh<T>) -> Result<()> {
        check_stamp(mesh, self.stamp)
    }

    /// True when every boundary-edge value is zero.
    pub fn is_dirichlet(&self, mesh: &TriangleMesh<T>) -> bool {
        mesh.edges()
            .iter()
            .zip(&self.dofs)
            .all(|(e, &d)| !e.is_boundary() || d == T::zero())
    }

    pub fn scale(&mut self, c: T) {
        self.dofs.iter_mut().for_each(|d| *d *= c);
    }

    pub fn local_dofs(&self, mesh: &TriangleMesh<T>, t: usize) -> [T; 3] {
        mesh.element_edges(t).map(|e| self.dofs[e])
    }

    /// Values of `v|_T` at the three vertices of `T`.
    pub fn vertex_values(&self, mesh: &TriangleMesh<T>, t: usize) -> [T; 3] {
        let d = self.local_dofs(mesh, t);
        let s = d[0] + d[1] + d[2];
        let two = T::lit(2.0);
        [s - two * d[0], s - two * d[1], s - two * d[2]]
    }

    pub fn eval_on_element(&self, mesh: &TriangleMesh<T>, t: usize, lambda: [T; 3]) -> Result<T> {
        self.check(mesh)?;
        Ok(self.eval_unchecked(mesh, t, lambda))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, mesh: &TriangleMesh<T>, t: usize, lambda: [T; 3]) -> T {
        let d = self.local_dofs(mesh, t);
        let two = T::lit(2.0);
        (0..3).map(|i| d[i] * (T::one() - two * lambda[i])).sum()
    }

    /// The constant gradient of `v|_T`.
    pub fn broken_gradient(&self, mesh: &TriangleMesh<T>, t: usize) -> Result<[T; 2]> {
        self.check(mesh)?;
        let g = mesh.barycentric_gradients(t)?;
        Ok(cr_gradient(self.local_dofs(mesh, t), &g))
    }
}

/// `sum_i d_i grad(phi_i)` with `grad(phi_i) = -2 grad(lambda_i)`.
#[inline]
pub(crate) fn cr_gradient<T: Real>(d: [T; 3], grad_lambda: &[[T; 2]; 3]) -> [T; 2] {
    let m2 = T::lit(-2.0);
    let mut g = [T::zero(); 2];
    for i in 0..3 {
        g[0] += m2 * d[i] * grad_lambda[i][0];
        g[1] += m2 * d[i] * grad_lambda[i][1];
    }
    g
}

/// `int_T |v|^p` for a function that is linear on `T` with the given vertex
/// values, by the degree-4 rule.
#[inline]
pub(crate) fn element_lp_p<T: Real>(vertex_values: [T; 3], area: T, p: T, rule: &QuadratureRule<T>) -> T {
    let s: T = rule
        .iter()
        .map(|(l, w)| {
            let v = l[0] * vertex_values[0] + l[1] * vertex_values[1] + l[2] * vertex_values[2];
            w * v.abs_pow(p)
        })
        .sum();
    s * area
}

fn elements_of<'a>(mesh_len: usize, region: Region<'a>) -> Result<Box<dyn Iterator<Item = usize> + 'a>> {
    match region {
        Region::All => Ok(Box::new(0..mesh_len)),
        Region::Elements(ts) => {
            if let Some(&t) = ts.iter().find(|&&t| t >= mesh_len) {
                return Err(Error::invalid(format!("element {t} out of range")));
            }
            Ok(Box::new(ts.iter().copied()))
        }
    }
}

/// `sum_T int_T |v|^p` over `region`, by the degree-4 triangle rule. Exact
/// for even integer `p <= 4`; an approximation otherwise.
pub fn lp_norm_p<T: Real>(mesh: &TriangleMesh<T>, v: &CrFunction<T>, p: T, region: Region<'_>) -> Result<T> {
    check_exponent(p)?;
    v.check(mesh)?;
    let rule = QuadratureRule::triangle_degree4();
    Ok(elements_of(mesh.num_elements(), region)?
        .map(|t| element_lp_p(v.vertex_values(mesh, t), mesh.area(t), p, &rule))
        .sum())
}

/// `||v||_{L^2}`. Crouzeix-Raviart basis functions are L2-orthogonal on
/// each element with `int_T phi_i^2 = |T|/3`, so this is exact.
pub fn l2_norm<T: Real>(mesh: &TriangleMesh<T>, v: &CrFunction<T>) -> Result<T> {
    v.check(mesh)?;
    Ok(l2_norm_sq_dofs(mesh, &v.dofs).sqrt())
}

pub(crate) fn l2_norm_sq_dofs<T: Real>(mesh: &TriangleMesh<T>, dofs: &[T]) -> T {
    let third = T::one() / T::lit(3.0);
    (0..mesh.num_elements())
        .map(|t| {
            let s: T = mesh.element_edges(t).iter().map(|&e| dofs[e] * dofs[e]).sum();
            s * mesh.area(t) * third
        })
        .sum()
}

/// Broken seminorm `sum_T int_T |grad v|^p`, exact since gradients are
/// elementwise constant.
pub fn broken_seminorm_p<T: Real>(mesh: &TriangleMesh<T>, v: &CrFunction<T>, p: T) -> Result<T> {
    check_exponent(p)?;
    v.check(mesh)?;
    let mut s = T::zero();
    for t in 0..mesh.num_elements() {
        let g = mesh.barycentric_gradients(t)?;
        s += norm2(cr_gradient(v.local_dofs(mesh, t), &g)).abs_pow(p) * mesh.area(t);
    }
    Ok(s)
}

/// `max |v|`, attained at element vertices.
pub fn linf_norm<T: Real>(mesh: &TriangleMesh<T>, v: &CrFunction<T>) -> Result<T> {
    v.check(mesh)?;
    Ok((0..mesh.num_elements())
        .flat_map(|t| v.vertex_values(mesh, t))
        .fold(T::zero(), |m, x| m.max(x.abs())))
}

/// `int_0^h |l(s)|^p ds` for the linear `l` with end values `alpha`, `beta`.
/// Reduces to `|alpha|^p h / (p+1)` when `beta = -alpha`.
pub fn segment_lp_p<T: Real>(alpha: T, beta: T, h: T, p: T) -> T {
    let (a, b) = (alpha.abs(), beta.abs());
    let p1 = p + T::one();
    if alpha * beta < T::zero() {
        return h * (a.powf(p1) + b.powf(p1)) / (p1 * (a + b));
    }
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    if hi == T::zero() {
        return T::zero();
    }
    let r = lo / hi;
    let delta = T::one() - r;
    let ratio = if delta > T::lit(1e-6) {
        (T::one() - r.powf(p1)) / delta
    } else {
        p1 * (T::one() - p * delta / T::lit(2.0) + p * (p - T::one()) * delta * delta / T::lit(6.0))
    };
    h * hi.powf(p) * ratio / p1
}

/// Values of the jump `[v]` at the two endpoints of edge `e` (in the order of
/// `edge.vertices`). On boundary edges the trace itself is returned.
pub fn jump_endpoint_values<T: Real>(mesh: &TriangleMesh<T>, v: &CrFunction<T>, e: usize) -> [T; 2] {
    let edge = mesh.edge(e);
    let side = |t: usize| -> [T; 2] {
        let tri = mesh.element(t);
        let vals = v.vertex_values(mesh, t);
        edge.vertices.map(|x| {
            let j = tri.iter().position(|&y| y == x).expect("edge vertex in element");
            vals[j]
        })
    };
    let plus = side(edge.elements.0);
    match edge.elements.1 {
        None => plus,
        Some(t1) => {
            let minus = side(t1);
            [plus[0] - minus[0], plus[1] - minus[1]]
        }
    }
}

/// `int_F |[v]|^p ds` on edge `e`.
pub fn jump_lp_norm_p<T: Real>(mesh: &TriangleMesh<T>, v: &CrFunction<T>, e: usize, p: T) -> Result<T> {
    check_exponent(p)?;
    v.check(mesh)?;
    if e >= mesh.num_edges() {
        return Err(Error::invalid(format!("edge {e} out of range")));
    }
    let [a, b] = jump_endpoint_values(mesh, v, e);
    Ok(segment_lp_p(a, b, mesh.face_size(e), p))
}

fn edge_mean<T: Real>(mesh: &TriangleMesh<T>, e: usize, f: &impl Fn([T; 2]) -> T) -> T {
    let [a, b] = mesh.edge(e).vertices;
    let (p, q) = (mesh.vertex(a), mesh.vertex(b));
    gauss3_unit::<T>()
        .iter()
        .map(|&(s, w)| w * f([p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]))
        .sum()
}

/// Edge-mean interpolation `I_k f` with boundary values forced to zero.
pub fn interpolate_cr<T: Real>(mesh: &TriangleMesh<T>, f: impl Fn([T; 2]) -> T) -> CrFunction<T> {
    let dofs = (0..mesh.num_edges())
        .map(|e| if mesh.edge(e).is_boundary() { T::zero() } else { edge_mean(mesh, e, &f) })
        .collect();
    CrFunction {
        stamp: mesh.stamp(),
        dofs,
    }
}

/// Edge-mean interpolation keeping the boundary edge means of `f`.
pub fn interpolate_cr_full<T: Real>(mesh: &TriangleMesh<T>, f: impl Fn([T; 2]) -> T) -> CrFunction<T> {
    let dofs = (0..mesh.num_edges()).map(|e| edge_mean(mesh, e, &f)).collect();
    CrFunction {
        stamp: mesh.stamp(),
        dofs,
    }
}

impl<T: Real> ConformingP1Function<T> {
    pub fn from_dofs(mesh: &TriangleMesh<T>, dofs: Vec<T>) -> Result<Self> {
        if dofs.len() != mesh.num_vertices() {
            return Err(Error::invalid("P1 function needs one value per vertex"));
        }
        Ok(ConformingP1Function {
            stamp: mesh.stamp(),
            dofs,
        })
    }

    pub fn dofs(&self) -> &[T] {
        &self.dofs
    }

    pub fn check(&self, mesh: &TriangleMesh<T>) -> Result<()> {
        check_stamp(mesh, self.stamp)
    }

    pub fn vertex_values(&self, mesh: &TriangleMesh<T>, t: usize) -> [T; 3] {
        mesh.element(t).map(|v| self.dofs[v])
    }

    pub fn gradient(&self, mesh: &TriangleMesh<T>, t: usize) -> Result<[T; 2]> {
        self.check(mesh)?;
        let g = mesh.barycentric_gradients(t)?;
        let w = self.vertex_values(mesh, t);
        Ok([
            w[0] * g[0][0] + w[1] * g[1][0] + w[2] * g[2][0],
            w[0] * g[0][1] + w[1] * g[1][1] + w[2] * g[2][1],
        ])
    }

    /// `int |grad w|^p`.
    pub fn seminorm_p(&self, mesh: &TriangleMesh<T>, p: T) -> Result<T> {
        check_exponent(p)?;
        let mut s = T::zero();
        for t in 0..mesh.num_elements() {
            s += norm2(self.gradient(mesh, t)?).abs_pow(p) * mesh.area(t);
        }
        Ok(s)
    }
}

/// Vertex-averaging map `E_k` into the conforming P1 space: at an interior
/// vertex, the mean of `v|_T` over the elements sharing it; zero on the
/// boundary.
pub fn connect_to_conforming<T: Real>(mesh: &TriangleMesh<T>, v: &CrFunction<T>) -> Result<ConformingP1Function<T>> {
    v.check(mesh)?;
    let mut sum = vec![T::zero(); mesh.num_vertices()];
    let mut count = vec![0usize; mesh.num_vertices()];
    for t in 0..mesh.num_elements() {
        let vals = v.vertex_values(mesh, t);
        for (j, &z) in mesh.element(t).iter().enumerate() {
            sum[z] += vals[j];
            count[z] += 1;
        }
    }
    let dofs = (0..mesh.num_vertices())
        .map(|z| {
            if mesh.is_boundary_vertex(z) || count[z] == 0 {
                T::zero()
            } else {
                sum[z] / T::from_usize_lossy(count[z])
            }
        })
        .collect();
    Ok(ConformingP1Function {
        stamp: mesh.stamp(),
        dofs,
    })
}

/// `int |v - w|^p` for a CR function `v` and a P1 function `w` on one mesh.
pub fn difference_lp_norm_p<T: Real>(
    mesh: &TriangleMesh<T>,
    v: &CrFunction<T>,
    w: &ConformingP1Function<T>,
    p: T,
) -> Result<T> {
    check_exponent(p)?;
    v.check(mesh)?;
    w.check(mesh)?;
    let rule = QuadratureRule::triangle_degree4();
    Ok((0..mesh.num_elements())
        .map(|t| {
            let a = v.vertex_values(mesh, t);
            let b = w.vertex_values(mesh, t);
            element_lp_p([a[0] - b[0], a[1] - b[1], a[2] - b[2]], mesh.area(t), p, &rule)
        })
        .sum())
}

/// Writes `edge_id,mx,my,dof` rows, one per edge.
pub fn write_solution_csv<T: Real, W: Write>(mesh: &TriangleMesh<T>, v: &CrFunction<T>, mut w: W) -> Result<()> {
    v.check(mesh)?;
    writeln!(w, "edge_id,mx,my,dof")?;
    for (e, &d) in v.dofs().iter().enumerate() {
        let m = mesh.edge_midpoint(e);
        writeln!(w, "{e},{:.8e},{:.8e},{:.8e}", m[0], m[1], d)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_lshape_mesh, make_unit_square_mesh};
    use proptest::prelude::*;

    fn single_triangle() -> TriangleMesh<f64> {
        TriangleMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]], vec![0]).unwrap()
    }

    use crate::quadrature::gauss_legendre_unit as gauss_legendre;

    fn random_cr(mesh: &TriangleMesh<f64>, seed: u64) -> CrFunction<f64> {
        let mut s = seed;
        let dofs = (0..mesh.num_edges())
            .map(|e| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                if mesh.edge(e).is_boundary() {
                    0.0
                } else {
                    ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.3
                }
            })
            .collect();
        CrFunction::from_dofs(mesh, dofs).unwrap()
    }

    #[test]
    fn evaluation_and_nodal_basis() {
        let m = single_triangle();
        let c = CrFunction::from_dofs(&m, vec![1.0; 3]).unwrap();
        assert!((c.eval_on_element(&m, 0, [0.2, 0.3, 0.5]).unwrap() - 1.0).abs() < 1e-15);
        let d = [0.7, -1.3, 2.1];
        let v = CrFunction::from_dofs(&m, m.element_edges(0).map(|_| 0.0).to_vec()).unwrap();
        let mut v = v;
        for i in 0..3 {
            v.dofs_mut()[m.element_edges(0)[i]] = d[i];
        }
        let at_v0 = v.eval_on_element(&m, 0, [1.0, 0.0, 0.0]).unwrap();
        assert!((at_v0 - (-d[0] + d[1] + d[2])).abs() < 1e-14);
        for i in 0..3 {
            let mut l = [0.5; 3];
            l[i] = 0.0;
            assert!((v.eval_on_element(&m, 0, l).unwrap() - d[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn stale_function_is_detected() {
        let m = make_unit_square_mesh::<f64>(2).unwrap();
        let v = CrFunction::zeros(&m);
        let r = m.bisect(&[0]).unwrap();
        assert!(matches!(v.eval_on_element(&r, 0, [1.0, 0.0, 0.0]), Err(Error::StaleFunction { .. })));
        assert!(lp_norm_p(&r, &v, 2.0, Region::All).is_err());
    }

    #[test]
    fn gradient_of_coordinate_interpolant() {
        let m = make_lshape_mesh::<f64>(2).unwrap().refine_uniform(2).unwrap();
        let v = interpolate_cr_full(&m, |x| x[0]);
        for t in 0..m.num_elements() {
            let g = v.broken_gradient(&m, t).unwrap();
            assert!((g[0] - 1.0).abs() < 1e-12 && g[1].abs() < 1e-12);
        }
        let c = CrFunction::from_dofs(&m, vec![3.0; m.num_edges()]).unwrap();
        assert_eq!(c.broken_gradient(&m, 3).unwrap(), [0.0, 0.0]);
        let sq = make_unit_square_mesh::<f64>(4).unwrap();
        let x = interpolate_cr_full(&sq, |x| x[0]);
        for p in [1.3, 2.0, 4.5] {
            assert!((broken_seminorm_p(&sq, &x, p).unwrap() - 1.0).abs() < 1e-12);
        }
        assert!((lp_norm_p(&sq, &x, 2.0, Region::All).unwrap() - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn gradient_scales_inversely_with_geometry() {
        let v0 = vec![[0.0, 0.0], [1.0, 0.2], [0.3, 0.9]];
        let s = 0.25f64;
        let m1 = TriangleMesh::new(v0.clone(), vec![[0, 1, 2]], vec![0]).unwrap();
        let m2 = TriangleMesh::new(v0.iter().map(|p| [s * p[0], s * p[1]]).collect(), vec![[0, 1, 2]], vec![0]).unwrap();
        let d = vec![0.4, -0.1, 0.8];
        let g1 = CrFunction::from_dofs(&m1, d.clone()).unwrap().broken_gradient(&m1, 0).unwrap();
        let g2 = CrFunction::from_dofs(&m2, d).unwrap().broken_gradient(&m2, 0).unwrap();
        assert!((g2[0] - g1[0] / s).abs() < 1e-12 && (g2[1] - g1[1] / s).abs() < 1e-12);
    }

    #[test]
    fn lp_norm_constant_and_composite_oracle() {
        let m = single_triangle();
        let c = CrFunction::from_dofs(&m, vec![-1.7; 3]).unwrap();
        let got = lp_norm_p(&m, &c, 2.5, Region::All).unwrap();
        assert!((got - 1.7f64.powf(2.5) * 0.5).abs() < 1e-13);
        assert!(matches!(lp_norm_p(&m, &c, 1.0, Region::All), Err(Error::InvalidArgument(_))));

        // p = 3.5 against a 64-subtriangle composite degree-4 oracle
        // vertex values (0.7, 1.1, 0.9)
        let v = CrFunction::from_dofs(&m, vec![1.0, 0.8, 0.9]).unwrap();
        let fine = single_triangle().refine_uniform(6).unwrap();
        assert_eq!(fine.num_elements(), 64);
        let rule = QuadratureRule::<f64>::triangle_degree4();
        let mut oracle = 0.0;
        for t in 0..fine.num_elements() {
            for (l, w) in rule.iter() {
                let x = fine.point_at(t, l);
                let lam = m.barycentric(0, x);
                oracle += w * fine.area(t) * v.eval_on_element(&m, 0, lam).unwrap().abs().powf(3.5);
            }
        }
        let got = lp_norm_p(&m, &v, 3.5, Region::All).unwrap();
        assert!(((got - oracle) / oracle).abs() < 1e-6, "{got} vs {oracle}");
    }

    #[test]
    fn seminorm_matches_quadrature_oracle() {
        let m = make_lshape_mesh::<f64>(3).unwrap();
        let v = random_cr(&m, 7);
        let rule = QuadratureRule::<f64>::triangle_degree4();
        for p in [1.5, 2.0, 3.3] {
            let mut q = 0.0;
            for t in 0..m.num_elements() {
                let g = v.broken_gradient(&m, t).unwrap();
                let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
                q += rule.iter().map(|(_, w)| w * gn.powf(p)).sum::<f64>() * m.area(t);
            }
            let s = broken_seminorm_p(&m, &v, p).unwrap();
            assert!(((s - q) / q).abs() < 1e-13);
        }
    }

    #[test]
    fn linf_norm_properties() {
        let m = single_triangle();
        let v = CrFunction::from_dofs(&m, vec![2.5; 3]).unwrap();
        assert!((linf_norm(&m, &v).unwrap() - 2.5).abs() < 1e-15);
        let mut d = vec![0.0; 3];
        d[m.element_edges(0)[0]] = 1.0;
        let v = CrFunction::from_dofs(&m, d).unwrap();
        assert_eq!(v.vertex_values(&m, 0), [-1.0, 1.0, 1.0]);
        assert!((linf_norm(&m, &v).unwrap() - 1.0).abs() < 1e-15);
        let sq = make_unit_square_mesh::<f64>(5).unwrap();
        let r = random_cr(&sq, 3);
        let maxdof = r.dofs().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(linf_norm(&sq, &r).unwrap() >= maxdof);
    }

    #[test]
    fn jumps() {
        let m = make_unit_square_mesh::<f64>(4).unwrap();
        let v = interpolate_cr_full(&m, |x| 2.0 * x[0] - x[1] + 0.3);
        for e in 0..m.num_edges() {
            if !m.edge(e).is_boundary() {
                assert!(jump_lp_norm_p(&m, &v, e, 2.0).unwrap() < 1e-28);
            }
        }
        assert!((segment_lp_p(2.0f64, -2.0, 1.0, 2.0) - 4.0 / 3.0).abs() < 1e-15);
        // CR property: jumps vanish at interior edge midpoints
        let r = random_cr(&m, 11);
        for e in 0..m.num_edges() {
            let [a, b] = jump_endpoint_values(&m, &r, e);
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn segment_formula_matches_gauss_oracle() {
        let g = gauss_legendre(16);
        let mut s = 99u64;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for &p in &[1.2, 2.0, 2.5, 3.7] {
            for _ in 0..20 {
                let a = 4.0 * next() - 2.0;
                let h = 0.01 + next();
                // the jump vanishes at the midpoint: integrate each half separately
                // |a (1 - t)|^p on [0, 1], geometrically graded towards the zero
                // of the jump so the Gauss panels see smooth integrands
                let half = || -> f64 {
                    let mut total = 0.0;
                    let mut hi = 1.0f64;
                    for _ in 0..60 {
                        let lo = hi / 2.0;
                        total += g
                            .iter()
                            .map(|&(t, w)| w * (a * (lo + t * (hi - lo))).abs().powf(p))
                            .sum::<f64>()
                            * (hi - lo);
                        hi = lo;
                    }
                    total * h / 2.0
                };
                let oracle = 2.0 * half();
                let closed = segment_lp_p(a, -a, h, p);
                assert!(((closed - oracle) / oracle).abs() < 1e-12, "p={p} a={a}");
                if p == 2.0 {
                    let b = next() - 0.2;
                    let o2 = h * g.iter().map(|&(t, w)| w * (a + t * (b - a)).powi(2)).sum::<f64>();
                    assert!((segment_lp_p(a, b, h, 2.0) - o2).abs() < 1e-12 * o2.max(1.0));
                }
            }
        }
        // near-equal same-sign endpoints use the series branch
        let o = segment_lp_p(1.0f64, 1.0 + 1e-9, 2.0, 3.0);
        assert!((o - 2.0).abs() < 1e-8);
    }

    #[test]
    fn interpolation_preserves_edge_means() {
        let m = make_unit_square_mesh::<f64>(6).unwrap().bisect(&[0, 3, 9]).unwrap();
        let f = |x: [f64; 2]| (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin();
        let v = interpolate_cr(&m, f);
        let g = gauss_legendre(12);
        for e in 0..m.num_edges() {
            let [a, b] = m.edge(e).vertices;
            let (p, q) = (m.vertex(a), m.vertex(b));
            let mean: f64 = g.iter().map(|&(s, w)| w * f([p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])])).sum();
            assert!((v.dofs()[e] - mean).abs() < 1e-5, "edge {e}");
        }
        assert!(v.is_dirichlet(&m));
    }

    #[test]
    fn interpolation_gradient_stability() {
        // ||grad I f||_{L^p(T)} <= ||grad f||_{L^p(T)} with a dense oracle for the right side
        let m = make_unit_square_mesh::<f64>(4).unwrap();
        let f = |x: [f64; 2]| (x[0] * x[0] + 0.5 * x[1]).sin() + x[0] * x[1] * x[1];
        let df = |x: [f64; 2]| {
            let c = (x[0] * x[0] + 0.5 * x[1]).cos();
            [2.0 * x[0] * c + x[1] * x[1], 0.5 * c + 2.0 * x[0] * x[1]]
        };
        let v = interpolate_cr_full(&m, f);
        let rule = QuadratureRule::<f64>::triangle_degree4();
        for p in [1.5, 2.0, 4.0] {
            for t in 0..m.num_elements() {
                let g = v.broken_gradient(&m, t).unwrap();
                let lhs = (g[0] * g[0] + g[1] * g[1]).sqrt().powf(p) * m.area(t);
                let sub = TriangleMesh::new(m.element_coords(t).to_vec(), vec![[0, 1, 2]], vec![0])
                    .unwrap()
                    .refine_uniform(6)
                    .unwrap();
                let mut rhs = 0.0;
                for s in 0..sub.num_elements() {
                    for (l, w) in rule.iter() {
                        let d = df(sub.point_at(s, l));
                        rhs += w * sub.area(s) * (d[0] * d[0] + d[1] * d[1]).sqrt().powf(p);
                    }
                }
                assert!(lhs <= rhs * (1.0 + 1e-9), "T={t} p={p}: {lhs} > {rhs}");
            }
        }
    }

    #[test]
    fn connection_operator() {
        let m = make_unit_square_mesh::<f64>(5).unwrap();
        // continuous function vanishing on the boundary: x(1-x)y(1-y) is not linear,
        // so take the P1 interpolant of a bump and convert it to CR dofs
        let bump = |x: [f64; 2]| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]);
        let nodal: Vec<f64> = m.vertices().iter().map(|&x| bump(x)).collect();
        let dofs = (0..m.num_edges())
            .map(|e| {
                let [a, b] = m.edge(e).vertices;
                0.5 * (nodal[a] + nodal[b])
            })
            .collect();
        let v = CrFunction::from_dofs(&m, dofs).unwrap();
        let ev = connect_to_conforming(&m, &v).unwrap();
        for z in 0..m.num_vertices() {
            assert!((ev.dofs()[z] - nodal[z]).abs() < 1e-15);
        }
        assert!(difference_lp_norm_p(&m, &v, &ev, 2.0).unwrap() < 1e-28);
    }

    #[test]
    fn connection_bounds_with_empirical_constants() {
        let p = 2.5;
        let base = make_lshape_mesh::<f64>(2).unwrap();
        let ratios = |m: &TriangleMesh<f64>, seed: u64| {
            let v = random_cr(m, seed);
            let ev = connect_to_conforming(m, &v).unwrap();
            let jump: f64 = (0..m.num_edges())
                .map(|e| m.face_size(e) * jump_lp_norm_p(m, &v, e, p).unwrap())
                .sum();
            let r1 = difference_lp_norm_p(m, &v, &ev, p).unwrap() / jump;
            let r2 = ev.seminorm_p(m, p).unwrap() / broken_seminorm_p(m, &v, p).unwrap();
            (r1, r2)
        };
        let (mut c1, mut c2) = (0.0f64, 0.0f64);
        for seed in 0..10 {
            let (a, b) = ratios(&base, seed);
            c1 = c1.max(a);
            c2 = c2.max(b);
        }
        let mut m = base.clone();
        for level in 0..4 {
            let marked: Vec<usize> = (0..m.num_elements()).filter(|t| t % 3 == level % 3).collect();
            m = m.bisect(&marked).unwrap();
            for seed in 100..103 {
                let (a, b) = ratios(&m, seed);
                assert!(a <= 4.0 * c1, "L^p bound ratio {a} vs calibrated {c1}");
                assert!(b <= 4.0 * c2, "stability ratio {b} vs calibrated {c2}");
            }
        }
    }

    proptest! {
        #[test]
        fn affine_interpolation_is_exact(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -1.0f64..1.0) {
            let m = make_lshape_mesh::<f64>(2).unwrap().bisect(&[1, 4]).unwrap();
            let f = |x: [f64; 2]| a * x[0] + b * x[1] + c;
            let v = interpolate_cr_full(&m, f);
            for t in 0..m.num_elements() {
                for l in [[1.0, 0.0, 0.0], [0.2, 0.5, 0.3]] {
                    let x = m.point_at(t, l);
                    prop_assert!((v.eval_on_element(&m, t, l).unwrap() - f(x)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn jump_formula_is_symmetric_and_homogeneous(a in -5.0f64..5.0, h in 0.01f64..2.0, p in 1.1f64..6.0, s in 0.1f64..10.0) {
            let base = segment_lp_p(a, -a, h, p);
            prop_assert!((segment_lp_p(-a, a, h, p) - base).abs() <= 1e-14 * base.max(1e-300));
            let scaled = segment_lp_p(s * a, -s * a, h, p);
            prop_assert!((scaled - s.powf(p) * base).abs() <= 1e-12 * scaled.max(1e-300));
        }
    }
}
