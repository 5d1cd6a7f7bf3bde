//! Crouzeix-Raviart stiffness and load assembly over the free (interior-edge)
//! degrees of freedom, and the per-mesh linear system reused by the nonlinear
//! solvers.

use crate::cholesky::SparseCholesky;
use crate::crspace::CrFunction;
use crate::error::{Error, Result};
use crate::mesh::{MeshStamp, TriangleMesh};
use crate::quadrature::QuadratureRule;
use crate::real::{dot2, Real};
use crate::sparse::{pcg, LinearSolveConfig, SparseSymMatrix};

const NONE: usize = usize::MAX;

/// Numbering of the interior edges.
#[derive(Debug, Clone)]
pub struct DofMap {
    free_of_edge: Vec<usize>,
    edge_of_free: Vec<usize>,
}

impl DofMap {
    pub fn new<T: Real>(mesh: &TriangleMesh<T>) -> Self {
        let mut free_of_edge = vec![NONE; mesh.num_edges()];
        let mut edge_of_free = Vec::with_capacity(mesh.num_interior_edges());
        for (e, edge) in mesh.edges().iter().enumerate() {
            if !edge.is_boundary() {
                free_of_edge[e] = edge_of_free.len();
                edge_of_free.push(e);
            }
        }
        DofMap {
            free_of_edge,
            edge_of_free,
        }
    }

    pub fn num_free(&self) -> usize {
        self.edge_of_free.len()
    }

    pub fn free_index(&self, edge: usize) -> Option<usize> {
        match self.free_of_edge[edge] {
            NONE => None,
            i => Some(i),
        }
    }

    pub fn edge(&self, free: usize) -> usize {
        self.edge_of_free[free]
    }
}

/// Right-hand side source term `f`.
#[derive(Clone, Copy)]
pub enum Source<'a, T> {
    Zero,
    Constant(T),
    /// Evaluated at physical quadrature points.
    Point(&'a (dyn Fn([T; 2]) -> T + Sync)),
    /// Evaluated per element at barycentric quadrature points.
    Element(&'a (dyn Fn(usize, [T; 3]) -> T + Sync)),
}

/// Gradients of the three CR basis functions `phi_i = 1 - 2 lambda_i` on `t`.
pub fn basis_gradients<T: Real>(mesh: &TriangleMesh<T>, t: usize) -> Result<[[T; 2]; 3]> {
    let g = mesh.barycentric_gradients(t)?;
    let m2 = T::lit(-2.0);
    Ok(g.map(|gi| [m2 * gi[0], m2 * gi[1]]))
}

/// `K_ij = |T| grad(phi_i) . grad(phi_j)`.
pub fn element_stiffness<T: Real>(mesh: &TriangleMesh<T>, t: usize) -> Result<[[T; 3]; 3]> {
    let g = basis_gradients(mesh, t)?;
    let a = mesh.area(t);
    let mut k = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = a * dot2(g[i], g[j]);
        }
    }
    Ok(k)
}

/// Stiffness matrix over the interior edges.
pub fn assemble_cr_stiffness<T: Real>(mesh: &TriangleMesh<T>) -> Result<SparseSymMatrix<T>> {
    let dofs = DofMap::new(mesh);
    assemble_with(mesh, &dofs)
}

fn assemble_with<T: Real>(mesh: &TriangleMesh<T>, dofs: &DofMap) -> Result<SparseSymMatrix<T>> {
    let mut trip = Vec::with_capacity(9 * mesh.num_elements());
    for t in 0..mesh.num_elements() {
        let k = element_stiffness(mesh, t)?;
        let ids = mesh.element_edges(t).map(|e| dofs.free_index(e));
        for i in 0..3 {
            let Some(fi) = ids[i] else { continue };
            for j in 0..3 {
                if let Some(fj) = ids[j] {
                    trip.push((fi, fj, k[i][j]));
                }
            }
        }
    }
    SparseSymMatrix::from_triplets(dofs.num_free(), &trip)
}

/// `b_i = sum_T [ -|T| g_T . grad(phi_i) + int_T f phi_i ]` over interior
/// edges, i.e. the broken weak form of `div(g) + f` without face terms.
pub fn assemble_rhs<T: Real>(mesh: &TriangleMesh<T>, f: Source<'_, T>, g_field: &[[T; 2]]) -> Result<Vec<T>> {
    if g_field.len() != mesh.num_elements() {
        return Err(Error::invalid(format!(
            "vector field has {} entries for {} elements",
            g_field.len(),
            mesh.num_elements()
        )));
    }
    let sys = CrSystem::with_backend(mesh, None)?;
    let mut b = sys.load_vector(mesh, f);
    sys.add_divergence(g_field, &mut b);
    Ok(b)
}

/// How [`CrSystem::solve`] treats the stiffness matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearBackend<T> {
    /// Factor once, then every solve is a pair of triangular sweeps.
    Cholesky,
    /// Jacobi-preconditioned conjugate gradients, warm-started when a guess
    /// is supplied.
    Cg(LinearSolveConfig<T>),
}

impl<T: Real> Default for LinearBackend<T> {
    fn default() -> Self {
        LinearBackend::Cholesky
    }
}

#[derive(Debug, Clone)]
enum Solver<T> {
    None,
    Cholesky(SparseCholesky<T>),
    Cg(LinearSolveConfig<T>),
}

/// Precomputed per-mesh data for repeated Poisson solves with varying
/// right-hand sides.
#[derive(Debug, Clone)]
pub struct CrSystem<T> {
    stamp: MeshStamp,
    dofs: DofMap,
    element_dofs: Vec<[usize; 3]>,
    basis_grads: Vec<[[T; 2]; 3]>,
    areas: Vec<T>,
    mass: Vec<T>,
    stiffness: SparseSymMatrix<T>,
    solver: Solver<T>,
    rule: QuadratureRule<T>,
}

impl<T: Real> CrSystem<T> {
    pub fn new(mesh: &TriangleMesh<T>, backend: LinearBackend<T>) -> Result<Self> {
        Self::with_backend(mesh, Some(backend))
    }

    fn with_backend(mesh: &TriangleMesh<T>, backend: Option<LinearBackend<T>>) -> Result<Self> {
        let dofs = DofMap::new(mesh);
        let n = mesh.num_elements();
        let mut basis_grads = Vec::with_capacity(n);
        let mut areas = Vec::with_capacity(n);
        let mut element_dofs = Vec::with_capacity(n);
        for t in 0..n {
            basis_grads.push(basis_gradients(mesh, t)?);
            areas.push(mesh.area(t));
            element_dofs.push(mesh.element_edges(t).map(|e| dofs.free_index(e).unwrap_or(NONE)));
        }
        // the CR mass matrix is diagonal: int_T phi_i phi_j = |T|/3 delta_ij
        let third = T::one() / T::lit(3.0);
        let mut mass = vec![T::zero(); dofs.num_free()];
        for (t, ids) in element_dofs.iter().enumerate() {
            for &i in ids {
                if i != NONE {
                    mass[i] += areas[t] * third;
                }
            }
        }
        let stiffness = match backend {
            None => SparseSymMatrix::from_triplets(0, &[])?,
            Some(_) => assemble_with(mesh, &dofs)?,
        };
        let solver = match backend {
            None => Solver::None,
            Some(_) if dofs.num_free() == 0 => Solver::None,
            Some(LinearBackend::Cholesky) => Solver::Cholesky(SparseCholesky::factor(&stiffness)?),
            Some(LinearBackend::Cg(cfg)) => {
                cfg.validate()?;
                Solver::Cg(cfg)
            }
        };
        Ok(CrSystem {
            stamp: mesh.stamp(),
            dofs,
            element_dofs,
            basis_grads,
            areas,
            mass,
            stiffness,
            solver,
            rule: QuadratureRule::triangle_degree4(),
        })
    }

    pub fn stamp(&self) -> MeshStamp {
        self.stamp
    }

    pub fn dof_map(&self) -> &DofMap {
        &self.dofs
    }

    pub fn num_free(&self) -> usize {
        self.dofs.num_free()
    }

    pub fn stiffness(&self) -> &SparseSymMatrix<T> {
        &self.stiffness
    }

    pub fn area(&self, t: usize) -> T {
        self.areas[t]
    }

    pub fn basis_grads(&self, t: usize) -> &[[T; 2]; 3] {
        &self.basis_grads[t]
    }

    /// Diagonal of the CR mass matrix over the free dofs.
    pub fn mass(&self) -> &[T] {
        &self.mass
    }

    /// Squared L2 norm of a free-dof vector.
    pub fn l2_sq(&self, x: &[T]) -> T {
        x.iter().zip(&self.mass).map(|(&v, &m)| m * v * v).sum()
    }

    /// Squared L2 norm of the difference of two free-dof vectors.
    pub fn l2_dist_sq(&self, x: &[T], y: &[T]) -> T {
        x.iter().zip(y).zip(&self.mass).map(|((&a, &b), &m)| m * (a - b) * (a - b)).sum()
    }

    pub fn num_elements(&self) -> usize {
        self.areas.len()
    }

    /// Free-dof indices of the element's edges; boundary edges map to `None`.
    pub fn element_free_dofs(&self, t: usize) -> [Option<usize>; 3] {
        self.element_dofs[t].map(|i| if i == NONE { None } else { Some(i) })
    }

    /// Constant gradient on `t` of a free-dof vector.
    #[inline]
    pub fn free_gradient(&self, t: usize, x: &[T]) -> [T; 2] {
        let g = &self.basis_grads[t];
        let mut out = [T::zero(); 2];
        for (i, &k) in self.element_dofs[t].iter().enumerate() {
            if k != NONE {
                out[0] += x[k] * g[i][0];
                out[1] += x[k] * g[i][1];
            }
        }
        out
    }

    /// `int_T f phi_i` accumulated over the free dofs.
    pub fn load_vector(&self, mesh: &TriangleMesh<T>, f: Source<'_, T>) -> Vec<T> {
        let mut b = vec![T::zero(); self.num_free()];
        let third = T::one() / T::lit(3.0);
        let two = T::lit(2.0);
        for (t, ids) in self.element_dofs.iter().enumerate() {
            let area = self.areas[t];
            let local: [T; 3] = match f {
                Source::Zero => continue,
                Source::Constant(c) => [c * area * third; 3],
                Source::Point(func) => {
                    let mut acc = [T::zero(); 3];
                    for (l, w) in self.rule.iter() {
                        let fx = func(mesh.point_at(t, l)) * w;
                        for i in 0..3 {
                            acc[i] += fx * (T::one() - two * l[i]);
                        }
                    }
                    acc.map(|a| a * area)
                }
                Source::Element(func) => {
                    let mut acc = [T::zero(); 3];
                    for (l, w) in self.rule.iter() {
                        let fx = func(t, l) * w;
                        for i in 0..3 {
                            acc[i] += fx * (T::one() - two * l[i]);
                        }
                    }
                    acc.map(|a| a * area)
                }
            };
            for i in 0..3 {
                if ids[i] != NONE {
                    b[ids[i]] += local[i];
                }
            }
        }
        b
    }

    /// `b_i -= sum_T |T| g_T . grad(phi_i)`.
    pub fn add_divergence(&self, g: &[[T; 2]], b: &mut [T]) {
        for (t, ids) in self.element_dofs.iter().enumerate() {
            let area = self.areas[t];
            let grads = &self.basis_grads[t];
            for i in 0..3 {
                if ids[i] != NONE {
                    b[ids[i]] -= area * dot2(g[t], grads[i]);
                }
            }
        }
    }

    /// Constant gradient on `t` of the function with edge values `dofs`
    /// (indexed by edge).
    #[inline]
    pub fn gradient(&self, t: usize, edge_ids: [usize; 3], dofs: &[T]) -> [T; 2] {
        let g = &self.basis_grads[t];
        let d = edge_ids.map(|e| dofs[e]);
        [
            d[0] * g[0][0] + d[1] * g[1][0] + d[2] * g[2][0],
            d[0] * g[0][1] + d[1] * g[1][1] + d[2] * g[2][1],
        ]
    }

    /// Solves `A x = b` over the free dofs.
    pub fn solve(&self, b: &[T], guess: Option<&[T]>) -> Result<Vec<T>> {
        if b.len() != self.num_free() {
            return Err(Error::invalid("right-hand side length does not match the free dofs"));
        }
        match &self.solver {
            Solver::None if self.num_free() == 0 => Ok(Vec::new()),
            Solver::None => Err(Error::invalid("system was assembled without a solver")),
            Solver::Cholesky(f) => Ok(f.solve(b)),
            Solver::Cg(cfg) => {
                let mut x = guess.map_or_else(|| vec![T::zero(); b.len()], <[T]>::to_vec);
                pcg(&self.stiffness, b, &mut x, cfg)?;
                Ok(x)
            }
        }
    }

    /// Embeds a free-dof vector into a CR function with zero boundary values.
    pub fn expand(&self, mesh: &TriangleMesh<T>, free: &[T]) -> Result<CrFunction<T>> {
        let mut dofs = vec![T::zero(); mesh.num_edges()];
        for (i, &v) in free.iter().enumerate() {
            dofs[self.dofs.edge(i)] = v;
        }
        CrFunction::from_dofs(mesh, dofs)
    }

    pub fn restrict(&self, v: &CrFunction<T>) -> Vec<T> {
        (0..self.num_free()).map(|i| v.dofs()[self.dofs.edge(i)]).collect()
    }
}
