//! Decomposition-coordination solver for `-div(|grad u|^{p-2} grad u) = f`
//! with homogeneous Dirichlet data on the CR space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{CrSystem, LinearBackend, Source};
use crate::crspace::{check_exponent, CrFunction};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::real::{norm2, Real};

/// Solves `s^{p-1} + s = r` for `s >= 0`.
pub fn resolvent_scalar<T: Real>(r: T, p: T) -> T {
    if !(r > T::zero()) {
        return T::zero();
    }
    let pm1 = p - T::one();
    if (pm1 - T::one()).abs() <= T::epsilon() {
        return r / T::lit(2.0);
    }
    let phi = |s: T| s.powf(pm1) + s - r;
    // both terms are nonnegative, so s <= r and s^{p-1} <= r
    let mut lo = T::zero();
    let mut hi = r.min(r.powf(T::one() / pm1));
    if phi(hi) <= T::zero() {
        return hi;
    }
    // start from the larger of the two one-term approximations
    let mut s = (r / T::lit(2.0)).min(hi).max(r.powf(T::one() / pm1).min(hi) / T::lit(2.0));
    let tol = T::lit(4.0) * T::epsilon();
    for _ in 0..200 {
        let f = phi(s);
        if f == T::zero() {
            return s;
        }
        if f > T::zero() {
            hi = s;
        } else {
            lo = s;
        }
        let df = pm1 * s.powf(pm1 - T::one()) + T::one();
        let mut next = s - f / df;
        if !(next > lo && next < hi) {
            next = (lo + hi) / T::lit(2.0);
        }
        if (next - s).abs() <= tol * next.max(T::min_positive_value()) || hi - lo <= tol * hi {
            return next;
        }
        s = next;
    }
    s
}

/// Solves `|nu|^{p-2} nu + nu = w` for the vector `nu`.
pub fn resolvent_vector<T: Real>(w: [T; 2], p: T) -> [T; 2] {
    let r = norm2(w);
    if r == T::zero() {
        return [T::zero(); 2];
    }
    let s = resolvent_scalar(r, p) / r;
    [w[0] * s, w[1] * s]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcConfig<T> {
    /// Relative L2 change that stops the outer iteration.
    pub eps_n: T,
    pub max_iterations: usize,
    pub seed: u64,
    /// L2 norms below this count as zero and switch to the absolute test.
    pub zero_floor: T,
    pub backend: LinearBackend<T>,
}

impl<T: Real> Default for DcConfig<T> {
    fn default() -> Self {
        DcConfig {
            eps_n: T::lit(1e-5),
            max_iterations: 2000,
            seed: 0,
            zero_floor: T::lit(1e-12),
            backend: LinearBackend::Cholesky,
        }
    }
}

impl<T: Real> DcConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_n > T::zero()) || !self.eps_n.is_finite() {
            return Err(Error::invalid("eps_n must be positive"));
        }
        if self.max_iterations < 2 {
            return Err(Error::invalid("the splitting needs at least two outer iterations"));
        }
        if !(self.zero_floor >= T::zero()) {
            return Err(Error::invalid("zero_floor must be nonnegative"));
        }
        Ok(())
    }
}

/// Iterate of the splitting: the two per-element vector fields and the
/// current solution over the free dofs.
#[derive(Debug, Clone)]
pub struct DcState<T> {
    pub xi: Vec<[T; 2]>,
    pub nu: Vec<[T; 2]>,
    /// Free-dof values of `u`.
    pub u: Vec<T>,
    pub iterations: usize,
    pub rel_change: T,
    /// `max_T | |grad u|^{p-2} grad u - xi |`, zero at an exact fixed point.
    pub optimality_residual: T,
    /// `max_T |grad u - nu|`.
    pub splitting_gap: T,
}

impl<T: Real> DcState<T> {
    /// Fields with i.i.d. U(0, 0.5) components from a seeded generator and
    /// `u = 0`.
    pub fn random(num_elements: usize, num_free: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || -> [T; 2] { [T::lit(rng.gen_range(0.0..0.5)), T::lit(rng.gen_range(0.0..0.5))] };
        let xi: Vec<[T; 2]> = (0..num_elements).map(|_| draw()).collect();
        let nu: Vec<[T; 2]> = (0..num_elements).map(|_| draw()).collect();
        DcState {
            xi,
            nu,
            u: vec![T::zero(); num_free],
            iterations: 0,
            rel_change: T::zero(),
            optimality_residual: T::zero(),
            splitting_gap: T::zero(),
        }
    }

    fn check(&self, sys: &CrSystem<T>) -> Result<()> {
        if self.xi.len() != sys.num_elements() || self.nu.len() != sys.num_elements() || self.u.len() != sys.num_free() {
            return Err(Error::invalid("splitting state does not match the mesh"));
        }
        Ok(())
    }
}

/// Splitting solver bound to one mesh; the linear operator is set up once.
#[derive(Debug)]
pub struct DcSolver<'m, T> {
    mesh: &'m TriangleMesh<T>,
    system: CrSystem<T>,
    p: T,
    cfg: DcConfig<T>,
}

impl<'m, T: Real> DcSolver<'m, T> {
    pub fn new(mesh: &'m TriangleMesh<T>, p: T, cfg: DcConfig<T>) -> Result<Self> {
        check_exponent(p)?;
        cfg.validate()?;
        let system = CrSystem::new(mesh, cfg.backend)?;
        Ok(DcSolver { mesh, system, p, cfg })
    }

    pub fn mesh(&self) -> &'m TriangleMesh<T> {
        self.mesh
    }

    pub fn system(&self) -> &CrSystem<T> {
        &self.system
    }

    pub fn p(&self) -> T {
        self.p
    }

    pub fn config(&self) -> &DcConfig<T> {
        &self.cfg
    }

    pub fn initial_state(&self) -> DcState<T> {
        DcState::random(self.mesh.num_elements(), self.system.num_free(), self.cfg.seed)
    }

    /// Runs the splitting from `state` until the relative L2 change of `u`
    /// drops to `eps_n`.
    pub fn solve(&self, f: Source<'_, T>, state: &mut DcState<T>) -> Result<()> {
        let load = self.system.load_vector(self.mesh, f);
        self.solve_with_load(&load, state)
    }

    /// As [`solve`](Self::solve) with a precomputed load vector.
    pub fn solve_with_load(&self, load: &[T], state: &mut DcState<T>) -> Result<()> {
        self.solve_observed(load, state, |_, _| {})
    }

    /// As [`solve_with_load`](Self::solve_with_load), reporting the iteration
    /// count and relative change after every sweep.
    pub fn solve_observed(&self, load: &[T], state: &mut DcState<T>, mut observer: impl FnMut(usize, T)) -> Result<()> {
        state.check(&self.system)?;
        if load.len() != self.system.num_free() {
            return Err(Error::invalid("load vector does not match the free dofs"));
        }
        let sys = &self.system;
        let ne = sys.num_elements();
        let mut g = vec![[T::zero(); 2]; ne];
        let mut b = vec![T::zero(); load.len()];
        let mut prev_sq = sys.l2_sq(&state.u);
        let floor_sq = self.cfg.zero_floor * self.cfg.zero_floor;
        for n in 1..=self.cfg.max_iterations {
            // linear step: -lap u = div(xi - nu) + f
            for t in 0..ne {
                g[t] = [state.xi[t][0] - state.nu[t][0], state.xi[t][1] - state.nu[t][1]];
            }
            b.copy_from_slice(load);
            sys.add_divergence(&g, &mut b);
            let u = sys.solve(&b, Some(&state.u))?;
            // resolvent and multiplier update per element
            for t in 0..ne {
                let gu = sys.free_gradient(t, &u);
                let w = [state.xi[t][0] + gu[0], state.xi[t][1] + gu[1]];
                let nu = resolvent_vector(w, self.p);
                state.nu[t] = nu;
                state.xi[t] = [state.xi[t][0] + gu[0] - nu[0], state.xi[t][1] + gu[1] - nu[1]];
            }
            let diff_sq = sys.l2_dist_sq(&u, &state.u);
            let cur_sq = sys.l2_sq(&u);
            state.u = u;
            state.iterations = n;
            let rel = if prev_sq > floor_sq {
                (diff_sq / prev_sq).sqrt()
            } else {
                cur_sq.sqrt()
            };
            state.rel_change = rel;
            log::trace!("dc_iter {n} {rel:.8e}");
            observer(n, rel);
            prev_sq = cur_sq;
            if n >= 2 && rel <= self.cfg.eps_n {
                self.diagnose(state);
                return Ok(());
            }
            if !rel.is_finite() {
                break;
            }
        }
        Err(Error::NonConvergence {
            what: "decomposition coordination",
            iterations: state.iterations,
            last_change: state.rel_change.as_f64(),
        })
    }

    fn diagnose(&self, state: &mut DcState<T>) {
        let two = T::lit(2.0);
        let mut opt = T::zero();
        let mut gap = T::zero();
        for t in 0..self.system.num_elements() {
            let gu = self.system.free_gradient(t, &state.u);
            let r = norm2(gu);
            let c = if r > T::zero() { r.powf(self.p - two) } else { T::zero() };
            let flux = [c * gu[0], c * gu[1]];
            opt = opt.max(norm2([flux[0] - state.xi[t][0], flux[1] - state.xi[t][1]]));
            gap = gap.max(norm2([gu[0] - state.nu[t][0], gu[1] - state.nu[t][1]]));
        }
        state.optimality_residual = opt;
        state.splitting_gap = gap;
    }

    pub fn to_function(&self, state: &DcState<T>) -> Result<CrFunction<T>> {
        self.system.expand(self.mesh, &state.u)
    }
}

/// One p-Laplace solve from randomly seeded fields.
pub fn solve_plaplacian_state<T: Real>(
    mesh: &TriangleMesh<T>,
    f: Source<'_, T>,
    p: T,
    cfg: &DcConfig<T>,
) -> Result<(CrFunction<T>, DcState<T>)> {
    let solver = DcSolver::new(mesh, p, *cfg)?;
    let mut state = solver.initial_state();
    solver.solve(f, &mut state)?;
    Ok((solver.to_function(&state)?, state))
}

pub fn solve_plaplacian<T: Real>(mesh: &TriangleMesh<T>, f: Source<'_, T>, p: T, cfg: &DcConfig<T>) -> Result<CrFunction<T>> {
    Ok(solve_plaplacian_state(mesh, f, p, cfg)?.0)
}

/// The torsion function, `f = 1`.
pub fn torsion<T: Real>(mesh: &TriangleMesh<T>, p: T, cfg: &DcConfig<T>) -> Result<CrFunction<T>> {
    solve_plaplacian(mesh, Source::Constant(T::one()), p, cfg)
}
