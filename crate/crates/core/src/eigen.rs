//! First eigenpair of the discrete p-Laplacian by normalized inverse
//! iteration of sublinear supersolutions, with the Rayleigh quotient as the
//! reported eigenvalue.

use crate::assembly::Source;
use crate::crspace::{broken_seminorm_p, check_exponent, linf_norm, lp_norm_p, CrFunction, Region};
use crate::error::{Error, Result};
use crate::mesh::{Refinement, TriangleMesh};
use crate::plap::{DcConfig, DcSolver, DcState};
use crate::real::Real;

/// `J(v) = sum_T int_T |grad v|^p / int |v|^p`.
pub fn rayleigh_quotient<T: Real>(mesh: &TriangleMesh<T>, v: &CrFunction<T>, p: T) -> Result<T> {
    let den = lp_norm_p(mesh, v, p, Region::All)?;
    if !(den > T::zero()) {
        return Err(Error::invalid("Rayleigh quotient of the zero function"));
    }
    Ok(broken_seminorm_p(mesh, v, p)? / den)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IissConfig<T> {
    /// Relative change of `1/||u_m||_inf^{p-1}` that stops the iteration.
    pub eps_m: T,
    pub max_iterations: usize,
    pub dc: DcConfig<T>,
}

impl<T: Real> Default for IissConfig<T> {
    fn default() -> Self {
        IissConfig {
            eps_m: T::lit(1e-5),
            max_iterations: 1000,
            dc: DcConfig::default(),
        }
    }
}

impl<T: Real> IissConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_m > T::zero()) || !self.eps_m.is_finite() {
            return Err(Error::invalid("eps_m must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max IISS iterations must be at least 1"));
        }
        self.dc.validate()
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteEigenpair<T> {
    /// Rayleigh quotient of `u`.
    pub mu: T,
    /// Nonnegative-mean representative with unit L^p norm.
    pub u: CrFunction<T>,
    pub generation: u32,
    pub iterations: usize,
    /// Final value of the stopping statistic `1/||u_m||_inf^{p-1}`.
    pub lambda_inf: T,
    /// Total splitting iterations over all inner solves.
    pub dc_iterations: usize,
}

/// Everything needed to restart the iteration on a refined mesh.
#[derive(Debug, Clone)]
pub struct WarmStart<T> {
    /// Last unnormalized iterate, on the mesh it was computed on.
    pub u: CrFunction<T>,
    pub state: DcState<T>,
}

/// Runs the iteration on `mesh`. Without `warm` the first iterate is the
/// torsion function; otherwise it is `warm.u` with its splitting fields.
pub fn iiss_with<T: Real>(
    mesh: &TriangleMesh<T>,
    p: T,
    cfg: &IissConfig<T>,
    warm: Option<WarmStart<T>>,
) -> Result<(DiscreteEigenpair<T>, WarmStart<T>)> {
    check_exponent(p)?;
    cfg.validate()?;
    let solver = DcSolver::new(mesh, p, cfg.dc)?;
    let sys = solver.system();
    let mut dc_iterations = 0;
    let mut state = match warm {
        Some(w) => {
            w.u.check(mesh)?;
            let mut state = w.state;
            state.u = sys.restrict(&w.u);
            state
        }
        None => {
            let mut state = solver.initial_state();
            solver.solve(Source::Constant(T::one()), &mut state)?;
            dc_iterations += state.iterations;
            state
        }
    };
    let pm1 = p - T::one();
    let mut u = solver.to_function(&state)?;
    let mut lambda = linf_norm(mesh, &u)?.powf(-pm1);
    if !(lambda.is_finite() && lambda > T::zero()) {
        return Err(Error::invalid("initial iterate vanishes"));
    }
    let mut m = 0;
    let mut rel = T::infinity();
    loop {
        if m == cfg.max_iterations {
            return Err(Error::NonConvergence {
                what: "inverse iteration",
                iterations: m,
                last_change: rel.as_f64(),
            });
        }
        m += 1;
        let inv = T::one() / linf_norm(mesh, &u)?;
        let prev = &u;
        let rhs = |t: usize, l: [T; 3]| (prev.eval_unchecked(mesh, t, l) * inv).signed_pow(pm1);
        let load = sys.load_vector(mesh, Source::Element(&rhs));
        solver.solve_with_load(&load, &mut state)?;
        dc_iterations += state.iterations;
        u = solver.to_function(&state)?;
        let next = linf_norm(mesh, &u)?.powf(-pm1);
        rel = ((next - lambda) / lambda).abs();
        log::debug!("iiss_iter {m} {:.8e} {:.8e}", next.as_f64(), rel.as_f64());
        lambda = next;
        if rel < cfg.eps_m {
            break;
        }
    }

    let mu = rayleigh_quotient(mesh, &u, p)?;
    let mut normalized = u.clone();
    let norm = lp_norm_p(mesh, &u, p, Region::All)?.powf(T::one() / p);
    let mean: T = (0..mesh.num_elements())
        .map(|t| mesh.area(t) * u.local_dofs(mesh, t).iter().copied().sum::<T>())
        .sum();
    let sign = if mean < T::zero() { -T::one() } else { T::one() };
    normalized.scale(sign / norm);
    Ok((
        DiscreteEigenpair {
            mu,
            u: normalized,
            generation: mesh.generation(),
            iterations: m,
            lambda_inf: lambda,
            dc_iterations,
        },
        WarmStart { u, state },
    ))
}

pub fn iiss<T: Real>(mesh: &TriangleMesh<T>, p: T, cfg: &IissConfig<T>) -> Result<DiscreteEigenpair<T>> {
    Ok(iiss_with(mesh, p, cfg, None)?.0)
}

/// Transfers `v` to the refined mesh by evaluating it at the new edge
/// midpoints inside the parent elements. Boundary values stay zero.
pub fn prolongate<T: Real>(old: &TriangleMesh<T>, v: &CrFunction<T>, refinement: &Refinement<T>) -> Result<CrFunction<T>> {
    v.check(old)?;
    let new = &refinement.mesh;
    if refinement.parent.len() != new.num_elements() {
        return Err(Error::invalid("parent map does not match the refined mesh"));
    }
    let mut dofs = vec![T::zero(); new.num_edges()];
    let mut done = vec![false; new.num_edges()];
    for (t, &parent) in refinement.parent.iter().enumerate() {
        for e in new.element_edges(t) {
            if done[e] {
                continue;
            }
            done[e] = true;
            if !new.edge(e).is_boundary() {
                let l = old.barycentric(parent, new.edge_midpoint(e));
                dofs[e] = v.eval_unchecked(old, parent, l);
            }
        }
    }
    CrFunction::from_dofs(new, dofs)
}

/// Children inherit the per-element splitting fields of their parent.
pub fn prolongate_state<T: Real>(state: &DcState<T>, refinement: &Refinement<T>) -> DcState<T> {
    let pick = |f: &[[T; 2]]| refinement.parent.iter().map(|&q| f[q]).collect::<Vec<_>>();
    DcState {
        xi: pick(&state.xi),
        nu: pick(&state.nu),
        u: Vec::new(),
        ..state.clone()
    }
}

/// Moves a warm start to the refined mesh.
pub fn prolongate_warm<T: Real>(old: &TriangleMesh<T>, warm: &WarmStart<T>, refinement: &Refinement<T>) -> Result<WarmStart<T>> {
    Ok(WarmStart {
        u: prolongate(old, &warm.u, refinement)?,
        state: prolongate_state(&warm.state, refinement),
    })
}
