//! Error estimators, Dörfler marking, the guaranteed lower bound and the
//! adaptive loop SOLVE -> ESTIMATE -> MARK -> REFINE.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use crate::crspace::{check_exponent, jump_lp_norm_p, lp_norm_p, CrFunction, Region};
use crate::eigen::{iiss_with, prolongate_warm, DiscreteEigenpair, IissConfig, WarmStart};
use crate::error::{Error, Result};
use crate::mesh::{read_plapmesh, Refinement, make_lshape_mesh, make_unit_square_mesh, TriangleMesh};
use crate::real::Real;

#[derive(Debug, Clone)]
pub struct EstimatorReport<T> {
    /// `mu^q h_T^q ||u||_{L^p(T)}^p` per element.
    pub eta1: Vec<T>,
    /// Face jump terms per element, interior faces weighted 1/2.
    pub eta2: Vec<T>,
    pub eta1_total: T,
    pub eta2_total: T,
}

/// Per-element indicators of the pair `(mu, u)`.
pub fn estimate<T: Real>(mesh: &TriangleMesh<T>, mu: T, u: &CrFunction<T>, p: T) -> Result<EstimatorReport<T>> {
    check_exponent(p)?;
    u.check(mesh)?;
    if !(mu > T::zero()) {
        return Err(Error::invalid("eigenvalue must be positive"));
    }
    let q = p / (p - T::one());
    let muq = mu.powf(q);
    let half = T::lit(0.5);
    let face: Vec<T> = (0..mesh.num_edges())
        .into_par_iter()
        .map(|e| {
            let w = if mesh.edge(e).is_boundary() { T::one() } else { half };
            w * mesh.face_size(e) * jump_lp_norm_p(mesh, u, e, p).unwrap_or_else(|_| T::nan())
        })
        .collect();
    let eta1: Vec<T> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|t| {
            let lp = lp_norm_p(mesh, u, p, Region::Elements(&[t])).unwrap_or_else(|_| T::nan());
            muq * mesh.element_size(t).powf(q) * lp
        })
        .collect();
    let eta2: Vec<T> = (0..mesh.num_elements())
        .map(|t| mesh.element_edges(t).iter().map(|&e| face[e]).sum())
        .collect();
    Ok(EstimatorReport {
        eta1_total: eta1.iter().copied().sum(),
        eta2_total: eta2.iter().copied().sum(),
        eta1,
        eta2,
    })
}

/// Smallest greedy set whose indicator sum reaches `theta` times the total.
/// Values are taken in descending order with ties broken by ascending index,
/// so the set always holds a maximizer. All-zero input marks the last element.
pub fn dorfler_mark<T: Real>(values: &[T], theta: T) -> Result<Vec<usize>> {
    if !(theta > T::zero() && theta <= T::one()) {
        return Err(Error::invalid("theta must lie in (0, 1]"));
    }
    if values.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
        return Err(Error::invalid("indicators must be finite and nonnegative"));
    }
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    // summing in the same order makes theta = 1 select exactly the positives
    let total: T = order.iter().map(|&i| values[i]).sum();
    if total == T::zero() {
        return Ok(vec![values.len() - 1]);
    }
    let goal = theta * total;
    let mut acc = T::zero();
    let mut marked = Vec::new();
    for &i in &order {
        marked.push(i);
        acc += values[i];
        if acc >= goal {
            break;
        }
    }
    Ok(marked)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBound<T> {
    /// `[mu^{1/p} / (1 + 2 M mu^{1/p})]^p`, present when the guard holds.
    pub value: Option<T>,
    /// `2 M mu^{1/p}`; the bound is asserted only when this is below one.
    pub guard: T,
}

impl<T: Real> LowerBound<T> {
    pub fn guard_ok(&self) -> bool {
        self.value.is_some()
    }
}

/// Guaranteed lower bound from `mu` and the largest element diameter. The
/// guard uses `mu` in place of the unknown exact eigenvalue.
pub fn lower_bound<T: Real>(mu: T, max_diam: T, p: T) -> Result<LowerBound<T>> {
    check_exponent(p)?;
    if !(mu > T::zero()) {
        return Err(Error::invalid("eigenvalue must be positive"));
    }
    let root = mu.powf(T::one() / p);
    let guard = T::lit(2.0) * max_diam * root;
    let value = (guard < T::one()).then(|| (root / (T::one() + guard)).powf(p));
    Ok(LowerBound { value, guard })
}

/// `lambda_ref^{1/p} - mu^{1/p} / (1 + 2 M mu^{1/p})`.
pub fn e_mu<T: Real>(lambda_ref: T, mu: T, max_diam: T, p: T) -> T {
    let root = mu.powf(T::one() / p);
    lambda_ref.powf(T::one() / p) - root / (T::one() + T::lit(2.0) * max_diam * root)
}

/// Initial triangulation.
#[derive(Debug, Clone)]
pub enum Domain {
    /// Unit square with `n x n` cells.
    Square(usize),
    /// `(0,2)^2 \ [1,2)^2` with `n x n` cells per unit block.
    LShape(usize),
    File(PathBuf),
}

impl Domain {
    pub fn initial_mesh<T: Real>(&self) -> Result<TriangleMesh<T>> {
        match self {
            Domain::Square(n) => make_unit_square_mesh(*n),
            Domain::LShape(n) => make_lshape_mesh(*n),
            Domain::File(path) => {
                let f = std::fs::File::open(path)?;
                read_plapmesh(std::io::BufReader::new(f))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveConfig<T> {
    pub p: T,
    pub theta: T,
    /// Relative change of `mu` between levels that ends the loop.
    pub eps_k: T,
    /// Maximal level index.
    pub max_level: usize,
    pub iiss: IissConfig<T>,
    pub lambda_ref: Option<T>,
    /// Bisection rounds applied to each marked element (and its
    /// descendants) per refinement step.
    pub bisections: usize,
}

impl<T: Real> AdaptiveConfig<T> {
    pub fn new(p: T) -> Self {
        AdaptiveConfig {
            p,
            theta: T::lit(0.6),
            eps_k: T::lit(1e-4),
            max_level: 9,
            iiss: IissConfig::default(),
            lambda_ref: None,
            bisections: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_exponent(self.p)?;
        if !(self.theta > T::zero() && self.theta <= T::one()) {
            return Err(Error::invalid("theta must lie in (0, 1]"));
        }
        if !(self.eps_k > T::zero()) || !self.eps_k.is_finite() {
            return Err(Error::invalid("eps_k must be positive"));
        }
        if self.bisections == 0 {
            return Err(Error::invalid("marked elements need at least one bisection"));
        }
        if let Some(l) = self.lambda_ref {
            if !(l > T::zero()) || !l.is_finite() {
                return Err(Error::invalid("lambda_ref must be positive"));
            }
        }
        self.iiss.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelRecord<T> {
    pub k: usize,
    /// Number of interior edges.
    pub dof: usize,
    pub num_elements: usize,
    pub mu: T,
    pub eta1: T,
    pub eta2: T,
    pub glb: LowerBound<T>,
    /// `|mu_{k-1} - mu_k| / mu_{k-1}`, absent at level 0.
    pub rel_change: Option<T>,
    pub max_diam: T,
    pub max_eta1: T,
    pub max_eta2: T,
    /// Largest indicators among the marked elements.
    pub max_marked_eta1: T,
    pub max_marked_eta2: T,
    pub num_marked: usize,
    /// Whether the marked set holds a maximizer of both indicators.
    pub argmax_marked: bool,
    pub iiss_iterations: usize,
    pub dc_iterations: usize,
    pub seconds: f64,
}

/// Everything available to an observer at the end of a level.
pub struct Level<'a, T> {
    pub record: &'a LevelRecord<T>,
    pub mesh: &'a TriangleMesh<T>,
    pub pair: &'a DiscreteEigenpair<T>,
    pub estimate: &'a EstimatorReport<T>,
    pub marked: &'a [usize],
}

#[derive(Debug, Clone)]
pub struct AdaptiveTrace<T> {
    pub records: Vec<LevelRecord<T>>,
    pub mesh: TriangleMesh<T>,
    pub pair: DiscreteEigenpair<T>,
    /// Set when a reference eigenvalue was configured.
    pub e_mu: Option<T>,
}

impl<T: Real> AdaptiveTrace<T> {
    pub fn last(&self) -> &LevelRecord<T> {
        self.records.last().expect("a trace has at least one level")
    }
}

pub fn adaptive_loop<T: Real>(mesh: TriangleMesh<T>, cfg: &AdaptiveConfig<T>) -> Result<AdaptiveTrace<T>> {
    adaptive_loop_with(mesh, cfg, |_| Ok(()))
}

/// Runs the adaptive loop, calling `observer` once per finished level.
pub fn adaptive_loop_with<T: Real>(
    mut mesh: TriangleMesh<T>,
    cfg: &AdaptiveConfig<T>,
    mut observer: impl FnMut(&Level<'_, T>) -> Result<()>,
) -> Result<AdaptiveTrace<T>> {
    cfg.validate()?;
    let p = cfg.p;
    let mut records: Vec<LevelRecord<T>> = Vec::new();
    let mut warm: Option<WarmStart<T>> = None;
    for k in 0.. {
        let started = Instant::now();
        let (pair, next_warm) = iiss_with(&mesh, p, &cfg.iiss, warm.take()).map_err(|e| e.at_level(k))?;
        let est = estimate(&mesh, pair.mu, &pair.u, p).map_err(|e| e.at_level(k))?;
        let mut marked = dorfler_mark(&est.eta1, cfg.theta)?;
        marked.extend(dorfler_mark(&est.eta2, cfg.theta)?);
        marked.sort_unstable();
        marked.dedup();

        let max_of = |v: &[T], set: &mut dyn Iterator<Item = usize>| set.map(|t| v[t]).fold(T::zero(), T::max);
        let max_eta1 = max_of(&est.eta1, &mut (0..mesh.num_elements()));
        let max_eta2 = max_of(&est.eta2, &mut (0..mesh.num_elements()));
        let max_marked_eta1 = max_of(&est.eta1, &mut marked.iter().copied());
        let max_marked_eta2 = max_of(&est.eta2, &mut marked.iter().copied());
        let rel_change = records.last().map(|r| ((r.mu - pair.mu) / r.mu).abs());
        let max_diam = mesh.max_diam();
        let record = LevelRecord {
            k,
            dof: mesh.num_interior_edges(),
            num_elements: mesh.num_elements(),
            mu: pair.mu,
            eta1: est.eta1_total,
            eta2: est.eta2_total,
            glb: lower_bound(pair.mu, max_diam, p)?,
            rel_change,
            max_diam,
            max_eta1,
            max_eta2,
            max_marked_eta1,
            max_marked_eta2,
            num_marked: marked.len(),
            argmax_marked: max_marked_eta1 == max_eta1 && max_marked_eta2 == max_eta2,
            iiss_iterations: pair.iterations,
            dc_iterations: pair.dc_iterations,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "level {k}: dof {} mu {:.8e} eta1 {:.3e} eta2 {:.3e} iiss {} dc {}",
            record.dof,
            record.mu.as_f64(),
            record.eta1.as_f64(),
            record.eta2.as_f64(),
            record.iiss_iterations,
            record.dc_iterations
        );
        observer(&Level {
            record: &record,
            mesh: &mesh,
            pair: &pair,
            estimate: &est,
            marked: &marked,
        })?;
        records.push(record);

        let converged = rel_change.is_some_and(|r| r < cfg.eps_k);
        if converged || k >= cfg.max_level {
            let e_mu = cfg.lambda_ref.map(|l| e_mu(l, pair.mu, max_diam, p));
            return Ok(AdaptiveTrace {
                records,
                mesh,
                pair,
                e_mu,
            });
        }
        let refinement = refine_marked(&mesh, &marked, cfg.bisections).map_err(|e| e.at_level(k))?;
        warm = Some(prolongate_warm(&mesh, &next_warm, &refinement)?);
        mesh = refinement.mesh;
    }
    unreachable!()
}

/// Bisects the marked elements, then their descendants, `rounds` times.
/// The parent map refers to the input mesh.
pub fn refine_marked<T: Real>(mesh: &TriangleMesh<T>, marked: &[usize], rounds: usize) -> Result<Refinement<T>> {
    let mut r = mesh.bisect_with_parents(marked)?;
    let mut flag = vec![false; mesh.num_elements()];
    for &t in marked {
        flag[t] = true;
    }
    for _ in 1..rounds {
        let next_marked: Vec<usize> = (0..r.mesh.num_elements()).filter(|&t| flag[r.parent[t]]).collect();
        let step = r.mesh.bisect_with_parents(&next_marked)?;
        let parent = step.parent.iter().map(|&q| r.parent[q]).collect();
        r = Refinement { mesh: step.mesh, parent };
    }
    Ok(r)
}

pub const TRACE_HEADER: &str = "k,dof,mu,eta1,eta2,glb,glb_guard_ok,rel_change,seconds";

/// One CSV row; floats carry nine significant digits. The `seconds` column is
/// written as zero unless `timing` is set, which keeps reruns byte-identical.
pub fn write_trace_row<T: Real, W: Write>(w: &mut W, r: &LevelRecord<T>, timing: bool) -> Result<()> {
    let glb = r.glb.value.map(|v| format!("{:.8e}", v.as_f64())).unwrap_or_default();
    let rel = r.rel_change.map(|v| format!("{:.8e}", v.as_f64())).unwrap_or_default();
    let secs = if timing { r.seconds } else { 0.0 };
    writeln!(
        w,
        "{},{},{:.8e},{:.8e},{:.8e},{},{},{},{:.8e}",
        r.k,
        r.dof,
        r.mu.as_f64(),
        r.eta1.as_f64(),
        r.eta2.as_f64(),
        glb,
        r.glb.guard_ok(),
        rel,
        secs
    )?;
    Ok(())
}

pub fn write_trace_footer<T: Real, W: Write>(w: &mut W, e_mu: T) -> Result<()> {
    writeln!(w, "# e_mu={:.8e}", e_mu.as_f64())?;
    Ok(())
}

pub fn write_trace_csv<T: Real, W: Write>(trace: &AdaptiveTrace<T>, mut w: W, timing: bool) -> Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for r in &trace.records {
        write_trace_row(&mut w, r, timing)?;
    }
    if let Some(e) = trace.e_mu {
        write_trace_footer(&mut w, e)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crspace::{interpolate_cr_full, jump_lp_norm_p};
    use proptest::prelude::*;

    #[test]
    fn dorfler_examples() {
        assert_eq!(dorfler_mark(&[4.0, 3.0, 2.0, 1.0], 0.6).unwrap(), vec![0, 1]);
        assert_eq!(dorfler_mark(&[1.0, 0.0, 3.0, 0.0], 1.0).unwrap(), vec![2, 0]);
        assert_eq!(dorfler_mark(&[0.0f64; 4], 0.5).unwrap(), vec![3]);
        assert_eq!(dorfler_mark(&[2.0, 5.0, 5.0, 1.0], 0.38).unwrap(), vec![1]);
        assert_eq!(dorfler_mark(&[2.0, 5.0, 5.0, 1.0], 0.5).unwrap(), vec![1, 2]);
        assert!(dorfler_mark(&[1.0], 0.0).is_err());
        assert!(dorfler_mark(&[-1.0], 0.5).is_err());
    }

    proptest! {
        #[test]
        fn dorfler_is_minimal_and_holds_argmax(vals in prop::collection::vec(0u8..6, 1..40), theta in 0.05f64..1.0) {
            let v: Vec<f64> = vals.iter().map(|&x| x as f64).collect();
            let m = dorfler_mark(&v, theta).unwrap();
            let total: f64 = v.iter().sum();
            let max = v.iter().cloned().fold(0.0, f64::max);
            prop_assert!(m.iter().any(|&i| v[i] == max));
            if total > 0.0 {
                let s: f64 = m.iter().map(|&i| v[i]).sum();
                prop_assert!(s >= theta * total * (1.0 - 1e-12));
                // no smaller set can reach the goal: dropping the smallest marked
                // value from a descending-sorted prefix falls short
                let least = m.iter().map(|&i| v[i]).fold(f64::MAX, f64::min);
                prop_assert!(s - least < theta * total);
                // ties at the cutoff go to the lowest index
                for i in 0..v.len() {
                    if !m.contains(&i) {
                        prop_assert!(v[i] < least || m.iter().all(|&j| v[j] > v[i] || j < i));
                    }
                }
            }
        }

        #[test]
        fn dorfler_is_permutation_equivariant_without_ties(perm_seed in 0u64..1000) {
            let v: Vec<f64> = (0..20).map(|i| ((i * 7919 + 13) % 101) as f64 + i as f64 * 1e-3).collect();
            let mut idx: Vec<usize> = (0..20).collect();
            let mut s = perm_seed;
            for i in (1..idx.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                idx.swap(i, (s >> 33) as usize % (i + 1));
            }
            let w: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
            let mut a: Vec<usize> = dorfler_mark(&v, 0.6).unwrap();
            let mut b: Vec<usize> = dorfler_mark(&w, 0.6).unwrap().into_iter().map(|j| idx[j]).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn lower_bound_formula() {
        let lb = lower_bound(19.738f64, 1e-12, 2.0).unwrap();
        assert!((lb.value.unwrap() - 19.738).abs() / 19.738 <= 1e-9);
        let lb = lower_bound(19.738f64, 0.01, 2.0).unwrap();
        let r = 19.738f64.sqrt();
        let oracle = (r / (1.0 + 0.02 * r)) * (r / (1.0 + 0.02 * r));
        assert!((lb.value.unwrap() - oracle).abs() <= 1e-13 * oracle);
        assert!(lb.value.unwrap() <= 19.738);
        let lb = lower_bound(19.738, 0.2, 2.0).unwrap();
        assert!(!lb.guard_ok());
        assert!(lb.guard > 1.0);
        assert!(e_mu(19.73932, 19.738, 0.01, 2.0) > 0.0);
    }

    #[test]
    fn estimator_bookkeeping() {
        let m = make_unit_square_mesh::<f64>(4).unwrap().bisect(&[3, 8]).unwrap();
        let u = crate::crspace::interpolate_cr(&m, |x| (3.0 * x[0]).sin() * x[1] * (1.0 - x[1]) + x[0] * x[0]);
        let p = 2.5;
        let est = estimate(&m, 20.0, &u, p).unwrap();
        let face: f64 = (0..m.num_edges()).map(|e| m.face_size(e) * jump_lp_norm_p(&m, &u, e, p).unwrap()).sum();
        assert!((est.eta2_total - face).abs() <= 1e-12 * face);
        let s1: f64 = est.eta1.iter().sum();
        assert!((s1 - est.eta1_total).abs() <= 1e-12 * s1);
        assert!(est.eta1.iter().chain(&est.eta2).all(|&v| v >= 0.0));
    }

    #[test]
    fn continuous_function_has_no_interior_jump_terms() {
        // with boundary dofs kept, a global linear function is continuous
        let m = make_unit_square_mesh::<f64>(3).unwrap();
        let u = interpolate_cr_full(&m, |x| 2.0 * x[0] - x[1]);
        for e in 0..m.num_edges() {
            if !m.edge(e).is_boundary() {
                assert!(jump_lp_norm_p(&m, &u, e, 2.0).unwrap() < 1e-28);
            }
        }
    }

    #[test]
    fn eta1_scales_with_the_domain() {
        let p = 3.0f64;
        let q = p / (p - 1.0);
        let s = 2.5f64;
        let small = TriangleMesh::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]], vec![0]).unwrap();
        let big = TriangleMesh::new(vec![[0.0, 0.0], [s, 0.0], [0.0, s]], vec![[0, 1, 2]], vec![0]).unwrap();
        let ones_small = crate::crspace::interpolate_cr_full(&small, |_| 1.0);
        let ones_big = crate::crspace::interpolate_cr_full(&big, |_| 1.0);
        let e_small = estimate(&small, 4.0, &ones_small, p).unwrap().eta1[0];
        let e_big = estimate(&big, 4.0, &ones_big, p).unwrap().eta1[0];
        assert!((e_big / e_small - s.powf(q + 2.0)).abs() < 1e-12 * s.powf(q + 2.0));
    }

    #[test]
    fn zero_levels_gives_one_record() {
        let mut cfg = AdaptiveConfig::new(2.0);
        cfg.max_level = 0;
        let trace = adaptive_loop(make_unit_square_mesh::<f64>(4).unwrap(), &cfg).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert!(trace.records[0].rel_change.is_none());
        let mut out = Vec::new();
        write_trace_csv(&trace, &mut out, false).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with(TRACE_HEADER));
        assert_eq!(text.lines().count(), 2);
    }
}
