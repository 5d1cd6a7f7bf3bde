//! Built-in oracle suite: each check compares a library result with an
//! independently computed reference and reports pass/fail.

use std::collections::HashSet;

use crate::adapt::{adaptive_loop_with, AdaptiveConfig};
use crate::assembly::{CrSystem, LinearBackend, Source};
use crate::crspace::{broken_seminorm_p, connect_to_conforming, interpolate_cr, segment_lp_p, CrFunction};
use crate::eigen::{iiss, DiscreteEigenpair, IissConfig};
use crate::error::Result;
use crate::mesh::{make_lshape_mesh, make_unit_square_mesh, TriangleMesh};
use crate::plap::{resolvent_scalar, solve_plaplacian, DcConfig};
use crate::quadrature::{gauss_legendre_unit, QuadratureRule};
use crate::sparse::{solve_spd, LinearSolveConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Knobs for exercising the suite itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Multiplies the closed-form jump integral before comparison; anything
    /// other than 1 should make the jump check fail.
    pub jump_scale: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { jump_scale: 1.0 }
    }
}

fn check(name: &'static str, worst: f64, tol: f64) -> CheckResult {
    CheckResult {
        name,
        passed: worst <= tol,
        detail: format!("max deviation {worst:.3e} (tolerance {tol:.0e})"),
    }
}

fn failed(name: &'static str, err: impl std::fmt::Display) -> CheckResult {
    CheckResult {
        name,
        passed: false,
        detail: format!("error: {err}"),
    }
}

struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
}

pub fn run_all(opts: &VerifyOptions) -> Vec<CheckResult> {
    vec![
        quadrature_exactness(),
        jump_closed_form(opts.jump_scale),
        resolvent_oracle(),
        interpolation_edge_means(),
        connection_reproduces_continuous(),
        nvb_similarity_classes(),
        area_conservation(),
        dorfler_argmax_every_level(),
        splitting_matches_direct_p2(),
        iiss_matches_power_iteration_p2(),
        eigen_residual_check(),
    ]
}

fn quadrature_exactness() -> CheckResult {
    let rule = QuadratureRule::<f64>::triangle_degree4();
    let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
    let mut worst = 0.0f64;
    for a in 0..=4u32 {
        for b in 0..=4 - a {
            for c in 0..=4 - a - b {
                // int over the reference triangle of l0^a l1^b l2^c, divided by its area
                let exact = 2.0 * fact(a) * fact(b) * fact(c) / fact(a + b + c + 2);
                let q: f64 = rule.iter().map(|(l, w)| w * l[0].powi(a as i32) * l[1].powi(b as i32) * l[2].powi(c as i32)).sum();
                worst = worst.max((q - exact).abs());
            }
        }
    }
    check("triangle rule exact to degree 4", worst, 1e-15)
}

fn jump_closed_form(scale: f64) -> CheckResult {
    let g = gauss_legendre_unit(16);
    let mut rng = Lcg(17);
    let mut worst = 0.0f64;
    for &p in &[1.2, 2.0, 2.5, 3.7] {
        for _ in 0..20 {
            let a = 4.0 * rng.next() - 2.0;
            let h = 0.01 + rng.next();
            // each half of the edge separately, panels graded towards the zero
            let mut half = 0.0;
            let mut hi = 1.0f64;
            for _ in 0..60 {
                let lo = hi / 2.0;
                half += g.iter().map(|&(t, w)| w * (a * (lo + t * (hi - lo))).abs().powf(p)).sum::<f64>() * (hi - lo);
                hi = lo;
            }
            let oracle = half * h;
            let closed = scale * segment_lp_p(a, -a, h, p);
            worst = worst.max(((closed - oracle) / oracle).abs());
        }
    }
    check("jump closed form vs Gauss", worst, 1e-12)
}

fn resolvent_oracle() -> CheckResult {
    let mut rng = Lcg(5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let r = 10f64.powf(8.0 * rng.next() - 4.0);
        let p = 1.05 + 30.0 * rng.next();
        let (mut lo, mut hi) = (0.0f64, r.max(1.0));
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if mid.powf(p - 1.0) + mid > r {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let s = resolvent_scalar(r, p);
        worst = worst.max((s - lo).abs() / (1.0 + lo));
    }
    check("resolvent vs bisection", worst, 1e-12)
}

fn interpolation_edge_means() -> CheckResult {
    let m = match make_unit_square_mesh::<f64>(8).and_then(|m| m.bisect(&[0, 5, 40])) {
        Ok(m) => m,
        Err(e) => return failed("interpolation keeps edge means", e),
    };
    let pi = std::f64::consts::PI;
    let f = |x: [f64; 2]| (pi * x[0]).sin() * (pi * x[1]).sin();
    let v = interpolate_cr(&m, f);
    let g = gauss_legendre_unit(10);
    // remainder of 3-point Gauss: h^7 (3!)^4 / (7 (6!)^3) max|f^(6)|, and
    // any sixth directional derivative of f is bounded by 8 pi^6
    let remainder = |h: f64| h.powi(7) * 1296.0 / (7.0 * 720f64.powi(3)) * 8.0 * pi.powi(6);
    let mut worst = 0.0f64;
    for e in 0..m.num_edges() {
        let [a, b] = m.edge(e).vertices;
        let (p, q) = (m.vertex(a), m.vertex(b));
        let h = m.face_size(e);
        let exact: f64 = h * g.iter().map(|&(s, w)| w * f([p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])])).sum::<f64>();
        // the CR function is linear on the edge with midpoint value = dof
        worst = worst.max((h * v.dofs()[e] - exact).abs() / (remainder(h) + 1e-15));
    }
    CheckResult {
        name: "interpolation keeps edge means",
        passed: worst <= 1.0,
        detail: format!("max deviation {worst:.3e} of the 3-point Gauss remainder bound"),
    }
}

fn connection_reproduces_continuous() -> CheckResult {
    let m = match make_lshape_mesh::<f64>(3) {
        Ok(m) => m,
        Err(e) => return failed("connection reproduces continuous functions", e),
    };
    let mut rng = Lcg(3);
    let nodal: Vec<f64> = (0..m.num_vertices())
        .map(|z| if m.is_boundary_vertex(z) { 0.0 } else { rng.next() })
        .collect();
    let dofs = m.edges().iter().map(|e| 0.5 * (nodal[e.vertices[0]] + nodal[e.vertices[1]])).collect();
    let worst = CrFunction::from_dofs(&m, dofs)
        .and_then(|v| connect_to_conforming(&m, &v))
        .map(|ev| ev.dofs().iter().zip(&nodal).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    match worst {
        Ok(w) => check("connection reproduces continuous functions", w, 1e-15),
        Err(e) => failed("connection reproduces continuous functions", e),
    }
}

fn angle_class(m: &TriangleMesh<f64>, t: usize) -> [i64; 3] {
    let p = m.element_coords(t);
    let mut ang = [0.0f64; 3];
    for i in 0..3 {
        let (a, b, c) = (p[i], p[(i + 1) % 3], p[(i + 2) % 3]);
        let u = [b[0] - a[0], b[1] - a[1]];
        let v = [c[0] - a[0], c[1] - a[1]];
        ang[i] = (u[0] * v[1] - u[1] * v[0]).atan2(u[0] * v[0] + u[1] * v[1]);
    }
    ang.sort_by(|x, y| x.total_cmp(y));
    ang.map(|x| (x * 1e6).round() as i64)
}

fn nvb_similarity_classes() -> CheckResult {
    let name = "NVB similarity classes over 6 uniform rounds";
    // right isosceles cells and a scalene pair that exercises all four classes
    let scalene = TriangleMesh::new(
        vec![[0.0, 0.0], [1.0, 0.0], [0.3, 0.8], [1.2, 0.9]],
        vec![[0, 1, 2], [1, 3, 2]],
        vec![0, 1],
    );
    let mut worst = String::new();
    let mut passed = true;
    for m0 in [make_lshape_mesh::<f64>(1), scalene] {
        let m0 = match m0 {
            Ok(m) => m,
            Err(e) => return failed(name, e),
        };
        let mut m = m0.clone();
        let mut classes = HashSet::new();
        for round in 0..=6 {
            classes.extend((0..m.num_elements()).map(|t| angle_class(&m, t)));
            if round < 6 {
                m = match m.refine_uniform(1) {
                    Ok(m) => m,
                    Err(e) => return failed(name, e),
                };
            }
        }
        let limit = 4 * m0.num_elements();
        passed &= classes.len() <= limit;
        worst.push_str(&format!("{} classes (bound {limit}); ", classes.len()));
    }
    CheckResult {
        name,
        passed,
        detail: worst.trim_end_matches("; ").to_string(),
    }
}

fn area_conservation() -> CheckResult {
    let mut m = match make_lshape_mesh::<f64>(2) {
        Ok(m) => m,
        Err(e) => return failed("area conservation under refinement", e),
    };
    let mut rng = Lcg(11);
    let mut worst = 0.0f64;
    for _ in 0..8 {
        let marked: Vec<usize> = (0..m.num_elements()).filter(|_| rng.next() < 0.2).collect();
        m = match m.bisect(&marked) {
            Ok(m) => m,
            Err(e) => return failed("area conservation under refinement", e),
        };
        worst = worst.max((m.total_area() - 3.0).abs() / 3.0);
    }
    check("area conservation under refinement", worst, 1e-12)
}

fn dorfler_argmax_every_level() -> CheckResult {
    let name = "Dörfler set holds the argmax on every level";
    let mut cfg = AdaptiveConfig::new(2.5);
    cfg.max_level = 4;
    let mut levels = 0;
    let mut bad = 0;
    let res = make_unit_square_mesh::<f64>(6).and_then(|m| {
        adaptive_loop_with(m, &cfg, |l| {
            levels += 1;
            let arg = |v: &[f64]| (0..v.len()).filter(|&t| v[t] == v.iter().cloned().fold(0.0, f64::max)).collect::<Vec<_>>();
            let ok1 = arg(&l.estimate.eta1).iter().any(|t| l.marked.contains(t));
            let ok2 = arg(&l.estimate.eta2).iter().any(|t| l.marked.contains(t));
            if !(ok1 && ok2) {
                bad += 1;
            }
            Ok(())
        })
    });
    match res {
        Ok(_) => CheckResult {
            name,
            passed: bad == 0,
            detail: format!("{levels} levels, {bad} without a marked maximizer"),
        },
        Err(e) => failed(name, e),
    }
}

fn splitting_matches_direct_p2() -> CheckResult {
    let name = "p=2 splitting vs direct solve";
    let run = || -> Result<f64> {
        let m = make_unit_square_mesh::<f64>(16)?;
        let sys = CrSystem::new(&m, LinearBackend::Cg(LinearSolveConfig::default()))?;
        let b = sys.load_vector(&m, Source::Constant(1.0));
        let direct = solve_spd(sys.stiffness(), &b, &LinearSolveConfig::default())?;
        let u = solve_plaplacian(&m, Source::Constant(1.0), 2.0, &DcConfig::default())?;
        let u = sys.restrict(&u);
        Ok((sys.l2_dist_sq(&u, &direct) / sys.l2_sq(&direct)).sqrt())
    };
    match run() {
        Ok(d) => check(name, d, 1e-4),
        Err(e) => failed(name, e),
    }
}

/// Smallest eigenvalue of `K x = mu M x` by inverse iteration with CG solves.
pub fn power_iteration_p2(mesh: &TriangleMesh<f64>) -> Result<(f64, Vec<f64>)> {
    let sys = CrSystem::new(mesh, LinearBackend::Cg(LinearSolveConfig::default()))?;
    let k = sys.stiffness();
    let mass = sys.mass();
    let cfg = LinearSolveConfig {
        tolerance: 1e-13,
        ..LinearSolveConfig::default()
    };
    let mut x = vec![1.0; sys.num_free()];
    let mut mu = 0.0;
    for _ in 0..1000 {
        let b: Vec<f64> = x.iter().zip(mass).map(|(a, m)| a * m).collect();
        let y = solve_spd(k, &b, &cfg)?;
        let ky = k.matvec(&y);
        let num: f64 = y.iter().zip(&ky).map(|(a, b)| a * b).sum();
        let den = sys.l2_sq(&y);
        let next = num / den;
        x = y.iter().map(|v| v / den.sqrt()).collect();
        let done = (next - mu).abs() <= 1e-15 * next;
        mu = next;
        if done {
            break;
        }
    }
    Ok((mu, x))
}

fn iiss_matches_power_iteration_p2() -> CheckResult {
    let name = "p=2 inverse iteration vs power iteration";
    let run = || -> Result<f64> {
        let m = make_unit_square_mesh::<f64>(10)?;
        let pair = iiss(&m, 2.0, &IissConfig::default())?;
        let (mu, _) = power_iteration_p2(&m)?;
        Ok(((pair.mu - mu) / mu).abs())
    };
    match run() {
        Ok(d) => check(name, d, 1e-5),
        Err(e) => failed(name, e),
    }
}

/// `max_v |a(u; v) - mu (|u|^{p-2} u, v)| / ||v||_{1,p}` over `samples`
/// random CR test functions, with the mass term by the degree-4 rule.
pub fn eigen_residual(mesh: &TriangleMesh<f64>, pair: &DiscreteEigenpair<f64>, p: f64, samples: usize, seed: u64) -> Result<f64> {
    let rule = QuadratureRule::<f64>::triangle_degree4();
    let u = &pair.u;
    let mut rng = Lcg(seed);
    let mut worst = 0.0f64;
    let grads: Vec<[f64; 2]> = (0..mesh.num_elements()).map(|t| u.broken_gradient(mesh, t)).collect::<Result<_>>()?;
    for _ in 0..samples {
        let dofs = mesh.edges().iter().map(|e| if e.is_boundary() { 0.0 } else { 2.0 * rng.next() - 1.0 }).collect();
        let v = CrFunction::from_dofs(mesh, dofs)?;
        let mut stiff = 0.0;
        let mut mass = 0.0;
        for t in 0..mesh.num_elements() {
            let gu = grads[t];
            let gv = v.broken_gradient(mesh, t)?;
            let r = gu[0].hypot(gu[1]);
            let c = if r > 0.0 { r.powf(p - 2.0) } else { 0.0 };
            stiff += c * (gu[0] * gv[0] + gu[1] * gv[1]) * mesh.area(t);
            let m: f64 = rule
                .iter()
                .map(|(l, w)| {
                    let uu = u.eval_on_element(mesh, t, l).unwrap_or(f64::NAN);
                    let vv = v.eval_on_element(mesh, t, l).unwrap_or(f64::NAN);
                    w * uu.abs().powf(p - 2.0) * uu * vv
                })
                .sum();
            mass += m * mesh.area(t);
        }
        let norm = broken_seminorm_p(mesh, &v, p)?.powf(1.0 / p);
        worst = worst.max((stiff - pair.mu * mass).abs() / norm);
    }
    Ok(worst)
}

fn eigen_residual_check() -> CheckResult {
    let name = "discrete eigen-equation residual";
    let run = || -> Result<f64> {
        let mut worst = 0.0f64;
        for p in [1.5, 2.0, 3.0] {
            let m = make_unit_square_mesh::<f64>(8)?;
            let pair = iiss(&m, p, &IissConfig::default())?;
            worst = worst.max(eigen_residual(&m, &pair, p, 20, 1)?);
        }
        Ok(worst)
    };
    match run() {
        Ok(d) => check(name, d, 1e-3),
        Err(e) => failed(name, e),
    }
}
