use nalgebra::{DMatrix, SymmetricEigen};
use plap_afem::assembly::{CrSystem, LinearBackend};
use plap_afem::crspace::CrFunction;
use plap_afem::eigen::{iiss, rayleigh_quotient, IissConfig};
use plap_afem::mesh::{make_lshape_mesh, make_unit_square_mesh, TriangleMesh};
use plap_afem::verify::eigen_residual;

/// Smallest generalized eigenpair of the CR stiffness and (diagonal) mass
/// matrices via a dense symmetric eigensolver.
fn dense_first_eigenpair(mesh: &TriangleMesh<f64>) -> (f64, Vec<f64>) {
    let sys = CrSystem::new(mesh, LinearBackend::Cholesky).unwrap();
    let n = sys.num_free();
    let k = sys.stiffness();
    let s: Vec<f64> = sys.mass().iter().map(|m| 1.0 / m.sqrt()).collect();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let (cols, vals) = k.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            a[(i, j)] = s[i] * v * s[j];
        }
    }
    let eig = SymmetricEigen::new(a);
    let (imin, &mu) = eig.eigenvalues.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)).unwrap();
    let y = eig.eigenvectors.column(imin);
    (mu, (0..n).map(|i| y[i] * s[i]).collect())
}

#[test]
fn p2_fixed_point_matches_dense_eigenvector() {
    for mesh in [make_unit_square_mesh::<f64>(12).unwrap(), make_lshape_mesh(4).unwrap()] {
        let pair = iiss(&mesh, 2.0, &IissConfig::default()).unwrap();
        let (mu, x) = dense_first_eigenpair(&mesh);
        assert!(((pair.mu - mu) / mu).abs() < 1e-6, "{} vs {mu}", pair.mu);
        let sys = CrSystem::new(&mesh, LinearBackend::Cholesky).unwrap();
        let u = sys.restrict(&pair.u);
        // angle in the mass inner product
        let m = sys.mass();
        let dot: f64 = u.iter().zip(&x).zip(m).map(|((a, b), w)| a * b * w).sum();
        let cos = dot.abs() / (sys.l2_sq(&u).sqrt() * sys.l2_sq(&x).sqrt());
        let angle = cos.min(1.0).acos();
        assert!(angle <= 1e-3, "angle {angle}");
    }
}

#[test]
fn eigen_equation_holds_weakly() {
    let mesh = make_unit_square_mesh::<f64>(10).unwrap().bisect(&[0, 7, 33, 100]).unwrap();
    for p in [1.5, 2.5, 4.0] {
        let pair = iiss(&mesh, p, &IissConfig::default()).unwrap();
        let r = eigen_residual(&mesh, &pair, p, 20, 42).unwrap();
        assert!(r <= 1e-3, "p={p}: residual {r}");
    }
}

#[test]
fn pair_invariants() {
    let mesh = make_lshape_mesh::<f64>(4).unwrap();
    for p in [1.5, 3.0] {
        let pair = iiss(&mesh, p, &IissConfig::default()).unwrap();
        assert!(pair.mu > 0.0);
        let norm = plap_afem::crspace::lp_norm_p(&mesh, &pair.u, p, plap_afem::crspace::Region::All).unwrap();
        assert!((norm - 1.0).abs() <= 1e-10);
        assert!(pair.u.dofs().iter().all(|&d| d >= -1e-8));
        assert_eq!(pair.generation, mesh.generation());
        let mut flipped = pair.u.clone();
        flipped.scale(-1.0);
        assert_eq!(rayleigh_quotient(&mesh, &flipped, p).unwrap(), rayleigh_quotient(&mesh, &pair.u, p).unwrap());
    }
}

#[test]
fn discrete_poincare_constant_is_uniform() {
    // calibrate on the coarsest mesh, then check refinements and random functions
    let p = 2.5;
    let coarse = make_unit_square_mesh::<f64>(4).unwrap();
    let c = 0.5 * iiss(&coarse, p, &IissConfig::default()).unwrap().mu;
    let mut mesh = coarse;
    let mut seed = 1u64;
    for _ in 0..4 {
        mesh = mesh.refine_uniform(1).unwrap();
        assert!(iiss(&mesh, p, &IissConfig::default()).unwrap().mu >= c);
        for _ in 0..5 {
            let dofs = mesh
                .edges()
                .iter()
                .map(|e| {
                    seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    if e.is_boundary() { 0.0 } else { (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.3 }
                })
                .collect();
            let v = CrFunction::from_dofs(&mesh, dofs).unwrap();
            assert!(rayleigh_quotient(&mesh, &v, p).unwrap() >= c);
        }
    }
}

#[test]
fn single_precision_agrees_with_double() {
    let m64 = make_unit_square_mesh::<f64>(8).unwrap();
    let m32 = make_unit_square_mesh::<f32>(8).unwrap();
    let a = iiss(&m64, 2.0, &IissConfig::default()).unwrap();
    let b = iiss(&m32, 2.0f32, &IissConfig::default()).unwrap();
    assert!(((b.mu as f64 - a.mu) / a.mu).abs() < 1e-4, "{} vs {}", b.mu, a.mu);
}
