//! Quadrature on the reference triangle (barycentric points, weights summing
//! to one) and Gauss-Legendre rules on `[0, 1]`.

use crate::real::Real;

#[derive(Debug, Clone)]
pub struct QuadratureRule<T> {
    pub points: Vec<[T; 3]>,
    pub weights: Vec<T>,
    /// Highest total polynomial degree integrated exactly.
    pub degree: usize,
}

impl<T: Real> QuadratureRule<T> {
    /// Symmetric 6-point rule of degree 4 (Dunavant).
    pub fn triangle_degree4() -> Self {
        const A1: f64 = 0.445_948_490_915_964_886_318_329_253_883_3;
        const W1: f64 = 0.223_381_589_678_011_465_963_154_856_034_6;
        const A2: f64 = 0.091_576_213_509_770_743_459_571_463_402_2;
        const W2: f64 = 0.109_951_743_655_321_867_370_178_477_298_7;
        let mut points = Vec::with_capacity(6);
        let mut weights = Vec::with_capacity(6);
        for (a, w) in [(A1, W1), (A2, W2)] {
            let b = 1.0 - 2.0 * a;
            for p in [[b, a, a], [a, b, a], [a, a, b]] {
                points.push(p.map(T::lit));
                weights.push(T::lit(w));
            }
        }
        QuadratureRule {
            points,
            weights,
            degree: 4,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ([T; 3], T)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Three-point Gauss-Legendre rule on `[0, 1]`, exact for degree 5.
pub fn gauss3_unit<T: Real>() -> [(T, T); 3] {
    let r = (0.6f64).sqrt() / 2.0;
    [
        (T::lit(0.5 - r), T::lit(5.0 / 18.0)),
        (T::lit(0.5), T::lit(8.0 / 18.0)),
        (T::lit(0.5 + r), T::lit(5.0 / 18.0)),
    ]
}

/// `n`-point Gauss-Legendre nodes and weights on [0, 1], by Newton
/// iteration on the Legendre polynomial. Used for reference integrals.
pub fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (x + 1.0), 0.5 * w));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// Average of `l0^a l1^b l2^c` over a triangle: `2 a! b! c! / (a+b+c+2)!`.
    fn monomial_mean(a: u32, b: u32, c: u32) -> f64 {
        2.0 * factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2)
    }

    #[test]
    fn degree4_rule_is_exact_up_to_degree_4() {
        let q = QuadratureRule::<f64>::triangle_degree4();
        assert_eq!(q.len(), 6);
        assert!(q.weights.iter().all(|&w| w > 0.0));
        assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for p in &q.points {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        for deg in 0..=4u32 {
            for a in 0..=deg {
                for b in 0..=(deg - a) {
                    let c = deg - a - b;
                    let approx: f64 = q
                        .iter()
                        .map(|(l, w)| w * l[0].powi(a as i32) * l[1].powi(b as i32) * l[2].powi(c as i32))
                        .sum();
                    assert!((approx - monomial_mean(a, b, c)).abs() < 1e-15, "({a},{b},{c})");
                }
            }
        }
        // and not degree 5
        let approx: f64 = q.iter().map(|(l, w)| w * l[0].powi(5)).sum();
        assert!((approx - monomial_mean(5, 0, 0)).abs() > 1e-6);
    }

    #[test]
    fn gauss3_is_exact_to_degree_5() {
        let g = gauss3_unit::<f64>();
        for k in 0..=5 {
            let s: f64 = g.iter().map(|&(x, w)| w * x.powi(k)).sum();
            assert!((s - 1.0 / (k as f64 + 1.0)).abs() < 1e-15);
        }
    }
}
