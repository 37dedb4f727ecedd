//! One-coordinate objective `ℓ(γ_j)` with everything else held fixed, its
//! derivatives and its stationary points.

use nalgebra::{Matrix2, Matrix3};

/// `log(γ⁻¹ + s) − q²/(γ⁻¹ + s) − (2a + 1) log γ⁻¹ + 2b γ⁻¹`.
///
/// At `γ = 0` this is the limit: 0 when `b = 0`, `+∞` when `b > 0`.
pub fn ell_gamma_j(gamma: f64, s: f64, q: f64, a: f64, b: f64) -> f64 {
    if gamma == 0.0 {
        return if b > 0.0 { f64::INFINITY } else { 0.0 };
    }
    // same quantity written without γ⁻¹ + s, which overflows for tiny γ
    let u = 1.0 + gamma * s;
    u.ln() + 2.0 * a * gamma.ln() - q * q * gamma / u + 2.0 * b / gamma
}

/// `dℓ/dγ`.
pub fn d_ell(gamma: f64, s: f64, q: f64, a: f64, b: f64) -> f64 {
    let u = 1.0 + gamma * s;
    s / u - q * q / (u * u) + 2.0 * a / gamma - 2.0 * b / (gamma * gamma)
}

/// `d²ℓ/dγ²`.
pub fn d2_ell(gamma: f64, s: f64, q: f64, a: f64, b: f64) -> f64 {
    let u = 1.0 + gamma * s;
    -2.0 * a / (gamma * gamma) + 4.0 * b / (gamma * gamma * gamma)
        - (s * s * s * gamma + s * s - 2.0 * q * q * s) / (u * u * u)
}

/// `[c₃, c₂, c₁, c₀]` of the cubic whose roots are the stationary points:
/// `dℓ/dγ = 2 (c₃γ³ + c₂γ² + c₁γ + c₀) / (γ²(1 + γs)²)`.
pub fn cubic_coefficients(s: f64, q: f64, a: f64, b: f64) -> [f64; 4] {
    [
        (0.5 + a) * s * s,
        (0.5 + 2.0 * a) * s - 0.5 * q * q - b * s * s,
        a - 2.0 * b * s,
        -b,
    ]
}

fn eval_cubic(c: &[f64; 4], x: f64) -> (f64, f64) {
    let p = ((c[0] * x + c[1]) * x + c[2]) * x + c[3];
    let dp = (3.0 * c[0] * x + 2.0 * c[1]) * x + c[2];
    (p, dp)
}

/// Real roots with positive real part of `c₃γ³ + c₂γ² + c₁γ + c₀`, taken from
/// the eigenvalues of the companion matrix and polished with two Newton
/// steps. Exact zero roots (vanishing trailing coefficients) are factored out
/// first. Sorted ascending.
pub fn positive_real_cubic_roots(c: [f64; 4]) -> Vec<f64> {
    if c[0] == 0.0 || !c.iter().all(|v| v.is_finite()) {
        return Vec::new();
    }
    let (p2, p1, p0) = (c[1] / c[0], c[2] / c[0], c[3] / c[0]);
    let eig: Vec<nalgebra::Complex<f64>> = if p0 != 0.0 {
        #[rustfmt::skip]
        let companion = Matrix3::new(
            -p2, -p1, -p0,
            1.0, 0.0, 0.0,
            0.0, 1.0, 0.0,
        );
        companion.complex_eigenvalues().iter().copied().collect()
    } else if p1 != 0.0 {
        let companion = Matrix2::new(-p2, -p1, 1.0, 0.0);
        companion.complex_eigenvalues().iter().copied().collect()
    } else {
        vec![nalgebra::Complex::new(-p2, 0.0)]
    };
    let mut out: Vec<f64> = eig
        .iter()
        .filter(|z| z.re > 0.0 && z.im.abs() <= 1e-9 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..2 {
                let (p, dp) = eval_cubic(&c, x);
                if dp != 0.0 {
                    let nx = x - p / dp;
                    if nx > 0.0 && nx.is_finite() {
                        x = nx;
                    }
                }
            }
            x
        })
        .collect();
    out.sort_by(|x, y| x.total_cmp(y));
    out
}

/// Positive stationary points of `ℓ(γ_j)`.
pub fn stationary_points(s: f64, q: f64, a: f64, b: f64) -> Vec<f64> {
    positive_real_cubic_roots(cubic_coefficients(s, q, a, b))
}

/// The best `γ_j`: local minima among `candidates` (positive second
/// derivative), compared with the `γ = 0` boundary when `b = 0`. Returns 0 if
/// the boundary is at least as good as every interior minimum.
pub fn select_gamma(candidates: &[f64], s: f64, q: f64, a: f64, b: f64) -> f64 {
    let mut best_gamma = 0.0;
    let mut best = ell_gamma_j(0.0, s, q, a, b);
    for &g in candidates {
        if !(g > 0.0 && g.is_finite()) || d2_ell(g, s, q, a, b) <= 0.0 {
            continue;
        }
        let v = ell_gamma_j(g, s, q, a, b);
        if v < best {
            best = v;
            best_gamma = g;
        }
    }
    best_gamma
}

/// [`stationary_points`] followed by [`select_gamma`].
pub fn best_gamma(s: f64, q: f64, a: f64, b: f64) -> f64 {
    select_gamma(&stationary_points(s, q, a, b), s, q, a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ell_examples() {
        assert!((ell_gamma_j(1.0, 1.0, 2.0, 0.0, 0.0) - (2f64.ln() - 2.0)).abs() < 1e-14);
        assert!(ell_gamma_j(1e-14, 1.0, 2.0, 0.0, 0.0).abs() < 1e-12);
        let v = ell_gamma_j(3.0, 1.0, 2.0, 0.0, 0.0);
        assert!((v - (3f64.ln() + (4.0f64 / 3.0).ln() - 3.0)).abs() < 1e-14);
        assert!((v + 1.6137).abs() < 1e-4);
        assert_eq!(ell_gamma_j(0.0, 1.0, 2.0, 1.0, 0.0), 0.0);
        assert_eq!(ell_gamma_j(0.0, 1.0, 2.0, 0.0, 0.5), f64::INFINITY);
    }

    #[test]
    fn uninformative_root() {
        assert_eq!(stationary_points(1.0, 2.0, 0.0, 0.0).len(), 1);
        assert!((stationary_points(1.0, 2.0, 0.0, 0.0)[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_cubic() {
        let r = positive_real_cubic_roots([1.0, -6.0, 11.0, -6.0]);
        assert_eq!(r.len(), 3);
        for (x, want) in r.iter().zip([1.0, 2.0, 3.0]) {
            assert!((x - want).abs() < 1e-12);
        }
    }

    /// Sign changes of the cubic on a fine log grid, refined by bisection.
    fn bisection_roots(c: [f64; 4], lo: f64, hi: f64) -> Vec<f64> {
        let f = |x: f64| eval_cubic(&c, x).0;
        let steps = 200_000;
        let (l0, l1) = (lo.ln(), hi.ln());
        let mut out = Vec::new();
        let mut prev = lo;
        for k in 1..=steps {
            let x = (l0 + (l1 - l0) * k as f64 / steps as f64).exp();
            if f(prev) == 0.0 {
                out.push(prev);
            } else if f(prev).signum() != f(x).signum() {
                let (mut a, mut b) = (prev, x);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if f(a).signum() == f(m).signum() {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                out.push(0.5 * (a + b));
            }
            prev = x;
        }
        out
    }

    #[test]
    fn roots_match_bisection_scan() {
        let c = cubic_coefficients(1.0, 2.0, 1.0, 1.0);
        let mine = stationary_points(1.0, 2.0, 1.0, 1.0);
        let oracle = bisection_roots(c, 1e-9, 1e4);
        assert_eq!(mine.len(), oracle.len());
        for (x, o) in mine.iter().zip(&oracle) {
            assert!((x - o).abs() < 1e-8, "{x} vs {o}");
        }
        for (s, q, a, b) in [
            (0.3, 1.7, 0.2, 0.05),
            (2.0, 5.0, 3.0, 0.5),
            (0.5, 0.1, 0.1, 2.0),
        ] {
            let mine = stationary_points(s, q, a, b);
            let oracle = bisection_roots(cubic_coefficients(s, q, a, b), 1e-9, 1e4);
            assert_eq!(mine.len(), oracle.len(), "{s} {q} {a} {b}");
            for (x, o) in mine.iter().zip(&oracle) {
                assert!((x - o).abs() < 1e-8 * (1.0 + o), "{x} vs {o}");
            }
        }
    }

    #[test]
    fn selection_examples() {
        assert!((best_gamma(1.0, 2.0, 0.0, 0.0) - 3.0).abs() < 1e-12);
        assert_eq!(best_gamma(1.0, 0.5, 0.0, 0.0), 0.0);
        assert!(best_gamma(1.0, 0.0, 1.0, 1.0) > 0.0);
    }

    #[test]
    fn cubic_is_the_derivative_numerator() {
        for &(g, s, q, a, b) in &[(0.7, 1.3, -0.4, 0.2, 0.9), (3.0, 0.2, 2.0, 1.5, 0.0)] {
            let c = cubic_coefficients(s, q, a, b);
            let (p, _) = eval_cubic(&c, g);
            let u = 1.0 + g * s;
            assert!((d_ell(g, s, q, a, b) - 2.0 * p / (g * g * u * u)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn uninformative_selection_closed_form(s in 1e-2f64..1e2, q in -30.0f64..30.0) {
            let g = best_gamma(s, q, 0.0, 0.0);
            let want = if q * q > s { (q * q - s) / (s * s) } else { 0.0 };
            prop_assert!((g - want).abs() <= 1e-10 * want.max(1.0), "{} vs {}", g, want);
        }

        // with b > 0 the objective diverges at 0, so the interior minimum is global
        #[test]
        fn selected_gamma_is_a_global_minimum_on_a_grid(
            s in 0.05f64..5.0, q in -5.0f64..5.0, a in 0.0f64..3.0, b in 0.01f64..3.0,
        ) {
            let g = best_gamma(s, q, a, b);
            let best = ell_gamma_j(g, s, q, a, b);
            for k in 0..400 {
                let x = 10f64.powf(-6.0 + 10.0 * k as f64 / 400.0);
                prop_assert!(ell_gamma_j(x, s, q, a, b) >= best - 1e-9 * best.abs().max(1.0));
            }
        }
    }
}
