//! Scalar quadrature on intervals.

const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// Composite 8-point Gauss–Legendre rule on `panels` equal panels.
pub fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels.max(1);
    let w = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * w;
        let half = 0.5 * w;
        let mut s = 0.0;
        for (x, wt) in GL8_NODES.iter().zip(GL8_WEIGHTS) {
            s += wt * f(mid + half * x);
        }
        total += s * half;
    }
    total
}

/// Two-point Gauss rule on a single interval.
pub fn gauss2(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let m = 0.5 * (a + b);
    let r = 0.5 * (b - a) / 3f64.sqrt();
    0.5 * (b - a) * (f(m - r) + f(m + r))
}

/// Adaptive Simpson rule with absolute tolerance `tol`.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(&f, a, b, fa, fm, fb, whole, tol, 48)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn gauss_legendre_is_exact_for_degree_fifteen() {
        let v = gauss_legendre(|x| x.powi(15) + x.powi(14), 0.0, 1.0, 1);
        assert!((v - (1.0 / 16.0 + 1.0 / 15.0)).abs() < 1e-14);
    }

    #[test]
    fn oscillatory_integral() {
        let c = 2.0;
        let v = gauss_legendre(|t| 1.0 / (c + t.sin()), 0.0, 2.0 * PI, 64);
        assert!((v - 2.0 * PI / (c * c - 1.0f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn simpson_converges() {
        let v = adaptive_simpson(|x| (3.0 * x).exp(), 0.0, 1.0, 1e-12);
        assert!((v - ((3.0f64).exp() - 1.0) / 3.0).abs() < 1e-10);
        let g = gauss2(|x| x * x, 0.0, 2.0);
        assert!((g - 8.0 / 3.0).abs() < 1e-14);
    }
}
