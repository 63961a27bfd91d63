//! Cylindrical Bessel and Hankel functions of integer order for small real
//! arguments, plus the logarithmic constant `eta` of the 2D Helmholtz
//! Green's function expansion.
//!
//! Everything here targets the subwavelength regime: arguments stay small
//! (`x = omega * R` is at most a few), so ascending power series are accurate
//! to machine precision and no large-argument asymptotics are needed. `Y_n`
//! at integer order uses the standard logarithmic limit formula.

use crate::error::{Error, Result};
use num_complex::Complex64;

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Largest supported Fourier/multipole order.
///
/// Derivatives and the perturbation entries need a margin of two above the
/// multipole truncation, so this comfortably covers truncations up to N = 29.
pub const MAX_ORDER: i32 = 60;

/// Largest supported argument. The ascending series lose roughly
/// `e^x * eps` absolute accuracy to cancellation, which stays below 1e-9
/// up to this cutoff; all solver paths use far smaller arguments.
pub const MAX_ARGUMENT: f64 = 20.0;

/// Scalar values of the Hankel functions and of `eta` are complex.
pub type ComplexScalar = Complex64;

fn check_order(n: i32) -> Result<()> {
    if n.abs() > MAX_ORDER {
        return Err(Error::Domain(format!(
            "Bessel order {n} beyond supported range |n| <= {MAX_ORDER}"
        )));
    }
    Ok(())
}

fn check_argument(x: f64) -> Result<()> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain(format!("Bessel argument {x} must be finite and >= 0")));
    }
    if x > MAX_ARGUMENT {
        return Err(Error::Domain(format!(
            "Bessel argument {x} beyond supported range x <= {MAX_ARGUMENT}"
        )));
    }
    Ok(())
}

/// Bessel function of the first kind `J_n(x)` for integer order.
///
/// `x = 0` is handled by the series limit; negative orders use the parity
/// identity `J_{-n} = (-1)^n J_n`.
pub fn bessel_j(n: i32, x: f64) -> Result<f64> {
    check_order(n)?;
    check_argument(x)?;
    let (n_abs, sign) = parity(n);
    Ok(sign * bessel_j_series(n_abs, x))
}

/// Derivative `J_n'(x) = (J_{n-1}(x) - J_{n+1}(x)) / 2`.
pub fn bessel_j_prime(n: i32, x: f64) -> Result<f64> {
    check_order(n)?;
    check_argument(x)?;
    Ok((bessel_j_signed(n - 1, x) - bessel_j_signed(n + 1, x)) / 2.0)
}

/// Bessel function of the second kind `Y_n(x)` for integer order, `x > 0`.
pub fn bessel_y(n: i32, x: f64) -> Result<f64> {
    check_order(n)?;
    check_argument(x)?;
    if x == 0.0 {
        return Err(Error::Singular("Y_n is singular at x = 0".into()));
    }
    let (n_abs, sign) = parity(n);
    let y = bessel_y_series(n_abs, x);
    if !y.is_finite() {
        return Err(Error::Domain(format!("Y_{n}({x}) overflows f64")));
    }
    Ok(sign * y)
}

/// Derivative `Y_n'(x) = (Y_{n-1}(x) - Y_{n+1}(x)) / 2`, `x > 0`.
pub fn bessel_y_prime(n: i32, x: f64) -> Result<f64> {
    check_order(n)?;
    check_argument(x)?;
    if x == 0.0 {
        return Err(Error::Singular("Y_n' is singular at x = 0".into()));
    }
    let ym = bessel_y_signed(n - 1, x)?;
    let yp = bessel_y_signed(n + 1, x)?;
    Ok((ym - yp) / 2.0)
}

/// Hankel function of the first kind `H_n^{(1)}(x) = J_n(x) + i Y_n(x)`, `x > 0`.
pub fn hankel1(n: i32, x: f64) -> Result<ComplexScalar> {
    if x == 0.0 {
        return Err(Error::Singular("H_n^{(1)} is singular at x = 0".into()));
    }
    Ok(Complex64::new(bessel_j(n, x)?, bessel_y(n, x)?))
}

/// Derivative of the Hankel function, via the same two-term recurrence.
pub fn hankel1_prime(n: i32, x: f64) -> Result<ComplexScalar> {
    if x == 0.0 {
        return Err(Error::Singular("(H_n^{(1)})' is singular at x = 0".into()));
    }
    Ok(Complex64::new(bessel_j_prime(n, x)?, bessel_y_prime(n, x)?))
}

/// The constant `eta_k = (ln k + gamma - ln 2) / (2 pi) - i/4` appearing in
/// the small-argument expansion of the 2D outgoing Green's function.
pub fn eta(k: f64) -> Result<ComplexScalar> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::Domain(format!("eta requires k > 0, got {k}")));
    }
    let re = (k.ln() + EULER_GAMMA - std::f64::consts::LN_2) / (2.0 * std::f64::consts::PI);
    Ok(Complex64::new(re, -0.25))
}

fn parity(n: i32) -> (i32, f64) {
    let n_abs = n.abs();
    let sign = if n < 0 && n_abs % 2 == 1 { -1.0 } else { 1.0 };
    (n_abs, sign)
}

/// `J_n` without the order-range check, for internal recurrences that step
/// one past the caller's order.
fn bessel_j_signed(n: i32, x: f64) -> f64 {
    let (n_abs, sign) = parity(n);
    sign * bessel_j_series(n_abs, x)
}

fn bessel_y_signed(n: i32, x: f64) -> Result<f64> {
    let (n_abs, sign) = parity(n);
    let y = bessel_y_series(n_abs, x);
    if !y.is_finite() {
        return Err(Error::Domain(format!("Y_{n}({x}) overflows f64")));
    }
    Ok(sign * y)
}

/// Ascending series for `J_n(x)`, `n >= 0`.
fn bessel_j_series(n: i32, x: f64) -> f64 {
    debug_assert!(n >= 0);
    let half = 0.5 * x;
    // Leading term (x/2)^n / n!.
    let mut term = 1.0;
    for i in 1..=n {
        term *= half / i as f64;
    }
    if term == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let q = half * half;
    let mut sum = term;
    for j in 1..400 {
        term *= -q / (j as f64 * (j + n) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-280) {
            break;
        }
    }
    sum
}

/// Logarithmic limit formula for `Y_n(x)`, `n >= 0`, `x > 0`:
///
/// ```text
/// Y_n = (2/pi)(ln(x/2) + gamma) J_n
///     - (1/pi) sum_{j=0}^{n-1} (n-1-j)!/j! (x/2)^{2j-n}
///     - (1/pi) sum_{j>=0} (-1)^j (h_j + h_{j+n}) / (j! (j+n)!) (x/2)^{2j+n}
/// ```
///
/// with `h_j` the harmonic numbers.
fn bessel_y_series(n: i32, x: f64) -> f64 {
    debug_assert!(n >= 0);
    debug_assert!(x > 0.0);
    let half = 0.5 * x;
    let pi = std::f64::consts::PI;

    let log_part = (2.0 / pi) * (half.ln() + EULER_GAMMA) * bessel_j_series(n, x);

    // Finite singular sum, built iteratively from j = 0 upward:
    // t_0 = (n-1)! (x/2)^{-n}, t_{j+1} = t_j * (x/2)^2 / ((n-1-j) * (j+1)).
    let mut finite = 0.0;
    if n > 0 {
        let mut t = half.powi(-n);
        for i in 1..n {
            t *= i as f64;
        }
        let q = half * half;
        for j in 0..n {
            finite += t;
            let rem = (n - 1 - j) as f64;
            if rem > 0.0 {
                t *= q / (rem * (j + 1) as f64);
            }
        }
    }

    // Harmonic-weighted series, same shape as the J series.
    let mut term = 1.0; // (x/2)^n / n! base factor
    for i in 1..=n {
        term *= half / i as f64;
    }
    let q = half * half;
    let mut h_j = 0.0;
    let mut h_jn: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
    let mut series = term * (h_j + h_jn);
    for j in 1..400 {
        term *= -q / (j as f64 * (j + n) as f64);
        h_j += 1.0 / j as f64;
        h_jn += 1.0 / (j + n) as f64;
        let contrib = term * (h_j + h_jn);
        series += contrib;
        if contrib.abs() < 1e-18 * series.abs().max(1e-280) {
            break;
        }
    }

    log_part - finite / pi - series / pi
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Independent fixed-length power-series oracle for J_0, used only to
    /// locate the first positive root by bisection.
    fn j0_oracle(x: f64) -> f64 {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        for j in 1..=40 {
            term *= -q / ((j * j) as f64);
            sum += term;
        }
        sum
    }

    #[test]
    fn j_series_limits_at_zero() {
        assert_eq!(bessel_j(0, 0.0).unwrap(), 1.0);
        assert_eq!(bessel_j(1, 0.0).unwrap(), 0.0);
        assert_eq!(bessel_j(7, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn j0_first_root_from_bisection_oracle() {
        let (mut lo, mut hi) = (2.0_f64, 3.0_f64);
        assert!(j0_oracle(lo) > 0.0 && j0_oracle(hi) < 0.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if j0_oracle(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let root = 0.5 * (lo + hi);
        assert_relative_eq!(root, 2.404825557695772768621632, epsilon = 1e-12);
        assert!(bessel_j(0, root).unwrap().abs() < 1e-14);
    }

    #[test]
    fn j_against_reference_values() {
        // 50-digit evaluations of the series, truncated to f64.
        assert_relative_eq!(bessel_j(0, 0.005).unwrap(), 0.99999375000976561822, epsilon = 1e-15);
        assert_relative_eq!(bessel_j(2, 0.7).unwrap(), 0.058786944364191713015, epsilon = 1e-14);
        assert_relative_eq!(bessel_j(5, 2.0).unwrap(), 0.0070396297558716854842, epsilon = 1e-13);
    }

    #[test]
    fn j_prime_identities() {
        let x = 0.3;
        assert_relative_eq!(
            bessel_j_prime(0, x).unwrap(),
            -bessel_j(1, x).unwrap(),
            epsilon = 1e-16
        );
        assert_eq!(bessel_j_prime(1, 0.0).unwrap(), 0.5);
    }

    #[test]
    fn j_prime_matches_central_difference() {
        let (n, x, h) = (2, 0.7, 1e-6);
        let fd = (bessel_j(n, x + h).unwrap() - bessel_j(n, x - h).unwrap()) / (2.0 * h);
        assert_relative_eq!(bessel_j_prime(n, x).unwrap(), fd, epsilon = 1e-8);
    }

    #[test]
    fn y_against_reference_values() {
        assert_relative_eq!(bessel_y(0, 0.3).unwrap(), -0.80727357780451946575, epsilon = 1e-14);
        assert_relative_eq!(bessel_y(5, 2.0).unwrap(), -9.935989128481974981, epsilon = 1e-14);
        assert_relative_eq!(bessel_y(3, 0.5).unwrap(), -42.059494304723882688, epsilon = 1e-14);
    }

    #[test]
    fn hankel_wronskian_identity() {
        let (n, x) = (2, 0.3);
        let j = bessel_j(n, x).unwrap();
        let jp = bessel_j_prime(n, x).unwrap();
        let h = hankel1(n, x).unwrap();
        let hp = hankel1_prime(n, x).unwrap();
        let wronskian = j * hp.im - jp * h.im;
        assert_relative_eq!(wronskian, 2.0 / (std::f64::consts::PI * x), epsilon = 1e-10);
    }

    #[test]
    fn hankel_log_asymptotics_near_zero() {
        for &x in &[1e-3, 1e-4] {
            let h0 = hankel1(0, x).unwrap();
            let ratio = h0.im / (2.0 / std::f64::consts::PI * x.ln());
            assert!((ratio - 1.0).abs() < 0.05, "ratio {ratio} at x = {x}");
        }
    }

    #[test]
    fn hankel_parity() {
        let (n, x) = (3, 0.5);
        let h = hankel1(n, x).unwrap();
        let h_neg = hankel1(-n, x).unwrap();
        assert_eq!(h_neg, -h);
    }

    #[test]
    fn hankel_singular_at_zero() {
        assert!(matches!(hankel1(0, 0.0), Err(Error::Singular(_))));
        assert!(matches!(hankel1_prime(2, 0.0), Err(Error::Singular(_))));
    }

    #[test]
    fn order_range_is_enforced() {
        assert!(bessel_j(MAX_ORDER, 1.0).is_ok());
        assert!(matches!(bessel_j(MAX_ORDER + 1, 1.0), Err(Error::Domain(_))));
        assert!(matches!(bessel_j(-(MAX_ORDER + 1), 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn eta_reference_values() {
        let pi = std::f64::consts::PI;
        let e1 = eta(1.0).unwrap();
        assert_relative_eq!(e1.re, (EULER_GAMMA - std::f64::consts::LN_2) / (2.0 * pi), epsilon = 1e-16);
        assert_eq!(e1.im, -0.25);

        // eta_{2k} - eta_k = ln 2 / (2 pi)
        let d = eta(0.4).unwrap() - eta(0.2).unwrap();
        assert_relative_eq!(d.re, std::f64::consts::LN_2 / (2.0 * pi), epsilon = 1e-15);
        assert_eq!(d.im, 0.0);

        // 50-digit evaluation of the closed form at k = 0.1.
        let e = eta(0.1).unwrap();
        assert_relative_eq!(e.re, -0.384918873216885676754979695857, epsilon = 1e-14);
        assert_eq!(e.im, -0.25);

        assert!(matches!(eta(0.0), Err(Error::Domain(_))));
        assert!(matches!(eta(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn wronskian_identity_over_grid() {
        let pi = std::f64::consts::PI;
        for n in -14..=14 {
            for &x in &[0.02, 0.05, 0.3, 1.0, 2.5, 5.0] {
                let w = bessel_j(n, x).unwrap() * bessel_y_prime(n, x).unwrap()
                    - bessel_j_prime(n, x).unwrap() * bessel_y(n, x).unwrap();
                let expected = 2.0 / (pi * x);
                assert!(
                    (w - expected).abs() <= 1e-9 * expected.abs().max(1.0),
                    "Wronskian off at n={n}, x={x}: {w} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn three_term_recurrence() {
        for n in 1..=16 {
            for &x in &[0.05, 0.5, 2.0] {
                let lhs = bessel_j(n - 1, x).unwrap() + bessel_j(n + 1, x).unwrap();
                let rhs = 2.0 * n as f64 / x * bessel_j(n, x).unwrap();
                let scale = lhs.abs().max(rhs.abs()).max(1e-30);
                assert!((lhs - rhs).abs() <= 1e-10 * scale, "n={n}, x={x}");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn parity_holds_for_all_families(n in 1i32..=16, x in 0.01f64..5.0) {
            let s = if n % 2 == 1 { -1.0 } else { 1.0 };
            proptest::prop_assert_eq!(bessel_j(-n, x).unwrap(), s * bessel_j(n, x).unwrap());
            proptest::prop_assert_eq!(bessel_y(-n, x).unwrap(), s * bessel_y(n, x).unwrap());
            proptest::prop_assert_eq!(
                bessel_j_prime(-n, x).unwrap(),
                s * bessel_j_prime(n, x).unwrap()
            );
            proptest::prop_assert_eq!(
                bessel_y_prime(-n, x).unwrap(),
                s * bessel_y_prime(n, x).unwrap()
            );
        }

        #[test]
        fn recurrence_holds_for_random_arguments(n in 1i32..=16, x in 0.01f64..5.0) {
            let lhs = bessel_j(n - 1, x).unwrap() + bessel_j(n + 1, x).unwrap();
            let rhs = 2.0 * n as f64 / x * bessel_j(n, x).unwrap();
            let scale = lhs.abs().max(rhs.abs()).max(1e-30);
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-10 * scale);
        }
    }
}
