//! Closed-form and quadrature-based asymptotic quantities: the quasi-static
//! capacitance, the dilute band law, the band integral and the dilute defect
//! equation, the critical defect size, and the small-perturbation defect
//! formula.

use crate::error::{Error, Result};
use crate::greens::{BlochVector, LatticeGreensEvaluator};
use crate::operators::{quasi_single_layer_matrix, CrystalConfig};
use crate::solver;
use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

const TWO_PI: f64 = 2.0 * PI;

/// The quasi-periodic capacitance of the bubble,
/// `Cap_{D,alpha} = -<(S_D^{alpha,0})^{-1}[chi], chi>`.
#[derive(Debug, Clone, Copy)]
pub struct CapacitanceValue {
    pub alpha: BlochVector,
    pub value: f64,
    pub truncation: usize,
}

/// Solution of the static density problem `S_D^{alpha,0} psi = chi` together
/// with the derived scalars.
#[derive(Debug, Clone)]
pub struct StaticDensity {
    pub coefficients: DVector<Complex64>,
    pub capacitance: f64,
    /// `||psi||^2_{L^2(boundary)} = 2 pi R sum |psi_n|^2`.
    pub norm_sq: f64,
}

/// Solve the static single-layer problem on the circle for the constant
/// density data.
pub fn static_density(
    alpha: &BlochVector,
    radius: f64,
    truncation: usize,
    circle_points: usize,
    split: f64,
) -> Result<StaticDensity> {
    if alpha.is_origin() {
        return Err(Error::Singular(
            "the static single layer potential is not invertible at alpha = 0".into(),
        ));
    }
    let evaluator = LatticeGreensEvaluator::new(0.0, *alpha, split)?;
    let s = quasi_single_layer_matrix(&evaluator, radius, truncation, circle_points)?;
    let d = 2 * truncation + 1;
    let mut rhs = DVector::<Complex64>::zeros(d);
    rhs[truncation] = Complex64::new(1.0, 0.0);
    let psi = s
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::LinearSolve("static single-layer matrix is singular".into()))?;
    let psi0 = psi[truncation];
    if psi0.im.abs() > 1e-8 * psi0.norm().max(1e-30) {
        return Err(Error::Inconsistency(format!(
            "constant-mode density coefficient {psi0} is not real"
        )));
    }
    let capacitance = -TWO_PI * radius * psi0.re;
    if !(capacitance > 0.0) {
        return Err(Error::Inconsistency(format!(
            "capacitance {capacitance} is not positive at alpha = {alpha:?}"
        )));
    }
    let norm_sq = TWO_PI * radius * psi.iter().map(|c| c.norm_sqr()).sum::<f64>();
    Ok(StaticDensity {
        coefficients: psi,
        capacitance,
        norm_sq,
    })
}

/// `Cap_{D,alpha}` from the static solve; `-2 pi R` times the constant-mode
/// coefficient of the solution density.
pub fn capacitance(
    alpha: &BlochVector,
    radius: f64,
    truncation: usize,
    circle_points: usize,
    split: f64,
) -> Result<CapacitanceValue> {
    let density = static_density(alpha, radius, truncation, circle_points, split)?;
    Ok(CapacitanceValue {
        alpha: *alpha,
        value: density.capacitance,
        truncation,
    })
}

/// Convenience wrapper reading the numerical parameters from a config.
pub fn capacitance_for(alpha: &BlochVector, config: &CrystalConfig) -> Result<CapacitanceValue> {
    capacitance(
        alpha,
        config.radius,
        config.truncation,
        config.circle_points,
        config.ewald_split,
    )
}

/// Leading-order Bloch band frequency
/// `omega_1^alpha ~ sqrt(delta Cap_{D,alpha} / (pi R^2))`; zero at the zone
/// origin.
pub fn omega1_asymptotic(alpha: &BlochVector, config: &CrystalConfig) -> Result<f64> {
    if alpha.is_origin() {
        return Ok(0.0);
    }
    let cap = capacitance_for(alpha, config)?;
    Ok((config.delta() * cap.value / (PI * config.radius * config.radius)).sqrt())
}

/// Sampled squared band frequencies `(omega^alpha)^2` over the Brillouin
/// quadrature grid at fixed `alpha1`, with the derived band-integral
/// evaluator.
#[derive(Debug, Clone)]
pub struct BandIntegralTable {
    alpha1: f64,
    y: Vec<f64>,
    y_max: f64,
    omega0_sq: f64,
}

impl BandIntegralTable {
    /// Build the table from `Q` asymptotic band solves (one static
    /// capacitance solve per quadrature node).
    pub fn build(alpha1: f64, config: &CrystalConfig) -> Result<Self> {
        let q = config.quadrature_points;
        let y: Vec<f64> = (0..q)
            .into_par_iter()
            .map(|i| {
                let alpha2 = TWO_PI * i as f64 / q as f64;
                let alpha = BlochVector::new(alpha1, alpha2);
                if alpha.is_origin() {
                    return Ok(0.0);
                }
                let omega = omega1_asymptotic(&alpha, config)?;
                Ok(omega * omega)
            })
            .collect::<Result<Vec<_>>>()?;
        let y_max = y.iter().cloned().fold(0.0, f64::max);
        let omega0_sq = y.iter().sum::<f64>() / q as f64;
        if y.iter().any(|&v| v < 0.0) {
            return Err(Error::Inconsistency("negative squared band sample".into()));
        }
        Ok(Self {
            alpha1,
            y,
            y_max,
            omega0_sq,
        })
    }

    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }

    /// Largest sampled band frequency (the asymptotic band edge at this
    /// `alpha1`).
    pub fn omega_star(&self) -> f64 {
        self.y_max.sqrt()
    }

    /// Average of the squared band frequencies `omega_0^2`.
    pub fn omega0_sq(&self) -> f64 {
        self.omega0_sq
    }

    /// Trapezoidal band integral
    /// `I(omega, alpha1) = (1/2pi) int (omega^a)^2 / (omega^2 - (omega^a)^2) d a2`.
    ///
    /// Requires `omega` strictly above every sampled band frequency.
    pub fn integral(&self, omega: f64) -> Result<f64> {
        let w2 = omega * omega;
        if w2 <= self.y_max {
            return Err(Error::QuadratureSingularity(format!(
                "band integral evaluated at omega = {omega} inside the band \
                 (edge {})",
                self.y_max.sqrt()
            )));
        }
        Ok(self.y.iter().map(|&y| y / (w2 - y)).sum::<f64>() / self.y.len() as f64)
    }
}

/// One-off band integral evaluation (builds the table internally).
pub fn band_integral_i(omega: f64, alpha1: f64, config: &CrystalConfig) -> Result<f64> {
    BandIntegralTable::build(alpha1, config)?.integral(omega)
}

/// Root of the dilute defect equation with its residual.
#[derive(Debug, Clone, Copy)]
pub struct DiluteRoot {
    pub omega: f64,
    /// `|G(omega)|` with `G` the dilute characteristic equation, normalized
    /// to `G = 1 + (...) I`.
    pub residual: f64,
}

fn dilute_terms(config: &CrystalConfig) -> (f64, f64) {
    let r = config.radius;
    let rd = config.radius_defect();
    let log_coeff = r * r / (2.0 * config.delta()) * (r / rd).ln();
    let ratio_term = 1.0 - r * r / (rd * rd);
    (log_coeff, ratio_term)
}

/// Dilute defect frequency at `alpha1`: the unique root above the band edge
/// of
///
/// ```text
/// 1 + (omega^2 R^2/(2 delta) ln(R/R_d) + (1 - R^2/R_d^2)) I(omega, alpha1) = 0,
/// ```
///
/// bracketed by bisection on the monotone form and polished with Muller.
pub fn dilute_defect_omega(alpha1: f64, config: &CrystalConfig) -> Result<DiluteRoot> {
    let table = BandIntegralTable::build(alpha1, config)?;
    dilute_defect_omega_from_table(&table, config)
}

pub fn dilute_defect_omega_from_table(
    table: &BandIntegralTable,
    config: &CrystalConfig,
) -> Result<DiluteRoot> {
    if config.radius_defect() >= config.radius {
        return Err(Error::NoRoot(
            "the dilute defect equation has no root above the band edge for R_d >= R".into(),
        ));
    }
    let (log_coeff, ratio_term) = dilute_terms(config);
    let omega_star = table.omega_star();
    if !(omega_star > 0.0) {
        return Err(Error::Inconsistency("degenerate band table".into()));
    }
    // Monotone form F = omega^2 log_coeff + ratio_term + 1/I.
    let monotone = |omega: f64| -> Result<f64> {
        Ok(omega * omega * log_coeff + ratio_term + 1.0 / table.integral(omega)?)
    };
    let mut lo = omega_star * (1.0 + 1e-9);
    if monotone(lo)? > 0.0 {
        return Err(Error::NoRoot(
            "dilute equation is positive already at the band edge".into(),
        ));
    }
    let mut hi = omega_star * (1.0 + 1e-6);
    let mut expansions = 0;
    while monotone(hi)? < 0.0 {
        hi = omega_star + (hi - omega_star) * 2.0;
        expansions += 1;
        if expansions > 80 {
            return Err(Error::NoRoot("dilute equation never changes sign".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if monotone(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 * hi {
            break;
        }
    }
    let bisected = 0.5 * (lo + hi);

    // Polish on the characteristic form G = 1 + (...) I.
    let characteristic = |z: Complex64| -> Result<Complex64> {
        // The band integral continues analytically off the real axis.
        let w2 = z * z;
        let mut i_val = Complex64::default();
        for &y in &table.y {
            i_val += Complex64::new(y, 0.0) / (w2 - y);
        }
        i_val /= table.y.len() as f64;
        Ok(1.0 + (w2 * log_coeff + ratio_term) * i_val)
    };
    let spread = ((bisected / omega_star - 1.0) * 0.1).clamp(1e-9, 1e-3);
    let seeds = [
        Complex64::new(bisected * (1.0 - spread), 0.0),
        Complex64::new(bisected, 0.0),
        Complex64::new(bisected * (1.0 + spread), 0.0),
    ];
    let params = solver::MullerParams {
        f_tol: 1e-12,
        step_tol: 1e-13,
        max_iter: 40,
    };
    let polished = solver::muller_find_root(characteristic, seeds, &params)
        .map(|r| r.root.re)
        .unwrap_or(bisected);
    let root = if polished > omega_star && polished.is_finite() {
        polished
    } else {
        bisected
    };
    let residual = {
        let g = characteristic(Complex64::new(root, 0.0))?;
        g.norm()
    };
    if residual > 1e-10 {
        return Err(Error::NonConvergence {
            best: Complex64::new(root, 0.0),
            best_f_abs: residual,
            iterations: 200,
        });
    }
    Ok(DiluteRoot {
        omega: root,
        residual,
    })
}

/// Count the sign changes of the monotone dilute form on a log-spaced scan
/// above the band edge (uniqueness diagnostic).
pub fn dilute_sign_changes(
    table: &BandIntegralTable,
    config: &CrystalConfig,
    points: usize,
) -> Result<usize> {
    let (log_coeff, ratio_term) = dilute_terms(config);
    let omega_star = table.omega_star();
    let mut count = 0;
    let mut prev: Option<f64> = None;
    for i in 0..points {
        let s = -8.0 + 9.5 * i as f64 / (points - 1) as f64;
        let omega = omega_star * (1.0 + 10f64.powf(s));
        let v = omega * omega * log_coeff + ratio_term + 1.0 / table.integral(omega)?;
        if let Some(p) = prev {
            if p.signum() != v.signum() {
                count += 1;
            }
        }
        prev = Some(v);
    }
    Ok(count)
}

/// The critical defect size and its diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct CriticalEpsilon {
    pub eps0: f64,
    pub radius_defect: f64,
    /// Residual of the defining equation at the returned root.
    pub residual: f64,
    /// Asymptotic global band maximum used on the right-hand side.
    pub omega_star_global: f64,
}

/// Critical perturbation `eps_0`: the root in `R_d` of
///
/// ```text
/// R^2/R_d^2 - ln R_d / ln R = 1 / I(omega*, 0)
/// ```
///
/// with `omega*` the asymptotic global band maximum (at `alpha = (pi,pi)`)
/// and the band integral taken at `alpha1 = 0`.
pub fn critical_epsilon(config: &CrystalConfig) -> Result<CriticalEpsilon> {
    let r = config.radius;
    let omega_star_global = omega1_asymptotic(&BlochVector::new(PI, PI), config)?;
    let table = BandIntegralTable::build(0.0, config)?;
    let inv_i = 1.0 / table.integral(omega_star_global)?;
    let target = |rd: f64| -> f64 { r * r / (rd * rd) - rd.ln() / r.ln() - inv_i };

    // target(R) = -1/I < 0 and target -> +infinity as R_d -> 0.
    let mut hi = r;
    let mut lo = r * 1e-3;
    let mut guard = 0;
    while target(lo) < 0.0 {
        lo *= 0.5;
        guard += 1;
        if guard > 60 {
            return Err(Error::NoRoot("critical-size equation has no bracket".into()));
        }
    }
    if target(hi) > 0.0 {
        return Err(Error::NoRoot(
            "critical-size equation is positive at R_d = R; no shrinkage root".into(),
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if target(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-16 * r {
            break;
        }
    }
    let rd = 0.5 * (lo + hi);
    let residual = target(rd).abs();
    if residual > 1e-10 {
        return Err(Error::NonConvergence {
            best: Complex64::new(rd, 0.0),
            best_f_abs: residual,
            iterations: 200,
        });
    }
    Ok(CriticalEpsilon {
        eps0: rd - r,
        radius_defect: rd,
        residual,
        omega_star_global,
    })
}

/// Small-perturbation defect frequency and its ingredients.
#[derive(Debug, Clone, Copy)]
pub struct SmallPerturbationRoot {
    pub omega: f64,
    pub omega_star: f64,
    /// The quadratic-in-epsilon correction above the band edge.
    pub correction: f64,
    pub c_delta: f64,
    /// The sign-determining bracket `R ||psi||^2 - 2 Cap` at `(alpha1, pi)`.
    pub bracket: f64,
}

/// Leading-order defect frequency for small radius perturbations:
///
/// ```text
/// omega^eps = omega* + (1 / 2 c_delta) (delta eps (R ||psi||^2 - 2 Cap) / (2 pi omega* R^3))^2
/// ```
///
/// valid for shrunk defects in the dilute regime and enlarged defects in the
/// non-dilute regime.
pub fn small_perturbation_defect_omega(
    alpha1: f64,
    config: &CrystalConfig,
) -> Result<SmallPerturbationRoot> {
    let alpha_star = BlochVector::new(alpha1, PI);
    let density = static_density(
        &alpha_star,
        config.radius,
        config.truncation,
        config.circle_points,
        config.ewald_split,
    )?;
    let omega_star = solver::band_omega1(&alpha_star, config)?.omega;
    let fit = solver::curvature_c_delta(alpha1, config)?;
    let r = config.radius;
    let bracket = r * density.norm_sq - 2.0 * density.capacitance;
    let correction = if config.epsilon == 0.0 {
        0.0
    } else {
        let numerator = config.delta() * config.epsilon * bracket;
        let denominator = TWO_PI * omega_star * r * r * r;
        (numerator / denominator).powi(2) / (2.0 * fit.c_delta)
    };
    Ok(SmallPerturbationRoot {
        omega: omega_star + correction,
        omega_star,
        correction,
        c_delta: fit.c_delta,
        bracket,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dilute_config() -> CrystalConfig {
        CrystalConfig::new(1.0, 1.0, 5000.0, 5000.0, 0.05, -0.01).unwrap()
    }

    #[test]
    fn capacitance_near_dilute_law() {
        // Cap at (pi,pi) approaches -2 pi / ln R in the dilute limit. At
        // R = 0.05 the 1/ln R correction from the lattice remainder still
        // contributes ~26%, so the comparison uses a 30% margin; the trend
        // check below confirms the law tightens as R shrinks.
        let config = dilute_config();
        let cap = capacitance_for(&BlochVector::new(PI, PI), &config).unwrap();
        let dilute = -TWO_PI / config.radius.ln();
        assert!(
            (cap.value - dilute).abs() < 0.3 * dilute,
            "Cap = {}, dilute law {}",
            cap.value,
            dilute
        );

        let tiny = CrystalConfig::new(1.0, 1.0, 5000.0, 5000.0, 0.005, -0.001).unwrap();
        let cap_tiny = capacitance_for(&BlochVector::new(PI, PI), &tiny).unwrap();
        let dilute_tiny = -TWO_PI / tiny.radius.ln();
        let rel = |c: f64, d: f64| (c - d).abs() / d;
        assert!(
            rel(cap_tiny.value, dilute_tiny) < rel(cap.value, dilute),
            "dilute law does not tighten: {} vs {}",
            rel(cap_tiny.value, dilute_tiny),
            rel(cap.value, dilute)
        );
    }

    #[test]
    fn capacitance_positive_at_random_bloch_vectors() {
        use rand::{Rng, SeedableRng};
        let config = dilute_config();
        let mut rng = rand::rngs::StdRng::seed_from_u64(42);
        for _ in 0..8 {
            let alpha = BlochVector::new(
                rng.gen_range(0.3..TWO_PI - 0.3),
                rng.gen_range(0.3..TWO_PI - 0.3),
            );
            let cap = capacitance_for(&alpha, &config).unwrap();
            assert!(cap.value > 0.0, "alpha = {alpha:?}");
        }
    }

    #[test]
    fn capacitance_decreases_toward_zone_origin() {
        let config = dilute_config();
        let mut prev = f64::INFINITY;
        for &t in &[1.0, 0.5, 0.2, 0.05] {
            let cap = capacitance_for(&BlochVector::new(t * PI, t * PI), &config).unwrap();
            assert!(cap.value < prev, "Cap not decreasing at t = {t}");
            prev = cap.value;
        }
    }

    #[test]
    fn capacitance_time_reversal_symmetry() {
        let config = dilute_config();
        let alpha = BlochVector::new(1.1, 2.7);
        let a = capacitance_for(&alpha, &config).unwrap().value;
        let b = capacitance_for(&alpha.negated(), &config).unwrap().value;
        assert!((a - b).abs() < 1e-9 * a, "{a} vs {b}");
    }

    #[test]
    fn capacitance_rejects_origin() {
        let config = dilute_config();
        assert!(matches!(
            capacitance_for(&BlochVector::new(0.0, 0.0), &config),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn density_norm_matches_direct_quadrature() {
        // Parseval on the circle: reconstruct psi(theta) on a fine grid and
        // integrate |psi|^2 R d theta directly.
        let config = dilute_config();
        let alpha = BlochVector::new(2.0, 3.1);
        let density = static_density(
            &alpha,
            config.radius,
            config.truncation,
            config.circle_points,
            config.ewald_split,
        )
        .unwrap();
        let n = config.truncation as i32;
        let m = 256;
        let mut acc = 0.0;
        for j in 0..m {
            let theta = TWO_PI * j as f64 / m as f64;
            let mut v = Complex64::default();
            for order in -n..=n {
                let idx = (order + n) as usize;
                v += density.coefficients[idx]
                    * Complex64::new((order as f64 * theta).cos(), (order as f64 * theta).sin());
            }
            acc += v.norm_sqr();
        }
        acc *= TWO_PI * config.radius / m as f64;
        assert!(
            (acc - density.norm_sq).abs() < 1e-10 * density.norm_sq,
            "{acc} vs {}",
            density.norm_sq
        );
    }

    #[test]
    fn omega1_asymptotic_limits() {
        let config = dilute_config();
        assert_eq!(
            omega1_asymptotic(&BlochVector::new(0.0, 0.0), &config).unwrap(),
            0.0
        );
        let w = omega1_asymptotic(&BlochVector::new(PI, PI), &config).unwrap();
        assert!(w > 0.0 && w < 1.0, "omega = {w}");
    }

    #[test]
    fn band_table_and_integral_limits() {
        let mut config = dilute_config();
        config.quadrature_points = 60; // keep the test quick
        let table = BandIntegralTable::build(PI, &config).unwrap();
        let omega_star = table.omega_star();
        assert!(omega_star > 0.0);
        assert!(table.y.iter().all(|&y| y >= 0.0));

        // 1/I increases monotonically in omega above the edge.
        let mut prev = 0.0;
        for i in 0..20 {
            let omega = omega_star * (1.001 + 0.3 * i as f64);
            let inv = 1.0 / table.integral(omega).unwrap();
            assert!(inv > prev, "1/I not increasing at omega = {omega}");
            prev = inv;
        }

        // 1/I -> 0 at the band edge: compare two frequencies near the edge.
        let near = 1.0 / table.integral(omega_star * (1.0 + 1e-3)).unwrap();
        let far = 1.0 / table.integral(omega_star * 1.1).unwrap();
        assert!(far > 3.0 * near, "near {near}, far {far}");

        // 1/I -> omega^2 / omega_0^2 at high frequency.
        let omega = 50.0 * omega_star;
        let inv = 1.0 / table.integral(omega).unwrap();
        let expected = omega * omega / table.omega0_sq();
        assert!(
            (inv - expected).abs() < 0.02 * expected,
            "1/I = {inv} vs omega^2/omega0^2 = {expected}"
        );

        // Inside the band the integral must refuse to evaluate.
        assert!(table.integral(omega_star * 0.999).is_err());
    }

    #[test]
    fn dilute_root_exists_and_moves_with_epsilon() {
        let mut config = dilute_config();
        config.quadrature_points = 100;
        let table = BandIntegralTable::build(PI, &config).unwrap();
        let omega_star = table.omega_star();

        config.epsilon = -0.2 * config.radius;
        let big = dilute_defect_omega_from_table(&table, &config).unwrap();
        assert!(big.omega > omega_star);
        assert!(big.residual < 1e-10);

        config.epsilon = -0.01 * config.radius;
        let small = dilute_defect_omega_from_table(&table, &config).unwrap();
        assert!(small.omega > omega_star);
        // Smaller perturbations sit closer to the band edge.
        assert!(small.omega - omega_star < big.omega - omega_star);
    }

    #[test]
    fn dilute_equation_rejects_enlarged_defects() {
        let mut config = dilute_config();
        config.epsilon = 0.0;
        assert!(matches!(
            dilute_defect_omega(PI, &config),
            Err(Error::NoRoot(_))
        ));
        config.epsilon = 0.01;
        assert!(matches!(
            dilute_defect_omega(PI, &config),
            Err(Error::NoRoot(_))
        ));
    }

    #[test]
    fn dilute_root_is_unique_on_scan() {
        let mut config = dilute_config();
        config.quadrature_points = 60;
        config.epsilon = -0.2 * config.radius;
        let table = BandIntegralTable::build(PI, &config).unwrap();
        let changes = dilute_sign_changes(&table, &config, 200).unwrap();
        assert_eq!(changes, 1);
    }

    #[test]
    fn quadrature_refinement_stability() {
        // Doubling Q changes the dilute outputs by < 1e-6 relative.
        let mut config = dilute_config();
        config.epsilon = -0.2 * config.radius;
        config.quadrature_points = 100;
        let coarse = dilute_defect_omega(PI, &config).unwrap().omega;
        config.quadrature_points = 200;
        let fine = dilute_defect_omega(PI, &config).unwrap().omega;
        assert!(
            (coarse - fine).abs() < 1e-6 * fine,
            "Q refinement moved the root: {coarse} vs {fine}"
        );
    }
}
