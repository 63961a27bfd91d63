//! Characteristic-value computation: Muller's method on determinants of the
//! boundary-integral operators, Bloch bands, band edges, defect bands and
//! the band-edge curvature.

use crate::asymptotics;
use crate::error::{Error, Result};
use crate::greens::BlochVector;
use crate::operators::{assemble_a_alpha, assemble_m, CrystalConfig};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Tolerances and limits for a Muller root search.
#[derive(Debug, Clone, Copy)]
pub struct MullerParams {
    /// Stop when `|f(z)|` falls below this.
    pub f_tol: f64,
    /// Stop when the quadratic-interpolation step falls below
    /// `step_tol * max(1, |z|)`.
    pub step_tol: f64,
    pub max_iter: usize,
}

impl Default for MullerParams {
    fn default() -> Self {
        Self {
            f_tol: 1e-11,
            step_tol: 1e-12,
            max_iter: 60,
        }
    }
}

/// A converged Muller iterate.
#[derive(Debug, Clone, Copy)]
pub struct MullerRoot {
    pub root: Complex64,
    pub f_abs: f64,
    pub iterations: usize,
}

/// Request describing a scalar characteristic-value search.
#[derive(Debug, Clone, Copy)]
pub struct RootRequest {
    /// Initial guess for the frequency.
    pub guess: f64,
    /// Characteristic scale used to spread the three Muller seeds.
    pub scale: f64,
    pub tol: f64,
    pub max_iter: usize,
}

/// Muller's method: quadratic interpolation through three iterates in the
/// complex plane.
pub fn muller_find_root<F>(
    mut f: F,
    seeds: [Complex64; 3],
    params: &MullerParams,
) -> Result<MullerRoot>
where
    F: FnMut(Complex64) -> Result<Complex64>,
{
    if seeds[0] == seeds[1] || seeds[1] == seeds[2] || seeds[0] == seeds[2] {
        return Err(Error::Domain("Muller seeds must be distinct".into()));
    }
    let mut z0 = seeds[0];
    let mut z1 = seeds[1];
    let mut z2 = seeds[2];
    let mut f0 = f(z0)?;
    let mut f1 = f(z1)?;
    let mut f2 = f(z2)?;
    for (z, fv) in [(z0, f0), (z1, f1), (z2, f2)] {
        if !fv.re.is_finite() || !fv.im.is_finite() {
            return Err(Error::Domain(format!("Muller seed {z} gives non-finite f")));
        }
    }

    let mut best = z2;
    let mut best_f = f2.norm();
    for iter in 0..params.max_iter {
        if f2.norm() < best_f {
            best = z2;
            best_f = f2.norm();
        }
        if f2.norm() <= params.f_tol {
            return Ok(MullerRoot {
                root: z2,
                f_abs: f2.norm(),
                iterations: iter,
            });
        }

        let q = (z2 - z1) / (z1 - z0);
        let a = q * f2 - q * (1.0 + q) * f1 + q * q * f0;
        let b = (2.0 * q + 1.0) * f2 - (1.0 + q) * (1.0 + q) * f1 + q * q * f0;
        let c = (1.0 + q) * f2;
        let disc = (b * b - 4.0 * a * c).sqrt();
        let denom_plus = b + disc;
        let denom_minus = b - disc;
        let denom = if denom_plus.norm() >= denom_minus.norm() {
            denom_plus
        } else {
            denom_minus
        };
        if denom.norm() == 0.0 {
            return Err(Error::NonConvergence {
                best,
                best_f_abs: best_f,
                iterations: iter,
            });
        }
        let step = (z2 - z1) * (2.0 * c / denom);
        let z3 = z2 - step;
        if !z3.re.is_finite() || !z3.im.is_finite() {
            return Err(Error::NonConvergence {
                best,
                best_f_abs: best_f,
                iterations: iter,
            });
        }
        let f3 = f(z3)?;
        z0 = z1;
        f0 = f1;
        z1 = z2;
        f1 = f2;
        z2 = z3;
        f2 = f3;
        if step.norm() <= params.step_tol * z2.norm().max(1.0) && f2.norm() <= params.f_tol.sqrt()
        {
            return Ok(MullerRoot {
                root: z2,
                f_abs: f2.norm(),
                iterations: iter + 1,
            });
        }
    }
    if best_f <= params.f_tol {
        return Ok(MullerRoot {
            root: best,
            f_abs: best_f,
            iterations: params.max_iter,
        });
    }
    Err(Error::NonConvergence {
        best,
        best_f_abs: best_f,
        iterations: params.max_iter,
    })
}

/// Row/column scalings taking a matrix to unit max-modulus rows and columns,
/// frozen once per root search so the balanced determinant stays smooth.
#[derive(Debug, Clone)]
pub(crate) struct Balance {
    rows: Vec<f64>,
    cols: Vec<f64>,
}

impl Balance {
    pub(crate) fn from_matrix(m: &DMatrix<Complex64>) -> Self {
        let n = m.nrows();
        let mut rows = vec![1.0; n];
        for i in 0..n {
            let mx = (0..n).map(|j| m[(i, j)].norm()).fold(0.0, f64::max);
            if mx > 0.0 {
                rows[i] = 1.0 / mx;
            }
        }
        let mut cols = vec![1.0; n];
        for j in 0..n {
            let mx = (0..n).map(|i| m[(i, j)].norm() * rows[i]).fold(0.0, f64::max);
            if mx > 0.0 {
                cols[j] = 1.0 / mx;
            }
        }
        Self { rows, cols }
    }

    pub(crate) fn apply(&self, m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let n = m.nrows();
        DMatrix::from_fn(n, n, |i, j| m[(i, j)] * self.rows[i] * self.cols[j])
    }
}

/// Determinant of the balanced matrix.
pub(crate) fn balanced_det(m: &DMatrix<Complex64>, balance: &Balance) -> Complex64 {
    balance.apply(m).lu().determinant()
}

/// Smallest and largest singular values.
pub(crate) fn singular_value_range(m: &DMatrix<Complex64>) -> (f64, f64) {
    let svd = m.clone().svd(false, false);
    (svd.singular_values.min(), svd.singular_values.max())
}

/// A single accepted eigenfrequency with its operator residual
/// (smallest singular value over largest at the root).
#[derive(Debug, Clone, Copy)]
pub struct BandPoint {
    pub omega: f64,
    pub residual: f64,
}

/// Reject roots that wander off the real axis or fail the singular-value
/// acceptance test.
fn accept_root(
    root: Complex64,
    config: &CrystalConfig,
    matrix_at: impl Fn(f64) -> Result<DMatrix<Complex64>>,
) -> Result<BandPoint> {
    if root.im.abs() >= 1e-8 {
        return Err(Error::Inconsistency(format!(
            "root {root} has non-negligible imaginary part"
        )));
    }
    let omega = root.re;
    if !(omega > 0.0) {
        return Err(Error::Inconsistency(format!("root {root} is not a positive frequency")));
    }
    let m = matrix_at(omega)?;
    let (smin, smax) = singular_value_range(&m);
    if smin >= config.residual_tol * smax {
        return Err(Error::Inconsistency(format!(
            "root {omega} rejected: sigma_min/sigma_max = {:.3e}",
            smin / smax
        )));
    }
    Ok(BandPoint {
        omega,
        residual: smin / smax,
    })
}

/// Muller search on the balanced determinant of `A^alpha(omega)` from three
/// real seeds around `guess`.
fn det_root_search(
    config: &CrystalConfig,
    alpha: &BlochVector,
    guess: f64,
    spread: f64,
    window: (f64, f64),
) -> Result<BandPoint> {
    let balance = std::cell::RefCell::new(None::<Balance>);
    let objective = |z: Complex64| -> Result<Complex64> {
        if !(z.re > window.0 && z.re < window.1) || z.im.abs() > 0.5 * guess {
            // Treat escapes from the search window as hopeless directions.
            return Ok(Complex64::new(1e6, 0.0));
        }
        let a = assemble_a_alpha_complex(z, config, alpha)?;
        let mut cache = balance.borrow_mut();
        if cache.is_none() {
            *cache = Some(Balance::from_matrix(&a));
        }
        Ok(balanced_det(&a, cache.as_ref().unwrap()))
    };
    let params = MullerParams {
        f_tol: config.muller_tol,
        step_tol: config.muller_tol,
        max_iter: 60,
    };
    let seeds = [
        Complex64::new(guess * (1.0 - spread), 0.0),
        Complex64::new(guess, 0.0),
        Complex64::new(guess * (1.0 + spread), 0.0),
    ];
    let root = muller_find_root(objective, seeds, &params)?;
    accept_root(root.root, config, |omega| {
        Ok(assemble_a_alpha(omega, config, alpha)?.full())
    })
}

/// The determinant objective only ever needs real frequencies for assembly;
/// for complex Muller iterates the operator is evaluated at `Re z` with a
/// first-order Taylor correction in `Im z` from a finite difference. For the
/// subwavelength roots the accepted imaginary parts are below 1e-8, so the
/// correction only steers the iteration.
fn assemble_a_alpha_complex(
    z: Complex64,
    config: &CrystalConfig,
    alpha: &BlochVector,
) -> Result<DMatrix<Complex64>> {
    if z.im == 0.0 {
        return Ok(assemble_a_alpha(z.re, config, alpha)?.full());
    }
    let h = (z.re * 1e-6).max(1e-9);
    let base = assemble_a_alpha(z.re, config, alpha)?.full();
    let plus = assemble_a_alpha(z.re + h, config, alpha)?.full();
    let derivative = (plus - &base) / Complex64::new(h, 0.0);
    Ok(base + derivative * Complex64::new(0.0, z.im))
}

/// First Bloch eigenfrequency `omega_1^alpha`: the smallest positive root of
/// `det A^alpha(omega)`. Returns 0 at the zone origin.
pub fn band_omega1(alpha: &BlochVector, config: &CrystalConfig) -> Result<BandPoint> {
    if alpha.is_origin() {
        return Ok(BandPoint {
            omega: 0.0,
            residual: 0.0,
        });
    }
    let guess = asymptotics::omega1_asymptotic(alpha, config)?;
    if !(guess > 0.0) {
        return Err(Error::Inconsistency(format!(
            "asymptotic seed for alpha = {alpha:?} is not positive"
        )));
    }
    let window = (guess * 0.2, guess * 4.0);
    match det_root_search(config, alpha, guess, 0.06, window) {
        Ok(p) => Ok(p),
        Err(_) => {
            // Fallback: locate the dip of the smallest singular value on a
            // coarse grid, then re-run Muller around it.
            let grid: Vec<f64> = (0..48)
                .map(|i| guess * (0.3 + 3.2 * i as f64 / 47.0))
                .collect();
            let best = scan_sigma_min(&grid, |omega| {
                Ok(assemble_a_alpha(omega, config, alpha)?.full())
            })?;
            det_root_search(config, alpha, best, 0.03, window)
        }
    }
}

fn scan_sigma_min(
    grid: &[f64],
    matrix_at: impl Fn(f64) -> Result<DMatrix<Complex64>> + Sync,
) -> Result<f64> {
    let ratios: Vec<(f64, f64)> = grid
        .par_iter()
        .filter_map(|&omega| match matrix_at(omega) {
            Ok(m) => {
                let (smin, smax) = singular_value_range(&m);
                Some((omega, smin / smax))
            }
            Err(_) => None,
        })
        .collect();
    ratios
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|&(omega, _)| omega)
        .ok_or_else(|| Error::NoRoot("singular-value scan found no evaluable frequency".into()))
}

/// Second Bloch eigenfrequency at `alpha`, located by scanning the smallest
/// singular value above the first band and polishing with Muller.
pub fn band_omega2(alpha: &BlochVector, config: &CrystalConfig) -> Result<BandPoint> {
    let omega1 = band_omega1(alpha, config)?.omega;
    let lo = (omega1 * 3.0).max(0.4);
    let hi = 6.2;
    let grid: Vec<f64> = (0..56)
        .map(|i| lo + (hi - lo) * i as f64 / 55.0)
        .collect();
    let seed = scan_sigma_min(&grid, |omega| {
        Ok(assemble_a_alpha(omega, config, alpha)?.full())
    })?;
    let point = det_root_search(config, alpha, seed, 0.02, (omega1 * 1.5, hi * 1.2))?;
    if point.omega <= omega1 * (1.0 + 1e-6) {
        return Err(Error::Inconsistency(format!(
            "second band search at alpha = {alpha:?} collapsed onto the first band"
        )));
    }
    Ok(point)
}

/// Band edge `omega*(alpha1) = omega_1^{(alpha1, pi)}`, verified to dominate
/// the nearby band values in `alpha2`.
pub fn band_edge_omega_star(alpha1: f64, config: &CrystalConfig) -> Result<BandPoint> {
    let edge = band_omega1(&BlochVector::new(alpha1, PI), config)?;
    for offset in [-0.3, 0.3] {
        let nearby = band_omega1(&BlochVector::new(alpha1, PI + offset), config)?;
        if nearby.omega > edge.omega * (1.0 + 1e-9) {
            return Err(Error::Inconsistency(format!(
                "omega* check failed at alpha1 = {alpha1}: band value at alpha2 = pi + {offset} \
                 exceeds the edge ({} > {})",
                nearby.omega, edge.omega
            )));
        }
    }
    Ok(edge)
}

/// Least-squares fit of the band-edge curvature `c_delta(alpha1)`:
/// `omega^{(alpha1, pi + t)} ~ omega* - (c/2) t^2` over `t = +-{0.05..0.2}`.
#[derive(Debug, Clone, Copy)]
pub struct CurvatureFit {
    pub c_delta: f64,
    pub omega_star_fit: f64,
    pub rms_residual: f64,
}

pub fn curvature_c_delta(alpha1: f64, config: &CrystalConfig) -> Result<CurvatureFit> {
    let offsets = [-0.2, -0.15, -0.1, -0.05, 0.05, 0.1, 0.15, 0.2];
    curvature_fit_over(alpha1, config, &offsets)
}

/// Quadratic fit over an explicit stencil of `alpha2` offsets around `pi`.
pub fn curvature_fit_over(
    alpha1: f64,
    config: &CrystalConfig,
    offsets: &[f64],
) -> Result<CurvatureFit> {
    let points: Vec<(f64, f64)> = offsets
        .par_iter()
        .map(|&t| {
            let p = band_omega1(&BlochVector::new(alpha1, PI + t), config)?;
            Ok((t, p.omega))
        })
        .collect::<Result<Vec<_>>>()?;
    // Model omega = a + b s with s = -t^2/2; solve the 2x2 normal equations.
    let n = points.len() as f64;
    let (mut ss, mut sw, mut ssw, mut sss) = (0.0, 0.0, 0.0, 0.0);
    for &(t, w) in &points {
        let s = -t * t / 2.0;
        ss += s;
        sw += w;
        ssw += s * w;
        sss += s * s;
    }
    let det = n * sss - ss * ss;
    if det.abs() < 1e-18 {
        return Err(Error::Domain("degenerate curvature stencil".into()));
    }
    let a = (sss * sw - ss * ssw) / det;
    let c = (n * ssw - ss * sw) / det;
    let rms = (points
        .iter()
        .map(|&(t, w)| {
            let model = a - c * t * t / 2.0;
            (w - model).powi(2)
        })
        .sum::<f64>()
        / n)
        .sqrt();
    if !(c > 0.0) {
        return Err(Error::Inconsistency(format!(
            "band-edge curvature fit at alpha1 = {alpha1} gave c = {c} <= 0"
        )));
    }
    Ok(CurvatureFit {
        c_delta: c,
        omega_star_fit: a,
        rms_residual: rms,
    })
}

/// A defect-band eigenfrequency in the gap.
#[derive(Debug, Clone, Copy)]
pub struct DefectRoot {
    pub omega: f64,
    pub residual: f64,
    /// Number of additional candidate dips seen above the root during the
    /// optional gap scan (only populated for enlarged defects, where
    /// uniqueness is not guaranteed).
    pub extra_candidates: usize,
}

/// Pre-computed per-`alpha1` context for the defect search, reusable by the
/// band sweep.
#[derive(Debug, Clone)]
pub struct DefectSearchContext {
    pub omega_star: BandPoint,
    pub gap_upper: f64,
    pub dilute_table: Option<asymptotics::BandIntegralTable>,
}

impl DefectSearchContext {
    pub fn prepare(alpha1: f64, config: &CrystalConfig) -> Result<Self> {
        let omega_star = band_omega1(&BlochVector::new(alpha1, PI), config)?;
        // The search window is capped by the second band along this line.
        let mut omega2_min = f64::INFINITY;
        for &alpha2 in &[0.0, PI / 2.0, PI] {
            if let Ok(p) = band_omega2(&BlochVector::new(alpha1, alpha2), config) {
                omega2_min = omega2_min.min(p.omega);
            }
        }
        if !omega2_min.is_finite() {
            return Err(Error::NoRoot(format!(
                "no second-band estimate at alpha1 = {alpha1}; cannot bound the gap"
            )));
        }
        let gap_upper = (omega2_min * 0.98).min(25.0 * omega_star.omega);
        let dilute_table = if config.epsilon < 0.0 {
            Some(asymptotics::BandIntegralTable::build(alpha1, config)?)
        } else {
            None
        };
        Ok(Self {
            omega_star,
            gap_upper,
            dilute_table,
        })
    }
}

/// Defect eigenfrequency at `alpha1`: the root of `det M(omega)` in the gap
/// `(omega*(alpha1), gap upper bound)`. Returns `Ok(None)` when the search
/// window contains no accepted root, which is a meaningful outcome (e.g.
/// small enlarged defects in the dilute regime).
pub fn defect_omega(alpha1: f64, config: &CrystalConfig) -> Result<Option<DefectRoot>> {
    let ctx = DefectSearchContext::prepare(alpha1, config)?;
    defect_omega_with(alpha1, config, &ctx)
}

pub fn defect_omega_with(
    alpha1: f64,
    config: &CrystalConfig,
    ctx: &DefectSearchContext,
) -> Result<Option<DefectRoot>> {
    if config.epsilon == 0.0 {
        return Err(Error::InvalidConfig(
            "defect search requires a nonzero radius perturbation".into(),
        ));
    }
    let omega_star = ctx.omega_star.omega;
    let lower = omega_star * (1.0 + 1e-4);
    let upper = ctx.gap_upper;
    if !(upper > lower) {
        return Err(Error::NoRoot(format!(
            "empty gap window at alpha1 = {alpha1}: ({lower}, {upper})"
        )));
    }

    // Seed candidates, cheapest first: the dilute-formula root (shrunk
    // defects), then the small-perturbation expansion, then a scan.
    let mut seeds: Vec<f64> = Vec::new();
    if let Some(table) = &ctx.dilute_table {
        if let Ok(dilute) = asymptotics::dilute_defect_omega_from_table(table, config) {
            seeds.push(dilute.omega);
        }
    }
    if let Ok(sp) = asymptotics::small_perturbation_defect_omega(alpha1, config) {
        seeds.push(sp.omega);
    }
    seeds.retain(|&s| s > lower && s < upper);

    let mut accepted: Option<BandPoint> = None;
    for &seed in &seeds {
        let spread = ((seed / omega_star - 1.0) * 0.25).clamp(1e-5, 0.03);
        if let Ok(point) = m_det_root_search(config, alpha1, seed, spread, (lower, upper)) {
            accepted = Some(point);
            break;
        }
    }
    if accepted.is_none() {
        // Log-spaced scan of the gap, denser towards the band edge where the
        // dilute roots live.
        let grid = log_gap_grid(omega_star, lower, upper, 22);
        if let Ok(seed) = scan_sigma_min(&grid, |omega| Ok(assemble_m(omega, config, alpha1)?.full()))
        {
            if let Ok(point) = m_det_root_search(config, alpha1, seed, 0.02, (lower, upper)) {
                accepted = Some(point);
            }
        }
    }

    let Some(point) = accepted else {
        return Ok(None);
    };
    if point.omega <= omega_star {
        return Ok(None);
    }

    // For enlarged defects uniqueness in the gap is not asserted; record
    // whether further dips appear above the accepted root.
    let mut extra = 0;
    if config.epsilon > 0.0 {
        let probe = log_gap_grid(point.omega, point.omega * 1.05, upper, 8);
        let mut prev_small = false;
        for &omega in &probe {
            if let Ok(m) = assemble_m(omega, config, alpha1) {
                let (smin, smax) = singular_value_range(&m.full());
                let small = smin < 1e-5 * smax;
                if small && !prev_small {
                    extra += 1;
                }
                prev_small = small;
            }
        }
        if extra > 0 {
            log::warn!(
                "defect search at alpha1 = {alpha1}: {extra} additional near-singular region(s) \
                 above the returned root {}",
                point.omega
            );
        }
    }

    Ok(Some(DefectRoot {
        omega: point.omega,
        residual: point.residual,
        extra_candidates: extra,
    }))
}

fn log_gap_grid(omega_star: f64, lower: f64, upper: f64, count: usize) -> Vec<f64> {
    let s_lo = ((lower - omega_star) / omega_star).max(1e-7).ln();
    let s_hi = ((upper - omega_star) / omega_star).ln();
    (0..count)
        .map(|i| {
            let s = s_lo + (s_hi - s_lo) * i as f64 / (count - 1) as f64;
            omega_star * (1.0 + s.exp())
        })
        .collect()
}

fn m_det_root_search(
    config: &CrystalConfig,
    alpha1: f64,
    guess: f64,
    spread: f64,
    window: (f64, f64),
) -> Result<BandPoint> {
    let balance = std::cell::RefCell::new(None::<Balance>);
    let objective = |z: Complex64| -> Result<Complex64> {
        if !(z.re > window.0 && z.re < window.1) || z.im.abs() > 0.1 * guess {
            return Ok(Complex64::new(1e6, 0.0));
        }
        let m = assemble_m_complex(z, config, alpha1)?;
        let mut cache = balance.borrow_mut();
        if cache.is_none() {
            *cache = Some(Balance::from_matrix(&m));
        }
        Ok(balanced_det(&m, cache.as_ref().unwrap()))
    };
    let params = MullerParams {
        f_tol: config.muller_tol,
        step_tol: config.muller_tol,
        max_iter: 40,
    };
    let seeds = [
        Complex64::new(guess * (1.0 - spread), 0.0),
        Complex64::new(guess, 0.0),
        Complex64::new(guess * (1.0 + spread), 0.0),
    ];
    let root = muller_find_root(objective, seeds, &params)?;
    accept_root(root.root, config, |omega| {
        Ok(assemble_m(omega, config, alpha1)?.full())
    })
}

fn assemble_m_complex(
    z: Complex64,
    config: &CrystalConfig,
    alpha1: f64,
) -> Result<DMatrix<Complex64>> {
    if z.im == 0.0 {
        return Ok(assemble_m(z.re, config, alpha1)?.full());
    }
    let h = (z.re * 1e-7).max(1e-10);
    let base = assemble_m(z.re, config, alpha1)?.full();
    let plus = assemble_m(z.re + h, config, alpha1)?.full();
    let derivative = (plus - &base) / Complex64::new(h, 0.0);
    Ok(base + derivative * Complex64::new(0.0, z.im))
}

/// Method provenance of a dispersion curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandMethod {
    Operator,
    DiluteAsymptotic,
    SmallPerturbation,
}

#[derive(Debug, Clone, Copy)]
pub struct BandSample {
    pub alpha1: f64,
    pub omega: f64,
    pub residual: f64,
}

/// A sampled dispersion curve with provenance.
#[derive(Debug, Clone)]
pub struct BandCurve {
    pub method: BandMethod,
    pub samples: Vec<BandSample>,
}

impl BandCurve {
    /// Enforce the structural invariants: strictly increasing `alpha1`,
    /// positive frequencies, residuals below the acceptance threshold.
    pub fn validate(&self, residual_tol: f64) -> Result<()> {
        for pair in self.samples.windows(2) {
            if pair[1].alpha1 <= pair[0].alpha1 {
                return Err(Error::Inconsistency("alpha1 not strictly increasing".into()));
            }
        }
        for s in &self.samples {
            if !(s.omega > 0.0) {
                return Err(Error::Inconsistency(format!(
                    "non-positive band frequency at alpha1 = {}",
                    s.alpha1
                )));
            }
            if s.residual > residual_tol {
                return Err(Error::Inconsistency(format!(
                    "residual {} above threshold at alpha1 = {}",
                    s.residual, s.alpha1
                )));
            }
        }
        Ok(())
    }
}

/// Per-point outcome of a defect band sweep.
#[derive(Debug, Clone)]
pub struct DefectBandPoint {
    pub alpha1: f64,
    pub operator: Option<DefectRoot>,
    pub dilute: Option<asymptotics::DiluteRoot>,
    pub gap_lower: f64,
    pub gap_upper: f64,
}

/// Result of sweeping the defect band over an `alpha1` grid.
#[derive(Debug, Clone)]
pub struct DefectBandResult {
    pub points: Vec<DefectBandPoint>,
    pub operator_curve: BandCurve,
    pub dilute_curve: BandCurve,
    /// Global maximum of the first Bloch band, attained at `alpha = (pi, pi)`.
    pub band_max_omega1: f64,
    pub defect_min: f64,
    pub defect_max: f64,
    /// True when the whole sampled defect band lies above the first band.
    pub fully_in_gap: bool,
    /// True when at least one grid point failed to produce a defect root.
    pub partial: bool,
}

/// Sweep the defect band over the given strictly increasing `alpha1` grid.
pub fn defect_band(config: &CrystalConfig, alpha1_grid: &[f64]) -> Result<DefectBandResult> {
    if alpha1_grid.len() < 2 {
        return Err(Error::InvalidConfig("alpha1 grid needs at least 2 points".into()));
    }
    let band_max = band_omega1(&BlochVector::new(PI, PI), config)?.omega;

    let points: Vec<DefectBandPoint> = alpha1_grid
        .par_iter()
        .map(|&alpha1| {
            let ctx = DefectSearchContext::prepare(alpha1, config)?;
            let operator = defect_omega_with(alpha1, config, &ctx).unwrap_or(None);
            let dilute = ctx
                .dilute_table
                .as_ref()
                .and_then(|t| asymptotics::dilute_defect_omega_from_table(t, config).ok());
            Ok(DefectBandPoint {
                alpha1,
                operator,
                dilute,
                gap_lower: ctx.omega_star.omega,
                gap_upper: ctx.gap_upper,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let operator_curve = BandCurve {
        method: BandMethod::Operator,
        samples: points
            .iter()
            .filter_map(|p| {
                p.operator.map(|r| BandSample {
                    alpha1: p.alpha1,
                    omega: r.omega,
                    residual: r.residual,
                })
            })
            .collect(),
    };
    let dilute_curve = BandCurve {
        method: BandMethod::DiluteAsymptotic,
        samples: points
            .iter()
            .filter_map(|p| {
                p.dilute.as_ref().map(|r| BandSample {
                    alpha1: p.alpha1,
                    omega: r.omega,
                    residual: r.residual,
                })
            })
            .collect(),
    };
    let partial = points.iter().any(|p| p.operator.is_none());
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for s in &operator_curve.samples {
        lo = lo.min(s.omega);
        hi = hi.max(s.omega);
    }
    Ok(DefectBandResult {
        band_max_omega1: band_max,
        defect_min: lo,
        defect_max: hi,
        fully_in_gap: !partial && lo > band_max,
        partial,
        points,
        operator_curve,
        dilute_curve,
    })
}
