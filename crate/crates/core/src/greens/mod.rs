//! Quasi-periodic Green's functions on the unit square lattice.
//!
//! The production evaluator uses Ewald summation: the lattice sum of outgoing
//! 2D Helmholtz kernels is split into a spectrally convergent reciprocal-space
//! part and a Gaussian-localized real-space part built from exponential
//! integrals. Both parts, their smooth lattice remainder (the quasi-periodic
//! function minus the free-space kernel) and the spatial gradients are
//! evaluated from one precomputed term table.
//!
//! [`reference`] holds two independent slow evaluators (a Kummer-accelerated
//! spectral sum and a tapered direct lattice sum) used for cross-validation;
//! they share no code with the Ewald path.

pub mod reference;

use crate::error::{Error, Result};
use crate::specfun::EULER_GAMMA;
use num_complex::Complex64;
use std::f64::consts::PI;

const TWO_PI: f64 = 2.0 * PI;

/// Term-size target for the adaptive Ewald cutoffs.
const TERM_TOL: f64 = 1e-16;

/// Hard caps protecting against absurd split parameters; with a reasonable
/// split the adaptive cutoffs stay far below these.
const MAX_SPECTRAL_HALF_WIDTH: i32 = 64;
const MAX_SPATIAL_HALF_WIDTH: i32 = 14;

/// Quasi-momentum in the Brillouin zone `[0, 2pi)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector {
    alpha1: f64,
    alpha2: f64,
}

impl BlochVector {
    /// Build a Bloch vector, reducing both components modulo `2 pi`.
    pub fn new(alpha1: f64, alpha2: f64) -> Self {
        Self {
            alpha1: reduce_mod_two_pi(alpha1),
            alpha2: reduce_mod_two_pi(alpha2),
        }
    }

    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }

    pub fn alpha2(&self) -> f64 {
        self.alpha2
    }

    pub fn components(&self) -> [f64; 2] {
        [self.alpha1, self.alpha2]
    }

    /// True when the vector is (numerically) at the zone origin, where the
    /// static quasi-periodic Green's function does not exist.
    pub fn is_origin(&self) -> bool {
        let d1 = self.alpha1.min(TWO_PI - self.alpha1);
        let d2 = self.alpha2.min(TWO_PI - self.alpha2);
        d1.abs() < 1e-9 && d2.abs() < 1e-9
    }

    /// The time-reversed vector `(2pi - a1, 2pi - a2)` reduced to the zone.
    pub fn negated(&self) -> Self {
        Self::new(-self.alpha1, -self.alpha2)
    }
}

fn reduce_mod_two_pi(x: f64) -> f64 {
    let mut r = x % TWO_PI;
    if r < 0.0 {
        r += TWO_PI;
    }
    if r == TWO_PI {
        r = 0.0;
    }
    r
}

/// Free-space outgoing Green's function: `-(i/4) H_0^(1)(k r)` for `k > 0`,
/// `ln(r) / (2 pi)` for `k = 0`.
pub fn free_space_gamma(k: f64, r: f64) -> Result<Complex64> {
    if r <= 0.0 {
        return Err(Error::Singular("free-space kernel evaluated at r = 0".into()));
    }
    if k == 0.0 {
        Ok(Complex64::new(r.ln() / (2.0 * PI), 0.0))
    } else {
        let h0 = crate::specfun::hankel1(0, k * r)?;
        Ok(Complex64::new(0.0, -0.25) * h0)
    }
}

/// Precomputed Ewald-split machinery for `Gamma^{alpha,k}` on the unit
/// square lattice.
///
/// Immutable after construction; evaluation methods are pure and reentrant.
#[derive(Debug, Clone)]
pub struct LatticeGreensEvaluator {
    k: f64,
    alpha: BlochVector,
    split: f64,
    /// Reciprocal-space half-width; coefficients index `(m1+M)*(2M+1)+(m2+M)`.
    spec_half_width: i32,
    spec_coeff: Vec<f64>,
    /// Real-space nodes (excluding the origin) with their Bloch phases.
    spatial_nodes: Vec<SpatialNode>,
    /// `w = E^2 r^2` beyond which real-space terms are dropped.
    w_cut: f64,
    /// `(k / 2E)^{2j} / j!` for `j = 0..`.
    j_weights: Vec<f64>,
    /// Free-space log-series coefficients `(b_j k^{2j}, c_j k^{2j})`, `j >= 1`.
    free_series: Vec<(f64, Complex64)>,
    /// `eta_k` for `k > 0`, zero for the static case.
    eta_k: Complex64,
    /// Limit of the singular-cell-minus-free-kernel function at `r = 0`.
    h_origin: Complex64,
}

#[derive(Debug, Clone, Copy)]
struct SpatialNode {
    n1: f64,
    n2: f64,
    phase: Complex64,
}

impl LatticeGreensEvaluator {
    /// Balanced default split parameter `E = sqrt(pi)`.
    pub fn default_split() -> f64 {
        PI.sqrt()
    }

    /// Build an evaluator with the default split parameter.
    pub fn standard(k: f64, alpha: BlochVector) -> Result<Self> {
        Self::new(k, alpha, Self::default_split())
    }

    /// Build an evaluator for wavenumber `k >= 0`, Bloch vector `alpha` and
    /// Ewald split parameter `split > 0`.
    pub fn new(k: f64, alpha: BlochVector, split: f64) -> Result<Self> {
        if !(k >= 0.0) || !k.is_finite() {
            return Err(Error::Domain(format!("wavenumber must satisfy k >= 0, got {k}")));
        }
        if !(split > 0.0) || !split.is_finite() {
            return Err(Error::Domain(format!("Ewald split must be positive, got {split}")));
        }
        if k == 0.0 && alpha.is_origin() {
            return Err(Error::Singular(
                "quasi-periodic Green's function does not exist for k = 0, alpha = 0".into(),
            ));
        }

        let four_e2 = 4.0 * split * split;
        let kk = k * k;

        // Reciprocal part: need exp((k^2 - |b|^2)/(4E^2)) / |k^2 - |b|^2|
        // below TERM_TOL past the cutoff.
        let b_max = (kk + four_e2 * (1.0 / TERM_TOL).ln()).sqrt();
        let m = (((b_max / TWO_PI).ceil() as i32) + 1).min(MAX_SPECTRAL_HALF_WIDTH);
        let width = (2 * m + 1) as usize;
        let mut spec_coeff = vec![0.0; width * width];
        for m1 in -m..=m {
            for m2 in -m..=m {
                let b1 = alpha.alpha1 + TWO_PI * m1 as f64;
                let b2 = alpha.alpha2 + TWO_PI * m2 as f64;
                let b_sq = b1 * b1 + b2 * b2;
                let denom = kk - b_sq;
                if denom.abs() < 1e-12 * kk.max(1.0) {
                    return Err(Error::DegenerateFrequency(format!(
                        "k^2 = {kk} hits the lattice mode |alpha + 2 pi ({m1},{m2})|^2 = {b_sq}"
                    )));
                }
                let c = (denom / four_e2).exp() / denom;
                spec_coeff[((m1 + m) * (2 * m + 1) + (m2 + m)) as usize] = c;
            }
        }

        // Real part: drop nodes once w = E^2 r^2 exceeds w_cut. The node box
        // covers evaluation points with |z| <= 1.2 (circle differences and
        // neighbor-cell probes).
        let w_cut = (1.0 / TERM_TOL).ln() + kk / four_e2 + 2.0;
        let r_max = w_cut.sqrt() / split + 1.2;
        let n_box = ((r_max.ceil() as i32) + 1).min(MAX_SPATIAL_HALF_WIDTH);
        let mut spatial_nodes = Vec::new();
        for n1 in -n_box..=n_box {
            for n2 in -n_box..=n_box {
                if n1 == 0 && n2 == 0 {
                    continue;
                }
                let dist = ((n1 * n1 + n2 * n2) as f64).sqrt();
                if dist > r_max {
                    continue;
                }
                let arg = alpha.alpha1 * n1 as f64 + alpha.alpha2 * n2 as f64;
                spatial_nodes.push(SpatialNode {
                    n1: n1 as f64,
                    n2: n2 as f64,
                    phase: Complex64::new(arg.cos(), arg.sin()),
                });
            }
        }

        // (k/2E)^{2j}/j! weights for the real-space series.
        let ratio = kk / four_e2;
        let mut j_weights = vec![1.0];
        let mut w = 1.0;
        for j in 1..=40 {
            w *= ratio / j as f64;
            if w < 1e-18 && j > 1 {
                break;
            }
            j_weights.push(w);
        }

        // Free-space log-series (b_j ln(kr) + c_j)(kr)^{2j}: store the
        // coefficients premultiplied by k^{2j}. For r up to ~1.3 the terms
        // (k r / 2)^{2j} / (j!)^2 decide the length.
        let mut free_series = Vec::new();
        let mut eta_k = Complex64::new(0.0, 0.0);
        if k > 0.0 {
            eta_k = crate::specfun::eta(k)?;
            let mut b = 1.0 / (2.0 * PI); // |b_j| 4^j (j!)^2 recurrence below
            let mut harmonic = 0.0;
            let max_kr = 1.3 * k;
            let mut amp = 1.0;
            for j in 1..=40 {
                b *= -1.0 / (4.0 * (j * j) as f64);
                harmonic += 1.0 / j as f64;
                let c = b * Complex64::new(EULER_GAMMA - std::f64::consts::LN_2 - harmonic, -PI / 2.0);
                let k2j = kk.powi(j);
                free_series.push((b * k2j, c * k2j));
                amp *= (max_kr * max_kr) / (4.0 * (j * j) as f64);
                if amp * (1.0 + max_kr.abs().ln().abs()) < 1e-18 {
                    break;
                }
            }
        }

        // h(0) = (gamma + 2 ln E)/(4 pi) - eta_k - (1/4pi) sum_{j>=1} w_j / j.
        let mut tail = 0.0;
        for (j, wj) in j_weights.iter().enumerate().skip(1) {
            tail += wj / j as f64;
        }
        let h_origin = Complex64::new((EULER_GAMMA + 2.0 * split.ln()) / (4.0 * PI) - tail / (4.0 * PI), 0.0)
            - eta_k;

        Ok(Self {
            k,
            alpha,
            split,
            spec_half_width: m,
            spec_coeff,
            spatial_nodes,
            w_cut,
            j_weights,
            free_series,
            eta_k,
            h_origin,
        })
    }

    pub fn wavenumber(&self) -> f64 {
        self.k
    }

    pub fn alpha(&self) -> &BlochVector {
        &self.alpha
    }

    pub fn split(&self) -> f64 {
        self.split
    }

    /// Reciprocal-space part and its gradient at `z`.
    fn spectral_with_grad(&self, z: [f64; 2]) -> (Complex64, [Complex64; 2]) {
        let m = self.spec_half_width;
        let width = (2 * m + 1) as usize;
        let a1 = self.alpha.alpha1;
        let a2 = self.alpha.alpha2;

        let rho1 = Complex64::new((TWO_PI * z[0]).cos(), (TWO_PI * z[0]).sin());
        let rho2 = Complex64::new((TWO_PI * z[1]).cos(), (TWO_PI * z[1]).sin());
        let mut p1 = vec![Complex64::new(1.0, 0.0); width];
        let mut p2 = vec![Complex64::new(1.0, 0.0); width];
        for i in 1..=m as usize {
            p1[m as usize + i] = p1[m as usize + i - 1] * rho1;
            p2[m as usize + i] = p2[m as usize + i - 1] * rho2;
            p1[m as usize - i] = p1[m as usize - i + 1] * rho1.conj();
            p2[m as usize - i] = p2[m as usize - i + 1] * rho2.conj();
        }

        let mut s = Complex64::default();
        let mut s_m1 = Complex64::default();
        let mut s_m2 = Complex64::default();
        for i1 in 0..width {
            let q = p1[i1];
            let m1 = i1 as f64 - m as f64;
            let row = &self.spec_coeff[i1 * width..(i1 + 1) * width];
            let mut row_s = Complex64::default();
            let mut row_m2 = Complex64::default();
            for (i2, &c) in row.iter().enumerate() {
                let t = p2[i2] * c;
                row_s += t;
                row_m2 += t * (i2 as f64 - m as f64);
            }
            s += q * row_s;
            s_m1 += q * row_s * m1;
            s_m2 += q * row_m2;
        }

        let arg = a1 * z[0] + a2 * z[1];
        let phase = Complex64::new(arg.cos(), arg.sin());
        let i = Complex64::new(0.0, 1.0);
        let value = phase * s;
        let g1 = phase * i * (s * a1 + s_m1 * TWO_PI);
        let g2 = phase * i * (s * a2 + s_m2 * TWO_PI);
        (value, [g1, g2])
    }

    /// Real-space kernel `g(r) = -(1/4pi) sum_j w_j E_{j+1}(E^2 r^2)` and the
    /// factor `g'(r)/r`, from a precomputed `w = E^2 r^2`.
    fn spatial_kernel(&self, w: f64) -> (f64, f64) {
        let e1 = exp_int_e1(w);
        let exp_neg = (-w).exp();
        let mut value = self.j_weights[0] * e1;
        // grad factor: g'(r)/r = (E^2 / 2 pi) sum_j w_j E_j(w)
        let mut grad = self.j_weights[0] * exp_neg / w; // E_0(w)
        let mut e_j = e1;
        for (j, &wj) in self.j_weights.iter().enumerate().skip(1) {
            grad += wj * e_j;
            e_j = (exp_neg - w * e_j) / j as f64; // E_{j+1}
            value += wj * e_j;
        }
        let e2 = self.split * self.split;
        (-value / (4.0 * PI), grad * e2 / (2.0 * PI))
    }

    /// Smooth lattice remainder `Gamma^{alpha,k}(z) - Gamma^k(z)` at `z`.
    ///
    /// Finite as `z -> 0`; `z` must stay away from the nonzero lattice points.
    pub fn remainder(&self, z: [f64; 2]) -> Complex64 {
        self.remainder_with_grad(z).0
    }

    /// Remainder value together with its spatial gradient.
    pub fn remainder_with_grad(&self, z: [f64; 2]) -> (Complex64, [Complex64; 2]) {
        let (spec, spec_grad) = self.spectral_with_grad(z);
        let mut value = spec;
        let mut g1 = spec_grad[0];
        let mut g2 = spec_grad[1];

        let e2 = self.split * self.split;
        for node in &self.spatial_nodes {
            let dx = z[0] - node.n1;
            let dy = z[1] - node.n2;
            let w = e2 * (dx * dx + dy * dy);
            if w > self.w_cut {
                continue;
            }
            let (val, grad_factor) = self.spatial_kernel(w);
            value += node.phase * val;
            g1 += node.phase * (grad_factor * dx);
            g2 += node.phase * (grad_factor * dy);
        }

        let r_sq = z[0] * z[0] + z[1] * z[1];
        let (h_val, h_grad) = self.singular_cell_minus_free(r_sq);
        value += h_val;
        g1 += h_grad * z[0];
        g2 += h_grad * z[1];

        (value, [g1, g2])
    }

    /// The smooth function `h(r)` = (origin-cell real-space term) minus the
    /// free-space kernel, together with the gradient factor `h'(r)/r`.
    fn singular_cell_minus_free(&self, r_sq: f64) -> (Complex64, Complex64) {
        if r_sq < 1e-14 {
            return (self.h_origin, Complex64::default());
        }
        let e2 = self.split * self.split;
        let w = e2 * r_sq;
        let four_pi = 4.0 * PI;

        let (ein, e1) = ein_and_e1(w);
        let exp_neg = (-w).exp();
        let mut value = Complex64::new(
            (EULER_GAMMA + 2.0 * self.split.ln() - ein) / four_pi,
            0.0,
        ) - self.eta_k;
        let mut grad = Complex64::new(-ein_prime(w) * e2 / (2.0 * PI), 0.0);

        let mut e_j = e1;
        for (j, &wj) in self.j_weights.iter().enumerate().skip(1) {
            grad.re += wj * e_j * e2 / (2.0 * PI);
            e_j = (exp_neg - w * e_j) / j as f64;
            value.re -= wj * e_j / four_pi;
        }

        if !self.free_series.is_empty() {
            let log_kr = 0.5 * (self.k * self.k * r_sq).ln();
            let mut r2j_prev = 1.0; // r^{2(j-1)}
            for (j, &(bj, cj)) in self.free_series.iter().enumerate() {
                let jf = (j + 1) as f64;
                value -= (cj + Complex64::new(bj * log_kr, 0.0)) * (r2j_prev * r_sq);
                grad -= (cj * (2.0 * jf)
                    + Complex64::new(bj * (2.0 * jf * log_kr + 1.0), 0.0))
                    * r2j_prev;
                r2j_prev *= r_sq;
            }
        }

        (value, grad)
    }

    /// Full quasi-periodic Green's function `Gamma^{alpha,k}(z)`.
    ///
    /// `z` must not sit on a lattice translate of the source.
    pub fn gamma_quasi(&self, z: [f64; 2]) -> Result<Complex64> {
        let (spec, _) = self.spectral_with_grad(z);
        let mut value = spec;

        let e2 = self.split * self.split;
        let c1 = z[0].round() as i32;
        let c2 = z[1].round() as i32;
        let reach = (self.w_cut.sqrt() / self.split).ceil() as i32 + 1;
        let reach = reach.min(MAX_SPATIAL_HALF_WIDTH);
        for n1 in (c1 - reach)..=(c1 + reach) {
            for n2 in (c2 - reach)..=(c2 + reach) {
                let dx = z[0] - n1 as f64;
                let dy = z[1] - n2 as f64;
                let r_sq = dx * dx + dy * dy;
                if r_sq < 1e-24 {
                    return Err(Error::Singular(format!(
                        "gamma_quasi evaluated on the lattice singularity at ({n1}, {n2})"
                    )));
                }
                let w = e2 * r_sq;
                if w > self.w_cut {
                    continue;
                }
                let (val, _) = self.spatial_kernel(w);
                let arg = self.alpha.alpha1 * n1 as f64 + self.alpha.alpha2 * n2 as f64;
                value += Complex64::new(arg.cos(), arg.sin()) * val;
            }
        }
        Ok(value)
    }
}

/// `Ein(w) = gamma + ln w + E_1(w)` (entire) together with `E_1(w)`, `w > 0`.
fn ein_and_e1(w: f64) -> (f64, f64) {
    if w <= 6.0 {
        let ein = ein_series(w);
        (ein, ein - EULER_GAMMA - w.ln())
    } else {
        let e1 = exp_int_e1(w);
        (EULER_GAMMA + w.ln() + e1, e1)
    }
}

/// `Ein'(w) = (1 - e^{-w}) / w`, stable at small `w`.
fn ein_prime(w: f64) -> f64 {
    if w < 1e-8 {
        1.0 - 0.5 * w
    } else {
        -(-w).exp_m1() / w
    }
}

fn ein_series(w: f64) -> f64 {
    let mut term = w;
    let mut sum = w;
    for i in 2..200 {
        term *= -w * (i - 1) as f64 / ((i * i) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// Exponential integral `E_1(w)` for `w > 0`.
fn exp_int_e1(w: f64) -> f64 {
    debug_assert!(w > 0.0);
    if w <= 6.0 {
        ein_series(w) - EULER_GAMMA - w.ln()
    } else if w <= 34.0 {
        // Continued fraction E_1(w) = e^{-w} / (w + 1/(1 + 1/(w + 2/(1 + ...))));
        // evaluated with the modified Lentz algorithm.
        let tiny = 1e-300;
        let mut b = w + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..200 {
            let a = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (a * d + b);
            c = b + a / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (-w).exp() * h
    } else {
        // Six-term asymptotic tail; absolute error far below e^{-34}.
        let inv = 1.0 / w;
        let series = 1.0 + inv * (-1.0 + inv * (2.0 + inv * (-6.0 + inv * (24.0 - 120.0 * inv))));
        (-w).exp() * inv * series
    }
}

/// Gradient of the static quasi-periodic Green's function with respect to
/// the Bloch vector, at the source point:
///
/// ```text
/// grad_alpha Gamma^{alpha,0}(0) = sum_{m in Z^2} (alpha + 2 pi m) / |alpha + 2 pi m|^4
/// ```
///
/// computed as the direct absolutely convergent sum over a disk `|beta| <= B`
/// in reciprocal space. The symmetric disk truncation leaves a tail of order
/// `B^{-2}`; the cutoff is chosen so the estimated tail stays below `tol`.
pub fn grad_alpha_gamma0(alpha: &BlochVector, tol: f64) -> Result<[f64; 2]> {
    if alpha.is_origin() {
        return Err(Error::Singular(
            "grad_alpha Gamma^{alpha,0}(0) is singular at alpha = 0".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    // Empirical tail model err ~ C / M^2 with C = 0.05 (calibrated against an
    // independent Ewald-split evaluation; the true constant is ~50x smaller).
    let m_cut = ((0.05 / tol).sqrt().ceil() as i64).clamp(8, 20_000);
    let b_sq_cut = (TWO_PI * m_cut as f64).powi(2);
    let a1 = alpha.alpha1;
    let a2 = alpha.alpha2;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for m1 in -m_cut..=m_cut {
        let b1 = a1 + TWO_PI * m1 as f64;
        for m2 in -m_cut..=m_cut {
            let b2 = a2 + TWO_PI * m2 as f64;
            let b_sq = b1 * b1 + b2 * b2;
            if b_sq > b_sq_cut {
                continue;
            }
            let inv = 1.0 / (b_sq * b_sq);
            s1 += b1 * inv;
            s2 += b2 * inv;
        }
    }
    Ok([s1, s2])
}
