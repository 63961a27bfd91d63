//! Dense Fourier-basis matrices of the boundary-integral operators on the
//! bubble circle.
//!
//! All operators act on densities expanded in `e^{i n theta}`, `|n| <= N`,
//! on circles of radius `R` (and `R_d = R + epsilon` for the defect). Rows
//! and columns are indexed by `n + N`. The free-space parts are diagonal
//! with closed-form Bessel/Hankel entries; the quasi-periodic parts add the
//! double trapezoidal quadrature of the smooth lattice remainder kernel,
//! which is spectrally accurate on these analytic kernels.

use crate::error::{Error, Result};
use crate::greens::{BlochVector, LatticeGreensEvaluator};
use crate::specfun;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

const TWO_PI: f64 = 2.0 * PI;

/// Physical and numerical parameters of the crystal and its line defect.
#[derive(Debug, Clone)]
pub struct CrystalConfig {
    /// Density inside the bubbles.
    pub rho_b: f64,
    /// Bulk modulus inside the bubbles.
    pub kappa_b: f64,
    /// Density of the surrounding liquid.
    pub rho_w: f64,
    /// Bulk modulus of the surrounding liquid.
    pub kappa_w: f64,
    /// Bubble radius, in units of the lattice period.
    pub radius: f64,
    /// Radius perturbation of the defect row; the defect radius is
    /// `radius + epsilon`.
    pub epsilon: f64,
    /// Multipole truncation N; matrices have side `2N + 1`.
    pub truncation: usize,
    /// Number of trapezoidal nodes for the Brillouin-zone quadrature.
    pub quadrature_points: usize,
    /// Number of trapezoidal nodes per circle for the remainder quadrature.
    pub circle_points: usize,
    /// Ewald split parameter of the lattice Green's function evaluator.
    pub ewald_split: f64,
    /// Muller iteration tolerance on |f| and on the step size.
    pub muller_tol: f64,
    /// Acceptance threshold: smallest singular value of the defining
    /// operator at a returned eigenfrequency, relative to its largest.
    pub residual_tol: f64,
}

impl CrystalConfig {
    /// Configuration with the standard numerical defaults
    /// (`N = 5`, `Q = 100`, 64 circle points, split `sqrt(pi)`).
    pub fn new(
        rho_b: f64,
        kappa_b: f64,
        rho_w: f64,
        kappa_w: f64,
        radius: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let config = Self {
            rho_b,
            kappa_b,
            rho_w,
            kappa_w,
            radius,
            epsilon,
            truncation: 5,
            quadrature_points: 100,
            circle_points: 64,
            ewald_split: LatticeGreensEvaluator::default_split(),
            muller_tol: 1e-11,
            residual_tol: 1e-8,
        };
        config.validate()?;
        Ok(config)
    }

    /// Density contrast `delta = rho_b / rho_w`.
    pub fn delta(&self) -> f64 {
        self.rho_b / self.rho_w
    }

    /// Defect radius `R_d = R + epsilon`.
    pub fn radius_defect(&self) -> f64 {
        self.radius + self.epsilon
    }

    /// Check all configuration invariants. Returns an error for physically
    /// or numerically unusable parameters; logs a warning when the defect
    /// radius leaves the single-cell regime (the Fourier-basis formulas
    /// continue analytically there).
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rho_b", self.rho_b),
            ("kappa_b", self.kappa_b),
            ("rho_w", self.rho_w),
            ("kappa_w", self.kappa_w),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        let delta = self.delta();
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "density contrast delta = rho_b/rho_w = {delta} must lie in (0, 1)"
            )));
        }
        let v_b = self.kappa_b / self.rho_b;
        let v_w = self.kappa_w / self.rho_w;
        if (v_b - v_w).abs() > 1e-12 * v_w.abs() {
            return Err(Error::InvalidConfig(format!(
                "wave speeds must match: kappa_b/rho_b = {v_b} vs kappa_w/rho_w = {v_w}"
            )));
        }
        if !(self.radius > 0.0 && self.radius < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "bubble radius {} must lie in (0, 1/2)",
                self.radius
            )));
        }
        let rd = self.radius_defect();
        if !(rd > 0.0 && rd < 1.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "defect radius R + epsilon = {rd} must lie in (0, 1)"
            )));
        }
        if rd >= 0.5 {
            log::warn!(
                "defect radius R + epsilon = {rd} is outside (0, 1/2); \
                 the multipole formulas are continued analytically"
            );
        }
        if self.truncation > 29 {
            return Err(Error::InvalidConfig(format!(
                "truncation N = {} beyond the supported Bessel order range",
                self.truncation
            )));
        }
        if self.quadrature_points < 2 {
            return Err(Error::InvalidConfig("need at least 2 quadrature points".into()));
        }
        if self.circle_points < 4 * (self.truncation + 1) {
            return Err(Error::InvalidConfig(format!(
                "circle quadrature needs at least 4(N+1) = {} points, got {}",
                4 * (self.truncation + 1),
                self.circle_points
            )));
        }
        if !(self.ewald_split > 0.0) {
            return Err(Error::InvalidConfig("Ewald split must be positive".into()));
        }
        if !(self.muller_tol > 0.0) || !(self.residual_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        Ok(())
    }

    /// Matrix side `2N + 1` of each block.
    pub fn block_dim(&self) -> usize {
        2 * self.truncation + 1
    }
}

/// A 2x2 block complex matrix over the truncated Fourier basis, acting on
/// density pairs `(phi, psi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOperator {
    pub a11: DMatrix<Complex64>,
    pub a12: DMatrix<Complex64>,
    pub a21: DMatrix<Complex64>,
    pub a22: DMatrix<Complex64>,
}

impl BlockOperator {
    pub fn block_dim(&self) -> usize {
        self.a11.nrows()
    }

    /// Identity block operator of block side `d`.
    pub fn identity(d: usize) -> Self {
        Self {
            a11: DMatrix::identity(d, d),
            a12: DMatrix::zeros(d, d),
            a21: DMatrix::zeros(d, d),
            a22: DMatrix::identity(d, d),
        }
    }

    /// Assemble the full `2d x 2d` matrix.
    pub fn full(&self) -> DMatrix<Complex64> {
        let d = self.block_dim();
        let mut m = DMatrix::zeros(2 * d, 2 * d);
        m.view_mut((0, 0), (d, d)).copy_from(&self.a11);
        m.view_mut((0, d), (d, d)).copy_from(&self.a12);
        m.view_mut((d, 0), (d, d)).copy_from(&self.a21);
        m.view_mut((d, d), (d, d)).copy_from(&self.a22);
        m
    }

    /// Largest entry modulus over all blocks.
    pub fn max_entry(&self) -> f64 {
        [&self.a11, &self.a12, &self.a21, &self.a22]
            .iter()
            .flat_map(|m| m.iter())
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    fn check_finite(&self) -> Result<()> {
        for m in [&self.a11, &self.a12, &self.a21, &self.a22] {
            if m.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(Error::Domain("non-finite entry in block operator".into()));
            }
        }
        Ok(())
    }
}

fn diag_from(values: Vec<Complex64>) -> DMatrix<Complex64> {
    let d = values.len();
    DMatrix::from_fn(d, d, |i, j| if i == j { values[i] } else { Complex64::default() })
}

/// Free-space single layer potential `S_D^k` on a circle of radius `r`:
/// diagonal entries `-(i pi r / 2) J_n(k r) H_n^(1)(k r)`.
pub fn single_layer_free_matrix(k: f64, r: f64, n: usize) -> Result<DMatrix<Complex64>> {
    if !(k > 0.0) {
        return Err(Error::Domain(
            "single_layer_free_matrix requires k > 0; use the static variant".into(),
        ));
    }
    let nn = n as i32;
    let factor = Complex64::new(0.0, -PI * r / 2.0);
    let values = (-nn..=nn)
        .map(|m| Ok(factor * specfun::bessel_j(m, k * r)? * specfun::hankel1(m, k * r)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(diag_from(values))
}

/// Static (Laplace) single layer potential `S_D^0`: diagonal with entries
/// `R ln R` for `n = 0` and `-R / (2|n|)` otherwise.
pub fn static_single_layer_free_matrix(r: f64, n: usize) -> DMatrix<f64> {
    let nn = n as i32;
    let d = 2 * n + 1;
    let mut m = DMatrix::zeros(d, d);
    for order in -nn..=nn {
        let v = if order == 0 {
            r * r.ln()
        } else {
            -r / (2.0 * order.abs() as f64)
        };
        m[((order + nn) as usize, (order + nn) as usize)] = v;
    }
    m
}

/// Free-space Neumann-Poincare operator `K_D^{k,*}` on a circle of radius
/// `r`, without the `-1/2` shift: diagonal entries
/// `-(i pi r k / 4) (H_n J_n' + H_n' J_n)(k r)`.
pub fn neumann_poincare_free_matrix(k: f64, r: f64, n: usize) -> Result<DMatrix<Complex64>> {
    if !(k > 0.0) {
        return Err(Error::Domain("neumann_poincare_free_matrix requires k > 0".into()));
    }
    let nn = n as i32;
    let factor = Complex64::new(0.0, -PI * r * k / 4.0);
    let values = (-nn..=nn)
        .map(|m| {
            let x = k * r;
            let j = specfun::bessel_j(m, x)?;
            let jp = specfun::bessel_j_prime(m, x)?;
            let h = specfun::hankel1(m, x)?;
            let hp = specfun::hankel1_prime(m, x)?;
            Ok(factor * (h * jp + hp * j))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(diag_from(values))
}

/// Double trapezoidal quadrature of a smooth displacement kernel against the
/// Fourier basis on the circle of radius `r`:
/// `A[n,m] = (2 pi r / M^2) sum_{i,j} e^{-i n th_i} kern(x_i - y_j) e^{i m th_j}`.
fn remainder_matrix<F>(kernel: F, r: f64, n: usize, m_q: usize) -> DMatrix<Complex64>
where
    F: Fn([f64; 2]) -> Complex64,
{
    let trig: Vec<(f64, f64)> = (0..m_q)
        .map(|i| {
            let t = TWO_PI * i as f64 / m_q as f64;
            (t.cos(), t.sin())
        })
        .collect();
    let mut grid = vec![Complex64::default(); m_q * m_q];
    for i in 0..m_q {
        let (ci, si) = trig[i];
        for j in 0..m_q {
            let (cj, sj) = trig[j];
            grid[i * m_q + j] = kernel([r * (ci - cj), r * (si - sj)]);
        }
    }
    contract_grid(&grid, r, n, m_q)
}

/// Same quadrature, evaluating the kernel once per point pair and producing
/// both the value matrix and the normal-derivative matrix.
fn remainder_matrices_pair<F>(
    kernel: F,
    r: f64,
    n: usize,
    m_q: usize,
) -> (DMatrix<Complex64>, DMatrix<Complex64>)
where
    F: Fn([f64; 2]) -> (Complex64, [Complex64; 2]),
{
    let trig: Vec<(f64, f64)> = (0..m_q)
        .map(|i| {
            let t = TWO_PI * i as f64 / m_q as f64;
            (t.cos(), t.sin())
        })
        .collect();
    let mut grid_val = vec![Complex64::default(); m_q * m_q];
    let mut grid_nd = vec![Complex64::default(); m_q * m_q];
    for i in 0..m_q {
        let (ci, si) = trig[i];
        for j in 0..m_q {
            let (cj, sj) = trig[j];
            let (val, grad) = kernel([r * (ci - cj), r * (si - sj)]);
            grid_val[i * m_q + j] = val;
            grid_nd[i * m_q + j] = grad[0] * ci + grad[1] * si;
        }
    }
    (
        contract_grid(&grid_val, r, n, m_q),
        contract_grid(&grid_nd, r, n, m_q),
    )
}

/// Contract a sampled kernel grid against the Fourier basis on both circles.
fn contract_grid(grid: &[Complex64], r: f64, n: usize, m_q: usize) -> DMatrix<Complex64> {
    let d = 2 * n + 1;
    let nn = n as i32;
    // basis[a][i] = exp(-i (a - N) th_i)
    let basis: Vec<Vec<Complex64>> = (-nn..=nn)
        .map(|order| {
            (0..m_q)
                .map(|i| {
                    let arg = -(order as f64) * TWO_PI * i as f64 / m_q as f64;
                    Complex64::new(arg.cos(), arg.sin())
                })
                .collect()
        })
        .collect();
    let mut half = vec![Complex64::default(); d * m_q];
    for a in 0..d {
        for j in 0..m_q {
            let mut acc = Complex64::default();
            for i in 0..m_q {
                acc += basis[a][i] * grid[i * m_q + j];
            }
            half[a * m_q + j] = acc;
        }
    }
    let w = TWO_PI * r / ((m_q * m_q) as f64);
    DMatrix::from_fn(d, d, |a, b| {
        let mut acc = Complex64::default();
        for j in 0..m_q {
            acc += half[a * m_q + j] * basis[b][j].conj();
        }
        acc * w
    })
}

/// Matrix of the quasi-periodic single layer potential `S_D^{alpha,k}` in
/// the Fourier basis: analytic free-space diagonal plus the quadrature of
/// the smooth lattice remainder.
pub fn quasi_single_layer_matrix(
    evaluator: &LatticeGreensEvaluator,
    r: f64,
    n: usize,
    m_q: usize,
) -> Result<DMatrix<Complex64>> {
    let k = evaluator.wavenumber();
    let free = if k > 0.0 {
        single_layer_free_matrix(k, r, n)?
    } else {
        static_single_layer_free_matrix(r, n).map(|v| Complex64::new(v, 0.0))
    };
    let rem = remainder_matrix(|z| evaluator.remainder(z), r, n, m_q);
    Ok(free + rem)
}

/// Matrix of the adjoint quasi-periodic Neumann-Poincare operator
/// `(K_D^{-alpha,k})^*`: free-space diagonal plus the quadrature of the
/// normal derivative of the remainder kernel.
pub fn quasi_neumann_poincare_matrix(
    evaluator: &LatticeGreensEvaluator,
    r: f64,
    n: usize,
    m_q: usize,
) -> Result<DMatrix<Complex64>> {
    Ok(quasi_layer_matrices(evaluator, r, n, m_q)?.1)
}

/// Both quasi-periodic matrices from one pass over the remainder kernel.
pub fn quasi_layer_matrices(
    evaluator: &LatticeGreensEvaluator,
    r: f64,
    n: usize,
    m_q: usize,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    let k = evaluator.wavenumber();
    if !(k > 0.0) {
        return Err(Error::Domain(
            "the quasi-periodic Neumann-Poincare matrix requires k > 0".into(),
        ));
    }
    let free_s = single_layer_free_matrix(k, r, n)?;
    let free_np = neumann_poincare_free_matrix(k, r, n)?;
    let (rem_s, rem_np) = remainder_matrices_pair(|z| evaluator.remainder_with_grad(z), r, n, m_q);
    Ok((free_s + rem_s, free_np + rem_np))
}

/// The Bloch-reduced system operator
///
/// ```text
/// A^alpha(omega, delta) = [ S^omega             -S^{alpha,omega}                ]
///                         [ -1/2 + K^{omega,*}  -delta(1/2 + (K^{-alpha,omega})*) ]
/// ```
pub fn assemble_a_alpha(
    omega: f64,
    config: &CrystalConfig,
    alpha: &BlochVector,
) -> Result<BlockOperator> {
    if !(omega > 0.0) {
        return Err(Error::Domain(format!("assemble_a_alpha requires omega > 0, got {omega}")));
    }
    let n = config.truncation;
    let r = config.radius;
    let d = config.block_dim();
    let evaluator = LatticeGreensEvaluator::new(omega, *alpha, config.ewald_split)?;
    let (s_quasi, np_quasi) = quasi_layer_matrices(&evaluator, r, n, config.circle_points)?;
    let s_free = single_layer_free_matrix(omega, r, n)?;
    let np_free = neumann_poincare_free_matrix(omega, r, n)?;
    let half = DMatrix::<Complex64>::identity(d, d) * Complex64::new(0.5, 0.0);
    let delta = Complex64::new(config.delta(), 0.0);
    let op = BlockOperator {
        a11: s_free,
        a12: -s_quasi,
        a21: np_free - &half,
        a22: (np_quasi + half) * (-delta),
    };
    op.check_finite()?;
    Ok(op)
}

/// Free-space two-density bubble operator `A_D` on a circle of radius `r`
/// (used with `r = R` for the unperturbed bubble and `r = R_d` for the
/// defect bubble).
pub fn free_bubble_operator(omega: f64, config: &CrystalConfig, r: f64) -> Result<BlockOperator> {
    if !(omega > 0.0) {
        return Err(Error::Domain("free_bubble_operator requires omega > 0".into()));
    }
    let n = config.truncation;
    let d = config.block_dim();
    let s = single_layer_free_matrix(omega, r, n)?;
    let np = neumann_poincare_free_matrix(omega, r, n)?;
    let half = DMatrix::<Complex64>::identity(d, d) * Complex64::new(0.5, 0.0);
    let delta = Complex64::new(config.delta(), 0.0);
    Ok(BlockOperator {
        a11: s.clone(),
        a12: -s,
        a21: np.clone() - &half,
        a22: (np + half) * (-delta),
    })
}

/// Density transfer operator `P_1` mapping densities on the unperturbed
/// circle to the defect circle; diagonal per Fourier order.
pub fn p1_matrix(omega: f64, config: &CrystalConfig) -> Result<BlockOperator> {
    let n = config.truncation as i32;
    let d = config.block_dim();
    let (r, rd) = (config.radius, config.radius_defect());
    let ratio = r / rd;
    let mut b11 = Vec::with_capacity(d);
    let mut b22 = Vec::with_capacity(d);
    for m in -n..=n {
        let h_r = specfun::hankel1(m, omega * r)?;
        let h_rd = specfun::hankel1(m, omega * rd)?;
        let j_r = specfun::bessel_j(m, omega * r)?;
        let j_rd = specfun::bessel_j(m, omega * rd)?;
        if h_rd.norm() == 0.0 || j_rd == 0.0 {
            return Err(Error::DegenerateFrequency(format!(
                "P_1 denominator vanishes at order {m}, omega = {omega}"
            )));
        }
        b11.push(h_r / h_rd * ratio);
        b22.push(Complex64::new(j_r / j_rd * ratio, 0.0));
    }
    Ok(BlockOperator {
        a11: diag_from(b11),
        a12: DMatrix::zeros(d, d),
        a21: DMatrix::zeros(d, d),
        a22: diag_from(b22),
    })
}

/// Trace transfer operator `P_2`; diagonal per Fourier order.
pub fn p2_matrix(omega: f64, config: &CrystalConfig) -> Result<BlockOperator> {
    let n = config.truncation as i32;
    let d = config.block_dim();
    let (r, rd) = (config.radius, config.radius_defect());
    let mut b11 = Vec::with_capacity(d);
    let mut b22 = Vec::with_capacity(d);
    for m in -n..=n {
        let j_r = specfun::bessel_j(m, omega * r)?;
        let j_rd = specfun::bessel_j(m, omega * rd)?;
        let jp_r = specfun::bessel_j_prime(m, omega * r)?;
        let jp_rd = specfun::bessel_j_prime(m, omega * rd)?;
        if j_r == 0.0 || jp_r == 0.0 {
            return Err(Error::DegenerateFrequency(format!(
                "P_2 denominator vanishes at order {m}, omega = {omega}"
            )));
        }
        b11.push(Complex64::new(j_rd / j_r, 0.0));
        b22.push(Complex64::new(jp_rd / jp_r, 0.0));
    }
    Ok(BlockOperator {
        a11: diag_from(b11),
        a12: DMatrix::zeros(d, d),
        a21: DMatrix::zeros(d, d),
        a22: diag_from(b22),
    })
}

/// The effective perturbation `A_D^epsilon - A_D = [0, E1; 0, E2]` with the
/// closed-form diagonal entries
///
/// ```text
/// E1_n = -(i pi R / 2) (J_n(wR)/J_n(wR_d)) (H_n(wR) J_n(wR_d) - J_n(wR) H_n(wR_d))
/// E2_n = -(i pi R J_n(wR) / 2) delta w (H_n'(wR) - J_n'(wR) H_n'(wR_d) / J_n'(wR_d))
/// ```
pub fn assemble_perturbation(omega: f64, config: &CrystalConfig) -> Result<BlockOperator> {
    if !(omega > 0.0) {
        return Err(Error::Domain("assemble_perturbation requires omega > 0".into()));
    }
    let d = config.block_dim();
    if config.epsilon == 0.0 {
        return Ok(BlockOperator {
            a11: DMatrix::zeros(d, d),
            a12: DMatrix::zeros(d, d),
            a21: DMatrix::zeros(d, d),
            a22: DMatrix::zeros(d, d),
        });
    }
    let n = config.truncation as i32;
    let (r, rd) = (config.radius, config.radius_defect());
    let delta = config.delta();
    let mut e1 = Vec::with_capacity(d);
    let mut e2 = Vec::with_capacity(d);
    for m in -n..=n {
        let j_r = specfun::bessel_j(m, omega * r)?;
        let j_rd = specfun::bessel_j(m, omega * rd)?;
        let jp_r = specfun::bessel_j_prime(m, omega * r)?;
        let jp_rd = specfun::bessel_j_prime(m, omega * rd)?;
        let h_r = specfun::hankel1(m, omega * r)?;
        let h_rd = specfun::hankel1(m, omega * rd)?;
        let hp_r = specfun::hankel1_prime(m, omega * r)?;
        let hp_rd = specfun::hankel1_prime(m, omega * rd)?;
        if j_rd == 0.0 || jp_rd == 0.0 {
            return Err(Error::DegenerateFrequency(format!(
                "Bessel zero in a perturbation denominator at order {m}, omega = {omega}"
            )));
        }
        let factor = Complex64::new(0.0, -PI * r / 2.0);
        let v1 = factor * (j_r / j_rd) * (h_r * j_rd - h_rd * j_r);
        let v2 = factor * j_r * delta * omega * (hp_r - hp_rd * (jp_r / jp_rd));
        if !v1.re.is_finite() || !v1.im.is_finite() || !v2.re.is_finite() || !v2.im.is_finite() {
            return Err(Error::DegenerateFrequency(format!(
                "non-finite perturbation entry at order {m}, omega = {omega}"
            )));
        }
        e1.push(v1);
        e2.push(v2);
    }
    Ok(BlockOperator {
        a11: DMatrix::zeros(d, d),
        a12: diag_from(e1),
        a21: DMatrix::zeros(d, d),
        a22: diag_from(e2),
    })
}

/// Multiply by a diagonal matrix on the right (column scaling).
fn times_diag(m: &DMatrix<Complex64>, diag: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let mut out = m.clone();
    for j in 0..m.ncols() {
        let s = diag[(j, j)];
        for i in 0..m.nrows() {
            out[(i, j)] *= s;
        }
    }
    out
}

/// The defect system operator
///
/// ```text
/// M(omega; eps, delta, alpha1) = I + ((1/2pi) int_{Y*} A^alpha(omega)^{-1} d alpha2)
///                                    (A_D^eps - A_D)
/// ```
///
/// with the Brillouin integral discretized by the trapezoidal rule on
/// `quadrature_points` nodes. Requires `omega` inside the bandgap at
/// `alpha1`, where every `A^alpha` along the quadrature line is invertible.
pub fn assemble_m(omega: f64, config: &CrystalConfig, alpha1: f64) -> Result<BlockOperator> {
    let d = config.block_dim();
    if config.epsilon == 0.0 {
        return Ok(BlockOperator::identity(d));
    }
    let pert = assemble_perturbation(omega, config)?;
    let q = config.quadrature_points;

    let inverses: Vec<DMatrix<Complex64>> = (0..q)
        .into_par_iter()
        .map(|i| {
            let alpha2 = TWO_PI * i as f64 / q as f64;
            let alpha = BlochVector::new(alpha1, alpha2);
            let a = assemble_a_alpha(omega, config, &alpha)?;
            a.full().lu().try_inverse().ok_or_else(|| {
                Error::QuadratureSingularity(format!(
                    "A^alpha singular at alpha2 node {i} (alpha2 = {alpha2:.6}), omega = {omega}"
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut w = DMatrix::<Complex64>::zeros(2 * d, 2 * d);
    for inv in &inverses {
        w += inv;
    }
    w /= Complex64::new(q as f64, 0.0);

    let w11 = w.view((0, 0), (d, d)).into_owned();
    let w12 = w.view((0, d), (d, d)).into_owned();
    let w21 = w.view((d, 0), (d, d)).into_owned();
    let w22 = w.view((d, d), (d, d)).into_owned();

    let m12 = times_diag(&w11, &pert.a12) + times_diag(&w12, &pert.a22);
    let m22 = DMatrix::<Complex64>::identity(d, d)
        + times_diag(&w21, &pert.a12)
        + times_diag(&w22, &pert.a22);

    let op = BlockOperator {
        a11: DMatrix::identity(d, d),
        a12: m12,
        a21: DMatrix::zeros(d, d),
        a22: m22,
    };
    op.check_finite()?;
    Ok(op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greens::reference;

    fn fig2_config() -> CrystalConfig {
        CrystalConfig::new(1.0, 1.0, 5000.0, 5000.0, 0.05, -0.2 * 0.05).unwrap()
    }

    #[test]
    fn config_validation_rules() {
        assert!(CrystalConfig::new(1.0, 1.0, 5000.0, 5000.0, 0.05, -0.01).is_ok());
        // delta >= 1
        assert!(CrystalConfig::new(2.0, 2.0, 1.0, 1.0, 0.05, 0.0).is_err());
        // wave-speed mismatch
        assert!(CrystalConfig::new(1.0, 2.0, 5000.0, 5000.0, 0.05, 0.0).is_err());
        // zero density
        assert!(CrystalConfig::new(0.0, 1.0, 5000.0, 5000.0, 0.05, 0.0).is_err());
        // radius out of range
        assert!(CrystalConfig::new(1.0, 1.0, 5000.0, 5000.0, 0.6, 0.0).is_err());
        // defect radius collapses
        assert!(CrystalConfig::new(1.0, 1.0, 5000.0, 5000.0, 0.05, -0.05).is_err());
        // Fig. 4 style oversize defect is allowed (with a warning)
        assert!(CrystalConfig::new(1.0, 1.0, 5000.0, 5000.0, 0.4, 0.45 * 0.4).is_ok());
    }

    #[test]
    fn single_layer_entry_matches_formula() {
        let (k, r, n) = (0.1, 0.05, 3);
        let m = single_layer_free_matrix(k, r, n).unwrap();
        let expected = Complex64::new(0.0, -PI * r / 2.0)
            * specfun::bessel_j(0, k * r).unwrap()
            * specfun::hankel1(0, k * r).unwrap();
        assert_eq!(m[(n, n)], expected);
        for i in 0..2 * n + 1 {
            for j in 0..2 * n + 1 {
                if i != j {
                    assert_eq!(m[(i, j)], Complex64::default());
                }
            }
        }
    }

    #[test]
    fn single_layer_static_limit() {
        // n = 0 entry tends to R ln R + 2 pi R eta_k as k -> 0.
        let (k, r, n) = (1e-4, 0.1, 2);
        let m = single_layer_free_matrix(k, r, n).unwrap();
        let expected =
            Complex64::new(r * r.ln(), 0.0) + 2.0 * PI * r * specfun::eta(k).unwrap();
        assert!((m[(n, n)] - expected).norm() < 1e-6, "{} vs {expected}", m[(n, n)]);
    }

    #[test]
    fn static_single_layer_entries() {
        let r = 0.05;
        let m = static_single_layer_free_matrix(r, 3);
        assert_eq!(m[(3, 3)], r * r.ln());
        assert_eq!(m[(4, 4)], -0.025);
        assert_eq!(m[(2, 2)], -0.025);
        for i in 0..7 {
            assert_eq!(m[(i, i)], m[(6 - i, 6 - i)]);
        }
    }

    #[test]
    fn neumann_poincare_small_frequency_limits() {
        let r = 0.05;
        // n = 0: (-1/2 + K)_00 ~ -(R^2/2) w^2 (2 pi eta_w + ln R)
        let omega = 0.01;
        let m = neumann_poincare_free_matrix(omega, r, 2).unwrap();
        let got = m[(2, 2)] - Complex64::new(0.5, 0.0);
        let expected = Complex64::new(-r * r / 2.0 * omega * omega, 0.0)
            * (2.0 * PI * specfun::eta(omega).unwrap() + Complex64::new(r.ln(), 0.0));
        assert!(
            (got - expected).norm() < 1e-3 * expected.norm(),
            "{got} vs {expected}"
        );

        // n = 2: (-1/2 + K)_nn -> -1/2
        let omega = 1e-5;
        let m = neumann_poincare_free_matrix(omega, r, 2).unwrap();
        let got = m[(4, 4)] - Complex64::new(0.5, 0.0);
        assert!((got + Complex64::new(0.5, 0.0)).norm() < 1e-4, "{got}");

        // parity: entries for n and -n coincide
        assert_eq!(m[(0, 0)], m[(4, 4)]);
        assert_eq!(m[(1, 1)], m[(3, 3)]);
    }

    #[test]
    fn neumann_poincare_consistent_with_wronskian_form() {
        // (-1/2 + K)_nn must equal -(i pi r k / 2) J_n'(kr) H_n(kr).
        let (k, r, n) = (0.7, 0.3, 4);
        let m = neumann_poincare_free_matrix(k, r, n).unwrap();
        for order in -(n as i32)..=(n as i32) {
            let idx = (order + n as i32) as usize;
            let direct = Complex64::new(0.0, -PI * r * k / 2.0)
                * specfun::bessel_j_prime(order, k * r).unwrap()
                * specfun::hankel1(order, k * r).unwrap();
            let shifted = m[(idx, idx)] - Complex64::new(0.5, 0.0);
            assert!((shifted - direct).norm() < 1e-14, "order {order}");
        }
    }

    #[test]
    fn zero_remainder_reproduces_free_matrices() {
        let (k, r, n, m_q) = (0.3, 0.2, 3, 32);
        let rem = remainder_matrix(|_| Complex64::default(), r, n, m_q);
        assert!(rem.iter().all(|c| c.norm() == 0.0));
        let (rem_s, rem_np) = remainder_matrices_pair(
            |_| (Complex64::default(), [Complex64::default(); 2]),
            r,
            n,
            m_q,
        );
        assert!(rem_s.iter().all(|c| c.norm() == 0.0));
        assert!(rem_np.iter().all(|c| c.norm() == 0.0));
        let free = single_layer_free_matrix(k, r, n).unwrap();
        let with_zero = free.clone() + rem_s;
        assert_eq!(free, with_zero);
    }

    #[test]
    fn quasi_single_layer_against_tapered_lattice_sum() {
        // Brute-force oracle: analytic free part plus quadrature of the
        // tapered direct sum over the nonzero lattice translates.
        let (k, r, n, m_q) = (0.05, 0.2, 2, 32);
        let alpha = BlochVector::new(PI, PI);
        let ev = LatticeGreensEvaluator::standard(k, alpha).unwrap();
        let production = quasi_single_layer_matrix(&ev, r, n, m_q).unwrap();

        let oracle_rem = remainder_matrix(
            |z| reference::tapered_remainder(z, &alpha, k, 16.0).unwrap(),
            r,
            n,
            m_q,
        );
        let oracle = single_layer_free_matrix(k, r, n).unwrap() + oracle_rem;
        let diff = (&production - &oracle)
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6, "max entry difference {diff}");
    }

    #[test]
    fn static_quasi_single_layer_constant_mode_is_negative() {
        let (r, n, m_q) = (0.05, 4, 48);
        let alpha = BlochVector::new(PI, PI);
        let ev = LatticeGreensEvaluator::standard(0.0, alpha).unwrap();
        let s = quasi_single_layer_matrix(&ev, r, n, m_q).unwrap();
        let c = s[(n, n)];
        assert!(c.re < 0.0, "constant-mode coefficient {c}");
        assert!(c.im.abs() < 1e-12);
    }

    #[test]
    fn jump_relation_between_traces() {
        // The two traces of the normal derivative reconstructed from
        // (+-1/2 I + (K^{-alpha,k})*) differ by exactly the density.
        let config = fig2_config();
        let (n, d) = (config.truncation, config.block_dim());
        let alpha = BlochVector::new(2.0, 3.0);
        let ev = LatticeGreensEvaluator::new(0.05, alpha, config.ewald_split).unwrap();
        let npq =
            quasi_neumann_poincare_matrix(&ev, config.radius, n, config.circle_points).unwrap();
        let id = DMatrix::<Complex64>::identity(d, d);
        let outer = &npq + &id * Complex64::new(0.5, 0.0);
        let inner = &npq - &id * Complex64::new(0.5, 0.0);
        let phi =
            DMatrix::from_fn(d, 1, |i, _| Complex64::new(0.3 + i as f64, 1.0 - i as f64 / 7.0));
        let diff = &outer * &phi - &inner * &phi;
        let scale = phi.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for i in 0..d {
            assert!(
                (diff[(i, 0)] - phi[(i, 0)]).norm() <= 1e-14 * scale,
                "jump mismatch in row {i}: {} vs {}",
                diff[(i, 0)],
                phi[(i, 0)]
            );
        }
    }

    #[test]
    fn quasi_neumann_poincare_against_finite_differences() {
        // Differentiate the quasi single layer potential across the boundary
        // and compare with the assembled +1/2 trace, extrapolating the
        // off-boundary offsets linearly to the boundary.
        let (k, r, n) = (0.05, 0.2, 2);
        let alpha = BlochVector::new(2.0, 3.0);
        let ev = LatticeGreensEvaluator::standard(k, alpha).unwrap();
        let npq = quasi_neumann_poincare_matrix(&ev, r, n, 64).unwrap();

        let m_oracle = 8192;
        let density_order = 1i32;
        let potential = |rho: f64, theta: f64| -> Complex64 {
            let x = [rho * theta.cos(), rho * theta.sin()];
            let mut acc = Complex64::default();
            for j in 0..m_oracle {
                let tj = TWO_PI * j as f64 / m_oracle as f64;
                let y = [r * tj.cos(), r * tj.sin()];
                let g = ev.gamma_quasi([x[0] - y[0], x[1] - y[1]]).unwrap();
                let phase = Complex64::new(
                    (density_order as f64 * tj).cos(),
                    (density_order as f64 * tj).sin(),
                );
                acc += g * phase;
            }
            acc * (TWO_PI * r / m_oracle as f64)
        };

        for &theta in &[0.4, 1.9, 4.4] {
            let col = (density_order + n as i32) as usize;
            let mut trace = Complex64::default();
            for row in 0..2 * n + 1 {
                let order = row as i32 - n as i32;
                let entry = npq[(row, col)]
                    + if row == col {
                        Complex64::new(0.5, 0.0)
                    } else {
                        Complex64::default()
                    };
                trace += entry
                    * Complex64::new((order as f64 * theta).cos(), (order as f64 * theta).sin());
            }

            // Central differences at three offsets from the boundary,
            // extrapolated quadratically to the outer trace.
            let h = 5e-4;
            let d_at = |offset: f64| -> Complex64 {
                (potential(r + offset + h, theta) - potential(r + offset - h, theta)) / (2.0 * h)
            };
            let d1 = d_at(2.0 * h);
            let d2 = d_at(4.0 * h);
            let d3 = d_at(6.0 * h);
            let fd = d1 * 3.0 - d2 * 3.0 + d3;
            assert!(
                (trace - fd).norm() < 1e-5,
                "theta = {theta}: trace {trace} vs fd {fd}"
            );
        }
    }

    #[test]
    fn a_alpha_block_11_is_free_single_layer() {
        let config = fig2_config();
        let alpha = BlochVector::new(1.0, 2.0);
        let omega = 0.2;
        let a = assemble_a_alpha(omega, &config, &alpha).unwrap();
        let free = single_layer_free_matrix(omega, config.radius, config.truncation).unwrap();
        assert_eq!(a.a11, free);
    }

    #[test]
    fn perturbation_vanishes_for_zero_epsilon() {
        let mut config = fig2_config();
        config.epsilon = 0.0;
        let p = assemble_perturbation(0.2, &config).unwrap();
        assert_eq!(p.max_entry(), 0.0);
    }

    #[test]
    fn perturbation_small_frequency_forms() {
        let config = CrystalConfig::new(1.0, 1.0, 5000.0, 5000.0, 0.05, -0.01).unwrap();
        let omega = 1e-4;
        let (r, rd) = (config.radius, config.radius_defect());
        let p = assemble_perturbation(omega, &config).unwrap();
        let d = config.truncation;

        let e1_00 = p.a12[(d, d)];
        let expected1 = r * (r / rd).ln();
        assert!(
            (e1_00.re - expected1).abs() < 1e-3 * expected1.abs() && e1_00.im.abs() < 1e-6,
            "E1 n=0: {e1_00} vs {expected1}"
        );

        let e2_00 = p.a22[(d, d)];
        let expected2 = config.delta() * (1.0 - r * r / (rd * rd));
        assert!(
            (e2_00.re - expected2).abs() < 1e-3 * expected2.abs() && e2_00.im.abs() < 1e-8,
            "E2 n=0: {e2_00} vs {expected2}"
        );

        // E1 entries for n != 0: -(R / 2|n|)(1 - R^{2|n|}/R_d^{2|n|}) + O(w)
        let e1_11 = p.a12[(d + 1, d + 1)];
        let expected_n1 = -(r / 2.0) * (1.0 - (r / rd).powi(2));
        assert!(
            (e1_11.re - expected_n1).abs() < 1e-3 * expected_n1.abs(),
            "E1 n=1: {e1_11} vs {expected_n1}"
        );

        // Structural zeros.
        assert!(p.a11.iter().all(|c| c.norm() == 0.0));
        assert!(p.a21.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn effective_operator_equals_conjugated_defect_operator() {
        // A_D + [0 E1; 0 E2] must equal P_2^{-1} A_{D_d} P_1 order by order.
        let config = CrystalConfig::new(1.0, 1.0, 5000.0, 5000.0, 0.05, -0.01).unwrap();
        let omega = 0.23;
        let n = config.truncation as i32;
        let a_d = free_bubble_operator(omega, &config, config.radius).unwrap();
        let a_dd = free_bubble_operator(omega, &config, config.radius_defect()).unwrap();
        let p1 = p1_matrix(omega, &config).unwrap();
        let p2 = p2_matrix(omega, &config).unwrap();
        let pert = assemble_perturbation(omega, &config).unwrap();

        for m in -n..=n {
            let i = (m + n) as usize;
            let add = [
                [a_dd.a11[(i, i)], a_dd.a12[(i, i)]],
                [a_dd.a21[(i, i)], a_dd.a22[(i, i)]],
            ];
            let p1b = [p1.a11[(i, i)], p1.a22[(i, i)]];
            let p2b = [p2.a11[(i, i)], p2.a22[(i, i)]];
            let eff = [
                [add[0][0] * p1b[0] / p2b[0], add[0][1] * p1b[1] / p2b[0]],
                [add[1][0] * p1b[0] / p2b[1], add[1][1] * p1b[1] / p2b[1]],
            ];
            let exp11 = a_d.a11[(i, i)];
            let exp12 = a_d.a12[(i, i)] + pert.a12[(i, i)];
            let exp21 = a_d.a21[(i, i)];
            let exp22 = a_d.a22[(i, i)] + pert.a22[(i, i)];
            let tol = 1e-12
                * [exp11, exp12, exp21, exp22]
                    .iter()
                    .map(|c| c.norm())
                    .fold(1.0, f64::max);
            assert!((eff[0][0] - exp11).norm() < tol, "order {m} (1,1)");
            assert!((eff[0][1] - exp12).norm() < tol, "order {m} (1,2)");
            assert!((eff[1][0] - exp21).norm() < tol, "order {m} (2,1)");
            assert!((eff[1][1] - exp22).norm() < tol, "order {m} (2,2)");
        }
    }

    #[test]
    fn m_is_identity_for_zero_epsilon() {
        let mut config = fig2_config();
        config.epsilon = 0.0;
        let m = assemble_m(0.3, &config, PI).unwrap();
        let d = config.block_dim();
        assert_eq!(m, BlockOperator::identity(d));
    }

    #[test]
    fn m_has_structural_block_column() {
        let mut config = fig2_config();
        config.quadrature_points = 20; // keep the test quick
        config.circle_points = 32;
        let m = assemble_m(0.3, &config, PI).unwrap();
        let d = config.block_dim();
        assert_eq!(m.a11, DMatrix::<Complex64>::identity(d, d));
        assert!(m.a21.iter().all(|c| c.norm() == 0.0));
        assert!(m.a12.iter().any(|c| c.norm() > 0.0));
    }

    #[test]
    fn relative_condition_number_is_finite_in_gap() {
        let config = fig2_config();
        // omega = 0.3 sits above the first band (max ~0.23) and far below
        // the second band for these parameters.
        let a = assemble_a_alpha(0.3, &config, &BlochVector::new(1.0, 2.5)).unwrap();
        let svd = a.full().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        assert!(smax / smin < 1e12, "condition number {}", smax / smin);
    }
}
