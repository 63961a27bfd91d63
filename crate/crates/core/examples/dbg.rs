use bubblegap_core::greens::*;
use num_complex::Complex64;
use std::f64::consts::PI;

fn main() {
    let two_pi = 2.0 * PI;
    let (k, r) = (0.05f64, 0.2f64);
    let alpha = BlochVector::new(2.0, 3.0);
    let ev = LatticeGreensEvaluator::standard(k, alpha).unwrap();

    // Direct check of the +1/2 trace for density e^{i theta} via three routes.
    // Route A: quadrature of the analytic remainder gradient (production kernel),
    //          plus the free-part formula.
    // Route B: derivative of the potential computed with gamma_quasi off-boundary.
    // Route C: quadrature of FD-gradient of the remainder (independent of the
    //          analytic gradient), plus free part.
    let m = 2048;
    let theta_x = 0.4f64;
    let x = [r * theta_x.cos(), r * theta_x.sin()];
    let nu = [theta_x.cos(), theta_x.sin()];

    let mut trace_a = Complex64::default();
    let mut trace_c = Complex64::default();
    let h = 1e-6;
    for j in 0..m {
        let tj = two_pi * j as f64 / m as f64;
        let y = [r * tj.cos(), r * tj.sin()];
        let z = [x[0] - y[0], x[1] - y[1]];
        let (_, grad) = ev.remainder_with_grad(z);
        let phase = Complex64::new(tj.cos(), tj.sin());
        trace_a += (grad[0] * nu[0] + grad[1] * nu[1]) * phase;
        let gfd0 = (ev.remainder([z[0] + h, z[1]]) - ev.remainder([z[0] - h, z[1]])) / (2.0 * h);
        let gfd1 = (ev.remainder([z[0], z[1] + h]) - ev.remainder([z[0], z[1] - h])) / (2.0 * h);
        trace_c += (gfd0 * nu[0] + gfd1 * nu[1]) * phase;
    }
    let wq = two_pi * r / m as f64;
    trace_a *= wq;
    trace_c *= wq;

    // free part (+1/2 + K_free)* acting on e^{i theta}:
    let x_arg = k * r;
    let j1 = bubblegap_core::specfun::bessel_j(1, x_arg).unwrap();
    let h1p = bubblegap_core::specfun::hankel1_prime(1, x_arg).unwrap();
    let free_entry = Complex64::new(0.0, -PI * r * k / 2.0) * j1 * h1p; // (1/2 + K)_11
    let free_trace = free_entry * Complex64::new(theta_x.cos(), theta_x.sin());
    println!("free (1/2+K) entry = {free_entry}");
    println!("trace A (analytic grad + free) = {}", trace_a + free_trace);
    println!("trace C (fd grad + free)       = {}", trace_c + free_trace);

    // Route B
    let m_oracle = 8192;
    let potential = |rho: f64| -> Complex64 {
        let xx = [rho * theta_x.cos(), rho * theta_x.sin()];
        let mut acc = Complex64::default();
        for j in 0..m_oracle {
            let tj = two_pi * j as f64 / m_oracle as f64;
            let y = [r * tj.cos(), r * tj.sin()];
            let g = ev.gamma_quasi([xx[0] - y[0], xx[1] - y[1]]).unwrap();
            acc += g * Complex64::new(tj.cos(), tj.sin());
        }
        acc * (two_pi * r / m_oracle as f64)
    };
    let hh = 5e-4;
    let d_at = |offset: f64| (potential(r + offset + hh) - potential(r + offset - hh)) / (2.0 * hh);
    let d1 = d_at(2.0 * hh);
    let d2 = d_at(4.0 * hh);
    let d3 = d_at(6.0 * hh);
    println!("fd offsets: {d1}  {d2}  {d3}");
    println!("trace B quad-extrap            = {}", d1 * 3.0 - d2 * 3.0 + d3);
}
