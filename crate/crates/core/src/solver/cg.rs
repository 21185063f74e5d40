use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::forward::SpatialFactor;

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: SpatialFactor,
    pub iterations: usize,
    /// `||r|| / ||r_0||` at exit (0 when the start was already exact).
    pub rel_residual: f64,
}

/// Conjugate gradients for a Hermitian positive definite `apply`, starting
/// from `x0`, stopping after `max_iters` or once `||r|| <= tol ||r_0||`.
pub fn conjugate_gradient(
    apply: impl Fn(&SpatialFactor) -> Result<SpatialFactor>,
    rhs: &SpatialFactor,
    x0: &SpatialFactor,
    max_iters: usize,
    tol: f64,
) -> Result<CgOutcome> {
    rhs.check_like(x0)?;
    let mut x = x0.clone();
    let mut r = rhs.clone();
    r.axpy(Complex64::new(-1.0, 0.0), &apply(&x)?);
    let r0 = r.norm();
    if r0 == 0.0 {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let mut p = r.clone();
    let mut rr = r.norm_sqr();
    let mut iterations = 0;
    while iterations < max_iters && rr.sqrt() > tol * r0 {
        let ap = apply(&p)?;
        let curv = p.inner(&ap).re;
        if !(curv > 0.0 && curv.is_finite()) {
            return Err(Error::solver(
                "conjugate gradient",
                format!("non-positive curvature {curv} at iteration {iterations}"),
            ));
        }
        let alpha = rr / curv;
        x.axpy(Complex64::new(alpha, 0.0), &p);
        r.axpy(Complex64::new(-alpha, 0.0), &ap);
        let rr_new = r.norm_sqr();
        let gamma = rr_new / rr;
        rr = rr_new;
        // p = r + gamma p
        ndarray::Zip::from(&mut p.0)
            .and(&r.0)
            .for_each(|pv, &rv| *pv = rv + *pv * gamma);
        iterations += 1;
    }
    if !x.is_finite() {
        return Err(Error::solver(
            "conjugate gradient",
            "iterate became non-finite",
        ));
    }
    Ok(CgOutcome {
        x,
        iterations,
        rel_residual: rr.sqrt() / r0,
    })
}
