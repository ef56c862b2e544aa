//! Central finite-difference gradient checks.

use super::Network;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// Flat index of the parameter with the largest relative error.
    pub worst_index: usize,
    pub checked: usize,
    pub passed: bool,
}

/// Relative error with a small absolute floor so exactly-zero gradients
/// (dead relus) compare cleanly.
fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares `analytic` against central differences of `f` around `params`.
/// `params` is restored before returning.
pub fn check_gradient(
    params: &mut [f64],
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
    step: f64,
    tol: f64,
) -> FdReport {
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut worst = (0.0, 0);
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + step;
        let up = f(params);
        params[i] = orig - step;
        let down = f(params);
        params[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let e = rel_error(analytic[i], numeric);
        if e > worst.0 {
            worst = (e, i);
        }
    }
    FdReport {
        max_rel_error: worst.0,
        worst_index: worst.1,
        checked: params.len(),
        passed: worst.0 < tol,
    }
}

fn flatten(net: &Network) -> Vec<f64> {
    net.params().flat_map(|s| s.iter().copied()).collect()
}

fn load(net: &mut Network, flat: &[f64]) {
    let mut k = 0;
    for s in net.params_mut() {
        let n = s.len();
        s.copy_from_slice(&flat[k..k + n]);
        k += n;
    }
}

/// Checks [`Network::backward`] on every parameter of `net` for the scalar
/// loss `loss_fn(y) -> (value, dL/dy)`.
pub fn finite_diff_check(
    net: &Network,
    x: &[f64],
    loss_fn: impl Fn(&[f64]) -> (f64, Vec<f64>),
    step: f64,
    tol: f64,
) -> Result<FdReport> {
    let y = net.forward(x)?;
    let (_, dl_dy) = loss_fn(&y);
    let tape = net.backward(x, &dl_dy)?;
    Ok(finite_diff_check_with(
        net,
        x,
        &loss_fn,
        &tape.flatten(),
        step,
        tol,
    ))
}

/// Same as [`finite_diff_check`] but against a caller-supplied analytic
/// gradient (used for negative controls).
pub fn finite_diff_check_with(
    net: &Network,
    x: &[f64],
    loss_fn: &impl Fn(&[f64]) -> (f64, Vec<f64>),
    analytic: &[f64],
    step: f64,
    tol: f64,
) -> FdReport {
    let mut scratch = net.clone();
    let mut flat = flatten(net);
    check_gradient(
        &mut flat,
        analytic,
        |p| {
            load(&mut scratch, p);
            loss_fn(&scratch.forward(x).expect("dims checked")).0
        },
        step,
        tol,
    )
}
