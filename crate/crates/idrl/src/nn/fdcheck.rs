//! Central finite-difference verification of analytic gradients.

use super::mlp::Mlp;
use super::tape::Arr;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small absolute floor so near-zero entries do not
/// blow up the ratio.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-6)
}

/// Central difference d loss / d p for one parameter entry.
pub fn central_diff(p: &mut f64, loss: &mut impl FnMut() -> f64) -> f64 {
    let saved = *p;
    *p = saved + FD_STEP;
    let up = loss();
    *p = saved - FD_STEP;
    let down = loss();
    *p = saved;
    (up - down) / (2.0 * FD_STEP)
}

/// Compare analytic parameter gradients of `net` (canonical flat order)
/// against central finite differences of `loss_of`. Returns false and logs
/// to stderr on the first mismatch beyond `tol` relative error.
///
/// ReLU and clamp kinks make the loss piecewise smooth; a perturbation that
/// straddles a kink produces a step-size-dependent difference quotient. On
/// a mismatch the quotient is re-estimated at h/10: if the two estimates
/// disagree the coordinate sits on a kink and is skipped, otherwise it is a
/// genuine gradient error.
pub fn check_param_grads(
    net: &mut Mlp,
    analytic: &[Arr],
    loss_of: impl Fn(&Mlp) -> f64,
    tol: f64,
) -> bool {
    let shapes: Vec<(usize, usize)> = net.param_arrays().iter().map(|a| a.dim()).collect();
    assert_eq!(shapes.len(), analytic.len());
    for (pi, &(rows, cols)) in shapes.iter().enumerate() {
        for r in 0..rows {
            for c in 0..cols {
                let (fd, lopsided) = fd_at(net, pi, r, c, &loss_of, FD_STEP);
                let an = analytic[pi][(r, c)];
                let err = rel_err(an, fd);
                if err > tol {
                    let (fd_small, lopsided_small) = fd_at(net, pi, r, c, &loss_of, FD_STEP / 10.0);
                    let h_stable = rel_err(fd_small, fd) < 0.01;
                    if h_stable && !lopsided && !lopsided_small {
                        eprintln!(
                            "gradient mismatch at param {pi} ({r},{c}): analytic {an}, fd {fd}, rel err {err}"
                        );
                        return false;
                    }
                    // the step straddles a kink (one-sided slopes disagree or
                    // the quotient is step-size dependent); the a.e. gradient
                    // is still correct there
                }
            }
        }
    }
    true
}

/// Central quotient plus a kink flag: true when the forward and backward
/// one-sided slopes disagree beyond first-order truncation noise.
fn fd_at(
    net: &mut Mlp,
    pi: usize,
    r: usize,
    c: usize,
    loss_of: &impl Fn(&Mlp) -> f64,
    h: f64,
) -> (f64, bool) {
    let saved = net.param_arrays()[pi][(r, c)];
    let mid = loss_of(net);
    {
        let mut params = net.param_arrays_mut();
        params[pi][(r, c)] = saved + h;
    }
    let up = loss_of(net);
    {
        let mut params = net.param_arrays_mut();
        params[pi][(r, c)] = saved - h;
    }
    let down = loss_of(net);
    {
        let mut params = net.param_arrays_mut();
        params[pi][(r, c)] = saved;
    }
    let forward = (up - mid) / h;
    let backward = (mid - down) / h;
    let scale = forward.abs().max(backward.abs()).max(1e-6);
    let lopsided = (forward - backward).abs() / scale > 0.05;
    ((up - down) / (2.0 * h), lopsided)
}
