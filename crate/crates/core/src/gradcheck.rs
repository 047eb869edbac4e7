//! Central finite differences for verifying analytic gradients.
//!
//! Used throughout the test suites and the acceptance gate: every hand
//! written backward pass in this crate is required to agree with
//! [`fd_grad`] to a relative error below 1e-4.

use crate::linalg::Mat;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradient of `loss` with respect to the matrix selected
/// by `param` inside a clonable state. The loss is re-evaluated from a fresh
/// clone per probe, so it may cache nothing.
pub fn fd_grad<S: Clone>(
    state: &S,
    step: f64,
    param: impl Fn(&mut S) -> &mut Mat,
    loss: impl Fn(&S) -> f64,
) -> Mat {
    let shape = {
        let mut probe = state.clone();
        let m = param(&mut probe);
        (m.rows(), m.cols())
    };
    let mut grad = Mat::zeros(shape.0, shape.1);
    for i in 0..shape.0 * shape.1 {
        let mut plus = state.clone();
        param(&mut plus).as_mut_slice()[i] += step;
        let fp = loss(&plus);
        let mut minus = state.clone();
        param(&mut minus).as_mut_slice()[i] -= step;
        let fm = loss(&minus);
        grad.as_mut_slice()[i] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Worst relative error between an analytic and a finite-difference
/// gradient. Small magnitudes are compared against an absolute floor so
/// finite-difference round-off cannot dominate.
pub fn max_rel_err(analytic: &Mat, fd: &Mat) -> f64 {
    assert_eq!(analytic.rows(), fd.rows());
    assert_eq!(analytic.cols(), fd.cols());
    analytic
        .as_slice()
        .iter()
        .zip(fd.as_slice())
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone)]
    struct Quad {
        x: Mat,
    }

    #[test]
    fn recovers_quadratic_gradient() {
        let state = Quad {
            x: Mat::from_vec(1, 3, vec![1.0, -2.0, 0.5]),
        };
        // f = sum x_i^2, grad = 2x
        let fd = fd_grad(
            &state,
            DEFAULT_STEP,
            |s| &mut s.x,
            |s| s.x.as_slice().iter().map(|v| v * v).sum(),
        );
        let analytic = Mat::from_vec(1, 3, vec![2.0, -4.0, 1.0]);
        assert!(max_rel_err(&analytic, &fd) < 1e-8);
    }
}
