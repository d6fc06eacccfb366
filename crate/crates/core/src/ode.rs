//! Adaptive Dormand–Prince 5(4) integrator with FSAL and automatic initial
//! step selection, generic over fixed-size state vectors. Integration may run
//! forward or backward in time (`t0 > t_end` flips the direction).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t:.6e} (h = {h:.3e})")]
    StepSizeUnderflow { t: f64, h: f64 },
}

/// Integration outcome with effort counters.
#[derive(Debug, Clone)]
pub struct OdeSolution<const N: usize> {
    pub y: [f64; N],
    pub n_accepted: usize,
    pub n_rejected: usize,
    pub n_rhs_evals: usize,
}

/// Steps smaller than this (when not simply landing on `t_end`) abort the
/// integration.
pub const MIN_STEP: f64 = 1e-12;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;
/// Error-control exponent for a 5th-order method: h ∝ err^(−1/5).
const ORDER_EXP: f64 = 0.2;

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// 5th-order solution weights (row 7 of A: the FSAL property).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
/// Error-estimate weights (5th minus embedded 4th order solution).
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Attempt<const N: usize> {
    y5: [f64; N],
    /// f(t + h, y5): next step's first stage under FSAL.
    k_last: [f64; N],
    /// RMS of the componentwise error scaled by atol + rtol·max(|y|, |y5|).
    err_norm: f64,
}

/// One trial step of signed size `h` from `(t, y)` with first stage `k1`.
/// Costs exactly 6 rhs evaluations.
fn attempt_step<const N: usize>(
    f: &mut impl FnMut(f64, &[f64; N]) -> [f64; N],
    t: f64,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
    rtol: f64,
    atol: f64,
) -> Attempt<N> {
    let mut k = [[0.0; N]; 7];
    k[0] = *k1;
    for s in 1..7 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            let a = A[s][j];
            if a != 0.0 {
                for i in 0..N {
                    ys[i] += h * a * kj[i];
                }
            }
        }
        k[s] = f(t + C[s] * h, &ys);
    }

    let mut y5 = *y;
    for (j, kj) in k.iter().enumerate() {
        if B5[j] != 0.0 {
            for i in 0..N {
                y5[i] += h * B5[j] * kj[i];
            }
        }
    }

    let mut acc = 0.0;
    for i in 0..N {
        let mut e = 0.0;
        for (j, kj) in k.iter().enumerate() {
            e += E[j] * kj[i];
        }
        e *= h;
        let scale = atol + rtol * y[i].abs().max(y5[i].abs());
        let r = e / scale;
        acc += r * r;
    }
    let err_norm = (acc / N as f64).sqrt();

    Attempt { y5, k_last: k[6], err_norm }
}

/// Automatic initial step size (Hairer, Nørsett & Wanner II.4). When the rhs
/// is (numerically) zero the full span is returned, so a zero field is
/// integrated in a single step. Costs one rhs evaluation.
fn initial_step<const N: usize>(
    f: &mut impl FnMut(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    dir: f64,
    y0: &[f64; N],
    f0: &[f64; N],
    rtol: f64,
    atol: f64,
    span: f64,
) -> f64 {
    let rms = |v: &[f64; N]| -> f64 {
        let mut s = 0.0;
        for i in 0..N {
            let sc = atol + rtol * y0[i].abs();
            s += (v[i] / sc) * (v[i] / sc);
        }
        (s / N as f64).sqrt()
    };
    let d0 = rms(y0);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 }.min(span);

    let mut y1 = *y0;
    for i in 0..N {
        y1[i] += dir * h0 * f0[i];
    }
    let f1 = f(t0 + dir * h0, &y1);
    let mut diff = [0.0; N];
    for i in 0..N {
        diff[i] = f1[i] - f0[i];
    }
    let d2 = rms(&diff) / h0;

    let d_max = d1.max(d2);
    if d_max <= 1e-15 {
        return span;
    }
    let h1 = (0.01 / d_max).powf(ORDER_EXP);
    h1.min(100.0 * h0).min(span)
}

/// Integrates `dy/dt = f(t, y)` from `t0` to `t_end` with the given relative
/// and absolute tolerances. The last step is clamped to land on `t_end`
/// exactly.
pub fn integrate<const N: usize>(
    mut f: impl FnMut(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    t_end: f64,
    y0: [f64; N],
    rtol: f64,
    atol: f64,
) -> Result<OdeSolution<N>, OdeError> {
    assert!(rtol > 0.0 && atol > 0.0, "tolerances must be positive");
    if t0 == t_end {
        return Ok(OdeSolution { y: y0, n_accepted: 0, n_rejected: 0, n_rhs_evals: 0 });
    }
    let dir = (t_end - t0).signum();
    let span = (t_end - t0).abs();

    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut n_rhs = 1;
    let mut h = initial_step(&mut f, t0, dir, &y0, &k1, rtol, atol, span);
    n_rhs += 1;

    let mut n_accepted = 0;
    let mut n_rejected = 0;
    let mut fac_max = FAC_MAX;

    loop {
        let remaining = (t_end - t) * dir;
        if remaining <= 0.0 {
            break;
        }
        let landing = h >= remaining;
        let h_eff = if landing { remaining } else { h };
        if h_eff < MIN_STEP && !landing {
            return Err(OdeError::StepSizeUnderflow { t, h: h_eff });
        }

        let trial = attempt_step(&mut f, t, &y, &k1, dir * h_eff, rtol, atol);
        n_rhs += 6;

        if !trial.err_norm.is_finite() {
            // Non-finite rhs output: treat as a hard rejection.
            n_rejected += 1;
            fac_max = 1.0;
            h = h_eff * FAC_MIN;
            continue;
        }

        let factor = (SAFETY * trial.err_norm.powf(-ORDER_EXP)).clamp(FAC_MIN, fac_max);
        if trial.err_norm <= 1.0 {
            t = if landing { t_end } else { t + dir * h_eff };
            y = trial.y5;
            k1 = trial.k_last;
            n_accepted += 1;
            fac_max = FAC_MAX;
            h = h_eff * factor;
        } else {
            n_rejected += 1;
            fac_max = 1.0;
            h = h_eff * factor;
        }
    }

    Ok(OdeSolution { y, n_accepted, n_rejected, n_rhs_evals: n_rhs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_takes_exactly_one_step() {
        let sol = integrate(|_, _| [0.0; 3], 0.6, 1e-5, [1.0, -2.0, 0.5], 1e-6, 1e-8).unwrap();
        assert_eq!(sol.n_accepted, 1);
        assert_eq!(sol.n_rejected, 0);
        assert_eq!(sol.y, [1.0, -2.0, 0.5]);
        // 1 initial eval + 1 step-size probe + 6 stages.
        assert_eq!(sol.n_rhs_evals, 8);
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let sol = integrate(|_, y: &[f64; 1]| [-y[0]], 0.0, 1.0, [1.0], 1e-8, 1e-10).unwrap();
        let exact = (-1.0f64).exp();
        assert!((sol.y[0] - exact).abs() < 1e-7, "{} vs {exact}", sol.y[0]);
        assert!(sol.n_rhs_evals >= 6 * sol.n_accepted);
    }

    #[test]
    fn backward_integration_reverses_forward() {
        let fwd = integrate(|_, y: &[f64; 1]| [-y[0]], 0.0, 1.0, [1.0], 1e-10, 1e-12).unwrap();
        let back = integrate(|_, y: &[f64; 1]| [-y[0]], 1.0, 0.0, fwd.y, 1e-10, 1e-12).unwrap();
        assert!((back.y[0] - 1.0).abs() < 1e-8, "round trip gave {}", back.y[0]);
    }

    /// Global error of the 5th-order step scales as h^5: fit the slope of
    /// log(error) against log(h) over fixed-step runs.
    #[test]
    fn fixed_step_order_is_five()
    {
        let mut errors = Vec::new();
        let mut hs = Vec::new();
        for n in [8usize, 16, 32, 64] {
            let h = 1.0 / n as f64;
            let mut y = [1.0f64];
            let mut t = 0.0;
            let mut f = |_: f64, y: &[f64; 1]| [-y[0]];
            let mut k1 = f(t, &y);
            for _ in 0..n {
                let trial = attempt_step(&mut f, t, &y, &k1, h, 1e-6, 1e-6);
                y = trial.y5;
                k1 = trial.k_last;
                t += h;
            }
            errors.push((y[0] - (-1.0f64).exp()).abs());
            hs.push(h);
        }
        // Least-squares slope of log err vs log h.
        let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
        let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
        let n = xs.len() as f64;
        let xm = xs.iter().sum::<f64>() / n;
        let ym = ys.iter().sum::<f64>() / n;
        let slope = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - xm) * (y - ym))
            .sum::<f64>()
            / xs.iter().map(|x| (x - xm) * (x - xm)).sum::<f64>();
        assert!(
            (slope - 5.0).abs() < 0.3,
            "empirical convergence order {slope:.2}, expected 5"
        );
    }

    #[test]
    fn tighter_tolerances_reduce_error() {
        let run = |rtol: f64| {
            let sol =
                integrate(|t: f64, y: &[f64; 2]| [y[1] * t.cos(), -y[0] * t.cos()], 0.0, 10.0,
                    [1.0, 0.0], rtol, rtol * 1e-2)
                .unwrap();
            // Exact solution: rotation by sin(t) — unit norm is conserved.
            ((sol.y[0] * sol.y[0] + sol.y[1] * sol.y[1]).sqrt() - 1.0).abs()
        };
        let loose = run(1e-4);
        let tight = run(1e-9);
        assert!(tight < loose, "tight {tight:.3e} vs loose {loose:.3e}");
        assert!(tight < 1e-7);
    }

    #[test]
    fn rhs_eval_count_is_consistent() {
        let sol = integrate(
            |_, y: &[f64; 2]| [y[1], -4.0 * y[0]],
            0.0,
            5.0,
            [1.0, 0.0],
            1e-7,
            1e-9,
        )
        .unwrap();
        assert_eq!(sol.n_rhs_evals, 2 + 6 * (sol.n_accepted + sol.n_rejected));
        assert!(sol.n_accepted > 0);
    }

    #[test]
    fn non_finite_rhs_underflows_the_step() {
        let res = integrate(
            |t: f64, _: &[f64; 1]| if t > 0.5 { [f64::NAN] } else { [1.0] },
            0.0,
            1.0,
            [0.0],
            1e-6,
            1e-8,
        );
        match res {
            Err(OdeError::StepSizeUnderflow { t, .. }) => assert!(t <= 0.5 + 1e-9),
            other => panic!("expected underflow, got {other:?}"),
        }
    }
}
