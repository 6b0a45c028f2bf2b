//! Adaptive Dormand–Prince 5(4) integration on fixed-size state arrays.
//!
//! Event functions are monitored on every accepted step. A crossing from
//! positive to non-positive stops the integration; the crossing time is
//! localized by bisection, re-stepping from the start of the step until the
//! event function is below a tolerance.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; `0` picks one from the derivative scale.
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
    /// Event functions are localized until `|g| ≤ event_tol`.
    pub event_tol: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: 0.0,
            h_min: 1e-14,
            h_max: f64::INFINITY,
            max_steps: 200_000,
            event_tol: 1e-11,
        }
    }
}

impl OdeOptions {
    pub fn with_tolerance(self, rtol: f64, atol: f64) -> Self {
        OdeOptions { rtol, atol, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum OdeError<E> {
    #[error("right-hand side failed at t={t}: {err}")]
    Rhs { t: f64, err: E },
    #[error("step budget exhausted at t={t}")]
    MaxSteps { t: f64 },
    #[error("step size underflow at t={t}")]
    StepUnderflow { t: f64 },
}

/// Why integration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    /// Index of the event function that crossed zero.
    Event(usize),
    EndTime,
}

/// Accepted steps `(t_k, y_k)`, including the initial point.
#[derive(Debug, Clone)]
pub struct Solution<const N: usize> {
    pub t: Vec<f64>,
    pub y: Vec<[f64; N]>,
    pub stop: Stop,
    /// Number of right-hand-side evaluations.
    pub evaluations: usize,
}

impl<const N: usize> Solution<N> {
    pub fn last(&self) -> (f64, [f64; N]) {
        (*self.t.last().expect("solution is never empty"), *self.y.last().expect("solution is never empty"))
    }
}

/// Event function on the state.
pub type EventFn<'a, const N: usize> = &'a dyn Fn(&[f64; N]) -> f64;

fn axpy<const N: usize>(y: &[f64; N], h: f64, ks: &[[f64; N]; 7], coef: &[f64; 6], stages: usize) -> [f64; N] {
    let mut out = *y;
    for (s, c) in coef.iter().enumerate().take(stages) {
        if *c != 0.0 {
            for i in 0..N {
                out[i] += h * c * ks[s][i];
            }
        }
    }
    out
}

struct Stepper<'f, const N: usize, Er, F>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N], Er>,
{
    rhs: &'f mut F,
    evals: usize,
}

impl<const N: usize, Er, F> Stepper<'_, N, Er, F>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N], Er>,
{
    fn f(&mut self, t: f64, y: &[f64; N]) -> Result<[f64; N], OdeError<Er>> {
        self.evals += 1;
        (self.rhs)(t, y).map_err(|err| OdeError::Rhs { t, err })
    }

    /// One trial step from `(t, y)` with first stage `k1`. Returns the new
    /// state, its derivative (FSAL) and the scaled error norm.
    fn step(
        &mut self,
        t: f64,
        y: &[f64; N],
        k1: &[f64; N],
        h: f64,
        opts: &OdeOptions,
    ) -> Result<([f64; N], [f64; N], f64), OdeError<Er>> {
        let mut ks = [[0.0; N]; 7];
        ks[0] = *k1;
        for s in 1..7 {
            let ys = axpy(y, h, &ks, &A[s], s);
            ks[s] = self.f(t + C[s] * h, &ys)?;
        }
        let y_new = axpy(y, h, &ks, &A[6], 6);
        let mut err = 0.0f64;
        for i in 0..N {
            let mut e = 0.0;
            for s in 0..7 {
                e += E[s] * ks[s][i];
            }
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err = err.max((h * e / sc).abs());
        }
        Ok((y_new, ks[6], err))
    }
}

/// Integrate `y' = rhs(t, y)` from `t0` to `t_end` or the first event crossing.
///
/// A right-hand-side failure inside a trial step is treated as a rejection
/// (the step is shrunk); it is only reported once the step size underflows.
pub fn integrate<const N: usize, Er, F>(
    mut rhs: F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    events: &[EventFn<'_, N>],
    opts: &OdeOptions,
) -> Result<Solution<N>, OdeError<Er>>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N], Er>,
{
    let mut st = Stepper { rhs: &mut rhs, evals: 0 };
    let mut t = t0;
    let mut y = y0;
    let mut k1 = st.f(t, &y)?;
    let mut g_prev: Vec<f64> = events.iter().map(|g| g(&y)).collect();
    let mut sol = Solution { t: alloc::vec![t], y: alloc::vec![y], stop: Stop::EndTime, evaluations: 0 };
    let span = t_end - t0;
    if span <= 0.0 {
        sol.evaluations = st.evals;
        return Ok(sol);
    }
    let mut h = if opts.h_init > 0.0 {
        opts.h_init
    } else {
        let ys = y.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let ks = k1.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if ks > 0.0 {
            (0.01 * (ys + opts.atol / opts.rtol.max(1e-300)).max(1e-6) / ks).min(span)
        } else {
            span * 1e-3
        }
    };
    h = h.min(opts.h_max).min(span);
    let mut last_err: Option<OdeError<Er>> = None;
    for _ in 0..opts.max_steps {
        let remaining = t_end - t;
        if remaining <= 1e-15 * (1.0 + t.abs()) {
            sol.evaluations = st.evals;
            return Ok(sol);
        }
        let h_try = h.min(remaining);
        let trial = st.step(t, &y, &k1, h_try, opts);
        let (y_new, k_new, err) = match trial {
            Ok(v) => v,
            Err(e) => {
                if h_try * 0.25 < opts.h_min {
                    return Err(e);
                }
                last_err = Some(e);
                h = h_try * 0.25;
                continue;
            }
        };
        if !(err <= 1.0) || y_new.iter().any(|v| !v.is_finite()) {
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.5) } else { 0.1 };
            h = h_try * fac;
            if h < opts.h_min {
                return Err(last_err.take().unwrap_or(OdeError::StepUnderflow { t }));
            }
            continue;
        }
        last_err = None;
        // event crossings on this step
        let g_new: Vec<f64> = events.iter().map(|g| g(&y_new)).collect();
        let mut hit: Option<(usize, f64, [f64; N])> = None;
        for (k, g) in events.iter().enumerate() {
            if g_prev[k] > 0.0 && g_new[k] <= 0.0 {
                let (hk, yk) = localize(&mut st, t, &y, &k1, h_try, &y_new, g_new[k], *g, opts)?;
                if hit.as_ref().is_none_or(|(_, hb, _)| hk < *hb) {
                    hit = Some((k, hk, yk));
                }
            }
        }
        if let Some((k, hk, yk)) = hit {
            sol.t.push(t + hk);
            sol.y.push(yk);
            sol.stop = Stop::Event(k);
            sol.evaluations = st.evals;
            return Ok(sol);
        }
        t += h_try;
        y = y_new;
        k1 = k_new;
        g_prev = g_new;
        sol.t.push(t);
        sol.y.push(y);
        let fac = if err > 0.0 { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) } else { 5.0 };
        h = (h_try * fac).min(opts.h_max);
    }
    Err(OdeError::MaxSteps { t })
}

/// Bisection on the step length for a crossing inside `(0, h]`.
#[allow(clippy::too_many_arguments)]
fn localize<const N: usize, Er, F>(
    st: &mut Stepper<'_, N, Er, F>,
    t: f64,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
    y_end: &[f64; N],
    g_end: f64,
    g: EventFn<'_, N>,
    opts: &OdeOptions,
) -> Result<(f64, [f64; N]), OdeError<Er>>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N], Er>,
{
    let mut lo = 0.0;
    let mut hi = h;
    let mut best = (h, *y_end, g_end);
    if g_end.abs() <= opts.event_tol {
        return Ok((h, *y_end));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (ym, _, _) = st.step(t, y, k1, mid, opts)?;
        let gm = g(&ym);
        if gm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
            best = (mid, ym, gm);
        }
        if gm.abs() <= opts.event_tol {
            return Ok((mid, ym));
        }
        if hi - lo <= 1e-16 * (1.0 + t.abs()) {
            break;
        }
    }
    Ok((best.0, best.1))
}

/// State after flowing exactly `dt` from `y0` (no events).
pub fn advance<const N: usize, Er, F>(rhs: F, y0: [f64; N], dt: f64, opts: &OdeOptions) -> Result<[f64; N], OdeError<Er>>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N], Er>,
{
    Ok(integrate(rhs, 0.0, y0, dt, &[], opts)?.last().1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::convert::Infallible;

    fn osc(_: f64, y: &[f64; 2]) -> Result<[f64; 2], Infallible> {
        Ok([y[1], -y[0]])
    }

    #[test]
    fn harmonic_oscillator_is_accurate() {
        let opts = OdeOptions::default();
        let sol = integrate(osc, 0.0, [1.0, 0.0], 10.0, &[], &opts).unwrap();
        let (t, y) = sol.last();
        assert_eq!(t, 10.0);
        assert!((y[0] - 10f64.cos()).abs() < 1e-8, "{y:?}");
        assert!((y[1] + 10f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn fifth_order_convergence_on_fixed_steps() {
        let opts = OdeOptions { rtol: 1.0, atol: 1.0, ..OdeOptions::default() };
        let mut errs = Vec::new();
        for n in [10usize, 20] {
            let h = 1.0 / n as f64;
            let o = OdeOptions { h_init: h, h_max: h, ..opts };
            let y = advance(osc, [1.0, 0.0], 1.0, &o).unwrap();
            errs.push((y[0] - 1f64.cos()).abs());
        }
        let rate = (errs[0] / errs[1]).log2();
        assert!(rate > 4.5, "rate {rate}");
    }

    #[test]
    fn event_is_localized() {
        let opts = OdeOptions::default();
        // y0 crosses zero first at t = π/2
        let g = |y: &[f64; 2]| y[0];
        let sol = integrate(osc, 0.0, [1.0, 0.0], 10.0, &[&g], &opts).unwrap();
        assert_eq!(sol.stop, Stop::Event(0));
        let (t, y) = sol.last();
        assert!(y[0].abs() <= 1e-11);
        assert!((t - core::f64::consts::FRAC_PI_2).abs() < 1e-9);
    }

    #[test]
    fn earliest_of_two_events_wins() {
        let opts = OdeOptions::default();
        let g0 = |y: &[f64; 2]| y[0] + 0.5; // cos t = -1/2 at 2π/3
        let g1 = |y: &[f64; 2]| y[0] - 0.5; // cos t = 1/2 at π/3
        let sol = integrate(osc, 0.0, [1.0, 0.0], 10.0, &[&g0, &g1], &opts).unwrap();
        assert_eq!(sol.stop, Stop::Event(1));
        assert!((sol.last().0 - core::f64::consts::FRAC_PI_3).abs() < 1e-9);
    }

    #[test]
    fn failing_rhs_outside_region_is_reported() {
        let opts = OdeOptions::default();
        let f = |_: f64, y: &[f64; 1]| if y[0] < 2.0 { Ok([1.0]) } else { Err("outside") };
        let r = integrate(f, 0.0, [0.0], 5.0, &[], &opts);
        assert!(matches!(r, Err(OdeError::Rhs { err: "outside", .. })));
    }
}
