//! Dormand–Prince 8(5,3) integrator with step-size control, seventh-order
//! continuous output and an optional projection applied after every accepted step.
//!
//! Samples are produced by the continuous extension, so requested output times
//! never shorten the steps.

mod tableau;

use crate::error::{Error, Result};
use tableau::{A, B, C, D, E3, E5, STAGES, STAGES_EXTENDED};

/// An autonomous or time-dependent first-order system `y' = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;

    /// Pull `y` back onto the constraint manifold after an accepted step.
    /// Returns the size of the correction (the pre-projection defect).
    fn project(&self, _y: &mut [f64]) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen automatically when `None`.
    pub first_step: Option<f64>,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Options {
    pub fn with_tol(tol: f64) -> Self {
        Options {
            rtol: tol,
            atol: tol,
            ..Options::default()
        }
    }
}

impl Default for Options {
    fn default() -> Self {
        Options {
            rtol: 1e-8,
            atol: 1e-8,
            first_step: None,
            max_step: f64::INFINITY,
            max_steps: 5_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
    /// Largest correction made by [`OdeSystem::project`] on an accepted step.
    pub max_projection_defect: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub stats: Stats,
}

/// Seventh-order interpolant on one accepted step.
struct Dense {
    t0: f64,
    h: f64,
    y0: Vec<f64>,
    f: [Vec<f64>; 7],
}

impl Dense {
    fn eval(&self, t: f64, out: &mut [f64]) {
        let x = (t - self.t0) / self.h;
        for (i, o) in out.iter_mut().enumerate() {
            let mut y = 0.0;
            for (j, f) in self.f.iter().rev().enumerate() {
                y += f[i];
                y *= if j % 2 == 0 { x } else { 1.0 - x };
            }
            *o = self.y0[i] + y;
        }
    }
}

/// `y + h Σ_j a_j k_j` over the first `a.len()` stages.
fn combine(y: &[f64], h: f64, a: &[f64], k: &[Vec<f64>], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (aj, kj) in a.iter().zip(k) {
            if *aj != 0.0 {
                acc += aj * kj[i];
            }
        }
        *o = y[i] + h * acc;
    }
}

fn check_finite(what: &str, y: &[f64]) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            state: y.to_vec(),
        })
    }
}

/// Integrate from `(t0, y0)` and return the state at each of `sample_times`,
/// which must be sorted and lie in `[t0, ∞)` (or `(−∞, t0]` for backward runs).
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    sample_times: &[f64],
    opts: &Options,
) -> Result<Solution> {
    let n = sys.dim();
    if y0.len() != n {
        return Err(Error::usage(format!(
            "initial state has length {}, system dimension is {n}",
            y0.len()
        )));
    }
    check_finite("initial state", y0)?;
    let mut stats = Stats::default();
    let mut times = Vec::with_capacity(sample_times.len());
    let mut states = Vec::with_capacity(sample_times.len());
    let t_final = match sample_times.last() {
        Some(&t) => t,
        None => {
            return Ok(Solution {
                times,
                states,
                stats,
            })
        }
    };
    let dir = if t_final >= t0 { 1.0 } else { -1.0 };
    if sample_times
        .windows(2)
        .any(|w| dir * (w[1] - w[0]) < 0.0)
        || dir * (sample_times[0] - t0) < 0.0
    {
        return Err(Error::usage("sample times must be monotone and start at or after t0"));
    }

    let mut next_sample = 0;
    let emit_exact = |t: f64, y: &[f64], times: &mut Vec<f64>, states: &mut Vec<Vec<f64>>| {
        times.push(t);
        states.push(y.to_vec());
    };
    while next_sample < sample_times.len() && sample_times[next_sample] == t0 {
        emit_exact(t0, y0, &mut times, &mut states);
        next_sample += 1;
    }
    if next_sample == sample_times.len() {
        return Ok(Solution {
            times,
            states,
            stats,
        });
    }

    let mut t = t0;
    let mut y = y0.to_vec();
    // Stages 0..12 of the step, the derivative at the new point in slot 12,
    // and the three extra dense-output stages after it.
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; STAGES_EXTENDED];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    sys.rhs(t, &y, &mut k[0])?;
    stats.evaluations += 1;

    let span = (t_final - t0).abs();
    let mut h = match opts.first_step {
        Some(h) => h.abs(),
        None => initial_step(sys, t, &y, &k[0], opts, span)?,
    }
    .min(opts.max_step)
    .min(span);
    stats.evaluations += 1;
    let mut rejected_last = false;

    loop {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::TooManySteps {
                t,
                t_final,
                max_steps: opts.max_steps,
            });
        }
        let remaining = (t_final - t).abs();
        if h >= remaining * (1.0 - 1e-12) {
            h = remaining;
        }
        let h_min = 16.0 * f64::EPSILON * t.abs().max(1.0);
        if h < h_min {
            return Err(Error::StepSizeUnderflow { t, h, state: y });
        }
        let hs = dir * h;

        for s in 1..STAGES {
            let (done, rest) = k.split_at_mut(s);
            combine(&y, hs, &A[s][..s], done, &mut ytmp);
            sys.rhs(t + C[s] * hs, &ytmp, &mut rest[0])?;
        }
        combine(&y, hs, &B, &k[..STAGES], &mut ynew);
        sys.rhs(t + hs, &ynew, &mut k[STAGES])?;
        stats.evaluations += STAGES;

        // Error norm of the 8(5,3) pair.
        let (mut err5, mut err3) = (0.0, 0.0);
        for i in 0..n {
            let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            let (mut e5, mut e3) = (0.0, 0.0);
            for j in 0..=STAGES {
                e5 += E5[j] * k[j][i];
                e3 += E3[j] * k[j][i];
            }
            err5 += (e5 / sc).powi(2);
            err3 += (e3 / sc).powi(2);
        }
        let err = if err5 == 0.0 && err3 == 0.0 {
            0.0
        } else {
            h * err5 / ((err5 + 0.01 * err3) * n as f64).sqrt()
        };
        if !err.is_finite() {
            // Treat a blow-up inside the step as a rejection with a hard cut.
            stats.rejected += 1;
            h *= 0.1;
            rejected_last = true;
            continue;
        }

        if err <= 1.0 {
            stats.accepted += 1;
            let t_new = if h == remaining { t_final } else { t + hs };

            let needs_dense = next_sample < sample_times.len()
                && dir * (sample_times[next_sample] - t_new) < 0.0;
            let dense = if needs_dense {
                for s in STAGES + 1..STAGES_EXTENDED {
                    let (done, rest) = k.split_at_mut(s);
                    combine(&y, hs, &A[s][..s], done, &mut ytmp);
                    sys.rhs(t + C[s] * hs, &ytmp, &mut rest[0])?;
                }
                stats.evaluations += STAGES_EXTENDED - STAGES - 1;
                let mut f: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
                for i in 0..n {
                    let dy = ynew[i] - y[i];
                    f[0][i] = dy;
                    f[1][i] = hs * k[0][i] - dy;
                    f[2][i] = 2.0 * dy - hs * (k[STAGES][i] + k[0][i]);
                    for (r, d) in D.iter().enumerate() {
                        let mut acc = 0.0;
                        for (dj, kj) in d.iter().zip(&k) {
                            acc += dj * kj[i];
                        }
                        f[3 + r][i] = hs * acc;
                    }
                }
                Some(Dense {
                    t0: t,
                    h: hs,
                    y0: y.clone(),
                    f,
                })
            } else {
                None
            };

            let defect = sys.project(&mut ynew);
            stats.max_projection_defect = stats.max_projection_defect.max(defect);

            while next_sample < sample_times.len() && dir * (sample_times[next_sample] - t_new) <= 0.0
            {
                let ts = sample_times[next_sample];
                if ts == t_new {
                    emit_exact(ts, &ynew, &mut times, &mut states);
                } else {
                    let mut ys = vec![0.0; n];
                    dense
                        .as_ref()
                        .expect("dense output is built whenever a sample falls inside the step")
                        .eval(ts, &mut ys);
                    sys.project(&mut ys);
                    times.push(ts);
                    states.push(ys);
                }
                next_sample += 1;
            }

            t = t_new;
            std::mem::swap(&mut y, &mut ynew);
            check_finite("state", &y)?;
            if next_sample == sample_times.len() {
                break;
            }
            if defect > 0.0 {
                sys.rhs(t, &y, &mut k[0])?;
                stats.evaluations += 1;
            } else {
                k.swap(0, STAGES);
            }

            let mut fac = if err == 0.0 { 10.0 } else { (0.9 * err.powf(-1.0 / 8.0)).clamp(0.2, 10.0) };
            if rejected_last {
                fac = fac.min(1.0);
            }
            h = (h * fac).min(opts.max_step);
            rejected_last = false;
        } else {
            stats.rejected += 1;
            let fac = (0.9 * err.powf(-1.0 / 8.0)).clamp(0.2, 1.0);
            h *= fac;
            rejected_last = true;
        }
    }

    Ok(Solution {
        times,
        states,
        stats,
    })
}

fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64],
    f0: &[f64],
    opts: &Options,
    span: f64,
) -> Result<f64> {
    let n = y.len();
    let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let norm = |v: &[f64]| -> f64 {
        (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let d0 = norm(y);
    let d1 = norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    }
    .min(span);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; n];
    sys.rhs(t + h0, &y1, &mut f1)?;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = norm(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(1.0 / 8.0)
    };
    Ok((100.0 * h0).min(h1).min(span))
}

/// `count` equally spaced times from `0` to `t_final` inclusive.
pub fn uniform_grid(t_final: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![t_final],
        _ => (0..count)
            .map(|i| {
                if i + 1 == count {
                    t_final
                } else {
                    t_final * i as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oscillator;

    impl OdeSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        }
    }

    struct Growth;

    impl OdeSystem for Growth {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = y[0] * t.cos();
            Ok(())
        }
    }

    #[test]
    fn oscillator_tracks_exact_solution_on_dense_samples() {
        let grid = uniform_grid(20.0, 401);
        let sol = integrate(&Oscillator, 0.0, &[1.0, 0.0], &grid, &Options::with_tol(1e-11)).unwrap();
        let worst = sol
            .times
            .iter()
            .zip(&sol.states)
            .map(|(t, y)| (y[0] - t.cos()).abs().max((y[1] + t.sin()).abs()))
            .fold(0.0, f64::max);
        assert!(worst < 1e-9, "worst error {worst:e}");
        assert_eq!(sol.times.len(), 401);
        assert_eq!(*sol.times.last().unwrap(), 20.0);
    }

    #[test]
    fn error_decreases_with_tolerance() {
        let exact = (3.0f64).sin().exp();
        let errs: Vec<f64> = [1e-5, 1e-7, 1e-9]
            .iter()
            .map(|&tol| {
                let s = integrate(&Growth, 0.0, &[1.0], &[3.0], &Options::with_tol(tol)).unwrap();
                (s.states[0][0] - exact).abs()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn zero_span_returns_initial_state() {
        let sol = integrate(&Oscillator, 0.0, &[1.0, 2.0], &[0.0], &Options::default()).unwrap();
        assert_eq!(sol.states, vec![vec![1.0, 2.0]]);
        assert_eq!(sol.stats.accepted, 0);
    }

    #[test]
    fn backward_integration() {
        let sol = integrate(&Oscillator, 0.0, &[1.0, 0.0], &[-1.0, -2.0], &Options::with_tol(1e-10))
            .unwrap();
        assert!((sol.states[1][0] - (-2.0f64).cos()).abs() < 1e-8);
    }

    #[test]
    fn unsorted_samples_are_rejected() {
        let err = integrate(&Oscillator, 0.0, &[1.0, 0.0], &[2.0, 1.0], &Options::default());
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    struct FiniteTimeBlowUp;

    impl OdeSystem for FiniteTimeBlowUp {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = y[0] * y[0];
            Ok(())
        }
    }

    #[test]
    fn blow_up_reports_underflow_with_state() {
        let err = integrate(&FiniteTimeBlowUp, 0.0, &[1.0], &[2.0], &Options::with_tol(1e-8))
            .unwrap_err();
        match err {
            Error::StepSizeUnderflow { t, state, .. } => {
                assert!((t - 1.0).abs() < 1e-6, "t = {t}");
                assert_eq!(state.len(), 1);
            }
            Error::NonFinite { .. } => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
