//! Adaptive Dormand–Prince 5(4) integration over generic state types.
//!
//! The state only needs linear combinations and a scaled error norm, which
//! lets the same stepper run on plain vectors and on vectors of jets.

use thiserror::Error;

use crate::jets::Jet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError<E> {
    #[error("step size underflow at t = {t} (h = {h:.3e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("maximum number of steps ({0}) exceeded")]
    TooManySteps(usize),
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error(transparent)]
    Rhs(E),
}

pub trait OdeState: Clone {
    /// `self + Σ aᵢ xᵢ`.
    fn lincomb(&self, terms: &[(f64, &Self)]) -> Self;
    /// Max over components of `|err| / (atol + rtol·max(|y0|, |y1|))`.
    fn error_ratio(err: &Self, y0: &Self, y1: &Self, atol: f64, rtol: f64) -> f64;
    fn is_finite(&self) -> bool;
}

impl OdeState for Vec<f64> {
    fn lincomb(&self, terms: &[(f64, &Self)]) -> Self {
        let mut out = self.clone();
        for (a, x) in terms {
            if *a != 0.0 {
                for (o, v) in out.iter_mut().zip(x.iter()) {
                    *o += a * v;
                }
            }
        }
        out
    }

    fn error_ratio(err: &Self, y0: &Self, y1: &Self, atol: f64, rtol: f64) -> f64 {
        err.iter()
            .zip(y0.iter().zip(y1))
            .map(|(e, (a, b))| e.abs() / (atol + rtol * a.abs().max(b.abs())))
            .fold(0.0, f64::max)
    }

    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl OdeState for Vec<Jet> {
    fn lincomb(&self, terms: &[(f64, &Self)]) -> Self {
        let mut out = self.clone();
        for (a, x) in terms {
            if *a != 0.0 {
                for (o, v) in out.iter_mut().zip(x.iter()) {
                    o.add_scaled(v, *a);
                }
            }
        }
        out
    }

    fn error_ratio(err: &Self, y0: &Self, y1: &Self, atol: f64, rtol: f64) -> f64 {
        let mut m = 0.0_f64;
        for (e, (a, b)) in err.iter().zip(y0.iter().zip(y1)) {
            for (ec, (ac, bc)) in e.coeffs().iter().zip(a.coeffs().iter().zip(b.coeffs())) {
                m = m.max(ec.abs() / (atol + rtol * ac.abs().max(bc.abs())));
            }
        }
        m
    }

    fn is_finite(&self) -> bool {
        self.iter().all(|j| j.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step as a fraction of the interval.
    pub initial_fraction: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-10,
            initial_fraction: 0.05,
            min_step: 1e-12,
            max_steps: 100_000,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions {
            rtol: tol,
            atol: tol,
            ..Default::default()
        }
    }
}

/// Summary of a completed integration.
#[derive(Clone, Debug, PartialEq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction).
///
/// `on_step` sees every accepted `(t, y)` and may abort the run by
/// returning an error.
pub fn dopri5<S, E, F, C>(
    mut f: F,
    t0: f64,
    t1: f64,
    y0: S,
    opts: &OdeOptions,
    mut on_step: C,
) -> Result<(S, OdeStats), OdeError<E>>
where
    S: OdeState,
    F: FnMut(f64, &S) -> Result<S, E>,
    C: FnMut(f64, &S) -> Result<(), E>,
{
    let span = t1 - t0;
    let mut stats = OdeStats {
        accepted: 0,
        rejected: 0,
    };
    if span == 0.0 {
        return Ok((y0, stats));
    }
    let dir = span.signum();
    let mut t = t0;
    let mut y = y0;
    let mut h = span * opts.initial_fraction;
    let mut k1 = f(t, &y).map_err(OdeError::Rhs)?;
    let mut steps = 0;
    loop {
        if (t1 - t) * dir <= 0.0 {
            break;
        }
        if (t + h - t1) * dir > 0.0 {
            h = t1 - t;
        }
        steps += 1;
        if steps > opts.max_steps {
            return Err(OdeError::TooManySteps(opts.max_steps));
        }
        let y2 = y.lincomb(&[(h * A21, &k1)]);
        let k2 = f(t + C2 * h, &y2).map_err(OdeError::Rhs)?;
        let y3 = y.lincomb(&[(h * A31, &k1), (h * A32, &k2)]);
        let k3 = f(t + C3 * h, &y3).map_err(OdeError::Rhs)?;
        let y4 = y.lincomb(&[(h * A41, &k1), (h * A42, &k2), (h * A43, &k3)]);
        let k4 = f(t + C4 * h, &y4).map_err(OdeError::Rhs)?;
        let y5 = y.lincomb(&[
            (h * A51, &k1),
            (h * A52, &k2),
            (h * A53, &k3),
            (h * A54, &k4),
        ]);
        let k5 = f(t + C5 * h, &y5).map_err(OdeError::Rhs)?;
        let y6 = y.lincomb(&[
            (h * A61, &k1),
            (h * A62, &k2),
            (h * A63, &k3),
            (h * A64, &k4),
            (h * A65, &k5),
        ]);
        let k6 = f(t + h, &y6).map_err(OdeError::Rhs)?;
        let ynew = y.lincomb(&[
            (h * B1, &k1),
            (h * B3, &k3),
            (h * B4, &k4),
            (h * B5, &k5),
            (h * B6, &k6),
        ]);
        if !ynew.is_finite() {
            // treat like a rejected step first; blow-ups that persist below
            // the minimum step are reported as non-finite
            h *= 0.25;
            stats.rejected += 1;
            if h.abs() < opts.min_step {
                return Err(OdeError::NonFinite(t));
            }
            continue;
        }
        let k7 = f(t + h, &ynew).map_err(OdeError::Rhs)?;
        let zero = y.lincomb(&[(-1.0, &y)]);
        let err = zero.lincomb(&[
            (h * E1, &k1),
            (h * E3, &k3),
            (h * E4, &k4),
            (h * E5, &k5),
            (h * E6, &k6),
            (h * E7, &k7),
        ]);
        let ratio = S::error_ratio(&err, &y, &ynew, opts.atol, opts.rtol);
        let factor = if ratio == 0.0 {
            5.0
        } else {
            (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0)
        };
        if ratio <= 1.0 {
            t += h;
            y = ynew;
            k1 = k7;
            stats.accepted += 1;
            on_step(t, &y).map_err(OdeError::Rhs)?;
            h *= factor;
        } else {
            stats.rejected += 1;
            h *= factor.min(1.0);
        }
        if h.abs() < opts.min_step && (t1 - t) * dir > opts.min_step {
            return Err(OdeError::StepUnderflow { t, h });
        }
    }
    Ok((y, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_period() {
        let f = |_t: f64, y: &Vec<f64>| -> Result<Vec<f64>, ()> { Ok(vec![y[1], -y[0]]) };
        let (y, stats) = dopri5(
            f,
            0.0,
            2.0 * std::f64::consts::PI,
            vec![1.0, 0.0],
            &OdeOptions::with_tol(1e-12),
            |_, _| Ok(()),
        )
        .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-10 && y[1].abs() < 1e-10);
        assert!(stats.accepted > 10);
    }

    #[test]
    fn backward_integration() {
        let f = |_t: f64, y: &Vec<f64>| -> Result<Vec<f64>, ()> { Ok(vec![y[0]]) };
        let (y, _) = dopri5(
            f,
            1.0,
            0.0,
            vec![1.0],
            &OdeOptions::default(),
            |_, _| Ok(()),
        )
        .unwrap();
        assert!((y[0] - (-1.0_f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn jet_state_matches_flow_expansion() {
        // y' = y with y(0) = 1 + x: y(1) = e·(1 + x)
        let x = Jet::variable(1, 3, 0, 1.0);
        let f = |_t: f64, y: &Vec<Jet>| -> Result<Vec<Jet>, ()> { Ok(y.clone()) };
        let (y, _) = dopri5(
            f,
            0.0,
            1.0,
            vec![x],
            &OdeOptions::with_tol(1e-12),
            |_, _| Ok(()),
        )
        .unwrap();
        let e = std::f64::consts::E;
        assert!((y[0].coeffs()[0] - e).abs() < 1e-11);
        assert!((y[0].coeffs()[1] - e).abs() < 1e-11);
        assert!(y[0].coeffs()[2].abs() < 1e-12);
    }

    #[test]
    fn callback_aborts() {
        let f = |_t: f64, y: &Vec<f64>| -> Result<Vec<f64>, &'static str> {
            Ok(vec![1.0 + 0.0 * y[0]])
        };
        let r = dopri5(f, 0.0, 1.0, vec![0.0], &OdeOptions::default(), |_, y| {
            if y[0] > 0.5 {
                Err("left region")
            } else {
                Ok(())
            }
        });
        assert_eq!(r.unwrap_err(), OdeError::Rhs("left region"));
    }
}
