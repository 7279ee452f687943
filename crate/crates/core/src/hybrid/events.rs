//! Guard-crossing localization and the transversality check.

use crate::error::{Error, Result};
use crate::hybrid::eval::ModelEval;
use crate::hybrid::spec::Crossing;

const SCAN_POINTS: usize = 8;
const MAX_ITERS: usize = 400;

/// Locate the earliest crossing of `g` in `[t_lo, t_hi]` in direction `dir`.
///
/// The bracket is first scanned on a uniform sub-grid so that the earliest of
/// several roots is taken, then refined by Illinois regula falsi with a
/// bisection fallback. The returned time is the endpoint of the final bracket
/// on the far side of the guard, so the crossing has happened at `τ`.
pub fn locate_event<G>(
    mut g: G,
    t_lo: f64,
    t_hi: f64,
    dir: Crossing,
    tol_time: f64,
    tol_guard: f64,
) -> Result<f64>
where
    G: FnMut(f64) -> Result<f64>,
{
    if !(t_hi > t_lo) {
        return Err(Error::InvalidArgument(format!(
            "empty bracket [{t_lo}, {t_hi}]"
        )));
    }
    let g_lo = g(t_lo)?;
    let mut a = t_lo;
    let mut ga = g_lo;
    let mut bracket = None;
    for i in 1..=SCAN_POINTS {
        let b = if i == SCAN_POINTS {
            t_hi
        } else {
            t_lo + (t_hi - t_lo) * i as f64 / SCAN_POINTS as f64
        };
        let gb = g(b)?;
        if dir.crossed(ga, gb) {
            bracket = Some((a, ga, b, gb));
            break;
        }
        a = b;
        ga = gb;
    }
    let (mut a, mut ga, mut b, mut gb) = bracket.ok_or(Error::NoSignChange { t_lo, t_hi })?;
    if ga == 0.0 {
        return Ok(a);
    }
    // Illinois: halve the retained endpoint's weight after two same-side updates.
    let mut side = 0i8;
    for _ in 0..MAX_ITERS {
        if gb == 0.0 {
            return Ok(b);
        }
        let width = b - a;
        if width <= tol_time && gb.abs() <= tol_guard {
            return Ok(b);
        }
        let mid = a + 0.5 * width;
        if mid <= a || mid >= b {
            return Ok(b);
        }
        let mut c = b - gb * (b - a) / (gb - ga);
        if !(c > a && c < b) || (width > 64.0 * tol_time && side.abs() > 2) {
            c = mid;
            side = 0;
        }
        let gc = g(c)?;
        if gc.is_nan() {
            return Err(Error::NonFinite("guard during event localization".into()));
        }
        if gc == 0.0 || gc.signum() != ga.signum() {
            b = c;
            gb = gc;
            if side == -1 {
                ga *= 0.5;
            }
            side = if side < 0 { side - 1 } else { -1 };
        } else {
            a = c;
            ga = gc;
            if side == 1 {
                gb *= 0.5;
            }
            side = if side > 0 { side + 1 } else { 1 };
        }
    }
    Ok(b)
}

/// `D_t g + D_x g · f⁻` at the event point of transition `k`.
pub fn check_transversality(
    ev: &mut ModelEval<'_>,
    k: usize,
    x_pre: &[f64],
    tau: f64,
) -> Result<f64> {
    let source = ev.spec.transitions[k].source;
    let d = ev.guard_derivatives(k, x_pre, tau)?;
    let f = ev.field(source, x_pre, tau)?;
    Ok(guard_rate(&d.dx, d.dt, &f))
}

pub fn guard_rate(dx: &nalgebra::DVector<f64>, dt: f64, f: &[f64]) -> f64 {
    dt + dx.iter().zip(f).map(|(a, b)| a * b).sum::<f64>()
}

/// `R(x⁻, θ, τ)`; identity resets return `x⁻` unchanged.
pub fn apply_reset(ev: &mut ModelEval<'_>, k: usize, x_pre: &[f64], tau: f64) -> Result<Vec<f64>> {
    ev.reset(k, x_pre, tau)
}
