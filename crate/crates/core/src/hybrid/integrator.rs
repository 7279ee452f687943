//! Adaptive Dormand–Prince 5(4) integration with Hairer's continuous extension.

use crate::error::{Error, Result};
use crate::hybrid::spec::IntegratorConfig;

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
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One accepted step together with its quartic interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    /// Five blocks of length `n`: Hairer's `rcont1..rcont5`.
    coeffs: Vec<f64>,
}

impl DenseStep {
    pub fn dim(&self) -> usize {
        self.coeffs.len() / 5
    }

    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let n = self.dim();
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let c = &self.coeffs;
        for i in 0..n {
            out[i] = c[i]
                + s * (c[n + i] + s1 * (c[2 * n + i] + s * (c[3 * n + i] + s1 * c[4 * n + i])));
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out);
        out
    }
}

/// Piecewise dense output over a contiguous interval plus the accepted-step grid.
///
/// `steps[i]` covers `[times[i], times[i + 1]]`; the last step may extend past
/// the final grid time when it was cut short by an event.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DenseTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub steps: Vec<DenseStep>,
}

impl DenseTrajectory {
    pub fn start(t0: f64, y0: Vec<f64>) -> Self {
        Self {
            times: vec![t0],
            states: vec![y0],
            steps: Vec::new(),
        }
    }

    pub fn push(&mut self, step: DenseStep, t1: f64, y1: Vec<f64>) {
        self.steps.push(step);
        self.times.push(t1);
        self.states.push(y1);
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self
            .times
            .last()
            .expect("trajectory has at least one sample")
    }

    pub fn last_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("trajectory has at least one sample")
    }

    /// Interpolated state; grid times return the stored sample exactly and
    /// times outside the interval are clamped to its ends.
    pub fn at(&self, t: f64) -> Vec<f64> {
        if t <= self.times[0] || self.steps.is_empty() {
            return self.states[0].clone();
        }
        if t >= self.t_end() {
            return self.last_state().to_vec();
        }
        let k = self.times.partition_point(|&s| s <= t);
        let i = k - 1;
        if self.times[i] == t {
            return self.states[i].clone();
        }
        self.steps[i].eval(t)
    }
}

fn wrms_norm(err: &[f64], y0: &[f64], y1: &[f64], cfg: &IntegratorConfig) -> f64 {
    let n = err.len();
    let mut acc = 0.0;
    for i in 0..n {
        let sc = cfg.abs_tol + cfg.rel_tol * y0[i].abs().max(y1[i].abs());
        let r = err[i] / sc;
        acc += r * r;
    }
    (acc / n as f64).sqrt()
}

/// Stateful single-step driver. Each call to [`Dopri5::step`] returns one
/// accepted step; rejected attempts are retried internally.
pub struct Dopri5 {
    cfg: IntegratorConfig,
    t: f64,
    y: Vec<f64>,
    h: f64,
    k: [Vec<f64>; 7],
    fsal_ready: bool,
    steps_taken: usize,
}

impl Dopri5 {
    pub fn new<F>(
        rhs: &mut F,
        t0: f64,
        y0: &[f64],
        t_end: f64,
        cfg: &IntegratorConfig,
    ) -> Result<Self>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = y0.len();
        let mut s = Self {
            cfg: *cfg,
            t: t0,
            y: y0.to_vec(),
            h: 0.0,
            k: std::array::from_fn(|_| vec![0.0; n]),
            fsal_ready: false,
            steps_taken: 0,
        };
        rhs(t0, y0, &mut s.k[0])?;
        s.fsal_ready = true;
        s.h = s.initial_step(rhs, t_end)?;
        Ok(s)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &[f64] {
        &self.y
    }

    fn initial_step<F>(&mut self, rhs: &mut F, t_end: f64) -> Result<f64>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = self.y.len();
        let span = (t_end - self.t).abs();
        let sc: Vec<f64> = self
            .y
            .iter()
            .map(|v| self.cfg.abs_tol + self.cfg.rel_tol * v.abs())
            .collect();
        let norm = |v: &[f64]| -> f64 {
            (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt()
        };
        let d0 = norm(&self.y);
        let d1 = norm(&self.k[0]);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let h0 = h0.min(span).min(self.cfg.max_step);
        let y1: Vec<f64> = self
            .y
            .iter()
            .zip(&self.k[0])
            .map(|(y, f)| y + h0 * f)
            .collect();
        let mut f1 = vec![0.0; n];
        rhs(self.t + h0, &y1, &mut f1)?;
        let diff: Vec<f64> = f1.iter().zip(&self.k[0]).map(|(a, b)| a - b).collect();
        let d2 = norm(&diff) / h0;
        let dm = d1.max(d2);
        let h1 = if dm <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / dm).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(span).min(self.cfg.max_step))
    }

    /// Advance by one accepted step without passing `t_end`.
    pub fn step<F>(&mut self, rhs: &mut F, t_end: f64) -> Result<(DenseStep, Vec<f64>)>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let n = self.y.len();
        if !self.fsal_ready {
            rhs(self.t, &self.y, &mut self.k[0])?;
            self.fsal_ready = true;
        }
        let mut stage = vec![0.0; n];
        let mut y_new = vec![0.0; n];
        let mut err = vec![0.0; n];
        let mut rejected = false;
        loop {
            self.steps_taken += 1;
            if self.steps_taken > self.cfg.max_steps {
                return Err(Error::Integration {
                    t: self.t,
                    reason: "step budget exhausted".into(),
                });
            }
            let remaining = t_end - self.t;
            let mut h = self.h.min(self.cfg.max_step);
            let mut lands = false;
            if self.t + 1.01 * h >= t_end {
                h = remaining;
                lands = true;
            }
            if h <= 1e-14 * self.t.abs().max(1.0) {
                return Err(Error::Integration {
                    t: self.t,
                    reason: format!("step size underflow (h = {h:e})"),
                });
            }
            let t = self.t;
            let y = &self.y;
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            for i in 0..n {
                stage[i] = y[i] + h * A21 * k1[i];
            }
            rhs(t + C2 * h, &stage, k2)?;
            for i in 0..n {
                stage[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            rhs(t + C3 * h, &stage, k3)?;
            for i in 0..n {
                stage[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            rhs(t + C4 * h, &stage, k4)?;
            for i in 0..n {
                stage[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            rhs(t + C5 * h, &stage, k5)?;
            for i in 0..n {
                stage[i] = y[i]
                    + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            rhs(t + h, &stage, k6)?;
            for i in 0..n {
                y_new[i] = y[i]
                    + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            let t_new = if lands { t_end } else { t + h };
            rhs(t_new, &y_new, k7)?;
            for i in 0..n {
                err[i] = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            }
            let e = wrms_norm(&err, y, &y_new, &self.cfg);
            if !e.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                self.h = 0.25 * h;
                rejected = true;
                continue;
            }
            if e <= 1.0 {
                let mut coeffs = vec![0.0; 5 * n];
                for i in 0..n {
                    let ydiff = y_new[i] - y[i];
                    let bspl = h * k1[i] - ydiff;
                    coeffs[i] = y[i];
                    coeffs[n + i] = ydiff;
                    coeffs[2 * n + i] = bspl;
                    coeffs[3 * n + i] = ydiff - h * k7[i] - bspl;
                    coeffs[4 * n + i] = h
                        * (D1 * k1[i]
                            + D3 * k3[i]
                            + D4 * k4[i]
                            + D5 * k5[i]
                            + D6 * k6[i]
                            + D7 * k7[i]);
                }
                let dense = DenseStep { t0: t, h, coeffs };
                let mut fac = if e == 0.0 { 5.0 } else { 0.9 * e.powf(-0.2) };
                fac = fac.clamp(0.2, 5.0);
                if rejected {
                    fac = fac.min(1.0);
                }
                self.h = h * fac;
                self.t = t_new;
                self.y.copy_from_slice(&y_new);
                let (head, tail) = self.k.split_at_mut(1);
                head[0].copy_from_slice(&tail[5]);
                return Ok((dense, y_new.clone()));
            }
            self.h = h * (0.9 * e.powf(-0.2)).max(0.2);
            rejected = true;
        }
    }
}

/// Integrate `rhs` from `t0` to `t1` without events, recording dense output.
pub fn integrate<F>(
    rhs: &mut F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<DenseTrajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let mut traj = DenseTrajectory::start(t0, y0.to_vec());
    if t1 <= t0 {
        return Ok(traj);
    }
    let mut stepper = Dopri5::new(rhs, t0, y0, t1, cfg)?;
    while stepper.time() < t1 {
        let (dense, y) = stepper.step(rhs, t1)?;
        let t = stepper.time();
        traj.push(dense, t, y);
    }
    Ok(traj)
}
