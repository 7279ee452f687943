//! Three-bus network: flux-decay synchronous generator at bus 1, a wind
//! turbine with PI pitch control at bus 2, constant-power load at bus 3.
//!
//! State `(E'q, δ, ω, T_m, E_fd, z, ξ, β)`, algebraic variables
//! `(I_d, I_q, V1, θ1, V2, θ2, V3, θ3)`, parameters
//! `(M_r, κ, k_p, k_i, T_β, M, T_E)`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::spec::{AlgebraicLayer, Point};
use crate::hybrid::{Crossing, HybridSystemSpec, ModeId, ModeSpec, Reset, TransitionSpec};
use crate::information::OutputMap;
use crate::sensitivity::numeric_jacobian;

pub const STATE_NAMES: [&str; 8] = ["Eq_p", "delta", "omega", "T_m", "E_fd", "z", "xi", "beta"];
pub const ALGEBRAIC_NAMES: [&str; 8] =
    ["I_d", "I_q", "V1", "theta1", "V2", "theta2", "V3", "theta3"];
pub const PARAM_NAMES: [&str; 7] = ["M_r", "kappa", "k_p", "k_i", "T_beta", "M", "T_E"];
pub const OUTPUT_NAMES: [&str; 4] = ["E_fd", "V1", "delta", "P_ele"];

pub const IX_Z: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardKind {
    RotorSpeed,
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    pub t_d0: f64,
    pub x_d: f64,
    pub x_d_prime: f64,
    pub x_q: f64,
    pub m: f64,
    pub d: f64,
    pub t_sv: f64,
    pub r_d: f64,
    pub t_e: f64,
    pub k_a: f64,
    /// Solved from the operating point when absent.
    pub p_c: Option<f64>,
    /// Solved from the operating point when absent.
    pub v_ref: Option<f64>,
    pub omega_s: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            t_d0: 8.96,
            x_d: 0.146,
            x_d_prime: 0.0608,
            x_q: 0.0969,
            m: 0.1254,
            d: 0.05,
            t_sv: 0.2,
            r_d: 0.05,
            t_e: 0.2,
            k_a: 20.0,
            p_c: None,
            v_ref: None,
            omega_s: 2.0 * PI * 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TurbineParams {
    pub m_r: f64,
    pub b: f64,
    pub c: f64,
    pub kappa: f64,
    /// `(c1, ..., c6)` of the power coefficient.
    pub cp: [f64; 6],
    /// `ζ = tsr_gain · z / γ`.
    pub tsr_gain: f64,
}

impl Default for TurbineParams {
    fn default() -> Self {
        Self {
            m_r: 40.0,
            b: 2.276,
            c: 1.0,
            kappa: 1.0,
            cp: [0.5176, 116.0, 0.4, 5.0, 21.0, 0.0068],
            tsr_gain: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PitchParams {
    pub k_p: f64,
    pub k_i: f64,
    pub t_beta: f64,
    /// Pitch angle (rad) held at the start, with the integrator state at zero.
    pub beta0: f64,
}

impl Default for PitchParams {
    fn default() -> Self {
        Self {
            k_p: 3.0,
            k_i: 10.0,
            t_beta: 0.05,
            beta0: 1f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkParams {
    pub y12: f64,
    pub y13: f64,
    pub y23: f64,
    pub p_l: f64,
    pub q_l: f64,
    /// Generator terminal voltage at the operating point.
    pub v1: f64,
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self {
            y12: 0.0,
            y13: 10.0,
            y23: 10.0,
            p_l: 1.5,
            q_l: 0.3,
            v1: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardParams {
    /// Rated rotor speed; also the pitch controller's reference.
    pub z_star: f64,
    pub p_ele_star: f64,
}

impl Default for GuardParams {
    fn default() -> Self {
        Self {
            z_star: 1.004,
            p_ele_star: 0.44,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
/// Wind speed in per unit of its rated value.
pub struct WindParams {
    pub r: f64,
    pub s: f64,
}

impl Default for WindParams {
    fn default() -> Self {
        Self { r: 1.0, s: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct WtgParams {
    pub generator: GeneratorParams,
    pub turbine: TurbineParams,
    pub pitch: PitchParams,
    pub network: NetworkParams,
    pub guards: GuardParams,
    pub wind: WindParams,
}

impl WtgParams {
    pub fn validate(&self) -> Result<()> {
        let g = &self.generator;
        let t = &self.turbine;
        let pos = [
            ("T'_d0", g.t_d0),
            ("X_d", g.x_d),
            ("X'_d", g.x_d_prime),
            ("X_q", g.x_q),
            ("M", g.m),
            ("T_SV", g.t_sv),
            ("R_D", g.r_d),
            ("T_E", g.t_e),
            ("K_A", g.k_a),
            ("omega_s", g.omega_s),
            ("M_r", t.m_r),
            ("B", t.b),
            ("C", t.c),
            ("kappa", t.kappa),
            ("tsr_gain", t.tsr_gain),
            ("T_beta", self.pitch.t_beta),
            ("z*", self.guards.z_star),
            ("P*_ele", self.guards.p_ele_star),
            ("V1", self.network.v1),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "wtg parameter {name} must be positive"
                )));
            }
        }
        if g.d < 0.0 || self.network.y12 < 0.0 || self.network.y13 < 0.0 || self.network.y23 < 0.0 {
            return Err(Error::InvalidModel(
                "damping and admittances must be non-negative".into(),
            ));
        }
        if !(self.wind.r > self.wind.s && self.wind.s >= 0.0) {
            return Err(Error::InvalidModel("wind profile needs r > s >= 0".into()));
        }
        Ok(())
    }

    /// `θ = (M_r, κ, k_p, k_i, T_β, M, T_E)`.
    pub fn theta(&self) -> Vec<f64> {
        vec![
            self.turbine.m_r,
            self.turbine.kappa,
            self.pitch.k_p,
            self.pitch.k_i,
            self.pitch.t_beta,
            self.generator.m,
            self.generator.t_e,
        ]
    }

    pub fn set_theta(&mut self, th: &[f64]) {
        self.turbine.m_r = th[0];
        self.turbine.kappa = th[1];
        self.pitch.k_p = th[2];
        self.pitch.k_i = th[3];
        self.pitch.t_beta = th[4];
        self.generator.m = th[5];
        self.generator.t_e = th[6];
    }
}

/// `γ(t) = r + s sin(100 π t)`.
pub fn wind_profile(r: f64, s: f64) -> impl Fn(f64) -> f64 + Copy + Send + Sync + 'static {
    move |t| r + s * (100.0 * PI * t).sin()
}

/// Power coefficient `C_p(ζ, β)` with the pitch angle in degrees.
pub fn power_coefficient(c: &[f64; 6], zeta: f64, beta: f64) -> f64 {
    let inv = 1.0 / (zeta + 0.08 * beta) - 0.035 / (beta.powi(3) + 1.0);
    c[0] * (c[1] * inv - c[2] * beta - c[3]) * (-c[4] * inv).exp() + c[5] * zeta
}

/// Parameter-independent constants of the model, with the operating-point
/// quantities filled in.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Plant {
    p: WtgParams,
    p_c: f64,
    v_ref: f64,
}

impl Plant {
    fn gamma(&self, t: f64) -> f64 {
        wind_profile(self.p.wind.r, self.p.wind.s)(t)
    }

    fn cp(&self, z: f64, beta: f64, gamma: f64) -> f64 {
        power_coefficient(
            &self.p.turbine.cp,
            self.p.turbine.tsr_gain * z / gamma,
            beta.to_degrees(),
        )
    }

    fn p_ele(&self, x: &[f64], th: &[f64], t: f64) -> f64 {
        let g = self.gamma(t);
        th[1] * self.cp(x[5], x[7], g) * g.powi(3)
    }

    fn rotor_rhs(&self, x: &[f64], th: &[f64], t: f64) -> f64 {
        let tb = &self.p.turbine;
        let g = self.gamma(t);
        let z = x[5];
        self.p.generator.omega_s / th[0]
            * (tb.b * self.cp(z, x[7], g) * g.powi(3) / z - tb.c * z * z)
    }

    /// Network injections `(P_i, Q_i)` of the lossless lines.
    fn network(&self, v: [f64; 3], a: [f64; 3]) -> ([f64; 3], [f64; 3]) {
        let n = &self.p.network;
        let y = [
            [0.0, n.y12, n.y13],
            [n.y12, 0.0, n.y23],
            [n.y13, n.y23, 0.0],
        ];
        let mut pi = [0.0; 3];
        let mut qi = [0.0; 3];
        for i in 0..3 {
            for k in 0..3 {
                if i != k && y[i][k] != 0.0 {
                    pi[i] += v[i] * v[k] * y[i][k] * (a[i] - a[k]).sin();
                    qi[i] += y[i][k] * (v[i] * v[i] - v[i] * v[k] * (a[i] - a[k]).cos());
                }
            }
        }
        (pi, qi)
    }

    fn residual(&self, x: &[f64], y: &[f64], th: &[f64], t: f64) -> Vec<f64> {
        let g = &self.p.generator;
        let (eq, delta) = (x[0], x[1]);
        let (id, iq) = (y[0], y[1]);
        let v = [y[2], y[4], y[6]];
        let a = [y[3], y[5], y[7]];
        let (pn, qn) = self.network(v, a);
        let s = (delta - a[0]).sin();
        let c = (delta - a[0]).cos();
        let p_gen = id * v[0] * s + iq * v[0] * c;
        let q_gen = id * v[0] * c - iq * v[0] * s;
        vec![
            g.x_d_prime * id - eq + v[0] * (a[0] - delta).cos(),
            g.x_q * iq + v[0] * (a[0] - delta).sin(),
            p_gen - pn[0],
            q_gen - qn[0],
            self.p_ele(x, th, t) - pn[1],
            -qn[1],
            -self.p.network.p_l - pn[2],
            -self.p.network.q_l - qn[2],
        ]
    }

    fn field(&self, pitch: bool, x: &[f64], y: &[f64], th: &[f64], t: f64) -> Vec<f64> {
        let g = &self.p.generator;
        let (m, t_e) = (th[5], th[6]);
        let (eq, omega, tm, efd) = (x[0], x[2], x[3], x[4]);
        let (id, iq, v1) = (y[0], y[1], y[2]);
        let dw = omega - g.omega_s;
        let mut f = vec![
            (-eq - (g.x_d - g.x_d_prime) * id + efd) / g.t_d0,
            dw,
            (tm - eq * iq - (g.x_q - g.x_d_prime) * id * iq - g.d * dw) / m,
            (-tm + self.p_c - (omega / g.omega_s - 1.0) / g.r_d) / g.t_sv,
            (-efd + g.k_a * (self.v_ref - v1)) / t_e,
            self.rotor_rhs(x, th, t),
            0.0,
            0.0,
        ];
        if pitch {
            let e = x[5] - self.p.guards.z_star;
            f[6] = e;
            f[7] = (th[2] * e + th[3] * x[6] - x[7]) / th[4];
        }
        f
    }
}

/// Consistent initial point of the pitch-inactive mode under constant wind `r`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WtgEquilibrium {
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub p_c: f64,
    pub v_ref: f64,
    pub p_ele: f64,
}

fn newton<F>(mut f: F, mut u: Vec<f64>, what: &str) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let fail = || Error::InvalidModel(format!("{what}: initialization Newton did not converge"));
    for _ in 0..100 {
        let r = f(&u);
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !rn.is_finite() {
            return Err(fail());
        }
        if rn < 1e-13 {
            return Ok(u);
        }
        let j = numeric_jacobian(|v| Ok(f(v)), &u, 1e-7)?;
        let step = j
            .lu()
            .solve(&DVector::from_column_slice(&r))
            .ok_or_else(fail)?;
        for (ui, si) in u.iter_mut().zip(step.iter()) {
            *ui -= si;
        }
    }
    let r = f(&u);
    if r.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-10 {
        Ok(u)
    } else {
        Err(fail())
    }
}

/// Rotor speed from the aerodynamic balance, load flow from a flat start,
/// then machine internals and controller set-points.
pub fn wtg_equilibrium(p: &WtgParams) -> Result<WtgEquilibrium> {
    p.validate()?;
    let th = p.theta();
    let plant = Plant {
        p: *p,
        p_c: 0.0,
        v_ref: 0.0,
    };
    let beta0 = p.pitch.beta0;
    let balance = |z: f64| {
        let x = [0.0, 0.0, 0.0, 0.0, 0.0, z, 0.0, beta0];
        plant.rotor_rhs(&x, &th, 0.0)
    };
    let (mut lo, mut hi) = (0.3, 3.0);
    if !(balance(lo) > 0.0 && balance(hi) < 0.0) {
        return Err(Error::InvalidModel(
            "rotor speed balance has no root in [0.3, 3]".into(),
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if balance(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let z = 0.5 * (lo + hi);
    let xw = [0.0, 0.0, 0.0, 0.0, 0.0, z, 0.0, beta0];
    let p_ele = plant.p_ele(&xw, &th, 0.0);

    let v1 = p.network.v1;
    let flow = newton(
        |u| {
            let (pn, qn) = plant.network([v1, u[1], u[3]], [0.0, u[0], u[2]]);
            vec![
                p_ele - pn[1],
                -qn[1],
                -p.network.p_l - pn[2],
                -p.network.q_l - qn[2],
            ]
        },
        vec![0.0, 1.0, 0.0, 1.0],
        "load flow",
    )?;
    let (v2, a2, v3, a3) = (flow[1], flow[0], flow[3], flow[2]);
    let (pn, qn) = plant.network([v1, v2, v3], [0.0, a2, a3]);
    let (p1, q1) = (pn[0], qn[0]);

    let g = &p.generator;
    // I = conj(S / V) with θ1 = 0; internal q-axis angle from V + j X_q I.
    let (ir, ii) = (p1 / v1, -q1 / v1);
    let (er, ei) = (v1 - g.x_q * ii, g.x_q * ir);
    let delta = ei.atan2(er);
    let iq = v1 * delta.sin() / g.x_q;
    let id = (q1 + iq * v1 * delta.sin()) / (v1 * delta.cos());
    let eq = g.x_d_prime * id + v1 * delta.cos();
    let efd = eq + (g.x_d - g.x_d_prime) * id;
    let tm = eq * iq + (g.x_q - g.x_d_prime) * id * iq;
    let p_c = g.p_c.unwrap_or(tm);
    let v_ref = g.v_ref.unwrap_or(v1 + efd / g.k_a);

    let x0 = vec![eq, delta, g.omega_s, tm, efd, z, 0.0, beta0];
    let y0 = vec![id, iq, v1, 0.0, v2, a2, v3, a3];
    let plant = Plant { p: *p, p_c, v_ref };
    let r = plant.residual(&x0, &y0, &th, 0.0);
    let f = plant.field(false, &x0, &y0, &th, 0.0);
    let scale = 1e-8;
    if r.iter().any(|v| !(v.abs() < scale)) {
        return Err(Error::InvalidModel(
            "operating point does not satisfy the network equations".into(),
        ));
    }
    if g.p_c.is_none() && g.v_ref.is_none() && f.iter().any(|v| !(v.abs() < scale)) {
        return Err(Error::InvalidModel(
            "operating point is not an equilibrium".into(),
        ));
    }
    Ok(WtgEquilibrium {
        x0,
        y0,
        p_c,
        v_ref,
        p_ele,
    })
}

/// Hybrid model: spec, nominal parameters, measured outputs and the
/// operating point it starts from.
#[derive(Debug, Clone)]
pub struct WtgModel {
    pub spec: HybridSystemSpec,
    pub theta: Vec<f64>,
    pub outputs: OutputMap,
    pub equilibrium: WtgEquilibrium,
}

pub fn wtg_spec(p: &WtgParams, guard: GuardKind) -> Result<HybridSystemSpec> {
    Ok(wtg_model(p, guard)?.spec)
}

pub fn wtg_model(p: &WtgParams, guard: GuardKind) -> Result<WtgModel> {
    let eq = wtg_equilibrium(p)?;
    let plant = Arc::new(Plant {
        p: *p,
        p_c: eq.p_c,
        v_ref: eq.v_ref,
    });
    let layer = {
        let pl = plant.clone();
        AlgebraicLayer {
            n_alg: 8,
            residual: Arc::new(move |pt: Point<'_>| pl.residual(pt.x, pt.y, pt.theta, pt.t)),
            jacobian_y: None,
            initial_guess: eq.y0.clone(),
        }
    };
    let mode = |name: &str, pitch: bool| {
        let pl = plant.clone();
        ModeSpec::dae(
            name,
            Arc::new(move |pt: Point<'_>| pl.field(pitch, pt.x, pt.y, pt.theta, pt.t)),
            layer.clone(),
        )
    };
    let transitions = match guard {
        GuardKind::RotorSpeed => {
            let zs = p.guards.z_star;
            vec![
                TransitionSpec::new(
                    ModeId(0),
                    ModeId(1),
                    move |x, _, _| x[IX_Z] - zs,
                    Crossing::Rising,
                    Reset::Identity,
                ),
                TransitionSpec::new(
                    ModeId(1),
                    ModeId(0),
                    move |x, _, _| x[IX_Z] - zs,
                    Crossing::Falling,
                    Reset::Identity,
                ),
            ]
        }
        GuardKind::Power => {
            let ps = p.guards.p_ele_star;
            let (a, b) = (plant.clone(), plant.clone());
            vec![
                TransitionSpec::new(
                    ModeId(0),
                    ModeId(1),
                    move |x, th, t| a.p_ele(x, th, t) - ps,
                    Crossing::Rising,
                    Reset::Identity,
                ),
                TransitionSpec::new(
                    ModeId(1),
                    ModeId(0),
                    move |x, th, t| b.p_ele(x, th, t) - ps,
                    Crossing::Falling,
                    Reset::Identity,
                ),
            ]
        }
    };
    let spec = HybridSystemSpec::new(
        8,
        7,
        vec![mode("q1", false), mode("q2", true)],
        transitions,
        ModeId(0),
        eq.x0.clone(),
    )?
    .with_names(&STATE_NAMES, &PARAM_NAMES)?;
    let pl = plant.clone();
    let outputs = OutputMap::new(4, move |pt: Point<'_>| {
        vec![pt.x[4], pt.y[2], pt.x[1], pl.p_ele(pt.x, pt.theta, pt.t)]
    })
    .with_names(OUTPUT_NAMES.iter().map(|s| s.to_string()).collect())?;
    Ok(WtgModel {
        spec,
        theta: p.theta(),
        outputs,
        equilibrium: eq,
    })
}

/// Gradient of the electrical power with respect to the state at fixed `θ, t`.
pub fn p_ele_state_gradient(p: &WtgParams, x: &[f64], th: &[f64], t: f64) -> Result<DMatrix<f64>> {
    let plant = Plant {
        p: *p,
        p_c: 0.0,
        v_ref: 0.0,
    };
    numeric_jacobian(|xx| Ok(vec![plant.p_ele(xx, th, t)]), x, 1e-7)
}
