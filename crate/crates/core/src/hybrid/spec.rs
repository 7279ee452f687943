//! Data model of a hybrid system: modes with vector fields, guarded transitions
//! with reset maps, and an optional index-1 algebraic layer per mode.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Arguments handed to every model evaluator.
///
/// `y` holds the algebraic variables of the current mode and is empty for
/// plain ODE modes.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub theta: &'a [f64],
    pub t: f64,
}

impl<'a> Point<'a> {
    pub fn new(x: &'a [f64], y: &'a [f64], theta: &'a [f64], t: f64) -> Self {
        Self { x, y, theta, t }
    }
}

pub type VectorFn = Arc<dyn Fn(Point<'_>) -> Vec<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(Point<'_>) -> f64 + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(Point<'_>) -> DMatrix<f64> + Send + Sync>;
pub type PredicateFn = Arc<dyn Fn(Point<'_>) -> bool + Send + Sync>;

/// Index of a mode inside [`HybridSystemSpec::modes`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeId(pub usize);

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Direction in which a guard must cross zero for its transition to fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crossing {
    Rising,
    Falling,
    Either,
}

impl Crossing {
    /// Whether moving from `g0` to `g1` is a crossing in this direction.
    pub fn crossed(self, g0: f64, g1: f64) -> bool {
        let rising = g0 < 0.0 && g1 >= 0.0;
        let falling = g0 > 0.0 && g1 <= 0.0;
        match self {
            Crossing::Rising => rising,
            Crossing::Falling => falling,
            Crossing::Either => rising || falling,
        }
    }
}

/// Semi-explicit index-1 constraint `c(x, y, θ, t) = 0` solved for `y`.
#[derive(Clone)]
pub struct AlgebraicLayer {
    pub n_alg: usize,
    pub residual: VectorFn,
    /// Optional analytic `∂c/∂y`; finite differences otherwise.
    pub jacobian_y: Option<MatrixFn>,
    pub initial_guess: Vec<f64>,
}

impl fmt::Debug for AlgebraicLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AlgebraicLayer")
            .field("n_alg", &self.n_alg)
            .field("initial_guess", &self.initial_guess)
            .finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub struct ModeSpec {
    pub name: String,
    pub dynamics: VectorFn,
    /// Analytic `D_x f`; only consulted for modes without an algebraic layer.
    pub state_jacobian: Option<MatrixFn>,
    /// Analytic `D_θ f`; only consulted for modes without an algebraic layer.
    pub param_jacobian: Option<MatrixFn>,
    pub invariant: Option<PredicateFn>,
    pub algebraic: Option<AlgebraicLayer>,
}

impl ModeSpec {
    /// Plain ODE mode `ẋ = f(x, θ, t)`.
    pub fn ode<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&[f64], &[f64], f64) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            dynamics: Arc::new(move |p: Point<'_>| f(p.x, p.theta, p.t)),
            state_jacobian: None,
            param_jacobian: None,
            invariant: None,
            algebraic: None,
        }
    }

    /// Mode whose vector field also reads algebraic variables from `layer`.
    pub fn dae(name: impl Into<String>, f: VectorFn, layer: AlgebraicLayer) -> Self {
        Self {
            name: name.into(),
            dynamics: f,
            state_jacobian: None,
            param_jacobian: None,
            invariant: None,
            algebraic: Some(layer),
        }
    }

    pub fn with_jacobians<A, B>(mut self, dx: A, dtheta: B) -> Self
    where
        A: Fn(&[f64], &[f64], f64) -> DMatrix<f64> + Send + Sync + 'static,
        B: Fn(&[f64], &[f64], f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.state_jacobian = Some(Arc::new(move |p: Point<'_>| dx(p.x, p.theta, p.t)));
        self.param_jacobian = Some(Arc::new(move |p: Point<'_>| dtheta(p.x, p.theta, p.t)));
        self
    }

    pub fn with_invariant<P>(mut self, pred: P) -> Self
    where
        P: Fn(&[f64], &[f64], f64) -> bool + Send + Sync + 'static,
    {
        self.invariant = Some(Arc::new(move |p: Point<'_>| pred(p.x, p.theta, p.t)));
        self
    }
}

impl fmt::Debug for ModeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModeSpec")
            .field("name", &self.name)
            .field("analytic_jacobians", &self.state_jacobian.is_some())
            .field("algebraic", &self.algebraic)
            .finish_non_exhaustive()
    }
}

/// Reset map applied to the differential state when a transition fires.
#[derive(Clone)]
pub enum Reset {
    /// `x⁺ = x⁻`; its Jacobians are exactly `I` and `0`.
    Identity,
    Map {
        map: VectorFn,
        state_jacobian: Option<MatrixFn>,
        param_jacobian: Option<MatrixFn>,
        time_derivative: Option<VectorFn>,
    },
}

impl Reset {
    pub fn map<F>(f: F) -> Self
    where
        F: Fn(&[f64], &[f64], f64) -> Vec<f64> + Send + Sync + 'static,
    {
        Reset::Map {
            map: Arc::new(move |p: Point<'_>| f(p.x, p.theta, p.t)),
            state_jacobian: None,
            param_jacobian: None,
            time_derivative: None,
        }
    }

    /// Attach analytic state and parameter Jacobians to a `Map` reset.
    pub fn with_jacobians<A, B>(self, dx: A, dtheta: B) -> Self
    where
        A: Fn(&[f64], &[f64], f64) -> DMatrix<f64> + Send + Sync + 'static,
        B: Fn(&[f64], &[f64], f64) -> DMatrix<f64> + Send + Sync + 'static,
    {
        match self {
            Reset::Identity => Reset::Identity,
            Reset::Map {
                map,
                time_derivative,
                ..
            } => Reset::Map {
                map,
                state_jacobian: Some(Arc::new(move |p: Point<'_>| dx(p.x, p.theta, p.t))),
                param_jacobian: Some(Arc::new(move |p: Point<'_>| dtheta(p.x, p.theta, p.t))),
                time_derivative,
            },
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Reset::Identity)
    }
}

impl fmt::Debug for Reset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reset::Identity => write!(f, "Identity"),
            Reset::Map { .. } => write!(f, "Map"),
        }
    }
}

#[derive(Clone)]
pub struct TransitionSpec {
    pub source: ModeId,
    pub target: ModeId,
    pub guard: ScalarFn,
    pub direction: Crossing,
    pub reset: Reset,
}

impl TransitionSpec {
    /// Transition whose guard reads only `(x, θ, t)`.
    pub fn new<G>(
        source: ModeId,
        target: ModeId,
        guard: G,
        direction: Crossing,
        reset: Reset,
    ) -> Self
    where
        G: Fn(&[f64], &[f64], f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            source,
            target,
            guard: Arc::new(move |p: Point<'_>| guard(p.x, p.theta, p.t)),
            direction,
            reset,
        }
    }

    /// Transition whose guard may also read the algebraic variables.
    pub fn with_point_guard(
        source: ModeId,
        target: ModeId,
        guard: ScalarFn,
        direction: Crossing,
        reset: Reset,
    ) -> Self {
        Self {
            source,
            target,
            guard,
            direction,
            reset,
        }
    }
}

impl fmt::Debug for TransitionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransitionSpec")
            .field("source", &self.source)
            .field("target", &self.target)
            .field("direction", &self.direction)
            .field("reset", &self.reset)
            .finish_non_exhaustive()
    }
}

/// A hybrid system: modes, guarded transitions and an initial condition.
#[derive(Clone, Debug)]
pub struct HybridSystemSpec {
    pub n_states: usize,
    pub n_params: usize,
    pub modes: Vec<ModeSpec>,
    pub transitions: Vec<TransitionSpec>,
    pub initial_mode: ModeId,
    pub initial_state: Vec<f64>,
    pub state_names: Vec<String>,
    pub param_names: Vec<String>,
}

impl HybridSystemSpec {
    /// Build and validate a spec. State and parameter names default to
    /// `x1..xn` and `p1..pp`.
    pub fn new(
        n_states: usize,
        n_params: usize,
        modes: Vec<ModeSpec>,
        transitions: Vec<TransitionSpec>,
        initial_mode: ModeId,
        initial_state: Vec<f64>,
    ) -> Result<Self> {
        let spec = Self {
            n_states,
            n_params,
            modes,
            transitions,
            initial_mode,
            initial_state,
            state_names: (1..=n_states).map(|i| format!("x{i}")).collect(),
            param_names: (1..=n_params).map(|i| format!("p{i}")).collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_names(mut self, states: &[&str], params: &[&str]) -> Result<Self> {
        if states.len() != self.n_states || params.len() != self.n_params {
            return Err(Error::InvalidModel("name list length mismatch".into()));
        }
        self.state_names = states.iter().map(|s| s.to_string()).collect();
        self.param_names = params.iter().map(|s| s.to_string()).collect();
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 {
            return Err(Error::InvalidModel("n_states must be at least 1".into()));
        }
        if self.n_params == 0 {
            return Err(Error::InvalidModel("n_params must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::InvalidModel("no modes".into()));
        }
        self.mode(self.initial_mode)?;
        if self.initial_state.len() != self.n_states {
            return Err(Error::InvalidModel(format!(
                "initial state has length {}, expected {}",
                self.initial_state.len(),
                self.n_states
            )));
        }
        for (k, tr) in self.transitions.iter().enumerate() {
            if tr.source.0 >= self.modes.len() || tr.target.0 >= self.modes.len() {
                return Err(Error::InvalidModel(format!(
                    "transition {k} references a mode that does not exist"
                )));
            }
        }
        for m in &self.modes {
            if let Some(layer) = &m.algebraic {
                if layer.initial_guess.len() != layer.n_alg {
                    return Err(Error::InvalidModel(format!(
                        "mode {}: algebraic initial guess has wrong length",
                        m.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn mode(&self, q: ModeId) -> Result<&ModeSpec> {
        self.modes.get(q.0).ok_or(Error::UnknownMode(q.0))
    }

    pub fn mode_name(&self, q: ModeId) -> &str {
        self.modes.get(q.0).map_or("?", |m| m.name.as_str())
    }

    pub fn mode_by_name(&self, name: &str) -> Option<ModeId> {
        self.modes.iter().position(|m| m.name == name).map(ModeId)
    }

    /// Indices of transitions leaving `q`.
    pub fn outgoing(&self, q: ModeId) -> Vec<usize> {
        self.transitions
            .iter()
            .enumerate()
            .filter(|(_, tr)| tr.source == q)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn has_algebraic(&self) -> bool {
        self.modes.iter().any(|m| m.algebraic.is_some())
    }
}

/// Solver settings for [`crate::hybrid::simulate`] and sensitivity propagation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub event_tol_time: f64,
    pub event_tol_guard: f64,
    pub max_step: f64,
    pub max_events: usize,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    pub transversality_floor: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            event_tol_time: 1e-10,
            event_tol_guard: 1e-10,
            max_step: f64::INFINITY,
            max_events: 10_000,
            newton_tol: 1e-10,
            newton_max_iters: 50,
            transversality_floor: 1e-8,
            max_steps: 10_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("event_tol_time", self.event_tol_time),
            ("event_tol_guard", self.event_tol_guard),
            ("max_step", self.max_step),
            ("newton_tol", self.newton_tol),
            ("transversality_floor", self.transversality_floor),
        ];
        for (name, v) in positive {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be strictly positive")));
            }
        }
        if self.max_events == 0 || self.newton_max_iters == 0 || self.max_steps == 0 {
            return Err(Error::Config("iteration caps must be positive".into()));
        }
        Ok(())
    }

    /// Same settings with both integration tolerances scaled by `factor`.
    pub fn scaled_tolerances(mut self, factor: f64) -> Self {
        self.rel_tol *= factor;
        self.abs_tol *= factor;
        self
    }

    pub fn with_max_step(mut self, h: f64) -> Self {
        self.max_step = h;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trivial_mode() -> ModeSpec {
        ModeSpec::ode("q", |_x, _th, _t| vec![0.0])
    }

    #[test]
    fn rejects_dangling_transition() {
        let tr = TransitionSpec::new(
            ModeId(0),
            ModeId(3),
            |x, _, _| x[0],
            Crossing::Rising,
            Reset::Identity,
        );
        let err = HybridSystemSpec::new(1, 1, vec![trivial_mode()], vec![tr], ModeId(0), vec![0.0]);
        assert!(matches!(err, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn rejects_empty_dimensions() {
        assert!(
            HybridSystemSpec::new(1, 0, vec![trivial_mode()], vec![], ModeId(0), vec![0.0])
                .is_err()
        );
        assert!(
            HybridSystemSpec::new(0, 1, vec![trivial_mode()], vec![], ModeId(0), vec![]).is_err()
        );
    }

    #[test]
    fn crossing_directions() {
        assert!(Crossing::Rising.crossed(-1.0, 0.5));
        assert!(!Crossing::Rising.crossed(1.0, -0.5));
        assert!(Crossing::Falling.crossed(1.0, 0.0));
        assert!(!Crossing::Falling.crossed(0.0, -1.0));
        assert!(Crossing::Either.crossed(1.0, -1.0) && Crossing::Either.crossed(-1.0, 1.0));
    }

    #[test]
    fn config_rejects_nonpositive_tolerance() {
        let mut c = IntegratorConfig::default();
        c.event_tol_time = 0.0;
        assert!(c.validate().is_err());
        assert!(IntegratorConfig::default().validate().is_ok());
    }
}
