//! Models written as expression strings in the experiment config.
//!
//! Expressions see the states and parameters by name and the time as `t`;
//! functions use the evalexpr names (`math::sin`, `math::exp`, ...).

use std::sync::Arc;

use evalexpr::{
    build_operator_tree, error::EvalexprResultValue, Context, DefaultNumericTypes, EvalexprError,
    Node, Value,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::{Crossing, HybridSystemSpec, ModeId, ModeSpec, Reset, TransitionSpec};
use crate::information::OutputMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineMode {
    pub name: String,
    /// One expression per state.
    pub dynamics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineTransition {
    pub source: String,
    pub target: String,
    pub guard: String,
    pub direction: Crossing,
    /// One expression per state; identity when absent.
    #[serde(default)]
    pub reset: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineOutput {
    pub name: String,
    pub expr: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineModel {
    pub states: Vec<String>,
    pub params: Vec<String>,
    pub initial_state: Vec<f64>,
    /// First mode when absent.
    #[serde(default)]
    pub initial_mode: Option<String>,
    pub modes: Vec<InlineMode>,
    #[serde(default)]
    pub transitions: Vec<InlineTransition>,
    /// Every state when absent.
    #[serde(default)]
    pub outputs: Option<Vec<InlineOutput>>,
}

/// Variable lookup over `(states, params, t)` without allocating a map.
struct Vars<'a> {
    names: &'a [String],
    values: Vec<Value<DefaultNumericTypes>>,
}

impl Context for Vars<'_> {
    type NumericTypes = DefaultNumericTypes;

    fn get_value(&self, identifier: &str) -> Option<&Value<DefaultNumericTypes>> {
        self.names
            .iter()
            .position(|n| n == identifier)
            .map(|i| &self.values[i])
    }

    fn call_function(
        &self,
        identifier: &str,
        _argument: &Value<DefaultNumericTypes>,
    ) -> EvalexprResultValue<DefaultNumericTypes> {
        Err(EvalexprError::FunctionIdentifierNotFound(
            identifier.to_string(),
        ))
    }

    fn are_builtin_functions_disabled(&self) -> bool {
        false
    }

    fn set_builtin_functions_disabled(
        &mut self,
        _disabled: bool,
    ) -> evalexpr::EvalexprResult<(), DefaultNumericTypes> {
        Err(EvalexprError::BuiltinFunctionsCannotBeDisabled)
    }
}

/// A list of compiled expressions evaluated together.
#[derive(Clone)]
struct Exprs {
    names: Arc<Vec<String>>,
    nodes: Arc<Vec<Node<DefaultNumericTypes>>>,
}

impl Exprs {
    fn compile(src: &[String], names: &Arc<Vec<String>>, what: &str) -> Result<Self> {
        let mut nodes = Vec::with_capacity(src.len());
        for e in src {
            let node = build_operator_tree::<DefaultNumericTypes>(e)
                .map_err(|err| Error::Config(format!("{what}: cannot parse '{e}': {err}")))?;
            if let Some(v) = node
                .iter_read_variable_identifiers()
                .find(|v| !names.iter().any(|n| n == v))
            {
                return Err(Error::Config(format!(
                    "{what}: unknown variable '{v}' in '{e}'"
                )));
            }
            nodes.push(node);
        }
        Ok(Self {
            names: names.clone(),
            nodes: Arc::new(nodes),
        })
    }

    fn eval(&self, x: &[f64], th: &[f64], t: f64) -> Vec<f64> {
        let values = x
            .iter()
            .chain(th)
            .chain(std::iter::once(&t))
            .map(|&v| Value::Float(v))
            .collect();
        let ctx = Vars {
            names: &self.names,
            values,
        };
        self.nodes
            .iter()
            .map(|n| n.eval_number_with_context(&ctx).unwrap_or(f64::NAN))
            .collect()
    }
}

fn check_names(model: &InlineModel) -> Result<()> {
    let mut all: Vec<&String> = model.states.iter().chain(&model.params).collect();
    if all.iter().any(|n| n.as_str() == "t") {
        return Err(Error::Config("'t' is reserved for time".into()));
    }
    all.sort();
    if all.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config(
            "state and parameter names must be distinct".into(),
        ));
    }
    Ok(())
}

/// Spec and output map of an inline model.
pub fn inline_model(model: &InlineModel) -> Result<(HybridSystemSpec, OutputMap)> {
    check_names(model)?;
    let n = model.states.len();
    let names: Arc<Vec<String>> = Arc::new(
        model
            .states
            .iter()
            .chain(&model.params)
            .cloned()
            .chain(std::iter::once("t".to_string()))
            .collect(),
    );
    let mode_id = |name: &str| -> Result<ModeId> {
        model
            .modes
            .iter()
            .position(|m| m.name == name)
            .map(ModeId)
            .ok_or_else(|| Error::Config(format!("unknown mode '{name}'")))
    };
    let mut modes = Vec::with_capacity(model.modes.len());
    for m in &model.modes {
        if m.dynamics.len() != n {
            return Err(Error::Config(format!(
                "mode '{}' needs {n} dynamics expressions",
                m.name
            )));
        }
        let f = Exprs::compile(&m.dynamics, &names, &format!("mode '{}'", m.name))?;
        modes.push(ModeSpec::ode(m.name.clone(), move |x, th, t| {
            f.eval(x, th, t)
        }));
    }
    let mut transitions = Vec::with_capacity(model.transitions.len());
    for tr in &model.transitions {
        let what = format!("transition {} -> {}", tr.source, tr.target);
        let g = Exprs::compile(std::slice::from_ref(&tr.guard), &names, &what)?;
        let reset = match &tr.reset {
            None => Reset::Identity,
            Some(r) => {
                if r.len() != n {
                    return Err(Error::Config(format!(
                        "{what}: reset needs {n} expressions"
                    )));
                }
                let r = Exprs::compile(r, &names, &what)?;
                Reset::map(move |x, th, t| r.eval(x, th, t))
            }
        };
        transitions.push(TransitionSpec::new(
            mode_id(&tr.source)?,
            mode_id(&tr.target)?,
            move |x, th, t| g.eval(x, th, t)[0],
            tr.direction,
            reset,
        ));
    }
    let q0 = match &model.initial_mode {
        Some(name) => mode_id(name)?,
        None => ModeId(0),
    };
    let states: Vec<&str> = model.states.iter().map(String::as_str).collect();
    let params: Vec<&str> = model.params.iter().map(String::as_str).collect();
    let spec = HybridSystemSpec::new(
        n,
        model.params.len(),
        modes,
        transitions,
        q0,
        model.initial_state.clone(),
    )
    .map_err(|e| Error::Config(e.to_string()))?
    .with_names(&states, &params)?;
    let outputs = match &model.outputs {
        None => OutputMap::full_state(n, model.params.len()).with_names(model.states.clone())?,
        Some(list) => {
            let src: Vec<String> = list.iter().map(|o| o.expr.clone()).collect();
            let h = Exprs::compile(&src, &names, "outputs")?;
            OutputMap::new(list.len(), move |pt| h.eval(pt.x, pt.theta, pt.t))
                .with_names(list.iter().map(|o| o.name.clone()).collect())?
        }
    };
    Ok((spec, outputs))
}
