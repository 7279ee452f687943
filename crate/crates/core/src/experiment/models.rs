use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::config::ModelConfig;
use crate::experiment::inline::inline_model;
use crate::hybrid::HybridSystemSpec;
use crate::information::OutputMap;
use crate::systems::{
    buck_averaged_spec, buck_dcm_spec, fig3_spec, wtg_model, BuckParams, GuardKind, WtgParams,
};

/// A model ready to simulate: spec, nominal parameters and every signal it
/// can measure.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub spec: HybridSystemSpec,
    pub theta: Vec<f64>,
    pub outputs: OutputMap,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BuiltinInfo {
    pub name: &'static str,
    pub description: &'static str,
    pub states: Vec<String>,
    pub params: Vec<String>,
    pub outputs: Vec<String>,
}

pub const BUILTINS: [(&str, &str); 5] = [
    (
        "buck_dcm",
        "buck converter in discontinuous conduction, three modes with hysteresis",
    ),
    (
        "buck_averaged",
        "duty-cycle averaged buck converter, single mode",
    ),
    (
        "wtg_z_guard",
        "generator and wind turbine, pitch control switched on rotor speed",
    ),
    (
        "wtg_power_guard",
        "generator and wind turbine, pitch control switched on electrical power",
    ),
    ("fig3", "planar crossing of x1 = 0 with a contracting reset"),
];

fn options<T: DeserializeOwned + Default>(v: Option<&serde_json::Value>) -> Result<T> {
    match v {
        None => Ok(T::default()),
        Some(v) => serde_json::from_value(v.clone())
            .map_err(|e| Error::Config(format!("model options: {e}"))),
    }
}

/// Replace entries of `theta` named in `params`.
fn apply_params(theta: &mut [f64], names: &[String], params: &BTreeMap<String, f64>) -> Result<()> {
    for (k, v) in params {
        let i = names.iter().position(|n| n == k).ok_or_else(|| {
            Error::Config(format!(
                "unknown parameter '{k}' (expected one of {names:?})"
            ))
        })?;
        if !v.is_finite() {
            return Err(Error::Config(format!("parameter '{k}' must be finite")));
        }
        theta[i] = *v;
    }
    Ok(())
}

fn buck(
    name: &str,
    cfg: &ModelConfig,
    params: &BTreeMap<String, f64>,
    averaged: bool,
) -> Result<Model> {
    let mut p: BuckParams = options(cfg.options.as_ref())?;
    let names: Vec<String> = crate::systems::buck::PARAM_NAMES
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut th = p.theta();
    apply_params(&mut th, &names, params)?;
    p.set_theta(&th);
    let spec = if averaged {
        buck_averaged_spec(&p)?
    } else {
        buck_dcm_spec(&p)?
    };
    let outputs = OutputMap::full_state(2, 3).with_names(spec.state_names.clone())?;
    Ok(Model {
        name: name.into(),
        spec,
        theta: th,
        outputs,
    })
}

fn wtg(
    name: &str,
    cfg: &ModelConfig,
    params: &BTreeMap<String, f64>,
    kind: GuardKind,
) -> Result<Model> {
    let mut p: WtgParams = options(cfg.options.as_ref())?;
    let names: Vec<String> = crate::systems::wtg::PARAM_NAMES
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut th = p.theta();
    apply_params(&mut th, &names, params)?;
    p.set_theta(&th);
    p.validate()?;
    let m = wtg_model(&p, kind)?;
    Ok(Model {
        name: name.into(),
        spec: m.spec,
        theta: m.theta,
        outputs: m.outputs,
    })
}

/// Build the model a config describes, with its parameter overrides applied.
pub fn build_model(cfg: &ModelConfig, params: &BTreeMap<String, f64>) -> Result<Model> {
    if let Some(inline) = &cfg.inline {
        let (spec, outputs) = inline_model(inline)?;
        let missing: Vec<&String> = spec
            .param_names
            .iter()
            .filter(|n| !params.contains_key(*n))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "inline model needs values for {missing:?}"
            )));
        }
        let mut theta = vec![0.0; spec.n_params];
        apply_params(&mut theta, &spec.param_names, params)?;
        return Ok(Model {
            name: "inline".into(),
            spec,
            theta,
            outputs,
        });
    }
    let name = cfg
        .builtin
        .as_deref()
        .ok_or_else(|| Error::Config("model is missing".into()))?;
    match name {
        "buck_dcm" => buck(name, cfg, params, false),
        "buck_averaged" => buck(name, cfg, params, true),
        "wtg_z_guard" => wtg(name, cfg, params, GuardKind::RotorSpeed),
        "wtg_power_guard" => wtg(name, cfg, params, GuardKind::Power),
        "fig3" => {
            if cfg.options.is_some() {
                return Err(Error::Config("fig3 takes no options".into()));
            }
            let spec = fig3_spec()?;
            let mut theta = vec![1.0];
            apply_params(&mut theta, &spec.param_names, params)?;
            let outputs = OutputMap::full_state(2, 1).with_names(spec.state_names.clone())?;
            Ok(Model {
                name: name.into(),
                spec,
                theta,
                outputs,
            })
        }
        other => Err(Error::Config(format!(
            "unknown builtin model '{other}' (expected one of {:?})",
            BUILTINS.map(|b| b.0)
        ))),
    }
}

pub fn list_models() -> Result<Vec<BuiltinInfo>> {
    BUILTINS
        .iter()
        .map(|&(name, description)| {
            let cfg = ModelConfig {
                builtin: Some(name.into()),
                options: None,
                inline: None,
            };
            let m = build_model(&cfg, &BTreeMap::new())?;
            Ok(BuiltinInfo {
                name,
                description,
                states: m.spec.state_names.clone(),
                params: m.spec.param_names.clone(),
                outputs: m.outputs.names.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn builtin(name: &str) -> ModelConfig {
        ModelConfig {
            builtin: Some(name.into()),
            options: None,
            inline: None,
        }
    }

    #[test]
    fn all_builtins_build() {
        let l = list_models().unwrap();
        assert_eq!(l.len(), 5);
        assert_eq!(l[2].params.len(), 7);
        assert_eq!(l[2].outputs, vec!["E_fd", "V1", "delta", "P_ele"]);
    }

    #[test]
    fn overrides_applied() {
        let mut p = BTreeMap::new();
        p.insert("C".to_string(), 2e-4);
        let m = build_model(&builtin("buck_dcm"), &p).unwrap();
        assert_eq!(m.theta, vec![1e-3, 2e-4, 0.1]);
        p.insert("Q".to_string(), 1.0);
        assert!(matches!(
            build_model(&builtin("buck_dcm"), &p),
            Err(Error::Config(_))
        ));
        assert!(build_model(&builtin("nope"), &BTreeMap::new()).is_err());
    }

    #[test]
    fn options_checked() {
        let mut c = builtin("buck_dcm");
        c.options = Some(serde_json::json!({"reset": "scaled"}));
        assert!(build_model(&c, &BTreeMap::new()).is_ok());
        c.options = Some(serde_json::json!({"colour": 1}));
        assert!(matches!(
            build_model(&c, &BTreeMap::new()),
            Err(Error::Config(_))
        ));
    }
}
