//! JSON model files.
//!
//! ```json
//! { "states": ["a", "b"], "beta": 1.0, "epsilon": 0.1,
//!   "energy": {"a": 0.0, "b": 1.0},
//!   "base_rates": [{"from": "a", "to": "b", "rate": 0.6}, ...],
//!   "forcing": [{"from": "a", "to": "b", "value": 1.0}],
//!   "observables": {"Q": {"a": 0.0, "b": 1.0}} }
//! ```
//!
//! Forcing entries carry one orientation; the reverse is filled in with a
//! flipped sign. `observables` is optional and holds named state functions.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::JumpModel;
use crate::error::{Error, Result};

const TOP_LEVEL_KEYS: [&str; 7] = [
    "states",
    "beta",
    "epsilon",
    "energy",
    "base_rates",
    "forcing",
    "observables",
];

/// A parsed model file.
#[derive(Debug, Clone)]
pub struct ModelFile {
    pub model: JumpModel,
    /// Named state functions, indexed like the model states.
    pub observables: BTreeMap<String, Vec<f64>>,
    /// Hex SHA-256 of the raw file contents.
    pub content_hash: String,
}

impl ModelFile {
    pub fn observable(&self, name: &str) -> Result<&[f64]> {
        self.observables
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Schema {
                pointer: format!("/observables/{}", escape_pointer(name)),
                message: "no such observable".into(),
            })
    }
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path)?;
    load_model_str(&text)
}

fn schema(pointer: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        pointer: pointer.into(),
        message: message.into(),
    }
}

fn escape_pointer(token: &str) -> String {
    token.replace('~', "~0").replace('/', "~1")
}

fn as_number(v: &Value, pointer: &str) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| schema(pointer, format!("expected a finite number, got {v}")))
}

fn as_object<'a>(v: &'a Value, pointer: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| schema(pointer, "expected an object"))
}

fn as_array<'a>(v: &'a Value, pointer: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| schema(pointer, "expected an array"))
}

fn label_of(v: &Value, pointer: &str) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(schema(pointer, "state labels must be strings or numbers")),
    }
}

fn state_map(
    obj: &Map<String, Value>,
    pointer: &str,
    index: &BTreeMap<String, usize>,
) -> Result<Vec<f64>> {
    let mut out = vec![f64::NAN; index.len()];
    for (key, v) in obj {
        let p = format!("{pointer}/{}", escape_pointer(key));
        let &i = index
            .get(key)
            .ok_or_else(|| schema(&p, format!("unknown state {key:?}")))?;
        out[i] = as_number(v, &p)?;
    }
    if let Some((label, _)) = index.iter().find(|(_, &i)| out[i].is_nan()) {
        return Err(schema(pointer, format!("missing value for state {label:?}")));
    }
    Ok(out)
}

fn check_keys(obj: &Map<String, Value>, pointer: &str, allowed: &[&str]) -> Result<()> {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(schema(
                format!("{pointer}/{}", escape_pointer(key)),
                "unknown key",
            ));
        }
    }
    Ok(())
}

/// Parses and validates a model file.
pub fn load_model_str(text: &str) -> Result<ModelFile> {
    let content_hash = hex::encode(Sha256::digest(text.as_bytes()));
    let root: Value = serde_json::from_str(text).map_err(|e| schema("", e.to_string()))?;
    let root = as_object(&root, "")?;
    check_keys(root, "", &TOP_LEVEL_KEYS)?;
    let field = |key: &str| {
        root.get(key)
            .ok_or_else(|| schema(format!("/{key}"), "missing required key"))
    };

    let states = as_array(field("states")?, "/states")?;
    let mut labels = Vec::with_capacity(states.len());
    let mut index = BTreeMap::new();
    for (i, s) in states.iter().enumerate() {
        let p = format!("/states/{i}");
        let label = label_of(s, &p)?;
        if index.insert(label.clone(), i).is_some() {
            return Err(schema(p, format!("duplicate state {label:?}")));
        }
        labels.push(label);
    }
    let n = labels.len();
    let lookup = |v: &Value, p: &str| -> Result<usize> {
        let label = label_of(v, p)?;
        index
            .get(&label)
            .copied()
            .ok_or_else(|| schema(p, format!("unknown state {label:?}")))
    };

    let beta = as_number(field("beta")?, "/beta")?;
    let epsilon = as_number(field("epsilon")?, "/epsilon")?;
    let energy = state_map(as_object(field("energy")?, "/energy")?, "/energy", &index)?;

    let mut rates = DMatrix::zeros(n, n);
    let mut rate_set = vec![false; n * n];
    for (i, entry) in as_array(field("base_rates")?, "/base_rates")?.iter().enumerate() {
        let p = format!("/base_rates/{i}");
        let obj = as_object(entry, &p)?;
        check_keys(obj, &p, &["from", "to", "rate"])?;
        let get = |k: &str| obj.get(k).ok_or_else(|| schema(format!("{p}/{k}"), "missing required key"));
        let x = lookup(get("from")?, &format!("{p}/from"))?;
        let y = lookup(get("to")?, &format!("{p}/to"))?;
        if x == y {
            return Err(schema(p, "self-transition"));
        }
        let r = as_number(get("rate")?, &format!("{p}/rate"))?;
        if rate_set[x * n + y] {
            return Err(schema(p, "duplicate rate entry"));
        }
        rate_set[x * n + y] = true;
        rates[(x, y)] = r;
    }

    let mut forcing = DMatrix::zeros(n, n);
    let mut forcing_set = vec![false; n * n];
    if let Some(entries) = root.get("forcing") {
        for (i, entry) in as_array(entries, "/forcing")?.iter().enumerate() {
            let p = format!("/forcing/{i}");
            let obj = as_object(entry, &p)?;
            check_keys(obj, &p, &["from", "to", "value"])?;
            let get = |k: &str| obj.get(k).ok_or_else(|| schema(format!("{p}/{k}"), "missing required key"));
            let x = lookup(get("from")?, &format!("{p}/from"))?;
            let y = lookup(get("to")?, &format!("{p}/to"))?;
            if x == y {
                return Err(schema(p, "self-transition"));
            }
            let v = as_number(get("value")?, &format!("{p}/value"))?;
            if forcing_set[x * n + y] {
                if forcing[(x, y)] != v {
                    return Err(schema(
                        p,
                        format!(
                            "contradicts an earlier entry: f({},{}) already {}",
                            labels[x],
                            labels[y],
                            forcing[(x, y)]
                        ),
                    ));
                }
                continue;
            }
            forcing_set[x * n + y] = true;
            forcing_set[y * n + x] = true;
            forcing[(x, y)] = v;
            forcing[(y, x)] = -v;
        }
    }

    let mut observables = BTreeMap::new();
    if let Some(obs) = root.get("observables") {
        for (name, v) in as_object(obs, "/observables")? {
            let p = format!("/observables/{}", escape_pointer(name));
            observables.insert(name.clone(), state_map(as_object(v, &p)?, &p, &index)?);
        }
    }

    let model = JumpModel::new(labels, energy, beta, rates, forcing, epsilon)?;
    Ok(ModelFile {
        model,
        observables,
        content_hash,
    })
}

/// Serializes a model (and optional observables) in the file schema.
pub fn model_to_json(model: &JumpModel, observables: &BTreeMap<String, Vec<f64>>) -> Value {
    let labels = model.labels();
    let n = model.n();
    let mut rates = Vec::new();
    let mut forcing = Vec::new();
    for x in 0..n {
        for y in 0..n {
            if x == y || model.base_rate(x, y) == 0.0 {
                continue;
            }
            rates.push(json!({"from": labels[x], "to": labels[y], "rate": model.base_rate(x, y)}));
            if x < y && model.forcing(x, y) != 0.0 {
                forcing.push(json!({"from": labels[x], "to": labels[y], "value": model.forcing(x, y)}));
            }
        }
    }
    let energy: Map<String, Value> = labels
        .iter()
        .zip(model.energy())
        .map(|(l, u)| (l.clone(), json!(u)))
        .collect();
    let mut root = json!({
        "states": labels,
        "beta": model.beta(),
        "epsilon": model.epsilon(),
        "energy": energy,
        "base_rates": rates,
        "forcing": forcing,
    });
    if !observables.is_empty() {
        let obs: Map<String, Value> = observables
            .iter()
            .map(|(name, values)| {
                let m: Map<String, Value> = labels
                    .iter()
                    .zip(values)
                    .map(|(l, v)| (l.clone(), json!(v)))
                    .collect();
                (name.clone(), Value::Object(m))
            })
            .collect();
        root["observables"] = Value::Object(obs);
    }
    root
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn ring3_text() -> String {
        serde_json::to_string_pretty(&model_to_json(&fixtures::ring3(0.1), &BTreeMap::new())).unwrap()
    }

    #[test]
    fn round_trips_ring3() {
        let file = load_model_str(&ring3_text()).unwrap();
        assert_eq!(file.model, fixtures::ring3(0.1));
        assert_eq!(file.content_hash.len(), 64);
    }

    #[test]
    fn mirrors_forcing_and_accepts_consistent_duplicates() {
        let mut v: Value = serde_json::from_str(&ring3_text()).unwrap();
        let dup = v["forcing"][0].clone();
        v["forcing"].as_array_mut().unwrap().push(dup);
        let file = load_model_str(&v.to_string()).unwrap();
        assert_eq!(file.model.forcing(1, 0), -file.model.forcing(0, 1));
    }

    #[test]
    fn rejects_contradictory_forcing() {
        let mut v: Value = serde_json::from_str(&ring3_text()).unwrap();
        let mut dup = v["forcing"][0].clone();
        dup["value"] = json!(2.0);
        v["forcing"].as_array_mut().unwrap().push(dup);
        match load_model_str(&v.to_string()).unwrap_err() {
            Error::Schema { pointer, .. } => assert_eq!(pointer, "/forcing/3"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn schema_errors_carry_json_pointers() {
        let mut v: Value = serde_json::from_str(&ring3_text()).unwrap();
        v["base_rates"][2]["to"] = json!("nowhere");
        match load_model_str(&v.to_string()).unwrap_err() {
            Error::Schema { pointer, .. } => assert_eq!(pointer, "/base_rates/2/to"),
            e => panic!("{e}"),
        }
        let mut v: Value = serde_json::from_str(&ring3_text()).unwrap();
        v["temperature"] = json!(1);
        match load_model_str(&v.to_string()).unwrap_err() {
            Error::Schema { pointer, .. } => assert_eq!(pointer, "/temperature"),
            e => panic!("{e}"),
        }
        let mut v: Value = serde_json::from_str(&ring3_text()).unwrap();
        v["energy"].as_object_mut().unwrap().remove("2");
        match load_model_str(&v.to_string()).unwrap_err() {
            Error::Schema { pointer, message } => {
                assert_eq!(pointer, "/energy");
                assert!(message.contains("\"2\""));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn observables_are_loaded_by_state() {
        let mut obs = BTreeMap::new();
        obs.insert("Q".to_string(), vec![0.0, 0.0, 1.0]);
        let text = model_to_json(&fixtures::ring3(0.1), &obs).to_string();
        let file = load_model_str(&text).unwrap();
        assert_eq!(file.observable("Q").unwrap(), &[0.0, 0.0, 1.0]);
        assert!(file.observable("missing").is_err());
    }
}
