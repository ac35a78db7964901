//! Registry of named models, test functions and sources.

use ouflow_core::{Example1Params, ModelSpec};
use serde_json::{json, Value};

use crate::config::FieldSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Model,
    Field,
    Source,
}

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Model => "model",
            Category::Field => "field",
            Category::Source => "source",
        }
    }
}

/// One registry entry with a ready-to-paste JSON snippet.
#[derive(Debug, Clone)]
pub struct Builtin {
    pub category: Category,
    pub name: &'static str,
    pub description: &'static str,
    pub snippet: Value,
}

fn model(name: &'static str, description: &'static str, spec: ModelSpec) -> Builtin {
    Builtin { category: Category::Model, name, description, snippet: serde_json::to_value(spec).unwrap() }
}

fn field(name: &'static str, description: &'static str, spec: FieldSpec) -> Builtin {
    Builtin { category: Category::Field, name, description, snippet: serde_json::to_value(spec).unwrap() }
}

/// Every builtin, models first, then fields, then sources.
pub fn builtins() -> Vec<Builtin> {
    let d = Example1Params::default();
    let diagonal = serde_json::from_value::<ModelSpec>(json!({
        "type": "diagonal", "N": d.modes, "T": d.horizon,
        "params": {"a": d.a, "b": d.b, "c1": d.c1, "c2": d.c2, "eps": d.eps, "omega": d.omega}
    }))
    .unwrap();
    vec![
        model("example1", "diagonal family alpha_k = -k^a (c1 + eps sin wt), beta_k = k^-b (1 + eps cos wt)", diagonal),
        model("scalarOU", "A = -1, B = 1 in one dimension", ModelSpec::scalar_ou()),
        model("heat", "A = 0, B = sqrt 2, generator is the Laplacian", ModelSpec::heat(1)),
        model("heat2", "two-dimensional heat model", ModelSpec::heat(2)),
        field("constant", "phi = value", FieldSpec::Constant { value: 1.0 }),
        field("linear", "<c, x>", FieldSpec::Linear { c: vec![1.0] }),
        field("quadratic", "<M x, x>", FieldSpec::Quadratic { m: vec![vec![1.0]] }),
        field("cosine", "cos <c, x>", FieldSpec::Cosine { c: vec![1.0] }),
        field("sine", "sin <c, x>", FieldSpec::Sine { c: vec![1.0] }),
        field("holderCusp", "|x - x0|^alpha, Hölder seminorm 1", FieldSpec::HolderCusp { alpha: 0.4, center: None }),
        field("absolute", "|<c, x>|", FieldSpec::Absolute { c: vec![1.0] }),
        field("halfspace", "sgn(<c, x> - offset)", FieldSpec::Halfspace { c: vec![1.0], offset: 0.0 }),
        field("quadrantSign", "prod_k sgn(x_k)", FieldSpec::QuadrantSign {}),
        field(
            "polynomial",
            "sum of monomials coef * x^powers",
            serde_json::from_value(json!({"kind": "polynomial", "terms": [{"coef": 1.0, "powers": [2]}]})).unwrap(),
        ),
        Builtin {
            category: Category::Source,
            name: "stationary",
            description: "any field used as a time-independent source psi",
            snippet: json!({"psi": {"kind": "holderCusp", "alpha": 0.4}}),
        },
        Builtin {
            category: Category::Source,
            name: "zero",
            description: "psi = 0",
            snippet: json!({"psi": {"kind": "constant", "value": 0.0}}),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_contains_the_named_entries_in_order() {
        let names: Vec<_> = builtins().iter().map(|b| b.name).collect();
        for want in ["example1", "scalarOU", "holderCusp", "heat"] {
            assert!(names.contains(&want), "{want}");
        }
        let cats: Vec<_> = builtins().iter().map(|b| b.category as u8).collect();
        assert!(cats.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn snippets_parse_back() {
        for b in builtins() {
            match b.category {
                Category::Model => {
                    serde_json::from_value::<ModelSpec>(b.snippet.clone()).unwrap().build().unwrap();
                }
                Category::Field => {
                    serde_json::from_value::<FieldSpec>(b.snippet.clone()).unwrap().build(1).unwrap();
                }
                Category::Source => {}
            }
        }
    }
}
