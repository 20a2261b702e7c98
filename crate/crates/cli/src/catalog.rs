//! Machine-readable listing of the utilities, losses, penalty families,
//! cones and backends, with one example scenario per penalty family.

use emot::penalties::PENALTY_NAMES;
use emot::valuation::{UtilityFunction, UTILITY_NAMES};
use serde_json::{json, Value};

fn utilities() -> Vec<Value> {
    UTILITY_NAMES
        .iter()
        .map(|name| {
            let u = UtilityFunction::<f64>::from_name(name, None).expect("catalog name");
            let params = if *name == "piecewise_linear" {
                json!([{"name": "param", "meaning": "slope alpha >= 1 on x < 0", "default": 2.0}])
            } else {
                json!([])
            };
            let edge = u.edge();
            let slope = u.singular_slope();
            json!({
                "name": name,
                "params": params,
                "domain_edge": if edge.is_finite() { json!(edge) } else { json!("-inf") },
                "singular_slope": if slope.is_finite() { json!(slope) } else { json!("inf") },
            })
        })
        .collect()
}

fn uniform3() -> Value {
    json!([{"t": 1, "weights": [0.3333333333333333, 0.3333333333333333, 0.3333333333333334]}])
}

fn example(penalty: Value) -> Value {
    json!({
        "grid": {"nodes": [[[1.0]], [[0.0, 1.0, 2.0]]]},
        "cost": {"expr": "call(x1, 1)"},
        "penalty": penalty,
        "cone": {"tag": "martingale"},
    })
}

fn penalties() -> Vec<Value> {
    PENALTY_NAMES
        .iter()
        .map(|name| {
            let (fields, penalty) = match *name {
                "fixed_marginals" => (
                    json!({"terms": "[{t, weights}]"}),
                    json!({"family": "fixed_marginals", "terms": uniform3()}),
                ),
                "divergence" => (
                    json!({"utility": "{name, param?}", "terms": "[{t, weights}]"}),
                    json!({"family": "divergence", "utility": {"name": "exponential"}, "terms": uniform3()}),
                ),
                "market_price" => (
                    json!({"options": "[{t, payoff: expr in x | [values], price, loss}]"}),
                    json!({"family": "market_price", "options": [
                        {"t": 1, "payoff": "call(x, 1)", "price": 0.3, "loss": {"kind": "power", "p": 2.0}}
                    ]}),
                ),
                _ => (
                    json!({"terms": "[{t, weights, loss, metric?}]"}),
                    json!({"family": "wasserstein_ball", "terms": [
                        {"t": 1, "weights": [0.3333333333333333, 0.3333333333333333, 0.3333333333333334],
                         "loss": {"kind": "threshold", "eps": 0.1}, "metric": {"kind": "euclidean"}}
                    ]}),
                ),
            };
            json!({"name": name, "fields": fields, "example": example(penalty)})
        })
        .collect()
}

pub fn catalog() -> Value {
    json!({
        "utilities": utilities(),
        "losses": [
            {"kind": "zero", "params": []},
            {"kind": "power", "params": ["p > 1"]},
            {"kind": "threshold", "params": ["eps >= 0"]},
            {"kind": "hard", "params": []},
        ],
        "penalties": penalties(),
        "cones": [
            {"tag": "martingale", "params": []},
            {"tag": "eps_martingale", "params": ["eps >= 0"]},
            {"tag": "no_short_selling", "params": []},
            {"tag": "no_long_buying", "params": []},
            {"tag": "null_cone", "params": []},
        ],
        "backends": ["auto", "lp", "fw", "oracle"],
        "sequences": [
            {"kind": "utility_scaling", "params": ["indices"]},
            {"kind": "eps_martingale", "params": ["eps"]},
            {"kind": "wasserstein_perturbation", "params": ["limit", "steps", "metric?", "tol?"]},
            {"kind": "option_growth", "params": ["options", "limit", "indices?"]},
        ],
    })
}
