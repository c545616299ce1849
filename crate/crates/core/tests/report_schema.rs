//! Reports checked against the published JSON schema with a small validator
//! covering the keywords the schema uses.

use serde_json::Value;

use rankstab::harness::{
    read_report, run_ablation, run_sweep, run_twin_experiment, write_aggregate_csv, write_report,
    ExperimentConfig, SweepKnob,
};

const SCHEMA: &str = include_str!("../schemas/experiment_report.schema.json");

fn resolve<'a>(root: &'a Value, r: &str) -> &'a Value {
    let path = r.strip_prefix("#/").expect("local ref");
    path.split('/').fold(root, |v, k| &v[k])
}

fn type_matches(t: &str, v: &Value) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "null" => v.is_null(),
        "boolean" => v.is_boolean(),
        "number" => v.is_number(),
        "integer" => v.is_u64() || v.is_i64(),
        other => panic!("unsupported type {other}"),
    }
}

fn validate(root: &Value, schema: &Value, v: &Value, at: &str, errs: &mut Vec<String>) {
    let Some(s) = schema.as_object() else { return };
    if let Some(r) = s.get("$ref").and_then(Value::as_str) {
        validate(root, resolve(root, r), v, at, errs);
    }
    if let Some(t) = s.get("type") {
        let ok = match t {
            Value::String(t) => type_matches(t, v),
            Value::Array(ts) => ts.iter().any(|t| type_matches(t.as_str().unwrap(), v)),
            _ => true,
        };
        if !ok {
            errs.push(format!("{at}: expected type {t}, got {v}"));
            return;
        }
    }
    if let Some(c) = s.get("const") {
        if c != v {
            errs.push(format!("{at}: expected {c}"));
        }
    }
    if let Some(Value::Array(opts)) = s.get("enum") {
        if !opts.contains(v) {
            errs.push(format!("{at}: {v} not in enum"));
        }
    }
    if let (Some(min), Some(x)) = (s.get("minimum").and_then(Value::as_f64), v.as_f64()) {
        if x < min {
            errs.push(format!("{at}: {x} < {min}"));
        }
    }
    if let (Some(max), Some(x)) = (s.get("maximum").and_then(Value::as_f64), v.as_f64()) {
        if x > max {
            errs.push(format!("{at}: {x} > {max}"));
        }
    }
    if let (Some(Value::Array(req)), Some(obj)) = (s.get("required"), v.as_object()) {
        for k in req {
            if !obj.contains_key(k.as_str().unwrap()) {
                errs.push(format!("{at}: missing {k}"));
            }
        }
    }
    if let (Some(Value::Object(props)), Some(obj)) = (s.get("properties"), v.as_object()) {
        for (k, sub) in props {
            if let Some(x) = obj.get(k) {
                validate(root, sub, x, &format!("{at}/{k}"), errs);
            }
        }
    }
    if let Some(arr) = v.as_array() {
        if let Some(n) = s.get("minItems").and_then(Value::as_u64) {
            if (arr.len() as u64) < n {
                errs.push(format!("{at}: fewer than {n} items"));
            }
        }
        if let Some(items) = s.get("items") {
            for (i, x) in arr.iter().enumerate() {
                validate(root, items, x, &format!("{at}/{i}"), errs);
            }
        }
    }
    if let Some(Value::Array(all)) = s.get("allOf") {
        for sub in all {
            validate(root, sub, v, at, errs);
        }
    }
    if let Some(Value::Array(one)) = s.get("oneOf") {
        let passing = one
            .iter()
            .filter(|sub| {
                let mut e = Vec::new();
                validate(root, sub, v, at, &mut e);
                e.is_empty()
            })
            .count();
        if passing != 1 {
            errs.push(format!("{at}: {passing} oneOf branches match"));
        }
    }
}

fn errors(v: &Value) -> Vec<String> {
    let root: Value = serde_json::from_str(SCHEMA).unwrap();
    let mut errs = Vec::new();
    validate(&root, &root, v, "", &mut errs);
    errs
}

fn small() -> ExperimentConfig {
    ExperimentConfig::desk_scale()
        .with_overrides([
            ("data.n_users", "50"),
            ("data.n_items", "30"),
            ("model.embed_dim", "12"),
            ("model.max_epochs", "4"),
            ("finest.epochs", "2"),
            ("finest.top_k", "5"),
            ("seeds", "[0, 1]"),
        ])
        .unwrap()
}

#[test]
fn reports_validate_against_schema() {
    let cfg = small();
    let mut reports = vec![
        run_twin_experiment(&cfg).unwrap(),
        run_ablation(&cfg).unwrap(),
    ];
    reports.extend(run_sweep(&cfg, SweepKnob::TopK, &[3.0, 5.0]).unwrap());
    for r in &reports {
        let v = serde_json::to_value(r).unwrap();
        assert_eq!(errors(&v), Vec::<String>::new(), "{}", r.name);
    }
}

#[test]
fn validator_rejects_broken_reports() {
    let r = run_twin_experiment(&small().with_overrides([("seeds", "[0]")]).unwrap()).unwrap();
    let good = serde_json::to_value(&r).unwrap();

    let mut v = good.clone();
    v["arms"][0]["seeds"][0]["rls_rbo"] = 1.5.into();
    assert!(!errors(&v).is_empty());

    let mut v = good.clone();
    v.as_object_mut().unwrap().remove("missing_seeds");
    assert!(!errors(&v).is_empty());

    let mut v = good;
    v["arms"][0]["defense"]["kind"] = "magic".into();
    assert!(!errors(&v).is_empty());
}

#[test]
fn reports_roundtrip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_twin_experiment(&small()).unwrap();
    let path = dir.path().join("nested/report.json");
    write_report(&r, &path).unwrap();
    assert_eq!(read_report(&path).unwrap(), r);

    let mut csv = Vec::new();
    write_aggregate_csv(std::slice::from_ref(&r), &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "run,arm,seed,metric,value");
    // two arms, two seeds, four metrics
    assert_eq!(lines.count(), 16);
}
