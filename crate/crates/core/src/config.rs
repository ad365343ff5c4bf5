//! Run configuration.
//!
//! Configs are TOML key-value documents:
//!
//! ```toml
//! mode = "sweep"          # simulate | fluid | sweep | decay
//! lambda = [100, 400]     # one value or a list
//! h = 1.0
//! T = 6.0
//! dt = 0.001              # default h / 1000
//! replicas = 50           # default 1
//! base_seed = 42          # default 0
//! max_tries = 64          # default 64
//! a_h = 1.0
//! u = [1.0]               # values of u on equal cells of [0, h]
//! out = "runs/sweep"      # optional, --out takes precedence
//! ```
//!
//! Validation collects every problem, each tagged with the offending key.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;
use toml::{Table, Value};

use crate::fluid::{self, DdeInit};
use crate::tangle;

pub const KNOWN_KEYS: &[&str] = &[
    "mode",
    "lambda",
    "h",
    "T",
    "dt",
    "replicas",
    "base_seed",
    "max_tries",
    "a_h",
    "u",
    "out",
];

pub const DEFAULT_MAX_TRIES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Fluid,
    Sweep,
    Decay,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Fluid => "fluid",
            Mode::Sweep => "sweep",
            Mode::Decay => "decay",
        }
    }

    fn needs_lambda(self) -> bool {
        matches!(self, Mode::Simulate | Mode::Sweep)
    }

    fn needs_solver(self) -> bool {
        !matches!(self, Mode::Simulate)
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simulate" => Ok(Mode::Simulate),
            "fluid" => Ok(Mode::Fluid),
            "sweep" => Ok(Mode::Sweep),
            "decay" => Ok(Mode::Decay),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

/// Every violation found in one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl ConfigErrors {
    pub fn keys(&self) -> Vec<&str> {
        self.0.iter().map(|i| i.key.as_str()).collect()
    }

    pub fn mentions(&self, key: &str) -> bool {
        self.0.iter().any(|i| i.key == key)
    }
}

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config:")?;
        for issue in &self.0 {
            write!(f, "\n  {}: {}", issue.key, issue.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub lambdas: Vec<f64>,
    pub h: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: f64,
    pub replicas: usize,
    pub base_seed: u64,
    pub max_tries: usize,
    pub a_h: f64,
    pub u: Vec<f64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn init(&self) -> DdeInit {
        DdeInit::new(self.a_h, self.h, self.u.clone()).expect("validated at parse time")
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| {
        ConfigErrors(vec![ConfigIssue {
            key: "<document>".into(),
            message: e.message().to_string(),
        }])
    })?;
    from_table(&table)
}

struct Checker {
    issues: Vec<ConfigIssue>,
}

impl Checker {
    fn push(&mut self, key: &str, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            key: key.to_string(),
            message: message.into(),
        });
    }

    fn number(&mut self, table: &Table, key: &str) -> Option<f64> {
        match table.get(key) {
            None => None,
            Some(v) => match as_f64(v) {
                Some(x) => Some(x),
                None => {
                    self.push(key, format!("expected a number, got {}", v.type_str()));
                    None
                }
            },
        }
    }

    fn required_number(&mut self, table: &Table, key: &str) -> Option<f64> {
        if !table.contains_key(key) {
            self.push(key, "missing required key");
            return None;
        }
        self.number(table, key)
    }

    fn count(&mut self, table: &Table, key: &str) -> Option<u64> {
        match table.get(key) {
            None => None,
            Some(Value::Integer(i)) if *i >= 0 => Some(*i as u64),
            Some(v) => {
                self.push(key, format!("expected a non-negative integer, got {v}"));
                None
            }
        }
    }

    fn number_list(&mut self, table: &Table, key: &str) -> Option<Vec<f64>> {
        match table.get(key)? {
            Value::Array(items) => {
                let mut out = Vec::with_capacity(items.len());
                let mut ok = true;
                for (i, v) in items.iter().enumerate() {
                    match as_f64(v) {
                        Some(x) => out.push(x),
                        None => {
                            self.push(&format!("{key}[{i}]"), "expected a number");
                            ok = false;
                        }
                    }
                }
                ok.then_some(out)
            }
            v => match as_f64(v) {
                Some(x) => Some(vec![x]),
                None => {
                    self.push(key, format!("expected a number or list, got {}", v.type_str()));
                    None
                }
            },
        }
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

pub fn from_table(table: &Table) -> Result<RunConfig, ConfigErrors> {
    let mut c = Checker { issues: Vec::new() };

    for key in table.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            c.push(key, "unknown key");
        }
    }

    let mode = match table.get("mode") {
        None => {
            c.push("mode", "missing required key");
            None
        }
        Some(Value::String(s)) => match s.parse::<Mode>() {
            Ok(m) => Some(m),
            Err(e) => {
                c.push("mode", e);
                None
            }
        },
        Some(v) => {
            c.push("mode", format!("expected a string, got {}", v.type_str()));
            None
        }
    };

    let h = c.required_number(table, "h");
    if let Some(h) = h {
        if !(h.is_finite() && h > 0.0) {
            c.push("h", format!("must be positive, got {h}"));
        }
    }
    let h_ok = h.filter(|h| h.is_finite() && *h > 0.0);

    let t_end = c.required_number(table, "T");
    if let (Some(t), Some(h)) = (t_end, h_ok) {
        let min = if mode == Some(Mode::Decay) { 5.0 * h } else { 2.0 * h };
        if !(t >= min) {
            c.push("T", format!("must be at least {min} for this mode, got {t}"));
        }
    }

    // Without an explicit init the run starts at the fixed point a = h, u = 1.
    let a_h = match c.number(table, "a_h") {
        None if !table.contains_key("a_h") => h_ok,
        v => v,
    };
    if let Some(a) = a_h {
        if !(a.is_finite() && a > 0.0) {
            c.push("a_h", format!("must be positive, got {a}"));
        }
    }

    let u = if table.contains_key("u") {
        c.number_list(table, "u")
    } else {
        Some(vec![1.0])
    };
    if let Some(u) = &u {
        if u.is_empty() {
            c.push("u", "needs at least one value");
        }
        for (i, v) in u.iter().enumerate() {
            if !(v.is_finite() && (0.0..=2.0).contains(v)) {
                c.push(&format!("u[{i}]"), format!("{v} not in [0, 2]"));
            }
        }
    }

    let lambdas = if table.contains_key("lambda") {
        c.number_list(table, "lambda")
    } else {
        if mode.is_some_and(Mode::needs_lambda) {
            c.push("lambda", "missing required key");
        }
        Some(Vec::new())
    };
    if let (Some(ls), Some(m)) = (&lambdas, mode) {
        if m.needs_lambda() {
            if ls.is_empty() {
                c.push("lambda", "needs at least one value");
            }
            for (i, &l) in ls.iter().enumerate() {
                let key = if ls.len() == 1 { "lambda".to_string() } else { format!("lambda[{i}]") };
                if !(l.is_finite() && l > 0.0) {
                    c.push(&key, format!("must be positive, got {l}"));
                } else if let Some(h) = h_ok {
                    if tangle::delay_steps(l, h).is_err() {
                        c.push(&key, format!("lambda*h not integer ({l} * {h} = {})", l * h));
                    }
                }
            }
        }
    }

    let dt = c.number(table, "dt");
    let dt = match (dt, h_ok) {
        (Some(dt), _) => Some(dt),
        (None, Some(h)) => Some(h / fluid::DEFAULT_STEPS_PER_H as f64),
        (None, None) => None,
    };
    if let (Some(dt), Some(m)) = (dt, mode) {
        if m.needs_solver() {
            if let (Some(h), Some(a), Some(u)) = (h_ok, a_h, &u) {
                if let Ok(init) = DdeInit::new(a, h, u.clone()) {
                    if let Err(e) = fluid::steps_per_h(&init, dt) {
                        c.push("dt", e.to_string());
                    }
                }
            } else if !(dt.is_finite() && dt > 0.0) {
                c.push("dt", format!("must be positive, got {dt}"));
            }
        }
    }

    let replicas = c.count(table, "replicas").unwrap_or(1);
    if replicas == 0 {
        c.push("replicas", "must be at least 1");
    }
    let base_seed = c.count(table, "base_seed").unwrap_or(0);
    let max_tries = c.count(table, "max_tries").unwrap_or(DEFAULT_MAX_TRIES as u64);
    if max_tries == 0 {
        c.push("max_tries", "must be at least 1");
    }

    let out = match table.get("out") {
        None => None,
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(v) => {
            c.push("out", format!("expected a string, got {}", v.type_str()));
            None
        }
    };

    if !c.issues.is_empty() {
        return Err(ConfigErrors(c.issues));
    }
    Ok(RunConfig {
        mode: mode.expect("checked"),
        lambdas: lambdas.expect("checked"),
        h: h.expect("checked"),
        t_end: t_end.expect("checked"),
        dt: dt.expect("checked"),
        replicas: replicas as usize,
        base_seed,
        max_tries: max_tries as usize,
        a_h: a_h.expect("checked"),
        u: u.expect("checked"),
        out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXED_POINT: &str = r#"
        mode = "sweep"
        lambda = 100
        h = 1
        T = 6
        a_h = 1.0
        u = [1]
    "#;

    #[test]
    fn minimal_fixed_point_config() {
        let cfg = parse_config(FIXED_POINT).unwrap();
        assert_eq!(cfg.mode, Mode::Sweep);
        assert_eq!(cfg.lambdas, vec![100.0]);
        assert_eq!(cfg.dt, 0.001);
        assert_eq!(cfg.replicas, 1);
        assert_eq!(cfg.max_tries, 64);
        assert_eq!(cfg.init(), DdeInit::fixed_point(1.0).unwrap());
    }

    #[test]
    fn rejects_non_integer_delay() {
        let text = FIXED_POINT.replace("h = 1\n", "h = 0.123\n");
        let err = parse_config(&text).unwrap_err();
        assert!(err.mentions("lambda"), "{err}");
        assert!(err.to_string().contains("lambda*h not integer"));
    }

    #[test]
    fn rejects_out_of_range_u_with_key_path() {
        let text = FIXED_POINT.replace("u = [1]", "u = [1, 2.5, 0.5]");
        let err = parse_config(&text).unwrap_err();
        assert_eq!(err.keys(), vec!["u[1]"]);
    }

    #[test]
    fn reports_all_violations() {
        let text = r#"
            mode = "sweep"
            lambda = [100, 2.5]
            h = 1
            T = 1.5
            a_h = -1
            u = [3]
            colour = "blue"
            replicas = 0
        "#;
        let err = parse_config(text).unwrap_err();
        for key in ["colour", "T", "a_h", "u[0]", "lambda[1]", "replicas"] {
            assert!(err.mentions(key), "missing {key} in {err}");
        }
    }

    #[test]
    fn missing_keys_are_named() {
        let err = parse_config("mode = \"fluid\"").unwrap_err();
        for key in ["h", "T"] {
            assert!(err.mentions(key), "{err}");
        }
        assert!(!err.mentions("lambda"));
    }

    #[test]
    fn init_defaults_to_fixed_point() {
        let cfg = parse_config("mode = \"fluid\"\nh = 2\nT = 8").unwrap();
        assert_eq!(cfg.init(), DdeInit::fixed_point(2.0).unwrap());
    }

    #[test]
    fn dt_must_divide_cells() {
        let text = r#"
            mode = "fluid"
            h = 1
            T = 4
            dt = 0.01
            a_h = 1
            u = [1, 0, 2]
        "#;
        assert!(parse_config(text).unwrap_err().mentions("dt"));
    }

    #[test]
    fn decay_needs_longer_horizon() {
        let text = r#"
            mode = "decay"
            h = 1
            T = 4
            a_h = 1
            u = [1]
        "#;
        assert!(parse_config(text).unwrap_err().mentions("T"));
    }

    #[test]
    fn malformed_document() {
        let err = parse_config("h = = 1").unwrap_err();
        assert_eq!(err.keys(), vec!["<document>"]);
    }
}
