//! Flat dotted-key configuration.
//!
//! A config file is TOML restricted to one level of sections:
//!
//! ```text
//! seed = 0                # top-level keys
//! [env]
//! id = "puddle-world"     # addressed as `env.id`
//! ```
//!
//! Values are strings, integers, reals, booleans or flat arrays of numbers.
//! Every key is looked up by its dotted name; keys a command does not read
//! are reported together in one error.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// Seed override taking precedence over `seed` in any config.
pub const SEED_ENV: &str = "KBL_SEED";

#[derive(Debug)]
pub struct ConfigError(pub Vec<String>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration:")?;
        for e in &self.0 {
            write!(f, "\n  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    pub fn one(msg: impl Into<String>) -> Self {
        ConfigError(vec![msg.into()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Str(String),
    Int(i64),
    Real(f64),
    Bool(bool),
    List(Vec<f64>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(x) => write!(f, "{x:?}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::List(xs) => {
                let items: Vec<String> = xs.iter().map(|x| format!("{x:?}")).collect();
                write!(f, "[{}]", items.join(", "))
            }
        }
    }
}

/// Parsed config plus bookkeeping of which keys were read and which failed.
#[derive(Debug, Default)]
pub struct Config {
    values: BTreeMap<String, Value>,
    read: std::cell::RefCell<Vec<String>>,
    errors: std::cell::RefCell<Vec<String>>,
}

fn convert(key: &str, v: &toml::Value) -> Result<Value, String> {
    match v {
        toml::Value::String(s) => Ok(Value::Str(s.clone())),
        toml::Value::Integer(i) => Ok(Value::Int(*i)),
        toml::Value::Float(x) => Ok(Value::Real(*x)),
        toml::Value::Boolean(b) => Ok(Value::Bool(*b)),
        toml::Value::Array(items) => items
            .iter()
            .map(|x| match x {
                toml::Value::Integer(i) => Ok(*i as f64),
                toml::Value::Float(f) => Ok(*f),
                _ => Err(format!("`{key}`: arrays may only hold numbers")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Value::List),
        _ => Err(format!("`{key}`: unsupported value type")),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::one(e.to_string()))?;
        let mut values = BTreeMap::new();
        let mut errors = Vec::new();
        for (k, v) in &doc {
            match v {
                toml::Value::Table(t) => {
                    for (sk, sv) in t {
                        let key = format!("{k}.{sk}");
                        if sv.is_table() {
                            errors.push(format!("`{key}`: sections may not nest"));
                            continue;
                        }
                        match convert(&key, sv) {
                            Ok(x) => {
                                values.insert(key, x);
                            }
                            Err(e) => errors.push(e),
                        }
                    }
                }
                other => match convert(k, other) {
                    Ok(x) => {
                        values.insert(k.clone(), x);
                    }
                    Err(e) => errors.push(e),
                },
            }
        }
        if !errors.is_empty() {
            return Err(ConfigError(errors));
        }
        Ok(Config {
            values,
            ..Config::default()
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::one(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.values.insert(key.to_string(), value);
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn mark(&self, key: &str) {
        self.read.borrow_mut().push(key.to_string());
    }

    fn fail(&self, msg: String) {
        self.errors.borrow_mut().push(msg);
    }

    fn raw(&self, key: &str) -> Option<&Value> {
        self.mark(key);
        self.values.get(key)
    }

    pub fn str_or(&self, key: &str, default: &str) -> String {
        match self.raw(key) {
            None => default.to_string(),
            Some(Value::Str(s)) => s.clone(),
            Some(v) => {
                self.fail(format!("`{key}` must be a string, got {v}"));
                default.to_string()
            }
        }
    }

    pub fn opt_str(&self, key: &str) -> Option<String> {
        match self.raw(key) {
            None => None,
            Some(Value::Str(s)) => Some(s.clone()),
            Some(v) => {
                self.fail(format!("`{key}` must be a string, got {v}"));
                None
            }
        }
    }

    pub fn real_or(&self, key: &str, default: f64) -> f64 {
        match self.raw(key) {
            None => default,
            Some(Value::Real(x)) => *x,
            Some(Value::Int(i)) => *i as f64,
            Some(v) => {
                self.fail(format!("`{key}` must be a number, got {v}"));
                default
            }
        }
    }

    pub fn uint_or(&self, key: &str, default: u64) -> u64 {
        match self.raw(key) {
            None => default,
            Some(Value::Int(i)) if *i >= 0 => *i as u64,
            Some(v) => {
                self.fail(format!("`{key}` must be a nonnegative integer, got {v}"));
                default
            }
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> usize {
        self.uint_or(key, default as u64) as usize
    }

    pub fn reals_or(&self, key: &str, default: &[f64]) -> Vec<f64> {
        match self.raw(key) {
            None => default.to_vec(),
            Some(Value::List(xs)) => xs.clone(),
            Some(Value::Real(x)) => vec![*x],
            Some(Value::Int(i)) => vec![*i as f64],
            Some(v) => {
                self.fail(format!("`{key}` must be an array of numbers, got {v}"));
                default.to_vec()
            }
        }
    }

    pub fn sizes_or(&self, key: &str, default: &[usize]) -> Vec<usize> {
        let fallback: Vec<f64> = default.iter().map(|&x| x as f64).collect();
        let xs = self.reals_or(key, &fallback);
        if xs.iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
            self.fail(format!("`{key}` must hold nonnegative integers"));
            return default.to_vec();
        }
        xs.into_iter().map(|x| x as usize).collect()
    }

    /// Parses a named choice, listing the valid names on failure.
    pub fn choice<T>(&self, key: &str, default: &str, names: &[&str], parse: impl Fn(&str) -> Option<T>) -> Option<T> {
        let s = self.str_or(key, default);
        let out = parse(&s);
        if out.is_none() {
            self.fail(format!("`{key}` = {s:?} is not one of: {}", names.join(", ")));
        }
        out
    }

    /// Records a semantic error found while interpreting values.
    pub fn invalid(&self, key: &str, msg: impl fmt::Display) {
        self.mark(key);
        self.fail(format!("`{key}`: {msg}"));
    }

    /// Effective seed: `KBL_SEED` when set, else `seed`, else 0.
    pub fn seed(&self) -> u64 {
        let from_file = self.uint_or("seed", 0);
        match std::env::var(SEED_ENV) {
            Ok(s) => match s.trim().parse::<u64>() {
                Ok(v) => v,
                Err(_) => {
                    self.fail(format!("{SEED_ENV}={s:?} is not a nonnegative integer"));
                    from_file
                }
            },
            Err(_) => from_file,
        }
    }

    /// Fails with every unknown key and every value error collected so far.
    pub fn finish(&self) -> Result<(), ConfigError> {
        let read = self.read.borrow();
        let mut errors: Vec<String> = self
            .values
            .keys()
            .filter(|k| !read.contains(k))
            .map(|k| format!("unknown key `{k}`"))
            .collect();
        errors.extend(self.errors.borrow().iter().cloned());
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(errors))
        }
    }

    /// Canonical text form: top-level keys, then sections in key order.
    pub fn snapshot(&self) -> String {
        let mut top = String::new();
        let mut sections: BTreeMap<&str, String> = BTreeMap::new();
        for (k, v) in &self.values {
            match k.split_once('.') {
                Some((sec, key)) => sections.entry(sec).or_default().push_str(&format!("{key} = {v}\n")),
                None => top.push_str(&format!("{k} = {v}\n")),
            }
        }
        for (sec, body) in sections {
            top.push_str(&format!("\n[{sec}]\n{body}"));
        }
        top
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flattens_sections() {
        let c = Config::parse("seed = 3\n[train]\nlr = 0.01\nepochs = 5\n[model]\nhidden = [80]\n").unwrap();
        assert_eq!(c.real_or("train.lr", 0.0), 0.01);
        assert_eq!(c.usize_or("train.epochs", 0), 5);
        assert_eq!(c.sizes_or("model.hidden", &[]), vec![80]);
        assert_eq!(c.uint_or("seed", 0), 3);
        c.finish().unwrap();
    }

    #[test]
    fn unknown_keys_all_reported() {
        let c = Config::parse("bogus = 1\n[train]\nlr = 0.1\nlearning_rate = 2\nepoch = 3\n").unwrap();
        c.real_or("train.lr", 0.0);
        let err = c.finish().unwrap_err().to_string();
        for k in ["bogus", "train.learning_rate", "train.epoch"] {
            assert!(err.contains(&format!("unknown key `{k}`")), "{err}");
        }
    }

    #[test]
    fn type_errors_collected() {
        let c = Config::parse("[train]\nlr = \"fast\"\nepochs = -1\n").unwrap();
        c.real_or("train.lr", 0.0);
        c.usize_or("train.epochs", 1);
        let err = c.finish().unwrap_err();
        assert_eq!(err.0.len(), 2);
    }

    #[test]
    fn choice_lists_valid_names() {
        let c = Config::parse("[train]\nloss = \"nope\"\n").unwrap();
        let r: Option<u8> = c.choice("train.loss", "a", &["a", "b"], |s| (s == "a").then_some(0));
        assert!(r.is_none());
        assert!(c.finish().unwrap_err().to_string().contains("not one of: a, b"));
    }

    #[test]
    fn snapshot_round_trips() {
        let text = "seed = 1\n[train]\nhidden = [64.0, 64.0]\nloss = \"rg\"\nlr = 0.003\n";
        let c = Config::parse(text).unwrap();
        let again = Config::parse(&c.snapshot()).unwrap();
        assert_eq!(again.values, c.values);
        assert_eq!(again.snapshot(), c.snapshot());
    }

    #[test]
    fn nested_sections_rejected() {
        assert!(Config::parse("[a]\n[a.b]\nc = 1\n").is_err());
    }
}
