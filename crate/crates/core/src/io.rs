//! File formats: tabular MDP text, dataset CSV with a key-value sidecar,
//! binary parameter checkpoints and metric CSV tables.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::envs::{EnvKind, SamplingMode, Transition, TransitionDataset};
use crate::error::{check_len, Error, Result};
use crate::tabular::{StateDistribution, TabularMdp, TabularPolicy};
use crate::value_fn::{Activation, Architecture, FeatureMap};

/// Row-sum slack accepted when reading probabilities from text.
pub const PARSE_ROW_TOL: f64 = 1e-9;

/// A tabular problem read from text.
#[derive(Debug, Clone)]
pub struct TabularProblem {
    pub mdp: TabularMdp,
    pub policy: TabularPolicy,
    pub mu: StateDistribution,
}

fn toml_err(e: impl std::fmt::Display) -> Error {
    Error::Parse {
        line: 0,
        reason: e.to_string(),
    }
}

fn get<'a>(table: &'a toml::Table, section: &str, key: &str) -> Result<&'a toml::Value> {
    table
        .get(key)
        .ok_or_else(|| toml_err(format!("[{section}] is missing `{key}`")))
}

fn as_usize(v: &toml::Value, what: &str) -> Result<usize> {
    v.as_integer()
        .filter(|&x| x > 0)
        .map(|x| x as usize)
        .ok_or_else(|| toml_err(format!("`{what}` must be a positive integer")))
}

fn as_reals(v: &toml::Value, what: &str) -> Result<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| toml_err(format!("`{what}` must be an array")))?;
    arr.iter()
        .map(|x| {
            x.as_float()
                .or_else(|| x.as_integer().map(|i| i as f64))
                .ok_or_else(|| toml_err(format!("`{what}` must contain numbers")))
        })
        .collect()
}

/// Checks each consecutive row of `width` entries sums to 1 within
/// [`PARSE_ROW_TOL`] and rescales it to sum to 1.
fn normalize_rows(values: &mut [f64], width: usize, what: &str) -> Result<()> {
    for (i, row) in values.chunks_mut(width).enumerate() {
        if row.iter().any(|&p| p < 0.0) {
            return Err(toml_err(format!("`{what}` row {i} has a negative entry")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > PARSE_ROW_TOL {
            return Err(toml_err(format!("`{what}` row {i} sums to {sum}, not 1")));
        }
        row.iter_mut().for_each(|p| *p /= sum);
    }
    Ok(())
}

/// Parses the tabular text format:
///
/// ```text
/// [mdp]
/// n_states = 2
/// n_actions = 1
/// discount = 0.9
/// transition = [0.5, 0.5,  0.0, 1.0]   # row-major [s][a][s']
/// reward = [1.0, 0.0]                  # row-major [s][a]
/// terminal = [false, false]            # optional
///
/// [policy]                             # optional, uniform by default
/// probs = [1.0, 1.0]                   # row-major [s][a]
///
/// [mu]                                 # optional, uniform over non-terminal states
/// mu = [0.5, 0.5]
/// ```
pub fn parse_tabular(text: &str) -> Result<TabularProblem> {
    let doc: toml::Table = text.parse().map_err(toml_err)?;
    for key in doc.keys() {
        if !["mdp", "policy", "mu"].contains(&key.as_str()) {
            return Err(toml_err(format!("unknown section [{key}]")));
        }
    }
    let mdp_t = doc
        .get("mdp")
        .and_then(|v| v.as_table())
        .ok_or_else(|| toml_err("missing [mdp] section"))?;
    let n = as_usize(get(mdp_t, "mdp", "n_states")?, "n_states")?;
    let na = as_usize(get(mdp_t, "mdp", "n_actions")?, "n_actions")?;
    let discount = get(mdp_t, "mdp", "discount")?
        .as_float()
        .ok_or_else(|| toml_err("`discount` must be a real"))?;
    let mut transition = as_reals(get(mdp_t, "mdp", "transition")?, "transition")?;
    check_len("transition entries", n * na * n, transition.len())?;
    normalize_rows(&mut transition, n, "transition")?;
    let reward = as_reals(get(mdp_t, "mdp", "reward")?, "reward")?;
    let terminal = match mdp_t.get("terminal") {
        Some(v) => v
            .as_array()
            .ok_or_else(|| toml_err("`terminal` must be an array"))?
            .iter()
            .map(|x| x.as_bool().ok_or_else(|| toml_err("`terminal` must contain booleans")))
            .collect::<Result<Vec<bool>>>()?,
        None => vec![false; n],
    };
    let mdp = TabularMdp::new(n, na, transition, reward, discount, terminal)?;

    let policy = match doc.get("policy").and_then(|v| v.as_table()) {
        Some(t) => {
            let mut probs = as_reals(get(t, "policy", "probs")?, "probs")?;
            check_len("policy entries", n * na, probs.len())?;
            normalize_rows(&mut probs, na, "probs")?;
            TabularPolicy::new(n, na, probs)?
        }
        None => TabularPolicy::uniform(n, na),
    };
    let mu = match doc.get("mu").and_then(|v| v.as_table()) {
        Some(t) => {
            let mut mu = as_reals(get(t, "mu", "mu")?, "mu")?;
            check_len("mu entries", n, mu.len())?;
            normalize_rows(&mut mu, n, "mu")?;
            StateDistribution::new(mu, &mdp)?
        }
        None => {
            let live = mdp.terminal().iter().filter(|&&t| !t).count() as f64;
            let mu = mdp
                .terminal()
                .iter()
                .map(|&t| if t { 0.0 } else { 1.0 / live })
                .collect();
            StateDistribution::new(mu, &mdp)?
        }
    };
    Ok(TabularProblem { mdp, policy, mu })
}

pub fn read_tabular(path: &Path) -> Result<TabularProblem> {
    parse_tabular(&fs::read_to_string(path)?)
}

fn fmt_list<T: std::fmt::Debug>(xs: &[T]) -> String {
    let items: Vec<String> = xs.iter().map(|x| format!("{x:?}")).collect();
    format!("[{}]", items.join(", "))
}

pub fn format_tabular(p: &TabularProblem) -> String {
    format!(
        "[mdp]\nn_states = {}\nn_actions = {}\ndiscount = {:?}\ntransition = {}\nreward = {}\nterminal = {}\n\n[policy]\nprobs = {}\n\n[mu]\nmu = {}\n",
        p.mdp.n_states(),
        p.mdp.n_actions(),
        p.mdp.discount(),
        fmt_list(p.mdp.transition()),
        fmt_list(p.mdp.reward()),
        fmt_list(p.mdp.terminal()),
        fmt_list(p.policy.probs()),
        fmt_list(p.mu.as_slice()),
    )
}

/// Flat `key = value` lines, in the given order.
pub fn format_kv(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            reason: format!("expected `key = value`, got `{raw}`"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes `path` (CSV) and `path.meta` (key-value metadata).
pub fn write_dataset(path: &Path, ds: &TransitionDataset) -> Result<()> {
    let (ds_dim, da) = (ds.state_dim(), ds.action_dim());
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..ds_dim).map(|i| format!("s_{i}")).collect();
    header.extend((0..da).map(|i| format!("a_{i}")));
    header.push("r".into());
    header.extend((0..ds_dim).map(|i| format!("sp_{i}")));
    header.push("terminal".into());
    header.push("seed".into());
    w.write_record(&header)?;
    for t in &ds.transitions {
        let mut row: Vec<String> = t.state.iter().map(f64::to_string).collect();
        row.extend(t.action.iter().map(f64::to_string));
        row.push(t.reward.to_string());
        row.extend(t.next_state.iter().map(f64::to_string));
        row.push(u8::from(t.terminal).to_string());
        row.push(ds.seed.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    let meta = format_kv(&[
        ("env", ds.env.name().to_string()),
        ("policy", ds.policy_id.clone()),
        ("mode", ds.mode.name().to_string()),
        ("seed", ds.seed.to_string()),
        ("n", ds.len().to_string()),
        ("state_dim", ds_dim.to_string()),
        ("action_dim", da.to_string()),
    ]);
    fs::write(sidecar_path(path), meta)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<TransitionDataset> {
    let meta = parse_kv(&fs::read_to_string(sidecar_path(path))?)?;
    let field = |k: &str| -> Result<String> {
        meta.iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::invalid("dataset metadata", format!("missing `{k}`")))
    };
    let env = EnvKind::parse(&field("env")?).ok_or_else(|| Error::invalid("dataset metadata", "unknown env"))?;
    let mode =
        SamplingMode::parse(&field("mode")?).ok_or_else(|| Error::invalid("dataset metadata", "unknown mode"))?;
    let seed: u64 = field("seed")?
        .parse()
        .map_err(|_| Error::invalid("dataset metadata", "bad seed"))?;
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let ds = header.iter().filter(|h| h.starts_with("s_")).count();
    let da = header.iter().filter(|h| h.starts_with("a_")).count();
    check_len("dataset columns", 2 * ds + da + 3, header.len())?;
    let mut transitions = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            rec[j].parse().map_err(|_| Error::Parse {
                line: i + 2,
                reason: format!("column {} is not a number: `{}`", &header[j], &rec[j]),
            })
        };
        let state = (0..ds).map(num).collect::<Result<Vec<_>>>()?;
        let action = (ds..ds + da).map(num).collect::<Result<Vec<_>>>()?;
        let reward = num(ds + da)?;
        let next_state = (ds + da + 1..2 * ds + da + 1).map(num).collect::<Result<Vec<_>>>()?;
        let terminal = num(2 * ds + da + 1)? != 0.0;
        transitions.push(Transition {
            state,
            action,
            reward,
            next_state,
            terminal,
        });
    }
    TransitionDataset::new(transitions, env, field("policy")?, mode, seed)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"KBLCKPT1";

/// Flat parameter vector plus a header naming what it parameterizes.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// `linear`, `mlp` or `gaussian-policy`.
    pub kind: String,
    /// Architecture descriptor, e.g. `mlp:2-80-1:relu` or `table:5x3`.
    pub arch: String,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn for_value(arch: &Architecture, params: &[f64]) -> Self {
        Checkpoint {
            kind: arch.kind().to_string(),
            arch: describe_architecture(arch),
            params: params.to_vec(),
        }
    }

    /// Layout: the 8-byte magic, one header line
    /// `kind=<k> arch=<a> n_params=<n>\n`, then `n` little-endian f64 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        out.extend_from_slice(
            format!("kind={} arch={} n_params={}\n", self.kind, self.arch, self.params.len()).as_bytes(),
        );
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: &str| Error::invalid("checkpoint", reason.to_string());
        if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic header"));
        }
        let nl = bytes[8..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("unterminated header"))?
            + 8;
        let header = std::str::from_utf8(&bytes[8..nl]).map_err(|_| bad("header is not UTF-8"))?;
        let mut kind = None;
        let mut arch = None;
        let mut n = None;
        for part in header.split(' ') {
            match part.split_once('=') {
                Some(("kind", v)) => kind = Some(v.to_string()),
                Some(("arch", v)) => arch = Some(v.to_string()),
                Some(("n_params", v)) => n = v.parse::<usize>().ok(),
                _ => return Err(bad("malformed header field")),
            }
        }
        let (kind, arch, n) = match (kind, arch, n) {
            (Some(k), Some(a), Some(n)) => (k, a, n),
            _ => return Err(bad("header needs kind, arch and n_params")),
        };
        let body = &bytes[nl + 1..];
        check_len("checkpoint payload bytes", n * 8, body.len())?;
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Checkpoint { kind, arch, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn describe_architecture(arch: &Architecture) -> String {
    match arch {
        Architecture::Linear(FeatureMap::Raw { dim }) => format!("raw:{dim}"),
        Architecture::Linear(FeatureMap::OneHot { n }) => format!("onehot:{n}"),
        Architecture::Linear(FeatureMap::Table { rows }) => {
            format!("table:{}x{}", rows.len(), rows.first().map_or(0, Vec::len))
        }
        Architecture::Mlp(m) => {
            let widths: Vec<String> = m.widths().iter().map(usize::to_string).collect();
            format!("mlp:{}:{}", widths.join("-"), m.activation().name())
        }
    }
}

/// Rebuilds an MLP architecture from its descriptor (`mlp:3-64-64-1:tanh`).
pub fn parse_mlp_descriptor(desc: &str) -> Result<Architecture> {
    let bad = || Error::invalid("architecture descriptor", desc.to_string());
    let mut parts = desc.split(':');
    if parts.next() != Some("mlp") {
        return Err(bad());
    }
    let widths = parts
        .next()
        .ok_or_else(bad)?
        .split('-')
        .map(|w| w.parse::<usize>().map_err(|_| bad()))
        .collect::<Result<Vec<_>>>()?;
    let act = Activation::parse(parts.next().ok_or_else(bad)?).ok_or_else(bad)?;
    if widths.len() < 2 || *widths.last().unwrap() != 1 {
        return Err(bad());
    }
    Architecture::mlp(widths[0], &widths[1..widths.len() - 1], act)
}

/// A CSV table of strings with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Column parsed as reals (unparseable cells become NaN).
    pub fn reals(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column(name)?;
        Some(self.rows.iter().map(|r| r[j].parse().unwrap_or(f64::NAN)).collect())
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::Reader::from_path(path)?;
    let columns = rdr.headers()?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok(Table { columns, rows })
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn checkpoint_bytes_round_trip(
            params in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 0..64),
            kind in "[a-z]{1,8}",
        ) {
            let c = Checkpoint { kind, arch: "raw:3".into(), params };
            prop_assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
        }

        #[test]
        fn kv_round_trip(pairs in prop::collection::btree_map("[a-z_]{1,10}", "[a-zA-Z0-9.:-]{0,12}", 0..8)) {
            let items: Vec<(&str, String)> = pairs.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
            let parsed = parse_kv(&format_kv(&items)).unwrap();
            let expected: Vec<(String, String)> = items.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
            prop_assert_eq!(parsed, expected);
        }
    }
}
