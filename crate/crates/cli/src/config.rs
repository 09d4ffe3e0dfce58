//! Run configuration: defaults, then an optional preset, then a flat
//! `key = value` file, then command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use flowgn::model::{Activation, BatchMode, ModelConfig};
use flowgn::walk::WalkParams;
use flowgn::FlowError;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const KEYS: &[&str] = &[
    "layers",
    "hidden",
    "lr",
    "weight_decay",
    "epochs",
    "patience",
    "activation",
    "seed",
    "resample_per_epoch",
    "batch_mode",
    "batch_nodes",
    "path_len",
    "walk_p",
    "walk_q",
    "restarts",
    "runs",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub walk: WalkParams,
    pub runs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            walk: WalkParams::default(),
            runs: 1,
        }
    }
}

/// Walk settings and depth tuned per citation dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Cora,
    Citeseer,
    Pubmed,
}

impl Preset {
    pub fn pairs(self) -> Vec<(&'static str, String)> {
        let l = match self {
            Preset::Cora | Preset::Pubmed => 6,
            Preset::Citeseer => 8,
        };
        vec![
            ("path_len", l.to_string()),
            ("walk_q", "0.1".into()),
            ("walk_p", "1000".into()),
            ("layers", "5".into()),
        ]
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, FlowError> {
    value
        .parse()
        .map_err(|_| FlowError::Argument(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, FlowError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(FlowError::Argument(format!("invalid value {value:?} for {key}"))),
    }
}

impl RunConfig {
    /// Sets one key; `key` uses the file spelling (`weight_decay`).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), FlowError> {
        let m = &mut self.model;
        let w = &mut self.walk;
        match key {
            "layers" => m.layers = parse(key, value)?,
            "hidden" => m.hidden = parse(key, value)?,
            "lr" => m.lr = parse(key, value)?,
            "weight_decay" => m.weight_decay = parse(key, value)?,
            "epochs" => m.max_epochs = parse(key, value)?,
            "patience" => m.patience = parse(key, value)?,
            "activation" => {
                m.activation = value.parse::<Activation>().map_err(FlowError::Argument)?
            }
            "seed" => {
                let seed = parse(key, value)?;
                m.seed = seed;
                w.seed = seed;
            }
            "resample_per_epoch" => m.resample_per_epoch = parse_bool(key, value)?,
            "batch_mode" => m.batch_mode = value.parse::<BatchMode>().map_err(FlowError::Argument)?,
            "batch_nodes" => m.batch_nodes = parse(key, value)?,
            "path_len" => w.length = parse(key, value)?,
            "walk_p" => w.p = parse(key, value)?,
            "walk_q" => w.q = parse(key, value)?,
            "restarts" => w.restarts = parse(key, value)?,
            "runs" => self.runs = parse(key, value)?,
            other => {
                return Err(FlowError::Argument(format!(
                    "unknown configuration key {other:?}"
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        self.model.validate()?;
        self.walk.validate()?;
        if self.runs < 1 {
            return Err(FlowError::Argument("runs must be at least 1".into()));
        }
        Ok(())
    }

    /// Merges the layers in precedence order. A flag that disagrees with
    /// the file is logged.
    pub fn resolve(
        preset: Option<Preset>,
        file: Option<&Path>,
        flags: &[(&str, String)],
    ) -> Result<RunConfig, FlowError> {
        let mut cfg = RunConfig::default();
        if let Some(p) = preset {
            for (k, v) in p.pairs() {
                cfg.set(k, &v)?;
            }
        }
        let file_pairs = match file {
            Some(path) => read_config_file(path)?,
            None => BTreeMap::new(),
        };
        for (k, v) in &file_pairs {
            cfg.set(k, v)?;
        }
        for (k, v) in flags {
            if let Some(fv) = file_pairs.get(*k) {
                if fv != v {
                    log::warn!("flag value {k}={v} overrides config file value {fv}");
                }
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 over the canonical JSON form of everything that affects
    /// results.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        let mut hex = String::with_capacity(64);
        for b in digest.iter() {
            write!(hex, "{b:02x}").expect("writing to a string");
        }
        hex
    }
}

/// Parses `key = value` lines; `#` starts a comment. Duplicate or unknown
/// keys are errors.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, FlowError> {
    let text = std::fs::read_to_string(path).map_err(|e| FlowError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| FlowError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let Some((k, v)) = line.split_once('=') else {
            return Err(bad("expected key = value".into()));
        };
        let (k, v) = (k.trim().replace('-', "_"), v.trim().to_string());
        if !KEYS.contains(&k.as_str()) {
            return Err(bad(format!("unknown key {k:?}")));
        }
        if out.insert(k.clone(), v).is_some() {
            return Err(bad(format!("duplicate key {k:?}")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn flags_beat_file_beat_preset() {
        let f = write("path_len = 4\nlr = 0.01 # faster\n\nhidden=16\n");
        let cfg = RunConfig::resolve(
            Some(Preset::Citeseer),
            Some(f.path()),
            &[("lr", "0.5".into()), ("seed", "7".into())],
        )
        .unwrap();
        assert_eq!(cfg.walk.length, 4);
        assert_eq!(cfg.walk.q, 0.1);
        assert_eq!(cfg.model.lr, 0.5);
        assert_eq!(cfg.model.hidden, 16);
        assert_eq!(cfg.model.seed, 7);
        assert_eq!(cfg.walk.seed, 7);
        assert_eq!(cfg.model.layers, 5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = write("learning_rate = 0.1\n");
        assert!(matches!(
            RunConfig::resolve(None, Some(f.path()), &[]),
            Err(FlowError::Parse { line: 1, .. })
        ));
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.set("bogus", "1"), Err(FlowError::Argument(_))));
        assert!(matches!(cfg.set("lr", "fast"), Err(FlowError::Argument(_))));
    }

    #[test]
    fn hash_tracks_config() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.set("walk_q", "0.5").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn invalid_merged_config_is_an_argument_error() {
        assert!(matches!(
            RunConfig::resolve(None, None, &[("layers", "0".into())]),
            Err(FlowError::Argument(_))
        ));
    }
}
