//! Training settings: a JSON or TOML file overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use matcha::model::{Hyperparams, DEFAULT_CONTEXTS, GPT2_DIM};
use matcha::tokenizer::DEFAULT_MAX_LEN;
use matcha::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::args::TrainArgs;
use crate::output::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub merges: Option<PathBuf>,
    pub embedding: Option<PathBuf>,
    pub dim: Option<usize>,
    pub contexts: usize,
    pub max_len: usize,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            vocab: None,
            merges: None,
            embedding: None,
            dim: None,
            contexts: DEFAULT_CONTEXTS,
            max_len: DEFAULT_MAX_LEN,
            train: TrainConfig::default(),
        }
    }
}

impl TrainSettings {
    /// Settings from `args.config` (if any) with every given flag applied
    /// on top. All problems are reported together.
    pub fn resolve(args: &TrainArgs) -> Result<Self, ConfigError> {
        let mut s = match &args.config {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        s.apply(args);
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::one(format!("cannot read {}: {e}", path.display())))?;
        let is_toml = path.extension().is_some_and(|e| e == "toml");
        let value: serde_json::Value = if is_toml {
            toml::from_str(&text).map_err(|e| ConfigError::one(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text)
                .map_err(|e| ConfigError::one(format!("{}: {e}", path.display())))?
        };
        Self::from_value(value, path)
    }

    fn from_value(value: serde_json::Value, origin: &Path) -> Result<Self, ConfigError> {
        let serde_json::Value::Object(map) = &value else {
            return Err(ConfigError::one(format!(
                "{}: expected a table of settings",
                origin.display()
            )));
        };
        let known = serde_json::to_value(Self::default()).expect("settings serialize");
        let unknown: Vec<String> = map
            .keys()
            .filter(|k| known.get(k.as_str()).is_none())
            .map(|k| format!("{}: unknown setting {k:?}", origin.display()))
            .collect();
        if !unknown.is_empty() {
            return Err(ConfigError(unknown));
        }
        let mut s: Self = serde_json::from_value(value)
            .map_err(|e| ConfigError::one(format!("{}: {e}", origin.display())))?;
        // relative paths in a config file resolve against its directory
        let base = origin.parent().unwrap_or(Path::new(""));
        for p in [&mut s.data, &mut s.out, &mut s.vocab, &mut s.merges, &mut s.embedding]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(s)
    }

    fn apply(&mut self, a: &TrainArgs) {
        fn set<T: Clone>(slot: &mut T, flag: &Option<T>) {
            if let Some(v) = flag {
                *slot = v.clone();
            }
        }
        let t = &mut self.train;
        set(&mut t.epochs, &a.epochs);
        set(&mut t.batch_size, &a.batch_size);
        set(&mut t.grad_accum_steps, &a.grad_accum);
        set(&mut t.lr, &a.lr);
        set(&mut t.weight_decay, &a.weight_decay);
        set(&mut t.margin, &a.margin);
        set(&mut t.seed, &a.seed);
        set(&mut t.schedule, &a.schedule);
        set(&mut t.curriculum, &a.curriculum);
        set(&mut t.gamma, &a.gamma);
        if a.freeze_embeddings {
            t.train_embeddings = false;
        }
        set(&mut self.contexts, &a.contexts);
        set(&mut self.max_len, &a.max_len);
        for (slot, flag) in [
            (&mut self.data, &a.data),
            (&mut self.out, &a.out),
            (&mut self.vocab, &a.tokenizer.vocab),
            (&mut self.merges, &a.tokenizer.merges),
            (&mut self.embedding, &a.embedding),
        ] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        if a.dim.is_some() {
            self.dim = a.dim;
        }
    }

    /// Hyperparameters with `D` taken from `embedding_dim` when the
    /// embedding table is imported.
    pub fn hyper(&self, embedding_dim: Option<usize>) -> Hyperparams {
        Hyperparams {
            dim: embedding_dim.or(self.dim).unwrap_or(GPT2_DIM),
            contexts: self.contexts,
            max_len: self.max_len,
            margin: self.train.margin,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        match &self.data {
            None => problems.push("no training data given (--data)".to_string()),
            Some(p) if !p.exists() => problems.push(format!("data path {} does not exist", p.display())),
            _ => {}
        }
        if self.out.is_none() {
            problems.push("no checkpoint path given (--out)".to_string());
        }
        match (&self.vocab, &self.merges) {
            (Some(_), None) | (None, Some(_)) => {
                problems.push("--vocab and --merges must be given together".to_string())
            }
            _ => {}
        }
        for p in [&self.vocab, &self.merges, &self.embedding].into_iter().flatten() {
            if !p.is_file() {
                problems.push(format!("{} does not exist", p.display()));
            }
        }
        if let Err(e) = self.train.validate() {
            problems.extend(invalid_argument_parts(e));
        }
        if let Err(e) = self.hyper(None).validate() {
            problems.extend(invalid_argument_parts(e));
        }
        if self.embedding.is_some() && self.dim.is_some() {
            problems.push("--dim conflicts with --embedding, which fixes D".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(problems))
        }
    }
}

fn invalid_argument_parts(e: matcha::Error) -> Vec<String> {
    match e {
        matcha::Error::InvalidArgument(msg) => msg.split("; ").map(str::to_string).collect(),
        other => vec![other.to_string()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    use crate::args::{Cli, Command};

    fn train_args(extra: &[&str]) -> TrainArgs {
        let argv = ["matcha", "train"].iter().chain(extra).copied();
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Train(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        fs::write(&cfg, "epochs = 3\nlr = 0.001\ndata = \"corpus\"\nout = \"m.ckpt\"\n").unwrap();
        fs::create_dir(dir.path().join("corpus")).unwrap();
        let s = TrainSettings::resolve(&train_args(&[
            "--config",
            cfg.to_str().unwrap(),
            "--epochs",
            "5",
            "--freeze-embeddings",
        ]))
        .unwrap();
        assert_eq!(s.train.epochs, 5);
        assert_eq!(s.train.lr, 0.001);
        assert!(!s.train.train_embeddings);
        assert_eq!(s.data.unwrap(), dir.path().join("corpus"));
        assert_eq!(s.train.batch_size, 128);
    }

    #[test]
    fn json_and_toml_agree() {
        let dir = tempfile::tempdir().unwrap();
        let j = dir.path().join("a.json");
        let t = dir.path().join("a.toml");
        fs::write(&j, r#"{"epochs": 2, "schedule": "sequential", "curriculum": ["x"]}"#).unwrap();
        fs::write(&t, "epochs = 2\nschedule = \"sequential\"\ncurriculum = [\"x\"]\n").unwrap();
        assert_eq!(TrainSettings::from_file(&j).unwrap(), TrainSettings::from_file(&t).unwrap());
    }

    #[test]
    fn every_problem_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.json");
        fs::write(&cfg, r#"{"epoch": 2, "learning_rate": 1}"#).unwrap();
        let err = TrainSettings::from_file(&cfg).unwrap_err();
        assert_eq!(err.0.len(), 2, "{err:?}");

        let err = TrainSettings::resolve(&train_args(&[
            "--lr=-1", "--batch-size", "0", "--contexts", "0", "--vocab", "v.json",
        ]))
        .unwrap_err();
        let text = err.0.join("\n");
        for needle in ["--data", "--out", "together", "lr", "batch_size", "v.json"] {
            assert!(text.contains(needle), "{needle} missing from {text}");
        }
        assert!(err.0.len() >= 7, "{text}");
    }

    #[test]
    fn default_settings() {
        let s = TrainSettings::default();
        assert_eq!(s.hyper(None), Hyperparams::default());
        assert_eq!(s.hyper(Some(32)).dim, 32);
        assert_eq!(
            (s.train.epochs, s.train.batch_size, s.train.grad_accum_steps, s.train.seed),
            (15, 128, 8, 42)
        );
    }
}
