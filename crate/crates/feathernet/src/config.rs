//! `key = value` run configuration. Values come from built-in defaults, then an
//! optional config file, then command-line flags, each layer overriding the
//! previous one. The resolved configuration serialises back to a file that
//! resolves to the same configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value', found '{text}'")]
    Malformed { line: usize, text: String },
    #[error("line {line}: duplicate key '{key}'")]
    Duplicate { line: usize, key: String },
    #[error("unknown key '{key}' for {command}")]
    UnknownKey { key: String, command: &'static str },
    #[error("config is for '{found}', not '{expected}'")]
    WrongCommand { expected: &'static str, found: String },
    #[error("unknown command '{0}'")]
    UnknownCommand(String),
    #[error("missing required option '{0}'")]
    Missing(String),
    #[error("option '{key}': cannot parse '{value}': {reason}")]
    Invalid { key: String, value: String, reason: String },
    #[error("option '{0}': value contains a line break")]
    LineBreak(String),
}

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped. Keys must be unique.
pub fn parse_kv(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let Some((k, v)) = t.split_once('=') else {
            return Err(ConfigError::Malformed { line, text: t.into() });
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(ConfigError::Malformed { line, text: t.into() });
        }
        if out.iter().any(|(_, seen, _)| seen == k) {
            return Err(ConfigError::Duplicate { line, key: k.into() });
        }
        out.push((line, k.into(), v.into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyKind {
    /// Takes a value.
    Value,
    /// Boolean switch; `true` or `false` in files.
    Switch,
}

#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub key: &'static str,
    pub kind: KeyKind,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn value(key: &'static str, default: Option<&'static str>, help: &'static str) -> KeySpec {
    KeySpec {
        key,
        kind: KeyKind::Value,
        default,
        help,
    }
}

const fn switch(key: &'static str, help: &'static str) -> KeySpec {
    KeySpec {
        key,
        kind: KeyKind::Switch,
        default: Some("false"),
        help,
    }
}

/// Keys accepted by every command.
pub const GLOBAL_KEYS: &[KeySpec] = &[
    value("seed", Some("0"), "Seed for every random choice of the run"),
    value("out", None, "Output directory; every file the run writes lands here"),
];

const COUNT_KEYS: &[KeySpec] = &[
    value("variant", Some("B"), "Network variant: A or B"),
    value("head", Some("linear2"), "Head: linear2, none or gap"),
    value("input", Some("224"), "Square input extent (only 224 is supported)"),
    switch("csv", "Also write the breakdown to <out>/cost.csv"),
];

const GRADCHECK_KEYS: &[KeySpec] = &[
    value("configs", Some("5"), "Random configurations per checked component"),
];

const SYNTH_KEYS: &[KeySpec] = &[
    value("real", None, "Number of real samples"),
    value("fake", None, "Number of fake samples"),
];

const AUGMENT_KEYS: &[KeySpec] = &[
    value("manifest", None, "Input manifest"),
    switch("all", "Augment every sample instead of real depth samples only"),
];

const TRAIN_KEYS: &[KeySpec] = &[
    value("variant", Some("B"), "Network variant: A or B"),
    value("head", Some("linear2"), "Head: linear2, none or gap"),
    value("manifest", None, "Training manifest"),
    value("val-manifest", None, "Validation manifest"),
    value("epochs", Some("20"), "Number of epochs"),
    value("batch-size", Some("32"), "Mini-batch size"),
    value("lr", Some("0.001"), "Initial learning rate"),
];

const EVAL_KEYS: &[KeySpec] = &[
    value("weights", None, "Weight file to score --manifest with"),
    value("manifest", None, "Manifest to score"),
    value("scores", None, "Existing scores CSV (path,score,label) instead of --weights/--manifest"),
    value("threshold", None, "Decision threshold [default: 0.5]"),
    value("tune-manifest", None, "Pick the ACER-minimising threshold on this manifest"),
    value("tune-scores", None, "Pick the ACER-minimising threshold on this scores CSV"),
];

const FUSE_KEYS: &[KeySpec] = &[
    value("scores", None, "CSV with a sample_id column and one column per model"),
    value("fusion-config", None, "Fusion config file (key = value)"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Command {
    Count,
    Gradcheck,
    Synth,
    Augment,
    Train,
    Eval,
    Fuse,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Count,
        Command::Gradcheck,
        Command::Synth,
        Command::Augment,
        Command::Train,
        Command::Eval,
        Command::Fuse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Count => "count",
            Command::Gradcheck => "gradcheck",
            Command::Synth => "synth",
            Command::Augment => "augment",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Fuse => "fuse",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Command::Count => "Print parameter and multiply-add counts with a per-layer breakdown",
            Command::Gradcheck => "Run the finite-difference gradient suite in 64-bit mode",
            Command::Synth => "Generate a synthetic depth-face dataset (PGM images + manifest)",
            Command::Augment => "Apply random depth augmentation to a manifest's samples",
            Command::Train => "Train a FeatherNet on a manifest, validating every epoch",
            Command::Eval => "Score a manifest (or a scores file) and report anti-spoofing metrics",
            Command::Fuse => "Fuse per-model scores with the ensemble + cascade rule",
        }
    }

    /// Whether `--out` must be given.
    pub fn needs_out(self) -> bool {
        !matches!(self, Command::Count | Command::Gradcheck)
    }

    pub fn keys(self) -> &'static [KeySpec] {
        match self {
            Command::Count => COUNT_KEYS,
            Command::Gradcheck => GRADCHECK_KEYS,
            Command::Synth => SYNTH_KEYS,
            Command::Augment => AUGMENT_KEYS,
            Command::Train => TRAIN_KEYS,
            Command::Eval => EVAL_KEYS,
            Command::Fuse => FUSE_KEYS,
        }
    }

    fn spec(self, key: &str) -> Option<&'static KeySpec> {
        GLOBAL_KEYS.iter().chain(self.keys()).find(|k| k.key == key)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| ConfigError::UnknownCommand(s.into()))
    }
}

/// A fully resolved run: the command plus every option value, defaults
/// included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub command: Command,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Layers defaults, then `file` (config text), then `flags`.
    pub fn resolve(command: Command, file: Option<&str>, flags: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for spec in GLOBAL_KEYS.iter().chain(command.keys()) {
            if let Some(d) = spec.default {
                values.insert(spec.key.to_string(), d.to_string());
            }
        }
        if let Some(text) = file {
            for (_, k, v) in parse_kv(text)? {
                if k == "command" {
                    if v != command.name() {
                        return Err(ConfigError::WrongCommand {
                            expected: command.name(),
                            found: v,
                        });
                    }
                    continue;
                }
                Self::check_key(command, &k, &v)?;
                values.insert(k, v);
            }
        }
        for (k, v) in flags {
            Self::check_key(command, k, v)?;
            if v.contains(['\n', '\r']) {
                return Err(ConfigError::LineBreak(k.clone()));
            }
            values.insert(k.clone(), v.clone());
        }
        Ok(RunConfig { command, values })
    }

    fn check_key(command: Command, key: &str, value: &str) -> Result<(), ConfigError> {
        let spec = command.spec(key).ok_or_else(|| ConfigError::UnknownKey {
            key: key.into(),
            command: command.name(),
        })?;
        if spec.kind == KeyKind::Switch && !matches!(value, "true" | "false") {
            return Err(ConfigError::Invalid {
                key: key.into(),
                value: value.into(),
                reason: "expected true or false".into(),
            });
        }
        Ok(())
    }

    /// Parses a file produced by [`RunConfig::serialize`].
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let entries = parse_kv(text)?;
        let command = entries
            .iter()
            .find(|(_, k, _)| k == "command")
            .ok_or_else(|| ConfigError::Missing("command".into()))?
            .2
            .parse()?;
        Self::resolve(command, Some(text), &BTreeMap::new())
    }

    pub fn serialize(&self) -> String {
        let mut s = format!("command = {}\n", self.command);
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr<Err: fmt::Display>>(&self, key: &str) -> Result<T, ConfigError> {
        self.opt(key)?.ok_or_else(|| ConfigError::Missing(key.into()))
    }

    pub fn opt<T: FromStr<Err: fmt::Display>>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        self.raw(key)
            .map(|v| {
                v.parse().map_err(|e: T::Err| ConfigError::Invalid {
                    key: key.into(),
                    value: v.into(),
                    reason: e.to_string(),
                })
            })
            .transpose()
    }

    pub fn switch(&self, key: &str) -> bool {
        self.raw(key) == Some("true")
    }
}
