//! Per-subcommand key schemas and their resolution from defaults, a JSON
//! config file and command-line flags (in increasing precedence).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Int,
    Float,
    Bool,
    Str,
    Path,
}

#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub kind: Kind,
    /// `None` marks a required key.
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn key(name: &'static str, kind: Kind, default: Option<&'static str>, help: &'static str) -> Key {
    Key {
        name,
        kind,
        default,
        help,
    }
}

const SEED: Key = key("seed", Kind::Int, Some("0"), "Random seed");
const THREADS: Key = key("threads", Kind::Int, Some("1"), "Worker cap (all work runs on one thread)");

const NET: [Key; 5] = [
    key("net.filters", Kind::Int, Some("16"), "Filters per conv layer"),
    key("net.kernel", Kind::Int, Some("5"), "Conv kernel size"),
    key("net.fc_hidden", Kind::Int, Some("128"), "Hidden fully connected width"),
    key("net.dropout_pool", Kind::Float, Some("0.25"), "Dropout rate after each pooling stage"),
    key("net.dropout_fc", Kind::Float, Some("0.5"), "Dropout rate after the hidden FC layer"),
];

const TRAIN: [Key; 4] = [
    key("train.lr", Kind::Float, Some("0.01"), "SGD learning rate"),
    key("train.momentum", Kind::Float, Some("0.9"), "SGD momentum"),
    key("train.batch_size", Kind::Int, Some("16"), "Minibatch size"),
    key("train.shuffle", Kind::Bool, Some("true"), "Reshuffle the training set every epoch"),
];

pub const SUBCOMMANDS: [&str; 10] = [
    "synth",
    "augment",
    "split",
    "train-cnn",
    "pretrain-cae",
    "finetune",
    "train-head",
    "ensemble",
    "eval",
    "localize",
];

pub fn about(sub: &str) -> &'static str {
    match sub {
        "synth" => "Generate a synthetic labelled corpus",
        "augment" => "Grow each training class to a target size by rotation and flipping",
        "split" => "Assign a stratified train/test split in the corpus manifest",
        "train-cnn" => "Train the CNN from random initialization",
        "pretrain-cae" => "Layerwise convolutional-autoencoder pretraining",
        "finetune" => "Assemble pretrained stages into the CNN and fine-tune",
        "train-head" => "Train a softmax or one-vs-rest SVM head on feature vectors",
        "ensemble" => "Weighted probability averaging over trained heads",
        "eval" => "Accuracy, macro precision/recall and confusion matrix",
        "localize" => "Sliding-window heatmaps, damage regions and overlay",
        _ => "",
    }
}

/// Accepted keys of one subcommand.
pub fn schema(sub: &str) -> Vec<Key> {
    use Kind::*;
    let mut keys = match sub {
        "synth" => vec![
            key("out", Path, None, "Output corpus directory"),
            key("n", Int, Some("50"), "Images per class"),
            key("size", Int, Some("64"), "Image side length in pixels"),
            SEED,
        ],
        "augment" => vec![
            key("in", Path, None, "Input corpus directory"),
            key("counts", Path, None, "JSON target sizes: array of 8 or object by class name"),
            key("out", Path, None, "Output corpus directory"),
            key("augment.rotation_min", Float, Some("-20"), "Smallest rotation angle (degrees)"),
            key("augment.rotation_max", Float, Some("20"), "Largest rotation angle (degrees)"),
            key("augment.flip_prob", Float, Some("0.5"), "Horizontal flip probability"),
            SEED,
        ],
        "split" => vec![
            key("in", Path, None, "Corpus directory"),
            key("out", Path, Some(""), "Output corpus directory (default: rewrite in place)"),
            key("split.train_frac", Float, Some("0.8"), "Training fraction per class"),
            SEED,
        ],
        "train-cnn" => {
            let mut k = vec![
                key("data", Path, None, "Corpus directory with a split manifest"),
                key("out", Path, None, "Output directory"),
                key("train.epochs", Int, Some("30"), "Training epochs"),
            ];
            k.extend(NET);
            k.extend(TRAIN);
            k.push(SEED);
            k
        }
        "pretrain-cae" => {
            let mut k = vec![
                key("data", Path, None, "Corpus directory; labels are ignored"),
                key("out", Path, None, "Output directory for stage checkpoints"),
                key("cae.stages", Int, Some("4"), "Number of conv stages to pretrain"),
                key("cae.lr", Float, Some("0.01"), "Pretraining learning rate"),
                key("cae.momentum", Float, Some("0.9"), "Pretraining momentum"),
                key("cae.batch_size", Int, Some("16"), "Pretraining minibatch size"),
                key("cae.epochs", Int, Some("5"), "Epochs per stage"),
            ];
            k.extend(NET);
            k.push(SEED);
            k
        }
        "finetune" => {
            let mut k = vec![
                key("data", Path, None, "Corpus directory with a split manifest"),
                key("stages", Path, None, "Directory written by pretrain-cae"),
                key("out", Path, None, "Output directory"),
                key("cae.finetune_lr", Float, Some("0.005"), "Fine-tuning learning rate"),
                key("cae.finetune_epochs", Int, Some("30"), "Fine-tuning epochs"),
                key("train.momentum", Float, Some("0.9"), "SGD momentum"),
                key("train.batch_size", Int, Some("16"), "Minibatch size"),
                key("train.shuffle", Bool, Some("true"), "Reshuffle the training set every epoch"),
            ];
            k.extend(NET);
            k.push(SEED);
            k
        }
        "train-head" => vec![
            key("features", Path, None, "Training features (FEAT binary or .csv)"),
            key("val", Path, Some(""), "Optional validation features"),
            key("out", Path, None, "Output directory"),
            key("head.kind", Str, Some("softmax"), "softmax or svm"),
            key("head.lr", Float, Some("0.1"), "Learning rate"),
            key("head.l2", Float, Some("0.0001"), "L2 coefficient on the weights"),
            key("head.epochs", Int, Some("50"), "Epochs"),
            key("head.batch_size", Int, Some("32"), "Minibatch size"),
            SEED,
        ],
        "ensemble" => vec![
            key("heads", Str, None, "Comma-separated head.json files"),
            key("features", Str, None, "Comma-separated feature files to predict, one per head"),
            key("val", Str, Some(""), "Comma-separated validation feature files for selection"),
            key("out", Path, None, "Output directory"),
            key("ensemble.select", Str, Some("all"), "all or top"),
            key("ensemble.k", Int, Some("3"), "Members kept by top selection"),
            key("ensemble.weighting", Str, Some("uniform"), "uniform or accuracy"),
        ],
        "eval" => vec![
            key("preds", Path, Some(""), "Predictions TSV (id, value)"),
            key("labels", Path, Some(""), "Labels TSV (id, value)"),
            key("model", Path, Some(""), "Network checkpoint to score instead of TSV files"),
            key("data", Path, Some(""), "Corpus directory for the model"),
            key("out", Path, Some(""), "Directory for metrics.json and the report"),
            key("eval.split", Str, Some("test"), "Split scored with the model: train, test or all"),
            key("eval.averaging", Str, Some("macro"), "macro or micro"),
            key("eval.empty_value", Float, Some("0"), "Precision/recall of a class with no predictions/examples"),
            key("eval.method", Str, Some("model"), "Method name in the report table"),
        ],
        "localize" => vec![
            key("model", Path, None, "Network checkpoint"),
            key("image", Path, None, "PPM image"),
            key("out", Path, None, "Output directory"),
            key("localize.window", Int, Some("100"), "Crop side length in pixels"),
            key("localize.resize_to", Int, Some("224"), "Side length crops are resized to"),
            key("localize.stride", Int, Some("10"), "Grid spacing in pixels"),
            key("localize.threshold", Float, Some("0.9"), "Probability threshold for regions"),
            key("localize.classes", Str, Some(""), "Comma-separated class names (default: all damage classes)"),
        ],
        _ => Vec::new(),
    };
    keys.push(THREADS);
    keys
}

/// The clap command for one subcommand: `--<key> <value>` per schema key
/// plus `--config`.
pub fn command(sub: &'static str) -> Command {
    let mut cmd = Command::new(sub).about(about(sub)).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("JSON config; flat dotted keys or nested objects, flags win"),
    );
    for k in schema(sub) {
        let help = match k.default {
            None => format!("{} [required]", k.help),
            Some("") => k.help.to_string(),
            Some(d) => format!("{} [default: {d}]", k.help),
        };
        let value_name = match k.kind {
            Kind::Int => "INT",
            Kind::Float => "FLOAT",
            Kind::Bool => "BOOL",
            Kind::Str => "STR",
            Kind::Path => "PATH",
        };
        cmd = cmd.arg(
            Arg::new(k.name)
                .long(k.name)
                .value_name(value_name)
                .help(help)
                .action(ArgAction::Set),
        );
    }
    cmd
}

/// Fully resolved key-value configuration of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    sub: String,
    values: BTreeMap<String, String>,
    kinds: BTreeMap<String, Kind>,
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let name = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&name, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn scalar(key: &str, v: &Value) -> Result<String, CliError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        Value::Array(items) => items
            .iter()
            .map(|i| scalar(key, i))
            .collect::<Result<Vec<_>, _>>()
            .map(|v| v.join(",")),
        _ => Err(CliError::Config(format!("key {key}: unsupported value {v}"))),
    }
}

fn check_value(k: &Key, v: &str) -> Result<(), CliError> {
    let ok = match k.kind {
        Kind::Int => v.parse::<u64>().is_ok(),
        Kind::Float => v.parse::<f64>().is_ok_and(f64::is_finite),
        Kind::Bool => v.parse::<bool>().is_ok(),
        Kind::Str | Kind::Path => true,
    };
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("key {}: {v:?} is not a valid {:?}", k.name, k.kind)))
    }
}

impl RunConfig {
    pub fn resolve(sub: &str, matches: &ArgMatches) -> Result<Self, CliError> {
        let keys = schema(sub);
        let mut values: BTreeMap<String, String> = BTreeMap::new();
        for k in &keys {
            if let Some(d) = k.default {
                values.insert(k.name.into(), d.into());
            }
        }
        if let Some(path) = matches.get_one::<String>("config") {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{path}: {e}")))?;
            let json: Value =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{path}: {e}")))?;
            if !json.is_object() {
                return Err(CliError::Config(format!("{path}: top level must be an object")));
            }
            let mut flat = BTreeMap::new();
            flatten("", &json, &mut flat);
            for (name, v) in flat {
                if !keys.iter().any(|k| k.name == name) {
                    return Err(CliError::Config(format!("unknown key {name:?} for {sub}")));
                }
                values.insert(name.clone(), scalar(&name, &v)?);
            }
        }
        for k in &keys {
            if let Some(v) = matches.get_one::<String>(k.name) {
                values.insert(k.name.into(), v.clone());
            }
        }
        for k in &keys {
            match values.get(k.name) {
                None => return Err(CliError::Config(format!("missing required key --{}", k.name))),
                Some(v) if !v.is_empty() => check_value(k, v)?,
                Some(_) => {}
            }
        }
        let kinds = keys.iter().map(|k| (k.name.to_string(), k.kind)).collect();
        let cfg = Self {
            sub: sub.to_string(),
            values,
            kinds,
        };
        if cfg.usize("threads")? == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        Ok(cfg)
    }

    fn raw(&self, name: &str) -> &str {
        self.values
            .get(name)
            .unwrap_or_else(|| panic!("key {name} is not in this subcommand's schema"))
    }

    pub fn str(&self, name: &str) -> &str {
        self.raw(name)
    }

    pub fn usize(&self, name: &str) -> Result<usize, CliError> {
        self.raw(name)
            .parse()
            .map_err(|_| CliError::Config(format!("key {name}: expected a non-negative integer")))
    }

    pub fn u64(&self, name: &str) -> Result<u64, CliError> {
        self.raw(name)
            .parse()
            .map_err(|_| CliError::Config(format!("key {name}: expected a non-negative integer")))
    }

    pub fn f64(&self, name: &str) -> Result<f64, CliError> {
        self.raw(name)
            .parse()
            .map_err(|_| CliError::Config(format!("key {name}: expected a number")))
    }

    pub fn bool(&self, name: &str) -> Result<bool, CliError> {
        self.raw(name)
            .parse()
            .map_err(|_| CliError::Config(format!("key {name}: expected true or false")))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        PathBuf::from(self.raw(name))
    }

    /// `None` for an empty optional path.
    pub fn opt_path(&self, name: &str) -> Option<PathBuf> {
        Some(self.raw(name)).filter(|v| !v.is_empty()).map(PathBuf::from)
    }

    /// Comma-separated list; empty for an empty value.
    pub fn list(&self, name: &str) -> Vec<String> {
        self.raw(name)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect()
    }

    /// Typed JSON object of every key; stable key order.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("plain data serializes")
    }

    pub fn to_compact_json(&self) -> String {
        self.to_value().to_string()
    }

    fn to_value(&self) -> Value {
        let map: serde_json::Map<String, Value> = self
            .values
            .iter()
            .map(|(k, v)| {
                let typed = match self.kinds[k] {
                    Kind::Int => v.parse::<u64>().map(Value::from).unwrap_or_else(|_| Value::from(v.as_str())),
                    Kind::Float => v.parse::<f64>().map(Value::from).unwrap_or_else(|_| Value::from(v.as_str())),
                    Kind::Bool => v.parse::<bool>().map(Value::from).unwrap_or_else(|_| Value::from(v.as_str())),
                    Kind::Str | Kind::Path => Value::from(v.as_str()),
                };
                (k.clone(), typed)
            })
            .collect();
        Value::Object(map)
    }

    /// File name the resolved configuration is saved under.
    pub fn file_name(sub: &str) -> String {
        format!("{sub}.config.json")
    }

    /// Write the resolved configuration as `<subcommand>.config.json` under
    /// `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(Self::file_name(&self.sub));
        std::fs::write(&path, self.to_json() + "\n")
            .map_err(|e| CliError::Runtime(damage_core::Error::Format(format!("{}: {e}", path.display()))))
    }
}
