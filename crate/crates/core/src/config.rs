//! Run configuration with flat dotted keys (`model.*`, `train.*`, `loss.*`,
//! `data.*`, `eval.*` and a top-level `seed`).
//!
//! Files are TOML. Overrides are applied in order on top of the defaults,
//! every key must already exist in the defaults, and the result is checked
//! by deserializing it back, so unknown keys and ill-typed values are both
//! configuration errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::Augment;
use crate::error::{Error, Result};
use crate::evaluation::FidProtocol;
use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

pub const CONFIG_ECHO_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weight_decay: f64,
    pub checkpoint_every: u64,
    pub detach_dic: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            weight_decay: t.weight_decay,
            checkpoint_every: t.checkpoint_every,
            detach_dic: t.detach_dic,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// 0 means "same as model.image_size".
    pub load_size: usize,
    pub random_crop: bool,
    pub horizontal_flip: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_content: usize,
    pub n_styles: usize,
    pub repeats: usize,
    pub n_pairs: usize,
    pub extractor_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let p = FidProtocol::default();
        Self {
            n_content: p.n_content,
            n_styles: p.n_styles,
            repeats: p.repeats,
            n_pairs: 15,
            extractor_seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub loss: LossWeights,
    pub data: DataSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            steps: t.steps,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            weight_decay: t.weight_decay,
            checkpoint_every: t.checkpoint_every,
            seed: self.seed,
            loss_weights: self.loss,
            detach_dic: t.detach_dic,
        }
    }

    pub fn augment(&self) -> Augment {
        let size = self.model.image_size;
        Augment {
            image_size: size,
            load_size: (self.data.load_size != 0).then_some(self.data.load_size),
            random_crop: self.data.random_crop,
            horizontal_flip: self.data.horizontal_flip,
        }
    }

    pub fn fid_protocol(&self) -> FidProtocol {
        FidProtocol {
            n_content: self.eval.n_content,
            n_styles: self.eval.n_styles,
            repeats: self.eval.repeats,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train_config().validate()?;
        self.augment().validate()?;
        let e = &self.eval;
        if e.n_content == 0 || e.n_styles == 0 || e.repeats == 0 || e.n_pairs == 0 {
            return Err(Error::Config("eval counts must be >= 1".into()));
        }
        Ok(())
    }

    fn to_table(&self) -> Result<Table> {
        let err = |e: toml::ser::Error| Error::Config(e.to_string());
        let mut table = Table::try_from(self).map_err(err)?;
        // The model seed always follows the top-level seed.
        let mut model = Table::try_from(&self.model).map_err(err)?;
        model.remove("seed");
        table.insert("model".into(), Value::Table(model));
        Ok(table)
    }

    /// Every key with its value, in sorted dotted form.
    pub fn flat(&self) -> Result<BTreeMap<String, Value>> {
        let mut out = BTreeMap::new();
        flatten("", &Value::Table(self.to_table()?), &mut out);
        Ok(out)
    }

    /// The configuration as `key = value` lines, one per key.
    pub fn to_flat_toml(&self) -> Result<String> {
        let mut s = String::new();
        for (k, v) in self.flat()? {
            s.push_str(&format!("{k} = {v}\n"));
        }
        Ok(s)
    }

    /// Applies `key = value` overrides in order.
    pub fn with_overrides<'a, I>(&self, overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, Value)>,
    {
        let known = self.flat()?;
        let mut table = self.to_table()?;
        for (key, value) in overrides {
            let Some(current) = known.get(key) else {
                return Err(Error::Config(format!("unknown configuration key `{key}`")));
            };
            let value = coerce(key, current, value)?;
            set_path(&mut table, key, value);
        }
        let mut cfg: RunConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.model.seed = cfg.seed;
        Ok(cfg)
    }

    /// Applies the keys of a TOML document. Nested tables and dotted keys
    /// are equivalent.
    pub fn with_toml(&self, text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", &Value::Table(table), &mut flat);
        self.with_overrides(flat.iter().map(|(k, v)| (k.as_str(), v.clone())))
    }

    pub fn with_file(&self, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        self.with_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Writes `config.toml` with the effective configuration into `dir`.
    pub fn echo_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(CONFIG_ECHO_FILE);
        fs::write(&path, self.to_flat_toml()?).map_err(|e| Error::io(&path, e))
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn set_path(table: &mut Table, key: &str, value: Value) {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut t = table;
    for p in parts {
        t = t
            .entry(p)
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .expect("known keys only pass through tables");
    }
    t.insert(last.to_string(), value);
}

/// Integers are accepted where floats are expected.
fn coerce(key: &str, current: &Value, value: Value) -> Result<Value> {
    match (current, value) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (c, v) if std::mem::discriminant(c) == std::mem::discriminant(&v) => Ok(v),
        (c, v) => Err(Error::Config(format!(
            "`{key}` expects a {}, got {}",
            c.type_str(),
            v.type_str()
        ))),
    }
}

/// Parses a command-line `key=value`; the value is read as a TOML value and
/// falls back to a plain string.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected key=value, got `{s}`")))?;
    let (k, v) = (k.trim(), v.trim());
    let value = format!("v = {v}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_flat_form() {
        let d = RunConfig::default();
        let back = RunConfig::default().with_toml(&d.to_flat_toml().unwrap()).unwrap();
        assert_eq!(back, d);
        assert!(d.flat().unwrap().contains_key("model.image_size"));
        assert!(!d.flat().unwrap().contains_key("model.seed"));
    }

    #[test]
    fn overrides_apply_and_type_check() {
        let d = RunConfig::default();
        let c = d
            .with_toml("seed = 5\n[model]\nimage_size = 32\n[loss]\ncc = 3\n")
            .unwrap();
        assert_eq!(c.model.image_size, 32);
        assert_eq!(c.loss.cc, 3.0);
        assert_eq!(c.model_config().seed, 5);
        assert_eq!(c.train_config().seed, 5);
        assert!(d.with_toml("model.nope = 1").is_err());
        assert!(d.with_toml("model.image_size = \"big\"").is_err());
        assert!(d.with_toml("model.image_size = -3").is_err());
    }

    #[test]
    fn assignments_parse() {
        assert_eq!(parse_assignment("train.steps=10").unwrap(), ("train.steps".into(), Value::Integer(10)));
        assert_eq!(parse_assignment("a = true").unwrap().1, Value::Boolean(true));
        assert_eq!(parse_assignment("x=abc").unwrap().1, Value::String("abc".into()));
        assert!(parse_assignment("novalue").is_err());
    }
}
