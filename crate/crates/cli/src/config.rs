//! Flat dotted-key configuration read from a TOML file, with `--set key=value`
//! overrides applied on top. Every problem is collected before reporting.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use refmix_core::encoding::EncodingScheme;
use refmix_pipeline::backend::RegistrySpec;
use refmix_pipeline::{CategoryWeights, PipelineConfig, StageCounts};
use toml::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Bool,
    Str,
    FloatList,
    StrList,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Int => "a non-negative integer",
            Kind::Float => "a number",
            Kind::Bool => "a boolean",
            Kind::Str => "a string",
            Kind::FloatList => "an array of numbers",
            Kind::StrList => "an array of strings",
        }
    }

    fn accepts(self, v: &Value) -> bool {
        match (self, v) {
            (Kind::Int, Value::Integer(i)) => *i >= 0,
            (Kind::Float, Value::Float(_) | Value::Integer(_)) => true,
            (Kind::Bool, Value::Boolean(_)) => true,
            (Kind::Str, Value::String(_)) => true,
            (Kind::FloatList, Value::Array(a)) => a.iter().all(|x| matches!(x, Value::Float(_) | Value::Integer(_))),
            (Kind::StrList, Value::Array(a)) => a.iter().all(Value::is_str),
            _ => false,
        }
    }
}

/// `(key, kind, default as a TOML literal)`; keys without a default are
/// required by the commands that read them.
const SCHEMA: &[(&str, Kind, Option<&str>)] = &[
    ("paths.output_dir", Kind::Str, Some("\"out\"")),
    ("paths.checkpoints", Kind::Str, Some("\"checkpoints\"")),
    ("logging.level", Kind::Str, Some("\"warn\"")),
    ("model.seed", Kind::Int, Some("7")),
    ("model.scheme", Kind::Int, Some("4")),
    ("sampler.steps", Kind::Int, Some("8")),
    ("sampler.grid", Kind::Int, Some("8")),
    ("sampler.seed", Kind::Int, Some("0")),
    ("training.seed", Kind::Int, Some("7")),
    ("training.steps", Kind::Int, Some("200")),
    ("training.learning_rate", Kind::Float, Some("2e-3")),
    ("pipeline.seed", Kind::Int, Some("0")),
    ("pipeline.stage1", Kind::Int, Some("10")),
    ("pipeline.stage2", Kind::Int, Some("10")),
    ("pipeline.stage3", Kind::Int, Some("10")),
    ("pipeline.workers", Kind::Int, Some("4")),
    ("pipeline.strict", Kind::Bool, Some("false")),
    ("pipeline.real_image_ratio", Kind::Float, Some("0.5")),
    ("pipeline.weights.concrete_object", Kind::Float, Some("0.4")),
    ("pipeline.weights.abstract_local", Kind::Float, Some("0.35")),
    ("pipeline.weights.abstract_global", Kind::Float, Some("0.25")),
    ("pipeline.reference_count_weights", Kind::FloatList, Some("[0.1, 0.35, 0.3, 0.15, 0.1]")),
    ("backends.t2i", Kind::Str, Some("\"stub:1\"")),
    ("backends.extractor", Kind::Str, Some("\"stub:2\"")),
    ("backends.editor", Kind::Str, Some("\"stub:3\"")),
    ("backends.llm", Kind::Str, Some("\"stub:4\"")),
    ("backends.vlm", Kind::Str, Some("\"stub:5\"")),
    ("backends.real_image_store", Kind::Str, None),
    ("bench.cases", Kind::Str, None),
    ("bench.model", Kind::Str, None),
    ("bench.normalizer", Kind::Str, None),
    ("bench.judges", Kind::StrList, None),
    ("bench.verdicts", Kind::Str, None),
    ("bench.human", Kind::Str, None),
    ("bench.output_dir", Kind::Str, Some("\"bench-out\"")),
    ("bench.run", Kind::Str, Some("\"run1\"")),
    ("bench.workers", Kind::Int, Some("4")),
    ("bench.parallelism", Kind::Int, Some("4")),
];

/// All configuration problems found in one pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration has {} problem(s):", self.0.len())?;
        for e in &self.0 {
            write!(f, "\n  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    values: BTreeMap<String, Value>,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) if !SCHEMA.iter().any(|(s, ..)| *s == key) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn parse_literal(text: &str) -> Option<Value> {
    toml::from_str::<toml::Table>(&format!("v = {text}")).ok()?.remove("v")
}

impl CliConfig {
    /// Reads `path` (if any), then applies each `key=value` override. A value
    /// that is not valid TOML is taken as a bare string.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigErrors> {
        let mut errors = Vec::new();
        let mut entries = Vec::new();
        if let Some(path) = path {
            match std::fs::read_to_string(path) {
                Ok(text) => match toml::from_str::<toml::Table>(&text) {
                    Ok(table) => flatten("", &table, &mut entries),
                    Err(e) => errors.push(format!("{}: {}", path.display(), e.message())),
                },
                Err(e) => errors.push(format!("{}: {e}", path.display())),
            }
        }
        for o in overrides {
            match o.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => {
                    let v = v.trim();
                    entries.push((k.trim().to_string(), parse_literal(v).unwrap_or_else(|| Value::String(v.to_string()))));
                }
                _ => errors.push(format!("override `{o}` is not of the form key=value")),
            }
        }
        let mut values = BTreeMap::new();
        for (key, value) in entries {
            match SCHEMA.iter().find(|(k, ..)| *k == key) {
                None => errors.push(format!("unknown key `{key}`")),
                Some((_, kind, _)) if !kind.accepts(&value) => {
                    errors.push(format!("`{key}` must be {}, got `{value}`", kind.name()))
                }
                Some(_) => {
                    values.insert(key, value);
                }
            }
        }
        for (key, _, default) in SCHEMA {
            if let (false, Some(d)) = (values.contains_key(*key), default) {
                values.insert(key.to_string(), parse_literal(d).expect("schema defaults are valid TOML"));
            }
        }
        let config = Self { values };
        let (weights, scheme) = (config.f64_list("pipeline.reference_count_weights"), config.usize("model.scheme"));
        if weights.len() != 5 {
            errors.push(format!("`pipeline.reference_count_weights` needs 5 entries, got {}", weights.len()));
        }
        if !(1..=4).contains(&scheme) {
            errors.push(format!("`model.scheme` must be 1-4, got {scheme}"));
        }
        if errors.is_empty() {
            Ok(config)
        } else {
            Err(ConfigErrors(errors))
        }
    }

    /// Fails listing every key in `keys` that has no value.
    pub fn require(&self, keys: &[&str]) -> Result<(), ConfigErrors> {
        let missing: Vec<String> = keys
            .iter()
            .filter(|k| !self.values.contains_key(**k))
            .map(|k| format!("missing required key `{k}`"))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(missing))
        }
    }

    fn get(&self, key: &str) -> &Value {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("`{key}` read without a default or a require() check"))
    }

    pub fn u64(&self, key: &str) -> u64 {
        self.get(key).as_integer().expect("kind-checked") as u64
    }

    pub fn usize(&self, key: &str) -> usize {
        self.u64(key) as usize
    }

    pub fn f64(&self, key: &str) -> f64 {
        match self.get(key) {
            Value::Integer(i) => *i as f64,
            v => v.as_float().expect("kind-checked"),
        }
    }

    pub fn bool(&self, key: &str) -> bool {
        self.get(key).as_bool().expect("kind-checked")
    }

    pub fn str(&self, key: &str) -> &str {
        self.get(key).as_str().expect("kind-checked")
    }

    pub fn opt_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).and_then(Value::as_str)
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.str(key))
    }

    pub fn f64_list(&self, key: &str) -> Vec<f64> {
        let Value::Array(a) = self.get(key) else { unreachable!("kind-checked") };
        a.iter().map(|v| v.as_float().unwrap_or_else(|| v.as_integer().unwrap_or(0) as f64)).collect()
    }

    pub fn str_list(&self, key: &str) -> Vec<String> {
        let Value::Array(a) = self.get(key) else { unreachable!("kind-checked") };
        a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect()
    }

    pub fn scheme(&self) -> EncodingScheme {
        EncodingScheme::from_number(self.u64("model.scheme") as u8).expect("checked at load")
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        let w = self.f64_list("pipeline.reference_count_weights");
        PipelineConfig {
            seed: self.u64("pipeline.seed"),
            counts: StageCounts {
                stage1: self.usize("pipeline.stage1"),
                stage2: self.usize("pipeline.stage2"),
                stage3: self.usize("pipeline.stage3"),
            },
            category_weights: CategoryWeights {
                concrete_object: self.f64("pipeline.weights.concrete_object"),
                abstract_local: self.f64("pipeline.weights.abstract_local"),
                abstract_global: self.f64("pipeline.weights.abstract_global"),
            },
            reference_count_weights: [w[0], w[1], w[2], w[3], w[4]],
            real_image_ratio: self.f64("pipeline.real_image_ratio"),
            output_dir: self.path("paths.output_dir"),
            workers: self.usize("pipeline.workers"),
            strict: self.bool("pipeline.strict"),
        }
    }

    pub fn registry_spec(&self) -> RegistrySpec {
        RegistrySpec {
            t2i: self.str("backends.t2i").into(),
            extractor: self.str("backends.extractor").into(),
            editor: self.str("backends.editor").into(),
            llm: self.str("backends.llm").into(),
            vlm: self.str("backends.vlm").into(),
            real_image_store: self.opt_str("backends.real_image_store").map(PathBuf::from),
        }
    }
}
