//! Training profile resolution: command-line flag, then config file, then
//! built-in default.

use std::path::Path;

use anyhow::{Context, Result};
use stylevox_core::pipeline::Profile;

/// Which layer supplied a setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Flag,
    File,
    Default,
}

#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub steps: Option<u64>,
    pub warmup: Option<u64>,
    pub lr: Option<f64>,
    pub batch_tokens: Option<usize>,
    pub seed: Option<u64>,
    pub no_wall_time: bool,
}

pub struct Resolved {
    pub profile: Profile,
    pub sources: Vec<(&'static str, String, Source)>,
}

/// Keys present in the file's `[train]` table and top level.
fn file_keys(table: &toml::Table) -> (Vec<String>, Vec<String>) {
    let train = table.get("train").and_then(|v| v.as_table()).map(|t| t.keys().cloned().collect()).unwrap_or_default();
    (train, table.keys().cloned().collect())
}

/// Overlays `over` onto `base`, recursing into nested tables.
fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

pub fn resolve(config: Option<&Path>, o: &Overrides) -> Result<Resolved> {
    let (mut profile, train_keys, top_keys) = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let table: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
            let mut merged = toml::Table::try_from(Profile::demo())?;
            merge(&mut merged, &table);
            let profile: Profile =
                toml::Value::Table(merged).try_into().with_context(|| format!("parsing {}", path.display()))?;
            let (train, top) = file_keys(&table);
            (profile, train, top)
        }
        None => (Profile::demo(), Vec::new(), Vec::new()),
    };
    let mut sources = Vec::new();
    let mut note = |name: &'static str, value: String, flag: bool, in_file: bool| {
        let src = if flag {
            Source::Flag
        } else if in_file {
            Source::File
        } else {
            Source::Default
        };
        sources.push((name, value, src));
    };
    let t = &mut profile.train;
    if let Some(v) = o.steps {
        t.total_steps = v;
    }
    note("total_steps", t.total_steps.to_string(), o.steps.is_some(), train_keys.iter().any(|k| k == "total_steps"));
    if let Some(v) = o.warmup {
        t.warmup_steps = v;
    }
    note(
        "warmup_steps",
        t.warmup_steps.to_string(),
        o.warmup.is_some(),
        train_keys.iter().any(|k| k == "warmup_steps"),
    );
    if let Some(v) = o.lr {
        t.peak_lr = v;
    }
    note("peak_lr", t.peak_lr.to_string(), o.lr.is_some(), train_keys.iter().any(|k| k == "peak_lr"));
    if let Some(v) = o.batch_tokens {
        t.batch_tokens = v;
    }
    note(
        "batch_tokens",
        t.batch_tokens.to_string(),
        o.batch_tokens.is_some(),
        train_keys.iter().any(|k| k == "batch_tokens"),
    );
    if let Some(v) = o.seed {
        t.seed = v;
        profile.seed = v;
    }
    note("seed", profile.train.seed.to_string(), o.seed.is_some(), train_keys.iter().any(|k| k == "seed"));
    if o.no_wall_time {
        profile.train.record_wall_time = false;
    }
    note(
        "record_wall_time",
        profile.train.record_wall_time.to_string(),
        o.no_wall_time,
        train_keys.iter().any(|k| k == "record_wall_time"),
    );
    note("model", format!("{:?}", profile.model), false, top_keys.iter().any(|k| k == "model"));
    note("extra_prompts", profile.extra_prompts.to_string(), false, top_keys.iter().any(|k| k == "extra_prompts"));
    profile.train.validate()?;
    Ok(Resolved { profile, sources })
}

impl Resolved {
    pub fn log(&self) {
        for (name, value, source) in &self.sources {
            tracing::info!(setting = name, value = %value, source = ?source, "config");
        }
    }
}
