//! Run configuration: JSON file plus `--key value` overrides, validated as a
//! whole before anything touches the disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::assets::{self, AssetSources, Bundle};
use crate::envs::{EnvName, EnvSpec, Modifications};
use crate::policy::{build_policy, BlenderMode};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub runs_dir: PathBuf,
    pub env: EnvName,
    /// Environment modification flags, e.g. `["no_enemies"]`.
    pub mods: Vec<String>,
    pub noise: f64,
    pub max_steps: usize,
    pub frame_stack: usize,
    /// Asset files; `None` selects the shipped file for `env`.
    pub language: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub blend_rules: Option<PathBuf>,
    pub valuations: Option<PathBuf>,
    /// Valuation parameter overrides keyed `predicate.param`.
    pub valuation: BTreeMap<String, f64>,
    pub blender: BlenderMode,
    /// Checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: u64,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = EnvSpec::new(EnvName::MiniKangaroo);
        Self {
            name: "run".into(),
            runs_dir: "runs".into(),
            env: spec.name,
            mods: Vec::new(),
            noise: 0.0,
            max_steps: spec.max_steps,
            frame_stack: spec.frame_stack,
            language: None,
            rules: None,
            blend_rules: None,
            valuations: None,
            valuation: BTreeMap::new(),
            blender: BlenderMode::Logic,
            checkpoint_every: 0,
            train: TrainConfig::default(),
        }
    }
}

/// A configuration that passed validation, with its assets loaded.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub spec: EnvSpec,
    pub sources: AssetSources,
    pub bundle: Bundle,
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Applies `(key, value)` overrides. Keys may use dashes or
    /// underscores; train options can be given without the `train.` prefix;
    /// `valuation.<pred>.<param>` sets a valuation override. Values are
    /// parsed as JSON when possible and taken as strings otherwise.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self, Vec<String>> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        let mut errors = Vec::new();
        for (key, raw) in overrides {
            let key = key.trim_start_matches("--").replace('-', "_");
            if let Err(e) = set_key(&mut doc, &key, raw) {
                errors.push(e);
            }
        }
        if !errors.is_empty() {
            return Err(errors);
        }
        serde_json::from_value(doc).map_err(|e| vec![format!("config: {e}")])
    }

    pub fn env_spec(&self) -> Result<EnvSpec, String> {
        let mut mods = Modifications::parse_flags(&self.mods.join(",")).map_err(|e| e.to_string())?;
        mods.objectness_noise = self.noise;
        let mut spec = EnvSpec::new(self.env).with_mods(mods).with_seed(self.train.seed);
        spec.max_steps = self.max_steps;
        spec.frame_stack = self.frame_stack;
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }

    fn load_sources(&self, errors: &mut Vec<String>) -> AssetSources {
        let mut s = assets::default_sources(self.env);
        let files = [
            (&self.language, &mut s.language),
            (&self.rules, &mut s.action_rules),
            (&self.blend_rules, &mut s.blend_rules),
            (&self.valuations, &mut s.valuations),
        ];
        for (path, slot) in files {
            if let Some(p) = path {
                match assets::read_file(p) {
                    Ok(t) => *slot = t,
                    Err(e) => errors.push(e.to_string()),
                }
            }
        }
        s
    }

    /// Checks everything and reports every problem found, not just the first.
    pub fn resolve(&self) -> Result<Resolved, Vec<String>> {
        let mut errors = Vec::new();
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            errors.push(format!("name `{}` is not a valid run directory name", self.name));
        }
        if let Err(e) = self.train.validate() {
            errors.push(e.to_string());
        }
        let spec = self.env_spec().map_err(|e| errors.push(e)).ok();
        let before = errors.len();
        let sources = self.load_sources(&mut errors);
        let bundle = if errors.len() > before {
            None
        } else {
            match sources.parse() {
                Ok(mut b) => {
                    for (k, v) in &self.valuation {
                        if let Err(e) = b.valuations.apply_override(k, *v) {
                            errors.push(format!("valuation.{k}: {e}"));
                        }
                    }
                    Some(b)
                }
                Err(e) => {
                    errors.push(e.to_string());
                    None
                }
            }
        };
        if let (Some(spec), Some(b)) = (&spec, &bundle) {
            if errors.is_empty() {
                if let Err(e) = build_policy(b, spec, self.blender, self.train.seed) {
                    errors.push(e.to_string());
                }
            }
        }
        if !errors.is_empty() {
            return Err(errors);
        }
        Ok(Resolved {
            config: self.clone(),
            spec: spec.expect("checked"),
            sources,
            bundle: bundle.expect("checked"),
        })
    }

    pub fn run_dir(&self) -> PathBuf {
        self.runs_dir.join(&self.name)
    }
}

fn set_key(doc: &mut Value, key: &str, raw: &str) -> Result<(), String> {
    if let Some(rest) = key.strip_prefix("valuation.") {
        let v: f64 = raw
            .parse()
            .map_err(|_| format!("valuation.{rest}: `{raw}` is not a number"))?;
        doc["valuation"][rest] = Value::from(v);
        return Ok(());
    }
    let path: Vec<&str> = if key.contains('.') {
        key.split('.').collect()
    } else if doc.get(key).is_some() {
        vec![key]
    } else if doc["train"].get(key).is_some() {
        vec!["train", key]
    } else {
        return Err(format!("unknown config key `{key}`"));
    };
    let mut slot = &mut *doc;
    for p in &path {
        slot = slot
            .get_mut(*p)
            .ok_or_else(|| format!("unknown config key `{key}`"))?;
    }
    let mut value = parse_value(raw);
    if slot.is_array() && !value.is_array() {
        value = Value::Array(
            raw.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| Value::String(s.to_string()))
                .collect(),
        );
    }
    // Paths and names stay strings even when they look like JSON.
    if slot.is_string() || (slot.is_null() && !value.is_number()) {
        value = Value::String(raw.to_string());
    }
    *slot = value;
    Ok(())
}

/// Splits `--key value` pairs; `--flag` without a value means `true`.
pub fn parse_override_args(args: &[String]) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        let Some(key) = a.strip_prefix("--") else {
            return Err(format!("unexpected argument `{a}`"));
        };
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            i += 1;
        } else if i + 1 < args.len() && !args[i + 1].starts_with("--") {
            out.push((key.to_string(), args[i + 1].clone()));
            i += 2;
        } else {
            out.push((key.to_string(), "true".to_string()));
            i += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = RunConfig::default()
            .with_overrides(&ov(&[
                ("total-timesteps", "8192"),
                ("seed", "3"),
                ("env", "mini-seaquest"),
                ("force-beta", "1.0"),
                ("frozen", "logic,blender"),
                ("valuation.close_by_enemy.d", "3"),
                ("rules", "x.rules"),
                ("name", "123"),
            ]))
            .unwrap();
        assert_eq!(c.train.total_timesteps, 8192);
        assert_eq!(c.train.seed, 3);
        assert_eq!(c.env, EnvName::MiniSeaquest);
        assert_eq!(c.train.force_beta, Some(1.0));
        assert_eq!(c.train.frozen.len(), 2);
        assert_eq!(c.valuation["close_by_enemy.d"], 3.0);
        assert_eq!(c.rules, Some(PathBuf::from("x.rules")));
        assert_eq!(c.name, "123");
    }

    #[test]
    fn unknown_and_ill_typed_keys_are_rejected() {
        let errs = RunConfig::default()
            .with_overrides(&ov(&[("bogus", "1"), ("also-bogus", "2")]))
            .unwrap_err();
        assert_eq!(errs.len(), 2);
        assert!(RunConfig::default().with_overrides(&ov(&[("num-envs", "many")])).is_err());
    }

    #[test]
    fn validation_lists_every_problem() {
        let c = RunConfig::default()
            .with_overrides(&ov(&[
                ("rules", "/nonexistent/a.rules"),
                ("gamma", "2.0"),
                ("mods", "no_such_flag"),
            ]))
            .unwrap();
        let errs = c.resolve().unwrap_err();
        assert_eq!(errs.len(), 3, "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("/nonexistent/a.rules")));
    }

    #[test]
    fn action_mismatch_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let lang = dir.path().join("k.lang");
        std::fs::write(&lang, assets::KANGAROO_LANG).unwrap();
        let c = RunConfig {
            env: EnvName::MiniSeaquest,
            language: Some(lang),
            ..Default::default()
        };
        assert!(c.resolve().is_err());
    }

    #[test]
    fn default_resolves_and_round_trips() {
        let c = RunConfig::default();
        c.resolve().unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), c);
    }

    #[test]
    fn override_arg_splitting() {
        let a: Vec<String> = ["--seed", "1", "--norm-adv", "--lr=0.1"].iter().map(|s| s.to_string()).collect();
        assert_eq!(
            parse_override_args(&a).unwrap(),
            ov(&[("seed", "1"), ("norm-adv", "true"), ("lr", "0.1")])
        );
        assert!(parse_override_args(&["x".to_string()]).is_err());
    }
}
