//! Rule, vocabulary and valuation files shipped for the built-in environments.
//!
//! Every environment has four files: `<env>.lang` (types, constants and
//! predicates), `<env>.rules` (action rules), `<env>.blend` (blending rules)
//! and `<env>.valuations.json` (state predicate valuations). They are
//! embedded in the library and can be replaced by files on disk.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::envs::EnvName;
use crate::lang::{parse_language, parse_rules, LangError, RuleSet};
use crate::valuation::ValuationRegistry;

pub const KANGAROO_LANG: &str = include_str!("../assets/kangaroo.lang");
pub const KANGAROO_RULES: &str = include_str!("../assets/kangaroo.rules");
pub const KANGAROO_BLEND: &str = include_str!("../assets/kangaroo.blend");
pub const KANGAROO_VALUATIONS: &str = include_str!("../assets/kangaroo.valuations.json");
pub const SEAQUEST_LANG: &str = include_str!("../assets/seaquest.lang");
pub const SEAQUEST_RULES: &str = include_str!("../assets/seaquest.rules");
pub const SEAQUEST_BLEND: &str = include_str!("../assets/seaquest.blend");
pub const SEAQUEST_VALUATIONS: &str = include_str!("../assets/seaquest.valuations.json");

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}:{}: {source}", source.line())]
    Parse { file: String, source: LangError },
    #[error("{file}: {source}")]
    Json { file: String, source: serde_json::Error },
}

/// Source texts of one environment's assets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssetSources {
    pub language: String,
    pub action_rules: String,
    pub blend_rules: String,
    pub valuations: String,
}

/// Parsed assets ready to build policies from.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub action_rules: RuleSet,
    pub blend_rules: RuleSet,
    pub valuations: ValuationRegistry,
}

/// File names of the shipped assets, relative to the asset directory.
pub fn file_names(env: EnvName) -> [String; 4] {
    let stem = match env {
        EnvName::MiniKangaroo => "kangaroo",
        EnvName::MiniSeaquest => "seaquest",
    };
    [
        format!("{stem}.lang"),
        format!("{stem}.rules"),
        format!("{stem}.blend"),
        format!("{stem}.valuations.json"),
    ]
}

pub fn default_sources(env: EnvName) -> AssetSources {
    let (l, r, b, v) = match env {
        EnvName::MiniKangaroo => (KANGAROO_LANG, KANGAROO_RULES, KANGAROO_BLEND, KANGAROO_VALUATIONS),
        EnvName::MiniSeaquest => (SEAQUEST_LANG, SEAQUEST_RULES, SEAQUEST_BLEND, SEAQUEST_VALUATIONS),
    };
    AssetSources {
        language: l.into(),
        action_rules: r.into(),
        blend_rules: b.into(),
        valuations: v.into(),
    }
}

pub fn read_file(path: &Path) -> Result<String, AssetError> {
    std::fs::read_to_string(path).map_err(|source| AssetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl AssetSources {
    pub fn parse(&self) -> Result<Bundle, AssetError> {
        let lang = parse_language(&self.language).map_err(|source| AssetError::Parse {
            file: "language".into(),
            source,
        })?;
        let lang = Arc::new(lang);
        let action_rules = parse_rules(&self.action_rules, lang.clone()).map_err(|source| AssetError::Parse {
            file: "action rules".into(),
            source,
        })?;
        let blend_rules = parse_rules(&self.blend_rules, lang).map_err(|source| AssetError::Parse {
            file: "blend rules".into(),
            source,
        })?;
        let valuations = serde_json::from_str(&self.valuations).map_err(|source| AssetError::Json {
            file: "valuations".into(),
            source,
        })?;
        Ok(Bundle {
            action_rules,
            blend_rules,
            valuations,
        })
    }
}

/// The shipped assets of `env`, parsed.
pub fn bundle(env: EnvName) -> Result<Bundle, AssetError> {
    default_sources(env).parse()
}
