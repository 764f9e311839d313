//! Binary training checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then the sections listed in the header, back to back. Float
//! sections are little-endian `f64` so parameters round-trip bit for bit.
//! Rule sources are embedded so a checkpoint loads without the original
//! files; their SHA-256 hashes are recorded in the header and verified.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::assets::AssetSources;
use crate::config::RunConfig;
use crate::policy::{build_policy, BlendPolicy, TENSOR_NAMES};
use crate::train::{Trainer, TrainerState};

pub const MAGIC: &[u8; 8] = b"NSRLCKPT";
pub const FORMAT_VERSION: u32 = 1;
/// Byte offset of the version field.
pub const VERSION_OFFSET: usize = 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("rule source `{name}` does not match its recorded hash")]
    Hash { name: String },
    #[error("rebuilding policy: {0}")]
    Rebuild(String),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SectionInfo {
    name: String,
    kind: SectionKind,
    bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SectionKind {
    F64,
    Text,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    iteration: u64,
    global_step: u64,
    config: RunConfig,
    rule_hashes: BTreeMap<String, String>,
    sections: Vec<SectionInfo>,
}

/// Everything needed to rebuild a [`Trainer`].
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub sources: AssetSources,
    pub tensors: Vec<Vec<f64>>,
    pub state: TrainerState,
}

fn source_fields(s: &AssetSources) -> [(&'static str, &String); 4] {
    [
        ("language", &s.language),
        ("rules", &s.action_rules),
        ("blend", &s.blend_rules),
        ("valuations", &s.valuations),
    ]
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl Checkpoint {
    pub fn from_trainer(config: &RunConfig, sources: &AssetSources, trainer: &Trainer) -> Self {
        Self {
            config: config.clone(),
            sources: sources.clone(),
            tensors: trainer.policy.tensors().iter().map(|t| t.to_vec()).collect(),
            state: trainer.state.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        let mut push = |name: String, kind: SectionKind, bytes: Vec<u8>| {
            sections.push(SectionInfo {
                name,
                kind,
                bytes: bytes.len() as u64,
            });
            payload.extend(bytes);
        };
        let f64s = |v: &[f64]| v.iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>();

        for (name, text) in source_fields(&self.sources) {
            push(format!("source.{name}"), SectionKind::Text, text.as_bytes().to_vec());
        }
        for (name, t) in TENSOR_NAMES.iter().zip(&self.tensors) {
            push(format!("tensor.{name}"), SectionKind::F64, f64s(t));
        }
        for (name, adam) in TENSOR_NAMES.iter().zip(&self.state.optim) {
            push(format!("adam_m.{name}"), SectionKind::F64, f64s(&adam.m));
            push(format!("adam_v.{name}"), SectionKind::F64, f64s(&adam.v));
        }
        let mut slim = self.state.clone();
        for a in slim.optim.iter_mut() {
            a.m.clear();
            a.v.clear();
        }
        push(
            "trainer_state".into(),
            SectionKind::Json,
            serde_json::to_vec(&slim).expect("trainer state serializes"),
        );

        let header = Header {
            version: FORMAT_VERSION,
            iteration: self.state.iteration,
            global_step: self.state.global_step,
            config: self.config.clone(),
            rule_hashes: source_fields(&self.sources)
                .iter()
                .map(|(n, t)| (n.to_string(), sha256_hex(t)))
                .collect(),
            sections,
        };
        let header = serde_json::to_vec_pretty(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend(header);
        out.extend(payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| CheckpointError::Corrupt(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version { found: version });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(corrupt("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
        if header.version != version {
            return Err(corrupt("header version disagrees with file version"));
        }
        let mut rest = &body[hlen..];
        let mut sections: BTreeMap<String, (SectionKind, &[u8])> = BTreeMap::new();
        for s in &header.sections {
            let n = s.bytes as usize;
            if rest.len() < n {
                return Err(CheckpointError::Corrupt(format!("section `{}` truncated", s.name)));
            }
            sections.insert(s.name.clone(), (s.kind, &rest[..n]));
            rest = &rest[n..];
        }
        if !rest.is_empty() {
            return Err(corrupt("trailing bytes after last section"));
        }
        let get = |name: &str, kind: SectionKind| -> Result<&[u8]> {
            match sections.get(name) {
                Some((k, b)) if *k == kind => Ok(b),
                _ => Err(CheckpointError::Corrupt(format!("missing section `{name}`"))),
            }
        };
        let text = |name: &str| -> Result<String> {
            let b = get(&format!("source.{name}"), SectionKind::Text)?;
            String::from_utf8(b.to_vec()).map_err(|_| CheckpointError::Corrupt(format!("source `{name}` is not UTF-8")))
        };
        let floats = |name: String| -> Result<Vec<f64>> {
            let b = get(&name, SectionKind::F64)?;
            if b.len() % 8 != 0 {
                return Err(CheckpointError::Corrupt(format!("section `{name}` is not a float array")));
            }
            Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };

        let sources = AssetSources {
            language: text("language")?,
            action_rules: text("rules")?,
            blend_rules: text("blend")?,
            valuations: text("valuations")?,
        };
        for (name, t) in source_fields(&sources) {
            if header.rule_hashes.get(name) != Some(&sha256_hex(t)) {
                return Err(CheckpointError::Hash { name: name.to_string() });
            }
        }
        let tensors = TENSOR_NAMES
            .iter()
            .map(|n| floats(format!("tensor.{n}")))
            .collect::<Result<Vec<_>>>()?;
        let mut state: TrainerState = serde_json::from_slice(get("trainer_state", SectionKind::Json)?)
            .map_err(|e| CheckpointError::Corrupt(format!("trainer state: {e}")))?;
        if state.optim.len() != TENSOR_NAMES.len() {
            return Err(corrupt("optimizer count mismatch"));
        }
        for (name, adam) in TENSOR_NAMES.iter().zip(state.optim.iter_mut()) {
            adam.m = floats(format!("adam_m.{name}"))?;
            adam.v = floats(format!("adam_v.{name}"))?;
        }
        if state.iteration != header.iteration || state.global_step != header.global_step {
            return Err(corrupt("header step counters disagree with trainer state"));
        }
        Ok(Self {
            config: header.config,
            sources,
            tensors,
            state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Rebuilds the policy from the embedded sources and stored tensors.
    pub fn policy(&self) -> Result<BlendPolicy> {
        let rebuild = |e: String| CheckpointError::Rebuild(e);
        let mut bundle = self.sources.parse().map_err(|e| rebuild(e.to_string()))?;
        for (k, v) in &self.config.valuation {
            bundle.valuations.apply_override(k, *v).map_err(|e| rebuild(e.to_string()))?;
        }
        let spec = self.config.env_spec().map_err(rebuild)?;
        let mut policy =
            build_policy(&bundle, &spec, self.config.blender, self.config.train.seed).map_err(|e| rebuild(e.to_string()))?;
        for (dst, src) in policy.tensors_mut().into_iter().zip(&self.tensors) {
            if dst.len() != src.len() {
                return Err(rebuild("tensor size mismatch".into()));
            }
            dst.copy_from_slice(src);
        }
        policy.force_beta = self.config.train.force_beta;
        Ok(policy)
    }

    pub fn trainer(&self) -> Result<Trainer> {
        Trainer::from_parts(self.config.train.clone(), self.policy()?, self.state.clone())
            .map_err(|e| CheckpointError::Rebuild(e.to_string()))
    }
}
