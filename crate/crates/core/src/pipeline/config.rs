use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cnn::{CnnConfig, TrainSchedule};
use crate::encoding::{EncoderKind, EncoderParams, Normalization};
use crate::error::{Error, Result};
use crate::gmm::GmmOptions;
use crate::imaging::Polarity;
use crate::whitening::{WhiteningMode, DEFAULT_EPSILON};

/// Everything a pipeline run needs. Loaded from TOML; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; every stochastic stage derives its own seed from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dataset: DatasetSection,
    pub patches: PatchSection,
    pub cnn: CnnSection,
    pub train: TrainSection,
    pub whitening: WhiteningSection,
    pub gmm: GmmSection,
    pub encoding: EncodingSection,
    pub reuse: ReuseSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Documents used to fit the CNN, whitening and dictionary.
    pub train_manifest: Option<PathBuf>,
    /// Documents that are encoded and evaluated.
    pub test_manifest: Option<PathBuf>,
    /// Matched against the file stem; `{writer}`, `{doc}` and `{lang}` capture.
    pub id_pattern: String,
    pub polarity: Polarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchSection {
    pub stride: usize,
    pub max_patches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnSection {
    pub c1_size: usize,
    pub p1_size: usize,
    pub c2_size: usize,
    pub p2_size: usize,
    pub c1_filters: usize,
    pub c2_filters: usize,
    pub hidden_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub nesterov_momentum: f64,
    pub momentum_epochs: usize,
    pub batch_size: usize,
    /// The last this-many documents of every writer are held out from CNN
    /// training and only used to report accuracy.
    pub held_out_docs_per_writer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WhiteningSection {
    pub mode: WhiteningMode,
    pub epsilon: f64,
    /// Fitting uses a seeded subsample when more descriptors are available.
    pub max_fit_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmSection {
    pub components: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub kmeans_iters: usize,
    pub variance_floor_ratio: f64,
    pub max_fit_rows: usize,
    /// Mini-batch k-means settings, used by the VLAD encoder.
    pub minibatch_size: usize,
    pub minibatch_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingSection {
    pub encoder: EncoderKind,
    pub tau: f64,
    pub top_c: usize,
    pub renormalize_truncated: bool,
    pub power: f64,
}

/// Pre-trained artifacts to use instead of fitting on the training manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReuseSection {
    pub cnn: Option<PathBuf>,
    pub whitening: Option<PathBuf>,
    pub gmm: Option<PathBuf>,
    pub kmeans: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            dataset: DatasetSection::default(),
            patches: PatchSection::default(),
            cnn: CnnSection::default(),
            train: TrainSection::default(),
            whitening: WhiteningSection::default(),
            gmm: GmmSection::default(),
            encoding: EncodingSection::default(),
            reuse: ReuseSection::default(),
        }
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            train_manifest: None,
            test_manifest: None,
            id_pattern: "{writer}_{doc}".into(),
            polarity: Polarity::DarkInk,
        }
    }
}

impl Default for PatchSection {
    fn default() -> Self {
        Self {
            stride: 2,
            max_patches: 1000,
        }
    }
}

impl Default for CnnSection {
    fn default() -> Self {
        let b = CnnConfig::config_b(64, 1);
        Self {
            c1_size: b.c1_size,
            p1_size: b.p1_size,
            c2_size: b.c2_size,
            p2_size: b.p2_size,
            c1_filters: b.c1_filters,
            c2_filters: b.c2_filters,
            hidden_nodes: b.hidden_nodes,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let s = TrainSchedule::default();
        Self {
            learning_rate: s.learning_rate,
            epochs: s.epochs,
            nesterov_momentum: s.nesterov_momentum,
            momentum_epochs: s.momentum_epochs,
            batch_size: s.batch_size,
            held_out_docs_per_writer: 0,
        }
    }
}

impl Default for WhiteningSection {
    fn default() -> Self {
        Self {
            mode: WhiteningMode::Zca,
            epsilon: DEFAULT_EPSILON,
            max_fit_rows: 500_000,
        }
    }
}

impl Default for GmmSection {
    fn default() -> Self {
        let g = GmmOptions::default();
        Self {
            components: g.components,
            max_iters: g.max_iters,
            tol: g.tol,
            kmeans_iters: g.kmeans_iters,
            variance_floor_ratio: g.variance_floor_ratio,
            max_fit_rows: 500_000,
            minibatch_size: 1000,
            minibatch_iters: 100,
        }
    }
}

impl Default for EncodingSection {
    fn default() -> Self {
        let p = EncoderParams::default();
        Self {
            encoder: EncoderKind::SupervectorKl,
            tau: p.tau,
            top_c: p.top_c,
            renormalize_truncated: p.renormalize_truncated,
            power: p.power,
        }
    }
}

impl CnnSection {
    pub fn to_config(&self, num_classes: usize) -> CnnConfig {
        CnnConfig {
            c1_size: self.c1_size,
            p1_size: self.p1_size,
            c2_size: self.c2_size,
            p2_size: self.p2_size,
            c1_filters: self.c1_filters,
            c2_filters: self.c2_filters,
            hidden_nodes: self.hidden_nodes,
            num_classes,
        }
    }
}

impl TrainSection {
    pub fn to_schedule(&self, seed: u64) -> TrainSchedule {
        TrainSchedule {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            nesterov_momentum: self.nesterov_momentum,
            momentum_epochs: self.momentum_epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

impl GmmSection {
    pub fn to_options(&self, seed: u64) -> GmmOptions {
        GmmOptions {
            components: self.components,
            max_iters: self.max_iters,
            tol: self.tol,
            seed,
            kmeans_iters: self.kmeans_iters,
            variance_floor_ratio: self.variance_floor_ratio,
        }
    }
}

impl EncodingSection {
    pub fn to_params(&self) -> EncoderParams {
        EncoderParams {
            tau: self.tau,
            top_c: self.top_c,
            renormalize_truncated: self.renormalize_truncated,
            normalization: match self.encoder {
                EncoderKind::SupervectorSsr => Normalization::SsrL2,
                _ => Normalization::Kl,
            },
            power: self.power,
        }
    }
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back to
/// a plain string.
fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `dotted.key = value` inside `table`, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override {assignment:?} has an empty key segment")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let next = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = next
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {assignment:?}: {part} is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl PipelineConfig {
    /// Parses TOML text, applies `key=value` overrides and resolves relative
    /// paths against `base_dir`.
    pub fn from_toml_str(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut config: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {e}")))?;
        config.resolve_paths(base_dir);
        Ok(config)
    }

    /// Loads `path` (or defaults when `None`). Relative paths in the file are
    /// taken relative to the file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let base = p.parent().unwrap_or(Path::new(""));
                Self::from_toml_str(&text, overrides, base)
            }
            None => Self::from_toml_str("", overrides, Path::new("")),
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !base.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for p in [
            &mut self.dataset.train_manifest,
            &mut self.dataset.test_manifest,
            &mut self.reuse.cnn,
            &mut self.reuse.whitening,
            &mut self.reuse.gmm,
            &mut self.reuse.kmeans,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex_digest(self.to_toml().as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed of one stage: the root seed mixed with a hash of the stage name, so a
/// stage's randomness does not depend on which other stages ran.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    let digest = Sha256::digest(stage.as_bytes());
    let tag = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    splitmix64(root ^ tag)
}

pub(crate) fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
