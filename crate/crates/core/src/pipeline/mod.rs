//! Batch pipeline: configuration, dataset manifests and the stages that turn
//! document images into an evaluation report.
//!
//! Every stage reads and writes files under `out_dir`:
//!
//! ```text
//! binarized/{train,test}/<key>.png      ink masks (ink black)
//! patches/{train,test}/<key>.cafv       T x 1024 patch pixels
//! features/{train,test}/<key>.cafv      T x D CNN activations
//! whitened/{train,test}/<key>.cafv      whitened, L2-normalized activations
//! model/cnn.scnn  model/whitening.swht  model/gmm.sgmm | model/kmeans.skms
//! encoded/<key>.senc                    one global descriptor per test document
//! eval/report.txt  eval/ap.csv  eval/rankings.tsv
//! runs/<stage>.json                     config hash, seeds, input hashes
//! ```
//!
//! `<key>` is `<writer>_<doc>`.

mod config;
mod manifest;

pub use config::{
    apply_override, stage_seed, CnnSection, DatasetSection, EncodingSection, GmmSection, PatchSection,
    PipelineConfig, ReuseSection, TrainSection, WhiteningSection,
};
pub use manifest::{parse_manifest, parse_manifest_str, DatasetManifest, IdPattern, ManifestEntry};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{concatenate, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cnn::{self, CnnModel, LabeledPatches};
use crate::encoding::{encode_document, Dictionary, GlobalDescriptor};
use crate::error::{Error, Result};
use crate::format;
use crate::gmm::{fit_gmm, fit_minibatch_kmeans, GmmModel, KmeansModel};
use crate::imaging::{self, PatchSampling, PATCH_LEN};
use crate::retrieval::{self, EvalReport};
use crate::whitening::{fit_whitening, WhiteningTransform};
use config::{hex_digest, splitmix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Binarize,
    Patches,
    TrainCnn,
    Features,
    Whiten,
    TrainGmm,
    Encode,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Binarize,
        Stage::Patches,
        Stage::TrainCnn,
        Stage::Features,
        Stage::Whiten,
        Stage::TrainGmm,
        Stage::Encode,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Binarize => "binarize",
            Stage::Patches => "patches",
            Stage::TrainCnn => "train-cnn",
            Stage::Features => "features",
            Stage::Whiten => "whiten",
            Stage::TrainGmm => "train-gmm",
            Stage::Encode => "encode",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Files a stage read and wrote, for its run record.
#[derive(Default)]
struct Io {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

#[derive(Serialize)]
struct RunRecord {
    stage: &'static str,
    root_seed: u64,
    stage_seed: u64,
    config_sha256: String,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

pub struct Pipeline {
    config: PipelineConfig,
    train: Option<DatasetManifest>,
    test: Option<DatasetManifest>,
}

fn require(path: &Path, stage: Stage) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            stage: stage.name(),
        })
    }
}

/// Seed for one document within a stage.
fn doc_seed(stage_seed: u64, key: &str) -> u64 {
    let digest = hex_digest(key.as_bytes());
    let tag = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
    splitmix64(stage_seed ^ tag)
}

/// At most `max` rows, chosen uniformly with `seed`, original order kept.
fn subsample_rows(x: Array2<f64>, max: usize, seed: u64) -> Array2<f64> {
    if x.nrows() <= max {
        return x;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, x.nrows(), max).into_vec();
    idx.sort_unstable();
    x.select(Axis(0), &idx)
}

fn stack(blocks: &[Array2<f64>], dim: usize) -> Array2<f64> {
    if blocks.is_empty() {
        return Array2::zeros((0, dim));
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    concatenate(Axis(0), &views).expect("blocks share a column count")
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        let pattern = IdPattern::new(&config.dataset.id_pattern)?;
        let load = |p: &Option<PathBuf>| p.as_deref().map(|p| parse_manifest(p, &pattern)).transpose();
        let train = load(&config.dataset.train_manifest)?;
        let test = load(&config.dataset.test_manifest)?;
        Ok(Self { config, train, test })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.out_dir
    }

    pub fn manifest(&self, split: Split) -> Option<&DatasetManifest> {
        match split {
            Split::Train => self.train.as_ref(),
            Split::Test => self.test.as_ref(),
        }
    }

    fn splits(&self) -> Vec<(Split, &DatasetManifest)> {
        [Split::Train, Split::Test]
            .into_iter()
            .filter_map(|s| self.manifest(s).map(|m| (s, m)))
            .collect()
    }

    fn train_manifest(&self, stage: Stage) -> Result<&DatasetManifest> {
        self.train.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "stage {stage} needs dataset.train_manifest or a pre-trained artifact under [reuse]"
            ))
        })
    }

    fn test_manifest(&self, stage: Stage) -> Result<&DatasetManifest> {
        self.test
            .as_ref()
            .ok_or_else(|| Error::Config(format!("stage {stage} needs dataset.test_manifest")))
    }

    fn artifact(&self, dir: &str, split: Split, key: &str, ext: &str) -> PathBuf {
        self.config.out_dir.join(dir).join(split.name()).join(format!("{key}.{ext}"))
    }

    pub fn binarized_path(&self, split: Split, key: &str) -> PathBuf {
        self.artifact("binarized", split, key, "png")
    }

    pub fn patches_path(&self, split: Split, key: &str) -> PathBuf {
        self.artifact("patches", split, key, "cafv")
    }

    pub fn features_path(&self, split: Split, key: &str) -> PathBuf {
        self.artifact("features", split, key, "cafv")
    }

    pub fn whitened_path(&self, split: Split, key: &str) -> PathBuf {
        self.artifact("whitened", split, key, "cafv")
    }

    pub fn encoded_path(&self, key: &str) -> PathBuf {
        self.config.out_dir.join("encoded").join(format!("{key}.senc"))
    }

    pub fn cnn_path(&self) -> PathBuf {
        self.config.reuse.cnn.clone().unwrap_or_else(|| self.config.out_dir.join("model/cnn.scnn"))
    }

    pub fn whitening_path(&self) -> PathBuf {
        self.config
            .reuse
            .whitening
            .clone()
            .unwrap_or_else(|| self.config.out_dir.join("model/whitening.swht"))
    }

    pub fn gmm_path(&self) -> PathBuf {
        self.config.reuse.gmm.clone().unwrap_or_else(|| self.config.out_dir.join("model/gmm.sgmm"))
    }

    pub fn kmeans_path(&self) -> PathBuf {
        self.config
            .reuse
            .kmeans
            .clone()
            .unwrap_or_else(|| self.config.out_dir.join("model/kmeans.skms"))
    }

    pub fn report_path(&self) -> PathBuf {
        self.config.out_dir.join("eval/report.txt")
    }

    pub fn run_record_path(&self, stage: Stage) -> PathBuf {
        self.config.out_dir.join("runs").join(format!("{}.json", stage.name()))
    }

    /// Runs every stage in order and returns the evaluation report.
    pub fn run_all(&self) -> Result<EvalReport> {
        for stage in &Stage::ALL[..Stage::ALL.len() - 1] {
            self.run(*stage)?;
        }
        self.run_evaluate()
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        if stage == Stage::Evaluate {
            return self.run_evaluate().map(|_| ());
        }
        self.run_tracked(stage).map(|_| ())
    }

    /// Runs `evaluate` and returns its report.
    pub fn run_evaluate(&self) -> Result<EvalReport> {
        let report = self.run_tracked(Stage::Evaluate)?;
        Ok(report.expect("evaluate always produces a report"))
    }

    fn run_tracked(&self, stage: Stage) -> Result<Option<EvalReport>> {
        let seed = stage_seed(self.config.seed, stage.name());
        log::info!("stage {stage} (seed {seed:#018x})");
        let mut io = Io::default();
        let mut report = None;
        match stage {
            Stage::Binarize => self.binarize(&mut io)?,
            Stage::Patches => self.patches(seed, &mut io)?,
            Stage::TrainCnn => self.train_cnn(seed, &mut io)?,
            Stage::Features => self.features(&mut io)?,
            Stage::Whiten => self.whiten(seed, &mut io)?,
            Stage::TrainGmm => self.train_gmm(seed, &mut io)?,
            Stage::Encode => self.encode(&mut io)?,
            Stage::Evaluate => report = Some(self.evaluate(&mut io)?),
        }
        self.write_record(stage, seed, &io)?;
        Ok(report)
    }

    fn display(&self, p: &Path) -> String {
        p.strip_prefix(&self.config.out_dir)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    }

    fn write_record(&self, stage: Stage, seed: u64, io: &Io) -> Result<()> {
        let hashes: Vec<(String, String)> = io
            .inputs
            .par_iter()
            .map(|p| {
                let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
                Ok((self.display(p), hex_digest(&bytes)))
            })
            .collect::<Result<_>>()?;
        let record = RunRecord {
            stage: stage.name(),
            root_seed: self.config.seed,
            stage_seed: seed,
            config_sha256: self.config.hash(),
            inputs: hashes.into_iter().collect(),
            outputs: io.outputs.iter().map(|p| self.display(p)).collect(),
        };
        let json = serde_json::to_vec_pretty(&record).expect("record serializes");
        format::write_atomic(&self.run_record_path(stage), &json)
    }

    // ------------------------------------------------------------ stages

    fn binarize(&self, io: &mut Io) -> Result<()> {
        let polarity = self.config.dataset.polarity;
        for (split, m) in self.splits() {
            let done: Vec<(PathBuf, u8)> = m
                .entries
                .par_iter()
                .map(|e| {
                    let img = imaging::load_gray(&e.path)?;
                    let (t, bin) = imaging::binarize(&img, polarity).map_err(|err| match err {
                        Error::DegenerateHistogram(v) => Error::InvalidImage(format!(
                            "{}: single intensity {v}, nothing to binarize",
                            e.path.display()
                        )),
                        other => other,
                    })?;
                    let out = self.binarized_path(split, &e.key());
                    imaging::save_gray_png(&imaging::binary_to_gray(&bin), &out)?;
                    Ok((out, t))
                })
                .collect::<Result<_>>()?;
            let mut table = String::from("key\tthreshold\n");
            for (e, (out, t)) in m.entries.iter().zip(done) {
                table.push_str(&format!("{}\t{t}\n", e.key()));
                io.inputs.push(e.path.clone());
                io.outputs.push(out);
            }
            let tpath = self.config.out_dir.join("binarized").join(split.name()).join("thresholds.tsv");
            format::write_atomic(&tpath, table.as_bytes())?;
            io.outputs.push(tpath);
        }
        Ok(())
    }

    fn patches(&self, seed: u64, io: &mut Io) -> Result<()> {
        let p = &self.config.patches;
        for (split, m) in self.splits() {
            for e in &m.entries {
                require(&self.binarized_path(split, &e.key()), Stage::Binarize)?;
            }
            let counts: Vec<usize> = m
                .entries
                .par_iter()
                .map(|e| {
                    let key = e.key();
                    let img = imaging::load_gray(&e.path)?;
                    let mask = imaging::gray_to_binary(&imaging::load_gray(&self.binarized_path(split, &key))?);
                    if (mask.width(), mask.height()) != (img.width(), img.height()) {
                        return Err(Error::InvalidImage(format!(
                            "{}: mask size differs from the image; rerun binarize",
                            e.path.display()
                        )));
                    }
                    let contour = imaging::extract_contour(&mask);
                    let sampling = PatchSampling {
                        stride: p.stride,
                        max_patches: p.max_patches,
                        seed: doc_seed(seed, &key),
                    };
                    let patches = imaging::sample_patches(&img, &contour, &sampling, &key)?;
                    let mut x = Array2::<f64>::zeros((patches.len(), PATCH_LEN));
                    for (mut row, patch) in x.outer_iter_mut().zip(&patches) {
                        row.iter_mut().zip(&patch.pixels).for_each(|(d, &s)| *d = s as f64);
                    }
                    format::save_descriptors(&self.patches_path(split, &key), &x)?;
                    Ok(patches.len())
                })
                .collect::<Result<_>>()?;
            for (e, n) in m.entries.iter().zip(counts) {
                if n == 0 {
                    log::warn!("{}: no patch fits around the ink contour", e.path.display());
                }
                io.inputs.push(e.path.clone());
                io.inputs.push(self.binarized_path(split, &e.key()));
                io.outputs.push(self.patches_path(split, &e.key()));
            }
        }
        Ok(())
    }

    fn load_patches(&self, split: Split, key: &str) -> Result<Vec<Vec<f32>>> {
        let path = self.patches_path(split, key);
        require(&path, Stage::Patches)?;
        let x = format::load_descriptors(&path)?;
        if x.ncols() != PATCH_LEN {
            return Err(Error::Malformed {
                path: path.display().to_string(),
                reason: format!("patch rows have {} values, expected {PATCH_LEN}", x.ncols()),
            });
        }
        Ok(x.outer_iter().map(|r| r.iter().map(|&v| v as f32).collect()).collect())
    }

    fn train_cnn(&self, seed: u64, io: &mut Io) -> Result<()> {
        if let Some(p) = &self.config.reuse.cnn {
            log::info!("reusing CNN {}", p.display());
            require(p, Stage::TrainCnn)?;
            io.inputs.push(p.clone());
            return Ok(());
        }
        let m = self.train_manifest(Stage::TrainCnn)?;
        let writers = m.writers();
        let label: HashMap<&str, usize> = writers.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();

        // last documents of each writer (manifest order) go to the held-out set
        let hold = self.config.train.held_out_docs_per_writer;
        let mut remaining: HashMap<&str, usize> = HashMap::new();
        for e in &m.entries {
            *remaining.entry(e.writer_id.as_str()).or_default() += 1;
        }
        let mut data = LabeledPatches::new();
        let mut held_out = LabeledPatches::new();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for e in &m.entries {
            let n = seen.entry(e.writer_id.as_str()).or_default();
            *n += 1;
            let total = remaining[e.writer_id.as_str()];
            let is_held = hold > 0 && total > hold && *n > total - hold;
            let target = if is_held { &mut held_out } else { &mut data };
            let path = self.patches_path(Split::Train, &e.key());
            for px in self.load_patches(Split::Train, &e.key())? {
                target.push(&px, label[e.writer_id.as_str()])?;
            }
            io.inputs.push(path);
        }
        log::info!(
            "training CNN on {} patches from {} writers ({} held out)",
            data.len(),
            writers.len(),
            held_out.len()
        );
        let config = self.config.cnn.to_config(writers.len());
        let schedule = self.config.train.to_schedule(seed);
        let outcome = cnn::train(config, &schedule, &data, &held_out)?;

        let model_path = self.cnn_path();
        format::save_cnn(&model_path, &outcome.model)?;
        #[derive(Serialize)]
        struct TrainLog<'a> {
            classes: &'a [String],
            patches: usize,
            held_out_patches: usize,
            epochs: &'a [cnn::EpochStats],
        }
        let log_path = self.config.out_dir.join("model/cnn_log.json");
        let json = serde_json::to_vec_pretty(&TrainLog {
            classes: &writers,
            patches: data.len(),
            held_out_patches: held_out.len(),
            epochs: &outcome.log,
        })
        .expect("log serializes");
        format::write_atomic(&log_path, &json)?;
        io.outputs.push(model_path);
        io.outputs.push(log_path);
        Ok(())
    }

    fn features(&self, io: &mut Io) -> Result<()> {
        let model_path = self.cnn_path();
        require(&model_path, Stage::TrainCnn)?;
        let model: CnnModel = format::load_cnn(&model_path)?;
        io.inputs.push(model_path);
        for (split, m) in self.splits() {
            for e in &m.entries {
                let key = e.key();
                let patches = self.load_patches(split, &key)?;
                let x = model.extract_features(&patches)?;
                let out = self.features_path(split, &key);
                format::save_descriptors(&out, &x)?;
                io.inputs.push(self.patches_path(split, &key));
                io.outputs.push(out);
            }
        }
        Ok(())
    }

    fn load_split(&self, split: Split, m: &DatasetManifest, dir: fn(&Self, Split, &str) -> PathBuf, stage: Stage, io: &mut Io) -> Result<Vec<Array2<f64>>> {
        m.entries
            .iter()
            .map(|e| {
                let path = dir(self, split, &e.key());
                require(&path, stage)?;
                io.inputs.push(path.clone());
                format::load_descriptors(&path)
            })
            .collect()
    }

    fn whiten(&self, seed: u64, io: &mut Io) -> Result<()> {
        let cfg = &self.config.whitening;
        let tf: WhiteningTransform = if let Some(p) = &self.config.reuse.whitening {
            log::info!("reusing whitening {}", p.display());
            require(p, Stage::Whiten)?;
            io.inputs.push(p.clone());
            format::load_whitening(p)?
        } else {
            let m = self.train_manifest(Stage::Whiten)?;
            let blocks = self.load_split(Split::Train, m, Self::features_path, Stage::Features, io)?;
            let dim = blocks.first().map_or(0, |b| b.ncols());
            let x = subsample_rows(stack(&blocks, dim), cfg.max_fit_rows, seed);
            log::info!("fitting {:?} whitening on {} x {}", cfg.mode, x.nrows(), x.ncols());
            let tf = fit_whitening(x.view(), cfg.mode, cfg.epsilon)?;
            let path = self.whitening_path();
            format::save_whitening(&path, &tf)?;
            io.outputs.push(path);
            tf
        };
        for (split, m) in self.splits() {
            let blocks = self.load_split(split, m, Self::features_path, Stage::Features, io)?;
            for (e, x) in m.entries.iter().zip(blocks) {
                let out = self.whitened_path(split, &e.key());
                format::save_descriptors(&out, &tf.apply(x.view())?)?;
                io.outputs.push(out);
            }
        }
        Ok(())
    }

    fn dictionary_path(&self) -> PathBuf {
        if self.config.encoding.encoder.uses_kmeans() {
            self.kmeans_path()
        } else {
            self.gmm_path()
        }
    }

    fn train_gmm(&self, seed: u64, io: &mut Io) -> Result<()> {
        let uses_kmeans = self.config.encoding.encoder.uses_kmeans();
        let reused = if uses_kmeans {
            &self.config.reuse.kmeans
        } else {
            &self.config.reuse.gmm
        };
        if let Some(p) = reused {
            log::info!("reusing dictionary {}", p.display());
            require(p, Stage::TrainGmm)?;
            io.inputs.push(p.clone());
            return Ok(());
        }
        let cfg = &self.config.gmm;
        let m = self.train_manifest(Stage::TrainGmm)?;
        let blocks = self.load_split(Split::Train, m, Self::whitened_path, Stage::Whiten, io)?;
        let dim = blocks.first().map_or(0, |b| b.ncols());
        let x = subsample_rows(stack(&blocks, dim), cfg.max_fit_rows, seed ^ 1);
        let path = self.dictionary_path();
        if uses_kmeans {
            log::info!("fitting {}-means on {} x {}", cfg.components, x.nrows(), x.ncols());
            let km = fit_minibatch_kmeans(x.view(), cfg.components, cfg.minibatch_size, cfg.minibatch_iters, seed)?;
            format::save_kmeans(&path, &km)?;
        } else {
            log::info!("fitting {}-component GMM on {} x {}", cfg.components, x.nrows(), x.ncols());
            let fit = fit_gmm(x.view(), &cfg.to_options(seed))?;
            if !fit.converged {
                log::warn!("GMM did not converge in {} iterations", cfg.max_iters);
            }
            format::save_gmm(&path, &fit.model)?;
            let log_path = self.config.out_dir.join("model/gmm_log.json");
            let json = serde_json::to_vec_pretty(&serde_json::json!({
                "log_likelihoods": fit.log_likelihoods,
                "converged": fit.converged,
                "reseeds": fit.reseeds,
                "variance_floor": fit.variance_floor,
            }))
            .expect("log serializes");
            format::write_atomic(&log_path, &json)?;
            io.outputs.push(log_path);
        }
        io.outputs.push(path);
        Ok(())
    }

    fn encode(&self, io: &mut Io) -> Result<()> {
        let enc = &self.config.encoding;
        let m = self.test_manifest(Stage::Encode)?;
        let dict_path = self.dictionary_path();
        require(&dict_path, Stage::TrainGmm)?;
        io.inputs.push(dict_path.clone());
        enum Dict {
            G(GmmModel),
            K(KmeansModel),
        }
        let dict = if enc.encoder.uses_kmeans() {
            Dict::K(format::load_kmeans(&dict_path)?)
        } else {
            Dict::G(format::load_gmm(&dict_path)?)
        };
        for e in &m.entries {
            require(&self.whitened_path(Split::Test, &e.key()), Stage::Whiten)?;
        }
        let params = enc.to_params();
        let outputs: Vec<PathBuf> = m
            .entries
            .par_iter()
            .map(|e| {
                let key = e.key();
                let x = format::load_descriptors(&self.whitened_path(Split::Test, &key))?;
                let d = match &dict {
                    Dict::G(g) => Dictionary::Gmm(g),
                    Dict::K(k) => Dictionary::Kmeans(k),
                };
                let g = encode_document(enc.encoder, d, x.view(), &params, &key, &e.writer_id)?;
                let out = self.encoded_path(&key);
                format::save_encoding(&out, &g)?;
                Ok(out)
            })
            .collect::<Result<_>>()?;
        for e in &m.entries {
            io.inputs.push(self.whitened_path(Split::Test, &e.key()));
        }
        io.outputs.extend(outputs);
        Ok(())
    }

    fn evaluate(&self, io: &mut Io) -> Result<EvalReport> {
        let m = self.test_manifest(Stage::Evaluate)?;
        let descs: Vec<GlobalDescriptor> = m
            .entries
            .iter()
            .map(|e| {
                let path = self.encoded_path(&e.key());
                require(&path, Stage::Encode)?;
                io.inputs.push(path.clone());
                format::load_encoding(&path)
            })
            .collect::<Result<_>>()?;
        if let Some(first) = descs.first() {
            if let Some(other) = descs.iter().find(|d| d.encoder != first.encoder) {
                return Err(Error::Config(format!(
                    "documents {} and {} were encoded differently; rerun encode",
                    first.doc_id, other.doc_id
                )));
            }
        }
        let (report, rankings) = retrieval::evaluate(&descs)?;
        let encoder = descs.first().map_or(self.config.encoding.encoder, |d| d.encoder);
        let mut text = format!("encoder={}\ndocuments={}\n", encoder_name(encoder), descs.len());
        text.push_str(&report.to_key_value());
        let dir = self.config.out_dir.join("eval");
        for (name, body) in [
            ("report.txt", text),
            ("ap.csv", report.to_csv()),
            ("rankings.tsv", retrieval::dump_rankings(&rankings)),
        ] {
            let path = dir.join(name);
            format::write_atomic(&path, body.as_bytes())?;
            io.outputs.push(path);
        }
        log::info!("mAP {:.4}, hard TOP-1 {:?}", report.map, report.hard_top_k.get(&1));
        Ok(report)
    }
}

fn encoder_name(kind: crate::encoding::EncoderKind) -> String {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| format!("{kind:?}"))
}
