//! JSON experiment configs. Relative paths resolve against the config file's
//! directory.

use std::path::{Path, PathBuf};

use embedmap::experiments::ModelEmbeddings;
use embedmap::store::{load_embeddings, load_embeddings_csv, load_manifest, load_pairs, load_split};
use embedmap::{MapKind, MediaManifest, PairList, Result, SplitAssignment};
use serde::de::DeserializeOwned;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSource {
    pub name: String,
    pub embeddings: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub models: Vec<ModelSource>,
    pub manifest: PathBuf,
    pub pairs: PathBuf,
    pub split: PathBuf,
    #[serde(default = "all_kinds")]
    pub kinds: Vec<MapKind>,
    #[serde(default = "default_fars")]
    pub fars: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub source: ModelSource,
    pub target: ModelSource,
    pub manifest: PathBuf,
    pub pairs: PathBuf,
    pub split: PathBuf,
    #[serde(default = "fitted_kinds")]
    pub kinds: Vec<MapKind>,
    /// Defaults to powers of two up to the enrollment size, plus that size.
    pub sample_counts: Option<Vec<usize>>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_far")]
    pub far: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub unknown: ModelSource,
    pub attacker: ModelSource,
    pub manifest: PathBuf,
    pub split: PathBuf,
    pub fit_pairs: usize,
    #[serde(default = "default_attack_kind")]
    pub kind: MapKind,
    #[serde(default = "default_ranks")]
    pub ranks: Vec<usize>,
}

fn all_kinds() -> Vec<MapKind> {
    MapKind::ALL.to_vec()
}

fn fitted_kinds() -> Vec<MapKind> {
    vec![MapKind::Linear, MapKind::Rotation]
}

fn default_fars() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3]
}

fn default_repetitions() -> usize {
    3
}

fn default_far() -> f64 {
    1e-2
}

fn default_attack_kind() -> MapKind {
    MapKind::Rotation
}

fn default_ranks() -> Vec<usize> {
    vec![1, 5, 10]
}

/// Reads a config and returns it with the directory its paths are relative to.
pub fn read<C: DeserializeOwned>(path: &Path) -> Result<(C, PathBuf)> {
    let text = std::fs::read_to_string(path)?;
    let config = serde_json::from_str(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((config, base))
}

/// Loads `.csv` embeddings as text and anything else as CFEB.
pub fn load_set(path: &Path, model_id: Option<&str>) -> Result<embedmap::EmbeddingSet> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let id = model_id.ok_or_else(|| embedmap::Error::Argument("CSV embeddings need a model id".into()))?;
        load_embeddings_csv(path, id)
    } else {
        let set = load_embeddings(path)?;
        Ok(match model_id {
            Some(id) => set.with_model_id(id),
            None => set,
        })
    }
}

impl ModelSource {
    pub fn load(&self, base: &Path, split: &SplitAssignment) -> Result<ModelEmbeddings<f64>> {
        let set = load_set(&base.join(&self.embeddings), Some(&self.name))?;
        ModelEmbeddings::from_split(self.name.clone(), &set, split)
    }
}

pub struct LoadedProtocol {
    pub manifest: MediaManifest,
    pub pairs: PairList,
    pub split: SplitAssignment,
}

impl LoadedProtocol {
    pub fn load(base: &Path, manifest: &Path, pairs: &Path, split: &Path) -> Result<Self> {
        let manifest = load_manifest(base.join(manifest))?;
        let pairs = load_pairs(base.join(pairs), Some(&manifest))?;
        let split = load_split(base.join(split))?;
        Ok(LoadedProtocol { manifest, pairs, split })
    }
}
