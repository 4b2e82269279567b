//! Data model for embeddings, media manifests and template pair lists.

pub(crate) mod binary;
mod tables;

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::{norm, Real};

pub use binary::{load_embeddings, read_embeddings, save_embeddings, write_embeddings};
pub use tables::{
    load_embeddings_csv, load_manifest, load_pairs, load_split, read_embeddings_csv, read_manifest, read_pairs,
    save_manifest, save_pairs, save_split,
};

/// Embedding vectors produced by one model, keyed by media id.
///
/// Rows keep their insertion (or on-disk) order. Vectors are stored densely,
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet<T> {
    model_id: String,
    dim: usize,
    ids: Vec<String>,
    data: Vec<T>,
    index: HashMap<String, usize>,
    normalized: bool,
}

impl<T: Real> EmbeddingSet<T> {
    pub fn new(model_id: impl Into<String>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("embedding dimension must be positive".into()));
        }
        Ok(Self {
            model_id: model_id.into(),
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
            normalized: false,
        })
    }

    pub fn from_rows<I, S>(model_id: impl Into<String>, dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<T>)>,
        S: Into<String>,
    {
        let mut set = Self::new(model_id, dim)?;
        for (id, v) in rows {
            set.push(id, &v)?;
        }
        Ok(set)
    }

    /// Appends a row, enforcing dimension, finiteness and id uniqueness.
    pub fn push(&mut self, media_id: impl Into<String>, vector: &[T]) -> Result<()> {
        let media_id = media_id.into();
        if vector.len() != self.dim {
            return Err(Error::Dimension(format!(
                "media {media_id:?} has {} components, set dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        if let Some(pos) = vector.iter().position(|x| !x.is_finite()) {
            return Err(Error::Data(format!(
                "media {media_id:?} has a non-finite component at index {pos}"
            )));
        }
        if self.index.contains_key(&media_id) {
            return Err(Error::Data(format!("duplicate media id {media_id:?}")));
        }
        if self.normalized && (norm(vector).as_f64() - 1.0).abs() > T::UNIT_TOL {
            self.normalized = false;
        }
        self.index.insert(media_id.clone(), self.ids.len());
        self.ids.push(media_id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    /// Flags the set as unit-normalized after checking every row.
    pub fn into_normalized(mut self) -> Result<Self> {
        for (id, v) in self.iter() {
            let n = norm(v).as_f64();
            if (n - 1.0).abs() > T::UNIT_TOL {
                return Err(Error::Data(format!(
                    "media {id:?} has norm {n}, expected a unit vector"
                )));
            }
        }
        self.normalized = true;
        Ok(self)
    }

    /// True when every row has unit norm within [`Real::UNIT_TOL`].
    pub fn all_unit(&self) -> bool {
        self.iter()
            .all(|(_, v)| (norm(v).as_f64() - 1.0).abs() <= T::UNIT_TOL)
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, media_id: &str) -> Option<&[T]> {
        self.index.get(media_id).map(|&i| self.row(i))
    }

    pub fn contains(&self, media_id: &str) -> bool {
        self.index.contains_key(media_id)
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (&str, &[T])> + '_ {
        self.ids
            .iter()
            .zip(self.data.chunks_exact(self.dim))
            .map(|(id, v)| (id.as_str(), v))
    }

    /// Rows whose media id satisfies `keep`, in original order.
    pub fn filter(&self, mut keep: impl FnMut(&str) -> bool) -> Self {
        let mut out = Self {
            model_id: self.model_id.clone(),
            dim: self.dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
            normalized: self.normalized,
        };
        for (id, v) in self.iter() {
            if keep(id) {
                out.index.insert(id.to_owned(), out.ids.len());
                out.ids.push(id.to_owned());
                out.data.extend_from_slice(v);
            }
        }
        out
    }

    /// All rows as an `len × dim` matrix.
    pub fn to_matrix(&self) -> DMatrix<T> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.data)
    }
}

/// Per-media metadata driving template construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MediaEntry {
    pub media_id: String,
    pub subject_id: String,
    pub template_id: String,
    pub video_id: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct MediaManifest {
    entries: Vec<MediaEntry>,
    by_media: HashMap<String, usize>,
    template_subject: BTreeMap<String, String>,
}

impl MediaManifest {
    pub fn new(entries: Vec<MediaEntry>) -> Result<Self> {
        let mut by_media = HashMap::with_capacity(entries.len());
        let mut template_subject: BTreeMap<String, String> = BTreeMap::new();
        let mut video_template: HashMap<&str, &str> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if by_media.insert(e.media_id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate media id {:?}", e.media_id)));
            }
            match template_subject.get(&e.template_id) {
                Some(s) if *s != e.subject_id => {
                    return Err(Error::Consistency(format!(
                        "template {:?} belongs to subjects {:?} and {:?}",
                        e.template_id, s, e.subject_id
                    )));
                }
                Some(_) => {}
                None => {
                    template_subject.insert(e.template_id.clone(), e.subject_id.clone());
                }
            }
            if let Some(video) = &e.video_id {
                match video_template.get(video.as_str()) {
                    Some(&t) if t != e.template_id => {
                        return Err(Error::Consistency(format!(
                            "video {video:?} spans templates {t:?} and {:?}",
                            e.template_id
                        )));
                    }
                    Some(_) => {}
                    None => {
                        video_template.insert(video, &e.template_id);
                    }
                }
            }
        }
        Ok(Self { entries, by_media, template_subject })
    }

    pub fn entries(&self) -> &[MediaEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn media(&self, media_id: &str) -> Option<&MediaEntry> {
        self.by_media.get(media_id).map(|&i| &self.entries[i])
    }

    pub fn subject_of_template(&self, template_id: &str) -> Option<&str> {
        self.template_subject.get(template_id).map(String::as_str)
    }

    pub fn has_template(&self, template_id: &str) -> bool {
        self.template_subject.contains_key(template_id)
    }

    /// Template ids in lexicographic order.
    pub fn template_ids(&self) -> impl Iterator<Item = &str> + '_ {
        self.template_subject.keys().map(String::as_str)
    }
}

/// Template pairs to be scored for verification.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairList {
    pairs: Vec<(String, String)>,
}

impl PairList {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        if let Some((a, _)) = pairs.iter().find(|(a, b)| a == b) {
            return Err(Error::Data(format!("self-pair on template {a:?}")));
        }
        Ok(Self { pairs })
    }

    /// Checks that every referenced template exists in `manifest`.
    pub fn validate(&self, manifest: &MediaManifest) -> Result<()> {
        for (a, b) in &self.pairs {
            for t in [a, b] {
                if !manifest.has_template(t) {
                    return Err(Error::Reference(format!("pair references unknown template {t:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Which half of the protocol a medium belongs to: maps are fit on
/// enrollment media and evaluated on verification media.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Enrollment,
    Verification,
}

/// Media id to split, ordered by media id.
pub type SplitAssignment = BTreeMap<String, Split>;

/// Row-aligned views of two embedding sets over their shared media ids.
#[derive(Debug, Clone)]
pub struct AlignedPairs<T: Real> {
    /// Shared media ids, sorted lexicographically; row `i` of both matrices belongs to `ids[i]`.
    pub ids: Vec<String>,
    pub source: DMatrix<T>,
    pub target: DMatrix<T>,
}

impl<T: Real> AlignedPairs<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Keeps only the rows at `rows` (in the given order).
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            source: self.source.select_rows(rows),
            target: self.target.select_rows(rows),
        }
    }
}

/// Pairs up the rows of `a` and `b` that share a media id.
pub fn align_pairs<T: Real>(a: &EmbeddingSet<T>, b: &EmbeddingSet<T>) -> Result<AlignedPairs<T>> {
    let mut ids: Vec<&str> = a.ids().iter().map(String::as_str).filter(|id| b.contains(id)).collect();
    if ids.is_empty() {
        return Err(Error::Alignment(format!(
            "sets {:?} and {:?} share no media ids",
            a.model_id(),
            b.model_id()
        )));
    }
    ids.sort_unstable();
    let source = DMatrix::from_fn(ids.len(), a.dim(), |i, j| a.get(ids[i]).unwrap()[j]);
    let target = DMatrix::from_fn(ids.len(), b.dim(), |i, j| b.get(ids[i]).unwrap()[j]);
    Ok(AlignedPairs { ids: ids.into_iter().map(str::to_owned).collect(), source, target })
}
