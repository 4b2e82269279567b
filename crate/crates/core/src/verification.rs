//! Template-based 1:1 verification: aggregate media into templates, score
//! template pairs by inner product, and read TAR at fixed FAR off the ROC.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::DEGENERATE_NORM;
use crate::scalar::{dot, norm, Real};
use crate::store::{EmbeddingSet, MediaManifest, PairList};

/// FAR operating points reported by default.
pub const DEFAULT_FARS: [f64; 6] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

#[derive(Debug, Clone, PartialEq)]
pub struct Template<T> {
    pub template_id: String,
    pub subject_id: String,
    pub vector: Vec<T>,
}

/// Unit-length template vectors from one model, ordered by template id.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet<T> {
    model_id: String,
    dim: usize,
    templates: Vec<Template<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> TemplateSet<T> {
    pub fn new(model_id: impl Into<String>, dim: usize, templates: Vec<Template<T>>) -> Result<Self> {
        let mut index = HashMap::with_capacity(templates.len());
        for (i, t) in templates.iter().enumerate() {
            if t.vector.len() != dim {
                return Err(Error::Dimension(format!(
                    "template {:?} has {} components, expected {dim}",
                    t.template_id,
                    t.vector.len()
                )));
            }
            let n = norm(&t.vector).as_f64();
            if !n.is_finite() || (n - 1.0).abs() > T::UNIT_TOL {
                return Err(Error::Data(format!("template {:?} has norm {n}", t.template_id)));
            }
            if index.insert(t.template_id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate template id {:?}", t.template_id)));
            }
        }
        Ok(Self { model_id: model_id.into(), dim, templates, index })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn templates(&self) -> &[Template<T>] {
        &self.templates
    }

    pub fn get(&self, template_id: &str) -> Option<&Template<T>> {
        self.index.get(template_id).map(|&i| &self.templates[i])
    }

    /// Keeps the templates accepted by `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&Template<T>) -> bool) -> Self {
        let templates: Vec<_> = self.templates.iter().filter(|t| keep(t)).cloned().collect();
        let index = templates.iter().enumerate().map(|(i, t)| (t.template_id.clone(), i)).collect();
        Self { model_id: self.model_id.clone(), dim: self.dim, templates, index }
    }
}

#[derive(Debug, Clone)]
pub struct TemplateBuild<T> {
    pub templates: TemplateSet<T>,
    /// Templates whose aggregated feature vanished; excluded from `templates`.
    pub degenerate: Vec<String>,
}

#[derive(Default)]
struct Members<'a, T> {
    images: BTreeMap<&'a str, &'a [T]>,
    videos: BTreeMap<&'a str, BTreeMap<&'a str, &'a [T]>>,
}

fn unit<T: Real>(v: &[T]) -> Option<Vec<T>> {
    let n = norm(v);
    (n >= T::lit(DEGENERATE_NORM)).then(|| v.iter().map(|&x| x / n).collect())
}

fn add_into<T: Real>(acc: &mut [T], v: &[T]) {
    acc.iter_mut().zip(v).for_each(|(a, &b)| *a += b);
}

/// Aggregates media embeddings into templates.
///
/// Each medium is normalized; frames of one video are averaged; the template
/// is the normalized sum of its image features and video averages. Media are
/// visited in media-id order, so the result does not depend on row order.
pub fn build_templates<T: Real>(set: &EmbeddingSet<T>, manifest: &MediaManifest) -> Result<TemplateBuild<T>> {
    let mut groups: BTreeMap<&str, (&str, Members<'_, T>)> = BTreeMap::new();
    for (media_id, v) in set.iter() {
        let entry = manifest
            .media(media_id)
            .ok_or_else(|| Error::Reference(format!("media {media_id:?} is not in the manifest")))?;
        let (_, members) = groups
            .entry(entry.template_id.as_str())
            .or_insert_with(|| (entry.subject_id.as_str(), Members { images: BTreeMap::new(), videos: BTreeMap::new() }));
        match &entry.video_id {
            Some(video) => {
                members.videos.entry(video.as_str()).or_default().insert(media_id, v);
            }
            None => {
                members.images.insert(media_id, v);
            }
        }
    }

    let dim = set.dim();
    let built: Vec<(String, String, Option<Vec<T>>)> = groups
        .into_par_iter()
        .map(|(template_id, (subject_id, members))| {
            let mut sum = vec![T::zero(); dim];
            for v in members.images.values() {
                if let Some(u) = unit(v) {
                    add_into(&mut sum, &u);
                }
            }
            for frames in members.videos.values() {
                let mut avg = vec![T::zero(); dim];
                let mut count = 0usize;
                for v in frames.values() {
                    if let Some(u) = unit(v) {
                        add_into(&mut avg, &u);
                        count += 1;
                    }
                }
                if count > 0 {
                    let c = T::from_usize(count).unwrap();
                    avg.iter_mut().for_each(|x| *x /= c);
                    add_into(&mut sum, &avg);
                }
            }
            (template_id.to_owned(), subject_id.to_owned(), unit(&sum))
        })
        .collect();

    let mut templates = Vec::with_capacity(built.len());
    let mut degenerate = Vec::new();
    for (template_id, subject_id, vector) in built {
        match vector {
            Some(vector) => templates.push(Template { template_id, subject_id, vector }),
            None => degenerate.push(template_id),
        }
    }
    Ok(TemplateBuild { templates: TemplateSet::new(set.model_id(), dim, templates)?, degenerate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub template_id_a: String,
    pub template_id_b: String,
    pub score: f64,
    pub genuine: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredPairs {
    pub pairs: Vec<ScoredPair>,
    /// Pairs skipped because a side had no (non-degenerate) template.
    pub dropped: usize,
}

impl ScoredPairs {
    pub fn genuine_scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.pairs.iter().filter(|p| p.genuine).map(|p| p.score)
    }

    pub fn impostor_scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.pairs.iter().filter(|p| !p.genuine).map(|p| p.score)
    }

    /// Writes `template_id_a,template_id_b,score,genuine` CSV.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for p in &self.pairs {
            w.serialize(p)?;
        }
        if self.pairs.is_empty() {
            w.write_record(["template_id_a", "template_id_b", "score", "genuine"])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores each pair as `⟨a[id_a], b[id_b]⟩`.
///
/// Side `a` of every pair is looked up in `a` and side `b` in `b`, so the two
/// template sets may come from different models. Ids known to the manifest
/// but missing from a template set are dropped and counted.
pub fn score_pairs<T: Real>(
    a: &TemplateSet<T>,
    b: &TemplateSet<T>,
    pairs: &PairList,
    manifest: &MediaManifest,
) -> Result<ScoredPairs> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!(
            "template sets have dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let scored: Vec<Option<ScoredPair>> = pairs
        .pairs()
        .par_iter()
        .map(|(ia, ib)| {
            let subject_a = manifest
                .subject_of_template(ia)
                .ok_or_else(|| Error::Reference(format!("unknown template {ia:?}")))?;
            let subject_b = manifest
                .subject_of_template(ib)
                .ok_or_else(|| Error::Reference(format!("unknown template {ib:?}")))?;
            let (Some(ta), Some(tb)) = (a.get(ia), b.get(ib)) else {
                return Ok(None);
            };
            let score = dot(&ta.vector, &tb.vector).as_f64().clamp(-1.0, 1.0);
            Ok(Some(ScoredPair {
                template_id_a: ia.clone(),
                template_id_b: ib.clone(),
                score,
                genuine: subject_a == subject_b,
            }))
        })
        .collect::<Result<_>>()?;
    let dropped = scored.iter().filter(|p| p.is_none()).count();
    Ok(ScoredPairs { pairs: scored.into_iter().flatten().collect(), dropped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocReport {
    pub far_targets: Vec<f64>,
    pub tar_at_far: Vec<f64>,
    /// Acceptance thresholds (`score >= threshold` accepts), one per FAR target.
    pub thresholds: Vec<f64>,
    pub genuine_count: usize,
    pub impostor_count: usize,
    pub dropped_pairs: usize,
}

/// Largest impostor count `k` with `k / n <= far`.
fn allowed_false_accepts(far: f64, n: usize) -> usize {
    let mut k = ((far * n as f64).floor() as usize).min(n);
    while k < n && (k + 1) as f64 / n as f64 <= far {
        k += 1;
    }
    while k > 0 && k as f64 / n as f64 > far {
        k -= 1;
    }
    k
}

/// TAR at each requested FAR.
///
/// The threshold for a target `f` is the smallest impostor score `t` with
/// `#{impostor ≥ t} / n_impostor ≤ f`; when even the top impostor score
/// admits too many, the threshold sits just above it. TAR is then
/// `#{genuine ≥ t} / n_genuine`, counted exactly.
pub fn roc(scored: &ScoredPairs, far_targets: &[f64]) -> Result<RocReport> {
    if far_targets.is_empty() {
        return Err(Error::Argument("no FAR targets given".into()));
    }
    if let Some(f) = far_targets.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::Argument(format!("FAR target {f} is outside (0, 1]")));
    }
    let mut impostor: Vec<f64> = scored.impostor_scores().collect();
    let mut genuine: Vec<f64> = scored.genuine_scores().collect();
    if impostor.is_empty() {
        return Err(Error::Protocol("no impostor pairs to calibrate FAR".into()));
    }
    if genuine.is_empty() {
        return Err(Error::Protocol("no genuine pairs to measure TAR".into()));
    }
    impostor.sort_unstable_by(|x, y| y.total_cmp(x));
    genuine.sort_unstable_by(|x, y| y.total_cmp(x));
    let n = impostor.len();

    let mut thresholds = Vec::with_capacity(far_targets.len());
    let mut tars = Vec::with_capacity(far_targets.len());
    for &far in far_targets {
        let k = allowed_false_accepts(far, n);
        // Impostors strictly above the (k+1)-th highest score may all be accepted.
        let p = if k == n { n } else { impostor.partition_point(|&s| s > impostor[k]) };
        let t = if p == 0 { impostor[0].next_up() } else { impostor[p - 1] };
        let accepted = genuine.partition_point(|&s| s >= t);
        thresholds.push(t);
        tars.push(accepted as f64 / genuine.len() as f64);
    }
    Ok(RocReport {
        far_targets: far_targets.to_vec(),
        tar_at_far: tars,
        thresholds,
        genuine_count: genuine.len(),
        impostor_count: n,
        dropped_pairs: scored.dropped,
    })
}

/// Builds templates for both sides, scores `pairs` and runs the ROC.
pub fn evaluate<T: Real>(
    side_a: &EmbeddingSet<T>,
    side_b: &EmbeddingSet<T>,
    manifest: &MediaManifest,
    pairs: &PairList,
    far_targets: &[f64],
) -> Result<(ScoredPairs, RocReport)> {
    let ta = build_templates(side_a, manifest)?.templates;
    let tb = build_templates(side_b, manifest)?.templates;
    let scored = score_pairs(&ta, &tb, pairs, manifest)?;
    let report = roc(&scored, far_targets)?;
    Ok((scored, report))
}

#[cfg(test)]
mod tests;
