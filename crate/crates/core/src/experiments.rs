//! Cross-model experiments: the mapping grid, the sample-count sweep and the
//! gallery re-identification attack.
//!
//! Maps are always fit on enrollment media and evaluated on verification
//! media; every entry point checks that the two splits share no media id.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::{apply_map, fit, MapKind};
use crate::scalar::{dot, Real};
use crate::store::{align_pairs, AlignedPairs, EmbeddingSet, MediaManifest, PairList, Split, SplitAssignment};
use crate::verification::{build_templates, roc, score_pairs, RocReport, TemplateSet};

/// One model's embeddings, divided into the enrollment split (used to fit
/// maps) and the verification split (used to evaluate them).
#[derive(Debug, Clone)]
pub struct ModelEmbeddings<T: Real> {
    pub name: String,
    pub enrollment: EmbeddingSet<T>,
    pub verification: EmbeddingSet<T>,
}

impl<T: Real> ModelEmbeddings<T> {
    pub fn new(name: impl Into<String>, enrollment: EmbeddingSet<T>, verification: EmbeddingSet<T>) -> Result<Self> {
        let m = Self { name: name.into(), enrollment, verification };
        if let Some(id) = m.enrollment.ids().iter().find(|id| m.verification.contains(id)) {
            return Err(Error::Protocol(format!(
                "media {id:?} of model {:?} is in both enrollment and verification splits",
                m.name
            )));
        }
        Ok(m)
    }

    /// Divides `set` by the split file. Media without an assignment are an error.
    pub fn from_split(name: impl Into<String>, set: &EmbeddingSet<T>, split: &SplitAssignment) -> Result<Self> {
        if let Some(id) = set.ids().iter().find(|id| !split.contains_key(id.as_str())) {
            return Err(Error::Reference(format!("media {id:?} has no split assignment")));
        }
        let enrollment = set.filter(|id| split.get(id) == Some(&Split::Enrollment));
        let verification = set.filter(|id| split.get(id) == Some(&Split::Verification));
        Self::new(name, enrollment, verification)
    }
}

fn check_hygiene<T: Real>(models: &[&ModelEmbeddings<T>]) -> Result<()> {
    let fit_media: HashSet<&str> =
        models.iter().flat_map(|m| m.enrollment.ids().iter().map(String::as_str)).collect();
    for m in models {
        if let Some(id) = m.verification.ids().iter().find(|id| fit_media.contains(id.as_str())) {
            return Err(Error::Protocol(format!(
                "media {id:?} is used for fitting and for evaluation"
            )));
        }
    }
    Ok(())
}

fn check_fars(fars: &[f64]) -> Result<()> {
    if fars.is_empty() {
        return Err(Error::Argument("no FAR targets given".into()));
    }
    Ok(())
}

/// Fits `kind` on the aligned pairs (identity skips fitting), maps the
/// source's verification media and evaluates them against `target_templates`.
fn mapped_roc<T: Real>(
    kind: MapKind,
    fit_pairs: &AlignedPairs<T>,
    source: &EmbeddingSet<T>,
    target_templates: &TemplateSet<T>,
    manifest: &MediaManifest,
    pairs: &PairList,
    fars: &[f64],
) -> Result<(RocReport, usize)> {
    let (map, report) = fit(kind, &fit_pairs.source, &fit_pairs.target)?;
    let mapped = apply_map(&map, source)?;
    let templates = build_templates(&mapped.set, manifest)?.templates;
    let scored = score_pairs(&templates, target_templates, pairs, manifest)?;
    Ok((roc(&scored, fars)?, report.m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub source: String,
    pub target: String,
    pub kind: MapKind,
    /// True on the diagonal, where the model is evaluated against itself without a map.
    pub unmapped: bool,
    pub far: f64,
    pub tar: f64,
    pub threshold: f64,
    pub fit_sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub models: Vec<String>,
    pub kinds: Vec<MapKind>,
    pub far_targets: Vec<f64>,
    /// Ordered by kind, source, target, FAR.
    pub cells: Vec<GridCell>,
    /// Distinct verification runs performed (diagonal ones are shared across kinds).
    pub evaluations: usize,
}

impl GridResult {
    pub fn cell(&self, source: &str, target: &str, kind: MapKind, far: f64) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.source == source && c.target == target && c.kind == kind && c.far == far)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        write_rows(out, &self.cells)
    }
}

fn write_rows<R: Serialize>(out: impl Write, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluates every ordered model pair under every map kind.
///
/// Rows of the grid are sources and columns targets. Diagonal cells are the
/// plain single-model results and are computed once, then repeated under
/// each kind.
pub fn run_grid<T: Real>(
    models: &[ModelEmbeddings<T>],
    manifest: &MediaManifest,
    pairs: &PairList,
    kinds: &[MapKind],
    fars: &[f64],
) -> Result<GridResult> {
    check_fars(fars)?;
    if models.is_empty() {
        return Err(Error::Argument("grid needs at least one model".into()));
    }
    let kinds: Vec<MapKind> = kinds.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if kinds.is_empty() {
        return Err(Error::Argument("grid needs at least one map kind".into()));
    }
    let names: BTreeSet<&str> = models.iter().map(|m| m.name.as_str()).collect();
    if names.len() != models.len() {
        return Err(Error::Argument("model names must be unique".into()));
    }
    check_hygiene(&models.iter().collect::<Vec<_>>())?;

    let templates: Vec<TemplateSet<T>> = models
        .par_iter()
        .map(|m| Ok(build_templates(&m.verification, manifest)?.templates))
        .collect::<Result<_>>()?;
    let diagonal: Vec<RocReport> = templates
        .par_iter()
        .map(|t| roc(&score_pairs(t, t, pairs, manifest)?, fars))
        .collect::<Result<_>>()?;

    let n = models.len();
    let jobs: Vec<(usize, usize, MapKind)> = kinds
        .iter()
        .flat_map(|&k| (0..n).flat_map(move |i| (0..n).filter(move |&j| j != i).map(move |j| (i, j, k))))
        .collect();
    let off: Vec<(RocReport, usize)> = jobs
        .par_iter()
        .map(|&(i, j, kind)| {
            log::debug!("grid cell {} -> {} ({kind})", models[i].name, models[j].name);
            let fit_pairs = align_pairs(&models[i].enrollment, &models[j].enrollment)?;
            mapped_roc(kind, &fit_pairs, &models[i].verification, &templates[j], manifest, pairs, fars)
        })
        .collect::<Result<_>>()?;
    let off: BTreeMap<(MapKind, usize, usize), (RocReport, usize)> =
        jobs.iter().map(|&(i, j, k)| (k, i, j)).zip(off).collect();

    let mut cells = Vec::new();
    for &kind in &kinds {
        for i in 0..n {
            for j in 0..n {
                let (report, count, unmapped) = if i == j {
                    (&diagonal[i], 0, true)
                } else {
                    let (r, c) = &off[&(kind, i, j)];
                    (r, *c, false)
                };
                for (f, (&tar, &threshold)) in report.tar_at_far.iter().zip(&report.thresholds).enumerate() {
                    cells.push(GridCell {
                        source: models[i].name.clone(),
                        target: models[j].name.clone(),
                        kind,
                        unmapped,
                        far: fars[f],
                        tar,
                        threshold,
                        fit_sample_count: count,
                    });
                }
            }
        }
    }
    Ok(GridResult {
        models: models.iter().map(|m| m.name.clone()).collect(),
        kinds,
        far_targets: fars.to_vec(),
        cells,
        evaluations: n + jobs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub kind: MapKind,
    pub sample_count: usize,
    pub repetition: usize,
    pub seed: u64,
    pub tar: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMean {
    pub kind: MapKind,
    pub sample_count: usize,
    pub mean_tar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub source: String,
    pub target: String,
    pub far: f64,
    pub enrollment_size: usize,
    /// Ordered by sample count, repetition, kind.
    pub points: Vec<SweepPoint>,
    /// Ordered by kind, sample count.
    pub means: Vec<SweepMean>,
}

impl SweepResult {
    pub fn mean(&self, kind: MapKind, sample_count: usize) -> Option<f64> {
        self.means
            .iter()
            .find(|m| m.kind == kind && m.sample_count == sample_count)
            .map(|m| m.mean_tar)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        write_rows(out, &self.points)
    }
}

/// Powers of two up to `enrollment_size`, ending with `enrollment_size` itself.
pub fn default_sample_counts(enrollment_size: usize) -> Vec<usize> {
    let mut counts: Vec<usize> =
        std::iter::successors(Some(1usize), |&c| c.checked_mul(2)).take_while(|&c| c < enrollment_size).collect();
    if enrollment_size > 0 {
        counts.push(enrollment_size);
    }
    counts
}

/// Seed used for repetition `rep` of a sweep seeded with `seed`.
pub fn repetition_seed(seed: u64, rep: usize) -> u64 {
    seed.wrapping_add(rep as u64)
}

/// Enrollment rows drawn for one sweep point: `count` distinct indices out of
/// `available`, uniform without replacement, returned in ascending order.
pub fn draw_subset(available: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(count as u64);
    let mut idx = rand::seq::index::sample(&mut rng, available, count).into_vec();
    idx.sort_unstable();
    idx
}

/// Fits maps on random enrollment subsets of each size and evaluates them on
/// the full verification split. All kinds share the subset drawn for a given
/// (count, repetition).
#[allow(clippy::too_many_arguments)]
pub fn run_sweep<T: Real>(
    source: &ModelEmbeddings<T>,
    target: &ModelEmbeddings<T>,
    manifest: &MediaManifest,
    pairs: &PairList,
    kinds: &[MapKind],
    sample_counts: &[usize],
    repetitions: usize,
    far: f64,
    seed: u64,
) -> Result<SweepResult> {
    if repetitions == 0 {
        return Err(Error::Argument("repetitions must be at least 1".into()));
    }
    if kinds.is_empty() {
        return Err(Error::Argument("sweep needs at least one map kind".into()));
    }
    check_hygiene(&[source, target])?;
    let aligned = align_pairs(&source.enrollment, &target.enrollment)?;
    let available = aligned.len();
    if let Some(&c) = sample_counts.iter().find(|&&c| c == 0 || c > available) {
        return Err(Error::Argument(format!(
            "sample count {c} outside 1..={available} (enrollment pairs)"
        )));
    }
    if sample_counts.is_empty() {
        return Err(Error::Argument("no sample counts given".into()));
    }

    let target_templates = build_templates(&target.verification, manifest)?.templates;
    let jobs: Vec<(usize, usize)> = sample_counts
        .iter()
        .flat_map(|&c| (0..repetitions).map(move |r| (c, r)))
        .collect();
    let points: Vec<Vec<SweepPoint>> = jobs
        .par_iter()
        .map(|&(count, rep)| {
            let seed = repetition_seed(seed, rep);
            let subset = aligned.select(&draw_subset(available, count, seed));
            kinds
                .iter()
                .map(|&kind| {
                    let (report, _) = mapped_roc(
                        kind,
                        &subset,
                        &source.verification,
                        &target_templates,
                        manifest,
                        pairs,
                        &[far],
                    )?;
                    Ok(SweepPoint {
                        kind,
                        sample_count: count,
                        repetition: rep,
                        seed,
                        tar: report.tar_at_far[0],
                        threshold: report.thresholds[0],
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let points: Vec<SweepPoint> = points.into_iter().flatten().collect();

    let mut means = Vec::new();
    for &kind in kinds {
        for &count in sample_counts {
            let tars: Vec<f64> = points
                .iter()
                .filter(|p| p.kind == kind && p.sample_count == count)
                .map(|p| p.tar)
                .collect();
            means.push(SweepMean { kind, sample_count: count, mean_tar: tars.iter().sum::<f64>() / tars.len() as f64 });
        }
    }
    Ok(SweepResult {
        source: source.name.clone(),
        target: target.name.clone(),
        far,
        enrollment_size: available,
        points,
        means,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub kind: MapKind,
    pub fit_pairs: usize,
    pub gallery_size: usize,
    pub probe_count: usize,
    /// Probes whose mapped embedding was degenerate; counted as misses.
    pub excluded_probes: usize,
    pub rank_k_accuracy: BTreeMap<usize, f64>,
}

impl AttackResult {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            k: usize,
            accuracy: f64,
        }
        let rows: Vec<Row> = self.rank_k_accuracy.iter().map(|(&k, &accuracy)| Row { k, accuracy }).collect();
        write_rows(out, &rows)
    }
}

/// Re-identifies probes from an unknown model against the attacker's gallery.
///
/// A map from the unknown model's space into the attacker's is fit on the
/// paired media both sets share; each probe is mapped and the gallery
/// templates are ranked by inner product. A probe's rank is the position of
/// the best-scoring template of its true subject, with ties against other
/// subjects counted against the probe.
pub fn run_attack<T: Real>(
    unknown_paired: &EmbeddingSet<T>,
    attacker_paired: &EmbeddingSet<T>,
    probes: &EmbeddingSet<T>,
    manifest: &MediaManifest,
    gallery: &TemplateSet<T>,
    kind: MapKind,
    ks: &[usize],
) -> Result<AttackResult> {
    if unknown_paired.is_empty() || attacker_paired.is_empty() {
        return Err(Error::Argument("the attack map needs at least one paired medium".into()));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Argument("rank cutoffs must be positive".into()));
    }
    if gallery.is_empty() {
        return Err(Error::Argument("gallery is empty".into()));
    }
    let fit_pairs = align_pairs(unknown_paired, attacker_paired)?;
    if let Some(id) = probes.ids().iter().find(|id| fit_pairs.ids.binary_search(id).is_ok()) {
        return Err(Error::Protocol(format!("probe {id:?} is also in the paired fitting set")));
    }
    let gallery_subjects: HashSet<&str> = gallery.templates().iter().map(|t| t.subject_id.as_str()).collect();
    let mut probe_subjects = Vec::with_capacity(probes.len());
    for id in probes.ids() {
        let subject = manifest
            .media(id)
            .ok_or_else(|| Error::Reference(format!("probe {id:?} is not in the manifest")))?
            .subject_id
            .as_str();
        if !gallery_subjects.contains(subject) {
            return Err(Error::Protocol(format!("probe {id:?} belongs to subject {subject:?}, absent from the gallery")));
        }
        probe_subjects.push(subject);
    }

    let (map, report) = fit(kind, &fit_pairs.source, &fit_pairs.target)?;
    let mapped = apply_map(&map, probes)?;
    if mapped.set.dim() != gallery.dim() {
        return Err(Error::Dimension(format!(
            "mapped probes have dimension {}, gallery {}",
            mapped.set.dim(),
            gallery.dim()
        )));
    }
    let ranks: Vec<usize> = mapped
        .set
        .ids()
        .par_iter()
        .map(|id| {
            let v = mapped.set.get(id).unwrap();
            let subject = manifest.media(id).unwrap().subject_id.as_str();
            let scores: Vec<(f64, bool)> = gallery
                .templates()
                .iter()
                .map(|t| (dot(v, &t.vector).as_f64(), t.subject_id == subject))
                .collect();
            let best = scores.iter().filter(|s| s.1).map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
            1 + scores.iter().filter(|s| !s.1 && s.0 >= best).count()
        })
        .collect();

    let total = probes.len();
    let rank_k_accuracy = ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|&&r| r <= k).count();
            (k, hits as f64 / total as f64)
        })
        .collect();
    Ok(AttackResult {
        kind,
        fit_pairs: report.m,
        gallery_size: gallery.len(),
        probe_count: total,
        excluded_probes: mapped.excluded.len(),
        rank_k_accuracy,
    })
}

/// Inputs for [`run_attack`] carved out of two models' embeddings.
#[derive(Debug, Clone)]
pub struct AttackInputs<T: Real> {
    pub unknown_paired: EmbeddingSet<T>,
    pub attacker_paired: EmbeddingSet<T>,
    pub probes: EmbeddingSet<T>,
    pub gallery: TemplateSet<T>,
}

/// Splits data for the attack: `pair_count` enrollment media (drawn with
/// `seed`) become the paired fitting set; among verification media, each
/// subject's first template (by id) is embedded by the attacker as the
/// gallery, and the remaining media, embedded by the unknown model, are the
/// probes.
pub fn attack_inputs<T: Real>(
    unknown: &EmbeddingSet<T>,
    attacker: &EmbeddingSet<T>,
    manifest: &MediaManifest,
    split: &SplitAssignment,
    pair_count: usize,
    seed: u64,
) -> Result<AttackInputs<T>> {
    let unknown = ModelEmbeddings::from_split(unknown.model_id(), unknown, split)?;
    let attacker = ModelEmbeddings::from_split(attacker.model_id(), attacker, split)?;
    let shared = align_pairs(&unknown.enrollment, &attacker.enrollment);
    let shared_ids = match shared {
        Ok(p) => p.ids,
        Err(_) if pair_count == 0 => Vec::new(),
        Err(e) => return Err(e),
    };
    if pair_count > shared_ids.len() {
        return Err(Error::Argument(format!(
            "{pair_count} pairs requested, {} enrollment media available",
            shared_ids.len()
        )));
    }
    let chosen: HashSet<&str> =
        draw_subset(shared_ids.len(), pair_count, seed).into_iter().map(|i| shared_ids[i].as_str()).collect();

    let mut gallery_template: BTreeMap<&str, &str> = BTreeMap::new();
    for id in attacker.verification.ids() {
        let e = manifest
            .media(id)
            .ok_or_else(|| Error::Reference(format!("media {id:?} is not in the manifest")))?;
        let slot = gallery_template.entry(e.subject_id.as_str()).or_insert(e.template_id.as_str());
        if e.template_id.as_str() < *slot {
            *slot = e.template_id.as_str();
        }
    }
    let gallery_templates: HashSet<&str> = gallery_template.values().copied().collect();
    let in_gallery = |id: &str| {
        manifest.media(id).is_some_and(|e| gallery_templates.contains(e.template_id.as_str()))
    };
    let gallery_media = attacker.verification.filter(in_gallery);
    let gallery = build_templates(&gallery_media, manifest)?.templates;
    let probes = unknown.verification.filter(|id| !in_gallery(id));
    Ok(AttackInputs {
        unknown_paired: unknown.enrollment.filter(|id| chosen.contains(id)),
        attacker_paired: attacker.enrollment.filter(|id| chosen.contains(id)),
        probes,
        gallery,
    })
}
