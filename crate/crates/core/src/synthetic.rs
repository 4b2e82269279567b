//! Synthetic identity-clustered embeddings for two models with a planted relation.
//!
//! Subject means are unit vectors drawn uniformly on the sphere (optionally
//! restricted to a random `intrinsic_dim`-dimensional subspace). A medium's
//! model-A embedding is `normalize(mean + σ_w·g/√dim)` with `g` standard
//! normal, so `σ_w` is the expected norm of the within-class perturbation
//! regardless of dimension. Model B is derived from A through a planted
//! rotation or linear map plus `σ_x` noise, or generated independently.
//!
//! Randomness comes from ChaCha8 keyed by `SynthSpec::seed`, with one stream per
//! purpose and (subject, medium):
//!
//! | purpose | stream id                           |
//! |---------|-------------------------------------|
//! | subject mean (model A)   | `1<<56 | subject<<28`          |
//! | medium noise (model A)   | `2<<56 | subject<<28 | medium` |
//! | medium noise (model B)   | `3<<56 | subject<<28 | medium` |
//! | subject mean (indep. B)  | `4<<56 | subject<<28`          |
//! | planted map              | `5<<56`                       |
//! | intrinsic subspace       | `6<<56`                       |
//!
//! so output is independent of how subjects are scheduled across threads.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::{MapKind, MappingMatrix};
use crate::scalar::Real;
use crate::store::{EmbeddingSet, MediaEntry, MediaManifest, PairList, Split, SplitAssignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantedKind {
    Rotation,
    Linear,
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub dim: usize,
    pub num_subjects: usize,
    pub media_per_subject: usize,
    /// When set, consecutive media of a template are grouped into videos of this many frames.
    pub frames_per_video: Option<usize>,
    pub within_class_noise: f64,
    pub cross_model_noise: f64,
    pub planted_kind: PlantedKind,
    pub seed: u64,
    /// Media of each subject are divided into this many templates.
    pub templates_per_subject: usize,
    /// Fraction of subjects (the first ones) whose media form the enrollment split.
    pub enrollment_fraction: f64,
    /// Dimension of the random subspace holding the subject means; `None` uses the full sphere.
    pub intrinsic_dim: Option<usize>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dim: 64,
            num_subjects: 200,
            media_per_subject: 10,
            frames_per_video: None,
            within_class_noise: 0.15,
            cross_model_noise: 0.05,
            planted_kind: PlantedKind::Rotation,
            seed: 0,
            templates_per_subject: 2,
            enrollment_fraction: 0.5,
            intrinsic_dim: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Argument(m.to_owned()));
        if self.dim < 2 {
            return fail("dim must be at least 2");
        }
        if self.num_subjects == 0 || self.media_per_subject == 0 {
            return fail("subject and media counts must be at least 1");
        }
        if self.num_subjects >= 1 << 28 || self.media_per_subject >= 1 << 28 {
            return fail("subject and media counts must be below 2^28");
        }
        if self.frames_per_video == Some(0) {
            return fail("frames_per_video must be at least 1");
        }
        if !(self.within_class_noise >= 0.0 && self.within_class_noise.is_finite())
            || !(self.cross_model_noise >= 0.0 && self.cross_model_noise.is_finite())
        {
            return fail("noise levels must be finite and non-negative");
        }
        if self.templates_per_subject == 0 || self.templates_per_subject > self.media_per_subject {
            return fail("templates_per_subject must be between 1 and media_per_subject");
        }
        if !(0.0..=1.0).contains(&self.enrollment_fraction) {
            return fail("enrollment_fraction must lie in [0, 1]");
        }
        if let Some(r) = self.intrinsic_dim {
            if r == 0 || r > self.dim {
                return fail("intrinsic_dim must be between 1 and dim");
            }
        }
        Ok(())
    }

    pub fn enrollment_subjects(&self) -> usize {
        (self.num_subjects as f64 * self.enrollment_fraction).round() as usize
    }
}

/// Two models' embeddings over the same media, plus everything needed to evaluate them.
#[derive(Debug, Clone)]
pub struct World<T: Real> {
    pub a: EmbeddingSet<T>,
    pub b: EmbeddingSet<T>,
    pub manifest: MediaManifest,
    /// Every unordered pair of distinct verification templates.
    pub pairs: PairList,
    pub split: SplitAssignment,
    /// The planted A→B map; `None` for independent models.
    pub ground_truth: Option<MappingMatrix<T>>,
}

const MEAN_A: u64 = 1;
const NOISE_A: u64 = 2;
const NOISE_B: u64 = 3;
const MEAN_B: u64 = 4;
const PLANTED: u64 = 5;
const SUBSPACE: u64 = 6;

fn stream(seed: u64, purpose: u64, subject: usize, medium: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose << 56 | (subject as u64) << 28 | medium as u64);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn perturbed(base: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let scale = sigma / (base.len() as f64).sqrt();
    let g = gaussian(rng, base.len());
    normalized(base.iter().zip(g).map(|(b, g)| b + scale * g).collect())
}

fn row_times(v: &[f64], m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols()).map(|j| v.iter().enumerate().map(|(i, x)| x * m[(i, j)]).sum()).collect()
}

/// Haar-distributed orthogonal matrix with determinant +1.
fn haar_rotation(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

/// Haar-uniform random rotation of the given dimension.
pub fn random_rotation<T: Real>(dim: usize, seed: u64) -> Result<MappingMatrix<T>> {
    if dim < 2 {
        return Err(Error::Argument("random rotation needs dim >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = haar_rotation(dim, &mut rng);
    MappingMatrix::new(MapKind::Rotation, q.map(T::lit), "", "")
}

/// Full-rank map with singular values evenly spaced on `[1, 10]`.
fn planted_linear(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let left = haar_rotation(dim, rng);
    let right = haar_rotation(dim, rng);
    let spread = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(dim, |i, _| {
        1.0 + 9.0 * i as f64 / (dim - 1) as f64
    }));
    left * spread * right
}

struct SubjectMedia {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

pub fn subject_id(s: usize) -> String {
    format!("s{s:05}")
}

pub fn template_id(s: usize, t: usize) -> String {
    format!("s{s:05}_t{t:02}")
}

pub fn media_id(s: usize, m: usize) -> String {
    format!("s{s:05}_m{m:04}")
}

/// Index of the template that medium `m` of a subject belongs to.
fn template_of(spec: &SynthSpec, m: usize) -> usize {
    m * spec.templates_per_subject / spec.media_per_subject
}

pub fn generate_world<T: Real>(spec: &SynthSpec) -> Result<World<T>> {
    spec.validate()?;
    let d = spec.dim;
    let seed = spec.seed;

    let planted = match spec.planted_kind {
        PlantedKind::Rotation => Some(haar_rotation(d, &mut stream(seed, PLANTED, 0, 0))),
        PlantedKind::Linear => Some(planted_linear(d, &mut stream(seed, PLANTED, 0, 0))),
        PlantedKind::Independent => None,
    };
    let basis = spec
        .intrinsic_dim
        .filter(|&r| r < d)
        .map(|r| haar_rotation(d, &mut stream(seed, SUBSPACE, 0, 0)).rows(0, r).into_owned());
    let draw_mean = |rng: &mut ChaCha8Rng| match &basis {
        Some(b) => normalized(row_times(&gaussian(rng, b.nrows()), b)),
        None => normalized(gaussian(rng, d)),
    };

    let subjects: Vec<SubjectMedia> = (0..spec.num_subjects)
        .into_par_iter()
        .map(|s| {
            let mean_a = draw_mean(&mut stream(seed, MEAN_A, s, 0));
            let mean_b = planted.is_none().then(|| draw_mean(&mut stream(seed, MEAN_B, s, 0)));
            let mut out = SubjectMedia { a: Vec::new(), b: Vec::new() };
            for m in 0..spec.media_per_subject {
                let a = perturbed(&mean_a, spec.within_class_noise, &mut stream(seed, NOISE_A, s, m));
                let mut noise_b = stream(seed, NOISE_B, s, m);
                let b = match (&planted, &mean_b) {
                    (Some(map), _) => perturbed(&row_times(&a, map), spec.cross_model_noise, &mut noise_b),
                    (None, Some(mean)) => perturbed(mean, spec.within_class_noise, &mut noise_b),
                    (None, None) => unreachable!(),
                };
                out.a.push(a);
                out.b.push(b);
            }
            out
        })
        .collect();

    let mut a = EmbeddingSet::new("A", d)?;
    let mut b = EmbeddingSet::new("B", d)?;
    let mut entries = Vec::new();
    let mut split = SplitAssignment::new();
    let n_enroll = spec.enrollment_subjects();
    let to_t = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
    for (s, media) in subjects.iter().enumerate() {
        let which = if s < n_enroll { Split::Enrollment } else { Split::Verification };
        let mut videos: BTreeMap<usize, usize> = BTreeMap::new();
        for m in 0..spec.media_per_subject {
            let id = media_id(s, m);
            a.push(id.clone(), &to_t(&media.a[m]))?;
            b.push(id.clone(), &to_t(&media.b[m]))?;
            let t = template_of(spec, m);
            let video_id = spec.frames_per_video.map(|k| {
                let pos = videos.entry(t).or_insert(0);
                let v = *pos / k;
                *pos += 1;
                format!("{}_v{v:03}", template_id(s, t))
            });
            entries.push(MediaEntry {
                media_id: id.clone(),
                subject_id: subject_id(s),
                template_id: template_id(s, t),
                video_id,
            });
            split.insert(id, which);
        }
    }
    let manifest = MediaManifest::new(entries)?;

    let verification_templates: Vec<String> = (n_enroll..spec.num_subjects)
        .flat_map(|s| (0..spec.templates_per_subject).map(move |t| template_id(s, t)))
        .collect();
    let mut pairs = Vec::new();
    for (i, ta) in verification_templates.iter().enumerate() {
        for tb in &verification_templates[i + 1..] {
            pairs.push((ta.clone(), tb.clone()));
        }
    }

    let ground_truth = match (spec.planted_kind, planted) {
        (PlantedKind::Rotation, Some(m)) => Some(MappingMatrix::new(MapKind::Rotation, m.map(T::lit), "A", "B")?),
        (PlantedKind::Linear, Some(m)) => Some(MappingMatrix::new(MapKind::Linear, m.map(T::lit), "A", "B")?),
        _ => None,
    };

    Ok(World {
        a: a.into_normalized()?,
        b: b.into_normalized()?,
        manifest,
        pairs: PairList::new(pairs)?,
        split,
        ground_truth,
    })
}
