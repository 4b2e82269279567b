use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::mapping::apply_map;
use crate::store::MediaEntry;
use crate::synthetic::random_rotation;

fn entry(m: &str, s: &str, t: &str, v: Option<&str>) -> MediaEntry {
    MediaEntry { media_id: m.into(), subject_id: s.into(), template_id: t.into(), video_id: v.map(Into::into) }
}

fn one_template(rows: &[(&str, Vec<f64>, Option<&str>)]) -> Vec<f64> {
    let manifest =
        MediaManifest::new(rows.iter().map(|(m, _, v)| entry(m, "s", "t", *v)).collect()).unwrap();
    let set = EmbeddingSet::from_rows("A", 2, rows.iter().map(|(m, v, _)| (*m, v.clone()))).unwrap();
    let built = build_templates(&set, &manifest).unwrap();
    built.templates.get("t").unwrap().vector.clone()
}

#[test]
fn single_image_template() {
    assert_eq!(one_template(&[("a", vec![3.0, 0.0], None)]), [1.0, 0.0]);
}

#[test]
fn two_image_template() {
    let v = one_template(&[("a", vec![1.0, 0.0], None), ("b", vec![0.0, 1.0], None)]);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    assert!((v[0] - h).abs() < 1e-15 && (v[1] - h).abs() < 1e-15);
}

#[test]
fn video_frames_are_averaged_before_summing() {
    // frames (1,0),(0,1) of one video average to (0.5,0.5); adding image (1,0)
    // gives (1.5,0.5), which normalizes to (3,1)/√10.
    let v = one_template(&[
        ("f1", vec![1.0, 0.0], Some("v1")),
        ("f2", vec![0.0, 2.0], Some("v1")),
        ("img", vec![5.0, 0.0], None),
    ]);
    let expected = [3.0 / 10f64.sqrt(), 1.0 / 10f64.sqrt()];
    assert!((v[0] - expected[0]).abs() < 1e-15 && (v[1] - expected[1]).abs() < 1e-15);
}

#[test]
fn missing_media_is_reference_error() {
    let manifest = MediaManifest::new(vec![entry("a", "s", "t", None)]).unwrap();
    let set = EmbeddingSet::from_rows("A", 2, [("zzz", vec![1.0, 0.0])]).unwrap();
    assert!(matches!(build_templates(&set, &manifest), Err(Error::Reference(_))));
}

#[test]
fn cancelling_media_make_a_degenerate_template() {
    let manifest = MediaManifest::new(vec![
        entry("a", "s1", "t1", None),
        entry("b", "s1", "t1", None),
        entry("c", "s2", "t2", None),
    ])
    .unwrap();
    let set = EmbeddingSet::from_rows(
        "A",
        2,
        [("a", vec![1.0, 0.0]), ("b", vec![-1.0, 0.0]), ("c", vec![0.0, 1.0])],
    )
    .unwrap();
    let built = build_templates(&set, &manifest).unwrap();
    assert_eq!(built.degenerate, ["t1"]);
    assert_eq!(built.templates.len(), 1);

    let pairs = PairList::new(vec![("t1".into(), "t2".into()), ("t2".into(), "t2x".into())]).unwrap();
    let err = score_pairs(&built.templates, &built.templates, &pairs, &manifest).unwrap_err();
    assert!(matches!(err, Error::Reference(_)));
    let pairs = PairList::new(vec![("t1".into(), "t2".into())]).unwrap();
    let scored = score_pairs(&built.templates, &built.templates, &pairs, &manifest).unwrap();
    assert_eq!((scored.pairs.len(), scored.dropped), (0, 1));
}

fn random_world(seed: u64, subjects: usize, per: usize, dim: usize) -> (EmbeddingSet<f64>, MediaManifest) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    let mut rows = Vec::new();
    for s in 0..subjects {
        for m in 0..per {
            let id = format!("s{s}_m{m}");
            let video = (m % 3 == 0).then(|| format!("s{s}_v"));
            entries.push(entry(&id, &format!("s{s}"), &format!("t{s}"), video.as_deref()));
            rows.push((id, (0..dim).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>()));
        }
    }
    (EmbeddingSet::from_rows("A", dim, rows).unwrap(), MediaManifest::new(entries).unwrap())
}

#[test]
fn templates_ignore_row_order() {
    let (set, manifest) = random_world(1, 6, 7, 5);
    let mut rows: Vec<(String, Vec<f64>)> = set.iter().map(|(id, v)| (id.to_owned(), v.to_vec())).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(2));
    let shuffled = EmbeddingSet::from_rows("A", 5, rows).unwrap();
    let a = build_templates(&set, &manifest).unwrap().templates;
    let b = build_templates(&shuffled, &manifest).unwrap().templates;
    for (ta, tb) in a.templates().iter().zip(b.templates()) {
        assert_eq!(ta.template_id, tb.template_id);
        for (x, y) in ta.vector.iter().zip(&tb.vector) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn scores_identical_and_orthogonal() {
    let manifest =
        MediaManifest::new(vec![entry("a", "s1", "t1", None), entry("b", "s2", "t2", None), entry("c", "s1", "t3", None)])
            .unwrap();
    let set = EmbeddingSet::from_rows("A", 2, [("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0]), ("c", vec![2.0, 0.0])])
        .unwrap();
    let t = build_templates(&set, &manifest).unwrap().templates;
    let pairs = PairList::new(vec![("t1".into(), "t3".into()), ("t1".into(), "t2".into())]).unwrap();
    let scored = score_pairs(&t, &t, &pairs, &manifest).unwrap();
    assert_eq!(scored.pairs[0].score, 1.0);
    assert!(scored.pairs[0].genuine);
    assert_eq!(scored.pairs[1].score, 0.0);
    assert!(!scored.pairs[1].genuine);
}

#[test]
fn scoring_symmetry_and_rotation_invariance() {
    let (set, manifest) = random_world(3, 8, 4, 6);
    let t = build_templates(&set, &manifest).unwrap().templates;
    let ids: Vec<String> = (0..8).map(|s| format!("t{s}")).collect();
    let forward: Vec<(String, String)> =
        ids.iter().flat_map(|a| ids.iter().filter(move |b| *b != a).map(move |b| (a.clone(), b.clone()))).collect();
    let pairs = PairList::new(forward.clone()).unwrap();
    let swapped = PairList::new(forward.iter().map(|(a, b)| (b.clone(), a.clone())).collect()).unwrap();

    let r = random_rotation::<f64>(6, 4).unwrap();
    let rotated = build_templates(&apply_map(&r, &set).unwrap().set, &manifest).unwrap().templates;

    let s1 = score_pairs(&t, &rotated, &pairs, &manifest).unwrap();
    let s2 = score_pairs(&rotated, &t, &swapped, &manifest).unwrap();
    for (p, q) in s1.pairs.iter().zip(&s2.pairs) {
        assert_eq!(p.score, q.score);
    }
    let plain = score_pairs(&t, &t, &pairs, &manifest).unwrap();
    let both = score_pairs(&rotated, &rotated, &pairs, &manifest).unwrap();
    for (p, q) in plain.pairs.iter().zip(&both.pairs) {
        assert!((p.score - q.score).abs() < 1e-8);
    }
}

fn scored(genuine: &[f64], impostor: &[f64]) -> ScoredPairs {
    let pair = |i: usize, s: f64, g: bool| ScoredPair {
        template_id_a: format!("a{i}"),
        template_id_b: format!("b{i}"),
        score: s,
        genuine: g,
    };
    let mut pairs: Vec<ScoredPair> = genuine.iter().enumerate().map(|(i, &s)| pair(i, s, true)).collect();
    pairs.extend(impostor.iter().enumerate().map(|(i, &s)| pair(i + genuine.len(), s, false)));
    ScoredPairs { pairs, dropped: 0 }
}

/// Sweeps every impostor score (plus one step above the maximum) as a
/// threshold and keeps the lowest one whose FAR meets the target.
fn brute_force(genuine: &[f64], impostor: &[f64], far: f64) -> (f64, f64) {
    let top = impostor.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut candidates: Vec<f64> = impostor.to_vec();
    candidates.push(top.next_up());
    let mut best: Option<f64> = None;
    for &t in &candidates {
        let fa = impostor.iter().filter(|&&s| s >= t).count();
        if fa as f64 / impostor.len() as f64 <= far && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    }
    let t = best.unwrap();
    let ta = genuine.iter().filter(|&&s| s >= t).count();
    (t, ta as f64 / genuine.len() as f64)
}

#[test]
fn roc_hand_example() {
    let s = scored(&[0.9, 0.8, 0.3], &[0.7, 0.2, 0.1]);
    let r = roc(&s, &[0.34]).unwrap();
    assert_eq!(r.thresholds, [0.7]);
    assert_eq!(r.tar_at_far, [2.0 / 3.0]);
    assert_eq!(brute_force(&[0.9, 0.8, 0.3], &[0.7, 0.2, 0.1], 0.34), (0.7, 2.0 / 3.0));
    assert_eq!((r.genuine_count, r.impostor_count), (3, 3));
}

#[test]
fn roc_perfect_separation() {
    let s = scored(&[1.0; 20], &[0.0; 50]);
    let r = roc(&s, &[1e-3]).unwrap();
    assert_eq!(r.tar_at_far, [1.0]);
}

#[test]
fn roc_exchangeable_scores_give_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let genuine: Vec<f64> = (0..2000).map(|_| rng.random()).collect();
    let impostor: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
    let r = roc(&scored(&genuine, &impostor), &[0.1]).unwrap();
    let se = (0.1f64 * 0.9 / 2000.0).sqrt();
    assert!((r.tar_at_far[0] - 0.1).abs() <= 3.0 * se, "{}", r.tar_at_far[0]);
}

#[test]
fn roc_errors() {
    assert!(matches!(roc(&scored(&[0.5], &[]), &[0.1]), Err(Error::Protocol(_))));
    assert!(matches!(roc(&scored(&[0.5], &[0.1]), &[]), Err(Error::Argument(_))));
    assert!(matches!(roc(&scored(&[0.5], &[0.1]), &[0.0]), Err(Error::Argument(_))));
    assert!(matches!(roc(&scored(&[0.5], &[0.1]), &[1.5]), Err(Error::Argument(_))));
}

#[test]
fn roc_matches_brute_force_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..30 {
        let n = rng.random_range(2..400);
        let quant = rng.random_range(2..30) as f64;
        let mut genuine = Vec::new();
        let mut impostor = Vec::new();
        for _ in 0..n {
            let g = rng.random_bool(0.3);
            let s: f64 = ((rng.random::<f64>() + if g { 0.3 } else { 0.0 }) * quant).round() / quant;
            if g { genuine.push(s) } else { impostor.push(s) }
        }
        if genuine.is_empty() || impostor.is_empty() {
            continue;
        }
        let fars = [1.0, 0.5, 0.1, 0.05, 0.01, 1e-3];
        let r = roc(&scored(&genuine, &impostor), &fars).unwrap();
        for (i, &f) in fars.iter().enumerate() {
            assert_eq!((r.thresholds[i], r.tar_at_far[i]), brute_force(&genuine, &impostor, f));
        }
        assert!(r.tar_at_far.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn scores_csv() {
    let s = scored(&[0.5], &[0.25]);
    let mut out = Vec::new();
    s.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text, "template_id_a,template_id_b,score,genuine\na0,b0,0.5,true\na1,b1,0.25,false\n");
}
