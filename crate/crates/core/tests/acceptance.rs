//! Acceptance criteria, one report line each. Runs with its own harness so the
//! lines are printed whether or not a criterion fails.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use embedmap::experiments::{attack_inputs, run_attack, run_grid, run_sweep, ModelEmbeddings};
use embedmap::synthetic::{generate_world, PlantedKind, SynthSpec, World};
use embedmap::verification::{evaluate, ScoredPair};
use embedmap::{align_pairs, fit_linear, fit_rotation, roc, MapKind, ScoredPairs};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok { Ok(detail) } else { Err(detail) }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn objective(x: &DMatrix<f64>, y: &DMatrix<f64>, m: &DMatrix<f64>) -> f64 {
    (x * m - y).norm_squared()
}

fn world(spec: SynthSpec) -> World<f64> {
    generate_world(&spec).expect("world generation")
}

fn models(w: &World<f64>) -> (ModelEmbeddings<f64>, ModelEmbeddings<f64>) {
    (
        ModelEmbeddings::from_split("A", &w.a, &w.split).unwrap(),
        ModelEmbeddings::from_split("B", &w.b, &w.split).unwrap(),
    )
}

fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

fn rotation_recovery() -> Outcome {
    let spec = SynthSpec {
        dim: 512,
        num_subjects: 500,
        media_per_subject: 10,
        within_class_noise: 0.15,
        cross_model_noise: 0.0,
        planted_kind: PlantedKind::Rotation,
        seed: 1,
        ..Default::default()
    };
    let w = world(spec);
    let pairs = align_pairs(&w.a, &w.b).unwrap();
    let start = Instant::now();
    let (map, _) = fit_rotation(&pairs.source, &pairs.target).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let err = (map.matrix() - w.ground_truth.unwrap().matrix()).norm();
    check(pairs.len() == 5000 && err < 1e-6 && secs < 10.0, format!("m={} frobenius={err:.2e} fit={secs:.2}s", pairs.len()))
}

// Normalizing model-B rows scales each row independently, so exact recovery is
// tested on targets X·M* built from the planted matrix.
fn linear_recovery() -> Outcome {
    let dim = 128;
    let spec = SynthSpec {
        dim,
        num_subjects: 30,
        media_per_subject: 10,
        cross_model_noise: 0.0,
        planted_kind: PlantedKind::Linear,
        seed: 2,
        ..Default::default()
    };
    let w = world(spec);
    let truth = w.ground_truth.unwrap().matrix().clone();
    let s = truth.clone().singular_values();
    let cond = s.max() / s.min();
    let x = w.a.to_matrix();
    let y = &x * &truth;
    let (map, _) = fit_linear(&x, &y).unwrap();
    let err = (map.matrix() - &truth).norm();
    check(
        x.nrows() >= 2 * dim && cond <= 10.0 + 1e-9 && err < 1e-6,
        format!("m={} cond={cond:.3} frobenius={err:.2e}", x.nrows()),
    )
}

fn procrustes_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let steps = 1_000_000;
    let mut worst_2d = 0.0f64;
    for _ in 0..100 {
        let m = rng.random_range(2..=20);
        let x = gaussian(m, 2, &mut rng);
        let y = gaussian(m, 2, &mut rng);
        let (map, _) = fit_rotation(&x, &y).unwrap();
        let got = objective(&x, &y, map.matrix());
        // ‖XR−Y‖² = ‖X‖² + ‖Y‖² − 2·Σ R∘(XᵀY), R = [[c, s], [−s, c]]
        let c = x.transpose() * &y;
        let base = x.norm_squared() + y.norm_squared();
        let best = (0..steps)
            .map(|k| {
                let (sn, cs) = (std::f64::consts::TAU * k as f64 / steps as f64).sin_cos();
                base - 2.0 * (cs * (c[(0, 0)] + c[(1, 1)]) + sn * (c[(0, 1)] - c[(1, 0)]))
            })
            .fold(f64::INFINITY, f64::min);
        worst_2d = worst_2d.max((got - best).abs());
        if got > best + 1e-9 {
            worst_2d = f64::INFINITY;
        }
    }
    let mut beaten = 0;
    for _ in 0..100 {
        let m = rng.random_range(3..=20);
        let x = gaussian(m, 3, &mut rng);
        let y = gaussian(m, 3, &mut rng);
        let (map, _) = fit_rotation(&x, &y).unwrap();
        let got = objective(&x, &y, map.matrix());
        let wins = (0..10_000).all(|_| got <= objective(&x, &y, &quaternion_rotation(&mut rng)) + 1e-12);
        beaten += wins as usize;
    }
    check(worst_2d <= 1e-9 && beaten == 100, format!("2-D max gap={worst_2d:.2e} 3-D wins={beaten}/100"))
}

/// Uniform rotation from a normalized Gaussian quaternion.
fn quaternion_rotation(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    DMatrix::from_row_slice(
        3,
        3,
        &[
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    )
}

fn exhaustive_roc(genuine: &[f64], impostor: &[f64], far: f64) -> (f64, f64) {
    let top = impostor.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best = top.next_up();
    for &t in impostor {
        let accepted = impostor.iter().filter(|&&s| s >= t).count();
        if accepted as f64 / impostor.len() as f64 <= far && t < best {
            best = t;
        }
    }
    let tar = genuine.iter().filter(|&&s| s >= best).count() as f64 / genuine.len() as f64;
    (best, tar)
}

fn roc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let fars = [0.5, 0.1, 0.01, 1e-3];
    let mut mismatches = 0;
    let mut non_monotone = 0;
    let mut largest = 0;
    for i in 0..100 {
        // log-uniform sizes, the last instance at the cap
        let n = if i == 99 { 10_000 } else { (10f64.powf(rng.random_range(1.0..4.0))) as usize };
        let quant: Option<f64> = rng.random_bool(0.5).then(|| rng.random_range(3..200) as f64);
        let mut pairs = Vec::with_capacity(n);
        for k in 0..n {
            let genuine = k < 2 || (k > 3 && rng.random_bool(0.2));
            let mut s: f64 = rng.random::<f64>() * 2.0 - 1.0 + if genuine { 0.4 } else { 0.0 };
            if let Some(q) = quant {
                s = (s * q).round() / q;
            }
            pairs.push(ScoredPair {
                template_id_a: format!("a{k}"),
                template_id_b: format!("b{k}"),
                score: s,
                genuine,
            });
        }
        largest = largest.max(n);
        let scored = ScoredPairs { pairs, dropped: 0 };
        let genuine: Vec<f64> = scored.genuine_scores().collect();
        let impostor: Vec<f64> = scored.impostor_scores().collect();
        let report = roc(&scored, &fars).unwrap();
        for (j, &far) in fars.iter().enumerate() {
            let (t, tar) = exhaustive_roc(&genuine, &impostor, far);
            if t != report.thresholds[j] || tar != report.tar_at_far[j] {
                mismatches += 1;
            }
        }
        // fars are listed in decreasing order
        if report.tar_at_far.windows(2).any(|w| w[0] < w[1]) {
            non_monotone += 1;
        }
    }
    check(
        mismatches == 0 && non_monotone == 0,
        format!("mismatches={mismatches} non-monotone={non_monotone} largest={largest} pairs"),
    )
}

fn identity_baseline() -> Outcome {
    let spec = SynthSpec { num_subjects: 1200, planted_kind: PlantedKind::Independent, seed: 5, ..Default::default() };
    let w = world(spec);
    let (a, b) = models(&w);
    let (_, r) = evaluate(&a.verification, &b.verification, &w.manifest, &w.pairs, &[0.1]).unwrap();
    let tar = r.tar_at_far[0];
    let se = binomial_se(0.1, r.genuine_count);
    check(
        r.impostor_count >= 2000 && (tar - 0.1).abs() <= 3.0 * se,
        format!("TAR={tar:.4} 3·SE={:.4} genuine={} impostor={}", 3.0 * se, r.genuine_count, r.impostor_count),
    )
}

fn penalty_ordering() -> Outcome {
    let spec = SynthSpec { cross_model_noise: 0.05, planted_kind: PlantedKind::Rotation, seed: 6, ..Default::default() };
    let w = world(spec);
    let (a, b) = models(&w);
    let far = 1e-2;
    let g = run_grid(&[a, b], &w.manifest, &w.pairs, &[MapKind::Linear, MapKind::Rotation], &[far]).unwrap();
    let tar = |s: &str, t: &str, k| g.cell(s, t, k, far).unwrap().tar;
    let diag = tar("A", "A", MapKind::Rotation).max(tar("B", "B", MapKind::Rotation));
    let linear = tar("A", "B", MapKind::Linear);
    let rotation = tar("A", "B", MapKind::Rotation);
    check(
        diag >= linear && linear >= rotation - 0.02 && diag - linear <= 0.05 && diag - rotation <= 0.05,
        format!("diagonal={diag:.4} linear={linear:.4} rotation={rotation:.4}"),
    )
}

fn sample_efficiency() -> Outcome {
    let spec = SynthSpec::default();
    let dim = spec.dim;
    let w = world(spec);
    let (a, b) = models(&w);
    let (few, many) = (dim / 4, 8 * dim);
    let kinds = [MapKind::Linear, MapKind::Rotation];
    let s = run_sweep(&a, &b, &w.manifest, &w.pairs, &kinds, &[few, many], 3, 1e-2, 7).unwrap();
    let mean = |k, c| s.mean(k, c).unwrap();
    let (lin_few, rot_few) = (mean(MapKind::Linear, few), mean(MapKind::Rotation, few));
    let (lin_many, rot_many) = (mean(MapKind::Linear, many), mean(MapKind::Rotation, many));
    check(
        rot_few - lin_few >= 0.05 && (rot_many - lin_many).abs() <= 0.03,
        format!(
            "count {few}: rotation={rot_few:.4} linear={lin_few:.4}; count {many}: rotation={rot_many:.4} linear={lin_many:.4}"
        ),
    )
}

fn attack_rank1(kind: PlantedKind) -> (f64, usize, usize) {
    let spec = SynthSpec { num_subjects: 400, planted_kind: kind, seed: 8, ..Default::default() };
    let w = world(spec);
    let inputs = attack_inputs(&w.a, &w.b, &w.manifest, &w.split, 500, 9).unwrap();
    let r = run_attack(
        &inputs.unknown_paired,
        &inputs.attacker_paired,
        &inputs.probes,
        &w.manifest,
        &inputs.gallery,
        MapKind::Rotation,
        &[1],
    )
    .unwrap();
    (r.rank_k_accuracy[&1], r.gallery_size, r.probe_count - r.excluded_probes)
}

fn attack_efficacy() -> Outcome {
    let (planted, gallery, _) = attack_rank1(PlantedKind::Rotation);
    let (control, _, probes) = attack_rank1(PlantedKind::Independent);
    let chance = 1.0 / 200.0;
    let se = binomial_se(chance, probes);
    check(
        gallery == 200 && planted >= 0.99 && (control - chance).abs() <= 3.0 * se,
        format!("gallery={gallery} rank-1={planted:.4} control={control:.4} (chance {chance}, 3·SE={:.4})", 3.0 * se),
    )
}

fn determinism() -> Outcome {
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            let spec = SynthSpec { dim: 32, num_subjects: 80, seed: 10, ..Default::default() };
            let w = world(spec);
            let (a, b) = models(&w);
            let c = ModelEmbeddings::from_split("C", &w.a.clone().with_model_id("C"), &w.split).unwrap();
            let grid = run_grid(&[a.clone(), b.clone(), c], &w.manifest, &w.pairs, &MapKind::ALL, &[0.1, 0.01]).unwrap();
            let sweep = run_sweep(&a, &b, &w.manifest, &w.pairs, &MapKind::ALL, &[4, 16, 64], 3, 0.01, 11).unwrap();
            let inputs = attack_inputs(&w.a, &w.b, &w.manifest, &w.split, 100, 12).unwrap();
            let attack = run_attack(
                &inputs.unknown_paired,
                &inputs.attacker_paired,
                &inputs.probes,
                &w.manifest,
                &inputs.gallery,
                MapKind::Linear,
                &[1, 5],
            )
            .unwrap();
            (w.a, w.b, w.split, grid, sweep, attack)
        })
    };
    let reference = run(1);
    let same = [1, 2, 4].iter().all(|&t| run(t) == reference);
    check(same, "synthetic world, grid, sweep and attack compared across 1, 2 and 4 workers".into())
}

fn rotation_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst_orth = 0.0f64;
    let mut worst_det = 0.0f64;
    let mut reflected = 0;
    for i in 0..1000 {
        let d = rng.random_range(2..=24);
        let m = rng.random_range(1..=3 * d);
        let x = gaussian(m, d, &mut rng);
        let y = if i % 2 == 0 {
            // target is an exact reflection of the source
            let q = gaussian(d, d, &mut rng).qr().q();
            let q = if q.determinant() > 0.0 {
                let mut q = q;
                q.column_mut(0).neg_mut();
                q
            } else {
                q
            };
            reflected += 1;
            &x * q
        } else {
            gaussian(m, d, &mut rng)
        };
        let (map, _) = fit_rotation(&x, &y).unwrap();
        let r = map.matrix();
        let gram = r.transpose() * r - DMatrix::identity(d, d);
        worst_orth = worst_orth.max(gram.amax());
        worst_det = worst_det.max((r.clone().determinant() - 1.0).abs());
    }
    check(
        worst_orth <= 1e-8 && worst_det <= 1e-8,
        format!("max |MᵀM−I|={worst_orth:.2e} max |det−1|={worst_det:.2e} reflected inputs={reflected}"),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("rotation recovery", rotation_recovery),
        ("linear recovery", linear_recovery),
        ("procrustes oracle", procrustes_oracle),
        ("roc oracle", roc_oracle),
        ("identity-map baseline", identity_baseline),
        ("cross-model penalty ordering", penalty_ordering),
        ("sample-efficiency ordering", sample_efficiency),
        ("attack efficacy", attack_efficacy),
        ("determinism", determinism),
        ("rotation invariants", rotation_invariants),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
