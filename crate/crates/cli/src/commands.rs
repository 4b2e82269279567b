use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use embedmap::experiments::{attack_inputs, default_sample_counts, run_attack, run_grid, run_sweep};
use embedmap::mapping::{load_map, save_map};
use embedmap::store::{load_embeddings, load_manifest, load_pairs, load_split, save_embeddings, save_manifest, save_pairs, save_split};
use embedmap::synthetic::{generate_world, SynthSpec};
use embedmap::verification::evaluate;
use embedmap::{align_pairs, apply_map, fit, identity_map, Error, Result, Split};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use crate::config::{self, load_set, AttackConfig, GridConfig, LoadedProtocol, SweepConfig};
use crate::Command;

pub fn run(command: Command) -> Result<String> {
    let value = match command {
        Command::Ingest { input, out, model_id, manifest, normalize } => {
            ingest(&input, &out, model_id.as_deref(), manifest.as_deref(), normalize)?
        }
        Command::Fit { source, target, kind, out, split } => cmd_fit(&source, &target, kind, &out, split.as_deref())?,
        Command::Apply { input, map, out } => apply(&input, &map, &out)?,
        Command::Verify { a, b, manifest, pairs, map, far, scores_out } => {
            verify(&a, b.as_deref(), &manifest, &pairs, map.as_deref(), &far, scores_out.as_deref())?
        }
        Command::Grid { config, out } => grid(&config, &out)?,
        Command::Sweep { config, out, seed } => sweep(&config, &out, seed.seed.unwrap_or(0))?,
        Command::Attack { config, out, seed } => attack(&config, &out, seed.seed.unwrap_or(0))?,
        Command::Synth { config, out, seed } => synth(config.as_deref(), &out, seed.seed)?,
    };
    Ok(serde_json::to_string_pretty(&value)?)
}

fn to_value(v: impl Serialize) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    serde_json::to_writer_pretty(create(path)?, v)?;
    Ok(())
}

fn ingest(
    input: &Path,
    out: &Path,
    model_id: Option<&str>,
    manifest: Option<&Path>,
    normalize: bool,
) -> Result<serde_json::Value> {
    let mut set = load_set(input, model_id)?;
    let mut excluded = Vec::new();
    if normalize {
        let mapped = apply_map(&identity_map(set.dim())?, &set)?;
        excluded = mapped.excluded;
        set = mapped.set.with_model_id(set.model_id());
    }
    if let Some(path) = manifest {
        let manifest = load_manifest(path)?;
        if let Some(id) = set.ids().iter().find(|id| manifest.media(id).is_none()) {
            return Err(Error::Reference(format!("media {id:?} is not in the manifest")));
        }
    }
    for id in &excluded {
        warn!("dropped {id:?}: vector too short to normalize");
    }
    save_embeddings(&set, out)?;
    Ok(json!({
        "model_id": set.model_id(),
        "dim": set.dim(),
        "count": set.len(),
        "normalized": set.is_normalized(),
        "excluded": excluded,
    }))
}

fn cmd_fit(
    source: &Path,
    target: &Path,
    kind: embedmap::MapKind,
    out: &Path,
    split: Option<&Path>,
) -> Result<serde_json::Value> {
    let mut a = load_embeddings::<f64>(source)?;
    let mut b = load_embeddings::<f64>(target)?;
    if let Some(path) = split {
        let split = load_split(path)?;
        let enrolled = |id: &str| split.get(id) == Some(&Split::Enrollment);
        a = a.filter(enrolled);
        b = b.filter(enrolled);
    }
    let pairs = align_pairs(&a, &b)?;
    info!("fitting {kind} map on {} paired media", pairs.len());
    let (map, report) = fit(kind, &pairs.source, &pairs.target)?;
    let map = map.with_model_ids(a.model_id(), b.model_id());
    save_map(&map, out)?;
    to_value(report)
}

fn apply(input: &Path, map: &Path, out: &Path) -> Result<serde_json::Value> {
    let set = load_embeddings::<f64>(input)?;
    let map = load_map::<f64>(map)?;
    if !map.source_model_id().is_empty() && map.source_model_id() != set.model_id() {
        warn!("map source model {:?} differs from embeddings model {:?}", map.source_model_id(), set.model_id());
    }
    let mapped = apply_map(&map, &set)?;
    for id in &mapped.excluded {
        warn!("dropped {id:?}: mapped vector too short to normalize");
    }
    save_embeddings(&mapped.set, out)?;
    Ok(json!({
        "model_id": mapped.set.model_id(),
        "dim": mapped.set.dim(),
        "count": mapped.set.len(),
        "excluded": mapped.excluded,
    }))
}

fn verify(
    a: &Path,
    b: Option<&Path>,
    manifest: &Path,
    pairs: &Path,
    map: Option<&Path>,
    fars: &[f64],
    scores_out: Option<&Path>,
) -> Result<serde_json::Value> {
    let manifest = load_manifest(manifest)?;
    let pairs = load_pairs(pairs, Some(&manifest))?;
    let mut side_a = load_embeddings::<f64>(a)?;
    let side_b = match b {
        Some(path) => load_embeddings::<f64>(path)?,
        None => side_a.clone(),
    };
    if let Some(path) = map {
        let mapped = apply_map(&load_map::<f64>(path)?, &side_a)?;
        if !mapped.excluded.is_empty() {
            warn!("{} media dropped after mapping", mapped.excluded.len());
        }
        side_a = mapped.set;
    }
    let (scored, report) = evaluate(&side_a, &side_b, &manifest, &pairs, fars)?;
    if report.dropped_pairs > 0 {
        warn!("{} pairs had no usable template", report.dropped_pairs);
    }
    if let Some(path) = scores_out {
        scored.write_csv(create(path)?)?;
    }
    to_value(report)
}

fn grid(path: &Path, out: &Path) -> Result<serde_json::Value> {
    let (cfg, base): (GridConfig, _) = config::read(path)?;
    let p = LoadedProtocol::load(&base, &cfg.manifest, &cfg.pairs, &cfg.split)?;
    let models = cfg.models.iter().map(|m| m.load(&base, &p.split)).collect::<Result<Vec<_>>>()?;
    let result = run_grid(&models, &p.manifest, &p.pairs, &cfg.kinds, &cfg.fars)?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("grid.json"), &result)?;
    result.write_csv(create(&out.join("grid.csv"))?)?;
    Ok(json!({
        "models": result.models,
        "cells": result.cells.len(),
        "evaluations": result.evaluations,
        "outputs": [out.join("grid.json"), out.join("grid.csv")],
    }))
}

fn sweep(path: &Path, out: &Path, seed: u64) -> Result<serde_json::Value> {
    let (cfg, base): (SweepConfig, _) = config::read(path)?;
    let p = LoadedProtocol::load(&base, &cfg.manifest, &cfg.pairs, &cfg.split)?;
    let source = cfg.source.load(&base, &p.split)?;
    let target = cfg.target.load(&base, &p.split)?;
    let counts = match cfg.sample_counts {
        Some(c) => c,
        None => default_sample_counts(align_pairs(&source.enrollment, &target.enrollment)?.len()),
    };
    let result =
        run_sweep(&source, &target, &p.manifest, &p.pairs, &cfg.kinds, &counts, cfg.repetitions, cfg.far, seed)?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("sweep.json"), &result)?;
    result.write_csv(create(&out.join("sweep.csv"))?)?;
    Ok(json!({
        "seed": seed,
        "points": result.points.len(),
        "means": result.means,
        "outputs": [out.join("sweep.json"), out.join("sweep.csv")],
    }))
}

fn attack(path: &Path, out: &Path, seed: u64) -> Result<serde_json::Value> {
    let (cfg, base): (AttackConfig, _) = config::read(path)?;
    let manifest = load_manifest(base.join(&cfg.manifest))?;
    let split = load_split(base.join(&cfg.split))?;
    let unknown = load_set(&base.join(&cfg.unknown.embeddings), Some(&cfg.unknown.name))?;
    let attacker = load_set(&base.join(&cfg.attacker.embeddings), Some(&cfg.attacker.name))?;
    let inputs = attack_inputs(&unknown, &attacker, &manifest, &split, cfg.fit_pairs, seed)?;
    let result = run_attack(
        &inputs.unknown_paired,
        &inputs.attacker_paired,
        &inputs.probes,
        &manifest,
        &inputs.gallery,
        cfg.kind,
        &cfg.ranks,
    )?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("attack.json"), &result)?;
    result.write_csv(create(&out.join("attack.csv"))?)?;
    let mut summary = to_value(&result)?;
    summary["seed"] = json!(seed);
    Ok(summary)
}

fn synth(path: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<serde_json::Value> {
    let mut spec = match path {
        Some(p) => config::read::<SynthSpec>(p)?.0,
        None => SynthSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let world = generate_world::<f64>(&spec)?;
    std::fs::create_dir_all(out)?;
    let mut outputs = vec![
        out.join("model_a.cfeb"),
        out.join("model_b.cfeb"),
        out.join("manifest.csv"),
        out.join("pairs.csv"),
        out.join("split.csv"),
    ];
    save_embeddings(&world.a, &outputs[0])?;
    save_embeddings(&world.b, &outputs[1])?;
    save_manifest(&world.manifest, &outputs[2])?;
    save_pairs(&world.pairs, &outputs[3])?;
    save_split(&world.split, &outputs[4])?;
    if let Some(truth) = &world.ground_truth {
        let path = out.join("ground_truth.cfem");
        save_map(truth, &path)?;
        outputs.push(path);
    }
    Ok(json!({
        "spec": spec,
        "media": world.a.len(),
        "pairs": world.pairs.len(),
        "outputs": outputs,
    }))
}
