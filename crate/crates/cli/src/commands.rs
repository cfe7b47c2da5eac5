use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use pmsm::dataset::{
    build_retrieval_split, export_synthetic, generate_synthetic, holdout_by_identity, load_manifest, Dataset,
    GroundTruth,
};
use pmsm::embedding::{arch_hash, load_checkpoint};
use pmsm::eval::{evaluate_reid, evaluate_retrieval, mean_std, EvalReport, ReportLabel, CSV_HEADER};
use pmsm::features::FeatureBank;
use pmsm::mining::{canonical_parts, overlay_regions, render_heatmap, PartsFile, ScoreVariant};
use pmsm::util::config_hash;
use serde::Serialize;

use crate::config::{DatasetSection, RunConfig};

/// A problem with the invocation or its inputs rather than with the computation.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

const HEATMAPS_PER_VARIANT: usize = 8;
const HEATMAP_CELL_PX: usize = 8;

/// Hash of the configuration without the output location.
pub fn run_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.out = PathBuf::new();
    config_hash(&c)
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub struct Data {
    pub train: Dataset,
    pub test: Dataset,
    pub truth: Option<GroundTruth>,
}

pub fn load_data(cfg: &RunConfig) -> anyhow::Result<Data> {
    let (all, truth) = match &cfg.dataset {
        DatasetSection::Synthetic { synth } => {
            let (ds, truth) = generate_synthetic(synth)?;
            (ds, Some(truth))
        }
        DatasetSection::Manifest { path, canonical_size } => {
            let (ds, report) = load_manifest(path, *canonical_size)?;
            if !report.skipped.is_empty() {
                log::warn!("{} manifest rows skipped", report.skipped.len());
            }
            (ds, None)
        }
    };
    let (train, test) = match &cfg.eval.test_manifest {
        Some(p) => {
            let size = match &cfg.dataset {
                DatasetSection::Manifest { canonical_size, .. } => *canonical_size,
                DatasetSection::Synthetic { synth } => synth.image_size,
            };
            (all, load_manifest(p, size)?.0)
        }
        None => holdout_by_identity(&all, cfg.eval.holdout_fraction)?,
    };
    log::info!(
        "training set: {} images / {} identities; evaluation set: {} images / {} identities",
        train.len(),
        train.identities().len(),
        test.len(),
        test.identities().len()
    );
    Ok(Data { train, test, truth })
}

pub fn cmd_synth(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let DatasetSection::Synthetic { synth } = &cfg.dataset else {
        return Err(usage("synth needs a synthetic dataset section"));
    };
    let (ds, truth) = generate_synthetic(synth)?;
    let dir = cfg.data_dir();
    export_synthetic(&ds, &truth, &dir)?;
    println!("wrote {} images to {}", ds.len(), dir.display());
    Ok(dir)
}

pub fn cmd_mine(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let data = load_data(cfg)?;
    let m = &cfg.mining;
    let bank = FeatureBank::build_with_cache(&data.train, &m.hog, &m.grid, m.cache_dir.as_deref())?;
    let parts = canonical_parts(&bank, &m.mining, cfg.seed)?;
    fs::create_dir_all(&cfg.out)?;
    let settings = serde_json::json!({"mining": m, "seed": cfg.seed, "run_hash": run_hash(cfg)});
    let file = PartsFile::from_parts(&parts, config_hash(m), settings);
    let path = cfg.parts_path();
    file.save(&path)?;

    let heat_dir = cfg.out.join("heatmaps");
    fs::create_dir_all(&heat_dir)?;
    for variant in [ScoreVariant::Eq2, ScoreVariant::Eq3] {
        for mined in parts
            .mined
            .iter()
            .filter(|p| p.map.variant == variant)
            .take(HEATMAPS_PER_VARIANT)
        {
            let name = match variant {
                ScoreVariant::Eq3 => "part_i",
                _ => "part_m",
            };
            render_heatmap(&mined.map, HEATMAP_CELL_PX)
                .save_png(&heat_dir.join(format!("{name}_seed{}.png", mined.map.seed_id)))?;
        }
    }
    if let Some(first) = data.train.images().first() {
        let mut regions = vec![(file.part_m, [0.0, 0.4, 1.0]), (file.part_i, [1.0, 0.2, 0.2])];
        if let Some(t) = &data.truth {
            regions.push((t.model_cue_region, [0.2, 1.0, 1.0]));
            regions.push((t.identity_cue_region, [1.0, 1.0, 0.2]));
        }
        overlay_regions(&first.pixels, &regions).save_png(&cfg.out.join("parts_overlay.png"))?;
    }
    println!(
        "part_m {:?}\npart_i {:?}\nwrote {}",
        <[f64; 4]>::from(file.part_m),
        <[f64; 4]>::from(file.part_i),
        path.display()
    );
    Ok(path)
}

fn load_parts(path: &Path) -> anyhow::Result<PartsFile> {
    if !path.exists() {
        return Err(usage(format!(
            "parts file {} not found (run `pmsm mine` first or pass --parts)",
            path.display()
        )));
    }
    Ok(PartsFile::load(path)?)
}

pub fn cmd_train(cfg: &RunConfig, parts_path: &Path) -> anyhow::Result<PathBuf> {
    let parts = load_parts(parts_path)?;
    let data = load_data(cfg)?;
    let dir = cfg.train_dir();
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("config.json"), cfg)?;
    let t0 = std::time::Instant::now();
    let result = pmsm::trainer::train(&data.train, (&parts.part_m, &parts.part_i), &cfg.train, Some(&dir))?;
    let path = result.checkpoint.expect("output directory was given");
    let last = result.trace.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "trained {} iterations in {:.1}s, final loss {last:.5}; checkpoint {}",
        result.trace.len(),
        t0.elapsed().as_secs_f64(),
        path.display()
    );
    Ok(path)
}

#[derive(Serialize)]
struct Aggregate {
    split: String,
    task: String,
    repeats: usize,
    map_mean: f64,
    map_std: f64,
    cmc: Vec<(usize, f64, f64)>,
}

pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, parts_path: &Path, force: bool, threads: usize) -> anyhow::Result<Vec<EvalReport>> {
    if !checkpoint.exists() {
        return Err(usage(format!("checkpoint {} not found", checkpoint.display())));
    }
    let parts = load_parts(parts_path)?;
    let ck = load_checkpoint(checkpoint)?;
    let (have, want) = (arch_hash(&ck.params.arch), arch_hash(&cfg.train.arch));
    if have != want {
        if !force {
            return Err(usage(format!(
                "checkpoint architecture {have} does not match the configured architecture {want} (use --force to evaluate anyway)"
            )));
        }
        log::warn!("evaluating checkpoint architecture {have} against configured {want}");
    }
    let data = load_data(cfg)?;
    let hash = run_hash(cfg);
    let mut reports = Vec::new();
    for (si, &n) in cfg.eval.split_identities.iter().enumerate() {
        let name = format!("split{si}_{n}");
        for repeat in 0..cfg.eval.repeats {
            let seed = cfg.seed.wrapping_add(repeat as u64);
            let retrieval = build_retrieval_split(&data.test, n, seed)
                .with_context(|| format!("building split {name}"))?;
            let label = ReportLabel {
                split: name.clone(),
                repeat,
                seed,
                config_hash: hash.clone(),
            };
            let p = (&parts.part_m, &parts.part_i);
            reports.push(evaluate_retrieval(&ck.params, &data.test, &retrieval, p, &cfg.eval.ks, &label, threads)?);
            reports.push(evaluate_reid(&ck.params, &data.test, &retrieval.exchange(), p, &cfg.eval.ks, &label, threads)?);
        }
    }
    let dir = cfg.eval_dir();
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("reports.json"), &reports)?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(CSV_HEADER)?;
    for r in &reports {
        w.write_record(r.csv_row())?;
    }
    w.flush()?;

    let mut aggregates = Vec::new();
    for chunk in group_by_split_task(&reports) {
        let maps: Vec<f64> = chunk.iter().map(|r| r.map).collect();
        let (map_mean, map_std) = mean_std(&maps);
        let cmc = cfg
            .eval
            .ks
            .iter()
            .map(|&k| {
                let v: Vec<f64> = chunk.iter().filter_map(|r| r.cmc_at(k)).collect();
                let (m, s) = mean_std(&v);
                (k, m, s)
            })
            .collect();
        aggregates.push(Aggregate {
            split: chunk[0].split.clone(),
            task: chunk[0].task.name().into(),
            repeats: chunk.len(),
            map_mean,
            map_std,
            cmc,
        });
    }
    write_json(&dir.join("aggregate.json"), &aggregates)?;

    println!("{:<16} {:<10} {:>8} {:>16}", "split", "task", "repeats", "mAP (mean±std)");
    for a in &aggregates {
        let cmc: Vec<String> = a.cmc.iter().map(|(k, m, s)| format!("cmc@{k} {m:.4}±{s:.4}")).collect();
        println!(
            "{:<16} {:<10} {:>8} {:>8.4}±{:<7.4} {}",
            a.split,
            a.task,
            a.repeats,
            a.map_mean,
            a.map_std,
            cmc.join("  ")
        );
    }
    Ok(reports)
}

fn group_by_split_task(reports: &[EvalReport]) -> Vec<Vec<&EvalReport>> {
    let mut groups: Vec<Vec<&EvalReport>> = Vec::new();
    for r in reports {
        match groups
            .iter_mut()
            .find(|g| g[0].split == r.split && g[0].task == r.task)
        {
            Some(g) => g.push(r),
            None => groups.push(vec![r]),
        }
    }
    groups
}

pub fn cmd_pipeline(cfg: &RunConfig, skip_train: bool, force: bool, threads: usize) -> anyhow::Result<()> {
    if matches!(cfg.dataset, DatasetSection::Synthetic { .. }) {
        cmd_synth(cfg)?;
    }
    let parts = cmd_mine(cfg)?;
    let checkpoint = cfg.checkpoint_path();
    if skip_train {
        if !checkpoint.exists() {
            return Err(usage(format!(
                "--skip-train needs an existing checkpoint at {}",
                checkpoint.display()
            )));
        }
        println!("reusing checkpoint {}", checkpoint.display());
    } else {
        cmd_train(cfg, &parts)?;
    }
    cmd_eval(cfg, &checkpoint, &parts, force, threads)?;
    Ok(())
}
