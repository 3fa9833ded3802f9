use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use driftpatch::adaptation::{default_engagement_layer, AdaptiveModel};
use driftpatch::eval::{
    arch_sweep, engagement_sweep, meta_table, prequential_run, render_recovery, summarize_scenario,
    RunRecord, SummaryEntry, MEASURES,
};
use driftpatch::streams::{phase_map, write_stream_cache, ScenarioSpec, Stream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BaseSource, ExperimentConfig, ScenarioConfig};
use crate::failure::Failure;
use crate::pipeline::{
    accuracy_on, cell_base, cell_stream, layer_by_name, patch_config, BaseOutcome, Dataset, Layout,
};

fn log(msg: String) {
    eprintln!("{msg}");
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::io(&format!("cannot write {}", path.display()), e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, Failure> {
    csv::Writer::from_path(path).map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

fn csv_fail(e: csv::Error) -> Failure {
    Failure::data(format!("csv output failed: {e}"))
}

fn save_effective_config(cfg: &ExperimentConfig, layout: &Layout) -> Result<(), Failure> {
    std::fs::create_dir_all(&layout.root)
        .map_err(|e| Failure::io(&format!("cannot create {}", layout.root.display()), e))?;
    write_file(
        &layout.root.join("config.effective.toml"),
        cfg.effective()?.to_toml()?.as_bytes(),
    )
}

fn cells(cfg: &ExperimentConfig) -> Vec<(&ScenarioConfig, u64)> {
    cfg.scenarios
        .iter()
        .flat_map(|s| cfg.seeds.iter().map(move |&seed| (s, seed)))
        .collect()
}

fn describe_stream(spec: &ScenarioSpec, stream: &Stream) -> String {
    let sizes = spec.chunk_sizes();
    let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
    let size = if lo == hi {
        format!("{lo}")
    } else {
        format!("{lo}-{hi}")
    };
    format!(
        "{} chunks of {size} instances, init set {}, change point chunk(s) {:?}",
        stream.chunks.len(),
        stream.init_set.len(),
        stream.change_points
    )
}

pub fn gen_stream(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let dataset = Dataset::load(cfg)?;
    let pool = dataset.pool();
    let layout = Layout::new(out);
    for (scenario, seed) in cells(cfg) {
        let spec = scenario.spec(cfg.cell_seed(&scenario.id(), seed))?;
        let stream = driftpatch::streams::build_scenario(&pool, &spec)?;
        let path = layout.stream_path(&scenario.id(), seed)?;
        write_stream_cache(&path, &spec, &stream)
            .map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))?;
        println!(
            "{} seed {seed}: {}; wrote {}",
            scenario.id(),
            describe_stream(&spec, &stream),
            path.display()
        );
    }
    Ok(())
}

pub fn train_base(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<(), Failure> {
    let dataset = Dataset::load(cfg)?;
    let pool = dataset.pool();
    let layout = Layout::new(out);
    let targets: Vec<(&ScenarioConfig, u64)> = match cfg.base.source {
        BaseSource::Scenario => cells(cfg),
        BaseSource::Dataset => cfg.seeds.iter().map(|&s| (&cfg.scenarios[0], s)).collect(),
    };
    for (scenario, seed) in targets {
        let (_, stream) = cell_stream(cfg, scenario, seed, &pool, &layout)?;
        let base = cell_base(cfg, scenario, seed, &stream, &dataset, &layout, force, &log)?;
        let verb = if base.reused { "reused cached" } else { "trained" };
        match cfg.base.source {
            BaseSource::Dataset => println!(
                "seed {seed}: {verb} {} base {}; test accuracy {:.2}%",
                cfg.base.arch,
                base.path.display(),
                100.0 * accuracy_on(&base.net, &dataset.test)?
            ),
            BaseSource::Scenario => {
                let cp = stream.first_change_point().unwrap_or(stream.chunks.len());
                let held_out: Vec<_> = stream.chunks[..cp].iter().flatten().cloned().collect();
                let acc = if held_out.is_empty() {
                    "n/a".to_string()
                } else {
                    format!("{:.2}%", 100.0 * accuracy_on(&base.net, &held_out)?)
                };
                println!(
                    "{} seed {seed}: {verb} {} base {}; held-out pre-drift accuracy {acc}",
                    scenario.id(),
                    cfg.base.arch,
                    base.path.display()
                );
            }
        }
    }
    Ok(())
}

/// Outcome of one (scenario, seed) cell as recorded in the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStatus {
    pub scenario: String,
    pub seed: u64,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A summary entry plus its table rendering of the recovery speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    #[serde(flatten)]
    pub entry: SummaryEntry,
    pub recovery_speed_display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub config: ExperimentConfig,
    pub cells: Vec<CellStatus>,
    pub entries: Vec<SummaryRow>,
}

struct CellResult {
    records: Vec<RunRecord>,
    first_cp: usize,
    phases: driftpatch::streams::MetricsPhaseMap,
}

fn run_cell(
    cfg: &ExperimentConfig,
    scenario: &ScenarioConfig,
    seed: u64,
    dataset: &Dataset,
    pool: &[driftpatch::streams::LabeledImage],
    layout: &Layout,
) -> Result<CellResult, Failure> {
    let (_, stream) = cell_stream(cfg, scenario, seed, pool, layout)?;
    let BaseOutcome { net, .. } = cell_base(cfg, scenario, seed, &stream, dataset, layout, false, &log)?;
    let patch = patch_config(cfg, &net)?;
    let settings = cfg.settings();
    let model_seed = cfg.cell_seed(&scenario.id(), seed);
    let mut models = cfg
        .models
        .iter()
        .map(|m| AdaptiveModel::from_spec(*m, Arc::clone(&net), &patch, &settings, model_seed))
        .collect::<Result<Vec<_>, _>>()?;
    let records = prequential_run(&mut models, &stream, &scenario.id(), seed)?;
    let phases = phase_map(&stream)?;
    let first_cp = stream.first_change_point().expect("phase map checked");
    let path = layout.dir("runs")?.join(format!("{}-s{seed}.csv", scenario.id()));
    let mut w = csv_writer(&path)?;
    w.write_record([
        "run_id",
        "scenario",
        "model_id",
        "seed",
        "chunk_index",
        "accuracy",
        "diverted_fraction",
    ])
    .map_err(csv_fail)?;
    let run_id = format!("{}-s{seed}", scenario.id());
    for r in &records {
        for (c, (acc, div)) in r.per_chunk_accuracy.iter().zip(&r.diverted_fraction).enumerate() {
            w.write_record([
                run_id.clone(),
                r.scenario_id.clone(),
                r.model_id.clone(),
                seed.to_string(),
                c.to_string(),
                format!("{acc:.6}"),
                div.map(|d| format!("{d:.6}")).unwrap_or_default(),
            ])
            .map_err(csv_fail)?;
        }
    }
    w.flush().map_err(|e| Failure::io("csv flush", e))?;
    Ok(CellResult {
        records,
        first_cp,
        phases,
    })
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Failure::runtime(format!("cannot start worker pool: {e}")))
}

/// Runs every (scenario, seed) cell; returns whether all cells succeeded.
pub fn run(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<bool, Failure> {
    let dataset = Dataset::load(cfg)?;
    let pool = dataset.pool();
    let layout = Layout::new(out);
    save_effective_config(cfg, &layout)?;
    let grid = cells(cfg);
    let results: Vec<Result<CellResult, Failure>> = thread_pool(jobs)?.install(|| {
        grid.par_iter()
            .map(|(s, seed)| run_cell(cfg, s, *seed, &dataset, &pool, &layout))
            .collect()
    });
    let mut statuses = Vec::new();
    let mut by_scenario: BTreeMap<String, Vec<CellResult>> = BTreeMap::new();
    for ((s, seed), r) in grid.iter().zip(results) {
        let (status, error) = match r {
            Ok(cell) => {
                by_scenario.entry(s.id()).or_default().push(cell);
                ("succeeded".to_string(), None)
            }
            Err(e) => {
                log(format!("cell {} seed {seed} failed: {e}", s.id()));
                ("failed".to_string(), Some(e.message))
            }
        };
        statuses.push(CellStatus {
            scenario: s.id(),
            seed: *seed,
            status,
            error,
        });
    }
    let mut entries = Vec::new();
    for s in &cfg.scenarios {
        let Some(cells) = by_scenario.get(&s.id()) else {
            continue;
        };
        let records: Vec<RunRecord> = cells.iter().flat_map(|c| c.records.clone()).collect();
        let summary = summarize_scenario(&records, &cells[0].phases, cells[0].first_cp, cfg.recovery_mode)?;
        for e in summary {
            println!(
                "{:<20} {:<26} A.Acc {:6.2}  F.Acc {:6.2}  R.Spd {:>6}  Ad.Rk {:5.2}  F.Rk {:5.2}",
                e.scenario,
                e.model,
                100.0 * e.avg_acc,
                100.0 * e.final_acc,
                e.recovery_display(),
                e.adaptation_rank,
                e.final_rank
            );
            entries.push(SummaryRow {
                recovery_speed_display: e.recovery_display(),
                entry: e,
            });
        }
    }
    let all_ok = statuses.iter().all(|c| c.status == "succeeded");
    let file = SummaryFile {
        config: cfg.effective()?,
        cells: statuses,
        entries,
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| Failure::runtime(e.to_string()))?;
    write_file(&layout.root.join("summary.json"), json.as_bytes())?;
    Ok(all_ok)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepKind {
    Layers,
    Arch,
}

pub fn sweep(cfg: &ExperimentConfig, out: &Path, kind: SweepKind) -> Result<(), Failure> {
    if kind == SweepKind::Arch && cfg.sweep.archs.is_empty() {
        return Err(Failure::config("sweep.archs is empty"));
    }
    let dataset = Dataset::load(cfg)?;
    let pool = dataset.pool();
    let layout = Layout::new(out);
    save_effective_config(cfg, &layout)?;
    let settings = cfg.settings();
    match kind {
        SweepKind::Layers => {
            let mut w = csv_writer(&layout.root.join("sweep_layers.csv"))?;
            w.write_record([
                "scenario",
                "seed",
                "layer",
                "layer_name",
                "tap",
                "measure",
                "value",
            ])
            .map_err(csv_fail)?;
            let mut t = csv_writer(&layout.root.join("sweep_layers_traces.csv"))?;
            t.write_record(["scenario", "seed", "layer_name", "tap", "chunk_index", "accuracy"])
                .map_err(csv_fail)?;
            for (scenario, seed) in cells(cfg) {
                let (_, stream) = cell_stream(cfg, scenario, seed, &pool, &layout)?;
                let base = cell_base(cfg, scenario, seed, &stream, &dataset, &layout, false, &log)?;
                let template = patch_config(cfg, &base.net)?;
                let rows = engagement_sweep(
                    base.net.clone(),
                    &stream,
                    &template,
                    &cfg.sweep.taps,
                    &settings,
                    cfg.cell_seed(&scenario.id(), seed),
                )?;
                for r in rows {
                    for (m, v) in [("avg_acc", r.avg_acc), ("final_acc", r.final_acc)] {
                        w.write_record([
                            scenario.id(),
                            seed.to_string(),
                            r.layer.to_string(),
                            r.layer_name.clone(),
                            r.tap.as_str().to_string(),
                            m.to_string(),
                            format!("{v:.6}"),
                        ])
                        .map_err(csv_fail)?;
                    }
                    for (c, a) in r.per_chunk_accuracy.iter().enumerate() {
                        t.write_record([
                            scenario.id(),
                            seed.to_string(),
                            r.layer_name.clone(),
                            r.tap.as_str().to_string(),
                            c.to_string(),
                            format!("{a:.6}"),
                        ])
                        .map_err(csv_fail)?;
                    }
                    println!(
                        "{} seed {seed} {:>8}:{:<4} A.Acc {:6.2}  F.Acc {:6.2}",
                        scenario.id(),
                        r.layer_name,
                        r.tap.as_str(),
                        100.0 * r.avg_acc,
                        100.0 * r.final_acc
                    );
                }
            }
            w.flush().map_err(|e| Failure::io("csv flush", e))?;
            t.flush().map_err(|e| Failure::io("csv flush", e))?;
        }
        SweepKind::Arch => {
            let mut w = csv_writer(&layout.root.join("sweep_arch.csv"))?;
            w.write_record(["scenario", "arch", "layer_name", "measure", "value"])
                .map_err(csv_fail)?;
            let mut rk = csv_writer(&layout.root.join("sweep_arch_ranks.csv"))?;
            rk.write_record([
                "scenario",
                "arch",
                "avg_acc_rank",
                "final_acc_rank",
                "recovery_rank",
            ])
            .map_err(csv_fail)?;
            for scenario in &cfg.scenarios {
                let seed = cfg.seeds[0];
                let (_, stream) = cell_stream(cfg, scenario, seed, &pool, &layout)?;
                let base = cell_base(cfg, scenario, seed, &stream, &dataset, &layout, false, &log)?;
                let template = patch_config(cfg, &base.net)?;
                let names = match &cfg.sweep.layers {
                    Some(l) => l.clone(),
                    None => default_engagement_layer(cfg.base.arch()?)
                        .names
                        .iter()
                        .map(|s| s.to_string())
                        .collect(),
                };
                let layers = names
                    .iter()
                    .map(|n| layer_by_name(&base.net, n))
                    .collect::<Result<Vec<_>, _>>()?;
                let seeds: Vec<u64> = cfg
                    .seeds
                    .iter()
                    .map(|&s| cfg.cell_seed(&scenario.id(), s))
                    .collect();
                let result = arch_sweep(
                    base.net.clone(),
                    &stream,
                    &layers,
                    &cfg.sweep.archs,
                    &template,
                    &settings,
                    cfg.recovery_mode,
                    &seeds,
                )?;
                for r in &result.rows {
                    let rec = r
                        .recovery_speed
                        .map(|v| format!("{v:.3}"))
                        .unwrap_or_else(|| "---".into());
                    for (m, v) in [
                        ("avg_acc", format!("{:.6}", r.avg_acc)),
                        ("final_acc", format!("{:.6}", r.final_acc)),
                        ("recovery_speed", rec),
                    ] {
                        w.write_record([
                            scenario.id(),
                            r.arch.clone(),
                            r.layer_name.clone(),
                            m.to_string(),
                            v,
                        ])
                        .map_err(csv_fail)?;
                    }
                }
                for r in &result.ranks {
                    rk.write_record([
                        scenario.id(),
                        r.arch.clone(),
                        format!("{:.3}", r.avg_acc_rank),
                        format!("{:.3}", r.final_acc_rank),
                        format!("{:.3}", r.recovery_rank),
                    ])
                    .map_err(csv_fail)?;
                    println!(
                        "{} {:>16}  rank A.Acc {:5.2}  F.Acc {:5.2}  R.Spd {:5.2}",
                        scenario.id(),
                        r.arch,
                        r.avg_acc_rank,
                        r.final_acc_rank,
                        r.recovery_rank
                    );
                }
            }
            w.flush().map_err(|e| Failure::io("csv flush", e))?;
            rk.flush().map_err(|e| Failure::io("csv flush", e))?;
        }
    }
    Ok(())
}

fn summary_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries =
            std::fs::read_dir(&d).map_err(|e| Failure::io(&format!("cannot read {}", d.display()), e))?;
        for e in entries {
            let p = e.map_err(|e| Failure::io("directory listing", e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "json") {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Prints per-scenario tables and the top-1 meta-table for a results directory.
pub fn report(dir: &Path) -> Result<(), Failure> {
    let mut entries: Vec<SummaryEntry> = Vec::new();
    for path in summary_files(dir)? {
        let parsed = std::fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<SummaryFile>(&t).map_err(|e| e.to_string()));
        match parsed {
            Ok(file) => {
                for row in file.entries {
                    let e = row.entry;
                    if entries
                        .iter()
                        .any(|x| x.scenario == e.scenario && x.model == e.model)
                    {
                        log(format!(
                            "warning: duplicate result for ({}, {}) in {}; keeping the first",
                            e.scenario,
                            e.model,
                            path.display()
                        ));
                    } else {
                        entries.push(e);
                    }
                }
            }
            Err(e) => log(format!("warning: skipping {}: {e}", path.display())),
        }
    }
    if entries.is_empty() {
        return Err(Failure::data(format!("no results found in {}", dir.display())));
    }
    let mut scenarios: Vec<&str> = entries.iter().map(|e| e.scenario.as_str()).collect();
    scenarios.sort();
    scenarios.dedup();
    for s in &scenarios {
        println!("{s}");
        println!(
            "  {:<26} {:>7} {:>7} {:>7} {:>6} {:>6}",
            "model", MEASURES[0], MEASURES[1], MEASURES[2], MEASURES[3], MEASURES[4]
        );
        for e in entries.iter().filter(|e| e.scenario == *s) {
            println!(
                "  {:<26} {:>7.2} {:>7.2} {:>7} {:>6.2} {:>6.2}",
                e.model,
                100.0 * e.avg_acc,
                100.0 * e.final_acc,
                render_recovery(e.recovery_speed),
                e.adaptation_rank,
                e.final_rank
            );
        }
    }
    let table = meta_table(&entries)?;
    println!("top-1 counts over {} scenario(s)", table.scenarios.len());
    println!(
        "  {:<26} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "model", MEASURES[0], MEASURES[1], MEASURES[2], MEASURES[3], MEASURES[4]
    );
    let mut w = csv_writer(&dir.join("meta_table.csv"))?;
    let mut header = vec!["model".to_string()];
    header.extend(MEASURES.iter().map(|m| m.to_string()));
    w.write_record(&header).map_err(csv_fail)?;
    for (m, c) in table.models.iter().zip(&table.counts) {
        println!(
            "  {:<26} {:>6} {:>6} {:>6} {:>6} {:>6}",
            m, c[0], c[1], c[2], c[3], c[4]
        );
        let mut row = vec![m.clone()];
        row.extend(c.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_fail)?;
    }
    w.flush().map_err(|e| Failure::io("csv flush", e))?;
    Ok(())
}
