use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use hkge::data::{FilterIndex, TripleStore, Vocab};
use hkge::eval::{per_relation_report, rank_queries, write_metrics_csv, write_per_relation_csv, MetricReport};
use hkge::hierarchy::{analyze_relation, write_hierarchy_csv};
use hkge::model::{CurvatureMode, Model, ModelConfig};
use hkge::training::{self, write_log_csv, EpochRecord, TrainData, TrainObserver, TrainOutcome};
use serde::Serialize;

use crate::config::{write_json, RunConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.hkge";

/// Writes `model` to `path` through a temporary file in the same directory,
/// so readers never see a partial checkpoint.
fn write_checkpoint_atomic(model: &Model, path: &Path) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("temp file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        model.write_checkpoint(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<Model> {
    let f = File::open(path).with_context(|| format!("opening checkpoint {}", path.display()))?;
    Model::read_checkpoint(&mut BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

/// Saves every improved model and reports validation rounds on stderr.
struct CheckpointSaver {
    path: PathBuf,
    label: String,
}

impl TrainObserver for CheckpointSaver {
    fn on_epoch(&mut self, r: &EpochRecord) -> hkge::Result<()> {
        if let Some(m) = &r.metrics {
            eprintln!(
                "{}epoch {:>4}  loss {:.5}  valid mrr {:.4}  h@1 {:.4}  h@10 {:.4}",
                self.label, r.epoch, r.loss, m.mrr, m.h1, m.h10
            );
        }
        Ok(())
    }

    fn on_best(&mut self, model: &Model, _r: &EpochRecord) -> hkge::Result<()> {
        write_checkpoint_atomic(model, &self.path)
            .map_err(|e| hkge::Error::Checkpoint(format!("{e:#}")))
    }
}

fn check_configs(cfg: &RunConfig) -> Result<()> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(())
}

fn train_one(
    store: &TripleStore,
    filter: &FilterIndex,
    model_cfg: ModelConfig,
    cfg: &RunConfig,
    checkpoint: &Path,
    label: String,
) -> Result<TrainOutcome> {
    let model = Model::new(model_cfg, store.n_entities(), store.n_relations(), cfg.train.seed)?;
    let data = TrainData {
        train: &store.train,
        valid: &store.valid,
        filter,
    };
    let mut saver = CheckpointSaver {
        path: checkpoint.to_owned(),
        label,
    };
    let outcome = training::train(model, data, &cfg.train, &mut saver)?;
    if outcome.best_epoch.is_none() {
        // nothing was validated: keep the final parameters
        write_checkpoint_atomic(&outcome.model, checkpoint)?;
    }
    Ok(outcome)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    epochs_run: usize,
    best_epoch: Option<usize>,
    best_valid: Option<MetricReport>,
    final_loss: Option<f64>,
    stopped_early: bool,
    aborted: Option<&'a str>,
    entities: usize,
    relations: usize,
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    check_configs(cfg)?;
    let dataset = cfg.dataset_dir()?;
    let out = cfg.out_dir()?;
    cfg.persist(out)?;

    let store = TripleStore::load_dir(dataset)?.augment_reciprocal();
    store.write_vocab(out)?;
    let filter = FilterIndex::build(&store);
    let outcome = train_one(&store, &filter, cfg.model, cfg, &out.join(CHECKPOINT_FILE), String::new())?;

    write_log_csv(out.join("metrics.csv"), &outcome.log)?;
    let summary = TrainSummary {
        epochs_run: outcome.log.len(),
        best_epoch: outcome.best_epoch,
        best_valid: outcome.best_metrics,
        final_loss: outcome.log.last().map(|r| r.loss),
        stopped_early: outcome.stopped_early,
        aborted: outcome.aborted.as_deref(),
        entities: store.n_entities(),
        relations: store.n_relations(),
    };
    write_json(&out.join("summary.json"), &summary)?;

    if let (Some(e), Some(m)) = (outcome.best_epoch, outcome.best_metrics) {
        println!(
            "best epoch {e}: valid mrr {:.4} h@1 {:.4} h@3 {:.4} h@10 {:.4}",
            m.mrr, m.h1, m.h3, m.h10
        );
    }
    println!("wrote {}", out.display());
    if let Some(reason) = &outcome.aborted {
        bail!("training aborted: {reason}");
    }
    Ok(())
}

/// Rebuilds the training-time ids from the vocab files next to the
/// checkpoint, or from the dataset's first-appearance order without them.
fn load_store_for(dataset: &Path, ckpt_dir: &Path) -> Result<TripleStore> {
    let [tr, va, te] = hkge::data::load_raw_splits(dataset)?;
    let (ent_path, rel_path) = (ckpt_dir.join("entities.tsv"), ckpt_dir.join("relations.tsv"));
    let store = if ent_path.is_file() && rel_path.is_file() {
        let entities = Vocab::read_tsv(&ent_path)?;
        let all_rel = Vocab::read_tsv(&rel_path)?;
        ensure!(
            all_rel.len() % 2 == 0,
            "{} lists {} relations; expected base and reciprocal ids",
            rel_path.display(),
            all_rel.len()
        );
        let mut relations = Vocab::new();
        for name in &all_rel.names()[..all_rel.len() / 2] {
            relations.intern(name);
        }
        TripleStore::with_vocab(entities, relations, &tr, &va, &te)?
    } else {
        TripleStore::build(&tr, &va, &te)
    };
    Ok(store.augment_reciprocal())
}

pub fn eval(cfg: &mut RunConfig) -> Result<()> {
    let ckpt = cfg
        .checkpoint
        .clone()
        .context("--checkpoint is required (or --config of a training run)")?;
    let ckpt_dir = ckpt.parent().map(Path::to_path_buf).unwrap_or_default();
    if cfg.out_dir.is_none() {
        cfg.out_dir = Some(ckpt_dir.join(format!("eval_{}", cfg.split.name())));
    }
    let dataset = cfg.dataset_dir()?.to_owned();
    let model = read_checkpoint(&ckpt)?;
    let store = load_store_for(&dataset, &ckpt_dir)?;
    ensure!(
        model.n_entities() == store.n_entities() && model.n_relations() == store.n_relations(),
        "checkpoint has {} entities and {} relations but the dataset vocabulary has {} and {}",
        model.n_entities(),
        model.n_relations(),
        store.n_entities(),
        store.n_relations()
    );
    cfg.model = *model.config();
    let out = cfg.out_dir()?.to_owned();
    cfg.persist(&out)?;

    let filter = FilterIndex::build(&store);
    let queries = store.split(cfg.split);
    ensure!(!queries.is_empty(), "split {} is empty", cfg.split.name());
    let ranks = rank_queries(&model, queries, &filter, &cfg.train.eval_options())?;
    let m = MetricReport::from_ranks(&ranks)?;
    write_metrics_csv(out.join("metrics.csv"), cfg.split.name(), &m)?;
    println!(
        "{} ({} queries): mrr {:.4} h@1 {:.4} h@3 {:.4} h@10 {:.4}",
        cfg.split.name(),
        m.n_queries,
        m.mrr,
        m.h1,
        m.h3,
        m.h10
    );
    if cfg.per_relation {
        let rows = per_relation_report(queries, &ranks, |r| store.base_relation_name(r).to_owned())?;
        write_per_relation_csv(out.join("per_relation.csv"), &rows)?;
        for r in &rows {
            println!("  {:<32} n {:>6}  mrr {:.4}  h@10 {:.4}", r.relation, r.n, r.mrr, r.h10);
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

struct AblationRow {
    label: &'static str,
    model: ModelConfig,
}

fn ablation_rows(cfg: &RunConfig) -> Vec<AblationRow> {
    let base = cfg.model;
    if cfg.curvature_sweep {
        let labels = ["c=1", "c", "c_r", "c_hr"];
        return CurvatureMode::ALL
            .into_iter()
            .zip(labels)
            .map(|(mode, label)| AblationRow {
                label,
                model: ModelConfig {
                    curvature_mode: mode,
                    ..base
                },
            })
            .collect();
    }
    // rows without learned curvature use the fixed c = 1
    let grid = [
        ("inter", true, false, false),
        ("intra", false, true, false),
        ("inter+intra", true, true, false),
        ("inter+c", true, false, true),
        ("intra+c", false, true, true),
        ("inter+intra+c", true, true, true),
    ];
    grid.into_iter()
        .map(|(label, inter, intra, learned)| AblationRow {
            label,
            model: ModelConfig {
                use_inter_level: inter,
                use_intra_level: intra,
                curvature_mode: if learned {
                    CurvatureMode::Attention
                } else {
                    CurvatureMode::FixedOne
                },
                ..base
            },
        })
        .collect()
}

#[derive(Serialize)]
struct RowConfig<'a> {
    model: &'a ModelConfig,
    train: &'a hkge::training::TrainConfig,
}

fn metric_fields(m: Option<&MetricReport>) -> [String; 4] {
    match m {
        Some(m) => [m.mrr, m.h1, m.h3, m.h10].map(|v| v.to_string()),
        None => std::array::from_fn(|_| String::new()),
    }
}

pub fn ablate(cfg: &RunConfig) -> Result<()> {
    check_configs(cfg)?;
    let dataset = cfg.dataset_dir()?;
    let out = cfg.out_dir()?;
    cfg.persist(out)?;

    let store = TripleStore::load_dir(dataset)?.augment_reciprocal();
    store.write_vocab(out)?;
    let filter = FilterIndex::build(&store);

    let path = out.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record([
        "label",
        "use_inter_level",
        "use_intra_level",
        "curvature_mode",
        "best_epoch",
        "valid_mrr",
        "valid_h1",
        "valid_h3",
        "valid_h10",
        "test_mrr",
        "test_h1",
        "test_h3",
        "test_h10",
        "config",
    ])?;
    let mut failures = Vec::new();
    for row in ablation_rows(cfg) {
        row.model.validate()?;
        let ckpt = out.join(format!("checkpoint_{}.hkge", row.label));
        let outcome = train_one(&store, &filter, row.model, cfg, &ckpt, format!("[{}] ", row.label))?;
        if let Some(reason) = &outcome.aborted {
            failures.push(format!("{}: {reason}", row.label));
        }
        let test = if store.test.is_empty() {
            None
        } else {
            let ranks = rank_queries(&outcome.model, &store.test, &filter, &cfg.train.eval_options())?;
            Some(MetricReport::from_ranks(&ranks)?)
        };
        let config = serde_json::to_string(&RowConfig {
            model: &row.model,
            train: &cfg.train,
        })?;
        let mut record = vec![
            row.label.to_owned(),
            row.model.use_inter_level.to_string(),
            row.model.use_intra_level.to_string(),
            row.model.curvature_mode.name().to_owned(),
            outcome.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
        ];
        record.extend(metric_fields(outcome.best_metrics.as_ref()));
        record.extend(metric_fields(test.as_ref()));
        record.push(config);
        w.write_record(&record)?;
        w.flush()?;
        println!(
            "{:<14} valid mrr {:>7}  test mrr {:>7}",
            row.label,
            outcome.best_metrics.map_or("-".into(), |m| format!("{:.4}", m.mrr)),
            test.map_or("-".into(), |m| format!("{:.4}", m.mrr)),
        );
    }
    println!("wrote {}", path.display());
    if !failures.is_empty() {
        bail!("training aborted in {} row(s): {}", failures.len(), failures.join("; "));
    }
    Ok(())
}

pub fn analyze(cfg: &RunConfig) -> Result<()> {
    let dataset = cfg.dataset_dir()?;
    let out = cfg.out_dir()?;
    ensure!(cfg.samples > 0, "--samples must be at least 1");
    cfg.persist(out)?;

    let store = TripleStore::load_dir(dataset)?;
    let names: Vec<String> = if cfg.relations.is_empty() {
        store.relations.names().to_vec()
    } else {
        cfg.relations.clone()
    };
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for name in &names {
        match analyze_relation(&store, name, cfg.samples, cfg.train.seed) {
            Ok(row) => {
                println!(
                    "{:<32} nodes {:>6} edges {:>6} khs {:.4} xi {:.4} ± {:.4}",
                    row.relation, row.nodes, row.edges, row.khs, row.xi_mean, row.xi_stderr
                );
                rows.push(row);
            }
            Err(e) => {
                println!("{name:<32} ERROR {e}");
                errors.push(name.as_str());
            }
        }
    }
    let path = out.join("hierarchy.csv");
    write_hierarchy_csv(&path, &rows)?;
    println!("wrote {}", path.display());
    if !errors.is_empty() {
        bail!("could not analyse relation(s): {}", errors.join(", "));
    }
    Ok(())
}
