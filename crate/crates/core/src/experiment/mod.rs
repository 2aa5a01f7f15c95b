//! Experiment commands: train, evaluate, ablate, gamma sweep, synthetic data
//! and bundle reports. Every command writes its outputs under one directory;
//! CSV outputs depend only on the config snapshot and the data.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

pub use config::{ExperimentConfig, Paths, Task};

use crate::bundle::synthetic::{generate_synthetic, SyntheticConfig};
use crate::bundle::{load_bundle, write_bundle, Bundle, DatasetManifest, Split};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::coke::{retrieve, KnowledgeStore};
use crate::error::{Result, TecoError};
use crate::metrics::MetricsReport;
use crate::model::{Ablation, ModelInput, TecoModel, Variant};
use crate::rng::SplitRng;
use crate::train::{evaluate, fit, history_csv, EpochRecord};
use rand::RngCore;

pub const RESULT_CSV: &str = "result.csv";
pub const HISTORY_CSV: &str = "history.csv";
pub const SNAPSHOT: &str = "config.snapshot";
pub const REPORT: &str = "report.txt";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const EVALUATION_CSV: &str = "evaluation.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const GAMMA_CSV: &str = "gamma_sweep.csv";
pub const KNOWLEDGE_TSV: &str = "knowledge.tsv";
pub const BUNDLE_REPORT: &str = "bundle_report.txt";
pub const RETRIEVAL_CSV: &str = "retrieval.csv";

const RESULT_HEADER: &str = "variant,task,gamma,acc,macro_f1,macro_prec,macro_rec,best_epoch,epochs_run,best_val_f1,num_params";

/// Outcome of one training run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub snapshot: String,
    /// Variant name when the ablation matches a named variant, else `custom`.
    pub variant: String,
    pub task: Task,
    pub gamma: f64,
    pub test: MetricsReport,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_f1: Option<f64>,
    pub num_params: usize,
    pub wall_clock_secs: f64,
}

impl RunResult {
    fn csv_row(&self) -> String {
        let m = &self.test;
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{},{},{},{}",
            self.variant,
            self.task.name(),
            self.gamma,
            m.acc,
            m.macro_f1,
            m.macro_prec,
            m.macro_rec,
            self.best_epoch.map_or(String::new(), |e| e.to_string()),
            self.history.len(),
            self.best_val_f1
                .map_or(String::new(), |f| format!("{f:.6}")),
            self.num_params
        )
    }
}

pub fn results_csv(results: &[RunResult]) -> String {
    let mut out = format!("{RESULT_HEADER}\n");
    for r in results {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn variant_label(ablation: Ablation) -> String {
    Variant::ALL
        .into_iter()
        .find(|v| v.apply(Ablation::default()) == ablation)
        .map_or("custom".into(), |v| v.name().into())
}

/// Train, validation and test inputs for a task.
pub struct Prepared {
    pub train: Vec<ModelInput<f32>>,
    pub valid: Vec<ModelInput<f32>>,
    pub test: Vec<ModelInput<f32>>,
}

pub fn prepare(bundle: &Bundle, task: Task) -> Result<Prepared> {
    let map = match task {
        Task::TwentyClass => None,
        Task::Binary => Some(bundle.manifest.binary_map.as_ref().ok_or_else(|| {
            TecoError::Config("task=binary needs a manifest with a binary_map".into())
        })?),
    };
    let inputs = |split| {
        bundle
            .split(split)
            .into_iter()
            .map(|r| {
                let mut x = ModelInput::from_record(r);
                if let Some(map) = map {
                    x.label = usize::from(map[r.label]);
                }
                x
            })
            .collect()
    };
    Ok(Prepared {
        train: inputs(Split::Train),
        valid: inputs(Split::Valid),
        test: inputs(Split::Test),
    })
}

/// Build, train and test one model. Initialization and training streams
/// both derive from `cfg.seed`.
pub fn run_once(
    cfg: &ExperimentConfig,
    manifest: &DatasetManifest,
    data: &Prepared,
) -> Result<(RunResult, TecoModel<f32>)> {
    cfg.validate()?;
    let model_cfg = cfg.model_config(manifest)?;
    if data.test.is_empty() {
        return Err(TecoError::Data("empty split: test".into()));
    }
    let start = Instant::now();
    let mut root = SplitRng::new(cfg.seed);
    let mut init = root.split();
    let train_seed = root.next_u64();
    let mut model = TecoModel::<f32>::new(model_cfg, &mut init)?;
    let report = fit(
        &mut model,
        &data.train,
        &data.valid,
        &cfg.train_config(train_seed),
    )?;
    let test = evaluate(&model, &data.test, cfg.train.eval_batch_size)?;
    let result = RunResult {
        snapshot: cfg.snapshot(),
        variant: variant_label(cfg.ablation),
        task: cfg.task,
        gamma: cfg.effective_gamma(),
        test,
        history: report.history,
        best_epoch: report.best_epoch,
        best_val_f1: report.best_val_f1,
        num_params: model.num_parameters(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((result, model))
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| TecoError::Usage(format!("{key} is required for this command")))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| TecoError::io(&path, e))
}

fn create(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| TecoError::io(dir, e))
}

/// Agreement between a knowledge store and the retrieved phrases recorded in
/// a bundle, per record with a stored query embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalRow {
    pub id: String,
    pub bundle_xreact: String,
    pub bundle_xwant: String,
    pub xreact: String,
    pub xwant: String,
    pub score: f64,
}

impl RetrievalRow {
    pub fn matches(&self) -> bool {
        self.bundle_xreact == self.xreact && self.bundle_xwant == self.xwant
    }
}

pub fn check_retrieval(bundle: &Bundle, store: &KnowledgeStore) -> Result<Vec<RetrievalRow>> {
    bundle
        .records
        .iter()
        .filter_map(|r| r.query_embedding.as_ref().map(|q| (r, q)))
        .map(|(r, q)| {
            let pair = retrieve(q, store)?;
            let p = &r.relations.phrases;
            Ok(RetrievalRow {
                id: r.id.clone(),
                bundle_xreact: p.ret_xreact.clone(),
                bundle_xwant: p.ret_xwant.clone(),
                xreact: pair.xreact,
                xwant: pair.xwant,
                score: pair.score.unwrap_or(f64::NAN),
            })
        })
        .collect()
}

pub fn retrieval_csv(rows: &[RetrievalRow]) -> String {
    let mut out = String::from(
        "id,bundle_xreact,bundle_xwant,retrieved_xreact,retrieved_xwant,score,match\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.6},{}",
            r.id,
            csv_field(&r.bundle_xreact),
            csv_field(&r.bundle_xwant),
            csv_field(&r.xreact),
            csv_field(&r.xwant),
            r.score,
            r.matches()
        );
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn metrics_text(m: &MetricsReport, class_names: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "acc={:.6}", m.acc);
    let _ = writeln!(out, "macro_f1={:.6}", m.macro_f1);
    let _ = writeln!(out, "macro_prec={:.6}", m.macro_prec);
    let _ = writeln!(out, "macro_rec={:.6}", m.macro_rec);
    let _ = writeln!(out, "class,name,precision,recall,f1,support");
    for (c, pc) in m.per_class.iter().enumerate() {
        let name = class_names.get(c).map_or("", String::as_str);
        let _ = writeln!(
            out,
            "{c},{name},{:.6},{:.6},{:.6},{}",
            pc.precision, pc.recall, pc.f1, pc.support
        );
    }
    let _ = writeln!(out, "confusion (rows = label, columns = prediction)");
    for row in &m.confusion {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
    out
}

fn class_names(manifest: &DatasetManifest, task: Task) -> Vec<String> {
    match task {
        Task::TwentyClass => manifest.class_names.clone(),
        Task::Binary => vec!["binary_0".into(), "binary_1".into()],
    }
}

fn load_knowledge(cfg: &ExperimentConfig) -> Result<Option<KnowledgeStore>> {
    cfg.paths
        .knowledge
        .as_ref()
        .map(KnowledgeStore::load)
        .transpose()
}

/// Train on the configured bundle, test the best checkpoint and write
/// `result.csv`, `history.csv`, `config.snapshot`, `report.txt` and the
/// checkpoint under `paths.out`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let out = required(&cfg.paths.out, "paths.out")?;
    let bundle = load_bundle(required(&cfg.paths.bundle, "paths.bundle")?)?;
    cfg.model_config(&bundle.manifest)?;
    let knowledge = load_knowledge(cfg)?;
    let data = prepare(&bundle, cfg.task)?;
    let (result, model) = run_once(cfg, &bundle.manifest, &data)?;

    create(out)?;
    write(out, RESULT_CSV, &results_csv(std::slice::from_ref(&result)))?;
    write(out, HISTORY_CSV, &history_csv(&result.history))?;
    write(out, SNAPSHOT, &result.snapshot)?;
    save_checkpoint(out.join(CHECKPOINT_DIR), &model.params)?;

    let mut report = String::new();
    let _ = writeln!(report, "[run]");
    let _ = writeln!(report, "variant={}", result.variant);
    let _ = writeln!(report, "wall_clock_seconds={:.3}", result.wall_clock_secs);
    let _ = writeln!(report, "parameters={}", result.num_params);
    let _ = writeln!(
        report,
        "best_epoch={}",
        result.best_epoch.map_or("none".into(), |e| e.to_string())
    );
    let _ = writeln!(report, "epochs_run={}", result.history.len());
    let _ = writeln!(report, "history={HISTORY_CSV}");
    if let Some(store) = &knowledge {
        let rows = check_retrieval(&bundle, store)?;
        let hits = rows.iter().filter(|r| r.matches()).count();
        let _ = writeln!(report, "retrieval_agreement={hits}/{}", rows.len());
    }
    let _ = writeln!(report, "\n[test]");
    report.push_str(&metrics_text(
        &result.test,
        &class_names(&bundle.manifest, cfg.task),
    ));
    let _ = writeln!(report, "\n[config]");
    report.push_str(&result.snapshot);
    write(out, REPORT, &report)?;
    Ok(result)
}

/// Metrics of a saved checkpoint on every split, written to `evaluation.csv`.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<[MetricsReport; 3]> {
    cfg.validate()?;
    let out = required(&cfg.paths.out, "paths.out")?;
    let bundle = load_bundle(required(&cfg.paths.bundle, "paths.bundle")?)?;
    let model_cfg = cfg.model_config(&bundle.manifest)?;
    let mut model = TecoModel::<f32>::new(model_cfg, &mut SplitRng::new(cfg.seed))?;
    let ckpt = cfg
        .paths
        .checkpoint
        .clone()
        .unwrap_or_else(|| out.join(CHECKPOINT_DIR));
    load_checkpoint(&ckpt, &mut model.params)?;
    let data = prepare(&bundle, cfg.task)?;
    let batch = cfg.train.eval_batch_size;
    let mut reports = Vec::with_capacity(3);
    let mut csv = String::from("split,acc,macro_f1,macro_prec,macro_rec\n");
    for (split, inputs) in [
        (Split::Train, &data.train),
        (Split::Valid, &data.valid),
        (Split::Test, &data.test),
    ] {
        let m = evaluate(&model, inputs, batch)?;
        let _ = writeln!(
            csv,
            "{},{:.6},{:.6},{:.6},{:.6}",
            split.name(),
            m.acc,
            m.macro_f1,
            m.macro_prec,
            m.macro_rec
        );
        reports.push(m);
    }
    create(out)?;
    write(out, EVALUATION_CSV, &csv)?;
    Ok(reports.try_into().expect("three splits"))
}

/// One run per variant, each changing only its own switch on top of the
/// configured ablation. Runs execute in parallel; rows keep the given order.
pub fn cmd_ablate(cfg: &ExperimentConfig, variants: &[Variant]) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    if variants.is_empty() {
        return Err(TecoError::Config("no variants given".into()));
    }
    let out = required(&cfg.paths.out, "paths.out")?;
    let bundle = load_bundle(required(&cfg.paths.bundle, "paths.bundle")?)?;
    let data = prepare(&bundle, cfg.task)?;
    let configs: Vec<ExperimentConfig> = variants
        .iter()
        .map(|v| {
            let c = ExperimentConfig {
                ablation: v.apply(cfg.ablation),
                ..cfg.clone()
            };
            c.model_config(&bundle.manifest).map(|_| c)
        })
        .collect::<Result<_>>()?;
    let results: Vec<RunResult> = configs
        .par_iter()
        .map(|c| run_once(c, &bundle.manifest, &data).map(|(r, _)| r))
        .collect::<Result<_>>()?;
    create(out)?;
    write(out, ABLATION_CSV, &results_csv(&results))?;
    write(out, SNAPSHOT, &cfg.snapshot())?;
    Ok(results)
}

/// 0.05, 0.10, ..., 0.95.
pub fn default_gamma_grid() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

/// One run per γ. Rows follow grid order.
pub fn cmd_gamma_sweep(cfg: &ExperimentConfig, grid: &[f64]) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(TecoError::Config("empty gamma grid".into()));
    }
    if let Some(g) = grid.iter().find(|g| !(0.0..=1.0).contains(*g)) {
        return Err(TecoError::Config(format!("gamma {g} outside [0, 1]")));
    }
    if cfg.ablation.no_tem || !cfg.ablation.modalities.text() {
        return Err(TecoError::Config(
            "gamma sweep needs the text enhancement enabled".into(),
        ));
    }
    let out = required(&cfg.paths.out, "paths.out")?;
    let bundle = load_bundle(required(&cfg.paths.bundle, "paths.bundle")?)?;
    cfg.model_config(&bundle.manifest)?;
    let data = prepare(&bundle, cfg.task)?;
    let results: Vec<RunResult> = grid
        .par_iter()
        .map(|&g| {
            let c = ExperimentConfig {
                gamma: Some(g),
                ..cfg.clone()
            };
            run_once(&c, &bundle.manifest, &data).map(|(r, _)| r)
        })
        .collect::<Result<_>>()?;
    create(out)?;
    write(out, GAMMA_CSV, &results_csv(&results))?;
    write(out, SNAPSHOT, &cfg.snapshot())?;
    Ok(results)
}

/// Write a synthetic bundle and its knowledge store (`knowledge.tsv`) into `out`.
pub fn cmd_make_synthetic(syn: &SyntheticConfig, out: &Path) -> Result<Bundle> {
    let (bundle, store) = generate_synthetic(syn)?;
    write_bundle(out, &bundle)?;
    store.save(out.join(KNOWLEDGE_TSV))?;
    Ok(bundle)
}

/// Summary of a bundle in `bundle_report.txt`; with a knowledge store also
/// `retrieval.csv`. Returns the number of retrieval mismatches.
pub fn export_report(bundle_path: &Path, knowledge: Option<&Path>, out: &Path) -> Result<usize> {
    let bundle = load_bundle(bundle_path)?;
    let m = &bundle.manifest;
    let [tr, va, te] = bundle.split_sizes();
    let mut text = String::new();
    let _ = writeln!(text, "records={}", bundle.records.len());
    let _ = writeln!(text, "split_sizes=train:{tr},valid:{va},test:{te}");
    let _ = writeln!(
        text,
        "dims=text:{},vision:{},audio:{}",
        m.dims.text, m.dims.vision, m.dims.audio
    );
    let _ = writeln!(
        text,
        "lengths=text:{},vision:{},audio:{},relation:{}",
        m.lengths.text, m.lengths.vision, m.lengths.audio, m.lengths.relation
    );
    let _ = writeln!(
        text,
        "binary_map={}",
        if m.binary_map.is_some() {
            "present"
        } else {
            "absent"
        }
    );
    let _ = writeln!(text, "class,name,train,valid,test");
    for (c, name) in m.class_names.iter().enumerate() {
        let count = |s| {
            bundle
                .records
                .iter()
                .filter(|r| r.split == s && r.label == c)
                .count()
        };
        let _ = writeln!(
            text,
            "{c},{name},{},{},{}",
            count(Split::Train),
            count(Split::Valid),
            count(Split::Test)
        );
    }
    let mut mismatches = 0;
    if let Some(path) = knowledge {
        let rows = check_retrieval(&bundle, &KnowledgeStore::load(path)?)?;
        mismatches = rows.iter().filter(|r| !r.matches()).count();
        let _ = writeln!(
            text,
            "retrieval_agreement={}/{}",
            rows.len() - mismatches,
            rows.len()
        );
        create(out)?;
        write(out, RETRIEVAL_CSV, &retrieval_csv(&rows))?;
    }
    create(out)?;
    write(out, BUNDLE_REPORT, &text)?;
    Ok(mismatches)
}
