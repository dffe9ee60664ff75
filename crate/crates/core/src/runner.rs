//! Orchestration behind the `unlearn-lab` binary: TOML run configs, the
//! run directory artifact store and one function per subcommand.
//!
//! A run directory is `<out-dir>/<run-id>/` with `manifest.json`,
//! `checkpoints/`, `logs/`, `reports/` and the task archive under `task/`.
//! The run id defaults to a prefix of the effective config hash, so every
//! subcommand invoked with the same config shares one directory and reuses
//! the artifacts already in it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{run_baseline, BaselineConfig, BaselineLog, Method};
use crate::data::archive::{load_task, save_task, MANIFEST};
use crate::data::{build_task, pretraining_pool, LabeledExample, SplitFractions, SuiteGroup, TaxonomySpec, UnlearnTask};
use crate::error::{Error, Result};
use crate::eval::{accuracy_of, build_report, subgroup_accuracies, EvalReport};
use crate::model::checkpoint::{checkpoint_bytes, checkpoint_from_bytes};
use crate::model::{pretrain_toy, BlockSpec, ModelSpec, ParameterSet, TrainConfig, TrainLog};
use crate::pipeline::{
    choose_layers, continuous_merge, forget_stage, remind_and_restore, restored_at, ForgetLog, RemindLog,
    RestoreLog, StageConfig,
};
use crate::records::write_atomic;
use crate::selection::LayerScoreMap;

type Params = ParameterSet<f32>;

// -------------------------------------------------------------------- config

/// Image-tower blocks, embedding width and logit temperature. The
/// vocabulary comes from the taxonomy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub blocks: Vec<BlockSpec>,
    pub embed_dim: usize,
    pub temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let r = ModelSpec::reference(TaxonomySpec::default().image_size, Vec::new());
        ModelConfig {
            blocks: r.blocks,
            embed_dim: r.embed_dim,
            temperature: r.temperature,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, taxonomy: &TaxonomySpec) -> ModelSpec {
        ModelSpec {
            blocks: self.blocks.clone(),
            embed_dim: self.embed_dim,
            temperature: self.temperature,
            ..ModelSpec::reference(taxonomy.image_size, taxonomy.vocab())
        }
    }
}

/// One experiment. `seed` is the only seed: it is copied into every
/// section, so sections must not set their own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub target_subgroup: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    /// Pre-trained checkpoint to unlearn from; pre-trained in the run
    /// directory when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original: Option<PathBuf>,
    #[serde(default)]
    pub taxonomy: TaxonomySpec,
    #[serde(default)]
    pub splits: SplitFractions,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub pretrain: TrainConfig,
    #[serde(default)]
    pub stages: StageConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
}

const SEEDED_SECTIONS: [&str; 4] = ["taxonomy", "pretrain", "stages", "baselines"];

impl RunConfig {
    pub fn new(seed: u64, target_subgroup: usize) -> Self {
        let mut c = RunConfig {
            seed,
            target_subgroup,
            run_id: None,
            original: None,
            taxonomy: TaxonomySpec::default(),
            splits: SplitFractions::default(),
            model: ModelConfig::default(),
            pretrain: TrainConfig::default(),
            stages: StageConfig::default(),
            baselines: BaselineConfig::default(),
        };
        c.set_seed(seed);
        c
    }

    /// Parses and validates config text. `origin` names the source in
    /// error messages; parse errors carry line and column.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| Error::config(format!("{origin}: {e}")))?;
        for section in SEEDED_SECTIONS {
            if table.get(section).and_then(|s| s.get("seed")).is_some() {
                return Err(Error::config(format!(
                    "{origin}: [{section}] sets `seed`; the top-level seed drives every section"
                )));
            }
        }
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("{origin}: {e}")))?;
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.taxonomy.seed = seed;
        self.pretrain.seed = seed;
        self.stages.seed = seed;
        self.baselines.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.taxonomy.validate()?;
        self.splits.validate()?;
        self.stages.validate()?;
        self.baselines.validate()?;
        self.model.spec(&self.taxonomy).validate()?;
        if self.target_subgroup >= self.taxonomy.n_subgroups() {
            return Err(Error::config(format!(
                "target_subgroup {} outside the {} subgroups of the taxonomy",
                self.target_subgroup,
                self.taxonomy.n_subgroups()
            )));
        }
        if let Some(id) = &self.run_id {
            if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) || id.starts_with('.') {
                return Err(Error::config(format!("run_id {id:?} must be a plain file name")));
            }
        }
        Ok(())
    }

    /// Canonical TOML form; section seeds are left out since they follow the
    /// root seed, so the output parses back to an equal config.
    pub fn to_toml(&self) -> String {
        let mut table = toml::Table::try_from(self).expect("run config serializes");
        for section in SEEDED_SECTIONS {
            if let Some(toml::Value::Table(t)) = table.get_mut(section) {
                t.remove("seed");
            }
        }
        toml::to_string(&table).expect("run config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        sha256(self.to_toml().as_bytes())
    }
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub original: Option<PathBuf>,
}

pub const DEFAULT_OUT_DIR: &str = "runs";

pub fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

// ------------------------------------------------------------ artifact store

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Input name → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Path relative to the run directory → SHA-256 of the file bytes.
    pub outputs: BTreeMap<String, String>,
    /// Seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

/// Append-only record of every command run in a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub records: Vec<CommandRecord>,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
    pub run_id: String,
}

impl RunDir {
    pub fn open(out_dir: &Path, run_id: &str) -> Result<Self> {
        let root = out_dir.join(run_id);
        for sub in ["checkpoints", "logs", "reports"] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        Ok(RunDir {
            root,
            run_id: run_id.to_string(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn exists(&self, rel: &str) -> bool {
        self.path(rel).is_file()
    }

    /// Writes `bytes` at `rel` and returns their hash. An existing file is
    /// left alone when identical and is never replaced by different bytes,
    /// so hashes recorded earlier keep resolving.
    pub fn put(&self, rel: &str, bytes: &[u8]) -> Result<String> {
        let path = self.path(rel);
        let hash = sha256(bytes);
        if path.is_file() {
            let old = std::fs::read(&path)?;
            if sha256(&old) == hash {
                return Ok(hash);
            }
            return Err(Error::Artifact(format!(
                "{} already holds different content; use a fresh run id or out-dir",
                path.display()
            )));
        }
        write_atomic(&path, bytes)?;
        Ok(hash)
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        let path = self.path("manifest.json");
        if !path.is_file() {
            return Ok(RunManifest {
                run_id: self.run_id.clone(),
                records: Vec::new(),
            });
        }
        let text = std::fs::read_to_string(&path)?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))?;
        if m.run_id != self.run_id {
            return Err(Error::Artifact(format!(
                "{} belongs to run {:?}",
                path.display(),
                m.run_id
            )));
        }
        Ok(m)
    }

    pub fn append(&self, record: CommandRecord) -> Result<()> {
        let mut m = self.manifest()?;
        m.records.push(record);
        write_atomic(&self.path("manifest.json"), &serde_json::to_vec_pretty(&m)?)
    }

    /// Checks that every output recorded in the manifest is on disk with
    /// the recorded hash.
    pub fn verify(&self) -> Result<()> {
        for r in self.manifest()?.records {
            for (rel, hash) in &r.outputs {
                let bytes = std::fs::read(self.path(rel))
                    .map_err(|e| Error::Artifact(format!("{rel} recorded by {}: {e}", r.command)))?;
                if &sha256(&bytes) != hash {
                    return Err(Error::Artifact(format!("{rel} no longer matches its recorded hash")));
                }
            }
        }
        Ok(())
    }
}

/// Accumulates one command's manifest record.
struct Recorder {
    record: CommandRecord,
    clock: Instant,
}

impl Recorder {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        Recorder {
            record: CommandRecord {
                command: command.to_string(),
                config_hash: cfg.hash(),
                seed: cfg.seed,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                timings: BTreeMap::new(),
            },
            clock: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &str) {
        self.record
            .timings
            .insert(stage.to_string(), self.clock.elapsed().as_secs_f64());
        self.clock = Instant::now();
    }

    fn input(&mut self, name: &str, hash: String) {
        self.record.inputs.insert(name.to_string(), hash);
    }

    fn put(&mut self, run: &RunDir, rel: &str, bytes: &[u8]) -> Result<String> {
        let h = run.put(rel, bytes)?;
        self.record.outputs.insert(rel.to_string(), h.clone());
        Ok(h)
    }

    fn put_json<S: Serialize>(&mut self, run: &RunDir, rel: &str, value: &S) -> Result<String> {
        self.put(run, rel, &serde_json::to_vec_pretty(value)?)
    }

    fn put_checkpoint(&mut self, run: &RunDir, rel: &str, p: &Params) -> Result<String> {
        self.put(run, rel, &checkpoint_bytes(p))
    }

    fn put_report(&mut self, run: &RunDir, stem: &str, r: &EvalReport) -> Result<()> {
        self.put(run, &format!("reports/{stem}.json"), r.to_json().as_bytes())?;
        self.put(run, &format!("reports/{stem}.csv"), r.to_csv().as_bytes())?;
        Ok(())
    }

    fn finish(self, run: &RunDir) -> Result<CommandRecord> {
        run.append(self.record.clone())?;
        Ok(self.record)
    }
}

fn read_checkpoint(path: &Path) -> Result<(Params, String)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Artifact(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let p = checkpoint_from_bytes(&bytes)?;
    Ok((p, sha256(&bytes)))
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))
}

// ------------------------------------------------------------------ runner

/// A loaded config bound to its run directory.
pub struct Runner {
    pub config: RunConfig,
    pub run: RunDir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub losses: Vec<f64>,
    /// Subgroup-level zero-shot accuracy over the held-out examples.
    pub held_out_accuracy: f64,
    /// Superclass-level zero-shot accuracy over the same examples.
    pub held_out_superclass_accuracy: f64,
}

pub struct PretrainOutput {
    pub original: Params,
    pub summary: PretrainSummary,
    pub record: CommandRecord,
}

pub struct UnlearnOutput {
    pub original: Params,
    pub forgotten: Params,
    pub reminded: Params,
    pub restored: Params,
    pub alpha: f64,
    pub report: EvalReport,
    pub record: CommandRecord,
}

pub struct BaselineOutput {
    pub model: Params,
    pub log: BaselineLog,
    pub report: EvalReport,
    pub record: CommandRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    RemindSteps,
    AlphaMerge,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::RemindSteps => "remind_steps",
            SweepAxis::AlphaMerge => "alpha_merge",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "remind_steps" => Ok(SweepAxis::RemindSteps),
            "alpha_merge" => Ok(SweepAxis::AlphaMerge),
            other => Err(Error::config(format!(
                "unknown sweep axis {other:?}; expected remind_steps or alpha_merge"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    /// Target-suite accuracy.
    pub acc_f: f64,
    /// Retain-suite accuracy.
    pub acc_r: f64,
    /// Mean accuracy over the unseen suites.
    pub acc_unseen: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},acc_f,acc_r,acc_unseen,score\n", self.axis);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.1}\n",
                r.value, r.acc_f, r.acc_r, r.acc_unseen, r.score
            ));
        }
        out
    }
}

/// Per-subgroup accuracy of several models, one row per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousReport {
    pub subgroups: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
    pub merged_hash: String,
}

impl ContinuousReport {
    pub fn row(&self, model: &str) -> Option<&[f64]> {
        self.rows.iter().find(|r| r.0 == model).map(|r| r.1.as_slice())
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("model,{}\n", self.subgroups.join(","));
        for (name, accs) in &self.rows {
            let cells: Vec<String> = accs.iter().map(|a| format!("{:.1}", 100.0 * a)).collect();
            out.push_str(&format!("{name},{}\n", cells.join(",")));
        }
        out
    }
}

pub struct ContinuousOutput {
    pub merged: Params,
    pub report: ContinuousReport,
    pub record: CommandRecord,
}

fn to_config<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::config(io.to_string()),
        other => other,
    })
}

fn held_out(task: &UnlearnTask<f32>) -> Vec<LabeledExample<f32>> {
    // target and all-classes suites together cover every subgroup's
    // held-out share, unstyled
    ["target", "all"]
        .iter()
        .filter_map(|n| task.suite(n))
        .flat_map(|s| s.examples.iter().cloned())
        .collect()
}

impl Runner {
    pub fn new(mut config: RunConfig, ov: &Overrides) -> Result<Self> {
        if let Some(seed) = ov.seed {
            config.set_seed(seed);
        }
        if let Some(o) = &ov.original {
            config.original = Some(o.clone());
        }
        config.validate()?;
        let run_id = match &config.run_id {
            Some(id) => id.clone(),
            None => Self::derived_run_id(&config)?,
        };
        let out = ov.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        let run = RunDir::open(&out, &run_id)?;
        Ok(Runner { config, run })
    }

    pub fn from_path(path: &Path, ov: &Overrides) -> Result<Self> {
        Self::new(RunConfig::load(path)?, ov)
    }

    /// Config hash with the original checkpoint's path replaced by its
    /// content hash, truncated.
    fn derived_run_id(config: &RunConfig) -> Result<String> {
        let mut c = config.clone();
        let original = match c.original.take() {
            Some(p) => read_checkpoint(&p)?.1,
            None => String::new(),
        };
        let mut h = Sha256::new();
        h.update(c.to_toml().as_bytes());
        h.update(original.as_bytes());
        Ok(hex::encode(h.finalize())[..16].to_string())
    }

    fn task(&self) -> Result<UnlearnTask<f32>> {
        let c = &self.config;
        Ok(build_task::<f32>(&c.taxonomy, c.target_subgroup, &c.splits, c.seed)?.1)
    }

    fn check_vocab(&self, p: &Params, what: &str) -> Result<()> {
        if p.spec().vocab != self.config.taxonomy.vocab() {
            return Err(Error::Artifact(format!(
                "{what} was trained on a different vocabulary than this taxonomy"
            )));
        }
        Ok(())
    }

    /// Configured original, else the run's own, else a fresh pre-training.
    fn original(&self, rec: &mut Recorder) -> Result<Params> {
        let (p, hash) = match &self.config.original {
            Some(path) => read_checkpoint(path)?,
            None if self.run.exists("checkpoints/original.ckpt") => {
                read_checkpoint(&self.run.path("checkpoints/original.ckpt"))?
            }
            None => {
                let out = self.pretrain()?;
                rec.lap("pretrain");
                let h = out.record.outputs["checkpoints/original.ckpt"].clone();
                (out.original, h)
            }
        };
        self.check_vocab(&p, "original")?;
        rec.input("original", hash);
        Ok(p)
    }

    fn task_input(&self, task: &UnlearnTask<f32>, rec: &mut Recorder) -> Result<()> {
        if !self.run.path("task").join(MANIFEST).is_file() {
            save_task(task, &self.run.path("task"))?;
        }
        rec.input("task", sha256(&std::fs::read(self.run.path("task").join(MANIFEST))?));
        Ok(())
    }

    pub fn pretrain(&self) -> Result<PretrainOutput> {
        let c = &self.config;
        let mut rec = Recorder::new("pretrain", c);
        let (dataset, task) = build_task::<f32>(&c.taxonomy, c.target_subgroup, &c.splits, c.seed)?;
        let pool = pretraining_pool(&dataset, &c.splits, c.seed)?;
        rec.lap("data");
        let (original, log): (Params, TrainLog) = pretrain_toy(c.model.spec(&c.taxonomy), &pool, &c.pretrain)?;
        rec.lap("train");
        let ex = held_out(&task);
        let sub: Vec<usize> = ex.iter().map(|e| e.subgroup).collect();
        let sup: Vec<usize> = ex.iter().map(|e| e.superclass).collect();
        let summary = PretrainSummary {
            losses: log.losses,
            held_out_accuracy: accuracy_of(&original, &ex, &sub, &c.taxonomy.subgroup_prompts())?,
            held_out_superclass_accuracy: accuracy_of(&original, &ex, &sup, &c.taxonomy.superclass_prompts())?,
        };
        rec.lap("eval");
        rec.put_checkpoint(&self.run, "checkpoints/original.ckpt", &original)?;
        rec.put_json(&self.run, "logs/pretrain.json", &summary)?;
        let record = rec.finish(&self.run)?;
        Ok(PretrainOutput {
            original,
            summary,
            record,
        })
    }

    /// Forgotten model and the adapted layers, reusing the run's artifacts
    /// when present.
    fn forgotten(
        &self,
        original: &Params,
        task: &UnlearnTask<f32>,
        rec: &mut Recorder,
    ) -> Result<(Params, Vec<String>)> {
        let cfg = &self.config.stages;
        if self.run.exists("checkpoints/forgotten.ckpt") && self.run.exists("logs/forget.json") {
            let (p, h) = read_checkpoint(&self.run.path("checkpoints/forgotten.ckpt"))?;
            let log: ForgetLog = read_json(&self.run.path("logs/forget.json"))?;
            rec.input("forgotten", h);
            return Ok((p, log.selected_layers));
        }
        let (scores, selected): (LayerScoreMap, Vec<String>) = choose_layers(original, task, cfg)?;
        rec.lap("layer_selection");
        let (forgotten, log) = forget_stage(original, task, &selected, cfg)?;
        rec.lap("forget");
        rec.put(&self.run, "logs/layer_scores.json", scores.to_json().as_bytes())?;
        rec.put_json(&self.run, "logs/forget.json", &log)?;
        rec.put_checkpoint(&self.run, "checkpoints/forgotten.ckpt", &forgotten)?;
        Ok((forgotten, selected))
    }

    pub fn unlearn(&self) -> Result<UnlearnOutput> {
        let mut rec = Recorder::new("unlearn", &self.config);
        let original = self.original(&mut rec)?;
        let task = self.task()?;
        self.task_input(&task, &mut rec)?;
        rec.lap("data");
        let (forgotten, selected) = self.forgotten(&original, &task, &mut rec)?;
        let (reminded, remind_log, alpha, restored, restore_log): (Params, RemindLog, f64, Params, RestoreLog) =
            remind_and_restore(&original, &forgotten, &task, &selected, &self.config.stages)?;
        rec.lap("remind_restore");
        rec.put_json(&self.run, "logs/remind.json", &remind_log)?;
        rec.put_json(&self.run, "logs/restore.json", &restore_log)?;
        rec.put_checkpoint(&self.run, "checkpoints/reminded.ckpt", &reminded)?;
        rec.put_checkpoint(&self.run, "checkpoints/restored.ckpt", &restored)?;
        let report = build_report(&original, &restored, &task.suites)?;
        rec.put_report(&self.run, "restored", &report)?;
        rec.lap("eval");
        let record = rec.finish(&self.run)?;
        Ok(UnlearnOutput {
            original,
            forgotten,
            reminded,
            restored,
            alpha,
            report,
            record,
        })
    }

    pub fn baseline(&self, method: Method) -> Result<BaselineOutput> {
        let mut rec = Recorder::new(&format!("baseline {method}"), &self.config);
        let original = self.original(&mut rec)?;
        let task = self.task()?;
        self.task_input(&task, &mut rec)?;
        rec.lap("data");
        let (model, log) = run_baseline(method, &original, &task, &self.config.baselines)?;
        rec.lap("train");
        let stem = format!("baseline-{}", method.name().to_lowercase());
        rec.put_checkpoint(&self.run, &format!("checkpoints/{stem}.ckpt"), &model)?;
        rec.put_json(&self.run, &format!("logs/{stem}.json"), &log)?;
        let report = build_report(&original, &model, &task.suites)?;
        rec.put_report(&self.run, &stem, &report)?;
        rec.lap("eval");
        let record = rec.finish(&self.run)?;
        Ok(BaselineOutput {
            model,
            log,
            report,
            record,
        })
    }

    /// Re-runs the stage governed by `axis` once per value; rows come out
    /// sorted by value.
    pub fn sweep(&self, axis: SweepAxis, values: &[f64]) -> Result<SweepTable> {
        if values.is_empty() {
            return Err(Error::config("sweep needs at least one value"));
        }
        let mut values = values.to_vec();
        for &v in &values {
            let ok = match axis {
                SweepAxis::AlphaMerge => (0.0..=1.0).contains(&v),
                SweepAxis::RemindSteps => v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64,
            };
            if !ok {
                return Err(Error::config(format!("{v} is not a valid {axis} value")));
            }
        }
        values.sort_by(f64::total_cmp);
        values.dedup();

        let mut rec = Recorder::new(&format!("sweep {axis}"), &self.config);
        let original = self.original(&mut rec)?;
        let task = self.task()?;
        self.task_input(&task, &mut rec)?;
        rec.lap("data");
        let (forgotten, selected) = self.forgotten(&original, &task, &mut rec)?;
        let row = |value: f64, model: &Params| -> Result<SweepRow> {
            let r = build_report(&original, model, &task.suites)?;
            let acc = |n: &str| r.suite(n).map(|s| s.acc_unlearn).unwrap_or(f64::NAN);
            Ok(SweepRow {
                value,
                acc_f: acc("target"),
                acc_r: acc("retain"),
                acc_unseen: r.mean_accuracy(SuiteGroup::Unseen).unwrap_or(f64::NAN),
                score: r.score,
            })
        };
        let mut rows = Vec::with_capacity(values.len());
        match axis {
            SweepAxis::AlphaMerge => {
                let reminded = if self.run.exists("checkpoints/reminded.ckpt") {
                    let (p, h) = read_checkpoint(&self.run.path("checkpoints/reminded.ckpt"))?;
                    rec.input("reminded", h);
                    p
                } else {
                    let (p, log, ..) =
                        remind_and_restore(&original, &forgotten, &task, &selected, &self.config.stages)?;
                    rec.put_json(&self.run, "logs/remind.json", &log)?;
                    rec.put_checkpoint(&self.run, "checkpoints/reminded.ckpt", &p)?;
                    p
                };
                rec.lap("remind");
                for &a in &values {
                    rows.push(row(a, &restored_at(&reminded, &original, a)?)?);
                }
            }
            SweepAxis::RemindSteps => {
                for &v in &values {
                    let cfg = StageConfig {
                        remind_steps: v as usize,
                        ..self.config.stages.clone()
                    };
                    let (.., restored, _) = remind_and_restore(&original, &forgotten, &task, &selected, &cfg)?;
                    rows.push(row(v, &restored)?);
                }
            }
        }
        rec.lap("sweep");
        let table = SweepTable { axis, rows };
        rec.put(&self.run, &format!("reports/sweep-{axis}.csv"), table.to_csv().as_bytes())?;
        rec.put_json(&self.run, &format!("reports/sweep-{axis}.json"), &table)?;
        rec.finish(&self.run)?;
        Ok(table)
    }

    /// Averages unlearned checkpoints and tabulates per-subgroup accuracy of
    /// the reference, each input and the merge.
    pub fn continuous(&self, checkpoints: &[PathBuf], reference: Option<&Path>) -> Result<ContinuousOutput> {
        if checkpoints.is_empty() {
            return Err(Error::config("continuous merging needs at least one checkpoint"));
        }
        let mut rec = Recorder::new("continuous", &self.config);
        let reference = match reference {
            Some(p) => {
                let (p, h) = read_checkpoint(p)?;
                self.check_vocab(&p, "reference")?;
                rec.input("reference", h);
                p
            }
            None => self.original(&mut rec)?,
        };
        let mut inputs = Vec::with_capacity(checkpoints.len());
        let mut names = Vec::with_capacity(checkpoints.len());
        for (i, path) in checkpoints.iter().enumerate() {
            let (p, h) = read_checkpoint(path)?;
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("input{i}"));
            rec.input(&format!("unlearned[{i}]"), h);
            names.push(name);
            inputs.push(p);
        }
        let merged = continuous_merge(&inputs, &reference)?;
        rec.lap("merge");
        let task = self.task()?;
        let ex = held_out(&task);
        let tax = &self.config.taxonomy;
        let accs = |p: &Params| -> Result<Vec<f64>> {
            Ok(subgroup_accuracies(p, &ex, tax)?.into_iter().map(|a| a.unwrap_or(f64::NAN)).collect())
        };
        let mut rows = vec![("original".to_string(), accs(&reference)?)];
        for (n, p) in names.iter().zip(&inputs) {
            rows.push((n.clone(), accs(p)?));
        }
        rows.push(("merged".to_string(), accs(&merged)?));
        rec.lap("eval");
        let merged_hash = merged.content_hash();
        let stem = format!("continuous-{}", &merged_hash[..12]);
        rec.put_checkpoint(&self.run, &format!("checkpoints/{stem}.ckpt"), &merged)?;
        let report = ContinuousReport {
            subgroups: (0..tax.n_subgroups()).map(|g| tax.subgroup_name(g)).collect(),
            rows,
            merged_hash,
        };
        rec.put(&self.run, &format!("reports/{stem}.csv"), report.to_csv().as_bytes())?;
        rec.put_json(&self.run, &format!("reports/{stem}.json"), &report)?;
        let record = rec.finish(&self.run)?;
        Ok(ContinuousOutput {
            merged,
            report,
            record,
        })
    }
}

// -------------------------------------------------------------- subcommands

pub fn cmd_pretrain(config: &Path, ov: &Overrides) -> Result<PretrainOutput> {
    Runner::from_path(config, ov)?.pretrain()
}

pub fn cmd_unlearn(config: &Path, ov: &Overrides) -> Result<UnlearnOutput> {
    Runner::from_path(config, ov)?.unlearn()
}

pub fn cmd_baseline(config: &Path, method: &str, ov: &Overrides) -> Result<BaselineOutput> {
    let method: Method = method.parse()?;
    Runner::from_path(config, ov)?.baseline(method)
}

pub fn cmd_sweep(config: &Path, axis: SweepAxis, values: &[f64], ov: &Overrides) -> Result<SweepTable> {
    Runner::from_path(config, ov)?.sweep(axis, values)
}

pub fn cmd_continuous(
    config: &Path,
    checkpoints: &[PathBuf],
    reference: Option<&Path>,
    ov: &Overrides,
) -> Result<ContinuousOutput> {
    Runner::from_path(config, ov)?.continuous(checkpoints, reference)
}

/// Evaluates `candidate` against `original` on an archived task and writes
/// `report.json` and `report.csv` into `out_dir`.
pub fn cmd_eval(original: &Path, candidate: &Path, task_dir: &Path, out_dir: &Path) -> Result<EvalReport> {
    let (o, _) = read_checkpoint(original)?;
    let (c, _) = read_checkpoint(candidate)?;
    let task = to_config(load_task::<f32>(task_dir))?;
    let report = build_report(&o, &c, &task.suites)?;
    write_atomic(&out_dir.join("report.json"), report.to_json().as_bytes())?;
    write_atomic(&out_dir.join("report.csv"), report.to_csv().as_bytes())?;
    Ok(report)
}
