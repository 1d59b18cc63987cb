//! Experiment orchestration: single runs, resumable multi-seed sweeps, and
//! best/spread summaries.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetKind, TrainTest, CLASS_COUNT, IMAGE_PIXELS};
use crate::losses::{HardenNorm, LossBreakdown};
use crate::model::{build_vanilla_ff, Classifier, FffModel, FffShape};
use crate::numeric::{argmax, InitScheme, Rng, Scalar};
use crate::optim::{run_phase, AdamState, LoopOptions, Monitor, Phase, Schedule};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    VanillaFf,
    FffBaseline,
    FffBalanced,
    FffMasterBalanced,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::VanillaFf,
        Variant::FffBaseline,
        Variant::FffBalanced,
        Variant::FffMasterBalanced,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::VanillaFf => "vanilla_ff",
            Variant::FffBaseline => "fff_baseline",
            Variant::FffBalanced => "fff_balanced",
            Variant::FffMasterBalanced => "fff_master_balanced",
        }
    }

    pub fn is_fff(self) -> bool {
        self != Variant::VanillaFf
    }

    pub fn has_master(self) -> bool {
        self == Variant::FffMasterBalanced
    }

    pub fn tag(self) -> u8 {
        match self {
            Variant::VanillaFf => 0,
            Variant::FffBaseline => 1,
            Variant::FffBalanced => 2,
            Variant::FffMasterBalanced => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.tag() == tag)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Single root-to-leaf descent, as deployed.
    #[default]
    Hard,
    /// Full soft mixture.
    Soft,
}

/// Schedule length preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Full,
    Desk,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scale::Full),
            "desk" => Ok(Scale::Desk),
            other => Err(Error::Config(format!("unknown scale '{other}' (full|desk)"))),
        }
    }
}

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_PATIENCE: usize = 50;
pub const DEFAULT_MASTER_WIDTH: usize = 8;
pub const DEFAULT_BATCH_SIZE: usize = 128;

fn two_phase(first: usize, second: usize) -> Schedule {
    Schedule {
        phases: vec![
            Phase {
                epochs: first,
                lr: DEFAULT_LR,
                h: 1.0,
                alpha: 1.0,
            },
            Phase {
                epochs: second,
                lr: DEFAULT_LR,
                h: 3.0,
                alpha: 0.0,
            },
        ],
        patience: DEFAULT_PATIENCE,
    }
}

/// Balanced training followed by hardening, 300 + 300 epochs.
pub fn balanced_schedule(scale: Scale) -> Schedule {
    match scale {
        Scale::Full => two_phase(300, 300),
        Scale::Desk => two_phase(100, 50),
    }
}

/// The shorter master-leaf schedule, 200 + 100 epochs.
pub fn master_schedule(scale: Scale) -> Schedule {
    match scale {
        Scale::Full => two_phase(200, 100),
        Scale::Desk => two_phase(100, 50),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub variant: Variant,
    pub width: usize,
    /// Ignored by the vanilla baseline.
    pub leaf_width: usize,
    pub master_width: usize,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub runs: usize,
    pub base_seed: u64,
    pub precision: Precision,
    pub monitor: Monitor,
    pub harden_norm: HardenNorm,
    pub eval_mode: EvalMode,
    /// Evaluate train/test accuracy every this many epochs; 0 evaluates only
    /// the final model.
    pub eval_every: usize,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetKind, variant: Variant, width: usize, leaf_width: usize) -> Self {
        let schedule = if variant.has_master() {
            master_schedule(Scale::Full)
        } else {
            balanced_schedule(Scale::Full)
        };
        Self {
            dataset,
            variant,
            width,
            leaf_width,
            master_width: DEFAULT_MASTER_WIDTH,
            schedule,
            batch_size: DEFAULT_BATCH_SIZE,
            runs: 1,
            base_seed: 0,
            precision: Precision::F32,
            monitor: Monitor::TrainLoss,
            harden_norm: HardenNorm::Mean,
            eval_mode: EvalMode::Hard,
            eval_every: 1,
        }
    }

    /// `log2(width / leaf_width)` for tree variants.
    pub fn depth(&self) -> Result<usize> {
        if !self.variant.is_fff() {
            return Ok(0);
        }
        let (w, l) = (self.width, self.leaf_width);
        if l == 0 || w % l != 0 || !(w / l).is_power_of_two() || w / l < 2 {
            return Err(Error::Config(format!(
                "width {w} must be leaf width {l} times a power of two >= 2"
            )));
        }
        Ok((w / l).trailing_zeros() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::Config("width must be >= 1".into()));
        }
        self.depth()?;
        if self.variant.has_master() && self.master_width == 0 {
            return Err(Error::Config("master width must be >= 1".into()));
        }
        if self.batch_size == 0 || self.runs == 0 {
            return Err(Error::Config("batch size and run count must be >= 1".into()));
        }
        self.schedule.validate()
    }

    /// The schedule actually trained; the baseline never sees the balance term.
    pub fn effective_schedule(&self) -> Schedule {
        match self.variant {
            Variant::FffBaseline => self.schedule.without_balance(),
            _ => self.schedule.clone(),
        }
    }

    pub fn master(&self) -> Option<usize> {
        self.variant.has_master().then_some(self.master_width)
    }

    /// Short label such as `mnist fff_balanced w=16 l=8`.
    pub fn label(&self) -> String {
        let mut s = format!("{} {} w={}", self.dataset, self.variant, self.width);
        if self.variant.is_fff() {
            let _ = write!(s, " l={}", self.leaf_width);
        }
        if let Some(m) = self.master() {
            let _ = write!(s, " m={m}");
        }
        s
    }

    /// Stable identifier of everything that affects a run except the seed.
    pub fn key(&self) -> String {
        let mut canon = self.clone();
        canon.runs = 1;
        canon.base_seed = 0;
        let json = serde_json::to_vec(&canon).expect("config serializes");
        let digest = crate::data::sha256_hex(&json);
        let epochs: Vec<String> = self.schedule.phases.iter().map(|p| p.epochs.to_string()).collect();
        let leaf = if self.variant.is_fff() {
            format!("-l{}", self.leaf_width)
        } else {
            String::new()
        };
        format!(
            "{}-{}-w{}{leaf}-e{}-{}",
            self.dataset,
            self.variant,
            self.width,
            epochs.join("+"),
            &digest[..10]
        )
    }

    pub fn build<T: Scalar>(&self, rng: &mut Rng) -> Result<Classifier<T>> {
        self.validate()?;
        if !self.variant.is_fff() {
            return Ok(Classifier::Vanilla(build_vanilla_ff(IMAGE_PIXELS, self.width, CLASS_COUNT, rng)));
        }
        let shape = FffShape {
            depth: self.depth()?,
            input_dim: IMAGE_PIXELS,
            class_count: CLASS_COUNT,
            leaf_width: self.leaf_width,
            master_width: self.master(),
        };
        Ok(Classifier::Fff(FffModel::new(shape, rng, InitScheme::UniformFanIn)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Percent correct.
    pub accuracy: f64,
    /// Share of samples routed to each leaf (hard mode, trees only).
    pub leaf_histogram: Option<Vec<f64>>,
}

const EVAL_CHUNK: usize = 512;

/// Argmax accuracy over `data`, in percent.
pub fn evaluate<T: Scalar>(model: &Classifier<T>, data: &Dataset, mode: EvalMode) -> Result<Evaluation> {
    if data.input_dim() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "model expects {} inputs, data has {}",
            model.input_dim(),
            data.input_dim()
        )));
    }
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let mut correct = 0usize;
    let mut hist = model.as_fff().map(|m| vec![0usize; m.leaf_count()]);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, labels) = data.gather::<T>(chunk);
        match (mode, model) {
            (EvalMode::Hard, Classifier::Fff(m)) => {
                for (r, label) in labels.iter().enumerate() {
                    let (logits, leaf) = m.infer(x.row(r))?;
                    correct += usize::from(argmax(logits.as_slice()) == *label);
                    if let Some(h) = hist.as_mut() {
                        h[leaf] += 1;
                    }
                }
            }
            _ => {
                let pred = model.predict_soft_rows(&x)?;
                correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
            }
        }
    }
    let n = data.len() as f64;
    let leaf_histogram = match mode {
        EvalMode::Hard => hist.map(|h| h.into_iter().map(|c| c as f64 / n).collect()),
        EvalMode::Soft => None,
    };
    Ok(Evaluation {
        accuracy: 100.0 * correct as f64 / n,
        leaf_histogram,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: usize,
    /// Epoch index across all phases.
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub running_accuracy: f64,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    /// Dispatch fractions `f` accumulated over the epoch.
    pub dispatch: Option<Vec<f64>>,
    pub k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub key: String,
    pub label: String,
    pub dataset: DatasetKind,
    pub variant: Variant,
    pub width: usize,
    pub leaf_width: usize,
    pub depth: usize,
    pub master_width: Option<usize>,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: Vec<bool>,
    pub final_train_accuracy: f64,
    pub final_test_accuracy: f64,
    /// Hard-routing leaf shares on the training set after training.
    pub train_leaf_histogram: Option<Vec<f64>>,
    pub wall_seconds: f64,
}

impl RunReport {
    /// `max_i f_i` of the last training epoch.
    pub fn final_max_dispatch(&self) -> Option<f64> {
        self.epochs
            .last()
            .and_then(|e| e.dispatch.as_ref())
            .map(|f| f.iter().cloned().fold(0.0, f64::max))
    }

    pub fn final_k(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.k)
    }
}

/// Trained model plus its report.
pub struct RunOutput {
    pub report: RunReport,
    pub model: Classifier<f32>,
    pub adam: Option<AdamState<f32>>,
}

pub type EpochCallback<'a> = &'a (dyn Fn(&EpochRecord) + Sync);

/// Trains one model with `seed` and evaluates it on both splits.
pub fn run_single(
    config: &ExperimentConfig,
    seed: u64,
    data: &TrainTest,
    progress: Option<EpochCallback<'_>>,
) -> Result<RunOutput> {
    config.validate()?;
    match config.precision {
        Precision::F32 => {
            let (report, model, adam) = run_typed::<f32>(config, seed, data, progress)?;
            Ok(RunOutput {
                report,
                model,
                adam: Some(adam),
            })
        }
        Precision::F64 => {
            let (report, model, _) = run_typed::<f64>(config, seed, data, progress)?;
            Ok(RunOutput {
                report,
                model: model.cast(),
                adam: None,
            })
        }
    }
}

fn run_typed<T: Scalar>(
    config: &ExperimentConfig,
    seed: u64,
    data: &TrainTest,
    progress: Option<EpochCallback<'_>>,
) -> Result<(RunReport, Classifier<T>, AdamState<T>)> {
    let start = Instant::now();
    let root = Rng::new(seed);
    let mut init_rng = root.derive(0);
    let mut shuffle_rng = root.derive(1);
    let mut model = config.build::<T>(&mut init_rng)?;
    let schedule = config.effective_schedule();
    let mut adam = AdamState::new(&model, schedule.phases[0].lr);
    let opts = LoopOptions {
        batch_size: config.batch_size,
        patience: schedule.patience,
        monitor: config.monitor,
        harden_norm: config.harden_norm,
    };
    let mut records = Vec::new();
    let mut stopped_early = Vec::new();
    let total = schedule.total_epochs();
    for (pi, phase) in schedule.phases.iter().enumerate() {
        let offset = records.len();
        let mut phase_records = Vec::new();
        let outcome = run_phase(
            &mut model,
            &mut adam,
            &data.train,
            phase,
            &opts,
            &mut shuffle_rng,
            &mut |m, stats| {
                let global = offset + stats.epoch;
                let due = config.eval_every > 0 && (global + 1) % config.eval_every == 0;
                let (train_accuracy, test_accuracy) = if due && global + 1 < total {
                    (
                        Some(evaluate(m, &data.train, config.eval_mode)?.accuracy),
                        Some(evaluate(m, &data.test, config.eval_mode)?.accuracy),
                    )
                } else {
                    (None, None)
                };
                let rec = EpochRecord {
                    phase: pi,
                    epoch: global,
                    loss: stats.loss,
                    running_accuracy: stats.running_accuracy,
                    train_accuracy,
                    test_accuracy,
                    dispatch: stats.dispatch.clone(),
                    k: stats.k,
                };
                if let Some(cb) = progress {
                    cb(&rec);
                }
                phase_records.push(rec);
                Ok(())
            },
        )?;
        records.extend(phase_records);
        stopped_early.push(outcome.stopped_early);
    }
    let train_eval = evaluate(&model, &data.train, config.eval_mode)?;
    let test_eval = evaluate(&model, &data.test, config.eval_mode)?;
    if let Some(last) = records.last_mut() {
        last.train_accuracy = Some(train_eval.accuracy);
        last.test_accuracy = Some(test_eval.accuracy);
    }
    let report = RunReport {
        key: config.key(),
        label: config.label(),
        dataset: config.dataset,
        variant: config.variant,
        width: config.width,
        leaf_width: config.leaf_width,
        depth: config.depth()?,
        master_width: config.master(),
        seed,
        epochs: records,
        stopped_early,
        final_train_accuracy: train_eval.accuracy,
        final_test_accuracy: test_eval.accuracy,
        train_leaf_histogram: train_eval.leaf_histogram,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((report, model, adam))
}

/// One line of `runs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub key: String,
    pub run_index: usize,
    pub seed: u64,
    pub report: Option<RunReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub best: f64,
    pub worst: f64,
    /// `best - worst`.
    pub spread: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let worst = values.iter().cloned().fold(f64::INFINITY, f64::min);
        Some(Self {
            best,
            worst,
            spread: best - worst,
        })
    }
}

impl fmt::Display for Spread {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1} ± {:.1}", self.best, self.spread)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub key: String,
    pub label: String,
    pub config: ExperimentConfig,
    pub runs_ok: usize,
    pub runs_failed: usize,
    pub train: Option<Spread>,
    pub test: Option<Spread>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub configs: Vec<ConfigSummary>,
}

impl SweepSummary {
    pub fn from_records(configs: &[ExperimentConfig], records: &[RunRecord]) -> Self {
        let configs = configs
            .iter()
            .map(|c| {
                let key = c.key();
                let mine: Vec<&RunRecord> = records.iter().filter(|r| r.key == key).collect();
                let ok: Vec<&RunReport> = mine.iter().filter_map(|r| r.report.as_ref()).collect();
                let train: Vec<f64> = ok.iter().map(|r| r.final_train_accuracy).collect();
                let test: Vec<f64> = ok.iter().map(|r| r.final_test_accuracy).collect();
                ConfigSummary {
                    key,
                    label: c.label(),
                    config: c.clone(),
                    runs_ok: ok.len(),
                    runs_failed: mine.len() - ok.len(),
                    train: Spread::of(&train),
                    test: Spread::of(&test),
                    seeds: ok.iter().map(|r| r.seed).collect(),
                }
            })
            .collect();
        Self { configs }
    }

    pub fn get(&self, config: &ExperimentConfig) -> Option<&ConfigSummary> {
        let key = config.key();
        self.configs.iter().find(|c| c.key == key)
    }

    /// `best ± spread` rows grouped by dataset and width.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut groups: BTreeMap<(DatasetKind, usize), Vec<&ConfigSummary>> = BTreeMap::new();
        for c in &self.configs {
            groups.entry((c.config.dataset, c.config.width)).or_default().push(c);
        }
        let cell = |s: &Option<Spread>| s.map_or_else(|| "-".to_string(), |s| s.to_string());
        for ((ds, w), rows) in groups {
            let _ = writeln!(out, "{ds}  w={w}");
            let _ = writeln!(
                out,
                "  {:<22} {:>6} {:>14} {:>14} {:>6}",
                "variant", "leaf", "train", "test", "runs"
            );
            for c in rows {
                let leaf = if c.config.variant.is_fff() {
                    c.config.leaf_width.to_string()
                } else {
                    "-".into()
                };
                let runs = if c.runs_failed > 0 {
                    format!("{}/{}", c.runs_ok, c.runs_ok + c.runs_failed)
                } else {
                    c.runs_ok.to_string()
                };
                let _ = writeln!(
                    out,
                    "  {:<22} {:>6} {:>14} {:>14} {:>6}",
                    c.config.variant.name(),
                    leaf,
                    cell(&c.train),
                    cell(&c.test),
                    runs
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Where `runs.jsonl` and per-run logs go; `None` keeps everything in memory.
    pub results_dir: Option<PathBuf>,
    /// Concurrent runs.
    pub jobs: usize,
}

pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub summary: SweepSummary,
    /// Runs that were already on disk and were not repeated.
    pub skipped: usize,
}

pub const RUNS_FILE: &str = "runs.jsonl";

fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        // A torn final line from an interrupted sweep is ignored.
        if let Ok(rec) = serde_json::from_str::<RunRecord>(&line) {
            out.push(rec);
        }
    }
    Ok(out)
}

/// Completed records already stored under `dir`.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    read_records(&dir.join(RUNS_FILE))
}

pub fn write_run_logs(dir: &Path, config: &ExperimentConfig, report: &RunReport) -> Result<()> {
    let run_dir = dir.join(&report.key).join(format!("seed-{}", report.seed));
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let cfg_path = run_dir.join("config.json");
    let cfg = serde_json::to_vec_pretty(config).expect("config serializes");
    fs::write(&cfg_path, cfg).map_err(|e| Error::io(&cfg_path, e))?;
    let metrics_path = run_dir.join("metrics.jsonl");
    let mut body = String::new();
    for e in &report.epochs {
        body.push_str(&serde_json::to_string(e).expect("record serializes"));
        body.push('\n');
    }
    fs::write(&metrics_path, body).map_err(|e| Error::io(&metrics_path, e))
}

/// Runs every `(config, run_index)` pair with seed `base_seed + run_index`.
///
/// A failing run is recorded and the sweep continues. With a results
/// directory, pairs already completed there are skipped.
pub fn run_sweep(
    configs: &[ExperimentConfig],
    datasets: &BTreeMap<DatasetKind, TrainTest>,
    opts: &SweepOptions,
) -> Result<SweepOutcome> {
    for c in configs {
        c.validate()?;
        if !datasets.contains_key(&c.dataset) {
            return Err(Error::Config(format!("dataset {} was not loaded", c.dataset)));
        }
    }
    let runs_path = opts.results_dir.as_ref().map(|d| d.join(RUNS_FILE));
    if let Some(dir) = &opts.results_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let previous = match &runs_path {
        Some(p) => read_records(p)?,
        None => Vec::new(),
    };
    let done: HashSet<(String, u64)> = previous
        .iter()
        .filter(|r| r.report.is_some())
        .map(|r| (r.key.clone(), r.seed))
        .collect();

    let mut todo = Vec::new();
    let mut kept = Vec::new();
    for c in configs {
        let key = c.key();
        for i in 0..c.runs {
            let seed = c.base_seed + i as u64;
            if done.contains(&(key.clone(), seed)) {
                if let Some(r) = previous.iter().find(|r| r.key == key && r.seed == seed && r.report.is_some()) {
                    kept.push(r.clone());
                }
            } else {
                todo.push((c, i, seed));
            }
        }
    }
    let skipped = kept.len();

    let next = AtomicUsize::new(0);
    let sink = Mutex::new((Vec::<(usize, RunRecord)>::new(), None::<Error>));
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(config, run_index, seed)) = todo.get(i) else {
            break;
        };
        let data = &datasets[&config.dataset];
        let result = run_single(config, seed, data, None);
        let record = match result {
            Ok(out) => RunRecord {
                key: config.key(),
                run_index,
                seed,
                report: Some(out.report),
                error: None,
            },
            Err(e) => RunRecord {
                key: config.key(),
                run_index,
                seed,
                report: None,
                error: Some(e.to_string()),
            },
        };
        let mut guard = sink.lock().expect("sweep sink poisoned");
        if let (Some(dir), Some(path)) = (&opts.results_dir, &runs_path) {
            let io = (|| -> Result<()> {
                if let Some(rep) = &record.report {
                    write_run_logs(dir, config, rep)?;
                }
                let mut f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?;
                let mut line = serde_json::to_string(&record).expect("record serializes");
                line.push('\n');
                f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
            })();
            if let Err(e) = io {
                guard.1.get_or_insert(e);
            }
        }
        guard.0.push((i, record));
    };
    let jobs = opts.jobs.max(1).min(todo.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(worker);
        }
    });
    let (mut fresh, io_error) = sink.into_inner().expect("sweep sink poisoned");
    if let Some(e) = io_error {
        return Err(e);
    }
    fresh.sort_by_key(|(i, _)| *i);
    let mut records = kept;
    records.extend(fresh.into_iter().map(|(_, r)| r));
    let summary = SweepSummary::from_records(configs, &records);
    Ok(SweepOutcome {
        records,
        summary,
        skipped,
    })
}

/// Configurations of one results table: the tree rows and the plain
/// feedforward reference rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSpec {
    pub table: u8,
    pub grid: Vec<ExperimentConfig>,
    pub reference: Vec<ExperimentConfig>,
}

impl TableSpec {
    pub fn all(&self) -> Vec<ExperimentConfig> {
        self.reference.iter().chain(&self.grid).cloned().collect()
    }
}

pub fn table_grid(table: u8, scale: Scale) -> Result<TableSpec> {
    let mk = |ds, variant, w, l, runs: usize| {
        let mut c = ExperimentConfig::new(ds, variant, w, l);
        c.runs = runs;
        c.schedule = if table == 3 {
            master_schedule(scale)
        } else {
            balanced_schedule(scale)
        };
        c
    };
    let mut grid = Vec::new();
    let mut reference = Vec::new();
    match table {
        1 => {
            for ds in [DatasetKind::Mnist, DatasetKind::FashionMnist] {
                reference.push(mk(ds, Variant::VanillaFf, 16, 16, 10));
                for l in [8, 4, 2, 1] {
                    for v in [Variant::FffBaseline, Variant::FffBalanced] {
                        grid.push(mk(ds, v, 16, l, 10));
                    }
                }
            }
        }
        2 => {
            let ds = DatasetKind::FashionMnist;
            for (w, leaves) in [(16, &[8, 4, 2, 1][..]), (128, &[64, 32, 16, 8, 4, 2, 1][..])] {
                reference.push(mk(ds, Variant::VanillaFf, w, w, 10));
                for &l in leaves {
                    for v in [Variant::FffBaseline, Variant::FffBalanced] {
                        grid.push(mk(ds, v, w, l, 10));
                    }
                }
            }
        }
        3 => {
            let ds = DatasetKind::Mnist;
            for w in [16, 128] {
                reference.push(mk(ds, Variant::VanillaFf, w, w, 5));
                for l in [8, 4, 2, 1] {
                    for v in [Variant::FffBaseline, Variant::FffMasterBalanced] {
                        grid.push(mk(ds, v, w, l, 5));
                    }
                }
            }
        }
        other => return Err(Error::Config(format!("no table {other} (1, 2 or 3)"))),
    }
    Ok(TableSpec {
        table,
        grid,
        reference,
    })
}
