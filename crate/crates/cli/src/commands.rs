use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use serde_json::json;

use fff_core::bench::{self, CostTable, TimingOptions};
use fff_core::data::{self, DatasetKind, Split};
use fff_core::gradcheck;
use fff_core::model::{build_vanilla_ff, Classifier};
use fff_core::numeric::Rng;
use fff_core::persistence::{self, Checkpoint};
use fff_core::trainer::{
    self, balanced_schedule, master_schedule, run_single, run_sweep, table_grid, EpochRecord, EvalMode,
    ExperimentConfig, Precision, Scale, SweepOptions, Variant,
};
use fff_core::Error;

use crate::{BenchArgs, EvalArgs, FetchArgs, GradcheckArgs, ModeArg, PrecisionArg, ScaleArg, SweepArgs, TrainArgs};

pub enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome = Result<(), Failure>;

fn parse<T: FromStr<Err = Error>>(what: &str, s: &str) -> Result<T, Failure> {
    s.parse().map_err(|e: Error| Failure::Usage(format!("--{what}: {e}")))
}

fn scale(s: ScaleArg) -> Scale {
    match s {
        ScaleArg::Full => Scale::Full,
        ScaleArg::Desk => Scale::Desk,
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json renders"));
}

pub fn fetch(a: FetchArgs) -> Outcome {
    let kind: DatasetKind = parse("dataset", &a.dataset)?;
    let mut mirrors = a.mirrors;
    if !a.no_default_mirrors {
        mirrors.extend(data::default_mirrors(kind));
    }
    if mirrors.is_empty() {
        return Err(Failure::Usage("no mirrors to try".into()));
    }
    let cache = data::resolve_cache_dir(a.cache_dir.as_deref());
    let report = data::fetch(kind, &cache, &mirrors)?;
    for f in &report.files {
        println!("{}", f.display());
    }
    eprintln!(
        "{kind}: {} files ready, {} downloaded, {} corrupt cached files replaced",
        report.files.len(),
        report.downloaded,
        report.discarded
    );
    Ok(())
}

/// Keys accepted in a `--config` file; each mirrors a `train` flag.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    dataset: Option<String>,
    variant: Option<String>,
    width: Option<usize>,
    leaf_width: Option<usize>,
    master_width: Option<usize>,
    seed: Option<u64>,
    scale: Option<ScaleArg>,
    epochs: Option<Vec<usize>>,
    batch_size: Option<usize>,
    eval_every: Option<usize>,
    precision: Option<PrecisionArg>,
    out: Option<PathBuf>,
    results_dir: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
    quiet: Option<bool>,
}

fn read_train_file(path: &Path) -> Result<TrainFile, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Core(Error::Config(format!("{}: {e}", path.display()))))
}

fn merge(a: TrainArgs) -> Result<TrainArgs, Failure> {
    let f = match &a.config {
        Some(p) => read_train_file(p)?,
        None => TrainFile::default(),
    };
    Ok(TrainArgs {
        dataset: a.dataset.or(f.dataset),
        variant: a.variant.or(f.variant),
        width: a.width.or(f.width),
        leaf_width: a.leaf_width.or(f.leaf_width),
        master_width: a.master_width.or(f.master_width),
        seed: a.seed.or(f.seed),
        scale: a.scale.or(f.scale),
        epochs: a.epochs.or(f.epochs),
        batch_size: a.batch_size.or(f.batch_size),
        eval_every: a.eval_every.or(f.eval_every),
        precision: a.precision.or(f.precision),
        out: a.out.or(f.out),
        results_dir: a.results_dir.or(f.results_dir),
        cache_dir: a.cache_dir.or(f.cache_dir),
        config: a.config,
        quiet: a.quiet || f.quiet.unwrap_or(false),
    })
}

fn train_config(a: &TrainArgs) -> Result<ExperimentConfig, Failure> {
    let need = |name: &str| Failure::Usage(format!("--{name} is required (flag or config file)"));
    let dataset: DatasetKind = parse("dataset", a.dataset.as_deref().ok_or_else(|| need("dataset"))?)?;
    let variant: Variant = parse("variant", a.variant.as_deref().ok_or_else(|| need("variant"))?)?;
    let width = a.width.ok_or_else(|| need("width"))?;
    let leaf_width = match (variant.is_fff(), a.leaf_width) {
        (true, Some(l)) => l,
        (true, None) => return Err(need("leaf-width")),
        (false, Some(l)) if l != width => {
            return Err(Failure::Usage(format!(
                "vanilla_ff has no leaves; --leaf-width {l} conflicts with --width {width}"
            )))
        }
        (false, _) => width,
    };
    if a.master_width.is_some() && !variant.has_master() {
        return Err(Failure::Usage(format!("--master-width needs fff_master_balanced, not {variant}")));
    }
    let mut c = ExperimentConfig::new(dataset, variant, width, leaf_width);
    let s = scale(a.scale.unwrap_or(ScaleArg::Full));
    c.schedule = if variant.has_master() {
        master_schedule(s)
    } else {
        balanced_schedule(s)
    };
    if let Some(e) = &a.epochs {
        if e.len() != c.schedule.phases.len() {
            return Err(Failure::Usage(format!(
                "--epochs needs {} comma-separated phase lengths",
                c.schedule.phases.len()
            )));
        }
        c.schedule.phases.iter_mut().zip(e).for_each(|(p, n)| p.epochs = *n);
    }
    if let Some(m) = a.master_width {
        c.master_width = m;
    }
    if let Some(b) = a.batch_size {
        c.batch_size = b;
    }
    if let Some(e) = a.eval_every {
        c.eval_every = e;
    }
    c.precision = match a.precision.unwrap_or(PrecisionArg::F32) {
        PrecisionArg::F32 => Precision::F32,
        PrecisionArg::F64 => Precision::F64,
    };
    c.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(c)
}

fn progress_line(r: &EpochRecord) {
    let mut line = format!(
        "epoch {:>4} phase {} loss {:.4} running acc {:.2}",
        r.epoch + 1,
        r.phase + 1,
        r.loss.total,
        r.running_accuracy
    );
    if let (Some(tr), Some(te)) = (r.train_accuracy, r.test_accuracy) {
        line.push_str(&format!(" train {tr:.2} test {te:.2}"));
    }
    if let Some(f) = &r.dispatch {
        line.push_str(&format!(" max f {:.3}", f.iter().cloned().fold(0.0, f64::max)));
    }
    if let Some(k) = r.k {
        line.push_str(&format!(" k {k:.3}"));
    }
    eprintln!("{line}");
}

pub fn train(a: TrainArgs) -> Outcome {
    let a = merge(a)?;
    let config = train_config(&a)?;
    let seed = a.seed.unwrap_or(0);
    let cache = data::resolve_cache_dir(a.cache_dir.as_deref());
    let tt = data::load_both(config.dataset, &cache)?;
    eprintln!(
        "training {} seed {seed} for up to {} epochs",
        config.label(),
        config.effective_schedule().total_epochs()
    );
    let cb: &(dyn Fn(&EpochRecord) + Sync) = &progress_line;
    let out = run_single(&config, seed, &tt, (!a.quiet).then_some(cb))?;
    let r = &out.report;
    if let Some(dir) = &a.results_dir {
        trainer::write_run_logs(dir, &config, r)?;
    }
    if let Some(path) = &a.out {
        persistence::save(
            path,
            &Checkpoint {
                dataset: Some(config.dataset),
                variant: config.variant,
                model: out.model.clone(),
                optimizer: out.adam.clone(),
            },
        )?;
        eprintln!("checkpoint written to {}", path.display());
    }
    print_json(&json!({
        "key": r.key,
        "label": r.label,
        "seed": r.seed,
        "depth": r.depth,
        "master_width": r.master_width,
        "epochs": r.epochs.len(),
        "stopped_early": r.stopped_early,
        "train_accuracy": r.final_train_accuracy,
        "test_accuracy": r.final_test_accuracy,
        "final_max_dispatch": r.final_max_dispatch(),
        "final_k": r.final_k(),
        "wall_seconds": r.wall_seconds,
    }));
    Ok(())
}

fn dataset_for(flag: Option<&str>, ck: &Checkpoint) -> Result<DatasetKind, Failure> {
    match (flag, ck.dataset) {
        (Some(s), _) => parse("dataset", s),
        (None, Some(d)) => Ok(d),
        (None, None) => Err(Failure::Usage("checkpoint records no dataset; pass --dataset".into())),
    }
}

pub fn eval(a: EvalArgs) -> Outcome {
    let ck = persistence::load(&a.checkpoint)?;
    let kind = dataset_for(a.dataset.as_deref(), &ck)?;
    let split: Split = parse("split", &a.split)?;
    let cache = data::resolve_cache_dir(a.cache_dir.as_deref());
    let ds = data::load(kind, split, &cache)?;
    let mode = match a.mode {
        ModeArg::Hard => EvalMode::Hard,
        ModeArg::Soft => EvalMode::Soft,
    };
    let e = trainer::evaluate(&ck.model, &ds, mode)?;
    if a.json {
        print_json(&json!({
            "dataset": kind.name(),
            "split": a.split,
            "variant": ck.variant.name(),
            "samples": ds.len(),
            "accuracy": e.accuracy,
            "leaf_histogram": e.leaf_histogram,
        }));
    } else {
        println!("{} on {kind} {}: {:.2}% of {} samples", ck.variant, a.split, e.accuracy, ds.len());
        if let Some(h) = &e.leaf_histogram {
            let shares: Vec<String> = h.iter().map(|v| format!("{v:.3}")).collect();
            println!("leaf shares: {}", shares.join(" "));
        }
    }
    Ok(())
}

pub fn bench(a: BenchArgs) -> Outcome {
    let timing = (!a.no_timing).then_some(TimingOptions {
        repetitions: a.repetitions,
        ..TimingOptions::default()
    });
    let cache = data::resolve_cache_dir(a.cache_dir.as_deref());
    let inputs = |kind: DatasetKind| -> Result<_, Failure> {
        let ds = data::load(kind, Split::Test, &cache)?;
        let idx: Vec<usize> = (0..a.samples.min(ds.len())).collect();
        Ok(ds.gather::<f32>(&idx).0)
    };
    let reports = match &a.checkpoint {
        Some(path) => {
            let ck = persistence::load(path)?;
            let x = inputs(dataset_for(a.dataset.as_deref(), &ck)?)?;
            let mut out = vec![bench::measure(&ck.variant.to_string(), &ck.model, &x, timing)?];
            if let Classifier::Fff(m) = &ck.model {
                let reference = Classifier::Vanilla(build_vanilla_ff(
                    m.input_dim(),
                    m.training_width(),
                    m.class_count(),
                    &mut Rng::new(0),
                ));
                let label = format!("vanilla w={}", m.training_width());
                out.push(bench::measure(&label, &reference, &x, timing)?);
            }
            out
        }
        None => {
            let x = a.dataset.as_deref().map(|s| parse("dataset", s).and_then(inputs)).transpose()?;
            bench::grid(x.as_ref(), timing, 0)?
        }
    };
    if a.json {
        print_json(&serde_json::to_value(&reports).expect("reports serialize"));
    } else {
        print!("{}", CostTable(&reports));
    }
    Ok(())
}

pub fn sweep(a: SweepArgs) -> Outcome {
    let s = scale(a.scale);
    let spec = table_grid(a.table, s)?;
    let mut configs = spec.all();
    if let Some(n) = a.runs {
        if n == 0 {
            return Err(Failure::Usage("--runs must be at least 1".into()));
        }
        configs.iter_mut().for_each(|c| c.runs = n);
    }
    if a.jobs == 0 {
        return Err(Failure::Usage("--jobs must be at least 1".into()));
    }
    if a.dry_run {
        for c in &configs {
            println!(
                "{:<40} runs {:>2} epochs {:>3}  {}",
                c.label(),
                c.runs,
                c.effective_schedule().total_epochs(),
                c.key()
            );
        }
        return Ok(());
    }
    let dir = a.results_dir.unwrap_or_else(|| {
        let tag = if matches!(a.scale, ScaleArg::Desk) { "desk" } else { "full" };
        PathBuf::from("results").join(format!("table{}-{tag}", a.table))
    });
    let cache = data::resolve_cache_dir(a.cache_dir.as_deref());
    let mut datasets = BTreeMap::new();
    for c in &configs {
        if !datasets.contains_key(&c.dataset) {
            datasets.insert(c.dataset, data::load_both(c.dataset, &cache)?);
        }
    }
    let total: usize = configs.iter().map(|c| c.runs).sum();
    eprintln!("table {}: {} configurations, {total} runs, results in {}", a.table, configs.len(), dir.display());
    let out = run_sweep(
        &configs,
        &datasets,
        &SweepOptions {
            results_dir: Some(dir.clone()),
            jobs: a.jobs,
        },
    )?;
    let summary_path = dir.join("summary.json");
    let body = serde_json::to_vec_pretty(&out.summary).expect("summary serializes");
    fs::write(&summary_path, body).map_err(|e| Error::Io {
        path: summary_path.clone(),
        source: e,
    })?;
    print!("{}", out.summary.render());
    eprintln!("{} runs reused from earlier invocations", out.skipped);
    let failed: usize = out.summary.configs.iter().map(|c| c.runs_failed).sum();
    if failed > 0 {
        return Err(Error::Numeric(format!("{failed} runs failed; see {}", dir.join(trainer::RUNS_FILE).display())).into());
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Outcome {
    let depths = a.depth.map_or(vec![1, 2, 3], |d| vec![d]);
    let widths = a.leaf_width.map_or(vec![1, 2, 4], |l| vec![l]);
    if depths.iter().any(|d| !(1..=8).contains(d)) || widths.contains(&0) {
        return Err(Failure::Usage("--depth must be in 1..=8 and --leaf-width at least 1".into()));
    }
    let report = gradcheck::run_grid(&depths, &widths, a.tolerance)?;
    print!("{report}");
    if !report.passed() {
        let w = report.worst().expect("failing report has rows");
        return Err(Error::Numeric(format!(
            "gradient check failed: {} {} at depth {} leaf width {} has relative error {:.3e} > {:.1e}",
            w.term.name(),
            w.class.name(),
            w.depth,
            w.leaf_width,
            w.max_rel_error,
            a.tolerance
        ))
        .into());
    }
    Ok(())
}
