//! End-to-end acceptance checks. Each check prints one `PASS`/`FAIL` line.
//!
//! The fast group is deterministic. The reproduction group trains real models
//! on MNIST and FashionMNIST; finished runs are appended to
//! `results/acceptance/runs.jsonl` at the workspace root and reused on the next
//! invocation, so an interrupted suite resumes where it stopped. Delete that
//! directory to retrain from scratch.
//!
//! Data is read from `FFF_CACHE_DIR` when set, else from `data/` at the
//! workspace root (populate it with `fff fetch mnist` and
//! `fff fetch fashion_mnist --cache-dir data`).

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use fff_core::bench;
use fff_core::data::{self, DatasetKind, TrainTest};
use fff_core::gradcheck;
use fff_core::losses::{balance_loss, BatchRoutingStats};
use fff_core::model::{Classifier, FffModel, FffShape, LeafBlock, Parameters};
use fff_core::numeric::{InitScheme, Rng, Tensor2};
use fff_core::optim::{Phase, Schedule};
use fff_core::persistence::{self, Checkpoint};
use fff_core::trainer::{
    balanced_schedule, master_schedule, run_sweep, table_grid, ExperimentConfig, RunReport, Scale, SweepOptions,
    SweepSummary, Variant,
};

struct Verdict {
    name: String,
    pass: bool,
    detail: String,
}

fn verdict(name: &str, pass: bool, detail: String) -> Verdict {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Verdict {
        name: name.to_string(),
        pass,
        detail,
    }
}

fn guarded(name: &str, f: impl FnOnce() -> Result<(bool, String), String>) -> Verdict {
    match f() {
        Ok((pass, detail)) => verdict(name, pass, detail),
        Err(e) => verdict(name, false, format!("error: {e}")),
    }
}

fn finish(verdicts: Vec<Verdict>) {
    let failed: Vec<String> = verdicts
        .iter()
        .filter(|v| !v.pass)
        .map(|v| format!("{} ({})", v.name, v.detail))
        .collect();
    assert!(failed.is_empty(), "failed: {}", failed.join("; "));
}

fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn data_dir() -> PathBuf {
    std::env::var_os(data::CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data"))
}

fn datasets() -> Result<&'static BTreeMap<DatasetKind, TrainTest>, String> {
    static CELL: OnceLock<Result<BTreeMap<DatasetKind, TrainTest>, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = data_dir();
        let mut out = BTreeMap::new();
        for kind in [DatasetKind::Mnist, DatasetKind::FashionMnist] {
            let tt = data::load_both(kind, &dir).map_err(|e| format!("{kind} from {}: {e}", dir.display()))?;
            out.insert(kind, tt);
        }
        Ok(out)
    })
    .as_ref()
    .map_err(Clone::clone)
}

fn random_fff(depth: usize, leaf: usize, master: Option<usize>, rng: &mut Rng) -> FffModel<f64> {
    let shape = FffShape {
        depth,
        input_dim: 6,
        class_count: 4,
        leaf_width: leaf,
        master_width: master,
    };
    let mut m = FffModel::new(shape, rng, InitScheme::Uniform { bound: 2.0 }).expect("valid shape");
    let mut r = rng.derive(99);
    m.visit_mut(&mut |_, s| s.iter_mut().for_each(|v| *v += r.uniform(-1.0, 1.0)));
    m
}

fn random_row(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect()
}

fn mixture_normalization() -> Verdict {
    guarded("01 mixture coefficients sum to one", || {
        let mut rng = Rng::new(1);
        let mut worst_sum = 0.0f64;
        let mut out_of_range = 0;
        for case in 0..1000 {
            let d = 1 + case % 5;
            let m = random_fff(d, 1 + case % 3, None, &mut rng);
            let x = random_row(&mut rng, 6);
            let (c, _) = m.mixture_coefficients(&x).map_err(|e| e.to_string())?;
            let s: f64 = c.as_slice().iter().sum();
            worst_sum = worst_sum.max((s - 1.0).abs());
            out_of_range += c.as_slice().iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
        }
        Ok((
            worst_sum <= 1e-6 && out_of_range == 0,
            format!("1000 cases, max |sum - 1| = {worst_sum:.2e}, {out_of_range} coefficients outside [0, 1]"),
        ))
    })
}

/// Shifts node biases so every node pre-activation on `x` is at least 50 in
/// magnitude, saturating each sigmoid.
fn saturate_for(m: &mut FffModel<f64>, x: &[f64]) {
    for j in 0..m.node_count() {
        let n = m.node(j);
        let z: f64 = n.weight.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + n.bias;
        let target = if z >= 0.0 { z.max(50.0) } else { z.min(-50.0) };
        m.node_biases_mut()[j] += target - z;
    }
}

fn hardened_equivalence() -> Verdict {
    guarded("02 saturated training forward equals hard inference", || {
        let mut rng = Rng::new(2);
        let mut worst = 0.0f64;
        for case in 0..1000 {
            let master = (case % 2 == 1).then_some(1 + case % 4);
            let mut m = random_fff(1 + case % 5, 1 + case % 3, master, &mut rng);
            let x = random_row(&mut rng, 6);
            saturate_for(&mut m, &x);
            let pairs = if master.is_some() {
                (m.forward_train_ml(&x), m.forward_inference_ml(&x))
            } else {
                (m.forward_train(&x), m.forward_inference(&x))
            };
            let (soft, hard) = match pairs {
                (Ok((s, _)), Ok((h, _))) => (s, h),
                (Err(e), _) | (_, Err(e)) => return Err(e.to_string()),
            };
            for (a, b) in soft.as_slice().iter().zip(hard.as_slice()) {
                worst = worst.max((a - b).abs());
            }
        }
        Ok((worst <= 1e-6, format!("1000 cases with and without master, max |diff| = {worst:.2e}")))
    })
}

fn gradient_checks() -> Verdict {
    guarded("03 analytic gradients match finite differences", || {
        let start = Instant::now();
        let report = gradcheck::run_grid(&[1, 2, 3], &[1, 2, 4], gradcheck::DEFAULT_TOLERANCE).map_err(|e| e.to_string())?;
        let secs = start.elapsed().as_secs_f64();
        let worst = report.worst().map_or(0.0, |r| r.max_rel_error);
        Ok((
            report.passed() && secs < 60.0 && report.rows.len() == 9 * 4 * 4,
            format!("{} rows, worst relative error {worst:.2e}, {secs:.1} s", report.rows.len()),
        ))
    })
}

fn balance_closed_forms() -> Verdict {
    guarded("04 balance loss closed forms", || {
        let mut ok = true;
        for d in 1..=5 {
            let n = 1usize << d;
            let u = BatchRoutingStats {
                f: vec![1.0 / n as f64; n],
                p: vec![1.0 / n as f64; n],
            };
            ok &= (balance_loss(&u, d).map_err(|e| e.to_string())? - 1.0).abs() <= 1e-9;
            let mut hot = vec![0.0; n];
            hot[0] = 1.0;
            let deg = BatchRoutingStats { f: hot.clone(), p: hot };
            ok &= balance_loss(&deg, d).map_err(|e| e.to_string())? == n as f64;
        }
        let hand = BatchRoutingStats {
            f: vec![0.75, 0.25],
            p: vec![0.6, 0.4],
        };
        let v = balance_loss(&hand, 1).map_err(|e| e.to_string())?;
        ok &= (v - 1.1).abs() <= 1e-9;
        Ok((ok, format!("uniform and degenerate for d = 1..5, hand case {v:.12}")))
    })
}

fn cost_accounting() -> Verdict {
    guarded("05 instrumented inference cost", || {
        let spec = table_grid(2, Scale::Desk).map_err(|e| e.to_string())?;
        let mut rng = Rng::new(5);
        let x = Tensor2::from_vec(200, 784, (0..200 * 784).map(|_| rng.uniform(0.0, 1.0) as f32).collect())
            .map_err(|e| e.to_string())?;
        let mut bad = Vec::new();
        for c in spec.grid.iter().filter(|c| c.variant.is_fff()) {
            let model = c.build::<f32>(&mut Rng::new(6)).map_err(|e| e.to_string())?;
            let Classifier::Fff(m) = &model else { unreachable!() };
            let d = c.depth().map_err(|e| e.to_string())?;
            let (n, _) = bench::count(&model, &x).map_err(|e| e.to_string())?;
            let l = c.leaf_width;
            let leaves = 1usize << d;
            let params = (leaves - 1) * 785 + leaves * (l * 785 + 10 * (l + 1));
            let good = n.nodes == d
                && n.leaf_hidden == l
                && m.training_neurons() == leaves * l + leaves - 1
                && m.param_count() == params;
            if !good {
                bad.push(c.label());
            }
        }
        Ok((
            bad.is_empty(),
            format!("{} configs, mismatches: {bad:?}", spec.grid.iter().filter(|c| c.variant.is_fff()).count()),
        ))
    })
}

fn persistence_round_trip() -> Verdict {
    guarded("06 checkpoint round trip", || {
        let mut rng = Rng::new(7);
        let models = vec![
            (Variant::VanillaFf, Classifier::Vanilla(LeafBlock::new(784, 16, 10, &mut rng, InitScheme::UniformFanIn))),
            (Variant::FffBalanced, ExperimentConfig::new(DatasetKind::FashionMnist, Variant::FffBalanced, 16, 1).build(&mut rng).map_err(|e| e.to_string())?),
            (Variant::FffMasterBalanced, ExperimentConfig::new(DatasetKind::Mnist, Variant::FffMasterBalanced, 16, 8).build(&mut rng).map_err(|e| e.to_string())?),
        ];
        let x: Vec<f32> = (0..784).map(|_| rng.uniform(0.0, 1.0) as f32).collect();
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut ok = true;
        for (i, (variant, model)) in models.into_iter().enumerate() {
            let ck = Checkpoint {
                dataset: Some(DatasetKind::Mnist),
                variant,
                model,
                optimizer: None,
            };
            let path = dir.path().join(format!("{i}.fffk"));
            persistence::save(&path, &ck).map_err(|e| e.to_string())?;
            let first = std::fs::read(&path).map_err(|e| e.to_string())?;
            let back = persistence::load(&path).map_err(|e| e.to_string())?;
            ok &= persistence::encode(&back).map_err(|e| e.to_string())? == first;
            let logits = |m: &Classifier<f32>| -> Vec<u32> {
                let out = match m {
                    Classifier::Vanilla(l) => l.forward(&x).expect("finite"),
                    Classifier::Fff(f) => f.infer(&x).expect("finite").0.as_slice().to_vec(),
                };
                out.iter().map(|v| v.to_bits()).collect()
            };
            ok &= logits(&back.model) == logits(&ck.model);
        }
        Ok((ok, "vanilla, tree, and tree with master: bytes and logits identical".into()))
    })
}

fn idx_round_trip() -> Verdict {
    guarded("07 IDX round trip and dataset sizes", || {
        let dir = data_dir();
        let mut notes = Vec::new();
        let mut ok = true;
        for kind in [DatasetKind::Mnist, DatasetKind::FashionMnist] {
            for entry in data::manifest(kind) {
                let path = dir.join(kind.name()).join(entry.file);
                let gz = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                let raw = data::gunzip(&gz).map_err(|e| e.to_string())?;
                let idx = data::parse_idx(&raw).map_err(|e| e.to_string())?;
                ok &= idx.to_bytes() == raw;
            }
        }
        let all = datasets()?;
        for (kind, tt) in all {
            let in_range = [&tt.train, &tt.test]
                .iter()
                .all(|d| d.images.as_slice().iter().all(|p| (0.0..=1.0).contains(p)));
            ok &= tt.train.len() == 60000 && tt.test.len() == 10000 && in_range;
            notes.push(format!("{kind} {}/{}", tt.train.len(), tt.test.len()));
        }
        Ok((ok, notes.join(", ")))
    })
}

#[test]
fn deterministic_checks() {
    finish(vec![
        mixture_normalization(),
        hardened_equivalence(),
        gradient_checks(),
        balance_closed_forms(),
        cost_accounting(),
        persistence_round_trip(),
        idx_round_trip(),
    ]);
}

fn cfg(ds: DatasetKind, variant: Variant, w: usize, l: usize, runs: usize, schedule: Schedule) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(ds, variant, w, l);
    c.runs = runs;
    c.schedule = schedule;
    c.eval_every = 0;
    c
}

fn sweep(configs: &[ExperimentConfig]) -> Result<(SweepSummary, Vec<RunReport>), String> {
    let data = datasets()?;
    let opts = SweepOptions {
        results_dir: Some(workspace_root().join("results").join("acceptance")),
        jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let out = run_sweep(configs, data, &opts).map_err(|e| e.to_string())?;
    let reports = out.records.into_iter().filter_map(|r| r.report).collect();
    Ok((out.summary, reports))
}

fn summary_of<'a>(s: &'a SweepSummary, c: &ExperimentConfig) -> Result<&'a fff_core::trainer::ConfigSummary, String> {
    let found = s.get(c).ok_or_else(|| format!("{} missing from sweep", c.label()))?;
    if found.runs_failed > 0 {
        return Err(format!("{}: {} runs failed", c.label(), found.runs_failed));
    }
    Ok(found)
}

fn vanilla_full() -> Verdict {
    guarded("08 vanilla mnist w=16, full schedule, 5 seeds", || {
        let c = cfg(DatasetKind::Mnist, Variant::VanillaFf, 16, 16, 5, balanced_schedule(Scale::Full));
        let (s, _) = sweep(&[c.clone()])?;
        let t = summary_of(&s, &c)?.test.ok_or("no runs")?;
        Ok((t.best >= 94.0, format!("test {t}, need best >= 94.0")))
    })
}

fn balanced_full() -> Verdict {
    guarded("09 balanced fff mnist w=16 l=8, full schedule, 10 seeds", || {
        let c = cfg(DatasetKind::Mnist, Variant::FffBalanced, 16, 8, 10, balanced_schedule(Scale::Full));
        let (s, _) = sweep(&[c.clone()])?;
        let t = summary_of(&s, &c)?.test.ok_or("no runs")?;
        Ok((t.best >= 92.0 && t.spread <= 10.0, format!("test {t}, need best >= 92.0 and spread <= 10")))
    })
}

fn fashion_rows() -> Vec<(ExperimentConfig, ExperimentConfig)> {
    [1, 2, 4, 8]
        .into_iter()
        .map(|l| {
            let mk = |v| cfg(DatasetKind::FashionMnist, v, 16, l, 10, balanced_schedule(Scale::Desk));
            (mk(Variant::FffBalanced), mk(Variant::FffBaseline))
        })
        .collect()
}

fn fashion_checks() -> Vec<Verdict> {
    let rows = fashion_rows();
    let configs: Vec<ExperimentConfig> = rows.iter().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
    let swept = sweep(&configs);
    let c10 = guarded("10 balanced fff fashion w=16 l=1, desk scale, 10 seeds", || {
        let (s, _) = swept.as_ref().map_err(Clone::clone)?;
        let t = summary_of(s, &rows[0].0)?.train.ok_or("no runs")?;
        Ok((t.best >= 90.0, format!("train {t}, need best >= 90.0")))
    });
    let c11 = guarded("11 balanced vs baseline on fashion w=16, l in 1,2,4,8", || {
        let (s, _) = swept.as_ref().map_err(Clone::clone)?;
        let mut within = true;
        let mut greater = 0;
        let mut parts = Vec::new();
        for (bal, base) in &rows {
            let b = summary_of(s, bal)?.test.ok_or("no runs")?.best;
            let r = summary_of(s, base)?.test.ok_or("no runs")?.best;
            within &= b >= r - 0.5;
            greater += (b > r) as usize;
            parts.push(format!("l={} {b:.2} vs {r:.2}", bal.leaf_width));
        }
        Ok((
            within && greater >= 3,
            format!("best test balanced vs baseline: {}; strictly greater in {greater}/4", parts.join(", ")),
        ))
    });
    vec![c10, c11]
}

fn master_check() -> Verdict {
    guarded("12 master leaf + balanced mnist w=16 l=8 m=8, desk scale, 5 seeds", || {
        let sched = master_schedule(Scale::Desk);
        let master = cfg(DatasetKind::Mnist, Variant::FffMasterBalanced, 16, 8, 5, sched.clone());
        let base = cfg(DatasetKind::Mnist, Variant::FffBaseline, 16, 8, 5, sched);
        let (s, _) = sweep(&[master.clone(), base.clone()])?;
        let m = summary_of(&s, &master)?.test.ok_or("no runs")?;
        let b = summary_of(&s, &base)?.test.ok_or("no runs")?;
        Ok((
            m.best >= 93.5 && m.spread <= 3.0 && m.spread < b.spread,
            format!("master test {m}, baseline test {b}; need best >= 93.5, spread <= 3, spread below baseline"),
        ))
    })
}

fn telemetry_check() -> Verdict {
    guarded("13 balanced runs dispatch more evenly, mnist w=16 l=1", || {
        let mk = |v| cfg(DatasetKind::Mnist, v, 16, 1, 10, balanced_schedule(Scale::Desk));
        let (bal, base) = (mk(Variant::FffBalanced), mk(Variant::FffBaseline));
        let (_, reports) = sweep(&[bal.clone(), base.clone()])?;
        let max_f = |key: &str, seed: u64| {
            reports
                .iter()
                .find(|r| r.key == key && r.seed == seed)
                .and_then(RunReport::final_max_dispatch)
        };
        let mut wins = 0;
        let mut pairs = Vec::new();
        for seed in 0..10 {
            let (a, b) = (max_f(&bal.key(), seed), max_f(&base.key(), seed));
            let (Some(a), Some(b)) = (a, b) else {
                return Err(format!("seed {seed} lacks dispatch telemetry"));
            };
            wins += (a < b) as usize;
            pairs.push(format!("{a:.2}/{b:.2}"));
        }
        Ok((wins >= 7, format!("max f balanced/baseline per seed [{}]; balanced lower on {wins}/10", pairs.join(" "))))
    })
}

fn wide_smoke() -> Verdict {
    guarded("14 w=128 fashion configs train 20 epochs without numeric failure", || {
        let short = Schedule {
            phases: vec![
                Phase { epochs: 10, ..balanced_schedule(Scale::Desk).phases[0] },
                Phase { epochs: 10, ..balanced_schedule(Scale::Desk).phases[1] },
            ],
            patience: balanced_schedule(Scale::Desk).patience,
        };
        let spec = table_grid(2, Scale::Desk).map_err(|e| e.to_string())?;
        let configs: Vec<ExperimentConfig> = spec
            .grid
            .iter()
            .filter(|c| c.width == 128)
            .map(|c| cfg(c.dataset, c.variant, c.width, c.leaf_width, 1, short.clone()))
            .collect();
        let (s, _) = sweep(&configs)?;
        let failed: usize = s.configs.iter().map(|c| c.runs_failed).sum();
        let ok: usize = s.configs.iter().map(|c| c.runs_ok).sum();
        let worst = s.configs.iter().filter_map(|c| c.test).map(|t| t.worst).fold(100.0, f64::min);
        Ok((
            failed == 0 && ok == configs.len(),
            format!("{ok} runs finished, {failed} failed, lowest test accuracy {worst:.1}"),
        ))
    })
}

#[test]
fn reproduction_checks() {
    let mut v = vec![vanilla_full(), balanced_full()];
    v.extend(fashion_checks());
    v.push(master_check());
    v.push(telemetry_check());
    v.push(wide_smoke());
    finish(v);
}
