//! Inference cost: neurons and multiply-accumulates evaluated per sample, and
//! wall-clock latency in single-sample and batch modes.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::IMAGE_PIXELS;
use crate::model::{Classifier, CountingProbe, FffModel};
use crate::numeric::{Rng, Tensor2};
use crate::trainer::{table_grid, ExperimentConfig, Scale, Variant};
use crate::{Error, Result};

pub const MIN_REPETITIONS: usize = 10;
pub const BATCH_ROWS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronCount {
    pub nodes: usize,
    pub leaf_hidden: usize,
    pub master_hidden: usize,
}

impl NeuronCount {
    pub fn total(&self) -> usize {
        self.nodes + self.leaf_hidden + self.master_hidden
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub mean_us: f64,
    pub median_us: f64,
    pub p99_us: f64,
}

impl Latency {
    pub fn from_samples(mut us: Vec<f64>) -> Option<Self> {
        if us.is_empty() {
            return None;
        }
        us.sort_by(f64::total_cmp);
        let pick = |q: f64| us[((us.len() - 1) as f64 * q).round() as usize];
        Some(Self {
            mean_us: us.iter().sum::<f64>() / us.len() as f64,
            median_us: pick(0.5),
            p99_us: pick(0.99),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub label: String,
    pub width: usize,
    pub depth: usize,
    pub leaf_width: usize,
    pub neurons: NeuronCount,
    pub macs: usize,
    pub samples: usize,
    pub single: Option<Latency>,
    pub batch: Option<Latency>,
}

/// Per-sample counts from instrumented inference. Every sample must report the
/// same numbers, and they must agree with [`FffModel::inference_cost`].
pub fn count(model: &Classifier<f32>, x: &Tensor2<f32>) -> Result<(NeuronCount, usize)> {
    match model {
        Classifier::Vanilla(l) => Ok((
            NeuronCount {
                nodes: 0,
                leaf_hidden: l.width(),
                master_hidden: 0,
            },
            l.macs(),
        )),
        Classifier::Fff(m) => count_fff(m, x),
    }
}

fn count_fff(m: &FffModel<f32>, x: &Tensor2<f32>) -> Result<(NeuronCount, usize)> {
    let mut seen: Option<CountingProbe> = None;
    for r in 0..x.rows() {
        let mut probe = CountingProbe::default();
        if m.master().is_some() {
            m.forward_inference_ml_probed(x.row(r), &mut probe)?;
        } else {
            m.forward_inference_probed(x.row(r), &mut probe)?;
        }
        if probe.leaves != 1 {
            return Err(Error::Invariant(format!("sample {r} evaluated {} leaves", probe.leaves)));
        }
        match &seen {
            Some(first) if *first != probe => {
                return Err(Error::Invariant(format!("sample {r} cost differs from sample 0")));
            }
            Some(_) => {}
            None => seen = Some(probe),
        }
    }
    let p = seen.ok_or_else(|| Error::Domain("no samples to count".into()))?;
    let counted = NeuronCount {
        nodes: p.nodes,
        leaf_hidden: p.leaf_hidden,
        master_hidden: p.master_hidden,
    };
    let cost = m.inference_cost();
    let predicted = NeuronCount {
        nodes: cost.node_neurons,
        leaf_hidden: cost.leaf_hidden_neurons,
        master_hidden: cost.master_hidden_neurons,
    };
    if counted != predicted || p.macs + p.master_macs != cost.macs + cost.master_macs {
        return Err(Error::Invariant(format!(
            "instrumented cost {counted:?} / {} MACs disagrees with {predicted:?} / {} MACs",
            p.macs + p.master_macs,
            cost.macs + cost.master_macs
        )));
    }
    Ok((counted, p.macs + p.master_macs))
}

fn elapsed_us(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e6
}

/// Hard-routed prediction one sample at a time. One timing per sample per
/// repetition; the first pass over the data is warmup.
fn time_single(model: &Classifier<f32>, x: &Tensor2<f32>, repetitions: usize) -> Result<Latency> {
    let mut sink = 0usize;
    for r in 0..x.rows() {
        sink ^= model.predict(x.row(r))?;
    }
    let mut us = Vec::with_capacity(repetitions * x.rows());
    for _ in 0..repetitions {
        for r in 0..x.rows() {
            let t = Instant::now();
            sink ^= model.predict(x.row(r))?;
            us.push(elapsed_us(t));
        }
    }
    std::hint::black_box(sink);
    Latency::from_samples(us).ok_or_else(|| Error::Domain("no samples to time".into()))
}

/// Dense evaluation of whole batches; every leaf runs on every row. Reported
/// per sample.
fn time_batch(model: &Classifier<f32>, x: &Tensor2<f32>, repetitions: usize) -> Result<Latency> {
    let chunks: Vec<Tensor2<f32>> = (0..x.rows())
        .step_by(BATCH_ROWS)
        .map(|s| x.select_rows(&(s..(s + BATCH_ROWS).min(x.rows())).collect::<Vec<_>>()))
        .collect();
    let run = || -> Result<usize> {
        let mut n = 0;
        for c in &chunks {
            n += model.predict_soft_rows(c)?.len();
        }
        Ok(n)
    };
    run()?;
    let mut us = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let t = Instant::now();
        let n = std::hint::black_box(run()?);
        us.push(elapsed_us(t) / n as f64);
    }
    Latency::from_samples(us).ok_or_else(|| Error::Domain("no samples to time".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingOptions {
    pub repetitions: usize,
    pub single: bool,
    pub batch: bool,
}

impl Default for TimingOptions {
    fn default() -> Self {
        Self {
            repetitions: MIN_REPETITIONS,
            single: true,
            batch: true,
        }
    }
}

pub fn measure(label: &str, model: &Classifier<f32>, x: &Tensor2<f32>, timing: Option<TimingOptions>) -> Result<CostReport> {
    if let Some(t) = timing {
        if t.repetitions < MIN_REPETITIONS {
            return Err(Error::Config(format!(
                "at least {MIN_REPETITIONS} timing repetitions are required, got {}",
                t.repetitions
            )));
        }
    }
    let (neurons, macs) = count(model, x)?;
    let (width, depth, leaf_width) = match model {
        Classifier::Vanilla(l) => (l.width(), 0, l.width()),
        Classifier::Fff(m) => (m.training_width(), m.depth(), m.leaf_width()),
    };
    let single = timing.filter(|t| t.single).map(|t| time_single(model, x, t.repetitions)).transpose()?;
    let batch = timing.filter(|t| t.batch).map(|t| time_batch(model, x, t.repetitions)).transpose()?;
    Ok(CostReport {
        label: label.to_string(),
        width,
        depth,
        leaf_width,
        neurons,
        macs,
        samples: x.rows(),
        single,
        batch,
    })
}

fn random_inputs(n: usize, seed: u64) -> Result<Tensor2<f32>> {
    let mut rng = Rng::new(seed);
    let v = (0..n * IMAGE_PIXELS).map(|_| rng.uniform(0.0, 1.0) as f32).collect();
    Tensor2::from_vec(n, IMAGE_PIXELS, v)
}

/// Counts (and optionally timings) for freshly initialized models of every
/// configuration tested in the FashionMNIST width/leaf-size table, each followed
/// by its width-matched vanilla reference. Inputs default to uniform noise.
pub fn grid(inputs: Option<&Tensor2<f32>>, timing: Option<TimingOptions>, seed: u64) -> Result<Vec<CostReport>> {
    let noise;
    let x = match inputs {
        Some(x) => x,
        None => {
            noise = random_inputs(256, seed)?;
            &noise
        }
    };
    let spec = table_grid(2, Scale::Desk)?;
    let mut configs: Vec<ExperimentConfig> = spec.grid.into_iter().filter(|c| c.variant == Variant::FffBalanced).collect();
    configs.sort_by_key(|c| (c.width, std::cmp::Reverse(c.leaf_width)));
    let mut out = Vec::new();
    let mut last_width = None;
    for c in configs {
        if last_width != Some(c.width) {
            let v = ExperimentConfig::new(c.dataset, Variant::VanillaFf, c.width, c.width);
            let model = v.build::<f32>(&mut Rng::new(seed))?;
            out.push(measure(&format!("vanilla w={}", c.width), &model, x, timing)?);
            last_width = Some(c.width);
        }
        let model = c.build::<f32>(&mut Rng::new(seed))?;
        out.push(measure(&format!("fff w={} l={}", c.width, c.leaf_width), &model, x, timing)?);
    }
    Ok(out)
}

pub struct CostTable<'a>(pub &'a [CostReport]);

impl fmt::Display for CostTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lat = |l: &Option<Latency>| l.map_or("-".to_string(), |l| format!("{:.2}/{:.2}/{:.2}", l.mean_us, l.median_us, l.p99_us));
        writeln!(
            f,
            "{:<18} {:>5} {:>5} {:>5} {:>7} {:>8} {:>22} {:>22}",
            "model", "w", "d", "l", "neurons", "MACs", "single us mean/med/p99", "batch us mean/med/p99"
        )?;
        for r in self.0 {
            writeln!(
                f,
                "{:<18} {:>5} {:>5} {:>5} {:>7} {:>8} {:>22} {:>22}",
                r.label,
                r.width,
                r.depth,
                r.leaf_width,
                r.neurons.total(),
                r.macs,
                lat(&r.single),
                lat(&r.batch)
            )?;
        }
        Ok(())
    }
}
