//! Analytic gradients against central finite differences in `f64`, per loss
//! term and parameter class.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::losses::{objective, LossWeights};
use crate::model::{FffModel, FffShape, ParamClass, Parameters};
use crate::numeric::{InitScheme, Rng, Tensor2};
use crate::Result;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error.
pub const ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Pred,
    Harden,
    Balance,
    Total,
}

impl Term {
    pub const ALL: [Term; 4] = [Term::Pred, Term::Harden, Term::Balance, Term::Total];

    pub fn weights(self) -> LossWeights {
        let w = |pred, h, alpha| LossWeights {
            pred,
            ..LossWeights::new(h, alpha)
        };
        match self {
            Term::Pred => w(1.0, 0.0, 0.0),
            Term::Harden => w(0.0, 1.0, 0.0),
            Term::Balance => w(0.0, 0.0, 1.0),
            Term::Total => w(1.0, 0.7, 1.3),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Term::Pred => "pred",
            Term::Harden => "harden",
            Term::Balance => "balance",
            Term::Total => "total",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckSpec {
    pub depth: usize,
    pub leaf_width: usize,
    pub master_width: Option<usize>,
    pub input_dim: usize,
    pub class_count: usize,
    pub batch: usize,
    pub step: f64,
    pub seed: u64,
}

impl CheckSpec {
    pub fn new(depth: usize, leaf_width: usize) -> Self {
        Self {
            depth,
            leaf_width,
            master_width: Some(3),
            input_dim: 5,
            class_count: 3,
            batch: 6,
            step: DEFAULT_STEP,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub depth: usize,
    pub leaf_width: usize,
    pub term: Term,
    pub class: ParamClass,
    pub params: usize,
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

fn flat<P: Parameters<f64>>(p: &P) -> Vec<(ParamClass, f64)> {
    let mut out = Vec::new();
    p.visit(&mut |c, s| out.extend(s.iter().map(|v| (c, *v))));
    out
}

fn set_param<P: Parameters<f64>>(p: &mut P, index: usize, value: f64) {
    let mut seen = 0;
    p.visit_mut(&mut |_, s| {
        if index >= seen && index < seen + s.len() {
            s[index - seen] = value;
        }
        seen += s.len();
    });
}

/// All rows for one tree shape.
pub fn check(spec: &CheckSpec) -> Result<Vec<CheckRow>> {
    let mut rng = Rng::new(spec.seed);
    let shape = FffShape {
        depth: spec.depth,
        input_dim: spec.input_dim,
        class_count: spec.class_count,
        leaf_width: spec.leaf_width,
        master_width: spec.master_width,
    };
    let mut model: FffModel<f64> = FffModel::new(shape, &mut rng, InitScheme::Uniform { bound: 1.0 })?;
    // Nonzero biases and kappa so every parameter has a generic gradient.
    model.node_biases_mut().iter_mut().for_each(|b| *b = rng.uniform(-0.5, 0.5));
    for leaf in model.leaves_mut() {
        leaf.b1_mut().iter_mut().for_each(|b| *b = rng.uniform(-0.5, 0.5));
        leaf.b2_mut().iter_mut().for_each(|b| *b = rng.uniform(-0.5, 0.5));
    }
    if let Some(m) = model.master_mut() {
        m.kappa = rng.uniform(-1.0, 1.0);
        m.block.b1_mut().iter_mut().for_each(|b| *b = rng.uniform(-0.5, 0.5));
    }
    let data: Vec<f64> = (0..spec.batch * spec.input_dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let x = Tensor2::from_vec(spec.batch, spec.input_dim, data)?;
    let labels: Vec<usize> = (0..spec.batch).map(|_| rng.below(spec.class_count)).collect();
    let fused = spec.master_width.is_some();

    let base_trace = model.forward_rows(&x, fused)?;
    let frozen = crate::losses::routing_stats(&base_trace)?.f;

    let mut rows = Vec::new();
    for term in Term::ALL {
        let weights = term.weights();
        let loss_at = |m: &FffModel<f64>| -> Result<f64> {
            let trace = m.forward_rows(&x, fused)?;
            Ok(objective(&trace, &labels, &weights, Some(&frozen))?.0.total)
        };
        let (_, _, seed) = objective(&base_trace, &labels, &weights, Some(&frozen))?;
        let grads = model.backward(&base_trace, &seed)?;
        let analytic = flat(&grads);
        let params = flat(&model);

        let mut per_class: Vec<CheckRow> = Vec::new();
        let mut probe = model.clone();
        for (i, ((class, g), (_, p))) in analytic.iter().zip(&params).enumerate() {
            set_param(&mut probe, i, p + spec.step);
            let up = loss_at(&probe)?;
            set_param(&mut probe, i, p - spec.step);
            let down = loss_at(&probe)?;
            set_param(&mut probe, i, *p);
            let numeric = (up - down) / (2.0 * spec.step);
            let err = relative_error(*g, numeric);
            let row = match per_class.iter_mut().find(|r| r.class == *class) {
                Some(r) => r,
                None => {
                    per_class.push(CheckRow {
                        depth: spec.depth,
                        leaf_width: spec.leaf_width,
                        term,
                        class: *class,
                        params: 0,
                        max_rel_error: 0.0,
                        max_abs_grad: 0.0,
                    });
                    per_class.last_mut().expect("just pushed")
                }
            };
            row.params += 1;
            row.max_rel_error = row.max_rel_error.max(err);
            row.max_abs_grad = row.max_abs_grad.max(g.abs());
        }
        rows.extend(per_class);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub tolerance: f64,
    pub rows: Vec<CheckRow>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.max_rel_error <= self.tolerance)
    }

    pub fn worst(&self) -> Option<&CheckRow> {
        self.rows
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>5} {:>5} {:>8} {:>7} {:>7} {:>12} {:>6}",
            "depth", "leaf", "term", "class", "params", "max rel err", "ok"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>5} {:>5} {:>8} {:>7} {:>7} {:>12.3e} {:>6}",
                r.depth,
                r.leaf_width,
                r.term.name(),
                r.class.name(),
                r.params,
                r.max_rel_error,
                if r.max_rel_error <= self.tolerance { "yes" } else { "NO" }
            )?;
        }
        Ok(())
    }
}

/// Every combination of `depths` and `leaf_widths`, with a master leaf.
pub fn run_grid(depths: &[usize], leaf_widths: &[usize], tolerance: f64) -> Result<CheckReport> {
    let mut rows = Vec::new();
    for &d in depths {
        for &l in leaf_widths {
            rows.extend(check(&CheckSpec::new(d, l))?);
        }
    }
    Ok(CheckReport { tolerance, rows })
}
