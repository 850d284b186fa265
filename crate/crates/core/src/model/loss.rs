use serde::{Deserialize, Serialize};

use super::{Ablation, Outputs, PredictionBundle, Window};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Lower bound applied to a true-class probability before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub reg: f64,
    pub cla: f64,
    /// Cells whose true-class probability was raised to [`PROB_FLOOR`].
    pub clamped: usize,
}

/// Which terms enter the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Regression and classification, regardless of ablation.
    Full,
    /// Terms enabled by the ablation flags.
    Configured(Ablation),
}

impl Objective {
    fn terms(self) -> (bool, bool) {
        match self {
            Objective::Full => (true, true),
            Objective::Configured(a) => (!a.no_reg_head, !a.no_cla_head),
        }
    }
}

/// Targets of one window, `T2 × N` row-major.
struct Targets<'a> {
    y: &'a [f64],
    y_low: &'a [f64],
    labels: &'a [f64],
    low_labels: &'a [f64],
}

impl<'a> Targets<'a> {
    fn field(&self, i: usize) -> &'a [f64] {
        [self.y, self.y_low, self.labels, self.low_labels][i]
    }
}

impl<'a> From<&'a Window> for Targets<'a> {
    fn from(w: &'a Window) -> Self {
        Targets {
            y: &w.y,
            y_low: &w.y_low,
            labels: &w.labels,
            low_labels: &w.low_labels,
        }
    }
}

/// Stacks `T2 × N` tables into `[B, N, T2]`.
fn stack(tables: &[&[f64]], t2: usize, n: usize) -> Result<Tensor> {
    let mut out = Vec::with_capacity(tables.len() * t2 * n);
    for table in tables {
        if table.len() != t2 * n {
            return Err(Error::shape("targets", &[table.len()], &[t2 * n]));
        }
        for j in 0..n {
            out.extend((0..t2).map(|t| table[t * n + j]));
        }
    }
    Tensor::new(vec![tables.len(), n, t2], out)
}

/// One-hot `[B, N, T2, 2]` of binary labels.
fn one_hot(labels: &Tensor) -> Result<Tensor> {
    let mut shape = labels.shape().to_vec();
    shape.push(2);
    let mut out = Vec::with_capacity(labels.numel() * 2);
    for &l in labels.data() {
        if l != 0.0 && l != 1.0 {
            return Err(Error::arg(format!("trend label must be 0 or 1, got {l}")));
        }
        out.extend([1.0 - l, l]);
    }
    Tensor::new(shape, out)
}

fn mae(g: &mut Graph, pred: Var, target: Tensor) -> Result<Var> {
    let target = g.constant(target);
    let diff = g.sub(pred, target)?;
    let abs = g.abs(diff);
    Ok(g.mean(abs))
}

fn cross_entropy(g: &mut Graph, probs: Var, labels: Tensor, clamped: &mut usize) -> Result<Var> {
    let mask = g.constant(one_hot(&labels)?);
    let picked = g.mul(probs, mask)?;
    let ones = g.constant(Tensor::full(&[2, 1], 1.0));
    let p_true = g.matmul(picked, ones)?;
    *clamped += g
        .value(p_true)
        .data()
        .iter()
        .filter(|&&p| p < PROB_FLOOR)
        .count();
    let ln = g.ln_clamped(p_true, PROB_FLOOR);
    let m = g.mean(ln);
    Ok(g.scale(m, -1.0))
}

/// Builds the weighted loss on graph outputs for a batch. Returns the total
/// node and its value breakdown.
pub(crate) fn loss_graph(
    g: &mut Graph,
    out: &Outputs,
    batch: &[&Window],
    lambda: f64,
    objective: Objective,
) -> Result<(Var, LossBreakdown)> {
    let targets: Vec<Targets> = batch.iter().map(|w| Targets::from(*w)).collect();
    loss_on(
        g,
        out.y_reg,
        out.y_l_reg,
        out.class_probs,
        out.class_probs_low,
        &targets,
        lambda,
        objective,
    )
}

#[allow(clippy::too_many_arguments)]
fn loss_on(
    g: &mut Graph,
    y_reg: Var,
    y_l_reg: Var,
    probs: Var,
    probs_low: Var,
    targets: &[Targets],
    lambda: f64,
    objective: Objective,
) -> Result<(Var, LossBreakdown)> {
    let shape = g.shape(y_reg).to_vec();
    if shape.len() != 3 || shape[0] != targets.len() {
        return Err(Error::shape(
            "loss predictions",
            &shape,
            &[targets.len(), 0, 0],
        ));
    }
    let (n, t2) = (shape[1], shape[2]);
    let pick = |field: usize| -> Result<Tensor> {
        let tables: Vec<&[f64]> = targets.iter().map(|t| t.field(field)).collect();
        stack(&tables, t2, n)
    };
    let (use_reg, use_cla) = objective.terms();

    let main_reg = mae(g, y_reg, pick(0)?)?;
    let low_reg = mae(g, y_l_reg, pick(1)?)?;
    let reg = g.add(main_reg, low_reg)?;

    let mut clamped = 0;
    let main_cla = cross_entropy(g, probs, pick(2)?, &mut clamped)?;
    let low_cla = cross_entropy(g, probs_low, pick(3)?, &mut clamped)?;
    let cla = g.add(main_cla, low_cla)?;

    let reg = if use_reg { reg } else { g.scale(reg, 0.0) };
    let cla = if use_cla { cla } else { g.scale(cla, 0.0) };
    let weighted = g.scale(cla, lambda);
    let total = g.add(reg, weighted)?;
    let breakdown = LossBreakdown {
        total: g.value(total).item(),
        reg: g.value(reg).item(),
        cla: g.value(cla).item(),
        clamped: if use_cla { clamped } else { 0 },
    };
    Ok((total, breakdown))
}

/// Full objective for one predicted window against its targets.
pub fn multi_supervision_loss(
    bundle: &PredictionBundle,
    window: &Window,
    lambda: f64,
) -> Result<LossBreakdown> {
    let (t2, n) = (bundle.t2, bundle.n_stocks);
    if let Some(p) = bundle
        .p_cla
        .iter()
        .chain(&bundle.p_l_cla)
        .find(|p| !(0.0..=1.0).contains(*p))
    {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    let mut g = Graph::new(false, 0);
    let y_reg = g.constant(stack(&[&bundle.y_reg], t2, n)?);
    let y_l_reg = g.constant(stack(&[&bundle.y_l_reg], t2, n)?);
    let class_table = |p: &[f64]| -> Result<Tensor> {
        let up = stack(&[p], t2, n)?;
        let data = up.data().iter().flat_map(|&q| [1.0 - q, q]).collect();
        Tensor::new(vec![1, n, t2, 2], data)
    };
    let probs = g.constant(class_table(&bundle.p_cla)?);
    let probs_low = g.constant(class_table(&bundle.p_l_cla)?);
    let targets = [Targets::from(window)];
    let (_, breakdown) = loss_on(
        &mut g,
        y_reg,
        y_l_reg,
        probs,
        probs_low,
        &targets,
        lambda,
        Objective::Full,
    )?;
    Ok(breakdown)
}
