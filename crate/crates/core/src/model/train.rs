use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::loss_graph;
use super::{LossBreakdown, Model, ModelConfig, Objective, Outputs, PredictionBundle, Window};
use crate::data::ReturnMatrix;
use crate::error::{Error, Result};
use crate::graphs::{build_spatial_graph, struc2vec_embed, EmbeddingTable};
use crate::tensor::{AdamState, Graph, ParameterStore, Var};

/// Losses after an epoch. Epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossBreakdown,
    pub val: Option<LossBreakdown>,
}

impl EpochLog {
    /// Loss used for checkpoint selection and the plateau schedule.
    fn monitored(&self) -> f64 {
        self.val.map_or(self.train.total, |v| v.total)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    /// Parameters at the best monitored epoch.
    pub store: ParameterStore,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Everything needed to reproduce and audit a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ModelConfig,
    pub seed: u64,
    pub data_hash: String,
    pub n_stocks: usize,
    pub n_channels: usize,
    pub best_epoch: usize,
    pub loss_log: Vec<EpochLog>,
}

impl RunManifest {
    pub fn from_outcome(outcome: &TrainOutcome, data_hash: impl Into<String>) -> Self {
        RunManifest {
            config: outcome.model.config.clone(),
            seed: outcome.model.config.seed,
            data_hash: data_hash.into(),
            n_stocks: outcome.model.n_stocks,
            n_channels: outcome.model.n_channels,
            best_epoch: outcome.best_epoch,
            loss_log: outcome.log.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Fixed stock embedding from the correlation graph of training-period
/// returns. Also returns the symbols whose return series is constant.
pub fn spatial_embedding(
    returns: &ReturnMatrix,
    config: &ModelConfig,
) -> Result<(EmbeddingTable, Vec<String>)> {
    let (graph, constant) = build_spatial_graph(returns);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let table = struc2vec_embed(
        &graph,
        config.spatial_dim,
        config.struc2vec_iters,
        config.struc2vec_tol,
        &mut rng,
    )?;
    Ok((table, constant))
}

fn step_seed(seed: u64, step: u64) -> u64 {
    seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Eval-mode loss averaged over all windows.
pub fn evaluate_loss(
    model: &Model,
    store: &ParameterStore,
    windows: &[Window],
    objective: Objective,
) -> Result<LossBreakdown> {
    if windows.is_empty() {
        return Err(Error::arg("no windows to evaluate"));
    }
    let lambda = model.config.lambda;
    let parts: Vec<(usize, LossBreakdown)> = windows
        .par_chunks(model.config.batch_size)
        .map(|chunk| {
            let batch: Vec<&Window> = chunk.iter().collect();
            let mut g = Graph::new(false, 0);
            let out = model.forward(&mut g, store, &batch)?;
            let (_, b) = loss_graph(&mut g, &out, &batch, lambda, objective)?;
            Ok((chunk.len(), b))
        })
        .collect::<Result<_>>()?;
    let mut acc = LossBreakdown {
        total: 0.0,
        reg: 0.0,
        cla: 0.0,
        clamped: 0,
    };
    for (len, b) in &parts {
        let w = *len as f64 / windows.len() as f64;
        acc.total += w * b.total;
        acc.reg += w * b.reg;
        acc.cla += w * b.cla;
        acc.clamped += b.clamped;
    }
    Ok(acc)
}

/// Mini-batch Adam on `train`, keeping the parameters with the lowest
/// validation loss (training loss when `val` is empty). The learning rate
/// is multiplied by `lr_decay` after `patience` epochs without improvement.
pub fn train(
    config: &ModelConfig,
    spatial: &EmbeddingTable,
    train: &[Window],
    val: &[Window],
) -> Result<TrainOutcome> {
    let first = train
        .first()
        .ok_or_else(|| Error::arg("training needs at least one window"))?;
    let model = Model::new(config.clone(), first.n_stocks(), first.n_channels())?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = model.init_params(spatial, &mut init_rng)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_0F0D);
    let objective = Objective::Configured(config.ablation);
    let mut adam = AdamState::new(config.lr);

    let measure = |store: &ParameterStore, epoch: usize, lr: f64| -> Result<EpochLog> {
        let train_loss = evaluate_loss(&model, store, train, objective)?;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(evaluate_loss(&model, store, val, objective)?)
        };
        Ok(EpochLog {
            epoch,
            lr,
            train: train_loss,
            val: val_loss,
        })
    };

    let mut log = vec![measure(&store, 0, adam.lr)?];
    let mut best = (0, log[0].monitored(), store.clone());
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0u64;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Window> = idx.iter().map(|&i| &train[i]).collect();
            let mut g = Graph::new(true, step_seed(config.seed, step));
            step += 1;
            let out: Outputs = model.forward(&mut g, &store, &batch)?;
            let (loss, breakdown): (Var, LossBreakdown) =
                loss_graph(&mut g, &out, &batch, config.lambda, objective)?;
            if !breakdown.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            g.backward(loss)?;
            g.write_grads(&mut store);
            adam.step(&mut store);
        }
        let entry = measure(&store, epoch, adam.lr)?;
        if !entry.train.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
            });
        }
        let monitored = entry.monitored();
        log::debug!(
            "epoch {epoch}: train {:.6} monitored {:.6}",
            entry.train.total,
            monitored
        );
        log.push(entry);
        if monitored < best.1 {
            best = (epoch, monitored, store.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                adam.lr *= config.lr_decay;
                since_best = 0;
            }
        }
    }

    let (best_epoch, _, store) = best;
    Ok(TrainOutcome {
        model,
        store,
        log,
        best_epoch,
    })
}

fn bundle_from(g: &Graph, out: &Outputs, index: usize) -> PredictionBundle {
    let shape = g.shape(out.y_reg);
    let (n, t2) = (shape[1], shape[2]);
    let table = |v: Var| -> Vec<f64> {
        let data = &g.value(v).data()[index * n * t2..(index + 1) * n * t2];
        (0..t2)
            .flat_map(|t| (0..n).map(move |j| data[j * t2 + t]))
            .collect()
    };
    PredictionBundle {
        t2,
        n_stocks: n,
        y_reg: table(out.y_reg),
        p_cla: table(out.p_cla),
        y_l_reg: table(out.y_l_reg),
        p_l_cla: table(out.p_l_cla),
    }
}

/// Eval-mode predictions, one bundle per window in input order.
pub fn predict_windows(
    model: &Model,
    store: &ParameterStore,
    windows: &[Window],
) -> Result<Vec<PredictionBundle>> {
    model.check_compatible(store)?;
    windows
        .par_iter()
        .map(|w| {
            let mut g = Graph::new(false, 0);
            let out = model.forward(&mut g, store, &[w])?;
            Ok(bundle_from(&g, &out, 0))
        })
        .collect()
}

/// Eval-mode prediction for a single window with a stored checkpoint.
pub fn predict(
    window: &Window,
    store: &ParameterStore,
    config: &ModelConfig,
) -> Result<PredictionBundle> {
    let model = Model::new(config.clone(), window.n_stocks(), window.n_channels())?;
    let mut out = predict_windows(&model, store, std::slice::from_ref(window))?;
    Ok(out.remove(0))
}
