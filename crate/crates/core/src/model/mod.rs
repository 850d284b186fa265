//! The dual-frequency spatiotemporal network: wavelet decoupling, temporal
//! attention and dilated convolution branches, cross-stock graph attention,
//! fusion decoding, multi-task heads, and the training loop.

mod dataset;
mod loss;
mod network;
mod train;

pub use dataset::{
    build_windows, decouple_window, low_frequency_targets, windows_for_range, Window,
};
pub use loss::{multi_supervision_loss, LossBreakdown, Objective, PROB_FLOOR};
pub use network::{Model, Outputs};
pub use train::{
    evaluate_loss, predict, predict_windows, spatial_embedding, train, EpochLog, RunManifest,
    TrainOutcome,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Component switches for ablation runs. All `false` is the full model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Feed the raw return channel to both branches.
    pub no_decouple: bool,
    /// Skip temporal attention and the dilated convolution.
    pub no_temporal: bool,
    /// Drop the spatial and temporal graph embeddings.
    pub no_graph: bool,
    /// Add the two decoded branches instead of fusion attention.
    pub no_fusion: bool,
    /// Train on the classification loss only.
    pub no_reg_head: bool,
    /// Train on the regression loss only.
    pub no_cla_head: bool,
}

impl Ablation {
    /// The full model followed by the six single-component variants.
    pub fn variants() -> Vec<(&'static str, Ablation)> {
        let none = Ablation::default();
        vec![
            ("Stockformer", none),
            (
                "w/o D",
                Ablation {
                    no_decouple: true,
                    ..none
                },
            ),
            (
                "w/o T",
                Ablation {
                    no_temporal: true,
                    ..none
                },
            ),
            (
                "w/o G",
                Ablation {
                    no_graph: true,
                    ..none
                },
            ),
            (
                "w/o F",
                Ablation {
                    no_fusion: true,
                    ..none
                },
            ),
            (
                "w/o Reg",
                Ablation {
                    no_reg_head: true,
                    ..none
                },
            ),
            (
                "w/o Cla",
                Ablation {
                    no_cla_head: true,
                    ..none
                },
            ),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub t1: usize,
    pub t2: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub kernel: usize,
    pub lambda: f64,
    pub dropout: f64,
    pub lr: f64,
    pub lr_decay: f64,
    pub patience: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub spatial_dim: usize,
    pub temporal_smoothing_rounds: usize,
    pub struc2vec_iters: usize,
    pub struc2vec_tol: f64,
    pub wavelet: String,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            t1: 20,
            t2: 2,
            d_model: 128,
            layers: 2,
            heads: 1,
            kernel: 2,
            lambda: 2.0,
            dropout: 0.2,
            lr: 0.001,
            lr_decay: 0.1,
            patience: 10,
            epochs: 100,
            batch_size: 2,
            seed: 0,
            spatial_dim: 16,
            temporal_smoothing_rounds: 2,
            struc2vec_iters: 20,
            struc2vec_tol: 1e-6,
            wavelet: "haar".into(),
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    /// Checks every constraint and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.t2 == 0 || self.t2 >= self.t1 {
            bad.push(format!(
                "t2 must satisfy 0 < t2 < t1 (t1 = {}, t2 = {})",
                self.t1, self.t2
            ));
        }
        if self.d_model == 0 {
            bad.push("d_model must be positive".to_string());
        }
        if self.heads != 1 {
            bad.push(format!(
                "only a single attention head is supported, got heads = {}",
                self.heads
            ));
        }
        if self.kernel == 0 {
            bad.push("kernel must be positive".to_string());
        }
        if self.layers == 0 {
            bad.push("layers must be positive".to_string());
        }
        if !(self.lambda >= 0.0) {
            bad.push(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bad.push(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.lr > 0.0) {
            bad.push(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            bad.push(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if self.batch_size == 0 {
            bad.push("batch_size must be positive".to_string());
        }
        if self.spatial_dim == 0 {
            bad.push("spatial_dim must be positive".to_string());
        }
        if self.ablation.no_reg_head && self.ablation.no_cla_head {
            bad.push("no_reg_head and no_cla_head together leave nothing to train".to_string());
        }
        if let Err(e) = crate::signal::WaveletFilterPair::by_name(&self.wavelet) {
            bad.push(e.to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Dilation of the causal convolution in encoder layer `layer`.
    pub fn dilation(&self, layer: usize) -> usize {
        1 << layer
    }
}

/// Four `T2 × N` row-major output tables for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBundle {
    pub t2: usize,
    pub n_stocks: usize,
    pub y_reg: Vec<f64>,
    pub p_cla: Vec<f64>,
    pub y_l_reg: Vec<f64>,
    pub p_l_cla: Vec<f64>,
}

impl PredictionBundle {
    pub fn is_finite(&self) -> bool {
        [&self.y_reg, &self.p_cla, &self.y_l_reg, &self.p_l_cla]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}
