use rand::Rng;

use super::{dataset::decouple_window, ModelConfig, Window};
use crate::error::{Error, Result};
use crate::graphs::{build_temporal_graph, init_temporal_embedding, EmbeddingTable, SLOT_NODES};
use crate::signal::WaveletFilterPair;
use crate::tensor::nn::{
    affine, causal_conv, register_affine, register_attention, register_causal_conv,
    scaled_dot_attention,
};
use crate::tensor::{Graph, ParameterStore, Tensor, Var};

const SPATIAL_TABLE: &str = "graph.spatial";
const TEMPORAL_TABLE: &str = "graph.temporal";

/// Network shape bound to a stock count and input channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub n_stocks: usize,
    pub n_channels: usize,
    filters: WaveletFilterPair,
}

/// Output nodes for a batch, all `[B, N, T2]` except the class tables
/// `[B, N, T2, 2]`.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    pub y_reg: Var,
    pub p_cla: Var,
    pub y_l_reg: Var,
    pub p_l_cla: Var,
    pub class_probs: Var,
    pub class_probs_low: Var,
}

impl Model {
    pub fn new(config: ModelConfig, n_stocks: usize, n_channels: usize) -> Result<Model> {
        config.validate()?;
        if n_stocks == 0 || n_channels < 2 {
            return Err(Error::arg(format!(
                "model needs stocks and at least return and trend channels (N = {n_stocks}, C = {n_channels})"
            )));
        }
        let filters = WaveletFilterPair::by_name(&config.wavelet)?;
        Ok(Model {
            config,
            n_stocks,
            n_channels,
            filters,
        })
    }

    fn meta(&self) -> Vec<(&'static str, String)> {
        let c = &self.config;
        vec![
            ("t1", c.t1.to_string()),
            ("t2", c.t2.to_string()),
            ("n_stocks", self.n_stocks.to_string()),
            ("n_channels", self.n_channels.to_string()),
            ("d_model", c.d_model.to_string()),
            ("layers", c.layers.to_string()),
            ("kernel", c.kernel.to_string()),
            ("spatial_dim", c.spatial_dim.to_string()),
            ("wavelet", c.wavelet.clone()),
            (
                "ablation",
                serde_json::to_string(&c.ablation).expect("plain struct"),
            ),
        ]
    }

    /// Fails with a compatibility error naming the first differing setting.
    pub fn check_compatible(&self, store: &ParameterStore) -> Result<()> {
        for (k, v) in self.meta() {
            match store.meta(k) {
                Some(found) if found == v => {}
                found => {
                    return Err(Error::Compatibility(format!(
                        "{k} is {v} in the config but {} in the checkpoint",
                        found.unwrap_or("absent")
                    )))
                }
            }
        }
        Ok(())
    }

    /// Registers every parameter. `spatial` is the fixed `N × spatial_dim`
    /// stock embedding.
    pub fn init_params(
        &self,
        spatial: &EmbeddingTable,
        rng: &mut impl Rng,
    ) -> Result<ParameterStore> {
        let c = &self.config;
        let d = c.d_model;
        if spatial.rows != self.n_stocks || spatial.dim != c.spatial_dim {
            return Err(Error::shape(
                "spatial embedding",
                &[spatial.rows, spatial.dim],
                &[self.n_stocks, c.spatial_dim],
            ));
        }
        let mut s = ParameterStore::new();
        register_affine(&mut s, "embed.low", self.n_channels, d, rng)?;
        register_affine(&mut s, "embed.high", self.n_channels, d, rng)?;
        s.insert_frozen(SPATIAL_TABLE, spatial.to_tensor())?;
        register_affine(&mut s, "graph.spa_fc", c.spatial_dim, d, rng)?;
        let temporal =
            init_temporal_embedding(&build_temporal_graph(), d, c.temporal_smoothing_rounds, rng)?;
        s.insert(TEMPORAL_TABLE, temporal.to_tensor())?;
        for l in 0..c.layers {
            register_attention(&mut s, &format!("enc{l}.tatt"), d, rng)?;
            register_causal_conv(&mut s, &format!("enc{l}.conv"), c.kernel, d, rng)?;
            register_attention(&mut s, &format!("enc{l}.gat_low"), d, rng)?;
            register_attention(&mut s, &format!("enc{l}.gat_high"), d, rng)?;
        }
        register_affine(&mut s, "dec.pred_low", c.t1, c.t2, rng)?;
        register_affine(&mut s, "dec.pred_high", c.t1, c.t2, rng)?;
        register_attention(&mut s, "dec.fuse_self", d, rng)?;
        register_attention(&mut s, "dec.fuse_cross", d, rng)?;
        register_affine(&mut s, "head.reg", d, 1, rng)?;
        register_affine(&mut s, "head.cla", d, 2, rng)?;
        register_affine(&mut s, "head.reg_low", d, 1, rng)?;
        register_affine(&mut s, "head.cla_low", d, 2, rng)?;
        for (k, v) in self.meta() {
            s.set_meta(k, v);
        }
        Ok(s)
    }

    fn check_window(&self, w: &Window) -> Result<()> {
        let want = [self.config.t1, self.n_stocks, self.n_channels];
        if w.input.shape() != want || w.slots.len() != self.config.t1 {
            return Err(Error::shape("window", w.input.shape(), &want));
        }
        if w.slots.iter().any(|&s| s >= SLOT_NODES) {
            return Err(Error::arg("slot node out of range"));
        }
        Ok(())
    }

    /// Stacked decoupled inputs `[B, T1, N, C]` for both branches.
    fn branch_inputs(&self, batch: &[&Window]) -> Result<(Tensor, Tensor)> {
        let mut low = Vec::new();
        let mut high = Vec::new();
        for w in batch {
            self.check_window(w)?;
            let (l, h) =
                decouple_window(&w.input, &self.filters, self.config.ablation.no_decouple)?;
            low.extend_from_slice(l.data());
            high.extend_from_slice(h.data());
        }
        let shape = vec![batch.len(), self.config.t1, self.n_stocks, self.n_channels];
        Ok((Tensor::new(shape.clone(), low)?, Tensor::new(shape, high)?))
    }

    /// Spatial plus temporal embedding, `[B, T1, N, D]` after broadcasting.
    fn graph_embedding(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        batch: &[&Window],
    ) -> Result<Var> {
        let (b, t1, d) = (batch.len(), self.config.t1, self.config.d_model);
        let table = g.param(store, SPATIAL_TABLE)?;
        let spa = affine(g, store, "graph.spa_fc", table)?;
        let slots: Vec<usize> = batch.iter().flat_map(|w| w.slots.iter().copied()).collect();
        let temporal = g.param(store, TEMPORAL_TABLE)?;
        let tem = g.gather_rows(temporal, &slots)?;
        let tem = g.reshape(tem, &[b, t1, 1, d])?;
        g.add(tem, spa)
    }

    fn graph_attention(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        prefix: &str,
        x: Var,
        embedding: Option<Var>,
    ) -> Result<Var> {
        let xt = match embedding {
            Some(e) => g.add(x, e)?,
            None => x,
        };
        let att = scaled_dot_attention(g, store, prefix, xt, xt, xt, true)?.output;
        let att = g.dropout(att, self.config.dropout)?;
        g.add(x, att)
    }

    /// One encoder layer on `[B, T1, N, D]` branch states.
    fn encoder_layer(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        layer: usize,
        xl: Var,
        xh: Var,
        embedding: Option<Var>,
    ) -> Result<(Var, Var)> {
        let (mut xl, mut xh) = (xl, xh);
        if !self.config.ablation.no_temporal {
            let per_stock = g.permute(xl, &[0, 2, 1, 3])?;
            let att = scaled_dot_attention(
                g,
                store,
                &format!("enc{layer}.tatt"),
                per_stock,
                per_stock,
                per_stock,
                false,
            )?;
            let att = g.permute(att.output, &[0, 2, 1, 3])?;
            let att = g.dropout(att, self.config.dropout)?;
            xl = g.add(xl, att)?;

            let conv = causal_conv(
                g,
                store,
                &format!("enc{layer}.conv"),
                xh,
                1,
                self.config.dilation(layer),
            )?;
            let conv = g.relu(conv);
            let conv = g.dropout(conv, self.config.dropout)?;
            xh = g.add(xh, conv)?;
        }
        xl = self.graph_attention(g, store, &format!("enc{layer}.gat_low"), xl, embedding)?;
        xh = self.graph_attention(g, store, &format!("enc{layer}.gat_high"), xh, embedding)?;
        Ok((xl, xh))
    }

    /// Maps the time axis T1 → T2: `[B, T1, N, D]` to `[B, N, T2, D]`.
    fn predictor(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        prefix: &str,
        x: Var,
    ) -> Result<Var> {
        let along_time = g.permute(x, &[0, 2, 3, 1])?;
        let y = affine(g, store, prefix, along_time)?;
        g.permute(y, &[0, 1, 3, 2])
    }

    fn heads(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        reg: &str,
        cla: &str,
        y: Var,
    ) -> Result<(Var, Var, Var)> {
        let (b, n, t2) = {
            let s = g.shape(y);
            (s[0], s[1], s[2])
        };
        let r = affine(g, store, reg, y)?;
        let r = g.reshape(r, &[b, n, t2])?;
        let logits = affine(g, store, cla, y)?;
        let probs = g.softmax(logits)?;
        let up = g.slice(probs, 3, 1, 1)?;
        let up = g.reshape(up, &[b, n, t2])?;
        Ok((r, up, probs))
    }

    /// Low-frequency self attention plus low-to-high cross attention over the
    /// horizon axis of `[B, N, T2, D]` branch predictions.
    fn fuse(&self, g: &mut Graph, store: &ParameterStore, yl: Var, yh: Var) -> Result<Var> {
        if self.config.ablation.no_fusion {
            return g.add(yl, yh);
        }
        let own = scaled_dot_attention(g, store, "dec.fuse_self", yl, yl, yl, false)?.output;
        let cross = scaled_dot_attention(g, store, "dec.fuse_cross", yl, yh, yh, false)?.output;
        g.add(own, cross)
    }

    /// Full forward pass for a batch of windows.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        batch: &[&Window],
    ) -> Result<Outputs> {
        if batch.is_empty() {
            return Err(Error::arg("empty batch"));
        }
        let (low_in, high_in) = self.branch_inputs(batch)?;
        let low_in = g.constant(low_in);
        let high_in = g.constant(high_in);
        let mut xl = affine(g, store, "embed.low", low_in)?;
        let mut xh = affine(g, store, "embed.high", high_in)?;

        let embedding = if self.config.ablation.no_graph {
            None
        } else {
            Some(self.graph_embedding(g, store, batch)?)
        };
        for layer in 0..self.config.layers {
            (xl, xh) = self.encoder_layer(g, store, layer, xl, xh, embedding)?;
        }

        let yl = self.predictor(g, store, "dec.pred_low", xl)?;
        let yh = self.predictor(g, store, "dec.pred_high", xh)?;
        let fused = self.fuse(g, store, yl, yh)?;
        let (y_reg, p_cla, class_probs) = self.heads(g, store, "head.reg", "head.cla", fused)?;
        let (y_l_reg, p_l_cla, class_probs_low) =
            self.heads(g, store, "head.reg_low", "head.cla_low", yl)?;
        Ok(Outputs {
            y_reg,
            p_cla,
            y_l_reg,
            p_l_cla,
            class_probs,
            class_probs_low,
        })
    }
}
