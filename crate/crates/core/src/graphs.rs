//! Calendar slot graph, return-correlation graph and their embedding tables.

use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, TimeDelta};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::ReturnMatrix;
use crate::error::{Error, Result};
use crate::stats;
use crate::tensor::Tensor;

pub const SLOTS_PER_MONTH: usize = 21;
pub const MONTHS_PER_YEAR: usize = 12;
pub const SLOT_NODES: usize = SLOTS_PER_MONTH * MONTHS_PER_YEAR;

/// `t = t0 + index·dt + remainder` with `0 ≤ remainder < dt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeSlot {
    pub index: u64,
    pub remainder: TimeDelta,
}

pub fn time_slot_of(t: NaiveDateTime, t0: NaiveDateTime, dt: TimeDelta) -> Result<TimeSlot> {
    if t < t0 {
        return Err(Error::arg(format!("timestamp {t} precedes base {t0}")));
    }
    let (elapsed, unit) = match ((t - t0).num_nanoseconds(), dt.num_nanoseconds()) {
        (Some(e), Some(u)) if u > 0 => (e, u),
        _ if dt <= TimeDelta::zero() => return Err(Error::arg("slot width must be positive")),
        _ => return Err(Error::arg("time span too large for slot arithmetic")),
    };
    Ok(TimeSlot {
        index: (elapsed / unit) as u64,
        remainder: TimeDelta::nanoseconds(elapsed % unit),
    })
}

pub fn slot_node(index: u64) -> usize {
    (index % SLOT_NODES as u64) as usize
}

/// Slot index per trading date: 21 slots per calendar month counted from
/// January of the first date's year, with the k-th trading day of a month in
/// slot `min(k, 21) − 1`. Ordinals follow the supplied calendar.
pub fn trading_slot_indices(calendar: &[NaiveDate]) -> Vec<u64> {
    let Some(first) = calendar.first() else {
        return Vec::new();
    };
    let base_year = first.year();
    let mut out = Vec::with_capacity(calendar.len());
    let mut current = None;
    let mut ordinal = 0usize;
    for d in calendar {
        let month = (d.year() - base_year) as u64 * 12 + u64::from(d.month0());
        if current != Some(month) {
            current = Some(month);
            ordinal = 0;
        }
        ordinal += 1;
        out.push(month * SLOTS_PER_MONTH as u64 + (ordinal.min(SLOTS_PER_MONTH) - 1) as u64);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EdgeKind {
    AdjacentSlot,
    NextMonth,
}

/// Directed graph over slot nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalGraph {
    pub n_nodes: usize,
    pub edges: Vec<(usize, usize, EdgeKind)>,
}

impl TemporalGraph {
    pub fn new(n_nodes: usize, edges: Vec<(usize, usize, EdgeKind)>) -> Result<Self> {
        if let Some(e) = edges.iter().find(|e| e.0 >= n_nodes || e.1 >= n_nodes) {
            return Err(Error::arg(format!(
                "edge {} -> {} outside {n_nodes} nodes",
                e.0, e.1
            )));
        }
        Ok(TemporalGraph { n_nodes, edges })
    }

    pub fn out_neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.0 == node).map(|e| e.1)
    }

    pub fn out_degree(&self, node: usize) -> usize {
        self.out_neighbors(node).count()
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.1 == node).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["source", "target", "kind"])?;
        for (s, t, k) in &self.edges {
            let kind = match k {
                EdgeKind::AdjacentSlot => "adjacent_slot",
                EdgeKind::NextMonth => "next_month",
            };
            w.write_record([s.to_string(), t.to_string(), kind.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// 252 nodes; node `i` links to `i+1` and `i+21`, both modulo 252.
pub fn build_temporal_graph() -> TemporalGraph {
    let mut edges = Vec::with_capacity(2 * SLOT_NODES);
    for i in 0..SLOT_NODES {
        edges.push((i, (i + 1) % SLOT_NODES, EdgeKind::AdjacentSlot));
        edges.push((i, (i + SLOTS_PER_MONTH) % SLOT_NODES, EdgeKind::NextMonth));
    }
    TemporalGraph {
        n_nodes: SLOT_NODES,
        edges,
    }
}

/// Row-major `rows × dim` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f64>,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows, self.dim], self.values.clone()).expect("consistent table")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in 0..self.rows {
            let line: Vec<String> = self.row(r).iter().map(|v| v.to_string()).collect();
            writeln!(f, "{}", line.join(","))?;
        }
        f.flush()?;
        Ok(())
    }
}

fn uniform_rows(rows: usize, dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let bound = (6.0 / (rows + dim) as f64).sqrt();
    (0..rows * dim)
        .map(|_| rng.random_range(-bound..=bound))
        .collect()
}

/// Seeded rows smoothed `rounds` times: each row becomes the mean of itself
/// and its out-neighbours.
pub fn init_temporal_embedding(
    graph: &TemporalGraph,
    dim: usize,
    rounds: usize,
    rng: &mut impl Rng,
) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(Error::arg("embedding dimension must be positive"));
    }
    let mut values = uniform_rows(graph.n_nodes, dim, rng);
    smooth(graph, dim, rounds, &mut values);
    Ok(EmbeddingTable {
        rows: graph.n_nodes,
        dim,
        values,
        trainable: true,
    })
}

fn smooth(graph: &TemporalGraph, dim: usize, rounds: usize, values: &mut Vec<f64>) {
    let neighbors: Vec<Vec<usize>> = (0..graph.n_nodes)
        .map(|i| graph.out_neighbors(i).collect())
        .collect();
    for _ in 0..rounds {
        let mut next = values.clone();
        for (i, nb) in neighbors.iter().enumerate() {
            for c in 0..dim {
                let s = values[i * dim + c] + nb.iter().map(|&j| values[j * dim + c]).sum::<f64>();
                next[i * dim + c] = s / (1 + nb.len()) as f64;
            }
        }
        *values = next;
    }
}

/// Symmetric `N × N` Spearman correlation matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGraph {
    pub n: usize,
    pub adjacency: Vec<f64>,
}

impl SpatialGraph {
    pub fn new(n: usize, adjacency: Vec<f64>) -> Result<Self> {
        if adjacency.len() != n * n {
            return Err(Error::shape(
                "SpatialGraph::new",
                &[n, n],
                &[adjacency.len()],
            ));
        }
        Ok(SpatialGraph { n, adjacency })
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.n + j]
    }

    /// Same graph with nodes reordered so new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> SpatialGraph {
        let n = self.n;
        let mut adjacency = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                adjacency[a * n + b] = self.weight(perm[a], perm[b]);
            }
        }
        SpatialGraph { n, adjacency }
    }

    pub fn write_csv(&self, path: &Path, symbols: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["source", "target", "weight"])?;
        for i in 0..self.n {
            for j in 0..self.n {
                w.write_record([&symbols[i], &symbols[j], &self.weight(i, j).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Pairwise Spearman correlation of return columns over jointly observed
/// dates. Pairs with fewer than three overlaps or a constant side get 0.
/// Returns the graph and the symbols whose columns were constant.
pub fn build_spatial_graph(returns: &ReturnMatrix) -> (SpatialGraph, Vec<String>) {
    let n = returns.n_symbols();
    let cols: Vec<Vec<f64>> = (0..n).map(|j| returns.column(j)).collect();
    let mut adjacency = vec![0.0; n * n];
    let mut constant = Vec::new();
    for i in 0..n {
        adjacency[i * n + i] = 1.0;
        let present: Vec<f64> = cols[i].iter().copied().filter(|v| v.is_finite()).collect();
        if present.len() >= 2 && present.iter().all(|v| *v == present[0]) {
            log::warn!("constant return column for {}", returns.symbols[i]);
            constant.push(returns.symbols[i].clone());
        }
        for j in (i + 1)..n {
            let (x, y) = stats::finite_pairs(&cols[i], &cols[j]);
            let rho = if x.len() >= 3 {
                stats::spearman(&x, &y).unwrap_or(0.0)
            } else {
                0.0
            };
            adjacency[i * n + j] = rho;
            adjacency[j * n + i] = rho;
        }
    }
    (SpatialGraph { n, adjacency }, constant)
}

fn normalize(row: &mut [f64]) {
    let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        row.iter_mut().for_each(|v| *v /= norm);
    }
}

/// One synchronous aggregation round:
/// `v_i ← normalize(v_i + Σ_{j≠i} softmax_j(v_i·v_j/√D)·|w_ij|·v_j)`.
pub fn struc2vec_step(graph: &SpatialGraph, dim: usize, values: &[f64]) -> Vec<f64> {
    let n = graph.n;
    let scale = 1.0 / (dim as f64).sqrt();
    let row = |i: usize| &values[i * dim..(i + 1) * dim];
    let mut next = values.to_vec();
    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let logits: Vec<f64> = others
            .iter()
            .map(|&j| row(i).iter().zip(row(j)).map(|(a, b)| a * b).sum::<f64>() * scale)
            .collect();
        let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = exps.iter().sum();
        let out = &mut next[i * dim..(i + 1) * dim];
        for (k, &j) in others.iter().enumerate() {
            let coef = exps[k] / z * graph.weight(i, j).abs();
            for (o, v) in out.iter_mut().zip(row(j)) {
                *o += coef * v;
            }
        }
        normalize(out);
    }
    next
}

/// Iterated attention-weighted aggregation over the correlation graph from a
/// seeded Gaussian start. Stops when no row moves by more than `tol`
/// (max-abs) or after `max_iters` rounds. Rows are unit norm on exit.
pub fn struc2vec_embed(
    graph: &SpatialGraph,
    dim: usize,
    max_iters: usize,
    tol: f64,
    rng: &mut impl Rng,
) -> Result<EmbeddingTable> {
    if dim == 0 || graph.n == 0 {
        return Err(Error::arg(
            "struc2vec needs at least one node and dimension",
        ));
    }
    if graph.adjacency.iter().any(|w| !w.is_finite()) {
        return Err(Error::arg("spatial graph has non-finite weights"));
    }
    let mut values: Vec<f64> = (0..graph.n * dim)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    for i in 0..graph.n {
        normalize(&mut values[i * dim..(i + 1) * dim]);
    }
    for _ in 0..max_iters {
        let next = struc2vec_step(graph, dim, &values);
        let change = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        if change < tol {
            break;
        }
    }
    Ok(EmbeddingTable {
        rows: graph.n,
        dim,
        values,
        trainable: false,
    })
}

/// Replicates `rho_spa` (`N × D`) along time and `rho_tem` (`T1 × D`) along
/// stocks, both to `T1 × N × D`.
pub fn broadcast_embeddings(rho_spa: &Tensor, rho_tem: &Tensor) -> Result<(Tensor, Tensor)> {
    let (ss, ts) = (rho_spa.shape(), rho_tem.shape());
    if ss.len() != 2 || ts.len() != 2 || ss[1] != ts[1] {
        return Err(Error::shape("broadcast_embeddings", ss, ts));
    }
    let (n, t1, d) = (ss[0], ts[0], ss[1]);
    let mut spa = Vec::with_capacity(t1 * n * d);
    let mut tem = Vec::with_capacity(t1 * n * d);
    for t in 0..t1 {
        spa.extend_from_slice(rho_spa.data());
        for _ in 0..n {
            tem.extend_from_slice(&rho_tem.data()[t * d..(t + 1) * d]);
        }
    }
    Ok((
        Tensor::new(vec![t1, n, d], spa)?,
        Tensor::new(vec![t1, n, d], tem)?,
    ))
}
