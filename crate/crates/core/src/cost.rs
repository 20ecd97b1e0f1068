//! Closed-form attention cost and KV-cache memory model.
//!
//! Costs are in interaction units: `D` multiply-accumulates per query/key
//! pair, counted once per attention whatever its mask. All arithmetic is
//! exact integer arithmetic.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Cost of one full (cache-miss) block forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CostBreakdown {
    /// Context path: focused compression, `H` self layers, restore.
    pub c_left: u64,
    /// Generation path: history cross, context cross, causal self.
    pub c_right: u64,
    pub total: u64,
    /// Slope in `N`: `D (2 Woh + Wog)`.
    pub c1: u64,
    /// Intercept; negative only in corner cases (e.g. `H = 0`, `Woh > Wog`).
    pub c0: i64,
}

fn check(n: u64, wog: u64) -> Result<()> {
    if wog == 0 {
        return Err(Error::Domain("Wog must be at least 1".into()));
    }
    if n < wog {
        return Err(Error::Domain(format!("N = {n} is shorter than Wog = {wog}")));
    }
    Ok(())
}

/// Cost of a full forward over `N` tokens, summed window by window.
pub fn cost_cache_miss(n: u64, d: u64, woh: u64, wog: u64, h: u64) -> Result<CostBreakdown> {
    check(n, wog)?;
    let hist = n - wog;
    let c_left = 2 * d * hist * woh + h * d * woh * woh;
    let c_right = d * wog * hist + (h + 1) * d * wog * woh + (h + 2) * d * wog * wog;
    let c1 = d * (2 * woh + wog);
    let (di, wohi, wogi, hi) = (d as i64, woh as i64, wog as i64, h as i64);
    let c0 = di * (hi * (wohi * wohi + wogi * wogi + wogi * wohi) + wogi * wogi - wogi * wohi);
    Ok(CostBreakdown { c_left, c_right, total: c_left + c_right, c1, c0 })
}

/// The factored closed form `D [N (2Woh + Wog) + H (Woh^2 + Wog^2 + Wog Woh) + Wog^2 - Wog Woh]`.
pub fn miss_closed_form(n: u64, d: u64, woh: u64, wog: u64, h: u64) -> Result<u64> {
    check(n, wog)?;
    let inner = n as i128 * (2 * woh + wog) as i128
        + h as i128 * (woh * woh + wog * wog + wog * woh) as i128
        + (wog * wog) as i128
        - (wog * woh) as i128;
    u64::try_from(d as i128 * inner).map_err(|_| Error::Domain("cost overflows u64".into()))
}

/// Cost of one incremental generation step while history caches are warm.
pub fn cost_cache_hit(n: u64, d: u64, woh: u64, wog: u64, h: u64) -> Result<u64> {
    check(n, wog)?;
    Ok(d * (n - wog) + (h + 1) * d * woh + (h + 2) * d * wog * wog)
}

/// Full causal forward of a standard decoder: `n_layers N^2 D`.
pub fn baseline_cost(n: u64, d: u64, n_layers: u64) -> u64 {
    n_layers * n * n * d
}

/// One cached decoder step with `N` keys: `n_layers N D`.
pub fn baseline_step_cost(n: u64, d: u64, n_layers: u64) -> u64 {
    n_layers * n * d
}

/// Analytic KV-cache footprint of both models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemoryModel {
    pub batch: u64,
    pub seq_len: u64,
    pub d_model: u64,
    pub p_bytes: u64,
    pub n_layers: u64,
    pub h: u64,
    /// `2 B L d P N_layers`
    pub m_transformer: u64,
    /// `2 B L d P N_layers / (H + 2)`: only one layer per block caches
    /// full-length history keys/values.
    pub m_tlinformer: f64,
    pub ratio: f64,
}

pub fn memory_eval(batch: u64, seq_len: u64, d_model: u64, p_bytes: u64, n_layers: u64, h: u64) -> Result<MemoryModel> {
    if batch == 0 || seq_len == 0 || d_model == 0 || p_bytes == 0 || n_layers == 0 {
        return Err(Error::Domain("memory model arguments must be positive".into()));
    }
    let m_transformer = 2 * batch * seq_len * d_model * p_bytes * n_layers;
    let m_tlinformer = m_transformer as f64 / (h + 2) as f64;
    Ok(MemoryModel {
        batch,
        seq_len,
        d_model,
        p_bytes,
        n_layers,
        h,
        m_transformer,
        m_tlinformer,
        ratio: m_tlinformer / m_transformer as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct CostSweepRow {
    #[serde(rename = "N")]
    pub n: u64,
    pub miss_units: u64,
    pub hit_units: u64,
    pub baseline_units: u64,
    pub m_transformer: u64,
    pub m_tlinformer: f64,
    pub ratio: f64,
}

/// Shape parameters of a cost sweep.
#[derive(Debug, Clone, Copy)]
pub struct CostParams {
    pub d: u64,
    pub woh: u64,
    pub wog: u64,
    pub h: u64,
    pub n_blocks: u64,
    pub p_bytes: u64,
}

/// Per-`N` analytic costs for the whole model (all blocks).
pub fn cost_sweep(p: CostParams, ns: impl IntoIterator<Item = u64>) -> Result<Vec<CostSweepRow>> {
    let layers = p.n_blocks * (p.h + 2);
    ns.into_iter()
        .map(|n| {
            let mem = memory_eval(1, n, p.d, p.p_bytes, layers, p.h)?;
            Ok(CostSweepRow {
                n,
                miss_units: p.n_blocks * cost_cache_miss(n, p.d, p.woh, p.wog, p.h)?.total,
                hit_units: p.n_blocks * cost_cache_hit(n, p.d, p.woh, p.wog, p.h)?,
                baseline_units: baseline_cost(n, p.d, layers),
                m_transformer: mem.m_transformer,
                m_tlinformer: mem.m_tlinformer,
                ratio: mem.ratio,
            })
        })
        .collect()
}

pub fn sweep_to_csv(rows: &[CostSweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_sweep_csv(path: &Path, rows: &[CostSweepRow]) -> Result<()> {
    crate::model::checkpoint::write_atomic(path, &sweep_to_csv(rows)?)
}
