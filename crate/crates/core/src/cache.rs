//! Dual-mode KV cache and autoregressive generation.
//!
//! A TLinFormer session keeps, per block, the cross-attention keys/values
//! over the full history, those over each context state, and the causal
//! keys/values of the tokens in the current generation window. The history
//! is frozen between slides, so a step only runs the new token's row. When
//! the window is full the next token triggers a slide: the history grows by
//! `Wog` tokens and every cache is rebuilt (a miss).
//!
//! Accounting follows the window-area convention: a miss is charged as if
//! the window were full and a step as if causal attention were recomputed
//! over a full window. The difference from the work actually done is
//! recorded separately as padding on the ledger.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::Eager;
use crate::error::{Error, Result};
use crate::ledger::FlopLedger;
use crate::model::{AnyModel, Baseline, ForwardTrace, TLinFormer};
use crate::tensor::{Element, Tensor};

type Kv<T> = (Arc<Tensor<T>>, Arc<Tensor<T>>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheEventKind {
    Miss,
    Hit,
    Slide,
}

/// One cache transition. `n` is the sequence length the event is costed
/// at: history plus a full generation window for TLinFormer, tokens seen
/// for the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEvent {
    #[serde(rename = "event_kind")]
    pub kind: CacheEventKind,
    #[serde(rename = "N")]
    pub n: usize,
    pub g: usize,
    pub interaction_units: u64,
    pub bytes_cached: u64,
    pub wall_nanos: u64,
}

pub fn events_to_csv(events: &[CacheEvent]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in events {
        w.serialize(e)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheState {
    Empty,
    Warm,
}

/// Exact cached element counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CacheReport {
    pub bytes_cached: u64,
    /// `(name, elements)`, keys and values together.
    pub per_layer: Vec<(String, usize)>,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    /// Generation-layer cross keys/values: index 0 over the history, the
    /// rest over context states.
    cross: Vec<Option<Kv<T>>>,
    gen: Vec<Kv<T>>,
}

/// Cache store of one TLinFormer generation session.
#[derive(Debug, Clone)]
pub struct KVCacheStore<T: Element> {
    blocks: Vec<BlockCache<T>>,
    tokens: Vec<usize>,
    hist_len: usize,
    fill: usize,
    state: CacheState,
    events: Vec<CacheEvent>,
    inject_fault: bool,
}

impl<T: Element> Default for KVCacheStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn kv_elems<T: Element>(kv: &Kv<T>) -> usize {
    kv.0.len() + kv.1.len()
}

impl<T: Element> KVCacheStore<T> {
    pub fn new() -> Self {
        KVCacheStore {
            blocks: Vec::new(),
            tokens: Vec::new(),
            hist_len: 0,
            fill: 0,
            state: CacheState::Empty,
            events: Vec::new(),
            inject_fault: false,
        }
    }

    /// A store that corrupts one cached history key after every rebuild.
    /// Exists to check that the equivalence checks can fail.
    pub fn with_injected_fault() -> Self {
        KVCacheStore { inject_fault: true, ..Self::new() }
    }

    pub fn state(&self) -> CacheState {
        self.state
    }

    pub fn hist_len(&self) -> usize {
        self.hist_len
    }

    pub fn fill(&self) -> usize {
        self.fill
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn events(&self) -> &[CacheEvent] {
        &self.events
    }

    /// Cached history keys/values of block `bi` (layer-0 cross attention).
    pub fn hist_kv(&self, bi: usize) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.blocks.get(bi)?.cross.first()?.as_ref().map(|(k, v)| (k.as_ref(), v.as_ref()))
    }

    pub fn cache_report(&self) -> CacheReport {
        let mut per_layer = Vec::new();
        for (bi, blk) in self.blocks.iter().enumerate() {
            for (l, kv) in blk.cross.iter().enumerate() {
                if let Some(kv) = kv {
                    let name = if l == 0 { format!("blocks.{bi}.hist") } else { format!("blocks.{bi}.ctx.{}", l - 1) };
                    per_layer.push((name, kv_elems(kv)));
                }
            }
            for (l, kv) in blk.gen.iter().enumerate() {
                per_layer.push((format!("blocks.{bi}.gen.{l}"), kv_elems(kv)));
            }
        }
        let elems: usize = per_layer.iter().map(|(_, n)| n).sum();
        CacheReport { bytes_cached: (elems * T::BYTES) as u64, per_layer }
    }

    pub fn bytes_cached(&self) -> u64 {
        self.cache_report().bytes_cached
    }

    fn push_event(&mut self, kind: CacheEventKind, wog: usize, units: u64, wall_nanos: u64) {
        let e = CacheEvent {
            kind,
            n: self.hist_len + wog,
            g: self.fill,
            interaction_units: units,
            bytes_cached: self.bytes_cached(),
            wall_nanos,
        };
        self.events.push(e);
    }

    /// Full forward with history `0..hist_len`; rebuilds every cache.
    fn rebuild(&mut self, model: &TLinFormer<T>, hist_len: usize) -> Result<(Vec<f64>, u64)> {
        let cfg = model.config();
        let mut b = Eager::<T>::new();
        let (logits, trace) = model.forward_window(&mut b, &self.tokens, hist_len)?;
        let mut ledger = b.into_ledger();
        ledger.charge_padding(miss_padding(&trace, cfg.wog, cfg.d_model));
        self.hist_len = hist_len;
        self.fill = trace.gen_len;
        self.blocks = trace
            .blocks
            .into_iter()
            .map(|bt| BlockCache { cross: bt.cross_kv, gen: bt.self_kv })
            .collect();
        if self.inject_fault {
            if let Some(Some((k, _))) = self.blocks.first_mut().map(|b| &mut b.cross[0]) {
                let kt = Arc::make_mut(k);
                kt.data_mut()[0] = kt.data()[0] + T::from_f64_lossy(1e-3);
            }
        }
        self.state = CacheState::Warm;
        Ok((last_row(&logits), ledger.interaction_units()))
    }

    /// Full forward over the prompt; the last `min(Wog, N)` tokens seed the
    /// generation window. Returns logits of the last position.
    pub fn prefill(&mut self, model: &TLinFormer<T>, tokens: &[usize]) -> Result<Vec<f64>> {
        if self.state != CacheState::Empty {
            return Err(Error::CacheState("prefill on a warm store".into()));
        }
        if tokens.is_empty() {
            return Err(Error::Layout("empty prompt".into()));
        }
        let start = Instant::now();
        self.tokens = tokens.to_vec();
        let hist = tokens.len().saturating_sub(model.config().wog);
        let (logits, units) = self.rebuild(model, hist)?;
        self.push_event(CacheEventKind::Miss, model.config().wog, units, nanos(start));
        Ok(logits)
    }

    /// Appends one token to a window that is not yet full, running only the
    /// new row against the frozen history caches.
    pub fn step(&mut self, model: &TLinFormer<T>, token: usize) -> Result<Vec<f64>> {
        let cfg = model.config();
        if self.state != CacheState::Warm {
            return Err(Error::CacheState("step on an empty store".into()));
        }
        if self.fill >= cfg.wog {
            return Err(Error::MustSlide { fill: self.fill });
        }
        let start = Instant::now();
        let mut b = Eager::<T>::new();
        let pos = self.tokens.len();
        let mut x = model.embed(&mut b, &[token], pos)?;
        for (bi, blk) in self.blocks.iter_mut().enumerate() {
            for l in 0..blk.gen.len() {
                let prior = (&blk.gen[l].0, &blk.gen[l].1);
                let cross = blk.cross[l].as_ref().map(|(k, v)| (k, v));
                let (out, k, v) = model.gen_layer(&mut b, bi, l, &x, Some(prior), cross)?;
                blk.gen[l] = (k, v);
                x = out;
            }
        }
        let logits = model.logits(&mut b, &x)?;
        self.tokens.push(token);
        self.fill += 1;
        let mut ledger = b.into_ledger();
        let per_layer = (cfg.wog * cfg.wog - self.fill) * cfg.d_model;
        let gen_layers: usize = self.blocks.iter().map(|blk| blk.gen.len()).sum();
        ledger.charge_padding((per_layer * gen_layers) as u64);
        self.push_event(CacheEventKind::Hit, cfg.wog, ledger.interaction_units(), nanos(start));
        Ok(last_row(&logits))
    }

    /// Extends the history by the full window and reseeds the window with
    /// `token`; every cache is rebuilt.
    pub fn slide(&mut self, model: &TLinFormer<T>, token: usize) -> Result<Vec<f64>> {
        let wog = model.config().wog;
        if self.state != CacheState::Warm || self.fill != wog {
            return Err(Error::CacheState(format!("slide needs a full window (fill {} of {wog})", self.fill)));
        }
        let start = Instant::now();
        self.tokens.push(token);
        let hist = self.hist_len + wog;
        let (logits, units) = self.rebuild(model, hist)?;
        self.push_event(CacheEventKind::Slide, wog, 0, 0);
        self.push_event(CacheEventKind::Miss, wog, units, nanos(start));
        Ok(logits)
    }

    /// Steps, or slides when the window is full.
    pub fn feed(&mut self, model: &TLinFormer<T>, token: usize) -> Result<Vec<f64>> {
        if self.fill >= model.config().wog {
            self.slide(model, token)
        } else {
            self.step(model, token)
        }
    }

    pub fn reset(&mut self) {
        let fault = self.inject_fault;
        *self = Self::new();
        self.inject_fault = fault;
    }
}

/// Charge that brings a rebuild with a partial window of `g` rows up to a
/// full window: missing query rows of every cross attention and the missing
/// area of every causal window.
fn miss_padding<T: Element>(trace: &ForwardTrace<Arc<Tensor<T>>>, wog: usize, d: usize) -> u64 {
    let g = trace.gen_len;
    let mut units = 0;
    for blk in &trace.blocks {
        for (k, _) in blk.cross_kv.iter().flatten() {
            units += (wog - g) * k.rows() * d;
        }
        units += blk.self_kv.len() * (wog * wog - g * g) * d;
    }
    units as u64
}

fn last_row<T: Element>(logits: &Tensor<T>) -> Vec<f64> {
    logits.row(logits.rows() - 1).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
}

fn nanos(start: Instant) -> u64 {
    start.elapsed().as_nanos() as u64
}

/// Append-and-copy cache of the standard decoder: every step concatenates
/// the new key/value row onto copies of the old tensors.
#[derive(Debug, Clone)]
pub struct BaselineCache<T: Element> {
    kv: Vec<Kv<T>>,
    tokens: Vec<usize>,
    events: Vec<CacheEvent>,
}

impl<T: Element> Default for BaselineCache<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> BaselineCache<T> {
    pub fn new() -> Self {
        BaselineCache { kv: Vec::new(), tokens: Vec::new(), events: Vec::new() }
    }

    pub fn events(&self) -> &[CacheEvent] {
        &self.events
    }

    pub fn cache_report(&self) -> CacheReport {
        let per_layer: Vec<_> = self.kv.iter().enumerate().map(|(i, kv)| (format!("layers.{i}"), kv_elems(kv))).collect();
        let elems: usize = per_layer.iter().map(|(_, n)| n).sum();
        CacheReport { bytes_cached: (elems * T::BYTES) as u64, per_layer }
    }

    fn record(&mut self, kind: CacheEventKind, ledger: FlopLedger, start: Instant) {
        let e = CacheEvent {
            kind,
            n: self.tokens.len(),
            g: self.tokens.len(),
            interaction_units: ledger.interaction_units(),
            bytes_cached: self.cache_report().bytes_cached,
            wall_nanos: nanos(start),
        };
        self.events.push(e);
    }

    pub fn prefill(&mut self, model: &Baseline<T>, tokens: &[usize]) -> Result<Vec<f64>> {
        if !self.tokens.is_empty() {
            return Err(Error::CacheState("prefill on a warm store".into()));
        }
        let start = Instant::now();
        let mut b = Eager::<T>::new();
        let (logits, kv) = model.forward_rows(&mut b, tokens, 0, None)?;
        self.kv = kv;
        self.tokens = tokens.to_vec();
        self.record(CacheEventKind::Miss, b.into_ledger(), start);
        Ok(last_row(&logits))
    }

    pub fn step(&mut self, model: &Baseline<T>, token: usize) -> Result<Vec<f64>> {
        if self.tokens.is_empty() {
            return Err(Error::CacheState("step on an empty store".into()));
        }
        let start = Instant::now();
        let mut b = Eager::<T>::new();
        let (logits, kv) = model.forward_rows(&mut b, &[token], self.tokens.len(), Some(&self.kv))?;
        self.kv = kv;
        self.tokens.push(token);
        self.record(CacheEventKind::Hit, b.into_ledger(), start);
        Ok(last_row(&logits))
    }
}

/// A cached generation session over either architecture.
#[derive(Debug)]
pub struct Session<'m, T: Element> {
    model: &'m AnyModel<T>,
    cache: SessionCache<T>,
}

#[derive(Debug)]
enum SessionCache<T: Element> {
    Tlin(KVCacheStore<T>),
    Base(BaselineCache<T>),
}

impl<'m, T: Element> Session<'m, T> {
    pub fn new(model: &'m AnyModel<T>) -> Self {
        Self::with_store(model, KVCacheStore::new())
    }

    /// A session whose TLinFormer store is `store` (ignored for the
    /// baseline).
    pub fn with_store(model: &'m AnyModel<T>, store: KVCacheStore<T>) -> Self {
        let cache = match model {
            AnyModel::Tlinformer(_) => SessionCache::Tlin(store),
            AnyModel::Baseline(_) => SessionCache::Base(BaselineCache::new()),
        };
        Session { model, cache }
    }

    pub fn prefill(&mut self, prompt: &[usize]) -> Result<Vec<f64>> {
        match (&mut self.cache, self.model) {
            (SessionCache::Tlin(s), AnyModel::Tlinformer(m)) => s.prefill(m, prompt),
            (SessionCache::Base(s), AnyModel::Baseline(m)) => s.prefill(m, prompt),
            _ => unreachable!("cache kind follows the model"),
        }
    }

    pub fn feed(&mut self, token: usize) -> Result<Vec<f64>> {
        match (&mut self.cache, self.model) {
            (SessionCache::Tlin(s), AnyModel::Tlinformer(m)) => s.feed(m, token),
            (SessionCache::Base(s), AnyModel::Baseline(m)) => s.step(m, token),
            _ => unreachable!("cache kind follows the model"),
        }
    }

    pub fn events(&self) -> &[CacheEvent] {
        match &self.cache {
            SessionCache::Tlin(s) => s.events(),
            SessionCache::Base(s) => s.events(),
        }
    }

    pub fn cache_report(&self) -> CacheReport {
        match &self.cache {
            SessionCache::Tlin(s) => s.cache_report(),
            SessionCache::Base(s) => s.cache_report(),
        }
    }

    pub fn tlinformer_store(&self) -> Option<&KVCacheStore<T>> {
        match &self.cache {
            SessionCache::Tlin(s) => Some(s),
            SessionCache::Base(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    Greedy,
    Temperature { temperature: f64, seed: u64 },
}

/// Token picker shared by the cached and uncached generators.
#[derive(Debug)]
pub struct Sampler {
    mode: Sampling,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(mode: Sampling) -> Result<Self> {
        let seed = match mode {
            Sampling::Greedy => 0,
            Sampling::Temperature { temperature, seed } => {
                if !(temperature > 0.0 && temperature.is_finite()) {
                    return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
                }
                seed
            }
        };
        Ok(Sampler { mode, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn pick(&mut self, logits: &[f64]) -> usize {
        match self.mode {
            Sampling::Greedy => argmax(logits),
            Sampling::Temperature { temperature, .. } => {
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = logits.iter().map(|&l| ((l - m) / temperature).exp()).collect();
                let total: f64 = w.iter().sum();
                let mut u = self.rng.random::<f64>() * total;
                for (i, wi) in w.iter().enumerate() {
                    if u < *wi {
                        return i;
                    }
                    u -= wi;
                }
                w.len() - 1
            }
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub tokens: Vec<usize>,
    /// Logits that produced each generated token.
    pub logits: Vec<Vec<f64>>,
    pub events: Vec<CacheEvent>,
    /// Wall time of each generated token in nanoseconds.
    pub token_nanos: Vec<u64>,
}

/// Cached generation of `n_tokens` after `prompt`.
pub fn generate<T: Element>(
    model: &AnyModel<T>,
    prompt: &[usize],
    n_tokens: usize,
    sampling: Sampling,
) -> Result<Generation> {
    generate_with_store(model, prompt, n_tokens, sampling, KVCacheStore::new())
}

pub fn generate_with_store<T: Element>(
    model: &AnyModel<T>,
    prompt: &[usize],
    n_tokens: usize,
    sampling: Sampling,
    store: KVCacheStore<T>,
) -> Result<Generation> {
    let mut sampler = Sampler::new(sampling)?;
    let mut session = Session::with_store(model, store);
    let mut out = Generation { tokens: Vec::new(), logits: Vec::new(), events: Vec::new(), token_nanos: Vec::new() };
    for i in 0..n_tokens {
        let start = Instant::now();
        let logits = if i == 0 { session.prefill(prompt)? } else { session.feed(out.tokens[i - 1])? };
        out.token_nanos.push(nanos(start));
        out.tokens.push(sampler.pick(&logits));
        out.logits.push(logits);
    }
    out.events = session.events().to_vec();
    Ok(out)
}

/// History length the cached TLinFormer uses when predicting from position
/// `t` after a prompt of `prompt_len` tokens.
pub fn window_anchor(prompt_len: usize, wog: usize, t: usize) -> usize {
    let a0 = prompt_len.saturating_sub(wog);
    a0 + wog * ((t - a0) / wog)
}

/// Generation without any cache: every token runs a fresh forward over the
/// whole sequence so far, split where the cached session would split it.
pub fn generate_uncached<T: Element>(
    model: &AnyModel<T>,
    prompt: &[usize],
    n_tokens: usize,
    sampling: Sampling,
) -> Result<Generation> {
    if prompt.is_empty() {
        return Err(Error::Layout("empty prompt".into()));
    }
    let mut sampler = Sampler::new(sampling)?;
    let mut seq = prompt.to_vec();
    let mut out = Generation { tokens: Vec::new(), logits: Vec::new(), events: Vec::new(), token_nanos: Vec::new() };
    for _ in 0..n_tokens {
        let start = Instant::now();
        let mut b = Eager::<T>::new();
        let logits = match model {
            AnyModel::Tlinformer(m) => {
                let t = seq.len() - 1;
                let hist = window_anchor(prompt.len(), m.config().wog, t);
                m.forward_window(&mut b, &seq, hist)?.0
            }
            AnyModel::Baseline(m) => m.forward(&mut b, &seq)?,
        };
        let row = last_row(&logits);
        out.token_nanos.push(nanos(start));
        let tok = sampler.pick(&row);
        out.tokens.push(tok);
        out.logits.push(row);
        seq.push(tok);
    }
    Ok(out)
}

/// Largest absolute logit difference between two generations.
pub fn max_logit_diff(a: &Generation, b: &Generation) -> f64 {
    a.logits
        .iter()
        .zip(&b.logits)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}
