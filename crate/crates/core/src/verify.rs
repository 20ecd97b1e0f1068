//! Invariant suites behind `tlinformer verify`, reported as JSON.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cache::{generate, generate_uncached, generate_with_store, max_logit_diff, KVCacheStore, Sampling};
use crate::cost::{cost_cache_hit, cost_cache_miss, memory_eval, miss_closed_form};
use crate::error::Result;
use crate::model::{AnyModel, Architecture, ModelConfig, TLinFormer};
use crate::train::{loss_and_grads, sequence_loss_value};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VerifyOptions {
    /// Corrupt a cached history key so the cache checks must fail.
    pub inject_cache_bug: bool,
}

fn check(name: &str, measured: f64, tolerance: f64, passed: bool, detail: String) -> CheckResult {
    CheckResult { name: name.to_string(), passed, measured, tolerance, detail }
}

/// Small model used by the ledger and cache suites.
pub fn micro_config(depth_h: usize, woh: usize, wog: usize, n_blocks: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 11,
        d_model: 8,
        n_head: 2,
        depth_h,
        n_blocks,
        woh,
        wog,
        ffn_mult: 2,
        max_seq: 1 << 16,
        restore_last_block: true,
        init_std: 0.3,
    }
}

/// Measured and predicted charges of one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct LedgerCase {
    pub n: usize,
    pub woh: usize,
    pub wog: usize,
    pub depth_h: usize,
    pub n_blocks: usize,
    /// `(measured, predicted)` for the prefill, the slide miss and each step.
    pub prefill: (u64, u64),
    pub slide: (u64, u64),
    pub steps: Vec<(u64, u64)>,
}

impl LedgerCase {
    pub fn exact(&self) -> bool {
        self.prefill.0 == self.prefill.1
            && self.slide.0 == self.slide.1
            && self.steps.iter().all(|(a, b)| a == b)
    }
}

/// Prefills `n` tokens, slides once and steps until the window is full,
/// recording the ledger next to the cost model.
pub fn ledger_case(cfg: &ModelConfig, n: usize, seed: u64) -> Result<LedgerCase> {
    let m = TLinFormer::<f64>::new(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let toks: Vec<usize> = (0..n + cfg.wog).map(|_| rng.random_range(0..cfg.vocab_size)).collect();
    let (d, woh, wog, h) = (cfg.d_model as u64, cfg.woh as u64, cfg.wog as u64, cfg.depth_h as u64);
    let nb = cfg.n_blocks as u64;
    let mut s = KVCacheStore::new();
    s.prefill(&m, &toks[..n])?;
    let prefill = (s.events()[0].interaction_units, nb * cost_cache_miss(n as u64, d, woh, wog, h)?.total);
    s.slide(&m, toks[n])?;
    let n2 = (n + cfg.wog) as u64;
    let slide = (s.events().last().expect("miss event").interaction_units, nb * cost_cache_miss(n2, d, woh, wog, h)?.total);
    let mut steps = Vec::new();
    for &t in &toks[n + 1..] {
        s.step(&m, t)?;
        steps.push((s.events().last().expect("hit event").interaction_units, nb * cost_cache_hit(n2, d, woh, wog, h)?));
    }
    Ok(LedgerCase { n, woh: cfg.woh, wog: cfg.wog, depth_h: cfg.depth_h, n_blocks: cfg.n_blocks, prefill, slide, steps })
}

/// Twenty-four `(N, Woh, Wog, H, blocks)` tuples with history at least `Woh`.
pub fn ledger_grid() -> Vec<(usize, ModelConfig)> {
    let mut out = Vec::new();
    for &(woh, wog) in &[(2usize, 2usize), (3, 2), (2, 4), (4, 3)] {
        for &h in &[0usize, 1, 2] {
            for &extra in &[0usize, 5] {
                let n = wog + woh + extra;
                out.push((n, micro_config(h, woh, wog, 1 + (extra % 2))));
            }
        }
    }
    out
}

/// Per-tensor gradient check result.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    /// `(name, ||analytic - numeric|| / max(||analytic||, ||numeric||))`.
    pub per_tensor: Vec<(String, f64)>,
    pub max_rel_err: f64,
}

/// Central finite differences of the summed sequence loss with respect to
/// every parameter element.
pub fn gradient_check(model: &AnyModel<f64>, seq: &[usize], step: f64) -> Result<GradCheck> {
    let (_, analytic) = loss_and_grads(model, seq)?;
    let mut probe = model.clone();
    let ids: Vec<_> = model.params().ids().collect();
    let mut per_tensor = Vec::with_capacity(ids.len());
    for (i, &id) in ids.iter().enumerate() {
        let n = model.params().get(id).len();
        let mut numeric = vec![0.0; n];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.params().get(id).data()[j];
            probe.params_mut().data_mut(id)[j] = orig + step;
            let up = sequence_loss_value(&probe, seq)?;
            probe.params_mut().data_mut(id)[j] = orig - step;
            let down = sequence_loss_value(&probe, seq)?;
            probe.params_mut().data_mut(id)[j] = orig;
            *slot = (up - down) / (2.0 * step);
        }
        per_tensor.push((model.params().name(id).to_string(), rel_err(&analytic[i], &numeric)));
    }
    let max_rel_err = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheck { per_tensor, max_rel_err })
}

/// Norm-relative difference; zero when both vectors vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// TLinFormer and baseline cached bytes after a prefill of `n` tokens.
pub fn measured_memory_ratio(cfg: &ModelConfig, n: usize) -> Result<(u64, u64)> {
    let toks: Vec<usize> = (0..n).map(|i| (i * 7 + 1) % cfg.vocab_size).collect();
    let mut bytes = [0u64; 2];
    for (slot, arch) in [Architecture::Tlinformer, Architecture::Baseline].into_iter().enumerate() {
        let m = AnyModel::<f64>::new(arch, cfg.clone(), 0)?;
        let g = generate(&m, &toks, 1, Sampling::Greedy)?;
        bytes[slot] = g.events[0].bytes_cached;
    }
    Ok((bytes[0], bytes[1]))
}

pub fn run_verify(opts: VerifyOptions) -> VerifyReport {
    let mut checks = Vec::new();
    let mut push = |r: Result<CheckResult>, name: &str| {
        checks.push(r.unwrap_or_else(|e| check(name, f64::NAN, 0.0, false, format!("error: {e}"))));
    };

    push(cost_identity(1000), "cost_identity");
    push(ledger_equality(), "ledger_equality");
    push(cache_equivalence(opts), "cache_equivalence");
    push(baseline_cache_equivalence(), "baseline_cache_equivalence");
    push(gradients(), "gradient_check");
    push(memory_ratio(), "memory_ratio");
    push(memory_eval_tenth(), "memory_eval_h8");

    let passed = checks.iter().all(|c| c.passed);
    VerifyReport { passed, checks }
}

fn cost_identity(samples: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bad = 0;
    for _ in 0..samples {
        let wog = rng.random_range(1..300u64);
        let n = wog + rng.random_range(0..10_000u64);
        let (d, woh, h) = (rng.random_range(1..1024u64), rng.random_range(0..300u64), rng.random_range(0..12u64));
        let c = cost_cache_miss(n, d, woh, wog, h)?;
        let next = cost_cache_miss(n + 1, d, woh, wog, h)?;
        if c.total != miss_closed_form(n, d, woh, wog, h)? || next.total - c.total != d * (2 * woh + wog) {
            bad += 1;
        }
    }
    Ok(check("cost_identity", bad as f64, 0.0, bad == 0, format!("{samples} random tuples, {bad} mismatches")))
}

fn ledger_equality() -> Result<CheckResult> {
    let grid = ledger_grid();
    let mut bad = Vec::new();
    for (i, (n, cfg)) in grid.iter().enumerate() {
        let case = ledger_case(cfg, *n, i as u64)?;
        if !case.exact() {
            bad.push(format!("N={n} Woh={} Wog={} H={}", cfg.woh, cfg.wog, cfg.depth_h));
        }
    }
    Ok(check(
        "ledger_equality",
        bad.len() as f64,
        0.0,
        bad.is_empty(),
        format!("{} configurations; mismatches: {:?}", grid.len(), bad),
    ))
}

fn cache_equivalence(opts: VerifyOptions) -> Result<CheckResult> {
    let cfg = micro_config(1, 3, 4, 2);
    let m = AnyModel::<f64>::new(Architecture::Tlinformer, cfg.clone(), 5)?;
    let prompt: Vec<usize> = (0..10).map(|i| (i * 3 + 1) % cfg.vocab_size).collect();
    let store = if opts.inject_cache_bug { KVCacheStore::with_injected_fault() } else { KVCacheStore::new() };
    let cached = generate_with_store(&m, &prompt, 3 * cfg.wog, Sampling::Greedy, store)?;
    let plain = generate_uncached(&m, &prompt, 3 * cfg.wog, Sampling::Greedy)?;
    let diff = max_logit_diff(&cached, &plain);
    let same = cached.tokens == plain.tokens;
    Ok(check(
        "cache_equivalence",
        diff,
        1e-9,
        same && diff < 1e-9,
        format!("{} greedy tokens, tokens identical: {same}", cached.tokens.len()),
    ))
}

fn baseline_cache_equivalence() -> Result<CheckResult> {
    let cfg = micro_config(1, 3, 4, 1);
    let m = AnyModel::<f64>::new(Architecture::Baseline, cfg, 6)?;
    let prompt = [1, 4, 1, 5, 9, 2];
    let a = generate(&m, &prompt, 8, Sampling::Greedy)?;
    let b = generate_uncached(&m, &prompt, 8, Sampling::Greedy)?;
    let diff = max_logit_diff(&a, &b);
    Ok(check("baseline_cache_equivalence", diff, 1e-9, a.tokens == b.tokens && diff < 1e-9, "8 greedy tokens".into()))
}

fn gradients() -> Result<CheckResult> {
    let mut cfg = micro_config(1, 4, 4, 2);
    cfg.vocab_size = 5;
    let m = AnyModel::<f64>::new(Architecture::Tlinformer, cfg, 7)?;
    let seq = [0, 3, 1, 4, 2, 2, 0, 1, 3];
    let g = gradient_check(&m, &seq, 1e-5)?;
    let worst = g
        .per_tensor
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(n, _)| n.clone())
        .unwrap_or_default();
    Ok(check(
        "gradient_check",
        g.max_rel_err,
        1e-4,
        g.max_rel_err < 1e-4,
        format!("{} tensors; worst {worst}", g.per_tensor.len()),
    ))
}

fn memory_ratio() -> Result<CheckResult> {
    let mut cfg = micro_config(2, 4, 4, 2);
    cfg.d_model = 4;
    let n = 64 * cfg.w_total();
    let (t, b) = measured_memory_ratio(&cfg, n)?;
    let ratio = t as f64 / b as f64;
    let rel = (ratio - 0.25).abs() / 0.25;
    Ok(check("memory_ratio", ratio, 0.15, rel < 0.15, format!("N = {n}, H = 2: {t} / {b} bytes")))
}

fn memory_eval_tenth() -> Result<CheckResult> {
    let m = memory_eval(1, 1000, 432, 2, 8, 8)?;
    Ok(check("memory_eval_h8", m.ratio, 0.0, m.ratio == 0.1, "H = 8".into()))
}
