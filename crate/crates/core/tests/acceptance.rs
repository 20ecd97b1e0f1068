//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. `ACCEPTANCE_ONLY=3,5` runs a subset.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tlinformer::backend::Eager;
use tlinformer::bench::{power_law_exponent, run_sweep, SweepConfig};
use tlinformer::cache::{generate, generate_uncached, max_logit_diff, CacheEventKind, Sampling};
use tlinformer::cost::{cost_cache_miss, memory_eval};
use tlinformer::train::{
    chunk_sequence, evaluate_ppl, train, Corpus, ModelSpec, TrainConfig, BUNDLED_CORPUS,
};
use tlinformer::verify::{gradient_check, ledger_case, ledger_grid, measured_memory_ratio, micro_config};
use tlinformer::{AnyModel, Architecture};

type Outcome = Result<String, String>;
type Criterion = (usize, &'static str, fn() -> Outcome);

// Independent oracles, in 128-bit integers.

fn oracle_miss(n: u64, d: u64, woh: u64, wog: u64, h: u64) -> i128 {
    let (n, d, woh, wog, h) = (n as i128, d as i128, woh as i128, wog as i128, h as i128);
    d * (2 * woh + wog) * n + d * (h * woh * woh + (h + 1) * wog * woh + (h + 1) * wog * wog - 2 * wog * woh)
}

fn oracle_hit(n: u64, d: u64, woh: u64, wog: u64, h: u64) -> i128 {
    let (n, d, woh, wog, h) = (n as i128, d as i128, woh as i128, wog as i128, h as i128);
    d * (n - wog) + (h + 1) * d * woh + (h + 2) * d * wog * wog
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let wog = rng.random_range(1..2048u64);
        let n = wog + rng.random_range(0..1_000_000u64);
        let d = rng.random_range(1..4096u64);
        let woh = rng.random_range(0..2048u64);
        let h = rng.random_range(0..32u64);
        let c = cost_cache_miss(n, d, woh, wog, h).map_err(|e| e.to_string())?;
        if (c.c_left + c.c_right) as i128 != oracle_miss(n, d, woh, wog, h) {
            return Err(format!("left + right != closed form at N={n} D={d} Woh={woh} Wog={wog} H={h}"));
        }
        let next = cost_cache_miss(n + 1, d, woh, wog, h).map_err(|e| e.to_string())?;
        if next.total - c.total != d * (2 * woh + wog) {
            return Err(format!("slope != D(2Woh+Wog) at N={n}"));
        }
    }
    let t = start.elapsed();
    if t > Duration::from_secs(1) {
        return Err(format!("took {t:?}"));
    }
    Ok(format!("1000 tuples exact, {t:?}"))
}

fn criterion_2() -> Outcome {
    let grid = ledger_grid();
    let mut checked = 0;
    for (i, (n, cfg)) in grid.iter().enumerate() {
        if n - cfg.wog < cfg.woh {
            return Err(format!("grid point N={n} has history below Woh"));
        }
        let case = ledger_case(cfg, *n, i as u64).map_err(|e| e.to_string())?;
        let (d, woh, wog, h) = (cfg.d_model as u64, cfg.woh as u64, cfg.wog as u64, cfg.depth_h as u64);
        let nb = cfg.n_blocks as i128;
        let n2 = (*n + cfg.wog) as u64;
        let want_prefill = nb * oracle_miss(*n as u64, d, woh, wog, h);
        let want_slide = nb * oracle_miss(n2, d, woh, wog, h);
        let want_hit = nb * oracle_hit(n2, d, woh, wog, h);
        if case.prefill.0 as i128 != want_prefill || case.slide.0 as i128 != want_slide {
            return Err(format!("miss mismatch at N={n} Woh={woh} Wog={wog} H={h}: {case:?}"));
        }
        if case.steps.is_empty() && cfg.wog > 1 {
            return Err(format!("no hit steps recorded at N={n}"));
        }
        for (got, _) in &case.steps {
            if *got as i128 != want_hit {
                return Err(format!("hit mismatch at N={n}: {got} vs {want_hit}"));
            }
            checked += 1;
        }
    }
    Ok(format!("{} configurations, {checked} hit steps, zero residual", grid.len()))
}

fn criterion_3() -> Outcome {
    let cfg = micro_config(2, 4, 5, 2);
    let m = AnyModel::<f64>::new(Architecture::Tlinformer, cfg.clone(), 11).map_err(|e| e.to_string())?;
    let prompt: Vec<usize> = (0..13).map(|i| (i * 4 + 3) % cfg.vocab_size).collect();
    let n = 3 * cfg.wog;
    let cached = generate(&m, &prompt, n, Sampling::Greedy).map_err(|e| e.to_string())?;
    let plain = generate_uncached(&m, &prompt, n, Sampling::Greedy).map_err(|e| e.to_string())?;
    let slides = cached.events.iter().filter(|e| e.kind == CacheEventKind::Slide).count();
    if slides < 2 {
        return Err(format!("only {slides} slides"));
    }
    if cached.tokens != plain.tokens {
        return Err("token streams differ".into());
    }
    let diff = max_logit_diff(&cached, &plain);
    if diff >= 1e-9 {
        return Err(format!("max logit diff {diff:e}"));
    }
    Ok(format!("{n} tokens, {slides} slides, max logit diff {diff:.1e}"))
}

fn criterion_4() -> Outcome {
    let mut cfg = micro_config(1, 4, 4, 2);
    cfg.vocab_size = 7;
    let m = AnyModel::<f64>::new(Architecture::Tlinformer, cfg, 4).map_err(|e| e.to_string())?;
    // two chunks, so the second sees a full Woh of history
    let seq = [1, 5, 0, 6, 2, 2, 4, 3, 1];
    let g = gradient_check(&m, &seq, 1e-5).map_err(|e| e.to_string())?;
    if g.per_tensor.len() != m.params().ids().count() {
        return Err("not every tensor checked".into());
    }
    if let Some((name, e)) = g.per_tensor.iter().find(|(_, e)| *e >= 1e-4) {
        return Err(format!("{name}: relative error {e:e}"));
    }
    Ok(format!("{} tensors, max relative error {:.1e}", g.per_tensor.len(), g.max_rel_err))
}

fn criterion_5() -> Outcome {
    let h = 2;
    let mut cfg = micro_config(h, 8, 8, 2);
    cfg.d_model = 4;
    let n = 64 * cfg.w_total();
    let (t, b) = measured_memory_ratio(&cfg, n).map_err(|e| e.to_string())?;
    let ratio = t as f64 / b as f64;
    let want = 1.0 / (h as f64 + 2.0);
    if (ratio - want).abs() / want >= 0.15 {
        return Err(format!("ratio {ratio:.4} vs {want}"));
    }
    let m8 = memory_eval(1, 4096, 432, 2, 8, 8).map_err(|e| e.to_string())?;
    if m8.ratio != 0.1 {
        return Err(format!("analytic H=8 ratio {}", m8.ratio));
    }
    Ok(format!("N={n}: measured {ratio:.4} vs {want}; analytic H=8 ratio {}", m8.ratio))
}

fn miss_units(m: &AnyModel<f64>, n: usize) -> Result<u64, String> {
    let prompt: Vec<usize> = (0..n).map(|i| i % m.config().vocab_size).collect();
    let g = generate(m, &prompt, 1, Sampling::Greedy).map_err(|e| e.to_string())?;
    Ok(g.events[0].interaction_units)
}

fn criterion_6() -> Outcome {
    let cfg = micro_config(2, 4, 4, 2);
    let tl = AnyModel::<f64>::new(Architecture::Tlinformer, cfg.clone(), 1).map_err(|e| e.to_string())?;
    let bl = AnyModel::<f64>::new(Architecture::Baseline, cfg, 1).map_err(|e| e.to_string())?;
    let ns: Vec<usize> = (1..=8).map(|k| 32 * k).collect();
    let mut t = Vec::new();
    let mut b = Vec::new();
    for &n in &ns {
        t.push(miss_units(&tl, n)? as i128);
        b.push(miss_units(&bl, n)? as i128);
    }
    // equally spaced N: a line has zero second differences
    if t.windows(3).any(|w| w[0] - 2 * w[1] + w[2] != 0) {
        return Err(format!("miss units not linear: {t:?}"));
    }
    let (n0, b0) = (ns[0] as i128, b[0]);
    if ns.iter().zip(&b).any(|(&n, &u)| u * n0 * n0 != b0 * (n as i128) * (n as i128)) {
        return Err(format!("baseline units not proportional to N^2: {b:?}"));
    }
    // b[i+1]/t[i+1] > b[i]/t[i]
    if (0..ns.len() - 1).any(|i| b[i + 1] * t[i] <= b[i] * t[i + 1]) {
        return Err("unit speedup not strictly increasing".into());
    }
    let last = ns.len() - 1;
    Ok(format!(
        "linear and quadratic fits exact over N={}..{}; unit speedup {:.2} -> {:.2}",
        ns[0],
        ns[last],
        b[0] as f64 / t[0] as f64,
        b[last] as f64 / t[last] as f64
    ))
}

fn criterion_7() -> Outcome {
    let grid = vec![128, 512, 1024, 2048, 4096, 8192];
    let cfg = SweepConfig::desk(grid, vec![Architecture::Tlinformer, Architecture::Baseline]);
    let out = run_sweep(&cfg, |_| {}).map_err(|e| e.to_string())?;
    if !out.stops.is_empty() {
        return Err(format!("sweep stopped early: {:?}", out.stops));
    }
    let rows = |a: Architecture| out.rows.iter().filter(move |r| r.model == a);
    if let Some(r) = rows(Architecture::Tlinformer).find(|r| r.t_third_nanos >= r.t_first_nanos) {
        return Err(format!("hit not faster than miss at N={}", r.n));
    }
    let fit = |a: Architecture| {
        let pts: Vec<(f64, f64)> =
            rows(a).filter(|r| r.n >= 1024).map(|r| (r.n as f64, r.t_first_nanos as f64)).collect();
        power_law_exponent(&pts).map_err(|e| e.to_string())
    };
    let (et, eb) = (fit(Architecture::Tlinformer)?, fit(Architecture::Baseline)?);
    if et >= 1.5 || eb <= 1.5 {
        return Err(format!("miss-latency exponents: TLinFormer {et:.2}, baseline {eb:.2}"));
    }
    Ok(format!("hit < miss at all N; miss-latency exponents TLinFormer {et:.2}, baseline {eb:.2}"))
}

fn criterion_8() -> Outcome {
    let corpus = Corpus::from_text(BUNDLED_CORPUS, 0.1).map_err(|e| e.to_string())?;
    let v = corpus.vocab.len();

    // Loss after 200 steps
    let cfg = TrainConfig { steps: Some(200), lr: 3e-3, seq_len: 32, batch_size: 4, ..sanity_config() };
    let out = train(&cfg, &corpus, |_| {}).map_err(|e| e.to_string())?;
    let tail: Vec<f64> = out.log.iter().rev().take(10).map(|r| r.loss).collect();
    let late = tail.iter().sum::<f64>() / tail.len() as f64;
    let uniform = (v as f64).ln();
    if late >= uniform {
        return Err(format!("loss {late:.3} not below ln({v}) = {uniform:.3}"));
    }

    // Chunked windows equal monolithic prefix forwards
    let AnyModel::Tlinformer(m) = &out.model else { return Err("expected a TLinFormer".into()) };
    let seq = &corpus.train[..cfg.seq_len];
    let mut worst = 0.0f64;
    for c in chunk_sequence(seq.len(), m.config().wog).map_err(|e| e.to_string())? {
        let prefix = &seq[..c.gen_span.end];
        let (chunked, _) = m.forward_window(&mut Eager::new(), prefix, c.hist_span.end).map_err(|e| e.to_string())?;
        let (mono, _) = m.forward_eager(prefix).map_err(|e| e.to_string())?;
        worst = worst.max(chunked.max_abs_diff(&mono));
    }
    if worst >= 1e-9 {
        return Err(format!("chunked vs monolithic diff {worst:e}"));
    }

    // Parity at W_total = N, equal steps
    let parity = TrainConfig { steps: Some(300), lr: 3e-3, seq_len: 32, batch_size: 4, ..sanity_config() };
    let mut ppl = Vec::new();
    for arch in [Architecture::Tlinformer, Architecture::Baseline] {
        let c = TrainConfig { arch, ..parity.clone() };
        let o = train(&c, &corpus, |_| {}).map_err(|e| e.to_string())?;
        ppl.push(evaluate_ppl(&o.model, &corpus.eval, c.seq_len).map_err(|e| e.to_string())?);
    }
    let gap = (ppl[0] - ppl[1]).abs() / ppl[1];
    if gap >= 0.10 {
        return Err(format!("PPL TLinFormer {:.3} vs baseline {:.3} ({:.1}% apart)", ppl[0], ppl[1], 100.0 * gap));
    }
    Ok(format!(
        "loss {late:.3} < {uniform:.3}; chunk diff {worst:.1e}; PPL {:.3} vs {:.3} ({:.1}% apart)",
        ppl[0],
        ppl[1],
        100.0 * gap
    ))
}

/// `Woh + Wog` equals the sequence length, so the last chunk sees the whole
/// prefix as history at full width.
fn sanity_config() -> TrainConfig {
    TrainConfig {
        model: ModelSpec { d_model: 32, n_head: 4, depth_h: 1, n_blocks: 1, woh: 16, wog: 16, ffn_mult: 4, init_std: 0.02 },
        seed: 3,
        ..TrainConfig::default()
    }
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [Criterion; 8] = [
        (1, "cost-formula identity", criterion_1),
        (2, "ledger equals formula", criterion_2),
        (3, "cache equivalence", criterion_3),
        (4, "gradient correctness", criterion_4),
        (5, "memory ratio", criterion_5),
        (6, "complexity trend", criterion_6),
        (7, "wall-clock trend", criterion_7),
        (8, "training sanity", criterion_8),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let r = f();
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(msg) => println!("PASS {id} {name}: {msg} [{secs:.1}s]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {id} {name}: {msg} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
