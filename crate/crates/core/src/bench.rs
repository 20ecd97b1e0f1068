//! Inference benchmark: sequence-length sweeps with per-token timing.
//!
//! At every length `N` the caches are reset, a uniformly random prompt of
//! `N` tokens is generated and six tokens are decoded. The first token is a
//! cache miss and the third a cache hit; their wall times (median over
//! repeats after warmup) and ledger charges are recorded. Ledger charges
//! must equal the cost model exactly or the sweep fails.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::{generate, CacheEventKind, Generation, Sampling};
use crate::cost::{baseline_cost, baseline_step_cost, cost_cache_hit, cost_cache_miss};
use crate::error::{Error, Result};
use crate::model::checkpoint::write_atomic;
use crate::model::{AnyModel, Architecture, ModelConfig};

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub n_values: Vec<usize>,
    /// At least 3: the first and third tokens are measured.
    pub tokens_per_point: usize,
    pub repeats: usize,
    pub warmup_runs: usize,
    pub models: Vec<Architecture>,
    /// Shared shape; `max_seq` is raised to cover the largest point.
    pub model: ModelConfig,
    pub seed: u64,
    /// Per-point estimate of activation and cache memory above which a
    /// model's sweep stops.
    pub memory_budget_bytes: u64,
}

impl SweepConfig {
    /// `n_start, n_start + n_step, ...` up to `n_max` inclusive.
    pub fn grid(n_start: usize, n_step: usize, n_max: usize) -> Result<Vec<usize>> {
        if n_start == 0 || n_step == 0 || n_max < n_start {
            return Err(Error::Config(format!("bad sweep grid start={n_start} step={n_step} max={n_max}")));
        }
        Ok((n_start..=n_max).step_by(n_step).collect())
    }

    pub fn desk(n_values: Vec<usize>, models: Vec<Architecture>) -> Self {
        SweepConfig {
            n_values,
            tokens_per_point: 6,
            repeats: 5,
            warmup_runs: 2,
            models,
            model: ModelConfig::desk(256),
            seed: 0,
            memory_budget_bytes: 4 << 30,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("no models to benchmark".into()));
        }
        if self.tokens_per_point < 3 {
            return Err(Error::Config("tokens_per_point must be at least 3".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be positive".into()));
        }
        if self.n_values.is_empty() {
            return Err(Error::Config("empty sweep grid".into()));
        }
        if let Some(&n) = self.n_values.iter().find(|&&n| n < self.model.wog) {
            return Err(Error::Config(format!("N = {n} is shorter than Wog = {}", self.model.wog)));
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub t_first_nanos: u64,
    pub t_third_nanos: u64,
    pub interaction_units_miss: u64,
    pub interaction_units_hit: u64,
    pub bytes_cached: u64,
    pub model: Architecture,
}

/// Why a model's sweep ended early.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepStop {
    pub model: Architecture,
    pub last_ok_n: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub stops: Vec<SweepStop>,
}

/// Ledger charges the cost model predicts for the first (miss) and third
/// (hit) generated token after an `N`-token prompt.
pub fn expected_units(arch: Architecture, cfg: &ModelConfig, n: usize) -> Result<(u64, u64)> {
    let (d, woh, wog, h) = (cfg.d_model as u64, cfg.woh as u64, cfg.wog as u64, cfg.depth_h as u64);
    let nb = cfg.n_blocks as u64;
    let n = n as u64;
    Ok(match arch {
        // token 2 slides the window, so token 3 steps against history N
        // the focused width shrinks to the history when it is shorter than Woh
        Architecture::Tlinformer => (
            nb * cost_cache_miss(n, d, woh.min(n.saturating_sub(wog)), wog, h)?.total,
            nb * cost_cache_hit(n + wog, d, woh.min(n), wog, h)?,
        ),
        Architecture::Baseline => {
            let layers = cfg.equivalent_depth() as u64;
            (baseline_cost(n, d, layers), baseline_step_cost(n + 2, d, layers))
        }
    })
}

/// Rough peak bytes of one point: cached keys/values plus one row block of
/// attention scores per head.
fn point_memory(arch: Architecture, cfg: &ModelConfig, n: usize, elem: usize) -> u64 {
    let d = cfg.d_model;
    let cache = match arch {
        Architecture::Baseline => 2 * n * d * cfg.equivalent_depth(),
        Architecture::Tlinformer => {
            cfg.n_blocks * (2 * n * d + 2 * (cfg.depth_h + 1) * cfg.woh * d + 2 * (cfg.depth_h + 2) * cfg.wog * d)
        }
    };
    let activations = 16 * n * d * cfg.ffn_mult + 128 * n * cfg.n_head;
    ((cache + activations) * elem) as u64
}

fn median(v: &mut [u64]) -> u64 {
    v.sort_unstable();
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2
    }
}

/// Ledger charge of generated token `i` (0-based). A slide emits a
/// zero-charge Slide event before its Miss; both belong to one token.
fn token_units(g: &Generation, i: usize) -> u64 {
    let mut token = 0usize;
    let mut units = 0u64;
    for e in &g.events {
        if token == i {
            units += e.interaction_units;
        }
        if e.kind != CacheEventKind::Slide {
            token += 1;
        }
        if token > i {
            break;
        }
    }
    units
}

fn run_point(model: &AnyModel<f32>, cfg: &SweepConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<SweepRow> {
    let vocab = model.config().vocab_size;
    let mut firsts = Vec::with_capacity(cfg.repeats);
    let mut thirds = Vec::with_capacity(cfg.repeats);
    let mut units: Option<(u64, u64, u64)> = None;
    for run in 0..cfg.warmup_runs + cfg.repeats {
        let prompt: Vec<usize> = (0..n).map(|_| rng.random_range(0..vocab)).collect();
        let g = generate(model, &prompt, cfg.tokens_per_point, Sampling::Greedy)?;
        let measured = (token_units(&g, 0), token_units(&g, 2), g.events[0].bytes_cached);
        if let Some(prev) = units {
            if prev != measured {
                return Err(Error::LedgerMismatch(format!("charges changed between runs at N = {n}")));
            }
        }
        units = Some(measured);
        if run >= cfg.warmup_runs {
            firsts.push(g.token_nanos[0]);
            thirds.push(g.token_nanos[2]);
        }
    }
    let (miss, hit, bytes) = units.expect("at least one run");
    Ok(SweepRow {
        n,
        t_first_nanos: median(&mut firsts),
        t_third_nanos: median(&mut thirds),
        interaction_units_miss: miss,
        interaction_units_hit: hit,
        bytes_cached: bytes,
        model: model.arch(),
    })
}

/// Runs every model over the grid in 32-bit precision, one model at a time.
pub fn run_sweep(cfg: &SweepConfig, mut progress: impl FnMut(&SweepRow)) -> Result<SweepOutcome> {
    cfg.validate()?;
    let mut mcfg = cfg.model.clone();
    let n_max = *cfg.n_values.iter().max().expect("non-empty grid");
    mcfg.max_seq = mcfg.max_seq.max(n_max + cfg.tokens_per_point);
    let mut out = SweepOutcome::default();
    for &arch in &cfg.models {
        let model = AnyModel::<f64>::new(arch, mcfg.clone(), cfg.seed)?.cast::<f32>();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xbe_7c4);
        let mut last_ok = None;
        for &n in &cfg.n_values {
            let need = point_memory(arch, &mcfg, n + cfg.tokens_per_point, 4);
            if need > cfg.memory_budget_bytes {
                out.stops.push(SweepStop {
                    model: arch,
                    last_ok_n: last_ok,
                    reason: Error::MemoryBudget(format!(
                        "N = {n} needs about {need} bytes, budget {}",
                        cfg.memory_budget_bytes
                    ))
                    .to_string(),
                });
                break;
            }
            let row = run_point(&model, cfg, n, &mut rng)?;
            let expect = expected_units(arch, &mcfg, n)?;
            if (row.interaction_units_miss, row.interaction_units_hit) != expect {
                return Err(Error::LedgerMismatch(format!(
                    "{arch} at N = {n}: measured (miss {}, hit {}), predicted (miss {}, hit {})",
                    row.interaction_units_miss, row.interaction_units_hit, expect.0, expect.1
                )));
            }
            progress(&row);
            last_ok = Some(n);
            out.rows.push(row);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupRow {
    #[serde(rename = "N")]
    pub n: usize,
    /// Reference time over candidate time for the first token.
    pub miss_ratio: f64,
    pub hit_ratio: f64,
    pub unit_miss_ratio: f64,
    pub unit_hit_ratio: f64,
}

/// Per-`N` speedup of `candidate` over `reference` (ratios above 1 mean the
/// candidate is faster).
pub fn speedup_table(candidate: &[SweepRow], reference: &[SweepRow]) -> Result<Vec<SpeedupRow>> {
    if candidate.len() != reference.len() || candidate.iter().zip(reference).any(|(a, b)| a.n != b.n) {
        return Err(Error::Usage("speedup needs rows on the same N grid".into()));
    }
    let ratio = |r: u64, c: u64| r as f64 / c.max(1) as f64;
    Ok(candidate
        .iter()
        .zip(reference)
        .map(|(c, r)| SpeedupRow {
            n: c.n,
            miss_ratio: ratio(r.t_first_nanos, c.t_first_nanos),
            hit_ratio: ratio(r.t_third_nanos, c.t_third_nanos),
            unit_miss_ratio: ratio(r.interaction_units_miss, c.interaction_units_miss),
            unit_hit_ratio: ratio(r.interaction_units_hit, c.interaction_units_hit),
        })
        .collect())
}

/// Exponent `b` of the least-squares fit `y = a x^b` in log-log space.
pub fn power_law_exponent(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 || points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return Err(Error::Domain("power-law fit needs two or more positive points".into()));
    }
    let k = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("power-law fit needs distinct x values".into()));
    }
    Ok(sxy / sxx)
}

pub fn rows_to_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn rows_from_csv(bytes: &[u8]) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Minimal line chart with linear axes.
fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, ml, mr, mt, mb) = (720.0, 440.0, 80.0, 170.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= 0.0 {
        y1 = 1.0;
    }
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + ph - y / y1 * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r##"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">
<rect width="{w}" height="{h}" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"##,
        ml + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{}" stroke="black"/>"##,
        mt + ph,
        ml + pw,
        mt + ph,
        mt + ph
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = f * y1;
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>
<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>
<line x1="{ml}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            sx(xv),
            mt + ph + 16.0,
            fmt_num(xv),
            ml - 6.0,
            sy(yv) + 4.0,
            fmt_num(yv),
            sy(yv),
            ml + pw,
            sy(yv)
        );
    }
    let _ = writeln!(
        s,
        r##"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>
<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"##,
        ml + pw / 2.0,
        h - 10.0,
        escape(x_label),
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r##"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"##, path.join(" "));
        let ly = mt + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>
<text x="{:.1}" y="{:.1}">{}</text>"##,
            ml + pw + 10.0,
            ml + pw + 30.0,
            ml + pw + 36.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_num(v: f64) -> String {
    if v.abs() >= 1e6 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn by_model(rows: &[SweepRow]) -> Vec<(Architecture, Vec<&SweepRow>)> {
    let mut out: Vec<(Architecture, Vec<&SweepRow>)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(a, _)| *a == r.model) {
            Some((_, v)) => v.push(r),
            None => out.push((r.model, vec![r])),
        }
    }
    out
}

/// Writes `bench.csv`, `latency.svg`, `speedup.svg` and `memory.svg`.
pub fn emit_outputs(rows: &[SweepRow], out_dir: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Usage("no sweep rows to write".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let groups = by_model(rows);
    let ms = |t: u64| t as f64 / 1e6;

    let mut latency = Vec::new();
    let mut memory = Vec::new();
    for (arch, rs) in &groups {
        latency.push(Series {
            label: format!("{arch} first (miss)"),
            points: rs.iter().map(|r| (r.n as f64, ms(r.t_first_nanos))).collect(),
        });
        latency.push(Series {
            label: format!("{arch} third (hit)"),
            points: rs.iter().map(|r| (r.n as f64, ms(r.t_third_nanos))).collect(),
        });
        memory.push(Series {
            label: arch.to_string(),
            points: rs.iter().map(|r| (r.n as f64, r.bytes_cached as f64 / 1024.0)).collect(),
        });
    }

    let mut speedup = Vec::new();
    let tl = groups.iter().find(|(a, _)| *a == Architecture::Tlinformer);
    let bl = groups.iter().find(|(a, _)| *a == Architecture::Baseline);
    if let (Some((_, t)), Some((_, b))) = (tl, bl) {
        let common: Vec<usize> = t.iter().map(|r| r.n).filter(|n| b.iter().any(|r| r.n == *n)).collect();
        let pick = |v: &[&SweepRow]| -> Vec<SweepRow> {
            common.iter().map(|n| (*v.iter().find(|r| r.n == *n).expect("common N")).clone()).collect()
        };
        let table = speedup_table(&pick(t), &pick(b))?;
        speedup.push(Series { label: "miss".into(), points: table.iter().map(|r| (r.n as f64, r.miss_ratio)).collect() });
        speedup.push(Series { label: "hit".into(), points: table.iter().map(|r| (r.n as f64, r.hit_ratio)).collect() });
    }

    write_atomic(&out_dir.join("bench.csv"), &rows_to_csv(rows)?)?;
    write_atomic(
        &out_dir.join("latency.svg"),
        line_chart("Per-token latency", "sequence length N", "milliseconds", &latency).as_bytes(),
    )?;
    write_atomic(
        &out_dir.join("speedup.svg"),
        line_chart("Baseline time / TLinFormer time", "sequence length N", "speedup", &speedup).as_bytes(),
    )?;
    write_atomic(
        &out_dir.join("memory.svg"),
        line_chart("KV cache after prefill", "sequence length N", "KiB", &memory).as_bytes(),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg(models: Vec<Architecture>) -> SweepConfig {
        let mut model = ModelConfig::desk(16);
        model.d_model = 8;
        model.n_head = 2;
        model.woh = 4;
        model.wog = 4;
        model.depth_h = 1;
        SweepConfig {
            n_values: vec![16, 32],
            tokens_per_point: 6,
            repeats: 1,
            warmup_runs: 0,
            models,
            model,
            seed: 1,
            memory_budget_bytes: 1 << 30,
        }
    }

    #[test]
    fn rows_match_cost_model() {
        let cfg = tiny_cfg(vec![Architecture::Tlinformer, Architecture::Baseline]);
        let out = run_sweep(&cfg, |_| {}).unwrap();
        assert_eq!(out.rows.len(), 4);
        for r in &out.rows {
            let (m, h) = expected_units(r.model, &cfg.model, r.n).unwrap();
            assert_eq!((r.interaction_units_miss, r.interaction_units_hit), (m, h));
        }
    }

    #[test]
    fn empty_model_list_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(run_sweep(&tiny_cfg(vec![]), |_| {}).is_err());
        assert!(emit_outputs(&[], dir.path()).is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn memory_budget_stops_sweep() {
        let mut cfg = tiny_cfg(vec![Architecture::Baseline]);
        cfg.memory_budget_bytes = point_memory(Architecture::Baseline, &cfg.model, 22, 4);
        let out = run_sweep(&cfg, |_| {}).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.stops[0].last_ok_n, Some(16));
    }

    #[test]
    fn self_speedup_is_one() {
        let row = |n| SweepRow {
            n,
            t_first_nanos: 100 * n as u64,
            t_third_nanos: 7,
            interaction_units_miss: 3,
            interaction_units_hit: 2,
            bytes_cached: 1,
            model: Architecture::Tlinformer,
        };
        let rows = vec![row(8), row(16)];
        for s in speedup_table(&rows, &rows).unwrap() {
            assert_eq!((s.miss_ratio, s.hit_ratio, s.unit_miss_ratio, s.unit_hit_ratio), (1.0, 1.0, 1.0, 1.0));
        }
        assert!(speedup_table(&rows, &rows[..1]).is_err());
    }

    #[test]
    fn power_law_recovers_exponent() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&x: &f64| (x, 3.0 * x.powf(1.7))).collect();
        assert!((power_law_exponent(&pts).unwrap() - 1.7).abs() < 1e-12);
        assert!(power_law_exponent(&pts[..1]).is_err());
    }

    #[test]
    fn grid_is_inclusive() {
        assert_eq!(SweepConfig::grid(128, 512, 1152).unwrap(), [128, 640, 1152]);
        assert!(SweepConfig::grid(0, 1, 4).is_err());
    }
}
