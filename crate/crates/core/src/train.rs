//! Sliding-window training.
//!
//! A training sequence of `N` tokens is cut into `N / Wog` chunks. Chunk `k`
//! treats tokens `0..k Wog` as history and predicts tokens of the window
//! `k Wog..(k + 1) Wog`; the windows' logits together cover every position
//! once. The baseline trains on the whole sequence with a causal mask.

use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::backend::{Backend, Eager};
use crate::error::{Error, Result};
use crate::model::{AnyModel, Architecture, ModelConfig};
use crate::params::ParamStore;

/// Pattern corpus shipped with the crate (64 distinct symbols).
pub const BUNDLED_CORPUS: &str = include_str!("../data/synthetic.txt");

const SYMBOLS: &str = "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz+/";

/// Repeating-motif text over 64 symbols: sixteen 4-symbol motifs chained by
/// a noisy successor rule.
pub fn synthetic_corpus(len: usize, seed: u64) -> String {
    let sym: Vec<char> = SYMBOLS.chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(len);
    let mut motif = 0usize;
    while out.len() < len {
        for j in 0..4 {
            out.push(sym[4 * motif + (j * 3 + motif) % 4]);
        }
        motif = (motif * 5 + 1 + rng.random_range(0..2)) % 16;
    }
    out.truncate(len);
    out
}

/// Character vocabulary sorted by codepoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    chars: Vec<char>,
}

impl Vocab {
    pub fn from_text(text: &str) -> Self {
        let mut chars: Vec<char> = text.chars().collect();
        chars.sort_unstable();
        chars.dedup();
        Vocab { chars }
    }

    pub fn from_chars(chars: Vec<char>) -> Self {
        Vocab { chars }
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.chars.binary_search(&c).map_err(|_| Error::Corpus(format!("character {c:?} not in vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.chars.get(i).copied().unwrap_or('\u{FFFD}')).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Vocab,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

impl Corpus {
    /// Tokenizes `text`; the last `eval_fraction` of it becomes the eval split.
    pub fn from_text(text: &str, eval_fraction: f64) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::Corpus("corpus is empty".into()));
        }
        if !(0.0..1.0).contains(&eval_fraction) {
            return Err(Error::Config(format!("eval_fraction must be in [0, 1), got {eval_fraction}")));
        }
        let vocab = Vocab::from_text(text);
        let ids = vocab.encode(text)?;
        let n_eval = (ids.len() as f64 * eval_fraction).round() as usize;
        let split = ids.len() - n_eval;
        Ok(Corpus { vocab, train: ids[..split].to_vec(), eval: ids[split..].to_vec() })
    }
}

pub fn ingest_corpus(path: &Path, eval_fraction: f64) -> Result<Corpus> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::CorpusNotFound(path.display().to_string()))
        }
        Err(e) if e.kind() == std::io::ErrorKind::InvalidData => {
            return Err(Error::Corpus(format!("{} is not UTF-8 text", path.display())))
        }
        Err(e) => return Err(e.into()),
    };
    Corpus::from_text(&text, eval_fraction)
}

/// One training window: history `0..k Wog`, generation `k Wog..(k+1) Wog`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub index: usize,
    pub hist_span: Range<usize>,
    pub gen_span: Range<usize>,
}

pub fn chunk_sequence(n: usize, wog: usize) -> Result<Vec<Chunk>> {
    if wog == 0 || n == 0 || !n.is_multiple_of(wog) {
        return Err(Error::Config(format!("sequence length {n} is not a positive multiple of Wog = {wog}")));
    }
    Ok((0..n / wog)
        .map(|k| Chunk { index: k, hist_span: 0..k * wog, gen_span: k * wog..(k + 1) * wog })
        .collect())
}

/// Summed cross-entropy of predicting `seq[1..]` from `seq[..N]`, where
/// `N = seq.len() - 1`.
pub fn sequence_loss<B: Backend<Elem = f64>>(b: &mut B, model: &AnyModel<f64>, seq: &[usize]) -> Result<B::Value> {
    if seq.len() < 2 {
        return Err(Error::Layout("a training sequence needs at least two tokens".into()));
    }
    let n = seq.len() - 1;
    match model {
        AnyModel::Tlinformer(m) => {
            let mut total: Option<B::Value> = None;
            for chunk in chunk_sequence(n, m.config().wog)? {
                let (logits, _) = m.forward_window(b, &seq[..chunk.gen_span.end], chunk.hist_span.end)?;
                let targets = &seq[chunk.gen_span.start + 1..chunk.gen_span.end + 1];
                let l = b.cross_entropy_sum(&logits, targets)?;
                total = Some(match total {
                    Some(t) => b.add(&t, &l)?,
                    None => l,
                });
            }
            Ok(total.expect("at least one chunk"))
        }
        AnyModel::Baseline(m) => {
            let logits = m.forward(b, &seq[..n])?;
            b.cross_entropy_sum(&logits, &seq[1..])
        }
    }
}

/// Summed loss and per-parameter gradients of one sequence.
pub fn loss_and_grads(model: &AnyModel<f64>, seq: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let loss = sequence_loss(&mut tape, model, seq)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    let store = model.params();
    let g = store
        .ids()
        .map(|id| match grads.param(id) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; store.get(id).len()],
        })
        .collect();
    Ok((value, g))
}

/// Summed loss without recording a tape.
pub fn sequence_loss_value(model: &AnyModel<f64>, seq: &[usize]) -> Result<f64> {
    let mut b = Eager::<f64>::new();
    let l = sequence_loss(&mut b, model, seq)?;
    Ok(l.data()[0])
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore<f64>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        Adam { lr, beta1, beta2, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, store: &mut ParamStore<f64>, grads: &[Vec<f64>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let p = store.data_mut(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let g = grads[i][j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                p[j] -= self.lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps);
            }
        }
    }
}

/// Averages gradients over every predicted token of `batch`, applies one
/// optimizer update and returns the mean per-token loss before the update.
pub fn train_step(model: &mut AnyModel<f64>, opt: &mut Adam, batch: &[Vec<usize>]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let mut total = 0.0;
    let mut tokens = 0usize;
    let mut acc: Option<Vec<Vec<f64>>> = None;
    for seq in batch {
        let (loss, g) = loss_and_grads(model, seq).map_err(|e| match e {
            Error::NonFinite(op) => Error::Diverged(format!("non-finite value in {op}")),
            other => other,
        })?;
        total += loss;
        tokens += seq.len() - 1;
        match &mut acc {
            None => acc = Some(g),
            Some(a) => {
                for (x, y) in a.iter_mut().zip(&g) {
                    for (p, q) in x.iter_mut().zip(y) {
                        *p += q;
                    }
                }
            }
        }
    }
    let mean = total / tokens as f64;
    if !mean.is_finite() {
        return Err(Error::Diverged(format!("loss is {mean}")));
    }
    let mut grads = acc.expect("non-empty batch");
    let scale = 1.0 / tokens as f64;
    grads.iter_mut().flatten().for_each(|g| *g *= scale);
    opt.step(model.params_mut(), &grads);
    Ok(mean)
}

/// `exp` of the mean per-token cross-entropy over non-overlapping sequences
/// of `eval_tokens`, each at most `seq_len` predictions long.
pub fn evaluate_ppl(model: &AnyModel<f64>, eval_tokens: &[usize], seq_len: usize) -> Result<f64> {
    let unit = match model {
        AnyModel::Tlinformer(m) => m.config().wog,
        AnyModel::Baseline(_) => 1,
    };
    let avail = eval_tokens.len().saturating_sub(1);
    let n = seq_len.min(avail) / unit * unit;
    if n == 0 {
        return Err(Error::Corpus(format!("eval set of {} tokens is too short", eval_tokens.len())));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    let mut start = 0;
    while start + n < eval_tokens.len() {
        total += sequence_loss_value(model, &eval_tokens[start..start + n + 1])?;
        count += n;
        start += n;
    }
    Ok((total / count as f64).exp())
}

/// Model shape in a training config; the vocabulary size comes from the
/// corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub d_model: usize,
    pub n_head: usize,
    pub depth_h: usize,
    pub n_blocks: usize,
    pub woh: usize,
    pub wog: usize,
    pub ffn_mult: usize,
    pub init_std: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec { d_model: 32, n_head: 4, depth_h: 1, n_blocks: 2, woh: 16, wog: 16, ffn_mult: 4, init_std: 0.02 }
    }
}

impl ModelSpec {
    pub fn to_config(&self, vocab_size: usize, max_seq: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_head: self.n_head,
            depth_h: self.depth_h,
            n_blocks: self.n_blocks,
            woh: self.woh,
            wog: self.wog,
            ffn_mult: self.ffn_mult,
            max_seq,
            restore_last_block: true,
            init_std: self.init_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// `None` trains on the bundled corpus.
    pub corpus_path: Option<PathBuf>,
    pub arch: Architecture,
    pub model: ModelSpec,
    pub seq_len: usize,
    /// Sequences per micro-batch.
    pub batch_size: usize,
    /// Micro-batches accumulated into one update.
    pub grad_accum: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Passes over the training split; ignored when `steps` is set.
    pub epochs: usize,
    pub steps: Option<usize>,
    pub seed: u64,
    pub eval_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            corpus_path: None,
            arch: Architecture::Tlinformer,
            model: ModelSpec::default(),
            seq_len: 64,
            batch_size: 4,
            grad_accum: 1,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.95,
            epochs: 1,
            steps: None,
            seed: 0,
            eval_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.arch == Architecture::Tlinformer && (self.model.wog == 0 || !self.seq_len.is_multiple_of(self.model.wog)) {
            return Err(Error::Config(format!(
                "seq_len {} must be a multiple of wog {}",
                self.seq_len, self.model.wog
            )));
        }
        if self.seq_len == 0 || self.batch_size == 0 || self.grad_accum == 0 {
            return Err(Error::Config("seq_len, batch_size and grad_accum must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        match &self.corpus_path {
            Some(p) => ingest_corpus(p, self.eval_fraction),
            None => Corpus::from_text(BUNDLED_CORPUS, self.eval_fraction),
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        self.model.to_config(vocab_size, self.seq_len)
    }

    fn total_steps(&self, train_len: usize) -> usize {
        self.steps.unwrap_or_else(|| {
            let per_step = self.seq_len * self.batch_size * self.grad_accum;
            self.epochs * (train_len / per_step).max(1)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub tokens_seen: u64,
    pub wall_nanos: u64,
}

pub fn log_to_csv(rows: &[LogRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: AnyModel<f64>,
    pub vocab: Vocab,
    pub log: Vec<LogRow>,
    pub eval_ppl: Option<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.log.last().map(|r| r.loss)
    }
}

/// Random windows of `seq_len + 1` tokens drawn from `tokens`.
pub fn sample_batch(tokens: &[usize], seq_len: usize, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<usize>>> {
    if tokens.len() < seq_len + 1 {
        return Err(Error::Corpus(format!(
            "training split has {} tokens; a sequence needs {}",
            tokens.len(),
            seq_len + 1
        )));
    }
    Ok((0..count)
        .map(|_| {
            let s = rng.random_range(0..=tokens.len() - seq_len - 1);
            tokens[s..s + seq_len + 1].to_vec()
        })
        .collect())
}

/// Trains a fresh model on `corpus`; `on_step` sees every log row.
pub fn train(cfg: &TrainConfig, corpus: &Corpus, mut on_step: impl FnMut(&LogRow)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mcfg = cfg.model_config(corpus.vocab.len());
    let mut model = AnyModel::<f64>::new(cfg.arch, mcfg, cfg.seed)?;
    let mut opt = Adam::new(model.params(), cfg.lr, cfg.beta1, cfg.beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let steps = cfg.total_steps(corpus.train.len());
    let start = Instant::now();
    let mut log = Vec::with_capacity(steps);
    let mut tokens_seen = 0u64;
    for step in 0..steps {
        let batch = sample_batch(&corpus.train, cfg.seq_len, cfg.batch_size * cfg.grad_accum, &mut rng)?;
        let loss = train_step(&mut model, &mut opt, &batch)?;
        tokens_seen += (batch.len() * cfg.seq_len) as u64;
        let row = LogRow { step, loss, tokens_seen, wall_nanos: start.elapsed().as_nanos() as u64 };
        on_step(&row);
        log.push(row);
    }
    let eval_ppl = if corpus.eval.len() > 1 { evaluate_ppl(&model, &corpus.eval, cfg.seq_len).ok() } else { None };
    Ok(TrainOutcome { model, vocab: corpus.vocab.clone(), log, eval_ppl })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro(arch: Architecture) -> AnyModel<f64> {
        let cfg = ModelConfig {
            vocab_size: 6,
            d_model: 8,
            n_head: 2,
            depth_h: 1,
            n_blocks: 2,
            woh: 2,
            wog: 2,
            ffn_mult: 2,
            max_seq: 64,
            restore_last_block: true,
            init_std: 0.3,
        };
        AnyModel::new(arch, cfg, 3).unwrap()
    }

    #[test]
    fn bundled_corpus_is_the_generator_output() {
        assert_eq!(BUNDLED_CORPUS, synthetic_corpus(BUNDLED_CORPUS.len(), 0));
        assert_eq!(Vocab::from_text(BUNDLED_CORPUS).len(), 64);
    }

    #[test]
    fn char_vocab() {
        let v = Vocab::from_text("abab");
        assert_eq!(v.encode("abab").unwrap(), [0, 1, 0, 1]);
        let v = Vocab::from_text("zebra");
        assert_eq!(v.chars(), ['a', 'b', 'e', 'r', 'z']);
        let s = "a zebra bear";
        let v = Vocab::from_text(s);
        assert_eq!(v.decode(&v.encode(s).unwrap()), s);
        assert!(v.encode("q").is_err());
    }

    #[test]
    fn corpus_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.txt");
        assert!(matches!(ingest_corpus(&missing, 0.1), Err(Error::CorpusNotFound(_))));
        let empty = dir.path().join("empty.txt");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(ingest_corpus(&empty, 0.1), Err(Error::Corpus(_))));
    }

    #[test]
    fn split_from_tail() {
        let c = Corpus::from_text("abcdefghij", 0.2).unwrap();
        assert_eq!(c.train.len(), 8);
        assert_eq!(c.vocab.decode(&c.eval), "ij");
    }

    #[test]
    fn chunks_tile_the_sequence() {
        let chunks = chunk_sequence(12, 4).unwrap();
        let hist: Vec<_> = chunks.iter().map(|c| c.hist_span.len()).collect();
        assert_eq!(hist, [0, 4, 8]);
        let covered: Vec<usize> = chunks.iter().flat_map(|c| c.gen_span.clone()).collect();
        assert_eq!(covered, (0..12).collect::<Vec<_>>());
        assert_eq!(chunk_sequence(4, 4).unwrap().len(), 1);
        assert!(matches!(chunk_sequence(10, 4), Err(Error::Config(_))));
    }

    #[test]
    fn chunked_logits_match_prefix_forwards() {
        let AnyModel::Tlinformer(m) = micro(Architecture::Tlinformer) else { unreachable!() };
        let seq: Vec<usize> = (0..8).map(|i| (i * 5) % 6).collect();
        let mut tape = Tape::new();
        for c in chunk_sequence(8, 2).unwrap() {
            let (lv, _) = m.forward_window(&mut tape, &seq[..c.gen_span.end], c.hist_span.end).unwrap();
            let (mono, _) = m.forward_eager(&seq[..c.gen_span.end]).unwrap();
            assert!(tape.value(lv).max_abs_diff(&mono) < 1e-9);
        }
    }

    #[test]
    fn initial_loss_near_uniform_entropy() {
        for arch in [Architecture::Tlinformer, Architecture::Baseline] {
            let mut m = micro(arch);
            // shrink logits toward uniform
            let id = m.params().ids().next().unwrap();
            m.params_mut().data_mut(id).iter_mut().for_each(|w| *w *= 0.01);
            let seq: Vec<usize> = (0..9).map(|i| (i * 7) % 6).collect();
            let l = sequence_loss_value(&m, &seq).unwrap() / 8.0;
            assert!((l - 6f64.ln()).abs() < 0.1 * 6f64.ln(), "{l}");
        }
    }

    #[test]
    fn tape_and_eager_loss_agree() {
        let m = micro(Architecture::Tlinformer);
        let seq: Vec<usize> = (0..9).map(|i| (i * 7 + 1) % 6).collect();
        let (a, _) = loss_and_grads(&m, &seq).unwrap();
        let b = sequence_loss_value(&m, &seq).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn memorizing_one_token_drives_ppl_to_one() {
        let mut m = micro(Architecture::Baseline);
        let mut opt = Adam::new(m.params(), 3e-2, 0.9, 0.95);
        let seq = vec![vec![2usize; 9]];
        for _ in 0..60 {
            train_step(&mut m, &mut opt, &seq).unwrap();
        }
        let ppl = evaluate_ppl(&m, &[2; 17], 8).unwrap();
        assert!(ppl < 1.05, "{ppl}");
    }

    #[test]
    fn untrained_ppl_on_random_tokens_near_vocab() {
        let mut m = micro(Architecture::Tlinformer);
        let id = m.params().ids().next().unwrap();
        m.params_mut().data_mut(id).iter_mut().for_each(|w| *w *= 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let toks: Vec<usize> = (0..65).map(|_| rng.random_range(0..6)).collect();
        let ppl = evaluate_ppl(&m, &toks, 8).unwrap();
        assert!((ppl - 6.0).abs() < 0.6, "{ppl}");
    }

    #[test]
    fn empty_eval_is_an_error() {
        assert!(evaluate_ppl(&micro(Architecture::Baseline), &[], 8).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            model: ModelSpec { d_model: 8, n_head: 2, woh: 4, wog: 4, ..ModelSpec::default() },
            seq_len: 8,
            batch_size: 2,
            steps: Some(3),
            ..TrainConfig::default()
        };
        let corpus = Corpus::from_text(&BUNDLED_CORPUS[..2000], 0.1).unwrap();
        let a = train(&cfg, &corpus, |_| {}).unwrap();
        let b = train(&cfg, &corpus, |_| {}).unwrap();
        let la: Vec<f64> = a.log.iter().map(|r| r.loss).collect();
        let lb: Vec<f64> = b.log.iter().map(|r| r.loss).collect();
        assert_eq!(la, lb);
    }

    #[test]
    fn config_json_defaults_and_validation() {
        let c: TrainConfig = serde_json::from_str(r#"{"seq_len": 48, "arch": "baseline"}"#).unwrap();
        assert_eq!(c.seq_len, 48);
        assert_eq!(c.arch, Architecture::Baseline);
        assert_eq!(c.lr, 3e-4);
        let bad = TrainConfig { seq_len: 50, ..TrainConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}

#[cfg(test)]
mod regen {
    #[test]
    #[ignore]
    fn write_bundled_corpus() {
        let text = super::synthetic_corpus(16384, 0);
        std::fs::write(concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic.txt"), text).unwrap();
    }
}
