use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_true() -> bool {
    true
}

fn default_init_std() -> f64 {
    0.02
}

/// Architecture hyperparameters shared by TLinFormer and the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Embedding width `D`.
    pub d_model: usize,
    pub n_head: usize,
    /// Intermediate self-attention layers per block (`H`).
    pub depth_h: usize,
    pub n_blocks: usize,
    /// History window `Woh`.
    pub woh: usize,
    /// Generation window `Wog`; also the slide stride.
    pub wog: usize,
    pub ffn_mult: usize,
    /// Longest sequence the baseline accepts.
    pub max_seq: usize,
    /// Run the restoring cross-attention in the last block too. Its output
    /// is unused, but the analytic cost model counts it in every block.
    #[serde(default = "default_true")]
    pub restore_last_block: bool,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

impl ModelConfig {
    /// `n_blocks * (H + 2)`: depth of the baseline with matching layers.
    pub fn equivalent_depth(&self) -> usize {
        self.n_blocks * (self.depth_h + 2)
    }

    pub fn w_total(&self) -> usize {
        self.woh + self.wog
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size == 0 {
            return bad("vocab_size must be positive".into());
        }
        if self.d_model == 0 || self.n_head == 0 || !self.d_model.is_multiple_of(self.n_head) {
            return bad(format!("d_model {} not divisible by n_head {}", self.d_model, self.n_head));
        }
        if self.n_blocks == 0 {
            return bad("n_blocks must be positive".into());
        }
        if self.wog == 0 {
            return bad("wog must be at least 1".into());
        }
        if self.ffn_mult == 0 {
            return bad("ffn_mult must be positive".into());
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad("init_std must be positive".into());
        }
        Ok(())
    }

    /// GPT-2 vocabulary, `D = 432`, 12 heads, two blocks of `H = 2`
    /// (equivalent depth 8), 1K-1K-0.5 windows.
    pub fn gpt2_small_parity() -> Self {
        ModelConfig {
            vocab_size: 50257,
            d_model: 432,
            n_head: 12,
            depth_h: 2,
            n_blocks: 2,
            woh: 512,
            wog: 512,
            ffn_mult: 4,
            max_seq: 1024,
            restore_last_block: true,
            init_std: 0.02,
        }
    }

    /// Benchmark-scale default: `D = 64`, 4 heads, `H = 2`, two blocks,
    /// `Woh = Wog = 32`.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 64,
            n_head: 4,
            depth_h: 2,
            n_blocks: 2,
            woh: 32,
            wog: 32,
            ffn_mult: 4,
            max_seq: 1 << 16,
            restore_last_block: true,
            init_std: 0.02,
        }
    }
}

/// How a sequence of length `N` splits into history and generation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowLayout {
    pub n: usize,
    pub woh: usize,
    pub wog: usize,
}

impl WindowLayout {
    pub fn new(n: usize, woh: usize, wog: usize) -> Result<Self> {
        if wog == 0 {
            return Err(Error::Layout("Wog must be at least 1".into()));
        }
        if n < wog {
            return Err(Error::Layout(format!("sequence length {n} shorter than Wog = {wog}")));
        }
        Ok(Self { n, woh, wog })
    }

    pub fn for_config(n: usize, cfg: &ModelConfig) -> Result<Self> {
        Self::new(n, cfg.woh, cfg.wog)
    }

    pub fn w_total(&self) -> usize {
        self.woh + self.wog
    }

    pub fn ratio(&self) -> f64 {
        self.woh as f64 / self.w_total() as f64
    }

    pub fn stride(&self) -> usize {
        self.wog
    }

    pub fn hist_len(&self) -> usize {
        self.n - self.wog
    }

    /// Width of the compressed context: `min(Woh, hist_len)`.
    pub fn context_width(&self) -> usize {
        self.woh.min(self.hist_len())
    }
}
