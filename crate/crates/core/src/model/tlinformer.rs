//! The windowed two-path block and its stacking.
//!
//! A block splits its input into history rows and generation-window rows.
//! The context path compresses the history with focused attention (the
//! last `min(Woh, hist_len)` rows query the whole history), refines it with
//! `H` full self-attention layers and restores it to full length with cross
//! attention. The generation path runs `H + 2` layers; layer `L` adds causal
//! self-attention over the window and cross attention into the history
//! (`L = 0`, raw history rows) or into context state `C_{L-1}` (`L >= 1`).

use crate::attention::Mask;
use crate::backend::{Backend, Eager};
use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, WindowLayout};
use crate::model::layers::{causal_self_attention, p, AttnSite, Ffn, Norm};
use crate::params::{Init, ParamBuilder, ParamId, ParamStore};
use crate::tensor::{sinusoidal_positions, Element, Tensor};

#[derive(Debug, Clone)]
struct ContextLayer {
    site: AttnSite,
    ffn: Ffn,
}

#[derive(Debug, Clone)]
struct GenLayer {
    causal: AttnSite,
    cross: AttnSite,
    ffn: Ffn,
}

#[derive(Debug, Clone)]
struct Block {
    focus: ContextLayer,
    inner: Vec<ContextLayer>,
    restore: ContextLayer,
    gen: Vec<GenLayer>,
}

/// Outputs of one block's two paths.
#[derive(Debug, Clone)]
pub struct BlockState<V> {
    /// `C_0 ..= C_H`, followed by the restored history when it was computed.
    pub context_layers: Vec<V>,
    /// `H_0 = x_gen` followed by the `H + 2` generation-layer outputs.
    pub gen_layers: Vec<V>,
}

/// Context path outputs: compressed states and the optional restored
/// full-length history.
#[derive(Debug, Clone)]
pub struct ContextStates<V> {
    pub layers: Vec<V>,
    pub restored: Option<V>,
}

/// Key/value tensors a cache keeps for one block.
#[derive(Debug, Clone)]
pub struct BlockTrace<V> {
    /// Cross-attention keys/values per generation layer; index 0 covers the
    /// full history, the rest cover context states. `None` when the block
    /// has no history (or no context width).
    pub cross_kv: Vec<Option<(V, V)>>,
    /// Causal self-attention keys/values of the window rows per layer.
    pub self_kv: Vec<(V, V)>,
    pub state: BlockState<V>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace<V> {
    pub hist_len: usize,
    pub gen_len: usize,
    pub blocks: Vec<BlockTrace<V>>,
}

#[derive(Debug, Clone)]
pub struct TLinFormer<T: Element> {
    pub(crate) cfg: ModelConfig,
    params: ParamStore<T>,
    embed: ParamId,
    blocks: Vec<Block>,
    final_norm: Norm,
}

impl<T: Element> TLinFormer<T> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let std = cfg.init_std;
        let mut pb = ParamBuilder::<T>::new(seed);
        let embed = pb.add("embed.tokens", vec![cfg.vocab_size, d], Init::Normal(std));
        let ctx_layer = |pb: &mut ParamBuilder<T>, name: String, cross: bool| ContextLayer {
            site: AttnSite::new(pb, &format!("{name}.attn"), d, cross, std),
            ffn: Ffn::new(pb, &format!("{name}.ffn"), d, cfg.ffn_mult, std),
        };
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for bi in 0..cfg.n_blocks {
            let focus = ctx_layer(&mut pb, format!("blocks.{bi}.context.focus"), false);
            let inner = (0..cfg.depth_h)
                .map(|i| ctx_layer(&mut pb, format!("blocks.{bi}.context.self.{i}"), false))
                .collect();
            let restore = ctx_layer(&mut pb, format!("blocks.{bi}.context.restore"), true);
            let gen = (0..cfg.depth_h + 2)
                .map(|l| {
                    let name = format!("blocks.{bi}.gen.{l}");
                    GenLayer {
                        causal: AttnSite::new(&mut pb, &format!("{name}.causal"), d, false, std),
                        cross: AttnSite::new(&mut pb, &format!("{name}.cross"), d, true, std),
                        ffn: Ffn::new(&mut pb, &format!("{name}.ffn"), d, cfg.ffn_mult, std),
                    }
                })
                .collect();
            blocks.push(Block { focus, inner, restore, gen });
        }
        let final_norm = Norm::new(&mut pb, "final_norm", d);
        Ok(TLinFormer { cfg, params: pb.finish(), embed, blocks, final_norm })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.total_elements()
    }

    pub fn cast<U: Element>(&self) -> TLinFormer<U> {
        TLinFormer {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            embed: self.embed,
            blocks: self.blocks.clone(),
            final_norm: self.final_norm.clone(),
        }
    }

    /// Whether block `bi` runs its restoring cross-attention.
    pub fn restores(&self, bi: usize) -> bool {
        bi + 1 < self.cfg.n_blocks || self.cfg.restore_last_block
    }

    /// Token embeddings plus sinusoidal encodings of absolute positions
    /// `start..start + tokens.len()`.
    pub fn embed<B: Backend<Elem = T>>(&self, b: &mut B, tokens: &[usize], start: usize) -> Result<B::Value> {
        let table = p(b, &self.params, self.embed);
        let e = b.gather(&table, tokens)?;
        let pos = b.constant(sinusoidal_positions(start, tokens.len(), self.cfg.d_model));
        b.add(&e, &pos)
    }

    /// Context path of block `bi` over `x_hist`.
    pub fn context_path<B: Backend<Elem = T>>(
        &self,
        b: &mut B,
        bi: usize,
        x_hist: &B::Value,
        restore: bool,
    ) -> Result<ContextStates<B::Value>> {
        let blk = &self.blocks[bi];
        let s = &self.params;
        let nh = self.cfg.n_head;
        let h = b.rows(x_hist);
        let w = self.cfg.woh.min(h);
        if h == 0 || w == 0 {
            return Ok(ContextStates { layers: Vec::new(), restored: None });
        }
        let mut layers = Vec::with_capacity(self.cfg.depth_h + 1);

        // focused compression: the last w rows query the full history
        let normed = blk.focus.site.norm_query(b, s, x_hist)?;
        let (k, v) = blk.focus.site.project_kv(b, s, &normed)?;
        let q_rows = b.slice_rows(&normed, h - w, h)?;
        let q = blk.focus.site.project_q(b, s, &q_rows)?;
        let a = blk.focus.site.finish(b, s, &q, &k, &v, nh, Mask::None)?;
        let resid = b.slice_rows(x_hist, h - w, h)?;
        let c = b.add(&resid, &a)?;
        let mut c = blk.focus.ffn.apply(b, s, &c)?;
        layers.push(c.clone());

        for layer in &blk.inner {
            let normed = layer.site.norm_query(b, s, &c)?;
            let (k, v) = layer.site.project_kv(b, s, &normed)?;
            let q = layer.site.project_q(b, s, &normed)?;
            let a = layer.site.finish(b, s, &q, &k, &v, nh, Mask::None)?;
            let r = b.add(&c, &a)?;
            c = layer.ffn.apply(b, s, &r)?;
            layers.push(c.clone());
        }

        let restored = if restore {
            let site = &blk.restore.site;
            let qn = site.norm_query(b, s, x_hist)?;
            let kvn = site.norm_source(b, s, &c)?;
            let (k, v) = site.project_kv(b, s, &kvn)?;
            let q = site.project_q(b, s, &qn)?;
            let a = site.finish(b, s, &q, &k, &v, nh, Mask::None)?;
            let r = b.add(x_hist, &a)?;
            Some(blk.restore.ffn.apply(b, s, &r)?)
        } else {
            None
        };
        Ok(ContextStates { layers, restored })
    }

    /// Cross-attention keys/values for every generation layer of block `bi`.
    #[allow(clippy::type_complexity)]
    pub fn cross_sources<B: Backend<Elem = T>>(
        &self,
        b: &mut B,
        bi: usize,
        x_hist: Option<&B::Value>,
        ctx: &ContextStates<B::Value>,
    ) -> Result<Vec<Option<(B::Value, B::Value)>>> {
        let blk = &self.blocks[bi];
        let s = &self.params;
        let mut out = Vec::with_capacity(blk.gen.len());
        for (l, layer) in blk.gen.iter().enumerate() {
            let src = if l == 0 { x_hist } else { ctx.layers.get(l - 1) };
            out.push(match src {
                Some(src) if b.rows(src) > 0 => {
                    let n = layer.cross.norm_source(b, s, src)?;
                    Some(layer.cross.project_kv(b, s, &n)?)
                }
                _ => None,
            });
        }
        Ok(out)
    }

    /// Generation layer `l` of block `bi` for rows `x`, whose causal keys
    /// extend `prior`. Returns `(output, keys, values)`.
    #[allow(clippy::type_complexity)]
    pub fn gen_layer<B: Backend<Elem = T>>(
        &self,
        b: &mut B,
        bi: usize,
        l: usize,
        x: &B::Value,
        prior: Option<(&B::Value, &B::Value)>,
        cross_kv: Option<(&B::Value, &B::Value)>,
    ) -> Result<(B::Value, B::Value, B::Value)> {
        let layer = &self.blocks[bi].gen[l];
        let s = &self.params;
        let nh = self.cfg.n_head;
        let (a, k, v) = causal_self_attention(b, s, &layer.causal, x, prior, nh)?;
        let mut sum = b.add(x, &a)?;
        if let Some((ck, cv)) = cross_kv {
            let qn = layer.cross.norm_query(b, s, x)?;
            let q = layer.cross.project_q(b, s, &qn)?;
            let c = layer.cross.finish(b, s, &q, ck, cv, nh, Mask::None)?;
            sum = b.add(&sum, &c)?;
        }
        let out = layer.ffn.apply(b, s, &sum)?;
        Ok((out, k, v))
    }

    /// Full generation path of block `bi`.
    #[allow(clippy::type_complexity)]
    pub fn generation_path<B: Backend<Elem = T>>(
        &self,
        b: &mut B,
        bi: usize,
        x_gen: &B::Value,
        cross_kv: &[Option<(B::Value, B::Value)>],
    ) -> Result<(Vec<B::Value>, Vec<(B::Value, B::Value)>)> {
        let n_layers = self.blocks[bi].gen.len();
        let mut layers = Vec::with_capacity(n_layers + 1);
        let mut self_kv = Vec::with_capacity(n_layers);
        let mut x = x_gen.clone();
        layers.push(x.clone());
        for (l, kv) in cross_kv.iter().enumerate().take(n_layers) {
            let ckv = kv.as_ref().map(|(k, v)| (k, v));
            let (out, k, v) = self.gen_layer(b, bi, l, &x, None, ckv)?;
            self_kv.push((k, v));
            layers.push(out.clone());
            x = out;
        }
        Ok((layers, self_kv))
    }

    /// Tied output projection of final generation rows.
    pub fn logits<B: Backend<Elem = T>>(&self, b: &mut B, x: &B::Value) -> Result<B::Value> {
        let n = self.final_norm.apply(b, &self.params, x)?;
        let table = p(b, &self.params, self.embed);
        b.matmul_nt(&n, &table)
    }

    fn check_window(&self, len: usize, hist_len: usize) -> Result<usize> {
        if hist_len >= len {
            return Err(Error::Layout(format!(
                "history {hist_len} leaves no generation rows in a sequence of {len}"
            )));
        }
        let g = len - hist_len;
        if g > self.cfg.wog {
            return Err(Error::Layout(format!("generation window of {g} rows exceeds Wog = {}", self.cfg.wog)));
        }
        Ok(g)
    }

    /// Forward over embedded rows `x` split at `hist_len`; returns logits of
    /// the generation rows and every block's cached tensors.
    pub fn forward_embedded<B: Backend<Elem = T>>(
        &self,
        b: &mut B,
        x: &B::Value,
        hist_len: usize,
    ) -> Result<(B::Value, ForwardTrace<B::Value>)> {
        let len = b.rows(x);
        let g = self.check_window(len, hist_len)?;
        let mut x_hist = if hist_len > 0 { Some(b.slice_rows(x, 0, hist_len)?) } else { None };
        let mut x_gen = b.slice_rows(x, hist_len, len)?;
        let mut blocks = Vec::with_capacity(self.cfg.n_blocks);
        for bi in 0..self.cfg.n_blocks {
            let ctx = match &x_hist {
                Some(xh) => self.context_path(b, bi, xh, self.restores(bi))?,
                None => ContextStates { layers: Vec::new(), restored: None },
            };
            let cross_kv = self.cross_sources(b, bi, x_hist.as_ref(), &ctx)?;
            let (gen_layers, self_kv) = self.generation_path(b, bi, &x_gen, &cross_kv)?;
            x_gen = gen_layers.last().expect("at least one layer").clone();
            let mut context_layers = ctx.layers;
            if let Some(r) = &ctx.restored {
                context_layers.push(r.clone());
            }
            if bi + 1 < self.cfg.n_blocks {
                // Without context width there is nothing to restore from and
                // the history passes through unchanged.
                if let Some(r) = ctx.restored {
                    x_hist = Some(r);
                }
            }
            blocks.push(BlockTrace { cross_kv, self_kv, state: BlockState { context_layers, gen_layers } });
        }
        let logits = self.logits(b, &x_gen)?;
        Ok((logits, ForwardTrace { hist_len, gen_len: g, blocks }))
    }

    /// Forward of `tokens` with the first `hist_len` as history and the rest
    /// (at most `Wog`) as the generation window.
    pub fn forward_window<B: Backend<Elem = T>>(
        &self,
        b: &mut B,
        tokens: &[usize],
        hist_len: usize,
    ) -> Result<(B::Value, ForwardTrace<B::Value>)> {
        self.check_window(tokens.len(), hist_len)?;
        let x = self.embed(b, tokens, 0)?;
        self.forward_embedded(b, &x, hist_len)
    }

    /// Logits `[Wog x vocab]` for the last `Wog` positions of `tokens`.
    pub fn forward<B: Backend<Elem = T>>(&self, b: &mut B, tokens: &[usize], layout: WindowLayout) -> Result<B::Value> {
        if tokens.len() != layout.n {
            return Err(Error::Layout(format!("{} tokens for layout N = {}", tokens.len(), layout.n)));
        }
        if layout.wog != self.cfg.wog || layout.woh != self.cfg.woh {
            return Err(Error::Layout("layout windows differ from the model's".into()));
        }
        Ok(self.forward_window(b, tokens, layout.hist_len())?.0)
    }

    /// Uncached eager forward; logits and the interaction ledger.
    pub fn forward_eager(&self, tokens: &[usize]) -> Result<(Tensor<T>, crate::ledger::FlopLedger)> {
        let layout = WindowLayout::for_config(tokens.len(), &self.cfg)?;
        let mut b = Eager::<T>::new();
        let logits = self.forward(&mut b, tokens, layout)?;
        Ok(((*logits).clone(), b.into_ledger()))
    }
}
