//! Standard pre-norm decoder-only transformer used as the comparison model.

use crate::backend::{Backend, Eager};
use crate::error::{Error, Result};
use crate::ledger::FlopLedger;
use crate::model::config::ModelConfig;
use crate::model::layers::{causal_self_attention, p, AttnSite, Ffn, Norm};
use crate::params::{Init, ParamBuilder, ParamId, ParamStore};
use crate::tensor::{sinusoidal_positions, Element, Tensor};

#[derive(Debug, Clone)]
struct DecoderLayer {
    attn: AttnSite,
    ffn: Ffn,
}

#[derive(Debug, Clone)]
pub struct Baseline<T: Element> {
    pub(crate) cfg: ModelConfig,
    params: ParamStore<T>,
    embed: ParamId,
    layers: Vec<DecoderLayer>,
    final_norm: Norm,
}

impl<T: Element> Baseline<T> {
    /// A decoder with `cfg.equivalent_depth()` causal layers.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let std = cfg.init_std;
        let mut pb = ParamBuilder::<T>::new(seed);
        let embed = pb.add("embed.tokens", vec![cfg.vocab_size, d], Init::Normal(std));
        let layers = (0..cfg.equivalent_depth())
            .map(|i| DecoderLayer {
                attn: AttnSite::new(&mut pb, &format!("layers.{i}.attn"), d, false, std),
                ffn: Ffn::new(&mut pb, &format!("layers.{i}.ffn"), d, cfg.ffn_mult, std),
            })
            .collect();
        let final_norm = Norm::new(&mut pb, "final_norm", d);
        Ok(Baseline { cfg, params: pb.finish(), embed, layers, final_norm })
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

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn cast<U: Element>(&self) -> Baseline<U> {
        Baseline {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            embed: self.embed,
            layers: self.layers.clone(),
            final_norm: self.final_norm.clone(),
        }
    }

    /// Forward of `tokens` placed at positions `start..`, whose keys and
    /// values extend `prior` (one pair per layer, covering positions
    /// `0..start`). Returns logits for every new row and the full per-layer
    /// keys/values.
    #[allow(clippy::type_complexity)]
    pub fn forward_rows<B: Backend<Elem = T>>(
        &self,
        b: &mut B,
        tokens: &[usize],
        start: usize,
        prior: Option<&[(B::Value, B::Value)]>,
    ) -> Result<(B::Value, Vec<(B::Value, B::Value)>)> {
        let end = start + tokens.len();
        if end > self.cfg.max_seq {
            return Err(Error::Layout(format!(
                "sequence length {end} exceeds the positional table of {}",
                self.cfg.max_seq
            )));
        }
        if tokens.is_empty() {
            return Err(Error::Layout("empty token sequence".into()));
        }
        let s = &self.params;
        let table = p(b, s, self.embed);
        let e = b.gather(&table, tokens)?;
        let pos = b.constant(sinusoidal_positions(start, tokens.len(), self.cfg.d_model));
        let mut x = b.add(&e, &pos)?;
        let mut kv = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let pr = prior.map(|p| (&p[i].0, &p[i].1));
            let (a, k, v) = causal_self_attention(b, s, &layer.attn, &x, pr, self.cfg.n_head)?;
            let r = b.add(&x, &a)?;
            x = layer.ffn.apply(b, s, &r)?;
            kv.push((k, v));
        }
        let n = self.final_norm.apply(b, s, &x)?;
        let logits = b.matmul_nt(&n, &table)?;
        Ok((logits, kv))
    }

    pub fn forward<B: Backend<Elem = T>>(&self, b: &mut B, tokens: &[usize]) -> Result<B::Value> {
        Ok(self.forward_rows(b, tokens, 0, None)?.0)
    }

    pub fn forward_eager(&self, tokens: &[usize]) -> Result<(Tensor<T>, FlopLedger)> {
        let mut b = Eager::<T>::new();
        let logits = self.forward(&mut b, tokens)?;
        Ok(((*logits).clone(), b.into_ledger()))
    }
}
