//! Parameterized building blocks: layer norm, linear maps, the FFN and a
//! projected attention site.

use crate::attention::Mask;
use crate::backend::Backend;
use crate::error::Result;
use crate::params::{Init, ParamBuilder, ParamId, ParamStore};
use crate::tensor::Element;

pub(crate) fn p<B: Backend>(b: &mut B, store: &ParamStore<B::Elem>, id: ParamId) -> B::Value {
    b.param(id, store.get(id))
}

#[derive(Debug, Clone)]
pub struct Norm {
    gain: ParamId,
    bias: ParamId,
}

impl Norm {
    pub fn new<T: Element>(pb: &mut ParamBuilder<T>, name: &str, d: usize) -> Self {
        Norm {
            gain: pb.add(format!("{name}.gain"), vec![d], Init::Ones),
            bias: pb.add(format!("{name}.bias"), vec![d], Init::Zeros),
        }
    }

    pub fn apply<B: Backend>(&self, b: &mut B, s: &ParamStore<B::Elem>, x: &B::Value) -> Result<B::Value> {
        let g = p(b, s, self.gain);
        let bb = p(b, s, self.bias);
        b.layer_norm(x, &g, &bb)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    w: ParamId,
    bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Element>(
        pb: &mut ParamBuilder<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        std: f64,
    ) -> Self {
        Linear {
            w: pb.add(format!("{name}.weight"), vec![d_in, d_out], Init::Normal(std)),
            bias: bias.then(|| pb.add(format!("{name}.bias"), vec![d_out], Init::Zeros)),
        }
    }

    pub fn apply<B: Backend>(&self, b: &mut B, s: &ParamStore<B::Elem>, x: &B::Value) -> Result<B::Value> {
        let w = p(b, s, self.w);
        let y = b.matmul(x, &w)?;
        match self.bias {
            Some(id) => {
                let bb = p(b, s, id);
                b.add_row_vector(&y, &bb)
            }
            None => Ok(y),
        }
    }
}

/// Pre-norm feed-forward with its residual: `x + W2 gelu(W1 norm(x))`.
#[derive(Debug, Clone)]
pub struct Ffn {
    norm: Norm,
    fc1: Linear,
    fc2: Linear,
}

impl Ffn {
    pub fn new<T: Element>(pb: &mut ParamBuilder<T>, name: &str, d: usize, mult: usize, std: f64) -> Self {
        Ffn {
            norm: Norm::new(pb, &format!("{name}.norm"), d),
            fc1: Linear::new(pb, &format!("{name}.fc1"), d, d * mult, true, std),
            fc2: Linear::new(pb, &format!("{name}.fc2"), d * mult, d, true, std),
        }
    }

    pub fn apply<B: Backend>(&self, b: &mut B, s: &ParamStore<B::Elem>, x: &B::Value) -> Result<B::Value> {
        let n = self.norm.apply(b, s, x)?;
        let h = self.fc1.apply(b, s, &n)?;
        let h = b.gelu(&h)?;
        let y = self.fc2.apply(b, s, &h)?;
        b.add(x, &y)
    }
}

/// One attention site with its own projections. Cross sites normalize the
/// key/value source with a separate norm.
#[derive(Debug, Clone)]
pub struct AttnSite {
    norm_q: Norm,
    norm_kv: Option<Norm>,
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    w_o: ParamId,
}

impl AttnSite {
    pub fn new<T: Element>(pb: &mut ParamBuilder<T>, name: &str, d: usize, cross: bool, std: f64) -> Self {
        let mut w = |suffix: &str| pb.add(format!("{name}.{suffix}"), vec![d, d], Init::Normal(std));
        let (w_q, w_k, w_v, w_o) = (w("w_q"), w("w_k"), w("w_v"), w("w_o"));
        AttnSite {
            norm_q: Norm::new(pb, &format!("{name}.norm_q"), d),
            norm_kv: cross.then(|| Norm::new(pb, &format!("{name}.norm_kv"), d)),
            w_q,
            w_k,
            w_v,
            w_o,
        }
    }

    pub fn norm_query<B: Backend>(&self, b: &mut B, s: &ParamStore<B::Elem>, x: &B::Value) -> Result<B::Value> {
        self.norm_q.apply(b, s, x)
    }

    /// Normalized key/value source (the query norm for non-cross sites).
    pub fn norm_source<B: Backend>(&self, b: &mut B, s: &ParamStore<B::Elem>, x: &B::Value) -> Result<B::Value> {
        self.norm_kv.as_ref().unwrap_or(&self.norm_q).apply(b, s, x)
    }

    pub fn project_kv<B: Backend>(
        &self,
        b: &mut B,
        s: &ParamStore<B::Elem>,
        normed: &B::Value,
    ) -> Result<(B::Value, B::Value)> {
        let wk = p(b, s, self.w_k);
        let wv = p(b, s, self.w_v);
        Ok((b.matmul(normed, &wk)?, b.matmul(normed, &wv)?))
    }

    pub fn project_q<B: Backend>(&self, b: &mut B, s: &ParamStore<B::Elem>, normed: &B::Value) -> Result<B::Value> {
        let wq = p(b, s, self.w_q);
        b.matmul(normed, &wq)
    }

    /// Attention over projected `q`, `k`, `v` followed by the output
    /// projection.
    #[allow(clippy::too_many_arguments)]
    pub fn finish<B: Backend>(
        &self,
        b: &mut B,
        s: &ParamStore<B::Elem>,
        q: &B::Value,
        k: &B::Value,
        v: &B::Value,
        n_head: usize,
        mask: Mask<'_>,
    ) -> Result<B::Value> {
        let a = b.attention(q, k, v, n_head, mask)?;
        let wo = p(b, s, self.w_o);
        b.matmul(&a, &wo)
    }
}

/// Causal self-attention of rows `x` whose keys/values extend `prior`
/// (earlier rows of the same window). Returns the attention output and the
/// full key/value tensors including the new rows.
#[allow(clippy::type_complexity)]
pub(crate) fn causal_self_attention<B: Backend>(
    b: &mut B,
    s: &ParamStore<B::Elem>,
    site: &AttnSite,
    x: &B::Value,
    prior: Option<(&B::Value, &B::Value)>,
    n_head: usize,
) -> Result<(B::Value, B::Value, B::Value)> {
    let normed = site.norm_query(b, s, x)?;
    let (k_new, v_new) = site.project_kv(b, s, &normed)?;
    let (k, v) = match prior {
        Some((pk, pv)) => (b.concat_rows(&[pk.clone(), k_new])?, b.concat_rows(&[pv.clone(), v_new])?),
        None => (k_new, v_new),
    };
    let offset = b.rows(&k) - b.rows(x);
    let q = site.project_q(b, s, &normed)?;
    let a = site.finish(b, s, &q, &k, &v, n_head, Mask::Causal { offset })?;
    Ok((a, k, v))
}
