//! Exact multi-head softmax attention and the four connection patterns:
//! full self-attention, causal self-attention, focused attention (a query
//! subset over the full input) and cross attention.

use crate::error::{dim_err, Error, Result};
use crate::ledger::FlopLedger;
use crate::tensor::{ensure_finite, gemm_into, matmul, softmax_in_place, Element, MatRef, Tensor};

/// Additive value for disallowed query–key pairs.
pub const MASK_NEG: f64 = -1e9;

/// Query rows processed per score block.
const ROW_BLOCK: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttentionPattern {
    SelfFull,
    Causal,
    /// Queries are the listed input positions; keys and values are the whole
    /// input.
    Focused { query_selection: Vec<usize> },
    Cross,
}

impl AttentionPattern {
    /// Query positions `[len - width, len)`: the most recent `width` rows.
    pub fn focused_tail(len: usize, width: usize) -> Self {
        AttentionPattern::Focused { query_selection: (len - width.min(len)..len).collect() }
    }

    fn validate(&self, lx: usize) -> Result<()> {
        if let AttentionPattern::Focused { query_selection } = self {
            if query_selection.windows(2).any(|w| w[0] >= w[1]) {
                return dim_err("focused query selection must be strictly increasing");
            }
            if query_selection.iter().any(|&i| i >= lx) {
                return dim_err(format!("focused query selection outside [0, {lx})"));
            }
        }
        Ok(())
    }
}

/// Mask handed to the kernel.
#[derive(Debug, Clone, Copy)]
pub enum Mask<'a> {
    None,
    /// Query `i` may attend to key `j` iff `j <= i + offset`. With
    /// `offset = Lk - Lq` the last query sees every key.
    Causal { offset: usize },
    /// Explicit `[Lq x Lk]` additive mask.
    Additive(&'a Tensor<f64>),
}

/// Additive mask for a pattern: `0` where allowed, [`MASK_NEG`] elsewhere.
/// Only the causal pattern disallows pairs; focused selection acts on query
/// rows, not on the mask.
pub fn build_mask(pattern: &AttentionPattern, lq: usize, lk: usize) -> Result<Tensor<f64>> {
    if lq == 0 || lk == 0 {
        return dim_err("mask dimensions must be positive");
    }
    let mut data = vec![0.0; lq * lk];
    if *pattern == AttentionPattern::Causal {
        let offset = lk.saturating_sub(lq);
        for i in 0..lq {
            for j in (i + offset + 1).min(lk)..lk {
                data[i * lk + j] = MASK_NEG;
            }
        }
    }
    Tensor::matrix(lq, lk, data)
}

/// Output of [`attention_core`].
#[derive(Debug, Clone)]
pub struct AttentionOutput<T> {
    pub out: Tensor<T>,
    /// Softmax weights laid out `[head][query][key]`, kept when requested.
    pub probs: Option<Vec<T>>,
}

/// `softmax(Q K^T / sqrt(d_k) + mask) V` per head, heads concatenated.
///
/// `q` is `[Lq x D]`, `k` and `v` are `[Lk x D]`. Charges `Lq*Lk*D`
/// interaction units regardless of the mask.
pub fn attention_core<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    n_head: usize,
    mask: Mask<'_>,
    ledger: &mut FlopLedger,
    keep_probs: bool,
) -> Result<AttentionOutput<T>> {
    let (lq, d) = (q.rows(), q.cols());
    let lk = k.rows();
    if k.cols() != d || v.cols() != d || v.rows() != lk {
        return dim_err(format!(
            "attention shapes q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        ));
    }
    if n_head == 0 || d % n_head != 0 {
        return dim_err(format!("width {d} not divisible by {n_head} heads"));
    }
    if lk == 0 {
        return dim_err("attention over zero keys");
    }
    if let Mask::Additive(m) = mask {
        if m.rows() != lq || m.cols() != lk {
            return dim_err(format!("mask {:?} for {lq}x{lk} scores", m.shape()));
        }
        for i in 0..lq {
            if m.row(i).iter().all(|&x| x <= MASK_NEG / 2.0) {
                return Err(Error::DegenerateMask { row: i });
            }
        }
    }
    let dk = d / n_head;
    let scale = T::one() / T::from_usize(dk).unwrap().sqrt();
    let neg = T::from_f64_lossy(MASK_NEG);
    let mut out = vec![T::zero(); lq * d];
    let mut probs = if keep_probs { Some(vec![T::zero(); n_head * lq * lk]) } else { None };
    let block = ROW_BLOCK.min(lq.max(1));
    let mut scores = vec![T::zero(); block * lk];

    for h in 0..n_head {
        let col0 = h * dk;
        let kh = MatRef { data: &k.data()[col0..], rows: lk, cols: dk, rs: d, cs: 1 };
        let vh = MatRef { data: &v.data()[col0..], rows: lk, cols: dk, rs: d, cs: 1 };
        let mut r0 = 0;
        while r0 < lq {
            let br = block.min(lq - r0);
            let qh = MatRef { data: &q.data()[r0 * d + col0..], rows: br, cols: dk, rs: d, cs: 1 };
            let s = &mut scores[..br * lk];
            gemm_into(scale, qh, kh.t(), T::zero(), s, lk, 1);
            for (bi, row) in s.chunks_mut(lk).enumerate() {
                let i = r0 + bi;
                match mask {
                    Mask::None => {}
                    Mask::Causal { offset } => {
                        for x in row.iter_mut().skip(i + offset + 1) {
                            *x = *x + neg;
                        }
                    }
                    Mask::Additive(m) => {
                        for (x, &mv) in row.iter_mut().zip(m.row(i)) {
                            *x = *x + T::from_f64_lossy(mv);
                        }
                    }
                }
                softmax_in_place(row);
            }
            if let Some(p) = probs.as_mut() {
                let base = (h * lq + r0) * lk;
                p[base..base + br * lk].copy_from_slice(s);
            }
            let pm = MatRef::row_major(&scores[..br * lk], br, lk);
            gemm_into(T::one(), pm, vh, T::zero(), &mut out[r0 * d + col0..], d, 1);
            r0 += br;
        }
    }
    ledger.charge_attention(lq, lk, d);
    ensure_finite(&out, "attention")?;
    Ok(AttentionOutput { out: Tensor::from_parts(vec![lq, d], out), probs })
}

/// Projection matrices of one attention site, each `[D x D]`.
#[derive(Debug, Clone)]
pub struct Projections<T> {
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub w_o: Tensor<T>,
}

impl<T: Element> Projections<T> {
    pub fn identity(d: usize) -> Self {
        let i = Tensor::identity(d);
        Projections { w_q: i.clone(), w_k: i.clone(), w_v: i.clone(), w_o: i }
    }
}

/// Source rows of one attention call. For self, causal and focused
/// patterns keys and values come from the same sequence `x`; for cross
/// attention the queries come from `x` and keys/values from `context`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionInputs<'a, T> {
    pub x: &'a Tensor<T>,
    pub context: Option<&'a Tensor<T>>,
    pub n_head: usize,
}

/// Projected multi-head attention for one pattern.
pub fn attend<T: Element>(
    inputs: AttentionInputs<'_, T>,
    pattern: &AttentionPattern,
    proj: &Projections<T>,
    ledger: &mut FlopLedger,
) -> Result<Tensor<T>> {
    let x = inputs.x;
    pattern.validate(x.rows())?;
    let kv_src = match (pattern, inputs.context) {
        (AttentionPattern::Cross, Some(c)) => c,
        (AttentionPattern::Cross, None) => return dim_err("cross attention needs a context"),
        (_, _) => x,
    };
    let q_src = match pattern {
        AttentionPattern::Focused { query_selection } => {
            let mut rows = Vec::with_capacity(query_selection.len() * x.cols());
            for &i in query_selection {
                rows.extend_from_slice(x.row(i));
            }
            Tensor::matrix(query_selection.len(), x.cols(), rows)?
        }
        _ => x.clone(),
    };
    if *pattern == AttentionPattern::Causal && q_src.rows() != kv_src.rows() {
        return dim_err("causal attention needs Lq == Lk");
    }
    let q = matmul(&q_src, &proj.w_q, ledger)?;
    let k = matmul(kv_src, &proj.w_k, ledger)?;
    let v = matmul(kv_src, &proj.w_v, ledger)?;
    let mask = match pattern {
        AttentionPattern::Causal => Mask::Causal { offset: 0 },
        _ => Mask::None,
    };
    let att = attention_core(&q, &k, &v, inputs.n_head, mask, ledger, false)?;
    matmul(&att.out, &proj.w_o, ledger)
}
