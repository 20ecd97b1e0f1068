//! Reverse-mode differentiation over a recorded tape of 64-bit tensors.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is
//! a valid topological order. [`Tape::backward`] consumes the tape.

use std::collections::HashMap;

use crate::attention::{attention_core, Mask};
use crate::error::{dim_err, Error, Result};
use crate::ledger::FlopLedger;
use crate::params::ParamId;
use crate::tensor::{
    self, gelu_grad_scalar, gemm_into, layer_norm, ensure_finite, MatRef, NormStats, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    AddRowVector(Var, Var),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    LayerNorm { x: Var, gain: Var, bias: Var, stats: NormStats<f64> },
    Gelu(Var),
    Attention { q: Var, k: Var, v: Var, n_head: usize, probs: Vec<f64> },
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    Gather { table: Var, ids: Vec<usize> },
    CrossEntropySum { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    ledger: FlopLedger,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor<f64>>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<f64>> {
        self.params.get(&id).and_then(|v| self.get(*v))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ledger(&self) -> &FlopLedger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut FlopLedger {
        &mut self.ledger
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<f64> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn leaf(&mut self, t: Tensor<f64>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    /// Leaf for a model parameter; one leaf per parameter per tape.
    pub fn param(&mut self, id: ParamId, t: &Tensor<f64>) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let v = self.leaf(t.clone(), true);
        self.params.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::add(self.value(a), self.value(b))?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return dim_err(format!("mul {:?} vs {:?}", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let x = self.value(a);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * s).collect())?;
        let ng = self.ng(&[a]);
        Ok(self.push(out, Op::Scale(a, s), ng))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        let out = Tensor::new(vec![], vec![s])?;
        let ng = self.ng(&[a]);
        Ok(self.push(out, Op::Sum(a), ng))
    }

    pub fn add_row_vector(&mut self, x: Var, b: Var) -> Result<Var> {
        let out = tensor::add_row_vector(self.value(x), self.value(b))?;
        let ng = self.ng(&[x, b]);
        Ok(self.push(out, Op::AddRowVector(x, b), ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(&self.nodes[a.0].value, &self.nodes[b.0].value, &mut self.ledger)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul_nt(&self.nodes[a.0].value, &self.nodes[b.0].value, &mut self.ledger)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::MatMulNt(a, b), ng))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (out, stats) = layer_norm(self.value(x), self.value(gain), self.value(bias))?;
        let ng = self.ng(&[x, gain, bias]);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, stats }, ng))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = tensor::gelu(self.value(x))?;
        let ng = self.ng(&[x]);
        Ok(self.push(out, Op::Gelu(x), ng))
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, n_head: usize, mask: Mask<'_>) -> Result<Var> {
        let res = attention_core(
            &self.nodes[q.0].value,
            &self.nodes[k.0].value,
            &self.nodes[v.0].value,
            n_head,
            mask,
            &mut self.ledger,
            true,
        )?;
        let ng = self.ng(&[q, k, v]);
        let probs = res.probs.expect("probabilities kept");
        Ok(self.push(res.out, Op::Attention { q, k, v, n_head, probs }, ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let out = tensor::slice_rows(self.value(x), start, end)?;
        let ng = self.ng(&[x]);
        Ok(self.push(out, Op::SliceRows { x, start }, ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<f64>> = parts.iter().map(|p| self.value(*p)).collect();
        let out = tensor::concat_rows(&refs)?;
        let ng = self.ng(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let out = tensor::gather_rows(self.value(table), ids)?;
        let ng = self.ng(&[table]);
        Ok(self.push(out, Op::Gather { table, ids: ids.to_vec() }, ng))
    }

    /// Sum over rows of `-log softmax(logits_i)[targets_i]`.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (loss, probs) = cross_entropy_forward(self.value(logits), targets)?;
        let ng = self.ng(&[logits]);
        Ok(self.push(
            Tensor::new(vec![], vec![loss])?,
            Op::CrossEntropySum { logits, targets: targets.to_vec(), probs },
            ng,
        ))
    }

    /// Back-propagates from a scalar `loss`; consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(self.value(loss).shape().to_vec(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&node.op, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for g in grads.iter().flatten() {
            ensure_finite(g.data(), "backward")?;
        }
        Ok(Gradients { grads, params: self.params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<f64>>], v: Var, delta: Tensor<f64>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(
        &self,
        op: &Op,
        g: &Tensor<f64>,
        grads: &mut [Option<Tensor<f64>>],
    ) -> Result<()> {
        let mut scratch = FlopLedger::new();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let ga = g.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
                let gb = g.data().iter().zip(x.data()).map(|(p, q)| p * q).collect();
                self.accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), ga));
                self.accumulate(grads, *b, Tensor::from_parts(y.shape().to_vec(), gb));
            }
            Op::Scale(a, s) => {
                let d = g.data().iter().map(|v| v * s).collect();
                self.accumulate(grads, *a, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, Tensor::from_parts(x.shape().to_vec(), vec![g.data()[0]; x.len()]));
            }
            Op::AddRowVector(x, b) => {
                self.accumulate(grads, *x, g.clone());
                let c = g.cols();
                let mut gb = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (acc, v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                let shape = self.value(*b).shape().to_vec();
                self.accumulate(grads, *b, Tensor::from_parts(shape, gb));
            }
            Op::MatMul(a, b) => {
                // C = A B: dA = dC B^T, dB = A^T dC
                let (x, y) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    self.accumulate(grads, *a, tensor::matmul_nt(g, y, &mut scratch)?);
                }
                if self.nodes[b.0].needs_grad {
                    self.accumulate(grads, *b, tensor::matmul_tn(x, g, &mut scratch)?);
                }
            }
            Op::MatMulNt(a, b) => {
                // C = A B^T: dA = dC B, dB = dC^T A
                let (x, y) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    self.accumulate(grads, *a, tensor::matmul(g, y, &mut scratch)?);
                }
                if self.nodes[b.0].needs_grad {
                    self.accumulate(grads, *b, tensor::matmul_tn(g, x, &mut scratch)?);
                }
            }
            Op::LayerNorm { x, gain, bias, stats } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let d = xv.cols();
                let mut dx = vec![0.0; xv.len()];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                let mut xhat = vec![0.0; d];
                let mut dxhat = vec![0.0; d];
                for (r, ((xr, gr), dxr)) in xv
                    .data()
                    .chunks(d)
                    .zip(g.data().chunks(d))
                    .zip(dx.chunks_mut(d))
                    .enumerate()
                {
                    let (mu, rs) = (stats.mean[r], stats.rstd[r]);
                    for j in 0..d {
                        xhat[j] = (xr[j] - mu) * rs;
                        dxhat[j] = gr[j] * gv.data()[j];
                        dgain[j] += gr[j] * xhat[j];
                        dbias[j] += gr[j];
                    }
                    let m1 = dxhat.iter().sum::<f64>() / d as f64;
                    let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for j in 0..d {
                        dxr[j] = rs * (dxhat[j] - m1 - xhat[j] * m2);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), dx));
                self.accumulate(grads, *gain, Tensor::from_parts(gv.shape().to_vec(), dgain));
                let bshape = self.value(*bias).shape().to_vec();
                self.accumulate(grads, *bias, Tensor::from_parts(bshape, dbias));
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let d = xv.data().iter().zip(g.data()).map(|(&a, &b)| gelu_grad_scalar(a) * b).collect();
                self.accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), d));
            }
            Op::Attention { q, k, v, n_head, probs } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (dq, dk, dv) = attention_backward(qv, kv, vv, *n_head, probs, g);
                self.accumulate(grads, *q, dq);
                self.accumulate(grads, *k, dk);
                self.accumulate(grads, *v, dv);
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut d = vec![0.0; xv.len()];
                d[start * c..start * c + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), d));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let len = pv.len();
                    let d = g.data()[offset..offset + len].to_vec();
                    self.accumulate(grads, *p, Tensor::from_parts(pv.shape().to_vec(), d));
                    offset += len;
                }
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let c = tv.cols();
                let mut d = vec![0.0; tv.len()];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..c {
                        d[id * c + j] += g.data()[r * c + j];
                    }
                }
                self.accumulate(grads, *table, Tensor::from_parts(tv.shape().to_vec(), d));
            }
            Op::CrossEntropySum { logits, targets, probs } => {
                let lv = self.value(*logits);
                let c = lv.cols();
                let scale = g.data()[0];
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * c + t] -= scale;
                }
                self.accumulate(grads, *logits, Tensor::from_parts(lv.shape().to_vec(), d));
            }
        }
        Ok(())
    }
}

/// Loss value and softmax probabilities for [`Tape::cross_entropy_sum`].
pub(crate) fn cross_entropy_forward(logits: &Tensor<f64>, targets: &[usize]) -> Result<(f64, Vec<f64>)> {
    let c = logits.cols();
    if logits.rows() != targets.len() {
        return dim_err(format!("{} logit rows for {} targets", logits.rows(), targets.len()));
    }
    let mut probs = logits.data().to_vec();
    let mut loss = 0.0;
    for (row, &t) in probs.chunks_mut(c).zip(targets) {
        if t >= c {
            return dim_err(format!("target {t} outside {c} classes"));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[t];
        tensor::softmax_in_place(row);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("cross_entropy"));
    }
    Ok((loss, probs))
}

fn attention_backward(
    q: &Tensor<f64>,
    k: &Tensor<f64>,
    v: &Tensor<f64>,
    n_head: usize,
    probs: &[f64],
    dout: &Tensor<f64>,
) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
    let (lq, d, lk) = (q.rows(), q.cols(), k.rows());
    let dk = d / n_head;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut dq = vec![0.0; lq * d];
    let mut dkk = vec![0.0; lk * d];
    let mut dv = vec![0.0; lk * d];
    let mut dp = vec![0.0; lq * lk];
    for h in 0..n_head {
        let c0 = h * dk;
        let p = MatRef::row_major(&probs[h * lq * lk..(h + 1) * lq * lk], lq, lk);
        let doh = MatRef { data: &dout.data()[c0..], rows: lq, cols: dk, rs: d, cs: 1 };
        let vh = MatRef { data: &v.data()[c0..], rows: lk, cols: dk, rs: d, cs: 1 };
        let kh = MatRef { data: &k.data()[c0..], rows: lk, cols: dk, rs: d, cs: 1 };
        let qh = MatRef { data: &q.data()[c0..], rows: lq, cols: dk, rs: d, cs: 1 };
        // dV = P^T dO
        gemm_into(1.0, p.t(), doh, 0.0, &mut dv[c0..], d, 1);
        // dP = dO V^T
        gemm_into(1.0, doh, vh.t(), 0.0, &mut dp, lk, 1);
        // dS = P * (dP - rowsum(dP * P))
        for i in 0..lq {
            let prow = &p.data[i * lk..(i + 1) * lk];
            let drow = &mut dp[i * lk..(i + 1) * lk];
            let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
            for (dd, pp) in drow.iter_mut().zip(prow) {
                *dd = pp * (*dd - dot);
            }
        }
        let ds = MatRef::row_major(&dp, lq, lk);
        gemm_into(scale, ds, kh, 0.0, &mut dq[c0..], d, 1);
        gemm_into(scale, ds.t(), qh, 0.0, &mut dkk[c0..], d, 1);
    }
    (
        Tensor::from_parts(vec![lq, d], dq),
        Tensor::from_parts(vec![lk, d], dkk),
        Tensor::from_parts(vec![lk, d], dv),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    /// Central differences of `f` with respect to every entry of `inputs[which]`.
    fn finite_diff(
        inputs: &[Tensor<f64>],
        which: usize,
        f: &dyn Fn(&mut Tape, &[Var]) -> Var,
    ) -> Vec<f64> {
        let h = 1e-5;
        let mut out = Vec::new();
        for e in 0..inputs[which].len() {
            let eval = |delta: f64| {
                let mut tape = Tape::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let mut t = t.clone();
                        if i == which {
                            t.data_mut()[e] += delta;
                        }
                        tape.leaf(t, false)
                    })
                    .collect();
                let l = f(&mut tape, &vars);
                tape.value(l).data()[0]
            };
            out.push((eval(h) - eval(-h)) / (2.0 * h));
        }
        out
    }

    fn check_grads(inputs: Vec<Tensor<f64>>, f: &dyn Fn(&mut Tape, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let loss = f(&mut tape, &vars);
        let grads = tape.backward(loss).unwrap();
        for (i, v) in vars.iter().enumerate() {
            let analytic = grads.get(*v).map(|g| g.data().to_vec()).unwrap_or(vec![0.0; inputs[i].len()]);
            let numeric = finite_diff(&inputs, i, f);
            let num: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
            assert!(num <= 1e-4 * den.max(1e-12), "input {i}: rel err {}", num / den);
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(), true);
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn linear_map_gradient_is_outer_product() {
        // loss = sum(x W) -> dW[i][j] = sum_r x[r][i]
        let mut tape = Tape::new();
        let xt = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = tape.leaf(xt, false);
        let w = tape.leaf(Tensor::matrix(2, 3, vec![0.5; 6]).unwrap(), true);
        let y = tape.matmul(x, w).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[4.0, 4.0, 4.0, 6.0, 6.0, 6.0]);
        assert!(g.get(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![2, 2]), true);
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn op_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let w = random(3, 5, &mut rng);
        // matmul, matmul_nt, add_row_vector, gelu, mul
        check_grads(
            vec![random(4, 3, &mut rng), random(3, 5, &mut rng), random(1, 5, &mut rng).reshape(vec![5]).unwrap(), random(2, 5, &mut rng)],
            &|t, v| {
                let a = t.matmul(v[0], v[1]).unwrap();
                let b = t.add_row_vector(a, v[2]).unwrap();
                let c = t.gelu(b).unwrap();
                let d = t.matmul_nt(c, v[3]).unwrap();
                let e = t.mul(d, d).unwrap();
                t.sum(e).unwrap()
            },
        );
        // layer norm + slice + concat + scale
        check_grads(
            vec![random(4, 5, &mut rng), random(1, 5, &mut rng).reshape(vec![5]).unwrap(), random(1, 5, &mut rng).reshape(vec![5]).unwrap()],
            &|t, v| {
                let y = t.layer_norm(v[0], v[1], v[2]).unwrap();
                let a = t.slice_rows(y, 1, 3).unwrap();
                let b = t.slice_rows(y, 0, 1).unwrap();
                let c = t.concat_rows(&[a, b, a]).unwrap();
                let wv = t.leaf(w.clone(), false);
                let c2 = t.scale(c, 0.7).unwrap();
                let p = t.matmul_nt(c2, wv).unwrap();
                let q = t.mul(p, p).unwrap();
                t.sum(q).unwrap()
            },
        );
    }

    #[test]
    fn attention_and_cross_entropy_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for mask_causal in [false, true] {
            check_grads(
                vec![random(4, 6, &mut rng), random(4, 6, &mut rng), random(4, 6, &mut rng), random(7, 6, &mut rng)],
                &|t, v| {
                    let mask = if mask_causal { Mask::Causal { offset: 0 } } else { Mask::None };
                    let a = t.attention(v[0], v[1], v[2], 2, mask).unwrap();
                    let logits = t.matmul_nt(a, v[3]).unwrap();
                    t.cross_entropy_sum(logits, &[1, 0, 6, 3]).unwrap()
                },
            );
        }
        // gather
        check_grads(vec![random(5, 3, &mut rng), random(3, 4, &mut rng)], &|t, v| {
            let e = t.gather(v[0], &[4, 1, 1, 0]).unwrap();
            let l = t.matmul(e, v[1]).unwrap();
            t.cross_entropy_sum(l, &[0, 1, 2, 3]).unwrap()
        });
    }

    #[test]
    fn param_leaves_are_deduplicated() {
        let mut tape = Tape::new();
        let t = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let a = tape.param(ParamId(3), &t);
        let b = tape.param(ParamId(3), &t);
        assert_eq!(a, b);
        let s = tape.add(a, b).unwrap();
        let s = tape.sum(s).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.param(ParamId(3)).unwrap().data(), &[2.0, 2.0]);
    }
}
