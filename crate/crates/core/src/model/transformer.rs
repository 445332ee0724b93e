//! Tiny pre-norm transformer encoder classifier.
//!
//! ```text
//! x₀ = E[tokens] + P[0..T]
//! xᵢ₊₁ = xᵢ' + FFN(LN₂(xᵢ')),  xᵢ' = xᵢ + MHA(LN₁(xᵢ))
//! logits = mean_t(LN_f(x_L)) · W_head + b_head
//! ```
//!
//! FFN is `GELU(h·W₁ + b₁)·W₂ + b₂` with the tanh GELU approximation. An
//! empty token sequence pools to the zero vector, so its logits are `b_head`.

use super::{Batch, Input, TransformerSpec};
use crate::autodiff::{NodeId, Tape};
use crate::params::ParameterVector;
use crate::rng;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// `U(−1/√fan_in, 1/√fan_in)`
    Uniform {
        fan_in: usize,
    },
    Zeros,
    Ones,
}

/// One named tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSlot {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

#[derive(Debug, Clone, Copy)]
struct LayerSlots {
    ln1: (usize, usize),
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2: (usize, usize),
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Offsets of every tensor of a [`TransformerSpec`].
///
/// With `V` vocabulary, `D` embedding width, `S` max sequence length, `F`
/// feed-forward width, `N` layers and `C` classes the parameter count is
///
/// ```text
/// d = V·D + S·D + N·(4D² + 2DF + 9D + F) + 2D + D·C + C
/// ```
#[derive(Debug, Clone)]
pub struct TransformerLayout {
    slots: Vec<TensorSlot>,
    tok_emb: usize,
    pos_emb: usize,
    layers: Vec<LayerSlots>,
    lnf: (usize, usize),
    head_w: usize,
    head_b: usize,
    total: usize,
}

impl TransformerLayout {
    pub fn new(spec: &TransformerSpec) -> Self {
        let d = spec.embed_dim;
        let f = spec.ffn_dim;
        let mut slots = Vec::new();
        let mut offset = 0;
        let mut add = |name: String, rows: usize, cols: usize, init: Init| {
            let at = offset;
            slots.push(TensorSlot {
                name,
                offset: at,
                rows,
                cols,
                init,
            });
            offset += rows * cols;
            at
        };
        let tok_emb = add("tok_emb".into(), spec.vocab_size, d, Init::Uniform { fan_in: d });
        let pos_emb = add("pos_emb".into(), spec.max_seq_len, d, Init::Uniform { fan_in: d });
        let mut layers = Vec::with_capacity(spec.num_layers);
        for l in 0..spec.num_layers {
            let p = |s: &str| format!("layer{l}.{s}");
            let ln1 = (
                add(p("ln1.gain"), 1, d, Init::Ones),
                add(p("ln1.bias"), 1, d, Init::Zeros),
            );
            let wq = add(p("attn.wq"), d, d, Init::Uniform { fan_in: d });
            let bq = add(p("attn.bq"), 1, d, Init::Zeros);
            let wk = add(p("attn.wk"), d, d, Init::Uniform { fan_in: d });
            let bk = add(p("attn.bk"), 1, d, Init::Zeros);
            let wv = add(p("attn.wv"), d, d, Init::Uniform { fan_in: d });
            let bv = add(p("attn.bv"), 1, d, Init::Zeros);
            let wo = add(p("attn.wo"), d, d, Init::Uniform { fan_in: d });
            let bo = add(p("attn.bo"), 1, d, Init::Zeros);
            let ln2 = (
                add(p("ln2.gain"), 1, d, Init::Ones),
                add(p("ln2.bias"), 1, d, Init::Zeros),
            );
            let w1 = add(p("ffn.w1"), d, f, Init::Uniform { fan_in: d });
            let b1 = add(p("ffn.b1"), 1, f, Init::Zeros);
            let w2 = add(p("ffn.w2"), f, d, Init::Uniform { fan_in: f });
            let b2 = add(p("ffn.b2"), 1, d, Init::Zeros);
            layers.push(LayerSlots {
                ln1,
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln2,
                w1,
                b1,
                w2,
                b2,
            });
        }
        let lnf = (
            add("lnf.gain".into(), 1, d, Init::Ones),
            add("lnf.bias".into(), 1, d, Init::Zeros),
        );
        let head_w = add("head.w".into(), d, spec.num_classes, Init::Uniform { fan_in: d });
        let head_b = add("head.b".into(), 1, spec.num_classes, Init::Zeros);
        Self {
            slots,
            tok_emb,
            pos_emb,
            layers,
            lnf,
            head_w,
            head_b,
            total: offset,
        }
    }

    pub fn num_params(&self) -> usize {
        self.total
    }

    pub fn slots(&self) -> &[TensorSlot] {
        &self.slots
    }
}

pub(super) fn init(spec: &TransformerSpec, seed: u64) -> ParameterVector {
    let layout = TransformerLayout::new(spec);
    let mut rng = rng::seeded(seed);
    let mut values = Vec::with_capacity(layout.total);
    for slot in &layout.slots {
        let n = slot.rows * slot.cols;
        match slot.init {
            Init::Zeros => values.extend(std::iter::repeat_n(0.0, n)),
            Init::Ones => values.extend(std::iter::repeat_n(1.0, n)),
            Init::Uniform { fan_in } => {
                let a = 1.0 / (fan_in as f64).sqrt();
                values.extend((0..n).map(|_| rng.gen_range(-a..a)));
            }
        }
    }
    ParameterVector::from_vec(values)
}

/// Builds the forward graph for one sequence; returns the `1 × C` logits node.
fn forward(spec: &TransformerSpec, layout: &TransformerLayout, tape: &mut Tape, tokens: &[u32]) -> NodeId {
    let d = spec.embed_dim;
    let c = spec.num_classes;
    let head_b = tape.param(layout.head_b, 1, c);
    if tokens.is_empty() {
        return head_b;
    }
    let t = tokens.len();
    let dh = d / spec.num_heads;
    let attn_scale = 1.0 / (dh as f64).sqrt();

    let tok = tape.gather(layout.tok_emb, d, tokens);
    let pos = tape.param(layout.pos_emb, t, d);
    let mut x = tape.add(tok, pos);

    for ls in &layout.layers {
        let g1 = tape.param(ls.ln1.0, 1, d);
        let b1 = tape.param(ls.ln1.1, 1, d);
        let h = tape.layer_norm(x, g1, b1);
        let proj = |tape: &mut Tape, w: usize, b: usize| {
            let wn = tape.param(w, d, d);
            let bn = tape.param(b, 1, d);
            let m = tape.matmul(h, wn);
            tape.add_row(m, bn)
        };
        let q = proj(tape, ls.wq, ls.bq);
        let k = proj(tape, ls.wk, ls.bk);
        let v = proj(tape, ls.wv, ls.bv);
        let mut heads = Vec::with_capacity(spec.num_heads);
        for j in 0..spec.num_heads {
            let qh = tape.slice_cols(q, j * dh, dh);
            let kh = tape.slice_cols(k, j * dh, dh);
            let vh = tape.slice_cols(v, j * dh, dh);
            let scores = tape.matmul_nt(qh, kh);
            let scores = tape.scale(scores, attn_scale);
            let weights = tape.softmax_rows(scores);
            heads.push(tape.matmul(weights, vh));
        }
        let concat = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)
        };
        let wo = tape.param(ls.wo, d, d);
        let bo = tape.param(ls.bo, 1, d);
        let a = tape.matmul(concat, wo);
        let a = tape.add_row(a, bo);
        x = tape.add(x, a);

        let g2 = tape.param(ls.ln2.0, 1, d);
        let b2n = tape.param(ls.ln2.1, 1, d);
        let h2 = tape.layer_norm(x, g2, b2n);
        let w1 = tape.param(ls.w1, d, spec.ffn_dim);
        let b1n = tape.param(ls.b1, 1, spec.ffn_dim);
        let u = tape.matmul(h2, w1);
        let u = tape.add_row(u, b1n);
        let u = tape.gelu(u);
        let w2 = tape.param(ls.w2, spec.ffn_dim, d);
        let b2 = tape.param(ls.b2, 1, d);
        let f = tape.matmul(u, w2);
        let f = tape.add_row(f, b2);
        x = tape.add(x, f);
    }

    let gf = tape.param(layout.lnf.0, 1, d);
    let bf = tape.param(layout.lnf.1, 1, d);
    let z = tape.layer_norm(x, gf, bf);
    let pooled = tape.mean_rows(z);
    let hw = tape.param(layout.head_w, d, c);
    let out = tape.matmul(pooled, hw);
    tape.add_row(out, head_b)
}

pub(super) fn logits(spec: &TransformerSpec, params: &[f64], tokens: &[u32]) -> Vec<f64> {
    let layout = TransformerLayout::new(spec);
    let mut tape = Tape::new(params);
    let out = forward(spec, &layout, &mut tape, tokens);
    tape.value(out).data.clone()
}

pub(super) fn loss_and_gradient(spec: &TransformerSpec, params: &[f64], batch: &Batch) -> (f64, Vec<f64>) {
    let layout = TransformerLayout::new(spec);
    let mut grad = vec![0.0; params.len()];
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for ex in batch.iter() {
        let Input::Tokens(tokens) = &ex.input else {
            unreachable!("checked by ModelSpec::check_example")
        };
        let mut tape = Tape::new(params);
        let z = forward(spec, &layout, &mut tape, tokens);
        let l = tape.cross_entropy(z, ex.label);
        total += tape.value(l).data[0];
        tape.backward(l, scale, &mut grad);
    }
    (total / batch.len() as f64, grad)
}
