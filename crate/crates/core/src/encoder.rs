//! Contextual encoder: token + learned positional embeddings followed by a
//! stack of single-head post-norm self-attention blocks.

use crate::error::{Error, Result};
use crate::ingest::EncodedExample;
use crate::numeric::{
    add_bias, add_bias_backward, init_xavier, layer_norm, layer_norm_backward, masked_row_softmax,
    matmul, matmul_a_bt, matmul_at_b, matmul_backward, relu, relu_backward, softmax_backward,
    LayerNormCache, Matrix, Rng,
};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Parameters of one attention block. Vectors are `1 × n` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlockParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
    pub ff_w1: Matrix,
    pub ff_b1: Matrix,
    pub ff_w2: Matrix,
    pub ff_b2: Matrix,
}

const BLOCK_TENSOR_NAMES: [&str; 12] = [
    "w_q", "w_k", "w_v", "w_o", "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias", "ff_w1", "ff_b1",
    "ff_w2", "ff_b2",
];

impl AttentionBlockParams {
    /// Xavier-initialized projections, unit gains, zero biases.
    pub fn init(rng: &mut Rng, d: usize, d_k: usize, d_ff: usize) -> Self {
        Self {
            w_q: init_xavier(rng, d, d_k),
            w_k: init_xavier(rng, d, d_k),
            w_v: init_xavier(rng, d, d_k),
            w_o: init_xavier(rng, d_k, d),
            ln1_gain: Matrix::filled(1, d, 1.0),
            ln1_bias: Matrix::zeros(1, d),
            ln2_gain: Matrix::filled(1, d, 1.0),
            ln2_bias: Matrix::zeros(1, d),
            ff_w1: init_xavier(rng, d, d_ff),
            ff_b1: Matrix::zeros(1, d_ff),
            ff_w2: init_xavier(rng, d_ff, d),
            ff_b2: Matrix::zeros(1, d),
        }
    }

    pub fn zeros(d: usize, d_k: usize, d_ff: usize) -> Self {
        Self {
            w_q: Matrix::zeros(d, d_k),
            w_k: Matrix::zeros(d, d_k),
            w_v: Matrix::zeros(d, d_k),
            w_o: Matrix::zeros(d_k, d),
            ln1_gain: Matrix::zeros(1, d),
            ln1_bias: Matrix::zeros(1, d),
            ln2_gain: Matrix::zeros(1, d),
            ln2_bias: Matrix::zeros(1, d),
            ff_w1: Matrix::zeros(d, d_ff),
            ff_b1: Matrix::zeros(1, d_ff),
            ff_w2: Matrix::zeros(d_ff, d),
            ff_b2: Matrix::zeros(1, d),
        }
    }

    pub fn d_model(&self) -> usize {
        self.w_q.rows()
    }

    pub fn d_k(&self) -> usize {
        self.w_q.cols()
    }

    pub fn d_ff(&self) -> usize {
        self.ff_w1.cols()
    }

    pub fn tensor_names() -> &'static [&'static str; 12] {
        &BLOCK_TENSOR_NAMES
    }

    pub fn tensors(&self) -> [&Matrix; 12] {
        [
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_o,
            &self.ln1_gain,
            &self.ln1_bias,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.ff_w1,
            &self.ff_b1,
            &self.ff_w2,
            &self.ff_b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 12] {
        [
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_o,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.ff_w1,
            &mut self.ff_b1,
            &mut self.ff_w2,
            &mut self.ff_b2,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub token_emb: Matrix,
    pub pos_emb: Matrix,
    pub blocks: Vec<AttentionBlockParams>,
}

impl EncoderParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        rng: &mut Rng,
        vocab_size: usize,
        max_len: usize,
        d: usize,
        d_k: usize,
        d_ff: usize,
        layers: usize,
    ) -> Self {
        let token_emb = init_xavier(rng, vocab_size, d);
        let pos_emb = init_xavier(rng, max_len, d);
        let blocks = (0..layers)
            .map(|_| AttentionBlockParams::init(rng, d, d_k, d_ff))
            .collect();
        Self {
            token_emb,
            pos_emb,
            blocks,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            token_emb: self.token_emb.zeros_like(),
            pos_emb: self.pos_emb.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|b| AttentionBlockParams::zeros(b.d_model(), b.d_k(), b.d_ff()))
                .collect(),
        }
    }

    pub fn d_model(&self) -> usize {
        self.token_emb.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.token_emb.rows()
    }

    pub fn max_len(&self) -> usize {
        self.pos_emb.rows()
    }

    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![
            ("encoder.token_emb".to_string(), &self.token_emb),
            ("encoder.pos_emb".to_string(), &self.pos_emb),
        ];
        for (l, block) in self.blocks.iter().enumerate() {
            for (name, t) in BLOCK_TENSOR_NAMES.iter().zip(block.tensors()) {
                out.push((format!("encoder.blocks.{l}.{name}"), t));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.token_emb, &mut self.pos_emb];
        for block in &mut self.blocks {
            out.extend(block.tensors_mut());
        }
        out
    }
}

/// Encoder output: one hidden row per (padded) position, the key-validity
/// mask, and each block's attention matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub h: Matrix,
    pub valid: Vec<bool>,
    pub attention: Vec<Matrix>,
}

impl HiddenStates {
    /// Hidden states with every position valid and no attention maps.
    pub fn all_valid(h: Matrix) -> Self {
        let valid = vec![true; h.rows()];
        Self {
            h,
            valid,
            attention: Vec::new(),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Intermediate values of [`attend_forward`].
#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub input: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    pub weights: Matrix,
    pub context: Matrix,
}

/// Scaled dot-product self-attention: `softmax(QKᵀ/√d_k) V`, projected back
/// to `d` by `W_O`. Invalid key positions receive zero weight.
pub fn attend_forward(
    h: &Matrix,
    block: &AttentionBlockParams,
    valid: &[bool],
) -> Result<(Matrix, AttentionCache)> {
    if h.cols() != block.d_model() {
        return Err(Error::Shape {
            op: "attend",
            left: h.shape(),
            right: block.w_q.shape(),
        });
    }
    let q = matmul(h, &block.w_q)?;
    let k = matmul(h, &block.w_k)?;
    let v = matmul(h, &block.w_v)?;
    let scale = 1.0 / (block.d_k() as f64).sqrt();
    let scores = matmul_a_bt(&q, &k)?.scale(scale);
    let weights = masked_row_softmax(&scores, valid)?;
    let context = matmul(&weights, &v)?;
    let out = matmul(&context, &block.w_o)?;
    Ok((
        out,
        AttentionCache {
            input: h.clone(),
            q,
            k,
            v,
            weights,
            context,
        },
    ))
}

pub fn attend(h: &Matrix, block: &AttentionBlockParams, valid: &[bool]) -> Result<Matrix> {
    Ok(attend_forward(h, block, valid)?.0)
}

/// Backward of [`attend_forward`]. `d_weights` is an optional extra upstream
/// gradient on the attention matrix itself. Parameter gradients are added
/// into `grads`; the gradient w.r.t. the input is returned.
pub fn attend_backward(
    cache: &AttentionCache,
    block: &AttentionBlockParams,
    d_out: &Matrix,
    d_weights: Option<&Matrix>,
    grads: &mut AttentionBlockParams,
) -> Result<Matrix> {
    let (d_context, d_wo) = matmul_backward(&cache.context, &block.w_o, d_out)?;
    grads.w_o.add_assign(&d_wo)?;
    let (mut d_attn, d_v) = matmul_backward(&cache.weights, &cache.v, &d_context)?;
    if let Some(extra) = d_weights {
        d_attn.add_assign(extra)?;
    }
    let scale = 1.0 / (block.d_k() as f64).sqrt();
    let d_scores = softmax_backward(&cache.weights, &d_attn)?.scale(scale);
    let d_q = matmul(&d_scores, &cache.k)?;
    let d_k = matmul_at_b(&d_scores, &cache.q)?;

    grads.w_q.add_assign(&matmul_at_b(&cache.input, &d_q)?)?;
    grads.w_k.add_assign(&matmul_at_b(&cache.input, &d_k)?)?;
    grads.w_v.add_assign(&matmul_at_b(&cache.input, &d_v)?)?;

    let mut d_h = matmul_a_bt(&d_q, &block.w_q)?;
    d_h.add_assign(&matmul_a_bt(&d_k, &block.w_k)?)?;
    d_h.add_assign(&matmul_a_bt(&d_v, &block.w_v)?)?;
    Ok(d_h)
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    pub attn: AttentionCache,
    pub ln1: LayerNormCache,
    pub h1: Matrix,
    pub ff_pre: Matrix,
    pub ff_act: Matrix,
    pub ln2: LayerNormCache,
}

/// Post-norm residual block:
/// `H' = LN(H + attend(H))`, `out = LN(H' + FF(H'))`,
/// `FF(x) = relu(x W1 + b1) W2 + b2`.
pub fn encoder_block_forward(
    h: &Matrix,
    block: &AttentionBlockParams,
    valid: &[bool],
) -> Result<(Matrix, BlockCache)> {
    let (attn_out, attn) = attend_forward(h, block, valid)?;
    let (h1, ln1) = layer_norm(
        &h.add(&attn_out)?,
        &block.ln1_gain,
        &block.ln1_bias,
        LAYER_NORM_EPS,
    )?;
    let ff_pre = add_bias(&matmul(&h1, &block.ff_w1)?, &block.ff_b1)?;
    let ff_act = relu(&ff_pre);
    let ff_out = add_bias(&matmul(&ff_act, &block.ff_w2)?, &block.ff_b2)?;
    let (out, ln2) = layer_norm(
        &h1.add(&ff_out)?,
        &block.ln2_gain,
        &block.ln2_bias,
        LAYER_NORM_EPS,
    )?;
    Ok((
        out,
        BlockCache {
            attn,
            ln1,
            h1,
            ff_pre,
            ff_act,
            ln2,
        },
    ))
}

pub fn encoder_block(h: &Matrix, block: &AttentionBlockParams, valid: &[bool]) -> Result<Matrix> {
    Ok(encoder_block_forward(h, block, valid)?.0)
}

pub fn encoder_block_backward(
    cache: &BlockCache,
    block: &AttentionBlockParams,
    d_out: &Matrix,
    d_weights: Option<&Matrix>,
    grads: &mut AttentionBlockParams,
) -> Result<Matrix> {
    let (d_res2, d_g2, d_b2) = layer_norm_backward(&cache.ln2, &block.ln2_gain, d_out)?;
    grads.ln2_gain.add_assign(&d_g2)?;
    grads.ln2_bias.add_assign(&d_b2)?;

    // Feed-forward branch; the residual passes d_res2 straight to h1.
    grads.ff_b2.add_assign(&add_bias_backward(&d_res2))?;
    let (d_act, d_w2) = matmul_backward(&cache.ff_act, &block.ff_w2, &d_res2)?;
    grads.ff_w2.add_assign(&d_w2)?;
    let d_pre = relu_backward(&cache.ff_pre, &d_act)?;
    grads.ff_b1.add_assign(&add_bias_backward(&d_pre))?;
    let (d_h1_ff, d_w1) = matmul_backward(&cache.h1, &block.ff_w1, &d_pre)?;
    grads.ff_w1.add_assign(&d_w1)?;
    let d_h1 = d_res2.add(&d_h1_ff)?;

    let (d_res1, d_g1, d_b1) = layer_norm_backward(&cache.ln1, &block.ln1_gain, &d_h1)?;
    grads.ln1_gain.add_assign(&d_g1)?;
    grads.ln1_bias.add_assign(&d_b1)?;

    let d_h_attn = attend_backward(&cache.attn, block, &d_res1, d_weights, grads)?;
    d_res1.add(&d_h_attn)
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    pub ids: Vec<u32>,
    pub blocks: Vec<BlockCache>,
}

impl EncoderCache {
    pub fn attention(&self) -> Vec<Matrix> {
        self.blocks.iter().map(|b| b.attn.weights.clone()).collect()
    }
}

fn embed(ids: &[u32], params: &EncoderParams) -> Result<Matrix> {
    if ids.len() > params.max_len() {
        return Err(Error::Dimension(format!(
            "sequence of length {} exceeds positional table of {} rows",
            ids.len(),
            params.max_len()
        )));
    }
    let d = params.d_model();
    let mut h0 = Matrix::zeros(ids.len(), d);
    for (i, &id) in ids.iter().enumerate() {
        if id as usize >= params.vocab_size() {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: params.vocab_size(),
            });
        }
        let tok = params.token_emb.row(id as usize);
        let pos = params.pos_emb.row(i);
        for ((out, t), p) in h0.row_mut(i).iter_mut().zip(tok).zip(pos) {
            *out = t + p;
        }
    }
    Ok(h0)
}

/// Runs embeddings and every block over `ids`, masking invalid keys.
pub fn encoder_forward(
    ids: &[u32],
    valid: &[bool],
    params: &EncoderParams,
) -> Result<(Matrix, EncoderCache)> {
    if ids.len() != valid.len() {
        return Err(Error::Dimension(format!(
            "{} ids but {} validity flags",
            ids.len(),
            valid.len()
        )));
    }
    let mut h = embed(ids, params)?;
    let mut caches = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (next, cache) = encoder_block_forward(&h, block, valid)?;
        caches.push(cache);
        h = next;
    }
    Ok((
        h,
        EncoderCache {
            ids: ids.to_vec(),
            blocks: caches,
        },
    ))
}

/// Backward through the blocks and embeddings. `d_last_attention` is an
/// optional gradient on the final block's attention matrix.
pub fn encoder_backward(
    cache: &EncoderCache,
    params: &EncoderParams,
    d_h: &Matrix,
    d_last_attention: Option<&Matrix>,
    grads: &mut EncoderParams,
) -> Result<()> {
    let mut d = d_h.clone();
    let last = cache.blocks.len().checked_sub(1);
    for (l, block_cache) in cache.blocks.iter().enumerate().rev() {
        let extra = if Some(l) == last {
            d_last_attention
        } else {
            None
        };
        d = encoder_block_backward(
            block_cache,
            &params.blocks[l],
            &d,
            extra,
            &mut grads.blocks[l],
        )?;
    }
    for (i, &id) in cache.ids.iter().enumerate() {
        let row = d.row(i);
        for (g, v) in grads.token_emb.row_mut(id as usize).iter_mut().zip(row) {
            *g += v;
        }
        for (g, v) in grads.pos_emb.row_mut(i).iter_mut().zip(row) {
            *g += v;
        }
    }
    Ok(())
}

/// Encodes a padded example: every position gets a hidden row, and padded
/// positions are excluded as attention keys.
pub fn encode_sequence(example: &EncodedExample, params: &EncoderParams) -> Result<HiddenStates> {
    if example.true_len == 0 || example.true_len > example.ids.len() {
        return Err(Error::Dimension(format!(
            "true_len {} outside 1..={}",
            example.true_len,
            example.ids.len()
        )));
    }
    let valid = example.valid_mask();
    let (h, cache) = encoder_forward(&example.ids, &valid, params)?;
    Ok(HiddenStates {
        h,
        valid,
        attention: cache.attention(),
    })
}
