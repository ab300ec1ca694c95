//! Small BERT-style encoder with a scalar regression head.
//!
//! Word and positional embeddings are summed and passed through
//! `num_layers` post-layer-norm encoder blocks; the final hidden state at the
//! `[CLS]` position goes through dropout and a linear head.
//!
//! Padding never reaches the computation: keys past `true_length` are masked
//! out of attention, so no unmasked row depends on them, and the forward pass
//! only materializes the active rows.

use serde::{Deserialize, Serialize};

use crate::checkpoint::TensorEntry;
use crate::error::{Error, Result};
use crate::numerics::{
    dropout, dropout_grad, gelu, gelu_grad, layer_norm, layer_norm_grad, masked_softmax, matmul,
    matmul_grad, softmax_grad, DropoutMask, LayerNormCtx, Rng, Tensor, LAYER_NORM_EPS,
};
use crate::tokenizer::{TokenSequence, DEFAULT_MAX_LEN, DEFAULT_VOCAB_SIZE};
use crate::training::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub dropout_p: f64,
    pub init_stddev: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: DEFAULT_VOCAB_SIZE,
            hidden_dim: 128,
            num_layers: 2,
            num_heads: 2,
            ff_dim: 512,
            max_len: DEFAULT_MAX_LEN,
            dropout_p: 0.1,
            init_stddev: 0.02,
        }
    }
}

impl ModelConfig {
    /// Gradient-check scale: vocab 50, hidden 8, one layer, one head, length 6.
    pub fn micro() -> Self {
        ModelConfig {
            vocab_size: 50,
            hidden_dim: 8,
            num_layers: 1,
            num_heads: 1,
            ff_dim: 16,
            max_len: 6,
            dropout_p: 0.1,
            init_stddev: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.vocab_size < 4 {
            return bad(format!("vocab_size {} cannot hold the reserved tokens", self.vocab_size));
        }
        if self.hidden_dim == 0 || self.num_heads == 0 || !self.hidden_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "hidden_dim {} must be a positive multiple of num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.num_layers == 0 || self.ff_dim == 0 {
            return bad("num_layers and ff_dim must be at least 1".into());
        }
        if self.max_len < 2 {
            return bad(format!("max_len {} below 2", self.max_len));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if !(self.init_stddev.is_finite() && self.init_stddev >= 0.0) {
            return bad(format!("init_stddev {} invalid", self.init_stddev));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    /// Total trainable scalars implied by the geometry.
    pub fn parameter_count(&self) -> usize {
        let h = self.hidden_dim;
        let f = self.ff_dim;
        let per_layer = 4 * (h * h + h) + 2 * (2 * h) + (h * f + f) + (f * h + h);
        self.vocab_size * h + self.max_len * h + self.num_layers * per_layer + h + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub query_weight: Tensor,
    pub query_bias: Tensor,
    pub key_weight: Tensor,
    pub key_bias: Tensor,
    pub value_weight: Tensor,
    pub value_bias: Tensor,
    pub output_weight: Tensor,
    pub output_bias: Tensor,
    pub attn_norm_gamma: Tensor,
    pub attn_norm_beta: Tensor,
    pub ff_in_weight: Tensor,
    pub ff_in_bias: Tensor,
    pub ff_out_weight: Tensor,
    pub ff_out_bias: Tensor,
    pub ff_norm_gamma: Tensor,
    pub ff_norm_beta: Tensor,
}

const LAYER_TENSOR_NAMES: [&str; 16] = [
    "query_weight",
    "query_bias",
    "key_weight",
    "key_bias",
    "value_weight",
    "value_bias",
    "output_weight",
    "output_bias",
    "attn_norm_gamma",
    "attn_norm_beta",
    "ff_in_weight",
    "ff_in_bias",
    "ff_out_weight",
    "ff_out_bias",
    "ff_norm_gamma",
    "ff_norm_beta",
];

impl LayerParams {
    fn zeros(c: &ModelConfig) -> Self {
        let (h, f) = (c.hidden_dim, c.ff_dim);
        LayerParams {
            query_weight: Tensor::zeros(&[h, h]),
            query_bias: Tensor::zeros(&[h]),
            key_weight: Tensor::zeros(&[h, h]),
            key_bias: Tensor::zeros(&[h]),
            value_weight: Tensor::zeros(&[h, h]),
            value_bias: Tensor::zeros(&[h]),
            output_weight: Tensor::zeros(&[h, h]),
            output_bias: Tensor::zeros(&[h]),
            attn_norm_gamma: Tensor::zeros(&[h]),
            attn_norm_beta: Tensor::zeros(&[h]),
            ff_in_weight: Tensor::zeros(&[h, f]),
            ff_in_bias: Tensor::zeros(&[f]),
            ff_out_weight: Tensor::zeros(&[f, h]),
            ff_out_bias: Tensor::zeros(&[h]),
            ff_norm_gamma: Tensor::zeros(&[h]),
            ff_norm_beta: Tensor::zeros(&[h]),
        }
    }

    fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.query_weight,
            &self.query_bias,
            &self.key_weight,
            &self.key_bias,
            &self.value_weight,
            &self.value_bias,
            &self.output_weight,
            &self.output_bias,
            &self.attn_norm_gamma,
            &self.attn_norm_beta,
            &self.ff_in_weight,
            &self.ff_in_bias,
            &self.ff_out_weight,
            &self.ff_out_bias,
            &self.ff_norm_gamma,
            &self.ff_norm_beta,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.query_weight,
            &mut self.query_bias,
            &mut self.key_weight,
            &mut self.key_bias,
            &mut self.value_weight,
            &mut self.value_bias,
            &mut self.output_weight,
            &mut self.output_bias,
            &mut self.attn_norm_gamma,
            &mut self.attn_norm_beta,
            &mut self.ff_in_weight,
            &mut self.ff_in_bias,
            &mut self.ff_out_weight,
            &mut self.ff_out_bias,
            &mut self.ff_norm_gamma,
            &mut self.ff_norm_beta,
        ]
    }
}

/// Every trainable tensor of the encoder. Also used to hold gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub word_embeddings: Tensor,
    pub positional_embeddings: Tensor,
    pub layers: Vec<LayerParams>,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

impl Parameters {
    pub fn zeros(config: &ModelConfig) -> Self {
        let h = config.hidden_dim;
        Parameters {
            word_embeddings: Tensor::zeros(&[config.vocab_size, h]),
            positional_embeddings: Tensor::zeros(&[config.max_len, h]),
            layers: (0..config.num_layers)
                .map(|_| LayerParams::zeros(config))
                .collect(),
            head_weight: Tensor::zeros(&[h, 1]),
            head_bias: Tensor::zeros(&[1]),
        }
    }

    /// Names and shapes in the fixed order used by checkpoints and optimizers,
    /// computed without allocating any tensor.
    pub fn layout(config: &ModelConfig) -> Vec<TensorEntry> {
        let (v, h, f, l) = (config.vocab_size, config.hidden_dim, config.ff_dim, config.max_len);
        let entry = |name: String, shape: Vec<usize>| TensorEntry { name, shape };
        let mut out = vec![
            entry("word_embeddings".into(), vec![v, h]),
            entry("positional_embeddings".into(), vec![l, h]),
        ];
        let layer_shapes = [
            vec![h, h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h],
            vec![h],
            vec![h, f],
            vec![f],
            vec![f, h],
            vec![h],
            vec![h],
            vec![h],
        ];
        for i in 0..config.num_layers {
            for (name, shape) in LAYER_TENSOR_NAMES.iter().zip(&layer_shapes) {
                out.push(entry(format!("layer{i}.{name}"), shape.clone()));
            }
        }
        out.push(entry("head_weight".into(), vec![h, 1]));
        out.push(entry("head_bias".into(), vec![1]));
        out
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("word_embeddings".to_string(), &self.word_embeddings),
            ("positional_embeddings".to_string(), &self.positional_embeddings),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in LAYER_TENSOR_NAMES.iter().zip(layer.tensors()) {
                out.push((format!("layer{i}.{name}"), t));
            }
        }
        out.push(("head_weight".to_string(), &self.head_weight));
        out.push(("head_bias".to_string(), &self.head_bias));
        out
    }
}

impl ParamSet for Parameters {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        self.named()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.word_embeddings, &mut self.positional_embeddings];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }
}

/// Truncated-normal weights (±2σ), zero biases and betas, unit gammas.
pub fn init_params(config: &ModelConfig, rng: &mut Rng) -> Result<Parameters> {
    config.validate()?;
    let mut p = Parameters::zeros(config);
    let sigma = config.init_stddev;
    let fill = |t: &mut Tensor, rng: &mut Rng| {
        for v in t.data_mut() {
            *v = rng.truncated_normal(sigma);
        }
    };
    fill(&mut p.word_embeddings, rng);
    fill(&mut p.positional_embeddings, rng);
    for layer in &mut p.layers {
        for t in [
            &mut layer.query_weight,
            &mut layer.key_weight,
            &mut layer.value_weight,
            &mut layer.output_weight,
            &mut layer.ff_in_weight,
            &mut layer.ff_out_weight,
        ] {
            fill(t, rng);
        }
        layer.attn_norm_gamma = Tensor::filled(&[config.hidden_dim], 1.0);
        layer.ff_norm_gamma = Tensor::filled(&[config.hidden_dim], 1.0);
    }
    fill(&mut p.head_weight, rng);
    Ok(p)
}

fn embed_ids(ids: &[u32], params: &Parameters) -> Result<Tensor> {
    let vocab = params.word_embeddings.rows();
    let positions = params.positional_embeddings.rows();
    if ids.len() > positions {
        return Err(Error::Shape(format!(
            "sequence of {} tokens exceeds {positions} positions",
            ids.len()
        )));
    }
    let h = params.word_embeddings.cols();
    let mut out = Tensor::zeros(&[ids.len(), h]);
    for (pos, &id) in ids.iter().enumerate() {
        if id as usize >= vocab {
            return Err(Error::InvalidArgument(format!(
                "token id {id} at position {pos} out of range for vocabulary of {vocab}"
            )));
        }
        let word = params.word_embeddings.row(id as usize);
        let place = params.positional_embeddings.row(pos);
        for ((o, w), p) in out.row_mut(pos).iter_mut().zip(word).zip(place) {
            *o = w + p;
        }
    }
    Ok(out)
}

/// Word plus positional embedding for every position, padding included.
pub fn embed(tokens: &TokenSequence, params: &Parameters) -> Result<Tensor> {
    embed_ids(&tokens.ids, params)
}

struct AttentionCache {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    probs: Vec<Tensor>,
    context: Tensor,
}

fn attention_forward(
    x: &Tensor,
    layer: &LayerParams,
    key_mask: &[bool],
    num_heads: usize,
) -> Result<(Tensor, AttentionCache)> {
    let (t, h) = x.dims2()?;
    if key_mask.len() != t {
        return Err(Error::Shape(format!(
            "mask length {} for sequence length {t}",
            key_mask.len()
        )));
    }
    let d = h / num_heads;
    let scale = 1.0 / (d as f64).sqrt();
    let q = matmul(x, &layer.query_weight)?.add_row_vector(&layer.query_bias)?;
    let k = matmul(x, &layer.key_weight)?.add_row_vector(&layer.key_bias)?;
    let v = matmul(x, &layer.value_weight)?.add_row_vector(&layer.value_bias)?;
    let mut context = Tensor::zeros(&[t, h]);
    let mut probs = Vec::with_capacity(num_heads);
    for head in 0..num_heads {
        let (lo, hi) = (head * d, (head + 1) * d);
        let qh = q.slice_cols(lo, hi)?;
        let kh = k.slice_cols(lo, hi)?;
        let vh = v.slice_cols(lo, hi)?;
        let scores = matmul(&qh, &kh.transpose()?)?.scale(scale);
        let p = masked_softmax(&scores, key_mask)?;
        context.set_cols(lo, &matmul(&p, &vh)?)?;
        probs.push(p);
    }
    let out = matmul(&context, &layer.output_weight)?.add_row_vector(&layer.output_bias)?;
    Ok((
        out,
        AttentionCache {
            q,
            k,
            v,
            probs,
            context,
        },
    ))
}

/// Multi-head scaled dot-product self-attention; `key_mask[j] == false` hides key `j`.
pub fn attention(
    x: &Tensor,
    layer: &LayerParams,
    key_mask: &[bool],
    num_heads: usize,
) -> Result<Tensor> {
    attention_forward(x, layer, key_mask, num_heads).map(|(out, _)| out)
}

/// Per-head attention weights, for inspection.
pub fn attention_weights(
    x: &Tensor,
    layer: &LayerParams,
    key_mask: &[bool],
    num_heads: usize,
) -> Result<Vec<Tensor>> {
    attention_forward(x, layer, key_mask, num_heads).map(|(_, c)| c.probs)
}

struct BlockCache {
    input: Tensor,
    attn: AttentionCache,
    attn_drop: DropoutMask,
    attn_norm: LayerNormCtx,
    normed: Tensor,
    ff_pre: Tensor,
    ff_act: Tensor,
    ff_drop: DropoutMask,
    ff_norm: LayerNormCtx,
}

struct Dropout<'a> {
    p: f64,
    rng: Option<&'a mut Rng>,
    training: bool,
}

impl Dropout<'_> {
    fn apply(&mut self, x: &Tensor) -> Result<(Tensor, DropoutMask)> {
        dropout(x, self.p, self.rng.as_deref_mut(), self.training)
    }
}

fn block_forward(
    x: &Tensor,
    layer: &LayerParams,
    key_mask: &[bool],
    num_heads: usize,
    drop: &mut Dropout<'_>,
) -> Result<(Tensor, BlockCache)> {
    let (a, attn) = attention_forward(x, layer, key_mask, num_heads)?;
    let (a, attn_drop) = drop.apply(&a)?;
    let (normed, attn_norm) = layer_norm(
        &x.add(&a)?,
        &layer.attn_norm_gamma,
        &layer.attn_norm_beta,
        LAYER_NORM_EPS,
    )?;
    let ff_pre = matmul(&normed, &layer.ff_in_weight)?.add_row_vector(&layer.ff_in_bias)?;
    let ff_act = gelu(&ff_pre)?;
    let f = matmul(&ff_act, &layer.ff_out_weight)?.add_row_vector(&layer.ff_out_bias)?;
    let (f, ff_drop) = drop.apply(&f)?;
    let (out, ff_norm) = layer_norm(
        &normed.add(&f)?,
        &layer.ff_norm_gamma,
        &layer.ff_norm_beta,
        LAYER_NORM_EPS,
    )?;
    Ok((
        out,
        BlockCache {
            input: x.clone(),
            attn,
            attn_drop,
            attn_norm,
            normed,
            ff_pre,
            ff_act,
            ff_drop,
            ff_norm,
        },
    ))
}

/// `y = LN(x + Dropout(Attention(x)))`, `z = LN(y + Dropout(FF_GELU(y)))`.
pub fn encoder_block(
    x: &Tensor,
    layer: &LayerParams,
    key_mask: &[bool],
    config: &ModelConfig,
    rng: Option<&mut Rng>,
    training: bool,
) -> Result<Tensor> {
    let mut drop = Dropout {
        p: config.dropout_p,
        rng,
        training,
    };
    block_forward(x, layer, key_mask, config.num_heads, &mut drop).map(|(z, _)| z)
}

struct ExampleCache {
    ids: Vec<u32>,
    blocks: Vec<BlockCache>,
    pooled: Tensor,
    pooled_drop: DropoutMask,
}

fn example_forward(
    tokens: &TokenSequence,
    params: &Parameters,
    config: &ModelConfig,
    drop: &mut Dropout<'_>,
) -> Result<(f64, ExampleCache)> {
    if tokens.true_length == 0 || tokens.true_length > tokens.ids.len() {
        return Err(Error::InvalidArgument(format!(
            "true_length {} invalid for a sequence of {}",
            tokens.true_length,
            tokens.ids.len()
        )));
    }
    let ids = tokens.active_ids().to_vec();
    let mask = vec![true; ids.len()];
    let mut x = embed_ids(&ids, params)?;
    let mut blocks = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (z, cache) = block_forward(&x, layer, &mask, config.num_heads, drop)?;
        blocks.push(cache);
        x = z;
    }
    let pooled = x.slice_rows(0, 1)?;
    let (dropped, pooled_drop) = drop.apply(&pooled)?;
    let pred = matmul(&dropped, &params.head_weight)?.data()[0] + params.head_bias.data()[0];
    if !pred.is_finite() {
        return Err(Error::NonFinite("prediction".into()));
    }
    Ok((
        pred,
        ExampleCache {
            ids,
            blocks,
            pooled,
            pooled_drop,
        },
    ))
}

fn check_batch(batch: &[TokenSequence], params: &Parameters, config: &ModelConfig) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    if params.layers.len() != config.num_layers || params.word_embeddings.cols() != config.hidden_dim {
        return Err(Error::Shape("parameters do not match the model config".into()));
    }
    Ok(())
}

/// Scalar prediction per sequence. In training mode dropout draws from `rng`.
pub fn forward(
    batch: &[TokenSequence],
    params: &Parameters,
    config: &ModelConfig,
    rng: Option<&mut Rng>,
    training: bool,
) -> Result<Vec<f64>> {
    check_batch(batch, params, config)?;
    let mut drop = Dropout {
        p: config.dropout_p,
        rng,
        training,
    };
    batch
        .iter()
        .map(|seq| example_forward(seq, params, config, &mut drop).map(|(p, _)| p))
        .collect()
}

fn head_dims(config: &ModelConfig) -> (usize, usize) {
    (config.num_heads, config.head_dim())
}

fn block_backward(
    cache: &BlockCache,
    layer: &LayerParams,
    grads: &mut LayerParams,
    config: &ModelConfig,
    dz: &Tensor,
    gelu_grad_scale: f64,
) -> Result<Tensor> {
    let (d_sum2, dg2, db2) = layer_norm_grad(&cache.ff_norm, &layer.ff_norm_gamma, dz)?;
    grads.ff_norm_gamma.add_assign(&dg2)?;
    grads.ff_norm_beta.add_assign(&db2)?;

    let d_f = dropout_grad(&cache.ff_drop, &d_sum2)?;
    let (d_act, d_w2) = matmul_grad(&cache.ff_act, &layer.ff_out_weight, &d_f)?;
    grads.ff_out_weight.add_assign(&d_w2)?;
    grads.ff_out_bias.add_assign(&d_f.sum_rows()?)?;
    let mut d_pre = gelu_grad(&cache.ff_pre, &d_act)?;
    if gelu_grad_scale != 1.0 {
        d_pre = d_pre.scale(gelu_grad_scale);
    }
    let (d_normed_ff, d_w1) = matmul_grad(&cache.normed, &layer.ff_in_weight, &d_pre)?;
    grads.ff_in_weight.add_assign(&d_w1)?;
    grads.ff_in_bias.add_assign(&d_pre.sum_rows()?)?;
    let d_normed = d_sum2.add(&d_normed_ff)?;

    let (d_sum1, dg1, db1) = layer_norm_grad(&cache.attn_norm, &layer.attn_norm_gamma, &d_normed)?;
    grads.attn_norm_gamma.add_assign(&dg1)?;
    grads.attn_norm_beta.add_assign(&db1)?;

    let mut dx = d_sum1.clone();
    let d_a = dropout_grad(&cache.attn_drop, &d_sum1)?;
    let attn = &cache.attn;
    let (d_ctx, d_wo) = matmul_grad(&attn.context, &layer.output_weight, &d_a)?;
    grads.output_weight.add_assign(&d_wo)?;
    grads.output_bias.add_assign(&d_a.sum_rows()?)?;

    let (heads, d) = head_dims(config);
    let scale = 1.0 / (d as f64).sqrt();
    let (t, h) = attn.q.dims2()?;
    let mut dq = Tensor::zeros(&[t, h]);
    let mut dk = Tensor::zeros(&[t, h]);
    let mut dv = Tensor::zeros(&[t, h]);
    for head in 0..heads {
        let (lo, hi) = (head * d, (head + 1) * d);
        let qh = attn.q.slice_cols(lo, hi)?;
        let kh = attn.k.slice_cols(lo, hi)?;
        let vh = attn.v.slice_cols(lo, hi)?;
        let p = &attn.probs[head];
        let d_ctx_h = d_ctx.slice_cols(lo, hi)?;
        let (d_p, d_vh) = matmul_grad(p, &vh, &d_ctx_h)?;
        let d_scores = softmax_grad(p, &d_p)?.scale(scale);
        let kt = kh.transpose()?;
        let (d_qh, d_kt) = matmul_grad(&qh, &kt, &d_scores)?;
        dq.set_cols(lo, &d_qh)?;
        dk.set_cols(lo, &d_kt.transpose()?)?;
        dv.set_cols(lo, &d_vh)?;
    }
    for (dproj, weight, gw, gb) in [
        (&dq, &layer.query_weight, &mut grads.query_weight, &mut grads.query_bias),
        (&dk, &layer.key_weight, &mut grads.key_weight, &mut grads.key_bias),
        (&dv, &layer.value_weight, &mut grads.value_weight, &mut grads.value_bias),
    ] {
        let (d_in, d_w) = matmul_grad(&cache.input, weight, dproj)?;
        gw.add_assign(&d_w)?;
        gb.add_assign(&dproj.sum_rows()?)?;
        dx.add_assign(&d_in)?;
    }
    Ok(dx)
}

fn example_backward(
    cache: &ExampleCache,
    params: &Parameters,
    config: &ModelConfig,
    d_pred: f64,
    grads: &mut Parameters,
    gelu_grad_scale: f64,
) -> Result<()> {
    // pooled ⊙ mask is what the head actually saw.
    let dropped = dropout_grad(&cache.pooled_drop, &cache.pooled)?;
    for (g, x) in grads.head_weight.data_mut().iter_mut().zip(dropped.data()) {
        *g += d_pred * x;
    }
    grads.head_bias.data_mut()[0] += d_pred;
    let d_dropped = Tensor::new(
        vec![1, config.hidden_dim],
        params.head_weight.data().iter().map(|w| w * d_pred).collect(),
    )?;
    let d_pooled = dropout_grad(&cache.pooled_drop, &d_dropped)?;

    let t = cache.ids.len();
    let mut dz = Tensor::zeros(&[t, config.hidden_dim]);
    dz.row_mut(0).copy_from_slice(d_pooled.data());
    for (i, block) in cache.blocks.iter().enumerate().rev() {
        dz = block_backward(
            block,
            &params.layers[i],
            &mut grads.layers[i],
            config,
            &dz,
            gelu_grad_scale,
        )?;
    }
    for (pos, &id) in cache.ids.iter().enumerate() {
        let g = dz.row(pos).to_vec();
        for (w, d) in grads.word_embeddings.row_mut(id as usize).iter_mut().zip(&g) {
            *w += d;
        }
        for (p, d) in grads.positional_embeddings.row_mut(pos).iter_mut().zip(&g) {
            *p += d;
        }
    }
    Ok(())
}

/// Output of a forward/backward pair.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub predictions: Vec<f64>,
    pub grads: Parameters,
}

pub(crate) fn loss_and_gradients_with(
    batch: &[TokenSequence],
    targets: &[f64],
    params: &Parameters,
    config: &ModelConfig,
    rng: Option<&mut Rng>,
    training: bool,
    gelu_grad_scale: f64,
) -> Result<Gradients> {
    check_batch(batch, params, config)?;
    if targets.len() != batch.len() {
        return Err(Error::Shape(format!(
            "{} targets for {} sequences",
            targets.len(),
            batch.len()
        )));
    }
    let mut drop = Dropout {
        p: config.dropout_p,
        rng,
        training,
    };
    let mut caches = Vec::with_capacity(batch.len());
    let mut predictions = Vec::with_capacity(batch.len());
    for seq in batch {
        let (p, c) = example_forward(seq, params, config, &mut drop)?;
        predictions.push(p);
        caches.push(c);
    }
    let loss = crate::training::mse_loss(&predictions, targets)?;
    let n = batch.len() as f64;
    let mut grads = Parameters::zeros(config);
    for ((cache, &pred), &target) in caches.iter().zip(&predictions).zip(targets) {
        let d_pred = 2.0 * (pred - target) / n;
        example_backward(cache, params, config, d_pred, &mut grads, gelu_grad_scale)?;
    }
    Ok(Gradients {
        loss,
        predictions,
        grads,
    })
}

/// Forward pass followed by exact gradients of the mean squared error with
/// respect to every parameter. Dropout masks drawn in the forward pass are
/// reused by the backward pass.
pub fn loss_and_gradients(
    batch: &[TokenSequence],
    targets: &[f64],
    params: &Parameters,
    config: &ModelConfig,
    rng: Option<&mut Rng>,
    training: bool,
) -> Result<Gradients> {
    loss_and_gradients_with(batch, targets, params, config, rng, training, 1.0)
}
