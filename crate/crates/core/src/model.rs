//! Self-attentive encoder with a frame-wise sigmoid output head.
//!
//! ```text
//! e0      = X W0 + b0
//! Ē       = LN(e_prev)                              per block
//! Â_h     = softmax((Ē Q_h)(Ē K_h)ᵀ / √d)
//! C_h     = Â_h (Ē V_h)
//! Ē_sa    = LN(Ē + [C_1 .. C_H] O)
//! e_next  = Ē_sa + ReLU(Ē_sa W1 + b1) W2 + b2
//! Z       = σ(LN(e_P) W3 + b3)
//! ```
//!
//! There is no positional encoding and no dropout, so the network is
//! equivariant to permutations of the input frames.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::features::FeatureSequence;
use crate::numerics::{
    layer_norm_rows, layer_norm_rows_backward, linear, relu, relu_backward, sigmoid,
    sigmoid_scalar, softmax_rows, softmax_rows_backward, LayerNormCache, Matrix, Rng,
    LAYER_NORM_EPS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Encoder blocks `P`.
    pub n_blocks: usize,
    /// Attention units `D`.
    pub d_model: usize,
    /// Heads `H`; `D` must be divisible by `H`.
    pub n_heads: usize,
    /// Feed-forward units.
    pub d_ff: usize,
    /// Output speakers `C`.
    pub n_speakers: usize,
    /// Input feature dimension `F`.
    pub input_dim: usize,
}

impl ModelConfig {
    /// The full-size configuration: P=2, D=256, H=4, d_ff=1024, C=2, F=345.
    pub fn full_size() -> Self {
        Self {
            n_blocks: 2,
            d_model: 256,
            n_heads: 4,
            d_ff: 1024,
            n_speakers: 2,
            input_dim: 345,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_blocks", self.n_blocks),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("n_speakers", self.n_speakers),
            ("input_dim", self.input_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("model {name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Parameters of one encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    /// Per head, `D × d`.
    pub query: Vec<Matrix>,
    pub key: Vec<Matrix>,
    pub value: Vec<Matrix>,
    /// `D × D`.
    pub out: Matrix,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    /// `D × d_ff`.
    pub ff1_w: Matrix,
    pub ff1_b: Vec<f64>,
    /// `d_ff × D`.
    pub ff2_w: Matrix,
    pub ff2_b: Vec<f64>,
}

/// Every learnable tensor of the network. Gradients and optimizer moments
/// use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `F × D`.
    pub input_w: Matrix,
    pub input_b: Vec<f64>,
    pub blocks: Vec<BlockParams>,
    pub out_ln_gain: Vec<f64>,
    pub out_ln_bias: Vec<f64>,
    /// `D × C`.
    pub output_w: Matrix,
    pub output_b: Vec<f64>,
}

/// Read-only view of one named tensor. Vectors are `1 × n`.
#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

/// Mutable view of one named tensor.
#[derive(Debug)]
pub struct TensorMut<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a mut [f64],
}

fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let a = libm::sqrt(6.0 / (rows + cols) as f64);
    let data = (0..rows * cols).map(|_| rng.uniform_range(-a, a)).collect();
    Matrix::from_vec(rows, cols, data).expect("consistent shape")
}

impl ModelParams {
    /// All-zero parameters shaped by `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (d, dh, h) = (cfg.d_model, cfg.head_dim(), cfg.n_heads);
        let block = BlockParams {
            ln1_gain: vec![0.0; d],
            ln1_bias: vec![0.0; d],
            query: vec![Matrix::zeros(d, dh); h],
            key: vec![Matrix::zeros(d, dh); h],
            value: vec![Matrix::zeros(d, dh); h],
            out: Matrix::zeros(d, d),
            ln2_gain: vec![0.0; d],
            ln2_bias: vec![0.0; d],
            ff1_w: Matrix::zeros(d, cfg.d_ff),
            ff1_b: vec![0.0; cfg.d_ff],
            ff2_w: Matrix::zeros(cfg.d_ff, d),
            ff2_b: vec![0.0; d],
        };
        Self {
            input_w: Matrix::zeros(cfg.input_dim, d),
            input_b: vec![0.0; d],
            blocks: vec![block; cfg.n_blocks],
            out_ln_gain: vec![0.0; d],
            out_ln_bias: vec![0.0; d],
            output_w: Matrix::zeros(d, cfg.n_speakers),
            output_b: vec![0.0; cfg.n_speakers],
        }
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        macro_rules! mat {
            ($m:expr) => {
                ($m.rows(), $m.cols(), $m.data())
            };
        }
        macro_rules! vect {
            ($v:expr) => {
                (1usize, $v.len(), &$v[..])
            };
        }
        macro_rules! push {
            ($name:expr, $t:expr) => {{
                let (rows, cols, data) = $t;
                out.push(TensorRef { name: $name, rows, cols, data });
            }};
        }
        let p = self;
        push!(String::from("input.weight"), mat!(p.input_w));
        push!(String::from("input.bias"), vect!(p.input_b));
        for (i, b) in p.blocks.iter().enumerate() {
            push!(format!("blocks.{i}.ln1.gain"), vect!(b.ln1_gain));
            push!(format!("blocks.{i}.ln1.bias"), vect!(b.ln1_bias));
            for (h, m) in b.query.iter().enumerate() {
                push!(format!("blocks.{i}.heads.{h}.query"), mat!(m));
            }
            for (h, m) in b.key.iter().enumerate() {
                push!(format!("blocks.{i}.heads.{h}.key"), mat!(m));
            }
            for (h, m) in b.value.iter().enumerate() {
                push!(format!("blocks.{i}.heads.{h}.value"), mat!(m));
            }
            push!(format!("blocks.{i}.out"), mat!(b.out));
            push!(format!("blocks.{i}.ln2.gain"), vect!(b.ln2_gain));
            push!(format!("blocks.{i}.ln2.bias"), vect!(b.ln2_bias));
            push!(format!("blocks.{i}.ff1.weight"), mat!(b.ff1_w));
            push!(format!("blocks.{i}.ff1.bias"), vect!(b.ff1_b));
            push!(format!("blocks.{i}.ff2.weight"), mat!(b.ff2_w));
            push!(format!("blocks.{i}.ff2.bias"), vect!(b.ff2_b));
        }
        push!(String::from("output_ln.gain"), vect!(p.out_ln_gain));
        push!(String::from("output_ln.bias"), vect!(p.out_ln_bias));
        push!(String::from("output.weight"), mat!(p.output_w));
        push!(String::from("output.bias"), vect!(p.output_b));
        out
    }

    /// Mutable named tensors, in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        macro_rules! mat {
            ($m:expr) => {{
                let (r, c) = $m.shape();
                (r, c, $m.data_mut())
            }};
        }
        macro_rules! vect {
            ($v:expr) => {
                (1usize, $v.len(), &mut $v[..])
            };
        }
        macro_rules! push {
            ($name:expr, $t:expr) => {{
                let (rows, cols, data) = $t;
                out.push(TensorMut { name: $name, rows, cols, data });
            }};
        }
        let p = self;
        push!(String::from("input.weight"), mat!(p.input_w));
        push!(String::from("input.bias"), vect!(p.input_b));
        for (i, b) in p.blocks.iter_mut().enumerate() {
            push!(format!("blocks.{i}.ln1.gain"), vect!(b.ln1_gain));
            push!(format!("blocks.{i}.ln1.bias"), vect!(b.ln1_bias));
            for (h, m) in b.query.iter_mut().enumerate() {
                push!(format!("blocks.{i}.heads.{h}.query"), mat!(m));
            }
            for (h, m) in b.key.iter_mut().enumerate() {
                push!(format!("blocks.{i}.heads.{h}.key"), mat!(m));
            }
            for (h, m) in b.value.iter_mut().enumerate() {
                push!(format!("blocks.{i}.heads.{h}.value"), mat!(m));
            }
            push!(format!("blocks.{i}.out"), mat!(b.out));
            push!(format!("blocks.{i}.ln2.gain"), vect!(b.ln2_gain));
            push!(format!("blocks.{i}.ln2.bias"), vect!(b.ln2_bias));
            push!(format!("blocks.{i}.ff1.weight"), mat!(b.ff1_w));
            push!(format!("blocks.{i}.ff1.bias"), vect!(b.ff1_b));
            push!(format!("blocks.{i}.ff2.weight"), mat!(b.ff2_w));
            push!(format!("blocks.{i}.ff2.bias"), vect!(b.ff2_b));
        }
        push!(String::from("output_ln.gain"), vect!(p.out_ln_gain));
        push!(String::from("output_ln.bias"), vect!(p.out_ln_bias));
        push!(String::from("output.weight"), mat!(p.output_w));
        push!(String::from("output.bias"), vect!(p.output_b));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// All values concatenated in tensor order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for t in self.tensors() {
            out.extend_from_slice(t.data);
        }
        out
    }

    /// Inverse of [`ModelParams::to_flat`].
    pub fn from_flat(cfg: &ModelConfig, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(cfg);
        if flat.len() != p.num_params() {
            return Err(shape_err(
                "ModelParams::from_flat",
                format!("{} values for {} parameters", flat.len(), p.num_params()),
            ));
        }
        let mut offset = 0;
        for t in p.tensors_mut() {
            let n = t.data.len();
            t.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(p)
    }

    /// Builds parameters from named tensors; every tensor of `cfg` must be
    /// present exactly once with the right shape.
    pub fn from_named<'a>(
        cfg: &ModelConfig,
        tensors: impl IntoIterator<Item = (&'a str, usize, usize, &'a [f64])>,
    ) -> Result<Self> {
        let mut p = Self::zeros(cfg);
        {
            let mut slots = p.tensors_mut();
            let mut filled = vec![false; slots.len()];
            for (name, rows, cols, data) in tensors {
                let idx = slots
                    .iter()
                    .position(|t| t.name == name)
                    .ok_or_else(|| Error::InvalidArgument(format!("unexpected tensor {name}")))?;
                if filled[idx] {
                    return Err(Error::InvalidArgument(format!("tensor {name} given twice")));
                }
                filled[idx] = true;
                let slot = &mut slots[idx];
                if slot.rows != rows || slot.cols != cols || data.len() != rows * cols {
                    return Err(shape_err(
                        "ModelParams::from_named",
                        format!(
                            "{name}: expected {}x{}, got {rows}x{cols} with {} values",
                            slot.rows,
                            slot.cols,
                            data.len()
                        ),
                    ));
                }
                slot.data.copy_from_slice(data);
            }
            if let Some(i) = filled.iter().position(|f| !f) {
                return Err(Error::InvalidArgument(format!("tensor {} missing", slots[i].name)));
            }
        }
        Ok(p)
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for x in t.data.iter_mut() {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Euclidean norm over all parameters.
    pub fn norm(&self) -> f64 {
        libm::sqrt(
            self.tensors()
                .iter()
                .flat_map(|t| t.data.iter())
                .map(|v| v * v)
                .sum(),
        )
    }

    /// Parameter-wise arithmetic mean.
    pub fn average(models: &[ModelParams]) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::InvalidArgument(format!("cannot average zero checkpoints")))?;
        let mut acc = first.clone();
        for m in &models[1..] {
            acc.add_scaled(m, 1.0);
        }
        acc.scale(1.0 / models.len() as f64);
        Ok(acc)
    }
}

/// Glorot-uniform projections, zero biases, unit layer-norm gains.
pub fn init_params(cfg: &ModelConfig, rng: &mut Rng) -> Result<ModelParams> {
    cfg.validate()?;
    let (d, dh, f) = (cfg.d_model, cfg.head_dim(), cfg.input_dim);
    let input_w = glorot(f, d, rng);
    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    for _ in 0..cfg.n_blocks {
        let query = (0..cfg.n_heads).map(|_| glorot(d, dh, rng)).collect();
        let key = (0..cfg.n_heads).map(|_| glorot(d, dh, rng)).collect();
        let value = (0..cfg.n_heads).map(|_| glorot(d, dh, rng)).collect();
        blocks.push(BlockParams {
            ln1_gain: vec![1.0; d],
            ln1_bias: vec![0.0; d],
            query,
            key,
            value,
            out: glorot(d, d, rng),
            ln2_gain: vec![1.0; d],
            ln2_bias: vec![0.0; d],
            ff1_w: glorot(d, cfg.d_ff, rng),
            ff1_b: vec![0.0; cfg.d_ff],
            ff2_w: glorot(cfg.d_ff, d, rng),
            ff2_b: vec![0.0; d],
        });
    }
    Ok(ModelParams {
        input_w,
        input_b: vec![0.0; d],
        blocks,
        out_ln_gain: vec![1.0; d],
        out_ln_bias: vec![0.0; d],
        output_w: glorot(d, cfg.n_speakers, rng),
        output_b: vec![0.0; cfg.n_speakers],
    })
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    /// Row-stochastic `T × T` attention weights.
    pub attention: Matrix,
}

/// Intermediate values of one encoder block.
#[derive(Debug, Clone)]
pub struct BlockCache {
    ln1: LayerNormCache,
    /// `Ē`, the normalized block input.
    pub normed: Matrix,
    pub heads: Vec<HeadCache>,
    /// Concatenated head contexts, `T × D`.
    pub context: Matrix,
    ln2: LayerNormCache,
    /// `Ē_sa`, the normalized attention residual.
    pub normed_sa: Matrix,
    hidden_pre: Matrix,
    hidden: Matrix,
}

impl BlockCache {
    pub fn attention(&self, head: usize) -> Option<&Matrix> {
        self.heads.get(head).map(|h| &h.attention)
    }
}

/// Everything the backward pass needs, plus the attention weights.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Matrix,
    pub blocks: Vec<BlockCache>,
    out_ln: LayerNormCache,
    out_normed: Matrix,
    /// Pre-sigmoid outputs, `T × C`.
    pub logits: Matrix,
}

fn check_block_shapes(e_prev: &Matrix, block: &BlockParams, cfg: &ModelConfig) -> Result<()> {
    let d = cfg.d_model;
    let ok = e_prev.cols() == d
        && block.query.len() == cfg.n_heads
        && block.key.len() == cfg.n_heads
        && block.value.len() == cfg.n_heads
        && block.query.iter().chain(&block.key).chain(&block.value)
            .all(|m| m.shape() == (d, cfg.head_dim()))
        && block.out.shape() == (d, d)
        && block.ff1_w.shape() == (d, cfg.d_ff)
        && block.ff2_w.shape() == (cfg.d_ff, d)
        && block.ff1_b.len() == cfg.d_ff
        && [&block.ln1_gain, &block.ln1_bias, &block.ln2_gain, &block.ln2_bias, &block.ff2_b]
            .iter()
            .all(|v| v.len() == d);
    if ok {
        Ok(())
    } else {
        Err(shape_err(
            "encoder_block",
            format!("input {}x{} or block parameters do not match {cfg:?}", e_prev.rows(), e_prev.cols()),
        ))
    }
}

/// One encoder block. Returns the block output and its cache, which holds
/// the per-head attention weights.
pub fn encoder_block(
    e_prev: &Matrix,
    block: &BlockParams,
    cfg: &ModelConfig,
) -> Result<(Matrix, BlockCache)> {
    check_block_shapes(e_prev, block, cfg)?;
    let t = e_prev.rows();
    let dh = cfg.head_dim();
    let scale = 1.0 / libm::sqrt(dh as f64);

    let (normed, ln1) = layer_norm_rows(e_prev, &block.ln1_gain, &block.ln1_bias, LAYER_NORM_EPS);
    let mut context = Matrix::zeros(t, cfg.d_model);
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let query = normed.matmul(&block.query[h]);
        let key = normed.matmul(&block.key[h]);
        let value = normed.matmul(&block.value[h]);
        let mut scores = query.matmul_t(&key);
        scores.scale(scale);
        let attention = softmax_rows(&scores);
        context.set_columns(h * dh, &attention.matmul(&value));
        heads.push(HeadCache {
            query,
            key,
            value,
            attention,
        });
    }
    let mut residual = context.matmul(&block.out);
    residual.add_assign(&normed);
    let (normed_sa, ln2) = layer_norm_rows(&residual, &block.ln2_gain, &block.ln2_bias, LAYER_NORM_EPS);
    let hidden_pre = linear(&normed_sa, &block.ff1_w, &block.ff1_b)?;
    let hidden = relu(&hidden_pre);
    let mut out = linear(&hidden, &block.ff2_w, &block.ff2_b)?;
    out.add_assign(&normed_sa);
    Ok((
        out,
        BlockCache {
            ln1,
            normed,
            heads,
            context,
            ln2,
            normed_sa,
            hidden_pre,
            hidden,
        },
    ))
}

/// Frame-wise speaker posteriors `Z` (`T × C`, entries in (0, 1)).
pub fn forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    x: &FeatureSequence,
) -> Result<(Matrix, ForwardCache)> {
    let cache = forward_logits(params, cfg, &x.data)?;
    Ok((sigmoid(&cache.logits), cache))
}

/// Runs the network on a raw `T × F` matrix and returns the cache; the
/// logits are in `cache.logits`.
pub fn forward_logits(params: &ModelParams, cfg: &ModelConfig, x: &Matrix) -> Result<ForwardCache> {
    cfg.validate()?;
    if x.cols() != cfg.input_dim {
        return Err(shape_err(
            "forward",
            format!("input has {} features, model expects {}", x.cols(), cfg.input_dim),
        ));
    }
    if params.blocks.len() != cfg.n_blocks || params.input_w.shape() != (cfg.input_dim, cfg.d_model) {
        return Err(shape_err("forward", format!("parameters do not match {cfg:?}")));
    }
    let mut e = linear(x, &params.input_w, &params.input_b)?;
    if !e.is_finite() {
        return Err(Error::NonFinite(format!("input projection output")));
    }
    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    for (p, block) in params.blocks.iter().enumerate() {
        let (next, cache) = encoder_block(&e, block, cfg)?;
        if !next.is_finite() {
            return Err(Error::NonFinite(format!("output of encoder block {p}")));
        }
        e = next;
        blocks.push(cache);
    }
    let (out_normed, out_ln) = layer_norm_rows(&e, &params.out_ln_gain, &params.out_ln_bias, LAYER_NORM_EPS);
    let logits = linear(&out_normed, &params.output_w, &params.output_b)?;
    if !logits.is_finite() {
        return Err(Error::NonFinite(format!("output layer")));
    }
    Ok(ForwardCache {
        input: x.clone(),
        blocks,
        out_ln,
        out_normed,
        logits,
    })
}

/// The attention weights of block `block`, head `head` (both 0-based).
pub fn export_attention(cache: &ForwardCache, block: usize, head: usize) -> Result<Matrix> {
    let b = cache.blocks.get(block).ok_or_else(|| {
        Error::OutOfRange(format!("block {block} of {}", cache.blocks.len()))
    })?;
    b.attention(head)
        .cloned()
        .ok_or_else(|| Error::OutOfRange(format!("head {head} of {}", b.heads.len())))
}

/// Gradients of a scalar loss given `dL/dZ` on the posteriors.
pub fn backward(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &ForwardCache,
    d_posteriors: &Matrix,
) -> Result<ModelParams> {
    if d_posteriors.shape() != cache.logits.shape() {
        return Err(shape_err(
            "backward",
            format!("dZ {:?} vs output {:?}", d_posteriors.shape(), cache.logits.shape()),
        ));
    }
    let mut d_logits = d_posteriors.clone();
    for (g, &l) in d_logits.data_mut().iter_mut().zip(cache.logits.data()) {
        let s = sigmoid_scalar(l);
        *g *= s * (1.0 - s);
    }
    backward_from_logits(params, cfg, cache, &d_logits)
}

/// Gradients of a scalar loss given `dL/dlogits`.
pub fn backward_from_logits(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &ForwardCache,
    d_logits: &Matrix,
) -> Result<ModelParams> {
    if d_logits.shape() != cache.logits.shape() {
        return Err(shape_err(
            "backward",
            format!("dlogits {:?} vs output {:?}", d_logits.shape(), cache.logits.shape()),
        ));
    }
    let mut grads = ModelParams::zeros(cfg);

    grads.output_w = cache.out_normed.t_matmul(d_logits);
    grads.output_b = d_logits.column_sums();
    let d_normed = d_logits.matmul_t(&params.output_w);
    let (mut d_e, dg, db) = layer_norm_rows_backward(&d_normed, &params.out_ln_gain, &cache.out_ln);
    grads.out_ln_gain = dg;
    grads.out_ln_bias = db;

    for p in (0..cfg.n_blocks).rev() {
        d_e = block_backward(&params.blocks[p], cfg, &cache.blocks[p], &d_e, &mut grads.blocks[p]);
    }

    grads.input_w = cache.input.t_matmul(&d_e);
    grads.input_b = d_e.column_sums();
    Ok(grads)
}

/// Backpropagates `d_out` through one block, writing parameter gradients
/// into `g` and returning the gradient of the block input.
fn block_backward(
    block: &BlockParams,
    cfg: &ModelConfig,
    cache: &BlockCache,
    d_out: &Matrix,
    g: &mut BlockParams,
) -> Matrix {
    let dh = cfg.head_dim();
    let scale = 1.0 / libm::sqrt(dh as f64);

    // out = Ē_sa + FFN(Ē_sa)
    g.ff2_w = cache.hidden.t_matmul(d_out);
    g.ff2_b = d_out.column_sums();
    let d_hidden = d_out.matmul_t(&block.ff2_w);
    let d_pre = relu_backward(&cache.hidden_pre, &d_hidden);
    g.ff1_w = cache.normed_sa.t_matmul(&d_pre);
    g.ff1_b = d_pre.column_sums();
    let mut d_normed_sa = d_pre.matmul_t(&block.ff1_w);
    d_normed_sa.add_assign(d_out);

    // Ē_sa = LN(Ē + C O)
    let (d_residual, dg2, db2) = layer_norm_rows_backward(&d_normed_sa, &block.ln2_gain, &cache.ln2);
    g.ln2_gain = dg2;
    g.ln2_bias = db2;
    let mut d_normed = d_residual.clone();
    g.out = cache.context.t_matmul(&d_residual);
    let d_context = d_residual.matmul_t(&block.out);

    for (h, hc) in cache.heads.iter().enumerate() {
        let d_ctx = d_context.columns(h * dh, dh);
        let d_value = hc.attention.t_matmul(&d_ctx);
        let d_attn = d_ctx.matmul_t(&hc.value);
        let mut d_scores = softmax_rows_backward(&hc.attention, &d_attn);
        d_scores.scale(scale);
        let d_query = d_scores.matmul(&hc.key);
        let d_key = d_scores.t_matmul(&hc.query);

        g.query[h] = cache.normed.t_matmul(&d_query);
        g.key[h] = cache.normed.t_matmul(&d_key);
        g.value[h] = cache.normed.t_matmul(&d_value);
        d_normed.add_assign(&d_query.matmul_t(&block.query[h]));
        d_normed.add_assign(&d_key.matmul_t(&block.key[h]));
        d_normed.add_assign(&d_value.matmul_t(&block.value[h]));
    }

    // Ē = LN(e_prev)
    let (d_prev, dg1, db1) = layer_norm_rows_backward(&d_normed, &block.ln1_gain, &cache.ln1);
    g.ln1_gain = dg1;
    g.ln1_bias = db1;
    d_prev
}
