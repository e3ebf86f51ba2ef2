//! Attention building blocks: multi-head attention, transformer encoder and
//! decoder blocks, squeeze-and-excitation recalibration, and the parameter
//! binding machinery shared by all network modules.

use rand::Rng;

use crate::tensor::{ModelParams, Tape, Tensor, TensorError};

/// How a freshly created parameter tensor is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in [−1/√fan_in, +1/√fan_in].
    Uniform { fan_in: usize },
    Zeros,
    Ones,
}

/// Creates-or-fetches named parameters from a [`ModelParams`] store and binds
/// them as tensors, optionally onto a tape for training.
///
/// Binding an existing store validates shapes, so a checkpoint built under a
/// different configuration fails here with a named mismatch.
pub struct ParamBinder<'a> {
    source: BinderSource<'a>,
    bound: Vec<(String, Tensor)>,
}

enum BinderSource<'a> {
    Store {
        store: &'a mut ModelParams,
        tape: Option<&'a Tape>,
        rng: Option<&'a mut dyn rand::RngCore>,
    },
    /// Bind against externally supplied tensors (gradient checking).
    Named(&'a [(String, Tensor)]),
}

impl<'a> ParamBinder<'a> {
    /// Binder that initializes missing parameters from `rng`.
    pub fn new(
        store: &'a mut ModelParams,
        tape: Option<&'a Tape>,
        rng: &'a mut dyn rand::RngCore,
    ) -> ParamBinder<'a> {
        ParamBinder {
            source: BinderSource::Store {
                store,
                tape,
                rng: Some(rng),
            },
            bound: Vec::new(),
        }
    }

    /// Binder over a fully populated store (checkpoint use); missing
    /// parameters are an error.
    pub fn existing(store: &'a mut ModelParams, tape: Option<&'a Tape>) -> ParamBinder<'a> {
        ParamBinder {
            source: BinderSource::Store {
                store,
                tape,
                rng: None,
            },
            bound: Vec::new(),
        }
    }

    /// Binder that resolves every parameter to a caller-provided tensor by
    /// name. Lets a model forward run directly on gradient-check leaves.
    pub fn over_tensors(named: &'a [(String, Tensor)]) -> ParamBinder<'a> {
        ParamBinder {
            source: BinderSource::Named(named),
            bound: Vec::new(),
        }
    }

    pub fn param(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
    ) -> Result<Tensor, TensorError> {
        let tensor = match &mut self.source {
            BinderSource::Named(named) => {
                let tensor = named
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| {
                        TensorError::Checkpoint(format!("no tensor supplied for `{name}`"))
                    })?;
                if tensor.shape() != shape {
                    return Err(TensorError::ShapeMismatch {
                        op: "bind",
                        details: format!(
                            "`{name}`: supplied {:?}, config wants {:?}",
                            tensor.shape(),
                            shape
                        ),
                    });
                }
                tensor
            }
            BinderSource::Store { store, tape, rng } => {
                if store.get(name).is_none() {
                    let count: usize = shape.iter().product();
                    let values = match (&init, rng.as_mut()) {
                        (Init::Zeros, _) => vec![0.0; count],
                        (Init::Ones, _) => vec![1.0; count],
                        (Init::Uniform { fan_in }, Some(rng)) => {
                            let bound = 1.0 / (*fan_in as f64).sqrt();
                            (0..count).map(|_| rng.gen_range(-bound..=bound)).collect()
                        }
                        (Init::Uniform { .. }, None) => {
                            return Err(TensorError::Checkpoint(format!(
                                "missing parameter `{name}` in checkpoint"
                            )))
                        }
                    };
                    store.register(name, shape, values)?;
                }
                let entry = store.get(name).unwrap();
                if entry.shape != shape {
                    return Err(TensorError::ShapeMismatch {
                        op: "bind",
                        details: format!(
                            "`{name}`: checkpoint has {:?}, config wants {:?}",
                            entry.shape, shape
                        ),
                    });
                }
                match tape {
                    Some(tape) => Tensor::leaf(tape, shape, entry.values.clone()),
                    None => Tensor::constant(shape, entry.values.clone()),
                }
            }
        };
        self.bound.push((name.to_string(), tensor.clone()));
        Ok(tensor)
    }

    /// All parameters bound so far, in binding order.
    pub fn into_bound(self) -> Vec<(String, Tensor)> {
        self.bound
    }
}

/// Fully connected layer with bias.
#[derive(Clone)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn bind(
        pb: &mut ParamBinder,
        prefix: &str,
        d_in: usize,
        d_out: usize,
    ) -> Result<Linear, TensorError> {
        Ok(Linear {
            w: pb.param(&format!("{prefix}.w"), &[d_in, d_out], Init::Uniform { fan_in: d_in })?,
            b: pb.param(&format!("{prefix}.b"), &[d_out], Init::Zeros)?,
        })
    }

    /// x·W + b for rank-2 x.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let y = x.matmul(&self.w)?;
        y.add(&self.b.repeat_row(y.shape()[0])?)
    }
}

/// Learnable layer-norm scale and shift over a fixed width.
#[derive(Clone)]
pub struct LayerNorm {
    pub scale: Tensor,
    pub shift: Tensor,
}

impl LayerNorm {
    pub fn bind(pb: &mut ParamBinder, prefix: &str, d: usize) -> Result<LayerNorm, TensorError> {
        Ok(LayerNorm {
            scale: pb.param(&format!("{prefix}.scale"), &[d], Init::Ones)?,
            shift: pb.param(&format!("{prefix}.shift"), &[d], Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        x.layer_norm(&self.scale, &self.shift)
    }
}

/// Per-head projection matrices plus the output projection.
#[derive(Clone)]
pub struct AttentionParams {
    pub wq: Vec<Tensor>,
    pub wk: Vec<Tensor>,
    pub wv: Vec<Tensor>,
    pub wo: Tensor,
    pub d_model: usize,
    pub d_head: usize,
}

impl AttentionParams {
    pub fn bind(
        pb: &mut ParamBinder,
        prefix: &str,
        d_model: usize,
        heads: usize,
    ) -> Result<AttentionParams, TensorError> {
        assert!(heads > 0 && d_model % heads == 0, "heads must divide d_model");
        let d_head = d_model / heads;
        let mut wq = Vec::with_capacity(heads);
        let mut wk = Vec::with_capacity(heads);
        let mut wv = Vec::with_capacity(heads);
        for h in 0..heads {
            let fan = Init::Uniform { fan_in: d_model };
            wq.push(pb.param(&format!("{prefix}.h{h}.wq"), &[d_model, d_head], fan)?);
            wk.push(pb.param(&format!("{prefix}.h{h}.wk"), &[d_model, d_head], fan)?);
            wv.push(pb.param(&format!("{prefix}.h{h}.wv"), &[d_model, d_head], fan)?);
        }
        let wo = pb.param(
            &format!("{prefix}.wo"),
            &[d_model, d_model],
            Init::Uniform { fan_in: d_model },
        )?;
        Ok(AttentionParams {
            wq,
            wk,
            wv,
            wo,
            d_model,
            d_head,
        })
    }

    /// Scaled dot-product attention weights of one head (softmax rows).
    pub fn attention_weights(
        &self,
        f_q: &Tensor,
        f_k: &Tensor,
        head: usize,
    ) -> Result<Tensor, TensorError> {
        let q = f_q.matmul(&self.wq[head])?;
        let k = f_k.matmul(&self.wk[head])?;
        let scores = q
            .matmul(&k.transpose()?)?
            .scale(1.0 / (self.d_head as f64).sqrt())?;
        scores.softmax(1)
    }

    /// Multi-head attention: per head softmax(Q·Kᵀ/√d_head)·V, heads
    /// concatenated and projected. `f_k` and `f_v` must have equal row
    /// counts.
    pub fn forward(&self, f_q: &Tensor, f_k: &Tensor, f_v: &Tensor) -> Result<Tensor, TensorError> {
        if f_k.shape()[0] != f_v.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "attention",
                details: format!("{} keys vs {} values", f_k.shape()[0], f_v.shape()[0]),
            });
        }
        let mut heads = Vec::with_capacity(self.wq.len());
        for h in 0..self.wq.len() {
            let weights = self.attention_weights(f_q, f_k, h)?;
            let v = f_v.matmul(&self.wv[h])?;
            heads.push(weights.matmul_stable(&v)?);
        }
        let refs: Vec<&Tensor> = heads.iter().collect();
        Tensor::concat(&refs)?.matmul(&self.wo)
    }
}

/// Two-layer MLP (d → 2d → d) with ReLU.
#[derive(Clone)]
pub struct Mlp {
    pub lin1: Linear,
    pub lin2: Linear,
}

impl Mlp {
    pub fn bind(pb: &mut ParamBinder, prefix: &str, d: usize) -> Result<Mlp, TensorError> {
        Ok(Mlp {
            lin1: Linear::bind(pb, &format!("{prefix}.fc1"), d, 2 * d)?,
            lin2: Linear::bind(pb, &format!("{prefix}.fc2"), 2 * d, d)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        self.lin2.forward(&self.lin1.forward(x)?.relu()?)
    }
}

/// Residual + layer-norm combination. The standard form normalizes the sum,
/// `LN(f(x) + x)`; the alternative adds the residual outside the
/// normalization, `LN(f(x)) + x`.
fn residual_ln(
    ln: &LayerNorm,
    fx: &Tensor,
    x: &Tensor,
    residual_outside: bool,
) -> Result<Tensor, TensorError> {
    if residual_outside {
        ln.forward(fx)?.add(x)
    } else {
        ln.forward(&fx.add(x)?)
    }
}

/// Transformer encoder block: self-attention and MLP sublayers, each with a
/// residual and layer normalization.
#[derive(Clone)]
pub struct EncoderBlock {
    pub msa: AttentionParams,
    pub mlp: Mlp,
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
    pub residual_outside_ln: bool,
}

impl EncoderBlock {
    pub fn bind(
        pb: &mut ParamBinder,
        prefix: &str,
        d_model: usize,
        heads: usize,
        residual_outside_ln: bool,
    ) -> Result<EncoderBlock, TensorError> {
        Ok(EncoderBlock {
            msa: AttentionParams::bind(pb, &format!("{prefix}.msa"), d_model, heads)?,
            mlp: Mlp::bind(pb, &format!("{prefix}.mlp"), d_model)?,
            ln1: LayerNorm::bind(pb, &format!("{prefix}.ln1"), d_model)?,
            ln2: LayerNorm::bind(pb, &format!("{prefix}.ln2"), d_model)?,
            residual_outside_ln,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let attn = self.msa.forward(x, x, x)?;
        let mid = residual_ln(&self.ln1, &attn, x, self.residual_outside_ln)?;
        let fed = self.mlp.forward(&mid)?;
        residual_ln(&self.ln2, &fed, &mid, self.residual_outside_ln)
    }
}

/// Transformer decoder block: self-attention, cross-attention against an
/// encoded memory, then an MLP, each sublayer with residual + norm.
#[derive(Clone)]
pub struct DecoderBlock {
    pub msa: AttentionParams,
    pub mca: AttentionParams,
    pub mlp: Mlp,
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
    pub ln3: LayerNorm,
    pub residual_outside_ln: bool,
}

impl DecoderBlock {
    pub fn bind(
        pb: &mut ParamBinder,
        prefix: &str,
        d_model: usize,
        heads: usize,
        residual_outside_ln: bool,
    ) -> Result<DecoderBlock, TensorError> {
        Ok(DecoderBlock {
            msa: AttentionParams::bind(pb, &format!("{prefix}.msa"), d_model, heads)?,
            mca: AttentionParams::bind(pb, &format!("{prefix}.mca"), d_model, heads)?,
            mlp: Mlp::bind(pb, &format!("{prefix}.mlp"), d_model)?,
            ln1: LayerNorm::bind(pb, &format!("{prefix}.ln1"), d_model)?,
            ln2: LayerNorm::bind(pb, &format!("{prefix}.ln2"), d_model)?,
            ln3: LayerNorm::bind(pb, &format!("{prefix}.ln3"), d_model)?,
            residual_outside_ln,
        })
    }

    /// `x` is the decoded stream, `memory` the encoder output it
    /// cross-attends to (queries come from the decoded stream).
    pub fn forward(&self, x: &Tensor, memory: &Tensor) -> Result<Tensor, TensorError> {
        let sa = self.msa.forward(x, x, x)?;
        let xa = residual_ln(&self.ln1, &sa, x, self.residual_outside_ln)?;
        let ca = self.mca.forward(&xa, memory, memory)?;
        let xa2 = residual_ln(&self.ln2, &ca, &xa, self.residual_outside_ln)?;
        let fed = self.mlp.forward(&xa2)?;
        residual_ln(&self.ln3, &fed, &xa2, self.residual_outside_ln)
    }
}

/// Squeeze-and-excitation channel recalibration: average-pool the points,
/// gate through a bottleneck, rescale the input columns.
#[derive(Clone)]
pub struct SeBlock {
    pub squeeze: Linear,
    pub excite: Linear,
}

impl SeBlock {
    /// `reduction` must divide `d`.
    pub fn bind(
        pb: &mut ParamBinder,
        prefix: &str,
        d: usize,
        reduction: usize,
    ) -> Result<SeBlock, TensorError> {
        assert!(reduction > 0 && d % reduction == 0, "reduction must divide d");
        Ok(SeBlock {
            squeeze: Linear::bind(pb, &format!("{prefix}.squeeze"), d, d / reduction)?,
            excite: Linear::bind(pb, &format!("{prefix}.excite"), d / reduction, d)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, TensorError> {
        let n = x.shape()[0];
        let d = x.shape()[1];
        let pooled = x.mean(0)?.reshape(&[1, d])?;
        let gate = self
            .excite
            .forward(&self.squeeze.forward(&pooled)?.relu()?)?
            .sigmoid()?
            .reshape(&[d])?;
        x.mul(&gate.repeat_row(n)?)
    }
}
