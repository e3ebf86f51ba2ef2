//! Point cloud structure extraction: alternating local-feature integration
//! (neighborhood concatenation) and transformer encoder blocks, with a final
//! multi-layer merge.

use crate::geom::PointCloud;
use crate::knn::NeighborIndex;
use crate::nn::{EncoderBlock, LayerNorm, Linear, ParamBinder};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
pub struct PseConfig {
    /// Number of integrator + encoder layers (1–4).
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    /// Neighborhood size used by the integrator concatenation.
    pub k: usize,
    pub residual_outside_ln: bool,
}

impl Default for PseConfig {
    fn default() -> Self {
        PseConfig {
            layers: 3,
            d_model: 64,
            heads: 4,
            k: 20,
            residual_outside_ln: false,
        }
    }
}

/// Structural feature extractor over one cloud.
pub struct Pse {
    pub lfi_proj: Vec<Linear>,
    pub encoders: Vec<EncoderBlock>,
    pub merge_ln: LayerNorm,
    pub merge_proj: Linear,
    cfg: PseConfig,
}

/// Gathers, for every point, its own feature row followed by its k
/// neighbors' rows (nearest first), concatenated along the feature axis:
/// N×d → N×((k+1)·d).
pub fn lfi_concat(features: &Tensor, neighbors: &NeighborIndex) -> Result<Tensor, TensorError> {
    let n = features.shape()[0];
    if neighbors.n() != n {
        return Err(TensorError::ShapeMismatch {
            op: "lfi_concat",
            details: format!("{n} feature rows vs {} indexed points", neighbors.n()),
        });
    }
    let k = neighbors.k();
    let mut parts: Vec<Tensor> = Vec::with_capacity(k + 1);
    parts.push(features.clone());
    for j in 0..k {
        let idx: Vec<usize> = (0..n).map(|i| neighbors.row(i)[j]).collect();
        parts.push(features.gather_rows(&idx)?);
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::concat(&refs)
}

impl Pse {
    pub fn bind(pb: &mut ParamBinder, prefix: &str, cfg: PseConfig) -> Result<Pse, TensorError> {
        assert!((1..=4).contains(&cfg.layers), "layers must be in 1..=4");
        let mut lfi_proj = Vec::with_capacity(cfg.layers);
        let mut encoders = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let d_in = if l == 0 { 3 } else { cfg.d_model };
            let width = (cfg.k + 1) * d_in;
            lfi_proj.push(Linear::bind(
                pb,
                &format!("{prefix}.l{l}.lfi"),
                width,
                cfg.d_model,
            )?);
            encoders.push(EncoderBlock::bind(
                pb,
                &format!("{prefix}.l{l}.enc"),
                cfg.d_model,
                cfg.heads,
                cfg.residual_outside_ln,
            )?);
        }
        let merge_ln = LayerNorm::bind(pb, &format!("{prefix}.merge.ln"), cfg.layers * cfg.d_model)?;
        let merge_proj = Linear::bind(
            pb,
            &format!("{prefix}.merge.proj"),
            cfg.layers * cfg.d_model,
            cfg.d_model,
        )?;
        Ok(Pse {
            lfi_proj,
            encoders,
            merge_ln,
            merge_proj,
            cfg,
        })
    }

    /// One integrator stage: neighborhood concatenation, projection, ReLU.
    pub fn lfi(
        &self,
        features: &Tensor,
        neighbors: &NeighborIndex,
        layer: usize,
    ) -> Result<Tensor, TensorError> {
        self.lfi_proj[layer]
            .forward(&lfi_concat(features, neighbors)?)?
            .relu()
    }

    /// Full structural extraction: layer 1 consumes raw coordinates, each
    /// layer alternates integration and encoding, and all encoder outputs
    /// are merged (concat → ReLU → LN → projection) back to `d_model`.
    ///
    /// Neighbors are computed once in geometric space and shared by every
    /// layer, so they stay identical across the stack.
    pub fn forward(
        &self,
        cloud: &PointCloud,
        neighbors: &NeighborIndex,
    ) -> Result<Tensor, TensorError> {
        if neighbors.k() != self.cfg.k {
            return Err(TensorError::ShapeMismatch {
                op: "pse_forward",
                details: format!(
                    "neighbors built with k={}, model wants k={}",
                    neighbors.k(),
                    self.cfg.k
                ),
            });
        }
        let n = cloud.len();
        let mut features = Tensor::constant(&[n, 3], cloud.to_flat());
        let mut outs = Vec::with_capacity(self.cfg.layers);
        for l in 0..self.cfg.layers {
            let integrated = self.lfi(&features, neighbors, l)?;
            features = self.encoders[l].forward(&integrated)?;
            outs.push(features.clone());
        }
        let refs: Vec<&Tensor> = outs.iter().collect();
        let merged = Tensor::concat(&refs)?.relu()?;
        self.merge_proj.forward(&self.merge_ln.forward(&merged)?)
    }
}
