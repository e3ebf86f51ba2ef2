use rand::RngCore;
use thiserror::Error;

use crate::geom::{PointCloud, RigidTransform};
use crate::gmcce::{evaluate_confidence, ConfidenceVector, GmcceConfig, GmcceError};
use crate::knn::{knn_indices, KnnError};
use crate::matching::{
    correspondences, similarity, transform_from_tensor, weighted_procrustes,
    weighted_procrustes_op, CorrespondenceSet, MatchError,
};
use crate::nn::{Linear, ParamBinder};
use crate::pft::{Pft, PftConfig};
use crate::pse::{Pse, PseConfig};
use crate::tensor::{ModelParams, Tape, Tensor, TensorError};

use super::config::PipelineConfig;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Knn(#[from] KnnError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Gmcce(#[from] GmcceError),
    #[error(transparent)]
    Loss(#[from] crate::loss::LossError),
    #[error("cloud of {n} points is too small for this model (needs more than {min})")]
    CloudTooSmall { n: usize, min: usize },
}

/// The assembled registration network: per-cloud feature extraction
/// followed by cross-cloud interaction.
pub struct DitModel {
    cfg: PipelineConfig,
    pse: Option<Pse>,
    /// Raw-coordinate embedding used when the structure extractor is
    /// ablated away.
    embed: Option<Linear>,
    pft: Pft,
    bound: Vec<(String, Tensor)>,
}

impl DitModel {
    fn pse_config(cfg: &PipelineConfig) -> PseConfig {
        PseConfig {
            layers: cfg.n_l,
            d_model: cfg.d_model,
            heads: cfg.heads,
            k: cfg.effective_k(),
            residual_outside_ln: cfg.residual_outside_ln,
        }
    }

    fn pft_config(cfg: &PipelineConfig) -> PftConfig {
        PftConfig {
            depth: cfg.pft_depth(),
            d_model: cfg.d_model,
            width: cfg.pft_width(),
            heads: cfg.heads,
            positional: !cfg.no_pos_enc,
            tied: !cfg.untie_phi,
            se_reduction: 4,
            residual_outside_ln: cfg.residual_outside_ln,
        }
    }

    fn assemble(cfg: &PipelineConfig, pb: &mut ParamBinder) -> Result<(Option<Pse>, Option<Linear>, Pft), TensorError> {
        let (pse, embed) = if cfg.no_pse {
            (None, Some(Linear::bind(pb, "embed", 3, cfg.d_model)?))
        } else {
            (Some(Pse::bind(pb, "pse", Self::pse_config(cfg))?), None)
        };
        let pft = Pft::bind(pb, "pft", Self::pft_config(cfg))?;
        Ok((pse, embed, pft))
    }

    /// Binds the model over a parameter store. Missing parameters are
    /// initialized from `init_rng` (required for a fresh store); `tape`
    /// makes the bound parameters differentiable.
    pub fn bind(
        cfg: &PipelineConfig,
        store: &mut ModelParams,
        tape: Option<&Tape>,
        init_rng: Option<&mut dyn RngCore>,
    ) -> Result<DitModel, TensorError> {
        let mut pb = match init_rng {
            Some(rng) => ParamBinder::new(store, tape, rng),
            None => ParamBinder::existing(store, tape),
        };
        let (pse, embed, pft) = Self::assemble(cfg, &mut pb)?;
        Ok(DitModel {
            cfg: *cfg,
            pse,
            embed,
            pft,
            bound: pb.into_bound(),
        })
    }

    /// Binds the model directly over named tensors (gradient checking).
    pub fn bind_over(
        cfg: &PipelineConfig,
        named: &[(String, Tensor)],
    ) -> Result<DitModel, TensorError> {
        let mut pb = ParamBinder::over_tensors(named);
        let (pse, embed, pft) = Self::assemble(cfg, &mut pb)?;
        Ok(DitModel {
            cfg: *cfg,
            pse,
            embed,
            pft,
            bound: pb.into_bound(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    /// Bound parameter tensors in binding order (training reads gradients
    /// from these).
    pub fn leaves(&self) -> &[(String, Tensor)] {
        &self.bound
    }

    /// Total learnable scalar count of this architecture.
    pub fn parameter_count(&self) -> usize {
        self.bound.iter().map(|(_, t)| t.len()).sum()
    }

    /// Per-cloud features: structural extraction, or the raw-coordinate
    /// embedding under the no-PSE ablation.
    pub fn features(&self, cloud: &PointCloud) -> Result<Tensor, PipelineError> {
        if let Some(pse) = &self.pse {
            let k = self.cfg.effective_k();
            if cloud.len() <= k {
                return Err(PipelineError::CloudTooSmall {
                    n: cloud.len(),
                    min: k,
                });
            }
            let neighbors = knn_indices(cloud, k)?;
            Ok(pse.forward(cloud, &neighbors)?)
        } else {
            let coords = Tensor::constant(&[cloud.len(), 3], cloud.to_flat());
            let embed = self.embed.as_ref().expect("no-pse model carries an embedding");
            Ok(embed.forward(&coords)?.relu()?)
        }
    }

    /// Full feature path for a pair of clouds: per-cloud features, then
    /// deep interaction.
    pub fn interacted_features(
        &self,
        src: &PointCloud,
        tgt: &PointCloud,
    ) -> Result<(Tensor, Tensor), PipelineError> {
        let f_src = self.features(src)?;
        let f_tgt = self.features(tgt)?;
        Ok(self.pft.forward(&f_src, &f_tgt, src, tgt)?)
    }
}

/// Which sub-paths a registration actually exercised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineTrace {
    pub used_pse: bool,
    pub used_positional: bool,
    pub used_gmcce: bool,
    pub pft_depth: usize,
    pub pft_width: usize,
}

/// Outcome of registering one pair. Degenerate estimation is reported as a
/// structured failure, never a crash.
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub transform: Option<RigidTransform>,
    pub failure: Option<String>,
    pub wall_time_ms: f64,
    pub correspondence: CorrespondenceSet,
    pub confidence: Option<ConfidenceVector>,
    pub trace: PipelineTrace,
}

/// Registers one pair with a bound model: features → interaction →
/// similarity → correspondences → (confidence weighting at test time) →
/// weighted Procrustes.
pub fn register_pair(
    model: &DitModel,
    src: &PointCloud,
    tgt: &PointCloud,
) -> Result<RegistrationResult, PipelineError> {
    let started = std::time::Instant::now();
    let cfg = model.config();
    let (phi_x, phi_y) = model.interacted_features(src, tgt)?;
    let s = similarity(&phi_x, &phi_y, cfg.temperature)?;
    let mut corr = correspondences(&s);

    let confidence = if cfg.no_gmcce {
        None
    } else {
        let gm = GmcceConfig {
            k_s: cfg.k_s,
            k_m: cfg.k_m,
            lambda: cfg.lambda,
            tau: cfg.tau,
        };
        let conf = evaluate_confidence(src, tgt, &corr.target_index, &gm)?;
        corr.weight = conf.weights();
        Some(conf)
    };

    let trace = PipelineTrace {
        used_pse: !cfg.no_pse,
        used_positional: !cfg.no_pos_enc,
        used_gmcce: !cfg.no_gmcce,
        pft_depth: cfg.pft_depth(),
        pft_width: cfg.pft_width(),
    };

    let (transform, failure) = match weighted_procrustes(src, tgt, &corr) {
        Ok(t) => (Some(t), None),
        Err(e @ (MatchError::Degenerate | MatchError::ZeroWeights)) => (None, Some(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    Ok(RegistrationResult {
        transform,
        failure,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        correspondence: corr,
        confidence,
        trace,
    })
}

/// One training direction: similarity, argmax correspondences, and the
/// differentiable Procrustes estimate weighted by the winning similarities.
pub struct DirectionOutput {
    pub similarity: Tensor,
    pub correspondence: CorrespondenceSet,
    /// 4×3 transform tensor (rotation rows then translation).
    pub transform: Tensor,
}

/// Runs the matching + estimation head in one direction on
/// already-interacted features.
pub fn direction_head(
    cfg: &PipelineConfig,
    phi_from: &Tensor,
    phi_to: &Tensor,
    from_cloud: &PointCloud,
    to_cloud: &PointCloud,
) -> Result<DirectionOutput, PipelineError> {
    let s = similarity(phi_from, phi_to, cfg.temperature)?;
    let corr = correspondences(&s);
    let weights = s.row_select(&corr.target_index)?;
    let transform = weighted_procrustes_op(from_cloud, to_cloud, &corr.target_index, &weights)?;
    Ok(DirectionOutput {
        similarity: s,
        correspondence: corr,
        transform,
    })
}

/// Convenience: the rigid transform held in a direction output.
pub fn direction_transform(d: &DirectionOutput) -> RigidTransform {
    transform_from_tensor(&d.transform)
}
