//! Cross-cloud feature interaction: positional encoding, a deep-narrow
//! encoder-decoder transformer applied symmetrically in both directions, and
//! squeeze-and-excitation recalibration of the result.

use crate::geom::PointCloud;
use crate::nn::{DecoderBlock, EncoderBlock, Linear, ParamBinder, SeBlock};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy)]
pub struct PftConfig {
    /// Encoder-decoder depth (deep-narrow default 6; shallow-wide ablation 1).
    pub depth: usize,
    /// Feature width entering and leaving the module.
    pub d_model: usize,
    /// Internal transformer width; adapters are added when it differs from
    /// `d_model` (shallow-wide ablation runs 1 block at width 256).
    pub width: usize,
    pub heads: usize,
    /// Disable to skip positional encoding entirely.
    pub positional: bool,
    /// One shared interaction stack for both directions (untied for
    /// ablation).
    pub tied: bool,
    pub se_reduction: usize,
    pub residual_outside_ln: bool,
}

impl Default for PftConfig {
    fn default() -> Self {
        PftConfig {
            depth: 6,
            d_model: 64,
            width: 64,
            heads: 4,
            positional: true,
            tied: true,
            se_reduction: 4,
            residual_outside_ln: false,
        }
    }
}

/// Encoder stack + decoder stack of one interaction direction. The encoder
/// runs once over the opposite cloud's features; every decoder layer
/// cross-attends to that single encoded memory.
pub struct PhiStack {
    encoders: Vec<EncoderBlock>,
    decoders: Vec<DecoderBlock>,
}

impl PhiStack {
    fn bind(
        pb: &mut ParamBinder,
        prefix: &str,
        cfg: &PftConfig,
    ) -> Result<PhiStack, TensorError> {
        let mut encoders = Vec::with_capacity(cfg.depth);
        let mut decoders = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            encoders.push(EncoderBlock::bind(
                pb,
                &format!("{prefix}.enc{l}"),
                cfg.width,
                cfg.heads,
                cfg.residual_outside_ln,
            )?);
            decoders.push(DecoderBlock::bind(
                pb,
                &format!("{prefix}.dec{l}"),
                cfg.width,
                cfg.heads,
                cfg.residual_outside_ln,
            )?);
        }
        Ok(PhiStack { encoders, decoders })
    }

    /// φ(memory_source, decoded): encode `memory_source` once, then decode
    /// `decoded` through the decoder stack against that memory.
    pub fn forward(&self, memory_source: &Tensor, decoded: &Tensor) -> Result<Tensor, TensorError> {
        let mut memory = memory_source.clone();
        for enc in &self.encoders {
            memory = enc.forward(&memory)?;
        }
        let mut x = decoded.clone();
        for dec in &self.decoders {
            x = dec.forward(&x, &memory)?;
        }
        Ok(x)
    }
}

/// Cross-cloud feature transformer.
pub struct Pft {
    pos_fc1: Linear,
    pos_fc2: Linear,
    phi: PhiStack,
    phi_reverse: Option<PhiStack>,
    in_proj: Option<Linear>,
    out_proj: Option<Linear>,
    se: SeBlock,
    cfg: PftConfig,
}

impl Pft {
    pub fn bind(pb: &mut ParamBinder, prefix: &str, cfg: PftConfig) -> Result<Pft, TensorError> {
        assert!(cfg.depth >= 1, "depth must be at least 1");
        let pos_fc1 = Linear::bind(pb, &format!("{prefix}.pos.fc1"), 3, cfg.width)?;
        let pos_fc2 = Linear::bind(pb, &format!("{prefix}.pos.fc2"), cfg.width, cfg.width)?;
        let phi = PhiStack::bind(pb, &format!("{prefix}.phi"), &cfg)?;
        let phi_reverse = if cfg.tied {
            None
        } else {
            Some(PhiStack::bind(pb, &format!("{prefix}.phi_rev"), &cfg)?)
        };
        let (in_proj, out_proj) = if cfg.width != cfg.d_model {
            (
                Some(Linear::bind(
                    pb,
                    &format!("{prefix}.in_proj"),
                    cfg.d_model,
                    cfg.width,
                )?),
                Some(Linear::bind(
                    pb,
                    &format!("{prefix}.out_proj"),
                    cfg.width,
                    cfg.d_model,
                )?),
            )
        } else {
            (None, None)
        };
        let se = SeBlock::bind(pb, &format!("{prefix}.se"), cfg.d_model, cfg.se_reduction)?;
        Ok(Pft {
            pos_fc1,
            pos_fc2,
            phi,
            phi_reverse,
            in_proj,
            out_proj,
            se,
            cfg,
        })
    }

    /// Positional code of raw coordinates: ReLU(FC(Sigmoid(FC(X)))).
    pub fn positional_encode(&self, cloud: &PointCloud) -> Result<Tensor, TensorError> {
        let coords = Tensor::constant(&[cloud.len(), 3], cloud.to_flat());
        self.pos_fc2
            .forward(&self.pos_fc1.forward(&coords)?.sigmoid()?)?
            .relu()
    }

    fn widen(&self, f: &Tensor) -> Result<Tensor, TensorError> {
        match &self.in_proj {
            Some(p) => p.forward(f),
            None => Ok(f.clone()),
        }
    }

    fn narrow(&self, f: &Tensor) -> Result<Tensor, TensorError> {
        match &self.out_proj {
            Some(p) => p.forward(f),
            None => Ok(f.clone()),
        }
    }

    /// Deep interaction of two feature sets. Positional codes are summed
    /// onto the features, each direction runs the (shared) encoder-decoder
    /// stack against the other cloud, the pre-positional features are added
    /// back as a residual, and the result is channel-recalibrated.
    ///
    /// Returns (interacted X features, interacted Y features); the two
    /// directions are exactly symmetric, so swapping the inputs swaps the
    /// outputs.
    pub fn forward(
        &self,
        f_x: &Tensor,
        f_y: &Tensor,
        x_cloud: &PointCloud,
        y_cloud: &PointCloud,
    ) -> Result<(Tensor, Tensor), TensorError> {
        if f_x.shape()[0] != x_cloud.len() || f_y.shape()[0] != y_cloud.len() {
            return Err(TensorError::ShapeMismatch {
                op: "pft_forward",
                details: "feature row counts must match cloud sizes".into(),
            });
        }
        let fx_w = self.widen(f_x)?;
        let fy_w = self.widen(f_y)?;
        let (fx_pos, fy_pos) = if self.cfg.positional {
            let p_x = self.positional_encode(x_cloud)?;
            let p_y = self.positional_encode(y_cloud)?;
            (fx_w.add(&p_x)?, fy_w.add(&p_y)?)
        } else {
            (fx_w, fy_w)
        };
        let reverse = self.phi_reverse.as_ref().unwrap_or(&self.phi);
        let psi_x = f_x.add(&self.narrow(&self.phi.forward(&fy_pos, &fx_pos)?)?)?;
        let psi_y = f_y.add(&self.narrow(&reverse.forward(&fx_pos, &fy_pos)?)?)?;
        Ok((self.se.forward(&psi_x)?, self.se.forward(&psi_y)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, ModelParams};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.gen::<f64>() - 0.5,
                        rng.gen::<f64>() - 0.5,
                        rng.gen::<f64>() - 0.5,
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    fn randvec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
    }

    fn small_cfg(depth: usize) -> PftConfig {
        PftConfig {
            depth,
            d_model: 8,
            width: 8,
            heads: 2,
            positional: true,
            tied: true,
            se_reduction: 4,
            residual_outside_ln: false,
        }
    }

    fn build_pft(cfg: PftConfig, seed: u64) -> (ModelParams, Pft) {
        let mut store = ModelParams::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pft = {
            let mut pb = ParamBinder::new(&mut store, None, &mut rng);
            Pft::bind(&mut pb, "pft", cfg).unwrap()
        };
        (store, pft)
    }

    #[test]
    fn zeroed_second_fc_gives_zero_positional_code() {
        let (mut store, _) = build_pft(small_cfg(1), 1);
        for e in store.entries_mut() {
            if e.name.starts_with("pft.pos.fc2") {
                e.values.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let pft = {
            let mut pb = ParamBinder::existing(&mut store, None);
            Pft::bind(&mut pb, "pft", small_cfg(1)).unwrap()
        };
        let cloud = random_cloud(7, 2);
        let p = pft.positional_encode(&cloud).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_points_share_positional_rows() {
        let (_, pft) = build_pft(small_cfg(1), 3);
        let cloud = PointCloud::new(vec![Vector3::new(0.1, 0.2, 0.3); 5]).unwrap();
        let p = pft.positional_encode(&cloud).unwrap();
        let first = &p.values()[0..8];
        for r in 1..5 {
            assert_eq!(&p.values()[r * 8..(r + 1) * 8], first);
        }
    }

    #[test]
    fn positional_code_matches_two_layer_oracle() {
        let (_, pft) = build_pft(small_cfg(1), 4);
        let cloud = random_cloud(6, 5);
        let p = pft.positional_encode(&cloud).unwrap();
        let coords = Tensor::constant(&[6, 3], cloud.to_flat());
        let oracle = pft
            .pos_fc2
            .forward(&pft.pos_fc1.forward(&coords).unwrap().sigmoid().unwrap())
            .unwrap()
            .relu()
            .unwrap();
        assert_eq!(p.values(), oracle.values());
    }

    #[test]
    fn output_shapes_follow_each_cloud() {
        let (_, pft) = build_pft(small_cfg(2), 6);
        let x = random_cloud(9, 7);
        let y = random_cloud(13, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f_x = Tensor::constant(&[9, 8], randvec(72, &mut rng));
        let f_y = Tensor::constant(&[13, 8], randvec(104, &mut rng));
        let (phi_x, phi_y) = pft.forward(&f_x, &f_y, &x, &y).unwrap();
        assert_eq!(phi_x.shape(), &[9, 8]);
        assert_eq!(phi_y.shape(), &[13, 8]);
    }

    #[test]
    fn swapping_inputs_swaps_outputs_exactly() {
        let (_, pft) = build_pft(small_cfg(2), 10);
        let x = random_cloud(6, 11);
        let y = random_cloud(8, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let f_x = Tensor::constant(&[6, 8], randvec(48, &mut rng));
        let f_y = Tensor::constant(&[8, 8], randvec(64, &mut rng));
        let (phi_x, phi_y) = pft.forward(&f_x, &f_y, &x, &y).unwrap();
        let (swapped_y, swapped_x) = pft.forward(&f_y, &f_x, &y, &x).unwrap();
        assert_eq!(phi_x.values(), swapped_x.values());
        assert_eq!(phi_y.values(), swapped_y.values());
    }

    #[test]
    fn depth_one_matches_block_composition_oracle() {
        let (_, pft) = build_pft(small_cfg(1), 14);
        let x = random_cloud(5, 15);
        let y = random_cloud(7, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let f_x = Tensor::constant(&[5, 8], randvec(40, &mut rng));
        let f_y = Tensor::constant(&[7, 8], randvec(56, &mut rng));
        let (phi_x, _) = pft.forward(&f_x, &f_y, &x, &y).unwrap();

        let p_x = pft.positional_encode(&x).unwrap();
        let p_y = pft.positional_encode(&y).unwrap();
        let fx_pos = f_x.add(&p_x).unwrap();
        let fy_pos = f_y.add(&p_y).unwrap();
        let memory = pft.phi.encoders[0].forward(&fy_pos).unwrap();
        let decoded = pft.phi.decoders[0].forward(&fx_pos, &memory).unwrap();
        let oracle = pft.se.forward(&f_x.add(&decoded).unwrap()).unwrap();
        for (a, b) in phi_x.values().iter().zip(oracle.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_x_permutes_phi_x_and_leaves_phi_y() {
        let (_, pft) = build_pft(small_cfg(2), 18);
        let x = random_cloud(8, 19);
        let y = random_cloud(6, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f_x = Tensor::constant(&[8, 8], randvec(64, &mut rng));
        let f_y = Tensor::constant(&[6, 8], randvec(48, &mut rng));
        let (phi_x, phi_y) = pft.forward(&f_x, &f_y, &x, &y).unwrap();

        let perm = [5usize, 7, 1, 0, 3, 6, 2, 4];
        let xp = PointCloud::new(perm.iter().map(|&i| *x.point(i)).collect()).unwrap();
        let fxp = f_x.gather_rows(&perm).unwrap();
        let (phi_xp, phi_yp) = pft.forward(&fxp, &f_y, &xp, &y).unwrap();
        for (r, &p) in perm.iter().enumerate() {
            for c in 0..8 {
                let a = phi_xp.values()[r * 8 + c];
                let b = phi_x.values()[p * 8 + c];
                assert!((a - b).abs() < 1e-10);
            }
        }
        for (a, b) in phi_yp.values().iter().zip(phi_y.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn shallow_wide_config_builds_with_adapters() {
        let cfg = PftConfig {
            depth: 1,
            d_model: 8,
            width: 16,
            heads: 2,
            positional: true,
            tied: true,
            se_reduction: 4,
            residual_outside_ln: false,
        };
        let (store, pft) = build_pft(cfg, 22);
        assert!(store.get("pft.in_proj.w").is_some());
        assert!(store.get("pft.out_proj.w").is_some());
        let x = random_cloud(5, 23);
        let y = random_cloud(6, 24);
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let f_x = Tensor::constant(&[5, 8], randvec(40, &mut rng));
        let f_y = Tensor::constant(&[6, 8], randvec(48, &mut rng));
        let (phi_x, phi_y) = pft.forward(&f_x, &f_y, &x, &y).unwrap();
        assert_eq!(phi_x.shape(), &[5, 8]);
        assert_eq!(phi_y.shape(), &[6, 8]);
    }

    #[test]
    fn forward_passes_grad_check() {
        let cfg = small_cfg(1);
        let (store, _) = build_pft(cfg, 26);
        let x = random_cloud(5, 27);
        let y = random_cloud(6, 28);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let fx0 = randvec(40, &mut rng);
        let fy0 = randvec(48, &mut rng);

        let mut params: Vec<(Vec<usize>, Vec<f64>)> = store
            .entries()
            .iter()
            .map(|e| (e.shape.clone(), e.values.clone()))
            .collect();
        let names: Vec<String> = store.entries().iter().map(|e| e.name.clone()).collect();
        params.push((vec![5, 8], fx0));
        params.push((vec![6, 8], fy0));

        let err = grad_check(
            |_, leaves| {
                let named: Vec<(String, Tensor)> = names
                    .iter()
                    .cloned()
                    .zip(leaves.iter().cloned())
                    .collect();
                let mut pb = ParamBinder::over_tensors(&named);
                let pft = Pft::bind(&mut pb, "pft", cfg)?;
                let f_x = &leaves[leaves.len() - 2];
                let f_y = &leaves[leaves.len() - 1];
                let (phi_x, phi_y) = pft.forward(f_x, f_y, &x, &y)?;
                phi_x.mul(&phi_x)?.sum()?.add(&phi_y.sum()?)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "pft grad check error {err}");
    }
}
