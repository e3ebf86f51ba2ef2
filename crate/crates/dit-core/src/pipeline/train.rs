use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

use crate::geom::PairSample;
use crate::loss::{
    cycle_loss, discrimination_loss, inlier_labels, total_loss, LossError, LossWeights,
};
use crate::matching::MatchError;
use crate::tensor::{Adam, AdamConfig, ModelParams, Tape};

use super::config::PipelineConfig;
use super::model::{direction_head, DitModel, PipelineError};

/// Loss statistics of one epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
}

/// Outcome of a training run. `aborted` carries the diagnostic when a
/// non-finite loss stopped training early; the parameter store then still
/// holds the last good state.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub steps: usize,
    pub aborted: Option<String>,
}

/// Loss and per-parameter gradients of one pair.
fn pair_step(
    cfg: &PipelineConfig,
    pair: &PairSample,
    params: &mut ModelParams,
) -> Result<(f64, HashMap<String, Vec<f64>>), PipelineError> {
    let tape = Tape::new();
    let model = DitModel::bind(cfg, params, Some(&tape), None)?;
    let (phi_x, phi_y) = model.interacted_features(&pair.src, &pair.tgt)?;
    let fwd = direction_head(cfg, &phi_x, &phi_y, &pair.src, &pair.tgt)?;
    let bwd = direction_head(cfg, &phi_y, &phi_x, &pair.tgt, &pair.src)?;

    let labels = inlier_labels(pair, &fwd.correspondence.target_index, cfg.r_inlier);
    let weights = LossWeights {
        alpha: cfg.alpha,
        beta: cfg.beta,
    };
    let l_t = crate::loss::transformation_loss(
        &fwd.transform,
        &pair.ground_truth,
        cfg.literal_losses,
    )?;
    let l_c = cycle_loss(&fwd.transform, &bwd.transform, cfg.literal_losses)?;
    let l_d = discrimination_loss(&fwd.similarity, &fwd.correspondence.target_index, &labels)?;
    let loss = total_loss(&l_t, &l_c, &l_d, &weights)?;

    let value = loss.item();
    tape.backward(&loss)?;
    let grads = model
        .leaves()
        .iter()
        .map(|(name, t)| {
            let g = t.grad().unwrap_or_else(|| vec![0.0; t.len()]);
            (name.clone(), g)
        })
        .collect();
    Ok((value, grads))
}

/// Trains over the dataset: per-pair forward in both directions (the
/// reverse direction supplies the cycle term), Adam updates, seeded
/// shuffling per epoch. Pairs whose estimate is degenerate are skipped; a
/// non-finite loss aborts with the last good parameters intact.
pub fn train(
    cfg: &PipelineConfig,
    pairs: &[PairSample],
    params: &mut ModelParams,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainReport, PipelineError> {
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if params.is_empty() {
        DitModel::bind(cfg, params, None, Some(&mut init_rng))?;
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(0xD17);

    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let names: Vec<String> = params.entries().iter().map(|e| e.name.clone()).collect();

    let mut report = TrainReport {
        epochs: Vec::with_capacity(cfg.epochs),
        steps: 0,
        aborted: None,
    };
    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, shuffle_rng.gen_range(0..=i));
        }
        let mut loss_sum = 0.0;
        let mut used = 0;
        let mut skipped = 0;
        let mut batch: Option<Vec<Vec<f64>>> = None;
        let mut batch_count = 0usize;

        for &pi in &order {
            match pair_step(cfg, &pairs[pi], params) {
                Ok((value, grads)) => {
                    loss_sum += value;
                    used += 1;
                    let acc = batch.get_or_insert_with(|| {
                        params
                            .entries()
                            .iter()
                            .map(|e| vec![0.0; e.values.len()])
                            .collect()
                    });
                    for (slot, name) in names.iter().enumerate() {
                        if let Some(g) = grads.get(name) {
                            for (a, b) in acc[slot].iter_mut().zip(g) {
                                *a += b;
                            }
                        }
                    }
                    batch_count += 1;
                    if batch_count == cfg.batch_size {
                        let mut grads = batch.take().unwrap();
                        for g in &mut grads {
                            for v in g.iter_mut() {
                                *v /= batch_count as f64;
                            }
                        }
                        adam.step(params, &grads)?;
                        report.steps += 1;
                        batch_count = 0;
                    }
                }
                Err(PipelineError::Match(MatchError::Degenerate)) => {
                    skipped += 1;
                }
                Err(PipelineError::Loss(LossError::NonFinite(what))) => {
                    report.aborted = Some(format!("non-finite {what} loss at epoch {epoch}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        // flush a trailing partial batch
        if let Some(mut grads) = batch.take() {
            if batch_count > 0 {
                for g in &mut grads {
                    for v in g.iter_mut() {
                        *v /= batch_count as f64;
                    }
                }
                adam.step(params, &grads)?;
                report.steps += 1;
            }
        }
        let stats = EpochStats {
            epoch,
            mean_loss: if used > 0 { loss_sum / used as f64 } else { f64::NAN },
            pairs_used: used,
            pairs_skipped: skipped,
        };
        progress(&stats);
        report.epochs.push(stats);
    }
    Ok(report)
}
