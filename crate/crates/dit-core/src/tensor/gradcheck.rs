use super::{Tape, Tensor, TensorError};

/// Compares the reverse-mode gradient of a scalar function against central
/// finite differences over every parameter coordinate.
///
/// Returns max over coordinates of
/// `|analytic − numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn grad_check<F>(
    build: F,
    params: &[(Vec<usize>, Vec<f64>)],
    step: f64,
) -> Result<f64, TensorError>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor, TensorError>,
{
    grad_check_sampled(build, params, step, usize::MAX)
}

/// [`grad_check`] probing at most `max_coords_per_param` evenly spaced
/// coordinates of each parameter tensor. The analytic gradient is still
/// computed for all coordinates in one reverse pass; only the
/// finite-difference probes are subsampled.
pub fn grad_check_sampled<F>(
    build: F,
    params: &[(Vec<usize>, Vec<f64>)],
    step: f64,
    max_coords_per_param: usize,
) -> Result<f64, TensorError>
where
    F: Fn(&Tape, &[Tensor]) -> Result<Tensor, TensorError>,
{
    let tape = Tape::new();
    let leaves: Vec<Tensor> = params
        .iter()
        .map(|(shape, values)| Tensor::leaf(&tape, shape, values.clone()))
        .collect();
    let loss = build(&tape, &leaves)?;
    if !loss.item().is_finite() {
        return Err(TensorError::NonFinite("grad_check loss"));
    }
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .zip(params)
        .map(|(l, (_, v))| l.grad().unwrap_or_else(|| vec![0.0; v.len()]))
        .collect();

    let eval = |probe: &[Vec<f64>]| -> Result<f64, TensorError> {
        let inputs: Vec<Tensor> = params
            .iter()
            .zip(probe)
            .map(|((shape, _), values)| Tensor::constant(shape, values.clone()))
            .collect();
        let tape = Tape::new();
        let v = build(&tape, &inputs)?.item();
        if !v.is_finite() {
            return Err(TensorError::NonFinite("grad_check probe"));
        }
        Ok(v)
    };

    let mut values: Vec<Vec<f64>> = params.iter().map(|(_, v)| v.clone()).collect();
    let mut worst: f64 = 0.0;
    for pi in 0..params.len() {
        let n = values[pi].len();
        let probes = probe_indices(n, max_coords_per_param);
        for i in probes {
            let orig = values[pi][i];
            values[pi][i] = orig + step;
            let plus = eval(&values)?;
            values[pi][i] = orig - step;
            let minus = eval(&values)?;
            values[pi][i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic[pi][i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn probe_indices(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    (0..max).map(|i| i * n / max).collect()
}
