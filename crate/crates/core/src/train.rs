//! Plain gradient descent on the gating parameters of one scatter layer.

use crate::error::{Error, Result};
use crate::gating::{scatter_layer_forward, scatter_layer_vjp, GatingParams, ScatterLayerConfig};
use crate::synth::random_tensor;
use crate::tensor::Tensor;

/// Loss is the mean squared error over every element of the batch.
#[derive(Clone, Debug)]
pub struct FitReport {
    pub params: GatingParams,
    /// Loss before each step, then after the last one.
    pub mse_history: Vec<f64>,
}

impl FitReport {
    pub fn initial_mse(&self) -> f64 {
        self.mse_history[0]
    }

    pub fn final_mse(&self) -> f64 {
        *self.mse_history.last().expect("history is never empty")
    }

    /// Fraction of the initial MSE removed.
    pub fn reduction(&self) -> f64 {
        1.0 - self.final_mse() / self.initial_mse()
    }
}

/// Mean squared error over the batch and its parameter gradient.
pub fn loss_and_grad(
    params: &GatingParams,
    cfg: &ScatterLayerConfig,
    inputs: &[Tensor],
    targets: &[Tensor],
) -> Result<(f64, GatingParams)> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::shape("fit", format!("{} inputs, {} targets", inputs.len(), targets.len())));
    }
    let n = inputs.iter().map(Tensor::numel).sum::<usize>() as f64;
    let mut loss = 0.0;
    let mut grad: Option<GatingParams> = None;
    for (x, t) in inputs.iter().zip(targets) {
        let r = scatter_layer_forward(x, params, cfg)?.sub(t)?;
        loss += r.sum_sq() / n;
        let (_, g) = scatter_layer_vjp(x, params, cfg, &r.scale(2.0 / n))?;
        grad = Some(match grad {
            None => g,
            Some(acc) => acc.axpy(1.0, &g)?,
        });
    }
    Ok((loss, grad.expect("nonempty batch")))
}

/// `steps` gradient steps of size `lr` from `init`.
pub fn fit_scatter_layer(
    init: GatingParams,
    cfg: &ScatterLayerConfig,
    inputs: &[Tensor],
    targets: &[Tensor],
    lr: f64,
    steps: usize,
) -> Result<FitReport> {
    let mut params = init;
    let mut history = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (loss, g) = loss_and_grad(&params, cfg, inputs, targets)?;
        history.push(loss);
        params = params.axpy(-lr, &g)?;
    }
    let (loss, _) = loss_and_grad(&params, cfg, inputs, targets)?;
    history.push(loss);
    Ok(FitReport { params, mse_history: history })
}

/// Teacher-student setup: `count` random `C x H x W` inputs, targets from
/// a frozen layer with perturbed parameters, and a student initialized
/// near the identity. Seeds derive from `seed`.
pub fn teacher_student(
    cfg: &ScatterLayerConfig,
    dims: [usize; 3],
    count: usize,
    teacher_sigma: f64,
    seed: u64,
) -> Result<(Vec<Tensor>, Vec<Tensor>, GatingParams)> {
    let [c, h, w] = dims;
    let teacher = GatingParams::perturbed_identity(cfg, c, h, w, teacher_sigma, teacher_sigma, seed.wrapping_mul(31) + 1)?;
    let inputs: Vec<Tensor> = (0..count)
        .map(|i| random_tensor(&dims, seed.wrapping_mul(1000) + i as u64))
        .collect();
    let targets = inputs
        .iter()
        .map(|x| scatter_layer_forward(x, &teacher, cfg))
        .collect::<Result<Vec<_>>>()?;
    let student = GatingParams::init(cfg, c, h, w, seed.wrapping_mul(31) + 2)?;
    Ok((inputs, targets, student))
}
