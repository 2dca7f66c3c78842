//! Permutation-free training.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::features::FeatureSequence;
use crate::labels::FrameLabels;
use crate::model::{backward_from_logits, forward_logits, init_params, ModelConfig, ModelParams};
use crate::numerics::{permutations, softplus, Matrix, Rng};

/// Largest speaker count for which all `C!` label permutations are tried.
pub const MAX_PIT_SPEAKERS: usize = 6;

/// Posterior clamp used when the loss is computed from probabilities.
pub const POSTERIOR_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct PitLoss {
    /// Mean binary cross entropy under the best permutation.
    pub loss: f64,
    /// Output column `c` is scored against label column `perm[c]`.
    pub perm: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitGradient {
    pub loss: f64,
    pub perm: Vec<usize>,
    /// `dL/dlogits`.
    pub d_logits: Matrix,
}

fn check_pit_shapes(m: &Matrix, labels: &FrameLabels) -> Result<()> {
    if m.rows() != labels.t_frames() || m.cols() != labels.n_speakers() {
        return Err(shape_err(
            "pit_loss",
            format!(
                "outputs {}x{} vs labels {}x{}",
                m.rows(),
                m.cols(),
                labels.t_frames(),
                labels.n_speakers()
            ),
        ));
    }
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::InvalidArgument(format!("pit_loss on an empty sequence")));
    }
    if m.cols() > MAX_PIT_SPEAKERS {
        return Err(Error::TooManySpeakers {
            what: "permutation-free loss",
            count: m.cols(),
            max: MAX_PIT_SPEAKERS,
        });
    }
    Ok(())
}

/// Minimizes `cost[c][perm[c]]` summed over `c`; ties keep the
/// lexicographically smallest permutation.
fn best_assignment(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let mut best = (f64::INFINITY, Vec::new());
    for perm in permutations(cost.len()) {
        let total: f64 = perm.iter().enumerate().map(|(c, &j)| cost[c][j]).sum();
        if total < best.0 || best.1.is_empty() {
            best = (total, perm);
        }
    }
    best
}

/// `cost[c][j]`: summed element loss of output column `c` against label
/// column `j`.
fn cost_matrix(m: &Matrix, labels: &FrameLabels, elem: impl Fn(f64, bool) -> f64) -> Vec<Vec<f64>> {
    let c = m.cols();
    let mut cost = vec![vec![0.0; c]; c];
    for (out_c, row) in cost.iter_mut().enumerate() {
        for (lab_c, v) in row.iter_mut().enumerate() {
            *v = (0..m.rows()).map(|t| elem(m.get(t, out_c), labels.get(t, lab_c))).sum();
        }
    }
    cost
}

fn bce_prob(z: f64, label: bool) -> f64 {
    let z = z.clamp(POSTERIOR_CLAMP, 1.0 - POSTERIOR_CLAMP);
    if label {
        -libm::log(z)
    } else {
        -libm::log(1.0 - z)
    }
}

fn bce_logit(x: f64, label: bool) -> f64 {
    // -[l ln σ(x) + (1-l) ln(1-σ(x))] = softplus(x) - l·x
    softplus(x) - if label { x } else { 0.0 }
}

/// Permutation-free loss on posteriors `z` (`T × C`):
/// `min over perm of Σ_t BCE(l_t^perm, z_t) / (T·C)`.
pub fn pit_loss(z: &Matrix, labels: &FrameLabels) -> Result<PitLoss> {
    check_pit_shapes(z, labels)?;
    let cost = cost_matrix(z, labels, bce_prob);
    let (total, perm) = best_assignment(&cost);
    Ok(PitLoss {
        loss: total / (z.rows() * z.cols()) as f64,
        perm,
    })
}

/// Mean BCE of `z` against labels with columns remapped by `perm`.
pub fn bce_with_permutation(z: &Matrix, labels: &FrameLabels, perm: &[usize]) -> Result<f64> {
    check_pit_shapes(z, labels)?;
    let cost = cost_matrix(z, labels, bce_prob);
    let total: f64 = perm.iter().enumerate().map(|(c, &j)| cost[c][j]).sum();
    Ok(total / (z.rows() * z.cols()) as f64)
}

/// Permutation-free loss from pre-sigmoid outputs, with its gradient.
pub fn pit_loss_logits(logits: &Matrix, labels: &FrameLabels) -> Result<PitGradient> {
    check_pit_shapes(logits, labels)?;
    let cost = cost_matrix(logits, labels, bce_logit);
    let (total, perm) = best_assignment(&cost);
    let n = (logits.rows() * logits.cols()) as f64;
    let mut d_logits = Matrix::zeros(logits.rows(), logits.cols());
    for t in 0..logits.rows() {
        for (c, &j) in perm.iter().enumerate() {
            let target = if labels.get(t, j) { 1.0 } else { 0.0 };
            let s = crate::numerics::sigmoid_scalar(logits.get(t, c));
            d_logits.set(t, c, (s - target) / n);
        }
    }
    Ok(PitGradient {
        loss: total / n,
        perm,
        d_logits,
    })
}

/// Warmup schedule: `base_scale · d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
pub fn noam_lr(step: u64, d_model: usize, warmup: u64, base_scale: f64) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    base_scale * libm::pow(d_model as f64, -0.5) * (libm::pow(s, -0.5)).min(s * libm::pow(w, -1.5))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Noam {
        d_model: usize,
        warmup: u64,
        base_scale: f64,
    },
    Constant(f64),
}

impl LrSchedule {
    /// Learning rate for the 1-based optimizer step.
    pub fn lr(&self, step: u64) -> f64 {
        match *self {
            LrSchedule::Noam {
                d_model,
                warmup,
                base_scale,
            } => noam_lr(step, d_model, warmup, base_scale),
            LrSchedule::Constant(lr) => lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// Bias-corrected Adam update of one slice. `step` is the 1-based count of
/// updates including this one.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    step: u64,
    lr: f64,
    cfg: &AdamConfig,
) {
    let c1 = 1.0 - libm::pow(cfg.beta1, step as f64);
    let c2 = 1.0 - libm::pow(cfg.beta2, step as f64);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(first).zip(second) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
    }
}

/// Adam moments shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: ModelParams,
    pub second: ModelParams,
}

impl OptimizerState {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            step: 0,
            first: ModelParams::zeros(cfg),
            second: ModelParams::zeros(cfg),
        }
    }
}

/// One Adam update of every parameter.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if let Some(t) = grads.tensors().iter().find(|t| t.data.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("gradient of {}", t.name)));
    }
    state.step += 1;
    let step = state.step;
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.first.tensors_mut())
        .zip(state.second.tensors_mut());
    for (((p, g), m), v) in tensors {
        if p.data.len() != g.data.len() {
            return Err(shape_err("adam_step", format!("tensor {} size mismatch", p.name)));
        }
        adam_update(p.data, g.data, m.data, v.data, step, lr, cfg);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Chunks per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: u64,
    pub base_scale: f64,
    pub adam: AdamConfig,
    /// Training chunk length in (subsampled) frames.
    pub chunk_len: usize,
    /// Number of final epoch checkpoints averaged.
    pub average_last: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: batch 8, 100 epochs, 2000 warmup steps,
    /// 500-frame chunks, average of the last 10 epochs.
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 100,
            warmup_steps: 2000,
            base_scale: 1.0,
            adam: AdamConfig::default(),
            chunk_len: 500,
            average_last: 10,
            seed: 0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.chunk_len == 0 || self.warmup_steps == 0 || self.average_last == 0 {
            return Err(Error::InvalidArgument(format!(
                "batch_size, chunk_len, warmup_steps and average_last must be >= 1"
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument(format!("grad_clip must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

/// Loss and learning rate of one finished epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean permutation-free loss over the epoch's chunks.
    pub mean_loss: f64,
    /// Learning rate of the epoch's last update.
    pub lr: f64,
    /// Optimizer steps taken so far.
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub final_params: ModelParams,
    /// Mean of the last `average_last` epoch-end parameters.
    pub averaged: ModelParams,
    pub curve: Vec<EpochStats>,
}

/// A training example: features with labels at the same frame rate.
pub type Example = (FeatureSequence, FrameLabels);

#[derive(Debug, Clone, Copy)]
struct Chunk {
    seq: usize,
    start: usize,
    len: usize,
}

/// Splits every sequence into consecutive `chunk_len` pieces; a shorter
/// final piece is kept.
fn make_chunks(data: &[Example], chunk_len: usize) -> Result<Vec<Chunk>> {
    let mut chunks = Vec::new();
    for (seq, (x, l)) in data.iter().enumerate() {
        if x.t_frames() != l.t_frames() {
            return Err(shape_err(
                "train",
                format!("example {seq}: {} feature frames vs {} label frames", x.t_frames(), l.t_frames()),
            ));
        }
        let mut start = 0;
        while start < x.t_frames() {
            let len = chunk_len.min(x.t_frames() - start);
            chunks.push(Chunk { seq, start, len });
            start += len;
        }
    }
    Ok(chunks)
}

fn chunk_gradient(
    params: &ModelParams,
    cfg: &ModelConfig,
    data: &[Example],
    chunk: Chunk,
) -> Result<(f64, ModelParams)> {
    let (x, l) = &data[chunk.seq];
    let xs = x.data.row_range(chunk.start, chunk.len);
    let ls = l.frame_range(chunk.start, chunk.len);
    let cache = forward_logits(params, cfg, &xs)?;
    let pit = pit_loss_logits(&cache.logits, &ls)?;
    let grads = backward_from_logits(params, cfg, &cache, &pit.d_logits)?;
    Ok((pit.loss, grads))
}

/// Mean permutation-free loss over all chunks, without updating anything.
pub fn dataset_loss(params: &ModelParams, cfg: &ModelConfig, data: &[Example], chunk_len: usize) -> Result<f64> {
    let chunks = make_chunks(data, chunk_len.max(1))?;
    if chunks.is_empty() {
        return Err(Error::InvalidArgument(format!("no frames to evaluate")));
    }
    let mut total = 0.0;
    for ch in &chunks {
        let (x, l) = &data[ch.seq];
        let cache = forward_logits(params, cfg, &x.data.row_range(ch.start, ch.len))?;
        total += pit_loss_logits(&cache.logits, &l.frame_range(ch.start, ch.len))?.loss;
    }
    Ok(total / chunks.len() as f64)
}

/// The epoch loop shared by [`train`] and [`fine_tune`].
///
/// Each epoch shuffles the chunks with the seeded generator, then for every
/// batch averages per-chunk gradients in a fixed order and takes one Adam
/// step. `on_epoch` sees the parameters at the end of every epoch.
pub fn run_epochs(
    cfg: &ModelConfig,
    mut params: ModelParams,
    data: &[Example],
    tcfg: &TrainConfig,
    schedule: LrSchedule,
    mut on_epoch: impl FnMut(&EpochStats, &ModelParams),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    tcfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument(format!("training set is empty")));
    }
    let chunks = make_chunks(data, tcfg.chunk_len)?;
    let mut order: Vec<usize> = (0..chunks.len()).collect();
    let mut rng = Rng::stream(tcfg.seed, 1);
    let mut state = OptimizerState::new(cfg);
    let mut recent: VecDeque<ModelParams> = VecDeque::with_capacity(tcfg.average_last);
    let mut curve = Vec::with_capacity(tcfg.epochs);

    for epoch in 1..=tcfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            let mut grads = ModelParams::zeros(cfg);
            for &ci in batch {
                let (loss, g) = chunk_gradient(&params, cfg, data, chunks[ci])?;
                if !loss.is_finite() {
                    return Err(Error::Training {
                        epoch,
                        step: state.step + 1,
                        detail: format!("loss is {loss}"),
                    });
                }
                loss_sum += loss;
                grads.add_scaled(&g, 1.0);
            }
            grads.scale(1.0 / batch.len() as f64);
            if let Some(max_norm) = tcfg.grad_clip {
                let norm = grads.norm();
                if norm > max_norm {
                    grads.scale(max_norm / norm);
                }
            }
            lr = schedule.lr(state.step + 1);
            adam_step(&mut params, &grads, &mut state, lr, &tcfg.adam).map_err(|e| Error::Training {
                epoch,
                step: state.step + 1,
                detail: format!("{e}"),
            })?;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / chunks.len() as f64,
            lr,
            steps: state.step,
        };
        if recent.len() == tcfg.average_last {
            recent.pop_front();
        }
        recent.push_back(params.clone());
        on_epoch(&stats, &params);
        curve.push(stats);
    }

    let averaged = if recent.is_empty() {
        params.clone()
    } else {
        let snapshots: Vec<ModelParams> = recent.into_iter().collect();
        ModelParams::average(&snapshots)?
    };
    Ok(TrainOutcome {
        final_params: params,
        averaged,
        curve,
    })
}

/// Trains from a fresh initialization with the warmup schedule.
pub fn train(cfg: &ModelConfig, data: &[Example], tcfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(cfg, data, tcfg, |_, _| {})
}

/// [`train`] with a per-epoch observer.
pub fn train_with(
    cfg: &ModelConfig,
    data: &[Example],
    tcfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats, &ModelParams),
) -> Result<TrainOutcome> {
    let params = init_params(cfg, &mut Rng::stream(tcfg.seed, 0))?;
    let schedule = LrSchedule::Noam {
        d_model: cfg.d_model,
        warmup: tcfg.warmup_steps,
        base_scale: tcfg.base_scale,
    };
    run_epochs(cfg, params, data, tcfg, schedule, on_epoch)
}

/// Continues training `params` at a constant learning rate and returns the
/// outcome; `averaged` covers the last `min(average_last, epochs)` epochs.
pub fn fine_tune(
    cfg: &ModelConfig,
    params: ModelParams,
    data: &[Example],
    lr: f64,
    epochs: usize,
    tcfg: &TrainConfig,
) -> Result<TrainOutcome> {
    fine_tune_with(cfg, params, data, lr, epochs, tcfg, |_, _| {})
}

pub fn fine_tune_with(
    cfg: &ModelConfig,
    params: ModelParams,
    data: &[Example],
    lr: f64,
    epochs: usize,
    tcfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats, &ModelParams),
) -> Result<TrainOutcome> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {lr}")));
    }
    let tcfg = TrainConfig {
        epochs,
        ..tcfg.clone()
    };
    run_epochs(cfg, params, data, &tcfg, LrSchedule::Constant(lr), on_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let z = Matrix::from_rows(&[[0.9, 0.1]]).unwrap();
        let l = FrameLabels::from_rows(&[[1, 0]]).unwrap();
        let r = pit_loss(&z, &l).unwrap();
        // identity: -(ln 0.9 + ln 0.9)/2; swap: -(ln 0.1 + ln 0.1)/2
        assert!((r.loss - 0.105361).abs() < 1e-6);
        assert_eq!(r.perm, vec![0, 1]);
        let swapped = FrameLabels::from_rows(&[[0, 1]]).unwrap();
        let s = pit_loss(&z, &swapped).unwrap();
        assert_eq!(s.loss, r.loss);
        assert_eq!(s.perm, vec![1, 0]);
    }

    #[test]
    fn perfect_prediction() {
        let l = FrameLabels::from_rows(&[[1, 0], [1, 1], [0, 0], [0, 1]]).unwrap();
        let r = pit_loss(&l.to_matrix(), &l).unwrap();
        assert!(r.loss <= 1e-6 * 1e-7f64.ln().abs());
        assert_eq!(r.perm, vec![0, 1]);
    }

    #[test]
    fn ties_pick_the_smallest_permutation() {
        let z = Matrix::filled(3, 3, 0.5);
        let l = FrameLabels::from_rows(&[[1, 0, 1], [0, 0, 1], [1, 1, 0]]).unwrap();
        assert_eq!(pit_loss(&z, &l).unwrap().perm, vec![0, 1, 2]);
    }

    #[test]
    fn too_many_speakers() {
        let z = Matrix::filled(2, 7, 0.5);
        let l = FrameLabels::new(2, 7);
        assert!(matches!(pit_loss(&z, &l), Err(Error::TooManySpeakers { .. })));
        assert!(pit_loss(&Matrix::filled(2, 2, 0.5), &FrameLabels::new(3, 2)).is_err());
    }

    #[test]
    fn logit_and_probability_forms_agree() {
        let mut rng = Rng::new(3);
        let logits = Matrix::from_vec(7, 3, (0..21).map(|_| 3.0 * rng.normal()).collect()).unwrap();
        let l = FrameLabels::from_bits(7, 3, (0..21).map(|_| rng.uniform() < 0.4).collect()).unwrap();
        let a = pit_loss_logits(&logits, &l).unwrap();
        let b = pit_loss(&crate::numerics::sigmoid(&logits), &l).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-9);
        assert_eq!(a.perm, b.perm);
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let mut rng = Rng::new(4);
        let logits = Matrix::from_vec(5, 2, (0..10).map(|_| rng.normal()).collect()).unwrap();
        let l = FrameLabels::from_bits(5, 2, (0..10).map(|_| rng.uniform() < 0.5).collect()).unwrap();
        let g = pit_loss_logits(&logits, &l).unwrap();
        let fd = crate::numerics::finite_diff_grad(
            |v| pit_loss_logits(&Matrix::from_vec(5, 2, v.to_vec()).unwrap(), &l).unwrap().loss,
            logits.data(),
            1e-6,
        )
        .unwrap();
        for (a, b) in g.d_logits.data().iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn noam_schedule() {
        let at = noam_lr(25_000, 256, 25_000, 1.0);
        assert!((at - 1.0 / (16.0 * 25_000f64.sqrt())).abs() < 1e-15);
        assert!((at - 3.953e-4).abs() < 1e-7);
        // both branches agree at the crossover
        let w = 400u64;
        let s = w as f64;
        assert!((s.powf(-0.5) - s * s.powf(-1.5)).abs() < 1e-15);
        let mut prev = 0.0;
        for step in 1..=w {
            let lr = noam_lr(step, 64, w, 1.0);
            assert!(lr >= prev);
            prev = lr;
        }
        for step in w..3 * w {
            let lr = noam_lr(step + 1, 64, w, 1.0);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn adam_first_step_and_zero_gradients() {
        let cfg = AdamConfig::default();
        let mut p = vec![1.0, -2.0, 3.0];
        let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
        adam_update(&mut p, &[0.0; 3], &mut m, &mut v, 1, 0.1, &cfg);
        assert_eq!(p, vec![1.0, -2.0, 3.0]);

        let mut p = vec![1.0, -2.0, 3.0];
        let (mut m, mut v) = (vec![0.0; 3], vec![0.0; 3]);
        adam_update(&mut p, &[0.5, -3.0, 1e-3], &mut m, &mut v, 1, 0.01, &cfg);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 1.99).abs() < 1e-9);
        assert!((p[2] - 2.99).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_a_parabola() {
        let cfg = AdamConfig::default();
        let mut x = [1.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        for step in 1..=100 {
            let g = [2.0 * x[0]];
            adam_update(&mut x, &g, &mut m, &mut v, step, 0.05, &cfg);
        }
        assert!(x[0].abs() < 0.1, "x = {}", x[0]);
    }

    #[test]
    fn adam_step_rejects_non_finite_gradients() {
        let cfg = ModelConfig {
            n_blocks: 1,
            d_model: 4,
            n_heads: 2,
            d_ff: 4,
            n_speakers: 2,
            input_dim: 3,
        };
        let mut p = init_params(&cfg, &mut Rng::new(0)).unwrap();
        let mut g = ModelParams::zeros(&cfg);
        g.output_b[0] = f64::NAN;
        let mut st = OptimizerState::new(&cfg);
        assert!(matches!(
            adam_step(&mut p, &g, &mut st, 0.1, &AdamConfig::default()),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn chunking_keeps_short_tail() {
        let x = FeatureSequence::new(Matrix::zeros(1200, 1), 0.1);
        let l = FrameLabels::new(1200, 2);
        let c = make_chunks(&[(x, l)], 500).unwrap();
        assert_eq!(c.iter().map(|c| c.len).collect::<Vec<_>>(), vec![500, 500, 200]);
    }
}
