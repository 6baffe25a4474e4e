//! Training for the GRU encoder-decoder: full backpropagation through time,
//! Adam updates with global-norm gradient clipping, seeded train/validation
//! split and early stopping on validation RMSE.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gru::{GruWeights, StepCache};
use super::model::{GruEdModel, FEATURE_DIM};
use super::{FeatureBounds, WindowPair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub grad_clip_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            hidden_dim: 32,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 150,
            patience: 10,
            val_fraction: 0.3,
            grad_clip_norm: 5.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::validation("hidden_dim", "must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::validation("max_epochs", "must be positive"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::validation(
                "val_fraction",
                "must lie strictly between 0 and 1",
            ));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::validation("grad_clip_norm", "must be positive"));
        }
        Ok(())
    }
}

/// Gradient of the batch loss with respect to every model parameter;
/// mirrors the model layout so the two can be walked in lockstep.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub encoder: GruWeights,
    pub decoder: GruWeights,
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

impl Gradients {
    pub fn zeros(hidden_dim: usize) -> Self {
        Gradients {
            encoder: GruWeights::zeros(FEATURE_DIM, hidden_dim),
            decoder: GruWeights::zeros(hidden_dim, hidden_dim),
            w_out: vec![0.0; hidden_dim],
            b_out: 0.0,
        }
    }

    pub(crate) fn parts(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::with_capacity(20);
        v.extend(self.encoder.parts());
        v.extend(self.decoder.parts());
        v.push(&self.w_out);
        v.push(std::slice::from_ref(&self.b_out));
        v
    }

    pub(crate) fn parts_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::with_capacity(20);
        v.extend(self.encoder.parts_mut());
        v.extend(self.decoder.parts_mut());
        v.push(&mut self.w_out);
        v.push(std::slice::from_mut(&mut self.b_out));
        v
    }

    pub fn global_norm(&self) -> f64 {
        self.parts()
            .iter()
            .flat_map(|p| p.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, s: f64) {
        for part in self.parts_mut() {
            for g in part {
                *g *= s;
            }
        }
    }
}

/// Trainable parameter slices of the model, in the same fixed order as
/// [`Gradients::parts`].
fn model_parts_mut(model: &mut GruEdModel) -> Vec<&mut [f64]> {
    let mut v: Vec<&mut [f64]> = Vec::with_capacity(20);
    v.extend(model.encoder.parts_mut());
    v.extend(model.decoder.parts_mut());
    v.push(&mut model.w_out);
    v.push(std::slice::from_mut(&mut model.b_out));
    v
}

/// Everything the backward pass needs from one window's forward pass.
struct WindowTrace {
    xs: Vec<[f64; FEATURE_DIM]>,
    /// Encoder hidden states, `enc_h[0]` is the zero initial state.
    enc_h: Vec<Vec<f64>>,
    enc_cache: Vec<StepCache>,
    /// Decoder hidden states, `dec_g[0]` is the context vector.
    dec_g: Vec<Vec<f64>>,
    dec_cache: Vec<StepCache>,
    y_norm: Vec<f64>,
}

fn forward_trace(model: &GruEdModel, window: &WindowPair) -> WindowTrace {
    let h_dim = model.hidden_dim;
    let xs: Vec<[f64; FEATURE_DIM]> = window
        .history
        .iter()
        .map(|f| model.bounds.normalize(f))
        .collect();

    let mut enc_h = Vec::with_capacity(xs.len() + 1);
    let mut enc_cache = Vec::with_capacity(xs.len());
    enc_h.push(vec![0.0; h_dim]);
    for x in &xs {
        let (h, cache) = model.encoder.step_cached(x, enc_h.last().unwrap());
        enc_h.push(h);
        enc_cache.push(cache);
    }
    let context = enc_h.last().unwrap().clone();

    let mut dec_g = Vec::with_capacity(model.horizon_len + 1);
    let mut dec_cache = Vec::with_capacity(model.horizon_len);
    let mut y_norm = Vec::with_capacity(model.horizon_len);
    dec_g.push(context.clone());
    for _ in 0..model.horizon_len {
        let (g, cache) = model.decoder.step_cached(&context, dec_g.last().unwrap());
        let y: f64 = model.w_out.iter().zip(&g).map(|(w, gi)| w * gi).sum();
        y_norm.push(y + model.b_out);
        dec_g.push(g);
        dec_cache.push(cache);
    }

    WindowTrace {
        xs,
        enc_h,
        enc_cache,
        dec_g,
        dec_cache,
        y_norm,
    }
}

/// Backward through one GRU step. `dh` is the loss gradient at the step's
/// output; the parameter gradients accumulate into `grads`, the input
/// gradient accumulates into `dx_acc`, and the gradient at the previous
/// hidden state is returned.
fn cell_backward(
    w: &GruWeights,
    x: &[f64],
    h_prev: &[f64],
    cache: &StepCache,
    dh: &[f64],
    grads: &mut GruWeights,
    dx_acc: &mut [f64],
) -> Vec<f64> {
    let h_dim = h_prev.len();
    let mut daz = vec![0.0; h_dim];
    let mut dac = vec![0.0; h_dim];
    for i in 0..h_dim {
        let z = cache.z[i];
        // h = (1 - z) * h_prev + z * c
        daz[i] = dh[i] * (cache.candidate[i] - h_prev[i]) * z * (1.0 - z);
        dac[i] = dh[i] * z * (1.0 - cache.candidate[i] * cache.candidate[i]);
    }

    // Candidate pre-activation saw u_rh * (r ⊗ h_prev).
    let mut dr_h = vec![0.0; h_dim];
    w.u_rh.t_matvec_acc(&dac, &mut dr_h);

    let mut dar = vec![0.0; h_dim];
    for i in 0..h_dim {
        let r = cache.r[i];
        dar[i] = dr_h[i] * h_prev[i] * r * (1.0 - r);
    }

    let mut dh_prev = vec![0.0; h_dim];
    for i in 0..h_dim {
        dh_prev[i] = dh[i] * (1.0 - cache.z[i]) + dr_h[i] * cache.r[i];
    }
    w.u_hz.t_matvec_acc(&daz, &mut dh_prev);
    w.u_hr.t_matvec_acc(&dar, &mut dh_prev);

    w.w_xz.t_matvec_acc(&daz, dx_acc);
    w.w_xr.t_matvec_acc(&dar, dx_acc);
    w.w_xh.t_matvec_acc(&dac, dx_acc);

    grads.w_xz.outer_acc(&daz, x);
    grads.u_hz.outer_acc(&daz, h_prev);
    grads.w_xr.outer_acc(&dar, x);
    grads.u_hr.outer_acc(&dar, h_prev);
    grads.w_xh.outer_acc(&dac, x);
    grads.u_rh.outer_acc(&dac, &cache.r_h);
    for i in 0..h_dim {
        grads.b_z[i] += daz[i];
        grads.b_r[i] += dar[i];
        grads.b_h[i] += dac[i];
    }

    dh_prev
}

/// Accumulates one window's gradient contribution. `scale` carries the batch
/// averaging (1 / number of windows).
fn backward_trace(
    model: &GruEdModel,
    trace: &WindowTrace,
    targets_norm: &[f64],
    scale: f64,
    grads: &mut Gradients,
) {
    let h_dim = model.hidden_dim;
    let horizon = model.horizon_len;
    let per_step = scale / horizon as f64;
    let context = &trace.dec_g[0];

    // Decoder, last step first. dg carries the gradient at dec_g[j + 1];
    // dctx accumulates the gradient at the context through the decoder
    // inputs and, at the end, through the decoder's initial state.
    let mut dctx = vec![0.0; h_dim];
    let mut dg = vec![0.0; h_dim];
    for j in (0..horizon).rev() {
        let dy = 2.0 * (trace.y_norm[j] - targets_norm[j]) * per_step;
        let g_next = &trace.dec_g[j + 1];
        for i in 0..h_dim {
            grads.w_out[i] += dy * g_next[i];
            dg[i] += dy * model.w_out[i];
        }
        grads.b_out += dy;
        dg = cell_backward(
            &model.decoder,
            context,
            &trace.dec_g[j],
            &trace.dec_cache[j],
            &dg,
            &mut grads.decoder,
            &mut dctx,
        );
    }
    for i in 0..h_dim {
        dctx[i] += dg[i];
    }

    // Encoder, last step first.
    let mut dh = dctx;
    let mut dx_sink = vec![0.0; FEATURE_DIM];
    for i in (0..trace.xs.len()).rev() {
        dh = cell_backward(
            &model.encoder,
            &trace.xs[i],
            &trace.enc_h[i],
            &trace.enc_cache[i],
            &dh,
            &mut grads.encoder,
            &mut dx_sink,
        );
    }
}

fn normalized_targets(bounds: &FeatureBounds, window: &WindowPair) -> Vec<f64> {
    window
        .future_v_ms
        .iter()
        .map(|v| bounds.normalize_velocity(*v))
        .collect()
}

fn window_loss(y_norm: &[f64], targets_norm: &[f64]) -> f64 {
    y_norm
        .iter()
        .zip(targets_norm)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / y_norm.len() as f64
}

fn loss_and_gradients_iter<'a>(
    model: &GruEdModel,
    windows: impl ExactSizeIterator<Item = &'a WindowPair>,
) -> (f64, Gradients) {
    let n = windows.len();
    assert!(n > 0, "empty batch");
    let scale = 1.0 / n as f64;
    let mut grads = Gradients::zeros(model.hidden_dim);
    let mut loss = 0.0;
    for w in windows {
        let trace = forward_trace(model, w);
        let targets = normalized_targets(&model.bounds, w);
        loss += window_loss(&trace.y_norm, &targets) * scale;
        backward_trace(model, &trace, &targets, scale, &mut grads);
    }
    (loss, grads)
}

/// Mean normalized MSE over the windows and its full-BPTT gradient.
pub fn loss_and_gradients(model: &GruEdModel, windows: &[WindowPair]) -> (f64, Gradients) {
    loss_and_gradients_iter(model, windows.iter())
}

fn batch_loss(model: &GruEdModel, windows: &[WindowPair]) -> f64 {
    windows
        .iter()
        .map(|w| {
            let y = model.forward_normalized(
                &w.history
                    .iter()
                    .map(|f| model.bounds.normalize(f))
                    .collect::<Vec<_>>(),
            );
            window_loss(&y, &normalized_targets(&model.bounds, w))
        })
        .sum::<f64>()
        / windows.len() as f64
}

/// Compares the analytic batch gradient against central finite differences
/// over every parameter; returns the worst relative error
/// `|a - n| / max(|a| + |n|, 1e-8)`.
pub fn grad_check(model: &mut GruEdModel, windows: &[WindowPair], eps: f64) -> f64 {
    let (_, grads) = loss_and_gradients(model, windows);
    let analytic: Vec<f64> = grads
        .parts()
        .iter()
        .flat_map(|p| p.iter().copied())
        .collect();

    let part_lens: Vec<usize> = model_parts_mut(model).iter().map(|p| p.len()).collect();
    let mut worst = 0.0_f64;
    let mut flat_idx = 0;
    for (part_idx, &len) in part_lens.iter().enumerate() {
        for elem_idx in 0..len {
            let original = model_parts_mut(model)[part_idx][elem_idx];
            model_parts_mut(model)[part_idx][elem_idx] = original + eps;
            let plus = batch_loss(model, windows);
            model_parts_mut(model)[part_idx][elem_idx] = original - eps;
            let minus = batch_loss(model, windows);
            model_parts_mut(model)[part_idx][elem_idx] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[flat_idx];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            flat_idx += 1;
        }
    }
    worst
}

struct Adam {
    m: Gradients,
    v: Gradients,
    t: u64,
}

impl Adam {
    fn new(hidden_dim: usize) -> Self {
        Adam {
            m: Gradients::zeros(hidden_dim),
            v: Gradients::zeros(hidden_dim),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut GruEdModel, grads: &Gradients, hp: &Hyperparams) {
        self.t += 1;
        let bc1 = 1.0 - hp.adam_beta1.powi(self.t as i32);
        let bc2 = 1.0 - hp.adam_beta2.powi(self.t as i32);
        let params = model_parts_mut(model);
        let g_parts = grads.parts();
        let m_parts = self.m.parts_mut();
        let v_parts = self.v.parts_mut();
        for (((theta, g), m), v) in params
            .into_iter()
            .zip(g_parts)
            .zip(m_parts)
            .zip(v_parts)
        {
            for i in 0..theta.len() {
                m[i] = hp.adam_beta1 * m[i] + (1.0 - hp.adam_beta1) * g[i];
                v[i] = hp.adam_beta2 * v[i] + (1.0 - hp.adam_beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= hp.learning_rate * m_hat / (v_hat.sqrt() + hp.adam_eps);
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainingLog {
    /// Mean training loss (normalized MSE) per epoch.
    pub train_loss: Vec<f64>,
    /// Pooled validation RMSE, m/s, per epoch.
    pub val_rmse_ms: Vec<f64>,
    /// Epoch index (into the vectors above) of the restored weights.
    pub best_epoch: usize,
    pub best_val_rmse_ms: f64,
    pub epochs_run: usize,
    pub train_windows: usize,
    pub val_windows: usize,
}

/// Pooled RMSE of the model over whole windows: squared errors of every
/// horizon step of every window enter one mean.
pub fn validation_rmse_ms(model: &GruEdModel, windows: &[WindowPair]) -> f64 {
    assert!(!windows.is_empty(), "empty validation set");
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for w in windows {
        let xs: Vec<[f64; FEATURE_DIM]> =
            w.history.iter().map(|f| model.bounds.normalize(f)).collect();
        for (y, actual) in model.forward_normalized(&xs).iter().zip(&w.future_v_ms) {
            let pred = model.bounds.denormalize_velocity(*y).max(0.0);
            sum_sq += (pred - actual) * (pred - actual);
            count += 1;
        }
    }
    (sum_sq / count as f64).sqrt()
}

/// Trains a model on the window set: seeded shuffle and train/validation
/// split, bounds fitted on the training split, Adam with global-norm clipping,
/// early stopping on validation RMSE with best-weights restore.
pub fn train(
    windows: &[WindowPair],
    sample_period_s: f64,
    hp: &Hyperparams,
    seed: u64,
) -> Result<(GruEdModel, TrainingLog)> {
    hp.validate()?;
    if windows.len() < 2 {
        return Err(Error::validation(
            "windows",
            "need at least two windows to split train/validation",
        ));
    }
    let history_len = windows[0].history.len();
    let horizon_len = windows[0].future_v_ms.len();
    if history_len == 0 || horizon_len == 0 {
        return Err(Error::validation("windows", "empty history or horizon"));
    }
    for w in windows {
        if w.history.len() != history_len || w.future_v_ms.len() != horizon_len {
            return Err(Error::validation(
                "windows",
                "inconsistent window shapes in training set",
            ));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..windows.len()).collect();
    idx.shuffle(&mut rng);
    let n_val = ((windows.len() as f64 * hp.val_fraction).round() as usize)
        .clamp(1, windows.len() - 1);
    let (train_idx, val_idx) = idx.split_at(windows.len() - n_val);
    let train_set: Vec<WindowPair> = train_idx.iter().map(|&i| windows[i].clone()).collect();
    let val_set: Vec<WindowPair> = val_idx.iter().map(|&i| windows[i].clone()).collect();

    let bounds = FeatureBounds::fit(&train_set)?;
    let mut model = GruEdModel::init(
        hp.hidden_dim,
        history_len,
        horizon_len,
        sample_period_s,
        bounds,
        &mut rng,
    );
    let mut adam = Adam::new(hp.hidden_dim);

    let mut log = TrainingLog {
        train_loss: Vec::new(),
        val_rmse_ms: Vec::new(),
        best_epoch: 0,
        best_val_rmse_ms: f64::INFINITY,
        epochs_run: 0,
        train_windows: train_set.len(),
        val_windows: val_set.len(),
    };
    let mut best_model = model.clone();
    let mut epochs_since_best = 0usize;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..hp.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(hp.batch_size) {
            let batch = chunk.iter().map(|&i| &train_set[i]);
            let (loss, mut grads) = loss_and_gradients_iter(&model, batch);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            let norm = grads.global_norm();
            if norm > hp.grad_clip_norm {
                grads.scale(hp.grad_clip_norm / norm);
            }
            adam.step(&mut model, &grads, hp);
            epoch_loss += loss;
            batches += 1;
        }
        log.train_loss.push(epoch_loss / batches as f64);

        let val_rmse = validation_rmse_ms(&model, &val_set);
        if !val_rmse.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        log.val_rmse_ms.push(val_rmse);
        log.epochs_run = epoch + 1;

        if val_rmse < log.best_val_rmse_ms - 1e-12 {
            log.best_val_rmse_ms = val_rmse;
            log.best_epoch = epoch;
            best_model = model.clone();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= hp.patience {
                break;
            }
        }
    }

    Ok((best_model, log))
}
