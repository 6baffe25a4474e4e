//! GRU encoder-decoder model: the encoder folds the history window into a
//! context vector, the decoder re-reads that context at every horizon step
//! (its initial hidden state is the context as well), and an affine readout
//! maps each decoder state to a normalized velocity.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gru::{gru_cell_step, GruWeights};
use super::{FeatureBounds, FeatureVector, TargetForecast};
use crate::error::{Error, Result};

/// Bumped whenever the serialized layout changes incompatibly.
pub const MODEL_FORMAT_VERSION: u32 = 1;

pub const FEATURE_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruEdModel {
    pub hidden_dim: usize,
    /// Input samples consumed per prediction.
    pub history_len: usize,
    /// Velocity samples produced per prediction.
    pub horizon_len: usize,
    pub sample_period_s: f64,
    /// Normalization fitted on the training split.
    pub bounds: FeatureBounds,
    pub encoder: GruWeights,
    /// Decoder input is the context vector, so its input dim is `hidden_dim`.
    pub decoder: GruWeights,
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

impl GruEdModel {
    pub fn init(
        hidden_dim: usize,
        history_len: usize,
        horizon_len: usize,
        sample_period_s: f64,
        bounds: FeatureBounds,
        rng: &mut impl rand::Rng,
    ) -> Self {
        GruEdModel {
            hidden_dim,
            history_len,
            horizon_len,
            sample_period_s,
            bounds,
            encoder: GruWeights::init(FEATURE_DIM, hidden_dim, rng),
            decoder: GruWeights::init(hidden_dim, hidden_dim, rng),
            w_out: vec![0.0; hidden_dim],
            b_out: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.hidden_dim > 0
            && self.history_len > 0
            && self.horizon_len > 0
            && self.sample_period_s > 0.0
            && self.encoder.has_dims(FEATURE_DIM, self.hidden_dim)
            && self.decoder.has_dims(self.hidden_dim, self.hidden_dim)
            && self.w_out.len() == self.hidden_dim;
        if ok {
            Ok(())
        } else {
            Err(Error::validation(
                "model",
                "inconsistent layer dimensions in model file",
            ))
        }
    }

    /// Normalized-space forward pass: `features` are already normalized, the
    /// return value is the normalized velocity sequence. Training and
    /// prediction share this path.
    pub(crate) fn forward_normalized(&self, features: &[[f64; FEATURE_DIM]]) -> Vec<f64> {
        assert_eq!(features.len(), self.history_len, "history window size");
        let mut h = vec![0.0; self.hidden_dim];
        for x in features {
            h = gru_cell_step(&self.encoder, x, &h);
        }
        let context = h;
        let mut g = context.clone();
        let mut out = Vec::with_capacity(self.horizon_len);
        for _ in 0..self.horizon_len {
            g = gru_cell_step(&self.decoder, &context, &g);
            let y: f64 = self.w_out.iter().zip(&g).map(|(w, gi)| w * gi).sum();
            out.push(y + self.b_out);
        }
        out
    }

    /// Predict the target's velocity over the horizon from a history window
    /// ending at `start_time_s`. Velocities are clamped to be non-negative;
    /// the normalization bounds already cap the inputs.
    pub fn predict(&self, history: &[FeatureVector], start_time_s: f64) -> TargetForecast {
        assert_eq!(
            history.len(),
            self.history_len,
            "predict requires exactly history_len samples"
        );
        let features: Vec<[f64; FEATURE_DIM]> =
            history.iter().map(|f| self.bounds.normalize(f)).collect();
        let velocities: Vec<f64> = self
            .forward_normalized(&features)
            .into_iter()
            .map(|y| self.bounds.denormalize_velocity(y).max(0.0))
            .collect();
        TargetForecast::from_velocities(start_time_s, self.sample_period_s, velocities)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: GruEdModel,
}

pub fn save_model(model: &GruEdModel, path: &Path) -> Result<()> {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        model: model.clone(),
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::schema(path, format!("serializing model: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<GruEdModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::schema(
            path,
            format!(
                "unsupported model format version {} (expected {})",
                file.format_version, MODEL_FORMAT_VERSION
            ),
        ));
    }
    file.model.validate()?;
    Ok(file.model)
}
