//! GRU cell. One struct holds a cell's weights; the step function is shared
//! by the encoder and the decoder, and a caching variant retains the gate
//! activations so training can run backpropagation through time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::Mat;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Weights of a single GRU cell mapping an input of size `input_dim` and the
/// previous hidden state of size `hidden_dim` to the next hidden state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruWeights {
    pub w_xz: Mat,
    pub w_xr: Mat,
    pub w_xh: Mat,
    pub u_hz: Mat,
    pub u_hr: Mat,
    pub u_rh: Mat,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

/// Gate activations retained from a forward step, consumed by the backward
/// pass. `r_h` is the element-wise product of the reset gate with the
/// previous hidden state (the input that `u_rh` actually saw).
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub candidate: Vec<f64>,
    pub r_h: Vec<f64>,
}

impl GruWeights {
    /// Weight matrices drawn uniformly from ±sqrt(1 / hidden_dim), biases zero.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let scale = (1.0 / hidden_dim as f64).sqrt();
        let mut mat = |rows: usize, cols: usize| {
            Mat::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
        };
        GruWeights {
            w_xz: mat(hidden_dim, input_dim),
            w_xr: mat(hidden_dim, input_dim),
            w_xh: mat(hidden_dim, input_dim),
            u_hz: mat(hidden_dim, hidden_dim),
            u_hr: mat(hidden_dim, hidden_dim),
            u_rh: mat(hidden_dim, hidden_dim),
            b_z: vec![0.0; hidden_dim],
            b_r: vec![0.0; hidden_dim],
            b_h: vec![0.0; hidden_dim],
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        GruWeights {
            w_xz: Mat::zeros(hidden_dim, input_dim),
            w_xr: Mat::zeros(hidden_dim, input_dim),
            w_xh: Mat::zeros(hidden_dim, input_dim),
            u_hz: Mat::zeros(hidden_dim, hidden_dim),
            u_hr: Mat::zeros(hidden_dim, hidden_dim),
            u_rh: Mat::zeros(hidden_dim, hidden_dim),
            b_z: vec![0.0; hidden_dim],
            b_r: vec![0.0; hidden_dim],
            b_h: vec![0.0; hidden_dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_xz.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_xz.rows()
    }

    pub fn has_dims(&self, input_dim: usize, hidden_dim: usize) -> bool {
        self.w_xz.has_shape(hidden_dim, input_dim)
            && self.w_xr.has_shape(hidden_dim, input_dim)
            && self.w_xh.has_shape(hidden_dim, input_dim)
            && self.u_hz.has_shape(hidden_dim, hidden_dim)
            && self.u_hr.has_shape(hidden_dim, hidden_dim)
            && self.u_rh.has_shape(hidden_dim, hidden_dim)
            && self.b_z.len() == hidden_dim
            && self.b_r.len() == hidden_dim
            && self.b_h.len() == hidden_dim
    }

    /// All parameter slices in a fixed order. The optimizer walks this list,
    /// so the order must match between weights and their gradient mirror.
    pub(crate) fn parts(&self) -> [&[f64]; 9] {
        [
            self.w_xz.data(),
            self.w_xr.data(),
            self.w_xh.data(),
            self.u_hz.data(),
            self.u_hr.data(),
            self.u_rh.data(),
            &self.b_z,
            &self.b_r,
            &self.b_h,
        ]
    }

    pub(crate) fn parts_mut(&mut self) -> [&mut [f64]; 9] {
        [
            self.w_xz.data_mut(),
            self.w_xr.data_mut(),
            self.w_xh.data_mut(),
            self.u_hz.data_mut(),
            self.u_hr.data_mut(),
            self.u_rh.data_mut(),
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    /// Forward step that also returns the gate cache for training.
    pub(crate) fn step_cached(&self, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, StepCache) {
        let h_dim = self.hidden_dim();
        assert_eq!(x.len(), self.input_dim(), "input size mismatch");
        assert_eq!(h_prev.len(), h_dim, "hidden size mismatch");

        let mut z = self.b_z.clone();
        self.w_xz.matvec_acc(x, &mut z);
        self.u_hz.matvec_acc(h_prev, &mut z);
        for v in &mut z {
            *v = sigmoid(*v);
        }

        let mut r = self.b_r.clone();
        self.w_xr.matvec_acc(x, &mut r);
        self.u_hr.matvec_acc(h_prev, &mut r);
        for v in &mut r {
            *v = sigmoid(*v);
        }

        let r_h: Vec<f64> = r.iter().zip(h_prev).map(|(ri, hi)| ri * hi).collect();

        let mut candidate = self.b_h.clone();
        self.w_xh.matvec_acc(x, &mut candidate);
        self.u_rh.matvec_acc(&r_h, &mut candidate);
        for v in &mut candidate {
            *v = v.tanh();
        }

        let h: Vec<f64> = (0..h_dim)
            .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * candidate[i])
            .collect();

        (
            h,
            StepCache {
                z,
                r,
                candidate,
                r_h,
            },
        )
    }
}

/// One GRU update: gates from the input and previous hidden state, then a
/// convex blend of the previous state and the candidate state.
pub fn gru_cell_step(weights: &GruWeights, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
    weights.step_cached(x, h_prev).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar (hidden_dim = 1) cell recomputed by hand with explicit
    /// sigmoid/tanh calls, independent of the matrix code path.
    #[test]
    fn scalar_cell_matches_hand_formula() {
        let mut w = GruWeights::zeros(1, 1);
        w.w_xz.set(0, 0, 0.7);
        w.u_hz.set(0, 0, -0.3);
        w.b_z[0] = 0.1;
        w.w_xr.set(0, 0, -0.5);
        w.u_hr.set(0, 0, 0.4);
        w.b_r[0] = -0.2;
        w.w_xh.set(0, 0, 1.1);
        w.u_rh.set(0, 0, 0.9);
        w.b_h[0] = 0.05;

        let x = 0.6;
        let h_prev = -0.4;
        let z = sigmoid(0.7 * x - 0.3 * h_prev + 0.1);
        let r = sigmoid(-0.5 * x + 0.4 * h_prev - 0.2);
        let cand = (1.1 * x + 0.9 * (r * h_prev) + 0.05).tanh();
        let expected = (1.0 - z) * h_prev + z * cand;

        let h = gru_cell_step(&w, &[x], &[h_prev]);
        assert_relative_eq!(h[0], expected, max_relative = 1e-15);
    }

    /// With all weights zero the gates sit at sigmoid(0) = 1/2 and the
    /// candidate at tanh(0) = 0, so the update halves the hidden state.
    #[test]
    fn zero_weights_halve_hidden_state() {
        let w = GruWeights::zeros(3, 2);
        let h = gru_cell_step(&w, &[1.0, -2.0, 3.0], &[0.8, -0.6]);
        assert_relative_eq!(h[0], 0.4, max_relative = 1e-15);
        assert_relative_eq!(h[1], -0.3, max_relative = 1e-15);
    }

    /// h' is a convex combination of h_prev and tanh output, so it stays in
    /// the hull of [-1, 1] and h_prev.
    #[test]
    fn update_stays_in_convex_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = GruWeights::init(3, 8, &mut rng);
        let mut h = vec![0.0; 8];
        for step in 0..50 {
            let x = [
                (step as f64 * 0.37).sin(),
                (step as f64 * 0.11).cos(),
                step as f64 / 50.0,
            ];
            h = gru_cell_step(&w, &x, &h);
            for &v in &h {
                assert!(v.abs() <= 1.0, "hidden state left [-1, 1]: {v}");
            }
        }
    }

    #[test]
    fn init_is_seed_deterministic_with_zero_biases() {
        let a = GruWeights::init(3, 4, &mut ChaCha8Rng::seed_from_u64(11));
        let b = GruWeights::init(3, 4, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        assert!(a.b_z.iter().all(|&v| v == 0.0));
        assert!(a.b_r.iter().all(|&v| v == 0.0));
        assert!(a.b_h.iter().all(|&v| v == 0.0));
        let scale = 0.5; // sqrt(1/4)
        for part in a.parts() {
            for &v in part {
                assert!(v.abs() <= scale);
            }
        }
    }
}
