// SPDX-License-Identifier: Apache-2.0

//! A single SOM module: inner products, winners-share-all activation and
//! competitive weight updates with L2 row renormalization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Gaussian factors below this are treated as zero and the row is skipped.
pub const KERNEL_CUTOFF: f64 = 1e-12;

/// Scales `v` to unit L2 norm; a zero vector stays zero.
pub fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Rows whose norm falls below this are replaced by a fresh random unit row.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Output and update kernel widths, and how upper layers see their input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    /// Width of the WSA output kernel.
    pub sigma_out: f64,
    /// Width of the neighbourhood used by supervised updates.
    pub sigma_update: f64,
    /// Scale each gathered input of layers 2.. to unit L2 norm, as layer-1
    /// patches are. Off gives the raw concatenation of module outputs.
    pub normalize_inputs: bool,
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams {
            sigma_out: 0.8,
            sigma_update: 0.4,
            normalize_inputs: true,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_out", self.sigma_out),
            ("sigma_update", self.sigma_update),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn sigma(&self, kernel: Kernel) -> f64 {
        match kernel {
            Kernel::Output => self.sigma_out,
            Kernel::Update => self.sigma_update,
        }
    }
}

/// Selects one of the two kernel widths in [`KernelParams`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    Output,
    Update,
}

/// Direction of a competitive update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateSign {
    /// Pull rows toward the input.
    Attract,
    /// Push rows away from the input.
    Repel,
}

impl UpdateSign {
    pub fn factor(self) -> f64 {
        match self {
            UpdateSign::Attract => 1.0,
            UpdateSign::Repel => -1.0,
        }
    }
}

/// WSA response of one module.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationResult {
    pub winner: usize,
    pub values: Vec<f64>,
}

/// Squared Euclidean distance between two neurons of a row-major grid.
#[inline]
pub fn grid_distance_sq(a: usize, b: usize, cols: usize) -> f64 {
    let (ar, ac) = ((a / cols) as f64, (a % cols) as f64);
    let (br, bc) = ((b / cols) as f64, (b % cols) as f64);
    (ar - br) * (ar - br) + (ac - bc) * (ac - bc)
}

/// Euclidean distance between two neurons of a row-major, non-toroidal grid.
pub fn grid_distance(a: usize, b: usize, cols: usize) -> f64 {
    grid_distance_sq(a, b, cols).sqrt()
}

/// `exp(-d²/2σ²)`. A zero width collapses to an indicator of `d = 0`.
#[inline]
pub fn gaussian(dist_sq: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        (-dist_sq / (2.0 * sigma * sigma)).exp()
    } else if dist_sq == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(u: &[f64]) -> Result<usize> {
    if u.is_empty() {
        return Err(Error::Numeric("argmax of an empty vector".into()));
    }
    let mut best = 0;
    for (j, &x) in u.iter().enumerate() {
        if x.is_nan() {
            return Err(Error::Numeric(format!("NaN inner product at neuron {j}")));
        }
        if x > u[best] {
            best = j;
        }
    }
    Ok(best)
}

/// Winners-share-all activation of a grid with `cols` columns.
pub fn wsa_with_sigma(u: &[f64], cols: usize, sigma: f64) -> Result<ActivationResult> {
    let winner = argmax(u)?;
    let values = (0..u.len())
        .map(|j| gaussian(grid_distance_sq(winner, j, cols), sigma))
        .collect();
    Ok(ActivationResult { winner, values })
}

/// Winners-share-all activation using the kernel selected from `params`.
pub fn wsa_output(
    u: &[f64],
    cols: usize,
    params: &KernelParams,
    kernel: Kernel,
) -> Result<ActivationResult> {
    wsa_with_sigma(u, cols, params.sigma(kernel))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in chunks_a.zip(chunks_b) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn random_unit_row<R: Rng>(row: &mut [f64], rng: &mut R) {
    loop {
        for w in row.iter_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
        let norm = dot(row, row).sqrt();
        if norm >= DEGENERATE_NORM {
            row.iter_mut().for_each(|w| *w /= norm);
            return;
        }
    }
}

/// One module's neuron grid and its weight matrix (one row per neuron).
#[derive(Clone, Debug, PartialEq)]
pub struct SomGrid {
    rows: usize,
    cols: usize,
    input_dim: usize,
    weights: Vec<f64>,
    guard_state: u64,
}

impl SomGrid {
    /// Seeded uniform (-1, 1) entries, each row then scaled to unit norm.
    pub fn random<R: Rng>(rows: usize, cols: usize, input_dim: usize, rng: &mut R) -> Self {
        let mut weights = vec![0.0; rows * cols * input_dim];
        if input_dim > 0 {
            for row in weights.chunks_exact_mut(input_dim) {
                random_unit_row(row, rng);
            }
        }
        SomGrid {
            rows,
            cols,
            input_dim,
            weights,
            guard_state: rng.random(),
        }
    }

    /// Wraps an existing weight matrix without renormalizing it.
    pub fn from_weights(
        rows: usize,
        cols: usize,
        input_dim: usize,
        weights: Vec<f64>,
        guard_state: u64,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || input_dim == 0 {
            return Err(Error::Config(format!(
                "degenerate grid {rows}x{cols} with input_dim {input_dim}"
            )));
        }
        if weights.len() != rows * cols * input_dim {
            return Err(Error::DimensionMismatch {
                expected: rows * cols * input_dim,
                got: weights.len(),
            });
        }
        Ok(SomGrid {
            rows,
            cols,
            input_dim,
            weights,
            guard_state,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn neurons(&self) -> usize {
        self.rows * self.cols
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// State of the generator used by the renormalization guard.
    pub fn guard_state(&self) -> u64 {
        self.guard_state
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.input_dim..(j + 1) * self.input_dim]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.weights[j * self.input_dim..(j + 1) * self.input_dim]
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: input.len(),
            });
        }
        Ok(())
    }

    /// `u = W z`.
    pub fn inner_products(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self
            .weights
            .chunks_exact(self.input_dim)
            .map(|row| dot(row, input))
            .collect())
    }

    /// Inner products followed by WSA with the given width.
    pub fn respond(&self, input: &[f64], sigma: f64) -> Result<ActivationResult> {
        let u = self.inner_products(input)?;
        wsa_with_sigma(&u, self.cols, sigma)
    }

    /// [`SomGrid::respond`] for several inputs, loading each weight row once.
    pub fn respond_batch(&self, inputs: &[&[f64]], sigma: f64) -> Result<Vec<ActivationResult>> {
        for x in inputs {
            self.check_input(x)?;
        }
        let mut u = vec![vec![0.0; self.neurons()]; inputs.len()];
        for (j, row) in self.weights.chunks_exact(self.input_dim).enumerate() {
            for (ui, x) in u.iter_mut().zip(inputs) {
                ui[j] = dot(row, x);
            }
        }
        u.iter()
            .map(|ui| wsa_with_sigma(ui, self.cols, sigma))
            .collect()
    }

    fn renormalize_row(&mut self, j: usize) {
        let norm = dot(self.row(j), self.row(j)).sqrt();
        if norm.is_finite() && norm >= DEGENERATE_NORM {
            self.row_mut(j).iter_mut().for_each(|w| *w /= norm);
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(&mut self.guard_state));
            let dim = self.input_dim;
            random_unit_row(&mut self.weights[j * dim..(j + 1) * dim], &mut rng);
        }
    }

    /// Scales every row to unit L2 norm.
    pub fn normalize_rows(&mut self) {
        for j in 0..self.neurons() {
            self.renormalize_row(j);
        }
    }

    /// Adds `sign · rate · exp(-d²/2σ²) · input` to each row around `winner`,
    /// then renormalizes the rows that moved.
    pub fn competitive_update(
        &mut self,
        winner: usize,
        input: &[f64],
        rate: f64,
        sigma: f64,
        sign: UpdateSign,
    ) -> Result<()> {
        self.check_input(input)?;
        if !(rate.is_finite() && rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be >= 0, got {rate}"
            )));
        }
        if winner >= self.neurons() {
            return Err(Error::Config(format!(
                "winner {winner} out of range for {} neurons",
                self.neurons()
            )));
        }
        if rate == 0.0 {
            return Ok(());
        }
        let step = sign.factor() * rate;
        for j in 0..self.neurons() {
            let k = gaussian(grid_distance_sq(winner, j, self.cols), sigma);
            if k < KERNEL_CUTOFF {
                continue;
            }
            let coef = step * k;
            for (w, x) in self.row_mut(j).iter_mut().zip(input) {
                *w += coef * x;
            }
            self.renormalize_row(j);
        }
        Ok(())
    }
}
