// SPDX-License-Identifier: Apache-2.0

//! Unsupervised layer-wise competitive pre-training.
//!
//! Each trained layer has a plasticity window within one run of `total`
//! iterations. Inside its window a layer's learning rate and neighbourhood
//! width fall linearly from their start to their end values. Layers outside
//! their window are frozen.

use log::info;

use crate::dataio::{Dataset, SampleStream};
use crate::error::{Error, Result};
use crate::par;
use crate::somcore::{dot, KernelParams, SomGrid, UpdateSign};
use crate::topology::Network;

/// Linear interpolation from `start` at step 0 to `end` at step `total - 1`.
pub fn ramp(step: u64, total: u64, start: f64, end: f64) -> f64 {
    if total <= 1 {
        return start;
    }
    start + (end - start) * step as f64 / (total - 1) as f64
}

/// Inclusive 1-based iteration range in which a layer learns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub first: u64,
    pub last: u64,
}

impl Window {
    pub fn len(&self) -> u64 {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        self.last < self.first
    }

    pub fn contains(&self, k: u64) -> bool {
        (self.first..=self.last).contains(&k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSchedule {
    pub total: u64,
    /// One entry per network layer; `None` means never trained.
    pub windows: Vec<Option<Window>>,
    pub rho_start: f64,
    pub rho_end: f64,
    pub sigma_start: f64,
    pub sigma_end: f64,
}

impl Default for PretrainSchedule {
    /// 10,000 iterations; layers 1-4 open at 1, 2,501, 5,001 and 7,501 and
    /// all close at 10,000; the output layer is never trained.
    fn default() -> Self {
        Self::staggered(5, 4, 10_000)
    }
}

impl PretrainSchedule {
    /// The first `trained` of `n_layers` layers open at evenly staggered
    /// iterations and all stay plastic until `total`.
    pub fn staggered(n_layers: usize, trained: usize, total: u64) -> Self {
        let trained = trained.min(n_layers);
        let windows = (0..n_layers)
            .map(|l| {
                (l < trained).then(|| Window {
                    first: l as u64 * total / trained as u64 + 1,
                    last: total,
                })
            })
            .collect();
        PretrainSchedule {
            total,
            windows,
            rho_start: 1.0,
            rho_end: 0.0,
            sigma_start: 3.5,
            sigma_end: 0.0,
        }
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if self.windows.len() != n_layers {
            return Err(Error::Config(format!(
                "schedule has {} windows for a {n_layers}-layer network",
                self.windows.len()
            )));
        }
        for (l, w) in self.windows.iter().enumerate() {
            if let Some(w) = w {
                if w.first == 0 || w.is_empty() || w.last > self.total {
                    return Err(Error::Config(format!(
                        "layer {}: window {}..={} outside 1..={}",
                        l + 1,
                        w.first,
                        w.last,
                        self.total
                    )));
                }
            }
        }
        if self.rho_start < 0.0
            || self.rho_end < 0.0
            || self.sigma_start < 0.0
            || self.sigma_end < 0.0
        {
            return Err(Error::Config(
                "pre-training rates and widths must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate and kernel width of layer `l` at iteration `k`, or
    /// `None` outside its window.
    pub fn rates(&self, l: usize, k: u64) -> Option<(f64, f64)> {
        let w = self.windows.get(l).copied().flatten()?;
        if !w.contains(k) {
            return None;
        }
        let step = k - w.first;
        Some((
            ramp(step, w.len(), self.rho_start, self.rho_end),
            ramp(step, w.len(), self.sigma_start, self.sigma_end),
        ))
    }

    pub fn active_mask(&self, k: u64) -> String {
        (0..self.windows.len())
            .map(|l| if self.rates(l, k).is_some() { '1' } else { '0' })
            .collect()
    }

    /// Iterations each layer trains for.
    pub fn layer_totals(&self) -> Vec<u64> {
        self.windows
            .iter()
            .map(|w| w.map_or(0, |w| w.len()))
            .collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainReport {
    pub iterations: u64,
    /// Module updates applied per layer.
    pub updates: Vec<u64>,
}

/// Runs the whole schedule, drawing one image per iteration from `stream`.
///
/// Every active layer updates each module around the winner of the same
/// forward pass, with that pass's module input as the Hebbian term.
pub fn pretrain(
    network: &mut Network,
    data: &Dataset,
    stream: &mut SampleStream,
    schedule: &PretrainSchedule,
    kernels: &KernelParams,
    log_interval: u64,
) -> Result<PretrainReport> {
    schedule.validate(network.n_layers())?;
    kernels.validate()?;
    let mut report = PretrainReport {
        iterations: 0,
        updates: vec![0; network.n_layers()],
    };
    for k in 1..=schedule.total {
        let active: Vec<(usize, f64, f64)> = (0..network.n_layers())
            .filter_map(|l| schedule.rates(l, k).map(|(rho, sigma)| (l, rho, sigma)))
            .collect();
        if log_interval > 0 && (k == 1 || k % log_interval == 0) {
            let (rho, sigma) = active.first().map_or((0.0, 0.0), |a| (a.1, a.2));
            info!(
                "pretrain iter={k} layer_active={} rho={rho:.6} sigma={sigma:.6}",
                schedule.active_mask(k)
            );
        }
        let index = stream
            .next()
            .ok_or_else(|| Error::Data("pre-training stream is empty".into()))?;
        report.iterations += 1;
        let Some(depth) = active.iter().map(|a| a.0 + 1).max() else {
            continue;
        };
        let trace = network.forward_partial(data.image(index), kernels, depth)?;
        for &(l, rho, sigma) in &active {
            let winners = trace.state.layers[l].winners();
            let inputs = &trace.inputs.layers[l];
            par::try_for_each_mut(network.layer_mut(l), |m, grid| {
                grid.competitive_update(winners[m], &inputs[m], rho, sigma, UpdateSign::Attract)
            })?;
            report.updates[l] += winners.len() as u64;
        }
    }
    Ok(report)
}

/// Mean cosine similarity of weight rows over all 4-adjacent neuron pairs.
pub fn neighbor_similarity(grid: &SomGrid) -> f64 {
    let (rows, cols) = (grid.rows(), grid.cols());
    let cosine = |a: usize, b: usize| {
        let (x, y) = (grid.row(a), grid.row(b));
        let n = (dot(x, x) * dot(y, y)).sqrt();
        if n > 0.0 {
            dot(x, y) / n
        } else {
            0.0
        }
    };
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for r in 0..rows {
        for c in 0..cols {
            let j = r * cols + c;
            if c + 1 < cols {
                sum += cosine(j, j + 1);
                pairs += 1;
            }
            if r + 1 < rows {
                sum += cosine(j, j + cols);
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        sum / pairs as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Image;
    use crate::topology::{LayerSpec, NetworkTopology, ReceptiveField};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ramp_examples() {
        assert_eq!(ramp(0, 100, 1.0, 0.0), 1.0);
        assert_eq!(ramp(99, 100, 1.0, 0.0), 0.0);
        assert!((ramp(4999, 10_000, 3.5, 0.0) - 1.750_175_017_501_75).abs() < 1e-12);
        assert_eq!(ramp(0, 1, 2.0, 0.0), 2.0);
    }

    #[test]
    fn default_windows() {
        let s = PretrainSchedule::default();
        assert_eq!(s.layer_totals(), vec![10_000, 7_500, 5_000, 2_500, 0]);
        assert_eq!(s.windows[1].unwrap().first, 2_501);
        assert_eq!(s.windows[3].unwrap().first, 7_501);
        assert_eq!(s.active_mask(1), "10000");
        assert_eq!(s.active_mask(2_501), "11000");
        assert_eq!(s.active_mask(10_000), "11110");
        assert_eq!(s.rates(1, 2_501), Some((1.0, 3.5)));
        assert_eq!(s.rates(1, 10_000), Some((0.0, 0.0)));
        assert_eq!(s.rates(4, 5_000), None);
    }

    #[test]
    fn rates_non_increasing_in_window() {
        let s = PretrainSchedule::default();
        for l in 0..4 {
            let mut prev = (f64::INFINITY, f64::INFINITY);
            for k in 1..=s.total {
                if let Some((rho, sigma)) = s.rates(l, k) {
                    assert!(rho <= prev.0 && sigma <= prev.1);
                    prev = (rho, sigma);
                }
            }
        }
    }

    #[test]
    fn similarity_edge_cases() {
        let same = SomGrid::from_weights(10, 10, 3, [0.6, 0.8, 0.0].repeat(100), 0).unwrap();
        assert!((neighbor_similarity(&same) - 1.0).abs() < 1e-12);

        let mut w = vec![0.0; 4 * 4];
        for j in 0..4 {
            w[j * 4 + j] = 1.0;
        }
        let ortho = SomGrid::from_weights(2, 2, 4, w, 0).unwrap();
        assert_eq!(neighbor_similarity(&ortho), 0.0);
    }

    fn small_setup() -> (Network, Dataset) {
        let specs = [
            LayerSpec {
                map_rows: 2,
                map_cols: 2,
                som_rows: 4,
                som_cols: 4,
                field: ReceptiveField::Pixels {
                    size: 4,
                    stride: 4,
                    pad: 0,
                },
            },
            LayerSpec {
                map_rows: 1,
                map_cols: 1,
                som_rows: 4,
                som_cols: 4,
                field: ReceptiveField::Full,
            },
            LayerSpec {
                map_rows: 1,
                map_cols: 1,
                som_rows: 3,
                som_cols: 3,
                field: ReceptiveField::Full,
            },
        ];
        let t = NetworkTopology::new(8, 8, &specs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let images = (0..20)
            .map(|_| Image::new(8, 8, (0..64).map(|_| rng.random::<f64>()).collect()).unwrap())
            .collect();
        let data = Dataset::new(images, vec![0; 20]).unwrap();
        (Network::build(t, 1), data)
    }

    #[test]
    fn windows_gate_updates() {
        let (mut net, data) = small_setup();
        let init = net.clone();
        let mut schedule = PretrainSchedule::staggered(3, 2, 40);
        schedule.total = 20;
        schedule.windows[1] = Some(Window {
            first: 30,
            last: 40,
        });
        assert!(schedule.validate(3).is_err());

        let schedule = PretrainSchedule::staggered(3, 2, 40);
        let mut stream = SampleStream::cycling((0..20).collect(), 3);
        // run only the part before layer 2 opens
        let mut head = schedule.clone();
        head.total = 20;
        head.windows[0] = Some(Window { first: 1, last: 20 });
        head.windows[1] = None;
        pretrain(
            &mut net,
            &data,
            &mut stream,
            &head,
            &KernelParams::default(),
            0,
        )
        .unwrap();
        assert_ne!(net.layer(0), init.layer(0));
        assert_eq!(net.layer(1), init.layer(1));

        let mut net = init.clone();
        let report = pretrain(
            &mut net,
            &data,
            &mut stream,
            &schedule,
            &KernelParams::default(),
            0,
        )
        .unwrap();
        assert_eq!(report.iterations, 40);
        assert_eq!(report.updates, vec![40 * 4, 20, 0]);
        assert_eq!(net.layer(2), init.layer(2));
        assert_ne!(net.layer(1), init.layer(1));
        for l in 0..3 {
            for g in net.layer(l) {
                for j in 0..g.neurons() {
                    assert!((dot(g.row(j), g.row(j)).sqrt() - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn pretraining_is_deterministic() {
        let (net0, data) = small_setup();
        let schedule = PretrainSchedule::staggered(3, 2, 30);
        let run = || {
            let mut net = net0.clone();
            let mut stream = SampleStream::cycling((0..20).collect(), 8);
            pretrain(
                &mut net,
                &data,
                &mut stream,
                &schedule,
                &KernelParams::default(),
                0,
            )
            .unwrap();
            net
        };
        assert_eq!(run(), run());
    }
}
