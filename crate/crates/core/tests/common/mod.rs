// SPDX-License-Identifier: Apache-2.0

//! Helpers shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use deepsom::dataio::save_idx;
use deepsom::topology::{LayerSpec, NetworkTopology, ReceptiveField};
use deepsom::{Dataset, Image};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// 4×8 images; three 4×4 patches at stride 2 feed 2×2 SOMs, whose outputs
/// feed one fully connected 2×2 SOM.
pub fn toy_topology() -> NetworkTopology {
    NetworkTopology::new(
        4,
        8,
        &[
            LayerSpec {
                map_rows: 1,
                map_cols: 3,
                som_rows: 2,
                som_cols: 2,
                field: ReceptiveField::Pixels {
                    size: 4,
                    stride: 2,
                    pad: 0,
                },
            },
            LayerSpec {
                map_rows: 1,
                map_cols: 1,
                som_rows: 2,
                som_cols: 2,
                field: ReceptiveField::Full,
            },
        ],
    )
    .unwrap()
}

pub fn random_image(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random::<f64>()).collect(),
    )
    .unwrap()
}

/// Thin 28×28 strokes: one random line segment per image, labelled by its
/// orientation bucket.
pub fn strokes(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 10) as u8;
        let angle = std::f64::consts::PI * (label as f64 + rng.random::<f64>()) / 10.0;
        let (cx, cy) = (rng.random_range(8.0..20.0), rng.random_range(8.0..20.0));
        let len = rng.random_range(6.0..12.0);
        let mut px = vec![0.0; 784];
        for s in 0..=40 {
            let t = len * (s as f64 / 40.0 - 0.5);
            let (x, y) = (cx + t * angle.cos(), cy + t * angle.sin());
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    let (r, c) = (y.round() as i32 + dy, x.round() as i32 + dx);
                    if (0..28).contains(&r) && (0..28).contains(&c) {
                        let v: f64 = if dx == 0 && dy == 0 { 1.0 } else { 0.5 };
                        let p: &mut f64 = &mut px[(r * 28 + c) as usize];
                        *p = p.max(v);
                    }
                }
            }
        }
        images.push(Image::new(28, 28, px).unwrap());
        labels.push(label);
    }
    Dataset::new(images, labels).unwrap()
}

/// Writes `data` as an IDX pair under `dir` and returns (images, labels).
pub fn write_idx(data: &Dataset, dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    let images = dir.join(format!("{stem}-images-idx3-ubyte.gz"));
    let labels = dir.join(format!("{stem}-labels-idx1-ubyte.gz"));
    save_idx(data, &images, &labels).unwrap();
    (images, labels)
}

/// Straight-line reference for the toy network, written from the model
/// equations without the library's wiring or update code.
pub mod oracle {
    pub const SIGMA_OUT: f64 = 0.8;
    pub const SIGMA_UPDATE: f64 = 0.4;

    pub type Rows = Vec<Vec<f64>>;

    /// Weights per layer, per module, per neuron.
    #[derive(Clone, Debug)]
    pub struct Weights {
        pub layers: Vec<Vec<Rows>>,
    }

    #[derive(Clone, Debug)]
    pub struct Pass {
        /// inputs[l][m], outputs[l][m], winners[l][m]
        pub inputs: Vec<Vec<Vec<f64>>>,
        pub outputs: Vec<Vec<Vec<f64>>>,
        pub winners: Vec<Vec<usize>>,
    }

    pub fn patches(img: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for m in 0..3 {
            let mut p = Vec::new();
            for r in 0..4 {
                for c in 0..4 {
                    p.push(img[r * 8 + 2 * m + c]);
                }
            }
            out.push(unit(p));
        }
        out
    }

    fn dist_sq(a: usize, b: usize) -> f64 {
        let (ar, ac) = ((a / 2) as f64, (a % 2) as f64);
        let (br, bc) = ((b / 2) as f64, (b % 2) as f64);
        (ar - br).powi(2) + (ac - bc).powi(2)
    }

    pub fn respond(rows: &Rows, x: &[f64]) -> (usize, Vec<f64>) {
        let u: Vec<f64> = rows
            .iter()
            .map(|w| w.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        let mut win = 0;
        for j in 1..u.len() {
            if u[j] > u[win] {
                win = j;
            }
        }
        let out = (0..u.len())
            .map(|j| (-dist_sq(win, j) / (2.0 * SIGMA_OUT * SIGMA_OUT)).exp())
            .collect();
        (win, out)
    }

    fn unit(mut v: Vec<f64>) -> Vec<f64> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in v.iter_mut() {
                *x /= norm;
            }
        }
        v
    }

    /// `norm` scales the gathered layer-2 input to unit length.
    fn run(
        w: &Weights,
        l1_inputs: Vec<Vec<f64>>,
        l2_blend: Option<(&[f64], f64)>,
        norm: bool,
    ) -> Pass {
        let mut outputs = Vec::new();
        let mut winners = Vec::new();
        let mut o1 = Vec::new();
        let mut w1 = Vec::new();
        for (m, x) in l1_inputs.iter().enumerate() {
            let (j, o) = respond(&w.layers[0][m], x);
            w1.push(j);
            o1.push(o);
        }
        let mut own: Vec<f64> = o1.iter().flatten().copied().collect();
        if norm {
            own = unit(own);
        }
        let x2: Vec<f64> = match l2_blend {
            None => own,
            Some((adv, beta)) => adv
                .iter()
                .zip(&own)
                .map(|(a, t)| beta * a + (1.0 - beta) * t)
                .collect(),
        };
        let (j2, o2) = respond(&w.layers[1][0], &x2);
        outputs.push(o1);
        outputs.push(vec![o2]);
        winners.push(w1);
        winners.push(vec![j2]);
        Pass {
            inputs: vec![l1_inputs, vec![x2]],
            outputs,
            winners,
        }
    }

    pub fn forward(w: &Weights, img: &[f64], norm: bool) -> Pass {
        run(w, patches(img), None, norm)
    }

    /// Target pass under the advance pass's after-effect.
    pub fn blended(w: &Weights, target: &[f64], advance: &Pass, beta: f64, norm: bool) -> Pass {
        let tp = patches(target);
        let l1: Vec<Vec<f64>> = tp
            .iter()
            .zip(&advance.inputs[0])
            .map(|(t, a)| {
                a.iter()
                    .zip(t)
                    .map(|(a, t)| beta * a + (1.0 - beta) * t)
                    .collect()
            })
            .collect();
        let adv2 = advance.inputs[1][0].clone();
        run(w, l1, Some((&adv2, beta)), norm)
    }

    pub fn update(rows: &mut Rows, winner: usize, x: &[f64], rate: f64, sign: f64) {
        for (j, w) in rows.iter_mut().enumerate() {
            let k = (-dist_sq(winner, j) / (2.0 * SIGMA_UPDATE * SIGMA_UPDATE)).exp();
            if k < 1e-12 {
                continue;
            }
            for (wi, xi) in w.iter_mut().zip(x) {
                *wi += sign * rate * k * xi;
            }
            let n = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            for wi in w.iter_mut() {
                *wi /= n;
            }
        }
    }

    /// Layer rates rho * r^(n-l) for the two layers (l = 1, 2).
    pub fn rates(rho: f64, r: f64) -> [f64; 2] {
        [rho * r, rho]
    }

    pub fn apply(w: &mut Weights, pass: &Pass, rho: f64, r: f64, sign: f64) {
        for (l, rate) in rates(rho, r).into_iter().enumerate() {
            for m in 0..w.layers[l].len() {
                update(
                    &mut w.layers[l][m],
                    pass.winners[l][m],
                    &pass.inputs[l][m],
                    rate,
                    sign,
                );
            }
        }
    }
}

pub fn oracle_weights(net: &deepsom::topology::Network) -> oracle::Weights {
    oracle::Weights {
        layers: net
            .grids()
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|g| (0..g.neurons()).map(|j| g.row(j).to_vec()).collect())
                    .collect()
            })
            .collect(),
    }
}

pub fn max_weight_diff(net: &deepsom::topology::Network, w: &oracle::Weights) -> f64 {
    let mut worst: f64 = 0.0;
    for (l, layer) in net.grids().iter().enumerate() {
        for (m, g) in layer.iter().enumerate() {
            for j in 0..g.neurons() {
                for (a, b) in g.row(j).iter().zip(&w.layers[l][m][j]) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    worst
}
