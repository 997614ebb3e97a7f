// SPDX-License-Identifier: Apache-2.0

//! Visual and tabular artifacts: feature atlases, usage histograms, optimal
//! stimuli and learning curves.

use std::fmt::Write as _;
use std::path::Path;

use crate::aplearn::output_winners;
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::somcore::{KernelParams, SomGrid};
use crate::topology::{Network, Wiring};

use super::BlockMetrics;

/// 8-bit grayscale raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Gray {
    /// Binary PGM (`P5`, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_pgm())
    }
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Min-max scales `values` to 0..=255; a constant input maps to 128.
pub fn scale_to_u8(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if values.is_empty() || hi - lo <= 0.0 || !(hi - lo).is_finite() {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|&v| (255.0 * (v - lo) / (hi - lo)).round() as u8)
        .collect()
}

pub fn to_gray(values: &[f64], width: usize, height: usize) -> Result<Gray> {
    if values.len() != width * height {
        return Err(Error::DimensionMismatch {
            expected: width * height,
            got: values.len(),
        });
    }
    Ok(Gray {
        width,
        height,
        pixels: scale_to_u8(values),
    })
}

/// Tiles every neuron's weight row as a `side`×`side` patch in grid order,
/// framed and separated by 1-pixel lines of value 0. Each patch is scaled on
/// its own.
pub fn feature_atlas(grid: &SomGrid, side: usize) -> Result<Gray> {
    if grid.input_dim() != side * side {
        return Err(Error::DimensionMismatch {
            expected: side * side,
            got: grid.input_dim(),
        });
    }
    let width = grid.cols() * (side + 1) + 1;
    let height = grid.rows() * (side + 1) + 1;
    let mut pixels = vec![0u8; width * height];
    for j in 0..grid.neurons() {
        let (gr, gc) = (j / grid.cols(), j % grid.cols());
        let patch = scale_to_u8(grid.row(j));
        for r in 0..side {
            let y = 1 + gr * (side + 1) + r;
            let x = 1 + gc * (side + 1);
            pixels[y * width + x..y * width + x + side]
                .copy_from_slice(&patch[r * side..(r + 1) * side]);
        }
    }
    Ok(Gray {
        width,
        height,
        pixels,
    })
}

/// How often each output neuron wins over `data`.
pub fn usage_counts(network: &Network, data: &Dataset, kernels: &KernelParams) -> Result<Vec<u64>> {
    let neurons = network.layer(network.n_layers() - 1)[0].neurons();
    let mut counts = vec![0u64; neurons];
    for j in output_winners(network, data, kernels)? {
        counts[j] += 1;
    }
    Ok(counts)
}

/// Counts drawn on the output grid, scaled so the busiest neuron is 255.
pub fn usage_image(counts: &[u64], rows: usize, cols: usize) -> Result<Gray> {
    if counts.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            expected: rows * cols,
            got: counts.len(),
        });
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    let pixels = counts
        .iter()
        .map(|&c| {
            if max == 0 {
                0
            } else {
                (255.0 * c as f64 / max as f64).round() as u8
            }
        })
        .collect();
    Ok(Gray {
        width: cols,
        height: rows,
        pixels,
    })
}

/// Shannon entropy of the count distribution, in bits.
pub fn usage_entropy(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            p * p.log2()
        })
        .sum::<f64>()
}

pub fn usage_csv(counts: &[u64]) -> String {
    let mut out = String::from("neuron,count\n");
    for (j, c) in counts.iter().enumerate() {
        let _ = writeln!(out, "{j},{c}");
    }
    out
}

/// Input image that a neuron's weights point toward.
///
/// Weight rows are projected down linearly: the coefficients on a layer's
/// neurons become a weighted sum of their rows over the layer below, until
/// first-layer rows land on their pixel patches. Overlapping pixels are
/// divided by how many contributing patches cover them, and the padding is
/// cropped. Values are raw; scale them for display.
pub fn optimal_stimulus(
    network: &Network,
    layer: usize,
    module: usize,
    neuron: usize,
) -> Result<Vec<f64>> {
    let topo = network.topology();
    if layer >= network.n_layers() {
        return Err(Error::Config(format!(
            "layer {} out of range (network has {})",
            layer + 1,
            network.n_layers()
        )));
    }
    let modules = topo.layer(layer).spec.modules();
    let neurons = topo.layer(layer).spec.neurons();
    if module >= modules || neuron >= neurons {
        return Err(Error::Config(format!(
            "layer {} has {modules} modules of {neurons} neurons; got module {module} neuron {neuron}",
            layer + 1
        )));
    }
    // coefficients on every neuron of every module of the current layer
    let mut coef: Vec<Vec<f64>> = vec![vec![0.0; neurons]; modules];
    coef[module][neuron] = 1.0;
    for l in (1..=layer).rev() {
        let below = &topo.layer(l - 1).spec;
        let mut next = vec![vec![0.0; below.neurons()]; below.modules()];
        let Wiring::Modules { sources } = &topo.layer(l).wiring else {
            unreachable!("layers above the first read module outputs")
        };
        for (m, c) in coef.iter().enumerate() {
            let grid = network.grid(l, m);
            for (k, &ck) in c.iter().enumerate() {
                if ck == 0.0 {
                    continue;
                }
                let row = grid.row(k);
                for (s, &src) in sources[m].iter().enumerate() {
                    let part = &row[s * below.neurons()..(s + 1) * below.neurons()];
                    for (t, &w) in next[src].iter_mut().zip(part) {
                        *t += ck * w;
                    }
                }
            }
        }
        coef = next;
    }

    let (size, _, pad) = topo.patch_geometry();
    let Wiring::Patches { origins } = &topo.layer(0).wiring else {
        unreachable!("first layer reads pixels")
    };
    let (pr, pc) = (topo.image_rows() + 2 * pad, topo.image_cols() + 2 * pad);
    let mut sum = vec![0.0; pr * pc];
    let mut cover = vec![0u32; pr * pc];
    for (m, c) in coef.iter().enumerate() {
        if c.iter().all(|&x| x == 0.0) {
            continue;
        }
        let grid = network.grid(0, m);
        let mut patch = vec![0.0; size * size];
        for (k, &ck) in c.iter().enumerate() {
            if ck != 0.0 {
                for (p, &w) in patch.iter_mut().zip(grid.row(k)) {
                    *p += ck * w;
                }
            }
        }
        let (r0, c0) = origins[m];
        for dr in 0..size {
            for dc in 0..size {
                let at = (r0 + dr) * pc + c0 + dc;
                sum[at] += patch[dr * size + dc];
                cover[at] += 1;
            }
        }
    }
    let mut out = Vec::with_capacity(topo.image_rows() * topo.image_cols());
    for r in pad..pad + topo.image_rows() {
        for c in pad..pad + topo.image_cols() {
            let at = r * pc + c;
            out.push(if cover[at] > 0 {
                sum[at] / f64::from(cover[at])
            } else {
                0.0
            });
        }
    }
    Ok(out)
}

/// Learning curve CSV; block 0 is the baseline before any supervised trial.
pub fn curve_csv(metrics: &[BlockMetrics]) -> String {
    let mut out = String::from("block,error_rate,ap_invocations,seconds\n");
    for m in metrics {
        let _ = writeln!(
            out,
            "{},{:.6},{},{:.3}",
            m.block, m.error_rate, m.ap_invocations, m.seconds
        );
    }
    out
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<BlockMetrics>> {
    let mut lines = text.lines();
    if lines.next() != Some("block,error_rate,ap_invocations,seconds") {
        return Err(Error::Data("curve file lacks the expected header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Data(format!("curve row {}: {line:?}", n + 1));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(BlockMetrics {
                block: f[0].parse().map_err(|_| bad())?,
                error_rate: f[1].parse().map_err(|_| bad())?,
                trials: 0,
                ap_invocations: f[2].parse().map_err(|_| bad())?,
                seconds: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Side-by-side error rates of several curves keyed by block.
pub fn merge_curves(named: &[(String, Vec<BlockMetrics>)]) -> String {
    let mut out = String::from("block");
    for (name, _) in named {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    let rows = named.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    for i in 0..rows {
        let block = named
            .iter()
            .find_map(|(_, c)| c.get(i).map(|m| m.block))
            .unwrap_or(i as u64);
        let _ = write!(out, "{block}");
        for (_, c) in named {
            match c.get(i) {
                Some(m) => {
                    let _ = write!(out, ",{:.6}", m.error_rate);
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}
