// SPDX-License-Identifier: Apache-2.0

//! Layer wiring, patch extraction and the feedforward pass.
//!
//! Layer 0 reads square pixel patches from a zero-padded image. Every later
//! layer reads the concatenated WSA outputs of a set of modules in the layer
//! below, either a square window of the module grid or the whole layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::Image;
use crate::error::{Error, Result};
use crate::par;
use crate::somcore::{normalize, ActivationResult, KernelParams, SomGrid};

/// Where a layer's modules take their input from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReceptiveField {
    /// `size`×`size` pixel patches at `stride`, after `pad` zero pixels are
    /// added on every side of the image.
    Pixels {
        size: usize,
        stride: usize,
        pad: usize,
    },
    /// `size`×`size` windows of modules of the previous layer at `stride`.
    Maps { size: usize, stride: usize },
    /// Every module of the previous layer.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub map_rows: usize,
    pub map_cols: usize,
    pub som_rows: usize,
    pub som_cols: usize,
    pub field: ReceptiveField,
}

impl LayerSpec {
    pub fn modules(&self) -> usize {
        self.map_rows * self.map_cols
    }

    pub fn neurons(&self) -> usize {
        self.som_rows * self.som_cols
    }

    /// The five-layer MNIST network: 7×7, 5×5, 5×5, 5×5 and 1×1 module maps
    /// of 10×10 SOMs.
    pub fn mnist_layers() -> Vec<LayerSpec> {
        let layer = |map: usize, field| LayerSpec {
            map_rows: map,
            map_cols: map,
            som_rows: 10,
            som_cols: 10,
            field,
        };
        vec![
            layer(
                7,
                ReceptiveField::Pixels {
                    size: 6,
                    stride: 4,
                    pad: 1,
                },
            ),
            layer(5, ReceptiveField::Maps { size: 3, stride: 1 }),
            // a 5×5 window over a 5×5 map admits one position, but the layer
            // holds 25 modules: each module sees the whole previous layer
            layer(5, ReceptiveField::Full),
            layer(5, ReceptiveField::Full),
            layer(1, ReceptiveField::Maps { size: 5, stride: 1 }),
        ]
    }
}

/// Resolved inputs of one layer.
#[derive(Clone, Debug, PartialEq)]
pub enum Wiring {
    /// Top-left corner of each module's patch, in padded image coordinates.
    Patches { origins: Vec<(usize, usize)> },
    /// Source module indices of the previous layer, in concatenation order.
    Modules { sources: Vec<Vec<usize>> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGeometry {
    pub spec: LayerSpec,
    pub input_dim: usize,
    pub wiring: Wiring,
}

impl LayerGeometry {
    pub fn connections(&self) -> usize {
        self.spec.modules() * self.spec.neurons() * self.input_dim
    }
}

/// A validated linear chain of layers over images of a fixed shape.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkTopology {
    image_rows: usize,
    image_cols: usize,
    layers: Vec<LayerGeometry>,
}

fn window_count(extent: usize, size: usize, stride: usize) -> Option<usize> {
    if stride == 0 || size == 0 || size > extent || !(extent - size).is_multiple_of(stride) {
        None
    } else {
        Some((extent - size) / stride + 1)
    }
}

impl NetworkTopology {
    pub fn new(image_rows: usize, image_cols: usize, specs: &[LayerSpec]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        let mut layers: Vec<LayerGeometry> = Vec::with_capacity(specs.len());
        for (l, spec) in specs.iter().enumerate() {
            let bad = |msg: String| Error::Config(format!("layer {}: {msg}", l + 1));
            if spec.modules() == 0 || spec.neurons() == 0 {
                return Err(bad("empty module map or SOM grid".into()));
            }
            let geometry = match (l, spec.field) {
                (0, ReceptiveField::Pixels { size, stride, pad }) => {
                    let rows = window_count(image_rows + 2 * pad, size, stride);
                    let cols = window_count(image_cols + 2 * pad, size, stride);
                    if rows != Some(spec.map_rows) || cols != Some(spec.map_cols) {
                        return Err(bad(format!(
                            "{size}x{size} patches at stride {stride} with pad {pad} over a \
                             {image_rows}x{image_cols} image do not tile a {}x{} map",
                            spec.map_rows, spec.map_cols
                        )));
                    }
                    let origins = (0..spec.map_rows)
                        .flat_map(|i| (0..spec.map_cols).map(move |j| (i * stride, j * stride)))
                        .collect();
                    LayerGeometry {
                        spec: *spec,
                        input_dim: size * size,
                        wiring: Wiring::Patches { origins },
                    }
                }
                (0, _) => return Err(bad("the first layer must read pixel patches".into())),
                (_, ReceptiveField::Pixels { .. }) => {
                    return Err(bad("only the first layer may read pixels".into()))
                }
                (_, field) => {
                    let prev = &layers[l - 1].spec;
                    let sources: Vec<Vec<usize>> = match field {
                        ReceptiveField::Maps { size, stride } => {
                            let rows = window_count(prev.map_rows, size, stride);
                            let cols = window_count(prev.map_cols, size, stride);
                            if rows != Some(spec.map_rows) || cols != Some(spec.map_cols) {
                                return Err(bad(format!(
                                    "{size}x{size} windows at stride {stride} over a {}x{} map \
                                     do not tile a {}x{} map",
                                    prev.map_rows, prev.map_cols, spec.map_rows, spec.map_cols
                                )));
                            }
                            let prev_cols = prev.map_cols;
                            (0..spec.map_rows)
                                .flat_map(|i| (0..spec.map_cols).map(move |j| (i, j)))
                                .map(|(i, j)| {
                                    (0..size)
                                        .flat_map(|di| {
                                            (0..size).map(move |dj| {
                                                (i * stride + di) * prev_cols + j * stride + dj
                                            })
                                        })
                                        .collect()
                                })
                                .collect()
                        }
                        _ => vec![(0..prev.modules()).collect(); spec.modules()],
                    };
                    LayerGeometry {
                        spec: *spec,
                        input_dim: sources[0].len() * prev.neurons(),
                        wiring: Wiring::Modules { sources },
                    }
                }
            };
            layers.push(geometry);
        }
        Ok(NetworkTopology {
            image_rows,
            image_cols,
            layers,
        })
    }

    /// The 28×28 MNIST network.
    pub fn mnist() -> Self {
        Self::new(28, 28, &LayerSpec::mnist_layers()).expect("mnist topology is consistent")
    }

    pub fn image_rows(&self) -> usize {
        self.image_rows
    }

    pub fn image_cols(&self) -> usize {
        self.image_cols
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerGeometry] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &LayerGeometry {
        &self.layers[l]
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|g| g.spec).collect()
    }

    /// Weights per layer.
    pub fn connections(&self) -> Vec<usize> {
        self.layers.iter().map(LayerGeometry::connections).collect()
    }

    pub fn total_weights(&self) -> usize {
        self.connections().iter().sum()
    }

    /// Pixel geometry of the first layer: (patch size, stride, pad).
    pub fn patch_geometry(&self) -> (usize, usize, usize) {
        match self.layers[0].spec.field {
            ReceptiveField::Pixels { size, stride, pad } => (size, stride, pad),
            _ => unreachable!("validated at construction"),
        }
    }

    /// Cuts the zero-padded image into L2-normalized patch vectors, one per
    /// first-layer module. All-zero patches stay zero.
    pub fn extract_patches(&self, image: &Image) -> Result<Vec<Vec<f64>>> {
        if image.rows() != self.image_rows || image.cols() != self.image_cols {
            return Err(Error::Data(format!(
                "image is {}x{}, network expects {}x{}",
                image.rows(),
                image.cols(),
                self.image_rows,
                self.image_cols
            )));
        }
        let (size, _, pad) = self.patch_geometry();
        let Wiring::Patches { origins } = &self.layers[0].wiring else {
            unreachable!("validated at construction")
        };
        let pixel = |pr: usize, pc: usize| -> f64 {
            if pr < pad || pc < pad || pr - pad >= self.image_rows || pc - pad >= self.image_cols {
                0.0
            } else {
                image.get(pr - pad, pc - pad)
            }
        };
        Ok(origins
            .iter()
            .map(|&(r0, c0)| {
                let mut patch: Vec<f64> = (0..size)
                    .flat_map(|dr| (0..size).map(move |dc| (r0 + dr, c0 + dc)))
                    .map(|(r, c)| pixel(r, c))
                    .collect();
                normalize(&mut patch);
                patch
            })
            .collect())
    }

    /// Concatenates the outputs of the modules wired into module `m` of
    /// layer `l` (`l >= 1`), reading each source module through `values`.
    pub fn gather_with<'a, F>(&self, l: usize, m: usize, values: F) -> Vec<f64>
    where
        F: Fn(usize) -> &'a [f64],
    {
        let Wiring::Modules { sources } = &self.layers[l].wiring else {
            panic!("layer {} reads pixels, not module outputs", l + 1);
        };
        let mut out = Vec::with_capacity(self.layers[l].input_dim);
        for &src in &sources[m] {
            out.extend_from_slice(values(src));
        }
        out
    }

    /// Input vector of module `m` in layer `l >= 1` given the layer below.
    pub fn gather_input(&self, l: usize, m: usize, prev: &LayerActivation) -> Vec<f64> {
        self.gather_with(l, m, |src| prev.modules[src].values.as_slice())
    }
}

/// Module outputs of one layer at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerActivation {
    pub modules: Vec<ActivationResult>,
}

impl LayerActivation {
    pub fn winners(&self) -> Vec<usize> {
        self.modules.iter().map(|a| a.winner).collect()
    }
}

/// Which presentation a [`NetworkState`] belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeTag {
    /// Plain pass of the target input at time t.
    Target,
    /// Plain pass of the advance input at time t-1.
    Advance,
    /// Target pass carrying the after-effect of the advance pass.
    Blended,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    pub layers: Vec<LayerActivation>,
    pub tag: TimeTag,
}

impl NetworkState {
    pub fn last(&self) -> &LayerActivation {
        self.layers.last().expect("state has at least one layer")
    }

    /// Winner of the first module of the last layer.
    pub fn output_winner(&self) -> usize {
        self.last().modules[0].winner
    }
}

/// Input vector presented to every module of every layer during one pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerInputs {
    pub layers: Vec<Vec<Vec<f64>>>,
}

/// A forward pass together with the inputs each module saw.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub state: NetworkState,
    pub inputs: LayerInputs,
}

/// Topology plus one SOM grid per module.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    topology: NetworkTopology,
    grids: Vec<Vec<SomGrid>>,
}

fn module_seed(seed: u64, layer: usize, module: usize) -> u64 {
    let mut z = seed ^ ((layer as u64) << 48) ^ ((module as u64) << 24) ^ 0x5DEE_CE66_D1CE_4E5B;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Network {
    /// Allocates every module with seeded random unit rows.
    pub fn build(topology: NetworkTopology, seed: u64) -> Self {
        let grids = topology
            .layers()
            .iter()
            .enumerate()
            .map(|(l, g)| {
                par::map_indices(g.spec.modules(), |m| {
                    let mut rng = ChaCha8Rng::seed_from_u64(module_seed(seed, l, m));
                    SomGrid::random(g.spec.som_rows, g.spec.som_cols, g.input_dim, &mut rng)
                })
            })
            .collect();
        Network { topology, grids }
    }

    /// Reassembles a network from stored grids, checking them against the
    /// topology.
    pub fn from_parts(topology: NetworkTopology, grids: Vec<Vec<SomGrid>>) -> Result<Self> {
        if grids.len() != topology.n_layers() {
            return Err(Error::Config(format!(
                "{} grid layers for a {}-layer topology",
                grids.len(),
                topology.n_layers()
            )));
        }
        for (l, (layer, geometry)) in grids.iter().zip(topology.layers()).enumerate() {
            let spec = &geometry.spec;
            if layer.len() != spec.modules() {
                return Err(Error::Config(format!(
                    "layer {}: {} grids, expected {}",
                    l + 1,
                    layer.len(),
                    spec.modules()
                )));
            }
            for g in layer {
                if g.rows() != spec.som_rows
                    || g.cols() != spec.som_cols
                    || g.input_dim() != geometry.input_dim
                {
                    return Err(Error::Config(format!(
                        "layer {}: grid shape mismatch",
                        l + 1
                    )));
                }
            }
        }
        Ok(Network { topology, grids })
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn n_layers(&self) -> usize {
        self.topology.n_layers()
    }

    pub fn layer(&self, l: usize) -> &[SomGrid] {
        &self.grids[l]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut [SomGrid] {
        &mut self.grids[l]
    }

    pub fn grids(&self) -> &[Vec<SomGrid>] {
        &self.grids
    }

    pub fn grid(&self, l: usize, m: usize) -> &SomGrid {
        &self.grids[l][m]
    }

    /// Runs every module of layer `l` on its input vector.
    pub fn respond_layer(
        &self,
        l: usize,
        inputs: &[Vec<f64>],
        sigma: f64,
    ) -> Result<LayerActivation> {
        let grids = &self.grids[l];
        if inputs.len() != grids.len() {
            return Err(Error::DimensionMismatch {
                expected: grids.len(),
                got: inputs.len(),
            });
        }
        let modules = par::try_map_indices(grids.len(), |m| grids[m].respond(&inputs[m], sigma))?;
        Ok(LayerActivation { modules })
    }

    /// Input vectors of every module of layer `l >= 1`.
    pub fn gather_layer(
        &self,
        l: usize,
        prev: &LayerActivation,
        kernels: &KernelParams,
    ) -> Vec<Vec<f64>> {
        par::map_indices(self.grids[l].len(), |m| {
            let mut v = self.topology.gather_input(l, m, prev);
            if kernels.normalize_inputs {
                normalize(&mut v);
            }
            v
        })
    }

    /// Feedforward pass recording the input of every module.
    pub fn forward_traced(&self, image: &Image, kernels: &KernelParams) -> Result<Trace> {
        self.forward_partial(image, kernels, self.n_layers())
    }

    /// Feedforward pass through the first `depth` layers only.
    pub fn forward_partial(
        &self,
        image: &Image,
        kernels: &KernelParams,
        depth: usize,
    ) -> Result<Trace> {
        let sigma = kernels.sigma_out;
        let depth = depth.min(self.n_layers());
        let mut inputs = Vec::with_capacity(depth);
        let mut layers: Vec<LayerActivation> = Vec::with_capacity(depth);
        for l in 0..depth {
            let layer_inputs = if l == 0 {
                self.topology.extract_patches(image)?
            } else {
                self.gather_layer(l, &layers[l - 1], kernels)
            };
            layers.push(self.respond_layer(l, &layer_inputs, sigma)?);
            inputs.push(layer_inputs);
        }
        Ok(Trace {
            state: NetworkState {
                layers,
                tag: TimeTag::Target,
            },
            inputs: LayerInputs { layers: inputs },
        })
    }

    /// Traced passes of several images that share each weight-row load.
    /// Equal to calling [`Network::forward_traced`] per image.
    pub fn forward_batch_traced(
        &self,
        images: &[&Image],
        kernels: &KernelParams,
    ) -> Result<Vec<Trace>> {
        let sigma = kernels.sigma_out;
        let n = self.n_layers();
        let mut inputs: Vec<Vec<Vec<Vec<f64>>>> =
            (0..images.len()).map(|_| Vec::with_capacity(n)).collect();
        let mut layers: Vec<Vec<LayerActivation>> =
            (0..images.len()).map(|_| Vec::with_capacity(n)).collect();
        for l in 0..n {
            let layer_inputs = images
                .iter()
                .enumerate()
                .map(|(i, image)| {
                    if l == 0 {
                        self.topology.extract_patches(image)
                    } else {
                        Ok(self.gather_layer(l, &layers[i][l - 1], kernels))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let grids = &self.grids[l];
            let per_module = par::try_map_indices(grids.len(), |m| {
                let xs: Vec<&[f64]> = layer_inputs.iter().map(|li| li[m].as_slice()).collect();
                grids[m].respond_batch(&xs, sigma)
            })?;
            let mut columns: Vec<_> = per_module.into_iter().map(Vec::into_iter).collect();
            for (i, li) in layer_inputs.into_iter().enumerate() {
                let modules = columns
                    .iter_mut()
                    .map(|c| c.next().expect("one result per image"))
                    .collect();
                layers[i].push(LayerActivation { modules });
                inputs[i].push(li);
            }
        }
        Ok(layers
            .into_iter()
            .zip(inputs)
            .map(|(layers, inputs)| Trace {
                state: NetworkState {
                    layers,
                    tag: TimeTag::Target,
                },
                inputs: LayerInputs { layers: inputs },
            })
            .collect())
    }

    /// Feedforward pass with the output kernel.
    pub fn forward(&self, image: &Image, kernels: &KernelParams) -> Result<NetworkState> {
        Ok(self.forward_traced(image, kernels)?.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(rows: usize, cols: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn mnist_connection_counts() {
        let t = NetworkTopology::mnist();
        assert_eq!(t.n_layers(), 5);
        assert_eq!(
            t.connections(),
            vec![176_400, 2_250_000, 6_250_000, 6_250_000, 250_000]
        );
        assert_eq!(t.total_weights(), 15_176_400);
        let dims: Vec<usize> = t.layers().iter().map(|g| g.input_dim).collect();
        assert_eq!(dims, vec![36, 900, 2500, 2500, 2500]);
        let modules: Vec<usize> = t.layers().iter().map(|g| g.spec.modules()).collect();
        assert_eq!(modules, vec![49, 25, 25, 25, 1]);
    }

    #[test]
    fn inconsistent_geometry_names_layer() {
        let mut specs = LayerSpec::mnist_layers();
        specs[1].field = ReceptiveField::Maps { size: 4, stride: 1 };
        let err = NetworkTopology::new(28, 28, &specs)
            .unwrap_err()
            .to_string();
        assert!(err.contains("layer 2"), "{err}");

        let mut specs = LayerSpec::mnist_layers();
        specs[0].field = ReceptiveField::Pixels {
            size: 6,
            stride: 4,
            pad: 0,
        };
        let err = NetworkTopology::new(28, 28, &specs)
            .unwrap_err()
            .to_string();
        assert!(err.contains("layer 1"), "{err}");
    }

    #[test]
    fn layer_two_windows_are_row_major() {
        let t = NetworkTopology::mnist();
        let Wiring::Modules { sources } = &t.layer(1).wiring else {
            panic!()
        };
        assert_eq!(sources[0], vec![0, 1, 2, 7, 8, 9, 14, 15, 16]);
        assert_eq!(sources[24], vec![32, 33, 34, 39, 40, 41, 46, 47, 48]);
    }

    #[test]
    fn patch_zero_zero_covers_padding() {
        let t = NetworkTopology::mnist();
        let mut pixels = vec![0.0; 784];
        for r in 0..28 {
            for c in 0..28 {
                pixels[r * 28 + c] = (r * 28 + c + 1) as f64 / 784.0;
            }
        }
        let img = Image::new(28, 28, pixels).unwrap();
        let patches = t.extract_patches(&img).unwrap();
        assert_eq!(patches.len(), 49);
        // padded rows/cols 0..5 are original -1..4; undo normalization
        let p = &patches[0];
        let scale = p[7] / 1.0; // padded (1,1) is original (0,0), value 1
        for dr in 0..6 {
            for dc in 0..6 {
                let v = p[dr * 6 + dc] / scale;
                let expected = if dr == 0 || dc == 0 {
                    0.0
                } else {
                    ((dr - 1) * 28 + (dc - 1) + 1) as f64
                };
                assert!((v - expected).abs() < 1e-9, "({dr},{dc}) {v} vs {expected}");
            }
        }
        let n: f64 = p.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_image_gives_zero_patches() {
        let t = NetworkTopology::mnist();
        let patches = t.extract_patches(&Image::zeros(28, 28)).unwrap();
        assert_eq!(patches.len(), 49);
        assert!(patches
            .iter()
            .all(|p| p.len() == 36 && p.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn wrong_image_shape_rejected() {
        let t = NetworkTopology::mnist();
        assert!(matches!(
            t.extract_patches(&Image::zeros(27, 28)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn patch_coverage_between_one_and_four() {
        let t = NetworkTopology::mnist();
        let (size, _, pad) = t.patch_geometry();
        let Wiring::Patches { origins } = &t.layer(0).wiring else {
            panic!()
        };
        let mut cover = vec![0u32; 28 * 28];
        for &(r0, c0) in origins {
            for r in r0..r0 + size {
                for c in c0..c0 + size {
                    if (pad..28 + pad).contains(&r) && (pad..28 + pad).contains(&c) {
                        cover[(r - pad) * 28 + c - pad] += 1;
                    }
                }
            }
        }
        assert_eq!(*cover.iter().min().unwrap(), 1);
        assert_eq!(*cover.iter().max().unwrap(), 4);
    }

    #[test]
    fn gather_lengths_and_order() {
        let net = Network::build(NetworkTopology::mnist(), 3);
        let state = net
            .forward(&random_image(28, 28, 1), &KernelParams::default())
            .unwrap();
        assert_eq!(
            net.topology().gather_input(1, 0, &state.layers[0]).len(),
            900
        );
        for l in 2..5 {
            assert_eq!(
                net.topology()
                    .gather_input(l, 0, &state.layers[l - 1])
                    .len(),
                2500
            );
        }
        let mut prev = state.layers[0].clone();
        for a in prev.modules.iter_mut() {
            *a = crate::somcore::wsa_with_sigma(&[1.0; 100], 10, 0.8).unwrap();
        }
        let v = net.topology().gather_input(1, 0, &prev);
        for k in 0..9 {
            assert_eq!(v[k * 100], 1.0);
        }
    }

    #[test]
    fn forward_shape_and_determinism() {
        let net = Network::build(NetworkTopology::mnist(), 11);
        let img = random_image(28, 28, 2);
        let a = net.forward(&img, &KernelParams::default()).unwrap();
        let b = net.forward(&img, &KernelParams::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layers.len(), 5);
        let out = &a.last().modules[0].values;
        assert_eq!(out.len(), 100);
        assert_eq!(out.iter().filter(|&&v| v == 1.0).count(), 1);
    }

    #[test]
    fn batch_forward_matches_single() {
        let net = Network::build(NetworkTopology::mnist(), 3);
        let k = KernelParams::default();
        let images: Vec<Image> = (0..3).map(|s| random_image(28, 28, 40 + s)).collect();
        let refs: Vec<&Image> = images.iter().collect();
        let batch = net.forward_batch_traced(&refs, &k).unwrap();
        for (img, t) in images.iter().zip(&batch) {
            assert_eq!(&net.forward_traced(img, &k).unwrap(), t);
        }
        assert!(net.forward_batch_traced(&[], &k).unwrap().is_empty());
    }

    #[test]
    fn upper_inputs_raw_or_unit() {
        let net = Network::build(NetworkTopology::mnist(), 5);
        let img = random_image(28, 28, 6);
        let raw = KernelParams {
            normalize_inputs: false,
            ..KernelParams::default()
        };
        let t_raw = net.forward_traced(&img, &raw).unwrap();
        let t_unit = net.forward_traced(&img, &KernelParams::default()).unwrap();
        assert_eq!(t_raw.inputs.layers[0], t_unit.inputs.layers[0]);
        assert_eq!(
            t_raw.inputs.layers[1][0],
            net.topology().gather_input(1, 0, &t_raw.state.layers[0])
        );
        for l in 1..5 {
            for x in &t_unit.inputs.layers[l] {
                let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
        // scaling never moves a layer-2 winner
        assert_eq!(
            t_raw.state.layers[1].winners(),
            t_unit.state.layers[1].winners()
        );
    }

    #[test]
    fn same_seed_same_weights() {
        let t = NetworkTopology::new(
            8,
            8,
            &[LayerSpec {
                map_rows: 4,
                map_cols: 4,
                som_rows: 4,
                som_cols: 4,
                field: ReceptiveField::Pixels {
                    size: 4,
                    stride: 2,
                    pad: 1,
                },
            }],
        )
        .unwrap();
        let a = Network::build(t.clone(), 99);
        let b = Network::build(t.clone(), 99);
        let c = Network::build(t, 100);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
