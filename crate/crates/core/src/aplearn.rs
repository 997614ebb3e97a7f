// SPDX-License-Identifier: Apache-2.0

//! Advance propagation: supervised fine-tuning with feedforward signals only.
//!
//! A trial first classifies the target. A correct answer reinforces the
//! winners of that pass. A wrong answer pushes them away, then presents a
//! cached exemplar that currently yields the required label (the advance
//! input) and re-runs the target with each layer's input blended toward the
//! advance pass:
//!
//! ```text
//! z'_l = beta * z_{l-1}(advance) + (1 - beta) * z_{l-1}(target, blended pass)
//! ```
//!
//! Every module then learns around its winner in the blended pass at rate
//! `r^(n-l) * rho_base`, so layers closer to the output move faster.

use log::debug;

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::par;
use crate::somcore::{dot, gaussian, grid_distance_sq, ActivationResult, KernelParams, UpdateSign};
use crate::topology::{LayerActivation, LayerInputs, Network, NetworkState, TimeTag, Trace};

pub const N_CLASSES: usize = 10;

/// Supervised learning constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ApParams {
    pub rho_base: f64,
    /// Share of the advance pass in the blended input.
    pub beta: f64,
    /// Per-layer decay of the learning rate.
    pub r: f64,
    /// Layer count the decay is measured against.
    pub n: usize,
    /// On the AP step, centre the output layer's update on the required
    /// label's neuron instead of the blended-pass winner. The two coincide
    /// whenever the after-effect reaches the label.
    pub anchor_output: bool,
}

impl Default for ApParams {
    fn default() -> Self {
        ApParams {
            rho_base: 0.20,
            beta: 0.4,
            r: 0.7,
            n: 5,
            anchor_output: true,
        }
    }
}

impl ApParams {
    pub fn validate(&self, n_layers: usize) -> Result<()> {
        if !(self.rho_base.is_finite() && self.rho_base >= 0.0) {
            return Err(Error::Config(format!(
                "rho_base must be >= 0, got {}",
                self.rho_base
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!(
                "beta must be in [0, 1], got {}",
                self.beta
            )));
        }
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::Config(format!(
                "r must be in [0, 1], got {}",
                self.r
            )));
        }
        if self.n != n_layers {
            return Err(Error::Config(format!(
                "n = {} but the network has {n_layers} layers",
                self.n
            )));
        }
        Ok(())
    }

    /// `r^(n-l) * rho_base` for 0-based layer `l`; `0^0 = 1`.
    pub fn layer_rate(&self, l: usize) -> f64 {
        self.r.powi((self.n - (l + 1)) as i32) * self.rho_base
    }
}

/// Classification read from the last-layer winner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prediction {
    Class(u8),
    Unassigned,
}

impl std::fmt::Display for Prediction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Prediction::Class(c) => write!(f, "{c}"),
            Prediction::Unassigned => f.write_str("-"),
        }
    }
}

/// One output neuron per class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    class_to_neuron: Vec<usize>,
    neuron_to_class: Vec<Option<u8>>,
}

impl LabelMap {
    pub fn new(class_to_neuron: Vec<usize>, neurons: usize) -> Result<Self> {
        let mut neuron_to_class = vec![None; neurons];
        for (c, &j) in class_to_neuron.iter().enumerate() {
            match neuron_to_class.get_mut(j) {
                Some(slot @ None) => *slot = Some(c as u8),
                Some(Some(_)) => {
                    return Err(Error::Calibration(format!("neuron {j} assigned twice")))
                }
                None => {
                    return Err(Error::Calibration(format!(
                        "neuron {j} out of range for {neurons} output neurons"
                    )))
                }
            }
        }
        Ok(LabelMap {
            class_to_neuron,
            neuron_to_class,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_to_neuron.len()
    }

    pub fn neurons(&self) -> usize {
        self.neuron_to_class.len()
    }

    pub fn neuron(&self, class: u8) -> usize {
        self.class_to_neuron[class as usize]
    }

    pub fn class_to_neuron(&self) -> &[usize] {
        &self.class_to_neuron
    }

    pub fn predict(&self, winner: usize) -> Prediction {
        self.neuron_to_class
            .get(winner)
            .copied()
            .flatten()
            .map_or(Prediction::Unassigned, Prediction::Class)
    }
}

/// Greedy assignment from a neurons × classes winner-count table.
///
/// Entries are taken in descending count, ties by lower class then lower
/// neuron; each class and each neuron is used once.
pub fn assign_from_counts(counts: &[Vec<u64>], n_classes: usize) -> Result<LabelMap> {
    let distinct = counts
        .iter()
        .filter(|row| row.iter().any(|&c| c > 0))
        .count();
    if distinct < n_classes {
        return Err(Error::Calibration(format!(
            "only {distinct} distinct winning neurons for {n_classes} classes"
        )));
    }
    let mut entries: Vec<(u64, usize, usize)> = counts
        .iter()
        .enumerate()
        .flat_map(|(j, row)| row.iter().enumerate().map(move |(c, &n)| (n, c, j)))
        .collect();
    entries.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut class_to_neuron = vec![usize::MAX; n_classes];
    let mut taken = vec![false; counts.len()];
    for (_, c, j) in entries {
        if class_to_neuron[c] == usize::MAX && !taken[j] {
            class_to_neuron[c] = j;
            taken[j] = true;
        }
    }
    LabelMap::new(class_to_neuron, counts.len())
}

/// Output winner of every item of `data`, in order.
pub fn output_winners(
    network: &Network,
    data: &Dataset,
    kernels: &KernelParams,
) -> Result<Vec<usize>> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let per_batch = batched_traces(network, data, &indices, kernels, |_, t| {
        t.state.output_winner()
    })?;
    Ok(per_batch.into_iter().flatten().collect())
}

/// Images per weight sweep in read-only passes.
const EVAL_BATCH: usize = 32;

/// Applies `f` to the traced pass of every listed item, in order, grouped
/// by batch.
fn batched_traces<T, F>(
    network: &Network,
    data: &Dataset,
    indices: &[usize],
    kernels: &KernelParams,
    f: F,
) -> Result<Vec<Vec<T>>>
where
    T: Send,
    F: Fn(usize, &crate::topology::Trace) -> T + Sync + Send,
{
    let chunks: Vec<&[usize]> = indices.chunks(EVAL_BATCH).collect();
    par::try_map_indices(chunks.len(), |c| {
        let images: Vec<&crate::dataio::Image> = chunks[c].iter().map(|&i| data.image(i)).collect();
        let traces = network.forward_batch_traced(&images, kernels)?;
        Ok(chunks[c]
            .iter()
            .zip(&traces)
            .map(|(&i, t)| f(i, t))
            .collect())
    })
}

/// Counts last-layer winners per class over `calibration` and assigns one
/// neuron to each class.
pub fn assign_labels(
    network: &Network,
    calibration: &Dataset,
    kernels: &KernelParams,
    n_classes: usize,
) -> Result<LabelMap> {
    let neurons = network.layer(network.n_layers() - 1)[0].neurons();
    let winners = output_winners(network, calibration, kernels)?;
    let mut counts = vec![vec![0u64; n_classes]; neurons];
    for (i, &j) in winners.iter().enumerate() {
        let c = calibration.label(i) as usize;
        if c >= n_classes {
            return Err(Error::Data(format!(
                "label {c} at item {i} exceeds {n_classes} classes"
            )));
        }
        counts[j][c] += 1;
    }
    assign_from_counts(&counts, n_classes)
}

pub fn classify(
    network: &Network,
    image: &crate::dataio::Image,
    label_map: &LabelMap,
    kernels: &KernelParams,
) -> Result<Prediction> {
    Ok(label_map.predict(network.forward(image, kernels)?.output_winner()))
}

/// Predictions for every item of `data`; weights are only read.
pub fn classify_all(
    network: &Network,
    data: &Dataset,
    label_map: &LabelMap,
    kernels: &KernelParams,
) -> Result<Vec<Prediction>> {
    Ok(output_winners(network, data, kernels)?
        .into_iter()
        .map(|w| label_map.predict(w))
        .collect())
}

/// Fraction of `data` not classified as its label (unassigned counts as wrong).
pub fn error_rate(
    network: &Network,
    data: &Dataset,
    label_map: &LabelMap,
    kernels: &KernelParams,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let predictions = classify_all(network, data, label_map, kernels)?;
    let wrong = predictions
        .iter()
        .zip(data.labels())
        .filter(|(p, &l)| **p != Prediction::Class(l))
        .count();
    Ok(wrong as f64 / data.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CacheEntry {
    /// Index of the exemplar in the training dataset.
    pub index: usize,
    /// Trials since the entry was last refreshed.
    pub staleness: u64,
}

/// Latest correctly classified exemplar of each class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdvanceCache {
    entries: Vec<Option<CacheEntry>>,
}

impl AdvanceCache {
    pub fn empty(n_classes: usize) -> Self {
        AdvanceCache {
            entries: vec![None; n_classes],
        }
    }

    pub fn from_entries(entries: Vec<Option<CacheEntry>>) -> Self {
        AdvanceCache { entries }
    }

    pub fn entries(&self) -> &[Option<CacheEntry>] {
        &self.entries
    }

    pub fn get(&self, class: u8) -> Option<CacheEntry> {
        self.entries.get(class as usize).copied().flatten()
    }

    pub fn refresh(&mut self, class: u8, index: usize) {
        self.entries[class as usize] = Some(CacheEntry {
            index,
            staleness: 0,
        });
    }

    fn tick(&mut self) {
        for e in self.entries.iter_mut().flatten() {
            e.staleness += 1;
        }
    }
}

/// Seeds the cache with the first correctly classified sample of each class
/// among `candidates`, falling back to the sample whose output inner product
/// at the class's neuron is largest.
pub fn warm_cache(
    network: &Network,
    data: &Dataset,
    candidates: &[usize],
    label_map: &LabelMap,
    kernels: &KernelParams,
) -> Result<AdvanceCache> {
    let last = network.n_layers() - 1;
    let grid = &network.layer(last)[0];
    let scored: Vec<(usize, f64)> = batched_traces(network, data, candidates, kernels, |i, t| {
        let score = dot(
            grid.row(label_map.neuron(data.label(i))),
            &t.inputs.layers[last][0],
        );
        (t.state.output_winner(), score)
    })?
    .into_iter()
    .flatten()
    .collect();
    let mut cache = AdvanceCache::empty(label_map.n_classes());
    for c in 0..label_map.n_classes() as u8 {
        let mut fallback: Option<(usize, f64)> = None;
        let mut hit = None;
        for (k, &i) in candidates.iter().enumerate() {
            if data.label(i) != c {
                continue;
            }
            let (winner, score) = scored[k];
            if label_map.predict(winner) == Prediction::Class(c) {
                hit = Some(i);
                break;
            }
            if fallback.is_none_or(|(_, s)| score > s) {
                fallback = Some((i, score));
            }
        }
        match hit.or(fallback.map(|f| f.0)) {
            Some(i) => cache.refresh(c, i),
            None => {
                return Err(Error::Data(format!(
                    "class {c} has no samples to warm the cache"
                )))
            }
        }
    }
    Ok(cache)
}

/// `beta * advance + (1 - beta) * target`, elementwise.
pub fn blend_vectors(advance: &[f64], target: &[f64], beta: f64) -> Result<Vec<f64>> {
    if advance.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            got: advance.len(),
        });
    }
    Ok(advance
        .iter()
        .zip(target)
        .map(|(a, t)| beta * a + (1.0 - beta) * t)
        .collect())
}

/// Blends the module outputs of two passes through the same layer.
pub fn blend(
    advance: &LayerActivation,
    target: &LayerActivation,
    beta: f64,
) -> Result<Vec<Vec<f64>>> {
    if advance.modules.len() != target.modules.len() {
        return Err(Error::DimensionMismatch {
            expected: target.modules.len(),
            got: advance.modules.len(),
        });
    }
    advance
        .modules
        .iter()
        .zip(&target.modules)
        .map(|(a, t)| blend_vectors(&a.values, &t.values, beta))
        .collect()
}

/// Re-runs the target with every layer's input blended toward the advance
/// pass. The returned trace records the blended inputs.
pub fn ap_pass(
    network: &Network,
    target: &crate::dataio::Image,
    advance: &Trace,
    beta: f64,
    kernels: &KernelParams,
) -> Result<Trace> {
    let topology = network.topology();
    let n = network.n_layers();
    if advance.inputs.layers.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: advance.inputs.layers.len(),
        });
    }
    let mut layers: Vec<LayerActivation> = Vec::with_capacity(n);
    let mut inputs = Vec::with_capacity(n);
    for l in 0..n {
        let own: Vec<Vec<f64>> = if l == 0 {
            topology.extract_patches(target)?
        } else {
            network.gather_layer(l, &layers[l - 1], kernels)
        };
        let blended = par::try_map_indices(own.len(), |m| {
            blend_vectors(&advance.inputs.layers[l][m], &own[m], beta)
        })?;
        layers.push(network.respond_layer(l, &blended, kernels.sigma_out)?);
        inputs.push(blended);
    }
    Ok(Trace {
        state: NetworkState {
            layers,
            tag: TimeTag::Blended,
        },
        inputs: LayerInputs { layers: inputs },
    })
}

/// Updates every module around its winner in `trace`, using the module's
/// recorded input as the Hebbian term and the layer-decayed rate.
pub fn layer_decayed_update(
    network: &mut Network,
    trace: &Trace,
    params: &ApParams,
    kernels: &KernelParams,
    sign: UpdateSign,
) -> Result<()> {
    for l in 0..network.n_layers() {
        let rate = params.layer_rate(l);
        if rate == 0.0 {
            continue;
        }
        let winners = trace.state.layers[l].winners();
        let inputs = &trace.inputs.layers[l];
        par::try_for_each_mut(network.layer_mut(l), |m, grid| {
            grid.competitive_update(winners[m], &inputs[m], rate, kernels.sigma_update, sign)
        })?;
    }
    Ok(())
}

/// Learning step on the blended pass.
pub fn ap_update(
    network: &mut Network,
    blended: &Trace,
    params: &ApParams,
    kernels: &KernelParams,
) -> Result<()> {
    layer_decayed_update(network, blended, params, kernels, UpdateSign::Attract)
}

fn anchored(winner: usize, neurons: usize, cols: usize, sigma: f64) -> ActivationResult {
    let values = (0..neurons)
        .map(|j| gaussian(grid_distance_sq(winner, j, cols), sigma))
        .collect();
    ActivationResult { winner, values }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrialOutcome {
    pub predicted: Prediction,
    pub was_correct: bool,
    pub ap_invoked: bool,
    pub cache_refreshed: bool,
    pub forward_passes: u8,
}

/// One supervised trial on training item `index` of `data`.
#[allow(clippy::too_many_arguments)]
pub fn learning_trial(
    network: &mut Network,
    data: &Dataset,
    index: usize,
    cache: &mut AdvanceCache,
    label_map: &LabelMap,
    params: &ApParams,
    kernels: &KernelParams,
) -> Result<TrialOutcome> {
    let label = data.label(index);
    let image = data.image(index);
    let target = network.forward_traced(image, kernels)?;
    let predicted = label_map.predict(target.state.output_winner());
    cache.tick();

    let outcome = if predicted == Prediction::Class(label) {
        layer_decayed_update(network, &target, params, kernels, UpdateSign::Attract)?;
        cache.refresh(label, index);
        TrialOutcome {
            predicted,
            was_correct: true,
            ap_invoked: false,
            cache_refreshed: true,
            forward_passes: 1,
        }
    } else {
        layer_decayed_update(network, &target, params, kernels, UpdateSign::Repel)?;
        let entry = cache
            .get(label)
            .ok_or_else(|| Error::Data(format!("no advance input cached for class {label}")))?;
        let mut advance = network.forward_traced(data.image(entry.index), kernels)?;
        advance.state.tag = TimeTag::Advance;
        let mut blended = ap_pass(network, image, &advance, params.beta, kernels)?;
        if params.anchor_output {
            let neuron = label_map.neuron(label);
            let cols = network.layer(network.n_layers() - 1)[0].cols();
            let output = blended.state.layers.last_mut().expect("network has layers");
            for a in &mut output.modules {
                *a = anchored(neuron, a.values.len(), cols, kernels.sigma_out);
            }
        }
        ap_update(network, &blended, params, kernels)?;
        TrialOutcome {
            predicted,
            was_correct: false,
            ap_invoked: true,
            cache_refreshed: false,
            forward_passes: 3,
        }
    };
    debug!(
        target: "deepsom::trial",
        "trial idx={index} label={label} pred={predicted} correct={} ap={}",
        outcome.was_correct, outcome.ap_invoked
    );
    Ok(outcome)
}
