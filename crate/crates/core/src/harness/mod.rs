// SPDX-License-Identifier: Apache-2.0

//! Experiment driver: block-wise training with validation, checkpoints,
//! exports and the command-line front end.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod export;

use std::time::Instant;

use log::info;

use crate::aplearn::{
    assign_labels, error_rate, learning_trial, warm_cache, AdvanceCache, ApParams, LabelMap,
};
use crate::dataio::{load_idx, take_block_with, training_subset, Dataset, SampleStream};
use crate::error::{Error, Result};
use crate::pretrain::{neighbor_similarity, pretrain, PretrainReport};
use crate::somcore::KernelParams;
use crate::topology::{Network, NetworkTopology};

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint};
pub use config::RunConfig;

/// One row of a learning curve.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMetrics {
    pub block: u64,
    pub error_rate: f64,
    pub trials: u64,
    pub ap_invocations: u64,
    pub seconds: f64,
}

/// Runs every trial of `stream`, then measures the validation error.
/// Validation only reads the weights.
#[allow(clippy::too_many_arguments)]
pub fn run_block(
    network: &mut Network,
    train: &Dataset,
    stream: SampleStream,
    validation: &Dataset,
    cache: &mut AdvanceCache,
    label_map: &LabelMap,
    params: &ApParams,
    kernels: &KernelParams,
    block: u64,
) -> Result<BlockMetrics> {
    let start = Instant::now();
    let mut trials = 0;
    let mut ap_invocations = 0;
    for index in stream {
        let outcome = learning_trial(network, train, index, cache, label_map, params, kernels)?;
        trials += 1;
        ap_invocations += u64::from(outcome.ap_invoked);
    }
    let error_rate = error_rate(network, validation, label_map, kernels)?;
    Ok(BlockMetrics {
        block,
        error_rate,
        trials,
        ap_invocations,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn required<'a>(p: &'a Option<std::path::PathBuf>, key: &str) -> Result<&'a std::path::Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("{key} is not set")))
}

pub fn load_training(config: &RunConfig) -> Result<Dataset> {
    load_idx(
        required(&config.train_images, "train_images")?,
        required(&config.train_labels, "train_labels")?,
    )
}

/// The first `validation_size` items of the validation files.
pub fn load_validation(config: &RunConfig) -> Result<Dataset> {
    let data = load_idx(
        required(&config.val_images, "val_images")?,
        required(&config.val_labels, "val_labels")?,
    )?;
    if config.validation_size > data.len() {
        return Err(Error::Config(format!(
            "validation_size {} exceeds the {} validation items",
            config.validation_size,
            data.len()
        )));
    }
    Ok(data.head(config.validation_size))
}

/// Mean neighbour similarity over the modules of each layer.
pub fn layer_similarity(network: &Network) -> Vec<f64> {
    network
        .grids()
        .iter()
        .map(|layer| layer.iter().map(neighbor_similarity).sum::<f64>() / layer.len() as f64)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSummary {
    pub report: PretrainReport,
    pub similarity_before: Vec<f64>,
    pub similarity_after: Vec<f64>,
}

/// Builds a network from the seed and pre-trains it on the fixed training
/// subset, cycling through it as often as the schedule needs.
pub fn pretrain_network(
    topology: NetworkTopology,
    train: &Dataset,
    config: &RunConfig,
) -> Result<(Network, PretrainSummary)> {
    config.validate()?;
    let mut network = Network::build(topology, config.seed);
    let pool = training_subset(train.len(), config.block_size, config.seed);
    let mut stream = SampleStream::cycling(pool, config.seed);
    let similarity_before = layer_similarity(&network);
    let report = pretrain(
        &mut network,
        train,
        &mut stream,
        &config.schedule(),
        &config.kernels,
        config.log_interval,
    )?;
    let similarity_after = layer_similarity(&network);
    Ok((
        network,
        PretrainSummary {
            report,
            similarity_before,
            similarity_after,
        },
    ))
}

/// Assigns output neurons to classes on the training subset and seeds the
/// advance cache from it.
pub fn calibrate(
    network: &Network,
    train: &Dataset,
    config: &RunConfig,
) -> Result<(LabelMap, AdvanceCache)> {
    let subset = training_subset(train.len(), config.block_size, config.seed);
    let calibration = train.subset(&subset);
    let n_classes = calibration
        .labels()
        .iter()
        .map(|&c| c as usize + 1)
        .max()
        .ok_or_else(|| Error::Calibration("empty calibration set".into()))?;
    let label_map = assign_labels(network, &calibration, &config.kernels, n_classes)?;
    let cache = warm_cache(network, train, &subset, &label_map, &config.kernels)?;
    Ok((label_map, cache))
}

/// Runs `config.n_blocks` blocks on top of `ckpt`, preceded by a row for
/// the state before the first of them. Calls `on_block` after every row.
pub fn train_blocks(
    ckpt: &mut Checkpoint,
    train: &Dataset,
    validation: &Dataset,
    config: &RunConfig,
    mut on_block: impl FnMut(&BlockMetrics, &Checkpoint) -> Result<()>,
) -> Result<Vec<BlockMetrics>> {
    config.validate()?;
    config.ap.validate(ckpt.network.n_layers())?;
    let label_map = ckpt.label_map.clone().ok_or_else(|| {
        Error::Checkpoint("checkpoint has no label map; run assign-labels".into())
    })?;
    let mut cache = ckpt.cache.clone().ok_or_else(|| {
        Error::Checkpoint("checkpoint has no advance cache; run assign-labels".into())
    })?;
    let clock = |m: &mut BlockMetrics| {
        if !config.record_timing {
            m.seconds = 0.0;
        }
    };

    let start = Instant::now();
    let mut baseline = BlockMetrics {
        block: ckpt.blocks_done,
        error_rate: error_rate(&ckpt.network, validation, &label_map, &config.kernels)?,
        trials: 0,
        ap_invocations: 0,
        seconds: start.elapsed().as_secs_f64(),
    };
    clock(&mut baseline);
    info!(
        "block={} error_rate={:.4}",
        baseline.block, baseline.error_rate
    );
    on_block(&baseline, ckpt)?;
    let mut curve = vec![baseline];

    for _ in 0..config.n_blocks {
        let index = ckpt.blocks_done;
        let stream = take_block_with(
            train,
            config.block_size,
            config.seed,
            index,
            config.subset_policy,
        )?;
        let mut m = run_block(
            &mut ckpt.network,
            train,
            stream,
            validation,
            &mut cache,
            &label_map,
            &config.ap,
            &config.kernels,
            index + 1,
        )?;
        clock(&mut m);
        ckpt.blocks_done += 1;
        ckpt.cache = Some(cache.clone());
        info!(
            "block={} error_rate={:.4} ap_invocations={} seconds={:.1}",
            m.block, m.error_rate, m.ap_invocations, m.seconds
        );
        on_block(&m, ckpt)?;
        curve.push(m);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aplearn::tests::toy_two_class;

    #[test]
    fn validation_leaves_weights_alone() {
        let (net, data) = toy_two_class(3);
        let map = LabelMap::new(vec![0, 8], 9).unwrap();
        let before = net.clone();
        let e = error_rate(&net, &data, &map, &KernelParams::default()).unwrap();
        assert!((0.0..=1.0).contains(&e));
        assert_eq!(net, before);
    }

    #[test]
    fn block_counts_trials() {
        let (mut net, data) = toy_two_class(5);
        let config = RunConfig {
            block_size: 40,
            ap: ApParams {
                n: 1,
                ..Default::default()
            },
            ..RunConfig::default()
        };
        let (map, mut cache) = calibrate(&net, &data, &config).unwrap();
        let stream = take_block_with(&data, 40, 1, 0, config.subset_policy).unwrap();
        let m = run_block(
            &mut net,
            &data,
            stream,
            &data,
            &mut cache,
            &map,
            &config.ap,
            &KernelParams::default(),
            1,
        )
        .unwrap();
        assert_eq!(m.trials, 40);
        assert!(m.ap_invocations <= 40);
        assert!((0.0..=1.0).contains(&m.error_rate));
    }

    #[test]
    fn curve_has_baseline_row_and_resumes() {
        let (net, data) = toy_two_class(9);
        let config = RunConfig {
            block_size: 20,
            n_blocks: 3,
            record_timing: false,
            ap: ApParams {
                n: 1,
                ..Default::default()
            },
            ..RunConfig::default()
        };
        let (map, cache) = calibrate(&net, &data, &config).unwrap();
        let mut ckpt = Checkpoint::new(net, config.seed);
        ckpt.label_map = Some(map);
        ckpt.cache = Some(cache);
        let mut straight = ckpt.clone();
        let curve = train_blocks(&mut straight, &data, &data, &config, |_, _| Ok(())).unwrap();
        assert_eq!(
            curve.iter().map(|m| m.block).collect::<Vec<_>>(),
            vec![0, 1, 2, 3]
        );
        assert!(curve.iter().all(|m| m.seconds == 0.0));

        let first = RunConfig {
            n_blocks: 1,
            ..config.clone()
        };
        let rest = RunConfig {
            n_blocks: 2,
            ..config.clone()
        };
        train_blocks(&mut ckpt, &data, &data, &first, |_, _| Ok(())).unwrap();
        let bytes = checkpoint::encode_checkpoint(&ckpt);
        let mut resumed = checkpoint::decode_checkpoint(&bytes).unwrap();
        let tail = train_blocks(&mut resumed, &data, &data, &rest, |_, _| Ok(())).unwrap();
        assert_eq!(resumed, straight);
        assert_eq!(tail[1..], curve[2..]);
    }
}
