// SPDX-License-Identifier: Apache-2.0

//! `deepsom` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::aplearn::{error_rate, Prediction};
use crate::error::{Error, Result};
use crate::par;
use crate::topology::NetworkTopology;

use super::export::{
    curve_csv, feature_atlas, merge_curves, optimal_stimulus, parse_curve_csv, to_gray,
    usage_counts, usage_csv, usage_entropy, usage_image, write_bytes,
};
use super::{
    calibrate, load_checkpoint_for, load_training, load_validation, pretrain_network,
    save_checkpoint, train_blocks, Checkpoint, RunConfig,
};

#[derive(Parser, Debug)]
#[command(
    name = "deepsom",
    version,
    about = "Deep self-organizing map with advance-propagation learning"
)]
struct Cli {
    #[command(flatten)]
    opts: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override the config file. Precedence: flag > --set > file > default.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// key=value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra key=value setting, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Layer decay of the supervised learning rate
    #[arg(long, global = true)]
    r: Option<f64>,
    /// Weight of the advance input in the blended pass
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    rho_base: Option<f64>,
    #[arg(long, global = true)]
    blocks: Option<usize>,
    #[arg(long, global = true)]
    block_size: Option<usize>,
    #[arg(long, global = true)]
    validation_size: Option<usize>,
    #[arg(long, global = true)]
    pretrain_iterations: Option<u64>,
    #[arg(long, global = true)]
    checkpoint_in: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint_out: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    train_images: Option<PathBuf>,
    #[arg(long, global = true)]
    train_labels: Option<PathBuf>,
    #[arg(long, global = true)]
    val_images: Option<PathBuf>,
    #[arg(long, global = true)]
    val_labels: Option<PathBuf>,
    /// Write 0 instead of wall-clock seconds into curve files
    #[arg(long, global = true)]
    no_timing: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a network from the seed and run unsupervised pre-training
    Pretrain,
    /// Assign output neurons to classes and seed the advance cache
    AssignLabels,
    /// Supervised block-wise training with validation after each block
    Train,
    /// Validation error of a checkpoint
    Eval,
    /// Write images or tables from a checkpoint
    Export {
        #[command(subcommand)]
        what: ExportKind,
    },
}

#[derive(Subcommand, Debug)]
enum ExportKind {
    /// Feature atlas PGM of first-layer modules
    Atlas {
        /// Only this module (default: all)
        #[arg(long)]
        module: Option<usize>,
    },
    /// Output neuron usage over the validation set
    Usage,
    /// Optimal stimulus PGM of one neuron
    Stimulus {
        /// 1-based layer (default: last)
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long, default_value_t = 0)]
        module: usize,
        #[arg(long, conflicts_with = "class")]
        neuron: Option<usize>,
        /// Use the neuron assigned to this class
        #[arg(long)]
        class: Option<u8>,
    },
    /// Merge learning-curve CSVs side by side
    Curves {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            c.set(k, v)?;
        }
        macro_rules! put {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { c.$($field).+ = v.clone().into(); })*
            };
        }
        put!(
            seed => seed,
            r => ap.r,
            beta => ap.beta,
            rho_base => ap.rho_base,
            blocks => n_blocks,
            block_size => block_size,
            validation_size => validation_size,
            pretrain_iterations => pretrain_iterations,
            out_dir => out_dir,
        );
        macro_rules! put_path {
            ($($flag:ident),*) => {
                $(if let Some(v) = &self.$flag { c.$flag = Some(v.clone()); })*
            };
        }
        put_path!(
            checkpoint_in,
            checkpoint_out,
            train_images,
            train_labels,
            val_images,
            val_labels
        );
        if self.no_timing {
            c.record_timing = false;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 on success, 1 on failure, 2 on usage
/// errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let threads = par::init_thread_pool();
    log::debug!("worker threads: {threads}");
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn checkpoint_in(c: &RunConfig) -> Result<Checkpoint> {
    let path = c
        .checkpoint_in
        .as_deref()
        .ok_or_else(|| Error::Config("--checkpoint-in is required".into()))?;
    load_checkpoint_for(path, &NetworkTopology::mnist())
}

fn out_path(c: &RunConfig, explicit: &Option<PathBuf>, default: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| c.out_dir.join(default))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

fn write_atlases(ckpt: &Checkpoint, dir: &Path, only: Option<usize>) -> Result<usize> {
    let (side, _, _) = ckpt.network.topology().patch_geometry();
    let layer = ckpt.network.layer(0);
    let modules: Vec<usize> = match only {
        Some(m) if m >= layer.len() => {
            return Err(Error::Config(format!(
                "module {m} out of range (layer 1 has {})",
                layer.len()
            )))
        }
        Some(m) => vec![m],
        None => (0..layer.len()).collect(),
    };
    for &m in &modules {
        feature_atlas(&layer[m], side)?.save(&dir.join(format!("atlas_m{m:02}.pgm")))?;
    }
    Ok(modules.len())
}

fn write_usage(c: &RunConfig, ckpt: &Checkpoint) -> Result<()> {
    let validation = load_validation(c)?;
    let counts = usage_counts(&ckpt.network, &validation, &c.kernels)?;
    let grid = &ckpt.network.layer(ckpt.network.n_layers() - 1)[0];
    usage_image(&counts, grid.rows(), grid.cols())?.save(&c.out_dir.join("usage.pgm"))?;
    write_text(&c.out_dir.join("usage.csv"), &usage_csv(&counts))?;
    let used = counts.iter().filter(|&&n| n > 0).count();
    println!(
        "usage_entropy_bits={:.4} neurons_used={used}",
        usage_entropy(&counts)
    );
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let c = cli.opts.resolve()?;
    std::fs::create_dir_all(&c.out_dir).map_err(|e| Error::io(&c.out_dir, e))?;
    let name = match &cli.command {
        Command::Pretrain => "pretrain",
        Command::AssignLabels => "assign-labels",
        Command::Train => "train",
        Command::Eval => "eval",
        Command::Export { .. } => "export",
    };
    write_text(
        &c.out_dir.join(format!("manifest-{name}.txt")),
        &c.to_manifest(),
    )?;

    match cli.command {
        Command::Pretrain => {
            let train = load_training(&c)?;
            let (network, summary) = pretrain_network(NetworkTopology::mnist(), &train, &c)?;
            let ckpt = Checkpoint::new(network, c.seed);
            save_checkpoint(&out_path(&c, &c.checkpoint_out, "pretrained.ckpt"), &ckpt)?;
            let mut report = String::from("layer,similarity_before,similarity_after,updates\n");
            for l in 0..summary.similarity_after.len() {
                report += &format!(
                    "{},{:.6},{:.6},{}\n",
                    l + 1,
                    summary.similarity_before[l],
                    summary.similarity_after[l],
                    summary.report.updates[l]
                );
            }
            write_text(&c.out_dir.join("pretrain.csv"), &report)?;
            print!("{report}");
            if c.export_atlas {
                write_atlases(&ckpt, &c.out_dir.join("atlas"), None)?;
            }
        }
        Command::AssignLabels => {
            let mut ckpt = checkpoint_in(&c)?;
            let train = load_training(&c)?;
            let (map, cache) = calibrate(&ckpt.network, &train, &c)?;
            let mut table = String::from("class,neuron\n");
            for (class, j) in map.class_to_neuron().iter().enumerate() {
                println!("class={class} neuron={j}");
                table += &format!("{class},{j}\n");
            }
            write_text(&c.out_dir.join("labels.csv"), &table)?;
            ckpt.label_map = Some(map);
            ckpt.cache = Some(cache);
            save_checkpoint(&out_path(&c, &c.checkpoint_out, "labeled.ckpt"), &ckpt)?;
        }
        Command::Train => {
            let mut ckpt = checkpoint_in(&c)?;
            let train = load_training(&c)?;
            let validation = load_validation(&c)?;
            let curve_path = c.out_dir.join(format!("curve_r{}.csv", c.ap.r));
            let ckpt_path = out_path(&c, &c.checkpoint_out, &format!("trained_r{}.ckpt", c.ap.r));
            let mut rows = Vec::new();
            train_blocks(&mut ckpt, &train, &validation, &c, |m, _| {
                println!(
                    "block={} error_rate={:.6} ap_invocations={}",
                    m.block, m.error_rate, m.ap_invocations
                );
                rows.push(m.clone());
                write_text(&curve_path, &curve_csv(&rows))
            })?;
            save_checkpoint(&ckpt_path, &ckpt)?;
        }
        Command::Eval => {
            let ckpt = checkpoint_in(&c)?;
            let map = ckpt
                .label_map
                .as_ref()
                .ok_or_else(|| Error::Checkpoint("checkpoint has no label map".into()))?;
            let validation = load_validation(&c)?;
            let e = error_rate(&ckpt.network, &validation, map, &c.kernels)?;
            println!("error_rate={e:.6} items={}", validation.len());
            write_text(&c.out_dir.join("eval.txt"), &format!("error_rate={e:.6}\n"))?;
            if c.export_usage {
                write_usage(&c, &ckpt)?;
            }
        }
        Command::Export { what } => match what {
            ExportKind::Atlas { module } => {
                let ckpt = checkpoint_in(&c)?;
                let n = write_atlases(&ckpt, &c.out_dir.join("atlas"), module)?;
                println!("wrote {n} atlas images");
            }
            ExportKind::Usage => write_usage(&c, &checkpoint_in(&c)?)?,
            ExportKind::Stimulus {
                layer,
                module,
                neuron,
                class,
            } => {
                let ckpt = checkpoint_in(&c)?;
                let n_layers = ckpt.network.n_layers();
                let layer = layer.unwrap_or(n_layers);
                if layer == 0 || layer > n_layers {
                    return Err(Error::Config(format!("layer must be in 1..={n_layers}")));
                }
                let neuron = match (neuron, class) {
                    (Some(j), _) => j,
                    (None, Some(cl)) => {
                        let map = ckpt.label_map.as_ref().ok_or_else(|| {
                            Error::Checkpoint("checkpoint has no label map".into())
                        })?;
                        if layer != n_layers || cl as usize >= map.n_classes() {
                            return Err(Error::Config(
                                "--class needs the last layer and a known class".into(),
                            ));
                        }
                        map.neuron(cl)
                    }
                    (None, None) => 0,
                };
                let topo = ckpt.network.topology();
                let raw = optimal_stimulus(&ckpt.network, layer - 1, module, neuron)?;
                let name = format!("stimulus_l{layer}_m{module}_n{neuron}.pgm");
                to_gray(&raw, topo.image_cols(), topo.image_rows())?
                    .save(&c.out_dir.join(&name))?;
                if let Some(map) = &ckpt.label_map {
                    if layer == n_layers {
                        if let Prediction::Class(cl) = map.predict(neuron) {
                            println!("neuron {neuron} is assigned to class {cl}");
                        }
                    }
                }
                println!("wrote {name}");
            }
            ExportKind::Curves { inputs, output } => {
                let mut named = Vec::new();
                for p in &inputs {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    let name = p
                        .file_stem()
                        .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into());
                    named.push((name, parse_curve_csv(&text)?));
                }
                let path = output.unwrap_or_else(|| c.out_dir.join("curves.csv"));
                write_text(&path, &merge_curves(&named))?;
                println!("wrote {}", path.display());
            }
        },
    }
    Ok(())
}
