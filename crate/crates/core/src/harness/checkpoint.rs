// SPDX-License-Identifier: Apache-2.0

//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian `u64`, weights IEEE-754 binary64:
//!
//! ```text
//! "DSOM" version:u8
//! seed blocks_done
//! n_layers image_rows image_cols
//! per layer:  map_rows map_cols som_rows som_cols kind size stride pad input_dim
//! per module: guard_state weight_count weights[weight_count]
//! n_classes (0 = no label map)  neuron[n_classes]
//! n_entries (0 = no cache)      per entry: present index staleness
//! ```
//!
//! `kind` is 0 for pixel patches, 1 for module windows and 2 for full
//! connectivity; unused geometry fields are 0.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::aplearn::{AdvanceCache, CacheEntry, LabelMap};
use crate::error::{Error, Result};
use crate::somcore::SomGrid;
use crate::topology::{LayerSpec, Network, NetworkTopology, ReceptiveField};

pub const MAGIC: &[u8; 4] = b"DSOM";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub label_map: Option<LabelMap>,
    pub cache: Option<AdvanceCache>,
    pub seed: u64,
    /// Training blocks completed so far.
    pub blocks_done: u64,
}

impl Checkpoint {
    pub fn new(network: Network, seed: u64) -> Self {
        Checkpoint {
            network,
            label_map: None,
            cache: None,
            seed,
            blocks_done: 0,
        }
    }
}

fn field_words(field: ReceptiveField) -> [u64; 4] {
    match field {
        ReceptiveField::Pixels { size, stride, pad } => [0, size as u64, stride as u64, pad as u64],
        ReceptiveField::Maps { size, stride } => [1, size as u64, stride as u64, 0],
        ReceptiveField::Full => [2, 0, 0, 0],
    }
}

/// Bytes before the first module record.
pub fn header_len(topology: &NetworkTopology) -> usize {
    5 + 8 * (2 + 3 + 9 * topology.n_layers())
}

/// Serializes everything up to the first module record.
pub fn encode_header(topology: &NetworkTopology, seed: u64, blocks_done: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(header_len(topology));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    let mut put = |v: u64| out.extend_from_slice(&v.to_le_bytes());
    put(seed);
    put(blocks_done);
    put(topology.n_layers() as u64);
    put(topology.image_rows() as u64);
    put(topology.image_cols() as u64);
    for g in topology.layers() {
        let s = &g.spec;
        for v in [s.map_rows, s.map_cols, s.som_rows, s.som_cols] {
            put(v as u64);
        }
        for v in field_words(s.field) {
            put(v);
        }
        put(g.input_dim as u64);
    }
    out
}

pub fn write_checkpoint<W: Write>(w: &mut W, ckpt: &Checkpoint) -> std::io::Result<()> {
    let net = &ckpt.network;
    w.write_all(&encode_header(net.topology(), ckpt.seed, ckpt.blocks_done))?;
    let mut buf = Vec::new();
    for layer in net.grids() {
        for grid in layer {
            buf.clear();
            buf.reserve(16 + 8 * grid.weights().len());
            buf.extend_from_slice(&grid.guard_state().to_le_bytes());
            buf.extend_from_slice(&(grid.weights().len() as u64).to_le_bytes());
            for x in grid.weights() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
    }
    match &ckpt.label_map {
        Some(map) => {
            w.write_all(&(map.n_classes() as u64).to_le_bytes())?;
            for &j in map.class_to_neuron() {
                w.write_all(&(j as u64).to_le_bytes())?;
            }
        }
        None => w.write_all(&0u64.to_le_bytes())?,
    }
    match &ckpt.cache {
        Some(cache) => {
            w.write_all(&(cache.entries().len() as u64).to_le_bytes())?;
            for e in cache.entries() {
                let (present, index, staleness) = match e {
                    Some(e) => (1u64, e.index as u64, e.staleness),
                    None => (0, 0, 0),
                };
                for v in [present, index, staleness] {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        None => w.write_all(&0u64.to_le_bytes())?,
    }
    Ok(())
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    write_checkpoint(&mut out, ckpt).expect("writing to a Vec cannot fail");
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(Error::Checkpoint(format!(
                "truncated at offset {} reading {what}: missing {} bytes",
                self.pos,
                n - available
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?)
            .map_err(|_| Error::Checkpoint(format!("{what} does not fit in memory")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:02x?}, expected \"DSOM\""
        )));
    }
    let version = r.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, this build reads {VERSION}"
        )));
    }
    let seed = r.u64("seed")?;
    let blocks_done = r.u64("blocks_done")?;
    let n_layers = r.usize("layer count")?;
    let image_rows = r.usize("image rows")?;
    let image_cols = r.usize("image cols")?;
    if n_layers == 0 || n_layers > 64 {
        return Err(Error::Checkpoint(format!(
            "implausible layer count {n_layers}"
        )));
    }
    let mut specs = Vec::with_capacity(n_layers);
    let mut dims = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let what = format!("layer {} geometry", l + 1);
        let mut w = [0usize; 9];
        for v in w.iter_mut() {
            *v = r.usize(&what)?;
        }
        let field = match w[4] {
            0 => ReceptiveField::Pixels {
                size: w[5],
                stride: w[6],
                pad: w[7],
            },
            1 => ReceptiveField::Maps {
                size: w[5],
                stride: w[6],
            },
            2 => ReceptiveField::Full,
            k => {
                return Err(Error::Checkpoint(format!(
                    "layer {}: unknown field kind {k}",
                    l + 1
                )))
            }
        };
        specs.push(LayerSpec {
            map_rows: w[0],
            map_cols: w[1],
            som_rows: w[2],
            som_cols: w[3],
            field,
        });
        dims.push(w[8]);
    }
    let topology = NetworkTopology::new(image_rows, image_cols, &specs)
        .map_err(|e| Error::Checkpoint(format!("topology echo is inconsistent: {e}")))?;
    for (l, (g, &d)) in topology.layers().iter().zip(&dims).enumerate() {
        if g.input_dim != d {
            return Err(Error::Checkpoint(format!(
                "layer {}: stored input_dim {d}, geometry implies {}",
                l + 1,
                g.input_dim
            )));
        }
    }

    let mut grids = Vec::with_capacity(n_layers);
    for (l, g) in topology.layers().iter().enumerate() {
        let mut layer = Vec::with_capacity(g.spec.modules());
        for m in 0..g.spec.modules() {
            let what = format!("layer {} module {m}", l + 1);
            let guard = r.u64(&what)?;
            let count = r.usize(&what)?;
            let expected = g.spec.neurons() * g.input_dim;
            if count != expected {
                return Err(Error::Checkpoint(format!(
                    "{what}: {count} weights stored, topology needs {expected}"
                )));
            }
            let raw = r.take(count * 8, &what)?;
            let weights = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            layer.push(SomGrid::from_weights(
                g.spec.som_rows,
                g.spec.som_cols,
                g.input_dim,
                weights,
                guard,
            )?);
        }
        grids.push(layer);
    }
    let network = Network::from_parts(topology, grids)?;
    let out_neurons = network.layer(n_layers - 1)[0].neurons();

    let n_classes = r.usize("label map size")?;
    let label_map = if n_classes == 0 {
        None
    } else {
        let mut v = Vec::with_capacity(n_classes.min(out_neurons));
        for _ in 0..n_classes {
            v.push(r.usize("label map")?);
        }
        Some(LabelMap::new(v, out_neurons).map_err(|e| Error::Checkpoint(e.to_string()))?)
    };
    let n_entries = r.usize("cache size")?;
    let cache = if n_entries == 0 {
        None
    } else {
        let mut entries = Vec::with_capacity(n_entries.min(1024));
        for _ in 0..n_entries {
            let present = r.u64("cache entry")?;
            let index = r.usize("cache entry")?;
            let staleness = r.u64("cache entry")?;
            entries.push((present != 0).then_some(CacheEntry { index, staleness }));
        }
        Some(AdvanceCache::from_entries(entries))
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after offset {}",
            bytes.len() - r.pos,
            r.pos
        )));
    }
    Ok(Checkpoint {
        network,
        label_map,
        cache,
        seed,
        blocks_done,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    write_checkpoint(&mut w, ckpt).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and insists on a particular topology.
pub fn load_checkpoint_for(path: &Path, expected: &NetworkTopology) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.network.topology() != expected {
        return Err(Error::Checkpoint(format!(
            "{}: stored topology differs from the configured network",
            path.display()
        )));
    }
    Ok(ckpt)
}
