// SPDX-License-Identifier: Apache-2.0

//! MNIST IDX loading and seeded sample streams.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A grayscale plane with pixels in [0, 1], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: pixels.len(),
            });
        }
        if let Some(i) = pixels.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Data(format!(
                "pixel {i} = {} outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(Image { rows, cols, pixels })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Image {
            rows,
            cols,
            pixels: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.cols + c]
    }
}

/// Labeled images of a common shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    rows: usize,
    cols: usize,
    images: Vec<Image>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(images: Vec<Image>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l > 9) {
            return Err(Error::Data(format!(
                "label {} at item {i} is not a digit",
                labels[i]
            )));
        }
        let (rows, cols) = images.first().map_or((0, 0), |im| (im.rows, im.cols));
        if let Some(i) = images
            .iter()
            .position(|im| im.rows != rows || im.cols != cols)
        {
            return Err(Error::Data(format!(
                "image {i} differs in shape from image 0"
            )));
        }
        Ok(Dataset {
            rows,
            cols,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Items at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            rows: self.rows,
            cols: self.cols,
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// First `n` items (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn class_counts(&self) -> [usize; 10] {
        let mut counts = [0; 10];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |e| Error::io(path, e);
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(bytes).map_err(io)?;
        fs::write(path, enc.finish().map_err(io)?).map_err(io)
    } else {
        fs::write(path, bytes).map_err(io)
    }
}

struct Header<'a> {
    what: &'a str,
    bytes: &'a [u8],
}

impl Header<'_> {
    fn u32_at(&self, offset: usize) -> Result<u32> {
        let b = self.bytes.get(offset..offset + 4).ok_or_else(|| {
            Error::Data(format!(
                "{}: truncated header at offset {offset}: need 4 bytes, file has {}",
                self.what,
                self.bytes.len()
            ))
        })?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn payload(&self, offset: usize, len: usize) -> Result<&[u8]> {
        self.bytes.get(offset..offset + len).ok_or_else(|| {
            Error::Data(format!(
                "{}: truncated payload at offset {offset}: need {len} bytes, {} available",
                self.what,
                self.bytes.len().saturating_sub(offset)
            ))
        })
    }
}

/// Parses an uncompressed IDX image file into (rows, cols, pixel bytes per item).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<u8>>)> {
    let h = Header {
        what: "IDX images",
        bytes,
    };
    let magic = h.u32_at(0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Data(format!(
            "IDX images: bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )));
    }
    let count = h.u32_at(4)? as usize;
    let rows = h.u32_at(8)? as usize;
    let cols = h.u32_at(12)? as usize;
    let payload = h.payload(16, count * rows * cols)?;
    let items = if rows * cols == 0 {
        vec![Vec::new(); count]
    } else {
        payload
            .chunks_exact(rows * cols)
            .map(<[u8]>::to_vec)
            .collect()
    };
    Ok((rows, cols, items))
}

/// Parses an uncompressed IDX label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let h = Header {
        what: "IDX labels",
        bytes,
    };
    let magic = h.u32_at(0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Data(format!(
            "IDX labels: bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_LABELS_MAGIC:08x}"
        )));
    }
    let count = h.u32_at(4)? as usize;
    Ok(h.payload(8, count)?.to_vec())
}

fn pixel_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Serializes the images of `data` as an uncompressed IDX image file.
pub fn encode_idx_images(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + data.len() * data.rows * data.cols);
    for v in [
        IDX_IMAGES_MAGIC,
        data.len() as u32,
        data.rows as u32,
        data.cols as u32,
    ] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for im in &data.images {
        out.extend(im.pixels.iter().map(|&p| pixel_byte(p)));
    }
    out
}

/// Serializes the labels of `data` as an uncompressed IDX label file.
pub fn encode_idx_labels(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + data.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    out.extend_from_slice(&data.labels);
    out
}

/// Builds a dataset from raw IDX bytes; pixels are scaled by 1/255.
pub fn decode_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset> {
    let (rows, cols, items) = parse_idx_images(image_bytes)?;
    let labels = parse_idx_labels(label_bytes)?;
    if items.len() != labels.len() {
        return Err(Error::Data(format!(
            "image file holds {} items, label file {}",
            items.len(),
            labels.len()
        )));
    }
    let images = items
        .into_iter()
        .map(|px| Image {
            rows,
            cols,
            pixels: px.into_iter().map(|b| f64::from(b) / 255.0).collect(),
        })
        .collect();
    Dataset::new(images, labels)
}

/// Loads an image/label IDX pair; `.gz` paths are decompressed.
pub fn load_idx(image_path: impl AsRef<Path>, label_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = read_file(image_path.as_ref())?;
    let labels = read_file(label_path.as_ref())?;
    decode_idx(&images, &labels)
}

/// Writes an image/label IDX pair; `.gz` paths are compressed.
pub fn save_idx(
    data: &Dataset,
    image_path: impl AsRef<Path>,
    label_path: impl AsRef<Path>,
) -> Result<()> {
    write_file(image_path.as_ref(), &encode_idx_images(data))?;
    write_file(label_path.as_ref(), &encode_idx_labels(data))
}

/// Mixes a base seed with a stream tag and an index.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_SUBSET: u64 = 1;
const TAG_BLOCK: u64 = 2;
const TAG_ROLLING: u64 = 3;
const TAG_CYCLE: u64 = 4;

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

/// How successive training blocks choose their samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SubsetPolicy {
    /// One subset of `block_size` items, chosen once by seed and reshuffled
    /// for every block.
    #[default]
    Fixed,
    /// Successive windows of one seeded permutation of the whole dataset,
    /// wrapping at the end.
    Rolling,
}

/// The fixed training subset drawn by seed.
pub fn training_subset(count: usize, block_size: usize, seed: u64) -> Vec<usize> {
    let mut perm = permutation(count, derive_seed(seed, TAG_SUBSET, 0));
    perm.truncate(block_size.min(count));
    perm
}

/// Seeded order of dataset indices; single consumer.
#[derive(Clone, Debug)]
pub struct SampleStream {
    pool: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    seed: u64,
    epoch: u64,
    cycle: bool,
}

impl SampleStream {
    /// Endless stream over `pool`, reshuffled with a fresh permutation each
    /// time it is exhausted.
    pub fn cycling(pool: Vec<usize>, seed: u64) -> Self {
        let mut s = SampleStream {
            pool,
            order: Vec::new(),
            cursor: 0,
            seed,
            epoch: 0,
            cycle: true,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        let perm = permutation(
            self.pool.len(),
            derive_seed(self.seed, TAG_CYCLE, self.epoch),
        );
        self.order = perm.into_iter().map(|i| self.pool[i]).collect();
        self.cursor = 0;
    }

    /// Items remaining before the stream ends or wraps.
    pub fn remaining(&self) -> usize {
        self.order.len() - self.cursor
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for SampleStream {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.cursor == self.order.len() {
            if !self.cycle || self.pool.is_empty() {
                return None;
            }
            self.epoch += 1;
            self.reshuffle();
        }
        let i = self.order[self.cursor];
        self.cursor += 1;
        Some(i)
    }
}

/// Samples of training block `block_index` under the default fixed-subset
/// policy.
pub fn take_block(
    dataset: &Dataset,
    block_size: usize,
    seed: u64,
    block_index: u64,
) -> Result<SampleStream> {
    take_block_with(dataset, block_size, seed, block_index, SubsetPolicy::Fixed)
}

pub fn take_block_with(
    dataset: &Dataset,
    block_size: usize,
    seed: u64,
    block_index: u64,
    policy: SubsetPolicy,
) -> Result<SampleStream> {
    let count = dataset.len();
    if block_size == 0 || block_size > count {
        return Err(Error::Config(format!(
            "block size {block_size} must be in 1..={count} (dataset size)"
        )));
    }
    let order = match policy {
        SubsetPolicy::Fixed => {
            let subset = training_subset(count, block_size, seed);
            permutation(block_size, derive_seed(seed, TAG_BLOCK, block_index))
                .into_iter()
                .map(|i| subset[i])
                .collect()
        }
        SubsetPolicy::Rolling => {
            let perm = permutation(count, derive_seed(seed, TAG_ROLLING, 0));
            let start = (block_index as usize % count) * block_size;
            (0..block_size)
                .map(|i| perm[(start + i) % count])
                .collect::<Vec<_>>()
        }
    };
    Ok(SampleStream {
        pool: order.clone(),
        order,
        cursor: 0,
        seed,
        epoch: block_index,
        cycle: false,
    })
}
