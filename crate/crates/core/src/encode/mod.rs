//! Bag-of-visual-words encoding: codebooks, soft quantization and the
//! 1×1 / 2×2 / 3×1 spatial pyramid.

pub mod formats;
pub mod kmeans;
pub mod raster;

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::sq_dist;

pub use kmeans::{train_codebook, Codebook};
pub use raster::{builtin_descriptors, BuiltinChannel, Raster};

pub const PATCH_SIZE: usize = 20;
pub const PATCH_STRIDE: usize = 10;
pub const DEFAULT_SOFT_K: usize = 5;

/// Dense raw descriptors of one channel for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorBlock {
    pub channel: String,
    pub dim: usize,
    /// Patch centers in pixels.
    pub positions: Vec<(f32, f32)>,
    /// Row-major `positions.len() × dim`.
    pub vectors: Vec<f32>,
}

impl DescriptorBlock {
    pub fn new(channel: impl Into<String>, dim: usize, positions: Vec<(f32, f32)>, vectors: Vec<f32>) -> Result<Self> {
        if vectors.len() != positions.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} patches of dim {dim} need {} values, got {}",
                positions.len(),
                positions.len() * dim,
                vectors.len()
            )));
        }
        Ok(DescriptorBlock {
            channel: channel.into(),
            dim,
            positions,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn vector(&self, index: usize) -> &[f32] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    /// Image extent implied by a dense grid whose border patches touch the
    /// image edges: `max + min` of the patch centers along each axis.
    pub fn grid_extent(&self) -> Extent {
        let (mut min_x, mut max_x, mut min_y, mut max_y) = (f32::INFINITY, 0.0f32, f32::INFINITY, 0.0f32);
        for &(x, y) in &self.positions {
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
        if self.positions.is_empty() {
            return Extent::new(1.0, 1.0);
        }
        Extent::new(
            f64::from(max_x + min_x).max(1.0),
            f64::from(max_y + min_y).max(1.0),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub width: f64,
    pub height: f64,
}

impl Extent {
    pub fn new(width: f64, height: f64) -> Self {
        Extent { width, height }
    }
}

/// Spatial pyramid as a list of `(columns, rows)` grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pyramid {
    pub levels: Vec<(usize, usize)>,
}

impl Default for Pyramid {
    fn default() -> Self {
        Pyramid::standard()
    }
}

impl Pyramid {
    /// Whole image, 2×2 quadrants and three horizontal strips: 8 blocks.
    pub fn standard() -> Self {
        Pyramid {
            levels: vec![(1, 1), (2, 2), (1, 3)],
        }
    }

    pub fn block_count(&self) -> usize {
        self.levels.iter().map(|(c, r)| c * r).sum()
    }

    /// One block index per level: the cell containing `(x, y)`.
    pub fn blocks_containing(&self, x: f64, y: f64, extent: Extent) -> Vec<usize> {
        let mut offset = 0;
        let mut out = Vec::with_capacity(self.levels.len());
        for &(cols, rows) in &self.levels {
            let col = cell(x, extent.width, cols);
            let row = cell(y, extent.height, rows);
            out.push(offset + row * cols + col);
            offset += cols * rows;
        }
        out
    }

    /// Spatial extent `[x0, x1) × [y0, y1)` of a block.
    pub fn block_bounds(&self, block: usize, extent: Extent) -> (f64, f64, f64, f64) {
        let mut offset = 0;
        for &(cols, rows) in &self.levels {
            if block < offset + cols * rows {
                let local = block - offset;
                let (col, row) = (local % cols, local / cols);
                let w = extent.width / cols as f64;
                let h = extent.height / rows as f64;
                return (col as f64 * w, (col + 1) as f64 * w, row as f64 * h, (row + 1) as f64 * h);
            }
            offset += cols * rows;
        }
        panic!("block {block} out of range");
    }
}

fn cell(v: f64, extent: f64, cells: usize) -> usize {
    let idx = (v / extent * cells as f64).floor();
    if idx <= 0.0 {
        0
    } else {
        (idx as usize).min(cells - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFeatures {
    pub name: String,
    pub values: Vec<f64>,
}

/// Per-channel pyramid histograms of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub channels: Vec<ChannelFeatures>,
}

impl FeatureSet {
    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index].values
    }

    pub fn channel_names(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

/// Soft assignment of one descriptor: `(codeword, weight)` pairs over the
/// `soft_k` nearest codewords, with Gaussian weights summing to one.
pub fn soft_assign(codebook: &Codebook, v: &[f64], soft_k: usize) -> Vec<(usize, f64)> {
    let mut dists: Vec<(usize, f64)> = (0..codebook.k)
        .map(|c| (c, sq_dist(codebook.center(c), v)))
        .collect();
    dists.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    dists.truncate(soft_k.clamp(1, codebook.k));
    let nearest = dists[0].1;
    let denom = 2.0 * codebook.sigma * codebook.sigma;
    let mut weights: Vec<(usize, f64)> = dists
        .iter()
        .map(|&(c, d)| (c, (-(d - nearest) / denom).exp()))
        .collect();
    let total: f64 = weights.iter().map(|w| w.1).sum();
    for w in &mut weights {
        w.1 /= total;
    }
    weights
}

/// Encodes one image's descriptor blocks into per-channel pyramid
/// histograms, in codebook order.
pub fn encode_image(
    blocks: &[DescriptorBlock],
    codebooks: &[Codebook],
    extent: Extent,
    pyramid: &Pyramid,
    soft_k: usize,
) -> Result<FeatureSet> {
    for block in blocks {
        if !codebooks.iter().any(|c| c.channel == block.channel) {
            return Err(Error::MissingCodebook(block.channel.clone()));
        }
    }
    let n_blocks = pyramid.block_count();
    let mut channels = Vec::with_capacity(codebooks.len());
    for codebook in codebooks {
        let block = blocks
            .iter()
            .find(|b| b.channel == codebook.channel)
            .ok_or_else(|| Error::ChannelMismatch(format!("no descriptors for channel `{}`", codebook.channel)))?;
        if block.is_empty() {
            return Err(Error::NoPatches);
        }
        if block.dim != codebook.dim {
            return Err(Error::DimensionMismatch(format!(
                "channel `{}`: descriptors have dim {}, codebook {}",
                codebook.channel, block.dim, codebook.dim
            )));
        }
        let k = codebook.k;
        let mut hist = vec![0.0; n_blocks * k];
        let mut vector = vec![0.0; block.dim];
        for patch in canonical_patch_order(block) {
            for (dst, &src) in vector.iter_mut().zip(block.vector(patch)) {
                *dst = f64::from(src);
            }
            let (x, y) = block.positions[patch];
            let assignment = soft_assign(codebook, &vector, soft_k);
            for b in pyramid.blocks_containing(f64::from(x), f64::from(y), extent) {
                for &(c, w) in &assignment {
                    hist[b * k + c] += w;
                }
            }
        }
        for sub in hist.chunks_exact_mut(k) {
            let total: f64 = sub.iter().sum();
            if total > 0.0 {
                for v in sub.iter_mut() {
                    *v /= total;
                }
            }
        }
        channels.push(ChannelFeatures {
            name: codebook.channel.clone(),
            values: hist,
        });
    }
    Ok(FeatureSet { channels })
}

/// Patch visiting order that depends only on patch content, so that
/// accumulation is independent of the input order.
fn canonical_patch_order(block: &DescriptorBlock) -> Vec<usize> {
    let mut order: Vec<usize> = (0..block.len()).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (block.positions[a], block.positions[b]);
        pa.0.total_cmp(&pb.0)
            .then(pa.1.total_cmp(&pb.1))
            .then_with(|| {
                block
                    .vector(a)
                    .iter()
                    .zip(block.vector(b))
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| *o != Ordering::Equal)
                    .unwrap_or(Ordering::Equal)
            })
    });
    order
}

/// Loads the raw descriptors of an image: a `.ppm` raster goes through the
/// built-in descriptors, a directory holds one `<channel>.cbfv` per channel.
pub fn load_descriptors(path: &Path, channels: &[String]) -> Result<(Vec<DescriptorBlock>, Extent)> {
    if path.is_dir() {
        let mut blocks = Vec::with_capacity(channels.len());
        for channel in channels {
            let file = path.join(format!("{channel}.cbfv"));
            blocks.push(formats::read_cbfv(&file, channel)?);
        }
        let extent = blocks
            .first()
            .map(DescriptorBlock::grid_extent)
            .ok_or_else(|| Error::InvalidArgument("no channels configured".into()))?;
        Ok((blocks, extent))
    } else {
        let raster = Raster::read_ppm(path)?;
        let mut blocks = Vec::with_capacity(channels.len());
        for channel in channels {
            let kind = BuiltinChannel::from_name(channel).ok_or_else(|| {
                Error::ChannelMismatch(format!("`{channel}` is not a built-in channel; raster images support gray-patch and color-hist"))
            })?;
            blocks.push(builtin_descriptors(&raster, kind)?);
        }
        Ok((blocks, Extent::new(raster.width as f64, raster.height as f64)))
    }
}

/// Codebooks plus encoding parameters; turns image files into features.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub codebooks: Vec<Codebook>,
    pub pyramid: Pyramid,
    pub soft_k: usize,
}

impl Encoder {
    pub fn channels(&self) -> Vec<String> {
        self.codebooks.iter().map(|c| c.channel.clone()).collect()
    }

    pub fn encode_path(&self, path: &Path) -> Result<FeatureSet> {
        let (blocks, extent) = load_descriptors(path, &self.channels())?;
        encode_image(&blocks, &self.codebooks, extent, &self.pyramid, self.soft_k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn codebook(centers: &[f64], dim: usize) -> Codebook {
        Codebook {
            channel: "c".into(),
            k: centers.len() / dim,
            dim,
            centers: centers.to_vec(),
            train_seed: 0,
            sigma: 1.0,
        }
    }

    fn random_block(rng: &mut ChaCha8Rng, n: usize, dim: usize, extent: Extent) -> DescriptorBlock {
        let positions = (0..n)
            .map(|_| {
                (
                    rng.random_range(0.0..extent.width) as f32,
                    rng.random_range(0.0..extent.height) as f32,
                )
            })
            .collect();
        let vectors = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        DescriptorBlock::new("c", dim, positions, vectors).unwrap()
    }

    #[test]
    fn single_codeword_fills_every_nonempty_block() {
        let cb = codebook(&[0.5, 0.5], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = random_block(&mut rng, 3, 2, Extent::new(60.0, 60.0));
        let fs = encode_image(&[block], &[cb], Extent::new(60.0, 60.0), &Pyramid::standard(), 5).unwrap();
        let h = fs.channel(0);
        assert_eq!(h.len(), 8);
        assert_eq!(h[0], 1.0);
        assert!(h.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn nearest_neighbour_degeneracy_and_symmetry() {
        let cb = codebook(&[0.0, 0.0, 2.0, 0.0, 9.0, 9.0], 2);
        let w = soft_assign(&cb, &[2.0, 0.0], 1);
        assert_eq!(w, vec![(1, 1.0)]);
        let w = soft_assign(&cb, &[1.0, 0.0], 2);
        assert_eq!(w.len(), 2);
        assert!((w[0].1 - 0.5).abs() < 1e-15 && (w[1].1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dimensionality_with_thousand_words() {
        let dim = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let centers: Vec<f64> = (0..1000 * dim).map(|_| rng.random::<f64>()).collect();
        let cb = codebook(&centers, dim);
        let extent = Extent::new(100.0, 80.0);
        let block = random_block(&mut rng, 40, dim, extent);
        let fs = encode_image(&[block], &[cb], extent, &Pyramid::standard(), DEFAULT_SOFT_K).unwrap();
        assert_eq!(fs.channel(0).len(), 8000);
        for sub in fs.channel(0).chunks(1000) {
            let s: f64 = sub.iter().sum();
            assert!(s == 0.0 || (s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn errors() {
        let cb = codebook(&[0.0, 0.0], 2);
        let other = DescriptorBlock::new("zz", 2, vec![(1.0, 1.0)], vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            encode_image(&[other], std::slice::from_ref(&cb), Extent::new(10.0, 10.0), &Pyramid::standard(), 1),
            Err(Error::MissingCodebook(_))
        ));
        let empty = DescriptorBlock::new("c", 2, vec![], vec![]).unwrap();
        assert!(matches!(
            encode_image(&[empty], &[cb], Extent::new(10.0, 10.0), &Pyramid::standard(), 1),
            Err(Error::NoPatches)
        ));
    }

    #[test]
    fn grid_extent_recovers_image_size() {
        let raster = Raster::filled(30, 40, [1, 2, 3]);
        let block = builtin_descriptors(&raster, BuiltinChannel::GrayPatch).unwrap();
        assert_eq!(block.grid_extent(), Extent::new(30.0, 40.0));
    }

    proptest! {
        #[test]
        fn soft_weights_sum_to_one(v in proptest::collection::vec(-5.0f64..5.0, 3), soft_k in 1usize..8, seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let centers: Vec<f64> = (0..6 * 3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut cb = codebook(&centers, 3);
            cb.sigma = rng.random_range(0.05..3.0);
            let w = soft_assign(&cb, &v, soft_k);
            let total: f64 = w.iter().map(|p| p.1).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|p| p.1 >= 0.0));
        }

        #[test]
        fn encoding_ignores_patch_order(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let extent = Extent::new(90.0, 70.0);
            let block = random_block(&mut rng, 25, 3, extent);
            let centers: Vec<f64> = (0..7 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cb = codebook(&centers, 3);
            let mut perm: Vec<usize> = (0..block.len()).collect();
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.random_range(0..=i));
            }
            let shuffled = DescriptorBlock::new(
                "c",
                3,
                perm.iter().map(|&i| block.positions[i]).collect(),
                perm.iter().flat_map(|&i| block.vector(i).to_vec()).collect(),
            ).unwrap();
            let a = encode_image(&[block], std::slice::from_ref(&cb), extent, &Pyramid::standard(), 3).unwrap();
            let b = encode_image(&[shuffled], &[cb], extent, &Pyramid::standard(), 3).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn mass_lands_in_geometrically_containing_blocks(x in 0.0f64..120.0, y in 0.0f64..80.0) {
            let extent = Extent::new(120.0, 80.0);
            let pyramid = Pyramid::standard();
            let got = pyramid.blocks_containing(x, y, extent);
            let brute: Vec<usize> = (0..pyramid.block_count())
                .filter(|&b| {
                    let (x0, x1, y0, y1) = pyramid.block_bounds(b, extent);
                    x >= x0 && x < x1 && y >= y0 && y < y1
                })
                .collect();
            prop_assert_eq!(got, brute);
        }
    }
}
