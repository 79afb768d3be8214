//! Balanced multi-scale patch datasets built from images and multi-labeler
//! ground truth.
//!
//! The pipeline per corpus is: average the labelers' binary maps, label a
//! non-overlapping 16×16 tile grid by its summed edge intensity, keep every
//! positive tile plus an equally sized random subset of negatives, and
//! extract a 9-channel stack (16/32/64 concentric crops, each resized to
//! 16×16) at each kept tile.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{read_binary_map, read_image};
use crate::raster::{resize_area, RasterImage};

/// Side length of a classifier patch.
pub const PATCH: usize = 16;
/// Crop sizes stacked into one sample, smallest first.
pub const CROP_SIZES: [usize; 3] = [16, 32, 64];
/// Channels in a stacked sample (three RGB crops).
pub const STACK_CHANNELS: usize = 9;
/// Values per stacked sample.
pub const STACK_LEN: usize = PATCH * PATCH * STACK_CHANNELS;
/// Tile-sum threshold above which a tile is a boundary sample.
pub const DEFAULT_THRESHOLD: f64 = 10.0;

const DATASET_MAGIC: &[u8; 4] = b"CFD1";

/// Binary human edge maps for one image and their pixelwise mean.
#[derive(Debug, Clone)]
pub struct LabelerEdgeSet {
    labeler_maps: Vec<RasterImage>,
    averaged: RasterImage,
}

impl LabelerEdgeSet {
    pub fn new(labeler_maps: Vec<RasterImage>) -> Result<Self> {
        let averaged = average_ground_truth(&labeler_maps)?;
        Ok(Self {
            labeler_maps,
            averaged,
        })
    }

    pub fn labeler_maps(&self) -> &[RasterImage] {
        &self.labeler_maps
    }

    pub fn averaged(&self) -> &RasterImage {
        &self.averaged
    }

    pub fn dims(&self) -> (usize, usize) {
        self.averaged.dims()
    }
}

/// Pixelwise mean of the labelers' binary maps.
pub fn average_ground_truth(maps: &[RasterImage]) -> Result<RasterImage> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("at least one labeler map is required"))?;
    let (h, w) = first.dims();
    if let Some(bad) = maps
        .iter()
        .position(|m| m.dims() != (h, w) || m.channels() != 1)
    {
        return Err(Error::invalid(format!(
            "labeler map {bad} is {}x{}x{}, expected {h}x{w}x1",
            maps[bad].height(),
            maps[bad].width(),
            maps[bad].channels()
        )));
    }
    let n = maps.len() as f64;
    let data = (0..h * w)
        .map(|i| {
            let marked = maps.iter().filter(|m| m.data()[i] > 0.0).count();
            marked as f64 / n
        })
        .collect();
    RasterImage::new(h, w, 1, data)
}

/// A labelled grid tile of the averaged ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileLabel {
    pub row: usize,
    pub col: usize,
    pub positive: bool,
}

/// Label the non-overlapping `patch × patch` grid starting at (0,0): a tile is
/// positive when its summed intensity strictly exceeds `threshold`. Partial
/// tiles at the right/bottom edge are dropped.
pub fn grid_sample_labels(averaged: &RasterImage, patch: usize, threshold: f64) -> Vec<TileLabel> {
    let (h, w) = averaged.dims();
    let mut out = Vec::new();
    if patch == 0 {
        return out;
    }
    for row in (0..h / patch).map(|t| t * patch) {
        for col in (0..w / patch).map(|t| t * patch) {
            let mut sum = 0.0;
            for r in row..row + patch {
                for c in col..col + patch {
                    sum += averaged.get(r, c, 0);
                }
            }
            out.push(TileLabel {
                row,
                col,
                positive: sum > threshold,
            });
        }
    }
    out
}

/// Where a sample came from. Dataset files do not store the image index;
/// samples read back from disk report image 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchOrigin {
    pub image: usize,
    pub row: usize,
    pub col: usize,
}

/// A 16×16×9 channel-major stack with its boundary label.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub stack: Vec<f32>,
    pub label: bool,
    pub origin: PatchOrigin,
}

/// A balanced sample set and the counts that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub samples: Vec<PatchSample>,
    pub positives: usize,
    pub negatives: usize,
    pub raw_positives: usize,
    pub raw_negatives: usize,
    pub seed: u64,
}

/// Keep all positives and a uniform subset of at most `positives.len()`
/// negatives, then shuffle. Deterministic for a given seed.
fn balance<T>(positives: Vec<T>, negatives: Vec<T>, seed: u64) -> (Vec<T>, usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = negatives.len().min(positives.len());
    let mut chosen: Vec<usize> = index::sample(&mut rng, negatives.len(), keep).into_vec();
    chosen.sort_unstable();
    let n_pos = positives.len();
    let mut all: Vec<T> = positives;
    let mut chosen_iter = chosen.into_iter().peekable();
    for (i, item) in negatives.into_iter().enumerate() {
        if chosen_iter.peek() == Some(&i) {
            chosen_iter.next();
            all.push(item);
        }
    }
    all.shuffle(&mut rng);
    (all, n_pos, keep)
}

/// Balance positives against negatives (no oversampling) with a seeded shuffle.
pub fn balance_samples(
    positives: Vec<PatchSample>,
    negatives: Vec<PatchSample>,
    seed: u64,
) -> DatasetManifest {
    let (raw_positives, raw_negatives) = (positives.len(), negatives.len());
    let (samples, positives, negatives) = balance(positives, negatives, seed);
    DatasetManifest {
        samples,
        positives,
        negatives,
        raw_positives,
        raw_negatives,
        seed,
    }
}

/// Extract the 9-channel stack for the 16×16 window at `(row, col)`.
///
/// The 32×32 and 64×64 crops share the window's centre; pixels outside the
/// image are reflect-padded and the larger crops are area-resized to 16×16.
/// Grayscale images are replicated into all three colour channels.
pub fn extract_multiscale_patch(image: &RasterImage, row: usize, col: usize) -> Result<Vec<f64>> {
    let (h, w) = image.dims();
    if row + PATCH > h || col + PATCH > w {
        return Err(Error::invalid(format!(
            "16x16 window at ({row},{col}) exceeds {h}x{w} image"
        )));
    }
    let mut stack = vec![0.0; STACK_LEN];
    let plane = PATCH * PATCH;
    for (s, &size) in CROP_SIZES.iter().enumerate() {
        let offset = ((size - PATCH) / 2) as isize;
        let crop = image.crop_reflect(row as isize - offset, col as isize - offset, size, size);
        let crop = if size == PATCH {
            crop
        } else {
            resize_area(&crop, PATCH, PATCH)?
        };
        for rgb in 0..3 {
            let src_ch = if crop.channels() == 3 { rgb } else { 0 };
            let base = (s * 3 + rgb) * plane;
            for r in 0..PATCH {
                for c in 0..PATCH {
                    stack[base + r * PATCH + c] = crop.get(r, c, src_ch);
                }
            }
        }
    }
    Ok(stack)
}

/// One image of a corpus and its labeler maps on disk.
#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub gt_dir: PathBuf,
}

impl CorpusEntry {
    pub fn load_image(&self) -> Result<RasterImage> {
        read_image(&self.image_path)
    }

    /// Load every `<k>.pgm` labeler map, sorted by file name.
    pub fn load_ground_truth(&self) -> Result<LabelerEdgeSet> {
        let listing = fs::read_dir(&self.gt_dir).map_err(|e| Error::io(&self.gt_dir, e))?;
        let mut paths: Vec<PathBuf> = listing
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::format(format!(
                "no labeler maps in {}",
                self.gt_dir.display()
            )));
        }
        let maps = paths
            .iter()
            .map(read_binary_map)
            .collect::<Result<Vec<_>>>()?;
        LabelerEdgeSet::new(maps)
    }
}

/// Images of one split: `<root>/<split>/<id>.ppm` (or `.pgm`) with labeler
/// maps in `<root>/<split>/<id>.gt/<k>.pgm`.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
}

impl Corpus {
    pub fn scan(root: impl AsRef<Path>, split: &str) -> Result<Self> {
        let dir = root.as_ref().join(split);
        let listing = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut entries = Vec::new();
        for entry in listing {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if !path.is_file() {
                continue;
            }
            let ext = path.extension().and_then(|e| e.to_str());
            if !matches!(ext, Some("ppm") | Some("pgm")) {
                continue;
            }
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::format(format!("bad file name {}", path.display())))?
                .to_string();
            entries.push(CorpusEntry {
                gt_dir: dir.join(format!("{id}.gt")),
                image_path: path,
                id,
            });
        }
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Run average → grid-sample → balance → extract over a corpus.
///
/// Every image is checked first; if any image or labeler map is missing,
/// corrupt or mis-sized the whole build fails listing the offending ids.
pub fn build_dataset(corpus: &Corpus, seed: u64, threshold: f64) -> Result<DatasetManifest> {
    let labelled: Vec<std::result::Result<Vec<TileLabel>, String>> = corpus
        .entries
        .par_iter()
        .map(|entry| {
            let gt = entry
                .load_ground_truth()
                .map_err(|e| format!("{}: {e}", entry.id))?;
            let dims = crate::io::read_image(&entry.image_path)
                .map_err(|e| format!("{}: {e}", entry.id))?
                .dims();
            if dims != gt.dims() {
                return Err(format!(
                    "{}: image is {}x{} but ground truth is {}x{}",
                    entry.id,
                    dims.0,
                    dims.1,
                    gt.dims().0,
                    gt.dims().1
                ));
            }
            Ok(grid_sample_labels(gt.averaged(), PATCH, threshold))
        })
        .collect();

    let mut failures = Vec::new();
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (image, result) in labelled.into_iter().enumerate() {
        match result {
            Ok(tiles) => {
                for t in tiles {
                    let origin = PatchOrigin {
                        image,
                        row: t.row,
                        col: t.col,
                    };
                    if t.positive {
                        positives.push((origin, true));
                    } else {
                        negatives.push((origin, false));
                    }
                }
            }
            Err(msg) => failures.push(msg),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Corpus(failures));
    }

    let (raw_positives, raw_negatives) = (positives.len(), negatives.len());
    let (chosen, n_pos, n_neg) = balance(positives, negatives, seed);

    // group by image so each image is decoded once
    let mut per_image: Vec<Vec<usize>> = vec![Vec::new(); corpus.len()];
    for (slot, (origin, _)) in chosen.iter().enumerate() {
        per_image[origin.image].push(slot);
    }
    let extracted: Vec<Result<Vec<(usize, Vec<f32>)>>> = per_image
        .par_iter()
        .enumerate()
        .filter(|(_, slots)| !slots.is_empty())
        .map(|(image, slots)| {
            let img = corpus.entries[image].load_image()?;
            slots
                .iter()
                .map(|&slot| {
                    let o = chosen[slot].0;
                    let stack = extract_multiscale_patch(&img, o.row, o.col)?;
                    Ok((slot, stack.into_iter().map(|v| v as f32).collect()))
                })
                .collect()
        })
        .collect();

    let mut stacks: Vec<Option<Vec<f32>>> = vec![None; chosen.len()];
    for group in extracted {
        for (slot, stack) in group? {
            stacks[slot] = Some(stack);
        }
    }
    let samples = chosen
        .into_iter()
        .zip(stacks)
        .map(|((origin, label), stack)| {
            stack
                .map(|stack| PatchSample {
                    stack,
                    label,
                    origin,
                })
                .ok_or_else(|| Error::Internal("sample left unextracted".into()))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(DatasetManifest {
        samples,
        positives: n_pos,
        negatives: n_neg,
        raw_positives,
        raw_negatives,
        seed,
    })
}

/// Serialize samples as `CFD1`: magic, u32 count, then per sample u8 label,
/// u32 row, u32 col and 2304 little-endian f32 values (channel-major).
pub fn write_dataset(path: impl AsRef<Path>, samples: &[PatchSample]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    encode_dataset(&mut out, samples).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn encode_dataset(out: &mut impl Write, samples: &[PatchSample]) -> std::io::Result<()> {
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&(samples.len() as u32).to_le_bytes())?;
    for s in samples {
        out.write_all(&[s.label as u8])?;
        out.write_all(&(s.origin.row as u32).to_le_bytes())?;
        out.write_all(&(s.origin.col as u32).to_le_bytes())?;
        for v in &s.stack {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<PatchSample>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&mut BufReader::new(file)).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn decode_dataset(input: &mut impl Read) -> Result<Vec<PatchSample>> {
    let truncated = |_| Error::format("truncated dataset file");
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(truncated)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::format("bad dataset magic"));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word).map_err(truncated)?;
    let count = u32::from_le_bytes(word) as usize;
    let mut samples = Vec::with_capacity(count.min(1 << 20));
    let mut body = vec![0u8; STACK_LEN * 4];
    for _ in 0..count {
        let mut label = [0u8; 1];
        input.read_exact(&mut label).map_err(truncated)?;
        if label[0] > 1 {
            return Err(Error::format(format!("invalid label byte {}", label[0])));
        }
        input.read_exact(&mut word).map_err(truncated)?;
        let row = u32::from_le_bytes(word) as usize;
        input.read_exact(&mut word).map_err(truncated)?;
        let col = u32::from_le_bytes(word) as usize;
        input.read_exact(&mut body).map_err(truncated)?;
        let stack = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        samples.push(PatchSample {
            stack,
            label: label[0] == 1,
            origin: PatchOrigin { image: 0, row, col },
        });
    }
    let mut extra = [0u8; 1];
    if input
        .read(&mut extra)
        .map_err(|e| Error::format(e.to_string()))?
        != 0
    {
        return Err(Error::format("trailing bytes after dataset samples"));
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn binary_map(h: usize, w: usize, on: &[(usize, usize)]) -> RasterImage {
        RasterImage::from_fn(h, w, |r, c| if on.contains(&(r, c)) { 1.0 } else { 0.0 }).unwrap()
    }

    fn random_image(h: usize, w: usize, ch: usize, seed: u64) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RasterImage::new(h, w, ch, (0..h * w * ch).map(|_| rng.random()).collect()).unwrap()
    }

    fn dummy(label: bool, i: usize) -> PatchSample {
        PatchSample {
            stack: vec![i as f32; 4],
            label,
            origin: PatchOrigin {
                image: i,
                row: 0,
                col: 0,
            },
        }
    }

    #[test]
    fn average_of_one_map_is_that_map() {
        let m = binary_map(4, 5, &[(1, 1), (3, 4)]);
        assert_eq!(average_ground_truth(&[m.clone()]).unwrap(), m);
    }

    #[test]
    fn average_of_disjoint_maps_is_half() {
        let a = binary_map(3, 3, &[(0, 0)]);
        let b = binary_map(3, 3, &[(2, 2)]);
        let avg = average_ground_truth(&[a, b]).unwrap();
        assert_eq!(avg.get(0, 0, 0), 0.5);
        assert_eq!(avg.get(2, 2, 0), 0.5);
        assert_eq!(avg.get(1, 1, 0), 0.0);
    }

    #[test]
    fn average_matches_per_pixel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let maps: Vec<RasterImage> = (0..5)
            .map(|_| RasterImage::from_fn(6, 6, |_, _| rng.random_range(0..2) as f64).unwrap())
            .collect();
        let avg = average_ground_truth(&maps).unwrap();
        for r in 0..6 {
            for c in 0..6 {
                let s: f64 = maps.iter().map(|m| m.get(r, c, 0)).sum();
                assert_eq!(avg.get(r, c, 0), s / 5.0);
            }
        }
        let ones = vec![RasterImage::filled(2, 2, 1, 1.0).unwrap(); 3];
        assert!(average_ground_truth(&ones)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.0));
    }

    #[test]
    fn average_rejects_mismatch_and_empty() {
        let a = binary_map(3, 3, &[]);
        let b = binary_map(3, 4, &[]);
        assert!(average_ground_truth(&[a, b]).is_err());
        assert!(average_ground_truth(&[]).is_err());
    }

    #[test]
    fn grid_threshold_is_strict() {
        let mut on: Vec<(usize, usize)> = (0..16).map(|c| (3, c)).collect();
        on.extend((0..8).map(|c| (20, 16 + c)));
        // exactly ten pixels: not positive
        on.extend((0..10).map(|c| (40, c)));
        let m = binary_map(48, 32, &on);
        let labels = grid_sample_labels(&m, 16, 10.0);
        assert_eq!(labels.len(), 6);
        let positive: Vec<(usize, usize)> = labels
            .iter()
            .filter(|t| t.positive)
            .map(|t| (t.row, t.col))
            .collect();
        assert_eq!(positive, vec![(0, 0)]);
    }

    #[test]
    fn grid_all_zero_and_partial_tiles() {
        let m = RasterImage::zeros(40, 35).unwrap();
        let labels = grid_sample_labels(&m, 16, 10.0);
        assert_eq!(labels.len(), 4);
        assert!(labels.iter().all(|t| !t.positive));
    }

    #[test]
    fn grid_matches_tile_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = RasterImage::from_fn(50, 70, |_, _| rng.random::<f64>() * 0.09).unwrap();
        let labels = grid_sample_labels(&m, 16, 10.0);
        let mut k = 0;
        for tr in 0..3 {
            for tc in 0..4 {
                let mut s = 0.0;
                for r in 0..16 {
                    for c in 0..16 {
                        s += m.get(tr * 16 + r, tc * 16 + c, 0);
                    }
                }
                assert_eq!(labels[k].row, tr * 16);
                assert_eq!(labels[k].col, tc * 16);
                assert_eq!(labels[k].positive, s > 10.0);
                k += 1;
            }
        }
        assert_eq!(k, labels.len());
    }

    #[test]
    fn balancing_caps_negatives_at_positive_count() {
        let pos: Vec<_> = (0..100).map(|i| dummy(true, i)).collect();
        let neg: Vec<_> = (0..1000).map(|i| dummy(false, 1000 + i)).collect();
        let m = balance_samples(pos, neg, 1);
        assert_eq!((m.positives, m.negatives), (100, 100));
        assert_eq!((m.raw_positives, m.raw_negatives), (100, 1000));
        assert_eq!(m.samples.iter().filter(|s| s.label).count(), 100);
        assert_eq!(m.samples.len(), 200);
    }

    #[test]
    fn balancing_never_oversamples() {
        let pos: Vec<_> = (0..100).map(|i| dummy(true, i)).collect();
        let neg: Vec<_> = (0..50).map(|i| dummy(false, 1000 + i)).collect();
        let m = balance_samples(pos, neg, 1);
        assert_eq!((m.positives, m.negatives), (100, 50));
    }

    #[test]
    fn balancing_is_seed_deterministic() {
        let make = || {
            (
                (0..20).map(|i| dummy(true, i)).collect::<Vec<_>>(),
                (0..500).map(|i| dummy(false, 1000 + i)).collect::<Vec<_>>(),
            )
        };
        let (p, n) = make();
        let a = balance_samples(p, n, 42);
        let (p, n) = make();
        let b = balance_samples(p, n, 42);
        assert_eq!(a, b);
        let (p, n) = make();
        let c = balance_samples(p, n, 43);
        let negs = |m: &DatasetManifest| {
            let mut v: Vec<usize> = m
                .samples
                .iter()
                .filter(|s| !s.label)
                .map(|s| s.origin.image)
                .collect();
            v.sort();
            v
        };
        assert_ne!(negs(&a), negs(&c));
    }

    #[test]
    fn constant_image_gives_constant_stack() {
        let img = RasterImage::filled(40, 40, 3, 0.35).unwrap();
        let stack = extract_multiscale_patch(&img, 0, 24).unwrap();
        assert_eq!(stack.len(), STACK_LEN);
        assert!(stack.iter().all(|&v| v == 0.35));
    }

    #[test]
    fn native_scale_channels_are_the_raw_crop() {
        let img = random_image(100, 100, 3, 5);
        let (row, col) = (40, 37);
        let stack = extract_multiscale_patch(&img, row, col).unwrap();
        for ch in 0..3 {
            for r in 0..16 {
                for c in 0..16 {
                    assert_eq!(stack[ch * 256 + r * 16 + c], img.get(row + r, col + c, ch));
                }
            }
        }
    }

    #[test]
    fn grayscale_is_replicated_into_rgb() {
        let img = random_image(64, 64, 1, 5);
        let stack = extract_multiscale_patch(&img, 16, 16).unwrap();
        for scale in 0..3 {
            let base = scale * 3 * 256;
            for i in 0..256 {
                assert_eq!(stack[base + i], stack[base + 256 + i]);
                assert_eq!(stack[base + i], stack[base + 512 + i]);
            }
        }
    }

    #[test]
    fn corner_patch_matches_pad_then_crop_oracle() {
        let img = random_image(48, 48, 3, 9);
        let stack = extract_multiscale_patch(&img, 0, 0).unwrap();
        // oracle: pad the whole image by 24 with mirror reflection, then crop
        let pad = 24usize;
        let (ph, pw) = (48 + 2 * pad, 48 + 2 * pad);
        let mut padded = vec![0.0; ph * pw * 3];
        for r in 0..ph {
            for c in 0..pw {
                let sr = crate::raster::reflect_index(r as isize - pad as isize, 48);
                let sc = crate::raster::reflect_index(c as isize - pad as isize, 48);
                for k in 0..3 {
                    padded[(r * pw + c) * 3 + k] = img.get(sr, sc, k);
                }
            }
        }
        let padded = RasterImage::new(ph, pw, 3, padded).unwrap();
        for (s, &size) in CROP_SIZES.iter().enumerate() {
            let off = pad - (size - 16) / 2;
            let crop = padded.crop_reflect(off as isize, off as isize, size, size);
            let small = resize_area(&crop, 16, 16).unwrap();
            for k in 0..3 {
                for r in 0..16 {
                    for c in 0..16 {
                        let got = stack[(s * 3 + k) * 256 + r * 16 + c];
                        assert!((got - small.get(r, c, k)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn out_of_bounds_window_is_rejected() {
        let img = random_image(20, 20, 3, 1);
        assert!(matches!(
            extract_multiscale_patch(&img, 5, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn dataset_file_round_trip_and_rejects_corruption() {
        let samples: Vec<PatchSample> = (0..3)
            .map(|i| PatchSample {
                stack: (0..STACK_LEN)
                    .map(|j| ((i * 31 + j) % 97) as f32 / 97.0)
                    .collect(),
                label: i % 2 == 0,
                origin: PatchOrigin {
                    image: 0,
                    row: 16 * i,
                    col: 32,
                },
            })
            .collect();
        let mut bytes = Vec::new();
        encode_dataset(&mut bytes, &samples).unwrap();
        assert_eq!(bytes.len(), 8 + 3 * (9 + STACK_LEN * 4));
        assert_eq!(decode_dataset(&mut bytes.as_slice()).unwrap(), samples);
        assert!(decode_dataset(&mut &bytes[..bytes.len() - 2]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_dataset(&mut bad.as_slice()).is_err());
    }
}
