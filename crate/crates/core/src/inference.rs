//! Coarse contour maps from overlapping patch classifications.
//!
//! The classifier is applied to 16×16 windows on a regular grid; each
//! window's probability is spread over its whole footprint and every pixel
//! takes the mean of the values covering it.

use rayon::prelude::*;

use crate::convnet::NetworkModel;
use crate::dataset::{extract_multiscale_patch, PATCH};
use crate::error::{Error, Result};
use crate::raster::RasterImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VotingConfig {
    pub patch: usize,
    pub stride: usize,
}

impl Default for VotingConfig {
    fn default() -> Self {
        Self {
            patch: PATCH,
            stride: 4,
        }
    }
}

impl VotingConfig {
    pub fn with_stride(stride: usize) -> Self {
        Self {
            stride,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride < 1 || self.stride > self.patch {
            return Err(Error::invalid(format!(
                "stride must lie in 1..={}, got {}",
                self.patch, self.stride
            )));
        }
        Ok(())
    }
}

/// A patch window's top-left corner and its boundary probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchScore {
    pub row: usize,
    pub col: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseContourMap {
    pub map: RasterImage,
    pub vote_counts: Vec<u32>,
}

/// Window offsets along one axis: multiples of `stride`, plus a final window
/// flush with the far edge when the grid would leave pixels uncovered.
pub fn grid_positions(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    if len < patch || stride == 0 {
        return Vec::new();
    }
    let last = len - patch;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

/// Classify every grid window of `image`, row-major.
pub fn predict_patch_scores(
    model: &NetworkModel,
    image: &RasterImage,
    config: &VotingConfig,
) -> Result<Vec<PatchScore>> {
    config.validate()?;
    let (h, w) = image.dims();
    if h < config.patch || w < config.patch {
        return Err(Error::invalid(format!(
            "image {h}x{w} is smaller than the {0}x{0} patch",
            config.patch
        )));
    }
    let rows = grid_positions(h, config.patch, config.stride);
    let cols = grid_positions(w, config.patch, config.stride);
    let positions: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    positions
        .par_iter()
        .map(|&(row, col)| {
            let stack = extract_multiscale_patch(image, row, col)?;
            Ok(PatchScore {
                row,
                col,
                probability: model.predict(&stack)?,
            })
        })
        .collect()
}

/// Spread each score over its `patch × patch` footprint and average.
///
/// Scores are accumulated in the given order, so the result is reproducible
/// bit for bit. Each pixel is clamped into the range of the scores covering
/// it, which keeps equal scores exact under any overlap.
pub fn vote_average(
    scores: &[PatchScore],
    height: usize,
    width: usize,
    config: &VotingConfig,
) -> Result<CoarseContourMap> {
    let p = config.patch;
    let n = height * width;
    let mut sum = vec![0.0; n];
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    let mut counts = vec![0u32; n];
    for s in scores {
        if s.row + p > height || s.col + p > width {
            return Err(Error::invalid(format!(
                "patch at ({},{}) exceeds {height}x{width} map",
                s.row, s.col
            )));
        }
        for r in s.row..s.row + p {
            for c in s.col..s.col + p {
                let i = r * width + c;
                sum[i] += s.probability;
                lo[i] = lo[i].min(s.probability);
                hi[i] = hi[i].max(s.probability);
                counts[i] += 1;
            }
        }
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Internal(format!(
            "pixel ({}, {}) is not covered by any patch",
            i / width,
            i % width
        )));
    }
    let data = (0..n)
        .map(|i| (sum[i] / counts[i] as f64).clamp(lo[i], hi[i]))
        .collect();
    Ok(CoarseContourMap {
        map: RasterImage::new(height, width, 1, data)?,
        vote_counts: counts,
    })
}

/// Score every window of `image` and vote the scores into a coarse map.
pub fn detect_contours(
    model: &NetworkModel,
    image: &RasterImage,
    config: &VotingConfig,
) -> Result<CoarseContourMap> {
    let scores = predict_patch_scores(model, image, config)?;
    vote_average(&scores, image.height(), image.width(), config)
}
