//! Gradient-domain refinement of coarse contour maps.
//!
//! The image gradient is cut into overlapping tiles. Each tile is convolved
//! with the matching region of the downsampled coarse map, used as an
//! L1-normalized kernel, so gradient structure that agrees with the coarse
//! contour shape is kept. Overlapping tiles are merged by per-pixel maximum;
//! several downsampling scales are summed.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::grid_positions;
use crate::raster::{downsample_pow2, sobel_gradient_magnitude, RasterImage, ScaleIndex};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefineConfig {
    pub scales: Vec<ScaleIndex>,
    pub y_patch: usize,
    pub y_stride: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            scales: vec![ScaleIndex(2)],
            y_patch: 8,
            y_stride: 4,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::invalid("at least one refinement scale is required"));
        }
        if self.y_patch == 0 || self.y_stride == 0 || self.y_stride > self.y_patch {
            return Err(Error::invalid(format!(
                "need 1 <= y_stride <= y_patch, got stride {} patch {}",
                self.y_stride, self.y_patch
            )));
        }
        for s in &self.scales {
            if self.y_patch >> s.0 == 0 || s.0 >= usize::BITS {
                return Err(Error::invalid(format!(
                    "scale {} is too coarse for {}-pixel tiles",
                    s.0, self.y_patch
                )));
            }
        }
        Ok(())
    }
}

/// Convolve a gradient tile with an L1-normalized kernel (flipped, centred at
/// `(kh/2, kw/2)`), reflect-padding the tile. An all-zero kernel yields zeros.
pub fn guided_filter_patch(tile: &RasterImage, kernel: &RasterImage) -> Result<RasterImage> {
    let (th, tw) = tile.dims();
    let (kh, kw) = kernel.dims();
    if kh > th || kw > tw {
        return Err(Error::invalid(format!(
            "kernel {kh}x{kw} is larger than tile {th}x{tw}"
        )));
    }
    if tile.channels() != 1 || kernel.channels() != 1 {
        return Err(Error::invalid(
            "guided filtering works on single-channel maps",
        ));
    }
    let mass: f64 = kernel.data().iter().sum();
    if mass <= 0.0 {
        return RasterImage::zeros(th, tw);
    }
    let weights: Vec<(isize, isize, f64)> = (0..kh)
        .flat_map(|a| (0..kw).map(move |b| (a, b)))
        .filter_map(|(a, b)| {
            let v = kernel.get(a, b, 0);
            (v != 0.0).then_some((
                (kh / 2) as isize - a as isize,
                (kw / 2) as isize - b as isize,
                v / mass,
            ))
        })
        .collect();
    let mut data = Vec::with_capacity(th * tw);
    for i in 0..th as isize {
        for j in 0..tw as isize {
            let mut acc = 0.0;
            for &(dr, dc, w) in &weights {
                acc += w * tile.get_reflect(i + dr, j + dc, 0);
            }
            data.push(acc);
        }
    }
    RasterImage::new(th, tw, 1, data)
}

/// A filtered tile placed at `(row, col)` of the output map.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedTile {
    pub row: usize,
    pub col: usize,
    pub tile: RasterImage,
}

/// Per-pixel maximum over all tiles covering each pixel.
pub fn combine_overlaps_max(
    tiles: &[PlacedTile],
    height: usize,
    width: usize,
) -> Result<RasterImage> {
    let mut data = vec![f64::NEG_INFINITY; height * width];
    for t in tiles {
        let (th, tw) = t.tile.dims();
        if t.row + th > height || t.col + tw > width {
            return Err(Error::invalid(format!(
                "tile at ({},{}) exceeds {height}x{width} map",
                t.row, t.col
            )));
        }
        for r in 0..th {
            for c in 0..tw {
                let d = &mut data[(t.row + r) * width + t.col + c];
                *d = d.max(t.tile.get(r, c, 0));
            }
        }
    }
    if let Some(i) = data.iter().position(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::Internal(format!(
            "pixel ({}, {}) is not covered by any tile",
            i / width,
            i % width
        )));
    }
    RasterImage::new(height, width, 1, data)
}

/// Filter `gradient` tile by tile at one scale and merge the tiles by max.
pub fn refine_single_scale(
    coarse: &RasterImage,
    gradient: &RasterImage,
    scale: ScaleIndex,
    config: &RefineConfig,
) -> Result<RasterImage> {
    let (h, w) = gradient.dims();
    let (tile_h, tile_w) = (config.y_patch.min(h), config.y_patch.min(w));
    let f = scale.factor();
    let small = downsample_pow2(coarse, scale);
    let (sh, sw) = small.dims();
    let (kh, kw) = (tile_h.div_ceil(f).min(sh), tile_w.div_ceil(f).min(sw));
    let stride_h = config.y_stride.min(tile_h);
    let stride_w = config.y_stride.min(tile_w);
    let positions: Vec<(usize, usize)> = grid_positions(h, tile_h, stride_h)
        .into_iter()
        .flat_map(|r| {
            grid_positions(w, tile_w, stride_w)
                .into_iter()
                .map(move |c| (r, c))
        })
        .collect();
    let tiles = positions
        .par_iter()
        .map(|&(row, col)| {
            let y = gradient.crop_reflect(row as isize, col as isize, tile_h, tile_w);
            let kr = (row / f).min(sh - kh);
            let kc = (col / f).min(sw - kw);
            let kernel = small.crop_reflect(kr as isize, kc as isize, kh, kw);
            Ok(PlacedTile {
                row,
                col,
                tile: guided_filter_patch(&y, &kernel)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    combine_overlaps_max(&tiles, h, w)
}

/// Fine contour map: the per-scale filtered gradients of `image` summed over
/// `config.scales` and max-normalized to [0, 1].
pub fn refine(
    coarse: &RasterImage,
    image: &RasterImage,
    config: &RefineConfig,
) -> Result<RasterImage> {
    config.validate()?;
    if coarse.dims() != image.dims() {
        return Err(Error::invalid(format!(
            "coarse map is {}x{} but image is {}x{}",
            coarse.height(),
            coarse.width(),
            image.height(),
            image.width()
        )));
    }
    if coarse.channels() != 1 {
        return Err(Error::invalid("coarse map must be single-channel"));
    }
    let gradient = sobel_gradient_magnitude(image);
    let (h, w) = image.dims();
    let mut total = vec![0.0; h * w];
    for &scale in &config.scales {
        let part = refine_single_scale(coarse, &gradient, scale, config)?;
        for (t, v) in total.iter_mut().zip(part.data()) {
            *t += v;
        }
    }
    Ok(RasterImage::new(h, w, 1, total)?.max_normalized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(h: usize, w: usize, seed: u64) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RasterImage::from_fn(h, w, |_, _| rng.random()).unwrap()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let y = random_map(8, 8, 1);
        for k in [1usize, 3, 4, 8] {
            let kernel =
                RasterImage::from_fn(
                    k,
                    k,
                    |r, c| {
                        if r == k / 2 && c == k / 2 {
                            0.3
                        } else {
                            0.0
                        }
                    },
                )
                .unwrap();
            assert_eq!(guided_filter_patch(&y, &kernel).unwrap(), y);
        }
    }

    #[test]
    fn zero_kernel_gives_zero_tile() {
        let y = random_map(8, 8, 2);
        let out = guided_filter_patch(&y, &RasterImage::zeros(3, 3).unwrap()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let y = random_map(4, 4, 2);
        let k = random_map(5, 3, 3);
        assert!(matches!(
            guided_filter_patch(&y, &k),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn non_overlapping_tiles_mosaic_and_overlap_takes_max() {
        let a = RasterImage::filled(2, 2, 1, 0.3).unwrap();
        let b = RasterImage::filled(2, 2, 1, 0.7).unwrap();
        let tiles = vec![
            PlacedTile {
                row: 0,
                col: 0,
                tile: a.clone(),
            },
            PlacedTile {
                row: 0,
                col: 2,
                tile: b.clone(),
            },
        ];
        let m = combine_overlaps_max(&tiles, 2, 4).unwrap();
        assert_eq!(m.data(), &[0.3, 0.3, 0.7, 0.7, 0.3, 0.3, 0.7, 0.7]);
        let tiles = vec![
            PlacedTile {
                row: 0,
                col: 0,
                tile: a,
            },
            PlacedTile {
                row: 0,
                col: 1,
                tile: b,
            },
        ];
        let m = combine_overlaps_max(&tiles, 2, 3).unwrap();
        assert_eq!(m.data(), &[0.3, 0.7, 0.7, 0.3, 0.7, 0.7]);
    }

    #[test]
    fn coverage_gap_is_an_invariant_violation() {
        let a = RasterImage::filled(2, 2, 1, 0.3).unwrap();
        let tiles = vec![PlacedTile {
            row: 0,
            col: 0,
            tile: a,
        }];
        assert!(matches!(
            combine_overlaps_max(&tiles, 2, 3),
            Err(Error::Internal(_))
        ));
    }

    #[test]
    fn zero_coarse_map_gives_zero_output() {
        let img = random_map(40, 48, 5);
        let coarse = RasterImage::zeros(40, 48).unwrap();
        let out = refine(&coarse, &img, &RefineConfig::default()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_and_dimension_errors() {
        let img = random_map(32, 32, 5);
        let coarse = RasterImage::zeros(32, 31).unwrap();
        assert!(refine(&coarse, &img, &RefineConfig::default()).is_err());
        let too_coarse = RefineConfig {
            scales: vec![ScaleIndex(6)],
            ..RefineConfig::default()
        };
        assert!(too_coarse.validate().is_err());
        let bad_stride = RefineConfig {
            y_stride: 40,
            ..RefineConfig::default()
        };
        assert!(bad_stride.validate().is_err());
        let no_scales = RefineConfig {
            scales: vec![],
            ..RefineConfig::default()
        };
        assert!(no_scales.validate().is_err());
    }

    #[test]
    fn handles_images_smaller_than_a_tile() {
        let img = random_map(20, 26, 6);
        let coarse = random_map(20, 26, 7);
        let out = refine(&coarse, &img, &RefineConfig::default()).unwrap();
        assert_eq!(out.dims(), (20, 26));
        assert!((out.max_value() - 1.0).abs() < 1e-12);
    }

    /// Direct evaluation of `sum_w y(w) k(j - w)` with reflect padding.
    fn convolution_oracle(y: &RasterImage, k: &RasterImage) -> RasterImage {
        let (th, tw) = y.dims();
        let (kh, kw) = k.dims();
        let mass: f64 = k.data().iter().sum();
        RasterImage::from_fn(th, tw, |i, j| {
            let mut acc = 0.0;
            for a in 0..kh {
                for b in 0..kw {
                    let r = i as isize + (kh / 2) as isize - a as isize;
                    let c = j as isize + (kw / 2) as isize - b as isize;
                    acc += y.get_reflect(r, c, 0) * k.get(a, b, 0) / mass;
                }
            }
            acc
        })
        .unwrap()
    }

    #[test]
    fn guided_filter_matches_direct_convolution() {
        for (seed, (kh, kw)) in [(3, 3), (2, 4), (5, 1), (4, 4)].into_iter().enumerate() {
            let y = random_map(8, 8, 30 + seed as u64);
            let k = random_map(kh, kw, 40 + seed as u64);
            let got = guided_filter_patch(&y, &k).unwrap();
            let want = convolution_oracle(&y, &k);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn asymmetric_kernel_is_flipped() {
        // impulse in y, kernel mass one step right of centre: output moves right
        let y =
            RasterImage::from_fn(7, 7, |r, c| if (r, c) == (3, 3) { 1.0 } else { 0.0 }).unwrap();
        let k =
            RasterImage::from_fn(3, 3, |r, c| if (r, c) == (1, 2) { 1.0 } else { 0.0 }).unwrap();
        let out = guided_filter_patch(&y, &k).unwrap();
        assert_eq!(out.get(3, 4, 0), 1.0);
        assert_eq!(out.get(3, 2, 0), 0.0);
    }

    #[test]
    fn rescaling_the_coarse_map_changes_nothing() {
        let img =
            RasterImage::from_fn(48, 40, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0).unwrap();
        let coarse = random_map(48, 40, 9);
        let cfg = RefineConfig {
            scales: vec![ScaleIndex(1), ScaleIndex(2)],
            ..RefineConfig::default()
        };
        let base = refine(&coarse, &img, &cfg).unwrap();
        for k in [0.01, 3.0, 250.0] {
            let out = refine(&coarse.scaled(k), &img, &cfg).unwrap();
            for (a, b) in base.data().iter().zip(out.data()) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn single_edge_response_stays_in_marked_tiles() {
        let img = RasterImage::from_fn(64, 64, |_, c| if c < 32 { 0.2 } else { 0.8 }).unwrap();
        let marked = |c: usize| (24..40).contains(&c);
        let coarse =
            RasterImage::from_fn(64, 64, |_, c| if marked(c) { 1.0 } else { 0.0 }).unwrap();
        let out = refine(&coarse, &img, &RefineConfig::default()).unwrap();
        let (mut inside, mut outside) = (0.0, 0.0);
        for r in 0..64 {
            for c in 0..64 {
                if marked(c) {
                    inside += out.get(r, c, 0);
                } else {
                    outside += out.get(r, c, 0);
                }
            }
        }
        assert!(inside > 10.0 * outside, "{inside} vs {outside}");
        // strongest response on the step
        let row: Vec<f64> = (0..64).map(|c| out.get(30, c, 0)).collect();
        let peak = (0..64).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert!((31..=32).contains(&peak));
    }

    #[test]
    fn one_scale_equals_normalized_single_scale_map() {
        let img = random_map(40, 36, 11);
        let coarse = random_map(40, 36, 12);
        let cfg = RefineConfig::default();
        let gradient = sobel_gradient_magnitude(&img);
        let single = refine_single_scale(&coarse, &gradient, ScaleIndex(2), &cfg)
            .unwrap()
            .max_normalized();
        assert_eq!(refine(&coarse, &img, &cfg).unwrap(), single);
    }

    #[test]
    fn combine_is_independent_of_tile_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut tiles = Vec::new();
        for row in (0..12).step_by(4) {
            for col in (0..12).step_by(4) {
                let tile = random_map(8.min(16 - row), 8.min(16 - col), rng.random());
                tiles.push(PlacedTile { row, col, tile });
            }
        }
        let a = combine_overlaps_max(&tiles, 16, 16).unwrap();
        tiles.reverse();
        let b = combine_overlaps_max(&tiles, 16, 16).unwrap();
        assert_eq!(a, b);
        for r in 0..16 {
            for c in 0..16 {
                let want = tiles
                    .iter()
                    .filter(|t| {
                        (t.row..t.row + t.tile.height()).contains(&r)
                            && (t.col..t.col + t.tile.width()).contains(&c)
                    })
                    .map(|t| t.tile.get(r - t.row, c - t.col, 0))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(a.get(r, c, 0), want);
            }
        }
    }
}
