//! Raster maps and the resampling / gradient primitives shared by every stage.
//!
//! All maps are stored row-major with interleaved channels and 64-bit values.
//! Operations never modify their inputs.

use crate::error::{Error, Result};

/// An `height × width × channels` array of real intensities, nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

/// Power-of-two downsampling exponent: a map at scale `n` has sides `ceil(side / 2^n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ScaleIndex(pub u32);

impl ScaleIndex {
    pub fn factor(self) -> usize {
        1usize << self.0
    }

    /// Side length of a map of `side` pixels after downsampling to this scale.
    pub fn scaled_side(self, side: usize) -> usize {
        side.div_ceil(self.factor()).max(1)
    }
}

impl RasterImage {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be nonzero, got {height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, 1, 0.0)
    }

    /// Build a single-channel map from a per-pixel function.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, 1, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = value;
    }

    /// Value at a possibly out-of-range position, mirrored back into the image.
    #[inline]
    pub fn get_reflect(&self, row: isize, col: isize, ch: usize) -> f64 {
        self.get(
            reflect_index(row, self.height),
            reflect_index(col, self.width),
            ch,
        )
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Copy of the `h × w` window whose top-left corner is `(row, col)`;
    /// pixels outside the image are reflect-padded.
    pub fn crop_reflect(&self, row: isize, col: isize, h: usize, w: usize) -> RasterImage {
        let mut data = Vec::with_capacity(h * w * self.channels);
        for r in 0..h as isize {
            for c in 0..w as isize {
                for ch in 0..self.channels {
                    data.push(self.get_reflect(row + r, col + c, ch));
                }
            }
        }
        RasterImage {
            height: h,
            width: w,
            channels: self.channels,
            data,
        }
    }

    /// Single-channel luminance (BT.601 weights); single-channel maps are copied.
    pub fn to_luminance(&self) -> RasterImage {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2])
            .collect();
        RasterImage {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }

    /// Multiply every value by `factor`.
    pub fn scaled(&self, factor: f64) -> RasterImage {
        RasterImage {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// Divide by the maximum value so the map spans [0, 1]; an all-zero map stays zero.
    pub fn max_normalized(mut self) -> RasterImage {
        let max = self.max_value();
        if max > 0.0 {
            for v in &mut self.data {
                *v /= max;
            }
        }
        self
    }

    pub(crate) fn from_parts_unchecked(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> RasterImage {
        debug_assert_eq!(data.len(), height * width * channels);
        RasterImage {
            height,
            width,
            channels,
            data,
        }
    }
}

/// Mirror an index into `0..n` without repeating the edge sample (`-1 → 1`).
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Per-axis overlap weights of an area resampler: for each output index the
/// list of `(source index, weight)` pairs, weights summing to one.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Resize by area averaging: every output pixel is the area-weighted mean of
/// the source pixels its footprint covers.
pub fn resize_area(img: &RasterImage, out_h: usize, out_w: usize) -> Result<RasterImage> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!(
            "resize target must be nonzero, got {out_h}x{out_w}"
        )));
    }
    let ch = img.channels;
    let (lo, hi) = (img.min_value(), img.max_value());
    let rows = area_weights(img.height, out_h);
    let cols = area_weights(img.width, out_w);
    let mut data = vec![0.0; out_h * out_w * ch];
    for (oy, rw) in rows.iter().enumerate() {
        for (ox, cw) in cols.iter().enumerate() {
            for c in 0..ch {
                let mut acc = 0.0;
                for &(sy, wy) in rw {
                    let mut row_acc = 0.0;
                    for &(sx, wx) in cw {
                        row_acc += wx * img.get(sy, sx, c);
                    }
                    acc += wy * row_acc;
                }
                // rounding must not push a mean outside the source range
                data[(oy * out_w + ox) * ch + c] = acc.clamp(lo, hi);
            }
        }
    }
    Ok(RasterImage::from_parts_unchecked(out_h, out_w, ch, data))
}

/// Sobel gradient magnitude before max-normalization (luminance for colour input).
pub fn sobel_magnitude_raw(img: &RasterImage) -> RasterImage {
    let lum = img.to_luminance();
    let (h, w) = lum.dims();
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let p = |dr: isize, dc: isize| lum.get_reflect(r + dr, c + dc, 0);
            let gx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let gy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            data.push((gx * gx + gy * gy).sqrt());
        }
    }
    RasterImage::from_parts_unchecked(h, w, 1, data)
}

/// Sobel gradient magnitude scaled to [0, 1] by its maximum.
pub fn sobel_gradient_magnitude(img: &RasterImage) -> RasterImage {
    sobel_magnitude_raw(img).max_normalized()
}

/// Mean-pool by `2^n × 2^n` blocks; partial edge blocks average the pixels they hold.
pub fn downsample_pow2(map: &RasterImage, n: ScaleIndex) -> RasterImage {
    if n.0 == 0 {
        return map.clone();
    }
    let f = n.factor();
    let (h, w, ch) = (map.height, map.width, map.channels);
    let (oh, ow) = (n.scaled_side(h), n.scaled_side(w));
    let mut data = vec![0.0; oh * ow * ch];
    for oy in 0..oh {
        let rows = oy * f..((oy + 1) * f).min(h);
        for ox in 0..ow {
            let cols = ox * f..((ox + 1) * f).min(w);
            let count = (rows.len() * cols.len()) as f64;
            for c in 0..ch {
                let mut acc = 0.0;
                for r in rows.clone() {
                    for col in cols.clone() {
                        acc += map.get(r, col, c);
                    }
                }
                data[(oy * ow + ox) * ch + c] = acc / count;
            }
        }
    }
    RasterImage::from_parts_unchecked(oh, ow, ch, data)
}

/// Replicate each pixel into a `factor × factor` block. With `target`, the
/// result is cropped, or padded by repeating the last row/column, to that size.
pub fn upsample_nearest(
    map: &RasterImage,
    factor: usize,
    target: Option<(usize, usize)>,
) -> Result<RasterImage> {
    if factor < 1 {
        return Err(Error::invalid("upsample factor must be at least 1"));
    }
    let (th, tw) = target.unwrap_or((map.height * factor, map.width * factor));
    if th == 0 || tw == 0 {
        return Err(Error::invalid("upsample target must be nonzero"));
    }
    let ch = map.channels;
    let mut data = Vec::with_capacity(th * tw * ch);
    for r in 0..th {
        let sr = (r / factor).min(map.height - 1);
        for c in 0..tw {
            let sc = (c / factor).min(map.width - 1);
            for k in 0..ch {
                data.push(map.get(sr, sc, k));
            }
        }
    }
    Ok(RasterImage::from_parts_unchecked(th, tw, ch, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(h: usize, w: usize, ch: usize, seed: u64) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * ch).map(|_| rng.random::<f64>()).collect();
        RasterImage::new(h, w, ch, data).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(RasterImage::new(0, 3, 1, vec![]).is_err());
        assert!(RasterImage::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(RasterImage::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(RasterImage::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn reflect_index_mirrors_without_edge_repeat() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn resize_constant_is_preserved() {
        let img = RasterImage::filled(32, 32, 3, 0.7).unwrap();
        let out = resize_area(&img, 16, 16).unwrap();
        assert_eq!(out.dims(), (16, 16));
        assert_eq!(out.channels(), 3);
        assert!(out.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn resize_checkerboard_to_single_pixel() {
        let img = RasterImage::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let out = resize_area(&img, 1, 1).unwrap();
        assert_eq!(out.data(), &[0.5]);
    }

    #[test]
    fn resize_matches_block_mean_oracle() {
        let img = random_map(64, 64, 1, 3);
        let out = resize_area(&img, 16, 16).unwrap();
        for oy in 0..16 {
            for ox in 0..16 {
                let mut s = 0.0;
                for r in 0..4 {
                    for c in 0..4 {
                        s += img.get(oy * 4 + r, ox * 4 + c, 0);
                    }
                }
                assert!((out.get(oy, ox, 0) - s / 16.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resize_rejects_zero_target() {
        let img = random_map(4, 4, 1, 0);
        assert!(matches!(
            resize_area(&img, 0, 2),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn resize_non_integer_ratio_stays_in_range() {
        let img = random_map(37, 23, 3, 9);
        let out = resize_area(&img, 16, 16).unwrap();
        let (lo, hi) = (img.min_value(), img.max_value());
        assert!(out.data().iter().all(|&v| v >= lo && v <= hi));
        assert!((out.mean() - img.mean()).abs() < 0.05);
    }

    #[test]
    fn sobel_constant_is_zero() {
        let img = RasterImage::filled(9, 7, 3, 0.4).unwrap();
        assert!(sobel_gradient_magnitude(&img)
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn sobel_step_edge_peaks_beside_step() {
        let img = RasterImage::from_fn(8, 8, |_, c| if c < 4 { 0.0 } else { 1.0 }).unwrap();
        let g = sobel_gradient_magnitude(&img);
        for r in 0..8 {
            for c in 0..8 {
                let expect = if c == 3 || c == 4 { 1.0 } else { 0.0 };
                assert_eq!(g.get(r, c, 0), expect, "({r},{c})");
            }
        }
    }

    #[test]
    fn sobel_matches_direct_convolution_oracle() {
        let img = random_map(8, 8, 1, 11);
        let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
        let ky = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
        let raw = sobel_magnitude_raw(&img);
        for r in 0..8isize {
            for c in 0..8isize {
                let (mut gx, mut gy) = (0.0, 0.0);
                for i in 0..3isize {
                    for j in 0..3isize {
                        let rr = reflect_index(r + i - 1, 8);
                        let cc = reflect_index(c + j - 1, 8);
                        let v = img.get(rr, cc, 0);
                        gx += kx[i as usize][j as usize] * v;
                        gy += ky[i as usize][j as usize] * v;
                    }
                }
                let expect = (gx * gx + gy * gy).sqrt();
                assert!((raw.get(r as usize, c as usize, 0) - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sobel_uses_bt601_luminance() {
        let rgb = random_map(6, 6, 3, 5);
        let lum = rgb.to_luminance();
        let px = (rgb.get(2, 3, 0), rgb.get(2, 3, 1), rgb.get(2, 3, 2));
        assert!((lum.get(2, 3, 0) - (0.299 * px.0 + 0.587 * px.1 + 0.114 * px.2)).abs() < 1e-15);
        assert_eq!(
            sobel_gradient_magnitude(&rgb),
            sobel_gradient_magnitude(&lum)
        );
    }

    #[test]
    fn sobel_is_translation_equivariant_in_interior() {
        let big = random_map(20, 20, 1, 21);
        let a = big.crop_reflect(0, 0, 16, 16);
        let b = big.crop_reflect(2, 3, 16, 16);
        let (ga, gb) = (sobel_magnitude_raw(&a), sobel_magnitude_raw(&b));
        for r in 1..12 {
            for c in 1..12 {
                assert!((ga.get(r + 2, c + 3, 0) - gb.get(r, c, 0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn downsample_identity_and_ones() {
        let m = random_map(5, 7, 1, 1);
        assert_eq!(downsample_pow2(&m, ScaleIndex(0)), m);
        let ones = RasterImage::filled(4, 4, 1, 1.0).unwrap();
        let d = downsample_pow2(&ones, ScaleIndex(2));
        assert_eq!(d.dims(), (1, 1));
        assert_eq!(d.data(), &[1.0]);
    }

    #[test]
    fn downsample_matches_block_mean_oracle() {
        let m = random_map(8, 8, 1, 4);
        let d = downsample_pow2(&m, ScaleIndex(1));
        assert_eq!(d.dims(), (4, 4));
        for oy in 0..4 {
            for ox in 0..4 {
                let s = m.get(2 * oy, 2 * ox, 0)
                    + m.get(2 * oy, 2 * ox + 1, 0)
                    + m.get(2 * oy + 1, 2 * ox, 0)
                    + m.get(2 * oy + 1, 2 * ox + 1, 0);
                assert!((d.get(oy, ox, 0) - s / 4.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn downsample_partial_blocks_use_available_pixels() {
        let m = RasterImage::from_fn(5, 5, |r, c| (r * 5 + c) as f64 / 24.0).unwrap();
        let d = downsample_pow2(&m, ScaleIndex(2));
        assert_eq!(d.dims(), (2, 2));
        // bottom-right block holds only pixel (4,4)
        assert_eq!(d.get(1, 1, 0), 1.0);
        // right column block: rows 0..4, col 4
        let expect = (4.0 + 9.0 + 14.0 + 19.0) / 4.0 / 24.0;
        assert!((d.get(0, 1, 0) - expect).abs() < 1e-15);
    }

    #[test]
    fn upsample_replicates_and_crops() {
        let m = random_map(3, 3, 1, 8);
        assert_eq!(upsample_nearest(&m, 1, None).unwrap(), m);
        let one = RasterImage::filled(1, 1, 1, 0.3).unwrap();
        let up = upsample_nearest(&one, 4, None).unwrap();
        assert_eq!(up.dims(), (4, 4));
        assert!(up.data().iter().all(|&v| v == 0.3));
        let cropped = upsample_nearest(&m, 2, Some((5, 7))).unwrap();
        assert_eq!(cropped.dims(), (5, 7));
        assert_eq!(cropped.get(4, 6, 0), m.get(2, 2, 0));
        assert_eq!(cropped.get(1, 3, 0), m.get(0, 1, 0));
        assert!(upsample_nearest(&m, 0, None).is_err());
    }

    #[test]
    fn constant_maps_survive_down_then_up() {
        let m = RasterImage::filled(13, 10, 1, 0.625).unwrap();
        let d = downsample_pow2(&m, ScaleIndex(2));
        let up = upsample_nearest(&d, 4, Some((13, 10))).unwrap();
        assert_eq!(up, m);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn resampling_preserves_mean(seed in 0u64..1000, k in 1usize..4, n in 1u32..3) {
                let side = 16 * k;
                let m = random_map(side, side, 1, seed);
                let r = resize_area(&m, side / 2, side / 4).unwrap();
                prop_assert!((r.mean() - m.mean()).abs() < 1e-9);
                let d = downsample_pow2(&m, ScaleIndex(n));
                prop_assert!((d.mean() - m.mean()).abs() < 1e-9);
            }

            #[test]
            fn operations_leave_input_untouched(seed in 0u64..1000) {
                let m = random_map(9, 11, 3, seed);
                let copy = m.clone();
                let _ = resize_area(&m, 4, 4).unwrap();
                let _ = sobel_gradient_magnitude(&m);
                let _ = downsample_pow2(&m, ScaleIndex(1));
                let _ = upsample_nearest(&m, 2, None).unwrap();
                prop_assert_eq!(m, copy);
            }
        }
    }
}
