use crate::raster::RasterImage;

/// A binary edge map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMap {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMap {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), height * width, "binary map size mismatch");
        Self {
            height,
            width,
            data,
        }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..height * width)
            .map(|i| f(i / width, i % width))
            .collect();
        Self::new(height, width, data)
    }

    /// Pixels with value `>= threshold` are set (first channel only).
    pub fn threshold(map: &RasterImage, threshold: f64) -> Self {
        let (h, w) = map.dims();
        Self::from_fn(h, w, |r, c| map.get(r, c, 0) >= threshold)
    }

    /// Pixels with any nonzero value are set.
    pub fn nonzero(map: &RasterImage) -> Self {
        Self::threshold(map, f64::MIN_POSITIVE)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.width + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.width + c] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / self.width, i % self.width))
    }

    pub fn to_raster(&self) -> RasterImage {
        RasterImage::from_fn(self.height, self.width, |r, c| {
            if self.get(r, c) {
                1.0
            } else {
                0.0
            }
        })
        .expect("binary map has nonzero size")
    }

    /// Neighbours P2..P9 clockwise from north; outside pixels are unset.
    fn ring(&self, r: usize, c: usize) -> [bool; 8] {
        let at = |dr: isize, dc: isize| {
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            rr >= 0
                && cc >= 0
                && (rr as usize) < self.height
                && (cc as usize) < self.width
                && self.get(rr as usize, cc as usize)
        };
        [
            at(-1, 0),
            at(-1, 1),
            at(0, 1),
            at(1, 1),
            at(1, 0),
            at(1, -1),
            at(0, -1),
            at(-1, -1),
        ]
    }
}

/// Zhang–Suen thinning, repeated until a full pass removes nothing, so the
/// result is a fixed point: `thin(thin(m)) == thin(m)`.
pub fn thin(map: &BinaryMap) -> BinaryMap {
    let mut m = map.clone();
    let mut doomed = Vec::new();
    loop {
        let mut changed = false;
        for step in 0..2 {
            doomed.clear();
            for (r, c) in m.pixels() {
                let p = m.ring(r, c);
                let b = p.iter().filter(|&&v| v).count();
                if !(2..=6).contains(&b) {
                    continue;
                }
                let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
                if a != 1 {
                    continue;
                }
                // p[0]=N p[2]=E p[4]=S p[6]=W
                let ok = if step == 0 {
                    !(p[0] && p[2] && p[4]) && !(p[2] && p[4] && p[6])
                } else {
                    !(p[0] && p[2] && p[6]) && !(p[0] && p[4] && p[6])
                };
                if ok {
                    doomed.push((r, c));
                }
            }
            for &(r, c) in &doomed {
                m.set(r, c, false);
            }
            changed |= !doomed.is_empty();
        }
        if !changed {
            return m;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn thin_lines_are_unchanged() {
        let line = BinaryMap::from_fn(9, 12, |r, c| r == 4 && (1..11).contains(&c));
        assert_eq!(thin(&line), line);
        let diag = BinaryMap::from_fn(10, 10, |r, c| r == c && r > 0 && r < 9);
        assert_eq!(thin(&diag), diag);
    }

    #[test]
    fn three_wide_bar_becomes_centre_line() {
        let bar = BinaryMap::from_fn(20, 9, |r, c| (3..6).contains(&c) && (2..18).contains(&r));
        let t = thin(&bar);
        for r in 4..16 {
            let cols: Vec<usize> = (0..9).filter(|&c| t.get(r, c)).collect();
            assert_eq!(cols, vec![4], "row {r}");
        }
        assert!(t.pixels().all(|(_, c)| c == 4));
    }

    #[test]
    fn thinning_is_idempotent_on_random_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let (cr, cc, rad) = (
                rng.random_range(5.0..15.0),
                rng.random_range(5.0..15.0),
                rng.random_range(2.0..8.0),
            );
            let noise: Vec<f64> = (0..400).map(|_| rng.random_range(-1.5..1.5)).collect();
            let blob = BinaryMap::from_fn(20, 20, |r, c| {
                let d = ((r as f64 - cr).powi(2) + (c as f64 - cc).powi(2)).sqrt();
                d + noise[r * 20 + c] < rad
            });
            let once = thin(&blob);
            assert_eq!(thin(&once), once);
            assert!(once.pixels().all(|(r, c)| blob.get(r, c)));
        }
    }
}
