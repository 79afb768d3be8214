//! Synthetic contour corpora: filled ellipses and polygons over striped,
//! noisy backgrounds, with exact object-boundary ground truth.
//!
//! Background texture produces strong gradients that are not contours, which
//! is what separates a contour detector from a plain gradient operator.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench::{thin, BinaryMap};
use crate::error::{Error, Result};
use crate::io::write_image;
use crate::raster::RasterImage;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Peak amplitude of the background stripe texture.
    pub texture_amplitude: f64,
    /// Standard deviation of per-pixel noise (uniform, same variance).
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 96,
            width: 96,
            min_shapes: 2,
            max_shapes: 4,
            texture_amplitude: 0.12,
            noise: 0.03,
        }
    }
}

enum Shape {
    Ellipse {
        cy: f64,
        cx: f64,
        ry: f64,
        rx: f64,
        angle: f64,
    },
    Polygon {
        vertices: Vec<(f64, f64)>,
    },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match self {
            Shape::Ellipse {
                cy,
                cx,
                ry,
                rx,
                angle,
            } => {
                let (s, c) = angle.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Polygon { vertices } => {
                // convex, counter-clockwise in (x, y): inside when left of every edge
                let n = vertices.len();
                (0..n).all(|i| {
                    let (y0, x0) = vertices[i];
                    let (y1, x1) = vertices[(i + 1) % n];
                    (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0) >= 0.0
                })
            }
        }
    }
}

/// Stripe texture parameters for one region.
struct Texture {
    base: [f64; 3],
    amplitude: f64,
    freq: f64,
    angle: f64,
    phase: f64,
}

impl Texture {
    fn random(rng: &mut impl Rng, base: [f64; 3], amplitude: f64) -> Self {
        Self {
            base,
            amplitude,
            freq: rng.random_range(0.6..1.6),
            angle: rng.random_range(0.0..PI),
            phase: rng.random_range(0.0..2.0 * PI),
        }
    }

    fn at(&self, y: f64, x: f64) -> [f64; 3] {
        let t = (self.freq * (x * self.angle.cos() + y * self.angle.sin()) + self.phase).sin();
        let d = self.amplitude * t;
        [self.base[0] + d, self.base[1] + d, self.base[2] + d]
    }
}

fn luminance(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn random_colour(rng: &mut impl Rng) -> [f64; 3] {
    [
        rng.random_range(0.15..0.85),
        rng.random_range(0.15..0.85),
        rng.random_range(0.15..0.85),
    ]
}

/// A colour whose luminance differs from `other` by at least `gap`.
fn contrasting_colour(rng: &mut impl Rng, other: [f64; 3], gap: f64) -> [f64; 3] {
    loop {
        let c = random_colour(rng);
        if (luminance(c) - luminance(other)).abs() >= gap {
            return c;
        }
    }
}

fn random_shape(rng: &mut impl Rng, h: f64, w: f64) -> Shape {
    let side = h.min(w);
    let cy = rng.random_range(0.15 * h..0.85 * h);
    let cx = rng.random_range(0.15 * w..0.85 * w);
    if rng.random_bool(0.5) {
        Shape::Ellipse {
            cy,
            cx,
            ry: rng.random_range(0.12 * side..0.3 * side),
            rx: rng.random_range(0.12 * side..0.3 * side),
            angle: rng.random_range(0.0..PI),
        }
    } else {
        let n = rng.random_range(3..=6);
        let radius = rng.random_range(0.15 * side..0.32 * side);
        let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        angles.sort_by(f64::total_cmp);
        // counter-clockwise in (x, y) image coordinates
        let vertices = angles
            .iter()
            .map(|a| (cy + radius * a.sin(), cx + radius * a.cos()))
            .collect();
        Shape::Polygon { vertices }
    }
}

/// One synthetic image and its single-labeler boundary map.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub image: RasterImage,
    pub boundary: RasterImage,
}

/// Generate a scene. Boundary pixels are those whose region label differs
/// from the right or lower neighbour, thinned to 1-pixel-wide curves.
pub fn generate_scene(config: &SynthConfig, rng: &mut impl Rng) -> Result<SyntheticScene> {
    let (h, w) = (config.height, config.width);
    if h < 16 || w < 16 || config.min_shapes > config.max_shapes {
        return Err(Error::invalid(
            "synthetic scenes need at least 16x16 pixels",
        ));
    }
    let bg_colour = random_colour(rng);
    let mut textures = vec![Texture::random(rng, bg_colour, config.texture_amplitude)];
    let n_shapes = rng.random_range(config.min_shapes..=config.max_shapes);
    let mut shapes = Vec::with_capacity(n_shapes);
    for _ in 0..n_shapes {
        shapes.push(random_shape(rng, h as f64, w as f64));
        let fill = contrasting_colour(rng, bg_colour, 0.25);
        textures.push(Texture::random(rng, fill, 0.3 * config.texture_amplitude));
    }
    let mut labels = vec![0usize; h * w];
    for r in 0..h {
        for c in 0..w {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            for (k, s) in shapes.iter().enumerate() {
                if s.contains(y, x) {
                    labels[r * w + c] = k + 1;
                }
            }
        }
    }
    let amp = config.noise * 3f64.sqrt();
    let mut data = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            let px = textures[labels[r * w + c]].at(r as f64, c as f64);
            for v in px {
                let n = if amp > 0.0 {
                    rng.random_range(-amp..amp)
                } else {
                    0.0
                };
                data.push((v + n).clamp(0.0, 1.0));
            }
        }
    }
    let raw = BinaryMap::from_fn(h, w, |r, c| {
        let l = labels[r * w + c];
        let right = c + 1 < w && labels[r * w + c + 1] != l;
        let down = r + 1 < h && labels[(r + 1) * w + c] != l;
        right || down
    });
    // thinned so the benchmark sees the ground truth unchanged
    let boundary = thin(&raw).to_raster();
    Ok(SyntheticScene {
        image: RasterImage::new(h, w, 3, data)?,
        boundary,
    })
}

/// Write `count` scenes to `<root>/<split>/<id>.ppm` with ground truth in
/// `<root>/<split>/<id>.gt/0.pgm`. Ids are zero-padded indices.
pub fn write_corpus(
    root: impl AsRef<Path>,
    split: &str,
    count: usize,
    seed: u64,
    config: &SynthConfig,
) -> Result<()> {
    let dir = root.as_ref().join(split);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let scene = generate_scene(config, &mut rng)?;
        let id = format!("{i:05}");
        write_image(dir.join(format!("{id}.ppm")), &scene.image)?;
        let gt_dir = dir.join(format!("{id}.gt"));
        fs::create_dir_all(&gt_dir).map_err(|e| Error::io(&gt_dir, e))?;
        write_image(gt_dir.join("0.pgm"), &scene.boundary)?;
    }
    Ok(())
}
