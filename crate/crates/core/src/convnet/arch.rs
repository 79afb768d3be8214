use std::fmt;

use crate::dataset::{CROP_SIZES, PATCH, STACK_CHANNELS};
use crate::error::{Error, Result};

/// Activation tensor shape, channel-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Valid (unpadded) stride-1 convolution with square kernels.
    Conv {
        filters: usize,
        kernel: usize,
        in_channels: usize,
    },
    /// 2×2 window, stride 2; odd trailing rows/columns are dropped.
    MaxPool,
    Relu,
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Sigmoid,
}

impl LayerSpec {
    pub(crate) fn code(&self) -> u32 {
        match self {
            LayerSpec::Conv { .. } => 1,
            LayerSpec::MaxPool => 2,
            LayerSpec::Relu => 3,
            LayerSpec::Dense { .. } => 4,
            LayerSpec::Sigmoid => 5,
        }
    }

    /// (weight count, bias count)
    pub fn param_counts(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv {
                filters,
                kernel,
                in_channels,
            } => (filters * in_channels * kernel * kernel, filters),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => (in_features * out_features, out_features),
            _ => (0, 0),
        }
    }

    /// Fan-in of one output unit, for weight initialization.
    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                kernel,
                in_channels,
                ..
            } => in_channels * kernel * kernel,
            LayerSpec::Dense { in_features, .. } => in_features,
            _ => 0,
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        match *self {
            LayerSpec::Conv {
                filters,
                kernel,
                in_channels,
            } => {
                if input.channels != in_channels {
                    return Err(Error::invalid(format!(
                        "conv expects {in_channels} channels, got {input}"
                    )));
                }
                if kernel == 0 || kernel > input.height || kernel > input.width || filters == 0 {
                    return Err(Error::invalid(format!(
                        "conv {filters}x{kernel}x{kernel} does not fit {input}"
                    )));
                }
                Ok(Shape::new(
                    filters,
                    input.height - kernel + 1,
                    input.width - kernel + 1,
                ))
            }
            LayerSpec::MaxPool => {
                if input.height < 2 || input.width < 2 {
                    return Err(Error::invalid(format!("maxpool does not fit {input}")));
                }
                Ok(Shape::new(
                    input.channels,
                    input.height / 2,
                    input.width / 2,
                ))
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                if input.len() != in_features || out_features == 0 {
                    return Err(Error::invalid(format!(
                        "dense expects {in_features} inputs, got {input}"
                    )));
                }
                Ok(Shape::new(out_features, 1, 1))
            }
        }
    }
}

/// A layer stack together with its input shape and, for patch classifiers,
/// which of the 16/32/64 crops of a sample stack it consumes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input: Shape,
    /// Indices into [`CROP_SIZES`], ascending. Empty for non-patch networks.
    pub scales: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Validate the shape chain and the sigmoid-probability head.
    pub fn new(input: Shape, scales: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        let arch = Self {
            input,
            scales,
            layers,
        };
        arch.validate()?;
        Ok(arch)
    }

    fn validate(&self) -> Result<()> {
        if self.input.is_empty() {
            return Err(Error::invalid("empty network input"));
        }
        if !self.scales.is_empty() {
            let sorted = self.scales.windows(2).all(|w| w[0] < w[1]);
            if !sorted || self.scales.iter().any(|&s| s >= CROP_SIZES.len()) {
                return Err(Error::invalid("scales must be distinct crop indices"));
            }
            let expect = Shape::new(3 * self.scales.len(), PATCH, PATCH);
            if self.input != expect {
                return Err(Error::invalid(format!(
                    "a {}-scale patch network needs input {expect}, got {}",
                    self.scales.len(),
                    self.input
                )));
            }
        }
        let out = self.shapes()?.pop().unwrap_or(self.input);
        if out.len() != 1 || self.layers.last() != Some(&LayerSpec::Sigmoid) {
            return Err(Error::invalid(
                "network must end in a single sigmoid output",
            ));
        }
        Ok(())
    }

    /// Output shape of every layer in order.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shape = self.input;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer
                .output_shape(shape)
                .map_err(|e| Error::invalid(format!("layer {i}: {e}")))?;
            out.push(shape);
        }
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let (w, b) = l.param_counts();
                w + b
            })
            .sum()
    }

    /// Two conv/pool stages (20 and 50 filters, 5×5) and two dense layers
    /// over all three crop scales.
    pub fn default_two_layer() -> Self {
        Self::two_layer(ReluPlacement::PerConv, vec![0, 1, 2])
    }

    /// The default network with a chosen ReLU placement and crop-scale subset.
    pub fn two_layer(relu: ReluPlacement, scales: Vec<usize>) -> Self {
        let in_ch = 3 * scales.len();
        let mut layers = vec![LayerSpec::Conv {
            filters: 20,
            kernel: 5,
            in_channels: in_ch,
        }];
        if relu == ReluPlacement::PerConv {
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::MaxPool);
        layers.push(LayerSpec::Conv {
            filters: 50,
            kernel: 5,
            in_channels: 20,
        });
        match relu {
            ReluPlacement::PerConv => layers.extend([LayerSpec::Relu, LayerSpec::MaxPool]),
            ReluPlacement::Single => layers.extend([LayerSpec::MaxPool, LayerSpec::Relu]),
        }
        layers.push(LayerSpec::Dense {
            in_features: 50,
            out_features: 64,
        });
        if relu == ReluPlacement::PerConv {
            layers.push(LayerSpec::Relu);
        }
        layers.extend([
            LayerSpec::Dense {
                in_features: 64,
                out_features: 1,
            },
            LayerSpec::Sigmoid,
        ]);
        Self::new(Shape::new(in_ch, PATCH, PATCH), scales, layers)
            .expect("built-in architecture is valid")
    }

    /// Parse a layer recipe: one layer per line (`conv <filters> <kernel>`,
    /// `maxpool`, `relu`, `dense <out>`, `sigmoid`), an optional
    /// `scales <sizes..>` line choosing crops among 16/32/64, `#` comments.
    /// Input channels and dense fan-in are inferred from the chain.
    pub fn parse_recipe(text: &str) -> Result<Self> {
        let mut scales = vec![0, 1, 2];
        let mut steps: Vec<(usize, Vec<&str>)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            if words[0] == "scales" {
                scales = words[1..]
                    .iter()
                    .map(|w| {
                        let size: usize = w.parse().map_err(|_| {
                            Error::invalid(format!("line {}: bad scale '{w}'", lineno + 1))
                        })?;
                        CROP_SIZES.iter().position(|&s| s == size).ok_or_else(|| {
                            Error::invalid(format!(
                                "line {}: scale {size} is not one of 16, 32, 64",
                                lineno + 1
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
                scales.sort_unstable();
                scales.dedup();
            } else {
                steps.push((lineno + 1, words));
            }
        }
        let input = Shape::new(3 * scales.len(), PATCH, PATCH);
        let mut shape = input;
        let mut layers = Vec::new();
        for (lineno, words) in steps {
            let num = |i: usize| -> Result<usize> {
                words
                    .get(i)
                    .and_then(|w| w.parse().ok())
                    .ok_or_else(|| Error::invalid(format!("line {lineno}: expected a number")))
            };
            let layer = match (words[0], words.len()) {
                ("conv", 3) => LayerSpec::Conv {
                    filters: num(1)?,
                    kernel: num(2)?,
                    in_channels: shape.channels,
                },
                ("maxpool", 1) => LayerSpec::MaxPool,
                ("relu", 1) => LayerSpec::Relu,
                ("sigmoid", 1) => LayerSpec::Sigmoid,
                ("dense", 2) => LayerSpec::Dense {
                    in_features: shape.len(),
                    out_features: num(1)?,
                },
                _ => {
                    return Err(Error::invalid(format!(
                        "line {lineno}: unrecognized layer '{}'",
                        words.join(" ")
                    )))
                }
            };
            shape = layer
                .output_shape(shape)
                .map_err(|e| Error::invalid(format!("line {lineno}: {e}")))?;
            layers.push(layer);
        }
        Self::new(input, scales, layers)
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Self::default_two_layer()
    }
}

/// Where ReLUs sit in the default network: after each convolution and the
/// hidden dense layer, or a single one between the conv/pool stack and the
/// two dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReluPlacement {
    PerConv,
    Single,
}

/// Stack channel indices consumed by a patch network with these scales.
pub(crate) fn stack_channels(scales: &[usize]) -> Vec<usize> {
    scales.iter().flat_map(|&s| 3 * s..3 * s + 3).collect()
}

pub(crate) const FULL_STACK_CHANNELS: usize = STACK_CHANNELS;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_chain_ends_at_one_by_one() {
        let arch = Architecture::default_two_layer();
        let shapes = arch.shapes().unwrap();
        let spatial: Vec<(usize, usize, usize)> = shapes
            .iter()
            .map(|s| (s.height, s.width, s.channels))
            .collect();
        assert_eq!(
            spatial,
            vec![
                (12, 12, 20),
                (12, 12, 20),
                (6, 6, 20),
                (2, 2, 50),
                (2, 2, 50),
                (1, 1, 50),
                (1, 1, 64),
                (1, 1, 64),
                (1, 1, 1),
                (1, 1, 1),
            ]
        );
        assert_eq!(arch.input, Shape::new(9, 16, 16));
    }

    #[test]
    fn default_filter_counts_and_parameter_total() {
        let arch = Architecture::default_two_layer();
        let filters: Vec<usize> = arch
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { filters, .. } => Some(*filters),
                _ => None,
            })
            .collect();
        assert_eq!(filters, vec![20, 50]);
        assert_eq!(
            arch.param_count(),
            9 * 25 * 20 + 20 + 20 * 25 * 50 + 50 + 50 * 64 + 64 + 64 + 1
        );
        assert_eq!(arch.param_count(), 32_899);
    }

    #[test]
    fn recipe_reproduces_default() {
        let text = "# default\nscales 16 32 64\nconv 20 5\nrelu\nmaxpool\nconv 50 5\nrelu\nmaxpool\ndense 64\nrelu\ndense 1\nsigmoid\n";
        assert_eq!(
            Architecture::parse_recipe(text).unwrap(),
            Architecture::default_two_layer()
        );
    }

    #[test]
    fn recipe_three_layer_variant() {
        let text = "conv 30 3\nrelu\nmaxpool\nconv 60 3\nrelu\nconv 60 3\nrelu\nmaxpool\ndense 64\nrelu\ndense 1\nsigmoid";
        let arch = Architecture::parse_recipe(text).unwrap();
        let last_pool = arch.shapes().unwrap()[7];
        assert_eq!(last_pool, Shape::new(60, 1, 1));
    }

    #[test]
    fn single_scale_recipe_narrows_input() {
        let arch = Architecture::parse_recipe(
            "scales 32\nconv 20 5\nrelu\nmaxpool\nconv 50 5\nrelu\nmaxpool\ndense 64\nrelu\ndense 1\nsigmoid",
        )
        .unwrap();
        assert_eq!(arch.input, Shape::new(3, 16, 16));
        assert_eq!(arch.scales, vec![1]);
        assert_eq!(stack_channels(&arch.scales), vec![3, 4, 5]);
    }

    #[test]
    fn broken_chains_are_rejected() {
        assert!(Architecture::parse_recipe("conv 20 5\nmaxpool\ndense 1").is_err());
        assert!(Architecture::parse_recipe("conv 20 17\nsigmoid").is_err());
        assert!(Architecture::parse_recipe("dense 2\nsigmoid").is_err());
        assert!(Architecture::parse_recipe("pool\n").is_err());
        assert!(Architecture::parse_recipe("scales 48\ndense 1\nsigmoid").is_err());
    }
}
