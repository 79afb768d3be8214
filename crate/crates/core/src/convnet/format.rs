//! `CFM1` model files.
//!
//! Layout (all little-endian): magic `CFM1`, u32 version, then the
//! architecture block (u32 input channels, height, width, u32 crop-scale
//! bitmask with bit i set for crop size index i, u32 layer count and per layer
//! four u32s: kind code and up to three dimensions), then every parameter as
//! f32, layer by layer, weights before biases, row-major.

use std::fs;
use std::path::Path;

use super::arch::{Architecture, LayerSpec, Shape};
use super::model::{NetworkModel, Params};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CFM1";
pub const MODEL_VERSION: u32 = 1;

pub fn encode_model(model: &NetworkModel) -> Vec<u8> {
    let arch = model.architecture();
    let mut words: Vec<u32> = vec![
        MODEL_VERSION,
        arch.input.channels as u32,
        arch.input.height as u32,
        arch.input.width as u32,
        arch.scales.iter().fold(0u32, |m, &s| m | (1 << s)),
        arch.layers.len() as u32,
    ];
    for layer in &arch.layers {
        let dims = match *layer {
            LayerSpec::Conv {
                filters,
                kernel,
                in_channels,
            } => [filters, kernel, in_channels],
            LayerSpec::Dense {
                in_features,
                out_features,
            } => [in_features, out_features, 0],
            _ => [0, 0, 0],
        };
        words.push(layer.code());
        words.extend(dims.iter().map(|&d| d as u32));
    }
    let mut out = Vec::with_capacity(4 + 4 * words.len() + 4 * model.params().len());
    out.extend_from_slice(MAGIC);
    for w in words {
        out.extend_from_slice(&w.to_le_bytes());
    }
    for &p in model.params().iter() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::format("truncated model file"))?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<NetworkModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format("bad model magic"));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION as usize {
        return Err(Error::format(format!(
            "unsupported model version {version}"
        )));
    }
    let input = Shape::new(r.u32()?, r.u32()?, r.u32()?);
    let mask = r.u32()?;
    let scales: Vec<usize> = (0..32).filter(|b| mask & (1 << b) != 0).collect();
    let n_layers = r.u32()?;
    if n_layers > 1024 {
        return Err(Error::format("implausible layer count"));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let (code, a, b, c) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        layers.push(match code {
            1 => LayerSpec::Conv {
                filters: a,
                kernel: b,
                in_channels: c,
            },
            2 => LayerSpec::MaxPool,
            3 => LayerSpec::Relu,
            4 => LayerSpec::Dense {
                in_features: a,
                out_features: b,
            },
            5 => LayerSpec::Sigmoid,
            other => return Err(Error::format(format!("unknown layer kind {other}"))),
        });
    }
    let arch = Architecture::new(input, scales, layers)
        .map_err(|e| Error::format(format!("invalid architecture block: {e}")))?;
    let mut params = Params::zeros(&arch);
    for p in params.iter_mut() {
        *p = r.f32()?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format("trailing bytes after model parameters"));
    }
    NetworkModel::from_params(arch, params).map_err(|e| Error::format(e.to_string()))
}

pub fn save_model(model: &NetworkModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stored_model(recipe: Option<&str>) -> NetworkModel {
        let arch = match recipe {
            Some(r) => Architecture::parse_recipe(r).unwrap(),
            None => Architecture::default_two_layer(),
        };
        let mut m = NetworkModel::init(arch, 0.1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        m.round_to_storage();
        m
    }

    #[test]
    fn round_trip_is_exact_for_stored_precision() {
        for recipe in [
            None,
            Some("scales 32\nconv 4 3\nrelu\nmaxpool\ndense 1\nsigmoid\n"),
        ] {
            let m = stored_model(recipe);
            let bytes = encode_model(&m);
            assert_eq!(
                bytes.len(),
                4 + 4 * (6 + 4 * m.architecture().layers.len()) + 4 * m.params().len()
            );
            assert_eq!(decode_model(&bytes).unwrap(), m);
        }
    }

    #[test]
    fn save_and_load_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cfm");
        let m = stored_model(None);
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode_model(&stored_model(None));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_model(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_model(&bad), Err(Error::Format(_))));
        assert!(matches!(
            decode_model(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_model(&long), Err(Error::Format(_))));
        // first conv filter count changed: parameter block no longer fits
        let mut bad = bytes;
        bad[4 * 8] = 21;
        assert!(matches!(decode_model(&bad), Err(Error::Format(_))));
    }
}
