use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Valid (unpadded) convolution with square kernels.
    Conv2d { filters: usize, kernel: usize, stride: usize },
    Relu,
    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    MaxPool2,
    Flatten,
    Dense { units: usize },
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Map { channels: usize, height: usize, width: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Map { channels, height, width } => channels * height * width,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Layer stack from an H×H×1 input to one logit per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    input_size: usize,
    layers: Vec<LayerSpec>,
    shapes: Vec<Shape>,
}

impl ArchSpec {
    pub fn new(input_size: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_size == 0 {
            return Err(Error::Config("input size must be positive".into()));
        }
        let mut shape = Shape::Map { channels: 1, height: input_size, width: input_size };
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        shapes.push(shape);
        for (i, layer) in layers.iter().enumerate() {
            shape = next_shape(shape, layer).map_err(|m| Error::Config(format!("layer {i}: {m}")))?;
            shapes.push(shape);
        }
        match (layers.last(), shape) {
            (Some(LayerSpec::Dense { .. }), Shape::Flat(n)) if n >= 1 => {}
            _ => return Err(Error::Config("the last layer must be dense".into())),
        }
        Ok(Self { input_size, layers, shapes })
    }

    /// The default desk-scale classifier for `classes` devices.
    pub fn default_for(input_size: usize, classes: usize) -> Result<Self> {
        use LayerSpec::*;
        Self::new(
            input_size,
            alloc::vec![
                Conv2d { filters: 8, kernel: 3, stride: 1 },
                Relu,
                MaxPool2,
                Conv2d { filters: 16, kernel: 3, stride: 1 },
                Relu,
                MaxPool2,
                Flatten,
                Dense { units: 64 },
                Relu,
                Dense { units: classes },
            ],
        )
    }

    /// Parses a comma-separated layer list such as
    /// `conv2d(8,3,1),relu,maxpool,flatten,dense(6)`.
    pub fn parse(input_size: usize, text: &str) -> Result<Self> {
        let mut layers = Vec::new();
        let mut rest = text.trim();
        while !rest.is_empty() {
            let (token, tail) = split_layer_token(rest);
            layers.push(parse_layer(token.trim())?);
            rest = tail.trim_start_matches(',').trim();
        }
        Self::new(input_size, layers)
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Input shape of layer `i`; index `layers().len()` is the output shape.
    pub fn shape(&self, i: usize) -> Shape {
        self.shapes[i]
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().map_or(0, Shape::len)
    }

    /// Index of the last convolution layer.
    pub fn last_conv(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| matches!(l, LayerSpec::Conv2d { .. }))
    }

    /// Weight and bias lengths of layer `i`, zero for parameter-free layers.
    pub fn param_lens(&self, i: usize) -> (usize, usize) {
        match (self.layers[i], self.shapes[i]) {
            (LayerSpec::Conv2d { filters, kernel, .. }, Shape::Map { channels, .. }) => {
                (filters * channels * kernel * kernel, filters)
            }
            (LayerSpec::Dense { units }, Shape::Flat(n)) => (units * n, units),
            _ => (0, 0),
        }
    }

    pub fn param_count(&self) -> usize {
        (0..self.layers.len()).map(|i| self.param_lens(i)).map(|(w, b)| w + b).sum()
    }

    /// Compact binary form: input size, layer count, then a tag byte and three
    /// u32 arguments per layer, all little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 13 * self.layers.len());
        out.extend_from_slice(&(self.input_size as u32).to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            let (tag, args) = match *layer {
                LayerSpec::Conv2d { filters, kernel, stride } => (1u8, [filters, kernel, stride]),
                LayerSpec::Relu => (2, [0, 0, 0]),
                LayerSpec::MaxPool2 => (3, [0, 0, 0]),
                LayerSpec::Flatten => (4, [0, 0, 0]),
                LayerSpec::Dense { units } => (5, [units, 0, 0]),
            };
            out.push(tag);
            for a in args {
                out.extend_from_slice(&(a as u32).to_le_bytes());
            }
        }
        out
    }

    /// Inverse of [`encode`](Self::encode); returns the spec and bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        let bad = || Error::Config("truncated architecture encoding".into());
        let u32_at = |off: usize| -> Result<usize> {
            let b = bytes.get(off..off + 4).ok_or_else(bad)?;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
        };
        let input_size = u32_at(0)?;
        let count = u32_at(4)?;
        let mut off = 8;
        let mut layers = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let tag = *bytes.get(off).ok_or_else(bad)?;
            let a = [u32_at(off + 1)?, u32_at(off + 5)?, u32_at(off + 9)?];
            off += 13;
            layers.push(match tag {
                1 => LayerSpec::Conv2d { filters: a[0], kernel: a[1], stride: a[2] },
                2 => LayerSpec::Relu,
                3 => LayerSpec::MaxPool2,
                4 => LayerSpec::Flatten,
                5 => LayerSpec::Dense { units: a[0] },
                t => return Err(Error::Config(format!("unknown layer tag {t}"))),
            });
        }
        Ok((Self::new(input_size, layers)?, off))
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            match layer {
                LayerSpec::Conv2d { filters, kernel, stride } => write!(f, "conv2d({filters},{kernel},{stride})")?,
                LayerSpec::Relu => f.write_str("relu")?,
                LayerSpec::MaxPool2 => f.write_str("maxpool")?,
                LayerSpec::Flatten => f.write_str("flatten")?,
                LayerSpec::Dense { units } => write!(f, "dense({units})")?,
            }
        }
        Ok(())
    }
}

fn next_shape(shape: Shape, layer: &LayerSpec) -> core::result::Result<Shape, String> {
    match (*layer, shape) {
        (LayerSpec::Conv2d { filters, kernel, stride }, Shape::Map { height, width, .. }) => {
            if filters == 0 || kernel == 0 || stride == 0 {
                return Err("conv2d arguments must be positive".into());
            }
            if kernel > height || kernel > width {
                return Err(format!("kernel {kernel} exceeds {height}x{width} input"));
            }
            Ok(Shape::Map {
                channels: filters,
                height: (height - kernel) / stride + 1,
                width: (width - kernel) / stride + 1,
            })
        }
        (LayerSpec::MaxPool2, Shape::Map { channels, height, width }) => {
            if height < 2 || width < 2 {
                return Err("maxpool needs at least 2x2 input".into());
            }
            Ok(Shape::Map { channels, height: height / 2, width: width / 2 })
        }
        (LayerSpec::Relu, s) => Ok(s),
        (LayerSpec::Flatten, s) => Ok(Shape::Flat(s.len())),
        (LayerSpec::Dense { units }, Shape::Flat(_)) => {
            if units == 0 {
                return Err("dense needs at least one unit".into());
            }
            Ok(Shape::Flat(units))
        }
        (LayerSpec::Dense { .. }, Shape::Map { .. }) => Err("dense requires a flatten first".into()),
        (_, Shape::Flat(_)) => Err("spatial layer after flatten".into()),
    }
}

fn split_layer_token(s: &str) -> (&str, &str) {
    let mut depth = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => return (&s[..i], &s[i..]),
            _ => {}
        }
    }
    (s, "")
}

fn parse_layer(token: &str) -> Result<LayerSpec> {
    let bad = || Error::Config(format!("cannot parse layer `{token}`"));
    let (name, args) = match token.find('(') {
        Some(open) => {
            let inner = token[open + 1..].strip_suffix(')').ok_or_else(bad)?;
            let args = inner
                .split(',')
                .map(|a| a.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            (&token[..open], args)
        }
        None => (token, Vec::new()),
    };
    match (name.trim().to_ascii_lowercase().as_str(), args.as_slice()) {
        ("conv2d", [f, k]) => Ok(LayerSpec::Conv2d { filters: *f, kernel: *k, stride: 1 }),
        ("conv2d", [f, k, s]) => Ok(LayerSpec::Conv2d { filters: *f, kernel: *k, stride: *s }),
        ("relu", []) => Ok(LayerSpec::Relu),
        ("maxpool", []) => Ok(LayerSpec::MaxPool2),
        ("flatten", []) => Ok(LayerSpec::Flatten),
        ("dense", [u]) => Ok(LayerSpec::Dense { units: *u }),
        _ => Err(bad()),
    }
}
