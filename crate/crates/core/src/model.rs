//! Dual-encoder fusion network.
//!
//! Each stream has its own encoder: at level `i` a `k × k` convolution to
//! `base·2^i` channels, a leaky ReLU, then 2×2 average pooling. Per level the
//! two streams are concatenated and mixed back to `base·2^i` channels by a
//! 1×1 convolution. The decoder starts from the deepest fused feature and at
//! every level upsamples with a stride-2 transposed convolution, concatenates
//! the next shallower fused feature and convolves. The last block upsamples to
//! full resolution and maps to RGB through `tanh`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Shape, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub base_channels: usize,
    pub levels: usize,
    pub kernel_size: usize,
    pub in_channels_visible: usize,
    pub in_channels_ir: usize,
    pub out_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            base_channels: 16,
            levels: 5,
            kernel_size: 3,
            in_channels_visible: 3,
            in_channels_ir: 1,
            out_channels: 3,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::config("network needs at least one level"));
        }
        if self.levels > 16 {
            return Err(Error::config(format!("{} levels is too deep", self.levels)));
        }
        if self.base_channels < 1
            || self.in_channels_visible < 1
            || self.in_channels_ir < 1
            || self.out_channels < 1
        {
            return Err(Error::config("channel counts must be positive"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::config(format!(
                "kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        Ok(())
    }

    /// Spatial sizes must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.levels
    }

    /// Channels of the level-`i` features.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    fn in_channels(&self, stream: Stream) -> usize {
        match stream {
            Stream::Visible => self.in_channels_visible,
            Stream::Infrared => self.in_channels_ir,
        }
    }

    /// Recovers the configuration from parameter names and shapes.
    pub fn infer(params: &[Parameter]) -> Result<Self> {
        let find = |name: &str| {
            params
                .iter()
                .find(|p| p.name == name)
                .map(|p| p.value.shape())
                .ok_or_else(|| Error::config(format!("missing parameter {name}")))
        };
        let levels = (0..)
            .take_while(|i| params.iter().any(|p| p.name == format!("enc_vis.{i}.weight")))
            .count();
        let vis = find("enc_vis.0.weight")?;
        let ir = find("enc_ir.0.weight")?;
        let out = find("dec.0.conv.weight")?;
        let cfg = NetConfig {
            base_channels: vis.n(),
            levels,
            kernel_size: vis.h(),
            in_channels_visible: vis.c(),
            in_channels_ir: ir.c(),
            out_channels: out.n(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every parameter name and shape, in storage order.
    pub fn layout(&self) -> Vec<(String, Shape)> {
        let k = self.kernel_size;
        let bias = |c| Shape::new(c, 1, 1, 1);
        let mut out = Vec::with_capacity(10 * self.levels);
        for stream in [Stream::Visible, Stream::Infrared] {
            for i in 0..self.levels {
                let cin = if i == 0 {
                    self.in_channels(stream)
                } else {
                    self.channels(i - 1)
                };
                let c = self.channels(i);
                out.push((format!("{}.{i}.weight", stream.prefix()), Shape::new(c, cin, k, k)));
                out.push((format!("{}.{i}.bias", stream.prefix()), bias(c)));
            }
        }
        for i in 0..self.levels {
            let c = self.channels(i);
            out.push((format!("fuse.{i}.weight"), Shape::new(c, 2 * c, 1, 1)));
            out.push((format!("fuse.{i}.bias"), bias(c)));
        }
        for j in 0..self.levels {
            let c = self.channels(j);
            let (up, conv) = if j == 0 {
                (
                    Shape::new(c, c, 2, 2),
                    Shape::new(self.out_channels, c, k, k),
                )
            } else {
                let below = self.channels(j - 1);
                (
                    Shape::new(c, below, 2, 2),
                    Shape::new(below, 2 * below, k, k),
                )
            };
            out.push((format!("dec.{j}.up.weight"), up));
            out.push((format!("dec.{j}.up.bias"), bias(up.c())));
            out.push((format!("dec.{j}.conv.weight"), conv));
            out.push((format!("dec.{j}.conv.bias"), bias(conv.n())));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(|(_, s)| s.numel()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Visible,
    Infrared,
}

impl Stream {
    fn prefix(self) -> &'static str {
        match self {
            Stream::Visible => "enc_vis",
            Stream::Infrared => "enc_ir",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

/// Positions of each layer's parameters in storage order.
#[derive(Clone, Copy, Debug)]
struct Index {
    levels: usize,
}

impl Index {
    fn encoder(self, stream: Stream, level: usize) -> usize {
        let base = match stream {
            Stream::Visible => 0,
            Stream::Infrared => 2 * self.levels,
        };
        base + 2 * level
    }

    fn fuse(self, level: usize) -> usize {
        4 * self.levels + 2 * level
    }

    fn decoder(self, level: usize) -> usize {
        6 * self.levels + 4 * level
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionNet {
    config: NetConfig,
    params: Vec<Parameter>,
}

/// Glorot-uniform weights, zero biases, drawn in storage order.
pub fn build_network(config: NetConfig, seed: u64) -> Result<FusionNet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = config
        .layout()
        .into_iter()
        .map(|(name, shape)| {
            let value = if name.ends_with(".bias") {
                Tensor::zeros(shape)
            } else {
                let receptive = shape.h() * shape.w();
                let fans = (shape.n() + shape.c()) * receptive;
                let bound = (6.0 / fans as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                Tensor::from_fn(shape, |_, _, _, _| dist.sample(&mut rng))
            };
            Parameter { name, value }
        })
        .collect();
    Ok(FusionNet { config, params })
}

impl FusionNet {
    /// Assembles a network from named tensors, in any order.
    pub fn from_parameters(params: Vec<Parameter>) -> Result<Self> {
        let config = NetConfig::infer(&params)?;
        let layout = config.layout();
        if params.len() != layout.len() {
            return Err(Error::config(format!(
                "expected {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        let mut by_name: std::collections::HashMap<String, Tensor> =
            params.into_iter().map(|p| (p.name, p.value)).collect();
        let params = layout
            .into_iter()
            .map(|(name, shape)| {
                let value = by_name
                    .remove(&name)
                    .ok_or_else(|| Error::config(format!("missing parameter {name}")))?;
                if value.shape() != shape {
                    return Err(Error::shape(format!(
                        "parameter {name} has shape {}, expected {shape}",
                        value.shape()
                    )));
                }
                Ok(Parameter { name, value })
            })
            .collect::<Result<_>>()?;
        Ok(FusionNet { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.value)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter in `g`, as trainable leaves or as constants.
    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>, trainable: bool) -> BoundNet {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let v = p.value.cast::<T>();
                if trainable {
                    g.leaf(v)
                } else {
                    g.input(v)
                }
            })
            .collect();
        BoundNet {
            config: self.config,
            vars,
        }
    }

    /// Inference at precision `T`; inputs must already be size-conforming.
    pub fn forward_as<T: Scalar>(&self, vis: &Tensor<T>, ir: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::<T>::new();
        let net = self.bind(&mut g, false);
        let v = g.input(vis.clone());
        let r = g.input(ir.clone());
        let out = net.forward(&mut g, v, r)?;
        Ok(g.value(out).clone())
    }

    pub fn forward(&self, vis: &Tensor, ir: &Tensor) -> Result<Tensor> {
        self.forward_as(vis, ir)
    }

    pub fn encode(&self, stream: Stream, img: &Tensor) -> Result<Vec<Tensor>> {
        let mut g = Graph::<f64>::new();
        let net = self.bind(&mut g, false);
        let x = g.input(img.clone());
        let feats = net.encode(&mut g, stream, x)?;
        Ok(feats.into_iter().map(|v| g.value(v).clone()).collect())
    }

    pub fn fuse_features(&self, vis: &[Tensor], ir: &[Tensor]) -> Result<Vec<Tensor>> {
        let mut g = Graph::<f64>::new();
        let net = self.bind(&mut g, false);
        let v: Vec<Var> = vis.iter().map(|t| g.input(t.clone())).collect();
        let r: Vec<Var> = ir.iter().map(|t| g.input(t.clone())).collect();
        let fused = net.fuse_features(&mut g, &v, &r)?;
        Ok(fused.into_iter().map(|x| g.value(x).clone()).collect())
    }

    pub fn decode(&self, fused: &[Tensor]) -> Result<Tensor> {
        let mut g = Graph::<f64>::new();
        let net = self.bind(&mut g, false);
        let f: Vec<Var> = fused.iter().map(|t| g.input(t.clone())).collect();
        let out = net.decode(&mut g, &f)?;
        Ok(g.value(out).clone())
    }
}

/// A network whose parameters live in a particular graph.
#[derive(Clone, Debug)]
pub struct BoundNet {
    config: NetConfig,
    vars: Vec<Var>,
}

impl BoundNet {
    /// Wraps parameter nodes already recorded in `g`, in storage order.
    pub fn new<T: Scalar>(g: &Graph<T>, config: NetConfig, vars: Vec<Var>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != vars.len() {
            return Err(Error::shape(format!(
                "expected {} parameter nodes, got {}",
                layout.len(),
                vars.len()
            )));
        }
        for ((name, shape), &v) in layout.iter().zip(&vars) {
            if g.shape(v) != *shape {
                return Err(Error::shape(format!(
                    "node for {name} has shape {}, expected {shape}",
                    g.shape(v)
                )));
            }
        }
        Ok(BoundNet { config, vars })
    }

    /// Parameter nodes in storage order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn index(&self) -> Index {
        Index {
            levels: self.config.levels,
        }
    }

    fn conv<T: Scalar>(&self, g: &mut Graph<T>, x: Var, at: usize, pad: usize) -> Result<Var> {
        g.conv2d(x, self.vars[at], Some(self.vars[at + 1]), 1, pad)
    }

    pub fn encode<T: Scalar>(&self, g: &mut Graph<T>, stream: Stream, img: Var) -> Result<Vec<Var>> {
        let s = g.shape(img);
        let expect = self.config.in_channels(stream);
        if s.c() != expect {
            return Err(Error::shape(format!(
                "{stream:?} encoder takes {expect} channels, got {s}"
            )));
        }
        let d = self.config.divisor();
        if !s.h().is_multiple_of(d) || !s.w().is_multiple_of(d) || s.h() == 0 || s.w() == 0 {
            return Err(Error::shape(format!(
                "input {s} is not a multiple of {d} in height and width; pad it first"
            )));
        }
        let pad = self.config.kernel_size / 2;
        let mut x = img;
        let mut feats = Vec::with_capacity(self.config.levels);
        for i in 0..self.config.levels {
            let y = self.conv(g, x, self.index().encoder(stream, i), pad)?;
            let y = g.leaky_relu(y, LEAKY_SLOPE);
            x = g.avgpool2d(y, 2, 2)?;
            feats.push(x);
        }
        Ok(feats)
    }

    pub fn fuse_features<T: Scalar>(&self, g: &mut Graph<T>, vis: &[Var], ir: &[Var]) -> Result<Vec<Var>> {
        if vis.len() != self.config.levels || ir.len() != self.config.levels {
            return Err(Error::shape(format!(
                "expected {} feature levels per stream, got {} and {}",
                self.config.levels,
                vis.len(),
                ir.len()
            )));
        }
        vis.iter()
            .zip(ir)
            .enumerate()
            .map(|(i, (&v, &r))| {
                if g.shape(v) != g.shape(r) {
                    return Err(Error::shape(format!(
                        "level {i} features differ: {} vs {}",
                        g.shape(v),
                        g.shape(r)
                    )));
                }
                let both = g.concat_channels(v, r)?;
                self.conv(g, both, self.index().fuse(i), 0)
            })
            .collect()
    }

    pub fn decode<T: Scalar>(&self, g: &mut Graph<T>, fused: &[Var]) -> Result<Var> {
        let levels = self.config.levels;
        if fused.len() != levels {
            return Err(Error::shape(format!(
                "decoder needs {levels} fused levels, got {}",
                fused.len()
            )));
        }
        let pad = self.config.kernel_size / 2;
        let mut x = fused[levels - 1];
        for j in (0..levels).rev() {
            let at = self.index().decoder(j);
            let up = g.conv_transpose2d(x, self.vars[at], Some(self.vars[at + 1]), 2, 0)?;
            let up = g.leaky_relu(up, LEAKY_SLOPE);
            if j == 0 {
                let y = self.conv(g, up, at + 2, pad)?;
                return Ok(g.tanh(y));
            }
            let joined = g.concat_channels(up, fused[j - 1])?;
            let y = self.conv(g, joined, at + 2, pad)?;
            x = g.leaky_relu(y, LEAKY_SLOPE);
        }
        unreachable!("levels is at least one")
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, vis: Var, ir: Var) -> Result<Var> {
        let (sv, si) = (g.shape(vis), g.shape(ir));
        if (sv.n(), sv.h(), sv.w()) != (si.n(), si.h(), si.w()) {
            return Err(Error::shape(format!(
                "visible {sv} and infrared {si} are not aligned"
            )));
        }
        let fv = self.encode(g, Stream::Visible, vis)?;
        let fi = self.encode(g, Stream::Infrared, ir)?;
        let fused = self.fuse_features(g, &fv, &fi)?;
        self.decode(g, &fused)
    }
}

/// Original spatial size of a padded image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PadRecord {
    pub height: usize,
    pub width: usize,
}

impl PadRecord {
    pub fn crop<T: Scalar>(&self, t: &Tensor<T>) -> Result<Tensor<T>> {
        t.crop(self.height, self.width)
    }
}

/// Zero-pads right and bottom up to the next multiple of `m`.
pub fn pad_to_multiple<T: Scalar>(img: &Tensor<T>, m: usize) -> (Tensor<T>, PadRecord) {
    let s = img.shape();
    let m = m.max(1);
    let record = PadRecord {
        height: s.h(),
        width: s.w(),
    };
    let (h, w) = (s.h().div_ceil(m) * m, s.w().div_ceil(m) * m);
    let padded = img
        .pad_bottom_right(h, w)
        .expect("target is never smaller than the source");
    (padded, record)
}
