//! Model configuration and the block/step layout builder.

use std::fmt;
use std::str::FromStr;

use super::layers::{Coupling, CouplingKind, FlowLayer, InvConv1x1, ScaleParam};
use super::{ExampleShape, FlowModel};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::tensor::{RngState, SquareMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    NvpExp,
    NvpSigmoid,
    Cv,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::NvpExp => "nvp-exp",
            Variant::NvpSigmoid => "nvp-sigmoid",
            Variant::Cv => "cv",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nvp-exp" => Ok(Variant::NvpExp),
            "nvp-sigmoid" => Ok(Variant::NvpSigmoid),
            "cv" => Ok(Variant::Cv),
            _ => Err(Error::InvalidConfig(format!("unknown variant {s:?}"))),
        }
    }
}

/// Layer placed after every coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mixer {
    Conv1x1,
    Reverse,
}

impl fmt::Display for Mixer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mixer::Conv1x1 => "conv1x1",
            Mixer::Reverse => "reverse",
        })
    }
}

impl FromStr for Mixer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv1x1" => Ok(Mixer::Conv1x1),
            "reverse" => Ok(Mixer::Reverse),
            _ => Err(Error::InvalidConfig(format!("unknown mixer {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelInit {
    /// Random orthogonal matrix with determinant +1.
    Rotation,
    Identity,
}

impl fmt::Display for KernelInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelInit::Rotation => "rotation",
            KernelInit::Identity => "identity",
        })
    }
}

impl FromStr for KernelInit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotation" => Ok(KernelInit::Rotation),
            "identity" => Ok(KernelInit::Identity),
            _ => Err(Error::InvalidConfig(format!("unknown kernel_init {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_shape: ExampleShape,
    pub variant: Variant,
    pub blocks: usize,
    pub couplings: usize,
    pub hidden: usize,
    /// Spatial kernel of the first and last coupling-net convolutions.
    pub net_kernel: usize,
    /// `None` picks the variant default: 1×1 conv for CV, reversal for NVP.
    pub mixer: Option<Mixer>,
    pub multiscale: bool,
    /// Soft clamp for exp scales; `None` disables it.
    pub scale_clamp: Option<f64>,
    pub kernel_init: KernelInit,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_shape: ExampleShape::flat(2),
            variant: Variant::NvpExp,
            blocks: 1,
            couplings: 4,
            hidden: 32,
            net_kernel: 1,
            mixer: None,
            multiscale: false,
            scale_clamp: Some(5.0),
            kernel_init: KernelInit::Rotation,
        }
    }
}

pub const MODEL_KEYS: &[&str] = &[
    "input_shape",
    "variant",
    "blocks",
    "couplings",
    "hidden",
    "net_kernel",
    "mixer",
    "multiscale",
    "scale_clamp",
    "kernel_init",
];

impl ModelConfig {
    pub fn mixer(&self) -> Mixer {
        self.mixer.unwrap_or(match self.variant {
            Variant::Cv => Mixer::Conv1x1,
            _ => Mixer::Reverse,
        })
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("input_shape", self.input_shape);
        kv.set("variant", self.variant);
        kv.set("blocks", self.blocks);
        kv.set("couplings", self.couplings);
        kv.set("hidden", self.hidden);
        kv.set("net_kernel", self.net_kernel);
        if let Some(m) = self.mixer {
            kv.set("mixer", m);
        }
        kv.set("multiscale", self.multiscale);
        kv.set("scale_clamp", self.scale_clamp.unwrap_or(0.0));
        kv.set("kernel_init", self.kernel_init);
        kv
    }

    /// Missing keys fall back to [`ModelConfig::default`]; `scale_clamp = 0` disables the clamp.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let clamp: f64 = kv.get_or("scale_clamp", d.scale_clamp.unwrap_or(0.0))?;
        if clamp < 0.0 || !clamp.is_finite() {
            return Err(Error::InvalidConfig(format!("scale_clamp = {clamp}")));
        }
        Ok(Self {
            input_shape: kv.get_or("input_shape", d.input_shape)?,
            variant: kv.get_or("variant", d.variant)?,
            blocks: kv.get_or("blocks", d.blocks)?,
            couplings: kv.get_or("couplings", d.couplings)?,
            hidden: kv.get_or("hidden", d.hidden)?,
            net_kernel: kv.get_or("net_kernel", d.net_kernel)?,
            mixer: kv.get("mixer")?,
            multiscale: kv.get_or("multiscale", d.multiscale)?,
            scale_clamp: (clamp > 0.0).then_some(clamp),
            kernel_init: kv.get_or("kernel_init", d.kernel_init)?,
        })
    }

    fn coupling_kind(&self) -> CouplingKind {
        match self.variant {
            Variant::Cv => CouplingKind::Additive,
            Variant::NvpExp => CouplingKind::Affine(ScaleParam::Exp {
                clamp: self.scale_clamp,
            }),
            Variant::NvpSigmoid => CouplingKind::Affine(ScaleParam::Sigmoid),
        }
    }
}

fn invalid(msg: String) -> Error {
    Error::InvalidConfig(msg)
}

fn make_kernel(c: usize, init: KernelInit, rng: &mut RngState) -> SquareMatrix {
    match init {
        KernelInit::Identity => SquareMatrix::identity(c),
        KernelInit::Rotation => loop {
            let mut m = SquareMatrix::zeros(c);
            for v in m.data_mut() {
                *v = rng.normal();
            }
            if let Ok(q) = m.orthonormalized() {
                break q;
            }
        },
    }
}

/// Lay out `blocks × couplings` flow steps. A block opens with a squeeze
/// (always after the first block, and in the first block when there is a
/// single channel); multiscale models factor out half the channels between
/// blocks.
pub fn build_model(config: &ModelConfig, rng: &mut RngState) -> Result<FlowModel> {
    if config.blocks == 0 || config.couplings == 0 {
        return Err(invalid("blocks and couplings must be at least 1".into()));
    }
    if config.hidden == 0 {
        return Err(invalid("hidden width must be at least 1".into()));
    }
    if config.net_kernel % 2 == 0 {
        return Err(invalid(format!("net_kernel must be odd, got {}", config.net_kernel)));
    }
    if config.input_shape.is_empty() {
        return Err(invalid("empty input shape".into()));
    }
    let kind = config.coupling_kind();
    let mixer = config.mixer();
    let mut layers = Vec::new();
    let mut shape = config.input_shape;
    for b in 0..config.blocks {
        if b > 0 || shape.c < 2 {
            if shape.h % 2 != 0 || shape.w % 2 != 0 {
                return Err(invalid(format!("cannot squeeze {shape}: odd spatial extent")));
            }
            let layer = FlowLayer::squeeze(shape);
            shape = layer.out_shape();
            layers.push(layer);
        }
        if shape.c < 2 {
            return Err(invalid(format!("coupling needs at least 2 channels, got {shape}")));
        }
        for _ in 0..config.couplings {
            let coupling = Coupling::new(kind, shape, config.net_kernel, config.hidden, rng);
            layers.push(match kind {
                CouplingKind::Additive => FlowLayer::AdditiveCoupling(coupling),
                CouplingKind::Affine(_) => FlowLayer::AffineCoupling(coupling),
            });
            layers.push(match mixer {
                Mixer::Conv1x1 => FlowLayer::InvConv1x1(InvConv1x1 {
                    shape,
                    kernel: make_kernel(shape.c, config.kernel_init, rng),
                }),
                Mixer::Reverse => FlowLayer::reverse_channels(shape),
            });
        }
        if config.multiscale && b + 1 < config.blocks {
            let layer = FlowLayer::factor_out(shape, shape.c / 2);
            shape = layer.out_shape();
            layers.push(layer);
        }
    }
    Ok(FlowModel::from_layers(config.clone(), layers))
}
