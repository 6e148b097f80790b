//! Style control network and the zero-initialized fusion between the style
//! and content encoders.
//!
//! Per encoder block `i` (variant b):
//!
//! ```text
//! F_s2c_i = L_s2c_i(F_s_{i-1}) + F_c_{i-1}
//! F_c2s_i = L_c2s_i(F_c_{i-1}) + F_s_{i-1}
//! ```
//!
//! With the default `pre_block` placement the fused features are the inputs
//! of block `i` (`F_c_i = G_i(F_s2c_i)`, `F_s_i = S_i(F_c2s_i)`). The
//! `literal` placement fuses block outputs instead: both blocks run on the
//! previous features and their outputs are exchanged.

use candle_core::{Module, Tensor};
use candle_nn::Linear;
use serde::{Deserialize, Serialize};

use crate::denoiser::{Conditioning, Denoiser};
use crate::nn::{linear, zero_linear, Init, Params, TransformerBlock};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Style-to-content links between the encoders only.
    A,
    /// Bidirectional links between the encoders.
    B,
    /// `B` plus a style-to-content link into the middle block.
    C,
    /// `B` plus style-to-content links into every decoder block.
    D,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::A, Variant::B, Variant::C, Variant::D];

    pub fn bidirectional(self) -> bool {
        self != Variant::A
    }

    pub fn tag(self) -> &'static str {
        match self {
            Variant::A => "a",
            Variant::B => "b",
            Variant::C => "c",
            Variant::D => "d",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(Variant::A),
            "b" => Ok(Variant::B),
            "c" => Ok(Variant::C),
            "d" => Ok(Variant::D),
            _ => Err(Error::config(format!("unknown variant {s:?} (expected a, b, c or d)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    #[default]
    PreBlock,
    Literal,
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("fusion operands differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// `L_s2c(F_s) + F_c`.
pub fn fuse_s2c(f_s_prev: &Tensor, f_c_prev: &Tensor, l: &Linear) -> Result<Tensor> {
    check_same(f_s_prev, f_c_prev)?;
    Ok((l.forward(f_s_prev)? + f_c_prev)?)
}

/// `L_c2s(F_c) + F_s`.
pub fn fuse_c2s(f_c_prev: &Tensor, f_s_prev: &Tensor, l: &Linear) -> Result<Tensor> {
    check_same(f_c_prev, f_s_prev)?;
    Ok((l.forward(f_c_prev)? + f_s_prev)?)
}

/// Zero-initialized fusion maps. Every variant carries the encoder pairs;
/// variant `a` never reads its content-to-style maps.
#[derive(Clone, Debug)]
pub struct FusionStack {
    pub variant: Variant,
    pub placement: Placement,
    pub s2c: Vec<Linear>,
    pub c2s: Vec<Linear>,
    pub middle: Option<Linear>,
    pub decoder: Vec<Linear>,
}

impl FusionStack {
    pub fn new(variant: Variant, placement: Placement, blocks: usize, width: usize, p: &Params) -> Result<Self> {
        let pair = |name: &str, i: usize| zero_linear(width, width, &p.pp(name).pp(i));
        Ok(Self {
            variant,
            placement,
            s2c: (0..blocks).map(|i| pair("s2c", i)).collect::<Result<_>>()?,
            c2s: (0..blocks).map(|i| pair("c2s", i)).collect::<Result<_>>()?,
            middle: match variant {
                Variant::C => Some(zero_linear(width, width, &p.pp("mid_s2c"))?),
                _ => None,
            },
            decoder: match variant {
                Variant::D => (0..blocks).map(|i| pair("dec_s2c", i)).collect::<Result<_>>()?,
                _ => Vec::new(),
            },
        })
    }

    /// Every fusion map, for inspection.
    pub fn maps(&self) -> Vec<&Linear> {
        self.s2c
            .iter()
            .chain(&self.c2s)
            .chain(self.middle.iter())
            .chain(&self.decoder)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleNetConfig {
    pub width: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_ratio: usize,
    pub n_z: usize,
    pub d_z: usize,
    /// Dimension of the style embedding consumed by the network.
    pub style_dim: usize,
    pub variant: Variant,
    #[serde(default)]
    pub placement: Placement,
}

/// Style encoder stack `S_i` with its own input embedding.
#[derive(Clone, Debug)]
pub struct StyleNet {
    pub config: StyleNetConfig,
    style_in: Linear,
    z_in: Linear,
    pos: Tensor,
    blocks: Vec<TransformerBlock>,
    pub fusion: FusionStack,
}

impl StyleNet {
    pub fn new(config: StyleNetConfig, p: &Params) -> Result<Self> {
        let w = config.width;
        Ok(Self {
            style_in: linear(config.style_dim, w, &p.pp("style_in"))?,
            z_in: linear(config.d_z, w, &p.pp("z_in"))?,
            pos: p.get((config.n_z, w), "pos", Init::Normal(0.5))?,
            blocks: (0..config.blocks)
                .map(|i| TransformerBlock::new(w, config.heads, config.mlp_ratio, &p.pp("blocks").pp(i)))
                .collect::<Result<_>>()?,
            fusion: FusionStack::new(config.variant, config.placement, config.blocks, w, &p.pp("fusion"))?,
            config,
        })
    }

    pub fn check_compatible(&self, base: &Denoiser) -> Result<()> {
        let c = &self.config;
        if c.width != base.width() || c.blocks != base.blocks() || c.n_z != base.config.n_z || c.d_z != base.config.d_z {
            return Err(Error::config("style network shape does not match the base denoiser"));
        }
        Ok(())
    }

    /// Style-network input tokens `[B, 1 + n_z, W]` from a style embedding `[B, style_dim]`.
    pub fn input_tokens(&self, z_t: &Tensor, style: &Tensor) -> Result<Tensor> {
        let s = self.style_in.forward(style)?.unsqueeze(1)?;
        let z = self.z_in.forward(z_t)?.broadcast_add(&self.pos)?;
        Ok(Tensor::cat(&[&s, &z], 1)?)
    }

    pub fn block(&self, i: usize, h: &Tensor, c: &Conditioning) -> Result<Tensor> {
        Ok(self.blocks[i].forward(&h.broadcast_add(&c.temb.unsqueeze(1)?)?)?)
    }
}

/// Outputs of the coupled encoders.
#[derive(Clone, Debug)]
pub struct DualOutput {
    pub content: Tensor,
    pub style: Tensor,
    /// `F_c_i` for every block.
    pub content_feats: Vec<Tensor>,
    /// `F_s_i` for every block.
    pub style_feats: Vec<Tensor>,
}

/// Runs the content encoder and the style encoder side by side with fusion.
pub fn run_dual_encoders(
    base: &Denoiser,
    style: &StyleNet,
    h_c: &Tensor,
    h_s: &Tensor,
    c: &Conditioning,
) -> Result<DualOutput> {
    let f = &style.fusion;
    let bidirectional = f.variant.bidirectional();
    let mut fc = h_c.clone();
    let mut fs = h_s.clone();
    let mut content_feats = Vec::with_capacity(base.blocks());
    let mut style_feats = Vec::with_capacity(base.blocks());
    for i in 0..base.blocks() {
        match f.placement {
            Placement::PreBlock => {
                let s2c = fuse_s2c(&fs, &fc, &f.s2c[i])?;
                let c2s = if bidirectional { fuse_c2s(&fc, &fs, &f.c2s[i])? } else { fs.clone() };
                fc = base.encoder_block(i, &s2c, c)?;
                fs = style.block(i, &c2s, c)?;
            }
            Placement::Literal => {
                let gc = base.encoder_block(i, &fc, c)?;
                let gs = style.block(i, &fs, c)?;
                fc = fuse_s2c(&gs, &gc, &f.s2c[i])?;
                fs = if bidirectional { fuse_c2s(&gc, &gs, &f.c2s[i])? } else { gs };
            }
        }
        content_feats.push(fc.clone());
        style_feats.push(fs.clone());
    }
    Ok(DualOutput {
        content: fc,
        style: fs,
        content_feats,
        style_feats,
    })
}

/// Styled noise prediction: content network coupled with the style network.
pub fn predict_eps_styled(
    base: &Denoiser,
    style: &StyleNet,
    z_t: &Tensor,
    c: &Conditioning,
    style_emb: &Tensor,
) -> Result<Tensor> {
    let h_c = base.input_tokens(z_t, c)?;
    let h_s = style.input_tokens(z_t, style_emb)?;
    let dual = run_dual_encoders(base, style, &h_c, &h_s, c)?;
    let f = &style.fusion;
    let mid_in = match &f.middle {
        Some(l) => fuse_s2c(&dual.style, &dual.content, l)?,
        None => dual.content.clone(),
    };
    let h = base.middle_block(&mid_in, c)?;
    let inject = if f.decoder.is_empty() {
        None
    } else {
        Some(f.decoder.iter().map(|l| l.forward(&dual.style)).collect::<candle_core::Result<Vec<_>>>()?)
    };
    let h = base.decoder(&h, &dual.content_feats, c, inject.as_deref())?;
    base.output(&h)
}
