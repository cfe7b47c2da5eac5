use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn output_side(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }
}

/// One CNN stream: conv+ReLU stack (each optionally followed by a residual
/// block), global average pooling, and a linear output layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamArch {
    pub in_channels: usize,
    pub input_px: usize,
    pub convs: Vec<ConvSpec>,
    /// Adds `relu(x + conv(relu(conv(x))))` (3×3, stride 1) after every conv.
    pub residual: bool,
    pub out_dim: usize,
}

impl StreamArch {
    /// 3×3 stride-2 convolutions with the given channel counts.
    pub fn simple(input_px: usize, channels: &[usize], out_dim: usize, residual: bool) -> Self {
        Self {
            in_channels: 3,
            input_px,
            convs: channels
                .iter()
                .map(|&c| ConvSpec {
                    out_channels: c,
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                })
                .collect(),
            residual,
            out_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.input_px == 0 || self.out_dim == 0 || self.convs.is_empty() {
            return Err(Error::InvalidConfig(
                "stream needs input channels, input size, output size and >= 1 conv".into(),
            ));
        }
        let mut side = self.input_px;
        for (i, c) in self.convs.iter().enumerate() {
            if c.out_channels == 0 || c.kernel == 0 || c.stride == 0 {
                return Err(Error::InvalidConfig(format!("conv {i} has a zero dimension")));
            }
            if side + 2 * c.padding < c.kernel {
                return Err(Error::InvalidConfig(format!(
                    "conv {i}: kernel {} larger than padded input {side}",
                    c.kernel
                )));
            }
            side = c.output_side(side);
        }
        Ok(())
    }

    /// `(channels, side)` after the conv stack.
    pub fn final_shape(&self) -> (usize, usize) {
        let side = self.convs.iter().fold(self.input_px, |s, c| c.output_side(s));
        (self.convs.last().map_or(self.in_channels, |c| c.out_channels), side)
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.input_px * self.input_px
    }

    /// Parameter shapes in declaration order, with names.
    pub fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut c_in = self.in_channels;
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.w"), vec![c.out_channels, c_in, c.kernel, c.kernel]));
            out.push((format!("conv{i}.b"), vec![c.out_channels]));
            if self.residual {
                let ch = c.out_channels;
                out.push((format!("res{i}.a.w"), vec![ch, ch, 3, 3]));
                out.push((format!("res{i}.a.b"), vec![ch]));
                out.push((format!("res{i}.b.w"), vec![ch, ch, 3, 3]));
                out.push((format!("res{i}.b.b"), vec![ch]));
            }
            c_in = c.out_channels;
        }
        out.push(("fc.w".into(), vec![self.out_dim, c_in]));
        out.push(("fc.b".into(), vec![self.out_dim]));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamRole {
    Whole,
    PartM,
    PartI,
}

impl StreamRole {
    pub fn name(self) -> &'static str {
        match self {
            StreamRole::Whole => "whole",
            StreamRole::PartM => "part_m",
            StreamRole::PartI => "part_i",
        }
    }
}

/// Streams (all sharing one architecture) fused by a linear layer to `embed_dim`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    pub stream: StreamArch,
    pub roles: Vec<StreamRole>,
    pub embed_dim: usize,
}

impl ModelArch {
    /// Three streams in the order whole, part_m, part_i.
    pub fn pmsm(stream: StreamArch, embed_dim: usize) -> Self {
        Self {
            stream,
            roles: vec![StreamRole::Whole, StreamRole::PartM, StreamRole::PartI],
            embed_dim,
        }
    }

    /// Whole-image stream only, fused the same way.
    pub fn whole_only(stream: StreamArch, embed_dim: usize) -> Self {
        Self {
            stream,
            roles: vec![StreamRole::Whole],
            embed_dim,
        }
    }

    /// 64-px inputs, three stride-2 convs, 64-d streams, 128-d embedding.
    pub fn desk() -> Self {
        Self::pmsm(StreamArch::simple(64, &DESK_CHANNELS, 64, false), 128)
    }

    /// Wider streams with 2048-d outputs and the 1024-d embedding.
    pub fn paper() -> Self {
        Self::pmsm(StreamArch::simple(64, &[32, 64, 128, 256], 2048, false), 1024)
    }

    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        if self.roles.is_empty() || self.embed_dim == 0 {
            return Err(Error::InvalidConfig("model needs >= 1 stream and embed_dim >= 1".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if !self.roles.iter().all(|r| seen.insert(*r)) {
            return Err(Error::InvalidConfig("stream roles must be distinct".into()));
        }
        Ok(())
    }

    pub fn fusion_in(&self) -> usize {
        self.roles.len() * self.stream.out_dim
    }
}

pub const DESK_CHANNELS: [usize; 3] = [4, 8, 16];
