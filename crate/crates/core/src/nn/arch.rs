use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of a patch embedding and channel count of the last conv stage.
pub const EMBED_DIM: usize = 512;

/// Max pooling, ceil-mode output size (windows clipped at the border).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub size: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStage {
    pub filters: usize,
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default)]
    pub pool: Option<PoolSpec>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// Patch side length p.
    pub input_side: usize,
    pub conv: Vec<ConvStage>,
    /// Fully connected widths after concatenating both embeddings; ends in 1.
    pub head: Vec<usize>,
}

/// Activation shape after one conv stage (after ReLU and pooling).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageShape {
    pub channels: usize,
    /// Spatial side right after the convolution.
    pub conv_side: usize,
    /// Spatial side after pooling (equal to `conv_side` without pooling).
    pub out_side: usize,
}

pub(crate) fn conv_out(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    (padded >= kernel && stride > 0).then(|| (padded - kernel) / stride + 1)
}

pub(crate) fn pool_out(input: usize, size: usize, stride: usize) -> Option<usize> {
    if input < size || stride == 0 || size == 0 {
        return None;
    }
    let mut out = (input - size).div_ceil(stride) + 1;
    // the last window must start inside the input
    if (out - 1) * stride >= input {
        out -= 1;
    }
    Some(out)
}

impl ArchConfig {
    /// AlexNet-style branch for the baseline patch size (p = 350 gives m = 10).
    pub fn alexnet(input_side: usize) -> Self {
        let pool = Some(PoolSpec { size: 3, stride: 2 });
        ArchConfig {
            input_side,
            conv: vec![
                ConvStage { filters: 96, kernel: 11, stride: 4, padding: 0, pool },
                ConvStage { filters: 256, kernel: 5, stride: 1, padding: 2, pool },
                ConvStage { filters: 384, kernel: 3, stride: 1, padding: 1, pool: None },
                ConvStage { filters: 384, kernel: 3, stride: 1, padding: 1, pool: None },
                ConvStage { filters: EMBED_DIM, kernel: 3, stride: 1, padding: 1, pool },
            ],
            head: vec![512, 256, 64, 16, 1],
        }
    }

    /// Narrow four-stage branch sized for small patches on a CPU.
    pub fn compact(input_side: usize) -> Self {
        let pool = Some(PoolSpec { size: 3, stride: 2 });
        ArchConfig {
            input_side,
            conv: vec![
                ConvStage { filters: 16, kernel: 5, stride: 2, padding: 2, pool },
                ConvStage { filters: 32, kernel: 3, stride: 1, padding: 1, pool },
                ConvStage { filters: 64, kernel: 3, stride: 1, padding: 1, pool },
                ConvStage { filters: EMBED_DIM, kernel: 1, stride: 1, padding: 0, pool: None },
            ],
            head: vec![128, 32, 1],
        }
    }

    /// Two conv layers on 8x8 input; small enough for finite differences.
    pub fn tiny() -> Self {
        ArchConfig {
            input_side: 8,
            conv: vec![
                ConvStage {
                    filters: 3,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                    pool: Some(PoolSpec { size: 2, stride: 2 }),
                },
                ConvStage { filters: EMBED_DIM, kernel: 3, stride: 1, padding: 1, pool: None },
            ],
            head: vec![6, 1],
        }
    }

    /// Per-stage activation shapes; fails naming the first layer that cannot be chained.
    pub fn shape_trace(&self) -> Result<Vec<StageShape>> {
        if self.conv.is_empty() {
            return Err(Error::Shape {
                layer: "conv".into(),
                message: "architecture has no conv stages".into(),
            });
        }
        let mut side = self.input_side;
        let mut out = Vec::with_capacity(self.conv.len());
        for (i, st) in self.conv.iter().enumerate() {
            let layer = format!("conv{}", i + 1);
            if st.filters == 0 || st.kernel == 0 {
                return Err(Error::Shape {
                    layer,
                    message: "filters and kernel must be positive".into(),
                });
            }
            let conv_side = conv_out(side, st.kernel, st.stride, st.padding).ok_or_else(|| Error::Shape {
                layer: layer.clone(),
                message: format!("input side {side} too small for kernel {} with padding {}", st.kernel, st.padding),
            })?;
            let out_side = match st.pool {
                None => conv_side,
                Some(p) => pool_out(conv_side, p.size, p.stride).ok_or_else(|| Error::Shape {
                    layer: format!("pool{}", i + 1),
                    message: format!("input side {conv_side} too small for pool size {}", p.size),
                })?,
            };
            out.push(StageShape {
                channels: st.filters,
                conv_side,
                out_side,
            });
            side = out_side;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<Vec<StageShape>> {
        let trace = self.shape_trace()?;
        let last = trace.last().expect("non-empty");
        if last.channels != EMBED_DIM {
            return Err(Error::Shape {
                layer: format!("conv{}", trace.len()),
                message: format!("last conv stage must have {EMBED_DIM} filters, has {}", last.channels),
            });
        }
        if self.head.last() != Some(&1) || self.head.contains(&0) {
            return Err(Error::Shape {
                layer: "fc".into(),
                message: "head widths must be positive and end in 1".into(),
            });
        }
        Ok(trace)
    }

    /// Side m of the final `m x m x 512` activation map.
    pub fn map_side(&self) -> Result<usize> {
        Ok(self.shape_trace()?.last().expect("non-empty").out_side)
    }

    pub fn head_input(&self) -> usize {
        2 * EMBED_DIM
    }
}
