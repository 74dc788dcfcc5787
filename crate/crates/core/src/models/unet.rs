use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::MeshHierarchy;
use crate::nncore::{ConvShape, ParamStore, Real, Tape, Var};

/// Backbone layout: one width per resolution level, finest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub widths: Vec<usize>,
    pub convs_per_block: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            widths: vec![32, 64, 128],
            convs_per_block: 1,
        }
    }
}

/// Mesh U-Net: conv+ReLU blocks with pooling on the way down, unpooling
/// and skip concatenation on the way up, and a final linear conv.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNet {
    pub in_channels: usize,
    pub out_channels: usize,
    pub config: UNetConfig,
}

impl UNet {
    pub fn new(in_channels: usize, out_channels: usize, config: UNetConfig) -> Result<Self> {
        if config.widths.is_empty() || config.widths.contains(&0) || config.convs_per_block == 0 {
            return Err(Error::Config(format!(
                "backbone needs nonzero widths and convs per block, got {config:?}"
            )));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Config("backbone needs input and output channels".into()));
        }
        Ok(UNet {
            in_channels,
            out_channels,
            config,
        })
    }

    pub fn depth(&self) -> usize {
        self.config.widths.len()
    }

    /// Layer shapes in the order [`UNet::record`] uses them.
    pub fn shapes(&self) -> Vec<ConvShape> {
        let w = &self.config.widths;
        let reps = self.config.convs_per_block;
        let mut out = Vec::new();
        let block = |first_in: usize, width: usize, out: &mut Vec<ConvShape>| {
            out.push(ConvShape {
                in_channels: first_in,
                out_channels: width,
            });
            for _ in 1..reps {
                out.push(ConvShape {
                    in_channels: width,
                    out_channels: width,
                });
            }
        };
        for i in 0..w.len() {
            let first_in = if i == 0 { self.in_channels } else { w[i - 1] };
            block(first_in, w[i], &mut out);
        }
        for i in (0..w.len() - 1).rev() {
            block(w[i + 1] + w[i], w[i], &mut out);
        }
        out.push(ConvShape {
            in_channels: w[0],
            out_channels: self.out_channels,
        });
        out
    }

    pub fn num_params(&self) -> usize {
        self.shapes().iter().map(ConvShape::len).sum()
    }

    pub fn check_hierarchy(&self, h: &MeshHierarchy) -> Result<()> {
        if h.finest_level() + 1 < self.depth() {
            return Err(Error::Config(format!(
                "a {}-level backbone needs mesh level >= {}, hierarchy stops at {}",
                self.depth(),
                self.depth() - 1,
                h.finest_level()
            )));
        }
        Ok(())
    }

    /// Records the forward pass of `x` (on the finest level of `h`).
    pub fn record<'a, T: Real>(
        &self,
        tape: &mut Tape<'a, T>,
        x: Var,
        h: &'a MeshHierarchy,
    ) -> Result<Var> {
        self.check_hierarchy(h)?;
        let top = h.finest_level();
        let reps = self.config.convs_per_block;
        let mut layer = 0;
        let mut block = |tape: &mut Tape<'a, T>, mut x: Var, level: usize| -> Result<Var> {
            for _ in 0..reps {
                let y = tape.conv(x, layer, h.level(level)?)?;
                x = tape.relu(y);
                layer += 1;
            }
            Ok(x)
        };

        let mut skips = Vec::with_capacity(self.depth());
        let mut cur = x;
        for i in 0..self.depth() {
            if i > 0 {
                cur = tape.pool(cur, h, top - i + 1)?;
            }
            cur = block(tape, cur, top - i)?;
            skips.push(cur);
        }
        for i in (0..self.depth() - 1).rev() {
            let up = tape.unpool(cur, h, top - i - 1)?;
            let joined = tape.concat(&[up, skips[i]])?;
            cur = block(tape, joined, top - i)?;
        }
        tape.conv(cur, layer, h.finest())
    }

    /// Forward pass without gradients.
    pub fn forward<T: Real>(
        &self,
        params: &ParamStore<T>,
        h: &MeshHierarchy,
        input: Vec<T>,
    ) -> Result<Vec<T>> {
        let n = h.finest().num_vertices();
        let mut tape = Tape::new(params);
        let x = tape.input(input, self.in_channels, n)?;
        let y = self.record(&mut tape, x, h)?;
        Ok(tape.value(y).to_vec())
    }
}
