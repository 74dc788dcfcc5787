//! 7-tap 1-ring convolution on mesh vertices.
//!
//! `out[o,v] = bias[o] + Σ_i Σ_k taps[o,i,k] · x[i, tap_k(v)]` where tap 0 is
//! the vertex and taps 1..=6 its ordered ring. Pentagonal vertices read the
//! center again for tap 6.
//!
//! Internally the input is gathered into an `(in·7)×V` matrix so forward and
//! backward passes are single matrix products.

use crate::error::{Error, Result};
use crate::mesh::{Mesh, KERNEL_TAPS};

use super::field::ChannelField;
use super::real::{gemm, Real};

/// Kernel weights (`out×in×7`, row-major) and per-output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub taps: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        ConvParams {
            in_channels,
            out_channels,
            taps: vec![0.0; out_channels * in_channels * KERNEL_TAPS],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn tap_mut(&mut self, o: usize, i: usize, k: usize) -> &mut f64 {
        &mut self.taps[(o * self.in_channels + i) * KERNEL_TAPS + k]
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps.len() != self.out_channels * self.in_channels * KERNEL_TAPS
            || self.bias.len() != self.out_channels
        {
            return Err(Error::shape(format!(
                "conv params for {}->{} have {} taps and {} biases",
                self.in_channels,
                self.out_channels,
                self.taps.len(),
                self.bias.len()
            )));
        }
        if self.taps.iter().chain(&self.bias).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("conv params".into()));
        }
        Ok(())
    }
}

/// Applies one mesh convolution to a 64-bit field.
pub fn mesh_conv(x: &ChannelField, p: &ConvParams, mesh: &Mesh) -> Result<ChannelField> {
    p.validate()?;
    if x.level() != mesh.level() {
        return Err(Error::LevelMismatch {
            expected: mesh.level(),
            actual: x.level(),
        });
    }
    if x.vertices() != mesh.num_vertices() {
        return Err(Error::shape(format!(
            "field has {} vertices, mesh has {}",
            x.vertices(),
            mesh.num_vertices()
        )));
    }
    if x.channels() != p.in_channels {
        return Err(Error::shape(format!(
            "field has {} channels, conv expects {}",
            x.channels(),
            p.in_channels
        )));
    }
    let v = mesh.num_vertices();
    let mut out = vec![0.0; p.out_channels * v];
    let mut scratch = Vec::new();
    conv_forward(
        x.data(),
        p.in_channels,
        mesh.kernel_taps(),
        &p.taps,
        &p.bias,
        p.out_channels,
        &mut scratch,
        &mut out,
    );
    ChannelField::new(x.level(), p.out_channels, v, out)
}

pub(crate) fn gather<T: Real>(
    x: &[T],
    in_ch: usize,
    taps: &[[u32; KERNEL_TAPS]],
    out: &mut Vec<T>,
) {
    let v = taps.len();
    out.clear();
    out.resize(in_ch * KERNEL_TAPS * v, T::zero());
    for i in 0..in_ch {
        let xi = &x[i * v..(i + 1) * v];
        for k in 0..KERNEL_TAPS {
            let row = &mut out[(i * KERNEL_TAPS + k) * v..(i * KERNEL_TAPS + k + 1) * v];
            for (dst, t) in row.iter_mut().zip(taps) {
                *dst = xi[t[k] as usize];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_forward<T: Real>(
    x: &[T],
    in_ch: usize,
    taps: &[[u32; KERNEL_TAPS]],
    weights: &[T],
    bias: &[T],
    out_ch: usize,
    scratch: &mut Vec<T>,
    out: &mut [T],
) {
    let v = taps.len();
    gather(x, in_ch, taps, scratch);
    for (o, row) in out.chunks_exact_mut(v).enumerate() {
        row.fill(bias[o]);
    }
    gemm(out_ch, in_ch * KERNEL_TAPS, v, weights, false, scratch, false, T::one(), out);
}

/// Accumulates weight, bias, and (optionally) input gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    x: &[T],
    in_ch: usize,
    taps: &[[u32; KERNEL_TAPS]],
    weights: &[T],
    out_ch: usize,
    dout: &[T],
    dweights: &mut [T],
    dbias: &mut [T],
    dx: Option<&mut [T]>,
    scratch: &mut Vec<T>,
) {
    let v = taps.len();
    let cols = in_ch * KERNEL_TAPS;
    gather(x, in_ch, taps, scratch);
    gemm(out_ch, v, cols, dout, false, scratch, true, T::one(), dweights);
    for (o, row) in dout.chunks_exact(v).enumerate() {
        dbias[o] += row.iter().copied().sum();
    }
    if let Some(dx) = dx {
        // dgathered = Wᵀ · dout, then scatter back through the tap table.
        gemm(cols, out_ch, v, weights, true, dout, false, T::zero(), scratch);
        for i in 0..in_ch {
            let dxi = &mut dx[i * v..(i + 1) * v];
            for k in 0..KERNEL_TAPS {
                let row = &scratch[(i * KERNEL_TAPS + k) * v..(i * KERNEL_TAPS + k + 1) * v];
                for (g, t) in row.iter().zip(taps) {
                    dxi[t[k] as usize] += *g;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_hierarchy, subdivide, base_icosahedron};

    fn level1() -> Mesh {
        subdivide(&base_icosahedron())
    }

    #[test]
    fn center_identity_and_constant_bias() {
        let mesh = level1();
        let x = ChannelField::new(
            1,
            2,
            42,
            (0..84).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let mut p = ConvParams::zeros(2, 2);
        *p.tap_mut(0, 0, 0) = 1.0;
        *p.tap_mut(1, 1, 0) = 1.0;
        assert_eq!(mesh_conv(&x, &p, &mesh).unwrap(), x);

        let mut q = ConvParams::zeros(2, 3);
        q.bias = vec![2.5; 3];
        let y = mesh_conv(&x, &q, &mesh).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn uniform_taps_average_hexagonal_ring() {
        let h = build_hierarchy(1);
        let mesh = h.finest();
        let v = 20;
        assert_eq!(mesh.degree(v), 6);
        let mut data = vec![0.0; 42];
        for (k, &u) in mesh.neighbors()[v].iter().enumerate() {
            data[u] = (k + 1) as f64;
        }
        let x = ChannelField::new(1, 1, 42, data).unwrap();
        let mut p = ConvParams::zeros(1, 1);
        p.taps = vec![1.0 / 7.0; 7];
        let y = mesh_conv(&x, &p, mesh).unwrap();
        assert!((y.get(0, v) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pentagon_tap_six_reads_center() {
        let mesh = base_icosahedron();
        let mut data = vec![0.0; 12];
        data[0] = 1.0;
        let x = ChannelField::new(0, 1, 12, data).unwrap();
        let mut p = ConvParams::zeros(1, 1);
        *p.tap_mut(0, 0, 6) = 1.0;
        let y = mesh_conv(&x, &p, &mesh).unwrap();
        assert_eq!(y.get(0, 0), 1.0);
    }

    #[test]
    fn shape_and_level_errors() {
        let mesh = level1();
        let x = ChannelField::zeros(1, 2, 42);
        assert!(matches!(
            mesh_conv(&x, &ConvParams::zeros(3, 1), &mesh),
            Err(Error::Shape(_))
        ));
        let wrong_level = ChannelField::zeros(0, 2, 42);
        assert!(matches!(
            mesh_conv(&wrong_level, &ConvParams::zeros(2, 1), &mesh),
            Err(Error::LevelMismatch { .. })
        ));
    }
}
