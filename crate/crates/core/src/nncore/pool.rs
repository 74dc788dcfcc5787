//! Hierarchy pooling: mean over a coarse vertex and its fine-only 1-ring,
//! and unpooling by copy (coincident vertices) or parent mean (midpoints).

use crate::error::{Error, Result};
use crate::mesh::MeshHierarchy;

use super::field::ChannelField;
use super::real::Real;

pub fn mesh_pool(x: &ChannelField, h: &MeshHierarchy) -> Result<ChannelField> {
    if x.level() == 0 {
        return Err(Error::InvalidArgument("cannot pool a level-0 field".into()));
    }
    check_level(x, h)?;
    let sets = h.pool_sets(x.level())?;
    let mut out = vec![0.0; x.channels() * sets.len()];
    pool_forward(x.data(), x.channels(), x.vertices(), sets, &mut out);
    ChannelField::new(x.level() - 1, x.channels(), sets.len(), out)
}

pub fn mesh_unpool(x: &ChannelField, h: &MeshHierarchy) -> Result<ChannelField> {
    if x.level() >= h.finest_level() {
        return Err(Error::InvalidArgument(format!(
            "level {} is already the finest level",
            x.level()
        )));
    }
    check_level(x, h)?;
    let parents = h.parents(x.level() + 1)?;
    let fine_n = x.vertices() + parents.len();
    let mut out = vec![0.0; x.channels() * fine_n];
    unpool_forward(x.data(), x.channels(), x.vertices(), parents, &mut out);
    ChannelField::new(x.level() + 1, x.channels(), fine_n, out)
}

fn check_level(x: &ChannelField, h: &MeshHierarchy) -> Result<()> {
    let mesh = h.level(x.level())?;
    if mesh.num_vertices() != x.vertices() {
        return Err(Error::shape(format!(
            "field has {} vertices, level {} has {}",
            x.vertices(),
            x.level(),
            mesh.num_vertices()
        )));
    }
    Ok(())
}

pub(crate) fn pool_forward<T: Real>(
    x: &[T],
    channels: usize,
    fine_n: usize,
    sets: &[Vec<usize>],
    out: &mut [T],
) {
    let coarse_n = sets.len();
    for c in 0..channels {
        let xc = &x[c * fine_n..(c + 1) * fine_n];
        let oc = &mut out[c * coarse_n..(c + 1) * coarse_n];
        for (o, set) in oc.iter_mut().zip(sets) {
            let s: T = set.iter().map(|&j| xc[j]).sum();
            *o = s / T::from_f64(set.len() as f64);
        }
    }
}

pub(crate) fn pool_backward<T: Real>(
    dout: &[T],
    channels: usize,
    fine_n: usize,
    sets: &[Vec<usize>],
    dx: &mut [T],
) {
    let coarse_n = sets.len();
    for c in 0..channels {
        let dc = &dout[c * coarse_n..(c + 1) * coarse_n];
        let dxc = &mut dx[c * fine_n..(c + 1) * fine_n];
        for (g, set) in dc.iter().zip(sets) {
            let share = *g / T::from_f64(set.len() as f64);
            for &j in set {
                dxc[j] += share;
            }
        }
    }
}

pub(crate) fn unpool_forward<T: Real>(
    x: &[T],
    channels: usize,
    coarse_n: usize,
    parents: &[[usize; 2]],
    out: &mut [T],
) {
    let fine_n = coarse_n + parents.len();
    let half = T::from_f64(0.5);
    for c in 0..channels {
        let xc = &x[c * coarse_n..(c + 1) * coarse_n];
        let oc = &mut out[c * fine_n..(c + 1) * fine_n];
        oc[..coarse_n].copy_from_slice(xc);
        for (o, &[a, b]) in oc[coarse_n..].iter_mut().zip(parents) {
            *o = (xc[a] + xc[b]) * half;
        }
    }
}

pub(crate) fn unpool_backward<T: Real>(
    dout: &[T],
    channels: usize,
    coarse_n: usize,
    parents: &[[usize; 2]],
    dx: &mut [T],
) {
    let fine_n = coarse_n + parents.len();
    let half = T::from_f64(0.5);
    for c in 0..channels {
        let dc = &dout[c * fine_n..(c + 1) * fine_n];
        let dxc = &mut dx[c * coarse_n..(c + 1) * coarse_n];
        for (d, g) in dxc.iter_mut().zip(&dc[..coarse_n]) {
            *d += *g;
        }
        for (g, &[a, b]) in dc[coarse_n..].iter().zip(parents) {
            dxc[a] += *g * half;
            dxc[b] += *g * half;
        }
    }
}
