//! Exact Euclidean distance transforms and per-label distance stacks.
//!
//! The transform is the separable lower-envelope algorithm of Felzenszwalb and
//! Huttenlocher run over squared distances: one exact 1D scan along x, then a
//! parabola lower envelope along y and along z. Voxel spacing enters as a
//! per-axis weight, so anisotropic grids give true world distances in mm.
//!
//! For a voxel `v` and source `s`, the squared distance is evaluated as
//! `(sx² · dx² + sy² · dy²) + sz² · dz²` with `d = v - s` in voxel units and
//! `s*²` precomputed. Every value the transform produces is exactly that
//! expression for the nearest source, so it can be compared bit for bit with a
//! brute-force search that uses the same expression.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, GridMeta, LabelSource, Volume};

/// Ordered per-label distance maps on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceStack {
    meta: GridMeta,
    channels: Vec<Volume>,
    label_ids: Vec<u8>,
}

impl DistanceStack {
    pub fn new(label_ids: Vec<u8>, channels: Vec<Volume>) -> Result<Self> {
        let Some(first) = channels.first() else {
            return Err(Error::ChannelMismatch("a stack needs at least one channel".into()));
        };
        if label_ids.len() != channels.len() {
            return Err(Error::ChannelMismatch(format!(
                "{} label ids for {} channels",
                label_ids.len(),
                channels.len()
            )));
        }
        let meta = first.meta().clone();
        for c in &channels {
            meta.ensure_same(c.meta(), "stack channels")?;
        }
        Ok(Self { meta, channels, label_ids })
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn channels(&self) -> &[Volume] {
        &self.channels
    }

    pub fn label_ids(&self) -> &[u8] {
        &self.label_ids
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channel(&self, label: u8) -> Option<&Volume> {
        self.label_ids.iter().position(|&l| l == label).map(|n| &self.channels[n])
    }

    /// Reorders channels; `order[n]` is the current position of new channel `n`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if order.len() != self.len() || order.iter().any(|&n| n >= self.len() || std::mem::replace(&mut seen[n], true))
        {
            return Err(Error::ChannelMismatch(format!("{order:?} is not a permutation")));
        }
        Ok(Self {
            meta: self.meta.clone(),
            channels: order.iter().map(|&n| self.channels[n].clone()).collect(),
            label_ids: order.iter().map(|&n| self.label_ids[n]).collect(),
        })
    }
}

/// Characteristic mask of one label.
pub fn mask_of_label<S: LabelSource + ?Sized>(source: &S, label: u8) -> Result<BinaryMask> {
    source.mask_of_label(label)
}

/// Distance in mm from every voxel center to the nearest set voxel center.
pub fn edt_exact(mask: &BinaryMask) -> Result<Volume> {
    let squared = squared_edt(mask).ok_or(Error::EmptyLabel(0))?;
    let values = squared.into_par_iter().map(f64::sqrt).collect();
    Ok(Volume::from_parts_unchecked(mask.meta().clone(), values))
}

/// Squared distances in mm², or `None` for an empty mask.
pub fn squared_edt(mask: &BinaryMask) -> Option<Vec<f64>> {
    if mask.is_empty() {
        return None;
    }
    let meta = mask.meta();
    let [nx, ny, nz] = meta.dims();
    let sp = meta.spacing();
    let w = [sp[0] * sp[0], sp[1] * sp[1], sp[2] * sp[2]];

    let mut grid = vec![0.0f64; meta.len()];

    // x: exact nearest source along each row.
    grid.par_chunks_mut(nx).zip(mask.bits().par_chunks(nx)).for_each(|(row, bits)| scan_row(bits, w[0], row));

    // y: rows of one z-slice are contiguous, so slices are independent.
    grid.par_chunks_mut(nx * ny).for_each_init(
        || Scratch::new(ny),
        |scratch, slice| {
            for i in 0..nx {
                for j in 0..ny {
                    scratch.line[j] = slice[i + nx * j];
                }
                scratch.envelope(w[1]);
                for j in 0..ny {
                    slice[i + nx * j] = scratch.out[j];
                }
            }
        },
    );

    // z: gather each (x, y) column per y-row in parallel, scatter afterwards.
    if nz > 1 {
        let plane = nx * ny;
        let columns: Vec<Vec<f64>> = (0..ny)
            .into_par_iter()
            .map_init(
                || Scratch::new(nz),
                |scratch, j| {
                    let mut out = vec![0.0; nx * nz];
                    for i in 0..nx {
                        for k in 0..nz {
                            scratch.line[k] = grid[i + nx * j + plane * k];
                        }
                        scratch.envelope(w[2]);
                        out[i * nz..(i + 1) * nz].copy_from_slice(&scratch.out);
                    }
                    out
                },
            )
            .collect();
        for (j, col) in columns.iter().enumerate() {
            for i in 0..nx {
                for k in 0..nz {
                    grid[i + nx * j + plane * k] = col[i * nz + k];
                }
            }
        }
    }
    Some(grid)
}

fn scan_row(bits: &[bool], w: f64, out: &mut [f64]) {
    let n = bits.len();
    let mut last: Option<usize> = None;
    let mut left = vec![usize::MAX; n];
    for i in 0..n {
        if bits[i] {
            last = Some(i);
        }
        if let Some(l) = last {
            left[i] = i - l;
        }
    }
    let mut next: Option<usize> = None;
    for i in (0..n).rev() {
        if bits[i] {
            next = Some(i);
        }
        let d = match next {
            Some(r) => left[i].min(r - i),
            None => left[i],
        };
        out[i] = if d == usize::MAX {
            f64::INFINITY
        } else {
            let d = d as f64;
            w * (d * d)
        };
    }
}

struct Scratch {
    line: Vec<f64>,
    out: Vec<f64>,
    verts: Vec<usize>,
    bounds: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self { line: vec![0.0; n], out: vec![0.0; n], verts: Vec::with_capacity(n), bounds: Vec::with_capacity(n + 1) }
    }

    /// Lower envelope of the parabolas `line[q] + w·(x − q)²` evaluated at
    /// every integer `x`. Infinite entries carry no parabola.
    fn envelope(&mut self, w: f64) {
        let f = &self.line;
        let v = &mut self.verts;
        let z = &mut self.bounds;
        v.clear();
        z.clear();
        for q in 0..f.len() {
            if f[q].is_infinite() {
                continue;
            }
            let fq = f[q] + w * (q * q) as f64;
            loop {
                let Some(&p) = v.last() else {
                    v.push(q);
                    z.push(f64::NEG_INFINITY);
                    break;
                };
                let fp = f[p] + w * (p * p) as f64;
                let s = (fq - fp) / (2.0 * w * (q - p) as f64);
                // Near-ties are kept: rounding in `s` must not discard the
                // parabola that is minimal in floating point.
                if s < *z.last().unwrap() - slack(s) {
                    v.pop();
                    z.pop();
                    continue;
                }
                v.push(q);
                z.push(s);
                break;
            }
        }
        if v.is_empty() {
            self.out.fill(f64::INFINITY);
            return;
        }
        let eval = |q: usize, x: usize| {
            let d = x.abs_diff(q) as f64;
            f[q] + w * (d * d)
        };
        let mut k = 0;
        for x in 0..f.len() {
            let xf = x as f64;
            let tol = slack(xf);
            while k + 1 < v.len() && z[k + 1] < xf - tol {
                k += 1;
            }
            // Every parabola whose interval reaches within `tol` of x.
            let mut best = eval(v[k], x);
            let mut j = k + 1;
            while j < v.len() && z[j] <= xf + tol {
                best = best.min(eval(v[j], x));
                j += 1;
            }
            self.out[x] = best;
        }
    }
}

#[inline]
fn slack(s: f64) -> f64 {
    1e-8 * (1.0 + s.abs())
}

/// One exact distance map per label id, in the order given.
pub fn build_stack<S: LabelSource + ?Sized>(source: &S, label_ids: &[u8]) -> Result<DistanceStack> {
    let mut channels = Vec::with_capacity(label_ids.len());
    for &id in label_ids {
        let mask = source.mask_of_label(id)?;
        let dist = edt_exact(&mask).map_err(|_| Error::EmptyLabel(id))?;
        channels.push(dist);
    }
    DistanceStack::new(label_ids.to_vec(), channels)
}
