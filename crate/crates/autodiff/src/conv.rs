//! 2-D cross-correlation via im2col + GEMM.
//!
//! Work is split per image and run on the rayon pool. Weight and bias
//! gradients are reduced over fixed-size image chunks and then summed in
//! batch order, so results do not depend on the number of worker threads.

use std::borrow::Cow;

use rayon::prelude::*;

use crate::error::{AutodiffError, Result};
use crate::real::{gemm, Real};
use crate::tensor::Tensor;

/// Images per partial weight-gradient accumulator.
const REDUCE_CHUNK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub const fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self::new(1, 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

fn out_extent(extent: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = extent + 2 * padding;
    let err = AutodiffError::NonIntegralOutput {
        extent,
        kernel,
        stride,
        padding,
    };
    if padded < kernel || !(padded - kernel).is_multiple_of(stride) {
        return Err(err);
    }
    Ok((padded - kernel) / stride + 1)
}

impl ConvGeom {
    pub fn new<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, spec: Conv2dSpec) -> Result<Self> {
        let [n, c, h, wd] = x.dims::<4>("conv2d")?;
        let [f, wc, kh, kw] = w.dims::<4>("conv2d")?;
        if wc != c {
            return Err(AutodiffError::shape(
                "conv2d",
                format!("input has {c} channels, kernel expects {wc}"),
            ));
        }
        if b.shape() != [f] {
            return Err(AutodiffError::shape(
                "conv2d",
                format!("bias shape {:?}, expected [{f}]", b.shape()),
            ));
        }
        if spec.stride == 0 {
            return Err(AutodiffError::shape("conv2d", "stride must be >= 1"));
        }
        let ho = out_extent(h, kh, spec.stride, spec.padding)?;
        let wo = out_extent(wd, kw, spec.stride, spec.padding)?;
        Ok(Self {
            n,
            c,
            h,
            w: wd,
            f,
            kh,
            kw,
            stride: spec.stride,
            pad: spec.padding,
            ho,
            wo,
        })
    }

    fn in_size(&self) -> usize {
        self.c * self.h * self.w
    }

    fn out_size(&self) -> usize {
        self.f * self.positions()
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.n, self.f, self.ho, self.wo]
    }
}

/// Unfolds one image (`c×h×w`) into a `(c·kh·kw) × (ho·wo)` matrix.
fn im2col<'a, T: Real>(x: &'a [T], g: &ConvGeom) -> Cow<'a, [T]> {
    if g.is_pointwise() {
        return Cow::Borrowed(x);
    }
    let p = g.positions();
    let mut cols = vec![T::zero(); g.patch() * p];
    for ch in 0..g.c {
        let plane = &x[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ch * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    for (ox, o) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    Cow::Owned(cols)
}

/// Folds a column matrix back onto an image, accumulating overlaps.
fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.positions();
    for ch in 0..g.c {
        let plane = &mut dx[ch * g.h * g.w..(ch + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ch * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, g: &ConvGeom) -> Tensor<T> {
    let (p, k) = (g.positions(), g.patch());
    let mut out = vec![T::zero(); g.n * g.out_size()];
    if g.n > 0 && g.out_size() > 0 {
        out.par_chunks_mut(g.out_size())
            .zip(x.data().par_chunks(g.in_size().max(1)))
            .for_each(|(o, xi)| {
                let cols = im2col(xi, g);
                for (fi, row) in o.chunks_mut(p).enumerate() {
                    row.fill(b.data()[fi]);
                }
                gemm(g.f, k, p, w.data(), false, &cols, false, o, T::one());
            });
    }
    Tensor::new(g.output_shape().to_vec(), out).expect("conv output shape")
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

pub(crate) fn backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
    g: &ConvGeom,
    need: [bool; 3],
) -> ConvGrads<T> {
    let (p, k, f) = (g.positions(), g.patch(), g.f);
    let out_sz = g.out_size();
    let in_sz = g.in_size();

    let dx = need[0].then(|| {
        let mut dx = vec![T::zero(); g.n * in_sz];
        if in_sz > 0 {
            dx.par_chunks_mut(in_sz)
                .zip(dout.data().par_chunks(out_sz.max(1)))
                .for_each(|(dxi, di)| {
                    let mut dcols = vec![T::zero(); k * p];
                    gemm(k, f, p, w.data(), true, di, false, &mut dcols, T::zero());
                    if g.is_pointwise() {
                        dxi.copy_from_slice(&dcols);
                    } else {
                        col2im(&dcols, g, dxi);
                    }
                });
        }
        Tensor::new(x.shape().to_vec(), dx).expect("dx shape")
    });

    let (dw, db) = if need[1] || need[2] {
        let images: Vec<usize> = (0..g.n).collect();
        let partials: Vec<(Vec<T>, Vec<T>)> = images
            .par_chunks(REDUCE_CHUNK)
            .map(|chunk| {
                let mut dw = vec![T::zero(); if need[1] { f * k } else { 0 }];
                let mut db = vec![T::zero(); f];
                for &i in chunk {
                    let di = &dout.data()[i * out_sz..(i + 1) * out_sz];
                    if need[1] {
                        let cols = im2col(&x.data()[i * in_sz..(i + 1) * in_sz], g);
                        gemm(f, p, k, di, false, &cols, true, &mut dw, T::one());
                    }
                    for (acc, row) in db.iter_mut().zip(di.chunks(p.max(1))) {
                        *acc += row.iter().copied().sum::<T>();
                    }
                }
                (dw, db)
            })
            .collect();
        let mut dw = vec![T::zero(); f * k];
        let mut db = vec![T::zero(); f];
        for (pw, pb) in &partials {
            if need[1] {
                for (a, &v) in dw.iter_mut().zip(pw) {
                    *a += v;
                }
            }
            for (a, &v) in db.iter_mut().zip(pb) {
                *a += v;
            }
        }
        (
            need[1].then(|| Tensor::new(w.shape().to_vec(), dw).expect("dw shape")),
            need[2].then(|| Tensor::new(vec![f], db).expect("db shape")),
        )
    } else {
        (None, None)
    };

    ConvGrads { dx, dw, db }
}
