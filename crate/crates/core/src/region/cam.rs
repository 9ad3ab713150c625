//! Contextual attention baseline: every pixel attends to every known pixel
//! through cosine similarity of the surrounding patches.

use rayon::prelude::*;

use super::cam_flops;
use crate::tensor::linalg::{gemm, MatRef};
use crate::tensor::{col2im, flops, im2col, lit, ConvSpec, Element, NdArray, Tensor};
use crate::{Error, Result};

pub const CAM_PATCH: usize = 3;
pub const CAM_SCALE: f64 = 10.0;

const CHUNK: usize = 512;
const NORM_EPS: f64 = 1e-6;

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    spec: ConvSpec,
}

impl Geometry {
    fn n(&self) -> usize {
        self.h * self.w
    }

    fn l(&self) -> usize {
        self.spec.patch_len()
    }
}

/// Scales the columns of `q` (`[l, n]`) to unit length; returns their norms.
fn normalize_columns<T: Element>(q: &mut [T], l: usize, n: usize) -> Vec<T> {
    let eps = lit::<T>(NORM_EPS);
    let mut norms = vec![T::zero(); n];
    for row in q.chunks(n).take(l) {
        for (s, &v) in norms.iter_mut().zip(row) {
            *s = *s + v * v;
        }
    }
    norms.iter_mut().for_each(|s| *s = s.sqrt());
    let inv: Vec<T> = norms.iter().map(|&s| T::one() / s.max(eps)).collect();
    for row in q.chunks_mut(n).take(l) {
        row.iter_mut().zip(&inv).for_each(|(v, &i)| *v = *v * i);
    }
    norms
}

fn gather_columns<T: Element>(src: &[T], rows: usize, n: usize, idx: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * idx.len());
    for r in 0..rows {
        out.extend(idx.iter().map(|&j| src[r * n + j]));
    }
    out
}

/// Softmax-normalized similarities of queries `i0..i0+m` against all contexts.
fn attention_block<T: Element>(q: &[T], k: &[T], geo: &Geometry, nv: usize, i0: usize, m: usize, scale: T, s: &mut [T]) {
    let (n, l) = (geo.n(), geo.l());
    let qb = MatRef::strided(&q[i0..], m, l, 1, n);
    gemm(scale, qb, MatRef::row_major(k, l, nv), T::zero(), s);
    for row in s.chunks_mut(nv).take(m) {
        let mx = row.iter().copied().fold(row[0], T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum = sum + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / sum);
    }
}

struct Prepared<T> {
    q: Vec<T>,
    norms: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
}

fn prepare<T: Element>(x: &[T], geo: &Geometry, valid: &[usize]) -> Prepared<T> {
    let (n, l) = (geo.n(), geo.l());
    let mut q = vec![T::zero(); l * n];
    im2col(x, geo.h, geo.w, &geo.spec, geo.h, geo.w, &mut q);
    let norms = normalize_columns(&mut q, l, n);
    let k = gather_columns(&q, l, n, valid);
    let v = gather_columns(x, geo.c, n, valid);
    Prepared { q, norms, k, v }
}

fn forward_image<T: Element>(x: &[T], geo: &Geometry, valid: &[usize], scale: T, out: &mut [T]) {
    let (n, c, nv) = (geo.n(), geo.c, valid.len());
    let p = prepare(x, geo, valid);
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let blocks: Vec<Vec<T>> = starts
        .par_iter()
        .map(|&i0| {
            let m = CHUNK.min(n - i0);
            let mut s = vec![T::zero(); m * nv];
            let mut ot = vec![T::zero(); m * c];
            attention_block(&p.q, &p.k, geo, nv, i0, m, scale, &mut s);
            gemm(T::one(), MatRef::row_major(&s, m, nv), MatRef::row_major(&p.v, c, nv).t(), T::zero(), &mut ot);
            ot
        })
        .collect();
    for (&i0, ot) in starts.iter().zip(&blocks) {
        for (i, row) in ot.chunks(c).enumerate() {
            for (ch, &v) in row.iter().enumerate() {
                out[ch * n + i0 + i] = v;
            }
        }
    }
}

fn backward_image<T: Element>(x: &[T], g: &[T], geo: &Geometry, valid: &[usize], scale: T, gx: &mut [T]) {
    let (n, l, c, nv) = (geo.n(), geo.l(), geo.c, valid.len());
    let p = prepare(x, geo, valid);
    let mut gqt = vec![T::zero(); n * l];
    let mut gk = vec![T::zero(); nv * l];
    let mut gv = vec![T::zero(); c * nv];
    let chunk = CHUNK.min(n);
    let mut a = vec![T::zero(); chunk * nv];
    let mut ga = vec![T::zero(); chunk * nv];
    let mut gt = vec![T::zero(); chunk * c];
    for i0 in (0..n).step_by(CHUNK) {
        let m = CHUNK.min(n - i0);
        attention_block(&p.q, &p.k, geo, nv, i0, m, scale, &mut a);
        for i in 0..m {
            for ch in 0..c {
                gt[i * c + ch] = g[ch * n + i0 + i];
            }
        }
        let a_m = MatRef::row_major(&a, m, nv);
        gemm(T::one(), MatRef::row_major(&gt, m, c), MatRef::row_major(&p.v, c, nv), T::zero(), &mut ga);
        gemm(T::one(), MatRef::strided(&g[i0..], c, m, n, 1), a_m, T::one(), &mut gv);
        for (ar, gr) in a.chunks(nv).zip(ga.chunks_mut(nv)).take(m) {
            let dot = ar.iter().zip(gr.iter()).fold(T::zero(), |s, (&x, &y)| s + x * y);
            gr.iter_mut().zip(ar).for_each(|(gs, &ai)| *gs = scale * ai * (*gs - dot));
        }
        let gs = MatRef::row_major(&ga, m, nv);
        gemm(T::one(), gs, MatRef::row_major(&p.k, l, nv).t(), T::zero(), &mut gqt[i0 * l..(i0 + m) * l]);
        gemm(T::one(), gs.t(), MatRef::strided(&p.q[i0..], m, l, 1, n), T::one(), &mut gk);
    }
    for (j, &pix) in valid.iter().enumerate() {
        for (d, &s) in gqt[pix * l..(pix + 1) * l].iter_mut().zip(&gk[j * l..(j + 1) * l]) {
            *d = *d + s;
        }
    }
    let eps = lit::<T>(NORM_EPS);
    let mut gcols = vec![T::zero(); l * n];
    for i in 0..n {
        let gq = &gqt[i * l..(i + 1) * l];
        let norm = p.norms[i];
        if norm > eps {
            let dot = (0..l).fold(T::zero(), |s, r| s + p.q[r * n + i] * gq[r]);
            for r in 0..l {
                gcols[r * n + i] = (gq[r] - p.q[r * n + i] * dot) / norm;
            }
        } else {
            for r in 0..l {
                gcols[r * n + i] = gq[r] / eps;
            }
        }
    }
    col2im(&gcols, geo.h, geo.w, &geo.spec, geo.h, geo.w, gx);
    for (j, &pix) in valid.iter().enumerate() {
        for ch in 0..c {
            gx[ch * n + pix] = gx[ch * n + pix] + gv[ch * nv + j];
        }
    }
}

/// Rebuilds every pixel of `x` (`[b, c, h, w]`) as a softmax-weighted sum of
/// the features at known pixels, weighted by the scaled cosine similarity of
/// their `patch × patch` neighbourhoods. `valid` is `[b, 1, h, w]`, 1 = known.
pub fn cam_forward<T: Element>(x: &Tensor<T>, valid: &NdArray<T>, patch: usize, scale: f64) -> Result<Tensor<T>> {
    let xs = x.shape();
    let [b, c, h, w] = xs[..] else {
        return Err(Error::shape("cam_forward", format!("input must be [b,c,h,w], got {xs:?}")));
    };
    if valid.shape() != [b, 1, h, w] {
        return Err(Error::shape(
            "cam_forward",
            format!("valid mask {:?} does not match input {xs:?}", valid.shape()),
        ));
    }
    if patch % 2 == 0 {
        return Err(Error::InvalidArgument(format!("patch size must be odd, got {patch}")));
    }
    let n = h * w;
    let mut contexts = Vec::with_capacity(b);
    for (bi, m) in valid.data().chunks(n).enumerate() {
        if m.iter().any(|&v| v != T::zero() && v != T::one()) {
            return Err(Error::InvalidArgument("valid mask must be binary".into()));
        }
        let idx: Vec<usize> = (0..n).filter(|&i| m[i] == T::one()).collect();
        if idx.is_empty() {
            return Err(Error::InvalidArgument(format!("image {bi} has no valid context pixels")));
        }
        contexts.push(idx);
    }
    let geo = Geometry { c, h, w, spec: ConvSpec::new(c, c, patch).padding(patch / 2) };
    let s = lit::<T>(scale);
    let mut out = NdArray::zeros(&[b, c, h, w]);
    {
        let xv = x.value();
        out.data_mut()
            .par_chunks_mut(c * n)
            .zip(xv.data().par_chunks(c * n))
            .zip(contexts.par_iter())
            .for_each(|((o, xi), idx)| forward_image(xi, &geo, idx, s, o));
    }
    let counts: Vec<usize> = contexts.iter().map(Vec::len).collect();
    flops::record(cam_flops(c, h, w, patch, &counts));
    Ok(Tensor::from_op("cam", out, &[x], move |args| {
        let mut gx = NdArray::zeros(&[b, c, h, w]);
        gx.data_mut()
            .par_chunks_mut(c * n)
            .zip(args.inputs[0].data().par_chunks(c * n))
            .zip(args.grad.data().par_chunks(c * n))
            .zip(contexts.par_iter())
            .for_each(|(((gxi, xi), gi), idx)| backward_image(xi, gi, &geo, idx, s, gxi));
        vec![Some(gx)]
    }))
}

/// Reduces a `[b, 1, H, W]` known-pixel mask by `factor`: a feature pixel is a
/// valid context when at least half of its block is known.
pub fn context_mask<T: Element>(mask: &NdArray<T>, factor: usize) -> Result<NdArray<T>> {
    let s = mask.shape();
    let [b, 1, hh, ww] = s[..] else {
        return Err(Error::shape("context_mask", format!("expected [b,1,h,w], got {s:?}")));
    };
    if factor == 0 || hh % factor != 0 || ww % factor != 0 {
        return Err(Error::NotDivisible { op: "context_mask", axis: "height or width", size: hh.max(ww), factor });
    }
    let (h, w) = (hh / factor, ww / factor);
    let area = (factor * factor) as f64;
    Ok(NdArray::from_fn(&[b, 1, h, w], |i| {
        let (bi, y, x) = (i / (h * w), i / w % h, i % w);
        let mut known = 0.0;
        for dy in 0..factor {
            for dx in 0..factor {
                known += mask.get(&[bi, 0, y * factor + dy, x * factor + dx]).to_f64();
            }
        }
        if known / area >= 0.5 { T::one() } else { T::zero() }
    }))
}
