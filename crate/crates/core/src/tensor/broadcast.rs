//! Index arithmetic for numpy-style broadcasting.

use super::array::contiguous_strides;

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `src` expressed in the index space of `out`; broadcast axes get 0.
pub(crate) fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let nd = out.len();
    let base = contiguous_strides(src);
    (0..nd)
        .map(|i| {
            if i + src.len() < nd {
                0
            } else {
                let j = i + src.len() - nd;
                if src[j] == 1 && out[i] != 1 {
                    0
                } else {
                    base[j]
                }
            }
        })
        .collect()
}

/// Walks every index of `out` in row-major order, calling `f(o, ia, ib)` with the
/// flat output offset and the offsets into two operands described by strides.
pub(crate) fn for_each2(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = out.iter().product();
    if n == 0 {
        return;
    }
    let nd = out.len();
    if nd == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out[nd - 1];
    let (isa, isb) = (sa[nd - 1], sb[nd - 1]);
    let mut idx = vec![0usize; nd];
    let (mut ia, mut ib, mut o) = (0usize, 0usize, 0usize);
    loop {
        for k in 0..inner {
            f(o + k, ia + k * isa, ib + k * isb);
        }
        o += inner;
        if o >= n {
            return;
        }
        let mut d = nd - 1;
        loop {
            d -= 1;
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}
