use crate::tensor::array::{contiguous_strides, numel};
use crate::tensor::broadcast::for_each2;
use crate::tensor::{Element, NdArray, Tensor};
use crate::{Error, Result};

impl<T: Element> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let in_shape = self.shape();
        let value = self.to_array().reshape(shape)?;
        Ok(Tensor::from_op("reshape", value, &[self], move |args| {
            vec![Some(args.grad.clone().reshape(&in_shape).expect("element count preserved"))]
        }))
    }

    /// Reorders axes: output axis `i` is input axis `dims[i]`.
    pub fn permute(&self, dims: &[usize]) -> Result<Tensor<T>> {
        let in_shape = self.shape();
        let nd = in_shape.len();
        let mut seen = vec![false; nd];
        if dims.len() != nd || dims.iter().any(|&d| d >= nd || std::mem::replace(&mut seen[d], true)) {
            return Err(Error::shape(
                "permute",
                format!("{dims:?} is not a permutation of {nd} axes"),
            ));
        }
        let out_shape: Vec<usize> = dims.iter().map(|&d| in_shape[d]).collect();
        let in_strides = contiguous_strides(&in_shape);
        let gather: Vec<usize> = dims.iter().map(|&d| in_strides[d]).collect();
        let out_strides = contiguous_strides(&out_shape);
        let mut out = NdArray::zeros(&out_shape);
        {
            let v = self.value();
            let (x, od) = (v.data(), out.data_mut());
            for_each2(&out_shape, &out_strides, &gather, |o, _, i| od[o] = x[i]);
        }
        Ok(Tensor::from_op("permute", out, &[self], move |args| {
            let g = args.grad.data();
            let mut gx = NdArray::zeros(&in_shape);
            let gd = gx.data_mut();
            for_each2(&out_shape, &out_strides, &gather, |o, _, i| gd[i] = g[o]);
            vec![Some(gx)]
        }))
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?
            .shape();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut lens = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} does not match {first:?} off axis {axis}"),
                ));
            }
            lens.push(s[axis]);
        }
        let outer = numel(&first[..axis]);
        let inner = numel(&first[axis + 1..]);
        let total: usize = lens.iter().sum();
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let mut out = Vec::with_capacity(numel(&out_shape));
        {
            let guards: Vec<_> = parts.iter().map(|p| p.value()).collect();
            for o in 0..outer {
                for (g, &len) in guards.iter().zip(&lens) {
                    out.extend_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
            }
        }
        let value = NdArray::new(&out_shape, out)?;
        Ok(Tensor::from_op("concat", value, parts, move |args| {
            let g = args.grad.data();
            let mut offset = 0;
            let mut grads = Vec::with_capacity(lens.len());
            for (k, &len) in lens.iter().enumerate() {
                if !args.needs[k] {
                    grads.push(None);
                    offset += len;
                    continue;
                }
                let mut gd = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let start = (o * total + offset) * inner;
                    gd.extend_from_slice(&g[start..start + len * inner]);
                }
                grads.push(Some(NdArray::new(args.inputs[k].shape(), gd).expect("slice shape")));
                offset += len;
            }
            grads
        }))
    }

    /// The sub-range `start..start + len` of `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let in_shape = self.shape();
        if axis >= in_shape.len() || start + len > in_shape[axis] {
            return Err(Error::shape(
                "narrow",
                format!("range {start}..{} on axis {axis} of {in_shape:?}", start + len),
            ));
        }
        let outer = numel(&in_shape[..axis]);
        let inner = numel(&in_shape[axis + 1..]);
        let full = in_shape[axis];
        let mut out_shape = in_shape.clone();
        out_shape[axis] = len;
        let mut out = Vec::with_capacity(numel(&out_shape));
        {
            let v = self.value();
            for o in 0..outer {
                let s = (o * full + start) * inner;
                out.extend_from_slice(&v.data()[s..s + len * inner]);
            }
        }
        let value = NdArray::new(&out_shape, out)?;
        Ok(Tensor::from_op("narrow", value, &[self], move |args| {
            let g = args.grad.data();
            let mut gx = NdArray::zeros(&in_shape);
            let gd = gx.data_mut();
            for o in 0..outer {
                let s = (o * full + start) * inner;
                gd[s..s + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(gx)]
        }))
    }
}
