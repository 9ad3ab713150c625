use crate::tensor::array::numel;
use crate::tensor::{flops, Element, NdArray, Tensor};
use crate::{Error, Result};

impl<T: Element> Tensor<T> {
    /// Max-shifted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let mut out = self.to_array();
        {
            let d = out.data_mut();
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut m = d[base];
                    for k in 1..len {
                        m = m.max(d[base + k * inner]);
                    }
                    let mut s = T::zero();
                    for k in 0..len {
                        let e = (d[base + k * inner] - m).exp();
                        d[base + k * inner] = e;
                        s += e;
                    }
                    for k in 0..len {
                        d[base + k * inner] /= s;
                    }
                }
            }
        }
        flops::record(flops::SOFTMAX_PER_ELEMENT * out.numel() as u64);
        Ok(Tensor::from_op("softmax", out, &[self], move |args| {
            let (y, g) = (args.output.data(), args.grad.data());
            let mut gx = NdArray::zeros(args.output.shape());
            let gd = gx.data_mut();
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut dot = T::zero();
                    for k in 0..len {
                        dot += g[base + k * inner] * y[base + k * inner];
                    }
                    for k in 0..len {
                        let j = base + k * inner;
                        gd[j] = y[j] * (g[j] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }))
    }

    /// Softmax over axis 1 of a `[b, n, h, w]` map: a distribution over the
    /// `n` channels at every pixel.
    pub fn softmax_over_channels(&self) -> Result<Tensor<T>> {
        if self.shape().len() != 4 {
            return Err(Error::shape(
                "softmax_over_channels",
                format!("expected [b,n,h,w], got {:?}", self.shape()),
            ));
        }
        self.softmax(1)
    }
}
