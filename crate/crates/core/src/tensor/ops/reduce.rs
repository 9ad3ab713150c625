use crate::tensor::array::contiguous_strides;
use crate::tensor::broadcast::{broadcast_strides, for_each2};
use crate::tensor::{flops, Element, NdArray, Tensor};
use crate::{Error, Result};

impl<T: Element> Tensor<T> {
    /// Sum of all elements as a shape-`[]` scalar.
    pub fn sum(&self) -> Tensor<T> {
        let (value, shape) = {
            let v = self.value();
            (NdArray::scalar(v.sum()), v.shape().to_vec())
        };
        flops::record(self.numel() as u64);
        Tensor::from_op("sum", value, &[self], move |args| {
            vec![Some(NdArray::full(&shape, args.grad.data()[0]))]
        })
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel().max(1) as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    /// Sums over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let in_shape = self.shape();
        for &a in axes {
            if a >= in_shape.len() {
                return Err(Error::shape(
                    "sum_axes",
                    format!("axis {a} out of range for {:?}", in_shape),
                ));
            }
        }
        let mut out_shape = in_shape.clone();
        for &a in axes {
            out_shape[a] = 1;
        }
        let s_in = contiguous_strides(&in_shape);
        let s_out = broadcast_strides(&out_shape, &in_shape);
        let mut out = NdArray::zeros(&out_shape);
        {
            let v = self.value();
            let (x, od) = (v.data(), out.data_mut());
            for_each2(&in_shape, &s_in, &s_out, |_, i, o| od[o] += x[i]);
        }
        flops::record(self.numel() as u64);
        Ok(Tensor::from_op("sum_axes", out, &[self], move |args| {
            let g = args.grad.data();
            let mut gx = NdArray::zeros(&in_shape);
            let gd = gx.data_mut();
            for_each2(&in_shape, &s_in, &s_out, |_, i, o| gd[i] = g[o]);
            vec![Some(gx)]
        }))
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let shape = self.shape();
        let count: usize = axes.iter().map(|&a| shape.get(a).copied().unwrap_or(1)).product();
        Ok(self.sum_axes(axes)?.mul_scalar(1.0 / count.max(1) as f64))
    }

    /// Mean over the spatial axes of a `[b, c, h, w]` tensor, giving `[b, c, 1, 1]`.
    pub fn global_avg_pool(&self) -> Result<Tensor<T>> {
        if self.shape().len() != 4 {
            return Err(Error::shape(
                "global_avg_pool",
                format!("expected [b,c,h,w], got {:?}", self.shape()),
            ));
        }
        self.mean_axes(&[2, 3])
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_axes_keeps_dims() {
        let x = Tensor::<f64>::parameter(NdArray::from_fn(&[2, 3, 2], |i| i as f64));
        let y = x.sum_axes(&[1]).unwrap();
        assert_eq!(y.shape(), vec![2, 1, 2]);
        assert_eq!(y.value().data(), &[6., 9., 24., 27.]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1.0; 12]);
    }

    #[test]
    fn global_avg_pool_is_spatial_mean() {
        let x = Tensor::<f64>::constant(NdArray::from_fn(&[1, 2, 2, 2], |i| i as f64));
        let y = x.global_avg_pool().unwrap();
        assert_eq!(y.shape(), vec![1, 2, 1, 1]);
        assert_eq!(y.value().data(), &[1.5, 5.5]);
    }

    #[test]
    fn mean_of_all() {
        let x = Tensor::<f64>::constant(NdArray::from_fn(&[4], |i| i as f64));
        assert_eq!(x.mean().item(), 1.5);
    }
}
