//! Dense row-major `f64` tensors with the handful of operations the gating
//! network needs.

use crate::error::{Error, Result};

/// Ordered list of positive extents.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(extents: impl Into<Vec<usize>>) -> Result<Self> {
        let extents = extents.into();
        if extents.is_empty() || extents.contains(&0) {
            return Err(Error::InvalidShape(extents));
        }
        Ok(Shape(extents))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.0[i + 1];
        }
        s
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", parts.join("x"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from external data, checking length and finiteness.
    pub fn new(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape} needs {} values, got {}", shape.numel(), data.len()),
            ));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for results of already-validated computations.
    pub(crate) fn from_raw(dims: &[usize], data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor {
            shape: Shape(dims.to_vec()),
            data,
        }
    }

    pub fn full(dims: &[usize], value: f64) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let n = shape.numel();
        Tensor::new(dims, vec![value; n])
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Tensor::full(dims, 0.0)
    }

    pub fn ones(dims: &[usize]) -> Result<Self> {
        Tensor::full(dims, 1.0)
    }

    pub fn zeros_like(&self) -> Self {
        Tensor::from_raw(self.dims(), vec![0.0; self.numel()])
    }

    /// Fills a tensor from its row-major flat index.
    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> f64) -> Result<Self> {
        let n = Shape::new(dims)?.numel();
        Tensor::new(dims, (0..n).map(&mut f).collect())
    }

    /// Identity stack `w[b] = I_d`, shape `[b, d, d]`.
    pub fn identity_stack(b: usize, d: usize) -> Result<Self> {
        Tensor::from_fn(&[b, d, d], |i| {
            let r = (i / d) % d;
            let c = i % d;
            if r == c {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.rank(), "index rank");
        let mut off = 0;
        for (i, (&ix, &d)) in index.iter().zip(self.dims()).enumerate() {
            assert!(ix < d, "index {ix} out of range on axis {i}");
            off = off * d + ix;
        }
        off
    }

    /// Same values in row-major order under a new shape.
    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        self.clone().into_reshape(dims)
    }

    /// Consuming reshape; no data is copied.
    pub fn into_reshape(self, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("{} -> {shape}: element counts differ", self.shape),
            ));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    /// Axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let rank = self.shape.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape(
                "permute",
                format!("{axes:?} is not a permutation of {rank} axes"),
            ));
        }
        let in_strides = self.shape.strides();
        let out_dims: Vec<usize> = axes.iter().map(|&a| self.dims()[a]).collect();
        let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut out = Vec::with_capacity(self.numel());
        let mut idx = vec![0usize; rank];
        let mut src = 0usize;
        for _ in 0..self.numel() {
            out.push(self.data[src]);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                src += strides[ax];
                if idx[ax] < out_dims[ax] {
                    break;
                }
                src -= strides[ax] * out_dims[ax];
                idx[ax] = 0;
            }
        }
        Ok(Tensor::from_raw(&out_dims, out))
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, format!("{} vs {}", self.shape, other.shape)));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_shape(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor::from_raw(self.dims(), data))
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "axpy", |a, b| a + s * b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor::from_raw(self.dims(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Adds `bias` to every trailing block whose shape equals `bias`'s shape.
    pub fn broadcast_add_bias(&self, bias: &Tensor) -> Result<Self> {
        let tail = self.trailing_block(bias.dims(), "broadcast_add_bias")?;
        let mut data = self.data.clone();
        for block in data.chunks_exact_mut(tail) {
            for (v, b) in block.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(Tensor::from_raw(self.dims(), data))
    }

    /// Sums over all leading axes, keeping the trailing `dims` (bias gradients).
    pub fn sum_to_trailing(&self, dims: &[usize]) -> Result<Self> {
        let tail = self.trailing_block(dims, "sum_to_trailing")?;
        let mut out = vec![0.0; tail];
        for block in self.data.chunks_exact(tail) {
            for (o, v) in out.iter_mut().zip(block) {
                *o += v;
            }
        }
        Ok(Tensor::from_raw(dims, out))
    }

    fn trailing_block(&self, dims: &[usize], op: &'static str) -> Result<usize> {
        let r = self.shape.rank();
        if dims.len() > r || self.dims()[r - dims.len()..] != *dims {
            return Err(Error::shape(
                op,
                format!("trailing dims {dims:?} do not match {}", self.shape),
            ));
        }
        Ok(dims.iter().product())
    }

    fn contraction_dims(&self, w: &Tensor) -> Result<(usize, usize, usize, usize)> {
        let r = self.shape.rank();
        if r < 2 || w.shape.rank() != 3 {
            return Err(Error::shape(
                "einstein_contract",
                format!("need a[..., B, D] and w[B, D, D'], got {} and {}", self.shape, w.shape),
            ));
        }
        let (b, d) = (self.dims()[r - 2], self.dims()[r - 1]);
        let wd = w.dims();
        if wd[0] != b || wd[1] != d {
            return Err(Error::shape(
                "einstein_contract",
                format!("a trailing [{b}, {d}] vs w {}", w.shape),
            ));
        }
        Ok((self.numel() / (b * d), b, d, wd[2]))
    }

    /// `out[..., b, e] = sum_d self[..., b, d] * w[b, d, e]`, summed in
    /// ascending `d`.
    pub fn einstein_contract(&self, w: &Tensor) -> Result<Self> {
        let (lead, nb, nd, ne) = self.contraction_dims(w)?;
        let mut out = vec![0.0; lead * nb * ne];
        for l in 0..lead {
            for b in 0..nb {
                let a = &self.data[(l * nb + b) * nd..][..nd];
                let wb = &w.data[b * nd * ne..][..nd * ne];
                let o = &mut out[(l * nb + b) * ne..][..ne];
                for (e, slot) in o.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for d in 0..nd {
                        acc += a[d] * wb[d * ne + e];
                    }
                    *slot = acc;
                }
            }
        }
        let mut dims = self.dims().to_vec();
        *dims.last_mut().unwrap() = ne;
        Ok(Tensor::from_raw(&dims, out))
    }

    /// Vector-Jacobian product of [`Tensor::einstein_contract`]: given the
    /// upstream gradient `g` of shape `[..., B, D']`, returns the gradients
    /// with respect to `self` and `w`.
    pub fn einstein_contract_vjp(&self, w: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
        let (lead, nb, nd, ne) = self.contraction_dims(w)?;
        let mut expect = self.dims().to_vec();
        *expect.last_mut().unwrap() = ne;
        if g.dims() != expect.as_slice() {
            return Err(Error::shape(
                "einstein_contract_vjp",
                format!("upstream {} vs expected {expect:?}", g.shape),
            ));
        }
        let mut ga = vec![0.0; self.numel()];
        let mut gw = vec![0.0; w.numel()];
        for l in 0..lead {
            for b in 0..nb {
                let a = &self.data[(l * nb + b) * nd..][..nd];
                let gr = &g.data[(l * nb + b) * ne..][..ne];
                let wb = &w.data[b * nd * ne..][..nd * ne];
                let gab = &mut ga[(l * nb + b) * nd..][..nd];
                for d in 0..nd {
                    let mut acc = 0.0;
                    for e in 0..ne {
                        acc += gr[e] * wb[d * ne + e];
                    }
                    gab[d] = acc;
                }
                let gwb = &mut gw[b * nd * ne..][..nd * ne];
                for d in 0..nd {
                    for e in 0..ne {
                        gwb[d * ne + e] += a[d] * gr[e];
                    }
                }
            }
        }
        Ok((
            Tensor::from_raw(self.dims(), ga),
            Tensor::from_raw(w.dims(), gw),
        ))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// `||self - other||^2 / ||other||^2`.
    pub fn relative_mse(&self, reference: &Tensor) -> Result<f64> {
        let diff = self.sub(reference)?.sum_sq();
        let norm = reference.sum_sq();
        Ok(if norm == 0.0 { diff } else { diff / norm })
    }

    /// Extracts `index` along axis 0 as a tensor of rank `r - 1` (or `[1]`).
    pub fn slice0(&self, index: usize) -> Self {
        let n0 = self.dims()[0];
        assert!(index < n0);
        let block = self.numel() / n0;
        let dims = if self.shape.rank() == 1 {
            vec![1]
        } else {
            self.dims()[1..].to_vec()
        };
        Tensor::from_raw(&dims, self.data[index * block..][..block].to_vec())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("stack", "no tensors to stack"))?;
        let mut data = Vec::with_capacity(first.numel() * parts.len());
        for p in parts {
            first.same_shape(p, "stack")?;
            data.extend_from_slice(&p.data);
        }
        let mut dims = vec![parts.len()];
        dims.extend_from_slice(first.dims());
        Ok(Tensor::from_raw(&dims, data))
    }
}

/// Convenience free functions mirroring the methods.
pub fn reshape(t: &Tensor, shape: &Shape) -> Result<Tensor> {
    t.reshape(shape.dims())
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.hadamard(b)
}

pub fn einstein_contract(a: &Tensor, w: &Tensor) -> Result<Tensor> {
    a.einstein_contract(w)
}

pub fn broadcast_add_bias(a: &Tensor, bias: &Tensor) -> Result<Tensor> {
    a.broadcast_add_bias(bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(dims, v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        assert!(matches!(Tensor::new(&[0], vec![]), Err(Error::InvalidShape(_))));
        assert!(matches!(Tensor::new(&[], vec![]), Err(Error::InvalidShape(_))));
        assert!(matches!(
            Tensor::new(&[2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn reshape_relabels() {
        let a = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let b = a.reshape(&[3, 2]).unwrap();
        assert_eq!(b.data(), a.data());
        assert_eq!(b.dims(), &[3, 2]);
        assert!(matches!(a.reshape(&[4]), Err(Error::ShapeMismatch { .. })));
        let c = Tensor::from_fn(&[6], |i| i as f64).unwrap();
        assert_eq!(c.reshape(&[2, 3]).unwrap().reshape(&[6]).unwrap(), c);
    }

    #[test]
    fn channel_split_index() {
        let x = Tensor::from_fn(&[4, 4, 64], |i| i as f64).unwrap();
        let y = x.reshape(&[4, 4, 16, 4]).unwrap();
        assert_eq!(y.get(&[0, 0, 1, 1]), x.get(&[0, 0, 5]));
    }

    #[test]
    fn hadamard_examples() {
        assert_eq!(t(&[1], &[2.]).hadamard(&t(&[1], &[3.])).unwrap().data(), &[6.]);
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 2], &[5., 6., 7., 8.]);
        assert_eq!(a.hadamard(&b).unwrap().data(), &[5., 12., 21., 32.]);
        assert_eq!(a.hadamard(&Tensor::ones(&[2, 2]).unwrap()).unwrap(), a);
        assert!(a.hadamard(&t(&[4], &[1.; 4])).is_err());
    }

    #[test]
    fn arithmetic() {
        let a = t(&[3], &[1., -2., 4.]);
        assert_eq!(a.scale(1.0), a);
        assert_eq!(a.add(&a.zeros_like()).unwrap(), a);
        assert_eq!(t(&[1], &[3.]).sub(&t(&[1], &[1.])).unwrap().data(), &[2.]);
    }

    #[test]
    fn bias_broadcast() {
        let a = t(&[2, 3], &[1., 1., 1., 2., 2., 2.]);
        let b = t(&[3], &[1., 2., 3.]);
        assert_eq!(a.broadcast_add_bias(&b).unwrap().data(), &[2., 3., 4., 3., 4., 5.]);
        assert_eq!(a.broadcast_add_bias(&Tensor::zeros(&[3]).unwrap()).unwrap(), a);
        let big = Tensor::zeros(&[2, 6, 4, 4, 3]).unwrap();
        let bias = Tensor::from_fn(&[4, 3], |i| i as f64).unwrap();
        let out = big.broadcast_add_bias(&bias).unwrap();
        assert_eq!(out.get(&[1, 5, 2, 3, 1]), bias.get(&[3, 1]));
        assert!(a.broadcast_add_bias(&t(&[2], &[0., 0.])).is_err());
    }

    #[test]
    fn contraction_examples() {
        let a = t(&[1, 2], &[1., 2.]);
        let id = Tensor::identity_stack(1, 2).unwrap();
        assert_eq!(a.einstein_contract(&id).unwrap(), a);
        let swap = t(&[1, 2, 2], &[0., 1., 1., 0.]);
        assert_eq!(a.einstein_contract(&swap).unwrap().data(), &[2., 1.]);
        let ones = t(&[1, 2, 2], &[1.; 4]);
        assert_eq!(a.einstein_contract(&ones).unwrap().data(), &[3., 3.]);
        assert!(a.einstein_contract(&Tensor::zeros(&[2, 2, 2]).unwrap()).is_err());
    }

    #[test]
    fn contraction_changes_trailing_extent() {
        let a = Tensor::from_fn(&[3, 2, 4], |i| i as f64).unwrap();
        let w = Tensor::from_fn(&[2, 4, 5], |i| (i % 7) as f64).unwrap();
        let y = a.einstein_contract(&w).unwrap();
        assert_eq!(y.dims(), &[3, 2, 5]);
        let mut expect = 0.0;
        for d in 0..4 {
            expect += a.get(&[2, 1, d]) * w.get(&[1, d, 3]);
        }
        assert_eq!(y.get(&[2, 1, 3]), expect);
    }

    #[test]
    fn contraction_vjp_matches_dot_products() {
        let a = Tensor::from_fn(&[2, 3, 2, 3], |i| ((i * 37) % 11) as f64 - 5.0).unwrap();
        let w = Tensor::from_fn(&[2, 3, 4], |i| ((i * 13) % 7) as f64 - 3.0).unwrap();
        let g = Tensor::from_fn(&[2, 3, 2, 4], |i| ((i * 17) % 5) as f64 - 2.0).unwrap();
        let (ga, gw) = a.einstein_contract_vjp(&w, &g).unwrap();
        // <g, C(a, w)> is bilinear, so <ga, a> and <gw, w> both reproduce it.
        let f = a.einstein_contract(&w).unwrap().dot(&g).unwrap();
        assert_eq!(ga.dot(&a).unwrap(), f);
        assert_eq!(gw.dot(&w).unwrap(), f);
    }

    #[test]
    fn permute_roundtrip() {
        let x = Tensor::from_fn(&[2, 3, 4, 5], |i| i as f64).unwrap();
        let p = x.permute(&[2, 0, 3, 1]).unwrap();
        assert_eq!(p.dims(), &[4, 2, 5, 3]);
        assert_eq!(p.get(&[3, 1, 4, 2]), x.get(&[1, 2, 3, 4]));
        let back = p.permute(&[1, 3, 0, 2]).unwrap();
        assert_eq!(back, x);
        assert!(x.permute(&[0, 0, 1, 2]).is_err());
    }

    #[test]
    fn sum_to_trailing_reduces_leading_axes() {
        let x = Tensor::from_fn(&[3, 2, 2], |i| i as f64).unwrap();
        let s = x.sum_to_trailing(&[2, 2]).unwrap();
        assert_eq!(s.data(), &[12., 15., 18., 21.]);
    }

    #[test]
    fn shape_display_and_strides() {
        let s = Shape::new(vec![2, 3, 4]).unwrap();
        assert_eq!(s.to_string(), "[2x3x4]");
        assert_eq!(s.strides(), vec![12, 4, 1]);
        assert_eq!(s, Shape::new(vec![2, 3, 4]).unwrap());
    }
}
