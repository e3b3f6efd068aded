use std::ops::{Add, Div, Mul, Neg, Sub};

use ndarray::{concatenate, ArrayD, Axis, Ix2, IxDyn, Slice};

use super::{Tensor, Var};
use crate::scalar::Scalar;

/// Reduces a broadcast gradient back to `shape` by summing the expanded axes.
pub fn sum_to_shape<S: Scalar>(g: &Tensor<S>, shape: &[usize]) -> Tensor<S> {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = g.clone();
    while out.ndim() > shape.len() {
        out = out.sum_axis(Axis(0));
    }
    for (ax, &d) in shape.iter().enumerate() {
        if d == 1 && out.shape()[ax] != 1 {
            out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    out
}

fn standard<S: Scalar>(t: &Tensor<S>) -> Tensor<S> {
    t.as_standard_layout().into_owned()
}

impl<S: Scalar> Var<S> {
    fn unary<F, D>(&self, f: F, df: D) -> Var<S>
    where
        F: Fn(S) -> S,
        D: Fn(S, S) -> S + 'static,
    {
        let value = self.value().mapv(f);
        let x = self.value().clone();
        let y = value.clone();
        Var::from_op(value, vec![self.clone()], move |g| {
            let mut out = g.clone();
            ndarray::Zip::from(&mut out)
                .and(&x)
                .and(&y)
                .for_each(|o, &xi, &yi| *o = *o * df(xi, yi));
            vec![Some(out)]
        })
    }

    pub fn add_var(&self, other: &Var<S>) -> Var<S> {
        let value = self.value() + other.value();
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Var::from_op(value, vec![self.clone(), other.clone()], move |g| {
            vec![Some(sum_to_shape(g, &sa)), Some(sum_to_shape(g, &sb))]
        })
    }

    pub fn sub_var(&self, other: &Var<S>) -> Var<S> {
        let value = self.value() - other.value();
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        Var::from_op(value, vec![self.clone(), other.clone()], move |g| {
            vec![Some(sum_to_shape(g, &sa)), Some(sum_to_shape(&g.mapv(|x| -x), &sb))]
        })
    }

    pub fn mul_var(&self, other: &Var<S>) -> Var<S> {
        let value = self.value() * other.value();
        let (a, b) = (self.value().clone(), other.value().clone());
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Var::from_op(value, vec![self.clone(), other.clone()], move |g| {
            vec![
                ra.then(|| sum_to_shape(&(g * &b), a.shape())),
                rb.then(|| sum_to_shape(&(g * &a), b.shape())),
            ]
        })
    }

    pub fn div_var(&self, other: &Var<S>) -> Var<S> {
        let value = self.value() / other.value();
        let (a, b) = (self.value().clone(), other.value().clone());
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Var::from_op(value, vec![self.clone(), other.clone()], move |g| {
            let ga = ra.then(|| sum_to_shape(&(g / &b), a.shape()));
            let gb = rb.then(|| {
                let t = &(g * &a) / &(&b * &b);
                sum_to_shape(&t.mapv(|x| -x), b.shape())
            });
            vec![ga, gb]
        })
    }

    pub fn scale(&self, k: S) -> Var<S> {
        let value = self.value().mapv(|x| x * k);
        Var::from_op(value, vec![self.clone()], move |g| vec![Some(g.mapv(|x| x * k))])
    }

    pub fn add_scalar(&self, k: S) -> Var<S> {
        let value = self.value().mapv(|x| x + k);
        Var::from_op(value, vec![self.clone()], move |g| vec![Some(g.clone())])
    }

    pub fn square(&self) -> Var<S> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    /// Square root; the derivative at exactly zero is taken as zero.
    pub fn sqrt(&self) -> Var<S> {
        self.unary(
            |x| x.sqrt(),
            |_, y| if y > S::zero() { S::c(0.5) / y } else { S::zero() },
        )
    }

    pub fn abs(&self) -> Var<S> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > S::zero() {
                    S::one()
                } else if x < S::zero() {
                    -S::one()
                } else {
                    S::zero()
                }
            },
        )
    }

    pub fn ln(&self) -> Var<S> {
        self.unary(|x| x.ln(), |x, _| S::one() / x)
    }

    pub fn exp(&self) -> Var<S> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn tanh(&self) -> Var<S> {
        self.unary(|x| x.tanh(), |_, y| S::one() - y * y)
    }

    pub fn sigmoid(&self) -> Var<S> {
        self.unary(sigmoid, |_, y| y * (S::one() - y))
    }

    pub fn relu(&self) -> Var<S> {
        self.leaky_relu(S::zero())
    }

    pub fn leaky_relu(&self, slope: S) -> Var<S> {
        self.unary(
            move |x| if x > S::zero() { x } else { x * slope },
            move |x, _| if x > S::zero() { S::one() } else { slope },
        )
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&self) -> Var<S> {
        self.unary(
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (S::one() + x * (S::one() - s))
            },
        )
    }

    /// Sum of all elements as a 0-d tensor.
    pub fn sum(&self) -> Var<S> {
        let value = ArrayD::from_elem(IxDyn(&[]), self.value().sum());
        let shape = self.value().raw_dim();
        Var::from_op(value, vec![self.clone()], move |g| {
            let gv = *g.iter().next().unwrap();
            vec![Some(ArrayD::from_elem(shape.clone(), gv))]
        })
    }

    pub fn mean(&self) -> Var<S> {
        let n = self.value().len().max(1);
        self.sum().scale(S::one() / S::from_usize_lossy(n))
    }

    /// Sums over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes_keep(&self, axes: &[usize]) -> Var<S> {
        let mut value = self.value().clone();
        for &ax in axes {
            value = value.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
        let shape = self.value().raw_dim();
        Var::from_op(value, vec![self.clone()], move |g| {
            vec![Some(g.broadcast(shape.clone()).expect("broadcast").to_owned())]
        })
    }

    pub fn mean_axes_keep(&self, axes: &[usize]) -> Var<S> {
        let count: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_axes_keep(axes).scale(S::one() / S::from_usize_lossy(count.max(1)))
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<S> {
        let old = self.shape().to_vec();
        let value = standard(self.value())
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: element count mismatch");
        Var::from_op(value, vec![self.clone()], move |g| {
            vec![Some(standard(g).into_shape_with_order(IxDyn(&old)).expect("reshape back"))]
        })
    }

    pub fn permute(&self, axes: &[usize]) -> Var<S> {
        let value = standard(&self.value().clone().permuted_axes(IxDyn(axes)));
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Var::from_op(value, vec![self.clone()], move |g| {
            vec![Some(standard(&g.clone().permuted_axes(IxDyn(&inverse))))]
        })
    }

    pub fn concat(axis: usize, parts: &[Var<S>]) -> Var<S> {
        let views: Vec<_> = parts.iter().map(|p| p.value().view()).collect();
        let value = concatenate(Axis(axis), &views).expect("concat: incompatible shapes");
        let sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        Var::from_op(value, parts.to_vec(), move |g| {
            let mut start = 0;
            sizes
                .iter()
                .map(|&len| {
                    let piece = g
                        .slice_axis(Axis(axis), Slice::from(start..start + len))
                        .to_owned();
                    start += len;
                    Some(piece)
                })
                .collect()
        })
    }

    /// Contiguous sub-range along one axis.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var<S> {
        let value = self
            .value()
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        let shape = self.value().raw_dim();
        Var::from_op(value, vec![self.clone()], move |g| {
            let mut out = ArrayD::zeros(shape.clone());
            out.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                .assign(g);
            vec![Some(out)]
        })
    }

    /// Matrix product of two 2-d tensors.
    pub fn matmul(&self, other: &Var<S>) -> Var<S> {
        let a = self.value().view().into_dimensionality::<Ix2>().expect("matmul lhs must be 2-d");
        let b = other.value().view().into_dimensionality::<Ix2>().expect("matmul rhs must be 2-d");
        assert_eq!(a.ncols(), b.nrows(), "matmul inner dimensions differ");
        let value = a.dot(&b).into_dyn();
        let (a, b) = (a.to_owned(), b.to_owned());
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Var::from_op(value, vec![self.clone(), other.clone()], move |g| {
            let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
            vec![
                ra.then(|| g2.dot(&b.t()).into_dyn()),
                rb.then(|| a.t().dot(&g2).into_dyn()),
            ]
        })
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $impl:ident) => {
        impl<S: Scalar> $trait<&Var<S>> for &Var<S> {
            type Output = Var<S>;
            fn $method(self, rhs: &Var<S>) -> Var<S> {
                self.$impl(rhs)
            }
        }
        impl<S: Scalar> $trait<Var<S>> for Var<S> {
            type Output = Var<S>;
            fn $method(self, rhs: Var<S>) -> Var<S> {
                (&self).$impl(&rhs)
            }
        }
        impl<S: Scalar> $trait<&Var<S>> for Var<S> {
            type Output = Var<S>;
            fn $method(self, rhs: &Var<S>) -> Var<S> {
                (&self).$impl(rhs)
            }
        }
    };
}

binop!(Add, add, add_var);
binop!(Sub, sub, sub_var);
binop!(Mul, mul, mul_var);
binop!(Div, div, div_var);

impl<S: Scalar> Neg for &Var<S> {
    type Output = Var<S>;
    fn neg(self) -> Var<S> {
        self.scale(-S::one())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn leaf(a: ArrayD<f64>) -> Var<f64> {
        Var::leaf(a)
    }

    #[test]
    fn broadcast_add_reduces_gradient() {
        let a = leaf(array![[1.0, 2.0], [3.0, 4.0]].into_dyn());
        let b = leaf(array![[10.0, 20.0]].into_dyn());
        let y = (&a + &b).sum();
        let g = y.backward();
        assert_eq!(g.get(&b).unwrap(), &array![[2.0, 2.0]].into_dyn());
        assert_eq!(g.get(&a).unwrap(), &ArrayD::from_elem(IxDyn(&[2, 2]), 1.0));
    }

    #[test]
    fn product_rule_on_shared_input() {
        let x = leaf(array![3.0].into_dyn());
        let y = (&x * &x).sum();
        assert_eq!(y.backward().get(&x).unwrap()[[0]], 6.0);
    }

    #[test]
    fn matmul_gradients() {
        let a = leaf(array![[1.0, 2.0], [3.0, 4.0]].into_dyn());
        let b = leaf(array![[1.0], [-1.0]].into_dyn());
        let g = a.matmul(&b).sum().backward();
        assert_eq!(g.get(&a).unwrap(), &array![[1.0, -1.0], [1.0, -1.0]].into_dyn());
        assert_eq!(g.get(&b).unwrap(), &array![[4.0], [6.0]].into_dyn());
    }

    #[test]
    fn concat_and_narrow_route_gradients() {
        let a = leaf(array![1.0, 2.0].into_dyn());
        let b = leaf(array![3.0].into_dyn());
        let c = Var::concat(0, &[a.clone(), b.clone()]);
        let y = c.narrow(0, 1, 2).scale(2.0).sum();
        let g = y.backward();
        assert_eq!(g.get(&a).unwrap(), &array![0.0, 2.0].into_dyn());
        assert_eq!(g.get(&b).unwrap(), &array![2.0].into_dyn());
    }

    #[test]
    fn permute_roundtrip_gradient() {
        let a = leaf(ArrayD::from_shape_vec(IxDyn(&[2, 3]), (0..6).map(f64::from).collect()).unwrap());
        let w = Var::constant(ArrayD::from_shape_vec(IxDyn(&[3, 2]), (0..6).map(f64::from).collect()).unwrap());
        let y = (&a.permute(&[1, 0]) * &w).sum();
        let g = y.backward();
        assert_eq!(g.get(&a).unwrap(), &w.value().clone().permuted_axes(IxDyn(&[1, 0])));
    }

    #[test]
    fn constants_record_no_graph() {
        let a = Var::constant(array![1.0f32, 2.0].into_dyn());
        let y = (&a * &a).sum();
        assert!(!y.requires_grad());
    }

    #[test]
    fn sqrt_at_zero_has_zero_gradient() {
        let x = leaf(array![0.0, 4.0].into_dyn());
        let g = x.sqrt().sum().backward();
        assert_eq!(g.get(&x).unwrap(), &array![0.0, 0.25].into_dyn());
    }
}
