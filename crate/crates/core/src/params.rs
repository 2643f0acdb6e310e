//! Parameter containers generic over their leaf type.
//!
//! Every block is stored as `Foo<Tensor>` and rebound for one training step
//! as `Foo<Var>` on a fresh tape; gradients come back as `Foo<Tensor>`. The
//! order in which `try_map` visits leaves is the canonical flat order used by
//! Adam, and the dotted names it passes are the checkpoint block names.

use std::convert::Infallible;

use dbp_autodiff::{Gradients, Tape, Tensor, Var};
use rand::Rng;

use crate::error::Result;

pub trait ParamTree {
    type Leaf;
    type With<U>: ParamTree<Leaf = U>;

    #[allow(clippy::type_complexity)]
    fn try_map<U, E>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Self::Leaf) -> std::result::Result<U, E>,
    ) -> std::result::Result<Self::With<U>, E>;

    fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &Self::Leaf) -> U) -> Self::With<U> {
        match self.try_map(prefix, &mut |n, l| Ok::<U, Infallible>(f(n, l))) {
            Ok(v) => v,
            Err(never) => match never {},
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn bind<P: ParamTree<Leaf = Tensor>>(p: &P, tape: &mut Tape) -> P::With<Var> {
    p.map("", &mut |_, t| tape.param(t.clone()))
}

/// Binds as constants: the forward pass without gradient bookkeeping.
pub fn bind_frozen<P: ParamTree<Leaf = Tensor>>(p: &P, tape: &mut Tape) -> P::With<Var> {
    p.map("", &mut |_, t| tape.constant(t.clone()))
}

pub fn collect_grads<P: ParamTree<Leaf = Var>>(bound: &P, tape: &Tape, grads: &Gradients) -> Vec<Tensor> {
    let mut out = Vec::new();
    bound.map("", &mut |_, &v| out.push(grads.wrt(tape, v)));
    out
}

pub fn flatten<P: ParamTree<Leaf = Tensor>>(p: &P) -> Vec<Tensor> {
    let mut out = Vec::new();
    p.map("", &mut |_, t| out.push(t.clone()));
    out
}

pub fn named<P: ParamTree<Leaf = Tensor>>(p: &P, prefix: &str) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    p.map(prefix, &mut |n, t| out.push((n.to_string(), t.clone())));
    out
}

/// Replaces the leaves of `p` with `flat`, in canonical order.
pub fn unflatten<P: ParamTree<Leaf = Tensor>>(p: &P, flat: Vec<Tensor>) -> P::With<Tensor> {
    let mut it = flat.into_iter();
    p.map("", &mut |_, _| it.next().expect("flat length equals leaf count"))
}

pub fn all_finite<P: ParamTree<Leaf = Tensor>>(p: &P) -> bool {
    let mut ok = true;
    p.map("", &mut |_, t| ok &= t.is_finite());
    ok
}

/// Uniform in `±sqrt(6 / (rows + cols))`.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::from_rows(rows, cols, data).expect("glorot shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T = Tensor> {
    /// `in x out`
    pub w: T,
    /// `1 x out`
    pub b: T,
}

impl Linear<Tensor> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: glorot(rng, fan_in, fan_out),
            b: Tensor::zeros(1, fan_out),
        }
    }

    pub fn zeroed(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: Tensor::zeros(fan_in, fan_out),
            b: Tensor::zeros(1, fan_out),
        }
    }
}

impl Linear<Var> {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.w)?;
        Ok(tape.add(y, self.b)?)
    }
}

impl<T> ParamTree for Linear<T> {
    type Leaf = T;
    type With<U> = Linear<U>;

    fn try_map<U, E>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &T) -> std::result::Result<U, E>,
    ) -> std::result::Result<Linear<U>, E> {
        Ok(Linear {
            w: f(&join(prefix, "w"), &self.w)?,
            b: f(&join(prefix, "b"), &self.b)?,
        })
    }
}

/// `Linear -> relu -> Linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T = Tensor> {
    pub l1: Linear<T>,
    pub l2: Linear<T>,
}

impl Mlp<Tensor> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        Mlp {
            l1: Linear::init(rng, d_in, d_hidden),
            l2: Linear::init(rng, d_hidden, d_out),
        }
    }

    pub fn zeroed(d_in: usize, d_hidden: usize, d_out: usize) -> Self {
        Mlp {
            l1: Linear::zeroed(d_in, d_hidden),
            l2: Linear::zeroed(d_hidden, d_out),
        }
    }
}

impl Mlp<Var> {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.l1.forward(tape, x)?;
        let h = tape.relu(h);
        self.l2.forward(tape, h)
    }
}

impl<T> ParamTree for Mlp<T> {
    type Leaf = T;
    type With<U> = Mlp<U>;

    fn try_map<U, E>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &T) -> std::result::Result<U, E>,
    ) -> std::result::Result<Mlp<U>, E> {
        Ok(Mlp {
            l1: self.l1.try_map(&join(prefix, "l1"), f)?,
            l2: self.l2.try_map(&join(prefix, "l2"), f)?,
        })
    }
}

pub(crate) fn try_map_vec<T, U, E, P>(
    items: &[P],
    prefix: &str,
    name: &str,
    f: &mut dyn FnMut(&str, &T) -> std::result::Result<U, E>,
) -> std::result::Result<Vec<P::With<U>>, E>
where
    P: ParamTree<Leaf = T>,
{
    items
        .iter()
        .enumerate()
        .map(|(i, p)| p.try_map(&join(prefix, &format!("{name}{i}")), f))
        .collect()
}

pub(crate) fn try_map_tensors<T, U, E>(
    items: &[T],
    prefix: &str,
    name: &str,
    f: &mut dyn FnMut(&str, &T) -> std::result::Result<U, E>,
) -> std::result::Result<Vec<U>, E> {
    items
        .iter()
        .enumerate()
        .map(|(i, t)| f(&join(prefix, &format!("{name}{i}")), t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_and_order_are_stable() {
        let mlp = Mlp::init(&mut ChaCha8Rng::seed_from_u64(0), 2, 3, 1);
        let names: Vec<String> = named(&mlp, "head").into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["head.l1.w", "head.l1.b", "head.l2.w", "head.l2.b"]);
        let flat = flatten(&mlp);
        assert_eq!(unflatten(&mlp, flat), mlp);
    }
}
