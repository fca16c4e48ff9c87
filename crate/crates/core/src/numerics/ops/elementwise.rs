use std::sync::Arc;

use crate::error::{FastError, Result};
use crate::numerics::kernels::{broadcast_shape, expand, reduce_to};
use crate::numerics::real::Real;
use crate::numerics::tape::Var;

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

// graph-building methods return `Result`, so the operator traits do not fit
#[allow(clippy::should_implement_trait)]
impl<'t, T: Real> Var<'t, T> {
    fn binary(self, rhs: Var<'t, T>, kind: Binary, op: &'static str) -> Result<Var<'t, T>> {
        let (sa, sb) = (self.shape(), rhs.shape());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| FastError::Dimension {
            op,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let (a, b) = (self.value(), rhs.value());
        let apply = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let value: Vec<T> = if sa == sb {
            a.iter().zip(b.iter()).map(|(&x, &y)| apply(x, y)).collect()
        } else if sb == out_shape {
            let ae = expand(&a, &sa, &out_shape);
            ae.iter().zip(b.iter()).map(|(&x, &y)| apply(x, y)).collect()
        } else if sa == out_shape {
            let be = expand(&b, &sb, &out_shape);
            a.iter().zip(be.iter()).map(|(&x, &y)| apply(x, y)).collect()
        } else {
            let ae = expand(&a, &sa, &out_shape);
            let be = expand(&b, &sb, &out_shape);
            ae.iter().zip(be.iter()).map(|(&x, &y)| apply(x, y)).collect()
        };
        let os = out_shape.clone();
        self.tape().record(
            op,
            &[self, rhs],
            out_shape,
            value,
            Box::new(move |g| match kind {
                Binary::Add => vec![Some(reduce_to(g, &os, &sa)), Some(reduce_to(g, &os, &sb))],
                Binary::Sub => {
                    let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                    vec![Some(reduce_to(g, &os, &sa)), Some(reduce_to(&neg, &os, &sb))]
                }
                Binary::Mul => {
                    let be = expand(&b, &sb, &os);
                    let ae = expand(&a, &sa, &os);
                    let ga: Vec<T> = g.iter().zip(&be).map(|(&g, &y)| g * y).collect();
                    let gb: Vec<T> = g.iter().zip(&ae).map(|(&g, &x)| g * x).collect();
                    vec![Some(reduce_to(&ga, &os, &sa)), Some(reduce_to(&gb, &os, &sb))]
                }
            }),
        )
    }

    /// Broadcasting sum.
    pub fn add(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, Binary::Add, "add")
    }

    pub fn sub(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, Binary::Sub, "sub")
    }

    /// Broadcasting Hadamard product.
    pub fn mul(self, rhs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(rhs, Binary::Mul, "mul")
    }

    /// Elementwise map with derivative `df(x, y)` where `y = f(x)`.
    fn unary(
        self,
        op: &'static str,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Var<'t, T>> {
        let x = self.value();
        let y: Arc<Vec<T>> = Arc::new(x.iter().map(|&v| f(v)).collect());
        let yb = Arc::clone(&y);
        self.tape().record(
            op,
            &[self],
            self.shape(),
            y,
            Box::new(move |g| {
                let gx = g
                    .iter()
                    .zip(x.iter().zip(yb.iter()))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    pub fn scale(self, c: T) -> Result<Var<'t, T>> {
        self.unary("scale", move |x| x * c, move |_, _| c)
    }

    pub fn add_scalar(self, c: T) -> Result<Var<'t, T>> {
        self.unary("add_scalar", move |x| x + c, |_, _| T::one())
    }

    pub fn neg(self) -> Result<Var<'t, T>> {
        self.scale(-T::one())
    }

    pub fn exp(self) -> Result<Var<'t, T>> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    pub fn square(self) -> Result<Var<'t, T>> {
        self.unary("square", |x| x * x, |x, _| x + x)
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        self.unary(
            "relu",
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(self) -> Result<Var<'t, T>> {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(self) -> Result<Var<'t, T>> {
        self.unary(
            "silu",
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            },
        )
    }

    /// `ln(1 + e^x)`, exact passthrough above the overflow threshold.
    pub fn softplus(self) -> Result<Var<'t, T>> {
        self.unary("softplus", softplus, |x, _| sigmoid(x))
    }

    pub fn sum(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let n = x.len();
        let s = x.iter().copied().sum::<T>();
        self.tape().record(
            "sum",
            &[self],
            vec![1],
            vec![s],
            Box::new(move |g| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        let n = self.numel();
        self.sum()?.scale(T::one() / T::from_usize_lossy(n))
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::c(30.0) {
        x
    } else if x < T::c(-30.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}
