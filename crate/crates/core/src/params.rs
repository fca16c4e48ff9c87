//! Named traversal over trainable tensors, shared by the optimizer, the
//! checkpoint writer and gradient bookkeeping.

use crate::numerics::{Gradients, Real, RngState, Tensor};
use crate::Result;

pub trait Parameterized<T: Real> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }

    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name.to_string(), t)));
        out
    }

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, t| t.clear_grad());
    }

    fn accumulate_grads(&mut self, grads: &Gradients<T>) -> Result<()> {
        let mut res = Ok(());
        self.visit_mut("", &mut |_, t| {
            if res.is_ok() {
                res = t.accumulate_grad(grads);
            }
        });
        res
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Implements [`Parameterized`] for a struct from its tensor fields and
/// nested parameterized fields.
macro_rules! impl_params {
    ($ty:ident { $($field:ident),* $(,)? } $(nested { $($sub:ident),* $(,)? })?) => {
        impl<T: $crate::numerics::Real> $crate::params::Parameterized<T> for $ty<T> {
            fn visit<'a>(
                &'a self,
                prefix: &str,
                f: &mut dyn FnMut(&str, &'a $crate::numerics::Tensor<T>),
            ) {
                $( f(&$crate::params::join(prefix, stringify!($field)), &self.$field); )*
                $($( self.$sub.visit(&$crate::params::join(prefix, stringify!($sub)), f); )*)?
            }

            fn visit_mut(
                &mut self,
                prefix: &str,
                f: &mut dyn FnMut(&str, &mut $crate::numerics::Tensor<T>),
            ) {
                $( f(&$crate::params::join(prefix, stringify!($field)), &mut self.$field); )*
                $($( self.$sub.visit_mut(&$crate::params::join(prefix, stringify!($sub)), f); )*)?
            }
        }
    };
}
pub(crate) use impl_params;

/// Per-forward state: train/eval switch and the dropout stream.
pub struct ForwardCtx {
    pub train: bool,
    pub dropout: f64,
    pub rng: RngState,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx {
            train: false,
            dropout: 0.0,
            rng: RngState::new(0),
        }
    }

    pub fn train(dropout: f64, rng: RngState) -> Self {
        ForwardCtx {
            train: true,
            dropout,
            rng,
        }
    }
}
