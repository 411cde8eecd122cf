//! Differentiable operations, each recorded on a [`Graph`](super::Graph)
//! together with its backward rule.

mod conv;
mod elementwise;
mod nn;
pub(crate) mod norm;
mod shape;

use super::Tensor;
use crate::{Error, Result, Scalar};

pub(crate) fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("left operand {:?} vs right operand {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}
