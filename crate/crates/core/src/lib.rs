#![no_std]
// Whether `num_traits::Float` is needed depends on which float methods the
// toolchain's `core` provides inherently.
#![allow(unused_imports)]
// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;

pub mod act;
pub mod augment;
pub mod autodiff;
pub mod biomech;
pub mod camgeo;
pub mod ik;
pub mod metrics;
pub mod runtime;
pub mod synth;
