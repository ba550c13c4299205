//! Items every module needs regardless of whether `std` is linked.

pub(crate) use alloc::format;
pub(crate) use alloc::string::String;
pub(crate) use alloc::vec;
pub(crate) use alloc::vec::Vec;
// Float supplies exp/sin/sqrt on f64 when std is not linked.
#[allow(unused_imports)]
pub(crate) use num_traits::Float;
