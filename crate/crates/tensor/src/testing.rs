//! Fault injection for exercising the gradient-check harness.
//!
//! A corrupted op has every gradient its backward rule returns scaled by a
//! factor, so a correct checker must flag it. The setting is per thread,
//! matching the thread that drives [`crate::Tensor::backward`].

use std::cell::RefCell;

use crate::element::Element;

thread_local! {
    static CORRUPTED: RefCell<Option<(String, f64)>> = const { RefCell::new(None) };
}

/// Scale the backward output of `op` by `factor` on this thread; `None`
/// clears it.
pub fn corrupt_backward(op: Option<(&str, f64)>) {
    CORRUPTED.with(|c| *c.borrow_mut() = op.map(|(name, f)| (name.to_string(), f)));
}

pub(crate) fn corruption_factor<T: Element>(op: &str) -> Option<T> {
    CORRUPTED.with(|c| match c.borrow().as_ref() {
        Some((name, factor)) if name == op => Some(T::from_f64(*factor)),
        _ => None,
    })
}
