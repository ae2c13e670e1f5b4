// SPDX-License-Identifier: Apache-2.0

//! Input builders shared by the criterion benches.

/// `n` distinct values in a scrambled order.
pub fn scrambled(n: usize) -> Vec<u32> {
    (0..n as u32).map(|i| i.wrapping_mul(2_654_435_761)).collect()
}
