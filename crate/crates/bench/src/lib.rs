//! Fixtures shared by the benchmarks.

use dsm_core::problems::{gen_singular_monotone, gen_wellposed_cubic};
use dsm_core::ProblemInstance;

pub const SEED: u64 = 42;

pub fn wellposed(dim: usize) -> ProblemInstance {
    gen_wellposed_cubic(dim, 0.1, SEED).expect("wellposed fixture")
}

pub fn singular(dim: usize) -> ProblemInstance {
    gen_singular_monotone(dim, dim / 2, 0.5, false, SEED).expect("singular fixture")
}
