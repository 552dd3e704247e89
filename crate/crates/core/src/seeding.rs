//! Deterministic per-work-unit random streams.
//!
//! `derive_seed(master, unit, grid) = mix64(master ^ mix64((unit << 32) | grid))`
//! where `mix64` is the SplitMix64 finalizer:
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
//! z = (z ^ (z >> 27)) * 0x94d049bb133111eb
//! z =  z ^ (z >> 31)
//! ```
//!
//! Both steps are bijections of `u64`, so for `unit, grid < 2^32` distinct
//! indices give distinct seeds, and distinct masters give distinct seeds at
//! every index. Streams are `Pcg64::seed_from_u64(seed)`.

use rand::SeedableRng;
use rand_pcg::Pcg64;

pub type Stream = Pcg64;

/// Samples per work unit in every Monte Carlo experiment. Fixed so results
/// do not depend on the worker count.
pub const UNIT_SIZE: u64 = 1 << 16;

pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master_seed: u64, worker_index: u32, grid_point_index: u32) -> u64 {
    let packed = ((worker_index as u64) << 32) | grid_point_index as u64;
    mix64(master_seed ^ mix64(packed))
}

pub fn stream(master_seed: u64, worker_index: u32, grid_point_index: u32) -> Stream {
    Pcg64::seed_from_u64(derive_seed(master_seed, worker_index, grid_point_index))
}

/// Split `total` samples into fixed-size units: `(unit_index, count)`.
pub fn work_units(total: u64) -> Vec<(u32, u64)> {
    let full = total / UNIT_SIZE;
    let mut units: Vec<(u32, u64)> = (0..full).map(|u| (u as u32, UNIT_SIZE)).collect();
    if total % UNIT_SIZE != 0 {
        units.push((full as u32, total % UNIT_SIZE));
    }
    units
}
