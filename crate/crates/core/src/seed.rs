//! Seed derivation for independent per-vehicle random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ids::VehicleId;

/// The generator used for every seeded stream in the crate.
pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for `vehicle` under `root`. Depends only on the pair, never on the
/// order in which vehicles are processed.
pub fn derive_seed(root: u64, vehicle: VehicleId) -> u64 {
    splitmix64(splitmix64(root) ^ splitmix64(vehicle.0.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Seed for a named scenario under `root`, independent of processing order.
pub fn scenario_seed(root: u64, scenario_id: &str) -> u64 {
    // FNV-1a over the id bytes
    let hash = scenario_id
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325_u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01B3));
    splitmix64(splitmix64(root) ^ hash)
}

pub fn stream(root: u64, vehicle: VehicleId) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, vehicle))
}
