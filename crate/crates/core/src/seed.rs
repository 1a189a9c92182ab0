/// Mixes a base seed with a path of stream identifiers (splitmix64 finaliser).
///
/// Every stochastic component derives its own stream from the run seed so that
/// results do not depend on the order in which components draw numbers.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut state = base;
    for &p in path {
        state = splitmix(state ^ splitmix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    splitmix(state)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
