//! Counter-based random streams.
//!
//! Every generated row owns an independent ChaCha stream keyed by the master
//! seed and addressed by `(purpose, row)`. Output is therefore a pure function
//! of `(seed, purpose, row)`, independent of how rows are spread over workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Rows addressable per purpose.
pub const MAX_ROWS: u64 = 1 << 48;

pub fn stream(seed: u64, purpose: u16, row: u64) -> ChaCha8Rng {
    assert!(row < MAX_ROWS, "row index {row} exceeds stream space");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) | row);
    rng
}
