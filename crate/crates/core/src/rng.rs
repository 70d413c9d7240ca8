//! Counter-based random streams.
//!
//! Every random draw in the crate is addressed by a [`StreamKey`]: a global
//! seed, a stream id (path index, ensemble member, ...) and a step index.
//! ChaCha is a counter-mode cipher, so positioning the generator at
//! `(seed, stream, step)` is O(1) and two keys never share output words.
//! Results therefore do not depend on thread count or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Words reserved per step inside one stream (2^36 32-bit words).
const STEP_STRIDE_BITS: u32 = 36;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub stream: u64,
    pub step: u64,
}

impl StreamKey {
    pub fn new(seed: u64, stream: u64, step: u64) -> Self {
        Self { seed, stream, step }
    }

    pub fn at_step(self, step: u64) -> Self {
        Self { step, ..self }
    }

    /// Generator positioned at the first word of this key's block.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos((self.step as u128) << STEP_STRIDE_BITS);
        rng
    }
}
