//! Independent random substreams derived from one master seed.
//!
//! Each consumer draws from its own ChaCha stream so that, for example,
//! training the forward model never shifts the variation sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Streams {
    pub init: ChaCha8Rng,
    pub selection: ChaCha8Rng,
    pub variation: ChaCha8Rng,
    pub model_init: ChaCha8Rng,
    pub batches: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        Streams {
            init: stream(1),
            selection: stream(2),
            variation: stream(3),
            model_init: stream(4),
            batches: stream(5),
        }
    }
}
