//! Named, independently seeded random streams.
//!
//! Every stream is a ChaCha8 generator whose key is derived from
//! `(master_seed, task_index, label[, step])`. Consuming one stream never
//! perturbs another, so e.g. extra noise draws leave later batch plans alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const BATCH_SIZE_LABEL: &str = "batch-size";
const WOR_LABEL: &str = "wor";
const NOISE_LABEL: &str = "noise";

/// The three generators used by one training run (or one sweep task).
#[derive(Debug, Clone)]
pub struct RngStreams {
    master_seed: u64,
    task_index: u64,
    batch_size: ChaCha8Rng,
    wor: ChaCha8Rng,
    noise: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(master_seed: u64) -> Self {
        Self::for_task(master_seed, 0)
    }

    /// Streams for an independent parallel task.
    pub fn for_task(master_seed: u64, task_index: u64) -> Self {
        let key = |label| ChaCha8Rng::from_seed(derive_key(master_seed, task_index, label, None));
        Self {
            master_seed,
            task_index,
            batch_size: key(BATCH_SIZE_LABEL),
            wor: key(WOR_LABEL),
            noise: key(NOISE_LABEL),
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn task_index(&self) -> u64 {
        self.task_index
    }

    /// Re-keys the without-replacement stream for training step `step`.
    ///
    /// A masked plan draws `b₊` indices while an exact batch draws `b`; with a
    /// per-step key both see the same first `b` indices and stay aligned on
    /// later steps.
    pub fn begin_step(&mut self, step: u64) {
        self.wor = ChaCha8Rng::from_seed(derive_key(self.master_seed, self.task_index, WOR_LABEL, Some(step)));
    }

    pub fn batch_size_stream(&mut self) -> &mut ChaCha8Rng {
        &mut self.batch_size
    }

    pub fn wor_stream(&mut self) -> &mut ChaCha8Rng {
        &mut self.wor
    }

    pub fn noise_stream(&mut self) -> &mut ChaCha8Rng {
        &mut self.noise
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

fn derive_key(master_seed: u64, task_index: u64, label: &str, step: Option<u64>) -> [u8; 32] {
    let mut state = master_seed;
    let mut mix = |word: u64| {
        state ^= word;
        splitmix64(&mut state)
    };
    mix(task_index);
    mix(fnv1a(label.as_bytes()));
    if let Some(step) = step {
        mix(0x5745_5053); // keeps "no step" distinct from step 0
        mix(step);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}
