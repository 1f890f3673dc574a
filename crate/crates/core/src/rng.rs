//! Counter-based deterministic random streams.
//!
//! Every draw is a pure function of the tuple that names it: a global seed
//! plus a list of stream ids (node index, iteration counter, purpose tag).
//! Nothing is shared between streams, so simulations produce bit-identical
//! results no matter how node updates are scheduled across worker threads.
//!
//! The generator is the splitmix64 sequence: a 64-bit Weyl counter passed
//! through an avalanching finalizer.  It is not cryptographic; it is a fast
//! statistical generator with full 64-bit state and provably distinct streams
//! for distinct keys (the key is hashed into the counter origin).

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer: bijective avalanche of a 64-bit word.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A stream positioned by `(seed, ids...)`.  Draws advance a private counter;
/// the stream never observes global state.
#[derive(Debug, Clone)]
pub struct Stream {
    counter: u64,
}

impl Stream {
    pub fn new(seed: u64, ids: &[u64]) -> Self {
        let mut origin = mix64(seed.wrapping_add(GOLDEN_GAMMA));
        for &id in ids {
            origin = mix64(origin.wrapping_add(GOLDEN_GAMMA) ^ id);
        }
        Stream { counter: origin }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(GOLDEN_GAMMA);
        mix64(self.counter)
    }

    /// Uniform draw from `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw from `{0, .., m-1}`.  The modulo bias is below m / 2^64,
    /// invisible at any sample count this crate handles.
    #[inline]
    pub fn next_index(&mut self, m: usize) -> usize {
        debug_assert!(m > 0);
        (self.next_u64() % m as u64) as usize
    }

    /// Standard Gaussian pair via Box-Muller.
    pub fn next_gaussian_pair(&mut self) -> (f64, f64) {
        // log argument stays in (0, 1]: take 1 - u with u in [0, 1).
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        (radius * angle.cos(), radius * angle.sin())
    }

    pub fn next_gaussian(&mut self) -> f64 {
        self.next_gaussian_pair().0
    }

    /// Fills `out` with standard Gaussian draws.
    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        let mut i = 0;
        while i + 1 < out.len() {
            let (a, b) = self.next_gaussian_pair();
            out[i] = a;
            out[i + 1] = b;
            i += 2;
        }
        if i < out.len() {
            out[i] = self.next_gaussian();
        }
    }
}

// ---------------------------------------------------------------------------
