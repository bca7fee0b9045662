//! Counter-based random streams.
//!
//! A stream is a 64-bit key. Draw `i` is a pure function of `(key, i)`, so
//! streams never interfere and can be consumed in any order.

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01B3);
    }
    h
}

/// A named, seeded stream of uniform draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stream {
    key: u64,
}

impl Stream {
    /// Stream identified by a name and two indices, e.g. `("dropout", src, dst)`.
    pub fn named(seed: u64, name: &str, a: u64, b: u64) -> Self {
        let mut h = fnv1a(name.as_bytes(), 0xCBF2_9CE4_8422_2325);
        h = fnv1a(&a.to_le_bytes(), h);
        h = fnv1a(&b.to_le_bytes(), h);
        Self { key: splitmix64(h ^ splitmix64(seed)) }
    }

    /// Raw 64-bit draw number `i`.
    pub fn bits(&self, i: u64) -> u64 {
        splitmix64(self.key ^ splitmix64(i))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&self, i: u64) -> f64 {
        (self.bits(i) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Sequential wrapper over a [`Stream`].
#[derive(Debug, Clone)]
pub struct StreamRng {
    stream: Stream,
    counter: u64,
}

impl StreamRng {
    pub fn new(stream: Stream) -> Self {
        Self { stream, counter: 0 }
    }

    pub fn next_f64(&mut self) -> f64 {
        let u = self.stream.uniform(self.counter);
        self.counter += 1;
        u
    }
}
