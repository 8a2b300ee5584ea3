use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use crate::error::{BilevelError, Result};

/// Keyed, counter-based random stream.
///
/// The ChaCha key is a hash of `(seed, label)`, and `counter` counts the
/// 64-bit words drawn so far, so `(seed, label, counter)` pins the next
/// draw exactly. Child streams derive their key from the parent key and a
/// new label, never from the parent's position, so splitting is independent
/// of draw order.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    label: String,
    key: [u8; 32],
    counter: u64,
    core: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut h = Sha256::new();
        h.update(b"bilevel.rng.root\0");
        h.update(seed.to_le_bytes());
        h.update(label.as_bytes());
        Self::from_key(seed, label.to_string(), h.finalize().into())
    }

    fn from_key(seed: u64, label: String, key: [u8; 32]) -> Self {
        RngStream {
            seed,
            label,
            key,
            counter: 0,
            core: ChaCha8Rng::from_seed(key),
        }
    }

    /// Derives an independent stream namespaced as `<parent>/<label>`.
    pub fn child(&self, label: &str) -> RngStream {
        let mut h = Sha256::new();
        h.update(b"bilevel.rng.child\0");
        h.update(self.key);
        h.update(label.as_bytes());
        Self::from_key(
            self.seed,
            format!("{}/{}", self.label, label),
            h.finalize().into(),
        )
    }

    /// Repositions the stream so the next draw is word number `counter`.
    pub fn at_counter(mut self, counter: u64) -> Self {
        self.counter = counter;
        self.core.set_word_pos(2 * counter as u128);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        self.core.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n` from exactly one word (multiply-shift).
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller; always consumes two words.
    pub fn normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

/// Minibatch of sample indices drawn from a population of `source_size`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchIndices {
    indices: Vec<usize>,
    source_size: usize,
}

impl BatchIndices {
    pub fn new(indices: Vec<usize>, source_size: usize) -> Result<Self> {
        if source_size == 0 {
            return Err(BilevelError::invalid("batch source size must be positive"));
        }
        if indices.is_empty() {
            return Err(BilevelError::invalid("batch must be non-empty"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= source_size) {
            return Err(BilevelError::invalid(format!(
                "batch index {bad} out of range for population {source_size}"
            )));
        }
        Ok(BatchIndices {
            indices,
            source_size,
        })
    }

    /// Every population member exactly once, in order.
    pub fn full(source_size: usize) -> Self {
        BatchIndices {
            indices: (0..source_size).collect(),
            source_size,
        }
    }

    pub fn single(index: usize, source_size: usize) -> Self {
        assert!(index < source_size);
        BatchIndices {
            indices: vec![index],
            source_size,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn source_size(&self) -> usize {
        self.source_size
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    /// Checks the batch was drawn against a population of size `n`.
    pub fn ensure_source(&self, n: usize, what: &str) -> Result<()> {
        if self.source_size != n {
            return Err(BilevelError::invalid(format!(
                "{what}: batch drawn from population {} but oracle has {n}",
                self.source_size
            )));
        }
        Ok(())
    }
}

/// Draws `batch_size` indices uniformly with replacement from `0..source_size`.
///
/// Consumes exactly one word of `stream` per index.
pub fn sample_batch(
    stream: &mut RngStream,
    source_size: usize,
    batch_size: usize,
) -> Result<BatchIndices> {
    if source_size == 0 || batch_size == 0 {
        return Err(BilevelError::invalid(format!(
            "sample_batch needs source_size >= 1 and batch_size >= 1 (got {source_size}, {batch_size})"
        )));
    }
    let indices = (0..batch_size).map(|_| stream.index(source_size)).collect();
    Ok(BatchIndices {
        indices,
        source_size,
    })
}
