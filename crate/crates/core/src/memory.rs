//! Episodic memory: a capacity-bounded reservoir of past samples plus the
//! random and score-weighted sampling strategies used for replay.

use std::io::{self, BufRead, Write};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::qp::GradVec;
use crate::real::Real;

/// One stored sample with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry<F: Real> {
    pub features: Vec<F>,
    pub label: usize,
    /// Index of the stream portion the sample arrived in (0 = seed data).
    pub split_id: usize,
    /// Global training step at which the sample was offered.
    pub insert_step: u64,
}

/// Reservoir buffer over everything offered so far.
///
/// Insertion keeps a uniform sample of all insertion attempts: below
/// capacity the entry is appended; at capacity it replaces a uniformly
/// chosen resident with probability `capacity / seen'`, where `seen'`
/// counts this attempt.
#[derive(Debug, Clone)]
pub struct MemoryBuffer<F: Real> {
    entries: Vec<MemoryEntry<F>>,
    capacity: usize,
    seen: u64,
}

#[derive(Debug, PartialEq)]
pub enum MemoryError {
    EmptyBuffer,
    /// Cosine scores are undefined against a zero-norm vector.
    ZeroNormReference { index: usize },
    DimensionMismatch { expected: usize, got: usize },
}

impl std::fmt::Display for MemoryError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MemoryError::EmptyBuffer => write!(f, "memory buffer is empty"),
            MemoryError::ZeroNormReference { index } => {
                write!(f, "zero-norm gradient at index {index}")
            }
            MemoryError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
        }
    }
}

impl std::error::Error for MemoryError {}

impl<F: Real> MemoryBuffer<F> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "capacity must be positive");
        Self {
            entries: Vec::with_capacity(capacity),
            capacity,
            seen: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total insertion attempts, stored or not.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn entries(&self) -> &[MemoryEntry<F>] {
        &self.entries
    }

    /// Offers an entry to the reservoir.
    ///
    /// RNG draw order, relied on by replay tests: at capacity, first one
    /// uniform `f64` acceptance draw, then (only if accepted) one index
    /// draw in `0..capacity` for the evicted resident.
    pub fn insert<R: Rng>(&mut self, entry: MemoryEntry<F>, rng: &mut R) {
        self.seen += 1;
        if self.entries.len() < self.capacity {
            self.entries.push(entry);
            return;
        }
        let u: f64 = rng.gen();
        if u < self.capacity as f64 / self.seen as f64 {
            let victim = rng.gen_range(0..self.capacity);
            self.entries[victim] = entry;
        }
    }

    /// Draws `k` entries uniformly with replacement.
    pub fn sample_random<R: Rng>(
        &self,
        k: usize,
        rng: &mut R,
    ) -> Result<Vec<&MemoryEntry<F>>, MemoryError> {
        if self.entries.is_empty() {
            return Err(MemoryError::EmptyBuffer);
        }
        Ok((0..k)
            .map(|_| &self.entries[rng.gen_range(0..self.entries.len())])
            .collect())
    }

    /// Writes the versioned snapshot: one header line, then one line per
    /// entry (`split_id label features...`). Insertion steps are not
    /// persisted; reloaded entries carry `insert_step = 0`.
    pub fn write_snapshot<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let dim = self.entries.first().map_or(0, |e| e.features.len());
        writeln!(
            w,
            "gemstream-memory v1 capacity={} seen={} dim={} entries={}",
            self.capacity,
            self.seen,
            dim,
            self.entries.len()
        )?;
        for e in &self.entries {
            write!(w, "{} {}", e.split_id, e.label)?;
            for f in &e.features {
                write!(w, " {f}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: BufRead>(r: &mut R) -> Result<Self, SnapshotError> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "gemstream-memory" || fields[1] != "v1" {
            return Err(SnapshotError::Format(format!(
                "bad header: {}",
                header.trim_end()
            )));
        }
        let capacity: usize = parse_kv(fields[2], "capacity")?;
        let seen: u64 = parse_kv(fields[3], "seen")?;
        let dim: usize = parse_kv(fields[4], "dim")?;
        let count: usize = parse_kv(fields[5], "entries")?;

        let mut entries = Vec::with_capacity(count);
        let mut line = String::new();
        for i in 0..count {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(SnapshotError::Format(format!(
                    "expected {count} entries, file ended at {i}"
                )));
            }
            let mut parts = line.split_whitespace();
            let split_id = parts
                .next()
                .ok_or_else(|| SnapshotError::Format(format!("entry {i}: missing split_id")))?
                .parse()
                .map_err(|e| SnapshotError::Format(format!("entry {i}: {e}")))?;
            let label = parts
                .next()
                .ok_or_else(|| SnapshotError::Format(format!("entry {i}: missing label")))?
                .parse()
                .map_err(|e| SnapshotError::Format(format!("entry {i}: {e}")))?;
            let features: Vec<F> = parts
                .map(|p| {
                    p.parse::<f64>()
                        .map(F::of)
                        .map_err(|e| SnapshotError::Format(format!("entry {i}: {e}")))
                })
                .collect::<Result<_, _>>()?;
            if features.len() != dim {
                return Err(SnapshotError::Format(format!(
                    "entry {i}: expected {dim} features, got {}",
                    features.len()
                )));
            }
            entries.push(MemoryEntry {
                features,
                label,
                split_id,
                insert_step: 0,
            });
        }
        if entries.len() > capacity {
            return Err(SnapshotError::Format(format!(
                "{} entries exceed capacity {capacity}",
                entries.len()
            )));
        }
        Ok(Self {
            entries,
            capacity,
            seen,
        })
    }
}

#[derive(Debug)]
pub enum SnapshotError {
    Io(io::Error),
    Format(String),
}

impl From<io::Error> for SnapshotError {
    fn from(e: io::Error) -> Self {
        SnapshotError::Io(e)
    }
}

impl std::fmt::Display for SnapshotError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SnapshotError::Io(e) => write!(f, "snapshot io error: {e}"),
            SnapshotError::Format(m) => write!(f, "snapshot format error: {m}"),
        }
    }
}

impl std::error::Error for SnapshotError {}

fn parse_kv<T: std::str::FromStr>(field: &str, key: &str) -> Result<T, SnapshotError>
where
    T::Err: std::fmt::Display,
{
    let value = field
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| SnapshotError::Format(format!("expected {key}=..., got {field}")))?;
    value
        .parse()
        .map_err(|e| SnapshotError::Format(format!("{key}: {e}")))
}

/// Per-candidate dissimilarity scores `c_i = 1 - cos(reference, grad_i)`,
/// each in `[0, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVec<F: Real> {
    scores: Vec<F>,
}

impl<F: Real> ScoreVec<F> {
    pub fn as_slice(&self) -> &[F] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn sum(&self) -> F {
        self.scores.iter().copied().sum()
    }
}

/// Scores every candidate gradient against a reference direction.
///
/// The cosine is clamped to `[-1, 1]` before the score is formed, so
/// rounding can never push a score outside `[0, 2]`.
pub fn selective_scores<F: Real>(
    reference: &GradVec<F>,
    candidates: &[GradVec<F>],
) -> Result<ScoreVec<F>, MemoryError> {
    let ref_norm = reference.norm();
    if ref_norm == F::zero() {
        return Err(MemoryError::ZeroNormReference { index: 0 });
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.iter().enumerate() {
        if c.len() != reference.len() {
            return Err(MemoryError::DimensionMismatch {
                expected: reference.len(),
                got: c.len(),
            });
        }
        let c_norm = c.norm();
        if c_norm == F::zero() {
            return Err(MemoryError::ZeroNormReference { index: i });
        }
        let cos = (reference.dot(c) / (ref_norm * c_norm))
            .max(-F::one())
            .min(F::one());
        scores.push(F::one() - cos);
    }
    Ok(ScoreVec { scores })
}

/// Draws `k` items from `pool` with replacement, with probability
/// proportional to each item's score. An all-zero score vector falls back
/// to uniform sampling.
pub fn sample_selective<'a, T, F: Real, R: Rng>(
    pool: &'a [T],
    scores: &ScoreVec<F>,
    k: usize,
    rng: &mut R,
) -> Result<Vec<&'a T>, MemoryError> {
    if pool.is_empty() {
        return Err(MemoryError::EmptyBuffer);
    }
    if scores.len() != pool.len() {
        return Err(MemoryError::DimensionMismatch {
            expected: pool.len(),
            got: scores.len(),
        });
    }
    let weights: Vec<f64> = scores.as_slice().iter().map(|s| s.as_f64()).collect();
    match WeightedIndex::new(&weights) {
        Ok(dist) => Ok((0..k).map(|_| &pool[dist.sample(rng)]).collect()),
        // All weights zero: every candidate is perfectly aligned.
        Err(_) => Ok((0..k)
            .map(|_| &pool[rng.gen_range(0..pool.len())])
            .collect()),
    }
}
