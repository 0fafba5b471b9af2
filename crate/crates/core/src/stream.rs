//! Synthetic boundary-free data streams.
//!
//! Samples of class `c` are Gaussian around a mean on a circle of radius 2
//! whose angle rotates linearly with the sample's position `t` in the
//! stream, so the distribution drifts smoothly with no task boundaries. A
//! large seed portion occupies the early part of the stream, the splits
//! follow in order, and one validation set spans the whole drift range.

use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::Batch;
use crate::real::Real;

pub const CLUSTER_RADIUS: f64 = 2.0;

/// Stream geometry and sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec<F: Real> {
    pub input_dim: usize,
    pub class_count: usize,
    /// Seed-portion size.
    pub d0_size: usize,
    /// Total new data across all splits.
    pub increment_size: usize,
    pub n_splits: usize,
    /// Radians of class-mean rotation per unit of stream progress.
    pub drift_rate: F,
    /// Standard deviation of each class cluster.
    pub cluster_spread: F,
    pub val_size: usize,
    pub seed: u64,
}

impl<F: Real> StreamSpec<F> {
    /// Desk-scale defaults used by the experiments.
    pub fn default_desk(seed: u64) -> Self {
        Self {
            input_dim: 2,
            class_count: 4,
            d0_size: 4_000,
            increment_size: 2_000,
            n_splits: 10,
            drift_rate: F::of(0.8),
            cluster_spread: F::of(0.55),
            val_size: 2_000,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        if self.input_dim < 1
            || self.class_count < 1
            || self.d0_size < 1
            || self.increment_size < 1
            || self.val_size < 1
        {
            return Err(StreamError::InvalidSpec(
                "all sizes and dimensions must be at least 1".into(),
            ));
        }
        if self.n_splits > self.increment_size {
            return Err(StreamError::InvalidSpec(format!(
                "{} splits cannot partition {} samples",
                self.n_splits, self.increment_size
            )));
        }
        if self.drift_rate < F::zero() {
            return Err(StreamError::InvalidSpec("drift_rate must be >= 0".into()));
        }
        if !(self.cluster_spread > F::zero()) {
            return Err(StreamError::InvalidSpec(
                "cluster_spread must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Class-mean angle at stream position `t`.
    pub fn class_angle(&self, class: usize, t: F) -> F {
        F::of(2.0 * std::f64::consts::PI * class as f64 / self.class_count as f64)
            + self.drift_rate * t
    }

    /// Class mean at stream position `t`: radius-2 circle in the first two
    /// dimensions, zero elsewhere.
    pub fn class_mean(&self, class: usize, t: F) -> Vec<F> {
        let angle = self.class_angle(class, t);
        let mut mean = vec![F::zero(); self.input_dim];
        mean[0] = F::of(CLUSTER_RADIUS) * angle.cos();
        if self.input_dim > 1 {
            mean[1] = F::of(CLUSTER_RADIUS) * angle.sin();
        }
        mean
    }

    /// Split sizes: even partition of `increment_size`, remainder to the
    /// earliest splits.
    pub fn split_sizes(&self) -> Vec<usize> {
        even_sizes(self.increment_size, self.n_splits)
    }

    /// `t` window `[lo, hi)` occupied by the seed portion.
    pub fn d0_window(&self) -> (F, F) {
        let total = (self.d0_size + self.increment_size) as f64;
        (F::zero(), F::of(self.d0_size as f64 / total))
    }

    /// `t` window `[lo, hi)` occupied by split `i` (0-based).
    pub fn split_window(&self, i: usize) -> (F, F) {
        let total = (self.d0_size + self.increment_size) as f64;
        let sizes = self.split_sizes();
        let before: usize = sizes[..i].iter().sum();
        let lo = (self.d0_size + before) as f64 / total;
        let hi = (self.d0_size + before + sizes[i]) as f64 / total;
        (F::of(lo), F::of(hi))
    }
}

/// A batch together with each row's stream position.
#[derive(Debug, Clone, PartialEq)]
pub struct Portion<F: Real> {
    pub batch: Batch<F>,
    pub ts: Vec<F>,
}

/// Generated stream: seed data, ordered splits, shared validation set.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream<F: Real> {
    pub d0: Portion<F>,
    pub splits: Vec<Portion<F>>,
    pub validation: Portion<F>,
}

#[derive(Debug, PartialEq)]
pub enum StreamError {
    InvalidSpec(String),
    TooFewSamples { rows: usize, parts: usize },
    Format(String),
    Io(String),
}

impl std::fmt::Display for StreamError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StreamError::InvalidSpec(m) => write!(f, "invalid stream spec: {m}"),
            StreamError::TooFewSamples { rows, parts } => {
                write!(f, "cannot split {rows} rows into {parts} parts")
            }
            StreamError::Format(m) => write!(f, "stream format error: {m}"),
            StreamError::Io(m) => write!(f, "stream io error: {m}"),
        }
    }
}

impl std::error::Error for StreamError {}

impl From<io::Error> for StreamError {
    fn from(e: io::Error) -> Self {
        StreamError::Io(e.to_string())
    }
}

fn even_sizes(total: usize, parts: usize) -> Vec<usize> {
    if parts == 0 {
        return Vec::new();
    }
    let base = total / parts;
    let rem = total % parts;
    (0..parts)
        .map(|i| if i < rem { base + 1 } else { base })
        .collect()
}

/// Generates the full stream deterministically from the spec's seed.
///
/// Draw order per portion (seed data, splits in order, then validation):
/// one uniform `t` per sample, a shuffle of the round-robin label vector,
/// then `input_dim` standard-normal draws per sample.
pub fn generate_stream<F: Real>(spec: &StreamSpec<F>) -> Result<Stream<F>, StreamError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let d0_window = spec.d0_window();
    let d0 = generate_portion(spec, spec.d0_size, d0_window, &mut rng);
    let splits: Vec<Portion<F>> = (0..spec.n_splits)
        .map(|i| {
            let window = spec.split_window(i);
            generate_portion(spec, spec.split_sizes()[i], window, &mut rng)
        })
        .collect();
    let validation = generate_portion(spec, spec.val_size, (F::zero(), F::one()), &mut rng);

    Ok(Stream {
        d0,
        splits,
        validation,
    })
}

fn generate_portion<F: Real>(
    spec: &StreamSpec<F>,
    size: usize,
    window: (F, F),
    rng: &mut ChaCha8Rng,
) -> Portion<F> {
    let (lo, hi) = window;
    let span = hi - lo;
    let ts: Vec<F> = (0..size)
        .map(|_| lo + span * F::of(rng.gen::<f64>()))
        .collect();
    let mut labels: Vec<usize> = (0..size).map(|j| j % spec.class_count).collect();
    labels.shuffle(rng);

    let mut features = Vec::with_capacity(size * spec.input_dim);
    for (t, &label) in ts.iter().zip(&labels) {
        let mean = spec.class_mean(label, *t);
        for m in mean {
            let noise: f64 = rng.sample(StandardNormal);
            features.push(m + spec.cluster_spread * F::of(noise));
        }
    }
    Portion {
        batch: Batch::new(features, labels, spec.input_dim).expect("consistent by construction"),
        ts,
    }
}

/// Randomly permutes the rows of `data` (seeded) and cuts the permutation
/// into `n` contiguous chunks whose sizes differ by at most one, remainder
/// to the earliest chunks. The union of the outputs is the input multiset.
pub fn split_even<F: Real>(
    data: &Batch<F>,
    n: usize,
    seed: u64,
) -> Result<Vec<Batch<F>>, StreamError> {
    if n < 1 || data.rows() < n {
        return Err(StreamError::TooFewSamples {
            rows: data.rows(),
            parts: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..data.rows()).collect();
    perm.shuffle(&mut rng);

    let sizes = even_sizes(data.rows(), n);
    let mut out = Vec::with_capacity(n);
    let mut offset = 0;
    for s in sizes {
        out.push(data.select(&perm[offset..offset + s]));
        offset += s;
    }
    Ok(out)
}

/// Writes the headered text export: one header line, then one line per
/// sample (`t label features...`) over seed data, splits in order, and
/// validation.
pub fn write_stream<F: Real, W: Write>(stream: &Stream<F>, w: &mut W) -> io::Result<()> {
    let dim = stream.d0.batch.input_dim();
    let classes = portion_iter(stream)
        .flat_map(|p| p.batch.labels().iter())
        .max()
        .map_or(1, |m| m + 1);
    let split_sizes: Vec<String> = stream
        .splits
        .iter()
        .map(|p| p.batch.rows().to_string())
        .collect();
    writeln!(
        w,
        "gemstream-stream v1 dim={} classes={} d0={} splits={} val={}",
        dim,
        classes,
        stream.d0.batch.rows(),
        if split_sizes.is_empty() {
            "-".to_string()
        } else {
            split_sizes.join(",")
        },
        stream.validation.batch.rows()
    )?;
    for p in portion_iter(stream) {
        for i in 0..p.batch.rows() {
            write!(w, "{} {}", p.ts[i], p.batch.label(i))?;
            for f in p.batch.row(i) {
                write!(w, " {f}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

fn portion_iter<'a, F: Real>(stream: &'a Stream<F>) -> impl Iterator<Item = &'a Portion<F>> {
    std::iter::once(&stream.d0)
        .chain(stream.splits.iter())
        .chain(std::iter::once(&stream.validation))
}

/// Reads a stream export written by [`write_stream`].
pub fn read_stream<F: Real, R: BufRead>(r: &mut R) -> Result<Stream<F>, StreamError> {
    let mut header = String::new();
    r.read_line(&mut header)?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 7 || fields[0] != "gemstream-stream" || fields[1] != "v1" {
        return Err(StreamError::Format(format!(
            "bad header: {}",
            header.trim_end()
        )));
    }
    let dim: usize = parse_kv(fields[2], "dim")?;
    let _classes: usize = parse_kv(fields[3], "classes")?;
    let d0_size: usize = parse_kv(fields[4], "d0")?;
    let splits_field = fields[5]
        .strip_prefix("splits=")
        .ok_or_else(|| StreamError::Format("missing splits=".into()))?;
    let split_sizes: Vec<usize> = if splits_field == "-" {
        Vec::new()
    } else {
        splits_field
            .split(',')
            .map(|s| s.parse().map_err(|e| StreamError::Format(format!("{e}"))))
            .collect::<Result<_, _>>()?
    };
    let val_size: usize = parse_kv(fields[6], "val")?;

    let mut read_portion = |size: usize| -> Result<Portion<F>, StreamError> {
        let mut ts = Vec::with_capacity(size);
        let mut labels = Vec::with_capacity(size);
        let mut features = Vec::with_capacity(size * dim);
        let mut line = String::new();
        for i in 0..size {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(StreamError::Format(format!(
                    "file ended after {i} of {size} samples"
                )));
            }
            let mut parts = line.split_whitespace();
            let t: f64 = parts
                .next()
                .ok_or_else(|| StreamError::Format("missing t".into()))?
                .parse()
                .map_err(|e| StreamError::Format(format!("t: {e}")))?;
            let label: usize = parts
                .next()
                .ok_or_else(|| StreamError::Format("missing label".into()))?
                .parse()
                .map_err(|e| StreamError::Format(format!("label: {e}")))?;
            let row: Vec<F> = parts
                .map(|p| {
                    p.parse::<f64>()
                        .map(F::of)
                        .map_err(|e| StreamError::Format(format!("feature: {e}")))
                })
                .collect::<Result<_, _>>()?;
            if row.len() != dim {
                return Err(StreamError::Format(format!(
                    "expected {dim} features, got {}",
                    row.len()
                )));
            }
            ts.push(F::of(t));
            labels.push(label);
            features.extend(row);
        }
        Ok(Portion {
            batch: Batch::new(features, labels, dim)
                .map_err(|e| StreamError::Format(e.to_string()))?,
            ts,
        })
    };

    let d0 = read_portion(d0_size)?;
    let mut splits = Vec::with_capacity(split_sizes.len());
    for s in split_sizes {
        splits.push(read_portion(s)?);
    }
    let validation = read_portion(val_size)?;
    Ok(Stream {
        d0,
        splits,
        validation,
    })
}

fn parse_kv<T: std::str::FromStr>(field: &str, key: &str) -> Result<T, StreamError>
where
    T::Err: std::fmt::Display,
{
    field
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| StreamError::Format(format!("expected {key}=..., got {field}")))?
        .parse()
        .map_err(|e| StreamError::Format(format!("{key}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> StreamSpec<f64> {
        StreamSpec {
            input_dim: 2,
            class_count: 4,
            d0_size: 40,
            increment_size: 20,
            n_splits: 3,
            drift_rate: 0.8,
            cluster_spread: 0.5,
            val_size: 16,
            seed: 11,
        }
    }

    #[test]
    fn split_counts_match_spec() {
        let mut spec = StreamSpec::<f64>::default_desk(0);
        spec.n_splits = 10;
        spec.increment_size = 2_000;
        let stream = generate_stream(&spec).unwrap();
        assert_eq!(stream.splits.len(), 10);
        assert!(stream.splits.iter().all(|p| p.batch.rows() == 200));
        assert_eq!(stream.d0.batch.rows(), 4_000);
        assert_eq!(stream.validation.batch.rows(), 2_000);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        assert_eq!(generate_stream(&spec).unwrap(), generate_stream(&spec).unwrap());
        let mut other = spec.clone();
        other.seed = 12;
        assert_ne!(generate_stream(&spec).unwrap(), generate_stream(&other).unwrap());
    }

    #[test]
    fn zero_drift_means_identical_distributions() {
        let mut spec = small_spec();
        spec.drift_rate = 0.0;
        // With no drift the class means are independent of t.
        for c in 0..spec.class_count {
            let m0 = spec.class_mean(c, 0.0);
            let m1 = spec.class_mean(c, 1.0);
            assert_eq!(m0, m1);
        }
    }

    #[test]
    fn drift_is_linear_in_window_midpoints() {
        let spec = small_spec();
        let (d0_lo, d0_hi) = spec.d0_window();
        let mid0 = (d0_lo + d0_hi) / 2.0;
        let (lo_n, hi_n) = spec.split_window(spec.n_splits - 1);
        let mid_n = (lo_n + hi_n) / 2.0;
        for c in 0..spec.class_count {
            let delta = spec.class_angle(c, mid_n) - spec.class_angle(c, mid0);
            assert!((delta - spec.drift_rate * (mid_n - mid0)).abs() < 1e-12);
        }
    }

    #[test]
    fn portions_stay_in_their_windows() {
        let spec = small_spec();
        let stream = generate_stream(&spec).unwrap();
        let (lo, hi) = spec.d0_window();
        assert!(stream.d0.ts.iter().all(|&t| t >= lo && t <= hi));
        for i in 0..spec.n_splits {
            let (lo, hi) = spec.split_window(i);
            assert!(stream.splits[i].ts.iter().all(|&t| t >= lo && t <= hi));
        }
        assert!(stream.validation.ts.iter().all(|&t| (0.0..=1.0).contains(&t)));
    }

    #[test]
    fn labels_balanced_per_portion() {
        let spec = small_spec();
        let stream = generate_stream(&spec).unwrap();
        let mut counts = vec![0usize; spec.class_count];
        for &l in stream.d0.batch.labels() {
            counts[l] += 1;
        }
        let max = counts.iter().max().unwrap();
        let min = counts.iter().min().unwrap();
        assert!(max - min <= 1);
    }

    #[test]
    fn split_even_sizes() {
        let batch = Batch::from_rows(
            &(0..10).map(|i| vec![i as f64]).collect::<Vec<_>>(),
            (0..10).map(|i| i % 2).collect(),
        )
        .unwrap();
        let halves = split_even(&batch, 2, 0).unwrap();
        assert_eq!(halves.iter().map(Batch::rows).collect::<Vec<_>>(), [5, 5]);
        let thirds = split_even(&batch, 3, 0).unwrap();
        assert_eq!(
            thirds.iter().map(Batch::rows).collect::<Vec<_>>(),
            [4, 3, 3]
        );
    }

    #[test]
    fn split_even_preserves_multiset() {
        let rows: Vec<Vec<f64>> = (0..23).map(|i| vec![i as f64, (2 * i) as f64]).collect();
        let batch = Batch::from_rows(&rows, (0..23).map(|i| i % 3).collect()).unwrap();
        let parts = split_even(&batch, 4, 99).unwrap();
        let mut seen: Vec<(Vec<i64>, usize)> = parts
            .iter()
            .flat_map(|p| {
                (0..p.rows()).map(move |i| {
                    (
                        p.row(i).iter().map(|&x| x as i64).collect::<Vec<_>>(),
                        p.label(i),
                    )
                })
            })
            .collect();
        let mut expected: Vec<(Vec<i64>, usize)> = (0..batch.rows())
            .map(|i| {
                (
                    batch.row(i).iter().map(|&x| x as i64).collect::<Vec<_>>(),
                    batch.label(i),
                )
            })
            .collect();
        seen.sort();
        expected.sort();
        assert_eq!(seen, expected);
    }

    #[test]
    fn split_even_rejects_too_few() {
        let batch = Batch::from_rows(&[vec![1.0]], vec![0]).unwrap();
        assert_eq!(
            split_even(&batch, 2, 0).unwrap_err(),
            StreamError::TooFewSamples { rows: 1, parts: 2 }
        );
    }

    #[test]
    fn distinct_seeds_distinct_permutations() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let batch = Batch::from_rows(&rows, vec![0; 30]).unwrap();
        let a = split_even(&batch, 2, 1).unwrap();
        let b = split_even(&batch, 2, 2).unwrap();
        assert_ne!(a[0], b[0]);
    }

    #[test]
    fn export_import_roundtrip() {
        let stream = generate_stream(&small_spec()).unwrap();
        let mut bytes = Vec::new();
        write_stream(&stream, &mut bytes).unwrap();
        let back: Stream<f64> = read_stream(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, stream);
    }

    #[test]
    fn export_is_reproducible() {
        let spec = small_spec();
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_stream(&generate_stream(&spec).unwrap(), &mut a).unwrap();
        write_stream(&generate_stream(&spec).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = small_spec();
        spec.d0_size = 0;
        assert!(matches!(
            generate_stream(&spec),
            Err(StreamError::InvalidSpec(_))
        ));
        let mut spec = small_spec();
        spec.cluster_spread = 0.0;
        assert!(generate_stream(&spec).is_err());
        let mut spec = small_spec();
        spec.n_splits = 10_000;
        assert!(generate_stream(&spec).is_err());
    }
}
