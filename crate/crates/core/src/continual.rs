//! Continual-learning methods over a split stream.
//!
//! Five method families share one protocol: seed training on the initial
//! data, then a pass over each split in order. `AllData` retrains from
//! scratch on everything seen so far (the accuracy upper bound, at growing
//! cost), `NewData` fine-tunes on the newest split only, the gradient
//! projection methods constrain each update against replayed memory
//! gradients, and `Ewc`/`Mas` penalize movement of important parameters.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::memory::{sample_selective, selective_scores, MemoryBuffer, MemoryEntry, MemoryError};
use crate::metrics::{MetricsLog, MetricsRow, SUMMARY_EPOCH};
use crate::model::{Architecture, Batch, ModelError, ParamVec};
use crate::qp::{project_multi, project_single, GradVec, QpConfig, QpError};
use crate::real::Real;
use crate::stream::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintMode {
    /// One memory gradient, closed-form scalar dual.
    Single,
    /// Several memory gradients, dual QP.
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    Random,
    Selective,
}

/// Settings of the projection methods.
#[derive(Debug, Clone)]
pub struct OGemSpec<F: Real> {
    pub constraint_mode: ConstraintMode,
    /// Memory mini-batches used as constraints per step (multi mode).
    pub refs_per_step: usize,
    /// Candidate mini-batches drawn and scored per step.
    pub candidate_pool: usize,
    pub sampling: SamplingMode,
    pub qp: QpConfig<F>,
}

impl<F: Real> OGemSpec<F> {
    pub fn single(sampling: SamplingMode) -> Self {
        Self {
            constraint_mode: ConstraintMode::Single,
            refs_per_step: 1,
            candidate_pool: 8,
            sampling,
            qp: QpConfig::default(),
        }
    }

    pub fn multi(sampling: SamplingMode) -> Self {
        Self {
            constraint_mode: ConstraintMode::Multi,
            refs_per_step: 3,
            candidate_pool: 8,
            sampling,
            qp: QpConfig::default(),
        }
    }
}

/// Settings of the quadratic-penalty baselines.
#[derive(Debug, Clone)]
pub struct RegSpec<F: Real> {
    pub lambda: F,
    pub importance_samples: usize,
}

impl<F: Real> RegSpec<F> {
    pub fn ewc_default() -> Self {
        Self {
            lambda: F::of(EWC_DEFAULT_LAMBDA),
            importance_samples: 256,
        }
    }

    pub fn mas_default() -> Self {
        Self {
            lambda: F::of(MAS_DEFAULT_LAMBDA),
            importance_samples: 256,
        }
    }
}

pub const EWC_DEFAULT_LAMBDA: f64 = 30.0;
pub const MAS_DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone)]
pub enum MethodSpec<F: Real> {
    AllData,
    NewData,
    OGem(OGemSpec<F>),
    Ewc(RegSpec<F>),
    Mas(RegSpec<F>),
}

impl<F: Real> MethodSpec<F> {
    /// Canonical name used in metrics rows and output file names.
    pub fn name(&self) -> String {
        match self {
            MethodSpec::AllData => "all_data".into(),
            MethodSpec::NewData => "new_data".into(),
            MethodSpec::Ewc(_) => "ewc".into(),
            MethodSpec::Mas(_) => "mas".into(),
            MethodSpec::OGem(spec) => {
                let mode = match spec.constraint_mode {
                    ConstraintMode::Single => "single",
                    ConstraintMode::Multi => "multi",
                };
                let sampling = match spec.sampling {
                    SamplingMode::Random => "random",
                    SamplingMode::Selective => "selective",
                };
                format!("ogem_{mode}_{sampling}")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig<F: Real> {
    pub epochs_d0: usize,
    pub epochs_per_split: usize,
    pub batch_size: usize,
    pub lr: F,
    pub memory_capacity: usize,
    pub seed: u64,
}

impl<F: Real> Default for TrainConfig<F> {
    fn default() -> Self {
        Self {
            epochs_d0: 50,
            epochs_per_split: 10,
            batch_size: 32,
            lr: F::of(0.05),
            memory_capacity: 1_000,
            seed: 0,
        }
    }
}

impl<F: Real> TrainConfig<F> {
    fn validate(&self) -> Result<(), TrainError> {
        if self.epochs_d0 == 0
            || self.epochs_per_split == 0
            || self.batch_size == 0
            || self.memory_capacity == 0
        {
            return Err(TrainError::InvalidConfig(
                "all counts must be positive".into(),
            ));
        }
        if !(self.lr > F::zero()) {
            return Err(TrainError::InvalidConfig("lr must be > 0".into()));
        }
        Ok(())
    }
}

/// Parameter importance with the anchor it was measured at.
#[derive(Debug, Clone)]
pub struct Importance<F: Real> {
    pub weights: Vec<F>,
    pub anchor: ParamVec<F>,
}

/// Mutable state threaded through one run.
#[derive(Debug, Clone)]
pub struct TrainerState<F: Real> {
    pub params: ParamVec<F>,
    pub buffer: MemoryBuffer<F>,
    /// Update direction applied on the previous step; scoring reference for
    /// selective sampling.
    pub last_projected: Option<GradVec<F>>,
    pub importance: Option<Importance<F>>,
    pub step: u64,
    /// Steps taken without projection (empty memory or no usable
    /// constraint gradient).
    pub unprojected_steps: u64,
}

#[derive(Debug)]
pub enum TrainError {
    Model(ModelError),
    Qp(QpError),
    Memory(MemoryError),
    MissingImportance,
    InvalidConfig(String),
}

impl std::fmt::Display for TrainError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrainError::Model(e) => write!(f, "model error: {e}"),
            TrainError::Qp(e) => write!(f, "projection error: {e}"),
            TrainError::Memory(e) => write!(f, "memory error: {e}"),
            TrainError::MissingImportance => {
                write!(f, "importance weights required but not computed")
            }
            TrainError::InvalidConfig(m) => write!(f, "invalid train config: {m}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

impl From<QpError> for TrainError {
    fn from(e: QpError) -> Self {
        TrainError::Qp(e)
    }
}

impl From<MemoryError> for TrainError {
    fn from(e: MemoryError) -> Self {
        TrainError::Memory(e)
    }
}

// Distinct ChaCha stream ids keep the RNG consumers independent.
const RNG_SEED_SHUFFLE: u64 = 1;
const RNG_SEED_BUFFER: u64 = 2;
const RNG_SPLIT_SHUFFLE: u64 = 11;
const RNG_SPLIT_BUFFER: u64 = 12;
const RNG_SAMPLING: u64 = 13;
const RNG_IMPORTANCE: u64 = 14;
const RNG_RETRAIN_BASE: u64 = 100;

fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Shuffled mini-batch index chunks for one epoch; the final chunk may be
/// short.
fn minibatch_indices(rows: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..rows).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

fn offer_batch<F: Real, R: Rng>(
    buffer: &mut MemoryBuffer<F>,
    batch: &Batch<F>,
    split_id: usize,
    step: u64,
    rng: &mut R,
) {
    for i in 0..batch.rows() {
        buffer.insert(
            MemoryEntry {
                features: batch.row(i).to_vec(),
                label: batch.label(i),
                split_id,
                insert_step: step,
            },
            rng,
        );
    }
}

fn batch_from_entries<F: Real>(entries: &[&MemoryEntry<F>]) -> Result<Batch<F>, TrainError> {
    let dim = entries
        .first()
        .map(|e| e.features.len())
        .ok_or(TrainError::Memory(MemoryError::EmptyBuffer))?;
    let mut features = Vec::with_capacity(entries.len() * dim);
    let mut labels = Vec::with_capacity(entries.len());
    for e in entries {
        features.extend_from_slice(&e.features);
        labels.push(e.label);
    }
    Ok(Batch::new(features, labels, dim)?)
}

/// All buffered samples as one batch, for importance estimation.
pub fn buffer_batch<F: Real>(buffer: &MemoryBuffer<F>) -> Result<Batch<F>, TrainError> {
    let refs: Vec<&MemoryEntry<F>> = buffer.entries().iter().collect();
    batch_from_entries(&refs)
}

/// Seed training: `epochs_d0` epochs of mini-batch SGD on the initial data
/// with seeded shuffling, then every seed sample is offered to the memory
/// buffer once.
pub fn train_seed<F: Real>(
    arch: Architecture,
    d0: &Batch<F>,
    cfg: &TrainConfig<F>,
) -> Result<TrainerState<F>, TrainError> {
    train_seed_with(arch, d0, cfg, |_, _| Ok(()))
}

/// [`train_seed`] with an end-of-epoch callback, used by the protocol
/// driver to record metrics.
pub fn train_seed_with<F: Real>(
    arch: Architecture,
    d0: &Batch<F>,
    cfg: &TrainConfig<F>,
    mut on_epoch: impl FnMut(usize, &TrainerState<F>) -> Result<(), TrainError>,
) -> Result<TrainerState<F>, TrainError> {
    cfg.validate()?;
    if d0.is_empty() {
        return Err(TrainError::Model(ModelError::EmptyDataset));
    }
    let mut state = TrainerState {
        params: ParamVec::init(arch, cfg.seed),
        buffer: MemoryBuffer::new(cfg.memory_capacity),
        last_projected: None,
        importance: None,
        step: 0,
        unprojected_steps: 0,
    };
    let mut shuffle_rng = sub_rng(cfg.seed, RNG_SEED_SHUFFLE);
    for epoch in 1..=cfg.epochs_d0 {
        for chunk in minibatch_indices(d0.rows(), cfg.batch_size, &mut shuffle_rng) {
            let batch = d0.select(&chunk);
            let g = state.params.gradient(&batch)?;
            state.params = state.params.sgd_step(&g, cfg.lr)?;
            state.step += 1;
        }
        on_epoch(epoch, &state)?;
    }
    let mut buffer_rng = sub_rng(cfg.seed, RNG_SEED_BUFFER);
    offer_batch(&mut state.buffer, d0, 0, state.step, &mut buffer_rng);
    Ok(state)
}

/// One projected update on a new mini-batch.
///
/// Draws `candidate_pool` memory mini-batches, computes their gradients,
/// picks constraint gradients uniformly (random sampling) or weighted by
/// dissimilarity to the previous update direction (selective sampling),
/// projects the new-data gradient against them, applies the step, and
/// offers the new rows to the buffer. With an empty buffer, or when every
/// candidate gradient is zero (a zero gradient constrains nothing), the
/// step degrades to plain SGD and is counted as unprojected.
pub fn ogem_step<F: Real>(
    state: &mut TrainerState<F>,
    new_batch: &Batch<F>,
    spec: &OGemSpec<F>,
    cfg: &TrainConfig<F>,
    split_id: usize,
    sampling_rng: &mut ChaCha8Rng,
    buffer_rng: &mut ChaCha8Rng,
) -> Result<(), TrainError> {
    if spec.candidate_pool == 0 || spec.refs_per_step == 0 {
        return Err(TrainError::InvalidConfig(
            "candidate_pool and refs_per_step must be positive".into(),
        ));
    }
    let g = state.params.gradient(new_batch)?;

    let direction = if state.buffer.is_empty() {
        state.unprojected_steps += 1;
        g
    } else {
        // Candidate pool: P memory mini-batches and their gradients.
        let mut candidate_grads = Vec::with_capacity(spec.candidate_pool);
        for _ in 0..spec.candidate_pool {
            let picks = state.buffer.sample_random(cfg.batch_size, sampling_rng)?;
            let batch = batch_from_entries(&picks)?;
            candidate_grads.push(state.params.gradient(&batch)?);
        }
        let usable: Vec<usize> = (0..candidate_grads.len())
            .filter(|&i| candidate_grads[i].norm_sq() > F::zero())
            .collect();

        if usable.is_empty() {
            state.unprojected_steps += 1;
            g
        } else {
            let take = match spec.constraint_mode {
                ConstraintMode::Single => 1,
                ConstraintMode::Multi => spec.refs_per_step,
            };
            let reference = match &state.last_projected {
                Some(w) if w.norm_sq() > F::zero() => Some(w),
                _ if g.norm_sq() > F::zero() => Some(&g),
                _ => None,
            };
            let chosen: Vec<usize> = match (spec.sampling, reference) {
                (SamplingMode::Selective, Some(reference)) => {
                    let grads: Vec<GradVec<F>> = usable
                        .iter()
                        .map(|&i| candidate_grads[i].clone())
                        .collect();
                    let scores = selective_scores(reference, &grads)?;
                    sample_selective(&usable, &scores, take, sampling_rng)?
                        .into_iter()
                        .copied()
                        .collect()
                }
                _ => (0..take)
                    .map(|_| usable[sampling_rng.gen_range(0..usable.len())])
                    .collect(),
            };
            match spec.constraint_mode {
                ConstraintMode::Single => {
                    project_single(&g, &candidate_grads[chosen[0]], &spec.qp)?
                }
                ConstraintMode::Multi => {
                    let refs: Vec<GradVec<F>> = chosen
                        .iter()
                        .map(|&i| candidate_grads[i].clone())
                        .collect();
                    project_multi(&g, &refs, &spec.qp)?
                }
            }
        }
    };

    state.params = state.params.sgd_step(&direction, cfg.lr)?;
    state.last_projected = Some(direction);
    offer_batch(
        &mut state.buffer,
        new_batch,
        split_id,
        state.step,
        buffer_rng,
    );
    state.step += 1;
    Ok(())
}

/// Diagonal Fisher estimate: mean of squared per-sample loss gradients over
/// `sample_count` uniform draws from `data`.
pub fn ewc_importance<F: Real>(
    params: &ParamVec<F>,
    data: &Batch<F>,
    sample_count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<F>, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Model(ModelError::EmptyDataset));
    }
    if sample_count == 0 {
        return Err(TrainError::InvalidConfig(
            "importance_samples must be positive".into(),
        ));
    }
    let mut acc = vec![F::zero(); params.len()];
    for _ in 0..sample_count {
        let i = rng.gen_range(0..data.rows());
        let g = params.gradient(&data.select(&[i]))?;
        for (a, &gi) in acc.iter_mut().zip(g.as_slice()) {
            *a += gi * gi;
        }
    }
    let scale = F::one() / F::of_usize(sample_count);
    for a in &mut acc {
        *a *= scale;
    }
    Ok(acc)
}

/// Output-sensitivity importance: mean absolute gradient of the squared
/// norm of the pre-softmax outputs, over `sample_count` uniform draws.
pub fn mas_importance<F: Real>(
    params: &ParamVec<F>,
    data: &Batch<F>,
    sample_count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<F>, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Model(ModelError::EmptyDataset));
    }
    if sample_count == 0 {
        return Err(TrainError::InvalidConfig(
            "importance_samples must be positive".into(),
        ));
    }
    let mut acc = vec![F::zero(); params.len()];
    for _ in 0..sample_count {
        let i = rng.gen_range(0..data.rows());
        let g = params.output_sqnorm_gradient(data.row(i))?;
        for (a, &gi) in acc.iter_mut().zip(g.as_slice()) {
            *a += gi.abs();
        }
    }
    let scale = F::one() / F::of_usize(sample_count);
    for a in &mut acc {
        *a *= scale;
    }
    Ok(acc)
}

/// Loss gradient plus the quadratic penalty pull toward the anchor:
/// `g + lambda * importance .* (theta - anchor)`. At `lambda = 0` the plain
/// gradient is returned unchanged.
pub fn regularized_gradient<F: Real>(
    state: &TrainerState<F>,
    new_batch: &Batch<F>,
    reg: &RegSpec<F>,
) -> Result<GradVec<F>, TrainError> {
    let importance = state
        .importance
        .as_ref()
        .ok_or(TrainError::MissingImportance)?;
    let g = state.params.gradient(new_batch)?;
    if reg.lambda == F::zero() {
        return Ok(g);
    }
    if importance.weights.len() != g.len() {
        return Err(TrainError::Model(ModelError::DimensionMismatch {
            expected: g.len(),
            got: importance.weights.len(),
        }));
    }
    let theta = state.params.values();
    let anchor = importance.anchor.values();
    let out: Vec<F> = g
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &gi)| gi + reg.lambda * importance.weights[i] * (theta[i] - anchor[i]))
        .collect();
    GradVec::new(out).map_err(TrainError::Qp)
}

/// Mini-batch steps per epoch over `rows` samples (final short batch
/// included).
pub fn steps_per_epoch(rows: usize, batch_size: usize) -> u64 {
    ((rows + batch_size - 1) / batch_size) as u64
}

/// Training steps consumed by the seed phase.
pub fn seed_steps<F: Real>(cfg: &TrainConfig<F>, d0_rows: usize) -> u64 {
    cfg.epochs_d0 as u64 * steps_per_epoch(d0_rows, cfg.batch_size)
}

/// Cumulative steps after split `upto` for methods that train on each new
/// split only (NewData, the projection methods, Ewc, Mas).
pub fn online_cumulative_steps<F: Real>(
    cfg: &TrainConfig<F>,
    d0_rows: usize,
    split_sizes: &[usize],
    upto: usize,
) -> u64 {
    seed_steps(cfg, d0_rows)
        + split_sizes[..upto]
            .iter()
            .map(|&s| cfg.epochs_per_split as u64 * steps_per_epoch(s, cfg.batch_size))
            .sum::<u64>()
}

/// Cumulative steps after split `upto` for AllData, which retrains from
/// scratch at every split for `epochs_d0 + n * epochs_per_split` epochs
/// over all data seen so far.
pub fn all_data_cumulative_steps<F: Real>(
    cfg: &TrainConfig<F>,
    d0_rows: usize,
    split_sizes: &[usize],
    upto: usize,
) -> u64 {
    let mut total = seed_steps(cfg, d0_rows);
    let mut rows = d0_rows;
    for (m, &s) in split_sizes[..upto].iter().enumerate() {
        rows += s;
        let epochs = (cfg.epochs_d0 + (m + 1) * cfg.epochs_per_split) as u64;
        total += epochs * steps_per_epoch(rows, cfg.batch_size);
    }
    total
}

/// Runs one method over the full stream protocol, producing one metrics
/// row per logged epoch and a summary row at the end of the seed phase and
/// of every split.
///
/// AllData logs the final `epochs_per_split` epochs of each retrain so its
/// epoch axis lines up with the online methods, while its step counter
/// absorbs the whole retrain cost.
pub fn run_method<F: Real>(
    method: &MethodSpec<F>,
    stream: &Stream<F>,
    arch: Architecture,
    cfg: &TrainConfig<F>,
) -> Result<MetricsLog, TrainError> {
    cfg.validate()?;
    let start = Instant::now();
    let name = method.name();
    let validation = &stream.validation.batch;
    let mut log = MetricsLog::default();

    let eval = |params: &ParamVec<F>,
                split: usize,
                epoch: usize,
                steps: u64,
                log: &mut MetricsLog|
     -> Result<(), TrainError> {
        let acc = params.accuracy(validation)?.as_f64();
        log.push(MetricsRow {
            split,
            epoch,
            method: name.clone(),
            val_acc: acc,
            val_err: 1.0 - acc,
            cum_steps: steps,
            cum_wall_s: start.elapsed().as_secs_f64(),
        });
        Ok(())
    };

    // Seed phase, identical for every method.
    let mut state = train_seed_with(arch, &stream.d0.batch, cfg, |epoch, st| {
        eval(&st.params, 0, epoch, st.step, &mut log)
    })?;
    let mut cum_steps = state.step;
    eval(&state.params, 0, SUMMARY_EPOCH, cum_steps, &mut log)?;

    let mut shuffle_rng = sub_rng(cfg.seed, RNG_SPLIT_SHUFFLE);
    let mut buffer_rng = sub_rng(cfg.seed, RNG_SPLIT_BUFFER);
    let mut sampling_rng = sub_rng(cfg.seed, RNG_SAMPLING);
    let mut importance_rng = sub_rng(cfg.seed, RNG_IMPORTANCE);

    for n in 1..=stream.splits.len() {
        let split = &stream.splits[n - 1].batch;
        match method {
            MethodSpec::AllData => {
                let mut parts: Vec<&Batch<F>> = vec![&stream.d0.batch];
                parts.extend(stream.splits[..n].iter().map(|p| &p.batch));
                let union = Batch::concat(&parts)?;
                let total_epochs = cfg.epochs_d0 + n * cfg.epochs_per_split;
                let mut params = ParamVec::init(arch, cfg.seed);
                let mut retrain_rng = sub_rng(cfg.seed, RNG_RETRAIN_BASE + n as u64);
                for e in 1..=total_epochs {
                    for chunk in minibatch_indices(union.rows(), cfg.batch_size, &mut retrain_rng)
                    {
                        let batch = union.select(&chunk);
                        let g = params.gradient(&batch)?;
                        params = params.sgd_step(&g, cfg.lr)?;
                        cum_steps += 1;
                    }
                    if e + cfg.epochs_per_split > total_epochs {
                        eval(
                            &params,
                            n,
                            e + cfg.epochs_per_split - total_epochs,
                            cum_steps,
                            &mut log,
                        )?;
                    }
                }
                state.params = params;
            }
            MethodSpec::NewData => {
                for e in 1..=cfg.epochs_per_split {
                    for chunk in minibatch_indices(split.rows(), cfg.batch_size, &mut shuffle_rng)
                    {
                        let batch = split.select(&chunk);
                        let g = state.params.gradient(&batch)?;
                        state.params = state.params.sgd_step(&g, cfg.lr)?;
                        state.step += 1;
                        cum_steps += 1;
                    }
                    eval(&state.params, n, e, cum_steps, &mut log)?;
                }
            }
            MethodSpec::OGem(spec) => {
                for e in 1..=cfg.epochs_per_split {
                    for chunk in minibatch_indices(split.rows(), cfg.batch_size, &mut shuffle_rng)
                    {
                        let batch = split.select(&chunk);
                        ogem_step(
                            &mut state,
                            &batch,
                            spec,
                            cfg,
                            n,
                            &mut sampling_rng,
                            &mut buffer_rng,
                        )?;
                        cum_steps += 1;
                    }
                    eval(&state.params, n, e, cum_steps, &mut log)?;
                }
            }
            MethodSpec::Ewc(reg) | MethodSpec::Mas(reg) => {
                // Importance and anchor refresh at the split boundary, from
                // the same buffered evidence the replay methods see.
                let data = buffer_batch(&state.buffer)?;
                let weights = match method {
                    MethodSpec::Ewc(_) => ewc_importance(
                        &state.params,
                        &data,
                        reg.importance_samples,
                        &mut importance_rng,
                    )?,
                    _ => mas_importance(
                        &state.params,
                        &data,
                        reg.importance_samples,
                        &mut importance_rng,
                    )?,
                };
                state.importance = Some(Importance {
                    weights,
                    anchor: state.params.clone(),
                });
                for e in 1..=cfg.epochs_per_split {
                    for chunk in minibatch_indices(split.rows(), cfg.batch_size, &mut shuffle_rng)
                    {
                        let batch = split.select(&chunk);
                        let g = regularized_gradient(&state, &batch, reg)?;
                        state.params = state.params.sgd_step(&g, cfg.lr)?;
                        state.step += 1;
                        cum_steps += 1;
                        offer_batch(&mut state.buffer, &batch, n, state.step, &mut buffer_rng);
                    }
                    eval(&state.params, n, e, cum_steps, &mut log)?;
                }
            }
        }
        eval(&state.params, n, SUMMARY_EPOCH, cum_steps, &mut log)?;
    }

    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{generate_stream, StreamSpec};

    fn tiny_cfg() -> TrainConfig<f64> {
        TrainConfig {
            epochs_d0: 2,
            epochs_per_split: 2,
            batch_size: 10,
            lr: 0.05,
            memory_capacity: 50,
            seed: 7,
        }
    }

    fn tiny_stream() -> Stream<f64> {
        generate_stream(&StreamSpec {
            input_dim: 2,
            class_count: 3,
            d0_size: 60,
            increment_size: 30,
            n_splits: 2,
            drift_rate: 0.5,
            cluster_spread: 0.4,
            val_size: 30,
            seed: 5,
        })
        .unwrap()
    }

    fn arch() -> Architecture {
        Architecture::new(2, 0, 3).unwrap()
    }

    #[test]
    fn seed_step_count_matches_formula() {
        let stream = tiny_stream();
        let mut cfg = tiny_cfg();
        cfg.epochs_d0 = 1;
        let state = train_seed(arch(), &stream.d0.batch, &cfg).unwrap();
        // 60 rows / batch 10 = 6 steps per epoch.
        assert_eq!(state.step, 6);
        assert_eq!(state.step, seed_steps(&cfg, 60));
        assert_eq!(state.buffer.seen(), 60);
    }

    #[test]
    fn train_seed_is_deterministic() {
        let stream = tiny_stream();
        let cfg = tiny_cfg();
        let a = train_seed(arch(), &stream.d0.batch, &cfg).unwrap();
        let b = train_seed(arch(), &stream.d0.batch, &cfg).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn ogem_step_empty_buffer_degrades_to_sgd() {
        let stream = tiny_stream();
        let cfg = tiny_cfg();
        let mut state = train_seed(arch(), &stream.d0.batch, &cfg).unwrap();
        state.buffer = MemoryBuffer::new(cfg.memory_capacity); // emptied
        let spec = OGemSpec::single(SamplingMode::Selective);
        let batch = stream.splits[0].batch.select(&[0, 1, 2]);
        let g = state.params.gradient(&batch).unwrap();
        let expected = state.params.sgd_step(&g, cfg.lr).unwrap();
        let mut r1 = sub_rng(0, 1);
        let mut r2 = sub_rng(0, 2);
        ogem_step(&mut state, &batch, &spec, &cfg, 1, &mut r1, &mut r2).unwrap();
        assert_eq!(state.params, expected);
        assert_eq!(state.unprojected_steps, 1);
        assert!(!state.buffer.is_empty()); // rows were offered afterwards
    }

    #[test]
    fn ogem_step_parallel_memory_leaves_gradient_alone() {
        // Buffer holds exactly the same rows as the new batch, so the memory
        // gradient is parallel to g and the projection stays inactive.
        let cfg = TrainConfig {
            batch_size: 1,
            ..tiny_cfg()
        };
        let a = arch();
        let params = ParamVec::init(a, 3);
        let row = vec![0.5, -1.0];
        let batch = Batch::from_rows(&[row.clone()], vec![1]).unwrap();
        let mut buffer = MemoryBuffer::new(4);
        let mut rng = sub_rng(0, 0);
        buffer.insert(
            MemoryEntry {
                features: row,
                label: 1,
                split_id: 0,
                insert_step: 0,
            },
            &mut rng,
        );
        let g = params.gradient(&batch).unwrap();
        let expected = params.sgd_step(&g, cfg.lr).unwrap();
        let mut state = TrainerState {
            params,
            buffer,
            last_projected: None,
            importance: None,
            step: 0,
            unprojected_steps: 0,
        };
        let spec = OGemSpec::single(SamplingMode::Random);
        let mut r1 = sub_rng(0, 1);
        let mut r2 = sub_rng(0, 2);
        ogem_step(&mut state, &batch, &spec, &cfg, 1, &mut r1, &mut r2).unwrap();
        assert_eq!(state.params, expected);
        assert_eq!(state.unprojected_steps, 0);
    }

    #[test]
    fn ogem_step_antiparallel_memory_cancels_update() {
        // At theta = 0 with two classes, the same features under the other
        // label produce exactly the negated gradient, so the projected
        // direction vanishes and the parameters stay put.
        let a = Architecture::new(2, 0, 2).unwrap();
        let params = ParamVec::from_values(a, vec![0.0; a.param_count()]).unwrap();
        let cfg = TrainConfig {
            batch_size: 1,
            ..tiny_cfg()
        };
        let row = vec![1.0, -0.5];
        let batch = Batch::from_rows(&[row.clone()], vec![0]).unwrap();
        let mut buffer = MemoryBuffer::new(4);
        let mut rng = sub_rng(0, 0);
        buffer.insert(
            MemoryEntry {
                features: row,
                label: 1,
                split_id: 0,
                insert_step: 0,
            },
            &mut rng,
        );
        let mut state = TrainerState {
            params: params.clone(),
            buffer,
            last_projected: None,
            importance: None,
            step: 0,
            unprojected_steps: 0,
        };
        let spec = OGemSpec::single(SamplingMode::Random);
        let mut r1 = sub_rng(0, 1);
        let mut r2 = sub_rng(0, 2);
        ogem_step(&mut state, &batch, &spec, &cfg, 1, &mut r1, &mut r2).unwrap();
        for (p, q) in state.params.values().iter().zip(params.values()) {
            assert!((p - q).abs() < 1e-12);
        }
        let w = state.last_projected.as_ref().unwrap();
        assert!(w.norm() < 1e-12);
    }

    #[test]
    fn ewc_importance_zero_at_saturated_optimum() {
        // Saturated logits make the softmax exactly one-hot in floating
        // point, so every per-sample gradient is exactly zero.
        let a = Architecture::new(2, 0, 2).unwrap();
        let params =
            ParamVec::from_values(a, vec![400.0, 0.0, -400.0, 0.0, 0.0, 0.0]).unwrap();
        let batch =
            Batch::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]], vec![0, 1]).unwrap();
        let mut rng = sub_rng(0, 0);
        let f = ewc_importance(&params, &batch, 16, &mut rng).unwrap();
        assert!(f.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ewc_importance_single_sample_is_squared_gradient() {
        let a = arch();
        let params = ParamVec::<f64>::init(a, 1);
        let batch = Batch::from_rows(&[vec![0.4, 0.6]], vec![2]).unwrap();
        let mut rng = sub_rng(0, 0);
        let f = ewc_importance(&params, &batch, 1, &mut rng).unwrap();
        let g = params.gradient(&batch).unwrap();
        for (fi, gi) in f.iter().zip(g.as_slice()) {
            assert!((fi - gi * gi).abs() < 1e-15);
        }
    }

    #[test]
    fn ewc_importance_matches_loop_oracle() {
        let a = arch();
        let params = ParamVec::init(a, 2);
        let stream = tiny_stream();
        let data = &stream.d0.batch;
        let seed_rng = || sub_rng(99, 0);
        let f = ewc_importance(&params, data, 32, &mut seed_rng()).unwrap();

        // Independent re-computation replaying the same draws.
        let mut rng = seed_rng();
        let mut expected = vec![0.0f64; params.len()];
        for _ in 0..32 {
            let i = rng.gen_range(0..data.rows());
            let g = params.gradient(&data.select(&[i])).unwrap();
            for (e, &gi) in expected.iter_mut().zip(g.as_slice()) {
                *e += gi * gi;
            }
        }
        for e in &mut expected {
            *e /= 32.0;
        }
        for (a, b) in f.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn mas_importance_zero_at_zero_params() {
        let a = arch();
        let params = ParamVec::from_values(a, vec![0.0; a.param_count()]).unwrap();
        let stream = tiny_stream();
        let mut rng = sub_rng(0, 0);
        let omega = mas_importance(&params, &stream.d0.batch, 8, &mut rng).unwrap();
        assert!(omega.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mas_importance_single_sample_definition() {
        let a = arch();
        let params = ParamVec::<f64>::init(a, 4);
        let batch = Batch::from_rows(&[vec![0.7, -0.3]], vec![0]).unwrap();
        let mut rng = sub_rng(0, 0);
        let omega = mas_importance(&params, &batch, 1, &mut rng).unwrap();
        let g = params.output_sqnorm_gradient(batch.row(0)).unwrap();
        for (o, gi) in omega.iter().zip(g.as_slice()) {
            assert_eq!(*o, gi.abs());
        }
    }

    #[test]
    fn regularized_gradient_lambda_zero_is_plain_gradient() {
        let stream = tiny_stream();
        let cfg = tiny_cfg();
        let mut state = train_seed(arch(), &stream.d0.batch, &cfg).unwrap();
        state.importance = Some(Importance {
            weights: vec![1.0; state.params.len()],
            anchor: ParamVec::init(arch(), 999),
        });
        let batch = stream.splits[0].batch.select(&[0, 1]);
        let reg = RegSpec {
            lambda: 0.0,
            importance_samples: 1,
        };
        let g = regularized_gradient(&state, &batch, &reg).unwrap();
        assert_eq!(g, state.params.gradient(&batch).unwrap());
    }

    #[test]
    fn regularized_gradient_zero_at_anchor() {
        let stream = tiny_stream();
        let cfg = tiny_cfg();
        let mut state = train_seed(arch(), &stream.d0.batch, &cfg).unwrap();
        state.importance = Some(Importance {
            weights: vec![2.5; state.params.len()],
            anchor: state.params.clone(),
        });
        let batch = stream.splits[0].batch.select(&[0, 1]);
        let reg = RegSpec {
            lambda: 10.0,
            importance_samples: 1,
        };
        let g = regularized_gradient(&state, &batch, &reg).unwrap();
        let plain = state.params.gradient(&batch).unwrap();
        for (a, b) in g.as_slice().iter().zip(plain.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn regularized_gradient_requires_importance() {
        let stream = tiny_stream();
        let cfg = tiny_cfg();
        let state = train_seed(arch(), &stream.d0.batch, &cfg).unwrap();
        let batch = stream.splits[0].batch.select(&[0]);
        let reg = RegSpec {
            lambda: 1.0,
            importance_samples: 1,
        };
        assert!(matches!(
            regularized_gradient(&state, &batch, &reg),
            Err(TrainError::MissingImportance)
        ));
    }

    #[test]
    fn run_method_zero_splits_logs_seed_only() {
        let mut spec = StreamSpec::<f64>::default_desk(3);
        spec.class_count = 3;
        spec.d0_size = 80;
        spec.increment_size = 10;
        spec.n_splits = 0;
        spec.val_size = 40;
        let stream = generate_stream(&spec).unwrap();
        let cfg = tiny_cfg();
        let log = run_method(&MethodSpec::NewData, &stream, arch(), &cfg).unwrap();
        assert_eq!(log.epoch_rows().count(), cfg.epochs_d0);
        assert_eq!(log.summary_rows().count(), 1);
        log.check_invariants().unwrap();
    }

    #[test]
    fn new_data_step_counts_match_formula() {
        let stream = tiny_stream();
        let cfg = tiny_cfg();
        let log = run_method(&MethodSpec::NewData, &stream, arch(), &cfg).unwrap();
        let sizes = [15usize, 15];
        let summaries: Vec<u64> = log.summary_rows().map(|r| r.cum_steps).collect();
        assert_eq!(summaries.len(), 3);
        assert_eq!(summaries[0], seed_steps(&cfg, 60));
        assert_eq!(summaries[1], online_cumulative_steps(&cfg, 60, &sizes, 1));
        assert_eq!(summaries[2], online_cumulative_steps(&cfg, 60, &sizes, 2));
    }

    #[test]
    fn all_data_step_counts_match_formula() {
        let stream = tiny_stream();
        let cfg = tiny_cfg();
        let log = run_method(&MethodSpec::AllData, &stream, arch(), &cfg).unwrap();
        let sizes = [15usize, 15];
        let summaries: Vec<u64> = log.summary_rows().map(|r| r.cum_steps).collect();
        assert_eq!(summaries[1], all_data_cumulative_steps(&cfg, 60, &sizes, 1));
        assert_eq!(summaries[2], all_data_cumulative_steps(&cfg, 60, &sizes, 2));
        // Per-split epoch rows stay aligned with the online methods.
        assert_eq!(
            log.epoch_rows().filter(|r| r.split == 1).count(),
            cfg.epochs_per_split
        );
    }

    #[test]
    fn runs_are_deterministic_modulo_wall_time() {
        let stream = tiny_stream();
        let cfg = tiny_cfg();
        let method = MethodSpec::OGem(OGemSpec::single(SamplingMode::Selective));
        let a = run_method(&method, &stream, arch(), &cfg).unwrap();
        let b = run_method(&method, &stream, arch(), &cfg).unwrap();
        assert_eq!(a.rows.len(), b.rows.len());
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.split, y.split);
            assert_eq!(x.epoch, y.epoch);
            assert_eq!(x.val_acc, y.val_acc);
            assert_eq!(x.cum_steps, y.cum_steps);
        }
    }

    #[test]
    fn ogem_beats_new_data_on_drifted_stream() {
        let spec = StreamSpec {
            input_dim: 2,
            class_count: 4,
            d0_size: 800,
            increment_size: 400,
            n_splits: 2,
            drift_rate: 0.8,
            cluster_spread: 0.55,
            val_size: 600,
            seed: 13,
        };
        let stream = generate_stream(&spec).unwrap();
        let cfg = TrainConfig {
            epochs_d0: 15,
            epochs_per_split: 10,
            batch_size: 32,
            lr: 0.05,
            memory_capacity: 500,
            seed: 1,
        };
        let a = Architecture::new(2, 0, 4).unwrap();
        let ogem = run_method(
            &MethodSpec::OGem(OGemSpec::single(SamplingMode::Selective)),
            &stream,
            a,
            &cfg,
        )
        .unwrap();
        let new_data = run_method(&MethodSpec::NewData, &stream, a, &cfg).unwrap();
        let acc_ogem = ogem.final_summary().unwrap().val_acc;
        let acc_new = new_data.final_summary().unwrap().val_acc;
        assert!(
            acc_ogem >= acc_new,
            "ogem {acc_ogem} should not trail new-data {acc_new}"
        );
    }

    #[test]
    fn method_names() {
        assert_eq!(MethodSpec::<f64>::AllData.name(), "all_data");
        assert_eq!(
            MethodSpec::OGem(OGemSpec::<f64>::multi(SamplingMode::Random)).name(),
            "ogem_multi_random"
        );
        assert_eq!(
            MethodSpec::Ewc(RegSpec::<f64>::ewc_default()).name(),
            "ewc"
        );
    }
}
