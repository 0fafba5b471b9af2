//! Small classifiers with hand-written reverse-mode gradients: a
//! linear-softmax model and a one-hidden-layer tanh MLP. Parameters live in
//! a single flat vector with a fixed layer-major layout, so gradients drop
//! straight into the projection machinery.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::qp::GradVec;
use crate::real::Real;

/// Network shape. `hidden_dim = 0` selects the plain linear model;
/// otherwise a single tanh hidden layer is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub class_count: usize,
}

impl Architecture {
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        class_count: usize,
    ) -> Result<Self, ModelError> {
        if input_dim < 1 || class_count < 2 {
            return Err(ModelError::InvalidArchitecture {
                input_dim,
                class_count,
            });
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            class_count,
        })
    }

    pub fn is_linear(&self) -> bool {
        self.hidden_dim == 0
    }

    /// Total parameter count under the flat layout.
    pub fn param_count(&self) -> usize {
        if self.is_linear() {
            self.class_count * self.input_dim + self.class_count
        } else {
            self.hidden_dim * self.input_dim
                + self.hidden_dim
                + self.class_count * self.hidden_dim
                + self.class_count
        }
    }
}

/// Dense feature rows with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<F: Real> {
    features: Vec<F>,
    labels: Vec<usize>,
    input_dim: usize,
}

impl<F: Real> Batch<F> {
    pub fn new(features: Vec<F>, labels: Vec<usize>, input_dim: usize) -> Result<Self, ModelError> {
        if input_dim == 0 || features.len() != labels.len() * input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: labels.len() * input_dim.max(1),
                got: features.len(),
            });
        }
        Ok(Self {
            features,
            labels,
            input_dim,
        })
    }

    pub fn from_rows(rows: &[Vec<F>], labels: Vec<usize>) -> Result<Self, ModelError> {
        let input_dim = rows.first().map_or(1, |r| r.len());
        if rows.len() != labels.len() || rows.iter().any(|r| r.len() != input_dim) {
            return Err(ModelError::DimensionMismatch {
                expected: labels.len(),
                got: rows.len(),
            });
        }
        let mut features = Vec::with_capacity(rows.len() * input_dim);
        for r in rows {
            features.extend_from_slice(r);
        }
        Self::new(features, labels, input_dim)
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// New batch keeping the rows at `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> Batch<F> {
        let mut features = Vec::with_capacity(indices.len() * self.input_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Batch {
            features,
            labels,
            input_dim: self.input_dim,
        }
    }

    /// Row-wise concatenation.
    pub fn concat(parts: &[&Batch<F>]) -> Result<Batch<F>, ModelError> {
        let input_dim = parts.first().map_or(1, |b| b.input_dim);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for b in parts {
            if b.input_dim != input_dim {
                return Err(ModelError::DimensionMismatch {
                    expected: input_dim,
                    got: b.input_dim,
                });
            }
            features.extend_from_slice(&b.features);
            labels.extend_from_slice(&b.labels);
        }
        Batch::new(features, labels, input_dim)
    }
}

/// Flat parameter vector with its layout descriptor.
///
/// Layout is layer-major: hidden weights row-major, hidden biases, output
/// weights row-major, output biases (linear models have only the output
/// layer).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVec<F: Real> {
    arch: Architecture,
    values: Vec<F>,
}

/// Owned per-layer view of a parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelLayers<F: Real> {
    Linear {
        weights: Vec<F>,
        biases: Vec<F>,
    },
    Mlp {
        hidden_weights: Vec<F>,
        hidden_biases: Vec<F>,
        output_weights: Vec<F>,
        output_biases: Vec<F>,
    },
}

#[derive(Debug, PartialEq)]
pub enum ModelError {
    DimensionMismatch { expected: usize, got: usize },
    LabelOutOfRange { label: usize, classes: usize },
    InvalidArchitecture { input_dim: usize, class_count: usize },
    EmptyDataset,
    NonFinite,
}

impl std::fmt::Display for ModelError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelError::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            ModelError::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            ModelError::InvalidArchitecture {
                input_dim,
                class_count,
            } => write!(
                f,
                "invalid architecture: input_dim={input_dim}, class_count={class_count}"
            ),
            ModelError::EmptyDataset => write!(f, "empty dataset"),
            ModelError::NonFinite => write!(f, "non-finite value in computation"),
        }
    }
}

impl std::error::Error for ModelError {}

impl<F: Real> ParamVec<F> {
    /// Glorot-uniform weights (`U(-s, s)`, `s = sqrt(6/(fan_in+fan_out))`
    /// per layer), zero biases. Weight entries are drawn in layout order
    /// from a ChaCha8 stream seeded with `seed`.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![F::zero(); arch.param_count()];
        let draw = |out: &mut [F], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng| {
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in out {
                *v = F::of((rng.gen::<f64>() * 2.0 - 1.0) * s);
            }
        };
        if arch.is_linear() {
            let w_len = arch.class_count * arch.input_dim;
            draw(
                &mut values[..w_len],
                arch.input_dim,
                arch.class_count,
                &mut rng,
            );
        } else {
            let w1_len = arch.hidden_dim * arch.input_dim;
            draw(&mut values[..w1_len], arch.input_dim, arch.hidden_dim, &mut rng);
            let w2_start = w1_len + arch.hidden_dim;
            let w2_len = arch.class_count * arch.hidden_dim;
            draw(
                &mut values[w2_start..w2_start + w2_len],
                arch.hidden_dim,
                arch.class_count,
                &mut rng,
            );
        }
        Self { arch, values }
    }

    pub fn from_values(arch: Architecture, values: Vec<F>) -> Result<Self, ModelError> {
        if values.len() != arch.param_count() {
            return Err(ModelError::DimensionMismatch {
                expected: arch.param_count(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        Ok(Self { arch, values })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_layers(&self) -> ModelLayers<F> {
        let a = self.arch;
        if a.is_linear() {
            let w_len = a.class_count * a.input_dim;
            ModelLayers::Linear {
                weights: self.values[..w_len].to_vec(),
                biases: self.values[w_len..].to_vec(),
            }
        } else {
            let w1 = a.hidden_dim * a.input_dim;
            let b1 = w1 + a.hidden_dim;
            let w2 = b1 + a.class_count * a.hidden_dim;
            ModelLayers::Mlp {
                hidden_weights: self.values[..w1].to_vec(),
                hidden_biases: self.values[w1..b1].to_vec(),
                output_weights: self.values[b1..w2].to_vec(),
                output_biases: self.values[w2..].to_vec(),
            }
        }
    }

    pub fn from_layers(arch: Architecture, layers: &ModelLayers<F>) -> Result<Self, ModelError> {
        let mut values = Vec::with_capacity(arch.param_count());
        match layers {
            ModelLayers::Linear { weights, biases } => {
                values.extend_from_slice(weights);
                values.extend_from_slice(biases);
            }
            ModelLayers::Mlp {
                hidden_weights,
                hidden_biases,
                output_weights,
                output_biases,
            } => {
                values.extend_from_slice(hidden_weights);
                values.extend_from_slice(hidden_biases);
                values.extend_from_slice(output_weights);
                values.extend_from_slice(output_biases);
            }
        }
        Self::from_values(arch, values)
    }

    fn check_batch(&self, batch: &Batch<F>) -> Result<(), ModelError> {
        if batch.input_dim() != self.arch.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.arch.input_dim,
                got: batch.input_dim(),
            });
        }
        for &l in batch.labels() {
            if l >= self.arch.class_count {
                return Err(ModelError::LabelOutOfRange {
                    label: l,
                    classes: self.arch.class_count,
                });
            }
        }
        Ok(())
    }

    /// Logits for one row; fills `hidden` with the tanh activations when the
    /// model has a hidden layer.
    fn logits_row(&self, x: &[F], hidden: &mut Vec<F>) -> Vec<F> {
        let a = self.arch;
        if a.is_linear() {
            let w = &self.values[..a.class_count * a.input_dim];
            let b = &self.values[a.class_count * a.input_dim..];
            (0..a.class_count)
                .map(|c| {
                    let mut z = b[c];
                    let row = &w[c * a.input_dim..(c + 1) * a.input_dim];
                    for (wi, xi) in row.iter().zip(x) {
                        z += *wi * *xi;
                    }
                    z
                })
                .collect()
        } else {
            let w1_len = a.hidden_dim * a.input_dim;
            let b1_end = w1_len + a.hidden_dim;
            let w2_end = b1_end + a.class_count * a.hidden_dim;
            let (w1, rest) = self.values.split_at(w1_len);
            let (b1, rest) = rest.split_at(a.hidden_dim);
            let (w2, b2) = rest.split_at(w2_end - b1_end);
            hidden.clear();
            for h in 0..a.hidden_dim {
                let mut z = b1[h];
                let row = &w1[h * a.input_dim..(h + 1) * a.input_dim];
                for (wi, xi) in row.iter().zip(x) {
                    z += *wi * *xi;
                }
                hidden.push(z.tanh());
            }
            (0..a.class_count)
                .map(|c| {
                    let mut z = b2[c];
                    let row = &w2[c * a.hidden_dim..(c + 1) * a.hidden_dim];
                    for (wi, hi) in row.iter().zip(hidden.iter()) {
                        z += *wi * *hi;
                    }
                    z
                })
                .collect()
        }
    }

    /// Mean cross-entropy over the batch (stable log-softmax) and the count
    /// of argmax-correct rows; ties break toward the lowest class index.
    pub fn forward_loss(&self, batch: &Batch<F>) -> Result<(F, usize), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        self.check_batch(batch)?;
        let mut hidden = Vec::new();
        let mut total = F::zero();
        let mut correct = 0usize;
        for i in 0..batch.rows() {
            let logits = self.logits_row(batch.row(i), &mut hidden);
            let y = batch.label(i);
            let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
            let sum_exp: F = logits.iter().map(|&z| (z - max).exp()).sum();
            total += max + sum_exp.ln() - logits[y];
            let argmax = logits
                .iter()
                .enumerate()
                .fold((0usize, F::neg_infinity()), |(bi, bv), (ci, &cv)| {
                    if cv > bv {
                        (ci, cv)
                    } else {
                        (bi, bv)
                    }
                })
                .0;
            if argmax == y {
                correct += 1;
            }
        }
        Ok((total / F::of_usize(batch.rows()), correct))
    }

    /// Exact mean-reduction gradient of the cross-entropy loss, flattened in
    /// layout order.
    pub fn gradient(&self, batch: &Batch<F>) -> Result<GradVec<F>, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        self.check_batch(batch)?;
        let mut grad = vec![F::zero(); self.values.len()];
        let mut hidden = Vec::new();
        for i in 0..batch.rows() {
            let x = batch.row(i);
            let logits = self.logits_row(x, &mut hidden);
            let y = batch.label(i);
            let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
            let exps: Vec<F> = logits.iter().map(|&z| (z - max).exp()).collect();
            let denom: F = exps.iter().copied().sum();
            let mut dlogits: Vec<F> = exps.iter().map(|&e| e / denom).collect();
            dlogits[y] = dlogits[y] - F::one();
            self.accumulate_row(x, &hidden, &dlogits, &mut grad);
        }
        let scale = F::one() / F::of_usize(batch.rows());
        for g in &mut grad {
            *g *= scale;
        }
        GradVec::new(grad).map_err(|_| ModelError::NonFinite)
    }

    /// Gradient of the squared norm of the pre-softmax outputs for a single
    /// feature row (no labels involved).
    pub fn output_sqnorm_gradient(&self, features: &[F]) -> Result<GradVec<F>, ModelError> {
        if features.len() != self.arch.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.arch.input_dim,
                got: features.len(),
            });
        }
        let mut hidden = Vec::new();
        let logits = self.logits_row(features, &mut hidden);
        let dlogits: Vec<F> = logits.iter().map(|&z| z * F::of(2.0)).collect();
        let mut grad = vec![F::zero(); self.values.len()];
        self.accumulate_row(features, &hidden, &dlogits, &mut grad);
        GradVec::new(grad).map_err(|_| ModelError::NonFinite)
    }

    /// Backpropagates a logit-space gradient for one row into `grad`.
    fn accumulate_row(&self, x: &[F], hidden: &[F], dlogits: &[F], grad: &mut [F]) {
        let a = self.arch;
        if a.is_linear() {
            let w_len = a.class_count * a.input_dim;
            for c in 0..a.class_count {
                let d = dlogits[c];
                for (gi, xi) in grad[c * a.input_dim..(c + 1) * a.input_dim]
                    .iter_mut()
                    .zip(x)
                {
                    *gi += d * *xi;
                }
                grad[w_len + c] += d;
            }
        } else {
            let w1_len = a.hidden_dim * a.input_dim;
            let b1_end = w1_len + a.hidden_dim;
            let w2_end = b1_end + a.class_count * a.hidden_dim;
            let w2 = &self.values[b1_end..w2_end];

            // Output layer.
            for c in 0..a.class_count {
                let d = dlogits[c];
                for (g, hi) in grad[b1_end + c * a.hidden_dim..b1_end + (c + 1) * a.hidden_dim]
                    .iter_mut()
                    .zip(hidden)
                {
                    *g += d * *hi;
                }
                grad[w2_end + c] += d;
            }
            // Through tanh into the hidden layer.
            for h in 0..a.hidden_dim {
                let mut da = F::zero();
                for c in 0..a.class_count {
                    da += w2[c * a.hidden_dim + h] * dlogits[c];
                }
                let dz = da * (F::one() - hidden[h] * hidden[h]);
                for (g, xi) in grad[h * a.input_dim..(h + 1) * a.input_dim]
                    .iter_mut()
                    .zip(x)
                {
                    *g += dz * *xi;
                }
                grad[w1_len + h] += dz;
            }
        }
    }

    /// Fraction of argmax-correct rows.
    pub fn accuracy(&self, dataset: &Batch<F>) -> Result<F, ModelError> {
        let (_, correct) = self.forward_loss(dataset)?;
        Ok(F::of_usize(correct) / F::of_usize(dataset.rows()))
    }

    /// One plain gradient step: `theta' = theta - lr * direction`.
    pub fn sgd_step(&self, direction: &GradVec<F>, lr: F) -> Result<ParamVec<F>, ModelError> {
        if direction.len() != self.values.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.values.len(),
                got: direction.len(),
            });
        }
        let values: Vec<F> = self
            .values
            .iter()
            .zip(direction.as_slice())
            .map(|(&t, &d)| t - lr * d)
            .collect();
        Ok(ParamVec {
            arch: self.arch,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(input: usize, hidden: usize, classes: usize) -> Architecture {
        Architecture::new(input, hidden, classes).unwrap()
    }

    #[test]
    fn param_counts() {
        assert_eq!(arch(2, 0, 2).param_count(), 6);
        assert_eq!(arch(4, 8, 3).param_count(), 67);
    }

    #[test]
    fn init_is_deterministic() {
        let a = arch(3, 5, 4);
        let p1 = ParamVec::<f64>::init(a, 9);
        let p2 = ParamVec::<f64>::init(a, 9);
        assert_eq!(p1, p2);
        let p3 = ParamVec::<f64>::init(a, 10);
        assert_ne!(p1, p3);
    }

    #[test]
    fn init_biases_zero_weights_bounded() {
        let a = arch(4, 8, 3);
        let p = ParamVec::<f64>::init(a, 0);
        match p.to_layers() {
            ModelLayers::Mlp {
                hidden_weights,
                hidden_biases,
                output_weights,
                output_biases,
            } => {
                assert!(hidden_biases.iter().all(|&b| b == 0.0));
                assert!(output_biases.iter().all(|&b| b == 0.0));
                let s1 = (6.0f64 / (4.0 + 8.0)).sqrt();
                let s2 = (6.0f64 / (8.0 + 3.0)).sqrt();
                assert!(hidden_weights.iter().all(|w| w.abs() <= s1));
                assert!(output_weights.iter().all(|w| w.abs() <= s2));
            }
            _ => panic!("expected mlp layers"),
        }
    }

    #[test]
    fn zero_params_loss_is_ln_classes() {
        for classes in [2usize, 3, 5] {
            let a = arch(2, 0, classes);
            let p = ParamVec::from_values(a, vec![0.0; a.param_count()]).unwrap();
            let labels: Vec<usize> = (0..classes).collect();
            let rows: Vec<Vec<f64>> = (0..classes).map(|i| vec![i as f64, 1.0]).collect();
            let batch = Batch::from_rows(&rows, labels).unwrap();
            let (loss, _) = p.forward_loss(&batch).unwrap();
            assert_eq!(loss, (classes as f64).ln());
        }
    }

    #[test]
    fn hand_computed_two_sample_loss() {
        // theta: W=[[1,0],[0,1]], b=(0,0). Rows (1,0) y=0 and (0,2) y=1.
        // Row 1 logits (1,0): loss = ln(1+e^-1). Row 2 logits (0,2):
        // loss = ln(1+e^-2). Mean of the two.
        let a = arch(2, 0, 2);
        let p = ParamVec::from_values(a, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let batch = Batch::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]], vec![0, 1]).unwrap();
        let (loss, correct) = p.forward_loss(&batch).unwrap();
        let expected = (((-1.0f64).exp() + 1.0).ln() + ((-2.0f64).exp() + 1.0).ln()) / 2.0;
        assert!((loss - expected).abs() < 1e-12);
        assert_eq!(correct, 2);
    }

    #[test]
    fn accuracy_tie_breaks_to_lowest_class() {
        let a = arch(2, 0, 2);
        let p = ParamVec::from_values(a, vec![0.0; 6]).unwrap();
        let batch =
            Batch::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1]).unwrap();
        // All logits tie, argmax picks class 0, so only the class-0 row is
        // correct.
        assert_eq!(p.accuracy(&batch).unwrap(), 0.5);
    }

    #[test]
    fn accuracy_perfect_separation() {
        // W picks the sign of each coordinate; the four points are split
        // exactly.
        let a = arch(2, 0, 2);
        let p = ParamVec::from_values(a, vec![1.0, 0.0, -1.0, 0.0, 0.0, 0.0]).unwrap();
        let batch = Batch::from_rows(
            &[vec![2.0, 0.5], vec![1.0, -1.0], vec![-2.0, 0.5], vec![-1.0, 3.0]],
            vec![0, 0, 1, 1],
        )
        .unwrap();
        assert_eq!(p.accuracy(&batch).unwrap(), 1.0);
        let single = Batch::from_rows(&[vec![2.0, 0.0]], vec![0]).unwrap();
        assert_eq!(p.accuracy(&single).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_empty_errors() {
        let a = arch(2, 0, 2);
        let p = ParamVec::<f64>::init(a, 0);
        let empty = Batch::new(vec![], vec![], 2).unwrap();
        assert_eq!(p.accuracy(&empty).unwrap_err(), ModelError::EmptyDataset);
    }

    #[test]
    fn zero_variance_batch_matches_single_sample() {
        let a = arch(3, 4, 2);
        let p = ParamVec::<f64>::init(a, 5);
        let row = vec![0.3, -0.7, 1.1];
        let single = Batch::from_rows(&[row.clone()], vec![1]).unwrap();
        let triple = Batch::from_rows(&[row.clone(), row.clone(), row], vec![1, 1, 1]).unwrap();
        let g1 = p.gradient(&single).unwrap();
        let g3 = p.gradient(&triple).unwrap();
        for (a, b) in g1.as_slice().iter().zip(g3.as_slice()) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn descent_step_reduces_loss() {
        let a = arch(2, 8, 3);
        let p = ParamVec::<f64>::init(a, 17);
        let batch = Batch::from_rows(
            &[vec![0.5, -0.2], vec![-1.0, 0.7], vec![0.1, 0.9]],
            vec![0, 1, 2],
        )
        .unwrap();
        let (before, _) = p.forward_loss(&batch).unwrap();
        let g = p.gradient(&batch).unwrap();
        let stepped = p.sgd_step(&g, 1e-3).unwrap();
        let (after, _) = stepped.forward_loss(&batch).unwrap();
        assert!(after < before);
    }

    #[test]
    fn sgd_step_examples() {
        let a = arch(1, 0, 2);
        // theta = (1, 1, 0, 0) restricted view; use the two weight slots.
        let p = ParamVec::<f64>::from_values(a, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let dir = GradVec::new(vec![1.0, -1.0, 0.0, 0.0]).unwrap();
        let stepped = p.sgd_step(&dir, 0.5).unwrap();
        assert_eq!(&stepped.values()[..2], &[0.5, 1.5]);

        let zero = GradVec::new(vec![0.0; 4]).unwrap();
        assert_eq!(p.sgd_step(&zero, 0.5).unwrap(), p);

        // Two successive steps equal one step of the summed directions.
        let d1 = GradVec::new(vec![0.25, -0.5, 1.0, 2.0]).unwrap();
        let d2 = GradVec::new(vec![-0.75, 0.5, 0.5, -1.0]).unwrap();
        let sum = GradVec::new(
            d1.as_slice()
                .iter()
                .zip(d2.as_slice())
                .map(|(a, b)| a + b)
                .collect(),
        )
        .unwrap();
        let two = p.sgd_step(&d1, 0.5).unwrap().sgd_step(&d2, 0.5).unwrap();
        let one = p.sgd_step(&sum, 0.5).unwrap();
        for (a, b) in two.values().iter().zip(one.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_step_rejects_wrong_length() {
        let a = arch(2, 0, 2);
        let p = ParamVec::<f64>::init(a, 0);
        let dir = GradVec::new(vec![1.0]).unwrap();
        assert!(matches!(
            p.sgd_step(&dir, 0.1),
            Err(ModelError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn layers_roundtrip_identity() {
        for a in [arch(3, 0, 2), arch(2, 5, 4)] {
            let p = ParamVec::<f64>::init(a, 21);
            let rebuilt = ParamVec::from_layers(a, &p.to_layers()).unwrap();
            assert_eq!(rebuilt, p);
        }
    }

    #[test]
    fn forward_loss_permutation_invariant() {
        let a = arch(2, 4, 3);
        let p = ParamVec::<f64>::init(a, 3);
        let rows = vec![vec![0.1, 0.2], vec![-0.5, 0.8], vec![1.5, -0.3]];
        let b1 = Batch::from_rows(&rows, vec![0, 1, 2]).unwrap();
        let b2 = Batch::from_rows(
            &[rows[2].clone(), rows[0].clone(), rows[1].clone()],
            vec![2, 0, 1],
        )
        .unwrap();
        let (l1, c1) = p.forward_loss(&b1).unwrap();
        let (l2, c2) = p.forward_loss(&b2).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        assert_eq!(c1, c2);
        assert!(l1 >= 0.0);
    }

    #[test]
    fn rejects_label_out_of_range() {
        let a = arch(2, 0, 2);
        let p = ParamVec::<f64>::init(a, 0);
        let batch = Batch::from_rows(&[vec![0.0, 0.0]], vec![2]).unwrap();
        assert!(matches!(
            p.forward_loss(&batch),
            Err(ModelError::LabelOutOfRange { .. })
        ));
    }
}
