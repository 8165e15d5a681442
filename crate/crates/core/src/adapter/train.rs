//! Mini-batch Adam training of the adapter.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LinearAdapter, LossMode, TrainError};
use crate::embedding::{EmbeddingVector, Embedder};
use crate::synth::PairExample;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub margin: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            learning_rate: 5e-6,
            epochs: 2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            loss_mode: LossMode::DistanceStandard,
            margin: 0.5,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !positive(self.learning_rate) || !positive(self.epsilon) || !positive(self.margin) {
            return Err(TrainError::Config("learning rate, epsilon and margin must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(TrainError::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Mean training loss per epoch, in order.
    pub epoch_losses: Vec<f64>,
    /// Epoch (0-based) whose end-of-epoch weights were returned.
    pub selected_epoch: Option<usize>,
}

/// A pair with both sides already embedded.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub label: u8,
}

/// Embeds both sides of every pair with `embedder` and trains on the result.
pub fn train_adapter(
    pairs: &[PairExample],
    embedder: &Embedder,
    cfg: &TrainConfig,
) -> Result<(LinearAdapter<f64>, TrainLog), TrainError> {
    check_labels(pairs.iter().map(|p| p.label))?;
    let mut texts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in pairs {
        for t in [p.side_a.as_str(), p.side_b.as_str()] {
            let n = texts.len();
            texts.entry(t).or_insert(n);
        }
    }
    let mut ordered: Vec<&str> = vec![""; texts.len()];
    for (t, &i) in &texts {
        ordered[i] = t;
    }
    let vectors: Vec<EmbeddingVector<f64>> = embedder.embed_batch(&ordered)?;
    let examples: Vec<TrainExample> = pairs
        .iter()
        .map(|p| TrainExample {
            a: vectors[texts[p.side_a.as_str()]].values().to_vec(),
            b: vectors[texts[p.side_b.as_str()]].values().to_vec(),
            label: p.label,
        })
        .collect();
    train_on_vectors(&examples, cfg)
}

fn check_labels(labels: impl Iterator<Item = u8>) -> Result<(), TrainError> {
    let (mut pos, mut neg, mut any) = (false, false, false);
    for l in labels {
        any = true;
        match l {
            0 => neg = true,
            1 => pos = true,
            x => return Err(TrainError::Label(x)),
        }
    }
    if !any {
        return Err(TrainError::NoPairs);
    }
    if !(pos && neg) {
        return Err(TrainError::OneClass);
    }
    Ok(())
}

/// Trains a square adapter initialized at identity plus small noise.
/// Returns the end-of-epoch weights with the lowest mean epoch loss, or the
/// initial weights when `epochs` is 0.
pub fn train_on_vectors(
    examples: &[TrainExample],
    cfg: &TrainConfig,
) -> Result<(LinearAdapter<f64>, TrainLog), TrainError> {
    cfg.validate()?;
    check_labels(examples.iter().map(|e| e.label))?;
    let dim = examples[0].a.len();
    for e in examples {
        for got in [e.a.len(), e.b.len()] {
            if got != dim {
                return Err(TrainError::DimensionMismatch { expected: dim, got });
            }
        }
    }
    let mut adapter = LinearAdapter::init(dim, cfg.margin, cfg.loss_mode, cfg.seed)?;
    let mut log = TrainLog::default();
    if cfg.epochs == 0 {
        return Ok((adapter, log));
    }

    let n = adapter.weight().len();
    let (mut m, mut v) = (vec![0.0f64; n], vec![0.0f64; n]);
    let mut grad = vec![0.0f64; n];
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_ada9);
    let mut t = 0i32;
    let mut best: Option<(f64, usize, Vec<f64>)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let e = &examples[i];
                batch_loss += adapter.accumulate_gradient(&e.a, &e.b, e.label, scale, &mut grad)?;
            }
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::Divergence { epoch, step });
            }
            total += batch_loss;
            t += 1;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            for (k, w) in adapter.weight_mut().iter_mut().enumerate() {
                let g = grad[k];
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
                *w -= cfg.learning_rate * (m[k] / bc1) / ((v[k] / bc2).sqrt() + cfg.epsilon);
            }
        }
        let mean = total / examples.len() as f64;
        log::info!("epoch {} mean loss {mean:.6}", epoch + 1);
        log.epoch_losses.push(mean);
        if best.as_ref().is_none_or(|(b, _, _)| mean < *b) {
            best = Some((mean, epoch, adapter.weight().to_vec()));
        }
    }
    let (_, epoch, weights) = best.expect("at least one epoch");
    adapter.weight_mut().copy_from_slice(&weights);
    log.selected_epoch = Some(epoch);
    Ok((adapter, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Vec<TrainExample> {
        vec![
            TrainExample { a: vec![1.0, 0.0, 0.2], b: vec![0.9, 0.1, 0.0], label: 1 },
            TrainExample { a: vec![1.0, 0.0, 0.2], b: vec![0.0, 1.0, 0.0], label: 0 },
            TrainExample { a: vec![0.0, 0.3, 1.0], b: vec![0.1, 0.2, 0.9], label: 1 },
            TrainExample { a: vec![0.0, 0.3, 1.0], b: vec![1.0, 0.1, 0.0], label: 0 },
        ]
    }

    #[test]
    fn zero_epochs_returns_initial_adapter() {
        let cfg = TrainConfig { epochs: 0, seed: 4, ..Default::default() };
        let (a, log) = train_on_vectors(&toy(), &cfg).unwrap();
        assert_eq!(a, LinearAdapter::init(3, 0.5, LossMode::DistanceStandard, 4).unwrap());
        assert!(log.epoch_losses.is_empty());
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = TrainConfig { epochs: 3, batch_size: 2, learning_rate: 1e-2, seed: 11, ..Default::default() };
        let (a, la) = train_on_vectors(&toy(), &cfg).unwrap();
        let (b, lb) = train_on_vectors(&toy(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(la.epoch_losses.len(), 3);
    }

    #[test]
    fn rejects_one_class_and_bad_config() {
        let only_pos: Vec<_> = toy().into_iter().filter(|e| e.label == 1).collect();
        assert!(matches!(train_on_vectors(&only_pos, &TrainConfig::default()), Err(TrainError::OneClass)));
        assert!(matches!(train_on_vectors(&[], &TrainConfig::default()), Err(TrainError::NoPairs)));
        let bad = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(train_on_vectors(&toy(), &bad).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut examples = toy();
        examples[1].b = vec![f64::MAX, f64::MAX, 0.0];
        let cfg = TrainConfig { batch_size: 1, ..Default::default() };
        assert!(matches!(train_on_vectors(&examples, &cfg), Err(TrainError::Divergence { epoch: 0, .. })));
    }
}
