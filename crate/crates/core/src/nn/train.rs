use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

use super::{AdamState, Network, Tensor4};
use crate::error::{Error, Result};

/// Optimizer schedule shared by every trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// `(1/N) * sum_n sum_p (target - pred)^2` and its gradient with respect to `pred`.
pub fn sample_sum_squared_error(pred: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
    if pred.dims() != target.dims() {
        return Err(Error::invalid(format!(
            "prediction dims {:?} differ from target dims {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let n = pred.batch().max(1) as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, Tensor4::from_parts(pred.dims(), grad)))
}

/// Minimizes [`sample_sum_squared_error`] with Adam over shuffled minibatches.
///
/// `make_batch` assembles `(input, target)` for a set of sample indices and
/// may draw augmentation randomness from the provided generator. Returns the
/// mean per-sample loss of every epoch.
pub fn fit<F>(
    net: &mut Network,
    sample_count: usize,
    cfg: &FitConfig,
    mut make_batch: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&[usize], &mut SplitMix64) -> Result<(Tensor4, Tensor4)>,
{
    cfg.validate()?;
    if sample_count == 0 {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let mut order_rng = SplitMix64::seed_from_u64(cfg.seed);
    let mut aug_rng = SplitMix64::seed_from_u64(cfg.seed ^ 0x5DEE_CE66_D1CE_4E5B);
    let mut adam = AdamState::new(net, cfg.lr);
    let mut order: Vec<usize> = (0..sample_count).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = make_batch(chunk, &mut aug_rng)?;
            let (pred, cache) = net.forward(&x)?;
            let (loss, grad) = sample_sum_squared_error(&pred, &y)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "non-finite loss in epoch {epoch}"
                )));
            }
            total += loss * chunk.len() as f64;
            let grads = net.backward(&cache, &grad)?;
            adam.step(net, &grads)?;
        }
        let epoch_loss = total / sample_count as f64;
        log::debug!("epoch {epoch}: loss {epoch_loss:.6}");
        trace.push(epoch_loss);
    }
    Ok(trace)
}
