//! Gradient verification and plain SGD on toy data.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::{LossBreakdown, Model, TargetStream};
use super::params::Params;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter tensor holding the worst entry.
    pub worst: String,
    pub checked: usize,
    /// Number of distinct tensors sampled (all of them).
    pub tensors: usize,
}

/// Relative error with a floor so two tiny gradients do not blow it up.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compare the analytic gradient of the total loss with central differences
/// at `samples` entries (at least one in every tensor).
pub fn grad_check(
    model: &Model<f64>,
    frames: &DMatrix<f64>,
    targets: &TargetStream,
    mask: &[bool],
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheck> {
    let (_, grads) = model.loss_and_grad(frames, targets, mask)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = grads.tensors().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut picks: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(t, &n)| (t, rng.random_range(0..n))).collect();
    while picks.len() < samples {
        let mut flat = rng.random_range(0..total);
        let t = sizes
            .iter()
            .position(|&n| {
                if flat < n {
                    true
                } else {
                    flat -= n;
                    false
                }
            })
            .expect("index within total");
        picks.push((t, flat));
    }
    let mut probe = model.clone();
    let mut worst = (0.0, String::new());
    for &(t, i) in &picks {
        let original = probe.params().tensors()[t][i];
        probe.params_mut().tensors_mut()[t][i] = original + eps;
        let up = probe.loss(frames, targets, mask)?.total;
        probe.params_mut().tensors_mut()[t][i] = original - eps;
        let down = probe.loss(frames, targets, mask)?.total;
        probe.params_mut().tensors_mut()[t][i] = original;
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grads.tensors()[t][i];
        if !analytic.is_finite() || !numeric.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", grads.names()[t])));
        }
        let rel = relative_error(analytic, numeric);
        if rel > worst.0 || worst.1.is_empty() {
            worst = (rel, grads.names()[t].clone());
        }
    }
    Ok(GradCheck {
        max_rel_error: worst.0,
        worst: worst.1,
        checked: picks.len(),
        tensors: sizes.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Held-out loss is measured every this many steps (and at the end).
    pub eval_every: usize,
    /// Size of the fixed evaluation subset, taken from the front.
    pub eval_examples: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 0.05,
            batch_size: 4,
            seed: 0,
            eval_every: 250,
            eval_examples: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossHistory {
    /// Mean total loss of each step's batch, before its update.
    pub train: Vec<f64>,
    /// `(step, mean total loss)` on the fixed subset with fixed masks.
    pub eval: Vec<(usize, f64)>,
}

impl LossHistory {
    pub fn initial(&self) -> f64 {
        self.eval[0].1
    }

    pub fn last(&self) -> f64 {
        self.eval.last().expect("initial entry").1
    }

    /// `1 - final / initial` on the fixed subset.
    pub fn reduction(&self) -> f64 {
        1.0 - self.last() / self.initial()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,train_loss,eval_loss\n");
        let mut e = self.eval.iter().peekable();
        for step in 0..=self.train.len() {
            let train = self.train.get(step).map(|v| v.to_string()).unwrap_or_default();
            let eval = match e.peek() {
                Some(&&(at, v)) if at == step => {
                    e.next();
                    v.to_string()
                }
                _ => String::new(),
            };
            if !train.is_empty() || !eval.is_empty() {
                s.push_str(&format!("{step},{train},{eval}\n"));
            }
        }
        s
    }
}

/// A frame matrix with its unit targets.
pub type Example = (DMatrix<f64>, TargetStream);

/// Mask from `seed`, retrying with the following seeds if nothing is masked.
fn draw_mask<T: Real>(model: &Model<T>, len: usize, seed: u64) -> Result<Vec<bool>> {
    for k in 0..1000 {
        match model.mask_for(len, seed.wrapping_add(k)) {
            Err(Error::NoMaskedFrames) => continue,
            other => return other,
        }
    }
    Err(Error::NoMaskedFrames)
}

fn eval_loss<T: Real>(model: &Model<T>, data: &[(DMatrix<T>, TargetStream)], masks: &[Vec<bool>]) -> Result<f64> {
    let losses: Vec<f64> = data
        .par_iter()
        .zip(masks)
        .map(|((f, t), m)| model.loss(f, t, m).map(|l| l.total.to_f64_lossy()))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Plain minibatch SGD. Per-example gradients may be computed in parallel
/// but are summed in batch order, so a seed fixes the result bit for bit.
pub fn train_toy<T: Real>(model: &mut Model<T>, data: &[Example], opts: &TrainOptions) -> Result<LossHistory> {
    if data.is_empty() {
        return Err(Error::Invalid("no training examples".into()));
    }
    if opts.batch_size == 0 || !(opts.lr.is_finite() && opts.lr > 0.0) {
        return Err(Error::Invalid("batch_size and lr must be positive".into()));
    }
    let data: Vec<(DMatrix<T>, TargetStream)> = data
        .iter()
        .map(|(f, t)| (f.map(|v| T::lit(v)), t.clone()))
        .collect();
    let eval_n = opts.eval_examples.clamp(1, data.len());
    let eval_set = &data[..eval_n];
    let eval_masks: Vec<Vec<bool>> = eval_set
        .iter()
        .enumerate()
        .map(|(i, (f, _))| draw_mask(model, f.nrows(), opts.seed ^ 0x5eed_0000 ^ (i as u64) << 20))
        .collect::<Result<_>>()?;
    let mut history = LossHistory {
        train: Vec::with_capacity(opts.steps),
        eval: vec![(0, eval_loss(model, eval_set, &eval_masks)?)],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let scale = T::lit(-opts.lr / opts.batch_size as f64);
    for step in 0..opts.steps {
        let batch: Vec<(usize, u64)> = (0..opts.batch_size)
            .map(|_| (rng.random_range(0..data.len()), rng.random::<u64>()))
            .collect();
        let results: Vec<Result<(LossBreakdown<T>, Params<T>)>> = batch
            .par_iter()
            .map(|&(i, mask_seed)| {
                let (f, t) = &data[i];
                let mask = draw_mask(model, f.nrows(), mask_seed)?;
                model.loss_and_grad(f, t, &mask)
            })
            .collect();
        let mut sum: Option<Params<T>> = None;
        let mut loss = 0.0;
        for r in results {
            let (l, g) = match r {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => return Err(Error::Diverged { step, loss: f64::NAN }),
                Err(e) => return Err(e),
            };
            loss += l.total.to_f64_lossy();
            match &mut sum {
                None => sum = Some(g),
                Some(s) => s.axpy(T::one(), &g),
            }
        }
        loss /= opts.batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        history.train.push(loss);
        model.params_mut().axpy(scale, &sum.expect("non-empty batch"));
        let done = step + 1;
        if done == opts.steps || (opts.eval_every > 0 && done % opts.eval_every == 0) {
            let e = eval_loss(model, eval_set, &eval_masks)?;
            if !e.is_finite() {
                return Err(Error::Diverged { step, loss: e });
            }
            history.eval.push((done, e));
        }
    }
    Ok(history)
}
