use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Adam, HarnessError, Sample, StepScheduler, TrainConfig};
use crate::dataset::{ClassId, SensorId};
use crate::objectives::{combined_loss, LossConfig};
use crate::segnet::SegModel;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: SegModel<f32>,
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
    /// Checkpoints still on disk, oldest first.
    pub checkpoints: Vec<PathBuf>,
}

/// Batches of sample indices for one epoch. Mixed batches come from one
/// shuffled pool of both sensors; otherwise each batch holds one sensor.
fn epoch_batches(samples: &[Sample], batch: usize, mix: bool, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    if mix {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(rng);
        return order.chunks(batch).map(<[usize]>::to_vec).collect();
    }
    let mut batches = Vec::new();
    for sensor in SensorId::BOTH {
        let mut pool: Vec<usize> = (0..samples.len()).filter(|i| samples[*i].sensor == sensor).collect();
        pool.shuffle(rng);
        batches.extend(pool.chunks(batch).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

/// Trains `model` with Adam on `samples`, writing a checkpoint per epoch to
/// `checkpoint_dir` when given. `on_epoch(epoch, mean_loss)` runs after
/// every epoch.
pub fn train(
    mut model: SegModel<f32>,
    samples: &[Sample],
    tcfg: &TrainConfig,
    lcfg: &LossConfig,
    checkpoint_dir: Option<&Path>,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome, HarnessError> {
    tcfg.validate()?;
    lcfg.validate(model.config().num_classes)?;
    if samples.is_empty() {
        return Err(HarnessError::EmptyDataset("no training samples".into()));
    }
    if let Some(s) = samples.iter().find(|s| !s.image.has_labels) {
        return Err(HarnessError::EmptyDataset(format!("sample {} has no labels", s.id)));
    }
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let sched = StepScheduler::new(tcfg.learning_rate, tcfg.epochs, tcfg.scheduler.period, tcfg.scheduler.factor);
    let mut adam = Adam::new(model.parameters(), tcfg.adam_betas, tcfg.adam_eps);
    let mut epoch_losses = Vec::with_capacity(tcfg.epochs);
    let mut checkpoints = Vec::new();

    for epoch in 0..tcfg.epochs {
        let lr = sched.lr(epoch);
        let batches = epoch_batches(samples, tcfg.batch_size, tcfg.mix_sensors, &mut rng);
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let imgs: Vec<_> = idx.iter().map(|i| &samples[*i].image).collect();
            let target: Vec<ClassId> = imgs.iter().flat_map(|im| im.labels.iter().copied()).collect();
            let input = model.input_tensor(&imgs)?;

            let mut g = Graph::<f32>::new();
            let params = model.bind(&mut g, true);
            let x = g.constant(input);
            let logits = model.forward_graph(&mut g, &params, x)?;
            let loss = combined_loss(&mut g, logits, &target, lcfg)?;
            let value = g.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(HarnessError::DivergenceDetected { epoch, batch: b, loss: value });
            }
            g.backward(loss)?;
            let grads: Vec<Tensor<f32>> = params
                .vars()
                .iter()
                .zip(model.parameters())
                .map(|(v, p)| g.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            drop(g);
            adam.step(model.parameters_mut(), &grads, lr);
            total += value;
        }
        let mean = total / batches.len() as f64;
        epoch_losses.push(mean);
        if let Some(dir) = checkpoint_dir {
            let path = dir.join(format!("epoch_{epoch:04}.ckpt"));
            model.save(&path)?;
            checkpoints.push(path);
            while checkpoints.len() > tcfg.keep_checkpoints {
                let old = checkpoints.remove(0);
                std::fs::remove_file(&old).map_err(|e| HarnessError::io(&old, e))?;
            }
        }
        on_epoch(epoch, mean);
    }
    Ok(TrainOutcome { model, epoch_losses, steps: adam.steps(), checkpoints })
}
