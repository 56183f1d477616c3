use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{batch_gradients, loss, LossKind, PreparedNet};
use super::{ConvNetError, HeadKind, NetSpec, NetworkParams};
use crate::imaging::{standardize_in_place, Patch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Match,
    NonMatch,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Match => 1.0,
            Label::NonMatch => -1.0,
        }
    }

    pub fn from_sign(v: i64) -> Option<Self> {
        match v {
            1 => Some(Label::Match),
            -1 => Some(Label::NonMatch),
            _ => None,
        }
    }
}

/// Anything that can be fed to the network as a labeled patch pair.
pub trait LabeledPair {
    fn patches(&self) -> (&Patch, &Patch);
    fn label(&self) -> Label;
}

impl<T: LabeledPair + ?Sized> LabeledPair for &T {
    fn patches(&self) -> (&Patch, &Patch) {
        (**self).patches()
    }

    fn label(&self) -> Label {
        (**self).label()
    }
}

impl LabeledPair for (Patch, Patch, Label) {
    fn patches(&self) -> (&Patch, &Patch) {
        (&self.0, &self.1)
    }

    fn label(&self) -> Label {
        self.2
    }
}

/// `lr(epoch) = base_lr * factor^(epoch / period)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub factor: f64,
    pub period: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_schedule: StepDecay,
    pub weight_decay: f64,
    pub momentum: f64,
    pub seed: u64,
    pub loss: LossKind,
    /// Randomly present each pair as (b, a) half of the time.
    pub channel_swap: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            base_lr: 0.01,
            lr_schedule: StepDecay {
                factor: 0.5,
                period: 6,
            },
            weight_decay: 1e-4,
            momentum: 0.9,
            seed: 0,
            loss: LossKind::Hinge,
            channel_swap: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConvNetError> {
        let bad = |m: &str| Err(ConvNetError::InvalidConfig(m.into()));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if !(self.lr_schedule.factor > 0.0 && self.lr_schedule.factor <= 1.0) {
            return bad("decay factor must lie in (0, 1]");
        }
        if self.lr_schedule.period == 0 {
            return bad("decay period must be >= 1");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("epochs and batch_size must be >= 1");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.base_lr * self.lr_schedule.factor.powi((epoch / self.lr_schedule.period) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy (ties:
    /// lower validation loss, then earlier epoch).
    pub params: NetworkParams,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

struct Prepared {
    a: Vec<f64>,
    b: Vec<f64>,
    label: f64,
}

fn prepare<S: LabeledPair>(set: &[S], spec: &NetSpec) -> Result<Vec<Prepared>, ConvNetError> {
    set.iter()
        .map(|s| {
            let (a, b) = s.patches();
            for p in [a, b] {
                if p.size() != spec.input_size {
                    return Err(ConvNetError::ShapeMismatch(format!(
                        "sample patch side {} but the network expects {}",
                        p.size(),
                        spec.input_size
                    )));
                }
            }
            let mut a = a.pixels().to_vec();
            let mut b = b.pixels().to_vec();
            standardize_in_place(&mut a);
            standardize_in_place(&mut b);
            Ok(Prepared {
                a,
                b,
                label: s.label().sign(),
            })
        })
        .collect()
}

fn stack(p: &Prepared, swap: bool) -> Vec<f64> {
    let (first, second) = if swap { (&p.b, &p.a) } else { (&p.a, &p.b) };
    let mut x = Vec::with_capacity(first.len() * 2);
    x.extend_from_slice(first);
    x.extend_from_slice(second);
    x
}

/// Mean loss and accuracy of `net` on prepared samples, unswapped.
fn evaluate(net: &PreparedNet, set: &[Prepared], kind: LossKind) -> (f64, f64) {
    let mut total = 0.0;
    let mut correct = 0usize;
    for p in set {
        let s = net.score(&stack(p, false));
        total += loss(s, p.label, kind);
        if (s > 0.0) == (p.label > 0.0) {
            correct += 1;
        }
    }
    let n = set.len() as f64;
    (total / n, correct as f64 / n)
}

/// Mini-batch SGD with momentum, weight decay, and a step-decay learning
/// rate. Patches are standardized here; callers pass raw `[0, 1]` patches.
///
/// The result is a pure function of the inputs and `config.seed`.
pub fn train<S: LabeledPair>(
    train_set: &[S],
    val_set: &[S],
    spec: &NetSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome, ConvNetError> {
    train_with_progress(train_set, val_set, spec, config, |_| {})
}

pub fn train_with_progress<S: LabeledPair>(
    train_set: &[S],
    val_set: &[S],
    spec: &NetSpec,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome, ConvNetError> {
    spec.validate()?;
    config.validate()?;
    if spec.head != HeadKind::TwoChannel {
        return Err(ConvNetError::InvalidSpec(
            "training targets the 2-channel head".into(),
        ));
    }
    if train_set.is_empty() {
        return Err(ConvNetError::EmptyDataset("training set"));
    }
    if val_set.is_empty() {
        return Err(ConvNetError::EmptyDataset("validation set"));
    }
    let train_data = prepare(train_set, spec)?;
    let val_data = prepare(val_set, spec)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = NetworkParams::init(spec, rng.random());
    let mut velocity: Vec<(Vec<f64>, Vec<f64>)> = params
        .layers()
        .iter()
        .map(|l| (vec![0.0; l.weight.len()], vec![0.0; l.bias.len()]))
        .collect();

    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, f64, usize, NetworkParams)> = None;

    for epoch in 0..config.epochs {
        let lr = config.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let inputs: Vec<(Vec<f64>, f64)> = batch
                .iter()
                .map(|&i| {
                    let swap = config.channel_swap && rng.random_bool(0.5);
                    (stack(&train_data[i], swap), train_data[i].label)
                })
                .collect();
            let refs: Vec<(&[f64], f64)> = inputs.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
            let net = PreparedNet::new(&params);
            let stats = batch_gradients(&net, &refs, config.loss);
            loss_sum += stats.loss_sum;
            correct += stats.correct;
            let scale = 1.0 / batch.len() as f64;
            for ((layer, (gw, gb)), (vw, vb)) in params
                .layers_mut()
                .iter_mut()
                .zip(stats.grads.layers())
                .zip(velocity.iter_mut())
            {
                sgd_step(layer.weight.data_mut(), gw, vw, scale, lr, config, config.weight_decay);
                sgd_step(layer.bias.data_mut(), gb, vb, scale, lr, config, 0.0);
            }
        }
        let net = PreparedNet::new(&params);
        let (val_loss, val_acc) = evaluate(&net, &val_data, config.loss);
        let n = train_data.len() as f64;
        let stats = EpochStats {
            epoch,
            lr,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
        };
        on_epoch(&stats);
        history.push(stats);
        let improved = match &best {
            None => true,
            Some((acc, vloss, _, _)) => val_acc > *acc || (val_acc == *acc && val_loss < *vloss),
        };
        if improved {
            best = Some((val_acc, val_loss, epoch, params.clone()));
        }
    }
    let (_, _, best_epoch, params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params,
        best_epoch,
        history,
    })
}

fn sgd_step(
    values: &mut [f32],
    grad_sum: &[f64],
    velocity: &mut [f64],
    scale: f64,
    lr: f64,
    config: &TrainConfig,
    decay: f64,
) {
    for ((w, g), v) in values.iter_mut().zip(grad_sum).zip(velocity.iter_mut()) {
        let grad = g * scale + decay * *w as f64;
        *v = config.momentum * *v + grad;
        *w = (*w as f64 - lr * *v) as f32;
    }
}
