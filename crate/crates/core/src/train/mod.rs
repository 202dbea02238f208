//! Joint bidirectional training: `L = L_fwd + L_bwd` summed over each
//! caption, averaged over a mini-batch, optimised with momentum SGD and
//! L2 weight decay on non-bias blocks.

mod gradcheck;
mod reference;

pub use gradcheck::{grad_check, BlockCheck, GradCheckReport, WorstEntry};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::CaptionedExample;
use crate::error::{Error, Result};
use crate::model::{
    accumulate_backward, direction_forward, sequence_loss, teacher_forcing, BlockKind,
    CaptionModel, Direction, ModelGrads,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// `None` disables early stopping.
    pub early_stop_patience: Option<usize>,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 100,
            max_epochs: 35,
            early_stop_patience: Some(3),
            grad_clip: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: CaptionModel,
    /// Momentum buffers, same layout as the model.
    pub velocity: CaptionModel,
    pub epoch: usize,
    pub updates: usize,
    pub best_val_loss: f64,
    pub epochs_since_best: usize,
}

impl TrainState {
    pub fn new(model: CaptionModel) -> Self {
        TrainState {
            velocity: model.zeros_like(),
            model,
            epoch: 0,
            updates: 0,
            best_val_loss: f64::INFINITY,
            epochs_since_best: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLoss {
    pub loss_fwd: f64,
    pub loss_bwd: f64,
    pub total: f64,
}

fn check_example(ex: &CaptionedExample) -> Result<()> {
    if ex.tokens.is_empty() {
        return Err(Error::Data(format!("caption for `{}` is empty", ex.image_id)));
    }
    Ok(())
}

pub fn joint_loss(m: &CaptionModel, ex: &CaptionedExample) -> Result<JointLoss> {
    check_example(ex)?;
    let mut losses = [0.0; 2];
    for (slot, dir) in losses.iter_mut().zip([Direction::Forward, Direction::Backward]) {
        let (inputs, targets) = teacher_forcing(&ex.tokens, dir);
        let rec = direction_forward(m, dir, &inputs, &ex.feature)?;
        *slot = sequence_loss(&rec, &targets)?;
    }
    Ok(JointLoss {
        loss_fwd: losses[0],
        loss_bwd: losses[1],
        total: losses[0] + losses[1],
    })
}

/// Adds the gradient of the example's joint loss into `grads`.
pub fn accumulate_joint_gradients(
    m: &CaptionModel,
    ex: &CaptionedExample,
    grads: &mut ModelGrads,
) -> Result<JointLoss> {
    check_example(ex)?;
    let mut losses = [0.0; 2];
    for (slot, dir) in losses.iter_mut().zip([Direction::Forward, Direction::Backward]) {
        let (inputs, targets) = teacher_forcing(&ex.tokens, dir);
        let rec = direction_forward(m, dir, &inputs, &ex.feature)?;
        *slot = sequence_loss(&rec, &targets)?;
        accumulate_backward(m, &rec, &targets, grads)?;
    }
    Ok(JointLoss {
        loss_fwd: losses[0],
        loss_bwd: losses[1],
        total: losses[0] + losses[1],
    })
}

pub fn joint_gradients(m: &CaptionModel, ex: &CaptionedExample) -> Result<(JointLoss, ModelGrads)> {
    let mut grads = m.zeros_like();
    let loss = accumulate_joint_gradients(m, ex, &mut grads)?;
    Ok((loss, grads))
}

/// Mean joint-loss gradient over a batch, with the mean joint loss.
pub fn batch_gradients(
    m: &CaptionModel,
    batch: &[&CaptionedExample],
) -> Result<(f64, ModelGrads)> {
    let mut grads = m.zeros_like();
    let mut total = 0.0;
    for ex in batch {
        total += accumulate_joint_gradients(m, ex, &mut grads)?.total;
    }
    let n = batch.len().max(1) as f64;
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}

/// Mean joint loss per example.
pub fn mean_joint_loss(m: &CaptionModel, examples: &[CaptionedExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("mean loss over an empty set".into()));
    }
    let mut sum = 0.0;
    for ex in examples {
        sum += joint_loss(m, ex)?.total;
    }
    Ok(sum / examples.len() as f64)
}

/// Joint loss divided by the number of predicted tokens over both
/// directions (each direction predicts every word plus the closing
/// boundary).
pub fn mean_token_loss(m: &CaptionModel, examples: &[CaptionedExample]) -> Result<f64> {
    let mut sum = 0.0;
    let mut tokens = 0usize;
    for ex in examples {
        sum += joint_loss(m, ex)?.total;
        tokens += 2 * (ex.tokens.len() + 1);
    }
    if tokens == 0 {
        return Err(Error::Data("mean loss over an empty set".into()));
    }
    Ok(sum / tokens as f64)
}

/// One momentum-SGD update, in place:
/// `v ← μ·v − η·(g + λ·θ)`, `θ ← θ + v`, with `λ = 0` on bias blocks.
pub fn sgd_step(state: &mut TrainState, grads: &ModelGrads, cfg: &TrainConfig) -> Result<()> {
    let mut sq = 0.0;
    for block in grads.blocks() {
        if block.data.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { block: block.name });
        }
        sq += block.data.iter().map(|g| g * g).sum::<f64>();
    }
    let clip_scale = match cfg.grad_clip {
        Some(clip) if sq.sqrt() > clip => clip / sq.sqrt(),
        _ => 1.0,
    };

    let (lr, mu) = (cfg.learning_rate, cfg.momentum);
    let params = state.model.blocks_mut();
    let velocity = state.velocity.blocks_mut();
    for ((p, v), g) in params.into_iter().zip(velocity).zip(grads.blocks()) {
        let decay = match p.kind {
            BlockKind::Weight => cfg.weight_decay,
            BlockKind::Bias => 0.0,
        };
        for ((theta, vel), &grad) in p.data.iter_mut().zip(v.data.iter_mut()).zip(g.data) {
            *vel = mu * *vel - lr * (clip_scale * grad + decay * *theta);
            *theta += *vel;
        }
    }
    state.updates += 1;
    Ok(())
}

/// Validation-loss early stopping. The first observation is the baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: Option<usize>,
    pub best: f64,
    pub since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: Option<usize>) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Records a validation loss; returns whether it is a new best.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.patience.is_some_and(|p| self.since_best > p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub updates: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

impl EpochReport {
    pub fn log_line(&self) -> String {
        format!(
            "epoch {} train_loss {} val_loss {}",
            self.epoch, self.train_loss, self.val_loss
        )
    }
}

/// Trains until `max_epochs` or early stopping, returning the state with
/// the best-validation model in `model`. `on_epoch` sees every epoch's
/// losses.
pub fn train_epochs(
    mut state: TrainState,
    train_set: &[CaptionedExample],
    val_set: &[CaptionedExample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainState> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if val_set.is_empty() && cfg.early_stop_patience.is_some() {
        return Err(Error::Config(
            "early stopping needs a non-empty validation set".into(),
        ));
    }

    let mut stopper = EarlyStopping {
        patience: cfg.early_stop_patience,
        best: state.best_val_loss,
        since_best: state.epochs_since_best,
    };
    if !val_set.is_empty() && stopper.best.is_infinite() {
        stopper.observe(mean_joint_loss(&state.model, val_set)?);
    }
    let mut best_model = state.model.clone();

    while state.epoch < cfg.max_epochs && !stopper.should_stop() {
        state.epoch += 1;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(state.epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&CaptionedExample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = batch_gradients(&state.model, &batch)?;
            loss_sum += loss * batch.len() as f64;
            sgd_step(&mut state, &grads, cfg)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;

        let val_loss = if val_set.is_empty() {
            f64::NAN
        } else {
            mean_joint_loss(&state.model, val_set)?
        };
        if val_set.is_empty() || stopper.observe(val_loss) {
            best_model.clone_from(&state.model);
        }
        state.best_val_loss = stopper.best;
        state.epochs_since_best = stopper.since_best;
        on_epoch(&EpochReport {
            epoch: state.epoch,
            updates: state.updates,
            train_loss,
            val_loss,
        });
    }
    state.model = best_model;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchitectureKind, ModelDims};
    use crate::numcore::{Matrix, Vector};

    fn example(tokens: Vec<usize>, feat: usize) -> CaptionedExample {
        CaptionedExample {
            image_id: "x".into(),
            feature: Vector::from(vec![0.3; feat]),
            tokens,
        }
    }

    #[test]
    fn defaults_are_published_constants() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.momentum, c.weight_decay), (0.01, 0.9, 0.0005));
        assert_eq!(c.grad_clip, None);
    }

    #[test]
    fn uniform_model_loss_is_analytic() {
        let m = CaptionModel::zeros(ArchitectureKind::BiLstm, ModelDims::new(8, 3, 4, 5)).unwrap();
        let l = joint_loss(&m, &example(vec![4, 6], 3)).unwrap();
        let per_dir = 3.0 * 8f64.ln();
        assert!((l.loss_fwd - per_dir).abs() < 1e-12);
        assert!((l.loss_bwd - per_dir).abs() < 1e-12);
        assert!((l.total - 12.4766).abs() < 1e-4);
    }

    #[test]
    fn rigged_perfect_model_has_zero_loss() {
        // Caption [3]: both directions read [BOUNDARY, 3] and must emit [3, BOUNDARY].
        // Saturated gates make each LSTM copy the sign of the embedding.
        let dims = ModelDims::new(4, 1, 2, 1);
        let mut m = CaptionModel::zeros(ArchitectureKind::BiLstm, dims).unwrap();
        for d in [&mut m.fwd, &mut m.bwd] {
            d.embedding.set(0, 0, 1.0);
            d.embedding.set(0, 3, -1.0);
            for lstm in [&mut d.t_lstm, &mut d.m_lstm] {
                lstm.wx.set(3, 0, 50.0);
                lstm.b[0] = 50.0;
                lstm.b[1] = -50.0;
                lstm.b[2] = 50.0;
            }
        }
        // h ≈ +0.76 after BOUNDARY → predict 3; h ≈ −0.76 after 3 → predict BOUNDARY.
        m.softmax_w = Matrix::from_vec(4, 1, vec![-200.0, 0.0, 0.0, 200.0]).unwrap();
        let l = joint_loss(&m, &example(vec![3], 1)).unwrap();
        assert!(l.total.abs() < 1e-9, "{l:?}");
    }

    #[test]
    fn empty_caption_is_data_error() {
        let m = CaptionModel::zeros(ArchitectureKind::BiLstm, ModelDims::new(8, 3, 4, 5)).unwrap();
        assert!(matches!(joint_loss(&m, &example(vec![], 3)), Err(Error::Data(_))));
    }

    #[test]
    fn palindrome_losses_match_with_mirrored_params() {
        let mut m =
            CaptionModel::init(ArchitectureKind::BiFLstm, ModelDims::new(9, 3, 4, 6), 4).unwrap();
        m.bwd = m.fwd.clone();
        let l = joint_loss(&m, &example(vec![5, 2, 7, 2, 5], 3)).unwrap();
        assert_eq!(l.loss_fwd, l.loss_bwd);
    }

    fn state() -> TrainState {
        TrainState::new(
            CaptionModel::init(ArchitectureKind::BiSLstm, ModelDims::new(6, 2, 3, 4), 1).unwrap(),
        )
    }

    #[test]
    fn plain_sgd_when_momentum_and_decay_are_off() {
        let mut s = state();
        let before = s.model.clone();
        let (_, g) = joint_gradients(&s.model, &example(vec![2, 3], 2)).unwrap();
        let cfg = TrainConfig {
            momentum: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        sgd_step(&mut s, &g, &cfg).unwrap();
        let mut expected = before;
        expected.axpy(-0.01, &g);
        assert_eq!(s.model, expected);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = state();
        let before = s.model.clone();
        let g = s.model.zeros_like();
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        sgd_step(&mut s, &g, &cfg).unwrap();
        assert_eq!(s.model, before);
    }

    #[test]
    fn decay_arithmetic_and_bias_exemption() {
        let mut s = state();
        for b in s.model.blocks_mut() {
            b.data.fill(1.0);
        }
        let g = s.model.zeros_like();
        let cfg = TrainConfig {
            momentum: 0.0,
            ..TrainConfig::default()
        };
        sgd_step(&mut s, &g, &cfg).unwrap();
        for b in s.model.blocks() {
            let expect = match b.kind {
                BlockKind::Weight => 1.0 - 0.01 * 0.0005,
                BlockKind::Bias => 1.0,
            };
            assert!(b.data.iter().all(|&x| x == expect), "{}", b.name);
        }
        assert!((1.0f64 - 0.01 * 0.0005 - 0.999995).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_the_block() {
        let mut s = state();
        let mut g = s.model.zeros_like();
        g.bwd.m_lstm.b[2] = f64::NAN;
        let before = s.model.clone();
        match sgd_step(&mut s, &g, &TrainConfig::default()) {
            Err(Error::NonFiniteGradient { block }) => assert_eq!(block, "bwd.m_lstm.b"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.model, before);
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        let mut s = state();
        let before = s.model.clone();
        let mut g = s.model.zeros_like();
        g.softmax_b[0] = 30.0;
        g.softmax_b[1] = 40.0;
        let cfg = TrainConfig {
            momentum: 0.0,
            weight_decay: 0.0,
            learning_rate: 1.0,
            grad_clip: Some(5.0),
            ..TrainConfig::default()
        };
        sgd_step(&mut s, &g, &cfg).unwrap();
        assert!((s.model.softmax_b[0] - before.softmax_b[0] + 3.0).abs() < 1e-12);
        assert!((s.model.softmax_b[1] - before.softmax_b[1] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn early_stopping_with_zero_patience_stops_after_first_worse_epoch() {
        let mut es = EarlyStopping::new(Some(0));
        assert!(es.observe(1.0)); // baseline
        assert!(!es.should_stop());
        assert!(!es.observe(1.5)); // epoch 1 worse
        assert!(es.should_stop());
    }

    #[test]
    fn early_stopping_disabled_never_stops() {
        let mut es = EarlyStopping::new(None);
        for v in [1.0, 2.0, 3.0, 4.0] {
            es.observe(v);
        }
        assert!(!es.should_stop());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { momentum: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { grad_clip: Some(-1.0), ..Default::default() }.validate().is_err());
        let s = state();
        let train = vec![example(vec![2, 3], 2)];
        assert!(matches!(
            train_epochs(s, &train, &[], &TrainConfig::default(), |_| {}),
            Err(Error::Config(_))
        ));
    }
}
