//! Training loop, optimizer and evaluation.

use std::fmt::Write as _;
use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::langs::{Dataset, LabeledSequence};
use crate::model::{HeadKind, SrRnn};

/// RMSprop with momentum on the preconditioned step:
/// `cache ← ρ cache + (1-ρ) g²`, `buf ← μ buf + lr g / √(cache + ε)`,
/// `w ← w - buf`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub rho: f64,
    pub momentum: f64,
    pub eps: f64,
    cache: Vec<Vec<f64>>,
    buf: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(params: &ParamSet, lr: f64, rho: f64, momentum: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        RmsProp {
            lr,
            rho,
            momentum,
            eps,
            cache: zeros.clone(),
            buf: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<()> {
        if self.cache.len() != params.len() {
            return Err(Error::shape(
                "rmsprop",
                "optimizer state does not match the parameters",
            ));
        }
        let ids: Vec<_> = params.ids().collect();
        for id in &ids {
            if grads
                .get(*id)
                .is_some_and(|g| g.iter().any(|v| !v.is_finite()))
            {
                return Err(Error::NonFinite {
                    op: "rmsprop gradient",
                });
            }
        }
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let w = params.get_mut(id).value.data_mut();
            for (j, &gj) in g.iter().enumerate() {
                let cache = &mut self.cache[i][j];
                *cache = self.rho * *cache + (1.0 - self.rho) * gj * gj;
                let buf = &mut self.buf[i][j];
                *buf = self.momentum * *buf + self.lr * gj / (*cache + self.eps).sqrt();
                w[j] -= *buf;
            }
        }
        Ok(())
    }
}

/// Quantity a curriculum cap limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapMetric {
    Length,
    /// Maximum nesting depth with the given open/close token ids.
    Depth {
        open: usize,
        close: usize,
    },
}

impl CapMetric {
    pub fn measure(self, tokens: &[usize]) -> usize {
        match self {
            CapMetric::Length => tokens.len(),
            CapMetric::Depth { open, close } => {
                let (mut d, mut max) = (0i64, 0i64);
                for &t in tokens {
                    if t == open {
                        d += 1;
                        max = max.max(d);
                    } else if t == close {
                        d -= 1;
                    }
                }
                max as usize
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    /// Largest admitted metric value; `None` admits everything.
    pub cap: Option<usize>,
    /// Epochs spent in this phase; `None` runs until the epoch budget ends.
    pub epochs: Option<usize>,
}

/// Which quantity picks the snapshot restored at exit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Monitor {
    /// Validation error, then validation loss.
    #[default]
    ValidError,
    /// Training error, then validation error, then validation loss.
    TrainThenValid,
    /// Validation loss.
    ValidLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub rho: f64,
    pub momentum: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement (in the final phase) before stopping.
    pub patience: Option<usize>,
    pub phases: Vec<Phase>,
    pub cap_metric: CapMetric,
    pub monitor: Monitor,
    /// Max global gradient norm.
    pub clip: Option<f64>,
    /// Re-evaluate the full training set after every epoch (otherwise the
    /// running error of the epoch's mini-batches is reported).
    pub eval_train: bool,
    /// Stop once the evaluated training error reaches zero.
    pub stop_at_zero_train_error: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            rho: 0.9,
            momentum: 0.0,
            eps: 1e-8,
            batch_size: 32,
            max_epochs: 100,
            patience: None,
            phases: Vec::new(),
            cap_metric: CapMetric::Length,
            monitor: Monitor::ValidError,
            clip: None,
            eval_train: true,
            stop_at_zero_train_error: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.rho)
            || !(0.0..1.0).contains(&self.momentum)
            || self.eps <= 0.0
        {
            return Err(Error::InvalidArgument(
                "rho and momentum must lie in [0, 1), eps > 0".into(),
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch size and epoch budget must be positive".into(),
            ));
        }
        let caps: Vec<usize> = self
            .phases
            .iter()
            .map(|p| p.cap.unwrap_or(usize::MAX))
            .collect();
        if caps.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument(
                "curriculum caps must be non-decreasing".into(),
            ));
        }
        if let Some(c) = self.clip {
            if c <= 0.0 {
                return Err(Error::InvalidArgument("clip norm must be positive".into()));
            }
        }
        Ok(())
    }

    /// Phase index and cap for a 1-based epoch.
    pub fn phase_at(&self, epoch: usize) -> (usize, Option<usize>) {
        let mut start = 1;
        for (i, p) in self.phases.iter().enumerate() {
            match p.epochs {
                Some(n) if epoch >= start + n => start += n,
                _ => return (i, p.cap),
            }
        }
        match self.phases.last() {
            Some(p) => (self.phases.len() - 1, p.cap),
            None => (0, None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Mean cross entropy (per sequence, or per step for per-step heads).
    pub loss: f64,
    /// Misclassification rate; for per-step heads, the symbol error over
    /// steps whose target is not token 0 (the recall span of the copy task).
    pub error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: usize,
    pub train_loss: f64,
    pub train_err: f64,
    pub valid_loss: f64,
    pub valid_err: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were restored.
    pub best_epoch: usize,
}

impl History {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,phase,train_loss,train_err,valid_err\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch, e.phase, e.train_loss, e.train_err, e.valid_err
            );
        }
        out
    }
}

/// Loss node and per-row accounting for a batch.
struct BatchLoss {
    loss: Var,
    logits: Var,
    targets: Vec<usize>,
}

fn batch_loss(model: &SrRnn, tape: &mut Tape<'_>, batch: &[&LabeledSequence]) -> Result<BatchLoss> {
    let seqs: Vec<&[usize]> = batch.iter().map(|s| &s.tokens[..]).collect();
    match model.architecture().head {
        HeadKind::Classify => {
            let labels = batch
                .iter()
                .map(|s| {
                    s.label()
                        .ok_or_else(|| Error::InvalidArgument("classifier needs labels".into()))
                })
                .collect::<Result<Vec<_>>>()?;
            let (logits, order) = model.classify_on_tape(tape, &seqs)?;
            let targets: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
            let loss = tape.cross_entropy(logits, &targets)?;
            Ok(BatchLoss {
                loss,
                logits,
                targets,
            })
        }
        HeadKind::PerStep => {
            let steps = batch
                .iter()
                .map(|s| {
                    s.steps().ok_or_else(|| {
                        Error::InvalidArgument("per-step head needs step targets".into())
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let logits = model.per_step_on_tape(tape, &seqs)?;
            let len = steps[0].len();
            let targets: Vec<usize> = (0..len)
                .flat_map(|t| steps.iter().map(move |s| s[t]))
                .collect();
            let loss = tape.cross_entropy(logits, &targets)?;
            Ok(BatchLoss {
                loss,
                logits,
                targets,
            })
        }
    }
}

/// `(errors, counted rows)` for a batch's logits.
fn count_errors(tape: &Tape<'_>, b: &BatchLoss, per_step: bool) -> (usize, usize) {
    let logits = tape.value(b.logits);
    let mut wrong = 0;
    let mut counted = 0;
    for (r, &y) in b.targets.iter().enumerate() {
        if per_step && y == 0 {
            continue;
        }
        counted += 1;
        if crate::state_reg::argmax(logits.row(r)) != y {
            wrong += 1;
        }
    }
    (wrong, counted)
}

/// Mean loss and error over `dataset`.
pub fn evaluate(model: &SrRnn, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_step = model.architecture().head == HeadKind::PerStep;
    let refs: Vec<&LabeledSequence> = dataset.sequences.iter().collect();
    let (mut loss_sum, mut rows, mut wrong, mut counted) = (0.0, 0usize, 0usize, 0usize);
    for chunk in refs.chunks(256) {
        let mut tape = Tape::inference(model.params());
        let b = batch_loss(model, &mut tape, chunk)?;
        let n = b.targets.len();
        loss_sum += tape.value(b.loss).data()[0] * n as f64;
        rows += n;
        let (w, c) = count_errors(&tape, &b, per_step);
        wrong += w;
        counted += c;
    }
    Ok(EvalReport {
        loss: loss_sum / rows as f64,
        error: if counted == 0 {
            0.0
        } else {
            wrong as f64 / counted as f64
        },
    })
}

fn key(monitor: Monitor, r: &EpochRecord) -> (f64, f64, f64) {
    match monitor {
        Monitor::ValidError => (r.valid_err, r.valid_loss, 0.0),
        Monitor::TrainThenValid => (r.train_err, r.valid_err, r.valid_loss),
        Monitor::ValidLoss => (r.valid_loss, 0.0, 0.0),
    }
}

/// Trains `model` in place and restores the best snapshot.
pub fn train(
    config: &TrainConfig,
    model: &mut SrRnn,
    train_set: &Dataset,
    valid_set: &Dataset,
) -> Result<History> {
    train_with(config, model, train_set, valid_set, |_, _| {
        ControlFlow::Continue(())
    })
}

/// [`train`] with a per-epoch callback that sees the current (not the best)
/// parameters and can stop training early.
pub fn train_with(
    config: &TrainConfig,
    model: &mut SrRnn,
    train_set: &Dataset,
    valid_set: &Dataset,
    mut on_epoch: impl FnMut(&EpochRecord, &SrRnn) -> ControlFlow<()>,
) -> Result<History> {
    config.validate()?;
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for ds in [train_set, valid_set] {
        if ds.alphabet != model.vocabulary().alphabet() {
            return Err(Error::AlphabetMismatch {
                expected: model.vocabulary().alphabet().join(","),
                found: ds.alphabet.join(","),
            });
        }
    }
    let per_step = model.architecture().head == HeadKind::PerStep;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = RmsProp::new(
        model.params(),
        config.lr,
        config.rho,
        config.momentum,
        config.eps,
    );
    let measure: Vec<usize> = train_set
        .sequences
        .iter()
        .map(|s| config.cap_metric.measure(&s.tokens))
        .collect();

    let mut history = History::default();
    let mut best: Option<(EpochRecord, ParamSet)> = None;
    let mut stale = 0;
    let final_phase = config.phases.len().saturating_sub(1);

    for epoch in 1..=config.max_epochs {
        let (phase, cap) = config.phase_at(epoch);
        let mut order: Vec<usize> = (0..train_set.len())
            .filter(|&i| cap.is_none_or(|c| measure[i] <= c))
            .collect();
        if order.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "curriculum phase {phase} admits no training sequences"
            )));
        }
        order.shuffle(&mut rng);

        let (mut loss_sum, mut rows, mut wrong, mut counted) = (0.0, 0usize, 0usize, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&LabeledSequence> =
                chunk.iter().map(|&i| &train_set.sequences[i]).collect();
            let mut tape = Tape::new(model.params());
            let b = batch_loss(model, &mut tape, &batch)?;
            let value = tape.value(b.loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("batch loss {value}"),
                });
            }
            let n = b.targets.len();
            loss_sum += value * n as f64;
            rows += n;
            let (w, c) = count_errors(&tape, &b, per_step);
            wrong += w;
            counted += c;
            let mut grads = tape.backward(b.loss)?;
            if let Some(max) = config.clip {
                let norm = grads.global_norm();
                if norm > max {
                    let s = max / norm;
                    for id in model.params().ids().collect::<Vec<_>>() {
                        if let Some(g) = grads.get_mut(id) {
                            g.iter_mut().for_each(|v| *v *= s);
                        }
                    }
                }
            }
            opt.step(model.params_mut(), &grads)
                .map_err(|e| Error::Diverged {
                    epoch,
                    detail: e.to_string(),
                })?;
        }

        let mut record = EpochRecord {
            epoch,
            phase,
            train_loss: loss_sum / rows as f64,
            train_err: if counted == 0 {
                0.0
            } else {
                wrong as f64 / counted as f64
            },
            valid_loss: 0.0,
            valid_err: 0.0,
        };
        if config.eval_train {
            let r = evaluate(model, train_set)?;
            record.train_loss = r.loss;
            record.train_err = r.error;
        }
        let v = evaluate(model, valid_set)?;
        record.valid_loss = v.loss;
        record.valid_err = v.error;
        if !record.train_loss.is_finite() || !record.valid_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: "non-finite loss".into(),
            });
        }
        history.epochs.push(record);
        let stop = on_epoch(&record, model).is_break();

        let improved = best
            .as_ref()
            .is_none_or(|(b, _)| key(config.monitor, &record) < key(config.monitor, b));
        if improved {
            best = Some((record, model.params().clone()));
            stale = 0;
        } else if phase == final_phase {
            stale += 1;
        }
        if stop || config.stop_at_zero_train_error && config.eval_train && record.train_err == 0.0 {
            break;
        }
        if config.patience.is_some_and(|p| stale >= p) {
            break;
        }
    }

    let (record, params) = best.expect("at least one epoch ran");
    *model.params_mut() = params;
    history.best_epoch = record.epoch;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{ParamSet, Tensor};
    use crate::cells::CellKind;
    use crate::langs::{strs, LabeledSequence};
    use crate::model::Architecture;
    use rand::Rng;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = ParamSet::new();
        let id = params.add("w", Tensor::vector(vec![1.0, -2.0]).unwrap());
        let before = params.clone();
        let mut opt = RmsProp::new(&params, 0.01, 0.9, 0.9, 1e-8);
        let grads = {
            let tape = Tape::new(&params);
            let mut t = tape;
            let w = t.param(id).unwrap();
            let z = t.scale(w, 0.0).unwrap();
            let s = t.sum(z).unwrap();
            t.backward(s).unwrap()
        };
        opt.step(&mut params, &grads).unwrap();
        assert_eq!(params, before);
    }

    fn quadratic_run(steps: usize) -> (f64, Vec<f64>) {
        let mut params = ParamSet::new();
        let id = params.add("w", Tensor::vector(vec![1.0]).unwrap());
        let mut opt = RmsProp::new(&params, 0.01, 0.9, 0.9, 1e-8);
        let mut trace = Vec::new();
        for _ in 0..steps {
            let grads = {
                let mut t = Tape::new(&params);
                let w = t.param(id).unwrap();
                let sq = t.mul(w, w).unwrap();
                let l = t.sum(sq).unwrap();
                t.backward(l).unwrap()
            };
            opt.step(&mut params, &grads).unwrap();
            trace.push(params.value(id).data()[0]);
        }
        (params.value(id).data()[0], trace)
    }

    #[test]
    fn quadratic_descends() {
        // Oracle: the declared update rule evaluated directly.
        let (mut w, mut cache, mut buf) = (1.0f64, 0.0f64, 0.0f64);
        for _ in 0..200 {
            let g = 2.0 * w;
            cache = 0.9 * cache + 0.1 * g * g;
            buf = 0.9 * buf + 0.01 * g / (cache + 1e-8).sqrt();
            w -= buf;
        }
        let (ours, trace) = quadratic_run(200);
        assert!((ours - w).abs() < 1e-12, "{ours} vs {w}");
        assert!(ours.abs() < 0.1, "{ours}");
        assert!(trace[..20].windows(2).all(|p| p[1] < p[0]));
        assert_eq!(quadratic_run(10).0.to_bits(), quadratic_run(10).0.to_bits());
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut params = ParamSet::new();
        params.add("w", Tensor::vector(vec![1.0]).unwrap());
        let mut opt = RmsProp::new(&params, 0.01, 0.9, 0.9, 1e-8);
        let grads = Gradients {
            per_param: vec![Some(vec![f64::NAN])],
        };
        assert!(opt.step(&mut params, &grads).is_err());
    }

    #[test]
    fn phases_and_caps() {
        let cfg = TrainConfig {
            phases: vec![
                Phase {
                    cap: Some(3),
                    epochs: Some(2),
                },
                Phase {
                    cap: Some(5),
                    epochs: None,
                },
            ],
            ..TrainConfig::default()
        };
        assert_eq!(cfg.phase_at(1), (0, Some(3)));
        assert_eq!(cfg.phase_at(2), (0, Some(3)));
        assert_eq!(cfg.phase_at(3), (1, Some(5)));
        assert_eq!(cfg.phase_at(99), (1, Some(5)));
        let bad = TrainConfig {
            phases: vec![
                Phase {
                    cap: Some(5),
                    epochs: Some(1),
                },
                Phase {
                    cap: Some(3),
                    epochs: None,
                },
            ],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        let depth = CapMetric::Depth { open: 0, close: 1 };
        assert_eq!(depth.measure(&[0, 0, 1, 0, 1, 1]), 2);
    }

    fn first_token_language(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sequences = (0..n)
            .map(|_| {
                let len = rng.gen_range(1..8);
                let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..2)).collect();
                let accept = tokens[0] == 1;
                LabeledSequence::labeled(tokens, accept)
            })
            .collect();
        Dataset::new(strs(&["0", "1"]), sequences).unwrap()
    }

    fn small_model(seed: u64) -> SrRnn {
        SrRnn::new(
            Architecture::classifier(CellKind::Gru, 8, Some(4), &strs(&["0", "1"])).unwrap(),
            seed,
        )
        .unwrap()
    }

    #[test]
    fn separable_toy_language_is_learned() {
        let train_set = first_token_language(200, 1);
        let valid_set = first_token_language(100, 2);
        let mut model = small_model(3);
        let cfg = TrainConfig {
            max_epochs: 50,
            stop_at_zero_train_error: true,
            monitor: Monitor::TrainThenValid,
            ..TrainConfig::default()
        };
        let history = train(&cfg, &mut model, &train_set, &valid_set).unwrap();
        assert_eq!(history.best().unwrap().train_err, 0.0);
        assert_eq!(evaluate(&model, &train_set).unwrap().error, 0.0);
    }

    #[test]
    fn training_is_reproducible_and_restores_best() {
        let train_set = first_token_language(64, 4);
        let valid_set = first_token_language(32, 5);
        let cfg = TrainConfig {
            max_epochs: 4,
            seed: 9,
            ..TrainConfig::default()
        };
        let mut a = small_model(1);
        let mut b = small_model(1);
        let ha = train(&cfg, &mut a, &train_set, &valid_set).unwrap();
        let hb = train(&cfg, &mut b, &train_set, &valid_set).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        let best = ha.best().unwrap();
        let min = ha
            .epochs
            .iter()
            .map(|e| key(Monitor::ValidError, e))
            .fold((f64::INFINITY, 0.0, 0.0), |m, k| if k < m { k } else { m });
        assert_eq!(key(Monitor::ValidError, best), min);
        let now = evaluate(&a, &valid_set).unwrap();
        assert_eq!(now.error, best.valid_err);
        assert_eq!(now.loss, best.valid_loss);
        assert!(ha
            .to_csv()
            .starts_with("epoch,phase,train_loss,train_err,valid_err\n"));
        assert_eq!(ha.to_csv().lines().count(), ha.epochs.len() + 1);
    }

    #[test]
    fn curriculum_filter_respects_cap() {
        let train_set = first_token_language(80, 6);
        let valid_set = first_token_language(10, 7);
        let cfg = TrainConfig {
            max_epochs: 1,
            phases: vec![Phase {
                cap: Some(0),
                epochs: None,
            }],
            ..TrainConfig::default()
        };
        let mut m = small_model(0);
        assert!(train(&cfg, &mut m, &train_set, &valid_set).is_err());
        let cfg = TrainConfig {
            phases: vec![Phase {
                cap: Some(3),
                epochs: None,
            }],
            ..cfg
        };
        assert!(train(&cfg, &mut m, &train_set, &valid_set).is_ok());
    }

    #[test]
    fn evaluation_edge_cases() {
        let model = small_model(0);
        assert!(matches!(
            evaluate(&model, &Dataset::empty(strs(&["0", "1"]))),
            Err(Error::EmptyDataset)
        ));
        // A constant predictor on a balanced set errs on exactly half.
        let seqs: Vec<LabeledSequence> = (0..10)
            .map(|i| LabeledSequence::labeled(vec![1], i % 2 == 0))
            .collect();
        let ds = Dataset::new(strs(&["0", "1"]), seqs).unwrap();
        assert_eq!(evaluate(&model, &ds).unwrap().error, 0.5);
    }

    #[test]
    fn repeated_batch_loss_does_not_increase() {
        let ds = first_token_language(16, 8);
        for cell in [CellKind::Gru, CellKind::Lstm, CellKind::LstmP] {
            let mut model = SrRnn::new(
                Architecture::classifier(cell, 6, Some(3), &strs(&["0", "1"])).unwrap(),
                2,
            )
            .unwrap();
            let batch: Vec<&LabeledSequence> = ds.sequences.iter().collect();
            let mut opt = RmsProp::new(model.params(), 1e-4, 0.9, 0.0, 1e-8);
            let mut last = f64::INFINITY;
            for _ in 0..100 {
                let mut tape = Tape::new(model.params());
                let b = batch_loss(&model, &mut tape, &batch).unwrap();
                let v = tape.value(b.loss).data()[0];
                assert!(v <= last + 1e-12, "{cell}: {v} > {last}");
                last = v;
                let g = tape.backward(b.loss).unwrap();
                opt.step(model.params_mut(), &g).unwrap();
            }
        }
    }
}
