//! The outer-minimization loop: SGD with momentum and weight decay, a
//! warmup + milestone learning-rate schedule, per-epoch adversary generation,
//! and metrics capture.
//!
//! Every random choice (init, batch order, attack noise) comes from a stream
//! keyed by the config seed, so a (config, seed) pair fully determines the
//! metrics stream. The CSV serialization is part of that contract: its
//! `seconds` column is a fixed placeholder (real per-epoch wall times travel
//! in [`MetricsRecord::wall_secs`] and belong in run manifests), which keeps
//! repeated runs byte-identical.

use std::time::Instant;

use rand::seq::SliceRandom;

use crate::attack::{evaluate_robust_accuracy, pgd_attack, AttackConfig, AttackContext};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{accuracy, forward, forward_on, NetworkSpec, Params};
use crate::objective::{
    build_total_loss, fait_robustness_loss, mer_penalty, prob_rows, robustness_loss,
    ObjectiveSpec, ObjectiveVariant,
};
use crate::rng::{self, purpose};
use crate::simplex::{entropy, kl_onehot, OneHotLabel, ProbDist};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Multiply the learning rate by `factor` from `epoch` onward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Milestone {
    pub epoch: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub milestones: Vec<Milestone>,
    pub seed: u64,
    pub objective: ObjectiveSpec,
    pub attack: AttackConfig,
    pub eval_attack: AttackConfig,
    /// Size of the training-set subset used for the per-epoch loss
    /// observables.
    pub metrics_examples: usize,
}

impl TrainConfig {
    /// Desk-scale defaults for the synthetic binary datasets.
    pub fn desk_default(objective: ObjectiveSpec, seed: u64) -> Self {
        let input_box = (-3.0, 3.0);
        let eps = 0.1;
        let step = eps / 4.0;
        let mut attack = AttackConfig::train_kl(eps, step, 10, input_box);
        if objective.requires_interp() {
            attack = attack.with_interp(2);
        }
        attack.inner_loss = match (objective.variant, objective.psi) {
            (ObjectiveVariant::PgdAt, _) => crate::attack::InnerLoss::Ce,
            (_, crate::simplex::PsiFunction::Square) => crate::attack::InnerLoss::Se,
            _ => crate::attack::InnerLoss::Kl,
        };
        Self {
            epochs: 40,
            batch_size: 128,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            warmup_epochs: 2,
            milestones: vec![
                Milestone { epoch: 30, factor: 0.1 },
                Milestone { epoch: 36, factor: 0.1 },
            ],
            seed,
            objective,
            attack,
            eval_attack: AttackConfig::eval_cheap(eps, step, input_box),
            metrics_examples: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        for w in self.milestones.windows(2) {
            if w[0].epoch >= w[1].epoch {
                return Err(Error::InvalidConfig(
                    "milestones must be strictly increasing in epoch".into(),
                ));
            }
        }
        if let Some(first) = self.milestones.first() {
            if self.warmup_epochs >= first.epoch {
                return Err(Error::InvalidConfig(format!(
                    "warmup ({}) must end before the first milestone ({})",
                    self.warmup_epochs, first.epoch
                )));
            }
        }
        self.objective.validate()?;
        self.attack.validate()?;
        self.eval_attack.validate()?;
        if self.objective.requires_interp() && self.attack.interp.is_none() {
            return Err(Error::InvalidConfig(format!(
                "variant {} requires attack.interp",
                self.objective.variant.name()
            )));
        }
        Ok(())
    }
}

/// Per-epoch observables. `loss_rob` is the direct clean-to-adversarial
/// divergence and `loss_rprime` its split through the interpolated iterate;
/// both are measured every epoch regardless of the training variant.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub clean_acc: f64,
    pub robust_acc: f64,
    pub loss_total: f64,
    pub loss_acc: f64,
    pub loss_rob: f64,
    pub loss_rprime: f64,
    pub loss_mer: f64,
    pub ent_clean: f64,
    pub ent_adv: f64,
    /// lambda times the robustness term the variant actually trains on.
    pub lambda_rob: f64,
    pub lr: f64,
    /// Measured wall time of the epoch; reported in manifests, not in the CSV.
    pub wall_secs: f64,
}

impl MetricsRecord {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("clean_acc", self.clean_acc), ("robust_acc", self.robust_acc)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
            }
        }
        for (name, v) in [
            ("loss_total", self.loss_total),
            ("loss_acc", self.loss_acc),
            ("loss_rob", self.loss_rob),
            ("loss_rprime", self.loss_rprime),
            ("loss_mer", self.loss_mer),
            ("ent_clean", self.ent_clean),
            ("ent_adv", self.ent_adv),
            ("lambda_rob", self.lambda_rob),
            ("lr", self.lr),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "metrics field {name} is not finite"
                )));
            }
        }
        Ok(())
    }
}

pub const METRICS_CSV_HEADER: &str = "epoch,clean_acc,robust_acc,loss_total,loss_acc,loss_rob,loss_rprime,loss_mer,ent_clean,ent_adv,lr,seconds";

/// One CSV line for a record. Floats use the shortest round-trip form, and
/// the seconds column is a fixed placeholder so identical runs serialize
/// byte-identically.
pub fn metrics_csv_row(rec: &MetricsRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},0.000",
        rec.epoch,
        rec.clean_acc,
        rec.robust_acc,
        rec.loss_total,
        rec.loss_acc,
        rec.loss_rob,
        rec.loss_rprime,
        rec.loss_mer,
        rec.ent_clean,
        rec.ent_adv,
        rec.lr
    )
}

pub fn metrics_to_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for rec in records {
        out.push_str(&metrics_csv_row(rec));
        out.push('\n');
    }
    out
}

/// Learning rate at a fractional epoch: linear ramp from 0 across the warmup
/// epochs, then piecewise constant with multiplicative milestone factors.
pub fn lr_at(progress: f64, cfg: &TrainConfig) -> f64 {
    if cfg.warmup_epochs > 0 && progress < cfg.warmup_epochs as f64 {
        return cfg.lr * (progress / cfg.warmup_epochs as f64);
    }
    let mut lr = cfg.lr;
    for m in &cfg.milestones {
        if progress >= m.epoch as f64 {
            lr *= m.factor;
        }
    }
    lr
}

/// One SGD step: `g <- grad + wd * param; v <- momentum * v + g;
/// param <- param - lr * v`.
pub fn sgd_step(
    params: &mut Params,
    grads: &[Tensor],
    velocity: &mut [Tensor],
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.num_tensors() || velocity.len() != params.num_tensors() {
        return Err(Error::DimMismatch {
            left: grads.len(),
            right: params.num_tensors(),
        });
    }
    for ((onto, grad), vel) in params.tensors_mut().iter_mut().zip(grads).zip(velocity) {
        if !onto.1.same_shape(grad) || !onto.1.same_shape(vel) {
            return Err(Error::ShapeMismatch {
                context: "sgd_step",
                expected: onto.1.shape().to_vec(),
                got: grad.shape().to_vec(),
            });
        }
        let p = onto.1.data_mut();
        let v = vel.data_mut();
        let g = grad.data();
        for i in 0..p.len() {
            let g_eff = g[i] + cfg.weight_decay * p[i];
            v[i] = cfg.momentum * v[i] + g_eff;
            p[i] -= lr * v[i];
        }
    }
    Ok(())
}

/// Result of a training run: the final parameters, the checkpoint of the
/// epoch with the best robust accuracy under the cheap evaluation attack,
/// and the full metrics stream.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub final_params: Params,
    pub best_params: Params,
    pub best_epoch: usize,
    pub metrics: Vec<MetricsRecord>,
}

fn gather_batch(ds: &Dataset, indices: &[usize]) -> Result<(Tensor, Vec<usize>, Vec<u64>)> {
    let rows: Vec<Vec<f64>> = indices.iter().map(|&i| ds.features.row(i).to_vec()).collect();
    let labels: Vec<usize> = indices.iter().map(|&i| ds.labels[i]).collect();
    let ids: Vec<u64> = indices.iter().map(|&i| i as u64).collect();
    Ok((Tensor::from_rows(&rows)?, labels, ids))
}

/// Loss observables on the metrics subset, measured after the epoch's
/// updates. The split divergence is always measured with an interpolation
/// index (the configured one, or 2 capped to K-1 when the training attack
/// does not sample an interpolated iterate).
fn epoch_observables(
    spec: &NetworkSpec,
    params: &Params,
    subset: &Dataset,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(f64, f64, f64, f64, f64, f64, f64, f64)> {
    let mut attack_cfg = cfg.attack.clone();
    if attack_cfg.iters >= 2 {
        let interp = cfg.attack.interp.unwrap_or(2).min(attack_cfg.iters - 1).max(1);
        attack_cfg.interp = Some(interp);
    } else {
        attack_cfg.interp = None;
    }
    let ctx = AttackContext {
        seed: cfg.seed,
        purpose: purpose::METRICS_ATTACK,
        epoch: epoch as u64,
        restart: 0,
    };
    let ids: Vec<u64> = (0..subset.len() as u64).collect();
    let adv = pgd_attack(
        spec,
        params,
        &subset.features,
        &subset.labels,
        &ids,
        &attack_cfg,
        ctx,
    )?;

    let probs_of = |x: &Tensor| -> Result<Vec<ProbDist>> {
        let logits = forward(spec, params, x)?;
        let mut tape = Tape::new();
        let lv = tape.constant(logits);
        let pv = tape.softmax_rows(lv)?;
        prob_rows(tape.value(pv))
    };
    let p_clean = probs_of(&subset.features)?;
    let p_adv = probs_of(&adv.x_adv)?;
    let p_interp = match &adv.x_interp {
        Some(x) => Some(probs_of(x)?),
        None => None,
    };

    let obj = &cfg.objective;
    let m = subset.len() as f64;
    let mut acc = 0.0;
    let mut rob = 0.0;
    let mut rprime = 0.0;
    let mut mer = 0.0;
    let mut h_clean = 0.0;
    let mut h_adv = 0.0;
    for i in 0..subset.len() {
        let y = OneHotLabel::new(subset.labels[i], subset.classes)?;
        acc += match obj.variant {
            ObjectiveVariant::PgdAt => kl_onehot(y, &p_adv[i])?,
            _ => kl_onehot(y, &p_clean[i])?,
        };
        rob += robustness_loss(obj.psi, &p_clean[i], &p_adv[i])?;
        rprime += match &p_interp {
            Some(pi) => fait_robustness_loss(obj.psi, &p_clean[i], &pi[i], &p_adv[i])?,
            // no interior iterate exists: the split degenerates to the
            // direct divergence
            None => robustness_loss(obj.psi, &p_clean[i], &p_adv[i])?,
        };
        if obj.uses_mer() {
            mer += mer_penalty(obj.psi, obj.beta_cle, obj.beta_adv, &p_clean[i], &p_adv[i]);
        }
        h_clean += entropy(&p_clean[i]);
        h_adv += entropy(&p_adv[i]);
    }
    let (acc, rob, rprime, mer) = (acc / m, rob / m, rprime / m, mer / m);
    let (h_clean, h_adv) = (h_clean / m, h_adv / m);
    let trained_rob = match obj.variant {
        ObjectiveVariant::PgdAt => 0.0,
        ObjectiveVariant::Trades | ObjectiveVariant::TradesMer => rob,
        ObjectiveVariant::Fait | ObjectiveVariant::FaitMer => rprime,
    };
    let lambda_rob = obj.lambda * trained_rob;
    let total = match obj.variant {
        ObjectiveVariant::PgdAt => acc,
        _ => acc + lambda_rob + mer,
    };
    Ok((total, acc, rob, rprime, mer, h_clean, h_adv, lambda_rob))
}

/// Run the training loop. `observer` sees each record as it is produced
/// (for streaming CSV writers); records are also returned in the output.
pub fn train(
    spec: &NetworkSpec,
    cfg: &TrainConfig,
    train_ds: &Dataset,
    eval_ds: &Dataset,
    mut observer: impl FnMut(&MetricsRecord),
) -> Result<TrainOutput> {
    cfg.validate()?;
    spec.validate()?;
    train_ds.validate()?;
    eval_ds.validate()?;
    if train_ds.dim() != spec.input_dim || eval_ds.dim() != spec.input_dim {
        return Err(Error::InvalidConfig(format!(
            "dataset dim {} does not match spec input dim {}",
            train_ds.dim(),
            spec.input_dim
        )));
    }

    let mut params = Params::init(spec, cfg.seed)?;
    let mut velocity: Vec<Tensor> = params
        .tensors()
        .iter()
        .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
        .collect();
    let metrics_subset = train_ds.head(cfg.metrics_examples.max(1))?;

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut best_robust = f64::NEG_INFINITY;

    let n = train_ds.len();
    let num_batches = n.div_ceil(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = rng::stream(cfg.seed, &[purpose::SHUFFLE, epoch as u64]);
        order.shuffle(&mut shuffle_rng);

        for (step, batch_indices) in order.chunks(cfg.batch_size).enumerate() {
            let progress = epoch as f64 + step as f64 / num_batches as f64;
            let lr = lr_at(progress, cfg);
            let (x, labels, ids) = gather_batch(train_ds, batch_indices)?;
            let step_result = (|| -> Result<()> {
                let ctx = AttackContext {
                    seed: cfg.seed,
                    purpose: purpose::TRAIN_ATTACK,
                    epoch: epoch as u64,
                    restart: 0,
                };
                let adv = pgd_attack(spec, &params, &x, &labels, &ids, &cfg.attack, ctx)?;

                let mut tape = Tape::new();
                let pv = params.register(&mut tape, true);
                let xa = tape.constant(adv.x_adv.clone());
                let logits_adv = forward_on(&mut tape, spec, &pv, xa)?;
                let p_adv = tape.softmax_rows(logits_adv)?;
                let p_clean = if cfg.objective.variant == ObjectiveVariant::PgdAt {
                    p_adv
                } else {
                    let xc = tape.constant(x.clone());
                    let logits = forward_on(&mut tape, spec, &pv, xc)?;
                    tape.softmax_rows(logits)?
                };
                let p_interp = match (&adv.x_interp, cfg.objective.requires_interp()) {
                    (Some(xi), true) => {
                        let xv = tape.constant(xi.clone());
                        let logits = forward_on(&mut tape, spec, &pv, xv)?;
                        Some(tape.softmax_rows(logits)?)
                    }
                    _ => None,
                };
                let tl =
                    build_total_loss(&mut tape, &cfg.objective, &labels, p_clean, p_interp, p_adv)?;
                let total = tape.value(tl.total).item()?;
                if !total.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step });
                }
                let store = tape.backward(tl.total)?;
                let grads = pv.grads(&tape, &store);
                sgd_step(&mut params, &grads, &mut velocity, lr, cfg)
            })();
            // Exploding weights surface as non-finite tensors inside the
            // forward pass; report them as the loss diagnostic.
            match step_result {
                Ok(()) => {}
                Err(Error::NonFinite { .. }) => return Err(Error::NonFiniteLoss { epoch, step }),
                Err(e) => return Err(e),
            }
        }

        let clean_acc = accuracy(spec, &params, &eval_ds.features, &eval_ds.labels)?;
        let eval_ctx = AttackContext {
            seed: cfg.seed,
            purpose: purpose::EVAL_ATTACK,
            epoch: epoch as u64,
            restart: 0,
        };
        let robust_acc = evaluate_robust_accuracy(
            spec,
            &params,
            &eval_ds.features,
            &eval_ds.labels,
            &cfg.eval_attack,
            eval_ctx,
        )?;
        let (total, acc, rob, rprime, mer, h_clean, h_adv, lambda_rob) =
            epoch_observables(spec, &params, &metrics_subset, cfg, epoch)?;

        let rec = MetricsRecord {
            epoch,
            clean_acc,
            robust_acc,
            loss_total: total,
            loss_acc: acc,
            loss_rob: rob,
            loss_rprime: rprime,
            loss_mer: mer,
            ent_clean: h_clean,
            ent_adv: h_adv,
            lambda_rob,
            lr: lr_at(epoch as f64, cfg),
            wall_secs: started.elapsed().as_secs_f64(),
        };
        rec.validate()?;
        observer(&rec);
        if rec.robust_acc > best_robust {
            best_robust = rec.robust_acc;
            best_epoch = epoch;
            best_params = params.clone();
        }
        metrics.push(rec);
    }

    Ok(TrainOutput {
        final_params: params,
        best_params,
        best_epoch,
        metrics,
    })
}

/// Verify the breakdown identity on a metrics stream: each logged total must
/// reconstruct from its logged components.
pub fn breakdown_consistent(records: &[MetricsRecord], objective: &ObjectiveSpec) -> bool {
    records.iter().all(|r| {
        let expected = match objective.variant {
            ObjectiveVariant::PgdAt => r.loss_acc,
            _ => r.loss_acc + r.lambda_rob + r.loss_mer,
        };
        (r.loss_total - expected).abs() <= 1e-6
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_two_moons;
    use crate::net::Activation;
    use crate::simplex::PsiFunction;

    fn moons_spec() -> NetworkSpec {
        NetworkSpec::new(2, vec![16, 16], 2, Activation::Relu).unwrap()
    }

    fn tiny_cfg(objective: ObjectiveSpec, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::desk_default(objective, seed);
        cfg.epochs = 6;
        cfg.batch_size = 64;
        cfg.warmup_epochs = 1;
        cfg.milestones = vec![Milestone { epoch: 4, factor: 0.1 }];
        cfg.metrics_examples = 100;
        cfg.eval_attack.iters = 5;
        cfg
    }

    #[test]
    fn lr_schedule_examples() {
        let mut cfg = TrainConfig::desk_default(ObjectiveSpec::trades(9.0), 0);
        cfg.lr = 0.4;
        cfg.warmup_epochs = 2;
        cfg.milestones = vec![Milestone { epoch: 30, factor: 0.1 }];
        // ramp start
        assert_eq!(lr_at(0.0, &cfg), 0.0);
        assert_eq!(lr_at(1.0, &cfg), 0.2);
        assert_eq!(lr_at(2.0, &cfg), 0.4);
        // past the milestone
        assert!((lr_at(31.0, &cfg) - 0.04).abs() < 1e-15);
        // no warmup: constant until the milestone
        cfg.warmup_epochs = 0;
        assert_eq!(lr_at(0.0, &cfg), 0.4);
        assert_eq!(lr_at(29.9, &cfg), 0.4);
    }

    #[test]
    fn sgd_step_examples() {
        let spec = NetworkSpec::new(1, vec![], 2, Activation::Relu).unwrap();
        let mut cfg = tiny_cfg(ObjectiveSpec::trades(1.0), 0);

        // zero gradient, zero decay: parameters unchanged
        cfg.momentum = 0.9;
        cfg.weight_decay = 0.0;
        let mut params = Params::init(&spec, 1).unwrap();
        let before = params.clone();
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
            .collect();
        let mut vel = zeros.clone();
        sgd_step(&mut params, &zeros, &mut vel, 0.5, &cfg).unwrap();
        assert_eq!(params, before);

        // no momentum, no decay: plain gradient descent
        cfg.momentum = 0.0;
        let mut params = Params::from_tensors(vec![
            ("w0".into(), Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap()),
            ("b0".into(), Tensor::zeros(vec![2])),
        ]);
        let grads = vec![
            Tensor::from_vec(vec![1, 2], vec![0.5, -0.5]).unwrap(),
            Tensor::zeros(vec![2]),
        ];
        let mut vel = vec![Tensor::zeros(vec![1, 2]), Tensor::zeros(vec![2])];
        sgd_step(&mut params, &grads, &mut vel, 0.1, &cfg).unwrap();
        assert_eq!(params.tensors()[0].1.data(), &[0.95, 2.05]);

        // constant gradient, momentum 0.9: second update is lr * 1.9 * g
        cfg.momentum = 0.9;
        let mut params = Params::from_tensors(vec![
            ("w0".into(), Tensor::from_vec(vec![1, 2], vec![0.0, 0.0]).unwrap()),
            ("b0".into(), Tensor::zeros(vec![2])),
        ]);
        let g = 1.0;
        let lr = 0.1;
        let grads = vec![
            Tensor::from_vec(vec![1, 2], vec![g, g]).unwrap(),
            Tensor::zeros(vec![2]),
        ];
        let mut vel = vec![Tensor::zeros(vec![1, 2]), Tensor::zeros(vec![2])];
        sgd_step(&mut params, &grads, &mut vel, lr, &cfg).unwrap();
        let after_first = params.tensors()[0].1.data()[0];
        sgd_step(&mut params, &grads, &mut vel, lr, &cfg).unwrap();
        let second_update = after_first - params.tensors()[0].1.data()[0];
        assert!((second_update - lr * 1.9 * g).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let spec = moons_spec();
        let mut cfg = tiny_cfg(ObjectiveSpec::trades(9.0), 3);
        cfg.epochs = 0;
        cfg.milestones.clear();
        cfg.warmup_epochs = 0;
        let ds = gen_two_moons(64, 0.15, 3).unwrap();
        let out = train(&spec, &cfg, &ds, &ds, |_| {}).unwrap();
        assert!(out.metrics.is_empty());
        assert_eq!(out.final_params, Params::init(&spec, 3).unwrap());
        assert_eq!(out.best_params, out.final_params);
    }

    #[test]
    fn config_validation_catches_bad_milestones_and_missing_interp() {
        let mut cfg = tiny_cfg(ObjectiveSpec::trades(9.0), 0);
        cfg.milestones = vec![
            Milestone { epoch: 4, factor: 0.1 },
            Milestone { epoch: 4, factor: 0.1 },
        ];
        assert!(cfg.validate().is_err());

        let mut cfg = tiny_cfg(ObjectiveSpec::fait(12.0), 0);
        cfg.attack.interp = None;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn determinism_same_seed_same_metrics_and_csv() {
        let spec = moons_spec();
        let cfg = tiny_cfg(ObjectiveSpec::trades(6.0), 11);
        let train_ds = gen_two_moons(200, 0.15, 21).unwrap();
        let eval_ds = gen_two_moons(100, 0.15, 22).unwrap();
        let a = train(&spec, &cfg, &train_ds, &eval_ds, |_| {}).unwrap();
        let b = train(&spec, &cfg, &train_ds, &eval_ds, |_| {}).unwrap();
        // wall time differs; everything else must match
        for (ra, rb) in a.metrics.iter().zip(&b.metrics) {
            assert_eq!(metrics_csv_row(ra), metrics_csv_row(rb));
        }
        assert_eq!(metrics_to_csv(&a.metrics), metrics_to_csv(&b.metrics));
        assert_eq!(a.final_params, b.final_params);
        assert_eq!(a.best_epoch, b.best_epoch);
        assert!(breakdown_consistent(&a.metrics, &cfg.objective));
    }

    #[test]
    fn standard_training_learns_two_moons() {
        let spec = moons_spec();
        // lambda 0 degenerates TRADES to standard training; keep eps tiny so
        // the attack work is trivial
        let mut cfg = tiny_cfg(ObjectiveSpec::trades(0.0), 5);
        cfg.epochs = 14;
        cfg.milestones = vec![Milestone { epoch: 12, factor: 0.1 }];
        cfg.attack.iters = 1;
        cfg.attack.eps = 0.0;
        cfg.eval_attack.eps = 0.0;
        let train_ds = gen_two_moons(400, 0.1, 31).unwrap();
        let eval_ds = gen_two_moons(200, 0.1, 32).unwrap();
        let out = train(&spec, &cfg, &train_ds, &eval_ds, |_| {}).unwrap();
        let last = out.metrics.last().unwrap();
        assert!(last.clean_acc > 0.9, "clean accuracy {}", last.clean_acc);
        // eps = 0: robust accuracy equals clean accuracy every epoch
        for rec in &out.metrics {
            assert_eq!(rec.clean_acc, rec.robust_acc);
        }
    }

    #[test]
    fn huge_lr_aborts_with_non_finite_diagnostic() {
        let spec = moons_spec();
        let mut cfg = tiny_cfg(ObjectiveSpec::pgd_at(), 7);
        cfg.lr = 1e12;
        cfg.warmup_epochs = 0;
        cfg.milestones.clear();
        cfg.epochs = 30;
        let ds = gen_two_moons(128, 0.15, 41).unwrap();
        let err = train(&spec, &cfg, &ds, &ds, |_| {}).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { .. }), "got {err:?}");
    }

    #[test]
    fn interpolated_iterate_is_more_adversarial_than_clean() {
        // On a briefly trained model, the loss at the interpolated iterate
        // should exceed the loss at the clean input for at least 90% of
        // examples.
        let spec = moons_spec();
        let mut cfg = tiny_cfg(ObjectiveSpec::fait(12.0), 13);
        cfg.epochs = 8;
        let train_ds = gen_two_moons(300, 0.15, 51).unwrap();
        let eval_ds = gen_two_moons(150, 0.15, 52).unwrap();
        let out = train(&spec, &cfg, &train_ds, &eval_ds, |_| {}).unwrap();

        let params = &out.final_params;
        let ids: Vec<u64> = (0..train_ds.len() as u64).collect();
        let adv = pgd_attack(
            &spec,
            params,
            &train_ds.features,
            &train_ds.labels,
            &ids,
            &cfg.attack,
            AttackContext {
                seed: 99,
                purpose: purpose::TRAIN_ATTACK,
                epoch: 0,
                restart: 0,
            },
        )
        .unwrap();
        let x_interp = adv.x_interp.unwrap();

        let ce_of = |x: &Tensor| -> Vec<f64> {
            let logits = forward(&spec, params, x).unwrap();
            let mut tape = Tape::new();
            let lv = tape.constant(logits);
            let pv = tape.softmax_rows(lv).unwrap();
            let probs = prob_rows(tape.value(pv)).unwrap();
            probs
                .iter()
                .zip(&train_ds.labels)
                .map(|(p, &l)| {
                    kl_onehot(OneHotLabel::new(l, 2).unwrap(), p).unwrap()
                })
                .collect()
        };
        let clean_losses = ce_of(&train_ds.features);
        let interp_losses = ce_of(&x_interp);
        let higher = clean_losses
            .iter()
            .zip(&interp_losses)
            .filter(|(c, i)| i >= c)
            .count();
        let frac = higher as f64 / clean_losses.len() as f64;
        assert!(frac >= 0.9, "only {frac} of interpolated iterates are more adversarial");
    }

    #[test]
    fn fait_square_variant_trains() {
        let spec = moons_spec();
        let cfg = tiny_cfg(
            ObjectiveSpec::fait(8.0).with_psi(PsiFunction::Square),
            17,
        );
        let train_ds = gen_two_moons(200, 0.15, 61).unwrap();
        let eval_ds = gen_two_moons(100, 0.15, 62).unwrap();
        let out = train(&spec, &cfg, &train_ds, &eval_ds, |_| {}).unwrap();
        assert_eq!(out.metrics.len(), cfg.epochs);
        assert!(breakdown_consistent(&out.metrics, &cfg.objective));
    }
}
