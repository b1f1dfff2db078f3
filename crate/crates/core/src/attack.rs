//! l-infinity PGD adversary generation and robust-accuracy evaluation.
//!
//! The attack iterates `x' <- project(x' + step * sign(grad_x' L))` from a
//! Gaussian-perturbed start `x + rand_init_scale * N(0, I)`, projecting every
//! step onto the eps-ball around the clean input intersected with the input
//! box. When `interp = Some(I)`, the iterate immediately after the I-th
//! projected step is kept as the interpolation point.
//!
//! The probability of the clean input is held constant during the attack and
//! no gradient flows from the attack into the parameters.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::net::{forward, forward_on, NetworkSpec, Params};
use crate::rng;
use crate::simplex::ops as sops;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Loss maximized by the inner PGD loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerLoss {
    /// Cross-entropy toward the label (the PGD-AT adversary).
    Ce,
    /// KL(p(x) || p(x')) with p(x) constant (the TRADES / FAIT adversary).
    Kl,
    /// Squared error against p(x) (the squared-generator adversary).
    Se,
}

impl InnerLoss {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ce" => Ok(Self::Ce),
            "kl" => Ok(Self::Kl),
            "se" => Ok(Self::Se),
            other => Err(Error::InvalidConfig(format!("unknown inner loss '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ce => "ce",
            Self::Kl => "kl",
            Self::Se => "se",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    /// l-infinity radius, in input units.
    pub eps: f64,
    /// Step size per iteration.
    pub step: f64,
    /// Number of projected steps K.
    pub iters: usize,
    /// Interpolation index I with 0 < I < K; the iterate after step I is kept.
    pub interp: Option<usize>,
    pub inner_loss: InnerLoss,
    pub restarts: usize,
    /// Scale of the Gaussian start perturbation.
    pub rand_init_scale: f64,
    /// Componentwise clamp range for inputs.
    pub input_box: (f64, f64),
}

impl AttackConfig {
    /// TRADES-style training adversary: KL inner loss, K iterations.
    pub fn train_kl(eps: f64, step: f64, iters: usize, input_box: (f64, f64)) -> Self {
        Self {
            eps,
            step,
            iters,
            interp: None,
            inner_loss: InnerLoss::Kl,
            restarts: 1,
            rand_init_scale: 0.001,
            input_box,
        }
    }

    /// Cheap evaluation attack for per-epoch tracking (PGD-20).
    pub fn eval_cheap(eps: f64, step: f64, input_box: (f64, f64)) -> Self {
        Self {
            eps,
            step,
            iters: 20,
            interp: None,
            inner_loss: InnerLoss::Ce,
            restarts: 1,
            rand_init_scale: 0.001,
            input_box,
        }
    }

    /// Strong evaluation attack for final reporting (PGD-100, 5 restarts).
    pub fn eval_strong(eps: f64, step: f64, input_box: (f64, f64)) -> Self {
        Self {
            eps,
            step,
            iters: 100,
            interp: None,
            inner_loss: InnerLoss::Ce,
            restarts: 5,
            rand_init_scale: 0.001,
            input_box,
        }
    }

    pub fn with_interp(mut self, interp: usize) -> Self {
        self.interp = Some(interp);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.eps.is_finite() || self.eps < 0.0 {
            return Err(Error::InvalidConfig(format!("eps must be >= 0, got {}", self.eps)));
        }
        if self.iters > 0 && !(self.step > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "step must be > 0 when iters > 0, got {}",
                self.step
            )));
        }
        if let Some(i) = self.interp {
            if i == 0 || i >= self.iters {
                return Err(Error::InvalidConfig(format!(
                    "interp index must satisfy 0 < I < K, got I={i}, K={}",
                    self.iters
                )));
            }
        }
        if self.restarts < 1 {
            return Err(Error::InvalidConfig("restarts must be >= 1".into()));
        }
        if !self.rand_init_scale.is_finite() || self.rand_init_scale < 0.0 {
            return Err(Error::InvalidConfig("rand_init_scale must be >= 0".into()));
        }
        if !(self.input_box.0 < self.input_box.1) {
            return Err(Error::InvalidConfig(format!(
                "input box [{}, {}] is empty",
                self.input_box.0, self.input_box.1
            )));
        }
        Ok(())
    }
}

/// RNG context for one attack call; noise streams are keyed by
/// (seed, purpose, epoch, example id, restart) so results do not depend on
/// batch partitioning.
#[derive(Debug, Clone, Copy)]
pub struct AttackContext {
    pub seed: u64,
    pub purpose: u64,
    pub epoch: u64,
    pub restart: u64,
}

impl AttackContext {
    pub fn evaluation(seed: u64) -> Self {
        Self {
            seed,
            purpose: rng::purpose::EVAL_ATTACK,
            epoch: 0,
            restart: 0,
        }
    }
}

/// Result of one attack over a batch.
#[derive(Debug, Clone)]
pub struct AdvBatch {
    /// The K-th projected iterate.
    pub x_adv: Tensor,
    /// The iterate immediately after the I-th projected step, when configured.
    pub x_interp: Option<Tensor>,
}

/// Componentwise projection onto the eps-ball around `center` intersected
/// with the input box. The box binds before the ball.
pub fn project_linf_box(candidate: &Tensor, center: &Tensor, cfg: &AttackConfig) -> Result<Tensor> {
    if !candidate.same_shape(center) {
        return Err(Error::ShapeMismatch {
            context: "project_linf_box",
            expected: center.shape().to_vec(),
            got: candidate.shape().to_vec(),
        });
    }
    let (lo, hi) = cfg.input_box;
    let data: Vec<f64> = candidate
        .data()
        .iter()
        .zip(center.data())
        .map(|(&v, &c)| {
            let lo_eff = (c - cfg.eps).max(lo);
            let hi_eff = (c + cfg.eps).min(hi);
            v.max(lo_eff).min(hi_eff)
        })
        .collect();
    Tensor::from_vec(candidate.shape().to_vec(), data)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Generate adversaries for a batch. `example_ids` are dataset-level indices
/// used to key the per-example noise streams.
pub fn pgd_attack(
    spec: &NetworkSpec,
    params: &Params,
    x: &Tensor,
    labels: &[usize],
    example_ids: &[u64],
    cfg: &AttackConfig,
    ctx: AttackContext,
) -> Result<AdvBatch> {
    cfg.validate()?;
    if !x.is_matrix() || x.rows() != labels.len() || labels.len() != example_ids.len() {
        return Err(Error::InvalidConfig(format!(
            "attack batch: {:?} features, {} labels, {} ids",
            x.shape(),
            labels.len(),
            example_ids.len()
        )));
    }
    for &l in labels {
        if l >= spec.classes {
            return Err(Error::InvalidLabel {
                index: l,
                classes: spec.classes,
            });
        }
    }
    if cfg.iters == 0 {
        return Ok(AdvBatch {
            x_adv: project_linf_box(x, x, cfg)?,
            x_interp: None,
        });
    }

    // Reference distribution p(x), held constant for KL / SE inner losses.
    let p_ref = match cfg.inner_loss {
        InnerLoss::Ce => None,
        InnerLoss::Kl | InnerLoss::Se => {
            let logits = forward(spec, params, x)?;
            let mut tape = Tape::new();
            let lv = tape.constant(logits);
            let pv = tape.softmax_rows(lv)?;
            Some(tape.value(pv).clone())
        }
    };

    // Gaussian start: x + rand_init_scale * N(0, I), one stream per example.
    let d = x.cols();
    let mut current = x.clone();
    for (i, &id) in example_ids.iter().enumerate() {
        let mut stream = rng::stream(ctx.seed, &[ctx.purpose, ctx.epoch, id, ctx.restart]);
        for j in 0..d {
            let noise: f64 = stream.sample(StandardNormal);
            current.data_mut()[i * d + j] += cfg.rand_init_scale * noise;
        }
    }

    let mut x_interp = None;
    for k in 1..=cfg.iters {
        let mut tape = Tape::new();
        let pv = params.register(&mut tape, false);
        let xv = tape.leaf(current.clone());
        let logits = forward_on(&mut tape, spec, &pv, xv)?;
        let probs = tape.softmax_rows(logits)?;
        let per_row = match cfg.inner_loss {
            InnerLoss::Ce => sops::ce_rows(&mut tape, probs, labels)?,
            InnerLoss::Kl => {
                let refv = tape.constant(p_ref.clone().expect("p_ref set for KL"));
                sops::kl_rows(&mut tape, refv, probs)?
            }
            InnerLoss::Se => {
                let refv = tape.constant(p_ref.clone().expect("p_ref set for SE"));
                sops::se_rows(&mut tape, refv, probs)?
            }
        };
        let loss = tape.mean_all(per_row);
        let store = tape.backward(loss)?;
        let grad = store.get_or_zeros(xv, current.shape());

        for (v, g) in current.data_mut().iter_mut().zip(grad.data()) {
            *v += cfg.step * sign(*g);
        }
        current = project_linf_box(&current, x, cfg)?;

        if cfg.interp == Some(k) {
            x_interp = Some(current.clone());
        }
    }

    Ok(AdvBatch {
        x_adv: current,
        x_interp,
    })
}

/// Fraction of examples whose prediction stays correct under the attack for
/// every restart (worst case over restarts; argmax ties break toward the
/// lowest index).
pub fn evaluate_robust_accuracy(
    spec: &NetworkSpec,
    params: &Params,
    features: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    ctx: AttackContext,
) -> Result<f64> {
    cfg.validate()?;
    if features.rows() != labels.len() {
        return Err(Error::DimMismatch {
            left: features.rows(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let n = features.rows();
    let mut correct = vec![true; n];
    const CHUNK: usize = 512;
    for restart in 0..cfg.restarts {
        let rctx = AttackContext {
            restart: restart as u64,
            ..ctx
        };
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let rows: Vec<Vec<f64>> = (start..end).map(|i| features.row(i).to_vec()).collect();
            let chunk_x = Tensor::from_rows(&rows)?;
            let chunk_labels = &labels[start..end];
            let ids: Vec<u64> = (start..end).map(|i| i as u64).collect();
            let adv = pgd_attack(spec, params, &chunk_x, chunk_labels, &ids, cfg, rctx)?;
            let preds = crate::net::predict(spec, params, &adv.x_adv)?;
            for (offset, (&pred, &label)) in preds.iter().zip(chunk_labels).enumerate() {
                if pred != label {
                    correct[start + offset] = false;
                }
            }
            start = end;
        }
    }
    Ok(correct.iter().filter(|c| **c).count() as f64 / n as f64)
}
