//! The outer-minimization loss family.
//!
//! Every variant decomposes into an accuracy term (cross-entropy on the clean
//! input), a robustness term (a Bregman divergence between clean and
//! adversarial output distributions, optionally split through an interpolated
//! adversary), and an optional maximum-entropy penalty:
//!
//! - `PgdAt`      — cross-entropy on the adversary only
//! - `Trades`     — acc + lambda * div(p_clean, p_adv)
//! - `Fait`       — acc + lambda * (div(p_clean, p_interp) + div(p_interp, p_adv))
//! - `TradesMer`  — Trades minus beta-weighted output entropies
//! - `FaitMer`    — Fait minus beta-weighted output entropies
//!
//! The divergence generator is selectable: `NegEntropy` gives the KL family,
//! `Square` the squared-error family (for which the entropy bonus is replaced
//! by a sum-of-squares penalty with flipped sign).
//!
//! Plain functions operate on [`ProbDist`] values for metrics and tests; the
//! [`build_total_loss`] tape builder composes the identical quantities out of
//! differentiable primitives, with gradient flowing through the clean,
//! interpolated, and adversarial distributions into the parameters (the
//! adversarial inputs themselves are constants).

use crate::error::{Error, Result};
use crate::simplex::{
    self, bregman, entropy, kl_onehot, ops as sops, OneHotLabel, ProbDist, PsiFunction,
};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveVariant {
    PgdAt,
    Trades,
    Fait,
    TradesMer,
    FaitMer,
}

impl ObjectiveVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "pgd_at" | "pgdat" => Ok(Self::PgdAt),
            "trades" => Ok(Self::Trades),
            "fait" => Ok(Self::Fait),
            "trades_mer" | "tradesmer" => Ok(Self::TradesMer),
            "fait_mer" | "faitmer" => Ok(Self::FaitMer),
            other => Err(Error::InvalidConfig(format!("unknown objective variant '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::PgdAt => "pgd_at",
            Self::Trades => "trades",
            Self::Fait => "fait",
            Self::TradesMer => "trades_mer",
            Self::FaitMer => "fait_mer",
        }
    }
}

/// Fully determines the outer-minimization loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    pub variant: ObjectiveVariant,
    pub lambda: f64,
    pub beta_cle: f64,
    pub beta_adv: f64,
    pub psi: PsiFunction,
}

impl ObjectiveSpec {
    pub fn pgd_at() -> Self {
        Self {
            variant: ObjectiveVariant::PgdAt,
            lambda: 0.0,
            beta_cle: 0.0,
            beta_adv: 0.0,
            psi: PsiFunction::NegEntropy,
        }
    }

    pub fn trades(lambda: f64) -> Self {
        Self {
            variant: ObjectiveVariant::Trades,
            lambda,
            beta_cle: 0.0,
            beta_adv: 0.0,
            psi: PsiFunction::NegEntropy,
        }
    }

    pub fn fait(lambda: f64) -> Self {
        Self {
            variant: ObjectiveVariant::Fait,
            ..Self::trades(lambda)
        }
    }

    pub fn trades_mer(lambda: f64, beta_cle: f64, beta_adv: f64) -> Self {
        Self {
            variant: ObjectiveVariant::TradesMer,
            lambda,
            beta_cle,
            beta_adv,
            psi: PsiFunction::NegEntropy,
        }
    }

    pub fn fait_mer(lambda: f64, beta_cle: f64, beta_adv: f64) -> Self {
        Self {
            variant: ObjectiveVariant::FaitMer,
            lambda,
            beta_cle,
            beta_adv,
            psi: PsiFunction::NegEntropy,
        }
    }

    pub fn with_psi(mut self, psi: PsiFunction) -> Self {
        self.psi = psi;
        self
    }

    /// Named presets with the best-reported hyperparameters as defaults.
    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "pgd_at" | "pgdat" => Ok(Self::pgd_at()),
            "trades" => Ok(Self::trades(9.0)),
            "fait" => Ok(Self::fait(12.0)),
            "trades_mer" | "tradesmer" => Ok(Self::trades_mer(21.0, 1.0, 0.0)),
            "fait_mer" | "faitmer" => Ok(Self::fait_mer(30.0, 1.0, 0.0)),
            "score" => Ok(Self::trades(4.0).with_psi(PsiFunction::Square)),
            "fait_square" | "fait_se" => Ok(Self::fait(8.0).with_psi(PsiFunction::Square)),
            "trades_mer_square" | "trades_mer_se" => {
                Ok(Self::trades_mer(10.0, 1.0, 0.0).with_psi(PsiFunction::Square))
            }
            other => Err(Error::InvalidConfig(format!("unknown objective preset '{other}'"))),
        }
    }

    pub fn requires_interp(&self) -> bool {
        matches!(self.variant, ObjectiveVariant::Fait | ObjectiveVariant::FaitMer)
    }

    pub fn uses_mer(&self) -> bool {
        matches!(self.variant, ObjectiveVariant::TradesMer | ObjectiveVariant::FaitMer)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("beta_cle", self.beta_cle),
            ("beta_adv", self.beta_adv),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-batch loss decomposition. Except for `PgdAt` (where the total is the
/// accuracy term computed on the adversary), `total = acc + lambda*rob + mer`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub acc_term: f64,
    pub rob_term: f64,
    pub mer_term: f64,
    pub mean_entropy_clean: f64,
    pub mean_entropy_adv: f64,
}

/// Cross-entropy toward the hard label: `-ln p_y` with the clamp convention.
pub fn accuracy_loss(p_clean: &ProbDist, y: OneHotLabel) -> Result<f64> {
    kl_onehot(y, p_clean)
}

/// Divergence from the clean to the adversarial distribution.
pub fn robustness_loss(psi: PsiFunction, p_clean: &ProbDist, p_adv: &ProbDist) -> Result<f64> {
    bregman(psi, p_clean, p_adv)
}

/// Split robustness loss through the interpolated adversary, exactly as used
/// for training: `div(p_clean, p_interp) + div(p_interp, p_adv)`.
pub fn fait_robustness_loss(
    psi: PsiFunction,
    p_clean: &ProbDist,
    p_interp: &ProbDist,
    p_adv: &ProbDist,
) -> Result<f64> {
    Ok(bregman(psi, p_clean, p_interp)? + bregman(psi, p_interp, p_adv)?)
}

/// The split robustness loss with arguments ordered as in the chord
/// inequality (`div(p_interp, p_clean) + div(p_adv, p_interp)`), which is the
/// form the segment-dominance property bounds by `div(p_adv, p_clean)`.
pub fn fait_robustness_lemma_order(
    psi: PsiFunction,
    p_clean: &ProbDist,
    p_interp: &ProbDist,
    p_adv: &ProbDist,
) -> Result<f64> {
    Ok(bregman(psi, p_interp, p_clean)? + bregman(psi, p_adv, p_interp)?)
}

/// Maximum-entropy penalty. For the `NegEntropy` generator this is
/// `-(beta_cle*H(p_clean) + beta_adv*H(p_adv))`; for `Square`, maximizing
/// `-S` replaces H by `-sum p_i^2`, flipping the sign of the contribution.
pub fn mer_penalty(
    psi: PsiFunction,
    beta_cle: f64,
    beta_adv: f64,
    p_clean: &ProbDist,
    p_adv: &ProbDist,
) -> f64 {
    let bonus = |p: &ProbDist| match psi {
        PsiFunction::NegEntropy => entropy(p),
        PsiFunction::Square => -p.probs().iter().map(|x| x * x).sum::<f64>(),
    };
    -(beta_cle * bonus(p_clean) + beta_adv * bonus(p_adv))
}

/// Batched loss with per-example breakdown averaged over the batch.
/// `p_interp` must be present iff the variant splits the robustness term.
pub fn total_loss(
    spec: &ObjectiveSpec,
    labels: &[usize],
    p_clean: &[ProbDist],
    p_interp: Option<&[ProbDist]>,
    p_adv: &[ProbDist],
) -> Result<LossBreakdown> {
    spec.validate()?;
    let m = labels.len();
    if m == 0 || p_clean.len() != m || p_adv.len() != m {
        return Err(Error::InvalidConfig(format!(
            "total_loss batch sizes: {} labels, {} clean, {} adv",
            m,
            p_clean.len(),
            p_adv.len()
        )));
    }
    if spec.requires_interp() != p_interp.is_some() {
        return Err(Error::InvalidConfig(format!(
            "variant {} {} an interpolated distribution",
            spec.variant.name(),
            if spec.requires_interp() { "requires" } else { "does not take" }
        )));
    }
    if let Some(pi) = p_interp {
        if pi.len() != m {
            return Err(Error::InvalidConfig(format!(
                "total_loss batch sizes: {} labels, {} interp",
                m,
                pi.len()
            )));
        }
    }

    let classes = p_clean[0].dim();
    let mut acc = 0.0;
    let mut rob = 0.0;
    let mut mer = 0.0;
    let mut h_clean = 0.0;
    let mut h_adv = 0.0;
    for i in 0..m {
        let y = OneHotLabel::new(labels[i], classes)?;
        h_clean += entropy(&p_clean[i]);
        h_adv += entropy(&p_adv[i]);
        match spec.variant {
            ObjectiveVariant::PgdAt => {
                acc += accuracy_loss(&p_adv[i], y)?;
            }
            ObjectiveVariant::Trades | ObjectiveVariant::TradesMer => {
                acc += accuracy_loss(&p_clean[i], y)?;
                rob += robustness_loss(spec.psi, &p_clean[i], &p_adv[i])?;
            }
            ObjectiveVariant::Fait | ObjectiveVariant::FaitMer => {
                let pi = &p_interp.expect("checked above")[i];
                acc += accuracy_loss(&p_clean[i], y)?;
                rob += fait_robustness_loss(spec.psi, &p_clean[i], pi, &p_adv[i])?;
            }
        }
        if spec.uses_mer() {
            mer += mer_penalty(spec.psi, spec.beta_cle, spec.beta_adv, &p_clean[i], &p_adv[i]);
        }
    }
    let m = m as f64;
    let (acc, rob, mer) = (acc / m, rob / m, mer / m);
    let total = match spec.variant {
        ObjectiveVariant::PgdAt => acc,
        _ => acc + spec.lambda * rob + mer,
    };
    Ok(LossBreakdown {
        total,
        acc_term: acc,
        rob_term: rob,
        mer_term: mer,
        mean_entropy_clean: h_clean / m,
        mean_entropy_adv: h_adv / m,
    })
}

/// Scalar loss nodes produced by [`build_total_loss`].
pub struct TapeLoss {
    pub total: Var,
    pub acc: Var,
    pub rob: Var,
    pub mer: Var,
}

/// Compose the objective on a tape from probability matrices ([m, classes]).
/// Gradient flows through `p_clean`, `p_interp`, and `p_adv`.
pub fn build_total_loss(
    tape: &mut Tape,
    spec: &ObjectiveSpec,
    labels: &[usize],
    p_clean: Var,
    p_interp: Option<Var>,
    p_adv: Var,
) -> Result<TapeLoss> {
    spec.validate()?;
    if spec.requires_interp() != p_interp.is_some() {
        return Err(Error::InvalidConfig(format!(
            "variant {} {} an interpolated distribution",
            spec.variant.name(),
            if spec.requires_interp() { "requires" } else { "does not take" }
        )));
    }

    let zero = |tape: &mut Tape| tape.constant(Tensor::scalar(0.0));

    let (acc, rob) = match spec.variant {
        ObjectiveVariant::PgdAt => {
            let ce = sops::ce_rows(tape, p_adv, labels)?;
            (tape.mean_all(ce), zero(tape))
        }
        ObjectiveVariant::Trades | ObjectiveVariant::TradesMer => {
            let ce = sops::ce_rows(tape, p_clean, labels)?;
            let acc = tape.mean_all(ce);
            let div = sops::bregman_rows(tape, spec.psi, p_clean, p_adv)?;
            (acc, tape.mean_all(div))
        }
        ObjectiveVariant::Fait | ObjectiveVariant::FaitMer => {
            let pi = p_interp.expect("checked above");
            let ce = sops::ce_rows(tape, p_clean, labels)?;
            let acc = tape.mean_all(ce);
            let first = sops::bregman_rows(tape, spec.psi, p_clean, pi)?;
            let second = sops::bregman_rows(tape, spec.psi, pi, p_adv)?;
            let split = tape.add(first, second)?;
            (acc, tape.mean_all(split))
        }
    };

    let mer = if spec.uses_mer() {
        let bonus_rows = |tape: &mut Tape, p: Var| -> Result<Var> {
            match spec.psi {
                PsiFunction::NegEntropy => sops::entropy_rows(tape, p),
                PsiFunction::Square => {
                    let s = sops::sum_squares_rows(tape, p)?;
                    Ok(tape.scale(s, -1.0))
                }
            }
        };
        let bc = bonus_rows(tape, p_clean)?;
        let bc = tape.mean_all(bc);
        let bc = tape.scale(bc, -spec.beta_cle);
        let ba = bonus_rows(tape, p_adv)?;
        let ba = tape.mean_all(ba);
        let ba = tape.scale(ba, -spec.beta_adv);
        tape.add(bc, ba)?
    } else {
        zero(tape)
    };

    let total = match spec.variant {
        ObjectiveVariant::PgdAt => acc,
        _ => {
            let weighted = tape.scale(rob, spec.lambda);
            let partial = tape.add(acc, weighted)?;
            tape.add(partial, mer)?
        }
    };

    Ok(TapeLoss {
        total,
        acc,
        rob,
        mer,
    })
}

/// Read the rows of a probability matrix as `ProbDist` values.
pub fn prob_rows(probs: &Tensor) -> Result<Vec<ProbDist>> {
    (0..probs.rows())
        .map(|i| {
            simplex::ProbDist::new(probs.row(i).to_vec()).map_err(|_| Error::InvalidProbability {
                reason: format!("row {i} is not a probability vector"),
            })
        })
        .collect()
}
