//! Probability-simplex math: softmax, entropy, Bregman divergences and their
//! KL / squared-error specializations.
//!
//! Everything exists in two forms that share one set of conventions:
//! plain `f64` functions over [`ProbDist`] values, and tape builders (in
//! [`ops`]) that compose the same quantities out of differentiable tape
//! primitives so gradients flow through them.
//!
//! Natural log throughout, and probabilities are clamped to `1e-12` before
//! any logarithm; divergence values near the clamp are reported, not errored.

use crate::error::{Error, Result};
use crate::tape::PROB_CLAMP;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist {
    probs: Vec<f64>,
}

impl ProbDist {
    /// Validates: every component in [0, 1] and the components sum to 1
    /// within 1e-9.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidProbability {
                reason: "empty probability vector".into(),
            });
        }
        for &p in &probs {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(Error::InvalidProbability {
                    reason: format!("component {p} outside [0, 1]"),
                });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProbability {
                reason: format!("components sum to {sum}, not 1"),
            });
        }
        Ok(Self { probs })
    }

    /// Normalizes arbitrary non-negative weights onto the simplex.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidProbability {
                reason: "weights must be finite and non-negative".into(),
            });
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidProbability {
                reason: "weights sum to zero".into(),
            });
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / sum).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    /// Argmax with ties broken toward the lowest index.
    pub fn argmax(&self) -> usize {
        crate::tensor::argmax(&self.probs)
    }

    /// Convex combination `(1 - alpha) * self + alpha * other`.
    pub fn interpolate(&self, other: &ProbDist, alpha: f64) -> Result<ProbDist> {
        if self.dim() != other.dim() {
            return Err(Error::DimMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidConfig(format!(
                "interpolation weight {alpha} outside [0, 1]"
            )));
        }
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
            .collect();
        Ok(ProbDist { probs })
    }
}

/// A hard label: class index plus class count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHotLabel {
    pub class: usize,
    pub classes: usize,
}

impl OneHotLabel {
    pub fn new(class: usize, classes: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::InvalidLabel {
                index: class,
                classes,
            });
        }
        Ok(Self { class, classes })
    }
}

/// Dense one-hot vector for a label.
pub fn one_hot(label: OneHotLabel) -> ProbDist {
    let mut probs = vec![0.0; label.classes];
    probs[label.class] = 1.0;
    ProbDist { probs }
}

/// Generator function for the Bregman divergence. Both choices are strictly
/// convex and continuously differentiable on the clamped simplex interior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsiFunction {
    /// psi(p) = sum p_i ln p_i; the Bregman divergence degenerates to KL.
    NegEntropy,
    /// psi(p) = sum p_i^2; the Bregman divergence becomes the squared error.
    Square,
}

impl PsiFunction {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "neg_entropy" | "negentropy" | "kl" => Ok(Self::NegEntropy),
            "square" | "se" => Ok(Self::Square),
            other => Err(Error::InvalidConfig(format!("unknown psi function '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::NegEntropy => "neg_entropy",
            Self::Square => "square",
        }
    }

    fn eval(&self, p: &[f64]) -> f64 {
        match self {
            Self::NegEntropy => p.iter().map(|&x| x * x.max(PROB_CLAMP).ln()).sum(),
            Self::Square => p.iter().map(|&x| x * x).sum(),
        }
    }

    fn grad(&self, p: &[f64]) -> Vec<f64> {
        match self {
            Self::NegEntropy => p.iter().map(|&x| x.max(PROB_CLAMP).ln() + 1.0).collect(),
            Self::Square => p.iter().map(|&x| 2.0 * x).collect(),
        }
    }
}

/// Rowless softmax for a single logit vector, max-subtracted for stability.
pub fn softmax(logits: &[f64]) -> Result<ProbDist> {
    if logits.is_empty() {
        return Err(Error::InvalidProbability {
            reason: "softmax of an empty vector".into(),
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "softmax" });
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(ProbDist {
        probs: exps.into_iter().map(|e| e / sum).collect(),
    })
}

/// Shannon entropy H(p) = -sum p_i ln p_i >= 0.
pub fn entropy(p: &ProbDist) -> f64 {
    -p.probs
        .iter()
        .map(|&x| x * x.max(PROB_CLAMP).ln())
        .sum::<f64>()
}

/// Bregman divergence for the chosen generator:
/// `psi(p) - psi(q) - <grad psi(q), p - q>`.
pub fn bregman(psi: PsiFunction, p: &ProbDist, q: &ProbDist) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimMismatch {
            left: p.dim(),
            right: q.dim(),
        });
    }
    let gq = psi.grad(q.probs());
    let inner: f64 = gq
        .iter()
        .zip(p.probs().iter().zip(q.probs()))
        .map(|(g, (pi, qi))| g * (pi - qi))
        .sum();
    Ok(psi.eval(p.probs()) - psi.eval(q.probs()) - inner)
}

/// KL divergence between two dense distributions (clamped logs).
pub fn kl(p: &ProbDist, q: &ProbDist) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimMismatch {
            left: p.dim(),
            right: q.dim(),
        });
    }
    Ok(p.probs()
        .iter()
        .zip(q.probs())
        .map(|(&pi, &qi)| pi * (pi.max(PROB_CLAMP).ln() - qi.max(PROB_CLAMP).ln()))
        .sum())
}

/// KL from a hard label: the `0 ln 0` terms vanish exactly, leaving
/// `-ln q_y` (cross-entropy up to the zero label-entropy constant).
pub fn kl_onehot(y: OneHotLabel, q: &ProbDist) -> Result<f64> {
    if y.classes != q.dim() {
        return Err(Error::DimMismatch {
            left: y.classes,
            right: q.dim(),
        });
    }
    Ok(-q.probs()[y.class].max(PROB_CLAMP).ln())
}

/// Squared error sum (p_i - q_i)^2; equals `bregman(Square, p, q)`.
pub fn se(p: &ProbDist, q: &ProbDist) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimMismatch {
            left: p.dim(),
            right: q.dim(),
        });
    }
    Ok(p.probs()
        .iter()
        .zip(q.probs())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Tape builders for the same quantities, producing per-row values that stay
/// differentiable through the graph.
pub mod ops {
    use super::PsiFunction;
    use crate::error::Result;
    use crate::tape::{Tape, Var};

    /// psi applied rowwise to a [m,n] probability matrix -> [m].
    fn psi_rows(tape: &mut Tape, psi: PsiFunction, p: Var) -> Result<Var> {
        match psi {
            PsiFunction::NegEntropy => {
                let lp = tape.ln_clamped(p);
                let plp = tape.mul(p, lp)?;
                tape.sum_rows(plp)
            }
            PsiFunction::Square => {
                let sq = tape.mul(p, p)?;
                tape.sum_rows(sq)
            }
        }
    }

    /// grad psi applied elementwise to a [m,n] probability matrix.
    fn psi_grad(tape: &mut Tape, psi: PsiFunction, q: Var) -> Result<Var> {
        match psi {
            PsiFunction::NegEntropy => {
                let lq = tape.ln_clamped(q);
                Ok(tape.add_scalar(lq, 1.0))
            }
            PsiFunction::Square => Ok(tape.scale(q, 2.0)),
        }
    }

    /// Rowwise Bregman divergence between two [m,n] probability matrices -> [m].
    pub fn bregman_rows(tape: &mut Tape, psi: PsiFunction, p: Var, q: Var) -> Result<Var> {
        let psi_p = psi_rows(tape, psi, p)?;
        let psi_q = psi_rows(tape, psi, q)?;
        let gq = psi_grad(tape, psi, q)?;
        let diff = tape.sub(p, q)?;
        let inner = tape.mul(gq, diff)?;
        let inner_rows = tape.sum_rows(inner)?;
        let head = tape.sub(psi_p, psi_q)?;
        tape.sub(head, inner_rows)
    }

    /// Rowwise KL(p || q) -> [m].
    pub fn kl_rows(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
        let lp = tape.ln_clamped(p);
        let lq = tape.ln_clamped(q);
        let diff = tape.sub(lp, lq)?;
        let terms = tape.mul(p, diff)?;
        tape.sum_rows(terms)
    }

    /// Rowwise squared error -> [m].
    pub fn se_rows(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
        let diff = tape.sub(p, q)?;
        let sq = tape.mul(diff, diff)?;
        tape.sum_rows(sq)
    }

    /// Rowwise Shannon entropy -> [m].
    pub fn entropy_rows(tape: &mut Tape, p: Var) -> Result<Var> {
        let neg_h = psi_rows(tape, PsiFunction::NegEntropy, p)?;
        Ok(tape.scale(neg_h, -1.0))
    }

    /// Rowwise sum of squares -> [m].
    pub fn sum_squares_rows(tape: &mut Tape, p: Var) -> Result<Var> {
        psi_rows(tape, PsiFunction::Square, p)
    }

    /// Rowwise cross-entropy toward hard labels: -ln p[i, y_i] -> [m].
    pub fn ce_rows(tape: &mut Tape, p: Var, labels: &[usize]) -> Result<Var> {
        let py = tape.select_cols(p, labels)?;
        let lp = tape.ln_clamped(py);
        Ok(tape.scale(lp, -1.0))
    }
}
