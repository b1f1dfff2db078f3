//! Brute-force numerical verification of the divergence inequalities behind
//! the loss family, on the binary simplex.
//!
//! A binary output distribution is represented by its projection onto the
//! label direction, so a (clean, adversarial) pair is just two scalars in
//! (0, 1). The chord inequality (`check_lemma1`) is verified on random
//! simplex triples in any dimension; the two entropy-dominance theorems are
//! verified on exhaustive grids over the binary interior.
//!
//! The two dominance definitions quantify over every point of an eps-ball
//! collection, which is uncheckable for real networks; the sampled surrogate
//! in [`entropy_dominance_sampled`] draws a finite number of ball points and
//! says so in its report.

use rand::Rng;

use crate::attack::AttackConfig;
use crate::error::{Error, Result};
use crate::net::{forward, NetworkSpec, Params};
use crate::rng::{self, purpose};
use crate::simplex::{entropy, kl, softmax, ProbDist};
use crate::tensor::Tensor;

/// Projections of one model's clean and adversarial output distributions
/// onto the label direction, for one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryPair {
    /// p(x) . y
    pub clean: f64,
    /// p(x') . y
    pub adv: f64,
}

impl BinaryPair {
    /// Both projections must lie in the open interval (0, 1).
    pub fn new(clean: f64, adv: f64) -> Result<Self> {
        for v in [clean, adv] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidProbability {
                    reason: format!("binary projection {v} outside (0, 1)"),
                });
            }
        }
        Ok(Self { clean, adv })
    }

    fn clean_dist(&self) -> ProbDist {
        ProbDist::new(vec![self.clean, 1.0 - self.clean]).expect("interior point")
    }

    fn adv_dist(&self) -> ProbDist {
        ProbDist::new(vec![self.adv, 1.0 - self.adv]).expect("interior point")
    }

    /// KL(Bern(clean) || Bern(adv)): the robustness loss of this pair.
    pub fn robustness(&self) -> f64 {
        kl(&self.clean_dist(), &self.adv_dist()).expect("matching dims")
    }

    /// clean - adv, the gap between the two projections.
    pub fn gap(&self) -> f64 {
        self.clean - self.adv
    }
}

/// The three sign patterns of a (clean, adversarial) projection pair.
/// The quadrant `clean <= 1/2 < adv` (the adversary helps a misclassified
/// point) is outside all three conditions and classifies to `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionLabel {
    /// clean > 1/2 >= adv
    C1,
    /// clean <= 1/2 and adv <= 1/2
    C2,
    /// clean > 1/2 and adv > 1/2
    C3,
}

pub fn classify_condition(pair: BinaryPair) -> Option<ConditionLabel> {
    let (a, b) = (pair.clean, pair.adv);
    if a > 0.5 && b <= 0.5 {
        Some(ConditionLabel::C1)
    } else if a <= 0.5 && b <= 0.5 {
        Some(ConditionLabel::C2)
    } else if a > 0.5 && b > 0.5 {
        Some(ConditionLabel::C3)
    } else {
        None
    }
}

/// Signed slack of the chord inequality at `p* = (1-alpha) p1 + alpha p2`:
/// `KL(p2||p1) - KL(p2||p*) - KL(p*||p1)`, predicted non-negative.
pub fn check_lemma1(p1: &ProbDist, p2: &ProbDist, alpha: f64) -> Result<f64> {
    let p_star = p1.interpolate(p2, alpha)?;
    Ok(kl(p2, p1)? - kl(p2, &p_star)? - kl(&p_star, p1)?)
}

/// Outcome of a sweep: how many cases ran, how many violated the predicate,
/// and the worst signed margin observed (negative margins are violations).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub suite: String,
    pub cases: u64,
    pub violations: u64,
    pub worst_margin: f64,
    /// Grid step for exhaustive sweeps, `None` for random sampling.
    pub grid_resolution: Option<f64>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Tolerance below which a negative margin counts as a violation rather than
/// floating-point noise.
pub const SLACK_TOLERANCE: f64 = 1e-12;

/// Random-triple sweep of the chord inequality: `n` (p1, p2, alpha) draws per
/// dimension.
pub fn sweep_lemma1(n: usize, dims: &[usize], seed: u64) -> Result<SweepReport> {
    let mut cases = 0;
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for &dim in dims {
        if dim < 2 {
            return Err(Error::InvalidConfig(format!(
                "lemma sweep needs dim >= 2, got {dim}"
            )));
        }
        let mut stream = rng::stream(seed, &[purpose::THEORY_SAMPLE, dim as u64]);
        for _ in 0..n {
            let p1 = random_simplex(&mut stream, dim);
            let p2 = random_simplex(&mut stream, dim);
            let alpha: f64 = stream.gen_range(0.0..=1.0);
            let slack = check_lemma1(&p1, &p2, alpha)?;
            cases += 1;
            worst = worst.min(slack);
            if slack < -SLACK_TOLERANCE {
                violations += 1;
            }
        }
    }
    Ok(SweepReport {
        suite: "lemma1".into(),
        cases,
        violations,
        worst_margin: worst,
        grid_resolution: None,
    })
}

/// Uniform (Dirichlet(1)) simplex point via normalized exponentials.
fn random_simplex(rng: &mut impl Rng, dim: usize) -> ProbDist {
    let weights: Vec<f64> = (0..dim)
        .map(|_| (-rng.gen_range(1e-16..1.0f64).ln()).max(1e-9))
        .collect();
    ProbDist::from_weights(weights).expect("positive weights")
}

/// Verdict of one theorem check: the two robustness losses and whether the
/// predicted ordering holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremVerdict {
    pub r1: f64,
    pub r2: f64,
    pub holds: bool,
}

fn entropy_dominates(pair1: BinaryPair, pair2: BinaryPair) -> bool {
    // Binary entropy increases toward 1/2, so dominance is distance to 1/2.
    (pair2.clean - 0.5).abs() <= (pair1.clean - 0.5).abs()
        && (pair2.adv - 0.5).abs() <= (pair1.adv - 0.5).abs()
}

fn argmax_side(v: f64) -> usize {
    // Distribution [v, 1-v]; ties break toward the lowest index.
    if v >= 0.5 {
        0
    } else {
        1
    }
}

fn argmax_agrees(pair1: BinaryPair, pair2: BinaryPair) -> bool {
    argmax_side(pair1.clean) == argmax_side(pair2.clean)
        && argmax_side(pair1.adv) == argmax_side(pair2.adv)
}

/// First-condition theorem: with both pairs in C1, the dominated (higher
/// entropy) model has the smaller robustness loss.
pub fn check_theorem1(pair1: BinaryPair, pair2: BinaryPair) -> Result<TheoremVerdict> {
    for (name, pair) in [("pair1", pair1), ("pair2", pair2)] {
        if classify_condition(pair) != Some(ConditionLabel::C1) {
            return Err(Error::Precondition(format!("{name} is not in condition C1")));
        }
    }
    if !entropy_dominates(pair1, pair2) {
        return Err(Error::Precondition(
            "pair2 does not entropy-dominate pair1".into(),
        ));
    }
    if !argmax_agrees(pair1, pair2) {
        return Err(Error::Precondition(
            "argmax disagreement between the pairs".into(),
        ));
    }
    let (r1, r2) = (pair1.robustness(), pair2.robustness());
    Ok(TheoremVerdict {
        r1,
        r2,
        holds: r1 >= r2 - SLACK_TOLERANCE,
    })
}

/// Second-condition theorem: both pairs in C2 (or both in C3) with exactly
/// matched clean-adversarial gaps; the dominated model has the smaller loss.
pub fn check_theorem2(pair1: BinaryPair, pair2: BinaryPair) -> Result<TheoremVerdict> {
    let c1 = classify_condition(pair1);
    let c2 = classify_condition(pair2);
    match (c1, c2) {
        (Some(ConditionLabel::C2), Some(ConditionLabel::C2))
        | (Some(ConditionLabel::C3), Some(ConditionLabel::C3)) => {}
        _ => {
            return Err(Error::Precondition(
                "pairs must both classify C2 or both C3".into(),
            ))
        }
    }
    // The hypothesis is exact gap equality; at f64 granularity that means
    // agreement up to reconstruction rounding.
    if (pair1.gap() - pair2.gap()).abs() > SLACK_TOLERANCE {
        return Err(Error::Precondition(format!(
            "gaps differ: {} vs {}",
            pair1.gap(),
            pair2.gap()
        )));
    }
    if !entropy_dominates(pair1, pair2) {
        return Err(Error::Precondition(
            "pair2 does not entropy-dominate pair1".into(),
        ));
    }
    if !argmax_agrees(pair1, pair2) {
        return Err(Error::Precondition(
            "argmax disagreement between the pairs".into(),
        ));
    }
    let (r1, r2) = (pair1.robustness(), pair2.robustness());
    Ok(TheoremVerdict {
        r1,
        r2,
        holds: r1 >= r2 - SLACK_TOLERANCE,
    })
}

/// Exhaustive grid over C1 at the given resolution, interior clamped to
/// [0.01, 0.99]: every admissible (pair1, pair2) combination is checked.
pub fn sweep_theorem1(resolution: f64) -> Result<SweepReport> {
    let ticks = grid_ticks(resolution)?;
    let mut cases = 0u64;
    let mut violations = 0u64;
    let mut worst = f64::INFINITY;
    // C1: clean > 1/2 >= adv. Dominance: clean2 in (1/2, clean1],
    // adv2 in [adv1, 1/2].
    for &a1 in ticks.iter().filter(|&&v| v > 0.5) {
        for &b1 in ticks.iter().filter(|&&v| v <= 0.5) {
            for &a2 in ticks.iter().filter(|&&v| v > 0.5 && v <= a1) {
                for &b2 in ticks.iter().filter(|&&v| v >= b1 && v <= 0.5) {
                    let pair1 = BinaryPair::new(a1, b1)?;
                    let pair2 = BinaryPair::new(a2, b2)?;
                    match check_theorem1(pair1, pair2) {
                        Ok(verdict) => {
                            cases += 1;
                            let margin = verdict.r1 - verdict.r2;
                            worst = worst.min(margin);
                            if !verdict.holds {
                                violations += 1;
                            }
                        }
                        // argmax ties at exactly 1/2 fall outside the
                        // admissible set
                        Err(Error::Precondition(_)) => {}
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }
    Ok(SweepReport {
        suite: "theorem1".into(),
        cases,
        violations,
        worst_margin: worst,
        grid_resolution: Some(resolution),
    })
}

/// Exhaustive grid over one region (C2 or C3) with matched gaps: pair2 is
/// pair1 shifted toward 1/2 by grid multiples, which preserves the gap and
/// enforces entropy dominance.
pub fn sweep_theorem2(region: ConditionLabel, resolution: f64) -> Result<SweepReport> {
    if region == ConditionLabel::C1 {
        return Err(Error::InvalidConfig(
            "matched-gap sweep applies to C2 or C3 only".into(),
        ));
    }
    let ticks = grid_ticks(resolution)?;
    let in_region = |v: f64| match region {
        ConditionLabel::C2 => v <= 0.5,
        _ => v > 0.5,
    };
    // C2 points move up toward 1/2; C3 points move down toward 1/2.
    let toward_half: f64 = if region == ConditionLabel::C2 { 1.0 } else { -1.0 };
    let mut cases = 0u64;
    let mut violations = 0u64;
    let mut worst = f64::INFINITY;
    for &a1 in ticks.iter().filter(|&&v| in_region(v)) {
        for &b1 in ticks.iter().filter(|&&v| in_region(v)) {
            let pair1 = BinaryPair::new(a1, b1)?;
            let mut steps = 0usize;
            loop {
                let shift = steps as f64 * resolution;
                let a2 = a1 + toward_half * shift;
                let b2 = a2 - pair1.gap(); // matched gap, exact by construction
                let inside = (0.01..=0.99).contains(&a2)
                    && (0.01..=0.99).contains(&b2)
                    && in_region(a2)
                    && in_region(b2)
                    && (a2 - 0.5).abs() <= (a1 - 0.5).abs() + 1e-12
                    && (b2 - 0.5).abs() <= (b1 - 0.5).abs() + 1e-12;
                if !inside {
                    break;
                }
                let pair2 = BinaryPair::new(a2, b2)?;
                match check_theorem2(pair1, pair2) {
                    Ok(verdict) => {
                        cases += 1;
                        let margin = verdict.r1 - verdict.r2;
                        worst = worst.min(margin);
                        if !verdict.holds {
                            violations += 1;
                        }
                    }
                    // rounding in the shift can nudge a point past a strict
                    // precondition; such points are simply not admissible
                    Err(Error::Precondition(_)) => {}
                    Err(e) => return Err(e),
                }
                steps += 1;
            }
        }
    }
    Ok(SweepReport {
        suite: format!(
            "theorem2-{}",
            if region == ConditionLabel::C2 { "c2" } else { "c3" }
        ),
        cases,
        violations,
        worst_margin: worst,
        grid_resolution: Some(resolution),
    })
}

fn grid_ticks(resolution: f64) -> Result<Vec<f64>> {
    if !(resolution > 0.0 && resolution < 0.5) {
        return Err(Error::InvalidConfig(format!("bad grid resolution {resolution}")));
    }
    let mut ticks = Vec::new();
    let mut k = 0usize;
    loop {
        let v = 0.01 + k as f64 * resolution;
        if v > 0.99 + 1e-12 {
            break;
        }
        ticks.push(v.min(0.99));
        k += 1;
    }
    Ok(ticks)
}

/// Sampled surrogate for the two ball-wide dominance predicates. Draws
/// `n_samples` uniform points from the eps-ball (intersected with the input
/// box) around every example and checks, for each, whether model 2's output
/// entropy dominates model 1's and whether the argmaxes agree.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledDominanceReport {
    /// H(p1(x~)) <= H(p2(x~)) held for every sampled point.
    pub entropy_dominates: bool,
    /// argmax p1(x~) == argmax p2(x~) held for every sampled point.
    pub adv_convergence: bool,
    pub points_checked: u64,
    pub samples_per_example: usize,
    pub seed: u64,
}

impl std::fmt::Display for SampledDominanceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "sampled dominance over {} ball points ({} per example, seed {}): \
             entropy-dominance={}, adv-convergence={}",
            self.points_checked,
            self.samples_per_example,
            self.seed,
            self.entropy_dominates,
            self.adv_convergence
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub fn entropy_dominance_sampled(
    spec1: &NetworkSpec,
    params1: &Params,
    spec2: &NetworkSpec,
    params2: &Params,
    features: &Tensor,
    cfg: &AttackConfig,
    n_samples: usize,
    seed: u64,
) -> Result<SampledDominanceReport> {
    cfg.validate()?;
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be >= 1".into()));
    }
    let (lo, hi) = cfg.input_box;
    let d = features.cols();
    let mut dominates = true;
    let mut converges = true;
    let mut points = 0u64;

    for i in 0..features.rows() {
        let center = features.row(i);
        let mut stream = rng::stream(seed, &[purpose::THEORY_SAMPLE, i as u64]);
        let mut rows = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            let row: Vec<f64> = (0..d)
                .map(|j| {
                    let c = center[j];
                    let lo_eff = (c - cfg.eps).max(lo);
                    let hi_eff = (c + cfg.eps).min(hi);
                    if hi_eff > lo_eff {
                        stream.gen_range(lo_eff..=hi_eff)
                    } else {
                        lo_eff.min(hi_eff)
                    }
                })
                .collect();
            rows.push(row);
        }
        let batch = Tensor::from_rows(&rows)?;
        let logits1 = forward(spec1, params1, &batch)?;
        let logits2 = forward(spec2, params2, &batch)?;
        for s in 0..n_samples {
            let p1 = softmax(logits1.row(s))?;
            let p2 = softmax(logits2.row(s))?;
            if entropy(&p1) > entropy(&p2) + 1e-12 {
                dominates = false;
            }
            if p1.argmax() != p2.argmax() {
                converges = false;
            }
            points += 1;
        }
    }
    Ok(SampledDominanceReport {
        entropy_dominates: dominates,
        adv_convergence: converges,
        points_checked: points,
        samples_per_example: n_samples,
        seed,
    })
}
