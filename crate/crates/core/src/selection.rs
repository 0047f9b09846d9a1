//! Pushing-configuration evaluation and selection.
//!
//! Three selectors share one evaluation function:
//!
//! - [`analytical_select`] enumerates every `C(M, N)` combination;
//! - [`conpose_select`] starts from an [`Initializer`] proposal and runs a
//!   bounded replace-one local search;
//! - [`naive_select`] validates the initializer proposal and uses it as is.
//!
//! Every evaluation assumes all robots push with the same unit force along
//! the inward normal of their contact point.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::WorldContact;
use crate::math::Vec2;

/// Angles closer than this are treated as a tie.
pub const DELTA_PHI_TIE: f64 = 1e-12;
/// Torque magnitudes closer than this are treated as a tie.
pub const TORQUE_TIE: f64 = 1e-12;
/// Net forces shorter than this have no direction.
pub const ZERO_FORCE: f64 = 1e-9;
pub const DEFAULT_I_MAX: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MalformedReason {
    WrongCount { expected: usize, got: usize },
    Duplicate(usize),
    OutOfRange(usize),
}

impl fmt::Display for MalformedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::WrongCount { expected, got } => write!(f, "expected {expected} contact points, got {got}"),
            Self::Duplicate(i) => write!(f, "contact point {i} listed twice"),
            Self::OutOfRange(i) => write!(f, "contact point {i} does not exist"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SelectionError {
    #[error("index {index} out of range for {m} candidates")]
    IndexOutOfRange { index: usize, m: usize },
    #[error("cannot choose {n} contact points from {m} candidates")]
    NTooLarge { n: usize, m: usize },
    #[error("no combination reaches the minimum force")]
    NoFeasible,
    #[error("exhaustive search needs {required} evaluations, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u128 },
    #[error("malformed proposal: {0}")]
    MalformedProposal(MalformedReason),
    #[error("initializer failed: {0}")]
    InitializerFailure(String),
}

/// A set of distinct candidate indices, kept sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PushingConfiguration {
    indices: Vec<usize>,
}

impl PushingConfiguration {
    /// Validates `indices` against `n` requested points out of `m`.
    pub fn new(indices: &[usize], n: usize, m: usize) -> Result<Self, SelectionError> {
        validate_proposal(indices, n, m).map_err(SelectionError::MalformedProposal)?;
        let mut indices = indices.to_vec();
        indices.sort_unstable();
        Ok(Self { indices })
    }

    fn from_sorted(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }
}

/// Checks count, range and distinctness of a proposed index list.
pub fn validate_proposal(indices: &[usize], n: usize, m: usize) -> Result<(), MalformedReason> {
    if indices.len() != n {
        return Err(MalformedReason::WrongCount { expected: n, got: indices.len() });
    }
    for (k, &i) in indices.iter().enumerate() {
        if i >= m {
            return Err(MalformedReason::OutOfRange(i));
        }
        if indices[..k].contains(&i) {
            return Err(MalformedReason::Duplicate(i));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigEvaluation {
    /// Sum of unit pushing vectors, in units of one robot's force.
    pub net_force: Vec2,
    /// Angle between net force and target direction, `[0, π]`.
    pub delta_phi: f64,
    pub net_torque: f64,
    /// `|F| > N/2`.
    pub force_ok: bool,
}

impl ConfigEvaluation {
    pub fn is_feasible(&self, epsilon: f64) -> bool {
        self.force_ok && self.delta_phi < epsilon
    }

    /// Lexicographic (Δφ, |τ|) improvement with tie tolerances.
    pub fn improves_on(&self, other: &ConfigEvaluation) -> bool {
        improves(self.delta_phi, self.net_torque, other.delta_phi, other.net_torque)
    }
}

fn improves(dphi: f64, tau: f64, best_dphi: f64, best_tau: f64) -> bool {
    dphi < best_dphi - DELTA_PHI_TIE
        || ((dphi - best_dphi).abs() <= DELTA_PHI_TIE && tau.abs() < best_tau.abs() - TORQUE_TIE)
}

/// Everything a selector needs for one decision.
#[derive(Debug, Clone, Copy)]
pub struct SelectionRequest<'a> {
    pub candidates: &'a [WorldContact],
    pub target_phi: f64,
    pub epsilon: f64,
    pub n: usize,
}

impl SelectionRequest<'_> {
    pub fn m(&self) -> usize {
        self.candidates.len()
    }
}

/// Unit-force evaluation of a configuration.
pub fn evaluate(
    config: &PushingConfiguration,
    world_candidates: &[WorldContact],
    target_phi: f64,
) -> Result<ConfigEvaluation, SelectionError> {
    let mut force = Vec2::ZERO;
    let mut torque = 0.0;
    for &i in config.indices() {
        let c = world_candidates
            .get(i)
            .ok_or(SelectionError::IndexOutOfRange { index: i, m: world_candidates.len() })?;
        force += c.direction_vector();
        torque += c.unit_torque;
    }
    Ok(finish_evaluation(force, torque, config.len(), Vec2::from_angle(target_phi)))
}

fn finish_evaluation(force: Vec2, torque: f64, n: usize, target: Vec2) -> ConfigEvaluation {
    let norm = force.norm();
    let delta_phi = if norm < ZERO_FORCE {
        PI
    } else {
        (target.dot(force) / norm).clamp(-1.0, 1.0).acos()
    };
    ConfigEvaluation { net_force: force, delta_phi, net_torque: torque, force_ok: norm > n as f64 / 2.0 }
}

/// Evaluates configurations against precomputed unit vectors.
struct Evaluator {
    dirs: Vec<Vec2>,
    torques: Vec<f64>,
    target: Vec2,
    n: usize,
    count: u64,
}

impl Evaluator {
    fn new(request: &SelectionRequest<'_>) -> Self {
        Self {
            dirs: request.candidates.iter().map(WorldContact::direction_vector).collect(),
            torques: request.candidates.iter().map(|c| c.unit_torque).collect(),
            target: Vec2::from_angle(request.target_phi),
            n: request.n,
            count: 0,
        }
    }

    fn eval(&mut self, indices: &[usize]) -> ConfigEvaluation {
        self.count += 1;
        let mut force = Vec2::ZERO;
        let mut torque = 0.0;
        for &i in indices {
            force += self.dirs[i];
            torque += self.torques[i];
        }
        finish_evaluation(force, torque, self.n, self.target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitializerKind {
    Llm,
    Greedy,
    Random,
    None,
}

impl fmt::Display for InitializerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Llm => "llm",
            Self::Greedy => "greedy",
            Self::Random => "random",
            Self::None => "none",
        })
    }
}

/// Raw initializer output: indices in proposal order plus optional reasoning.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Proposal {
    pub indices: Vec<usize>,
    pub reasoning: Option<String>,
}

/// Source of initial pushing configurations.
pub trait Initializer {
    fn kind(&self) -> InitializerKind;

    /// Errors are reported as text; selectors map them to
    /// [`SelectionError::InitializerFailure`].
    fn propose(&mut self, request: &SelectionRequest<'_>) -> Result<Proposal, String>;
}

impl<T: Initializer + ?Sized> Initializer for Box<T> {
    fn kind(&self) -> InitializerKind {
        (**self).kind()
    }
    fn propose(&mut self, request: &SelectionRequest<'_>) -> Result<Proposal, String> {
        (**self).propose(request)
    }
}

/// The `n` candidates best aligned with the target direction, lower index first on ties.
pub fn greedy_initializer(candidates: &[WorldContact], target_phi: f64, n: usize) -> PushingConfiguration {
    let mut order: Vec<(f64, usize)> =
        candidates.iter().enumerate().map(|(i, c)| ((c.direction - target_phi).cos(), i)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut picked: Vec<usize> = order.into_iter().take(n).map(|(_, i)| i).collect();
    picked.sort_unstable();
    PushingConfiguration::from_sorted(picked)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyInitializer;

impl Initializer for GreedyInitializer {
    fn kind(&self) -> InitializerKind {
        InitializerKind::Greedy
    }

    fn propose(&mut self, request: &SelectionRequest<'_>) -> Result<Proposal, String> {
        if request.n > request.m() {
            return Err(alloc::format!("cannot pick {} of {} candidates", request.n, request.m()));
        }
        let config = greedy_initializer(request.candidates, request.target_phi, request.n);
        Ok(Proposal { indices: config.indices, reasoning: None })
    }
}

/// Uniformly random distinct indices from a seeded stream.
#[derive(Debug, Clone)]
pub struct RandomInitializer {
    rng: ChaCha8Rng,
}

impl RandomInitializer {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Initializer for RandomInitializer {
    fn kind(&self) -> InitializerKind {
        InitializerKind::Random
    }

    fn propose(&mut self, request: &SelectionRequest<'_>) -> Result<Proposal, String> {
        if request.n > request.m() {
            return Err(alloc::format!("cannot pick {} of {} candidates", request.n, request.m()));
        }
        let indices = sample(&mut self.rng, request.m(), request.n).into_vec();
        Ok(Proposal { indices, reasoning: None })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub configuration: PushingConfiguration,
    pub evaluation: ConfigEvaluation,
    pub evaluations_used: u64,
    pub initializer_used: InitializerKind,
    /// `delta_phi < epsilon` and `force_ok`.
    pub feasible: bool,
    pub llm_reasoning: Option<String>,
}

/// `C(m, n)`, saturating at `u128::MAX`.
pub fn binomial(m: u64, n: u64) -> u128 {
    if n > m {
        return 0;
    }
    let n = n.min(m - n);
    let mut acc: u128 = 1;
    for i in 0..n {
        // acc * (m - i) / (i + 1) stays integral at every step
        acc = match acc.checked_mul((m - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Lexicographic iterator over the `n`-subsets of `0..m`.
pub struct Combinations {
    current: Vec<usize>,
    m: usize,
    done: bool,
}

impl Combinations {
    pub fn new(m: usize, n: usize) -> Self {
        Self { current: (0..n).collect(), m, done: n > m }
    }

    /// Current subset; valid until the next call to `advance`.
    pub fn get(&self) -> Option<&[usize]> {
        (!self.done).then_some(self.current.as_slice())
    }

    pub fn advance(&mut self) {
        let n = self.current.len();
        let mut i = n;
        while i > 0 {
            i -= 1;
            if self.current[i] < self.m - n + i {
                self.current[i] += 1;
                for j in (i + 1)..n {
                    self.current[j] = self.current[j - 1] + 1;
                }
                return;
            }
        }
        self.done = true;
    }
}

/// Exhaustive search over all `C(M, N)` combinations.
///
/// Minimizes Δφ among configurations with sufficient force, then |τ|, then
/// the lexicographically smallest index set. `budget` caps the number of
/// evaluations that may be spent.
pub fn analytical_select(
    request: &SelectionRequest<'_>,
    budget: Option<u128>,
) -> Result<SelectionOutcome, SelectionError> {
    let (n, m) = (request.n, request.m());
    if n > m || n == 0 {
        return Err(SelectionError::NTooLarge { n, m });
    }
    let required = binomial(m as u64, n as u64);
    if let Some(budget) = budget {
        if required > budget {
            return Err(SelectionError::BudgetExceeded { required, budget });
        }
    }
    let mut evaluator = Evaluator::new(request);
    let mut best: Option<(Vec<usize>, ConfigEvaluation)> = None;
    let mut combos = Combinations::new(m, n);
    while let Some(indices) = combos.get() {
        let e = evaluator.eval(indices);
        if e.force_ok && best.as_ref().is_none_or(|(_, b)| e.improves_on(b)) {
            best = Some((indices.to_vec(), e));
        }
        combos.advance();
    }
    let (indices, evaluation) = best.ok_or(SelectionError::NoFeasible)?;
    Ok(SelectionOutcome {
        configuration: PushingConfiguration::from_sorted(indices),
        feasible: evaluation.is_feasible(request.epsilon),
        evaluation,
        evaluations_used: evaluator.count,
        initializer_used: InitializerKind::None,
        llm_reasoning: None,
    })
}

/// Initializer-seeded replace-one local search.
///
/// Returns the initial proposal unchanged when it is already feasible.
/// Otherwise runs up to `i_max` iterations; each picks one member uniformly
/// at random and evaluates every replacement by a candidate outside the
/// configuration. The first feasible neighbor is returned immediately; if
/// none is found the best force-sufficient configuration seen is returned
/// with `feasible = false`. At most `i_max * (M - N) + 1` evaluations are
/// spent.
///
/// An initializer error or malformed proposal falls back to
/// [`greedy_initializer`].
pub fn conpose_select(
    initializer: &mut dyn Initializer,
    request: &SelectionRequest<'_>,
    i_max: usize,
    rng_seed: u64,
) -> Result<SelectionOutcome, SelectionError> {
    let (n, m) = (request.n, request.m());
    if n > m || n == 0 {
        return Err(SelectionError::NTooLarge { n, m });
    }
    let (mut current, initializer_used, llm_reasoning) = match initializer.propose(request) {
        Ok(p) => match PushingConfiguration::new(&p.indices, n, m) {
            Ok(c) => (c, initializer.kind(), p.reasoning),
            Err(_) => (greedy_initializer(request.candidates, request.target_phi, n), InitializerKind::Greedy, p.reasoning),
        },
        Err(_) => (greedy_initializer(request.candidates, request.target_phi, n), InitializerKind::Greedy, None),
    };
    let mut evaluator = Evaluator::new(request);
    let mut current_eval = evaluator.eval(current.indices());
    let outcome = |configuration, evaluation: ConfigEvaluation, count, reasoning| SelectionOutcome {
        configuration,
        feasible: evaluation.is_feasible(request.epsilon),
        evaluation,
        evaluations_used: count,
        initializer_used,
        llm_reasoning: reasoning,
    };
    if current_eval.is_feasible(request.epsilon) {
        return Ok(outcome(current, current_eval, evaluator.count, llm_reasoning));
    }

    // An insufficient-force start should not block force-sufficient neighbors.
    let (mut best_dphi, mut best_tau) =
        if current_eval.force_ok { (current_eval.delta_phi, current_eval.net_torque) } else { (PI + 1.0, f64::INFINITY) };
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut neighbor = Vec::with_capacity(n);
    for _ in 0..i_max {
        let base = current.clone();
        let slot = rng.random_range(0..n);
        for replacement in 0..m {
            if base.contains(replacement) {
                continue;
            }
            neighbor.clear();
            neighbor.extend(base.indices().iter().enumerate().map(|(k, &i)| if k == slot { replacement } else { i }));
            neighbor.sort_unstable();
            let e = evaluator.eval(&neighbor);
            if e.is_feasible(request.epsilon) {
                let count = evaluator.count;
                return Ok(outcome(PushingConfiguration::from_sorted(neighbor), e, count, llm_reasoning));
            }
            if e.force_ok && improves(e.delta_phi, e.net_torque, best_dphi, best_tau) {
                best_dphi = e.delta_phi;
                best_tau = e.net_torque;
                current = PushingConfiguration::from_sorted(neighbor.clone());
                current_eval = e;
            }
        }
    }
    let count = evaluator.count;
    Ok(outcome(current, current_eval, count, llm_reasoning))
}

/// Uses the initializer proposal directly after checking it is well formed.
pub fn naive_select(
    initializer: &mut dyn Initializer,
    request: &SelectionRequest<'_>,
) -> Result<SelectionOutcome, SelectionError> {
    let proposal = initializer.propose(request).map_err(SelectionError::InitializerFailure)?;
    let configuration = PushingConfiguration::new(&proposal.indices, request.n, request.m())?;
    let evaluation = evaluate(&configuration, request.candidates, request.target_phi)?;
    Ok(SelectionOutcome {
        configuration,
        feasible: evaluation.is_feasible(request.epsilon),
        evaluation,
        evaluations_used: 1,
        initializer_used: initializer.kind(),
        llm_reasoning: proposal.reasoning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectorKind {
    Conpose,
    Analytical,
    Naive,
}

impl fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Conpose => "conpose",
            Self::Analytical => "analytical",
            Self::Naive => "naive",
        })
    }
}

/// A selection method bound to its initializer and parameters, as used
/// once per re-selection inside an episode.
pub struct Selector {
    pub kind: SelectorKind,
    pub initializer: Box<dyn Initializer + Send>,
    pub i_max: usize,
    pub eval_budget: Option<u128>,
    pub seed: u64,
    calls: u64,
}

impl Selector {
    pub fn new(kind: SelectorKind, initializer: Box<dyn Initializer + Send>, seed: u64) -> Self {
        Self { kind, initializer, i_max: DEFAULT_I_MAX, eval_budget: None, seed, calls: 0 }
    }

    pub fn with_i_max(mut self, i_max: usize) -> Self {
        self.i_max = i_max;
        self
    }

    pub fn with_eval_budget(mut self, budget: Option<u128>) -> Self {
        self.eval_budget = budget;
        self
    }

    pub fn initializer_kind(&self) -> InitializerKind {
        match self.kind {
            SelectorKind::Analytical => InitializerKind::None,
            _ => self.initializer.kind(),
        }
    }

    pub fn select(&mut self, request: &SelectionRequest<'_>) -> Result<SelectionOutcome, SelectionError> {
        // distinct deterministic stream per call
        let call_seed = self.seed ^ self.calls.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        self.calls += 1;
        match self.kind {
            SelectorKind::Analytical => analytical_select(request, self.eval_budget),
            SelectorKind::Conpose => conpose_select(self.initializer.as_mut(), request, self.i_max, call_seed),
            SelectorKind::Naive => naive_select(self.initializer.as_mut(), request),
        }
    }
}

impl fmt::Debug for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Selector")
            .field("kind", &self.kind)
            .field("initializer", &self.initializer.kind())
            .field("i_max", &self.i_max)
            .field("eval_budget", &self.eval_budget)
            .finish()
    }
}
