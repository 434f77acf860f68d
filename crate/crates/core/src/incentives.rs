//! Strategy dominance analysis of the reward scheme.
//!
//! Players control process fractions; the deviations available per round are
//! `S(e_l, e_v, e_a, e_p)`: the aggregating leader omitting votes, controlled
//! processes withholding votes, leaves skipping tree aggregation, and
//! internals skipping children. The closed-form conditions under which honest
//! play dominates are implemented exactly over rationals, and
//! [`evaluate_utility`] checks them empirically by replaying strategies
//! through the real reward computation with common random numbers.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::rewards::{compute_rewards, DecodedQc, InclusionMode, RewardParams, Scalar};
use crate::sigagg::SignerId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IncentiveError {
    #[error("invalid game parameters: {0}")]
    BadParams(String),
    #[error("invalid strategy profile: {0}")]
    BadProfile(String),
}

/// Threshold of the vote-omission condition: honest play dominates
/// `S(e_l, 0, 0, 0)` exactly when `b_l` exceeds `m f / (1 - m + m f)`.
pub fn threshold_vote_omission<T: Scalar>(m: T, f: T) -> T {
    m.clone() * f.clone() / (T::one() - m.clone() + m * f)
}

/// Threshold of the vote-denial condition: honest play dominates
/// `S(0, e_v, 0, 0)` exactly when `b_l` stays below
/// `f (1 - b_a - m) / (m + f - m f)`.
pub fn threshold_vote_denial<T: Scalar>(m: T, f: T, b_a: T) -> T {
    f.clone() * (T::one() - b_a - m.clone()) / (m.clone() + f.clone() - m * f)
}

/// Both aggregation attacks are dominated whenever forfeiting a bonus
/// returns only `2 m` of it: true exactly for `m < 1/2`.
pub fn aggregation_conditions_hold<T: Scalar>(m: T) -> bool {
    m.clone() + m < T::one()
}

/// One strategy: each knob is the fraction of the committee the player
/// commits to that deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrategyProfile {
    pub e_l: f64,
    pub e_v: f64,
    pub e_a: f64,
    pub e_p: f64,
}

impl StrategyProfile {
    pub const HONEST: StrategyProfile = StrategyProfile {
        e_l: 0.0,
        e_v: 0.0,
        e_a: 0.0,
        e_p: 0.0,
    };

    pub fn is_honest(&self) -> bool {
        self.e_l == 0.0 && self.e_v == 0.0 && self.e_a == 0.0 && self.e_p == 0.0
    }

    fn validate(&self, m: f64, f: f64) -> Result<(), IncentiveError> {
        let in_range = |v: f64, hi: f64| (0.0..=hi + 1e-12).contains(&v);
        if !in_range(self.e_l, f) {
            return Err(IncentiveError::BadProfile(format!(
                "e_l = {} outside [0, f = {f}]",
                self.e_l
            )));
        }
        for (name, v) in [("e_v", self.e_v), ("e_a", self.e_a), ("e_p", self.e_p)] {
            if !in_range(v, m) {
                return Err(IncentiveError::BadProfile(format!(
                    "{name} = {v} outside [0, m = {m}]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GameParams {
    /// Attacker fraction; must stay below one half.
    pub m: f64,
    /// Fault bound used by the quorum and leader bonus.
    pub f: f64,
    pub leader_fraction: f64,
    pub agg_fraction: f64,
    pub n: usize,
    pub fanout: usize,
    pub trials: u32,
    pub seed: u64,
}

impl GameParams {
    pub fn paper_defaults(trials: u32, seed: u64) -> Self {
        GameParams {
            m: 1.0 / 3.0,
            f: 1.0 / 3.0,
            leader_fraction: 0.15,
            agg_fraction: 0.02,
            n: 111,
            fanout: 10,
            trials,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), IncentiveError> {
        if !(0.0..0.5).contains(&self.m) {
            return Err(IncentiveError::BadParams(format!(
                "attacker fraction m = {} must lie in [0, 0.5)",
                self.m
            )));
        }
        if self.fanout < 2 || self.n < 1 + self.fanout {
            return Err(IncentiveError::BadParams(format!(
                "n = {} too small for fanout {}",
                self.n, self.fanout
            )));
        }
        if self.leader_fraction + self.agg_fraction >= 1.0 {
            return Err(IncentiveError::BadParams(
                "bonus fractions must sum below 1".into(),
            ));
        }
        Ok(())
    }

    fn attacker_count(&self) -> usize {
        (self.m * self.n as f64).round() as usize
    }

    fn reward_params(&self) -> RewardParams<f64> {
        RewardParams::new(1.0, self.leader_fraction, self.agg_fraction, self.n)
            .expect("validated fractions")
    }
}

/// Mean per-round payoff of both players, with the Monte-Carlo standard error
/// of the attacker's mean.
#[derive(Clone, Copy, Debug)]
pub struct UtilityEstimate {
    pub attacker: f64,
    pub honest: f64,
    pub attacker_std_err: f64,
}

/// One seating of the committee for one round.
struct Seating {
    root: u32,
    /// Parent internal per process; `u32::MAX` for the root and internals.
    leaf_parent: Vec<u32>,
    /// Children count per process; nonzero only for internals.
    child_count: Vec<u32>,
    is_leaf: Vec<bool>,
    attacker: Vec<bool>,
}

impl Seating {
    fn draw(params: &GameParams, rng: &mut ChaCha8Rng) -> Seating {
        let n = params.n;
        let mut attacker = vec![false; n];
        for idx in sample(rng, n, params.attacker_count()) {
            attacker[idx] = true;
        }
        let mut perm: Vec<u32> = (0..n as u32).collect();
        perm.shuffle(rng);

        let root = perm[0];
        let internals = &perm[1..=params.fanout];
        let mut leaf_parent = vec![u32::MAX; n];
        let mut child_count = vec![0u32; n];
        let mut is_leaf = vec![false; n];
        for (j, leaf) in perm[params.fanout + 1..].iter().enumerate() {
            let parent = internals[j % params.fanout];
            leaf_parent[*leaf as usize] = parent;
            child_count[parent as usize] += 1;
            is_leaf[*leaf as usize] = true;
        }
        Seating {
            root,
            leaf_parent,
            child_count,
            is_leaf,
            attacker,
        }
    }
}

/// Apply a strategy to a seating and return the round's decoded certificate,
/// or `None` when the omissions leave no quorum (a failed view pays nobody).
fn play_round(
    profile: &StrategyProfile,
    params: &GameParams,
    seating: &Seating,
    rng: &mut ChaCha8Rng,
) -> Option<DecodedQc> {
    let n = params.n;
    let mut modes = vec![InclusionMode::TreeAggregated; n];
    let mut child_counts = seating.child_count.clone();
    let count = |e: f64| (e * n as f64).round() as usize;

    let root_is_attacker = seating.attacker[seating.root as usize];

    if root_is_attacker && profile.e_l > 0.0 {
        // The aggregating leader omits honest votes, sparing subtrees whose
        // bonus would flow to its own internals.
        let mut targets: Vec<u32> = (0..n as u32)
            .filter(|p| {
                seating.is_leaf[*p as usize]
                    && !seating.attacker[*p as usize]
                    && !seating.attacker[seating.leaf_parent[*p as usize] as usize]
            })
            .collect();
        let mut extra: Vec<u32> = (0..n as u32)
            .filter(|p| {
                seating.is_leaf[*p as usize]
                    && !seating.attacker[*p as usize]
                    && seating.attacker[seating.leaf_parent[*p as usize] as usize]
            })
            .collect();
        targets.shuffle(rng);
        extra.shuffle(rng);
        targets.extend(extra);
        for p in targets.into_iter().take(count(profile.e_l)) {
            modes[p as usize] = InclusionMode::Absent;
            child_counts[seating.leaf_parent[p as usize] as usize] -= 1;
        }
    }

    if !root_is_attacker && profile.e_v > 0.0 {
        // Vote denial: controlled processes stay silent, leaf seats first.
        let mut leaves: Vec<u32> = (0..n as u32)
            .filter(|p| seating.attacker[*p as usize] && seating.is_leaf[*p as usize])
            .collect();
        let mut internals: Vec<u32> = (0..n as u32)
            .filter(|p| {
                seating.attacker[*p as usize]
                    && !seating.is_leaf[*p as usize]
                    && *p != seating.root
            })
            .collect();
        leaves.shuffle(rng);
        internals.shuffle(rng);
        for p in leaves.into_iter().chain(internals).take(count(profile.e_v)) {
            modes[p as usize] = InclusionMode::Absent;
            if seating.is_leaf[p as usize] {
                child_counts[seating.leaf_parent[p as usize] as usize] -= 1;
            } else {
                // A silent internal leaves its children to the fallback path.
                child_counts[p as usize] = 0;
                for leaf in 0..n as u32 {
                    if seating.leaf_parent[leaf as usize] == p
                        && modes[leaf as usize] == InclusionMode::TreeAggregated
                    {
                        modes[leaf as usize] = InclusionMode::SecondChance;
                    }
                }
            }
        }
    }

    if profile.e_a > 0.0 {
        // Aggregation denial: controlled leaves answer only the 2nd-chance.
        let mut targets: Vec<u32> = (0..n as u32)
            .filter(|p| {
                seating.attacker[*p as usize]
                    && seating.is_leaf[*p as usize]
                    && modes[*p as usize] == InclusionMode::TreeAggregated
            })
            .collect();
        targets.shuffle(rng);
        for p in targets.into_iter().take(count(profile.e_a)) {
            modes[p as usize] = InclusionMode::SecondChance;
            child_counts[seating.leaf_parent[p as usize] as usize] -= 1;
        }
    }

    if profile.e_p > 0.0 {
        // Aggregation omission: controlled internals skip honest children.
        let mut targets: Vec<u32> = (0..n as u32)
            .filter(|p| {
                seating.is_leaf[*p as usize]
                    && !seating.attacker[*p as usize]
                    && seating.attacker[seating.leaf_parent[*p as usize] as usize]
                    && modes[*p as usize] == InclusionMode::TreeAggregated
            })
            .collect();
        targets.shuffle(rng);
        for p in targets.into_iter().take(count(profile.e_p)) {
            modes[p as usize] = InclusionMode::SecondChance;
            child_counts[seating.leaf_parent[p as usize] as usize] -= 1;
        }
    }

    let decoded = DecodedQc::new(SignerId(seating.root), modes, child_counts);
    if decoded.included_count() < crate::rewards::quorum_size(n) {
        return None;
    }
    Some(decoded)
}

fn payoffs(decoded: &DecodedQc, params: &RewardParams<f64>, attacker: &[bool]) -> (f64, f64) {
    let rewards = compute_rewards(decoded, params).expect("quorum checked by caller");
    let mut a = 0.0;
    let mut h = 0.0;
    for (p, b) in rewards.iter() {
        if attacker[p.0 as usize] {
            a += b.total;
        } else {
            h += b.total;
        }
    }
    (a, h)
}

/// Monte-Carlo estimate of both players' expected per-round payoff when the
/// attacker plays `profile` and the majority plays honestly. Deterministic
/// per seed and independent of thread count.
pub fn evaluate_utility(
    profile: &StrategyProfile,
    params: &GameParams,
) -> Result<UtilityEstimate, IncentiveError> {
    params.validate()?;
    profile.validate(params.m, params.f)?;
    let reward_params = params.reward_params();

    let samples: Vec<(f64, f64)> = (0..params.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(u64::from(trial));
            let seating = Seating::draw(params, &mut rng);
            match play_round(profile, params, &seating, &mut rng) {
                Some(decoded) => payoffs(&decoded, &reward_params, &seating.attacker),
                None => (0.0, 0.0),
            }
        })
        .collect();

    let trials = samples.len() as f64;
    let attacker = samples.iter().map(|(a, _)| a).sum::<f64>() / trials;
    let honest = samples.iter().map(|(_, h)| h).sum::<f64>() / trials;
    let var = samples
        .iter()
        .map(|(a, _)| (a - attacker).powi(2))
        .sum::<f64>()
        / (trials - 1.0).max(1.0);
    Ok(UtilityEstimate {
        attacker,
        honest,
        attacker_std_err: (var / trials).sqrt(),
    })
}

/// Dominance verdict for one profile against honest play, from paired trials.
#[derive(Clone, Debug)]
pub struct DominanceRow {
    pub profile: StrategyProfile,
    /// Do the closed-form conditions predict dominance for this profile?
    pub closed_form_dominated: bool,
    /// Mean of `utility(profile) - utility(honest)` under common random
    /// numbers.
    pub margin: f64,
    pub margin_std_err: f64,
    /// Margin is statistically non-positive (within three standard errors).
    pub dominated: bool,
}

/// Closed-form verdict: every deviation the profile uses must satisfy its
/// condition.
pub fn closed_form_dominated(profile: &StrategyProfile, params: &GameParams) -> bool {
    let mut ok = true;
    if profile.e_l > 0.0 {
        ok &= params.leader_fraction > threshold_vote_omission(params.m, params.f);
    }
    if profile.e_v > 0.0 {
        ok &= params.leader_fraction
            < threshold_vote_denial(params.m, params.f, params.agg_fraction);
    }
    if profile.e_a > 0.0 || profile.e_p > 0.0 {
        ok &= aggregation_conditions_hold(params.m);
    }
    ok
}

/// Evaluate every profile in the grid against honest play with common random
/// numbers and report margins.
pub fn dominance_report(
    params: &GameParams,
    grid: &[StrategyProfile],
) -> Result<Vec<DominanceRow>, IncentiveError> {
    params.validate()?;
    for profile in grid {
        profile.validate(params.m, params.f)?;
    }
    let reward_params = params.reward_params();

    grid.par_iter()
        .map(|profile| {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for trial in 0..params.trials {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(u64::from(trial));
                let seating = Seating::draw(params, &mut rng);
                // The honest round reuses the seating; the deviation draws
                // its sampling from a derived stream so the pairing is exact.
                let honest = play_round(&StrategyProfile::HONEST, params, &seating, &mut rng)
                    .expect("honest rounds always reach quorum");
                let (honest_attacker, _) = payoffs(&honest, &reward_params, &seating.attacker);
                let mut dev_rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed);
                dev_rng.set_stream(u64::from(trial));
                let deviation = play_round(profile, params, &seating, &mut dev_rng);
                let dev_attacker = match deviation {
                    Some(decoded) => payoffs(&decoded, &reward_params, &seating.attacker).0,
                    None => 0.0,
                };
                let d = dev_attacker - honest_attacker;
                sum += d;
                sum_sq += d * d;
            }
            let trials = f64::from(params.trials);
            let margin = sum / trials;
            let var = (sum_sq / trials - margin * margin).max(0.0);
            let std_err = (var / trials).sqrt();
            Ok(DominanceRow {
                profile: *profile,
                closed_form_dominated: closed_form_dominated(profile, params),
                margin,
                margin_std_err: std_err,
                dominated: margin <= 3.0 * std_err,
            })
        })
        .collect()
}

/// Evenly spaced grid over the strategy space: `e_l` up to `f`, the other
/// knobs up to `m`, `points` values per axis.
pub fn strategy_grid(params: &GameParams, points: usize) -> Vec<StrategyProfile> {
    let axis = |hi: f64| -> Vec<f64> {
        if points <= 1 {
            return vec![0.0];
        }
        (0..points)
            .map(|i| hi * i as f64 / (points - 1) as f64)
            .collect()
    };
    let ls = axis(params.f);
    let others = axis(params.m);
    let mut grid = Vec::with_capacity(points.pow(4));
    for &e_l in &ls {
        for &e_v in &others {
            for &e_a in &others {
                for &e_p in &others {
                    grid.push(StrategyProfile { e_l, e_v, e_a, e_p });
                }
            }
        }
    }
    grid
}
