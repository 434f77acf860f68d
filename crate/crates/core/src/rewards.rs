//! Role decoding and reward distribution from a QC's multiplicity vector.
//!
//! The multiplicity encoding makes inclusion paths legible after the fact:
//! tree-aggregated leaves appear twice, an aggregating internal appears
//! `1 + c` times for `c` aggregated children, and anything collected through
//! a 2nd-chance message appears exactly once. [`decode_roles`] recovers that
//! structure (or rejects the certificate), and [`compute_rewards`] turns a
//! decoding into per-process payouts.
//!
//! The arithmetic is generic over the scalar type. Conservation must hold
//! bit-exactly, so anything that checks invariants instantiates it with
//! [`crate::Rational`]; the Monte-Carlo games run the same code over `f64`.

use std::fmt;

use num_traits::{FromPrimitive, Num, Signed};
use thiserror::Error;

use crate::overlay::TreeConfig;
use crate::sigagg::{MultiplicityVector, SignerId};

/// Scalar type for reward arithmetic. Implemented by `f64`, `Ratio<i64>` and
/// `BigRational` via the blanket impl.
pub trait Scalar: Num + FromPrimitive + Signed + PartialOrd + Clone + fmt::Debug {}

impl<T: Num + FromPrimitive + Signed + PartialOrd + Clone + fmt::Debug> Scalar for T {}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RewardError {
    #[error("invalid multiplicities: {0}")]
    InvalidMultiplicities(String),
    #[error("certificate includes {included} signers, quorum is {quorum}")]
    NoQuorum { included: usize, quorum: usize },
    #[error("invalid reward parameters: {0}")]
    InvalidParams(String),
}

/// Quorum size: `ceil((1 - f) * n)` with `f = 1/3`.
pub fn quorum_size(n: usize) -> usize {
    (2 * n + 2) / 3
}

/// How a process's signature entered the certificate.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum InclusionMode {
    /// Aggregated on the tree path (or, for the root, emitted the QC).
    TreeAggregated,
    /// Collected through a 2nd-chance single; earns the punishment.
    SecondChance,
    Absent,
}

/// The decoded structure of one certificate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedQc {
    root: SignerId,
    modes: Vec<InclusionMode>,
    /// Aggregated-child count per process; nonzero only for internals
    /// decoded as tree aggregators.
    child_counts: Vec<u32>,
    /// Number of subtrees the root aggregated (internals decoded on the tree
    /// path).
    root_subtree_count: u32,
}

impl DecodedQc {
    pub fn new(root: SignerId, modes: Vec<InclusionMode>, child_counts: Vec<u32>) -> Self {
        assert_eq!(modes.len(), child_counts.len());
        // An internal with zero aggregated children is indistinguishable from
        // a 2nd-chance single, so decoded tree internals always have c > 0.
        let root_subtree_count = child_counts
            .iter()
            .enumerate()
            .filter(|(i, c)| {
                *i as u32 != root.0 && **c > 0 && modes[*i] == InclusionMode::TreeAggregated
            })
            .count() as u32;
        DecodedQc {
            root,
            modes,
            child_counts,
            root_subtree_count,
        }
    }

    pub fn n(&self) -> usize {
        self.modes.len()
    }

    pub fn root(&self) -> SignerId {
        self.root
    }

    pub fn mode(&self, p: SignerId) -> InclusionMode {
        self.modes[p.0 as usize]
    }

    pub fn modes(&self) -> &[InclusionMode] {
        &self.modes
    }

    pub fn child_count(&self, p: SignerId) -> u32 {
        self.child_counts[p.0 as usize]
    }

    pub fn root_subtree_count(&self) -> u32 {
        self.root_subtree_count
    }

    pub fn included(&self) -> impl Iterator<Item = SignerId> + '_ {
        self.modes
            .iter()
            .enumerate()
            .filter(|(_, m)| **m != InclusionMode::Absent)
            .map(|(i, _)| SignerId(i as u32))
    }

    pub fn included_count(&self) -> usize {
        self.modes
            .iter()
            .filter(|m| **m != InclusionMode::Absent)
            .count()
    }
}

/// Decode inclusion modes and aggregation counts from a certificate's
/// multiplicity vector against the view's tree.
///
/// Rejects any pattern the protocol cannot produce; a leader publishing such
/// a certificate is considered faulty.
pub fn decode_roles(
    multiplicities: &MultiplicityVector,
    tree: &TreeConfig,
) -> Result<DecodedQc, RewardError> {
    let n = tree.n();
    for (id, _) in multiplicities.iter() {
        if id.0 as usize >= n {
            return Err(RewardError::InvalidMultiplicities(format!(
                "signer {id} outside committee of {n}"
            )));
        }
    }

    let root = tree.root();
    match multiplicities.count(root) {
        1 => {}
        c => {
            return Err(RewardError::InvalidMultiplicities(format!(
                "root {root} has multiplicity {c}, expected 1"
            )))
        }
    }

    let mut modes = vec![InclusionMode::Absent; n];
    let mut child_counts = vec![0u32; n];
    modes[root.0 as usize] = InclusionMode::TreeAggregated;

    for internal in tree.internals() {
        let mu = multiplicities.count(*internal);
        let children = tree.children(*internal).expect("internal in tree");
        let doubled: Vec<SignerId> = children
            .iter()
            .copied()
            .filter(|c| multiplicities.count(*c) == 2)
            .collect();
        match mu {
            0 => {
                if !doubled.is_empty() {
                    return Err(RewardError::InvalidMultiplicities(format!(
                        "absent internal {internal} has children at multiplicity 2"
                    )));
                }
            }
            1 => {
                if !doubled.is_empty() {
                    return Err(RewardError::InvalidMultiplicities(format!(
                        "internal {internal} at multiplicity 1 but {} children doubled",
                        doubled.len()
                    )));
                }
                modes[internal.0 as usize] = InclusionMode::SecondChance;
            }
            mu => {
                let c = mu - 1;
                if doubled.len() as u32 != c {
                    return Err(RewardError::InvalidMultiplicities(format!(
                        "internal {internal} encodes {c} aggregated children, found {}",
                        doubled.len()
                    )));
                }
                modes[internal.0 as usize] = InclusionMode::TreeAggregated;
                child_counts[internal.0 as usize] = c;
            }
        }
    }

    for leaf in tree.leaves() {
        match multiplicities.count(*leaf) {
            0 => {}
            1 => modes[leaf.0 as usize] = InclusionMode::SecondChance,
            2 => {
                // Consistency with the parent was established above: a doubled
                // leaf under anything but a tree aggregator already failed.
                let parent = tree.parent(*leaf).expect("leaf in tree").expect("has parent");
                if modes[parent.0 as usize] != InclusionMode::TreeAggregated
                    || child_counts[parent.0 as usize] == 0
                {
                    return Err(RewardError::InvalidMultiplicities(format!(
                        "leaf {leaf} doubled without an aggregating parent"
                    )));
                }
                modes[leaf.0 as usize] = InclusionMode::TreeAggregated;
            }
            c => {
                return Err(RewardError::InvalidMultiplicities(format!(
                    "leaf {leaf} has multiplicity {c}"
                )))
            }
        }
    }

    Ok(DecodedQc::new(root, modes, child_counts))
}

/// Reward-scheme parameters. `leader_fraction` is the share reserved for the
/// leader bonus (b_l), `agg_fraction` the per-signature aggregation bonus
/// pool (b_a); the remaining `1 - b_l - b_a` is the voting share.
#[derive(Clone, Debug)]
pub struct RewardParams<T> {
    pub total: T,
    pub leader_fraction: T,
    pub agg_fraction: T,
    pub n: usize,
    /// Fault fraction as (numerator, denominator); quorum and the leader
    /// bonus divisor derive from it. Default 1/3.
    pub fault_fraction: (u32, u32),
}

impl<T: Scalar> RewardParams<T> {
    pub fn new(total: T, leader_fraction: T, agg_fraction: T, n: usize) -> Result<Self, RewardError> {
        let params = RewardParams {
            total,
            leader_fraction,
            agg_fraction,
            n,
            fault_fraction: (1, 3),
        };
        params.validate()?;
        Ok(params)
    }

    fn validate(&self) -> Result<(), RewardError> {
        if self.leader_fraction < T::zero() || self.agg_fraction < T::zero() {
            return Err(RewardError::InvalidParams("negative bonus fraction".into()));
        }
        if self.leader_fraction.clone() + self.agg_fraction.clone() >= T::one() {
            return Err(RewardError::InvalidParams(
                "leader and aggregation fractions must sum below 1".into(),
            ));
        }
        if self.n == 0 {
            return Err(RewardError::InvalidParams("empty committee".into()));
        }
        Ok(())
    }

    fn scalar_usize(v: usize) -> T {
        T::from_usize(v).expect("small integer fits scalar")
    }

    /// `f * n` as a scalar, the divisor of the leader bonus.
    fn fault_count(&self) -> T {
        Self::scalar_usize(self.n) * Self::scalar_usize(self.fault_fraction.0 as usize)
            / Self::scalar_usize(self.fault_fraction.1 as usize)
    }
}

/// Per-process reward components. `total` is
/// `base + spread + agg_bonus + leader_bonus - punishment`.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardBreakdown<T> {
    /// Voting share `(1 - b_l - b_a) R / n`; zero when absent.
    pub base: T,
    /// Equal per-committee-member share of everything left unpaid.
    pub spread: T,
    pub agg_bonus: T,
    pub leader_bonus: T,
    pub punishment: T,
    pub total: T,
}

impl<T: Scalar> RewardBreakdown<T> {
    fn zero() -> Self {
        RewardBreakdown {
            base: T::zero(),
            spread: T::zero(),
            agg_bonus: T::zero(),
            leader_bonus: T::zero(),
            punishment: T::zero(),
            total: T::zero(),
        }
    }
}

/// The full reward distribution for one block.
#[derive(Clone, Debug)]
pub struct RewardVector<T> {
    per_process: Vec<RewardBreakdown<T>>,
}

impl<T: Scalar> RewardVector<T> {
    pub fn breakdown(&self, p: SignerId) -> &RewardBreakdown<T> {
        &self.per_process[p.0 as usize]
    }

    pub fn reward(&self, p: SignerId) -> &T {
        &self.per_process[p.0 as usize].total
    }

    pub fn iter(&self) -> impl Iterator<Item = (SignerId, &RewardBreakdown<T>)> {
        self.per_process
            .iter()
            .enumerate()
            .map(|(i, b)| (SignerId(i as u32), b))
    }

    pub fn sum(&self) -> T {
        self.per_process
            .iter()
            .fold(T::zero(), |acc, b| acc + b.total.clone())
    }
}

/// Compute the reward distribution for a decoded certificate.
///
/// Components:
/// - voting share `((1 - b_l - b_a) / n) R` for every included signer;
/// - aggregation bonus `(b_a / n) R` per aggregated child for internals and
///   per aggregated subtree for the root;
/// - leader bonus `(b_l / (f n)) R` per included signer above the quorum,
///   capped at `b_l R`;
/// - punishment `(b_a / n) R` for every non-root process included via a
///   2nd-chance single;
/// - everything left unpaid (voting shares of absent members, unclaimed
///   bonus pool, collected punishments) spread evenly over the whole
///   committee.
///
/// The pieces sum to exactly `R` by construction. The flat spread is what
/// makes an attacker's recapture of any reward it forfeits proportional to
/// its committee fraction, which the dominance analysis relies on.
pub fn compute_rewards<T: Scalar>(
    decoded: &DecodedQc,
    params: &RewardParams<T>,
) -> Result<RewardVector<T>, RewardError> {
    params.validate()?;
    if decoded.n() != params.n {
        return Err(RewardError::InvalidParams(format!(
            "decoded committee of {} but params.n = {}",
            decoded.n(),
            params.n
        )));
    }
    let included: Vec<SignerId> = decoded.included().collect();
    let quorum = quorum_size(params.n);
    if included.len() < quorum {
        return Err(RewardError::NoQuorum {
            included: included.len(),
            quorum,
        });
    }

    let n_scalar = RewardParams::<T>::scalar_usize(params.n);
    let unit_agg = params.agg_fraction.clone() * params.total.clone() / n_scalar.clone();
    let vote_share = (T::one() - params.leader_fraction.clone() - params.agg_fraction.clone())
        * params.total.clone()
        / n_scalar.clone();

    let mut out: Vec<RewardBreakdown<T>> = vec![RewardBreakdown::zero(); params.n];
    let mut paid = T::zero();

    for p in 0..params.n {
        let id = SignerId(p as u32);
        let b = &mut out[p];
        if decoded.mode(id) != InclusionMode::Absent {
            b.base = vote_share.clone();
        }
        if id == decoded.root() {
            let subtrees = RewardParams::<T>::scalar_usize(decoded.root_subtree_count() as usize);
            b.agg_bonus = unit_agg.clone() * subtrees;
        } else {
            match decoded.mode(id) {
                InclusionMode::TreeAggregated => {
                    let c = RewardParams::<T>::scalar_usize(decoded.child_count(id) as usize);
                    b.agg_bonus = unit_agg.clone() * c;
                }
                InclusionMode::SecondChance => {
                    b.punishment = unit_agg.clone();
                }
                InclusionMode::Absent => {}
            }
        }
        paid = paid + b.base.clone() + b.agg_bonus.clone() - b.punishment.clone();
    }

    let above_quorum = RewardParams::<T>::scalar_usize(included.len() - quorum);
    let uncapped =
        params.leader_fraction.clone() * params.total.clone() * above_quorum / params.fault_count();
    let cap = params.leader_fraction.clone() * params.total.clone();
    let leader_bonus = if uncapped > cap { cap } else { uncapped };
    out[decoded.root().0 as usize].leader_bonus = leader_bonus.clone();
    paid = paid + leader_bonus;

    let spread = (params.total.clone() - paid) / n_scalar;
    for b in &mut out {
        b.spread = spread.clone();
        b.total = b.base.clone() + b.spread.clone() + b.agg_bonus.clone()
            + b.leader_bonus.clone()
            - b.punishment.clone();
    }

    Ok(RewardVector { per_process: out })
}

/// Parse a plain decimal string (`"0.15"`, `"2"`, `".5"`) into an exact
/// fraction.
pub fn parse_decimal_fraction(s: &str) -> Result<num::rational::Ratio<i64>, RewardError> {
    let s = s.trim();
    let bad = || RewardError::InvalidParams(format!("not a decimal number: {s:?}"));
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1i64, rest),
        None => (1i64, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    let mut numer: i64 = if int_part.is_empty() {
        0
    } else {
        int_part.parse().map_err(|_| bad())?
    };
    let mut denom: i64 = 1;
    for c in frac_part.chars() {
        numer = numer
            .checked_mul(10)
            .and_then(|v| v.checked_add(i64::from(c.to_digit(10).unwrap())))
            .ok_or_else(bad)?;
        denom = denom.checked_mul(10).ok_or_else(bad)?;
    }
    Ok(num::rational::Ratio::new(sign * numer, denom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::tree_for_view;
    use crate::sigagg::MessageDigest;
    use crate::Rational;
    use num::rational::Ratio;
    use num::BigInt;

    fn rational(n: i64, d: i64) -> Rational {
        Rational::new(BigInt::from(n), BigInt::from(d))
    }

    fn exact_params(n: usize) -> RewardParams<Rational> {
        RewardParams::new(rational(1, 1), rational(15, 100), rational(2, 100), n).unwrap()
    }

    /// Tree where ids happen to be seat-ordered, for readable assertions.
    fn flat_tree(n: usize, fanout: usize) -> TreeConfig {
        let ids: Vec<SignerId> = (0..n as u32).map(SignerId).collect();
        crate::overlay::build_tree(&ids, fanout, SignerId(0)).unwrap()
    }

    fn full_inclusion(tree: &TreeConfig) -> MultiplicityVector {
        let mut v = MultiplicityVector::new();
        v.add(tree.root(), 1);
        for i in tree.internals() {
            let c = tree.children(*i).unwrap().len() as u32;
            v.add(*i, 1 + c);
            for leaf in tree.children(*i).unwrap() {
                v.add(*leaf, 2);
            }
        }
        v
    }

    #[test]
    fn decode_worked_example() {
        // {leaf1: 2, leaf2: 2, internal: 3, root: 1} on n = 7, fanout = 2.
        let tree = flat_tree(7, 2);
        let internal = tree.internals()[0];
        let kids = tree.children(internal).unwrap().to_vec();
        let v = MultiplicityVector::from_entries([
            (tree.root(), 1),
            (internal, 3),
            (kids[0], 2),
            (kids[1], 2),
        ]);
        let decoded = decode_roles(&v, &tree).unwrap();
        assert_eq!(decoded.mode(internal), InclusionMode::TreeAggregated);
        assert_eq!(decoded.child_count(internal), 2);
        assert_eq!(decoded.mode(kids[0]), InclusionMode::TreeAggregated);
        assert_eq!(decoded.root_subtree_count(), 1);
    }

    #[test]
    fn decode_second_chance_and_invalid() {
        let tree = flat_tree(7, 2);
        let leaf = tree.leaves()[0];
        let v = MultiplicityVector::from_entries([(tree.root(), 1), (leaf, 1)]);
        // Below quorum but decoding itself succeeds.
        let decoded = decode_roles(&v, &tree).unwrap();
        assert_eq!(decoded.mode(leaf), InclusionMode::SecondChance);

        let internal = tree.internals()[0];
        let bad = MultiplicityVector::from_entries([(tree.root(), 1), (leaf, 3), (internal, 3)]);
        assert!(matches!(
            decode_roles(&bad, &tree),
            Err(RewardError::InvalidMultiplicities(_))
        ));

        // A doubled leaf needs a consistent parent.
        let parent = tree.parent(leaf).unwrap().unwrap();
        let orphan = MultiplicityVector::from_entries([(tree.root(), 1), (leaf, 2), (parent, 1)]);
        assert!(decode_roles(&orphan, &tree).is_err());

        // Root multiplicity must be exactly 1.
        let noroot = MultiplicityVector::from_entries([(leaf, 1)]);
        assert!(decode_roles(&noroot, &tree).is_err());
    }

    #[test]
    fn full_tree_leader_bonus_is_exact_cap() {
        // n = 111 all included: |I| - quorum = 37 = f*n, so the leader bonus
        // is exactly b_l * R.
        let tree = flat_tree(111, 10);
        let decoded = decode_roles(&full_inclusion(&tree), &tree).unwrap();
        let params = exact_params(111);
        let rewards = compute_rewards(&decoded, &params).unwrap();
        assert_eq!(
            rewards.breakdown(tree.root()).leader_bonus,
            rational(15, 100)
        );
        assert_eq!(rewards.sum(), rational(1, 1));
    }

    #[test]
    fn second_chance_leaf_punished_and_parent_docked() {
        let tree = flat_tree(111, 10);
        let v = full_inclusion(&tree);
        let leaf = tree.leaves()[0];
        let parent = tree.parent(leaf).unwrap().unwrap();

        // Rebuild with that leaf collected as a 2nd-chance single.
        let mut alt = MultiplicityVector::new();
        alt.add(tree.root(), 1);
        for i in tree.internals() {
            let kids: Vec<SignerId> = tree
                .children(*i)
                .unwrap()
                .iter()
                .copied()
                .filter(|k| *k != leaf)
                .collect();
            alt.add(*i, 1 + kids.len() as u32);
            for k in kids {
                alt.add(k, 2);
            }
        }
        alt.add(leaf, 1);

        let params = exact_params(111);
        let full = compute_rewards(&decode_roles(&v, &tree).unwrap(), &params).unwrap();
        let docked = compute_rewards(&decode_roles(&alt, &tree).unwrap(), &params).unwrap();

        let unit = rational(2, 100) / rational(111, 1);
        assert_eq!(docked.breakdown(leaf).punishment, unit);
        assert_eq!(
            docked.breakdown(parent).agg_bonus.clone() + unit.clone(),
            full.breakdown(parent).agg_bonus
        );
        // Requirement 3: both the leaf and its parent strictly lose.
        assert!(docked.reward(leaf) < full.reward(leaf));
        assert!(docked.reward(parent) < full.reward(parent));
        assert_eq!(docked.sum(), rational(1, 1));
    }

    #[test]
    fn degenerate_params_split_evenly() {
        let tree = flat_tree(21, 4);
        let decoded = decode_roles(&full_inclusion(&tree), &tree).unwrap();
        let params = RewardParams::new(rational(1, 1), rational(0, 1), rational(0, 1), 21).unwrap();
        let rewards = compute_rewards(&decoded, &params).unwrap();
        for (_, b) in rewards.iter() {
            assert_eq!(b.total, rational(1, 21));
        }
    }

    #[test]
    fn conservation_exhaustive_small_committee() {
        // Every decodable certificate of a 7-member committee conserves R
        // exactly. Modes per non-root process: absent, 2nd-chance, or on the
        // tree path (leaves only when their parent aggregates them).
        let tree = flat_tree(7, 2);
        let params = exact_params(7);
        let non_root: Vec<SignerId> = (1..7).map(SignerId).collect();
        let mut checked = 0usize;
        for mask in 0..3usize.pow(6) {
            let mut digits = mask;
            let mut v = MultiplicityVector::new();
            v.add(tree.root(), 1);
            let mut want: Vec<(SignerId, u8)> = Vec::new();
            for p in &non_root {
                want.push((*p, (digits % 3) as u8));
                digits /= 3;
            }
            // Encode: 0 absent, 1 second-chance, 2 tree path.
            let mut consistent = true;
            for internal in tree.internals() {
                let state = want.iter().find(|(p, _)| p == internal).unwrap().1;
                let kids = tree.children(*internal).unwrap();
                let doubled: Vec<SignerId> = kids
                    .iter()
                    .copied()
                    .filter(|k| want.iter().find(|(p, _)| p == k).unwrap().1 == 2)
                    .collect();
                match state {
                    2 => {
                        if doubled.is_empty() {
                            consistent = false;
                        }
                        v.add(*internal, 1 + doubled.len() as u32);
                        for k in doubled {
                            v.add(k, 2);
                        }
                    }
                    s => {
                        if !doubled.is_empty() {
                            consistent = false;
                        }
                        if s == 1 {
                            v.add(*internal, 1);
                        }
                    }
                }
            }
            for leaf in tree.leaves() {
                let state = want.iter().find(|(p, _)| p == leaf).unwrap().1;
                if state == 1 {
                    v.add(*leaf, 1);
                }
            }
            if !consistent {
                continue;
            }
            let decoded = match decode_roles(&v, &tree) {
                Ok(d) => d,
                Err(_) => continue,
            };
            match compute_rewards(&decoded, &params) {
                Ok(r) => {
                    assert_eq!(r.sum(), rational(1, 1), "conservation failed for {v:?}");
                    checked += 1;
                }
                Err(RewardError::NoQuorum { .. }) => continue,
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(checked > 50, "only {checked} certificates exercised");
    }

    #[test]
    fn randomized_conservation_111() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let params = exact_params(111);
        for case in 0..40 {
            let tree = tree_for_view(MessageDigest::of_bytes(&[case]), case as u64, 111, 10).unwrap();
            let mut v = MultiplicityVector::new();
            v.add(tree.root(), 1);
            for internal in tree.internals() {
                let kids = tree.children(*internal).unwrap();
                let aggregated: Vec<SignerId> = kids
                    .iter()
                    .copied()
                    .filter(|_| rng.gen_bool(0.8))
                    .collect();
                if rng.gen_bool(0.9) {
                    v.add(*internal, 1 + aggregated.len() as u32);
                    for k in &aggregated {
                        v.add(*k, 2);
                    }
                    for k in kids.iter().filter(|k| !aggregated.contains(k)) {
                        if rng.gen_bool(0.7) {
                            v.add(*k, 1);
                        }
                    }
                } else {
                    for k in kids {
                        if rng.gen_bool(0.5) {
                            v.add(*k, 1);
                        }
                    }
                    if rng.gen_bool(0.5) {
                        v.add(*internal, 1);
                    }
                }
            }
            let decoded = decode_roles(&v, &tree).unwrap();
            match compute_rewards(&decoded, &params) {
                Ok(r) => assert_eq!(r.sum(), rational(1, 1)),
                Err(RewardError::NoQuorum { .. }) => {}
                Err(e) => panic!("unexpected {e}"),
            }
        }
    }

    #[test]
    fn f64_and_exact_agree() {
        let tree = flat_tree(21, 4);
        let decoded = decode_roles(&full_inclusion(&tree), &tree).unwrap();
        let exact = compute_rewards(&decoded, &exact_params(21)).unwrap();
        let float = compute_rewards(
            &decoded,
            &RewardParams::new(1.0f64, 0.15, 0.02, 21).unwrap(),
        )
        .unwrap();
        for (p, b) in float.iter() {
            let e = exact.breakdown(p);
            let approx = e.total.numer().to_string().parse::<f64>().unwrap()
                / e.total.denom().to_string().parse::<f64>().unwrap();
            assert!((b.total - approx).abs() < 1e-12);
        }
    }

    #[test]
    fn parse_decimal_fractions() {
        assert_eq!(parse_decimal_fraction("0.15").unwrap(), Ratio::new(3, 20));
        assert_eq!(parse_decimal_fraction("2").unwrap(), Ratio::new(2, 1));
        assert_eq!(parse_decimal_fraction(".5").unwrap(), Ratio::new(1, 2));
        assert_eq!(parse_decimal_fraction("-0.25").unwrap(), Ratio::new(-1, 4));
        assert!(parse_decimal_fraction("x").is_err());
        assert!(parse_decimal_fraction("").is_err());
    }
}
