//! Deterministic per-round committee shuffle and height-2 tree construction.
//!
//! Every process derives the same tree for a view from the previous QC digest
//! and the view number, so no tree state is ever exchanged. The shuffle is a
//! Fisher-Yates permutation driven by a counter-mode PRF (ChaCha) keyed with
//! the round seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::sigagg::{MessageDigest, SignerId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OverlayError {
    #[error("committee of {n} is too small for fanout {fanout}")]
    CommitteeTooSmall { n: usize, fanout: usize },
    #[error("process {0} is not in the committee")]
    UnknownProcess(SignerId),
}

/// Shared randomness for one round: the digest of the previous QC plus the
/// view number. Identical at all correct processes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundSeed {
    pub qc_digest: MessageDigest,
    pub view: u64,
}

impl RoundSeed {
    fn rng(&self) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(b"iniva-shuffle-v1");
        h.update(self.qc_digest.0);
        h.update(self.view.to_le_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }
}

/// Deterministic permutation of `[0, n)` for the given seed.
pub fn shuffle(seed: &RoundSeed, n: usize) -> Vec<SignerId> {
    let mut ids: Vec<SignerId> = (0..n as u32).map(SignerId).collect();
    let mut rng = seed.rng();
    for i in (1..ids.len()).rev() {
        let j = rng.gen_range(0..=i);
        ids.swap(i, j);
    }
    ids
}

/// Round-robin leader rotation over the original (unshuffled) ids.
pub fn leader_for_view(view: u64, n: usize) -> SignerId {
    SignerId((view % n as u64) as u32)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Role {
    Root,
    Internal,
    Leaf,
}

impl Role {
    /// Height in the tree: leaves 0, internals 1, root 2. Drives the
    /// aggregation timer.
    pub fn height(self) -> u32 {
        match self {
            Role::Leaf => 0,
            Role::Internal => 1,
            Role::Root => 2,
        }
    }
}

/// The height-2 overlay for one view: a root (the next leader), `fanout`
/// internal nodes, and the remaining processes as leaves assigned round-robin
/// so that subtree sizes differ by at most one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeConfig {
    n: usize,
    fanout: usize,
    root: SignerId,
    internals: Vec<SignerId>,
    leaves: Vec<SignerId>,
    parent: Vec<Option<SignerId>>,
    children: Vec<Vec<SignerId>>,
}

impl TreeConfig {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn fanout(&self) -> usize {
        self.fanout
    }

    pub fn root(&self) -> SignerId {
        self.root
    }

    pub fn internals(&self) -> &[SignerId] {
        &self.internals
    }

    pub fn leaves(&self) -> &[SignerId] {
        &self.leaves
    }

    fn check(&self, p: SignerId) -> Result<(), OverlayError> {
        if (p.0 as usize) < self.n {
            Ok(())
        } else {
            Err(OverlayError::UnknownProcess(p))
        }
    }

    pub fn role_of(&self, p: SignerId) -> Result<Role, OverlayError> {
        self.check(p)?;
        if p == self.root {
            Ok(Role::Root)
        } else if self.parent[p.0 as usize] == Some(self.root) {
            Ok(Role::Internal)
        } else {
            Ok(Role::Leaf)
        }
    }

    pub fn children(&self, p: SignerId) -> Result<&[SignerId], OverlayError> {
        self.check(p)?;
        Ok(&self.children[p.0 as usize])
    }

    pub fn parent(&self, p: SignerId) -> Result<Option<SignerId>, OverlayError> {
        self.check(p)?;
        Ok(self.parent[p.0 as usize])
    }

    /// All members of the subtree rooted at `p`'s internal: the internal plus
    /// its leaves. For a leaf this is its parent's branch, for an internal its
    /// own.
    pub fn branch_of(&self, p: SignerId) -> Result<Vec<SignerId>, OverlayError> {
        let internal = match self.role_of(p)? {
            Role::Internal => p,
            Role::Leaf => self.parent[p.0 as usize].expect("leaf has a parent"),
            Role::Root => return Ok(vec![self.root]),
        };
        let mut branch = vec![internal];
        branch.extend_from_slice(&self.children[internal.0 as usize]);
        Ok(branch)
    }

    /// Canonical textual dump: one `id,role,parent` line per process in id
    /// order. `-` marks the root's missing parent.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for id in 0..self.n as u32 {
            let p = SignerId(id);
            let role = match self.role_of(p).expect("id in range") {
                Role::Root => "root",
                Role::Internal => "internal",
                Role::Leaf => "leaf",
            };
            match self.parent[id as usize] {
                Some(parent) => out.push_str(&format!("{id},{role},{parent}\n")),
                None => out.push_str(&format!("{id},{role},-\n")),
            }
        }
        out
    }
}

/// Build the tree for one view from a shuffled committee.
///
/// The root is pinned to `next_leader`; the first `fanout` non-root entries
/// of `perm` become internals and the rest are assigned to internals
/// round-robin in permutation order.
pub fn build_tree(
    perm: &[SignerId],
    fanout: usize,
    next_leader: SignerId,
) -> Result<TreeConfig, OverlayError> {
    let n = perm.len();
    if fanout < 2 || n < 1 + fanout {
        return Err(OverlayError::CommitteeTooSmall { n, fanout });
    }
    let rest: Vec<SignerId> = perm.iter().copied().filter(|p| *p != next_leader).collect();
    debug_assert_eq!(rest.len(), n - 1, "next_leader must appear in perm");

    let internals: Vec<SignerId> = rest[..fanout].to_vec();
    let leaves: Vec<SignerId> = rest[fanout..].to_vec();

    let mut parent = vec![None; n];
    let mut children = vec![Vec::new(); n];
    for internal in &internals {
        parent[internal.0 as usize] = Some(next_leader);
        children[next_leader.0 as usize].push(*internal);
    }
    for (i, leaf) in leaves.iter().enumerate() {
        let internal = internals[i % fanout];
        parent[leaf.0 as usize] = Some(internal);
        children[internal.0 as usize].push(*leaf);
    }

    Ok(TreeConfig {
        n,
        fanout,
        root: next_leader,
        internals,
        leaves,
        parent,
        children,
    })
}

/// Shuffle and build the aggregation tree for the block proposed in `view`.
/// The root is the leader of `view + 1`.
pub fn tree_for_view(
    qc_digest: MessageDigest,
    view: u64,
    n: usize,
    fanout: usize,
) -> Result<TreeConfig, OverlayError> {
    let seed = RoundSeed { qc_digest, view };
    let perm = shuffle(&seed, n);
    build_tree(&perm, fanout, leader_for_view(view + 1, n))
}
