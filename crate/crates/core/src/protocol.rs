//! Per-process state machine for one aggregation round.
//!
//! A round moves a block down the tree and signatures back up: the previous
//! leader hands the block to the root and its internals, internals forward to
//! their leaves and aggregate the returned singles (children twice, self
//! `1 + c` times), and the root combines subtree aggregates into a QC. Missing
//! processes get one 2nd-chance from the root before the QC is sealed.
//!
//! The machine is event-driven and owns no clock: the driver (see
//! [`crate::simnet`]) delivers messages and timer fires in simulated-time
//! order, and each handler returns the sends, timer requests, and terminal
//! outputs it produced. Handlers are strictly sequential per process.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::overlay::{Role, TreeConfig};
use crate::rewards::quorum_size;
use crate::sigagg::{
    aggregate, sign, AggregateSignature, MessageDigest, MultiplicityVector, Part, Signature,
    SignerId,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("certificate has {distinct} distinct signers, quorum is {quorum}")]
    BelowQuorum { distinct: usize, quorum: usize },
}

/// A block proposal. The payload is opaque; everything identity-relevant is
/// hashed into [`Block::digest`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub view: u64,
    pub parent_qc_digest: MessageDigest,
    pub payload: MessageDigest,
    /// Creation time in simulated ticks; the timestamp clause of the
    /// 2nd-chance validity check compares against it.
    pub timestamp: u64,
}

impl Block {
    pub fn digest(&self) -> MessageDigest {
        let mut bytes = Vec::with_capacity(112);
        bytes.extend_from_slice(&self.height.to_le_bytes());
        bytes.extend_from_slice(&self.view.to_le_bytes());
        bytes.extend_from_slice(&self.parent_qc_digest.0);
        bytes.extend_from_slice(&self.payload.0);
        bytes.extend_from_slice(&self.timestamp.to_le_bytes());
        MessageDigest::of_bytes(&bytes)
    }
}

/// Quorum certificate: the block digest plus an aggregate covering at least
/// `ceil((1 - f) n)` distinct signers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuorumCertificate {
    pub block_digest: MessageDigest,
    pub aggregate: AggregateSignature,
    pub view: u64,
}

impl QuorumCertificate {
    pub fn new(
        block_digest: MessageDigest,
        aggregate: AggregateSignature,
        view: u64,
        n: usize,
    ) -> Result<Self, ProtocolError> {
        let distinct = aggregate.distinct_signers();
        let quorum = quorum_size(n);
        if distinct < quorum {
            return Err(ProtocolError::BelowQuorum { distinct, quorum });
        }
        Ok(QuorumCertificate {
            block_digest,
            aggregate,
            view,
        })
    }

    pub fn multiplicities(&self) -> &MultiplicityVector {
        self.aggregate.multiplicities()
    }

    /// Digest binding the certificate content; seeds the next view's shuffle.
    pub fn digest(&self) -> MessageDigest {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&self.block_digest.0);
        bytes.extend_from_slice(&self.view.to_le_bytes());
        bytes.extend_from_slice(&self.aggregate.multiplicities().to_bytes());
        MessageDigest::of_bytes(&bytes)
    }

    /// Placeholder certificate anchoring the chain.
    pub fn genesis() -> Self {
        QuorumCertificate {
            block_digest: MessageDigest::ZERO,
            aggregate: AggregateSignature::from(&sign(SignerId(0), MessageDigest::ZERO)),
            view: 0,
        }
    }
}

/// Wire messages of one round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    Proposal(Block),
    /// A child's contribution: a bare single from a leaf or a subtree
    /// aggregate from an internal.
    Vote(AggregateSignature),
    /// Proof of aggregation, echoed to every aggregated child.
    Ack(AggregateSignature),
    /// The root's fallback request. Carries the block so a process that never
    /// received it through the tree can still deliver and vote.
    SecondChance {
        block: Block,
        current: MultiplicityVector,
    },
    SecondChanceReply(AggregateSignature),
}

/// Timers a process may arm. At most one of each is live per round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimerKind {
    Aggregation,
    SecondChance,
}

/// Events delivered to a process by the driver.
#[derive(Clone, Debug)]
pub enum Event {
    Message { from: SignerId, msg: Message },
    Timer(TimerKind),
}

/// Everything a handler can ask the outside world to do.
#[derive(Clone, Debug, PartialEq)]
pub enum Output {
    Send { to: SignerId, msg: Message },
    StartTimer { kind: TimerKind, after: u64 },
    /// First delivery of the round's block at this process.
    Delivered,
    /// Root only: the round closed with a certificate.
    Qc(QuorumCertificate),
    /// Root only: no quorum materialized.
    ViewFailure,
}

/// Timing knobs, all in simulated ticks.
#[derive(Clone, Copy, Debug)]
pub struct Timing {
    /// The synchrony bound Delta.
    pub delta: u64,
    /// 2nd-chance collection window; the heuristic default is `2 * delta`.
    pub second_chance_delta: u64,
    /// Age after which a 2nd-chance is accepted on the timestamp clause alone.
    pub t_valid: u64,
}

impl Timing {
    pub fn with_delta(delta: u64) -> Self {
        Timing {
            delta,
            second_chance_delta: 2 * delta,
            t_valid: 5 * delta,
        }
    }

    /// Aggregation timer for a role: `2 * delta * height`.
    pub fn aggregation_timer(&self, role: Role) -> u64 {
        2 * self.delta * u64::from(role.height())
    }
}

/// State of one process for one round.
pub struct ProcessState {
    id: SignerId,
    view: u64,
    tree: Arc<TreeConfig>,
    timing: Timing,
    /// Disable the fallback entirely (the No2C variant).
    no_second_chance: bool,
    role: Role,
    block: Option<Block>,
    digest: Option<MessageDigest>,
    own_sig: Option<Signature>,
    signatures_created: u32,
    /// Internal: singles collected from children, keyed by child.
    collected: BTreeMap<SignerId, AggregateSignature>,
    /// Internal: the completed subtree aggregate (also the 2nd-chance reply).
    subtree_agg: Option<AggregateSignature>,
    aggregation_done: bool,
    /// Leaf or internal: ack received from the parent that contains us.
    ack: Option<AggregateSignature>,
    /// Root: accepted subtree aggregates keyed by internal.
    subtrees: BTreeMap<SignerId, AggregateSignature>,
    /// Root: 2nd-chance bookkeeping.
    sc_targets: BTreeSet<SignerId>,
    sc_replies: BTreeMap<SignerId, AggregateSignature>,
    sc_sent: bool,
    finalized: bool,
}

impl ProcessState {
    pub fn new(
        id: SignerId,
        view: u64,
        tree: Arc<TreeConfig>,
        timing: Timing,
        no_second_chance: bool,
    ) -> Self {
        let role = tree.role_of(id).expect("process in committee");
        ProcessState {
            id,
            view,
            tree,
            timing,
            no_second_chance,
            role,
            block: None,
            digest: None,
            own_sig: None,
            signatures_created: 0,
            collected: BTreeMap::new(),
            subtree_agg: None,
            aggregation_done: false,
            ack: None,
            subtrees: BTreeMap::new(),
            sc_targets: BTreeSet::new(),
            sc_replies: BTreeMap::new(),
            sc_sent: false,
            finalized: false,
        }
    }

    pub fn id(&self) -> SignerId {
        self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn delivered(&self) -> bool {
        self.block.is_some()
    }

    pub fn held_ack(&self) -> Option<&AggregateSignature> {
        self.ack.as_ref()
    }

    /// Number of base signatures this process created; at most one per round
    /// (LSO voting).
    pub fn signatures_created(&self) -> u32 {
        self.signatures_created
    }

    fn own_signature(&mut self) -> Signature {
        if self.own_sig.is_none() {
            let digest = self.digest.expect("signing requires a delivered block");
            self.own_sig = Some(sign(self.id, digest));
            self.signatures_created += 1;
        }
        self.own_sig.clone().expect("just created")
    }

    pub fn handle(&mut self, event: Event, now: u64) -> Vec<Output> {
        match event {
            Event::Message { from, msg } => match msg {
                Message::Proposal(block) => self.on_proposal(block),
                Message::Vote(agg) => self.on_vote(from, agg),
                Message::Ack(agg) => self.on_ack(from, agg),
                Message::SecondChance { block, current } => {
                    self.on_second_chance(from, block, current, now)
                }
                Message::SecondChanceReply(agg) => self.on_second_chance_reply(from, agg),
            },
            Event::Timer(TimerKind::Aggregation) => self.on_aggregation_timer(),
            Event::Timer(TimerKind::SecondChance) => self.assemble_qc(),
        }
    }

    /// Blocks for another view are invalid here: vote bottom, i.e. stay
    /// silent.
    fn accept_block(&mut self, block: Block) -> bool {
        if block.view != self.view {
            return false;
        }
        self.digest = Some(block.digest());
        self.block = Some(block);
        true
    }

    fn on_proposal(&mut self, block: Block) -> Vec<Output> {
        if self.block.is_some() {
            return Vec::new(); // duplicate, e.g. previous leader and root both forwarded
        }
        if !self.accept_block(block) {
            return Vec::new();
        }
        let mut out = vec![Output::Delivered];
        match self.role {
            Role::Leaf => {
                let sig = self.own_signature();
                let parent = self.tree.parent(self.id).expect("in tree").expect("leaf");
                out.push(Output::Send {
                    to: parent,
                    msg: Message::Vote(AggregateSignature::from(&sig)),
                });
            }
            Role::Internal => {
                let children: Vec<SignerId> = self.tree.children(self.id).expect("in tree").to_vec();
                for child in &children {
                    out.push(Output::Send {
                        to: *child,
                        msg: Message::Proposal(self.block.clone().expect("set above")),
                    });
                }
                if children.is_empty() {
                    out.extend(self.complete_subtree());
                } else {
                    out.push(Output::StartTimer {
                        kind: TimerKind::Aggregation,
                        after: self.timing.aggregation_timer(Role::Internal),
                    });
                }
            }
            Role::Root => {
                for internal in self.tree.internals().to_vec() {
                    out.push(Output::Send {
                        to: internal,
                        msg: Message::Proposal(self.block.clone().expect("set above")),
                    });
                }
                out.push(Output::StartTimer {
                    kind: TimerKind::Aggregation,
                    after: self.timing.aggregation_timer(Role::Root),
                });
            }
        }
        out
    }

    fn on_vote(&mut self, from: SignerId, agg: AggregateSignature) -> Vec<Output> {
        match self.role {
            Role::Internal => self.on_child_vote(from, agg),
            Role::Root => self.on_subtree_vote(from, agg),
            Role::Leaf => Vec::new(),
        }
    }

    fn on_child_vote(&mut self, from: SignerId, agg: AggregateSignature) -> Vec<Output> {
        let Some(digest) = self.digest else {
            return Vec::new(); // no block yet, nothing to verify against
        };
        if self.aggregation_done {
            return Vec::new(); // late vote; the child is caught by 2nd-chance
        }
        let children = self.tree.children(self.id).expect("in tree");
        if !children.contains(&from) {
            return Vec::new(); // unknown child
        }
        let expected = MultiplicityVector::from_entries([(from, 1)]);
        if !crate::sigagg::verify(&agg, &expected, digest) {
            return Vec::new(); // bad signature
        }
        self.collected.insert(from, agg);
        if self.collected.len() == children.len() {
            self.complete_subtree()
        } else {
            Vec::new()
        }
    }

    /// Aggregate collected singles: each child twice, self `1 + c` times.
    fn complete_subtree(&mut self) -> Vec<Output> {
        if self.aggregation_done {
            return Vec::new();
        }
        self.aggregation_done = true;
        let own = self.own_signature();
        let collected: Vec<(SignerId, AggregateSignature)> =
            self.collected.iter().map(|(k, v)| (*k, v.clone())).collect();
        let mut parts: Vec<(Part<'_>, u32)> =
            collected.iter().map(|(_, agg)| (Part::from(agg), 2)).collect();
        parts.push((Part::from(&own), 1 + collected.len() as u32));
        let agg = aggregate(&parts).expect("same digest by construction");
        self.subtree_agg = Some(agg.clone());

        let parent = self.tree.parent(self.id).expect("in tree").expect("internal");
        let mut out = vec![Output::Send {
            to: parent,
            msg: Message::Vote(agg.clone()),
        }];
        for (child, _) in collected {
            out.push(Output::Send {
                to: child,
                msg: Message::Ack(agg.clone()),
            });
        }
        out
    }

    /// Check a claimed subtree aggregate: the sender `1 + c` times and
    /// exactly `c` of its children twice, nothing else.
    fn subtree_shape_ok(&self, from: SignerId, agg: &AggregateSignature) -> bool {
        let Some(digest) = self.digest else {
            return false;
        };
        if agg.message() != digest {
            return false;
        }
        let children = match self.tree.children(from) {
            Ok(c) => c,
            Err(_) => return false,
        };
        let mut child_count = 0u32;
        for (signer, count) in agg.multiplicities().iter() {
            if signer == from {
                continue;
            }
            if !children.contains(&signer) || count != 2 {
                return false;
            }
            child_count += 1;
        }
        agg.multiplicities().count(from) == 1 + child_count
    }

    fn on_subtree_vote(&mut self, from: SignerId, agg: AggregateSignature) -> Vec<Output> {
        if self.finalized || !self.tree.internals().contains(&from) {
            return Vec::new();
        }
        if !self.subtree_shape_ok(from, &agg) {
            return Vec::new(); // inconsistent multiplicities: subtree treated as missing
        }
        self.subtrees.insert(from, agg.clone());
        let mut out = vec![Output::Send {
            to: from,
            msg: Message::Ack(agg),
        }];
        if !self.sc_sent && self.subtrees.len() == self.tree.internals().len() {
            out.extend(self.finalize_collection());
        }
        out
    }

    fn on_aggregation_timer(&mut self) -> Vec<Output> {
        match self.role {
            Role::Internal => self.complete_subtree(),
            Role::Root => self.finalize_collection(),
            Role::Leaf => Vec::new(),
        }
    }

    /// Root: stop waiting for subtrees. Emit the QC directly when nobody is
    /// missing (or the fallback is disabled); otherwise fan out 2nd-chance
    /// messages and collect replies for `second_chance_delta`.
    fn finalize_collection(&mut self) -> Vec<Output> {
        if self.finalized || self.sc_sent {
            return Vec::new();
        }
        let current = self.current_aggregate();
        let missing: Vec<SignerId> = (0..self.tree.n() as u32)
            .map(SignerId)
            .filter(|p| !current.multiplicities().contains(*p))
            .collect();
        if missing.is_empty() || self.no_second_chance {
            return self.assemble_qc();
        }
        self.sc_sent = true;
        let block = self.block.clone().expect("root delivered");
        let mut out: Vec<Output> = missing
            .iter()
            .map(|p| Output::Send {
                to: *p,
                msg: Message::SecondChance {
                    block: block.clone(),
                    current: current.multiplicities().clone(),
                },
            })
            .collect();
        self.sc_targets = missing.into_iter().collect();
        out.push(Output::StartTimer {
            kind: TimerKind::SecondChance,
            after: self.timing.second_chance_delta,
        });
        out
    }

    /// Own signature plus every accepted subtree aggregate, multiplicity 1
    /// each.
    fn current_aggregate(&mut self) -> AggregateSignature {
        let own = self.own_signature();
        let subtrees: Vec<AggregateSignature> = self.subtrees.values().cloned().collect();
        let mut parts: Vec<(Part<'_>, u32)> = vec![(Part::from(&own), 1)];
        parts.extend(subtrees.iter().map(|a| (Part::from(a), 1)));
        aggregate(&parts).expect("same digest by construction")
    }

    /// Validity of a 2nd-chance at this process: our signature must be
    /// missing, and the sender must show either a quorum, our parent's
    /// inclusion, or a block old enough that the tree path has clearly
    /// failed.
    pub fn second_chance_valid(
        &self,
        block: &Block,
        current: &MultiplicityVector,
        now: u64,
    ) -> bool {
        if current.contains(self.id) {
            return false;
        }
        if current.distinct_signers() >= quorum_size(self.tree.n()) {
            return true;
        }
        if let Ok(Some(parent)) = self.tree.parent(self.id) {
            if current.contains(parent) {
                return true;
            }
        }
        now.saturating_sub(block.timestamp) >= self.timing.t_valid
    }

    fn on_second_chance(
        &mut self,
        from: SignerId,
        block: Block,
        current: MultiplicityVector,
        now: u64,
    ) -> Vec<Output> {
        if self.role == Role::Root || from != self.tree.root() {
            return Vec::new();
        }
        if !self.second_chance_valid(&block, &current, now) {
            return Vec::new();
        }
        let mut out = Vec::new();
        if self.block.is_none() {
            if !self.accept_block(block) {
                return Vec::new();
            }
            out.push(Output::Delivered);
        }
        // Reply with the strongest proof of inclusion held: the parent's ack,
        // an own subtree aggregate, or a bare single.
        let reply = if let Some(ack) = &self.ack {
            ack.clone()
        } else if let Some(sub) = &self.subtree_agg {
            sub.clone()
        } else {
            AggregateSignature::from(&self.own_signature())
        };
        out.push(Output::Send {
            to: from,
            msg: Message::SecondChanceReply(reply),
        });
        out
    }

    fn on_ack(&mut self, from: SignerId, agg: AggregateSignature) -> Vec<Output> {
        if self.tree.parent(self.id).ok().flatten() != Some(from) {
            return Vec::new();
        }
        // An ack is proof of inclusion only if it actually contains us.
        if agg.contains(self.id) && self.ack.is_none() {
            self.ack = Some(agg);
        }
        Vec::new()
    }

    fn on_second_chance_reply(&mut self, from: SignerId, agg: AggregateSignature) -> Vec<Output> {
        if self.role != Role::Root || self.finalized || !self.sc_targets.contains(&from) {
            return Vec::new();
        }
        let Some(digest) = self.digest else {
            return Vec::new();
        };
        let single_ok = crate::sigagg::verify(
            &agg,
            &MultiplicityVector::from_entries([(from, 1)]),
            digest,
        );
        let subtree_ok = agg.contains(from)
            && self
                .tree
                .internals()
                .iter()
                .any(|i| agg.multiplicities().count(*i) > 0 && self.subtree_shape_ok(*i, &agg));
        if !single_ok && !subtree_ok {
            return Vec::new();
        }
        self.sc_replies.entry(from).or_insert(agg);
        if self.sc_replies.len() == self.sc_targets.len() {
            self.assemble_qc()
        } else {
            Vec::new()
        }
    }

    /// Combine subtree aggregates, 2nd-chance replies, and the root's own
    /// signature into the certificate. Overlapping aggregates are never
    /// merged: candidates are taken in deterministic order (subtrees before
    /// replies, more distinct signers first) and dropped entirely on any
    /// signer overlap.
    fn assemble_qc(&mut self) -> Vec<Output> {
        if self.finalized {
            return Vec::new();
        }
        self.finalized = true;
        let own = AggregateSignature::from(&self.own_signature());

        let mut candidates: Vec<(usize, SignerId, AggregateSignature)> = Vec::new();
        for (id, agg) in &self.subtrees {
            candidates.push((0, *id, agg.clone()));
        }
        for (id, agg) in &self.sc_replies {
            candidates.push((1, *id, agg.clone()));
        }
        candidates
            .sort_by_key(|(class, id, agg)| (*class, usize::MAX - agg.distinct_signers(), *id));

        let mut included: BTreeSet<SignerId> = BTreeSet::new();
        included.insert(self.id);
        let mut chosen: Vec<AggregateSignature> = Vec::new();
        for (_, _, agg) in candidates {
            if agg.multiplicities().iter().all(|(s, _)| !included.contains(&s)) {
                for (s, _) in agg.multiplicities().iter() {
                    included.insert(s);
                }
                chosen.push(agg);
            }
        }

        let mut parts: Vec<(Part<'_>, u32)> = vec![(Part::from(&own), 1)];
        parts.extend(chosen.iter().map(|a| (Part::from(a), 1)));
        let combined = aggregate(&parts).expect("same digest by construction");

        match QuorumCertificate::new(
            self.digest.expect("root delivered"),
            combined,
            self.view,
            self.tree.n(),
        ) {
            Ok(qc) => vec![Output::Qc(qc)],
            Err(_) => vec![Output::ViewFailure],
        }
    }
}

/// The previous leader's hand-off: create the next block and send it to the
/// root of the new tree and to every internal.
pub fn propose_block(
    parent_qc: &QuorumCertificate,
    view: u64,
    height: u64,
    payload: MessageDigest,
    timestamp: u64,
    tree: &TreeConfig,
) -> (Block, Vec<Output>) {
    let block = Block {
        height,
        view,
        parent_qc_digest: parent_qc.digest(),
        payload,
        timestamp,
    };
    let mut out = vec![Output::Send {
        to: tree.root(),
        msg: Message::Proposal(block.clone()),
    }];
    for internal in tree.internals() {
        out.push(Output::Send {
            to: *internal,
            msg: Message::Proposal(block.clone()),
        });
    }
    (block, out)
}
