//! Tree-structured execution of the divide-and-conquer rounds.
//!
//! Models a sensor network whose root is the base station: each round
//! the root broadcasts the current estimate down the tree, every node
//! computes the statistics of its own batch, and partial sums flow back
//! up with each node forwarding a single merged `(U, V, count)` block to
//! its parent. Payloads are counted in scalars: the packed symmetric
//! `V` plus `U` plus the count going up, the estimate going down. The
//! merged statistics are identical to the sequential aggregation up to
//! floating-point reassociation, whatever the tree shape.

use crate::batch_qr::{solve_qr, QrOptions};
use crate::error::{Error, Result};
use crate::inference::score_norm;
use crate::leqr::{
    bandwidth_schedule, compute_local_stats, guarded_round, uplink_payload_scalars, DcConfig,
    LocalStats,
};
use crate::types::{Bandwidth, Coefficients, Observation, QuantileLevel};

/// Deterministic topology families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyKind {
    /// Root with `n - 1` direct children.
    Star,
    /// Complete k-ary tree in breadth-first layout.
    BalancedKAry(usize),
    /// Single path rooted at node 0.
    Chain,
}

/// A rooted tree over `n` nodes; node 0 is the base station. Every node
/// holds exactly one batch.
#[derive(Debug, Clone)]
pub struct TreeTopology {
    parents: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    batch_assignment: Vec<usize>,
}

impl TreeTopology {
    /// Build one of the standard shapes with `n >= 1` nodes.
    pub fn build(kind: TopologyKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTopology("need at least one node".into()));
        }
        let parents: Vec<Option<usize>> = match kind {
            TopologyKind::Star => (0..n).map(|i| if i == 0 { None } else { Some(0) }).collect(),
            TopologyKind::Chain => (0..n).map(|i| i.checked_sub(1)).collect(),
            TopologyKind::BalancedKAry(k) => {
                if k < 2 {
                    return Err(Error::InvalidArity(k));
                }
                (0..n)
                    .map(|i| if i == 0 { None } else { Some((i - 1) / k) })
                    .collect()
            }
        };
        Self::from_parents(parents)
    }

    /// Build from explicit parent pointers; node 0 must be the unique
    /// root (`None`), every other node must point to a valid parent and
    /// be reachable from the root.
    pub fn from_parents(parents: Vec<Option<usize>>) -> Result<Self> {
        let n = parents.len();
        if n == 0 {
            return Err(Error::InvalidTopology("need at least one node".into()));
        }
        if parents[0].is_some() {
            return Err(Error::InvalidTopology("node 0 must be the root".into()));
        }
        let mut children = vec![Vec::new(); n];
        for (node, parent) in parents.iter().enumerate() {
            match parent {
                None if node != 0 => {
                    return Err(Error::InvalidTopology(format!(
                        "node {node} has no parent but is not the root"
                    )));
                }
                Some(p) if *p >= n => {
                    return Err(Error::InvalidTopology(format!(
                        "node {node} points to nonexistent parent {p}"
                    )));
                }
                Some(p) => children[*p].push(node),
                None => {}
            }
        }
        // Children in ascending id: the reduction order is part of the
        // contract (deterministic runs).
        for c in &mut children {
            c.sort_unstable();
        }
        // Reachability from the root doubles as the acyclicity check.
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut reached = 1usize;
        while let Some(node) = stack.pop() {
            for &c in &children[node] {
                if !seen[c] {
                    seen[c] = true;
                    reached += 1;
                    stack.push(c);
                }
            }
        }
        if reached != n {
            return Err(Error::InvalidTopology(
                "graph is not a single tree rooted at node 0".into(),
            ));
        }
        Ok(TreeTopology {
            parents,
            children,
            batch_assignment: (0..n).collect(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parents[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn batch_of(&self, node: usize) -> usize {
        self.batch_assignment[node]
    }

    /// Reassign batches to nodes; must be a permutation of `0..n`.
    pub fn with_assignment(mut self, assignment: Vec<usize>) -> Result<Self> {
        let n = self.node_count();
        if assignment.len() != n {
            return Err(Error::InvalidTopology("assignment length mismatch".into()));
        }
        let mut seen = vec![false; n];
        for &b in &assignment {
            if b >= n || seen[b] {
                return Err(Error::InvalidTopology(
                    "assignment must be a permutation of the batches".into(),
                ));
            }
            seen[b] = true;
        }
        self.batch_assignment = assignment;
        Ok(self)
    }

    /// Longest root-to-node path length.
    #[allow(clippy::needless_range_loop)]
    pub fn depth(&self) -> usize {
        let n = self.node_count();
        let mut depth = vec![0usize; n];
        let mut max = 0;
        // Parents in the standard shapes always precede children, but a
        // custom file may order nodes arbitrarily; walk up instead.
        for node in 0..n {
            let mut d = 0;
            let mut cur = node;
            while let Some(p) = self.parents[cur] {
                d += 1;
                cur = p;
            }
            depth[node] = d;
            max = max.max(d);
        }
        max
    }

    /// Nodes in post order (children before parents, ascending child
    /// ids): the uplink processing order.
    fn post_order(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.node_count());
        // Explicit stack with visited marker to avoid recursion depth
        // limits on chain topologies.
        let mut stack: Vec<(usize, bool)> = vec![(0, false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                out.push(node);
            } else {
                stack.push((node, true));
                for &c in self.children[node].iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        out
    }
}

/// Communication accounting for a simulated execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommStats {
    pub rounds: u32,
    /// One downlink and one uplink traversal per edge per round.
    pub messages: u64,
    pub uplink_scalars: u64,
    pub downlink_scalars: u64,
    pub depth: usize,
}

impl CommStats {
    fn zero(depth: usize) -> Self {
        CommStats {
            rounds: 0,
            messages: 0,
            uplink_scalars: 0,
            downlink_scalars: 0,
            depth,
        }
    }

    fn add_round(&mut self, nodes: usize, p_prime: usize) {
        let edges = nodes as u64 - 1;
        self.rounds += 1;
        self.messages += 2 * edges;
        self.uplink_scalars += edges * uplink_payload_scalars(p_prime);
        self.downlink_scalars += edges * p_prime as u64;
    }
}

/// One aggregation round over the tree: broadcast `beta0`, compute each
/// node's statistics, reduce bottom-up in deterministic child order.
pub fn simulate_dc_round(
    topology: &TreeTopology,
    batches: &[&[Observation]],
    beta0: &Coefficients,
    h: Bandwidth,
    tau: QuantileLevel,
) -> Result<(LocalStats, CommStats)> {
    let n = topology.node_count();
    if batches.len() != n {
        return Err(Error::InvalidTopology(format!(
            "{} batches for {} nodes",
            batches.len(),
            n
        )));
    }
    let p_prime = beta0.dim();
    let mut subtotals: Vec<Option<LocalStats>> = vec![None; n];
    for node in topology.post_order() {
        let batch = batches[topology.batch_of(node)];
        let mut acc = compute_local_stats(batch, beta0, h, tau);
        for &child in topology.children(node) {
            let child_stats = subtotals[child].take().expect("post order");
            acc.merge_into(&child_stats)
                .map_err(|e| Error::AtNode {
                    node,
                    source: Box::new(e),
                })?;
        }
        subtotals[node] = Some(acc);
    }
    let merged = subtotals[0].take().expect("root processed last");
    let mut comm = CommStats::zero(topology.depth());
    comm.add_round(n, p_prime);
    Ok((merged, comm))
}

/// Full divide-and-conquer execution over the tree.
///
/// The root solves the initial fit on its own batch, then runs
/// `cfg.q` broadcast/reduce rounds. The estimate matches the sequential
/// driver on the same batches to floating-point reassociation; the
/// communication totals are exact integer arithmetic.
pub fn simulate_dc_leqr(
    topology: &TreeTopology,
    batches: &[&[Observation]],
    cfg: &DcConfig,
) -> Result<(Coefficients, CommStats)> {
    if cfg.adaptive_grid.is_some() {
        return Err(Error::InvalidConfig(
            "adaptive bandwidth selection is not modeled in the network simulation".into(),
        ));
    }
    let n_nodes = topology.node_count();
    if batches.len() != n_nodes {
        return Err(Error::InvalidTopology(format!(
            "{} batches for {} nodes",
            batches.len(),
            n_nodes
        )));
    }
    let n_total: usize = batches.iter().map(|b| b.len()).sum();
    if batches.iter().any(|b| b.is_empty()) {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let p = batches[0][0].dim();

    let mut beta = match &cfg.initial {
        Some(b) => b.clone(),
        None => {
            let root_batch = batches[topology.batch_of(0)];
            solve_qr(root_batch, cfg.tau, &QrOptions::default())?
        }
    };
    let mut comm = CommStats::zero(topology.depth());
    // Mirror of the sequential driver round-for-round, including the
    // bandwidth-doubling stability fallback; every fallback attempt is a
    // real broadcast-and-reduce pass, so it counts toward the totals.
    let mut prev_score = score_norm(batches, &beta, cfg.tau);
    let score_floor = crate::leqr::score_noise_floor(batches, cfg.tau);
    for g in 1..=cfg.q {
        let base_h = match &cfg.bandwidths {
            Some(hs) => hs[(g - 1) as usize],
            None => bandwidth_schedule(g, p, cfg.m, n_total, 1.0)?.value(),
        };
        let comm_cell = std::cell::RefCell::new(&mut comm);
        let outcome = guarded_round(
            |h, t| {
                let (merged, round_comm) = simulate_dc_round(topology, batches, &beta, h, t)?;
                let comm = &mut *comm_cell.borrow_mut();
                comm.rounds += round_comm.rounds;
                comm.messages += round_comm.messages;
                comm.uplink_scalars += round_comm.uplink_scalars;
                comm.downlink_scalars += round_comm.downlink_scalars;
                Ok(merged)
            },
            |candidate| score_norm(batches, candidate, cfg.tau),
            &beta,
            prev_score,
            score_floor,
            cfg.scale_c * base_h,
            cfg.tau,
        )
        .map_err(|e| e.at_round(g))?;
        beta = outcome.beta;
        prev_score = outcome.score;
    }
    Ok((beta, comm))
}
