//! Probabilistic prefix trie over observed sequences.
//!
//! Nodes carry visit counts, a bounded reservoir of (sequence, output)
//! observations at the deepest node of each insertion, and optional expert
//! links. Probabilities are smoothed conditional frequencies along the path:
//! `(count + α) / (parent_count + α·|V|)`. The trie distance between two
//! sequences is the negative log probability of their longest common prefix;
//! an empty common prefix maps to +∞ so unrelated sequences never match.
//!
//! Single writer, many readers: insertion takes `&mut self`, queries `&self`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::{Sequence, TokenId};

pub type NodeId = usize;
pub type ExpertId = u32;

const ROOT: NodeId = 0;

#[derive(Debug, Clone)]
pub struct TrieNode {
    pub depth: usize,
    /// Edge token from the parent (unused at the root).
    pub token: TokenId,
    pub parent: Option<NodeId>,
    /// Insertions passing through this node.
    pub count: u64,
    /// Insertions terminating exactly here.
    pub terminal_count: u64,
    /// Child edges sorted by token.
    children: Vec<(TokenId, NodeId)>,
    /// Reservoir of observations stored at this node.
    pub samples: Vec<(Sequence, Vec<f64>)>,
    samples_seen: u64,
    /// Expert anchored at this node, if any.
    pub expert: Option<ExpertId>,
    /// Experts anchored anywhere in this subtree, ascending by id.
    pub subtree_experts: Vec<ExpertId>,
}

impl TrieNode {
    fn new(depth: usize, token: TokenId, parent: Option<NodeId>) -> Self {
        TrieNode {
            depth,
            token,
            parent,
            count: 0,
            terminal_count: 0,
            children: Vec::new(),
            samples: Vec::new(),
            samples_seen: 0,
            expert: None,
            subtree_experts: Vec::new(),
        }
    }

    pub fn children(&self) -> &[(TokenId, NodeId)] {
        &self.children
    }

    pub fn child(&self, token: TokenId) -> Option<NodeId> {
        self.children
            .binary_search_by_key(&token, |(t, _)| *t)
            .ok()
            .map(|i| self.children[i].1)
    }
}

#[derive(Debug, Clone)]
pub struct Trie {
    nodes: Vec<TrieNode>,
    /// Total insertions (root count).
    pub total: u64,
    /// Smoothing constant; 0 = pure empirical.
    pub alpha: f64,
    pub vocab_size: u32,
    /// Reservoir capacity per node.
    pub s_max: usize,
    rng: ChaCha8Rng,
}

/// Frontier extraction result: the antichain of maximal heavy nodes.
#[derive(Debug, Clone)]
pub struct Frontier {
    pub nodes: Vec<NodeId>,
    /// Probability mass covered by the frontier.
    pub coverage: f64,
    /// Markov bound `1 - H/log2(1/ε)` the coverage is checked against.
    pub coverage_bound: f64,
    /// Empirical entropy of the terminal (full-sequence) distribution.
    pub empirical_entropy: f64,
}

impl Trie {
    pub fn new(vocab_size: u32, alpha: f64, s_max: usize, seed: u64) -> Self {
        Trie {
            nodes: vec![TrieNode::new(0, 0, None)],
            total: 0,
            alpha,
            vocab_size,
            s_max,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn node(&self, id: NodeId) -> &TrieNode {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut TrieNode {
        &mut self.nodes[id]
    }

    pub fn root(&self) -> NodeId {
        ROOT
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Insert one observation; returns the deepest (terminal) node.
    pub fn insert(&mut self, seq: &Sequence, output: &[f64]) -> NodeId {
        self.total += 1;
        self.nodes[ROOT].count += 1;
        let mut cur = ROOT;
        for &tok in seq.tokens() {
            let next = match self.nodes[cur].child(tok) {
                Some(id) => id,
                None => {
                    let id = self.nodes.len();
                    let depth = self.nodes[cur].depth + 1;
                    self.nodes.push(TrieNode::new(depth, tok, Some(cur)));
                    let pos = self.nodes[cur]
                        .children
                        .binary_search_by_key(&tok, |(t, _)| *t)
                        .unwrap_err();
                    self.nodes[cur].children.insert(pos, (tok, id));
                    id
                }
            };
            self.nodes[next].count += 1;
            cur = next;
        }
        self.nodes[cur].terminal_count += 1;

        // Reservoir store at the terminal node.
        let node = &mut self.nodes[cur];
        node.samples_seen += 1;
        if node.samples.len() < self.s_max {
            node.samples.push((seq.clone(), output.to_vec()));
        } else if self.s_max > 0 {
            let j = self.rng.gen_range(0..node.samples_seen);
            if (j as usize) < self.s_max {
                self.nodes[cur].samples[j as usize] = (seq.clone(), output.to_vec());
            }
        }
        cur
    }

    /// Deepest node whose path matches `prefix` exactly.
    pub fn find(&self, prefix: &[TokenId]) -> Option<NodeId> {
        let mut cur = ROOT;
        for &tok in prefix {
            cur = self.nodes[cur].child(tok)?;
        }
        Some(cur)
    }

    fn smoothed_conditional(&self, parent_count: u64, child_count: u64) -> f64 {
        let a = self.alpha;
        let denom = parent_count as f64 + a * self.vocab_size as f64;
        if denom == 0.0 {
            return 0.0;
        }
        (child_count as f64 + a) / denom
    }

    /// Smoothed path probability of a prefix; empty prefix is 1.
    pub fn prob(&self, prefix: &[TokenId]) -> f64 {
        let mut p = 1.0;
        let mut cur = Some(ROOT);
        for &tok in prefix {
            match cur {
                Some(id) => {
                    let parent_count = self.nodes[id].count;
                    let (child_count, next) = match self.nodes[id].child(tok) {
                        Some(c) => (self.nodes[c].count, Some(c)),
                        None => (0, None),
                    };
                    p *= self.smoothed_conditional(parent_count, child_count);
                    cur = next;
                }
                // Off-trie continuation: zero counts all the way down.
                None => p *= self.smoothed_conditional(0, 0),
            }
            if p == 0.0 {
                return 0.0;
            }
        }
        p
    }

    /// Smoothed path probability of an existing node.
    pub fn node_prob(&self, id: NodeId) -> f64 {
        let mut factors = Vec::new();
        let mut cur = id;
        while let Some(parent) = self.nodes[cur].parent {
            factors.push(self.smoothed_conditional(self.nodes[parent].count, self.nodes[cur].count));
            cur = parent;
        }
        factors.iter().rev().product()
    }

    /// Token path from the root to a node.
    pub fn path(&self, id: NodeId) -> Vec<TokenId> {
        let mut toks = Vec::with_capacity(self.nodes[id].depth);
        let mut cur = id;
        while let Some(parent) = self.nodes[cur].parent {
            toks.push(self.nodes[cur].token);
            cur = parent;
        }
        toks.reverse();
        toks
    }

    /// Nodes along a sequence's path (excluding the root) with cumulative
    /// smoothed probabilities, stopping at the deepest existing node.
    pub fn path_with_probs(&self, seq: &Sequence) -> Vec<(NodeId, f64)> {
        let mut out = Vec::new();
        let mut cur = ROOT;
        let mut p = 1.0;
        for &tok in seq.tokens() {
            match self.nodes[cur].child(tok) {
                Some(next) => {
                    p *= self.smoothed_conditional(self.nodes[cur].count, self.nodes[next].count);
                    out.push((next, p));
                    cur = next;
                }
                None => break,
            }
        }
        out
    }

    /// Trie distance: −log2 of the common-prefix probability; +∞ when the
    /// common prefix is empty or has zero estimated probability.
    pub fn distance(&self, a: &Sequence, b: &Sequence) -> f64 {
        let shared = a.common_prefix_len(b);
        if shared == 0 {
            return f64::INFINITY;
        }
        let p = self.prob(&a.tokens()[..shared]);
        if p <= 0.0 {
            f64::INFINITY
        } else {
            -p.log2()
        }
    }

    /// All nodes with smoothed path probability ≥ `eps` (root excluded).
    pub fn heavy_nodes(&self, eps: f64) -> Result<Vec<NodeId>> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(Error::Config(format!("heavy-node threshold {eps} outside (0, 1]")));
        }
        let mut out = Vec::new();
        // Path probability is non-increasing with depth, so prune on descent.
        let mut stack: Vec<(NodeId, f64)> = vec![(ROOT, 1.0)];
        while let Some((id, p)) = stack.pop() {
            if p < eps {
                continue;
            }
            if id != ROOT {
                out.push(id);
            }
            for &(_, child) in &self.nodes[id].children {
                let cp = p * self.smoothed_conditional(self.nodes[id].count, self.nodes[child].count);
                stack.push((child, cp));
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// Antichain of maximal heavy nodes (heavy nodes without a heavy child)
    /// plus coverage and its Markov bound.
    pub fn symbolic_vocab(&self, eps: f64) -> Result<Frontier> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Config(format!("frontier threshold {eps} outside (0, 1)")));
        }
        let heavy = self.heavy_nodes(eps)?;
        let heavy_set: std::collections::HashSet<NodeId> = heavy.iter().copied().collect();
        let mut nodes = Vec::new();
        let mut coverage = 0.0;
        for &id in &heavy {
            let has_heavy_child = self.nodes[id]
                .children
                .iter()
                .any(|&(_, c)| heavy_set.contains(&c));
            if !has_heavy_child {
                nodes.push(id);
                coverage += self.node_prob(id);
            }
        }
        let entropy = self.sequence_entropy();
        let coverage_bound = 1.0 - entropy / (1.0 / eps).log2();
        Ok(Frontier {
            nodes,
            coverage,
            coverage_bound,
            empirical_entropy: entropy,
        })
    }

    /// Empirical Shannon entropy of the terminal (full-sequence) distribution.
    pub fn sequence_entropy(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let n = self.total as f64;
        self.nodes
            .iter()
            .filter(|node| node.terminal_count > 0)
            .map(|node| {
                let p = node.terminal_count as f64 / n;
                -p * p.log2()
            })
            .sum()
    }

    /// Surprisal of `seq[position]` given the preceding prefix; +∞ for an
    /// unseen continuation with α = 0.
    pub fn surprisal(&self, seq: &Sequence, position: usize) -> Result<f64> {
        if position >= seq.len() {
            return Err(Error::Config(format!(
                "position {position} out of range for length {}",
                seq.len()
            )));
        }
        let prefix = &seq.tokens()[..position];
        let tok = seq.tokens()[position];
        let (parent_count, child_count) = match self.find(prefix) {
            Some(id) => {
                let cc = self.nodes[id].child(tok).map_or(0, |c| self.nodes[c].count);
                (self.nodes[id].count, cc)
            }
            None => (0, 0),
        };
        let p = self.smoothed_conditional(parent_count, child_count);
        if p <= 0.0 {
            Ok(f64::INFINITY)
        } else {
            Ok(-p.log2())
        }
    }

    /// Shannon entropy of the smoothed next-token distribution at a prefix.
    pub fn conditional_entropy(&self, prefix: &[TokenId]) -> f64 {
        match self.find(prefix) {
            Some(id) => self.node_conditional_entropy(id),
            None => {
                if self.alpha > 0.0 {
                    (self.vocab_size as f64).log2()
                } else {
                    0.0
                }
            }
        }
    }

    /// Entropy of the next-token distribution at a node, normalized over the
    /// continuing (non-terminal) mass.
    pub fn node_conditional_entropy(&self, id: NodeId) -> f64 {
        let node = &self.nodes[id];
        let continuing = (node.count - node.terminal_count) as f64;
        let denom = continuing + self.alpha * self.vocab_size as f64;
        if denom <= 0.0 {
            return 0.0;
        }
        let mut h = 0.0;
        let mut seen = 0u32;
        for &(_, c) in &node.children {
            let q = (self.nodes[c].count as f64 + self.alpha) / denom;
            if q > 0.0 {
                h -= q * q.log2();
            }
            seen += 1;
        }
        if self.alpha > 0.0 {
            let unseen = (self.vocab_size - seen) as f64;
            let q = self.alpha / denom;
            if q > 0.0 && unseen > 0.0 {
                h -= unseen * q * q.log2();
            }
        }
        h
    }

    /// Count-weighted conditional entropy at absolute depth `depth` across a
    /// node's subtree; `None` when the subtree has no mass at that depth.
    pub fn subtree_position_entropy(&self, id: NodeId, depth: usize) -> Option<f64> {
        let mut acc = 0.0;
        let mut weight = 0.0;
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            let node = &self.nodes[cur];
            if node.depth == depth {
                let w = (node.count - node.terminal_count) as f64;
                if w > 0.0 {
                    acc += w * self.node_conditional_entropy(cur);
                    weight += w;
                }
                continue;
            }
            for &(_, c) in &node.children {
                stack.push(c);
            }
        }
        if weight > 0.0 {
            Some(acc / weight)
        } else {
            None
        }
    }

    /// Greatest depth reached inside a subtree.
    pub fn subtree_max_depth(&self, id: NodeId) -> usize {
        let mut max_depth = self.nodes[id].depth;
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            max_depth = max_depth.max(self.nodes[cur].depth);
            for &(_, c) in &self.nodes[cur].children {
                stack.push(c);
            }
        }
        max_depth
    }

    /// Collect stored observations across a subtree, capped at `cap`.
    pub fn subtree_samples(&self, id: NodeId, cap: usize) -> Vec<(Sequence, Vec<f64>)> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            for s in &self.nodes[cur].samples {
                if out.len() >= cap {
                    return out;
                }
                out.push(s.clone());
            }
            for &(_, c) in &self.nodes[cur].children {
                stack.push(c);
            }
        }
        out
    }

    /// Anchor an expert at a node and register it along the root path.
    pub fn link_expert(&mut self, id: NodeId, expert: ExpertId) {
        self.nodes[id].expert = Some(expert);
        let mut cur = Some(id);
        while let Some(c) = cur {
            // ids are assigned in creation order, so pushing keeps the list sorted
            self.nodes[c].subtree_experts.push(expert);
            cur = self.nodes[c].parent;
        }
    }

    /// Count-conservation violations: node count must equal the sum of child
    /// counts plus the terminal count.
    pub fn check_count_conservation(&self) -> Vec<NodeId> {
        let mut bad = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            let child_sum: u64 = node.children.iter().map(|&(_, c)| self.nodes[c].count).sum();
            if node.count != child_sum + node.terminal_count {
                bad.push(id);
            }
        }
        bad
    }

    /// Line-oriented dump: one node per line (depth, path, count, expert id),
    /// depth-first with children in token order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        self.dump_rec(ROOT, &mut Vec::new(), &mut out);
        out
    }

    fn dump_rec(&self, id: NodeId, path: &mut Vec<TokenId>, out: &mut String) {
        let node = &self.nodes[id];
        let path_str = if path.is_empty() {
            "-".to_string()
        } else {
            path.iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let expert = node
            .expert
            .map(|e| e.to_string())
            .unwrap_or_else(|| "-".to_string());
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            node.depth, path_str, node.count, expert
        ));
        for &(tok, c) in &node.children {
            path.push(tok);
            self.dump_rec(c, path, out);
            path.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(tokens: &[TokenId]) -> Sequence {
        Sequence::new(tokens.to_vec())
    }

    fn empty_output() -> Vec<f64> {
        vec![0.0]
    }

    #[test]
    fn single_insert_has_probability_one() {
        let mut t = Trie::new(32, 0.0, 4, 1);
        let s = seq(&[3, 7, 11]);
        t.insert(&s, &empty_output());
        assert_eq!(t.prob(s.tokens()), 1.0);
        assert_eq!(t.prob(&[]), 1.0);
    }

    #[test]
    fn equal_counts_split_first_token_mass() {
        let mut t = Trie::new(32, 0.0, 4, 1);
        for _ in 0..5 {
            t.insert(&seq(&[1, 2]), &empty_output());
            t.insert(&seq(&[9, 4]), &empty_output());
        }
        assert_eq!(t.prob(&[1]), 0.5);
        assert_eq!(t.prob(&[9]), 0.5);
    }

    #[test]
    fn unseen_token_at_root_has_zero_probability() {
        let mut t = Trie::new(32, 0.0, 4, 1);
        t.insert(&seq(&[1]), &empty_output());
        assert_eq!(t.prob(&[2]), 0.0);
        assert_eq!(t.distance(&seq(&[2, 2]), &seq(&[2, 3])), f64::INFINITY);
    }

    #[test]
    fn hand_built_three_sequence_fractions() {
        // 3 inserts: [1,2] twice, [1,3] once. P(1) = 1, P(1,2) = 2/3.
        let mut t = Trie::new(8, 0.0, 4, 1);
        t.insert(&seq(&[1, 2]), &empty_output());
        t.insert(&seq(&[1, 2]), &empty_output());
        t.insert(&seq(&[1, 3]), &empty_output());
        assert_eq!(t.prob(&[1]), 1.0);
        assert!((t.prob(&[1, 2]) - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.prob(&[1, 3]) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empirical_heavy_prefixes_within_three_sigma() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12345);
        let mut t = Trie::new(8, 0.0, 1, 1);
        let n = 10_000usize;
        let p_true = 1.0 / 8.0;
        for _ in 0..n {
            let first = rng.gen_range(0..8u32);
            t.insert(&seq(&[first, (first + 1) % 8]), &empty_output());
        }
        let sigma = (p_true * (1.0 - p_true) / n as f64).sqrt();
        for first in 0..8u32 {
            let p_hat = t.prob(&[first]);
            assert!(
                (p_hat - p_true).abs() <= 3.0 * sigma,
                "token {first}: {p_hat} vs {p_true} ± {}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn self_distance_is_path_surprisal() {
        let mut t = Trie::new(8, 0.0, 4, 1);
        for tok in [0u32, 1, 2, 3] {
            t.insert(&seq(&[tok, 7]), &empty_output());
        }
        let s = seq(&[0, 7]);
        // P̂(s) = 1/4 → 2 bits.
        assert!((t.distance(&s, &s) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn distance_is_symmetric() {
        let mut t = Trie::new(8, 0.0, 4, 1);
        t.insert(&seq(&[1, 2, 3]), &empty_output());
        t.insert(&seq(&[1, 4, 5]), &empty_output());
        let a = seq(&[1, 2, 3]);
        let b = seq(&[1, 4, 5]);
        assert_eq!(t.distance(&a, &b), t.distance(&b, &a));
        assert!(t.distance(&a, &b).is_finite());
    }

    #[test]
    fn ultrametric_on_sampled_distinct_triples() {
        use rand::{Rng, SeedableRng};
        // Distinct fixed-length-2 sequences: pairwise common prefixes sit at
        // depth ≤ 1, where the strong triangle inequality holds. Self-pairs
        // (inflated self-distance) are excluded by construction.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let mut t = Trie::new(16, 0.0, 1, 1);
        let support: Vec<Sequence> = (0..64u32).map(|r| seq(&[r / 16, r % 16])).collect();
        for _ in 0..5000 {
            let s = &support[rng.gen_range(0..support.len())];
            t.insert(s, &empty_output());
        }
        let mut checked = 0;
        while checked < 1000 {
            let i = rng.gen_range(0..support.len());
            let j = rng.gen_range(0..support.len());
            let k = rng.gen_range(0..support.len());
            if i == j || j == k || i == k {
                continue;
            }
            let (a, b, c) = (&support[i], &support[j], &support[k]);
            let dab = t.distance(a, b);
            let dbc = t.distance(b, c);
            let dac = t.distance(a, c);
            assert!(
                dac <= dab.max(dbc) + 1e-12,
                "strong triangle violated: {dac} > max({dab}, {dbc})"
            );
            checked += 1;
        }
    }

    #[test]
    fn heavy_nodes_threshold_one_keeps_only_sure_path() {
        let mut t = Trie::new(8, 0.0, 4, 1);
        for _ in 0..10 {
            t.insert(&seq(&[2, 5]), &empty_output());
        }
        let heavy = t.heavy_nodes(1.0).unwrap();
        // Only the single repeated path qualifies at ε = 1.
        assert_eq!(heavy.len(), 2);
        t.insert(&seq(&[3, 3]), &empty_output());
        assert!(t.heavy_nodes(1.0).unwrap().is_empty());
    }

    #[test]
    fn uniform_eight_leaves_are_exactly_heavy() {
        let mut t = Trie::new(8, 0.0, 4, 1);
        for round in 0..4 {
            let _ = round;
            for first in 0..8u32 {
                t.insert(&seq(&[first, 0]), &empty_output());
            }
        }
        let heavy = t.heavy_nodes(1.0 / 8.0).unwrap();
        // 8 first-token nodes and 8 leaves below them.
        assert_eq!(heavy.len(), 16);
    }

    #[test]
    fn frontier_count_bound_holds() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for eps in [0.5, 0.25, 0.1, 0.03] {
            let mut t = Trie::new(16, 0.0, 1, 1);
            for _ in 0..3000 {
                let a = rng.gen_range(0..16u32);
                let b = rng.gen_range(0..4u32);
                t.insert(&seq(&[a, b]), &empty_output());
            }
            let f = t.symbolic_vocab(eps).unwrap();
            assert!(
                f.nodes.len() as f64 <= (1.0 / eps).floor(),
                "frontier {} exceeds {}",
                f.nodes.len(),
                (1.0 / eps).floor()
            );
            assert!(f.coverage >= f.coverage_bound - 1e-9);
        }
    }

    #[test]
    fn frontier_single_sequence_covers_everything() {
        let mut t = Trie::new(8, 0.0, 4, 1);
        for _ in 0..10 {
            t.insert(&seq(&[1, 2, 3]), &empty_output());
        }
        let f = t.symbolic_vocab(0.5).unwrap();
        assert_eq!(f.nodes.len(), 1);
        assert_eq!(t.node(f.nodes[0]).depth, 3);
        assert!((f.coverage - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frontier_is_an_antichain() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let mut t = Trie::new(8, 0.0, 1, 1);
        for _ in 0..2000 {
            let len = rng.gen_range(1..=4usize);
            let s: Vec<u32> = (0..len).map(|_| rng.gen_range(0..8)).collect();
            t.insert(&seq(&s), &empty_output());
        }
        let f = t.symbolic_vocab(0.05).unwrap();
        for &a in &f.nodes {
            for &b in &f.nodes {
                if a == b {
                    continue;
                }
                let pa = t.path(a);
                let pb = t.path(b);
                let shared = pa.iter().zip(&pb).take_while(|(x, y)| x == y).count();
                assert!(
                    shared < pa.len().min(pb.len()),
                    "frontier nodes {a} and {b} are prefix-comparable"
                );
            }
        }
    }

    #[test]
    fn zipf_frontier_covers_most_mass_at_top_1000_scale() {
        use crate::workload::{sample_with_vocab, Source, SourceSpec};
        let spec = SourceSpec::Zipf {
            m: 10_000,
            s: 1.5,
            seq_len: 3,
        };
        let mut src = Source::new(spec, 77).unwrap();
        let mut t = Trie::new(32, 0.0, 1, 1);
        let n = 200_000usize;
        for _ in 0..n {
            t.insert(&sample_with_vocab(&mut src, 32), &empty_output());
        }
        // Threshold at the analytic mass of rank 1000 puts the frontier near
        // the top-1000 sequences.
        let z: f64 = (1..=10_000).map(|r| (r as f64).powf(-1.5)).sum();
        let eps = 1000f64.powf(-1.5) / z;
        let f = t.symbolic_vocab(eps).unwrap();
        assert!(
            f.nodes.len() as f64 <= (1.0 / eps).floor(),
            "frontier {} above count bound",
            f.nodes.len()
        );
        assert!(
            f.coverage > 0.95,
            "frontier of {} nodes covers only {}",
            f.nodes.len(),
            f.coverage
        );
        assert!(f.coverage >= f.coverage_bound - 1e-9);
    }

    #[test]
    fn deterministic_continuation_has_zero_surprisal() {
        let mut t = Trie::new(8, 0.0, 4, 1);
        for _ in 0..5 {
            t.insert(&seq(&[1, 2, 3]), &empty_output());
        }
        assert_eq!(t.surprisal(&seq(&[1, 2, 3]), 1).unwrap(), 0.0);
        assert_eq!(t.conditional_entropy(&[1]), 0.0);
    }

    #[test]
    fn uniform_four_way_branch_has_two_bits() {
        let mut t = Trie::new(8, 0.0, 4, 1);
        for b in 0..4u32 {
            t.insert(&seq(&[1, b]), &empty_output());
        }
        assert!((t.conditional_entropy(&[1]) - 2.0).abs() < 1e-12);
        assert!((t.surprisal(&seq(&[1, 3]), 1).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unseen_continuation_is_infinite_surprisal() {
        let mut t = Trie::new(8, 0.0, 4, 1);
        t.insert(&seq(&[1, 2]), &empty_output());
        assert_eq!(t.surprisal(&seq(&[1, 5]), 1).unwrap(), f64::INFINITY);
    }

    #[test]
    fn trie_entropy_matches_analytic_source_at_n_100k() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let mut t = Trie::new(64, 0.0, 1, 1);
        for _ in 0..100_000 {
            let r = rng.gen_range(0..64u32);
            t.insert(&seq(&[r, r % 8]), &empty_output());
        }
        let analytic = 6.0;
        assert!(
            (t.sequence_entropy() - analytic).abs() < 0.05,
            "entropy {} vs {analytic}",
            t.sequence_entropy()
        );
    }

    #[test]
    fn prob_monotone_along_paths_and_counts_conserved() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let mut t = Trie::new(8, 0.0, 2, 9);
        for _ in 0..500 {
            let len = rng.gen_range(1..=5usize);
            let s: Vec<u32> = (0..len).map(|_| rng.gen_range(0..8)).collect();
            t.insert(&seq(&s), &[1.0, 2.0]);
        }
        assert!(t.check_count_conservation().is_empty());
        for id in 0..t.len() {
            if let Some(parent) = t.node(id).parent {
                assert!(t.node_prob(id) <= t.node_prob(parent) + 1e-15);
            }
        }
    }

    #[test]
    fn reservoir_respects_capacity() {
        let mut t = Trie::new(8, 0.0, 3, 9);
        let s = seq(&[4, 4]);
        for i in 0..50 {
            t.insert(&s, &[i as f64]);
        }
        let id = t.find(s.tokens()).unwrap();
        assert_eq!(t.node(id).samples.len(), 3);
        assert_eq!(t.node(id).count, 50);
    }

    #[test]
    fn dump_is_deterministic_and_line_oriented() {
        let mut t = Trie::new(8, 0.0, 2, 9);
        t.insert(&seq(&[2, 1]), &empty_output());
        t.insert(&seq(&[1, 3]), &empty_output());
        let d1 = t.dump();
        let d2 = t.dump();
        assert_eq!(d1, d2);
        assert_eq!(d1.lines().count(), 5); // root + 4 nodes
        let first = d1.lines().next().unwrap();
        assert_eq!(first, "0\t-\t2\t-");
    }

    #[test]
    fn smoothing_gives_unseen_tokens_mass() {
        let mut t = Trie::new(4, 1.0, 2, 9);
        t.insert(&seq(&[0]), &empty_output());
        // (0 + 1) / (1 + 1·4) for an unseen first token.
        assert!((t.prob(&[3]) - 0.2).abs() < 1e-15);
        assert!(t.conditional_entropy(&[]) > 0.0);
    }
}
