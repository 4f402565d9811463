//! Combinatorics of the compactified configuration space: the cell
//! decomposition indexed by ordered trees of height d with n leaves at the
//! bottom level, the binomial boundary coefficients of its top chain
//! groups, and the gcd test detecting the prime-power dichotomy.

use num_bigint::BigInt;
use num_integer::Integer;
use std::collections::BTreeMap;
use thiserror::Error;

/// Enumeration bounds; the shape count grows like 3^n already at d = 3.
pub const MAX_LEAVES: usize = 8;
pub const MAX_HEIGHT: usize = 3;
/// Materializing labeled trees multiplies shape counts by n!.
pub const MAX_LABELED_LEAVES: usize = 6;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("enumeration bounds exceeded: need 1 <= n <= {MAX_LEAVES}, 1 <= d <= {MAX_HEIGHT} (labeled: n <= {MAX_LABELED_LEAVES}), got n = {n}, d = {d}")]
    BoundsExceeded { n: usize, d: usize },
    #[error("boundary coefficient needs 0 < n1 < n, got n1 = {n1}, n = {n}")]
    BoundaryIndexOutOfRange { n: usize, n1: usize },
    #[error("obstruction is defined for n >= 2, got {0}")]
    ObstructionRange(usize),
}

/// Node of an ordered tree; children are linearly ordered, leaves have none.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub children: Vec<TreeNode>,
}

impl TreeNode {
    fn leaf() -> Self {
        TreeNode { children: Vec::new() }
    }

    pub fn vertex_count(&self) -> usize {
        1 + self.children.iter().map(TreeNode::vertex_count).sum::<usize>()
    }

    pub fn leaf_count(&self) -> usize {
        if self.children.is_empty() {
            1
        } else {
            self.children.iter().map(TreeNode::leaf_count).sum()
        }
    }
}

/// A cell of the decomposition: an ordered tree of fixed height with all
/// leaves at the bottom level, optionally carrying a leaf labeling (the
/// labels, read left to right, are a permutation of 1..=n).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledTree {
    pub root: TreeNode,
    pub labels: Option<Vec<usize>>,
}

impl LabeledTree {
    /// Dimension of the corresponding cell: vertex count minus one.
    pub fn dimension(&self) -> usize {
        self.root.vertex_count() - 1
    }

    pub fn leaf_count(&self) -> usize {
        self.root.leaf_count()
    }
}

/// All ordered trees of height exactly `depth` with `n` leaves at the
/// bottom level.
fn shapes(n: usize, depth: usize) -> Vec<TreeNode> {
    if depth == 0 {
        return if n == 1 { vec![TreeNode::leaf()] } else { Vec::new() };
    }
    let mut out = Vec::new();
    for composition in compositions(n) {
        // ordered choice of a subtree per child
        let child_options: Vec<Vec<TreeNode>> =
            composition.iter().map(|&part| shapes(part, depth - 1)).collect();
        if child_options.iter().any(Vec::is_empty) {
            continue;
        }
        let mut partial: Vec<Vec<TreeNode>> = vec![Vec::new()];
        for options in &child_options {
            let mut next = Vec::with_capacity(partial.len() * options.len());
            for prefix in &partial {
                for option in options {
                    let mut children = prefix.clone();
                    children.push(option.clone());
                    next.push(children);
                }
            }
            partial = next;
        }
        out.extend(partial.into_iter().map(|children| TreeNode { children }));
    }
    out
}

/// Ordered compositions of n into positive parts.
fn compositions(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for first in 1..=n {
        for mut rest in compositions(n - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        let mut next = Vec::new();
        for p in &out {
            let remaining = (1..=n).filter(|x| !p.contains(x));
            for x in remaining {
                let mut q = p.clone();
                q.push(x);
                next.push(q);
            }
        }
        out = next;
    }
    out
}

/// Enumerates the cells of the decomposition for n points in dimension d,
/// grouped by cell dimension. With `labeled = true` every leaf labeling is
/// materialized (n! per shape), otherwise labels are omitted.
pub fn enumerate_trees(
    n: usize,
    d: usize,
    labeled: bool,
) -> Result<BTreeMap<usize, Vec<LabeledTree>>, TopologyError> {
    if n < 1 || n > MAX_LEAVES || d < 1 || d > MAX_HEIGHT || (labeled && n > MAX_LABELED_LEAVES)
    {
        return Err(TopologyError::BoundsExceeded { n, d });
    }
    let mut grouped: BTreeMap<usize, Vec<LabeledTree>> = BTreeMap::new();
    let labelings = if labeled { permutations(n) } else { Vec::new() };
    for shape in shapes(n, d) {
        let dim = shape.vertex_count() - 1;
        let bucket = grouped.entry(dim).or_default();
        if labeled {
            for labels in &labelings {
                bucket.push(LabeledTree {
                    root: shape.clone(),
                    labels: Some(labels.clone()),
                });
            }
        } else {
            bucket.push(LabeledTree { root: shape.clone(), labels: None });
        }
    }
    Ok(grouped)
}

/// Per-dimension cell counts of the decomposition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimensionCount {
    pub dimension: usize,
    pub unlabeled: usize,
    pub labeled: u64,
}

/// Unlabeled and labeled cell counts per dimension. Labeled counts carry
/// the n! leaf labelings per shape without materializing them.
pub fn dimension_table(n: usize, d: usize) -> Result<Vec<DimensionCount>, TopologyError> {
    if n < 1 || n > MAX_LEAVES || d < 1 || d > MAX_HEIGHT {
        return Err(TopologyError::BoundsExceeded { n, d });
    }
    let factorial: u64 = (1..=n as u64).product();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for shape in shapes(n, d) {
        *counts.entry(shape.vertex_count() - 1).or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(dimension, unlabeled)| DimensionCount {
            dimension,
            unlabeled,
            labeled: unlabeled as u64 * factorial,
        })
        .collect())
}

/// Boundary coefficient of the generator `e_{n1}` in the top boundary map:
/// `C(n, n1)` with Z_2-style untwisted coefficients and
/// `(-1)^{n1} C(n, n1)` with twisted coefficients.
pub fn boundary_coefficient(
    n: usize,
    n1: usize,
    twisted: bool,
) -> Result<BigInt, TopologyError> {
    if n1 == 0 || n1 >= n {
        return Err(TopologyError::BoundaryIndexOutOfRange { n, n1 });
    }
    let binom = binomial(n, n1);
    if twisted && n1 % 2 == 1 {
        Ok(-binom)
    } else {
        Ok(binom)
    }
}

/// Exact binomial coefficient.
pub fn binomial(n: usize, k: usize) -> BigInt {
    let mut result = BigInt::from(1);
    for i in 0..k.min(n - k) {
        result = result * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    result
}

/// Result of the prime-power obstruction test for a given n.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObstructionReport {
    pub n: usize,
    /// Twisted boundary coefficients for n1 = 1..n-1.
    pub coefficients: Vec<BigInt>,
    /// gcd of their absolute values.
    pub gcd: BigInt,
    /// The obstruction is present exactly when the gcd exceeds 1.
    pub is_prime_power: bool,
    /// The prime p with n = p^k, when the obstruction is present.
    pub p: Option<BigInt>,
}

/// Computes the gcd of the boundary coefficients `(-1)^{n1} C(n, n1)`.
/// The gcd is p exactly when n is a power of the prime p, and 1 otherwise.
pub fn obstruction(n: usize) -> Result<ObstructionReport, TopologyError> {
    if n < 2 {
        return Err(TopologyError::ObstructionRange(n));
    }
    let coefficients: Vec<BigInt> = (1..n)
        .map(|n1| boundary_coefficient(n, n1, true).expect("range checked"))
        .collect();
    let mut gcd = BigInt::from(0);
    for c in &coefficients {
        gcd = gcd.gcd(c);
    }
    let is_prime_power = gcd > BigInt::from(1);
    Ok(ObstructionReport {
        n,
        p: is_prime_power.then(|| gcd.clone()),
        coefficients,
        gcd,
        is_prime_power,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_coefficient_examples() {
        assert_eq!(boundary_coefficient(4, 2, false).unwrap(), BigInt::from(6));
        assert_eq!(boundary_coefficient(4, 1, true).unwrap(), BigInt::from(-4));
        assert_eq!(boundary_coefficient(2, 1, true).unwrap(), BigInt::from(-2));
        assert!(boundary_coefficient(4, 0, true).is_err());
        assert!(boundary_coefficient(4, 4, true).is_err());
    }

    #[test]
    fn binomial_is_exact_above_64_bits() {
        assert_eq!(
            binomial(64, 32).to_string(),
            "1832624140942590534"
        );
        assert_eq!(binomial(70, 35).to_string(), "112186277816662845432");
    }

    #[test]
    fn obstruction_examples() {
        let r4 = obstruction(4).unwrap();
        assert_eq!(
            r4.coefficients,
            vec![BigInt::from(-4), BigInt::from(6), BigInt::from(-4)]
        );
        assert_eq!(r4.gcd, BigInt::from(2));
        assert!(r4.is_prime_power);
        assert_eq!(r4.p, Some(BigInt::from(2)));

        let r6 = obstruction(6).unwrap();
        assert_eq!(r6.gcd, BigInt::from(1));
        assert!(!r6.is_prime_power);

        let r9 = obstruction(9).unwrap();
        assert_eq!(r9.gcd, BigInt::from(3));
        assert_eq!(r9.p, Some(BigInt::from(3)));
    }

    /// Independent factorization-based prime-power check.
    fn prime_power_base(n: usize) -> Option<usize> {
        let mut m = n;
        for p in 2..=n {
            if m % p == 0 {
                while m % p == 0 {
                    m /= p;
                }
                return if m == 1 { Some(p) } else { None };
            }
        }
        None
    }

    #[test]
    fn dichotomy_up_to_64() {
        for n in 2..=64 {
            let report = obstruction(n).unwrap();
            match prime_power_base(n) {
                Some(p) => assert_eq!(report.gcd, BigInt::from(p), "n = {n}"),
                None => assert_eq!(report.gcd, BigInt::from(1), "n = {n}"),
            }
        }
    }

    #[test]
    fn enumerate_n2_d2() {
        let grouped = enumerate_trees(2, 2, true).unwrap();
        // dim 3: both leaves under one level-1 node; dim 4: two level-1 nodes
        assert_eq!(grouped[&3].len(), 2);
        assert_eq!(grouped[&4].len(), 2);
        assert_eq!(grouped.len(), 2);
    }

    #[test]
    fn enumerate_n1_d2() {
        let grouped = enumerate_trees(1, 2, false).unwrap();
        assert_eq!(grouped.len(), 1);
        assert_eq!(grouped[&2].len(), 1);
        assert_eq!(grouped[&2][0].root.vertex_count(), 3);
    }

    #[test]
    fn top_dimension_is_nd() {
        for (n, d) in [(2, 2), (3, 2), (4, 2), (2, 3), (3, 3)] {
            let table = dimension_table(n, d).unwrap();
            assert_eq!(table.last().unwrap().dimension, n * d, "n={n} d={d}");
        }
    }

    #[test]
    fn chain_rank_facts() {
        for (n, d) in [(2usize, 2usize), (3, 2), (2, 3), (4, 2), (5, 2), (4, 3)] {
            let table = dimension_table(n, d).unwrap();
            let at = |dim: usize| -> usize {
                table
                    .iter()
                    .find(|c| c.dimension == dim)
                    .map_or(0, |c| c.unlabeled)
            };
            // a single minimal tree with n + d vertices
            assert_eq!(at(n + d - 1), 1, "n={n} d={d}");
            // one generator per nontrivial n1 + n2 = n
            assert_eq!(at(n + d), n - 1, "n={n} d={d}");
            // labeled top stratum has n! cells
            let factorial: u64 = (1..=n as u64).product();
            assert_eq!(table.last().unwrap().unlabeled, 1);
            assert_eq!(table.last().unwrap().labeled, factorial);
        }
    }

    #[test]
    fn bounds_are_enforced() {
        assert!(enumerate_trees(9, 2, false).is_err());
        assert!(enumerate_trees(4, 4, false).is_err());
        assert!(enumerate_trees(7, 2, true).is_err());
        assert!(enumerate_trees(0, 2, false).is_err());
        assert!(obstruction(1).is_err());
    }
}
