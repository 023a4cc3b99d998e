//! Ordered tree edit distance (Zhang–Shasha) with unit costs.

use serde::{Deserialize, Serialize};

/// A rooted, ordered tree with string labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OrderedLabeledTree {
    pub label: String,
    pub children: Vec<OrderedLabeledTree>,
}

impl OrderedLabeledTree {
    pub fn leaf(label: impl Into<String>) -> Self {
        OrderedLabeledTree {
            label: label.into(),
            children: Vec::new(),
        }
    }

    pub fn node(label: impl Into<String>, children: Vec<OrderedLabeledTree>) -> Self {
        OrderedLabeledTree {
            label: label.into(),
            children,
        }
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        1 + self.children.iter().map(Self::size).sum::<usize>()
    }
}

struct Postorder<'a> {
    labels: Vec<&'a str>,
    // leftmost leaf descendant of each node, in postorder numbering
    lml: Vec<usize>,
    keyroots: Vec<usize>,
}

impl<'a> Postorder<'a> {
    fn new(root: &'a OrderedLabeledTree) -> Self {
        let mut p = Postorder {
            labels: Vec::new(),
            lml: Vec::new(),
            keyroots: Vec::new(),
        };
        p.visit(root);
        let n = p.labels.len();
        let mut seen = vec![false; n];
        for i in (0..n).rev() {
            if !seen[p.lml[i]] {
                seen[p.lml[i]] = true;
                p.keyroots.push(i);
            }
        }
        p.keyroots.reverse();
        p
    }

    fn visit(&mut self, node: &'a OrderedLabeledTree) -> usize {
        let mut leftmost = None;
        for child in &node.children {
            let child_lml = self.visit(child);
            leftmost.get_or_insert(child_lml);
        }
        let idx = self.labels.len();
        self.labels.push(&node.label);
        let l = leftmost.unwrap_or(idx);
        self.lml.push(l);
        l
    }
}

/// Minimum number of unit-cost node insertions, deletions and relabelings
/// turning `a` into `b`.
pub fn ted(a: &OrderedLabeledTree, b: &OrderedLabeledTree) -> usize {
    let a = Postorder::new(a);
    let b = Postorder::new(b);
    let (n, m) = (a.labels.len(), b.labels.len());
    let mut td = vec![0usize; n * m];
    let mut fd = vec![0usize; (n + 1) * (m + 1)];
    let w = m + 1;

    for &i in &a.keyroots {
        for &j in &b.keyroots {
            let (li, lj) = (a.lml[i], b.lml[j]);
            let rows = i - li + 2;
            let cols = j - lj + 2;
            fd[0] = 0;
            for x in 1..rows {
                fd[x * w] = fd[(x - 1) * w] + 1;
            }
            for y in 1..cols {
                fd[y] = fd[y - 1] + 1;
            }
            for x in li..=i {
                let dx = x - li + 1;
                for y in lj..=j {
                    let dy = y - lj + 1;
                    let del = fd[(dx - 1) * w + dy] + 1;
                    let ins = fd[dx * w + dy - 1] + 1;
                    let val = if a.lml[x] == li && b.lml[y] == lj {
                        let relabel = fd[(dx - 1) * w + dy - 1] + usize::from(a.labels[x] != b.labels[y]);
                        let v = del.min(ins).min(relabel);
                        td[x * m + y] = v;
                        v
                    } else {
                        let px = a.lml[x] - li;
                        let py = b.lml[y] - lj;
                        del.min(ins).min(fd[px * w + py] + td[x * m + y])
                    };
                    fd[dx * w + dy] = val;
                }
            }
        }
    }
    td[n * m - 1]
}

/// Edit distance where either side may be the empty tree.
pub fn ted_opt(a: Option<&OrderedLabeledTree>, b: Option<&OrderedLabeledTree>) -> usize {
    match (a, b) {
        (Some(a), Some(b)) => ted(a, b),
        (Some(t), None) | (None, Some(t)) => t.size(),
        (None, None) => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(l: &str) -> OrderedLabeledTree {
        OrderedLabeledTree::leaf(l)
    }

    fn node(l: &str, c: Vec<OrderedLabeledTree>) -> OrderedLabeledTree {
        OrderedLabeledTree::node(l, c)
    }

    #[test]
    fn identity_and_relabel() {
        let t = node("a", vec![leaf("b"), node("c", vec![leaf("d")])]);
        assert_eq!(ted(&t, &t), 0);
        assert_eq!(ted(&leaf("x"), &leaf("y")), 1);
        assert_eq!(t.size(), 4);
    }

    #[test]
    fn classic_zhang_shasha_example() {
        // f(d(a c(b)) e) vs f(c(d(a b)) e): the classic worked example, distance 2
        let t1 = node("f", vec![node("d", vec![leaf("a"), node("c", vec![leaf("b")])]), leaf("e")]);
        let t2 = node("f", vec![node("c", vec![node("d", vec![leaf("a"), leaf("b")])]), leaf("e")]);
        assert_eq!(ted(&t1, &t2), 2);
        assert_eq!(ted(&t2, &t1), 2);
    }

    #[test]
    fn insertions_and_deletions() {
        let small = leaf("a");
        let big = node("a", vec![leaf("b"), leaf("c")]);
        assert_eq!(ted(&small, &big), 2);
        assert_eq!(ted(&big, &small), 2);
        assert_eq!(ted_opt(None, Some(&big)), 3);
        assert_eq!(ted_opt(None, None), 0);
        // removing an inner node promotes its children
        let deep = node("r", vec![node("x", vec![leaf("p"), leaf("q")])]);
        let flat = node("r", vec![leaf("p"), leaf("q")]);
        assert_eq!(ted(&deep, &flat), 1);
    }
}
