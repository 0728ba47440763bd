//! Ordered labeled trees and Zhang–Shasha tree edit distance.

#[derive(Debug, Clone, PartialEq)]
pub struct Tree<L> {
    pub label: L,
    pub children: Vec<Tree<L>>,
}

impl<L> Tree<L> {
    pub fn leaf(label: L) -> Self {
        Self {
            label,
            children: Vec::new(),
        }
    }

    pub fn node(label: L, children: Vec<Tree<L>>) -> Self {
        Self { label, children }
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(Tree::size).sum::<usize>()
    }
}

/// Postorder layout: labels and leftmost-leaf index per node.
struct Flat<'a, L> {
    labels: Vec<&'a L>,
    leftmost: Vec<usize>,
}

impl<'a, L> Flat<'a, L> {
    fn new(t: &'a Tree<L>) -> Self {
        let mut f = Flat {
            labels: Vec::new(),
            leftmost: Vec::new(),
        };
        f.visit(t);
        f
    }

    /// Returns the leftmost leaf of `t`.
    fn visit(&mut self, t: &'a Tree<L>) -> usize {
        let mut first = None;
        for c in &t.children {
            let l = self.visit(c);
            first.get_or_insert(l);
        }
        let idx = self.labels.len();
        let leftmost = first.unwrap_or(idx);
        self.labels.push(&t.label);
        self.leftmost.push(leftmost);
        leftmost
    }

    /// The highest node for each distinct leftmost leaf, in postorder.
    fn keyroots(&self) -> Vec<usize> {
        let n = self.labels.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for i in (0..n).rev() {
            let l = self.leftmost[i];
            if !seen[l] {
                seen[l] = true;
                out.push(i);
            }
        }
        out.sort_unstable();
        out
    }
}

/// Edit distance with unit insert/delete cost and the given rename cost.
pub fn tree_edit_distance<L>(a: &Tree<L>, b: &Tree<L>, rename: impl Fn(&L, &L) -> f64) -> f64 {
    let fa = Flat::new(a);
    let fb = Flat::new(b);
    let (n, m) = (fa.labels.len(), fb.labels.len());
    let mut td = vec![vec![0.0f64; m]; n];
    let mut fd = vec![vec![0.0f64; m + 1]; n + 1];

    for &i in &fa.keyroots() {
        for &j in &fb.keyroots() {
            let li = fa.leftmost[i];
            let lj = fb.leftmost[j];
            // fd[x][y]: forest a[li..li+x) vs b[lj..lj+y)
            let rows = i - li + 1;
            let cols = j - lj + 1;
            fd[0][0] = 0.0;
            for x in 1..=rows {
                fd[x][0] = fd[x - 1][0] + 1.0;
            }
            for y in 1..=cols {
                fd[0][y] = fd[0][y - 1] + 1.0;
            }
            for x in 1..=rows {
                let ni = li + x - 1;
                for y in 1..=cols {
                    let nj = lj + y - 1;
                    let del = fd[x - 1][y] + 1.0;
                    let ins = fd[x][y - 1] + 1.0;
                    if fa.leftmost[ni] == li && fb.leftmost[nj] == lj {
                        let ren = fd[x - 1][y - 1] + rename(fa.labels[ni], fb.labels[nj]);
                        fd[x][y] = del.min(ins).min(ren);
                        td[ni][nj] = fd[x][y];
                    } else {
                        let px = fa.leftmost[ni] - li;
                        let py = fb.leftmost[nj] - lj;
                        fd[x][y] = del.min(ins).min(fd[px][py] + td[ni][nj]);
                    }
                }
            }
        }
    }
    td[n - 1][m - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(a: &&str, b: &&str) -> f64 {
        if a == b {
            0.0
        } else {
            1.0
        }
    }

    #[test]
    fn classic_example() {
        // f(d(a, c(b)), e) vs f(c(d(a, b)), e): distance 2
        let t1 = Tree::node(
            "f",
            vec![
                Tree::node("d", vec![Tree::leaf("a"), Tree::node("c", vec![Tree::leaf("b")])]),
                Tree::leaf("e"),
            ],
        );
        let t2 = Tree::node(
            "f",
            vec![
                Tree::node("c", vec![Tree::node("d", vec![Tree::leaf("a"), Tree::leaf("b")])]),
                Tree::leaf("e"),
            ],
        );
        assert_eq!(tree_edit_distance(&t1, &t2, unit), 2.0);
        assert_eq!(tree_edit_distance(&t1, &t1, unit), 0.0);
    }

    #[test]
    fn single_nodes() {
        assert_eq!(tree_edit_distance(&Tree::leaf("a"), &Tree::leaf("b"), unit), 1.0);
        let big = Tree::node("a", vec![Tree::leaf("b"), Tree::leaf("c")]);
        assert_eq!(tree_edit_distance(&Tree::leaf("a"), &big, unit), 2.0);
        assert_eq!(big.size(), 3);
    }
}
