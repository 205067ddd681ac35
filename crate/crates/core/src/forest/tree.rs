//! CART regression tree grown by variance reduction.
//!
//! Training works on presorted feature columns. A bootstrap sample is passed
//! as per-row multiplicities, which is equivalent to duplicating rows but keeps
//! the sorted columns short.

use crate::error::{Error, Result};

use super::FeatureMatrix;

/// Flat tree node. Leaves have `feature == -1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub feature: i32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    /// Mean training target routed to this node.
    pub value: f64,
    /// Number of training samples (with bootstrap multiplicity) routed here.
    pub count: u32,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.feature < 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    n_features: usize,
    /// Compact copy of `nodes` used for prediction.
    route: Vec<RouteNode>,
}

/// 16-byte node for prediction. Leaves have `feature == u32::MAX` and keep
/// their value in `threshold`; the right child is always `left + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct RouteNode {
    threshold: f64,
    feature: u32,
    left: u32,
}

fn route_of(nodes: &[Node]) -> Vec<RouteNode> {
    nodes
        .iter()
        .map(|n| match n.is_leaf() {
            true => RouteNode { threshold: n.value, feature: u32::MAX, left: 0 },
            false => RouteNode { threshold: n.threshold, feature: n.feature as u32, left: n.left },
        })
        .collect()
}

/// Feature columns sorted ascending by value (ties by row index).
pub(crate) struct SortedColumns {
    columns: Vec<Vec<Entry>>,
}

/// Sorted in-bag entry carried through tree growth; 16 bytes so that
/// partitioning moves as little memory as possible.
#[derive(Debug, Clone, Copy)]
struct Item {
    x: f64,
    w: u32,
    row: u32,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    x: f64,
    row: u32,
}

impl SortedColumns {
    pub(crate) fn new(x: &FeatureMatrix) -> Self {
        let columns = (0..x.cols())
            .map(|f| {
                let mut col: Vec<Entry> = (0..x.rows())
                    .map(|r| Entry {
                        x: x.get(r, f),
                        row: r as u32,
                    })
                    .collect();
                col.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.row.cmp(&b.row)));
                col
            })
            .collect();
        SortedColumns { columns }
    }
}

impl RegressionTree {
    /// Fits a tree on all rows with unit weight.
    pub fn fit(x: &FeatureMatrix, y: &[f64]) -> Result<Self> {
        check_inputs(x, y)?;
        let weights = vec![1u32; y.len()];
        Ok(Self::fit_presorted(&SortedColumns::new(x), x.cols(), y, &weights))
    }

    /// Fits a tree where row `i` appears `weights[i]` times.
    pub fn fit_weighted(x: &FeatureMatrix, y: &[f64], weights: &[u32]) -> Result<Self> {
        check_inputs(x, y)?;
        if weights.len() != y.len() || weights.iter().all(|&w| w == 0) {
            return Err(Error::Fit("weights must cover every row and not all be zero".into()));
        }
        Ok(Self::fit_presorted(&SortedColumns::new(x), x.cols(), y, weights))
    }

    pub(crate) fn fit_presorted(sorted: &SortedColumns, n_features: usize, y: &[f64], weights: &[u32]) -> Self {
        let mut builder = Builder::new(sorted, y, weights);
        builder.grow();
        RegressionTree {
            route: route_of(&builder.nodes),
            nodes: builder.nodes,
            n_features,
        }
    }

    pub(crate) fn from_nodes(nodes: Vec<Node>, n_features: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Corrupt("tree without nodes".into()));
        }
        let n = nodes.len() as u32;
        for (i, node) in nodes.iter().enumerate() {
            if node.is_leaf() {
                continue;
            }
            if node.feature as usize >= n_features {
                return Err(Error::Corrupt(format!("node {i} splits on feature {}", node.feature)));
            }
            // children are stored as an adjacent pair after their parent, which
            // also rules out cycles
            if node.right >= n || node.left as usize <= i || node.right != node.left + 1 {
                return Err(Error::Corrupt(format!("node {i} has invalid children")));
            }
        }
        Ok(RegressionTree { route: route_of(&nodes), nodes, n_features })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            let n = &nodes[i];
            if n.is_leaf() {
                0
            } else {
                1 + go(nodes, n.left as usize).max(go(nodes, n.right as usize))
            }
        }
        go(&self.nodes, 0)
    }

    /// Routes one feature row to a leaf and returns its prediction.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut node = self.route[0];
        while node.feature != u32::MAX {
            let next = node.left + u32::from(!(row[node.feature as usize] <= node.threshold));
            node = self.route[next as usize];
        }
        node.threshold
    }
}

fn check_inputs(x: &FeatureMatrix, y: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Fit("empty training set".into()));
    }
    if x.rows() != y.len() {
        return Err(Error::Fit(format!("{} feature rows but {} targets", x.rows(), y.len())));
    }
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::Fit(format!("non-finite target {v}")));
    }
    if x.cols() == 0 {
        return Err(Error::Fit("no features".into()));
    }
    Ok(())
}

struct Split {
    feature: usize,
    threshold: f64,
    /// Number of entries of the node segment that go left.
    left_len: usize,
}

struct Builder<'a> {
    y: &'a [f64],
    /// Per-feature in-bag entries; each open node owns the same range in every column.
    columns: Vec<Vec<Item>>,
    go_left: Vec<bool>,
    scratch: Vec<Item>,
    nodes: Vec<Node>,
}

impl<'a> Builder<'a> {
    fn new(sorted: &SortedColumns, y: &'a [f64], weights: &[u32]) -> Self {
        let columns = sorted
            .columns
            .iter()
            .map(|col| {
                col.iter()
                    .filter(|e| weights[e.row as usize] > 0)
                    .map(|e| Item { x: e.x, w: weights[e.row as usize], row: e.row })
                    .collect()
            })
            .collect();
        Builder {
            y,
            columns,
            go_left: vec![false; y.len()],
            scratch: Vec::new(),
            nodes: Vec::new(),
        }
    }

    fn grow(&mut self) {
        let len = self.columns[0].len();
        self.nodes.push(self.leaf(0, len));
        let mut stack = vec![(0usize, 0usize, len)];
        while let Some((id, start, end)) = stack.pop() {
            let Some(split) = self.best_split(start, end) else {
                continue;
            };
            self.partition(start, end, &split);
            let mid = start + split.left_len;
            let left = self.nodes.len();
            self.nodes.push(self.leaf(start, mid));
            self.nodes.push(self.leaf(mid, end));
            let node = &mut self.nodes[id];
            node.feature = split.feature as i32;
            node.threshold = split.threshold;
            node.left = left as u32;
            node.right = left as u32 + 1;
            // right pushed first so the left subtree is expanded first
            stack.push((left + 1, mid, end));
            stack.push((left, start, mid));
        }
    }

    fn leaf(&self, start: usize, end: usize) -> Node {
        let (mut w, mut s) = (0u64, 0.0);
        for e in &self.columns[0][start..end] {
            w += u64::from(e.w);
            s += f64::from(e.w) * self.y[e.row as usize];
        }
        Node {
            feature: -1,
            threshold: 0.0,
            left: 0,
            right: 0,
            value: s / w as f64,
            count: w as u32,
        }
    }

    fn best_split(&self, start: usize, end: usize) -> Option<Split> {
        let seg = &self.columns[0][start..end];
        let mut total_w = 0.0;
        let mut total_s = 0.0;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for e in seg {
            let (w, y) = (f64::from(e.w), self.y[e.row as usize]);
            total_w += w;
            total_s += w * y;
            lo = lo.min(y);
            hi = hi.max(y);
        }
        if total_w < 2.0 || lo == hi {
            return None;
        }
        let mean = total_s / total_w;
        let sse: f64 = seg
            .iter()
            .map(|e| f64::from(e.w) * (self.y[e.row as usize] - mean).powi(2))
            .sum();

        // With centered targets the parent term vanishes and the impurity
        // reduction of a split is s_left^2 * W / (W_left * W_right).
        let (mut best_gain, mut best_feature, mut best_i) = (f64::NEG_INFINITY, usize::MAX, 0);
        for (f, column) in self.columns.iter().enumerate() {
            let seg = &column[start..end];
            if seg[0].x == seg[seg.len() - 1].x {
                continue;
            }
            let (mut wl, mut sl) = (0.0, 0.0);
            for (i, pair) in seg.windows(2).enumerate() {
                let e = pair[0];
                let w = f64::from(e.w);
                wl += w;
                sl += w * (self.y[e.row as usize] - mean);
                if pair[1].x == e.x {
                    continue;
                }
                let wr = total_w - wl;
                let gain = sl * sl * total_w / (wl * wr);
                if gain > best_gain || best_feature == usize::MAX {
                    (best_gain, best_feature, best_i) = (gain, f, i);
                }
            }
        }
        if best_feature == usize::MAX {
            return None;
        }
        let seg = &self.columns[best_feature][start..end];
        let split = Split {
            feature: best_feature,
            threshold: midpoint(seg[best_i].x, seg[best_i + 1].x),
            left_len: best_i + 1,
        };
        (best_gain > sse * 1e-12 && best_gain > 0.0).then_some(split)
    }

    fn partition(&mut self, start: usize, end: usize, split: &Split) {
        let split_col = &self.columns[split.feature][start..end];
        for (i, e) in split_col.iter().enumerate() {
            self.go_left[e.row as usize] = i < split.left_len;
        }
        for (f, column) in self.columns.iter_mut().enumerate() {
            if f == split.feature {
                continue;
            }
            let seg = &mut column[start..end];
            self.scratch.resize(seg.len(), seg[0]);
            // branchless stable partition: every entry is written to both
            // sides and only the matching cursor advances
            let (mut write, mut spill) = (0, 0);
            for i in 0..seg.len() {
                let e = seg[i];
                let left = usize::from(self.go_left[e.row as usize]);
                seg[write] = e;
                self.scratch[spill] = e;
                write += left;
                spill += 1 - left;
            }
            seg[write..].copy_from_slice(&self.scratch[..spill]);
        }
    }
}

/// Midpoint of two consecutive distinct values, kept strictly below `hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi {
        lo
    } else {
        mid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows.iter().map(|r| r.to_vec())).unwrap()
    }

    #[test]
    fn from_nodes_requires_adjacent_later_children() {
        let leaf = |value| Node { feature: -1, threshold: 0.0, left: 0, right: 0, value, count: 1 };
        let split = |left, right| Node { feature: 0, threshold: 0.5, left, right, value: 0.0, count: 2 };
        let ok = RegressionTree::from_nodes(vec![split(1, 2), leaf(1.0), leaf(2.0)], 1).unwrap();
        assert_eq!(ok.predict_row(&[0.0]), 1.0);
        assert_eq!(ok.predict_row(&[1.0]), 2.0);
        assert_eq!(ok.predict_row(&[f64::NAN]), 2.0);
        for bad in [
            vec![split(2, 1), leaf(1.0), leaf(2.0)],
            vec![split(1, 3), leaf(1.0), leaf(2.0), leaf(3.0)],
            vec![split(0, 1), leaf(1.0)],
            vec![split(1, 2), leaf(1.0)],
        ] {
            assert!(matches!(RegressionTree::from_nodes(bad, 1), Err(Error::Corrupt(_))));
        }
    }

    #[test]
    fn constant_target_gives_single_leaf() {
        let x = matrix(&[&[0.0], &[1.0], &[2.0]]);
        let t = RegressionTree::fit(&x, &[4.0, 4.0, 4.0]).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict_row(&[10.0]), 4.0);
    }

    #[test]
    fn two_point_split_at_midpoint() {
        let x = matrix(&[&[0.0], &[1.0]]);
        let t = RegressionTree::fit(&x, &[0.0, 10.0]).unwrap();
        let root = t.nodes()[0];
        assert_eq!(root.feature, 0);
        assert_eq!(root.threshold, 0.5);
        assert_eq!(t.nodes()[root.left as usize].value, 0.0);
        assert_eq!(t.nodes()[root.right as usize].value, 10.0);
        assert_eq!(t.leaf_count(), 2);
    }

    #[test]
    fn memorizes_distinct_points() {
        let x = matrix(&[&[0.0, 5.0], &[1.0, 4.0], &[2.0, 3.0], &[3.0, 2.0], &[4.0, 1.0]]);
        let y = [1.0, 7.0, 1.0, 7.0, 3.0];
        let t = RegressionTree::fit(&x, &y).unwrap();
        for (i, target) in y.iter().enumerate() {
            assert_eq!(t.predict_row(x.row(i)), *target);
        }
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        // both features separate the targets identically
        let x = matrix(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let t = RegressionTree::fit(&x, &[0.0, 1.0]).unwrap();
        assert_eq!(t.nodes()[0].feature, 0);
    }

    #[test]
    fn leaf_is_weighted_mean() {
        // identical features: no split possible, leaf is the weighted mean
        let x = matrix(&[&[1.0], &[1.0]]);
        let t = RegressionTree::fit_weighted(&x, &[0.0, 4.0], &[3, 1]).unwrap();
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict_row(&[1.0]), 1.0);
        assert_eq!(t.nodes()[0].count, 4);
    }

    #[test]
    fn weights_match_duplicated_rows() {
        let x = matrix(&[&[0.0], &[1.0], &[2.0], &[3.0]]);
        let y = [1.0, 2.0, 8.0, 9.0];
        let weighted = RegressionTree::fit_weighted(&x, &y, &[2, 0, 1, 3]).unwrap();
        let dup = matrix(&[&[0.0], &[0.0], &[2.0], &[3.0], &[3.0], &[3.0]]);
        let plain = RegressionTree::fit(&dup, &[1.0, 1.0, 8.0, 9.0, 9.0, 9.0]).unwrap();
        for v in [-1.0, 0.5, 1.5, 2.5, 3.5] {
            assert_eq!(weighted.predict_row(&[v]), plain.predict_row(&[v]));
        }
    }

    #[test]
    fn rejects_bad_input() {
        let x = FeatureMatrix::new(0, 1, vec![]).unwrap();
        assert!(matches!(RegressionTree::fit(&x, &[]), Err(Error::Fit(_))));
        let x = matrix(&[&[0.0]]);
        assert!(RegressionTree::fit(&x, &[f64::NAN]).is_err());
        assert!(RegressionTree::fit(&x, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn midpoint_stays_below_upper_value() {
        let lo = 1.0f64;
        let hi = lo.next_up();
        assert_eq!(midpoint(lo, hi), lo);
        assert_eq!(midpoint(0.0, 1.0), 0.5);
    }

    proptest::proptest! {
        #[test]
        fn leaves_hold_mean_of_routed_targets(
            data in proptest::collection::vec((0u8..6, 0u8..6, -5.0f64..5.0), 1..60)
        ) {
            let rows: Vec<Vec<f64>> = data.iter().map(|(a, b, _)| vec![f64::from(*a), f64::from(*b)]).collect();
            let y: Vec<f64> = data.iter().map(|d| d.2).collect();
            let x = FeatureMatrix::from_rows(rows).unwrap();
            let t = RegressionTree::fit(&x, &y).unwrap();
            for n in t.nodes() {
                if !n.is_leaf() {
                    proptest::prop_assert!(n.left > 0 && n.right > 0);
                }
            }
            // group training rows by the leaf they reach
            let mut sums = std::collections::HashMap::<u64, (f64, usize)>::new();
            for i in 0..x.rows() {
                let p = t.predict_row(x.row(i));
                let e = sums.entry(p.to_bits()).or_default();
                e.0 += y[i];
                e.1 += 1;
            }
            for (bits, (s, c)) in sums {
                let pred = f64::from_bits(bits);
                proptest::prop_assert!((pred - s / c as f64).abs() < 1e-9);
            }
        }
    }
}
