//! Exact nearest-neighbor queries over a static 3D point set.

use crate::Point3;

const LEAF: usize = 8;

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Balanced k-d tree with median splits on the axis of largest spread.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Point3>,
    /// Original index of `points[i]`.
    index: Vec<usize>,
    nodes: Vec<Node>,
}

fn dist2(a: &Point3, b: &Point3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

impl KdTree {
    pub fn new(points: &[Point3]) -> Self {
        let mut order: Vec<(Point3, usize)> = points.iter().copied().zip(0..).collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            build(&mut order, 0, &mut nodes);
        }
        let (points, index) = order.into_iter().unzip();
        Self { points, index, nodes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index into the original slice and squared distance of the closest
    /// point; ties go to the lowest original index.
    pub fn nearest(&self, q: &Point3) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, q, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &Point3, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start..end {
                    let d = dist2(&self.points[i], q);
                    let id = self.index[i];
                    if d < best.1 || (d == best.1 && id < best.0) {
                        *best = (id, d);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build(pts: &mut [(Point3, usize)], offset: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if pts.len() <= LEAF {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + pts.len(),
        });
        return id;
    }
    let axis = (0..3)
        .map(|a| {
            let (lo, hi) = pts
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.0[a]), h.max(p.0[a])));
            (hi - lo, a)
        })
        .fold((f64::NEG_INFINITY, 0), |m, s| if s.0 > m.0 { s } else { m })
        .1;
    let mid = pts.len() / 2;
    pts.select_nth_unstable_by(mid, |a, b| a.0[axis].total_cmp(&b.0[axis]).then(a.1.cmp(&b.1)));
    let value = pts[mid].0[axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (l, r) = pts.split_at_mut(mid);
    let left = build(l, offset, nodes);
    let right = build(r, offset + mid, nodes);
    nodes[id] = Node::Split { axis, value, left, right };
    id
}
