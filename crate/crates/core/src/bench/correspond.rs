use super::thin::BinaryMap;

/// Boundary-benchmark tolerance used by default: 0.75% of the image diagonal.
pub const DEFAULT_TOLERANCE: f64 = 0.0075;

/// Counts from matching one predicted map against a set of labeler maps.
/// `fn_` is summed over labelers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchCounts {
    pub fn add(self, o: MatchCounts) -> MatchCounts {
        MatchCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Matching radius in pixels for a tolerance expressed as a fraction of the diagonal.
pub fn match_radius(height: usize, width: usize, tolerance: f64) -> f64 {
    tolerance * ((height * height + width * width) as f64).sqrt()
}

const NONE: usize = usize::MAX;

/// One-to-one matching of predicted to ground-truth pixels within `radius`.
///
/// Pairs are first taken greedily in ascending distance order, ties broken by
/// predicted index then ground-truth (row, col). Augmenting paths then extend
/// the greedy matching to maximum cardinality, so no pixel that could still be
/// paired is left over. Returns which predicted pixels matched and how many
/// ground-truth pixels stayed unmatched.
pub fn match_pixels(pred: &[(usize, usize)], gt: &BinaryMap, radius: f64) -> (Vec<bool>, usize) {
    let (h, w) = gt.dims();
    let reach = radius.floor() as isize;
    let r2 = radius * radius;
    let n_gt = gt.count();
    // (squared distance, pred index, gt row-major index)
    let mut pairs: Vec<(usize, usize, usize)> = Vec::new();
    for (pi, &(pr, pc)) in pred.iter().enumerate() {
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let d2 = (dr * dr + dc * dc) as usize;
                if d2 as f64 > r2 {
                    continue;
                }
                let (gr, gc) = (pr as isize + dr, pc as isize + dc);
                if gr < 0 || gc < 0 || gr as usize >= h || gc as usize >= w {
                    continue;
                }
                if gt.get(gr as usize, gc as usize) {
                    pairs.push((d2, pi, gr as usize * w + gc as usize));
                }
            }
        }
    }
    pairs.sort_unstable();
    let mut pair_u = vec![NONE; pred.len()];
    let mut pair_v = vec![NONE; h * w];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); pred.len()];
    for &(_, pi, gi) in &pairs {
        adj[pi].push(gi);
        if pair_u[pi] == NONE && pair_v[gi] == NONE {
            pair_u[pi] = gi;
            pair_v[gi] = pi;
        }
    }
    augment_to_maximum(&adj, &mut pair_u, &mut pair_v);
    let matched = pair_u.iter().filter(|&&v| v != NONE).count();
    (pair_u.iter().map(|&v| v != NONE).collect(), n_gt - matched)
}

/// Hopcroft-Karp phases starting from an existing matching.
fn augment_to_maximum(adj: &[Vec<usize>], pair_u: &mut [usize], pair_v: &mut [usize]) {
    let n = adj.len();
    let mut dist = vec![NONE; n];
    let mut next_edge = vec![0usize; n];
    let mut queue = Vec::with_capacity(n);
    let mut stack = Vec::new();
    loop {
        queue.clear();
        for u in 0..n {
            if pair_u[u] == NONE && !adj[u].is_empty() {
                dist[u] = 0;
                queue.push(u);
            } else {
                dist[u] = NONE;
            }
        }
        let mut found = false;
        let mut head = 0;
        while head < queue.len() {
            let u = queue[head];
            head += 1;
            for &v in &adj[u] {
                let m = pair_v[v];
                if m == NONE {
                    found = true;
                } else if dist[m] == NONE {
                    dist[m] = dist[u] + 1;
                    queue.push(m);
                }
            }
        }
        if !found {
            return;
        }
        next_edge.iter_mut().for_each(|e| *e = 0);
        for root in 0..n {
            if pair_u[root] != NONE || dist[root] != 0 {
                continue;
            }
            stack.clear();
            stack.push(root);
            while let Some(&u) = stack.last() {
                if next_edge[u] == adj[u].len() {
                    dist[u] = NONE;
                    stack.pop();
                    if let Some(&below) = stack.last() {
                        next_edge[below] += 1;
                    }
                    continue;
                }
                let v = adj[u][next_edge[u]];
                let m = pair_v[v];
                if m == NONE {
                    // flip every edge on the path
                    for &x in &stack {
                        let y = adj[x][next_edge[x]];
                        pair_u[x] = y;
                        pair_v[y] = x;
                    }
                    for &x in &stack {
                        dist[x] = NONE;
                    }
                    break;
                } else if dist[m] != NONE && dist[m] == dist[u] + 1 {
                    stack.push(m);
                } else {
                    next_edge[u] += 1;
                }
            }
        }
    }
}

/// Match a thinned prediction against every labeler map. A predicted pixel is
/// a true positive if any labeler matches it; each labeler's unmatched pixels
/// count as misses.
pub fn correspond(pred_thin: &BinaryMap, gt_maps: &[BinaryMap], tolerance: f64) -> MatchCounts {
    let (h, w) = pred_thin.dims();
    let radius = match_radius(h, w, tolerance);
    let pred: Vec<(usize, usize)> = pred_thin.pixels().collect();
    let mut any = vec![false; pred.len()];
    let mut fn_ = 0;
    for gt in gt_maps {
        let (hit, missed) = match_pixels(&pred, gt, radius);
        for (a, b) in any.iter_mut().zip(hit) {
            *a |= b;
        }
        fn_ += missed;
    }
    let tp = any.iter().filter(|&&b| b).count();
    MatchCounts {
        tp,
        fp: pred.len() - tp,
        fn_,
    }
}
