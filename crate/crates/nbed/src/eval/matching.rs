//! Tolerance-based correspondence between predicted and ground-truth
//! boundary pixels: maximum-cardinality bipartite matching over all pairs
//! within `d_max` Euclidean pixels, via augmenting paths. Candidate lists
//! are distance-sorted so matched pairs are reproducible.

use ndarray::Array2;

pub type Pixel = (usize, usize);

pub fn positive_pixels(map: &Array2<f64>, threshold: f64) -> Vec<Pixel> {
    let mut out = Vec::new();
    for ((i, j), &v) in map.indexed_iter() {
        if v >= threshold {
            out.push((i, j));
        }
    }
    out
}

fn dist2(a: Pixel, b: Pixel) -> f64 {
    let dy = a.0 as f64 - b.0 as f64;
    let dx = a.1 as f64 - b.1 as f64;
    dy * dy + dx * dx
}

/// Maximum matching size between two pixel sets with pair distance <= d_max.
pub fn match_pixels(pred: &[Pixel], gt: &[Pixel], d_max: f64) -> usize {
    let d2 = d_max * d_max;
    // candidates per pred pixel, nearest first
    let adj: Vec<Vec<usize>> = pred
        .iter()
        .map(|&p| {
            let mut cands: Vec<(f64, usize)> = gt
                .iter()
                .enumerate()
                .filter_map(|(gi, &g)| {
                    let d = dist2(p, g);
                    (d <= d2 + 1e-12).then_some((d, gi))
                })
                .collect();
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cands.into_iter().map(|(_, gi)| gi).collect()
        })
        .collect();

    let mut gt_owner: Vec<Option<usize>> = vec![None; gt.len()];
    let mut matched = 0usize;
    for pi in 0..pred.len() {
        let mut visited = vec![false; gt.len()];
        if augment(pi, &adj, &mut gt_owner, &mut visited) {
            matched += 1;
        }
    }
    matched
}

fn augment(pi: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], visited: &mut [bool]) -> bool {
    for &gi in &adj[pi] {
        if visited[gi] {
            continue;
        }
        visited[gi] = true;
        match owner[gi] {
            None => {
                owner[gi] = Some(pi);
                return true;
            }
            Some(prev) => {
                if augment(prev, adj, owner, visited) {
                    owner[gi] = Some(pi);
                    return true;
                }
            }
        }
    }
    false
}

/// (tp, fp, fn) between binary maps under tolerance `d_max`.
pub fn match_boundaries(pred: &Array2<f64>, gt: &Array2<f64>, d_max: f64) -> (usize, usize, usize) {
    let p = positive_pixels(pred, 0.5);
    let g = positive_pixels(gt, 0.5);
    let tp = match_pixels(&p, &g, d_max);
    (tp, p.len() - tp, g.len() - tp)
}
