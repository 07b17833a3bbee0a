//! Capacity-constrained assignment by successive shortest paths.
//!
//! The residual network of the transportation problem (source -> rows ->
//! arms -> sink, with programme arms routed through an aggregator `P` when
//! the total number treated is capped) is compressed to its arm nodes. An
//! edge `S -> a` stands for the cheapest unassigned row that could join
//! `a`, and `a -> b` for the cheapest move of a row currently in `a` over
//! to `b`; both are kept in lazily pruned heaps. Each augmentation assigns
//! one more row along the shortest path found by Bellman-Ford on this
//! small graph, so the flow stays optimal for its size throughout.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

type Heap = BinaryHeap<Reverse<(i64, usize)>>;

const SRC: usize = usize::MAX;

/// Assigns every row to an arm, minimizing `sum cost[r][a_r]` subject to
/// `count(a) <= cap[a]` and, when given, `sum_{a >= 1} count(a) <=
/// total_treated`. Returns `None` when no feasible assignment exists.
pub fn min_cost_assignment(cost: &[Vec<i64>], cap: &[Option<usize>], total_treated: Option<usize>) -> Option<Vec<usize>> {
    let n = cost.len();
    let k = cap.len();
    let p = k; // aggregator node
    let nodes = if total_treated.is_some() { k + 1 } else { k };
    let mut arm_of: Vec<Option<usize>> = vec![None; n];
    let mut count = vec![0usize; k];
    let mut from_source: Vec<Heap> = (0..k)
        .map(|a| (0..n).map(|r| Reverse((cost[r][a], r))).collect())
        .collect();
    let mut moves: Vec<Vec<Heap>> = (0..k).map(|_| (0..k).map(|_| BinaryHeap::new()).collect()).collect();

    let has_room = |a: usize, count: &[usize]| cap[a].is_none_or(|c| count[a] < c);

    for _ in 0..n {
        for a in 0..k {
            while let Some(&Reverse((_, r))) = from_source[a].peek() {
                if arm_of[r].is_none() {
                    break;
                }
                from_source[a].pop();
            }
            for b in 0..k {
                while let Some(&Reverse((_, r))) = moves[a][b].peek() {
                    if arm_of[r] == Some(a) {
                        break;
                    }
                    moves[a][b].pop();
                }
            }
        }
        let treated: usize = count[1..].iter().sum();
        let edge = |u: usize, v: usize, count: &[usize]| -> Option<i64> {
            if u == v {
                return None;
            }
            if u == p {
                // Give back a unit of a programme arm's treated budget.
                return (v >= 1 && count[v] > 0).then_some(0);
            }
            if v == p {
                return (u >= 1 && has_room(u, count)).then_some(0);
            }
            moves[u][v].peek().map(|&Reverse((c, _))| c)
        };
        let mut dist: Vec<Option<i64>> = vec![None; nodes];
        let mut pred: Vec<usize> = vec![SRC; nodes];
        for a in 0..k {
            if let Some(&Reverse((c, _))) = from_source[a].peek() {
                dist[a] = Some(c);
            }
        }
        for _ in 0..nodes {
            let mut changed = false;
            for u in 0..nodes {
                let Some(du) = dist[u] else { continue };
                for v in 0..nodes {
                    if let Some(c) = edge(u, v, &count) {
                        let nd = du + c;
                        if dist[v].is_none_or(|dv| nd < dv) {
                            dist[v] = Some(nd);
                            pred[v] = u;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        // Nodes with an edge into the sink.
        let mut end: Option<(i64, usize)> = None;
        for u in 0..nodes {
            let Some(d) = dist[u] else { continue };
            let to_sink = if u == p {
                total_treated.is_some_and(|t| treated < t)
            } else if u >= 1 && total_treated.is_some() {
                false
            } else {
                has_room(u, &count)
            };
            if to_sink && end.is_none_or(|(bd, _)| d < bd) {
                end = Some((d, u));
            }
        }
        let (_, last) = end?;
        let mut path = vec![last];
        let mut cur = last;
        while pred[cur] != SRC {
            cur = pred[cur];
            path.push(cur);
            if path.len() > nodes {
                return None;
            }
        }
        path.reverse();
        let Reverse((_, first_row)) = *from_source[path[0]].peek()?;
        let mut movers = Vec::new();
        for w in path.windows(2) {
            if w[0] != p && w[1] != p {
                let Reverse((_, r)) = *moves[w[0]][w[1]].peek()?;
                movers.push((r, w[0], w[1]));
            }
        }
        let mut place = |r: usize, a: usize, arm_of: &mut [Option<usize>], count: &mut [usize]| {
            if let Some(old) = arm_of[r] {
                count[old] -= 1;
            }
            arm_of[r] = Some(a);
            count[a] += 1;
            for b in 0..k {
                if b != a {
                    moves[a][b].push(Reverse((cost[r][b] - cost[r][a], r)));
                }
            }
        };
        for &(r, _, to) in &movers {
            place(r, to, &mut arm_of, &mut count);
        }
        place(first_row, path[0], &mut arm_of, &mut count);
    }
    arm_of.into_iter().collect()
}
