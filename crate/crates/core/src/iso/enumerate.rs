//! Connected vertex sets of a graph given by adjacency lists.

use rand::Rng;

/// Calls `visit` once for every connected vertex set with at most
/// `max_size` vertices. Sets are passed sorted.
pub fn connected_subsets(adj: &[Vec<usize>], max_size: usize, mut visit: impl FnMut(&[usize])) {
    let n = adj.len();
    let mut blocked = vec![0u32; n];
    for root in 0..n {
        let mut set = vec![root];
        blocked[root] += 1;
        let ext: Vec<usize> = adj[root].iter().copied().filter(|&u| u > root).collect();
        for &u in &ext {
            blocked[u] += 1;
        }
        extend(adj, root, max_size, &mut set, ext.clone(), &mut blocked, &mut visit);
        for &u in &ext {
            blocked[u] -= 1;
        }
        blocked[root] -= 1;
    }
}

/// Extension step of the ESU scheme: `blocked[u] > 0` marks vertices in
/// the set or already adjacent to it, which must not re-enter through a
/// later branch.
fn extend(
    adj: &[Vec<usize>],
    root: usize,
    max_size: usize,
    set: &mut Vec<usize>,
    mut ext: Vec<usize>,
    blocked: &mut [u32],
    visit: &mut impl FnMut(&[usize]),
) {
    let mut sorted = set.clone();
    sorted.sort_unstable();
    visit(&sorted);
    if set.len() == max_size {
        return;
    }
    while let Some(w) = ext.pop() {
        let fresh: Vec<usize> = adj[w]
            .iter()
            .copied()
            .filter(|&u| u > root && blocked[u] == 0)
            .collect();
        for &u in &fresh {
            blocked[u] += 1;
        }
        let mut next = ext.clone();
        next.extend_from_slice(&fresh);
        set.push(w);
        extend(adj, root, max_size, set, next, blocked, visit);
        set.pop();
        for &u in &fresh {
            blocked[u] -= 1;
        }
    }
}

fn is_connected_without(adj: &[Vec<usize>], set: &[usize], skip: usize, member: &[bool]) -> bool {
    let Some(&start) = set.iter().find(|&&v| v != skip) else {
        return true;
    };
    let mut seen = std::collections::HashSet::from([start]);
    let mut stack = vec![start];
    while let Some(v) = stack.pop() {
        for &u in &adj[v] {
            if u != skip && member[u] && seen.insert(u) {
                stack.push(u);
            }
        }
    }
    seen.len() == set.iter().filter(|&&v| v != skip).count()
}

/// Random connected set grown from `start` by repeatedly adding a uniformly
/// chosen outer-boundary vertex until it has `target` vertices (or cannot
/// grow). Every intermediate set is passed to `visit`.
pub fn grow_connected<R: Rng>(
    adj: &[Vec<usize>],
    start: usize,
    target: usize,
    rng: &mut R,
    mut visit: impl FnMut(&[usize]),
) -> Vec<usize> {
    let mut member = vec![false; adj.len()];
    let mut set = vec![start];
    member[start] = true;
    let mut frontier: Vec<usize> = Vec::new();
    let mut on_frontier = vec![false; adj.len()];
    for &u in &adj[start] {
        if !on_frontier[u] {
            on_frontier[u] = true;
            frontier.push(u);
        }
    }
    visit(&set);
    while set.len() < target && !frontier.is_empty() {
        let i = rng.gen_range(0..frontier.len());
        let v = frontier.swap_remove(i);
        on_frontier[v] = false;
        member[v] = true;
        set.push(v);
        for &u in &adj[v] {
            if !member[u] && !on_frontier[u] {
                on_frontier[u] = true;
                frontier.push(u);
            }
        }
        visit(&set);
    }
    set
}

/// `rounds` attempts to swap one member for one outer-boundary vertex while
/// staying connected; a swap is kept when `score` does not increase.
pub fn refine_by_swaps<R: Rng>(
    adj: &[Vec<usize>],
    set: &mut Vec<usize>,
    rounds: usize,
    rng: &mut R,
    mut score: impl FnMut(&[usize]) -> f64,
) -> f64 {
    let mut member = vec![false; adj.len()];
    for &v in set.iter() {
        member[v] = true;
    }
    let mut best = score(set);
    for _ in 0..rounds {
        if set.len() < 2 {
            break;
        }
        let i = rng.gen_range(0..set.len());
        let out = set[i];
        if !is_connected_without(adj, set, out, &member) {
            continue;
        }
        member[out] = false;
        let frontier: Vec<usize> = set
            .iter()
            .filter(|&&v| v != out)
            .flat_map(|&v| adj[v].iter().copied())
            .filter(|&u| !member[u] && u != out)
            .collect();
        if frontier.is_empty() {
            member[out] = true;
            continue;
        }
        let inn = frontier[rng.gen_range(0..frontier.len())];
        set[i] = inn;
        member[inn] = true;
        let s = score(set);
        if s <= best {
            best = s;
        } else {
            member[inn] = false;
            member[out] = true;
            set[i] = out;
        }
    }
    best
}
