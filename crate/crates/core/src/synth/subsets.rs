//! Database subsets for scaling and cluster-matched experiments.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SynthError;

/// Nested random subsets: every requested size is a prefix of one shuffle, so
/// a smaller set is always contained in a larger one.
pub fn sample_db_subsets(
    dbs: &BTreeSet<String>,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<BTreeSet<String>>, SynthError> {
    for &size in sizes {
        if size == 0 || size > dbs.len() {
            return Err(SynthError::SubsetSize {
                size,
                available: dbs.len(),
            });
        }
    }
    let mut order: Vec<&String> = dbs.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(sizes
        .iter()
        .map(|&n| order[..n].iter().map(|s| s.to_string()).collect())
        .collect())
}

/// Group sizes (DBs per cluster) of `dbs`, largest first. Databases missing
/// from `clusters` count as their own singleton cluster.
pub fn cluster_histogram(dbs: &BTreeSet<String>, clusters: &BTreeMap<String, String>) -> Vec<usize> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for db in dbs {
        *counts.entry(clusters.get(db).map_or(db.as_str(), |c| c.as_str())).or_default() += 1;
    }
    let mut sizes: Vec<usize> = counts.into_values().collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes
}

const NODE_LIMIT: usize = 200_000;

struct Search<'a> {
    groups: &'a [usize],
    n_sets: usize,
    capacity: Vec<usize>,
    /// Per set: chosen cluster per group.
    chosen: Vec<Vec<usize>>,
    used_in_set: Vec<bool>,
    rank: Vec<usize>,
    nodes: usize,
    deepest: (usize, usize, usize),
}

impl Search<'_> {
    fn run(&mut self, set: usize, group: usize) -> bool {
        if set == self.n_sets {
            return true;
        }
        if group == self.groups.len() {
            self.used_in_set.iter_mut().for_each(|u| *u = false);
            if self.run(set + 1, 0) {
                return true;
            }
            for &c in &self.chosen[set] {
                self.used_in_set[c] = true;
            }
            return false;
        }
        self.nodes += 1;
        if self.nodes > NODE_LIMIT {
            return false;
        }
        let depth = set * self.groups.len() + group;
        if depth >= self.deepest.0 {
            self.deepest = (depth, set, group);
        }
        let need = self.groups[group];
        let mut options: Vec<usize> = (0..self.capacity.len())
            .filter(|&c| !self.used_in_set[c] && self.capacity[c] >= need)
            .collect();
        options.sort_by_key(|&c| (std::cmp::Reverse(self.capacity[c]), self.rank[c]));
        for c in options {
            self.capacity[c] -= need;
            self.used_in_set[c] = true;
            self.chosen[set].push(c);
            if self.run(set, group + 1) {
                return true;
            }
            self.chosen[set].pop();
            self.used_in_set[c] = false;
            self.capacity[c] += need;
            if self.nodes > NODE_LIMIT {
                return false;
            }
        }
        false
    }
}

/// Draws `n_sets` sets whose cluster-size histogram equals `reference`
/// (number of clusters and DBs per cluster). Each reference group is filled
/// from a distinct cluster of the pool. With `disjoint`, no database is
/// reused across sets; otherwise each set is drawn without replacement from
/// the full pool independently.
pub fn sample_cluster_matched(
    pool: &BTreeSet<String>,
    clusters: &BTreeMap<String, String>,
    reference: &[usize],
    n_sets: usize,
    disjoint: bool,
    seed: u64,
) -> Result<Vec<BTreeSet<String>>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for db in pool {
        members
            .entry(clusters.get(db).map_or(db.as_str(), |c| c.as_str()))
            .or_default()
            .push(db);
    }
    let names: Vec<&str> = members.keys().copied().collect();
    let mut lists: Vec<Vec<&str>> = members.into_values().collect();
    for l in &mut lists {
        l.shuffle(&mut rng);
    }
    let mut rank: Vec<usize> = (0..names.len()).collect();
    rank.shuffle(&mut rng);
    let mut groups = reference.to_vec();
    groups.sort_unstable_by(|a, b| b.cmp(a));
    if groups.is_empty() || groups.contains(&0) {
        return Err(SynthError::SubsetSize {
            size: 0,
            available: pool.len(),
        });
    }

    let mut sets = Vec::with_capacity(n_sets);
    if disjoint {
        let mut search = Search {
            groups: &groups,
            n_sets,
            capacity: lists.iter().map(Vec::len).collect(),
            chosen: vec![Vec::new(); n_sets],
            used_in_set: vec![false; names.len()],
            rank,
            nodes: 0,
            deepest: (0, 0, 0),
        };
        if !search.run(0, 0) {
            return Err(infeasible(&search, &names, &lists));
        }
        let mut taken = vec![0usize; lists.len()];
        for chosen in &search.chosen {
            let mut set = BTreeSet::new();
            for (g, &c) in chosen.iter().enumerate() {
                set.extend(lists[c][taken[c]..taken[c] + groups[g]].iter().map(|s| s.to_string()));
                taken[c] += groups[g];
            }
            sets.push(set);
        }
    } else {
        for _ in 0..n_sets {
            // Independent draw: a fresh one-set search per set.
            let mut search = Search {
                groups: &groups,
                n_sets: 1,
                capacity: lists.iter().map(Vec::len).collect(),
                chosen: vec![Vec::new()],
                used_in_set: vec![false; names.len()],
                rank: rank.clone(),
                nodes: 0,
                deepest: (0, 0, 0),
            };
            if !search.run(0, 0) {
                return Err(infeasible(&search, &names, &lists));
            }
            let mut set = BTreeSet::new();
            for (g, &c) in search.chosen[0].iter().enumerate() {
                let mut l = lists[c].clone();
                l.shuffle(&mut rng);
                set.extend(l[..groups[g]].iter().map(|s| s.to_string()));
            }
            sets.push(set);
            rank.shuffle(&mut rng);
        }
    }
    Ok(sets)
}

fn infeasible(search: &Search, names: &[&str], lists: &[Vec<&str>]) -> SynthError {
    let (_, set, group) = search.deepest;
    let group_size = search.groups[group];
    // The largest cluster that could not host the group at the deepest point.
    let blocking = (0..names.len())
        .filter(|&c| lists[c].len() < group_size || search.capacity[c] < group_size)
        .max_by_key(|&c| (search.capacity[c], std::cmp::Reverse(c)))
        .map(|c| names[c].to_string());
    SynthError::InfeasibleClusters {
        set,
        group_size,
        blocking,
    }
}
