//! The unstructured skill repertoire: nearest-neighbour queries in behavior
//! space, novelty scores, and the threshold/replace insertion rule.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::env::{Action, Behavior};
use crate::error::{Error, Result};

/// One entry of the repertoire: an action together with the behavior and
/// quality it produced. `novelty` is a cache refreshed once per generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub action: Action,
    pub behavior: Behavior,
    pub quality: f64,
    #[serde(default)]
    pub novelty: f64,
}

impl Skill {
    pub fn new(action: Action, behavior: Behavior, quality: f64) -> Self {
        Skill {
            action,
            behavior,
            quality,
            novelty: 0.0,
        }
    }
}

/// Result of offering a candidate to [`Repertoire::try_insert`].
#[derive(Clone, Debug, PartialEq)]
pub enum InsertOutcome {
    Added,
    /// The candidate took the place of its nearest neighbour, returned here.
    Replaced(Skill),
    Rejected,
}

/// Append-only store of every rejected or displaced skill.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    skills: Vec<Skill>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, skill: Skill) {
        self.skills.push(skill);
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    pub fn skills(&self) -> &[Skill] {
        &self.skills
    }
}

/// Neighbour found by a kNN query: slot index and Euclidean distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

type Cell = (i64, i64);

/// Below this size a linear scan beats the grid.
const LINEAR_SCAN: usize = 48;

/// Uniform hash grid over behavior space. Only an index: every query
/// returns exactly what an exhaustive scan would.
#[derive(Clone, Debug)]
struct Grid {
    size: f64,
    cells: HashMap<Cell, Vec<usize>>,
    lo: Cell,
    hi: Cell,
}

impl Grid {
    fn new(size: f64) -> Self {
        Grid {
            size,
            cells: HashMap::new(),
            lo: (i64::MAX, i64::MAX),
            hi: (i64::MIN, i64::MIN),
        }
    }

    fn cell(&self, b: &Behavior) -> Cell {
        (
            (b.x() / self.size).floor() as i64,
            (b.y() / self.size).floor() as i64,
        )
    }

    fn insert(&mut self, b: &Behavior, index: usize) {
        let c = self.cell(b);
        self.cells.entry(c).or_default().push(index);
        self.lo = (self.lo.0.min(c.0), self.lo.1.min(c.1));
        self.hi = (self.hi.0.max(c.0), self.hi.1.max(c.1));
    }

    fn remove(&mut self, b: &Behavior, index: usize) {
        let c = self.cell(b);
        if let Some(v) = self.cells.get_mut(&c) {
            v.retain(|&i| i != index);
            if v.is_empty() {
                self.cells.remove(&c);
            }
        }
    }
}

/// Growing set of skills with kNN queries in behavior space.
#[derive(Clone, Debug)]
pub struct Repertoire {
    skills: Vec<Skill>,
    /// Insertion sequence number of each slot, used to break distance ties.
    stamps: Vec<u64>,
    next_stamp: u64,
    k: usize,
    t_dist: f64,
    grid: Grid,
}

impl Repertoire {
    /// Creates an empty repertoire with `k` neighbours for novelty and
    /// insertion threshold `t_dist`.
    pub fn new(k: usize, t_dist: f64) -> Result<Self> {
        if k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(t_dist > 0.0) {
            return Err(Error::Config("t_dist must be positive".into()));
        }
        Ok(Repertoire {
            skills: Vec::new(),
            stamps: Vec::new(),
            next_stamp: 0,
            k,
            t_dist,
            grid: Grid::new(2.0 * t_dist),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn t_dist(&self) -> f64 {
        self.t_dist
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    pub fn skills(&self) -> &[Skill] {
        &self.skills
    }

    pub fn get(&self, index: usize) -> Option<&Skill> {
        self.skills.get(index)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Skill> {
        self.skills.iter()
    }

    /// Appends a skill unconditionally, bypassing the threshold rule. Used
    /// when loading a saved repertoire.
    pub fn push_unchecked(&mut self, skill: Skill) {
        let index = self.skills.len();
        self.grid.insert(&skill.behavior, index);
        self.skills.push(skill);
        self.stamps.push(self.next_stamp);
        self.next_stamp += 1;
    }

    fn replace_at(&mut self, index: usize, skill: Skill) -> Skill {
        self.grid.remove(&self.skills[index].behavior, index);
        self.grid.insert(&skill.behavior, index);
        self.stamps[index] = self.next_stamp;
        self.next_stamp += 1;
        std::mem::replace(&mut self.skills[index], skill)
    }

    /// Nearest `k` stored behaviors to `point`, closest first; ties go to the
    /// older entry. `exclude` drops one slot from consideration.
    pub fn neighbors(&self, point: &Behavior, k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        let available = self.len() - usize::from(exclude.is_some_and(|i| i < self.len()));
        let k = k.min(available);
        if k == 0 {
            return Vec::new();
        }
        let mut best: Vec<(f64, u64, usize)> = Vec::with_capacity(k + 1);
        let offer = |i: usize, best: &mut Vec<(f64, u64, usize)>| {
            if Some(i) == exclude {
                return;
            }
            let d = point.distance(&self.skills[i].behavior);
            let key = (d, self.stamps[i], i);
            if best.len() == k {
                let last = best[k - 1];
                if (key.0, key.1) >= (last.0, last.1) {
                    return;
                }
                best.pop();
            }
            let pos = best
                .iter()
                .position(|e| (key.0, key.1) < (e.0, e.1))
                .unwrap_or(best.len());
            best.insert(pos, key);
        };

        if self.len() <= LINEAR_SCAN {
            for i in 0..self.len() {
                offer(i, &mut best);
            }
        } else {
            let g = &self.grid;
            let (cx, cy) = g.cell(point);
            // rings needed to reach every occupied cell
            let max_ring = [g.lo.0 - cx, g.hi.0 - cx, g.lo.1 - cy, g.hi.1 - cy]
                .into_iter()
                .map(i64::abs)
                .max()
                .unwrap_or(0);
            for ring in 0..=max_ring {
                let visit = |c: Cell, best: &mut Vec<(f64, u64, usize)>| {
                    if let Some(v) = g.cells.get(&c) {
                        for &i in v {
                            offer(i, best);
                        }
                    }
                };
                if ring == 0 {
                    visit((cx, cy), &mut best);
                } else {
                    for dx in -ring..=ring {
                        visit((cx + dx, cy - ring), &mut best);
                        visit((cx + dx, cy + ring), &mut best);
                    }
                    for dy in (-ring + 1)..ring {
                        visit((cx - ring, cy + dy), &mut best);
                        visit((cx + ring, cy + dy), &mut best);
                    }
                }
                // anything outside the visited block is at least this far away
                let reach = ring as f64 * g.size;
                if best.len() == k && best[k - 1].0 < reach {
                    break;
                }
            }
        }
        best.into_iter()
            .map(|(distance, _, index)| Neighbor { index, distance })
            .collect()
    }

    /// The `k` skills closest to `point` in behavior space, closest first.
    pub fn knn(&self, point: &Behavior, k: usize) -> Result<Vec<&Skill>> {
        if self.is_empty() {
            return Err(Error::EmptyRepertoire);
        }
        Ok(self
            .neighbors(point, k, None)
            .into_iter()
            .map(|n| &self.skills[n.index])
            .collect())
    }

    /// Mean distance from `point` to its `K` nearest stored behaviors (fewer
    /// when the repertoire is smaller than `K`).
    pub fn novelty(&self, point: &Behavior) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyRepertoire);
        }
        Ok(mean_distance(&self.neighbors(point, self.k, None)))
    }

    /// Novelty of the stored skill at `index`, not counting itself as a
    /// neighbour. A lone skill has novelty 0.
    pub fn novelty_of(&self, index: usize) -> f64 {
        mean_distance(&self.neighbors(&self.skills[index].behavior, self.k, Some(index)))
    }

    /// Recomputes every cached novelty score.
    pub fn refresh_novelties(&mut self) {
        let scores: Vec<f64> = (0..self.len()).map(|i| self.novelty_of(i)).collect();
        for (skill, s) in self.skills.iter_mut().zip(scores) {
            skill.novelty = s;
        }
    }

    /// Threshold/replace rule: a candidate further than `t_dist` from its
    /// nearest neighbour is added; otherwise it replaces that neighbour if
    /// its quality is strictly higher. Losers go to the archive.
    pub fn try_insert(&mut self, archive: &mut Archive, candidate: Skill) -> InsertOutcome {
        let nearest = self.neighbors(&candidate.behavior, 1, None).first().copied();
        match nearest {
            None => {
                self.push_unchecked(candidate);
                InsertOutcome::Added
            }
            Some(nn) if nn.distance > self.t_dist => {
                self.push_unchecked(candidate);
                InsertOutcome::Added
            }
            Some(nn) if candidate.quality > self.skills[nn.index].quality => {
                let old = self.replace_at(nn.index, candidate);
                archive.push(old.clone());
                InsertOutcome::Replaced(old)
            }
            Some(_) => {
                archive.push(candidate);
                InsertOutcome::Rejected
            }
        }
    }
}

fn mean_distance(neighbors: &[Neighbor]) -> f64 {
    if neighbors.is_empty() {
        return 0.0;
    }
    neighbors.iter().map(|n| n.distance).sum::<f64>() / neighbors.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn skill(x: f64, y: f64, q: f64) -> Skill {
        Skill::new(Action(vec![x, y]), Behavior::new(x, y), q)
    }

    fn random_rep(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Repertoire {
        let mut rep = Repertoire::new(k, 0.02).unwrap();
        for _ in 0..n {
            rep.push_unchecked(skill(rng.random(), rng.random(), rng.random()));
        }
        rep
    }

    /// Exhaustive oracle: every distance, stable-sorted.
    fn brute_knn(rep: &Repertoire, p: &Behavior, k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = rep
            .skills()
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, s)| {
                let d = ((s.behavior.x() - p.x()).powi(2) + (s.behavior.y() - p.y()).powi(2)).sqrt();
                (i, d)
            })
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1));
        all.truncate(k);
        all
    }

    #[test]
    fn knn_on_singleton_returns_it() {
        let mut rep = Repertoire::new(5, 0.02).unwrap();
        rep.push_unchecked(skill(0.1, 0.2, 0.5));
        let nn = rep.knn(&Behavior::new(0.9, 0.9), 5).unwrap();
        assert_eq!(nn.len(), 1);
    }

    #[test]
    fn knn_of_stored_point_is_itself_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rep = random_rep(&mut rng, 20, 5);
        let b = rep.skills()[7].behavior;
        let n = rep.neighbors(&b, 3, None);
        assert_eq!(n[0].index, 7);
        assert_eq!(n[0].distance, 0.0);
    }

    #[test]
    fn empty_repertoire_errors() {
        let rep = Repertoire::new(5, 0.02).unwrap();
        assert_eq!(rep.knn(&Behavior::new(0.0, 0.0), 1).unwrap_err(), Error::EmptyRepertoire);
        assert_eq!(rep.novelty(&Behavior::new(0.0, 0.0)).unwrap_err(), Error::EmptyRepertoire);
    }

    #[test]
    fn ties_go_to_older_entries() {
        let mut rep = Repertoire::new(1, 0.02).unwrap();
        rep.push_unchecked(skill(0.0, 1.0, 0.1));
        rep.push_unchecked(skill(1.0, 0.0, 0.2));
        let n = rep.neighbors(&Behavior::new(0.0, 0.0), 1, None);
        assert_eq!(n[0].index, 0);
    }

    #[test]
    fn knn_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [50, 300] {
            let rep = random_rep(&mut rng, n, 5);
            for _ in 0..50 {
                let p = Behavior::new(rng.random_range(-0.2..1.2), rng.random_range(-0.2..1.2));
                let got: Vec<(usize, f64)> =
                    rep.neighbors(&p, 5, None).iter().map(|n| (n.index, n.distance)).collect();
                assert_eq!(got, brute_knn(&rep, &p, 5, None));
            }
        }
    }

    #[test]
    fn novelty_examples() {
        let mut rep = Repertoire::new(1, 0.02).unwrap();
        rep.push_unchecked(skill(0.3, 0.0, 0.5));
        assert!((rep.novelty(&Behavior::new(0.0, 0.0)).unwrap() - 0.3).abs() < 1e-15);

        let mut rep = Repertoire::new(2, 0.02).unwrap();
        rep.push_unchecked(skill(0.1, 0.0, 0.5));
        rep.push_unchecked(skill(0.0, 0.3, 0.5));
        assert!((rep.novelty(&Behavior::new(0.0, 0.0)).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn novelty_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rep = random_rep(&mut rng, 100, 5);
        for _ in 0..20 {
            let p = Behavior::new(rng.random(), rng.random());
            let oracle: f64 = brute_knn(&rep, &p, 5, None).iter().map(|x| x.1).sum::<f64>() / 5.0;
            assert!((rep.novelty(&p).unwrap() - oracle).abs() < 1e-14);
        }
    }

    #[test]
    fn refresh_excludes_self() {
        let mut rep = Repertoire::new(5, 0.02).unwrap();
        rep.push_unchecked(skill(0.5, 0.5, 0.5));
        rep.refresh_novelties();
        assert_eq!(rep.skills()[0].novelty, 0.0);

        rep.push_unchecked(skill(0.5, 0.9, 0.5));
        rep.refresh_novelties();
        for s in rep.skills() {
            assert!((s.novelty - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn refreshed_caches_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rep = random_rep(&mut rng, 200, 5);
        rep.refresh_novelties();
        for (i, s) in rep.skills().iter().enumerate() {
            let oracle: f64 =
                brute_knn(&rep, &s.behavior, 5, Some(i)).iter().map(|x| x.1).sum::<f64>() / 5.0;
            assert!((s.novelty - oracle).abs() < 1e-14);
        }
    }

    #[test]
    fn insertion_rule() {
        let mut rep = Repertoire::new(5, 0.02).unwrap();
        let mut archive = Archive::new();
        assert_eq!(rep.try_insert(&mut archive, skill(0.5, 0.5, 0.5)), InsertOutcome::Added);

        let better = skill(0.51, 0.5, 0.9);
        let out = rep.try_insert(&mut archive, better.clone());
        assert_eq!(out, InsertOutcome::Replaced(skill(0.5, 0.5, 0.5)));
        assert_eq!(rep.len(), 1);
        assert_eq!(rep.skills()[0], better);
        assert_eq!(archive.len(), 1);

        assert_eq!(rep.try_insert(&mut archive, skill(0.52, 0.5, 0.4)), InsertOutcome::Rejected);
        assert_eq!(archive.len(), 2);
        assert_eq!(rep.len(), 1);

        assert_eq!(rep.try_insert(&mut archive, skill(0.6, 0.5, 0.1)), InsertOutcome::Added);
        assert_eq!(rep.len(), 2);
    }

    #[test]
    fn equal_quality_duplicate_is_rejected() {
        let mut rep = Repertoire::new(5, 0.02).unwrap();
        let mut archive = Archive::new();
        rep.try_insert(&mut archive, skill(0.5, 0.5, 0.5));
        assert_eq!(rep.try_insert(&mut archive, skill(0.5, 0.5, 0.5)), InsertOutcome::Rejected);
    }

    #[test]
    fn grid_stays_consistent_after_replacements() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut rep = Repertoire::new(5, 0.02).unwrap();
        let mut archive = Archive::new();
        for _ in 0..3000 {
            rep.try_insert(&mut archive, skill(rng.random(), rng.random(), rng.random()));
        }
        for _ in 0..50 {
            let p = Behavior::new(rng.random(), rng.random());
            let got: Vec<usize> = rep.neighbors(&p, 5, None).iter().map(|n| n.index).collect();
            let want: Vec<usize> = brute_knn(&rep, &p, 5, None).iter().map(|x| x.0).collect();
            assert_eq!(got, want);
        }
    }

    proptest! {
        #[test]
        fn bookkeeping_invariants(points in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..200)) {
            let mut rep = Repertoire::new(5, 0.05).unwrap();
            let mut archive = Archive::new();
            for (x, y, q) in points.iter().copied() {
                let before = rep.len();
                let nn = rep.neighbors(&Behavior::new(x, y), 1, None).first().map(|n| n.distance);
                match rep.try_insert(&mut archive, skill(x, y, q)) {
                    InsertOutcome::Added => {
                        prop_assert_eq!(rep.len(), before + 1);
                        prop_assert!(nn.is_none_or(|d| d > 0.05));
                    }
                    _ => prop_assert_eq!(rep.len(), before),
                }
            }
            prop_assert_eq!(rep.len() + archive.len(), points.len());
        }

        #[test]
        fn novelty_is_translation_invariant(
            points in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..80),
            q in (0.0f64..1.0, 0.0f64..1.0),
            shift in (-5.0f64..5.0, -5.0f64..5.0),
        ) {
            let mut a = Repertoire::new(5, 0.02).unwrap();
            let mut b = Repertoire::new(5, 0.02).unwrap();
            for (x, y) in points {
                a.push_unchecked(skill(x, y, 0.5));
                b.push_unchecked(skill(x + shift.0, y + shift.1, 0.5));
            }
            let na = a.novelty(&Behavior::new(q.0, q.1)).unwrap();
            let nb = b.novelty(&Behavior::new(q.0 + shift.0, q.1 + shift.1)).unwrap();
            prop_assert!((na - nb).abs() < 1e-9);
        }

        #[test]
        fn knn_ignores_storage_order(
            points in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..120),
            q in (0.0f64..1.0, 0.0f64..1.0),
        ) {
            let mut fwd = Repertoire::new(5, 0.02).unwrap();
            let mut rev = Repertoire::new(5, 0.02).unwrap();
            for &(x, y) in &points {
                fwd.push_unchecked(skill(x, y, 0.5));
            }
            for &(x, y) in points.iter().rev() {
                rev.push_unchecked(skill(x, y, 0.5));
            }
            let p = Behavior::new(q.0, q.1);
            let a: Vec<f64> = fwd.neighbors(&p, 5, None).iter().map(|n| n.distance).collect();
            let b: Vec<f64> = rev.neighbors(&p, 5, None).iter().map(|n| n.distance).collect();
            prop_assert_eq!(a, b);
        }
    }
}
