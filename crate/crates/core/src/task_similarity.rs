//! Tabular ground truth: value iteration over the maze's free cells,
//! successor representations under the optimal policy, and the dot-product
//! task-similarity ranking over all goals.

use crate::error::{Error, Result};
use crate::gridworld::{Action, Cell, CellId, MazeMap, ACTION_COUNT};

/// The maze viewed as a finite MDP: one state per free cell, deterministic
/// transitions, reward 1 on entering the goal, goal absorbing.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub n: usize,
    /// next[s * 4 + a] = successor state id (s itself when blocked).
    pub next: Vec<CellId>,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn from_map(map: &MazeMap, gamma: f64) -> TabularMdp {
        let n = map.num_states();
        let mut next = Vec::with_capacity(n * ACTION_COUNT);
        for id in 0..n {
            let cell = map.cell_of(id as CellId);
            for a in Action::ALL {
                let dest = map.neighbor(cell, a);
                next.push(map.id_of(dest).unwrap());
            }
        }
        TabularMdp { n, next, gamma }
    }

    #[inline]
    pub fn step(&self, s: CellId, a: usize) -> CellId {
        self.next[s as usize * ACTION_COUNT + a]
    }
}

/// Sup-norm-converged optimal values and the greedy policy (ties broken by
/// the lowest action index). V(goal) = 0 by the absorbing convention; a cell
/// adjacent to the goal has V = 1 and a cell k steps away has gamma^(k-1).
pub fn value_iteration(mdp: &TabularMdp, goal: CellId, tol: f64) -> Result<(Vec<f64>, Vec<u8>)> {
    let n = mdp.n;
    let mut v = vec![0.0f64; n];
    let mut v_next = vec![0.0f64; n];
    let max_iters = 100_000;
    let mut iters = 0;
    loop {
        let mut delta = 0.0f64;
        for s in 0..n {
            if s == goal as usize {
                v_next[s] = 0.0;
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for a in 0..ACTION_COUNT {
                let sp = mdp.step(s as CellId, a);
                let q = if sp == goal {
                    1.0
                } else {
                    mdp.gamma * v[sp as usize]
                };
                best = best.max(q);
            }
            v_next[s] = best;
        }
        for s in 0..n {
            delta = delta.max((v_next[s] - v[s]).abs());
        }
        std::mem::swap(&mut v, &mut v_next);
        iters += 1;
        if delta <= tol {
            break;
        }
        if iters > max_iters {
            return Err(Error::config(
                "value iteration failed to converge; is the goal reachable from every state?",
            ));
        }
    }
    // Unreachable states keep value 0 but must not exist on a connected map.
    for s in 0..n {
        if s != goal as usize && v[s] <= 0.0 {
            return Err(Error::config(format!(
                "state {s} cannot reach the goal (value 0)"
            )));
        }
    }
    let mut policy = vec![0u8; n];
    for s in 0..n {
        if s == goal as usize {
            continue;
        }
        let mut best_a = 0;
        let mut best_q = f64::NEG_INFINITY;
        for a in 0..ACTION_COUNT {
            let sp = mdp.step(s as CellId, a);
            let q = if sp == goal {
                1.0
            } else {
                mdp.gamma * v[sp as usize]
            };
            if q > best_q {
                best_q = q;
                best_a = a;
            }
        }
        policy[s] = best_a as u8;
    }
    Ok((v, policy))
}

/// ψ(s) for every state: the discounted one-hot state-visitation sum along
/// the deterministic greedy trajectory from s until absorption at the goal.
/// Errors if a trajectory fails to reach the goal within n steps (a cycle).
pub fn successor_representation(
    mdp: &TabularMdp,
    policy: &[u8],
    goal: CellId,
) -> Result<Vec<f64>> {
    let n = mdp.n;
    let mut psi = vec![0.0f64; n * n];
    for s0 in 0..n {
        let row = &mut psi[s0 * n..(s0 + 1) * n];
        let mut s = s0 as CellId;
        let mut disc = 1.0f64;
        let mut steps = 0usize;
        loop {
            row[s as usize] += disc;
            if s == goal {
                break;
            }
            s = mdp.step(s, policy[s as usize] as usize);
            disc *= mdp.gamma;
            steps += 1;
            if steps > n {
                return Err(Error::numerical(format!(
                    "greedy policy cycles without reaching the goal from state {s0}"
                )));
            }
        }
    }
    Ok(psi)
}

/// Per-task concatenated successor representation Ψ (length n²) plus its id.
#[derive(Debug, Clone)]
pub struct SuccessorProfile {
    pub goal: Cell,
    pub goal_id: CellId,
    pub psi: Vec<f64>,
}

/// Builds the profile for one goal.
pub fn successor_profile(map: &MazeMap, mdp: &TabularMdp, goal: Cell) -> Result<SuccessorProfile> {
    let goal_id = map
        .id_of(goal)
        .ok_or_else(|| Error::config(format!("goal {goal:?} is not a free cell")))?;
    let (_v, policy) = value_iteration(mdp, goal_id, 1e-10)?;
    let psi = successor_representation(mdp, &policy, goal_id)?;
    Ok(SuccessorProfile {
        goal,
        goal_id,
        psi,
    })
}

/// Dot product between two concatenated successor representations.
pub fn task_similarity(a: &SuccessorProfile, b: &SuccessorProfile) -> f64 {
    debug_assert_eq!(a.psi.len(), b.psi.len());
    a.psi.iter().zip(&b.psi).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
pub struct RankedTask {
    pub rank: usize,
    pub goal: Cell,
    pub similarity: f64,
}

/// All tasks (one per free cell) ordered by descending similarity to the
/// training goal; ties break by (row, col). The training task ranks first.
pub fn rank_tasks(map: &MazeMap, gamma: f64, training_goal: Cell) -> Result<Vec<RankedTask>> {
    let mdp = TabularMdp::from_map(map, gamma);
    let train = successor_profile(map, &mdp, training_goal)?;
    let mut scored: Vec<(Cell, f64)> = Vec::with_capacity(map.num_states());
    for &goal in map.free_cells() {
        let profile = if goal == training_goal {
            task_similarity(&train, &train)
        } else {
            let p = successor_profile(map, &mdp, goal)?;
            task_similarity(&train, &p)
        };
        scored.push((goal, profile));
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (goal, similarity))| RankedTask {
            rank: i + 1,
            goal,
            similarity,
        })
        .collect())
}

/// Picks `k` tasks stratified across the similarity ranking: evenly spaced
/// ranks from most similar (rank 1, excluding the training goal itself when
/// possible) to least similar.
pub fn stratified_tasks(ranked: &[RankedTask], k: usize) -> Vec<RankedTask> {
    assert!(k >= 1);
    let pool: Vec<&RankedTask> = ranked.iter().collect();
    let n = pool.len();
    if k >= n {
        return ranked.to_vec();
    }
    let mut picks = Vec::with_capacity(k);
    for i in 0..k {
        let idx = if k == 1 {
            0
        } else {
            (i as f64 * (n - 1) as f64 / (k - 1) as f64).round() as usize
        };
        picks.push(pool[idx].clone());
    }
    picks.dedup_by_key(|t| t.goal);
    picks
}

/// ASCII rank map: each free cell shows its similarity rank, the training
/// goal shows `O`, walls show `###`.
pub fn rank_map_ascii(map: &MazeMap, ranked: &[RankedTask], training_goal: Cell) -> String {
    let mut rank_of = std::collections::BTreeMap::new();
    for t in ranked {
        rank_of.insert(t.goal, t.rank);
    }
    let mut out = String::new();
    for r in 0..map.height {
        for c in 0..map.width {
            let cell = (r, c);
            let token = if map.is_wall(cell) {
                "###".to_string()
            } else if cell == training_goal {
                "  O".to_string()
            } else {
                format!("{:>3}", rank_of.get(&cell).copied().unwrap_or(0))
            };
            out.push_str(&token);
            if c + 1 < map.width {
                out.push(' ');
            }
        }
        out.push('\n');
    }
    out
}
