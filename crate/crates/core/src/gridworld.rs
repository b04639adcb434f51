//! Deterministic pixel-observation maze MDP.
//!
//! The grid is loaded from an ASCII map (`#` wall, `.` free, `T` training
//! goal). Observations are 15x15x3 RGB images normalized to [-1, 1] that
//! encode the agent's location but not the goal, so one rendered image per
//! free cell fully covers the observation space (see [`ObsTable`]).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::Tensor;

pub type Cell = (usize, usize);

/// Index into `MazeMap::free_cells`, the compact state id used everywhere
/// transitions are stored.
pub type CellId = u16;

pub const ACTION_COUNT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const ALL: [Action; ACTION_COUNT] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_index(i: usize) -> Action {
        Self::ALL[i]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// (d_row, d_col)
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

/// RGB roles used by the renderer. Must be injective so distinct agent
/// positions produce distinct observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Palette {
    pub wall: [u8; 3],
    pub floor: [u8; 3],
    pub agent: [u8; 3],
}

impl Default for Palette {
    fn default() -> Self {
        Palette {
            wall: [128, 128, 128],
            floor: [0, 0, 0],
            agent: [255, 0, 0],
        }
    }
}

impl Palette {
    fn validate(&self) -> Result<()> {
        if self.wall == self.floor || self.wall == self.agent || self.floor == self.agent {
            return Err(Error::config(
                "palette colors must be pairwise distinct (wall, floor, agent)",
            ));
        }
        Ok(())
    }
}

/// Grid layout: walls, ordered free cells, and the palette used to render.
#[derive(Debug, Clone)]
pub struct MazeMap {
    pub width: usize,
    pub height: usize,
    wall: Vec<bool>,
    free_cells: Vec<Cell>,
    cell_id: Vec<Option<CellId>>,
    pub palette: Palette,
    pub training_goal: Option<Cell>,
}

/// Default 15x15 map: 52 walls, 173 free cells, connected, with the training
/// goal at [9,9] and the virtual-goal cells (corners and center) free.
pub const DEFAULT_MAP: &str = "\
.......#.......
.......#.......
.#####.#.#####.
.....#...#.....
..#..#.#.#.....
.......#.......
...............
###.###.###.###
...............
.......#.T.....
.....#.#.#..#..
.....#...#.....
.#####.#.#####.
.......#.......
.......#.......
";

impl MazeMap {
    pub fn parse(text: &str) -> Result<MazeMap> {
        Self::parse_with_palette(text, Palette::default())
    }

    pub fn parse_with_palette(text: &str, palette: Palette) -> Result<MazeMap> {
        palette.validate()?;
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if rows.is_empty() {
            return Err(Error::config("map file has no rows"));
        }
        let width = rows[0].chars().count();
        let height = rows.len();
        if width == 0 {
            return Err(Error::config("map rows are empty"));
        }
        let mut wall = vec![false; width * height];
        let mut free_cells = Vec::new();
        let mut training_goal = None;
        for (r, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::config(format!(
                    "map row {r} has {} cells, expected {width}",
                    row.chars().count()
                )));
            }
            for (c, ch) in row.chars().enumerate() {
                match ch {
                    '#' => wall[r * width + c] = true,
                    '.' => free_cells.push((r, c)),
                    'T' => {
                        if training_goal.replace((r, c)).is_some() {
                            return Err(Error::config("map has more than one training goal 'T'"));
                        }
                        free_cells.push((r, c));
                    }
                    other => {
                        return Err(Error::config(format!(
                            "map row {r} col {c}: unexpected character {other:?}"
                        )))
                    }
                }
            }
        }
        if free_cells.is_empty() {
            return Err(Error::config("map has no free cells"));
        }
        free_cells.sort_unstable();
        let mut cell_id = vec![None; width * height];
        for (i, &(r, c)) in free_cells.iter().enumerate() {
            cell_id[r * width + c] = Some(i as CellId);
        }
        let map = MazeMap {
            width,
            height,
            wall,
            free_cells,
            cell_id,
            palette,
            training_goal,
        };
        map.check_connected()?;
        Ok(map)
    }

    pub fn load(path: &std::path::Path, palette: Palette) -> Result<MazeMap> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read map file {}: {e}", path.display()))
        })?;
        Self::parse_with_palette(&text, palette)
    }

    pub fn default_map() -> MazeMap {
        Self::parse(DEFAULT_MAP).expect("built-in map is valid")
    }

    fn check_connected(&self) -> Result<()> {
        let mut seen = vec![false; self.free_cells.len()];
        let mut queue = std::collections::VecDeque::new();
        seen[0] = true;
        queue.push_back(self.free_cells[0]);
        let mut count = 1;
        while let Some(cell) = queue.pop_front() {
            for a in Action::ALL {
                let next = self.neighbor(cell, a);
                if next != cell {
                    let id = self.id_of(next).unwrap() as usize;
                    if !seen[id] {
                        seen[id] = true;
                        count += 1;
                        queue.push_back(next);
                    }
                }
            }
        }
        if count != self.free_cells.len() {
            return Err(Error::config(format!(
                "free region is not connected: reached {count} of {} cells",
                self.free_cells.len()
            )));
        }
        Ok(())
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        self.wall[cell.0 * self.width + cell.1]
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        !self.is_wall(cell)
    }

    pub fn free_cells(&self) -> &[Cell] {
        &self.free_cells
    }

    pub fn num_states(&self) -> usize {
        self.free_cells.len()
    }

    pub fn id_of(&self, cell: Cell) -> Option<CellId> {
        if cell.0 >= self.height || cell.1 >= self.width {
            return None;
        }
        self.cell_id[cell.0 * self.width + cell.1]
    }

    pub fn cell_of(&self, id: CellId) -> Cell {
        self.free_cells[id as usize]
    }

    /// Destination of a move: one cell in direction `a` unless that would be
    /// a wall or the grid edge, in which case the position is unchanged.
    pub fn neighbor(&self, cell: Cell, a: Action) -> Cell {
        let (dr, dc) = a.delta();
        let nr = cell.0 as isize + dr;
        let nc = cell.1 as isize + dc;
        if nr < 0 || nc < 0 || nr as usize >= self.height || nc as usize >= self.width {
            return cell;
        }
        let next = (nr as usize, nc as usize);
        if self.is_wall(next) {
            cell
        } else {
            next
        }
    }

    /// Renders the observation for an agent at `cell`: every cell painted by
    /// role, the agent cell painted agent-color, all values mapped to [-1, 1].
    /// The goal is not drawn.
    pub fn render(&self, cell: Cell) -> Tensor<f32> {
        let mut data = Vec::with_capacity(self.width * self.height * 3);
        for r in 0..self.height {
            for c in 0..self.width {
                let rgb = if (r, c) == cell {
                    self.palette.agent
                } else if self.is_wall((r, c)) {
                    self.palette.wall
                } else {
                    self.palette.floor
                };
                for ch in rgb {
                    data.push(normalize_channel(ch));
                }
            }
        }
        Tensor::from_vec(&[self.height, self.width, 3], data).unwrap()
    }
}

#[inline]
fn normalize_channel(c: u8) -> f32 {
    (c as f32 / 255.0) * 2.0 - 1.0
}

/// Environment parameters for one task (one goal location).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnvConfig {
    pub gamma: f32,
    pub goal: Cell,
    pub episode_cutoff: u32,
    pub reward_goal: f32,
}

impl EnvConfig {
    pub fn new(goal: Cell) -> EnvConfig {
        EnvConfig {
            gamma: 0.99,
            goal,
            episode_cutoff: 100,
            reward_goal: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvState {
    pub cell: CellId,
    pub steps: u32,
    pub terminated: bool,
}

/// One environment step. Observations are recovered from the cell ids via
/// [`MazeMap::render`] / [`ObsTable`]; rewards are 0 or reward_goal and the
/// discount is 0 exactly at the goal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: CellId,
    pub a: Action,
    pub s_next: CellId,
    pub reward: f32,
    pub discount: f32,
    pub truncated: bool,
}

/// The maze MDP: deterministic single-pixel moves, +1 at the goal, episodes
/// cut off at `episode_cutoff` steps with the cutoff transition discarded.
#[derive(Debug, Clone)]
pub struct Maze {
    pub map: Arc<MazeMap>,
    pub cfg: EnvConfig,
    goal_id: CellId,
}

impl Maze {
    pub fn new(map: Arc<MazeMap>, cfg: EnvConfig) -> Result<Maze> {
        if !(0.0..=1.0).contains(&cfg.gamma) {
            return Err(Error::config(format!("gamma {} not in [0, 1]", cfg.gamma)));
        }
        if cfg.episode_cutoff == 0 {
            return Err(Error::config("episode cutoff must be positive"));
        }
        let goal_id = map
            .id_of(cfg.goal)
            .ok_or_else(|| Error::config(format!("goal {:?} is not a free cell", cfg.goal)))?;
        if map.num_states() < 2 {
            return Err(Error::config(
                "map needs at least one free non-goal cell to start from",
            ));
        }
        Ok(Maze { map, cfg, goal_id })
    }

    pub fn goal_id(&self) -> CellId {
        self.goal_id
    }

    /// Places the agent uniformly at random on the free cells excluding the
    /// goal.
    pub fn reset(&self, rng: &mut Stream) -> EnvState {
        let n = self.map.num_states();
        // Sample over n-1 candidates by skipping the goal index.
        let k = rng.below(n - 1);
        let cell = if (k as CellId) < self.goal_id {
            k as CellId
        } else {
            (k + 1) as CellId
        };
        EnvState {
            cell,
            steps: 0,
            terminated: false,
        }
    }

    /// Advances one step. Reaching the goal terminates the episode; hitting
    /// the step cutoff without the goal yields a truncated transition (never
    /// to be stored) and teleports the agent to a fresh uniform-random start.
    pub fn step(
        &self,
        state: &EnvState,
        a: Action,
        rng: &mut Stream,
    ) -> Result<(Transition, EnvState)> {
        if state.terminated {
            return Err(Error::usage("step() called on a terminated episode"));
        }
        let cur = self.map.cell_of(state.cell);
        let next = self.map.neighbor(cur, a);
        let next_id = self.map.id_of(next).unwrap();
        let steps = state.steps + 1;
        if next_id == self.goal_id {
            let tr = Transition {
                s: state.cell,
                a,
                s_next: next_id,
                reward: self.cfg.reward_goal,
                discount: 0.0,
                truncated: false,
            };
            let st = EnvState {
                cell: next_id,
                steps,
                terminated: true,
            };
            Ok((tr, st))
        } else if steps >= self.cfg.episode_cutoff {
            let tr = Transition {
                s: state.cell,
                a,
                s_next: next_id,
                reward: 0.0,
                discount: self.cfg.gamma,
                truncated: true,
            };
            Ok((tr, self.reset(rng)))
        } else {
            let tr = Transition {
                s: state.cell,
                a,
                s_next: next_id,
                reward: 0.0,
                discount: self.cfg.gamma,
                truncated: false,
            };
            let st = EnvState {
                cell: next_id,
                steps,
                terminated: false,
            };
            Ok((tr, st))
        }
    }
}

/// One task per free cell, including the training goal (173 on the default
/// map). Order follows `free_cells`.
pub fn enumerate_tasks(map: &MazeMap, base: &EnvConfig) -> Vec<EnvConfig> {
    map.free_cells()
        .iter()
        .map(|&goal| EnvConfig { goal, ..*base })
        .collect()
}

/// Pre-rendered observations for every free cell, stored flat (row-major
/// H*W*3 per state). The observation space of this MDP is exactly this table.
#[derive(Debug, Clone)]
pub struct ObsTable {
    obs: Vec<f32>,
    pub dim: usize,
    pub n_states: usize,
}

impl ObsTable {
    pub fn build(map: &MazeMap) -> ObsTable {
        let dim = map.height * map.width * 3;
        let n = map.num_states();
        let mut obs = Vec::with_capacity(n * dim);
        for id in 0..n {
            let img = map.render(map.cell_of(id as CellId));
            obs.extend_from_slice(img.data());
        }
        ObsTable {
            obs,
            dim,
            n_states: n,
        }
    }

    #[inline]
    pub fn get(&self, id: CellId) -> &[f32] {
        let d = self.dim;
        &self.obs[id as usize * d..(id as usize + 1) * d]
    }

    /// Copies the observations for `ids` into a dense batch matrix.
    pub fn gather(&self, ids: impl IntoIterator<Item = CellId>, out: &mut Vec<f32>) {
        out.clear();
        for id in ids {
            out.extend_from_slice(self.get(id));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;

    fn default_env() -> (Arc<MazeMap>, Maze) {
        let map = Arc::new(MazeMap::default_map());
        let cfg = EnvConfig::new(map.training_goal.unwrap());
        let maze = Maze::new(Arc::clone(&map), cfg).unwrap();
        (map, maze)
    }

    #[test]
    fn default_map_has_173_connected_free_cells() {
        let map = MazeMap::default_map();
        assert_eq!(map.width, 15);
        assert_eq!(map.height, 15);
        assert_eq!(map.num_states(), 173);
        assert_eq!(map.training_goal, Some((9, 9)));
        // Virtual-goal cells must be free.
        for cell in [(0, 0), (0, 14), (14, 0), (14, 14), (7, 7), (9, 9)] {
            assert!(map.id_of(cell).is_some(), "{cell:?} should be free");
        }
        // parse() enforced connectivity already; sanity-check coverage.
        let n_walls = (0..15)
            .flat_map(|r| (0..15).map(move |c| (r, c)))
            .filter(|&cell| map.is_wall(cell))
            .count();
        assert_eq!(n_walls + map.num_states(), 225);
    }

    #[test]
    fn enumerate_tasks_covers_every_free_cell() {
        let (map, maze) = default_env();
        let tasks = enumerate_tasks(&map, &maze.cfg);
        assert_eq!(tasks.len(), 173);
        assert!(tasks.iter().any(|t| t.goal == (9, 9)));
        let two = MazeMap::parse("T.\n##").unwrap();
        assert_eq!(enumerate_tasks(&two, &EnvConfig::new((0, 0))).len(), 2);
    }

    #[test]
    fn reset_with_two_free_cells_is_deterministic() {
        let map = Arc::new(MazeMap::parse("T.\n##").unwrap());
        let maze = Maze::new(Arc::clone(&map), EnvConfig::new((0, 0))).unwrap();
        let mut rng = Seed(1).stream();
        for _ in 0..32 {
            let st = maze.reset(&mut rng);
            assert_eq!(map.cell_of(st.cell), (0, 1));
        }
    }

    #[test]
    fn reset_rejects_goal_outside_free_cells() {
        let map = Arc::new(MazeMap::default_map());
        // (7, 0) is a wall on the default map.
        let err = Maze::new(Arc::clone(&map), EnvConfig::new((7, 0))).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn reset_distribution_is_uniform_chi_squared() {
        let (map, maze) = default_env();
        let mut rng = Seed(20240607).child("env").stream();
        let mut counts = vec![0usize; map.num_states()];
        let n = 10_000usize;
        for _ in 0..n {
            counts[maze.reset(&mut rng).cell as usize] += 1;
        }
        let goal = maze.goal_id() as usize;
        assert_eq!(counts[goal], 0, "goal must never be a start state");
        let k = map.num_states() - 1;
        let expected = n as f64 / k as f64;
        let chi2: f64 = counts
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != goal)
            .map(|(_, &c)| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // Wilson-Hilferty critical value for chi^2 at significance 0.01.
        let df = (k - 1) as f64;
        let z = 2.3263478740408408; // Phi^-1(0.99)
        let crit = df * (1.0 - 2.0 / (9.0 * df) + z * (2.0 / (9.0 * df)).sqrt()).powi(3);
        assert!(
            chi2 < crit,
            "chi2 {chi2:.1} exceeds critical value {crit:.1} at df {df}"
        );
    }

    #[test]
    fn action_into_wall_keeps_position() {
        let (map, maze) = default_env();
        // (0, 6) is free; (0, 7) is a wall: moving right must not move.
        let start = map.id_of((0, 6)).unwrap();
        let st = EnvState {
            cell: start,
            steps: 0,
            terminated: false,
        };
        let mut rng = Seed(2).stream();
        let (tr, next) = maze.step(&st, Action::Right, &mut rng).unwrap();
        assert_eq!(tr.s_next, start);
        assert_eq!(next.cell, start);
        assert_eq!(tr.reward, 0.0);
        assert_eq!(tr.discount, maze.cfg.gamma);
        // Grid edge behaves like a wall.
        let (tr2, _) = maze.step(&st, Action::Up, &mut rng).unwrap();
        assert_eq!(tr2.s_next, start);
    }

    #[test]
    fn reaching_goal_terminates_with_reward() {
        let (map, maze) = default_env();
        let adj = map.id_of((8, 9)).unwrap(); // directly above the goal (9,9)
        let st = EnvState {
            cell: adj,
            steps: 0,
            terminated: false,
        };
        let mut rng = Seed(3).stream();
        let (tr, next) = maze.step(&st, Action::Down, &mut rng).unwrap();
        assert_eq!(tr.reward, 1.0);
        assert_eq!(tr.discount, 0.0);
        assert!(!tr.truncated);
        assert!(next.terminated);
        let err = maze.step(&next, Action::Up, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn cutoff_truncates_and_teleports() {
        let (map, maze) = default_env();
        let mut rng = Seed(4).stream();
        // Walk into the top-left corner wall repeatedly: never reaches goal.
        let corner = map.id_of((0, 0)).unwrap();
        let mut st = EnvState {
            cell: corner,
            steps: 0,
            terminated: false,
        };
        for i in 1..=100 {
            let (tr, next) = maze.step(&st, Action::Up, &mut rng).unwrap();
            if i < 100 {
                assert!(!tr.truncated);
                st = next;
            } else {
                assert!(tr.truncated, "100th step without goal must truncate");
                assert_eq!(next.steps, 0, "truncation teleports to a fresh start");
                assert!(!next.terminated);
            }
        }
    }

    #[test]
    fn render_matches_background_except_agent_cell() {
        let (map, _) = default_env();
        let a = map.render((0, 0));
        let b = map.render((0, 1));
        assert_eq!(a.shape(), &[15, 15, 3]);
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let diff_cells: Vec<usize> = (0..225)
            .filter(|i| (0..3).any(|c| a.data()[i * 3 + c] != b.data()[i * 3 + c]))
            .collect();
        assert_eq!(diff_cells, vec![0, 1], "exactly the two agent cells differ");
        // Goal cell is rendered as floor: indistinguishable from any other
        // free cell.
        let img = map.render((0, 0));
        let goal_px = &img.data()[(9 * 15 + 9) * 3..(9 * 15 + 9) * 3 + 3];
        let floor_px = &img.data()[(8 * 15 + 9) * 3..(8 * 15 + 9) * 3 + 3];
        assert_eq!(goal_px, floor_px);
        // Exactly one agent-colored cell.
        let agent = [
            normalize_channel(255),
            normalize_channel(0),
            normalize_channel(0),
        ];
        let n_agent = (0..225)
            .filter(|i| img.data()[i * 3..i * 3 + 3] == agent)
            .count();
        assert_eq!(n_agent, 1);
    }

    #[test]
    fn obs_table_matches_render() {
        let (map, _) = default_env();
        let table = ObsTable::build(&map);
        assert_eq!(table.n_states, 173);
        assert_eq!(table.dim, 675);
        let id = map.id_of((3, 4)).unwrap();
        assert_eq!(table.get(id), map.render((3, 4)).data());
    }

    #[test]
    fn parse_rejects_malformed_maps() {
        assert!(MazeMap::parse("").is_err());
        assert!(MazeMap::parse("..\n...").is_err()); // ragged
        assert!(MazeMap::parse("..X\n...").is_err()); // bad char
        assert!(MazeMap::parse("T.T\n...").is_err()); // two goals
        assert!(MazeMap::parse(".#.\n###\n.#.").is_err()); // disconnected
    }
}
