//! Text gridworld maze.
//!
//! Cells are `(row, col)` with `(0, 0)` in the top-left corner; `up`
//! decreases the row and `left` decreases the column. Walls block movement
//! between two adjacent cells. Moving into a wall or off the grid leaves the
//! agent in place. Each move costs -1 until the goal is reached; reaching the
//! goal ends the episode with a 0-reward transition and success 1, and an
//! episode that runs out of rounds ends with success 0.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, RolloutPolicy, StepOutcome};
use crate::error::{Error, Result};
use crate::seed;
use crate::trajectory::{Step, Trajectory};

pub type Cell = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    /// Also the tie-break order for shortest paths.
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn reverse(self) -> Direction {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }

    pub fn parse(text: &str) -> Option<Direction> {
        let t = text.trim().trim_end_matches('.').to_ascii_lowercase();
        let t = t.strip_prefix("move ").unwrap_or(&t).trim();
        Direction::ALL.into_iter().find(|d| d.as_str() == t)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Serialized maze description (the MazeSpec file format).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MazeSpec {
    pub width: usize,
    pub height: usize,
    /// Each wall blocks the edge between two adjacent `[row, col]` cells.
    pub walls: Vec<[[usize; 2]; 2]>,
    pub start: [usize; 2],
    pub goal: [usize; 2],
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    #[serde(default)]
    pub seed: u64,
}

pub const DEFAULT_MAX_ROUNDS: usize = 15;

fn default_max_rounds() -> usize {
    DEFAULT_MAX_ROUNDS
}

impl MazeSpec {
    pub fn open(width: usize, height: usize, start: Cell, goal: Cell) -> Self {
        MazeSpec {
            width,
            height,
            walls: Vec::new(),
            start: [start.0, start.1],
            goal: [goal.0, goal.1],
            max_rounds: DEFAULT_MAX_ROUNDS,
            seed: 0,
        }
    }

    /// Layout identity used to keep splits disjoint.
    fn layout_key(&self) -> (usize, usize, Vec<[[usize; 2]; 2]>, [usize; 2], [usize; 2]) {
        let mut walls: Vec<_> = self.walls.iter().map(|&[a, b]| if a <= b { [a, b] } else { [b, a] }).collect();
        walls.sort_unstable();
        (self.width, self.height, walls, self.start, self.goal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MazeState {
    pub pos: Cell,
    pub rounds: usize,
}

/// A validated maze with precomputed goal distances.
#[derive(Debug, Clone)]
pub struct Maze {
    spec: MazeSpec,
    walls: HashSet<(Cell, Cell)>,
    /// BFS distance to the goal per cell, row-major; `None` if unreachable.
    dist: Vec<Option<usize>>,
}

fn edge(a: Cell, b: Cell) -> (Cell, Cell) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Maze {
    pub fn new(spec: MazeSpec) -> Result<Self> {
        let bad = |m: String| Err(Error::Generation(m));
        if spec.width == 0 || spec.height == 0 {
            return bad("maze must have at least one cell".into());
        }
        if spec.max_rounds == 0 {
            return bad("max_rounds must be >= 1".into());
        }
        let in_bounds = |[r, c]: [usize; 2]| r < spec.height && c < spec.width;
        if !in_bounds(spec.start) || !in_bounds(spec.goal) {
            return bad("start or goal out of bounds".into());
        }
        if spec.start == spec.goal {
            return bad("start equals goal".into());
        }
        let mut walls = HashSet::new();
        for &[a, b] in &spec.walls {
            if !in_bounds(a) || !in_bounds(b) || a[0].abs_diff(b[0]) + a[1].abs_diff(b[1]) != 1 {
                return bad(format!("wall {a:?}-{b:?} does not join two adjacent cells"));
            }
            walls.insert(edge((a[0], a[1]), (b[0], b[1])));
        }
        let mut maze = Maze { spec, walls, dist: Vec::new() };
        maze.dist = maze.distances_to_goal();
        if maze.distance(maze.start()).is_none() {
            return bad("goal unreachable from start".into());
        }
        Ok(maze)
    }

    pub fn spec(&self) -> &MazeSpec {
        &self.spec
    }

    pub fn start(&self) -> Cell {
        (self.spec.start[0], self.spec.start[1])
    }

    pub fn goal(&self) -> Cell {
        (self.spec.goal[0], self.spec.goal[1])
    }

    fn neighbor(&self, (r, c): Cell, d: Direction) -> Option<Cell> {
        let next = match d {
            Direction::Up => (r.checked_sub(1)?, c),
            Direction::Down => (r + 1, c),
            Direction::Left => (r, c.checked_sub(1)?),
            Direction::Right => (r, c + 1),
        };
        (next.0 < self.spec.height && next.1 < self.spec.width).then_some(next)
    }

    /// Destination of a move, or `None` if a wall or the boundary blocks it.
    pub fn target(&self, cell: Cell, d: Direction) -> Option<Cell> {
        self.neighbor(cell, d).filter(|&n| !self.walls.contains(&edge(cell, n)))
    }

    pub fn blocked(&self, cell: Cell) -> Vec<Direction> {
        Direction::ALL.into_iter().filter(|&d| self.target(cell, d).is_none()).collect()
    }

    fn distances_to_goal(&self) -> Vec<Option<usize>> {
        let w = self.spec.width;
        let mut dist = vec![None; w * self.spec.height];
        let goal = self.goal();
        dist[goal.0 * w + goal.1] = Some(0);
        let mut queue = VecDeque::from([goal]);
        while let Some(cell) = queue.pop_front() {
            let d = dist[cell.0 * w + cell.1].unwrap();
            for dir in Direction::ALL {
                if let Some(n) = self.target(cell, dir) {
                    let slot = &mut dist[n.0 * w + n.1];
                    if slot.is_none() {
                        *slot = Some(d + 1);
                        queue.push_back(n);
                    }
                }
            }
        }
        dist
    }

    pub fn distance(&self, cell: Cell) -> Option<usize> {
        self.dist[cell.0 * self.spec.width + cell.1]
    }

    /// Moves from `cell` that lie on some shortest path to the goal.
    pub fn shortest_moves(&self, cell: Cell) -> Vec<Direction> {
        let Some(d) = self.distance(cell).filter(|&d| d > 0) else { return Vec::new() };
        Direction::ALL
            .into_iter()
            .filter(|&dir| self.target(cell, dir).and_then(|n| self.distance(n)) == Some(d - 1))
            .collect()
    }

    /// First shortest move in `up, down, left, right` order.
    pub fn best_move(&self, cell: Cell) -> Option<Direction> {
        self.shortest_moves(cell).first().copied()
    }

    pub fn observation(&self, pos: Cell) -> String {
        let blocked = self.blocked(pos);
        let blocked = if blocked.is_empty() {
            "none".to_string()
        } else {
            blocked.iter().map(|d| d.as_str()).collect::<Vec<_>>().join(", ")
        };
        let goal = self.goal();
        format!(
            "You are at ({}, {}). The goal is at ({}, {}). Blocked directions: {}.",
            pos.0, pos.1, goal.0, goal.1, blocked
        )
    }

    pub fn instruction(&self) -> String {
        let start = self.start();
        let goal = self.goal();
        format!(
            "You are in a maze of {} rows and {} columns. Starting from ({}, {}), reach the goal at ({}, {}). \
Each turn, move one cell with one of: up, down, left, right. Moving into a wall or the edge leaves you in place. \
You have at most {} moves.\n{}",
            self.spec.height,
            self.spec.width,
            start.0,
            start.1,
            goal.0,
            goal.1,
            self.spec.max_rounds,
            self.observation(start)
        )
    }
}

impl Environment for Maze {
    type State = MazeState;
    type Action = Direction;

    fn name(&self) -> &str {
        "maze"
    }

    fn max_rounds(&self) -> usize {
        self.spec.max_rounds
    }

    fn actions(&self) -> &[Direction] {
        &Direction::ALL
    }

    fn parse_action(&self, text: &str) -> Result<Direction> {
        Direction::parse(text).ok_or_else(|| Error::Vocabulary(text.to_string()))
    }

    fn reset(&self) -> (MazeState, String) {
        let start = self.start();
        (MazeState { pos: start, rounds: 0 }, self.observation(start))
    }

    fn step(&self, state: &MazeState, action: Direction) -> StepOutcome<MazeState> {
        if self.is_terminal(state) {
            return StepOutcome { state: *state, observation: self.observation(state.pos), reward: 0.0, done: true };
        }
        let pos = self.target(state.pos, action).unwrap_or(state.pos);
        let next = MazeState { pos, rounds: state.rounds + 1 };
        let reached = pos == self.goal();
        StepOutcome {
            state: next,
            observation: self.observation(pos),
            reward: if reached { 0.0 } else { -1.0 },
            done: reached || next.rounds >= self.spec.max_rounds,
        }
    }

    fn render(&self, state: &MazeState) -> String {
        self.observation(state.pos)
    }

    fn is_terminal(&self, state: &MazeState) -> bool {
        state.pos == self.goal() || state.rounds >= self.spec.max_rounds
    }

    fn success(&self, state: &MazeState) -> f64 {
        if state.pos == self.goal() {
            1.0
        } else {
            0.0
        }
    }

    fn enumerate_states(&self) -> Result<Vec<MazeState>> {
        let mut out = Vec::with_capacity(self.spec.width * self.spec.height * (self.spec.max_rounds + 1));
        for rounds in 0..=self.spec.max_rounds {
            for r in 0..self.spec.height {
                for c in 0..self.spec.width {
                    out.push(MazeState { pos: (r, c), rounds });
                }
            }
        }
        Ok(out)
    }
}

/// Shortest-path walker that deviates uniformly at random with probability
/// `epsilon`. `epsilon = 0` is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisyShortestPath {
    pub epsilon: f64,
}

impl RolloutPolicy<Maze> for NoisyShortestPath {
    fn distribution(&self, env: &Maze, state: &MazeState) -> Vec<f64> {
        let noise = self.epsilon / 4.0;
        let mut probs = vec![noise; 4];
        match env.best_move(state.pos) {
            Some(d) => probs[d.index()] += 1.0 - self.epsilon,
            None => probs = vec![0.25; 4],
        }
        probs
    }
}

/// An expert demonstration plus generator-side diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertDemo {
    pub trajectory: Trajectory,
    /// Steps taken from a cell with two or more open exits other than the
    /// one the agent arrived through. Diagnostics only.
    pub junctions: Vec<usize>,
}

/// Shortest-path demonstration, ties broken in `up, down, left, right` order.
pub fn expert_demo(spec: &MazeSpec, id: &str) -> Result<ExpertDemo> {
    let maze = Maze::new(spec.clone())?;
    let (mut state, _) = maze.reset();
    let goal = maze.goal();
    let mut steps = Vec::new();
    let mut junctions = Vec::new();
    let mut came_from: Option<Cell> = None;
    while state.pos != goal {
        let dir = maze
            .best_move(state.pos)
            .ok_or_else(|| Error::Generation(format!("goal unreachable from {:?}", state.pos)))?;
        let exits = Direction::ALL
            .into_iter()
            .filter_map(|d| maze.target(state.pos, d))
            .filter(|n| Some(*n) != came_from)
            .count();
        if exits >= 2 {
            junctions.push(steps.len());
        }
        let out = maze.step(&state, dir);
        steps.push(Step {
            index: steps.len(),
            thought: format!(
                "I am at ({},{}); the goal is at ({},{}); I will move {}",
                state.pos.0, state.pos.1, goal.0, goal.1, dir
            ),
            action: dir.to_string(),
            observation: out.observation,
        });
        came_from = Some(state.pos);
        state = out.state;
    }
    if steps.len() > spec.max_rounds {
        return Err(Error::Generation(format!(
            "shortest path of {} moves exceeds max_rounds {}",
            steps.len(),
            spec.max_rounds
        )));
    }
    Ok(ExpertDemo {
        trajectory: Trajectory {
            id: id.to_string(),
            environment: "maze".to_string(),
            instruction: maze.instruction(),
            steps,
            final_reward: Some(1.0),
        },
        junctions,
    })
}

pub fn expert_trajectory(spec: &MazeSpec, id: &str) -> Result<Trajectory> {
    expert_demo(spec, id).map(|d| d.trajectory)
}

/// Random maze generator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub width: usize,
    pub height: usize,
    /// Probability that each interior edge carries a wall.
    pub wall_density: f64,
    /// Shortest start-goal distance bounds (inclusive).
    pub min_path: usize,
    pub max_path: usize,
    pub max_rounds: usize,
}

impl GeneratorParams {
    pub const HELD_IN: GeneratorParams =
        GeneratorParams { width: 5, height: 5, wall_density: 0.25, min_path: 3, max_path: 12, max_rounds: 15 };
    pub const HELD_OUT: GeneratorParams =
        GeneratorParams { width: 6, height: 6, wall_density: 0.35, min_path: 3, max_path: 12, max_rounds: 15 };
}

const MAX_ATTEMPTS: usize = 10_000;

/// One solvable random maze, fully determined by `maze_seed`.
pub fn generate_maze(params: &GeneratorParams, maze_seed: u64) -> Result<MazeSpec> {
    let mut rng = seed::rng(maze_seed);
    let (w, h) = (params.width, params.height);
    if w * h < 2 {
        return Err(Error::Generation("maze needs at least two cells".into()));
    }
    for _ in 0..MAX_ATTEMPTS {
        let mut walls = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if c + 1 < w && rng.gen_bool(params.wall_density) {
                    walls.push([[r, c], [r, c + 1]]);
                }
                if r + 1 < h && rng.gen_bool(params.wall_density) {
                    walls.push([[r, c], [r + 1, c]]);
                }
            }
        }
        let start = [rng.gen_range(0..h), rng.gen_range(0..w)];
        let goal = [rng.gen_range(0..h), rng.gen_range(0..w)];
        if start == goal {
            continue;
        }
        let spec = MazeSpec { width: w, height: h, walls, start, goal, max_rounds: params.max_rounds, seed: maze_seed };
        let Ok(maze) = Maze::new(spec) else { continue };
        let d = maze.distance(maze.start()).unwrap();
        if (params.min_path..=params.max_path.min(params.max_rounds)).contains(&d) {
            return Ok(maze.spec);
        }
    }
    Err(Error::Generation(format!("no acceptable maze after {MAX_ATTEMPTS} attempts")))
}

const HELD_IN_TAG: u64 = 0x4845_4c44_5f49_4e00;
const HELD_OUT_TAG: u64 = 0x4845_4c44_5f4f_5554;

/// Held-in and held-out maze sets; held-out mazes are larger and denser
/// (see [`GeneratorParams`]) and never repeat a held-in layout.
pub fn make_split(family_seed: u64, n_held_in: usize, n_held_out: usize) -> Result<(Vec<MazeSpec>, Vec<MazeSpec>)> {
    make_split_with(family_seed, n_held_in, n_held_out, &GeneratorParams::HELD_IN, &GeneratorParams::HELD_OUT)
}

pub fn make_split_with(
    family_seed: u64,
    n_held_in: usize,
    n_held_out: usize,
    held_in_params: &GeneratorParams,
    held_out_params: &GeneratorParams,
) -> Result<(Vec<MazeSpec>, Vec<MazeSpec>)> {
    if n_held_in == 0 || n_held_out == 0 {
        return Err(Error::Configuration("split sizes must be >= 1".into()));
    }
    let mut seen = BTreeSet::new();
    let mut draw = |params: &GeneratorParams, tag: u64, n: usize| -> Result<Vec<MazeSpec>> {
        let base = seed::mix_u64(family_seed, tag);
        let mut out = Vec::with_capacity(n);
        let mut k = 0u64;
        while out.len() < n {
            if k as usize > n + MAX_ATTEMPTS {
                return Err(Error::Generation("could not draw enough distinct mazes".into()));
            }
            let spec = generate_maze(params, seed::mix_u64(base, k))?;
            k += 1;
            if seen.insert(spec.layout_key()) {
                out.push(spec);
            }
        }
        Ok(out)
    };
    let held_in = draw(held_in_params, HELD_IN_TAG, n_held_in)?;
    let held_out = draw(held_out_params, HELD_OUT_TAG, n_held_out)?;
    Ok((held_in, held_out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open3() -> Maze {
        Maze::new(MazeSpec::open(3, 3, (0, 0), (0, 1))).unwrap()
    }

    #[test]
    fn step_examples() {
        let m = open3();
        let (s, _) = m.reset();
        let out = m.step(&s, Direction::Right);
        assert_eq!(out.state.pos, (0, 1));
        assert!(out.done);
        assert_eq!(out.reward, 0.0);
        assert_eq!(m.success(&out.state), 1.0);

        let out = m.step(&s, Direction::Up);
        assert_eq!(out.state.pos, (0, 0));
        assert_eq!(out.reward, -1.0);
        assert!(!out.done);
    }

    #[test]
    fn episode_ends_at_round_cap() {
        let m = open3();
        let (mut s, _) = m.reset();
        let mut done = false;
        for i in 0..15 {
            assert!(!done, "ended early at {i}");
            let out = m.step(&s, Direction::Left);
            s = out.state;
            done = out.done;
        }
        assert!(done);
        assert_eq!(m.success(&s), 0.0);
    }

    #[test]
    fn walls_block_both_ways() {
        let mut spec = MazeSpec::open(2, 1, (0, 0), (0, 1));
        spec.walls.push([[0, 1], [0, 0]]);
        assert!(Maze::new(spec.clone()).is_err(), "goal is walled off");
        let mut spec = MazeSpec::open(2, 2, (0, 0), (0, 1));
        spec.walls.push([[0, 1], [0, 0]]);
        let m = Maze::new(spec).unwrap();
        assert_eq!(m.target((0, 0), Direction::Right), None);
        assert_eq!(m.target((0, 1), Direction::Left), None);
        assert_eq!(m.distance((0, 0)), Some(3));
        assert_eq!(
            m.observation((0, 0)),
            "You are at (0, 0). The goal is at (0, 1). Blocked directions: up, left, right."
        );
    }

    #[test]
    fn invalid_specs() {
        assert!(Maze::new(MazeSpec::open(3, 3, (0, 0), (0, 0))).is_err());
        assert!(Maze::new(MazeSpec::open(3, 3, (0, 0), (3, 0))).is_err());
        let mut s = MazeSpec::open(3, 3, (0, 0), (2, 2));
        s.walls.push([[0, 0], [1, 1]]);
        assert!(Maze::new(s).is_err());
    }

    #[test]
    fn expert_lengths() {
        let t = expert_trajectory(&MazeSpec::open(3, 3, (0, 0), (2, 2)), "m").unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.final_reward, Some(1.0));
        assert_eq!(t.steps[0].thought, "I am at (0,0); the goal is at (2,2); I will move down");
        let t = expert_trajectory(&MazeSpec::open(3, 3, (1, 1), (1, 2)), "m").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.steps[0].action, "right");
    }

    #[test]
    fn single_tie_is_broken_by_direction_order() {
        // Corridor (0,0)-(0,1)-(0,2) then a 2x2 block at columns 2..3 with the
        // goal in its far corner: only (0,2) offers two shortest moves.
        let mut spec = MazeSpec::open(4, 2, (0, 0), (1, 3));
        spec.walls = vec![[[0, 0], [1, 0]], [[0, 1], [1, 1]], [[1, 1], [1, 2]]];
        let maze = Maze::new(spec.clone()).unwrap();
        let t = expert_trajectory(&spec, "c").unwrap();
        let ties: Vec<usize> = (0..t.len())
            .filter(|&i| {
                let cell = parse_cell(&t, i);
                maze.shortest_moves(cell).len() >= 2
            })
            .collect();
        assert_eq!(ties, vec![2]);
        assert_eq!(t.steps[2].action, "down");
        let actions: Vec<&str> = t.steps.iter().map(|s| s.action.as_str()).collect();
        assert_eq!(actions, ["right", "right", "down", "right"]);
    }

    fn parse_cell(t: &Trajectory, i: usize) -> Cell {
        let th = &t.steps[i].thought;
        let inner = &th[th.find('(').unwrap() + 1..th.find(')').unwrap()];
        let (r, c) = inner.split_once(',').unwrap();
        (r.parse().unwrap(), c.parse().unwrap())
    }

    #[test]
    fn replay_reproduces_expert_observations() {
        let (held_in, _) = make_split(3, 10, 1).unwrap();
        for (i, spec) in held_in.iter().enumerate() {
            let t = expert_trajectory(spec, &format!("m{i}")).unwrap();
            let m = Maze::new(spec.clone()).unwrap();
            let (mut s, _) = m.reset();
            for step in &t.steps {
                let out = m.step(&s, m.parse_action(&step.action).unwrap());
                assert_eq!(out.observation, step.observation);
                s = out.state;
            }
            assert_eq!(m.success(&s), 1.0);
            assert!(t.len() <= spec.max_rounds);
        }
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let a = make_split(11, 20, 10).unwrap();
        let b = make_split(11, 20, 10).unwrap();
        assert_eq!(a, b);
        let keys: HashSet<_> = a.0.iter().map(|s| s.layout_key()).collect();
        assert!(a.1.iter().all(|s| !keys.contains(&s.layout_key())));
        assert!(a.1.iter().all(|s| s.width == 6 && s.height == 6));
        assert_ne!(make_split(12, 20, 10).unwrap(), a);
    }

    #[test]
    fn every_generated_maze_is_solvable() {
        let (held_in, held_out) = make_split(2024, 700, 300).unwrap();
        for spec in held_in.iter().chain(&held_out) {
            let m = Maze::new(spec.clone()).expect("valid maze");
            let d = bfs_oracle(spec);
            assert_eq!(m.distance(m.start()), d);
            assert!(d.is_some_and(|d| d <= spec.max_rounds));
        }
    }

    /// Independent breadth-first search over explicit wall pairs.
    fn bfs_oracle(spec: &MazeSpec) -> Option<usize> {
        let blocked =
            |a: [usize; 2], b: [usize; 2]| spec.walls.iter().any(|&[x, y]| (x == a && y == b) || (x == b && y == a));
        let mut seen = vec![vec![false; spec.width]; spec.height];
        let mut q = VecDeque::from([(spec.start, 0usize)]);
        seen[spec.start[0]][spec.start[1]] = true;
        while let Some((cell, d)) = q.pop_front() {
            if cell == spec.goal {
                return Some(d);
            }
            let [r, c] = cell;
            let cand = [
                (r > 0).then(|| [r - 1, c]),
                (r + 1 < spec.height).then(|| [r + 1, c]),
                (c > 0).then(|| [r, c - 1]),
                (c + 1 < spec.width).then(|| [r, c + 1]),
            ];
            for n in cand.into_iter().flatten() {
                if !seen[n[0]][n[1]] && !blocked(cell, n) {
                    seen[n[0]][n[1]] = true;
                    q.push_back((n, d + 1));
                }
            }
        }
        None
    }

    #[test]
    fn spec_json_shape() {
        let spec = MazeSpec { walls: vec![[[0, 0], [0, 1]]], ..MazeSpec::open(2, 2, (0, 0), (1, 1)) };
        let v = serde_json::to_value(&spec).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"width":2,"height":2,"walls":[[[0,0],[0,1]]],"start":[0,0],"goal":[1,1],"max_rounds":15,"seed":0})
        );
    }

    #[test]
    fn noisy_policy_distribution() {
        let m = Maze::new(MazeSpec::open(3, 3, (0, 0), (2, 2))).unwrap();
        let s = MazeState { pos: (0, 0), rounds: 0 };
        let p = NoisyShortestPath { epsilon: 0.2 }.distribution(&m, &s);
        for (a, b) in p.iter().zip([0.05, 0.85, 0.05, 0.05]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(NoisyShortestPath { epsilon: 0.0 }.distribution(&m, &s), vec![0.0, 1.0, 0.0, 0.0]);
    }
}
