use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::TabularMdp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub col: usize,
    pub row: usize,
}

impl Cell {
    pub const fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }
}

/// Grid moves. Rows grow downwards, so `Down` is `(0, +1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Move {
    Right,
    Down,
    Left,
    Up,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::Right, Move::Down, Move::Left, Move::Up];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Move> {
        Move::ALL.get(i).copied()
    }

    /// Canonical continuous encoding used in datasets.
    pub fn vector(self) -> [f64; 2] {
        match self {
            Move::Right => [1.0, 0.0],
            Move::Down => [0.0, 1.0],
            Move::Left => [-1.0, 0.0],
            Move::Up => [0.0, -1.0],
        }
    }

    /// Maps a continuous action to the move along its dominant component
    /// (horizontal wins ties, non-negative components map to Right/Down).
    pub fn decode(action: &[f64]) -> Result<Move> {
        if action.len() != 2 {
            return Err(Error::Shape { expected: 2, got: action.len() });
        }
        let (dx, dy) = (action[0], action[1]);
        if !dx.is_finite() || !dy.is_finite() {
            return Err(Error::Domain(format!("non-finite grid action {action:?}")));
        }
        Ok(if dx.abs() >= dy.abs() {
            if dx >= 0.0 { Move::Right } else { Move::Left }
        } else if dy >= 0.0 {
            Move::Down
        } else {
            Move::Up
        })
    }
}

/// Deterministic 4-connected maze. Every step outside the goal costs
/// `step_reward`; the goal is absorbing and pays `goal_reward`.
///
/// Episodes end when the goal is entered, so returns do not include the
/// absorbing tail. With the default `goal_reward = 0` that tail is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMaze {
    pub width: usize,
    pub height: usize,
    walls: Vec<bool>,
    pub start: Cell,
    pub goal: Cell,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub horizon: usize,
    state_of_cell: Vec<Option<usize>>,
    cells: Vec<Cell>,
}

/// Layout of the built-in `gridmaze-10` environment.
pub const GRIDMAZE_10: &str = "\
S...#.....
.##.#.###.
.#..#...#.
.#.####.#.
.#......#.
.######.#.
......#.#.
.####.#.##
.#....#...
.#.####.#G
";

impl GridMaze {
    pub fn new(width: usize, height: usize, walls: Vec<bool>, start: Cell, goal: Cell) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config("maze must be at least 1x1".into()));
        }
        if walls.len() != width * height {
            return Err(Error::Shape { expected: width * height, got: walls.len() });
        }
        for (name, c) in [("start", start), ("goal", goal)] {
            if c.col >= width || c.row >= height {
                return Err(Error::Config(format!("{name} {c:?} out of bounds")));
            }
            if walls[c.row * width + c.col] {
                return Err(Error::Config(format!("{name} {c:?} is a wall")));
            }
        }
        let mut state_of_cell = vec![None; width * height];
        let mut cells = Vec::new();
        for row in 0..height {
            for col in 0..width {
                if !walls[row * width + col] {
                    state_of_cell[row * width + col] = Some(cells.len());
                    cells.push(Cell::new(col, row));
                }
            }
        }
        Ok(Self {
            width,
            height,
            walls,
            start,
            goal,
            step_reward: -1.0,
            goal_reward: 0.0,
            horizon: 4 * width * height,
            state_of_cell,
            cells,
        })
    }

    /// Parses a text layout: `#` wall, `.` free, `S` start, `G` goal.
    pub fn parse_layout(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut walls = Vec::with_capacity(width * height);
        let (mut start, mut goal) = (None, None);
        for (row, line) in rows.iter().enumerate() {
            if line.chars().count() != width {
                return Err(Error::Config(format!("maze row {} has width {}, expected {width}", row + 1, line.chars().count())));
            }
            for (col, ch) in line.chars().enumerate() {
                match ch {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'S' | 'G' => {
                        let slot = if ch == 'S' { &mut start } else { &mut goal };
                        if slot.is_some() {
                            return Err(Error::Config(format!("duplicate '{ch}' at row {}", row + 1)));
                        }
                        *slot = Some(Cell::new(col, row));
                        walls.push(false);
                    }
                    other => return Err(Error::Config(format!("unexpected maze character {other:?} at row {}", row + 1))),
                }
            }
        }
        let start = start.ok_or_else(|| Error::Config("maze has no start 'S'".into()))?;
        let goal = goal.ok_or_else(|| Error::Config("maze has no goal 'G'".into()))?;
        Self::new(width, height, walls, start, goal)
    }

    pub fn gridmaze10() -> Self {
        Self::parse_layout(GRIDMAZE_10).expect("built-in layout is valid")
    }

    pub fn render_layout(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for row in 0..self.height {
            for col in 0..self.width {
                let c = Cell::new(col, row);
                out.push(if c == self.start {
                    'S'
                } else if c == self.goal {
                    'G'
                } else if self.is_wall(c) {
                    '#'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        self.walls[c.row * self.width + c.col]
    }

    pub fn n_states(&self) -> usize {
        self.cells.len()
    }

    pub fn state_index(&self, c: Cell) -> Option<usize> {
        if c.col >= self.width || c.row >= self.height {
            return None;
        }
        self.state_of_cell[c.row * self.width + c.col]
    }

    pub fn cell(&self, state: usize) -> Cell {
        self.cells[state]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Next cell; blocked moves stay in place and the goal is absorbing.
    pub fn successor(&self, c: Cell, m: Move) -> Cell {
        if c == self.goal {
            return c;
        }
        self.successor_ignoring_goal(c, m)
    }

    pub fn reward(&self, c: Cell) -> f64 {
        if c == self.goal { self.goal_reward } else { self.step_reward }
    }

    pub fn state_vector(c: Cell) -> [f64; 2] {
        [c.col as f64, c.row as f64]
    }

    /// Inverse of [`state_vector`](Self::state_vector); rejects off-grid or wall positions.
    pub fn cell_from_state(&self, s: &[f64]) -> Result<Cell> {
        if s.len() != 2 {
            return Err(Error::Shape { expected: 2, got: s.len() });
        }
        let as_index = |v: f64| -> Option<usize> {
            let r = libm::round(v);
            (v.is_finite() && (v - r).abs() < 1e-9 && r >= 0.0).then_some(r as usize)
        };
        match (as_index(s[0]), as_index(s[1])) {
            (Some(col), Some(row)) if self.state_index(Cell::new(col, row)).is_some() => Ok(Cell::new(col, row)),
            _ => Err(Error::Domain(format!("{s:?} is not a free maze cell"))),
        }
    }

    /// Breadth-first distance (in moves) from every state to the goal.
    pub fn bfs_distances(&self) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n_states()];
        let goal = self.state_index(self.goal).expect("goal is free");
        dist[goal] = Some(0);
        let mut queue = VecDeque::from([self.goal]);
        while let Some(c) = queue.pop_front() {
            let d = dist[self.state_index(c).unwrap()].unwrap();
            for m in Move::ALL {
                // Moves are reversible, so forward neighbours of c are its predecessors.
                let n = self.successor_ignoring_goal(c, m);
                let idx = self.state_index(n).unwrap();
                if dist[idx].is_none() {
                    dist[idx] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    fn successor_ignoring_goal(&self, c: Cell, m: Move) -> Cell {
        let target = match m {
            Move::Right if c.col + 1 < self.width => Cell::new(c.col + 1, c.row),
            Move::Left if c.col > 0 => Cell::new(c.col - 1, c.row),
            Move::Down if c.row + 1 < self.height => Cell::new(c.col, c.row + 1),
            Move::Up if c.row > 0 => Cell::new(c.col, c.row - 1),
            _ => return c,
        };
        if self.is_wall(target) { c } else { target }
    }

    /// First move (in [`Move::ALL`] order) that lies on a shortest path.
    pub fn expert_move(&self, c: Cell, dist: &[Option<usize>]) -> Move {
        let Some(d) = self.state_index(c).and_then(|i| dist[i]) else {
            return Move::Right;
        };
        Move::ALL
            .into_iter()
            .find(|&m| {
                let n = self.successor(c, m);
                d > 0 && dist[self.state_index(n).unwrap()] == Some(d - 1)
            })
            .unwrap_or(Move::Right)
    }

    pub fn to_tabular(&self, gamma: f64) -> Result<TabularMdp> {
        let n = self.n_states();
        let na = Move::ALL.len();
        let mut transition = vec![0.0; n * na * n];
        let mut reward = vec![0.0; n * na];
        for (s, &c) in self.cells.iter().enumerate() {
            for m in Move::ALL {
                let next = self.state_index(self.successor(c, m)).unwrap();
                transition[(s * na + m.index()) * n + next] = 1.0;
                reward[s * na + m.index()] = self.reward(c);
            }
        }
        let mut initial = vec![0.0; n];
        initial[self.state_index(self.start).unwrap()] = 1.0;
        let mut mdp = TabularMdp::new(n, na, transition, reward, initial, gamma)?;
        if self.bfs_distances()[self.state_index(self.start).unwrap()].is_none() {
            mdp.notes.push(format!("goal {:?} is unreachable from start {:?}", self.goal, self.start));
        }
        Ok(mdp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_two_maze() {
        let maze = GridMaze::parse_layout("SG\n").unwrap();
        let mdp = maze.to_tabular(0.99).unwrap();
        assert_eq!(mdp.n_states, 2);
        assert_eq!(mdp.next_dist(0, Move::Right.index()), &[0.0, 1.0]);
        assert!(mdp.notes.is_empty());
    }

    #[test]
    fn empty_three_by_three_is_stochastic() {
        let maze = GridMaze::parse_layout("S..\n...\n..G\n").unwrap();
        let mdp = maze.to_tabular(0.9).unwrap();
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let total: f64 = mdp.next_dist(s, a).iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blocked_moves_stay_and_goal_absorbs() {
        let maze = GridMaze::parse_layout("S#\n.G\n").unwrap();
        let start = maze.start;
        assert_eq!(maze.successor(start, Move::Right), start);
        assert_eq!(maze.successor(start, Move::Up), start);
        for m in Move::ALL {
            assert_eq!(maze.successor(maze.goal, m), maze.goal);
        }
    }

    #[test]
    fn unreachable_goal_is_noted_not_fatal() {
        let maze = GridMaze::parse_layout("S#G\n").unwrap();
        let mdp = maze.to_tabular(0.9).unwrap();
        assert_eq!(mdp.notes.len(), 1);
    }

    #[test]
    fn layout_errors() {
        assert!(GridMaze::parse_layout("S.\n.\n").is_err());
        assert!(GridMaze::parse_layout("..\n.G\n").is_err());
        assert!(GridMaze::parse_layout("S.x\n..G\n").is_err());
        assert!(GridMaze::parse_layout("SS\n.G\n").is_err());
    }

    #[test]
    fn layout_round_trips() {
        let maze = GridMaze::gridmaze10();
        assert_eq!(maze.render_layout(), GRIDMAZE_10);
    }

    #[test]
    fn builtin_goal_is_reachable() {
        let maze = GridMaze::gridmaze10();
        let dist = maze.bfs_distances();
        assert!(dist.iter().all(Option::is_some));
        assert_eq!(dist[maze.state_index(maze.start).unwrap()], Some(20));
    }

    #[test]
    fn decode_dominant_component() {
        assert_eq!(Move::decode(&[0.3, -0.2]).unwrap(), Move::Right);
        assert_eq!(Move::decode(&[-0.3, 0.2]).unwrap(), Move::Left);
        assert_eq!(Move::decode(&[0.1, 0.9]).unwrap(), Move::Down);
        assert_eq!(Move::decode(&[0.1, -0.9]).unwrap(), Move::Up);
        assert_eq!(Move::decode(&[0.0, 0.0]).unwrap(), Move::Right);
        for m in Move::ALL {
            assert_eq!(Move::decode(&m.vector()).unwrap(), m);
        }
        assert!(Move::decode(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn state_vectors_map_back_to_cells() {
        let maze = GridMaze::gridmaze10();
        for &c in maze.cells() {
            assert_eq!(maze.cell_from_state(&GridMaze::state_vector(c)).unwrap(), c);
        }
        assert!(matches!(maze.cell_from_state(&[4.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(maze.cell_from_state(&[0.5, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(maze.cell_from_state(&[10.0, 0.0]), Err(Error::Domain(_))));
    }
}
