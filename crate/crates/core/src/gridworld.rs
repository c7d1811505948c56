//! Tabular gridworld environments.
//!
//! Layouts are plain ASCII maps, one line per row:
//!
//! | glyph | meaning                      |
//! |-------|------------------------------|
//! | `#`   | wall                         |
//! | `.`   | free cell                    |
//! | `H`   | hallway (a free bottleneck)  |
//! | `G`   | goal (free, terminal, +1)    |
//!
//! Transitions are deterministic: a move into a wall (or off the map) leaves
//! the agent in place. Reaching a goal yields reward `+1` and ends the episode;
//! every other transition yields `0`.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use thiserror::Error;

const FOUR_ROOMS_MAP: &str = include_str!("../maps/four_rooms.txt");
const TMAZE_MAP: &str = include_str!("../maps/tmaze.txt");

/// `(row, col)` coordinate, row 0 at the top.
pub type Cell = (usize, usize);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("map is empty")]
    Empty,
    #[error("ragged map: row {row} has width {found}, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown glyph {glyph:?} at row {row}, col {col}")]
    UnknownGlyph { glyph: char, row: usize, col: usize },
    #[error("map has no free cells")]
    NoFreeCells,
    #[error("map has no goal")]
    NoGoal,
    #[error("goal cell {0:?} is not a free cell")]
    GoalNotFree(Cell),
    #[error("free cells are not connected ({reachable} of {total} reachable)")]
    Disconnected { reachable: usize, total: usize },
    #[error("goal region contains no free cells")]
    EmptyRegion,
    #[error("grid has {0} goal(s); at least two are required to remove one")]
    TooFewGoals(usize),
}

/// Index into [`Grid::free_cells`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateId(pub usize);

/// One of the four primitive moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionId(pub usize);

impl ActionId {
    pub const UP: ActionId = ActionId(0);
    pub const DOWN: ActionId = ActionId(1);
    pub const LEFT: ActionId = ActionId(2);
    pub const RIGHT: ActionId = ActionId(3);

    pub const COUNT: usize = 4;

    pub fn all() -> impl Iterator<Item = ActionId> {
        (0..Self::COUNT).map(ActionId)
    }

    fn delta(self) -> (isize, isize) {
        match self.0 {
            0 => (-1, 0),
            1 => (1, 0),
            2 => (0, -1),
            3 => (0, 1),
            _ => panic!("invalid action index {}", self.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next_state: StateId,
    pub reward: f64,
    pub terminal: bool,
}

/// Immutable gridworld layout plus transition table.
#[derive(Clone, PartialEq, Eq)]
pub struct Grid {
    width: usize,
    height: usize,
    walls: Vec<bool>,
    free_cells: Vec<Cell>,
    /// Row-major cell -> state lookup.
    state_of: Vec<Option<StateId>>,
    hallways: Vec<StateId>,
    goals: Vec<StateId>,
    /// Next state for every (state, action).
    next: Vec<[StateId; ActionId::COUNT]>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("free_cells", &self.free_cells.len())
            .field("hallways", &self.hallways)
            .field("goals", &self.goals)
            .finish()
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in 0..self.height {
            for col in 0..self.width {
                let glyph = match self.state_at((row, col)) {
                    None => '#',
                    Some(s) if self.is_goal(s) => 'G',
                    Some(s) if self.is_hallway(s) => 'H',
                    Some(_) => '.',
                };
                write!(f, "{glyph}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl Grid {
    /// Parses an ASCII map. The map must contain at least one `G`.
    pub fn parse(text: &str) -> Result<Self, GridError> {
        Self::parse_with_goals(text, &[])
    }

    /// Parses an ASCII map and adds `extra_goals` to any `G` cells in it.
    pub fn parse_with_goals(text: &str, extra_goals: &[Cell]) -> Result<Self, GridError> {
        let rows: Vec<&str> = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .filter(|l| !l.is_empty())
            .collect();
        if rows.is_empty() {
            return Err(GridError::Empty);
        }
        let width = rows[0].chars().count();
        let height = rows.len();

        let mut walls = vec![false; width * height];
        let mut free_cells = Vec::new();
        let mut hallway_cells = Vec::new();
        let mut goal_cells = Vec::new();
        for (row, line) in rows.iter().enumerate() {
            let found = line.chars().count();
            if found != width {
                return Err(GridError::Ragged {
                    row,
                    expected: width,
                    found,
                });
            }
            for (col, glyph) in line.chars().enumerate() {
                match glyph {
                    '#' => walls[row * width + col] = true,
                    '.' => free_cells.push((row, col)),
                    'H' => {
                        free_cells.push((row, col));
                        hallway_cells.push((row, col));
                    }
                    'G' => {
                        free_cells.push((row, col));
                        goal_cells.push((row, col));
                    }
                    _ => return Err(GridError::UnknownGlyph { glyph, row, col }),
                }
            }
        }
        if free_cells.is_empty() {
            return Err(GridError::NoFreeCells);
        }

        let mut state_of = vec![None; width * height];
        for (i, &(r, c)) in free_cells.iter().enumerate() {
            state_of[r * width + c] = Some(StateId(i));
        }
        let lookup = |cell: Cell| -> Option<StateId> {
            if cell.0 < height && cell.1 < width {
                state_of[cell.0 * width + cell.1]
            } else {
                None
            }
        };

        for &cell in extra_goals {
            if lookup(cell).is_none() {
                return Err(GridError::GoalNotFree(cell));
            }
            if !goal_cells.contains(&cell) {
                goal_cells.push(cell);
            }
        }
        if goal_cells.is_empty() {
            return Err(GridError::NoGoal);
        }

        let mut goals: Vec<StateId> = goal_cells.iter().filter_map(|&c| lookup(c)).collect();
        goals.sort();
        let hallways: Vec<StateId> = hallway_cells.iter().filter_map(|&c| lookup(c)).collect();

        let next = free_cells
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| {
                let mut row = [StateId(i); ActionId::COUNT];
                for a in ActionId::all() {
                    let (dr, dc) = a.delta();
                    let target = r
                        .checked_add_signed(dr)
                        .zip(c.checked_add_signed(dc))
                        .and_then(lookup);
                    if let Some(t) = target {
                        row[a.0] = t;
                    }
                }
                row
            })
            .collect();

        let grid = Grid {
            width,
            height,
            walls,
            free_cells,
            state_of,
            hallways,
            goals,
            next,
        };
        grid.check_connected()?;
        Ok(grid)
    }

    fn check_connected(&self) -> Result<(), GridError> {
        let reachable = self.reachable_from(StateId(0), |_| true).len();
        if reachable != self.n_states() {
            return Err(GridError::Disconnected {
                reachable,
                total: self.n_states(),
            });
        }
        Ok(())
    }

    /// BFS over the 4-connected move graph, only entering states accepted by `allow`.
    fn reachable_from(&self, start: StateId, allow: impl Fn(StateId) -> bool) -> Vec<StateId> {
        let mut seen = vec![false; self.n_states()];
        let mut order = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start.0] = true;
        while let Some(s) = queue.pop_front() {
            order.push(s);
            for t in self.next[s.0] {
                if !seen[t.0] && allow(t) {
                    seen[t.0] = true;
                    queue.push_back(t);
                }
            }
        }
        order
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_states(&self) -> usize {
        self.free_cells.len()
    }

    pub fn free_cells(&self) -> &[Cell] {
        &self.free_cells
    }

    pub fn hallways(&self) -> &[StateId] {
        &self.hallways
    }

    pub fn goals(&self) -> &[StateId] {
        &self.goals
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        cell.0 >= self.height || cell.1 >= self.width || self.walls[cell.0 * self.width + cell.1]
    }

    pub fn is_goal(&self, s: StateId) -> bool {
        self.goals.binary_search(&s).is_ok()
    }

    pub fn is_hallway(&self, s: StateId) -> bool {
        self.hallways.contains(&s)
    }

    pub fn cell(&self, s: StateId) -> Cell {
        self.free_cells[s.0]
    }

    pub fn state_at(&self, cell: Cell) -> Option<StateId> {
        if cell.0 < self.height && cell.1 < self.width {
            self.state_of[cell.0 * self.width + cell.1]
        } else {
            None
        }
    }

    /// Uniform start state over non-goal free cells.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> StateId {
        let n_starts = self.n_states() - self.goals.len();
        assert!(n_starts > 0, "every free cell is a goal");
        let mut k = rng.gen_range(0..n_starts);
        // Goals are sorted, so skipping past each one at or below k maps
        // [0, n_starts) onto the non-goal states.
        for g in &self.goals {
            if g.0 <= k {
                k += 1;
            } else {
                break;
            }
        }
        StateId(k)
    }

    pub fn step(&self, s: StateId, a: ActionId) -> StepOutcome {
        let next_state = self.next[s.0][a.0];
        let terminal = self.is_goal(next_state);
        StepOutcome {
            next_state,
            reward: if terminal { 1.0 } else { 0.0 },
            terminal,
        }
    }

    /// Returns a copy whose single goal is drawn uniformly from the free
    /// cells accepted by `region`.
    pub fn relocate_goal<R: Rng + ?Sized>(
        &self,
        region: impl Fn(Cell) -> bool,
        rng: &mut R,
    ) -> Result<Grid, GridError> {
        let candidates: Vec<StateId> = (0..self.n_states())
            .map(StateId)
            .filter(|&s| region(self.cell(s)))
            .collect();
        if candidates.is_empty() {
            return Err(GridError::EmptyRegion);
        }
        let goal = candidates[rng.gen_range(0..candidates.len())];
        Ok(self.with_goals(vec![goal]))
    }

    /// Returns a copy with the goal at `index` (into [`Grid::goals`]) removed.
    pub fn without_goal(&self, index: usize) -> Result<Grid, GridError> {
        if self.goals.len() < 2 {
            return Err(GridError::TooFewGoals(self.goals.len()));
        }
        let mut goals = self.goals.clone();
        goals.remove(index);
        Ok(self.with_goals(goals))
    }

    fn with_goals(&self, mut goals: Vec<StateId>) -> Grid {
        goals.sort();
        Grid {
            goals,
            ..self.clone()
        }
    }

    /// Connected regions of non-hallway free cells, with hallways acting as
    /// separators. Each room is sorted by state index; rooms are ordered by
    /// their smallest state.
    pub fn rooms(&self) -> Vec<Vec<StateId>> {
        let mut assigned = vec![false; self.n_states()];
        let mut rooms = Vec::new();
        for s in (0..self.n_states()).map(StateId) {
            if assigned[s.0] || self.is_hallway(s) {
                continue;
            }
            let mut room = self.reachable_from(s, |t| !self.is_hallway(t));
            room.sort();
            for t in &room {
                assigned[t.0] = true;
            }
            rooms.push(room);
        }
        rooms
    }

    /// The room whose centroid lies furthest toward the bottom-right corner.
    pub fn lower_right_room(&self) -> Vec<StateId> {
        let score = |room: &Vec<StateId>| {
            let sum: usize = room.iter().map(|&s| self.cell(s).0 + self.cell(s).1).sum();
            sum as f64 / room.len() as f64
        };
        self.rooms()
            .into_iter()
            .max_by(|a, b| score(a).total_cmp(&score(b)))
            .unwrap_or_default()
    }
}

/// The 13×13 four-rooms layout with the goal in the east hallway.
pub fn build_four_rooms() -> Grid {
    let layout = Grid::parse_with_goals(FOUR_ROOMS_MAP, &[]);
    // The checked-in map carries no `G`: the goal is the east hallway.
    let layout = match layout {
        Err(GridError::NoGoal) => {
            let east = FOUR_ROOMS_MAP
                .lines()
                .enumerate()
                .flat_map(|(r, line)| {
                    line.chars()
                        .enumerate()
                        .filter(|&(_, ch)| ch == 'H')
                        .map(move |(c, _)| (r, c))
                })
                .max_by_key(|&(_, c)| c)
                .expect("four-rooms map has hallways");
            Grid::parse_with_goals(FOUR_ROOMS_MAP, &[east])
        }
        other => other,
    };
    layout.expect("checked-in four-rooms map is valid")
}

/// A T-shaped corridor with one goal at each end of the horizontal bar.
pub fn build_tmaze_grid() -> Grid {
    Grid::parse(TMAZE_MAP).expect("checked-in T-maze map is valid")
}
