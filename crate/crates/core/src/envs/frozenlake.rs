//! Slippery FrozenLake with escapable holes.
//!
//! Cells are `S` (start), `F` (frozen), `H` (hole) and `G` (goal). Actions
//! follow the gym ordering: 0 = left, 1 = down, 2 = right, 3 = up. An action
//! moves in its own direction or either perpendicular one, each with
//! probability 1/3; moves off the grid leave the agent in place. A hole keeps
//! the agent with probability `1 - hole_escape_prob` and otherwise behaves like
//! a frozen cell. Entering a goal pays 1; every other transition pays 0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MdpError, Result};
use crate::mdp::{Successor, TabularMdp};

pub const LEFT: usize = 0;
pub const DOWN: usize = 1;
pub const RIGHT: usize = 2;
pub const UP: usize = 3;
pub const N_ACTIONS: usize = 4;

/// Classic 8x8 layout (10 holes).
pub const MAP_8X8: &str = include_str!("../../assets/frozenlake_8x8.txt");
/// Classic 4x4 layout.
pub const MAP_4X4: &str = include_str!("../../assets/frozenlake_4x4.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Start,
    Frozen,
    Hole,
    Goal,
}

impl Cell {
    fn symbol(self) -> char {
        match self {
            Cell::Start => 'S',
            Cell::Frozen => 'F',
            Cell::Hole => 'H',
            Cell::Goal => 'G',
        }
    }
}

/// Rectangular grid of cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
}

impl GridMap {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell(&self, s: usize) -> Cell {
        self.cells[s]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn start(&self) -> usize {
        self.cells.iter().position(|&c| c == Cell::Start).expect("validated")
    }

    pub fn states_of(&self, kind: Cell) -> Vec<usize> {
        (0..self.cells.len()).filter(|&s| self.cells[s] == kind).collect()
    }

    pub fn classic_8x8() -> Self {
        MAP_8X8.parse().expect("bundled map is valid")
    }

    pub fn classic_4x4() -> Self {
        MAP_4X4.parse().expect("bundled map is valid")
    }

    fn neighbour(&self, s: usize, action: usize) -> usize {
        let (r, c) = (s / self.cols, s % self.cols);
        let (r, c) = match action {
            LEFT => (r, c.saturating_sub(1)),
            DOWN => ((r + 1).min(self.rows - 1), c),
            RIGHT => (r, (c + 1).min(self.cols - 1)),
            UP => (r.saturating_sub(1), c),
            _ => unreachable!("action out of range"),
        };
        r * self.cols + c
    }
}

impl FromStr for GridMap {
    type Err = MdpError;

    fn from_str(text: &str) -> Result<Self> {
        let mut cells = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let width = line.chars().count();
            match cols {
                None => cols = Some(width),
                Some(w) if w != width => {
                    return Err(MdpError::Format(format!(
                        "line {}: row has {width} cells, expected {w}",
                        line_no + 1
                    )))
                }
                _ => {}
            }
            for (col, ch) in line.chars().enumerate() {
                cells.push(match ch {
                    'S' => Cell::Start,
                    'F' => Cell::Frozen,
                    'H' => Cell::Hole,
                    'G' => Cell::Goal,
                    other => {
                        return Err(MdpError::Format(format!(
                            "line {}, column {}: unexpected map character {other:?}",
                            line_no + 1,
                            col + 1
                        )))
                    }
                });
            }
            rows += 1;
        }
        let cols = cols.ok_or_else(|| MdpError::Format("empty map".into()))?;
        let starts = cells.iter().filter(|&&c| c == Cell::Start).count();
        if starts != 1 {
            return Err(MdpError::Format(format!("map needs exactly one S, found {starts}")));
        }
        if !cells.contains(&Cell::Goal) {
            return Err(MdpError::Format("map needs at least one G".into()));
        }
        Ok(Self { rows, cols, cells })
    }
}

impl fmt::Display for GridMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            let line: String = self.cells[r * self.cols..(r + 1) * self.cols]
                .iter()
                .map(|c| c.symbol())
                .collect();
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

/// Parameters of the FrozenLake variant.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenLakeSpec {
    pub map: GridMap,
    pub hole_escape_prob: f64,
    pub goal_terminal: bool,
    pub discount: f64,
    /// Time points per episode.
    pub horizon: usize,
}

impl Default for FrozenLakeSpec {
    fn default() -> Self {
        Self {
            map: GridMap::classic_8x8(),
            hole_escape_prob: 0.01,
            goal_terminal: true,
            discount: 0.99,
            horizon: 200,
        }
    }
}

impl FrozenLakeSpec {
    pub fn with_map(map: GridMap) -> Self {
        Self {
            map,
            ..Self::default()
        }
    }
}

fn slip_row(map: &GridMap, s: usize, action: usize, mass: f64) -> Vec<Successor> {
    [(action + 3) % 4, action, (action + 1) % 4]
        .into_iter()
        .map(|dir| {
            let next = map.neighbour(s, dir);
            let reward = if map.cell(next) == Cell::Goal { 1.0 } else { 0.0 };
            Successor::new(next, mass / 3.0, reward)
        })
        .collect()
}

/// Builds the tabular model for `spec`.
pub fn build_frozenlake(spec: &FrozenLakeSpec) -> Result<TabularMdp> {
    let p = spec.hole_escape_prob;
    if !(0.0..=1.0).contains(&p) {
        return Err(MdpError::Invalid(format!("hole_escape_prob {p} outside [0, 1]")));
    }
    let map = &spec.map;
    let n = map.cells.len();
    let mut rows = Vec::with_capacity(n * N_ACTIONS);
    let mut terminals = Vec::new();
    for s in 0..n {
        let cell = map.cell(s);
        if cell == Cell::Goal && spec.goal_terminal {
            terminals.push(s);
        }
        for a in 0..N_ACTIONS {
            let row = match cell {
                Cell::Goal if spec.goal_terminal => vec![Successor::new(s, 1.0, 0.0)],
                Cell::Hole => {
                    let mut row = slip_row(map, s, a, p);
                    row.push(Successor::new(s, 1.0 - p, 0.0));
                    row
                }
                _ => slip_row(map, s, a, 1.0),
            };
            rows.push(row);
        }
    }
    let mut rho0 = vec![0.0; n];
    rho0[map.start()] = 1.0;
    TabularMdp::new(n, N_ACTIONS, spec.horizon, rho0, rows, &terminals)
}
