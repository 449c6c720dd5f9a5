//! Grid geometry shared by every environment: positions, compass moves,
//! BFS distances, and the sensor-reading model.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub const NUM_ACTIONS: usize = 9;
pub const STAY: usize = 8;

/// Row/column deltas of actions 0..8: N, NE, E, SE, S, SW, W, NW, stay.
const DELTAS: [(i64, i64); NUM_ACTIONS] =
    [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (0, 0)];

pub fn action_delta(action: usize) -> (i64, i64) {
    DELTAS[action]
}

/// Action moving in the reverse direction; staying is its own opposite.
pub fn opposite_action(action: usize) -> usize {
    if action == STAY {
        STAY
    } else {
        (action + 4) % 8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

/// Boolean wall layout of an `height × width` grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WallMap {
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl WallMap {
    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, cells: vec![false; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn index(&self, p: Pos) -> usize {
        p.row * self.width + p.col
    }

    pub fn pos_of(&self, index: usize) -> Pos {
        Pos::new(index / self.width, index % self.width)
    }

    pub fn contains(&self, p: Pos) -> bool {
        p.row < self.height && p.col < self.width
    }

    pub fn is_wall(&self, p: Pos) -> bool {
        self.cells[self.index(p)]
    }

    pub fn set_wall(&mut self, p: Pos, wall: bool) {
        let i = self.index(p);
        self.cells[i] = wall;
    }

    pub fn wall_count(&self) -> usize {
        self.cells.iter().filter(|&&w| w).count()
    }

    pub fn free_cells(&self) -> Vec<Pos> {
        (0..self.cells.len()).filter(|&i| !self.cells[i]).map(|i| self.pos_of(i)).collect()
    }

    pub fn walls(&self) -> Vec<Pos> {
        (0..self.cells.len()).filter(|&i| self.cells[i]).map(|i| self.pos_of(i)).collect()
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    /// Destination of `action` from `p`; off-grid or walled targets keep `p`.
    pub fn apply(&self, p: Pos, action: usize) -> Pos {
        let (dr, dc) = action_delta(action);
        let r = p.row as i64 + dr;
        let c = p.col as i64 + dc;
        if r < 0 || c < 0 || r >= self.height as i64 || c >= self.width as i64 {
            return p;
        }
        let q = Pos::new(r as usize, c as usize);
        if self.is_wall(q) {
            p
        } else {
            q
        }
    }

    fn neighbours(&self, p: Pos) -> impl Iterator<Item = Pos> + '_ {
        (0..8).filter_map(move |a| {
            let q = self.apply(p, a);
            (q != p).then_some(q)
        })
    }

    /// 8-connected BFS distances from `from` to every cell
    /// (`None` for walls and unreachable cells).
    pub fn distance_field(&self, from: Pos) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.cells.len()];
        if !self.contains(from) || self.is_wall(from) {
            return dist;
        }
        let mut queue = VecDeque::new();
        dist[self.index(from)] = Some(0);
        queue.push_back(from);
        while let Some(p) = queue.pop_front() {
            let d = dist[self.index(p)].expect("queued cells are labelled");
            for q in self.neighbours(p) {
                let qi = self.index(q);
                if dist[qi].is_none() {
                    dist[qi] = Some(d + 1);
                    queue.push_back(q);
                }
            }
        }
        dist
    }

    /// True when every free cell reaches every other free cell.
    pub fn is_connected(&self) -> bool {
        let free = self.free_cells();
        let Some(&start) = free.first() else { return true };
        let field = self.distance_field(start);
        free.iter().all(|&p| field[self.index(p)].is_some())
    }
}

/// Length of the shortest 8-connected path avoiding walls, or `None` when
/// the endpoints are disconnected (or either one is a wall).
pub fn bfs_distance(walls: &WallMap, from: Pos, to: Pos) -> Option<u32> {
    if !walls.contains(to) || walls.is_wall(to) {
        return None;
    }
    if from == to {
        return Some(0);
    }
    walls.distance_field(from)[walls.index(to)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    /// Reading at zero distance.
    pub strength: f64,
    /// Multiplicative factor per wall crossed.
    pub attenuation: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self { strength: 100.0, attenuation: 0.5 }
    }
}

impl SensorModel {
    /// `S / (1 + d²) · α^k`, with `d` the Euclidean cell distance and `k` the
    /// number of wall cells whose square the target→query segment touches.
    pub fn reading(&self, target: Pos, walls: &WallMap, query: Pos) -> f64 {
        let dr = target.row as f64 - query.row as f64;
        let dc = target.col as f64 - query.col as f64;
        let d2 = dr * dr + dc * dc;
        let crossed = walls_crossed(walls, target, query);
        self.strength / (1.0 + d2) * self.attenuation.powi(crossed as i32)
    }
}

/// Parametric reading with the default sensor constants.
pub fn sensor_field(target: Pos, walls: &WallMap, query: Pos) -> f64 {
    SensorModel::default().reading(target, walls, query)
}

/// Counts wall cells (other than the endpoints) whose closed unit square
/// intersects the segment between the two cell centres.
pub fn walls_crossed(walls: &WallMap, a: Pos, b: Pos) -> usize {
    if a == b {
        return 0;
    }
    let (ax, ay) = (a.col as f64, a.row as f64);
    let (bx, by) = (b.col as f64, b.row as f64);
    let (r0, r1) = (a.row.min(b.row), a.row.max(b.row));
    let (c0, c1) = (a.col.min(b.col), a.col.max(b.col));
    let mut count = 0;
    for r in r0..=r1 {
        for c in c0..=c1 {
            let p = Pos::new(r, c);
            if p == a || p == b || !walls.is_wall(p) {
                continue;
            }
            if segment_hits_box(ax, ay, bx, by, c as f64 - 0.5, r as f64 - 0.5, c as f64 + 0.5, r as f64 + 0.5) {
                count += 1;
            }
        }
    }
    count
}

#[allow(clippy::too_many_arguments)]
fn segment_hits_box(ax: f64, ay: f64, bx: f64, by: f64, x0: f64, y0: f64, x1: f64, y1: f64) -> bool {
    // Liang–Barsky slab clipping on t ∈ [0, 1].
    let (dx, dy) = (bx - ax, by - ay);
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [(-dx, ax - x0), (dx, x1 - ax), (-dy, ay - y0), (dy, y1 - ay)] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    t0 <= t1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chebyshev(a: Pos, b: Pos) -> u32 {
        (a.row.abs_diff(b.row)).max(a.col.abs_diff(b.col)) as u32
    }

    #[test]
    fn bfs_basic_cases() {
        let w = WallMap::empty(5, 5);
        assert_eq!(bfs_distance(&w, Pos::new(2, 2), Pos::new(2, 3)), Some(1));
        assert_eq!(bfs_distance(&w, Pos::new(2, 2), Pos::new(2, 2)), Some(0));
        for i in 0..25 {
            for j in 0..25 {
                let (a, b) = (w.pos_of(i), w.pos_of(j));
                assert_eq!(bfs_distance(&w, a, b), Some(chebyshev(a, b)));
            }
        }
    }

    #[test]
    fn enclosed_target_is_unreachable() {
        let mut w = WallMap::empty(5, 5);
        for r in 1..=3 {
            for c in 1..=3 {
                if (r, c) != (2, 2) {
                    w.set_wall(Pos::new(r, c), true);
                }
            }
        }
        assert_eq!(bfs_distance(&w, Pos::new(0, 0), Pos::new(2, 2)), None);
        assert!(!w.is_connected());
    }

    #[test]
    fn moves_into_walls_or_off_grid_stay_put() {
        let mut w = WallMap::empty(4, 4);
        w.set_wall(Pos::new(1, 1), true);
        assert_eq!(w.apply(Pos::new(0, 0), 3), Pos::new(0, 0));
        assert_eq!(w.apply(Pos::new(0, 0), 0), Pos::new(0, 0));
        assert_eq!(w.apply(Pos::new(0, 0), 2), Pos::new(0, 1));
        for a in 0..8 {
            assert_eq!(opposite_action(opposite_action(a)), a);
            let (dr, dc) = action_delta(a);
            assert_eq!(action_delta(opposite_action(a)), (-dr, -dc));
        }
        assert_eq!(opposite_action(STAY), STAY);
    }

    #[test]
    fn sensor_reading_shapes() {
        let mut w = WallMap::empty(7, 7);
        let t = Pos::new(3, 3);
        assert_eq!(sensor_field(t, &w, t), 100.0);
        assert_eq!(sensor_field(t, &w, Pos::new(3, 6)), sensor_field(t, &w, Pos::new(0, 3)));
        assert_eq!(sensor_field(t, &w, Pos::new(3, 6)), 10.0);
        let open = sensor_field(t, &w, Pos::new(3, 6));
        w.set_wall(Pos::new(3, 5), true);
        assert_eq!(sensor_field(t, &w, Pos::new(3, 6)), open * 0.5);
    }
}
