//! Routing domain model: tile grid with per-direction capacities, nets,
//! route masks, feature encoding, and the line-oriented benchmark format.

use std::collections::HashMap;

use thiserror::Error;

/// Tile coordinate as `(row, col)`. Tuple ordering doubles as the canonical
/// "lowest tile" ordering used for deterministic tie-breaks.
pub type Tile = (usize, usize);

#[derive(Debug, Error)]
pub enum GridError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Validation(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("capacity violation at ({row},{col}) in {axis} direction")]
    CapacityViolation { row: usize, col: usize, axis: Axis },
}

/// Direction class of a unit move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Horizontal,
    Vertical,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Axis::Horizontal => write!(f, "horizontal"),
            Axis::Vertical => write!(f, "vertical"),
        }
    }
}

/// Square tile grid with remaining horizontal/vertical wire capacity per tile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingGrid {
    n: usize,
    h_cap: Vec<u32>,
    v_cap: Vec<u32>,
}

impl RoutingGrid {
    /// Grid with uniform capacities. `n` must be at least 1.
    pub fn uniform(n: usize, h: u32, v: u32) -> Self {
        assert!(n >= 1, "grid side must be positive");
        RoutingGrid {
            n,
            h_cap: vec![h; n * n],
            v_cap: vec![v; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.n && col < self.n);
        row * self.n + col
    }

    #[inline]
    pub fn h_cap(&self, row: usize, col: usize) -> u32 {
        self.h_cap[self.idx(row, col)]
    }

    #[inline]
    pub fn v_cap(&self, row: usize, col: usize) -> u32 {
        self.v_cap[self.idx(row, col)]
    }

    pub fn set_caps(&mut self, row: usize, col: usize, h: u32, v: u32) {
        let i = self.idx(row, col);
        self.h_cap[i] = h;
        self.v_cap[i] = v;
    }

    /// Largest capacity value present in either direction.
    pub fn max_cap(&self) -> u32 {
        let h = self.h_cap.iter().copied().max().unwrap_or(0);
        let v = self.v_cap.iter().copied().max().unwrap_or(0);
        h.max(v)
    }

    /// True when the tile can still host at least one wire segment.
    pub fn tile_free(&self, row: usize, col: usize) -> bool {
        self.h_cap(row, col) > 0 || self.v_cap(row, col) > 0
    }

    /// Whether a unit move between two 4-adjacent tiles is still admissible.
    /// Capacity is charged to the left/top endpoint of the move, so the check
    /// looks at that tile regardless of travel direction.
    pub fn move_open(&self, a: Tile, b: Tile) -> bool {
        match move_axis(a, b) {
            Axis::Horizontal => self.h_cap[self.idx(a.0, a.1.min(b.1))] > 0,
            Axis::Vertical => self.v_cap[self.idx(a.0.min(b.0), a.1)] > 0,
        }
    }

    /// Deducts the capacity consumed by a route mask.
    ///
    /// The mask is reduced to its canonical spanning walk (see
    /// [`spanning_moves`]); each unit move deducts one unit from the
    /// departing tile: horizontal moves charge `h_cap` of the left endpoint,
    /// vertical moves charge `v_cap` of the top endpoint. On any violation
    /// the grid is left untouched.
    pub fn apply_route(&mut self, mask: &PathMask) -> Result<(), GridError> {
        if mask.n() != self.n {
            return Err(GridError::InvalidArgument(format!(
                "mask side {} does not match grid side {}",
                mask.n(),
                self.n
            )));
        }
        let moves = spanning_moves(mask);
        let mut dh = vec![0u32; self.n * self.n];
        let mut dv = vec![0u32; self.n * self.n];
        for mv in &moves {
            match mv.axis {
                Axis::Horizontal => dh[self.idx(mv.from.0, mv.from.1)] += 1,
                Axis::Vertical => dv[self.idx(mv.from.0, mv.from.1)] += 1,
            }
        }
        for row in 0..self.n {
            for col in 0..self.n {
                let i = self.idx(row, col);
                if dh[i] > self.h_cap[i] {
                    return Err(GridError::CapacityViolation {
                        row,
                        col,
                        axis: Axis::Horizontal,
                    });
                }
                if dv[i] > self.v_cap[i] {
                    return Err(GridError::CapacityViolation {
                        row,
                        col,
                        axis: Axis::Vertical,
                    });
                }
            }
        }
        for i in 0..self.n * self.n {
            self.h_cap[i] -= dh[i];
            self.v_cap[i] -= dv[i];
        }
        Ok(())
    }
}

fn move_axis(a: Tile, b: Tile) -> Axis {
    debug_assert!(a.0.abs_diff(b.0) + a.1.abs_diff(b.1) == 1);
    if a.0 == b.0 {
        Axis::Horizontal
    } else {
        Axis::Vertical
    }
}

/// One unit move of the canonical spanning walk. `from` is always the
/// left/top endpoint (the tile whose capacity is charged).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitMove {
    pub from: Tile,
    pub to: Tile,
    pub axis: Axis,
}

/// Canonical spanning walk of a mask: a BFS spanning forest over the set
/// tiles, rooted at each connected component's lowest `(row, col)` tile,
/// expanding neighbors in (up, down, left, right) order. Every tree edge is
/// reported oriented left-to-right / top-to-bottom. Legality of a mask is
/// defined with respect to exactly this walk.
pub fn spanning_moves(mask: &PathMask) -> Vec<UnitMove> {
    let n = mask.n();
    let mut visited = vec![false; n * n];
    let mut moves = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    for row in 0..n {
        for col in 0..n {
            if !mask.get(row, col) || visited[row * n + col] {
                continue;
            }
            visited[row * n + col] = true;
            queue.push_back((row, col));
            while let Some((r, c)) = queue.pop_front() {
                for (nr, nc) in neighbors4(r, c, n) {
                    if mask.get(nr, nc) && !visited[nr * n + nc] {
                        visited[nr * n + nc] = true;
                        moves.push(canonical_move((r, c), (nr, nc)));
                        queue.push_back((nr, nc));
                    }
                }
            }
        }
    }
    moves
}

fn canonical_move(a: Tile, b: Tile) -> UnitMove {
    let axis = move_axis(a, b);
    let (from, to) = if a <= b { (a, b) } else { (b, a) };
    UnitMove { from, to, axis }
}

/// 4-neighbors in the fixed (up, down, left, right) expansion order.
pub fn neighbors4(row: usize, col: usize, n: usize) -> impl Iterator<Item = Tile> {
    let mut out = [(0usize, 0usize); 4];
    let mut k = 0;
    if row > 0 {
        out[k] = (row - 1, col);
        k += 1;
    }
    if row + 1 < n {
        out[k] = (row + 1, col);
        k += 1;
    }
    if col > 0 {
        out[k] = (row, col - 1);
        k += 1;
    }
    if col + 1 < n {
        out[k] = (row, col + 1);
        k += 1;
    }
    out.into_iter().take(k)
}

/// Binary route bitmap over the tile grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathMask {
    n: usize,
    bits: Vec<u8>,
}

impl PathMask {
    pub fn empty(n: usize) -> Self {
        assert!(n >= 1);
        PathMask {
            n,
            bits: vec![0; n * n],
        }
    }

    pub fn from_tiles(n: usize, tiles: impl IntoIterator<Item = Tile>) -> Self {
        let mut m = PathMask::empty(n);
        for (r, c) in tiles {
            m.set(r, c, true);
        }
        m
    }

    /// Rebuilds a mask from raw bytes; every byte must be 0 or 1.
    pub fn from_raw(n: usize, bits: Vec<u8>) -> Result<Self, GridError> {
        if bits.len() != n * n {
            return Err(GridError::Validation(format!(
                "mask byte count {} does not match {n}x{n}",
                bits.len()
            )));
        }
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(GridError::Validation(format!(
                "mask byte at offset {pos} is {} (must be 0 or 1)",
                bits[pos]
            )));
        }
        Ok(PathMask { n, bits })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.n + col] == 1
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.bits[row * self.n + col] = on as u8;
    }

    /// Number of set tiles.
    pub fn popcount(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    /// Set tiles in row-major order.
    pub fn tiles(&self) -> impl Iterator<Item = Tile> + '_ {
        let n = self.n;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(move |(i, _)| (i / n, i % n))
    }
}

/// A named set of pin tiles to connect.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Net {
    id: String,
    pins: Vec<Tile>,
}

impl Net {
    /// Validates pin count, coordinate range against an `n`-sided grid, and
    /// the duplicate rule: repeated coordinates are only allowed when every
    /// pin is the same tile.
    pub fn new(id: impl Into<String>, pins: Vec<Tile>, n: usize) -> Result<Self, GridError> {
        let id = id.into();
        if pins.is_empty() {
            return Err(GridError::Validation(format!("net {id}: no pins")));
        }
        for &(r, c) in &pins {
            if r >= n || c >= n {
                return Err(GridError::Validation(format!(
                    "net {id}: pin ({r},{c}) outside {n}x{n} grid"
                )));
            }
        }
        let all_same = pins.iter().all(|&p| p == pins[0]);
        if !all_same {
            let mut sorted = pins.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(GridError::Validation(format!(
                    "net {id}: duplicate pins in a non-trivial net"
                )));
            }
        }
        Ok(Net { id, pins })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pins(&self) -> &[Tile] {
        &self.pins
    }

    /// All pins on a single tile: no routing required.
    pub fn is_trivial(&self) -> bool {
        self.pins.iter().all(|&p| p == self.pins[0])
    }

    /// Distinct pin tiles in sorted order.
    pub fn unique_pin_tiles(&self) -> Vec<Tile> {
        let mut tiles = self.pins.clone();
        tiles.sort_unstable();
        tiles.dedup();
        tiles
    }
}

/// Three-channel model input: scaled vertical capacity, scaled horizontal
/// capacity, and a binary pin indicator, stored row-major as `[n][n][3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    n: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn from_raw(n: usize, data: Vec<f32>) -> Result<Self, GridError> {
        if data.len() != n * n * 3 {
            return Err(GridError::Validation(format!(
                "feature length {} does not match {n}x{n}x3",
                data.len()
            )));
        }
        Ok(FeatureMap { n, data })
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.n + col) * 3 + ch]
    }
}

/// Encodes a `(grid, net)` pair into the three-channel input. Channel 0 is
/// `v_cap / cap_max`, channel 1 is `h_cap / cap_max`, channel 2 marks pin
/// tiles. `cap_max` must be positive and at least the largest capacity
/// present so channels stay in `[0, 1]`.
pub fn encode_features(grid: &RoutingGrid, net: &Net, cap_max: u32) -> Result<FeatureMap, GridError> {
    if cap_max == 0 {
        return Err(GridError::InvalidArgument(
            "cap_max must be positive".into(),
        ));
    }
    if grid.max_cap() > cap_max {
        return Err(GridError::InvalidArgument(format!(
            "cap_max {} is below the largest capacity present {}",
            cap_max,
            grid.max_cap()
        )));
    }
    let n = grid.n();
    let scale = 1.0 / cap_max as f32;
    let mut data = vec![0.0f32; n * n * 3];
    for row in 0..n {
        for col in 0..n {
            let base = (row * n + col) * 3;
            data[base] = grid.v_cap(row, col) as f32 * scale;
            data[base + 1] = grid.h_cap(row, col) as f32 * scale;
        }
    }
    for (r, c) in net.unique_pin_tiles() {
        data[(r * n + c) * 3 + 2] = 1.0;
    }
    FeatureMap::from_raw(n, data)
}

/// A routing instance: initial capacities plus the ordered net list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Benchmark {
    pub grid: RoutingGrid,
    pub nets: Vec<Net>,
}

impl Benchmark {
    pub fn new(grid: RoutingGrid, nets: Vec<Net>) -> Result<Self, GridError> {
        let mut seen = HashMap::new();
        for net in &nets {
            if let Some(_prev) = seen.insert(net.id().to_string(), ()) {
                return Err(GridError::Validation(format!(
                    "duplicate net id {}",
                    net.id()
                )));
            }
            for &(r, c) in net.pins() {
                if r >= grid.n() || c >= grid.n() {
                    return Err(GridError::Validation(format!(
                        "net {}: pin ({r},{c}) outside grid",
                        net.id()
                    )));
                }
            }
        }
        Ok(Benchmark { grid, nets })
    }
}

/// Parses the line-oriented benchmark text:
///
/// ```text
/// grid <n> <n>
/// capacity <h> <v>
/// blockage <row> <col> <h> <v>    # zero or more, absolute overrides
/// net <id> <k>
/// pin <row> <col>                  # exactly k per net
/// ```
///
/// Blank lines and `#` comments are skipped. The grid side must be a power
/// of two; non-conforming inputs are rejected, never padded.
pub fn parse_benchmark(text: &str) -> Result<Benchmark, GridError> {
    enum Expect {
        Grid,
        Capacity,
        Body,
    }
    let mut state = Expect::Grid;
    let mut grid: Option<RoutingGrid> = None;
    let mut nets: Vec<Net> = Vec::new();
    let mut pending: Option<(String, usize, Vec<Tile>)> = None;
    let mut nets_started = false;

    let parse_num = |tok: &str, line: usize| -> Result<usize, GridError> {
        tok.parse::<usize>().map_err(|_| GridError::Parse {
            line,
            msg: format!("expected a non-negative integer, got {tok:?}"),
        })
    };

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if let Some((id, k, pins)) = pending.as_mut() {
            if toks[0] != "pin" || toks.len() != 3 {
                return Err(GridError::Parse {
                    line,
                    msg: format!("expected `pin <row> <col>` for net {id}"),
                });
            }
            let r = parse_num(toks[1], line)?;
            let c = parse_num(toks[2], line)?;
            pins.push((r, c));
            if pins.len() == *k {
                let (id, _, pins) = pending.take().unwrap();
                let n = grid.as_ref().map(|g| g.n()).unwrap_or(0);
                nets.push(Net::new(id, pins, n)?);
            }
            continue;
        }
        match (&state, toks[0]) {
            (Expect::Grid, "grid") => {
                if toks.len() != 3 {
                    return Err(GridError::Parse {
                        line,
                        msg: "expected `grid <n> <n>`".into(),
                    });
                }
                let a = parse_num(toks[1], line)?;
                let b = parse_num(toks[2], line)?;
                if a != b {
                    return Err(GridError::Validation(format!(
                        "grid must be square, got {a}x{b}"
                    )));
                }
                if a < 2 || !a.is_power_of_two() {
                    return Err(GridError::Validation(format!(
                        "grid side {a} is not a power of two >= 2"
                    )));
                }
                grid = Some(RoutingGrid::uniform(a, 0, 0));
                state = Expect::Capacity;
            }
            (Expect::Capacity, "capacity") => {
                if toks.len() != 3 {
                    return Err(GridError::Parse {
                        line,
                        msg: "expected `capacity <h> <v>`".into(),
                    });
                }
                let h = parse_num(toks[1], line)? as u32;
                let v = parse_num(toks[2], line)? as u32;
                let g = grid.as_mut().unwrap();
                *g = RoutingGrid::uniform(g.n(), h, v);
                state = Expect::Body;
            }
            (Expect::Body, "blockage") => {
                if nets_started {
                    return Err(GridError::Parse {
                        line,
                        msg: "blockage lines must precede net declarations".into(),
                    });
                }
                if toks.len() != 5 {
                    return Err(GridError::Parse {
                        line,
                        msg: "expected `blockage <row> <col> <h> <v>`".into(),
                    });
                }
                let r = parse_num(toks[1], line)?;
                let c = parse_num(toks[2], line)?;
                let h = parse_num(toks[3], line)? as u32;
                let v = parse_num(toks[4], line)? as u32;
                let g = grid.as_mut().unwrap();
                if r >= g.n() || c >= g.n() {
                    return Err(GridError::Validation(format!(
                        "blockage tile ({r},{c}) outside {0}x{0} grid",
                        g.n()
                    )));
                }
                g.set_caps(r, c, h, v);
            }
            (Expect::Body, "net") => {
                if toks.len() != 3 {
                    return Err(GridError::Parse {
                        line,
                        msg: "expected `net <id> <k>`".into(),
                    });
                }
                let k = parse_num(toks[2], line)?;
                if k == 0 {
                    return Err(GridError::Validation(format!(
                        "net {}: pin count must be positive",
                        toks[1]
                    )));
                }
                nets_started = true;
                pending = Some((toks[1].to_string(), k, Vec::with_capacity(k)));
            }
            _ => {
                return Err(GridError::Parse {
                    line,
                    msg: format!("unexpected directive {:?}", toks[0]),
                });
            }
        }
    }
    if let Some((id, k, pins)) = pending {
        return Err(GridError::Parse {
            line: text.lines().count(),
            msg: format!("net {id}: expected {k} pins, got {}", pins.len()),
        });
    }
    let grid = grid.ok_or(GridError::Parse {
        line: text.lines().count().max(1),
        msg: "missing `grid` header".into(),
    })?;
    match state {
        Expect::Capacity => Err(GridError::Parse {
            line: text.lines().count(),
            msg: "missing `capacity` header".into(),
        }),
        _ => Benchmark::new(grid, nets),
    }
}

/// Emits the same grammar `parse_benchmark` reads. The capacity header is
/// the most frequent `(h, v)` pair (smallest pair on ties); every differing
/// tile becomes a blockage override, so parse(emit(b)) reproduces `b`.
pub fn emit_benchmark(bench: &Benchmark) -> String {
    let n = bench.grid.n();
    let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
    for row in 0..n {
        for col in 0..n {
            *counts
                .entry((bench.grid.h_cap(row, col), bench.grid.v_cap(row, col)))
                .or_insert(0) += 1;
        }
    }
    let (default_h, default_v) = counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k)
        .unwrap();
    let mut out = String::new();
    out.push_str(&format!("grid {n} {n}\n"));
    out.push_str(&format!("capacity {default_h} {default_v}\n"));
    for row in 0..n {
        for col in 0..n {
            let (h, v) = (bench.grid.h_cap(row, col), bench.grid.v_cap(row, col));
            if (h, v) != (default_h, default_v) {
                out.push_str(&format!("blockage {row} {col} {h} {v}\n"));
            }
        }
    }
    for net in &bench.nets {
        out.push_str(&format!("net {} {}\n", net.id(), net.pins().len()));
        for &(r, c) in net.pins() {
            out.push_str(&format!("pin {r} {c}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row_mask(n: usize, row: usize, cols: std::ops::Range<usize>) -> PathMask {
        PathMask::from_tiles(n, cols.map(|c| (row, c)))
    }

    #[test]
    fn parse_minimal_header_and_net() {
        let text = "grid 8 8\ncapacity 2 2\nnet a 2\npin 0 0\npin 3 4\n";
        let b = parse_benchmark(text).unwrap();
        assert_eq!(b.grid.n(), 8);
        for r in 0..8 {
            for c in 0..8 {
                assert_eq!(b.grid.h_cap(r, c), 2);
                assert_eq!(b.grid.v_cap(r, c), 2);
            }
        }
        assert_eq!(b.nets.len(), 1);
        assert_eq!(b.nets[0].pins(), &[(0, 0), (3, 4)]);
    }

    #[test]
    fn out_of_range_pin_is_a_validation_error() {
        let text = "grid 8 8\ncapacity 2 2\nnet a 1\npin 9 0\n";
        match parse_benchmark(text) {
            Err(GridError::Validation(msg)) => assert!(msg.contains("(9,0)")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "grid 8 8\ncapacity 2 2\nnet a two\n";
        match parse_benchmark(text) {
            Err(GridError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_power_of_two_grid_rejected() {
        let text = "grid 12 12\ncapacity 2 2\n";
        assert!(matches!(
            parse_benchmark(text),
            Err(GridError::Validation(_))
        ));
    }

    #[test]
    fn three_net_round_trip() {
        let mut grid = RoutingGrid::uniform(8, 2, 3);
        grid.set_caps(1, 1, 0, 0);
        grid.set_caps(5, 2, 1, 4);
        let nets = vec![
            Net::new("a", vec![(0, 0), (0, 7)], 8).unwrap(),
            Net::new("b", vec![(3, 3), (3, 3)], 8).unwrap(),
            Net::new("c", vec![(1, 0), (4, 4), (7, 7)], 8).unwrap(),
        ];
        let b = Benchmark::new(grid, nets).unwrap();
        let round = parse_benchmark(&emit_benchmark(&b)).unwrap();
        assert_eq!(b, round);
    }

    #[test]
    fn duplicate_net_id_rejected() {
        let grid = RoutingGrid::uniform(4, 1, 1);
        let nets = vec![
            Net::new("x", vec![(0, 0)], 4).unwrap(),
            Net::new("x", vec![(1, 1)], 4).unwrap(),
        ];
        assert!(matches!(
            Benchmark::new(grid, nets),
            Err(GridError::Validation(_))
        ));
    }

    #[test]
    fn partial_duplicate_pins_rejected() {
        assert!(Net::new("d", vec![(1, 1), (1, 1), (2, 2)], 4).is_err());
        assert!(Net::new("t", vec![(1, 1), (1, 1)], 4).is_ok());
    }

    #[test]
    fn trivial_net_definition() {
        assert!(Net::new("t", vec![(3, 3), (3, 3)], 8).unwrap().is_trivial());
        assert!(!Net::new("t", vec![(0, 0), (0, 1)], 8).unwrap().is_trivial());
    }

    #[test]
    fn encode_saturated_grid_and_pins() {
        let grid = RoutingGrid::uniform(4, 2, 2);
        let net = Net::new("a", vec![(0, 0), (3, 3)], 4).unwrap();
        let fm = encode_features(&grid, &net, 2).unwrap();
        let mut pin_count = 0;
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(fm.at(r, c, 0), 1.0);
                assert_eq!(fm.at(r, c, 1), 1.0);
                if fm.at(r, c, 2) == 1.0 {
                    pin_count += 1;
                }
            }
        }
        assert_eq!(pin_count, 2);
    }

    #[test]
    fn encode_linear_scaling() {
        let mut grid = RoutingGrid::uniform(4, 2, 2);
        grid.set_caps(2, 1, 2, 1);
        let net = Net::new("a", vec![(0, 0)], 4).unwrap();
        let fm = encode_features(&grid, &net, 2).unwrap();
        assert_eq!(fm.at(2, 1, 0), 0.5);
        assert_eq!(fm.at(2, 1, 1), 1.0);
    }

    #[test]
    fn encode_rejects_zero_and_small_cap_max() {
        let grid = RoutingGrid::uniform(4, 2, 2);
        let net = Net::new("a", vec![(0, 0)], 4).unwrap();
        assert!(matches!(
            encode_features(&grid, &net, 0),
            Err(GridError::InvalidArgument(_))
        ));
        assert!(encode_features(&grid, &net, 1).is_err());
    }

    #[test]
    fn apply_route_straight_path_deducts_departures() {
        let mut grid = RoutingGrid::uniform(4, 2, 2);
        let mask = row_mask(4, 0, 0..4);
        grid.apply_route(&mask).unwrap();
        assert_eq!(grid.h_cap(0, 0), 1);
        assert_eq!(grid.h_cap(0, 1), 1);
        assert_eq!(grid.h_cap(0, 2), 1);
        assert_eq!(grid.h_cap(0, 3), 2);
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(grid.v_cap(r, c), 2);
            }
        }
    }

    #[test]
    fn apply_route_empty_mask_is_identity() {
        let mut grid = RoutingGrid::uniform(4, 1, 1);
        let before = grid.clone();
        grid.apply_route(&PathMask::empty(4)).unwrap();
        assert_eq!(grid, before);
    }

    #[test]
    fn apply_route_exhaustion_errors_and_preserves_grid() {
        let mut grid = RoutingGrid::uniform(4, 1, 1);
        let mask = row_mask(4, 0, 0..4);
        grid.apply_route(&mask).unwrap();
        let before = grid.clone();
        let err = grid.apply_route(&mask).unwrap_err();
        assert!(matches!(err, GridError::CapacityViolation { .. }));
        assert_eq!(grid, before);
    }

    #[test]
    fn spanning_moves_count_tiles_minus_components() {
        // Two components: an L-shape and an isolated tile.
        let mask = PathMask::from_tiles(4, [(0, 0), (0, 1), (1, 1), (3, 3)]);
        let moves = spanning_moves(&mask);
        assert_eq!(moves.len(), mask.popcount() - 2);
    }

    #[test]
    fn trivial_fraction_of_random_two_pin_nets() {
        // Uniform independent pins collide with probability 1/64 on 8x8.
        use rand::Rng;
        let mut rng = crate::util::rng_from(11, &[0]);
        let mut trivial = 0;
        for _ in 0..100 {
            let pins: Vec<Tile> = (0..2)
                .map(|_| (rng.gen_range(0..8), rng.gen_range(0..8)))
                .collect();
            let all_same = pins[0] == pins[1];
            if all_same {
                trivial += 1;
            }
        }
        // 4 sigma band around 100/64.
        assert!(trivial <= 6, "trivial count {trivial} outside tolerance");
    }

    proptest! {
        #[test]
        fn round_trip_any_benchmark(
            caps in proptest::collection::vec((0u32..4, 0u32..4), 16),
            pins in proptest::collection::vec((0usize..4, 0usize..4), 1..5),
        ) {
            let mut grid = RoutingGrid::uniform(4, 1, 1);
            for (i, (h, v)) in caps.iter().enumerate() {
                grid.set_caps(i / 4, i % 4, *h, *v);
            }
            let mut unique = pins.clone();
            unique.sort_unstable();
            unique.dedup();
            let net = Net::new("p", unique, 4).unwrap();
            let b = Benchmark::new(grid, vec![net]).unwrap();
            let round = parse_benchmark(&emit_benchmark(&b)).unwrap();
            prop_assert_eq!(b, round);
        }

        #[test]
        fn apply_route_never_goes_negative(
            tiles in proptest::collection::vec((0usize..6, 0usize..6), 0..12),
            h in 0u32..3,
            v in 0u32..3,
        ) {
            let mut grid = RoutingGrid::uniform(8, h, v);
            let before = grid.clone();
            let mask = PathMask::from_tiles(8, tiles);
            match grid.apply_route(&mask) {
                Ok(()) => {
                    let deducted: u32 = (0..8).flat_map(|r| (0..8).map(move |c| (r, c)))
                        .map(|(r, c)| (before.h_cap(r, c) - grid.h_cap(r, c))
                            + (before.v_cap(r, c) - grid.v_cap(r, c)))
                        .sum();
                    prop_assert_eq!(deducted as usize, spanning_moves(&mask).len());
                }
                Err(_) => prop_assert_eq!(&grid, &before),
            }
        }

        #[test]
        fn encode_is_pure_and_bounded(
            caps in proptest::collection::vec((0u32..3, 0u32..3), 16),
            pr in 0usize..4, pc in 0usize..4,
        ) {
            let mut grid = RoutingGrid::uniform(4, 0, 0);
            for (i, (h, v)) in caps.iter().enumerate() {
                grid.set_caps(i / 4, i % 4, *h, *v);
            }
            let net = Net::new("e", vec![(pr, pc)], 4).unwrap();
            let a = encode_features(&grid, &net, 3).unwrap();
            let b = encode_features(&grid, &net, 3).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }
}
