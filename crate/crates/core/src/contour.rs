//! The unfolded contour grid `t_k = k·dt`, `k = 0..=2N`, with the measurement
//! time `t = N·dt` split into the one-sided limits N⁻ and N⁺.
//!
//! Grid values are stored densely over *slots*: slot `k` for `k < N`, slot
//! `N` for N⁻, slot `N+1` for N⁺ and slot `k+1` for `k > N`. Only the lower
//! triangle (column slot ≤ row slot) exists.

use std::fmt;
use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::system::{expectation, SystemOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tag {
    Plain,
    /// Left limit at the measurement time.
    Minus,
    /// Right limit at the measurement time.
    Plus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridIndex {
    pub k: usize,
    pub tag: Tag,
}

impl GridIndex {
    pub const fn plain(k: usize) -> Self {
        Self { k, tag: Tag::Plain }
    }

    pub const fn minus(n: usize) -> Self {
        Self { k: n, tag: Tag::Minus }
    }

    pub const fn plus(n: usize) -> Self {
        Self { k: n, tag: Tag::Plus }
    }
}

impl fmt::Display for GridIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tag {
            Tag::Plain => write!(f, "{}", self.k),
            Tag::Minus => write!(f, "{}-", self.k),
            Tag::Plus => write!(f, "{}+", self.k),
        }
    }
}

/// A point on the contour: a grid node (with its side at t) or an arbitrary
/// time strictly between nodes. Interior times exactly equal to t count as N⁺.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ContourPoint {
    Node(GridIndex),
    Interior(f64),
}

/// (−1)^{#{s < t}}.
pub fn sign_parity(times: &[f64], t: f64) -> f64 {
    let below = times.iter().filter(|&&s| s < t).count();
    if below % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Read access to grid values, used by the interpolator.
pub trait Grid {
    fn steps_per_branch(&self) -> usize;
    fn dt(&self) -> f64;
    fn observable(&self) -> &SystemOperator;
    /// Value at (row slot, col slot); errors if not yet computed.
    fn vertex(&self, row: usize, col: usize) -> Result<SystemOperator>;
}

#[derive(Clone, Debug)]
pub struct PropagatorTable {
    n: usize,
    dt: f64,
    observable: SystemOperator,
    values: Vec<SystemOperator>,
    filled: Vec<bool>,
    fill_log: Option<Vec<(usize, usize)>>,
}

#[inline]
fn tri(row: usize, col: usize) -> usize {
    row * (row + 1) / 2 + col
}

impl PropagatorTable {
    pub fn new(n: usize, dt: f64, observable: SystemOperator) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("grid needs at least one step per branch".into()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        let slots = 2 * n + 2;
        let len = tri(slots - 1, slots - 1) + 1;
        Ok(Self {
            n,
            dt,
            observable,
            values: vec![SystemOperator::ZERO; len],
            filled: vec![false; len],
            fill_log: None,
        })
    }

    /// Records the order in which entries are written.
    pub fn with_fill_log(mut self) -> Self {
        self.fill_log = Some(Vec::new());
        self
    }

    pub fn fill_log(&self) -> Option<&[(usize, usize)]> {
        self.fill_log.as_deref()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn slot_count(&self) -> usize {
        2 * self.n + 2
    }

    /// Measurement time t = N·dt.
    pub fn measurement_time(&self) -> f64 {
        self.n as f64 * self.dt
    }

    pub fn slot(&self, g: GridIndex) -> Result<usize> {
        let n = self.n;
        match (g.k.cmp(&n), g.tag) {
            (std::cmp::Ordering::Less, Tag::Plain) => Ok(g.k),
            (std::cmp::Ordering::Equal, Tag::Minus) => Ok(n),
            (std::cmp::Ordering::Equal, Tag::Plus) => Ok(n + 1),
            (std::cmp::Ordering::Greater, Tag::Plain) if g.k <= 2 * n => Ok(g.k + 1),
            _ => Err(Error::InvalidArgument(format!("grid index {g} invalid for N = {n}"))),
        }
    }

    pub fn index_of_slot(&self, slot: usize) -> GridIndex {
        let n = self.n;
        if slot < n {
            GridIndex::plain(slot)
        } else if slot == n {
            GridIndex::minus(n)
        } else if slot == n + 1 {
            GridIndex::plus(n)
        } else {
            GridIndex::plain(slot - 1)
        }
    }

    pub fn slot_time(&self, slot: usize) -> f64 {
        self.index_of_slot(slot).k as f64 * self.dt
    }

    pub fn is_filled_slot(&self, row: usize, col: usize) -> bool {
        col <= row && row < self.slot_count() && self.filled[tri(row, col)]
    }

    pub fn set_slot(&mut self, row: usize, col: usize, value: SystemOperator) {
        assert!(col <= row && row < self.slot_count(), "slot ({row}, {col}) outside the triangle");
        let i = tri(row, col);
        self.values[i] = value;
        self.filled[i] = true;
        if let Some(log) = self.fill_log.as_mut() {
            log.push((row, col));
        }
    }

    pub fn get_slot(&self, row: usize, col: usize) -> Result<SystemOperator> {
        if !self.is_filled_slot(row, col) {
            return Err(Error::SweepOrder { row, col });
        }
        Ok(self.values[tri(row, col)])
    }

    pub fn set(&mut self, j: GridIndex, k: GridIndex, value: SystemOperator) -> Result<()> {
        let (row, col) = (self.slot(j)?, self.slot(k)?);
        if col > row {
            return Err(Error::InvalidArgument(format!("entry ({j}, {k}) above the diagonal")));
        }
        self.set_slot(row, col, value);
        Ok(())
    }

    pub fn get(&self, j: GridIndex, k: GridIndex) -> Result<SystemOperator> {
        let (row, col) = (self.slot(j)?, self.slot(k)?);
        self.get_slot(row, col)
    }

    /// All stored entries as (row slot, col slot, value); unfilled entries skipped.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, SystemOperator)> + '_ {
        (0..self.slot_count()).flat_map(move |r| {
            (0..=r).filter_map(move |c| {
                let i = tri(r, c);
                self.filled[i].then(|| (r, c, self.values[i]))
            })
        })
    }

    pub fn is_complete(&self) -> bool {
        self.filled.iter().all(|&f| f)
    }

    /// Checks diagonal identities and both observable jump conditions.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let n = self.n;
        let o = self.observable;
        let fail = |what: String| Err(Error::InvalidArgument(format!("table invariant violated: {what}")));
        for s in 0..self.slot_count() {
            if self.get_slot(s, s)?.max_abs_diff(&SystemOperator::IDENTITY) > tol {
                return fail(format!("diagonal slot {s} is not Id"));
            }
        }
        if self.get_slot(n + 1, n)?.max_abs_diff(&o) > tol {
            return fail("(N+, N-) is not O_s".into());
        }
        for k in 0..n {
            let lhs = self.get_slot(n + 1, k)?;
            let rhs = o * self.get_slot(n, k)?;
            if lhs.max_abs_diff(&rhs) > tol {
                return fail(format!("(N+, {k}) ≠ O_s (N-, {k})"));
            }
        }
        for row in n + 2..self.slot_count() {
            let lhs = self.get_slot(row, n)?;
            let rhs = self.get_slot(row, n + 1)? * o;
            if lhs.max_abs_diff(&rhs) > tol {
                return fail(format!("(slot {row}, N-) ≠ (slot {row}, N+) O_s"));
            }
        }
        Ok(())
    }

    /// Largest operator norm over all stored entries.
    pub fn max_op_norm(&self) -> f64 {
        self.entries().map(|(_, _, v)| v.op_norm()).fold(0.0, f64::max)
    }

    /// CSV snapshot: j, k, then real/imaginary parts of the four entries.
    pub fn write_csv<W: Write>(&self, out: W, header: &[String]) -> Result<()> {
        let mut out = out;
        for line in header {
            writeln!(out, "# {line}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "j", "k", "g00_re", "g00_im", "g01_re", "g01_im", "g10_re", "g10_im", "g11_re", "g11_im",
        ])?;
        for (r, c, v) in self.entries() {
            let mut rec = vec![self.index_of_slot(r).to_string(), self.index_of_slot(c).to_string()];
            for z in v.0 {
                rec.push(format!("{:.17e}", z.re));
                rec.push(format!("{:.17e}", z.im));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Grid for PropagatorTable {
    fn steps_per_branch(&self) -> usize {
        self.n
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn observable(&self) -> &SystemOperator {
        &self.observable
    }

    #[inline]
    fn vertex(&self, row: usize, col: usize) -> Result<SystemOperator> {
        self.get_slot(row, col)
    }
}

/// A table view with one extra provisional entry, e.g. a predictor value that
/// is not yet committed.
pub struct Overlay<'a> {
    pub table: &'a PropagatorTable,
    pub row: usize,
    pub col: usize,
    pub value: SystemOperator,
}

impl Grid for Overlay<'_> {
    fn steps_per_branch(&self) -> usize {
        self.table.n
    }

    fn dt(&self) -> f64 {
        self.table.dt
    }

    fn observable(&self) -> &SystemOperator {
        &self.table.observable
    }

    #[inline]
    fn vertex(&self, row: usize, col: usize) -> Result<SystemOperator> {
        if row == self.row && col == self.col {
            Ok(self.value)
        } else {
            self.table.get_slot(row, col)
        }
    }
}

/// Cell index and fractional position of one coordinate.
#[derive(Clone, Copy, Debug)]
struct CellCoord {
    cell: usize,
    frac: f64,
}

fn interior_coord(x: f64, dt: f64, cells: usize) -> CellCoord {
    let y = x / dt;
    let cell = (y.floor().max(0.0) as usize).min(cells - 1);
    CellCoord { cell, frac: (y - cell as f64).clamp(0.0, 1.0) }
}

/// Lower vertex of a cell → slot (a cell starting at N lies above t).
#[inline]
fn lower_slot(cell: usize, n: usize) -> usize {
    if cell < n {
        cell
    } else {
        cell + 1
    }
}

/// Upper vertex of a cell → slot (a cell ending at N lies below t).
#[inline]
fn upper_slot(cell: usize, n: usize) -> usize {
    if cell < n {
        cell + 1
    } else {
        cell + 2
    }
}

fn time_of(p: ContourPoint, dt: f64) -> f64 {
    match p {
        ContourPoint::Node(g) => g.k as f64 * dt,
        ContourPoint::Interior(x) => x,
    }
}

/// Piecewise-linear interpolation of the grid at `(s_f, s_i)`.
///
/// Each square cell is split along its (s_i, s_f) → (s_i + dt, s_f + dt)
/// diagonal. Vertices on the row/column N resolve to N⁻ when the cell lies
/// below t in that coordinate and to N⁺ when it lies above.
pub fn interpolate<G: Grid + ?Sized>(grid: &G, s_f: ContourPoint, s_i: ContourPoint) -> Result<SystemOperator> {
    let n = grid.steps_per_branch();
    let dt = grid.dt();
    let cells = 2 * n;
    let t = n as f64 * dt;

    let (tf, ti) = (time_of(s_f, dt), time_of(s_i, dt));
    if !(0.0..=2.0 * t * (1.0 + 1e-12)).contains(&tf) || !(0.0..=2.0 * t * (1.0 + 1e-12)).contains(&ti) {
        return Err(Error::Domain(format!("interpolation point ({tf}, {ti}) outside [0, {}]", 2.0 * t)));
    }
    if ti > tf + 1e-12 * dt {
        return Err(Error::Domain(format!("interpolation arguments unordered: {ti} > {tf}")));
    }

    let row = match s_f {
        ContourPoint::Node(g) if g.tag == Tag::Plus => {
            // G(t⁺, s) = O_s G(t⁻, s) for s below t; Id at t⁺ itself.
            let above = match s_i {
                ContourPoint::Node(h) => h.tag == Tag::Plus,
                ContourPoint::Interior(x) => x >= t,
            };
            if above {
                return Ok(SystemOperator::IDENTITY);
            }
            let below = interpolate(grid, ContourPoint::Node(GridIndex::minus(n)), s_i)?;
            return Ok(*grid.observable() * below);
        }
        ContourPoint::Node(g) if g.k == 0 => CellCoord { cell: 0, frac: 0.0 },
        ContourPoint::Node(g) => CellCoord { cell: g.k - 1, frac: 1.0 },
        ContourPoint::Interior(x) => interior_coord(x, dt, cells),
    };
    let col = match s_i {
        ContourPoint::Node(g) if g.tag == Tag::Minus => CellCoord { cell: n - 1, frac: 1.0 },
        ContourPoint::Node(g) if g.tag == Tag::Plus && s_f == ContourPoint::Node(GridIndex::minus(n)) => {
            return Err(Error::Domain("interpolation arguments unordered: (N-, N+)".into()));
        }
        ContourPoint::Node(g) if g.k >= cells => CellCoord { cell: cells - 1, frac: 1.0 },
        ContourPoint::Node(g) => CellCoord { cell: g.k, frac: 0.0 },
        ContourPoint::Interior(x) => interior_coord(x, dt, cells),
    };

    // A column node sitting on the row's upper vertex: same grid point, so
    // use the row's cell. Never reached for N⁺ columns, which were rejected.
    let col = if col.cell == row.cell + 1 && col.cell != n && col.frac == 0.0 && row.frac == 1.0 {
        CellCoord { cell: row.cell, frac: 1.0 }
    } else {
        col
    };
    if col.cell > row.cell {
        return Err(Error::Domain(format!("interpolation arguments unordered: {ti} > {tf}")));
    }
    let v = row.frac;
    let mut u = col.frac;
    if col.cell == row.cell && u > v {
        u = v;
    }

    let (r0, r1) = (lower_slot(row.cell, n), upper_slot(row.cell, n));
    let (c0, c1) = (lower_slot(col.cell, n), upper_slot(col.cell, n));
    let corners: [(usize, usize, f64); 3] = if v >= u {
        [(r0, c0, 1.0 - v), (r1, c0, v - u), (r1, c1, u)]
    } else {
        [(r0, c0, 1.0 - u), (r0, c1, u - v), (r1, c1, v)]
    };
    let mut acc = SystemOperator::ZERO;
    for (r, c, w) in corners {
        if w != 0.0 {
            acc += grid.vertex(r, c)?.scale_re(w);
        }
    }
    Ok(acc)
}

/// ⟨O(τ)⟩ for τ = t − t_k, k = N..0, read off the anti-diagonal.
pub fn antidiagonal_observables(table: &PropagatorTable, rho_s: &SystemOperator) -> Result<Vec<(f64, Complex64)>> {
    let n = table.n;
    let dt = table.dt;
    (0..=n)
        .rev()
        .map(|k| {
            let value = if k == n {
                table.get_slot(n + 1, n)?
            } else {
                table.get(GridIndex::plain(2 * n - k), GridIndex::plain(k))?
            };
            Ok(((n - k) as f64 * dt, expectation(rho_s, &value)))
        })
        .collect()
}
