//! Jerusalem-cross unit-cell parameterisation and the parametric sweep.
//!
//! Dimensions are in millimetres:
//!
//! - `a`: unit-cell period
//! - `b`: end-cap bar length
//! - `c`: strip width
//! - `d`: arm tip-to-tip length
//! - `t`: spacer thickness between the resistive sheet and the ground plane
//!
//! The end-cap margin to the cell edge is `e = (a - b) / 2`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid values are rounded to this resolution so that sweeps print cleanly
/// and survive a text round trip.
const GRID_QUANTUM_MM: f64 = 1e-6;
/// Slack applied when deciding whether the next grid value exceeds the range.
const GRID_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitCellGeometry {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub t: f64,
}

/// A violated feasibility constraint, named by its inequality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub constraint: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "violates {}", self.constraint)
    }
}

impl UnitCellGeometry {
    pub const DIMENSION_NAMES: [&'static str; 5] = ["a", "b", "c", "d", "t"];

    pub fn new(a: f64, b: f64, c: f64, d: f64, t: f64) -> Self {
        Self { a, b, c, d, t }
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.a, self.b, self.c, self.d, self.t]
    }

    /// End-cap margin to the cell boundary, `(a - b) / 2`.
    pub fn derived_gap(&self) -> f64 {
        (self.a - self.b) / 2.0
    }

    /// Checks every feasibility constraint and reports all that fail.
    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        let mut check = |ok: bool, constraint: &'static str| {
            if !ok {
                out.push(Violation { constraint });
            }
        };
        let finite = self.to_array().iter().all(|v| v.is_finite());
        check(finite, "finite dimensions");
        check(self.a > 0.0, "a > 0");
        check(self.b > 0.0, "b > 0");
        check(self.b < self.a, "b < a");
        check(self.c > 0.0, "c > 0");
        check(self.c < self.b, "c < b");
        check(self.d > 0.0, "d > 0");
        check(self.d < self.a, "d < a");
        check(self.t > 0.0, "t > 0");
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_ok()
    }

    /// Like [`validate`](Self::validate) but as a crate error.
    pub fn check(&self) -> Result<()> {
        self.validate().map_err(Error::InvalidGeometry)
    }
}

impl fmt::Display for UnitCellGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "a={:.2} b={:.2} c={:.2} d={:.2} t={:.2} mm",
            self.a, self.b, self.c, self.d, self.t
        )
    }
}

/// Closed interval `[min, max]` in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
}

impl AxisRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }
}

impl From<[f64; 2]> for AxisRange {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<AxisRange> for [f64; 2] {
    fn from(r: AxisRange) -> Self {
        [r.min, r.max]
    }
}

/// One row of the sweep: a fixed period with ranges for `b`, `c` and `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub a: f64,
    pub b: AxisRange,
    pub c: AxisRange,
    pub d: AxisRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSteps {
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for SweepSteps {
    fn default() -> Self {
        Self {
            b: 0.15,
            c: 0.2,
            d: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub steps: SweepSteps,
    pub thicknesses: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

const fn row(a: f64, b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> SweepRow {
    SweepRow {
        a,
        b: AxisRange::new(b[0], b[1]),
        c: AxisRange::new(c[0], c[1]),
        d: AxisRange::new(d[0], d[1]),
    }
}

/// Published sweep bounds, period 3.5 mm to 7.0 mm in 0.5 mm steps.
pub const TABLE1_ROWS: [SweepRow; 8] = [
    row(3.5, [1.5, 3.4], [0.25, 1.5], [1.0, 3.4]),
    row(4.0, [1.5, 3.8], [0.25, 1.4], [1.0, 3.8]),
    row(4.5, [1.5, 4.4], [0.25, 1.4], [2.0, 4.4]),
    row(5.0, [2.0, 4.8], [1.20, 1.8], [1.0, 4.8]),
    row(5.5, [2.5, 5.3], [1.70, 2.3], [1.0, 5.3]),
    row(6.0, [3.0, 5.8], [2.00, 2.8], [2.0, 5.8]),
    row(6.5, [3.0, 6.3], [2.00, 2.8], [2.0, 6.2]),
    row(7.0, [3.5, 6.9], [2.60, 3.3], [3.0, 6.8]),
];

impl SweepTable {
    /// The published sweep with default steps at the given thicknesses.
    pub fn table1(thicknesses: &[f64]) -> Self {
        Self {
            steps: SweepSteps::default(),
            thicknesses: thicknesses.to_vec(),
            rows: TABLE1_ROWS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let steps = [self.steps.b, self.steps.c, self.steps.d];
        if steps.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "sweep steps must be positive, got {steps:?}"
            )));
        }
        if let Some(t) = self.thicknesses.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "thickness must be positive, got {t}"
            )));
        }
        for (i, r) in self.rows.iter().enumerate() {
            for (name, range) in [("b", r.b), ("c", r.c), ("d", r.d)] {
                if !(range.min.is_finite() && range.max.is_finite() && range.min <= range.max) {
                    return Err(Error::InvalidInput(format!(
                        "row {} (a={}): {name} range [{}, {}] has min > max",
                        i + 1,
                        r.a,
                        range.min,
                        range.max
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let table: SweepTable =
            toml::from_str(s).map_err(|e| Error::InvalidInput(format!("sweep table: {e}")))?;
        table.validate()?;
        Ok(table)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("sweep table serialises")
    }
}

/// Grid `min, min + step, ...` not exceeding `max`.
pub fn axis_grid(range: AxisRange, step: f64) -> Vec<f64> {
    let n = ((range.max - range.min) / step + GRID_SLACK).floor() as usize + 1;
    (0..n)
        .map(|i| quantize(range.min + i as f64 * step))
        .collect()
}

fn quantize(v: f64) -> f64 {
    (v * GRID_QUANTUM_MM.recip()).round() / GRID_QUANTUM_MM.recip()
}

/// Feasible geometries of the sweep in row, `b`, `c`, `d`, `t` order.
///
/// Thicknesses are visited in ascending order regardless of how they are
/// listed in the table.
pub fn enumerate_sweep(table: &SweepTable) -> Vec<UnitCellGeometry> {
    let mut thicknesses = table.thicknesses.clone();
    thicknesses.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    for r in &table.rows {
        let bs = axis_grid(r.b, table.steps.b);
        let cs = axis_grid(r.c, table.steps.c);
        let ds = axis_grid(r.d, table.steps.d);
        for &b in &bs {
            for &c in &cs {
                for &d in &ds {
                    for &t in &thicknesses {
                        let g = UnitCellGeometry::new(r.a, b, c, d, t);
                        if g.is_valid() {
                            out.push(g);
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn derived_gap_examples() {
        let g = UnitCellGeometry::new(6.88, 3.92, 2.83, 5.46, 2.0);
        assert_abs_diff_eq!(g.derived_gap(), 1.48, epsilon = 1e-12);
        let g = UnitCellGeometry::new(7.0, 3.5, 2.6, 3.0, 2.0);
        assert_eq!(g.derived_gap(), 1.75);
        let g = UnitCellGeometry::new(3.5, 3.5, 1.0, 1.0, 2.0);
        assert_eq!(g.derived_gap(), 0.0);
        assert!(!g.is_valid());
    }

    #[test]
    fn validate_examples() {
        assert!(UnitCellGeometry::new(3.5, 1.5, 0.25, 1.0, 2.0).validate().is_ok());

        let err = UnitCellGeometry::new(3.5, 3.6, 0.25, 1.0, 2.0)
            .validate()
            .unwrap_err();
        assert_eq!(err, vec![Violation { constraint: "b < a" }]);

        let err = UnitCellGeometry::new(3.5, 1.5, 0.0, 1.0, 2.0)
            .validate()
            .unwrap_err();
        assert_eq!(err, vec![Violation { constraint: "c > 0" }]);
    }

    #[test]
    fn validate_reports_every_violation() {
        let err = UnitCellGeometry::new(3.0, 3.5, 4.0, 3.0, -1.0)
            .validate()
            .unwrap_err();
        let names: Vec<_> = err.iter().map(|v| v.constraint).collect();
        assert_eq!(names, ["b < a", "c < b", "d < a", "t > 0"]);
        let err = UnitCellGeometry::new(f64::NAN, 1.0, 0.5, 1.0, 1.0)
            .validate()
            .unwrap_err();
        assert!(err.iter().any(|v| v.constraint == "finite dimensions"));
    }

    #[test]
    fn axis_grid_stops_at_max() {
        assert_eq!(axis_grid(AxisRange::new(2.0, 2.0), 0.1), vec![2.0]);
        let g = axis_grid(AxisRange::new(1.5, 3.4), 0.15);
        assert_eq!(g.len(), 13);
        assert_eq!(g[3], 1.95);
        assert!(*g.last().unwrap() <= 3.4);
        // Endpoint is included when it lands on the grid despite rounding.
        assert_eq!(axis_grid(AxisRange::new(0.1, 0.3), 0.1), vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn first_row_respects_bounds() {
        let mut table = SweepTable::table1(&[2.0]);
        table.rows.truncate(1);
        let gs = enumerate_sweep(&table);
        assert!(!gs.is_empty());
        for g in gs {
            assert!((1.5..=3.4).contains(&g.b));
            assert!((0.25..=1.5).contains(&g.c));
            assert!((1.0..=3.4).contains(&g.d));
            assert_eq!(g.a, 3.5);
            assert_eq!(g.t, 2.0);
        }
    }

    #[test]
    fn degenerate_row_gives_one_geometry() {
        let table = SweepTable {
            steps: SweepSteps::default(),
            thicknesses: vec![2.0],
            rows: vec![row(4.0, [2.0, 2.0], [1.0, 1.0], [1.5, 1.5])],
        };
        assert_eq!(
            enumerate_sweep(&table),
            vec![UnitCellGeometry::new(4.0, 2.0, 1.0, 1.5, 2.0)]
        );
    }

    #[test]
    fn empty_table_enumerates_nothing() {
        let table = SweepTable {
            steps: SweepSteps::default(),
            thicknesses: vec![2.0],
            rows: vec![],
        };
        assert!(enumerate_sweep(&table).is_empty());
    }

    /// Independent recount: integer-indexed loops with the feasibility
    /// inequalities written out directly.
    fn brute_force_count(table: &SweepTable) -> usize {
        let count_axis = |lo: f64, hi: f64, step: f64| {
            let mut k = 0usize;
            while lo + k as f64 * step <= hi + 1e-7 {
                k += 1;
            }
            k
        };
        let mut total = 0;
        for r in &table.rows {
            let nb = count_axis(r.b.min, r.b.max, table.steps.b);
            let nc = count_axis(r.c.min, r.c.max, table.steps.c);
            let nd = count_axis(r.d.min, r.d.max, table.steps.d);
            for ib in 0..nb {
                let b = r.b.min + ib as f64 * table.steps.b;
                for ic in 0..nc {
                    let c = r.c.min + ic as f64 * table.steps.c;
                    for id in 0..nd {
                        let d = r.d.min + id as f64 * table.steps.d;
                        for &t in &table.thicknesses {
                            if b > 0.0 && b < r.a && c > 0.0 && c < b && d > 0.0 && d < r.a && t > 0.0 {
                                total += 1;
                            }
                        }
                    }
                }
            }
        }
        total
    }

    #[test]
    fn table1_count_matches_brute_force() {
        let table = SweepTable::table1(&[2.0]);
        let n = enumerate_sweep(&table).len();
        assert_eq!(n, brute_force_count(&table));
        // Frozen from the recount above for the default steps.
        assert_eq!(n, 9143);

        let table = SweepTable::table1(&[1.0, 4.0]);
        assert_eq!(enumerate_sweep(&table).len(), brute_force_count(&table));
    }

    #[test]
    fn table1_has_infeasible_corners_filtered() {
        // Row a=4.5 allows c up to 1.4 with b from 1.5, always feasible; a
        // custom row with overlapping b/c ranges must drop infeasible points.
        let table = SweepTable {
            steps: SweepSteps { b: 0.5, c: 0.5, d: 1.0 },
            thicknesses: vec![1.0],
            rows: vec![row(4.0, [1.0, 2.0], [0.5, 2.0], [1.0, 3.0])],
        };
        let gs = enumerate_sweep(&table);
        assert_eq!(gs.len(), brute_force_count(&table));
        assert!(gs.len() < 3 * 4 * 3);
        assert!(gs.iter().all(|g| g.c < g.b));
    }

    #[test]
    fn enumeration_order_is_row_then_b_c_d_t() {
        let table = SweepTable {
            steps: SweepSteps { b: 0.5, c: 0.25, d: 1.0 },
            thicknesses: vec![4.0, 2.0],
            rows: vec![row(4.0, [1.5, 2.0], [0.25, 0.5], [1.0, 2.0])],
        };
        let gs = enumerate_sweep(&table);
        let keys: Vec<_> = gs.iter().map(|g| (g.b, g.c, g.d, g.t)).collect();
        let mut sorted = keys.clone();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(keys, sorted);
        assert_eq!(gs[0].t, 2.0);
        assert_eq!(gs[1].t, 4.0);
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let table = SweepTable::table1(&[2.0, 4.0]);
        let text = table.to_toml_string();
        assert_eq!(SweepTable::from_toml_str(&text).unwrap(), table);

        let mut bad = table.clone();
        bad.steps.c = 0.0;
        assert!(SweepTable::from_toml_str(&bad.to_toml_string()).is_err());
        let mut bad = table;
        bad.rows[2].d = AxisRange::new(3.0, 2.0);
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn derived_gap_within_half_period(
            a in 1.0f64..10.0, bf in 0.01f64..0.99, cf in 0.01f64..0.99,
            df in 0.01f64..0.99, t in 0.1f64..10.0,
        ) {
            let b = a * bf;
            let g = UnitCellGeometry::new(a, b, b * cf, a * df, t);
            prop_assume!(g.is_valid());
            let e = g.derived_gap();
            prop_assert!(e > 0.0 && e < a / 2.0);
        }

        #[test]
        fn sweep_is_deterministic_and_feasible(
            sb in 0.1f64..0.6, sc in 0.1f64..0.6, sd in 0.2f64..0.8,
        ) {
            let mut table = SweepTable::table1(&[2.0]);
            table.steps = SweepSteps { b: sb, c: sc, d: sd };
            let first = enumerate_sweep(&table);
            prop_assert_eq!(&first, &enumerate_sweep(&table));
            prop_assert!(first.iter().all(|g| g.is_valid()));
        }
    }
}
