//! Right-continuous step functions over a distinct-time grid.
//!
//! Every estimator in this crate produces a [`StepCurve`]: a survival or
//! cumulative-hazard function that is constant between jumps located at the
//! distinct observed times. The stored value at grid index `j` is the value
//! on `[t_j, t_{j+1})`, i.e. immediately after the jump at `t_j`.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("grid times must be strictly increasing and positive (offender at index {0})")]
    InvalidGrid(usize),
    #[error("empty grid")]
    EmptyGrid,
    #[error("values length {values} does not match grid length {grid}")]
    LengthMismatch { values: usize, grid: usize },
    #[error("curve values violate {0} invariants at index {1}")]
    InvalidValues(&'static str, usize),
    #[error("evaluation at negative time {0}")]
    NegativeTime(f64),
    #[error("integration upper limit {0} is not positive")]
    NonPositiveUpper(f64),
    #[error("integrand requires a survival curve")]
    NotSurvival,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Strictly increasing distinct positive times `t_1 < ... < t_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistinctTimeGrid {
    times: Vec<f64>,
}

impl DistinctTimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self, CurveError> {
        if times.is_empty() {
            return Err(CurveError::EmptyGrid);
        }
        for (j, t) in times.iter().enumerate() {
            if !t.is_finite() || *t <= 0.0 || (j > 0 && *t <= times[j - 1]) {
                return Err(CurveError::InvalidGrid(j));
            }
        }
        Ok(DistinctTimeGrid { times })
    }

    /// Collect the distinct values of `times`, sorted ascending.
    pub fn from_observed(times: impl IntoIterator<Item = f64>) -> Result<Self, CurveError> {
        let mut v: Vec<f64> = times.into_iter().collect();
        v.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN times"));
        v.dedup();
        Self::new(v)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn last(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Number of grid points `<= t`; zero means `t` precedes the grid.
    pub fn count_leq(&self, t: f64) -> usize {
        self.times.partition_point(|tj| *tj <= t)
    }

    /// Exact position of `t` in the grid, if present.
    pub fn position(&self, t: f64) -> Option<usize> {
        self.times
            .binary_search_by(|tj| tj.partial_cmp(&t).unwrap())
            .ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    Survival,
    CumulativeHazard,
}

/// A right-continuous step function: `value_before` on `[0, t_1)` and
/// `values[j]` on `[t_j, t_{j+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCurve {
    grid: DistinctTimeGrid,
    values: Vec<f64>,
    value_before: f64,
    kind: CurveKind,
}

impl StepCurve {
    /// A survival curve: `value_before = 1`, values nonincreasing in `[0,1]`.
    pub fn survival(grid: DistinctTimeGrid, values: Vec<f64>) -> Result<Self, CurveError> {
        if values.len() != grid.len() {
            return Err(CurveError::LengthMismatch {
                values: values.len(),
                grid: grid.len(),
            });
        }
        let mut prev = 1.0_f64;
        for (j, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < -1e-12 || *v > 1.0 + 1e-12 || *v > prev + 1e-12 {
                return Err(CurveError::InvalidValues("survival", j));
            }
            prev = *v;
        }
        let values = values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(StepCurve {
            grid,
            values,
            value_before: 1.0,
            kind: CurveKind::Survival,
        })
    }

    /// A cumulative hazard: `value_before = 0`, values nondecreasing, `>= 0`.
    pub fn cumulative_hazard(grid: DistinctTimeGrid, values: Vec<f64>) -> Result<Self, CurveError> {
        if values.len() != grid.len() {
            return Err(CurveError::LengthMismatch {
                values: values.len(),
                grid: grid.len(),
            });
        }
        let mut prev = 0.0_f64;
        for (j, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < -1e-12 || *v < prev - 1e-12 {
                return Err(CurveError::InvalidValues("cumulative hazard", j));
            }
            prev = *v;
        }
        let values = values.into_iter().map(|v| v.max(0.0)).collect();
        Ok(StepCurve {
            grid,
            values,
            value_before: 0.0,
            kind: CurveKind::CumulativeHazard,
        })
    }

    pub fn grid(&self) -> &DistinctTimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_before(&self) -> f64 {
        self.value_before
    }

    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    /// Right-continuous evaluation at `t >= 0`.
    pub fn eval_at(&self, t: f64) -> Result<f64, CurveError> {
        if t < 0.0 || t.is_nan() {
            return Err(CurveError::NegativeTime(t));
        }
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> f64 {
        match self.grid.count_leq(t) {
            0 => self.value_before,
            k => self.values[k - 1],
        }
    }

    /// Value on the segment just before grid index `j` (the left limit at
    /// `t_j`).
    pub fn left_limit(&self, j: usize) -> f64 {
        if j == 0 {
            self.value_before
        } else {
            self.values[j - 1]
        }
    }

    /// Export as `t,value` CSV; the first row holds `0,value_before`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<(), CurveError> {
        writeln!(w, "t,value")?;
        writeln!(w, "0,{}", self.value_before)?;
        for (t, v) in self.grid.times().iter().zip(&self.values) {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), CurveError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Pointwise transform applied to a survival curve before integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    /// Integrate `S(t)` itself.
    Identity,
    /// Integrate `S(t) log S(t)`, with the limit value 0 wherever `S <= 1e-300`.
    SLogS,
}

impl Transform {
    fn apply(self, s: f64) -> f64 {
        match self {
            Transform::Identity => s,
            Transform::SLogS => {
                if s <= 1e-300 {
                    0.0
                } else {
                    s * s.ln()
                }
            }
        }
    }
}

/// Exact integral of the transformed survival curve over `[0, upper]`.
pub fn integrate_step(
    transform: Transform,
    curve: &StepCurve,
    upper: f64,
) -> Result<f64, CurveError> {
    if curve.kind != CurveKind::Survival {
        return Err(CurveError::NotSurvival);
    }
    if !(upper > 0.0) {
        return Err(CurveError::NonPositiveUpper(upper));
    }
    let times = curve.grid.times();
    let mut total = 0.0;
    let mut seg_start = 0.0;
    let mut seg_value = curve.value_before;
    for (j, t) in times.iter().enumerate() {
        if *t >= upper {
            break;
        }
        total += transform.apply(seg_value) * (t - seg_start);
        seg_start = *t;
        seg_value = curve.values[j];
    }
    total += transform.apply(seg_value) * (upper - seg_start);
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn demo_curve() -> StepCurve {
        let grid = DistinctTimeGrid::new(vec![1.0, 2.0]).unwrap();
        StepCurve::survival(grid, vec![0.5, 0.2]).unwrap()
    }

    #[test]
    fn eval_respects_right_continuity() {
        let c = demo_curve();
        assert_eq!(c.eval_at(0.3).unwrap(), 1.0);
        assert_eq!(c.eval_at(1.0).unwrap(), 0.5);
        assert_eq!(c.eval_at(1.7).unwrap(), 0.5);
        assert_eq!(c.eval_at(2.0).unwrap(), 0.2);
        assert_eq!(c.eval_at(5.0).unwrap(), 0.2);
        assert!(c.eval_at(-0.1).is_err());
    }

    #[test]
    fn integrates_identity_and_slogs() {
        // S = 1 on [0,1), 0.5 on [1,2), 0 after 2.
        let grid = DistinctTimeGrid::new(vec![1.0, 2.0]).unwrap();
        let c = StepCurve::survival(grid, vec![0.5, 0.0]).unwrap();
        assert_abs_diff_eq!(
            integrate_step(Transform::Identity, &c, 2.0).unwrap(),
            1.5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            integrate_step(Transform::SLogS, &c, 2.0).unwrap(),
            0.5 * 0.5_f64.ln(),
            epsilon = 1e-12
        );
        // zero-survival tail contributes nothing under either transform
        assert_abs_diff_eq!(
            integrate_step(Transform::Identity, &c, 10.0).unwrap(),
            1.5,
            epsilon = 1e-12
        );
        // vanishing interval
        assert!(integrate_step(Transform::Identity, &c, 1e-12).unwrap() < 1e-10);
        assert!(integrate_step(Transform::Identity, &c, 0.0).is_err());
    }

    #[test]
    fn constructor_rejects_bad_shapes() {
        let grid = DistinctTimeGrid::new(vec![1.0, 2.0]).unwrap();
        assert!(StepCurve::survival(grid.clone(), vec![0.2, 0.5]).is_err());
        assert!(StepCurve::survival(grid.clone(), vec![1.2, 0.5]).is_err());
        assert!(StepCurve::survival(grid.clone(), vec![0.5]).is_err());
        assert!(StepCurve::cumulative_hazard(grid.clone(), vec![0.5, 0.2]).is_err());
        assert!(DistinctTimeGrid::new(vec![1.0, 1.0]).is_err());
        assert!(DistinctTimeGrid::new(vec![0.0, 1.0]).is_err());
        assert!(DistinctTimeGrid::new(vec![]).is_err());
    }

    #[test]
    fn csv_export_has_leading_anchor_row() {
        let mut buf = Vec::new();
        demo_curve().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "t,value\n0,1\n1,0.5\n2,0.2\n");
    }

    fn survival_curve_strategy() -> impl Strategy<Value = StepCurve> {
        (1usize..8).prop_flat_map(|h| {
            (
                proptest::collection::vec(0.01f64..10.0, h),
                proptest::collection::vec(0.0f64..1.0, h),
            )
                .prop_map(|(mut gaps, mut vals)| {
                    let mut t = 0.0;
                    for g in gaps.iter_mut() {
                        t += *g;
                        *g = t;
                    }
                    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    let grid = DistinctTimeGrid::new(gaps).unwrap();
                    StepCurve::survival(grid, vals).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn eval_at_grid_points_matches_values(c in survival_curve_strategy()) {
            for (j, t) in c.grid().times().iter().enumerate() {
                prop_assert_eq!(c.eval_at(*t).unwrap(), c.values()[j]);
            }
        }

        #[test]
        fn identity_integral_is_nonneg_and_monotone(
            c in survival_curve_strategy(),
            u1 in 0.01f64..20.0,
            u2 in 0.01f64..20.0,
        ) {
            let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
            let a = integrate_step(Transform::Identity, &c, lo).unwrap();
            let b = integrate_step(Transform::Identity, &c, hi).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!(b + 1e-12 >= a);
        }

        #[test]
        fn slogs_integral_is_nonpositive(c in survival_curve_strategy(), u in 0.01f64..20.0) {
            prop_assert!(integrate_step(Transform::SLogS, &c, u).unwrap() <= 1e-15);
        }
    }
}
