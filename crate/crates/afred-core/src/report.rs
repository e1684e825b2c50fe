//! Deterministic report serialization.
//!
//! Reports are serialized through [`canonical_json`], which rewrites every
//! float as a fixed-width scientific literal (17 significant digits, exact
//! round-trip), so identical runs produce byte-identical files. Run metadata
//! that legitimately varies (timestamps, durations) lives in a separate
//! sidecar structure and never touches the main report. Matrix- and
//! vector-valued results are converted to plain `Vec<f64>` rows so the JSON
//! shape stays flat and stable.

use crate::diagnostics::{DefinitionReport, DtBoundAudit, PerEpsValue, RegularityAudit};
use crate::error::{AfredError, Result};
use crate::reduction::{BruteZero, ReducedPoint, ReducedZero, ZeroEquivalence};
use crate::solver::{ConstantsProvenance, RadiusPlan};
use serde::Serialize;
use serde_json::Value;

/// Largest finite stand-in for overflowing values.
const FLOAT_CAP: f64 = 1e308;

/// Replaces a non-finite value by a capped finite one.
pub fn finite_or_cap(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else if x.is_nan() {
        0.0
    } else if x > 0.0 {
        FLOAT_CAP
    } else {
        -FLOAT_CAP
    }
}

/// Formats one float as its canonical report literal.
pub fn canonical_float(x: f64) -> String {
    format!("{:.16e}", finite_or_cap(x))
}

fn canonicalize(value: &mut Value) {
    match value {
        Value::Number(n) => {
            if let Some(f) = n.as_f64() {
                if !n.is_i64() && !n.is_u64() {
                    *n = serde_json::Number::from_string_unchecked(canonical_float(f));
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(canonicalize),
        Value::Object(map) => map.values_mut().for_each(canonicalize),
        _ => {}
    }
}

/// Serializes a report with canonical float literals and a trailing newline.
/// The output is byte-identical for identical inputs.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)
        .map_err(|e| AfredError::InvalidConfig(format!("report serialization failed: {e}")))?;
    canonicalize(&mut v);
    let body = serde_json::to_string_pretty(&v)
        .map_err(|e| AfredError::InvalidConfig(format!("report serialization failed: {e}")))?;
    Ok(body + "\n")
}

/// Scalar-constant summary pulled out of a radius plan for the report head.
#[derive(Debug, Clone, Serialize)]
pub struct ConstantsSummary {
    pub c0: f64,
    pub c1: f64,
    pub c_cok: f64,
    pub cq_prelim: f64,
    pub cq: f64,
}

/// Radius-plan summary without the modulus tables.
#[derive(Debug, Clone, Serialize)]
pub struct PlanSummary {
    pub theta: f64,
    pub delta_theta: f64,
    pub delta_q: f64,
    pub delta_sigma: f64,
    pub r_k: f64,
    pub widened: bool,
    pub provenance: ConstantsProvenance,
}

impl From<&RadiusPlan> for PlanSummary {
    fn from(p: &RadiusPlan) -> Self {
        Self {
            theta: p.theta,
            delta_theta: p.delta_theta,
            delta_q: p.delta_q,
            delta_sigma: p.delta_sigma,
            r_k: p.r_k,
            widened: p.widened,
            provenance: p.provenance,
        }
    }
}

impl From<&RadiusPlan> for ConstantsSummary {
    fn from(p: &RadiusPlan) -> Self {
        Self {
            c0: p.constants.c0,
            c1: p.constants.c1,
            c_cok: p.constants.c_cok,
            cq_prelim: p.constants.cq_prelim,
            cq: p.constants.cq,
        }
    }
}

/// Report of the `verify` command.
#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub family: String,
    pub pass: bool,
    pub provenance: ConstantsProvenance,
    pub constants: ConstantsSummary,
    pub definition: DefinitionReport,
    pub regularity: Option<RegularityAudit>,
    pub dt_bounds: Vec<DtBoundAudit>,
}

/// One solved grid point of the `reduce` command.
#[derive(Debug, Clone, Serialize)]
pub struct GridRow {
    pub eps: Vec<f64>,
    pub k: Vec<f64>,
    pub f: Vec<f64>,
    /// Row-major flattening of the reduced derivative.
    pub df: Vec<f64>,
    pub residual: f64,
    pub iterations: u64,
}

impl From<&ReducedPoint> for GridRow {
    fn from(p: &ReducedPoint) -> Self {
        Self {
            eps: p.eps.clone(),
            k: p.k_coeffs.iter().copied().collect(),
            f: p.f.iter().copied().collect(),
            df: p.df.transpose().iter().copied().collect(),
            residual: p.residual,
            iterations: p.iterations as u64,
        }
    }
}

/// Report of the `reduce` command; the full grid also goes to CSV.
#[derive(Debug, Clone, Serialize)]
pub struct ReduceReport {
    pub family: String,
    pub plan: PlanSummary,
    pub constants: ConstantsSummary,
    pub eps_count: usize,
    pub k_count: usize,
    pub rows: Vec<GridRow>,
    pub max_residual: f64,
    pub max_iterations: u64,
    pub pass: bool,
}

impl ReduceReport {
    /// Assembles the report from solved points; `pass` means every point
    /// converged below the tolerance.
    pub fn from_points(
        family: String,
        plan: &RadiusPlan,
        points: &[ReducedPoint],
        eps_count: usize,
        k_count: usize,
        tol: f64,
    ) -> Self {
        let rows: Vec<GridRow> = points.iter().map(GridRow::from).collect();
        let max_residual = rows.iter().map(|r| r.residual).fold(0.0f64, f64::max);
        let max_iterations = rows.iter().map(|r| r.iterations).max().unwrap_or(0);
        Self {
            family,
            plan: plan.into(),
            constants: plan.into(),
            eps_count,
            k_count,
            rows,
            max_residual,
            max_iterations,
            pass: max_residual <= tol,
        }
    }
}

/// CSV rendering of a solved grid: `epsilon0..,k0..,f0..,df0_0..,residual,
/// iterations`, parameters varying slowest, floats in canonical form.
pub fn grid_csv(points: &[ReducedPoint], dim_eps: usize, dim_k: usize, dim_c: usize) -> String {
    let mut header: Vec<String> = Vec::new();
    for i in 0..dim_eps {
        header.push(format!("epsilon{i}"));
    }
    for i in 0..dim_k {
        header.push(format!("k{i}"));
    }
    for i in 0..dim_c {
        header.push(format!("f{i}"));
    }
    for i in 0..dim_c {
        for j in 0..dim_k {
            header.push(format!("df{i}_{j}"));
        }
    }
    header.push("residual".into());
    header.push("iterations".into());
    let mut out = header.join(",") + "\n";
    for p in points {
        let mut cells: Vec<String> = Vec::with_capacity(header.len());
        cells.extend(p.eps.iter().map(|&x| canonical_float(x)));
        cells.extend(p.k_coeffs.iter().map(|&x| canonical_float(x)));
        cells.extend(p.f.iter().map(|&x| canonical_float(x)));
        for i in 0..p.df.nrows() {
            for j in 0..p.df.ncols() {
                cells.push(canonical_float(p.df[(i, j)]));
            }
        }
        cells.push(canonical_float(p.residual));
        cells.push(p.iterations.to_string());
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// One zero of the reduced map, flattened for the report.
#[derive(Debug, Clone, Serialize)]
pub struct ReducedZeroRow {
    pub k: Vec<f64>,
    pub f_norm: f64,
    pub gamma: Vec<f64>,
    pub degenerate: bool,
    pub basin_count: usize,
}

impl From<&ReducedZero> for ReducedZeroRow {
    fn from(z: &ReducedZero) -> Self {
        Self {
            k: z.k_coeffs.iter().copied().collect(),
            f_norm: z.f_norm,
            gamma: z.gamma.iter().copied().collect(),
            degenerate: z.degenerate,
            basin_count: z.basin_count,
        }
    }
}

/// One zero found by the independent brute-force search.
#[derive(Debug, Clone, Serialize)]
pub struct BruteZeroRow {
    pub gamma: Vec<f64>,
    pub residual: f64,
    pub basin_count: usize,
}

impl From<&BruteZero> for BruteZeroRow {
    fn from(z: &BruteZero) -> Self {
        Self {
            gamma: z.gamma.iter().copied().collect(),
            residual: z.residual,
            basin_count: z.basin_count,
        }
    }
}

/// Report of the `zeros` command.
#[derive(Debug, Clone, Serialize)]
pub struct ZerosReport {
    pub family: String,
    pub eps: Vec<f64>,
    pub r_k: f64,
    pub positive_dimensional: bool,
    pub gauss_newton: bool,
    pub reduced: Vec<ReducedZeroRow>,
    pub brute: Vec<BruteZeroRow>,
    pub equivalence: Option<ZeroEquivalence>,
    pub pass: bool,
}

/// Report of the `profile` command.
#[derive(Debug, Clone, Serialize)]
pub struct ProfileReport {
    pub family: String,
    pub plan: PlanSummary,
    pub profile: crate::reduction::RegularityProfile,
    pub pass: bool,
}

/// One isomorphism-identity check row of the `strip-check` command.
#[derive(Debug, Clone, Serialize)]
pub struct IsoCheckRow {
    pub n_s: usize,
    pub n_t: usize,
    pub forward_inverse_error: f64,
    pub inverse_forward_error: f64,
}

/// Report of the `strip-check` command.
#[derive(Debug, Clone, Serialize)]
pub struct StripCheckReport {
    pub n_s: usize,
    pub n_t: usize,
    pub d: usize,
    pub n_domain: usize,
    pub n_target: usize,
    pub iso_checks: Vec<IsoCheckRow>,
    pub lower_bound_ratios: Vec<PerEpsValue>,
    pub kernel_dim_at_zero: usize,
    pub pass: bool,
}

/// Run metadata written next to the report; holds everything that may vary
/// between byte-identical runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub tool_version: String,
    pub command: String,
    pub family: String,
    pub seed: u64,
    pub started_unix_ms: u128,
    pub duration_ms: u128,
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn canonical_float_roundtrips() {
        for &x in &[1.5, -0.1, 3.141592653589793, 1e-300, 2.2250738585072014e-308] {
            let s = canonical_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "literal {s}");
        }
        assert_eq!(canonical_float(1.5), "1.5000000000000000e0");
        assert_eq!(canonical_float(f64::NAN), "0.0000000000000000e0");
        assert_eq!(canonical_float(f64::INFINITY), "1.0000000000000000e308");
    }

    #[test]
    fn canonical_json_is_deterministic_and_formats_floats() {
        #[derive(Serialize)]
        struct Demo {
            a: f64,
            n: u64,
            v: Vec<f64>,
        }
        let d = Demo {
            a: 0.1,
            n: 7,
            v: vec![1.0, 2.5],
        };
        let one = canonical_json(&d).unwrap();
        let two = canonical_json(&d).unwrap();
        assert_eq!(one, two);
        assert!(one.contains("1.0000000000000001e-1"), "{one}");
        assert!(one.contains("\"n\": 7"), "integers stay integers: {one}");
        assert!(one.ends_with('\n'));
    }

    #[test]
    fn grid_csv_layout() {
        let p = ReducedPoint {
            eps: vec![0.25, 0.01],
            k_coeffs: DVector::from_vec(vec![0.1]),
            f: DVector::from_vec(vec![0.0025]),
            df: DMatrix::from_row_slice(1, 1, &[0.25]),
            gamma: DVector::from_vec(vec![0.1, 0.025]),
            residual: 1e-12,
            iterations: 3,
        };
        let csv = grid_csv(&[p], 2, 1, 1);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epsilon0,epsilon1,k0,f0,df0_0,residual,iterations"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("2.5000000000000000e-1,1.0000000000000000e-2,"));
        assert!(row.ends_with(",3"));
    }
}
