//! CSV export of value grids.
//!
//! One row per lattice node with columns
//! `date_index,side,risk_factor,wealth,guarantee,value,policy` (`policy` is
//! empty when the grid carries none). Floats are written in Rust's
//! round-trip format, so re-reading loses nothing.

use super::grid::{GridSide, GridSpec, ValueGrid};
use crate::{EngineError, Result};
use std::io::Write;

/// Write one grid as CSV. `risk_factor_range` optionally restricts the
/// export to risk-factor nodes inside `[lo, hi]` — the full MMM lattice is
/// large, and the band around the observed normalized index level is
/// usually all that inspection needs.
pub fn write_grid_csv<W: Write>(
    mut out: W,
    spec: &GridSpec,
    grid: &ValueGrid,
    risk_factor_range: Option<(f64, f64)>,
) -> Result<()> {
    if let Some((lo, hi)) = risk_factor_range {
        if !(lo <= hi) {
            return Err(EngineError::invalid(format!(
                "risk-factor export range [{lo}, {hi}] is empty"
            )));
        }
    }
    let side = match grid.side {
        GridSide::Pre => "pre",
        GridSide::Post => "post",
    };
    writeln!(
        out,
        "date_index,side,risk_factor,wealth,guarantee,value,policy"
    )?;
    for (i, &rf) in spec.risk_factor_nodes.iter().enumerate() {
        if let Some((lo, hi)) = risk_factor_range {
            if rf < lo || rf > hi {
                continue;
            }
        }
        for (jw, &w) in spec.wealth_nodes.iter().enumerate() {
            for (ka, &a) in spec.guarantee_nodes.iter().enumerate() {
                let v = grid.values.get(i, jw, ka);
                match &grid.policy {
                    Some(p) => writeln!(
                        out,
                        "{},{side},{rf},{w},{a},{v},{}",
                        grid.date_index,
                        p.get(i, jw, ka)
                    )?,
                    None => {
                        writeln!(out, "{},{side},{rf},{w},{a},{v},", grid.date_index)?
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricer::grid::Tensor3;

    fn tiny() -> (GridSpec, ValueGrid) {
        let spec = GridSpec {
            risk_factor_nodes: vec![0.5, 1.0, 2.0],
            wealth_nodes: vec![0.0, 1.0],
            guarantee_nodes: vec![0.0, 1.0],
            quadrature_nodes: 16,
            withdrawal_candidates_per_state: 2,
        };
        let mut values = Tensor3::filled(spec.shape(), 0.0);
        values.set(1, 1, 1, 42.5);
        let grid = ValueGrid {
            date_index: 3,
            side: GridSide::Pre,
            values,
            policy: None,
        };
        (spec, grid)
    }

    #[test]
    fn exports_every_node_with_a_header() {
        let (spec, grid) = tiny();
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, &spec, &grid, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 3 * 2 * 2);
        assert_eq!(
            lines[0],
            "date_index,side,risk_factor,wealth,guarantee,value,policy"
        );
        assert!(lines.iter().any(|l| *l == "3,pre,1,1,1,42.5,"));
    }

    #[test]
    fn range_filter_drops_outside_nodes() {
        let (spec, grid) = tiny();
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, &spec, &grid, Some((0.9, 1.1))).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 2);
        assert!(!text.contains("\n3,pre,0.5"));
        assert!(write_grid_csv(&mut Vec::new(), &spec, &grid, Some((2.0, 1.0))).is_err());
    }

    #[test]
    fn policy_column_is_written_when_present() {
        let (spec, mut grid) = tiny();
        let mut p = Tensor3::filled(spec.shape(), 0.0f32);
        p.set(1, 1, 1, 7.25);
        grid.policy = Some(p);
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, &spec, &grid, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().any(|l| l == "3,pre,1,1,1,42.5,7.25"));
    }
}
