//! Gaze priors: turning raw gaze measurements into the training-time
//! distribution `p(g|x)` over the attention grid.
//!
//! Fixations get a discretized isotropic Gaussian centered on the measured
//! point; saccades, unknown gaze types and untracked frames carry no
//! positional signal and fall back to a uniform slice. Training without any
//! gaze uses [`uniform_prior`] everywhere.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridDist, GridShape, EPS_FLOOR};

/// Classification of one gaze measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GazeKind {
    Fixation,
    Saccade,
    Unknown,
    Untracked,
}

/// One timestamped gaze measurement in normalized image coordinates.
/// `u` runs along columns, `v` along rows; both in `[0, 1]`.
/// Position is absent exactly when the tracker lost the eye.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeRecord {
    pub frame_index: usize,
    pub kind: GazeKind,
    pub position: Option<(f64, f64)>,
}

impl GazeRecord {
    pub fn fixation(frame_index: usize, u: f64, v: f64) -> Self {
        GazeRecord {
            frame_index,
            kind: GazeKind::Fixation,
            position: Some((u, v)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.position) {
            (GazeKind::Untracked, None) => Ok(()),
            (GazeKind::Untracked, Some(_)) => Err(Error::Validation(
                "untracked gaze record must not carry a position".into(),
            )),
            (_, None) => Err(Error::Validation(
                "tracked gaze record must carry a position".into(),
            )),
            (_, Some((u, v))) => {
                if (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) {
                    Ok(())
                } else {
                    Err(Error::Validation(format!(
                        "gaze coordinates ({u}, {v}) outside [0,1]"
                    )))
                }
            }
        }
    }
}

/// Configuration of the fixation noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    /// Std of the isotropic Gaussian, in grid-cell units.
    pub sigma_cells: f64,
    /// Floor applied to prior cells before logs.
    pub eps_floor: f64,
    /// Frames aggregated per temporal slice.
    pub window_frames: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            sigma_cells: 0.5,
            eps_floor: EPS_FLOOR,
            window_frames: 8,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_cells > 0.0) {
            return Err(Error::InvalidParameter("sigma_cells must be > 0".into()));
        }
        if !(self.eps_floor > 0.0) {
            return Err(Error::InvalidParameter("eps_floor must be > 0".into()));
        }
        if self.window_frames == 0 {
            return Err(Error::InvalidParameter("window_frames must be >= 1".into()));
        }
        Ok(())
    }
}

/// Maps a normalized point to its grid cell, clamping the `u = 1` / `v = 1`
/// boundary into the last cell.
pub fn project_point_to_cell(u: f64, v: f64, shape: GridShape) -> Result<(usize, usize)> {
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return Err(Error::InvalidInput(format!(
            "point ({u}, {v}) outside the unit square"
        )));
    }
    let row = ((v * shape.m as f64).floor() as usize).min(shape.m - 1);
    let col = ((u * shape.n as f64).floor() as usize).min(shape.n - 1);
    Ok((row, col))
}

fn slice_of(frame_index: usize, window_frames: usize, t: usize) -> usize {
    (frame_index / window_frames).min(t - 1)
}

/// Grid cells hit by any fixation, per temporal slice. Non-fixation records
/// contribute nothing; duplicate hits collapse (set semantics).
pub fn aggregate_fixations(
    records: &[GazeRecord],
    window_frames: usize,
    shape: GridShape,
) -> BTreeSet<(usize, usize, usize)> {
    let mut cells = BTreeSet::new();
    for rec in records {
        if rec.kind != GazeKind::Fixation {
            continue;
        }
        let Some((u, v)) = rec.position else { continue };
        let Ok((row, col)) = project_point_to_cell(u, v, shape) else {
            continue;
        };
        cells.insert((slice_of(rec.frame_index, window_frames, shape.t), row, col));
    }
    cells
}

/// Builds `p(g|x)` from gaze records.
///
/// Per temporal slice: with at least one fixation in the slice's window,
/// evaluate an isotropic Gaussian (std `sigma_cells`, in cell units) at every
/// cell center for each fixation, average the kernels and renormalize over
/// the slice; with none, the slice is uniform. Slices carry equal mass `1/t`.
pub fn build_prior(records: &[GazeRecord], cfg: &PriorConfig, shape: GridShape) -> Result<GridDist> {
    cfg.validate()?;
    for rec in records {
        rec.validate()?;
    }

    let slice_cells = shape.m * shape.n;
    let mut mass = vec![0.0f64; shape.cells()];
    let inv_two_sigma_sq = 1.0 / (2.0 * cfg.sigma_cells * cfg.sigma_cells);

    for t in 0..shape.t {
        let fixations: Vec<(f64, f64)> = records
            .iter()
            .filter(|r| {
                r.kind == GazeKind::Fixation
                    && slice_of(r.frame_index, cfg.window_frames, shape.t) == t
            })
            .filter_map(|r| r.position)
            .collect();

        let slice = &mut mass[t * slice_cells..(t + 1) * slice_cells];
        if fixations.is_empty() {
            slice.fill(1.0 / slice_cells as f64);
            continue;
        }
        for &(u, v) in &fixations {
            // Fixation position and cell centers in cell units.
            let fx = u * shape.n as f64;
            let fy = v * shape.m as f64;
            for row in 0..shape.m {
                for col in 0..shape.n {
                    let cy = row as f64 + 0.5;
                    let cx = col as f64 + 0.5;
                    let d2 = (cy - fy).powi(2) + (cx - fx).powi(2);
                    slice[row * shape.n + col] += (-d2 * inv_two_sigma_sq).exp();
                }
            }
        }
        let total: f64 = slice.iter().sum();
        if total > 0.0 {
            for v in slice.iter_mut() {
                *v /= total;
            }
        } else {
            // All kernels underflowed (huge distance / tiny sigma).
            slice.fill(1.0 / slice_cells as f64);
        }
    }

    // Each slice sums to 1; scale to equal mass 1/t and the grid sums to 1.
    let inv_t = 1.0 / shape.t as f64;
    for v in &mut mass {
        *v *= inv_t;
    }
    GridDist::from_mass(shape, mass)
}

/// The weak no-gaze prior: uniform over the whole grid.
pub fn uniform_prior(shape: GridShape) -> GridDist {
    GridDist::uniform(shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::kl_divergence;

    fn shape_7x7() -> GridShape {
        GridShape::default()
    }

    #[test]
    fn project_center_and_corners() {
        let s = shape_7x7();
        assert_eq!(project_point_to_cell(0.5, 0.5, s).unwrap(), (3, 3));
        assert_eq!(project_point_to_cell(0.0, 0.0, s).unwrap(), (0, 0));
        assert_eq!(project_point_to_cell(1.0, 1.0, s).unwrap(), (6, 6));
    }

    #[test]
    fn project_floor_arithmetic() {
        // v = 0.857 -> floor(0.857 * 7) = 5; u = 0.143 -> floor(1.001) = 1.
        assert_eq!(project_point_to_cell(0.143, 0.857, shape_7x7()).unwrap(), (5, 1));
    }

    #[test]
    fn project_rejects_out_of_range() {
        assert!(project_point_to_cell(1.5, 0.5, shape_7x7()).is_err());
        assert!(project_point_to_cell(0.5, -0.1, shape_7x7()).is_err());
    }

    #[test]
    fn aggregate_ignores_saccades() {
        let records = vec![
            GazeRecord {
                frame_index: 0,
                kind: GazeKind::Saccade,
                position: Some((0.5, 0.5)),
            },
            GazeRecord {
                frame_index: 1,
                kind: GazeKind::Untracked,
                position: None,
            },
        ];
        assert!(aggregate_fixations(&records, 8, shape_7x7()).is_empty());
    }

    #[test]
    fn aggregate_single_fixation() {
        let records = vec![GazeRecord::fixation(0, 0.5, 0.5)];
        let cells = aggregate_fixations(&records, 8, shape_7x7());
        assert_eq!(cells.into_iter().collect::<Vec<_>>(), vec![(0, 3, 3)]);
    }

    #[test]
    fn aggregate_deduplicates_same_cell() {
        let records = vec![
            GazeRecord::fixation(0, 0.5, 0.5),
            GazeRecord::fixation(3, 0.51, 0.49),
        ];
        assert_eq!(aggregate_fixations(&records, 8, shape_7x7()).len(), 1);
    }

    #[test]
    fn no_fixations_gives_uniform() {
        let prior = build_prior(&[], &PriorConfig::default(), shape_7x7()).unwrap();
        for &p in &prior.probs {
            assert!((p - 1.0 / 49.0).abs() < 1e-12);
        }
    }

    #[test]
    fn center_fixation_is_symmetric_and_peaked() {
        let records = vec![GazeRecord::fixation(0, 0.5, 0.5)];
        let prior = build_prior(&records, &PriorConfig::default(), shape_7x7()).unwrap();
        assert!(prior.is_valid());
        let s = shape_7x7();
        assert_eq!(s.coords(prior.argmax()), (0, 3, 3));
        for row in 0..7 {
            for col in 0..7 {
                let p = prior.probs[s.index(0, row, col)];
                let ph = prior.probs[s.index(0, row, 6 - col)];
                let pv = prior.probs[s.index(0, 6 - row, col)];
                assert!((p - ph).abs() < 1e-12);
                assert!((p - pv).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_fixation_matches_brute_force_kernel() {
        // Independent oracle: evaluate exp(-d^2 / (2 sigma^2)) at all 49
        // cell centers directly and normalize.
        let s = shape_7x7();
        let (u, v) = (0.5, 0.5); // center of cell (3, 3)
        let sigma: f64 = 0.5;
        let records = vec![GazeRecord::fixation(0, u, v)];
        let prior = build_prior(&records, &PriorConfig::default(), s).unwrap();

        let mut expected = vec![0.0f64; 49];
        for row in 0..7 {
            for col in 0..7 {
                let dy = (row as f64 + 0.5) - v * 7.0;
                let dx = (col as f64 + 0.5) - u * 7.0;
                expected[row * 7 + col] = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            }
        }
        let total: f64 = expected.iter().sum();
        for (got, want) in prior.probs.iter().zip(expected.iter().map(|e| e / total)) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_prior_values() {
        let p1 = uniform_prior(shape_7x7());
        assert!((p1.probs[0] - 1.0 / 49.0).abs() < 1e-15);
        let p3 = uniform_prior(GridShape::new(3, 7, 7).unwrap());
        assert!((p3.probs[0] - 1.0 / 147.0).abs() < 1e-15);
        assert!(kl_divergence(&p1, &p1).unwrap() < 1e-15);
    }

    #[test]
    fn interior_translation_equivariance() {
        // Shift the fixation by one cell; interior values shift too.
        let s = shape_7x7();
        let cfg = PriorConfig::default();
        let at = |col: usize| -> GridDist {
            let u = (col as f64 + 0.5) / 7.0;
            build_prior(&[GazeRecord::fixation(0, u, 0.5)], &cfg, s).unwrap()
        };
        let a = at(2);
        let b = at(3);
        for row in 1..6 {
            for col in 1..5 {
                let va = a.probs[s.index(0, row, col)];
                let vb = b.probs[s.index(0, row, col + 1)];
                // Renormalization over the finite grid shifts values by the
                // (tiny) mass crossing the boundary; tolerance reflects that.
                assert!((va - vb).abs() < 1e-6, "row {row} col {col}: {va} vs {vb}");
            }
        }
    }

    #[test]
    fn mass_decreases_with_distance_from_fixation() {
        let s = shape_7x7();
        let records = vec![GazeRecord::fixation(0, 0.5, 0.5)];
        let prior = build_prior(&records, &PriorConfig::default(), s).unwrap();
        let dist2 = |row: usize, col: usize| -> f64 {
            let dy = (row as f64 + 0.5) - 3.5;
            let dx = (col as f64 + 0.5) - 3.5;
            dy * dy + dx * dx
        };
        let peak = prior.probs[s.index(0, 3, 3)];
        for row in 0..7 {
            for col in 0..7 {
                if (row, col) != (3, 3) && dist2(row, col) > 0.0 {
                    assert!(peak > prior.probs[s.index(0, row, col)]);
                }
            }
        }
    }

    #[test]
    fn huge_sigma_converges_to_uniform() {
        let cfg = PriorConfig {
            sigma_cells: 1e3,
            ..PriorConfig::default()
        };
        let records = vec![GazeRecord::fixation(0, 0.3, 0.7)];
        let prior = build_prior(&records, &cfg, shape_7x7()).unwrap();
        for &p in &prior.probs {
            assert!((p - 1.0 / 49.0).abs() < 1e-4);
        }
    }

    #[test]
    fn mixed_fixation_and_saccade_uses_gaussian() {
        let records = vec![
            GazeRecord::fixation(0, 0.5, 0.5),
            GazeRecord {
                frame_index: 1,
                kind: GazeKind::Saccade,
                position: Some((0.1, 0.1)),
            },
        ];
        let prior = build_prior(&records, &PriorConfig::default(), shape_7x7()).unwrap();
        let only_fix =
            build_prior(&[GazeRecord::fixation(0, 0.5, 0.5)], &PriorConfig::default(), shape_7x7())
                .unwrap();
        assert_eq!(prior.probs, only_fix.probs);
    }

    #[test]
    fn temporal_slices_get_equal_mass() {
        let s = GridShape::new(2, 7, 7).unwrap();
        // Fixation only in the first slice's window.
        let records = vec![GazeRecord::fixation(0, 0.5, 0.5)];
        let prior = build_prior(&records, &PriorConfig::default(), s).unwrap();
        let first: f64 = prior.probs[..49].iter().sum();
        let second: f64 = prior.probs[49..].iter().sum();
        assert!((first - 0.5).abs() < 1e-12);
        assert!((second - 0.5).abs() < 1e-12);
        // Second slice is uniform.
        for &p in &prior.probs[49..] {
            assert!((p - 0.5 / 49.0).abs() < 1e-12);
        }
    }
}
