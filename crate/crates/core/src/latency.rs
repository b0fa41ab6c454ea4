//! Perception latency model.
//!
//! Obstacle density is summarized by a three-level count-map hierarchy
//! (fine grid, mid grid, whole ROI) flattened into one vector. Baseline
//! latency of a module is a linear model over the features
//! `[x^2, x*log(x), x, log(x), 1]` of that vector, fitted by ridge
//! regression; running on a non-baseline resource scales the baseline
//! latency by a measured conversion ratio.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solve;
use crate::stats;

/// Region-of-interest geometry and the two grid granularities.
///
/// The mid cell is 8 m across the ROI width and 10 m along its depth, which
/// tiles the default 64 m x 50 m ROI into 8 columns by 5 rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiSpec {
    pub roi_width: f64,
    pub roi_depth: f64,
    /// Fine cell (width, depth) in meters.
    pub fine_cell: (f64, f64),
    /// Mid cell (width, depth) in meters.
    pub mid_cell: (f64, f64),
}

impl Default for RoiSpec {
    fn default() -> Self {
        RoiSpec {
            roi_width: 64.0,
            roi_depth: 50.0,
            fine_cell: (2.0, 2.0),
            mid_cell: (8.0, 10.0),
        }
    }
}

fn exact_div(total: f64, cell: f64) -> Option<usize> {
    if cell <= 0.0 || total <= 0.0 {
        return None;
    }
    let n = total / cell;
    let rounded = n.round();
    if (n - rounded).abs() < 1e-9 && rounded >= 1.0 {
        Some(rounded as usize)
    } else {
        None
    }
}

impl RoiSpec {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.roi_width, self.fine_cell.0, "fine cell width"),
            (self.roi_depth, self.fine_cell.1, "fine cell depth"),
            (self.roi_width, self.mid_cell.0, "mid cell width"),
            (self.roi_depth, self.mid_cell.1, "mid cell depth"),
            (self.mid_cell.0, self.fine_cell.0, "fine width within mid"),
            (self.mid_cell.1, self.fine_cell.1, "fine depth within mid"),
        ];
        for (total, cell, what) in checks {
            if exact_div(total, cell).is_none() {
                return Err(Error::InvalidRoi(format!(
                    "{what}: {cell} must evenly tile {total}"
                )));
            }
        }
        Ok(())
    }

    /// (columns, rows) of the fine grid.
    pub fn fine_dims(&self) -> (usize, usize) {
        (
            exact_div(self.roi_width, self.fine_cell.0).unwrap_or(0),
            exact_div(self.roi_depth, self.fine_cell.1).unwrap_or(0),
        )
    }

    /// (columns, rows) of the mid grid.
    pub fn mid_dims(&self) -> (usize, usize) {
        (
            exact_div(self.roi_width, self.mid_cell.0).unwrap_or(0),
            exact_div(self.roi_depth, self.mid_cell.1).unwrap_or(0),
        )
    }

    pub fn fine_len(&self) -> usize {
        let (c, r) = self.fine_dims();
        c * r
    }

    pub fn mid_len(&self) -> usize {
        let (c, r) = self.mid_dims();
        c * r
    }

    /// Total density vector length: fine + mid + whole-ROI.
    pub fn vector_len(&self) -> usize {
        self.fine_len() + self.mid_len() + 1
    }

    /// Row-major fine-grid index of a position, if inside the ROI.
    pub fn fine_index(&self, x: f64, y: f64) -> Option<usize> {
        self.grid_index(x, y, self.fine_cell, self.fine_dims())
    }

    /// Row-major mid-grid index of a position, if inside the ROI.
    pub fn mid_index(&self, x: f64, y: f64) -> Option<usize> {
        self.grid_index(x, y, self.mid_cell, self.mid_dims())
    }

    fn grid_index(
        &self,
        x: f64,
        y: f64,
        cell: (f64, f64),
        dims: (usize, usize),
    ) -> Option<usize> {
        if x < 0.0 || y < 0.0 || x >= self.roi_width || y >= self.roi_depth {
            return None;
        }
        let col = ((x / cell.0) as usize).min(dims.0 - 1);
        let row = ((y / cell.1) as usize).min(dims.1 - 1);
        Some(row * dims.0 + col)
    }

    /// Center of a fine cell by row-major index.
    pub fn fine_center(&self, index: usize) -> (f64, f64) {
        let (cols, _) = self.fine_dims();
        let row = index / cols;
        let col = index % cols;
        (
            (col as f64 + 0.5) * self.fine_cell.0,
            (row as f64 + 0.5) * self.fine_cell.1,
        )
    }

    /// Distance from the AV (bottom center of the ROI) to a fine cell center.
    pub fn fine_distance_from_av(&self, index: usize) -> f64 {
        let (cx, cy) = self.fine_center(index);
        let ax = self.roi_width / 2.0;
        ((cx - ax) * (cx - ax) + cy * cy).sqrt()
    }
}

/// Flattened obstacle count-map hierarchy: fine row-major, mid row-major,
/// then the whole-ROI total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensityVector {
    pub counts: Vec<u32>,
}

impl DensityVector {
    pub fn zeros(roi: &RoiSpec) -> DensityVector {
        DensityVector {
            counts: vec![0; roi.vector_len()],
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u32 {
        *self.counts.last().unwrap_or(&0)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|c| *c as f64).collect()
    }

    /// The fine-grid block of the vector.
    pub fn fine_block<'a>(&'a self, roi: &RoiSpec) -> &'a [u32] {
        &self.counts[..roi.fine_len()]
    }

    /// The mid-grid block of the vector.
    pub fn mid_block<'a>(&'a self, roi: &RoiSpec) -> &'a [u32] {
        &self.counts[roi.fine_len()..roi.fine_len() + roi.mid_len()]
    }
}

/// Count obstacles at the given positions into the hierarchy. Positions
/// outside the ROI are dropped.
pub fn build_density_vector(positions: &[(f64, f64)], roi: &RoiSpec) -> Result<DensityVector> {
    roi.validate()?;
    let fine_len = roi.fine_len();
    let mid_len = roi.mid_len();
    let mut counts = vec![0u32; fine_len + mid_len + 1];
    for &(x, y) in positions {
        let (Some(f), Some(m)) = (roi.fine_index(x, y), roi.mid_index(x, y)) else {
            continue;
        };
        counts[f] += 1;
        counts[fine_len + m] += 1;
        counts[fine_len + mid_len] += 1;
    }
    Ok(DensityVector { counts })
}

/// Build the hierarchy from per-fine-cell counts, aggregating mid cells by
/// summing the fine cells they cover.
pub fn density_from_fine_counts(fine: &[u32], roi: &RoiSpec) -> Result<DensityVector> {
    roi.validate()?;
    let (fine_cols, fine_rows) = roi.fine_dims();
    if fine.len() != fine_cols * fine_rows {
        return Err(Error::DimensionMismatch {
            expected: fine_cols * fine_rows,
            got: fine.len(),
        });
    }
    let (mid_cols, _) = roi.mid_dims();
    let per_col = (roi.mid_cell.0 / roi.fine_cell.0).round() as usize;
    let per_row = (roi.mid_cell.1 / roi.fine_cell.1).round() as usize;
    let mut counts = Vec::with_capacity(roi.vector_len());
    counts.extend_from_slice(fine);
    let mut total = 0u32;
    for &c in fine {
        total += c;
    }
    for mid_row in 0..roi.mid_dims().1 {
        for mid_col in 0..mid_cols {
            let mut acc = 0u32;
            for dr in 0..per_row {
                for dc in 0..per_col {
                    let row = mid_row * per_row + dr;
                    let col = mid_col * per_col + dc;
                    acc += fine[row * fine_cols + col];
                }
            }
            counts.push(acc);
        }
    }
    counts.push(total);
    Ok(DensityVector { counts })
}

/// The safe log used everywhere a count enters a logarithm: `ln(1 + x)`.
/// Tagged in model files so fits and predictions cannot disagree.
pub const LOG_CONVENTION: &str = "ln1p";

#[inline]
pub fn safe_log(x: f64) -> f64 {
    x.ln_1p()
}

/// Feature layout for one density vector of dimension `d`:
/// `[x^2 (d), x*log(x) (d), x (d), log(x) (d), 1]`.
pub fn feature_len(density_len: usize) -> usize {
    4 * density_len + 1
}

/// Expand a density vector into the regression features.
pub fn feature_transform(x: &DensityVector) -> Vec<f64> {
    let d = x.len();
    let mut out = Vec::with_capacity(feature_len(d));
    let xs = x.to_f64();
    out.extend(xs.iter().map(|v| v * v));
    out.extend(xs.iter().map(|v| v * safe_log(*v)));
    out.extend(xs.iter().cloned());
    out.extend(xs.iter().map(|v| safe_log(*v)));
    out.push(1.0);
    out
}

/// Coefficients of the baseline latency model for one module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyCoefficients {
    /// Quadratic-term weights.
    pub a_vec: Vec<f64>,
    /// x*log(x)-term weights.
    pub b_vec: Vec<f64>,
    /// Linear-term weights.
    pub c_vec: Vec<f64>,
    /// log-term weights.
    pub d_vec: Vec<f64>,
    /// Intercept in seconds.
    pub e: f64,
}

impl LatencyCoefficients {
    pub fn zeros(density_len: usize) -> LatencyCoefficients {
        LatencyCoefficients {
            a_vec: vec![0.0; density_len],
            b_vec: vec![0.0; density_len],
            c_vec: vec![0.0; density_len],
            d_vec: vec![0.0; density_len],
            e: 0.0,
        }
    }

    pub fn density_len(&self) -> usize {
        self.a_vec.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.a_vec.len();
        for (v, name) in [
            (&self.b_vec, "b_vec"),
            (&self.c_vec, "c_vec"),
            (&self.d_vec, "d_vec"),
        ] {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
            let _ = name;
        }
        let finite = self
            .a_vec
            .iter()
            .chain(&self.b_vec)
            .chain(&self.c_vec)
            .chain(&self.d_vec)
            .all(|v| v.is_finite())
            && self.e.is_finite();
        if !finite {
            return Err(Error::NonFinite("latency coefficients"));
        }
        Ok(())
    }

    /// Pack into the feature ordering used by the fit.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(feature_len(self.density_len()));
        flat.extend(&self.a_vec);
        flat.extend(&self.b_vec);
        flat.extend(&self.c_vec);
        flat.extend(&self.d_vec);
        flat.push(self.e);
        flat
    }

    pub fn from_flat(flat: &[f64]) -> Result<LatencyCoefficients> {
        if flat.len() < 5 || (flat.len() - 1) % 4 != 0 {
            return Err(Error::DimensionMismatch {
                expected: 5,
                got: flat.len(),
            });
        }
        let d = (flat.len() - 1) / 4;
        Ok(LatencyCoefficients {
            a_vec: flat[..d].to_vec(),
            b_vec: flat[d..2 * d].to_vec(),
            c_vec: flat[2 * d..3 * d].to_vec(),
            d_vec: flat[3 * d..4 * d].to_vec(),
            e: flat[4 * d],
        })
    }
}

/// Ratio of running a module on a given resource relative to the baseline.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConversionTable {
    /// module -> resource index -> ratio.
    pub ratio: BTreeMap<String, BTreeMap<u32, f64>>,
}

impl ConversionTable {
    pub fn validate(&self) -> Result<()> {
        for (module, per_resource) in &self.ratio {
            for (resource, nu) in per_resource {
                if !(*nu > 0.0) || !nu.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "conversion ratio for '{module}' on resource {resource} must be positive"
                    )));
                }
            }
            if let Some(base) = per_resource.get(&0) {
                if *base != 1.0 {
                    return Err(Error::InvalidConfig(format!(
                        "baseline ratio for '{module}' must be 1, got {base}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn lookup(&self, module: &str, resource: u32) -> Result<f64> {
        self.ratio
            .get(module)
            .and_then(|m| m.get(&resource))
            .copied()
            .ok_or_else(|| Error::MissingConversion {
                module: module.to_string(),
                resource,
            })
    }
}

/// Per-module resource assignment (0 = baseline/CPU).
pub type ResourceIndexVector = BTreeMap<String, u32>;

/// Fit baseline-latency coefficients for several modules that share the
/// same density samples. The Gram matrix is built once.
pub fn fit_baseline_multi(
    densities: &[DensityVector],
    targets: &BTreeMap<String, Vec<f64>>,
    ridge: f64,
) -> Result<BTreeMap<String, LatencyCoefficients>> {
    if densities.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let d = densities[0].len();
    for x in densities {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
    }
    let n = densities.len();
    let p = feature_len(d);
    let mut x = Array2::<f64>::zeros((n, p));
    for (i, density) in densities.iter().enumerate() {
        let row = feature_transform(density);
        x.row_mut(i).assign(&Array1::from(row));
    }
    let mut names = Vec::new();
    let mut ys = Array2::<f64>::zeros((n, targets.len()));
    for (j, (name, series)) in targets.iter().enumerate() {
        if series.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: series.len(),
            });
        }
        ys.column_mut(j).assign(&Array1::from(series.clone()));
        names.push(name.clone());
    }
    let coefs = solve::ridge_fit_multi(&x, &ys, ridge, Some(p - 1))?;
    let mut out = BTreeMap::new();
    for (j, name) in names.into_iter().enumerate() {
        let flat: Vec<f64> = coefs.column(j).to_vec();
        out.insert(name, LatencyCoefficients::from_flat(&flat)?);
    }
    Ok(out)
}

/// Fit one module's baseline-latency coefficients.
pub fn fit_baseline(
    samples: &[(DensityVector, f64)],
    ridge: f64,
) -> Result<LatencyCoefficients> {
    let densities: Vec<DensityVector> = samples.iter().map(|(x, _)| x.clone()).collect();
    let mut targets = BTreeMap::new();
    targets.insert(
        "module".to_string(),
        samples.iter().map(|(_, y)| *y).collect::<Vec<f64>>(),
    );
    let mut fitted = fit_baseline_multi(&densities, &targets, ridge)?;
    Ok(fitted.remove("module").expect("single fitted module"))
}

/// Baseline latency prediction; negative values clamp to zero.
pub fn predict_baseline(c: &LatencyCoefficients, x: &DensityVector) -> Result<f64> {
    if c.density_len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: c.density_len(),
            got: x.len(),
        });
    }
    let mut tau = c.e;
    for (i, &count) in x.counts.iter().enumerate() {
        let v = count as f64;
        let l = safe_log(v);
        tau += c.a_vec[i] * v * v + c.b_vec[i] * v * l + c.c_vec[i] * v + c.d_vec[i] * l;
    }
    if tau < 0.0 {
        log::debug!("clamping negative latency prediction {tau} to 0");
        return Ok(0.0);
    }
    Ok(tau)
}

/// Convert a baseline latency to the latency on the allocated resource.
pub fn apply_conversion(
    tau: f64,
    module: &str,
    resource: u32,
    table: &ConversionTable,
) -> Result<f64> {
    Ok(tau * table.lookup(module, resource)?)
}

/// Pearson correlation of each density coordinate against latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PearsonHeatmap {
    /// One r per density coordinate (zero-variance coordinates hold 0).
    pub values: Vec<f64>,
    /// Marks coordinates whose counts never varied across the samples.
    pub zero_variance: Vec<bool>,
}

impl PearsonHeatmap {
    pub fn fine_values<'a>(&'a self, roi: &RoiSpec) -> &'a [f64] {
        &self.values[..roi.fine_len()]
    }

    pub fn mid_values<'a>(&'a self, roi: &RoiSpec) -> &'a [f64] {
        &self.values[roi.fine_len()..roi.fine_len() + roi.mid_len()]
    }
}

/// Correlate obstacle counts per coordinate with observed latency.
pub fn pearson_heatmap(samples: &[(DensityVector, f64)]) -> Result<PearsonHeatmap> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples(samples.len()));
    }
    let d = samples[0].0.len();
    for (x, _) in samples {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
    }
    let lat: Vec<f64> = samples.iter().map(|(_, y)| *y).collect();
    let mut values = vec![0.0; d];
    let mut zero_variance = vec![false; d];
    let mut coord = vec![0.0; samples.len()];
    for i in 0..d {
        for (s, (x, _)) in samples.iter().enumerate() {
            coord[s] = x.counts[i] as f64;
        }
        match stats::pearson(&coord, &lat) {
            Some(r) => values[i] = r,
            None => zero_variance[i] = true,
        }
    }
    Ok(PearsonHeatmap {
        values,
        zero_variance,
    })
}

/// Mean squared prediction error over the samples.
pub fn model_mse(c: &LatencyCoefficients, samples: &[(DensityVector, f64)]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for (x, y) in samples {
        let r = predict_baseline(c, x)? - y;
        acc += r * r;
    }
    Ok(acc / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand::Rng as _;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_roi_vector_length_is_841() {
        let roi = RoiSpec::default();
        roi.validate().unwrap();
        assert_eq!(roi.fine_dims(), (32, 25));
        assert_eq!(roi.mid_dims(), (8, 5));
        assert_eq!(roi.vector_len(), 841);
    }

    #[test]
    fn misaligned_roi_is_rejected() {
        let roi = RoiSpec {
            roi_width: 64.0,
            roi_depth: 50.0,
            fine_cell: (3.0, 2.0),
            mid_cell: (8.0, 10.0),
        };
        assert!(matches!(roi.validate(), Err(Error::InvalidRoi(_))));
    }

    #[test]
    fn empty_scene_is_all_zero() {
        let roi = RoiSpec::default();
        let v = build_density_vector(&[], &roi).unwrap();
        assert!(v.counts.iter().all(|c| *c == 0));
        assert_eq!(v.len(), 841);
    }

    #[test]
    fn single_obstacle_hits_one_cell_per_level() {
        let roi = RoiSpec::default();
        let v = build_density_vector(&[(33.0, 12.0)], &roi).unwrap();
        let fine_ones = v.fine_block(&roi).iter().filter(|c| **c == 1).count();
        let mid_ones = v.mid_block(&roi).iter().filter(|c| **c == 1).count();
        assert_eq!(fine_ones, 1);
        assert_eq!(mid_ones, 1);
        assert_eq!(v.total(), 1);
        // row-major placement: x=33 -> fine col 16, y=12 -> fine row 6
        assert_eq!(v.counts[6 * 32 + 16], 1);
        // mid: col 4, row 1
        assert_eq!(v.counts[800 + 8 + 4], 1);
    }

    #[test]
    fn out_of_roi_positions_are_dropped() {
        let roi = RoiSpec::default();
        let v = build_density_vector(&[(-1.0, 5.0), (10.0, 51.0), (64.0, 5.0)], &roi).unwrap();
        assert_eq!(v.total(), 0);
    }

    #[test]
    fn fine_counts_aggregate_to_mid_and_total() {
        let roi = RoiSpec::default();
        let mut fine = vec![0u32; roi.fine_len()];
        fine[0] = 2;
        fine[3] = 1; // same mid cell (cols 0..4 of row 0)
        fine[4] = 5; // next mid cell
        let v = density_from_fine_counts(&fine, &roi).unwrap();
        assert_eq!(v.mid_block(&roi)[0], 3);
        assert_eq!(v.mid_block(&roi)[1], 5);
        assert_eq!(v.total(), 8);
    }

    #[test]
    fn feature_transform_of_zero_vector() {
        let roi = RoiSpec::default();
        let v = DensityVector::zeros(&roi);
        let f = feature_transform(&v);
        assert_eq!(f.len(), 3365);
        let nonzero = f.iter().filter(|x| **x != 0.0).count();
        assert_eq!(nonzero, 1);
        assert_eq!(f[f.len() - 1], 1.0);
    }

    #[test]
    fn feature_transform_of_unit_count() {
        let roi = RoiSpec {
            roi_width: 4.0,
            roi_depth: 4.0,
            fine_cell: (2.0, 2.0),
            mid_cell: (4.0, 4.0),
        };
        let v = build_density_vector(&[(1.0, 1.0)], &roi).unwrap();
        let f = feature_transform(&v);
        let d = v.len();
        assert_abs_diff_eq!(f[0], 1.0); // x^2 for first fine cell
        assert_relative_eq!(f[d], 2f64.ln(), max_relative = 1e-12); // x*ln(1+x)
        assert_abs_diff_eq!(f[2 * d], 1.0); // x
        assert_relative_eq!(f[3 * d], 2f64.ln(), max_relative = 1e-12); // ln(1+x)
    }

    fn small_roi() -> RoiSpec {
        RoiSpec {
            roi_width: 8.0,
            roi_depth: 12.0,
            fine_cell: (2.0, 2.0),
            mid_cell: (4.0, 6.0),
        }
    }

    fn random_density(roi: &RoiSpec, rng: &mut ChaCha8Rng, max_count: u32) -> DensityVector {
        let fine: Vec<u32> = (0..roi.fine_len())
            .map(|_| rng.gen_range(0..=max_count))
            .collect();
        density_from_fine_counts(&fine, roi).unwrap()
    }

    #[test]
    fn generate_then_fit_recovers_predictions() {
        let roi = small_roi();
        let d = roi.vector_len();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut truth = LatencyCoefficients::zeros(d);
        for i in 0..d {
            truth.a_vec[i] = rng.gen_range(0.0..1e-4);
            truth.b_vec[i] = rng.gen_range(0.0..1e-3);
            truth.c_vec[i] = rng.gen_range(0.0..1e-2);
            truth.d_vec[i] = rng.gen_range(0.0..1e-2);
        }
        truth.e = 0.05;
        let samples: Vec<(DensityVector, f64)> = (0..400)
            .map(|_| {
                let x = random_density(&roi, &mut rng, 6);
                let y = predict_baseline(&truth, &x).unwrap();
                (x, y)
            })
            .collect();
        let fitted = fit_baseline(&samples, 0.0).unwrap();
        assert!(model_mse(&fitted, &samples).unwrap() <= 1e-8);
    }

    #[test]
    fn identical_samples_with_ridge_put_mass_on_intercept() {
        let roi = small_roi();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x0 = random_density(&roi, &mut rng, 3);
        let samples: Vec<(DensityVector, f64)> = (0..10).map(|_| (x0.clone(), 0.125)).collect();
        let fitted = fit_baseline(&samples, 1e-4).unwrap();
        assert_abs_diff_eq!(fitted.e, 0.125, epsilon = 1e-3);
        let weight: f64 = fitted
            .a_vec
            .iter()
            .chain(&fitted.b_vec)
            .chain(&fitted.c_vec)
            .chain(&fitted.d_vec)
            .map(|v| v.abs())
            .sum();
        assert!(weight < 1e-2, "feature weights {weight} should be shrunk");
        assert_abs_diff_eq!(
            predict_baseline(&fitted, &x0).unwrap(),
            0.125,
            epsilon = 1e-6
        );
    }

    #[test]
    fn constant_model_predicts_intercept() {
        let roi = small_roi();
        let mut c = LatencyCoefficients::zeros(roi.vector_len());
        c.e = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_density(&roi, &mut rng, 5);
        assert_abs_diff_eq!(predict_baseline(&c, &x).unwrap(), 0.05);
    }

    #[test]
    fn linear_term_isolation() {
        let roi = small_roi();
        let mut c = LatencyCoefficients::zeros(roi.vector_len());
        c.e = 0.01;
        c.c_vec[2] = 1.0;
        let mut fine = vec![0u32; roi.fine_len()];
        fine[2] = 3;
        let x = density_from_fine_counts(&fine, &roi).unwrap();
        assert_abs_diff_eq!(predict_baseline(&c, &x).unwrap(), 3.01, epsilon = 1e-12);
    }

    #[test]
    fn negative_prediction_clamps_to_zero() {
        let roi = small_roi();
        let mut c = LatencyCoefficients::zeros(roi.vector_len());
        c.e = -1.0;
        let x = DensityVector::zeros(&roi);
        assert_eq!(predict_baseline(&c, &x).unwrap(), 0.0);
    }

    #[test]
    fn prediction_matches_naive_summation() {
        let roi = small_roi();
        let d = roi.vector_len();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut c = LatencyCoefficients::zeros(d);
        for i in 0..d {
            c.a_vec[i] = rng.gen_range(-0.5..0.5);
            c.b_vec[i] = rng.gen_range(-0.5..0.5);
            c.c_vec[i] = rng.gen_range(-0.5..0.5);
            c.d_vec[i] = rng.gen_range(-0.5..0.5);
        }
        c.e = rng.gen_range(0.0..1.0);
        let x = random_density(&roi, &mut rng, 9);
        // term-by-term oracle over the flattened feature vector
        let flat = c.to_flat();
        let feats = feature_transform(&x);
        let oracle: f64 = flat.iter().zip(&feats).map(|(a, b)| a * b).sum();
        let got = predict_baseline(&c, &x).unwrap();
        assert_abs_diff_eq!(got, oracle.max(0.0), epsilon = 1e-12);
    }

    #[test]
    fn conversion_identity_and_scaling() {
        let mut table = ConversionTable::default();
        table
            .ratio
            .entry("seg".into())
            .or_default()
            .extend([(0u32, 1.0), (1u32, 0.2)]);
        table
            .ratio
            .entry("merge".into())
            .or_default()
            .extend([(0u32, 1.0), (1u32, 0.5)]);
        table.validate().unwrap();
        assert_abs_diff_eq!(apply_conversion(0.05, "seg", 0, &table).unwrap(), 0.05);
        assert_abs_diff_eq!(apply_conversion(0.05, "seg", 1, &table).unwrap(), 0.01);
        assert_abs_diff_eq!(apply_conversion(0.05, "merge", 1, &table).unwrap(), 0.025);
        assert!(matches!(
            apply_conversion(0.05, "ghost", 1, &table),
            Err(Error::MissingConversion { .. })
        ));
    }

    #[test]
    fn conversion_rejects_nonunit_baseline() {
        let mut table = ConversionTable::default();
        table
            .ratio
            .entry("seg".into())
            .or_default()
            .insert(0, 0.9);
        assert!(table.validate().is_err());
    }

    #[test]
    fn pearson_detects_perfect_and_flat_coordinates() {
        let roi = small_roi();
        let mut samples = Vec::new();
        for k in 0..20u32 {
            let mut fine = vec![1u32; roi.fine_len()]; // constant everywhere
            fine[3] = k; // the only varying cell
            let x = density_from_fine_counts(&fine, &roi).unwrap();
            samples.push((x, 0.01 + 0.002 * k as f64));
        }
        let hm = pearson_heatmap(&samples).unwrap();
        assert_abs_diff_eq!(hm.values[3], 1.0, epsilon = 1e-9);
        assert!(hm.zero_variance[0]);
        assert_eq!(hm.values[0], 0.0);
        assert!(!hm.zero_variance[3]);
    }

    #[test]
    fn pearson_requires_two_samples() {
        let roi = small_roi();
        let x = DensityVector::zeros(&roi);
        assert!(matches!(
            pearson_heatmap(&[(x, 0.1)]),
            Err(Error::TooFewSamples(1))
        ));
    }

    #[test]
    fn fit_never_beats_constant_model_backwards() {
        // Training MSE of the full fit never exceeds the constant-only model.
        let roi = small_roi();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let samples: Vec<(DensityVector, f64)> = (0..100)
            .map(|_| {
                let x = random_density(&roi, &mut rng, 5);
                let y = 0.02 + 0.001 * x.total() as f64 + rng.gen_range(-0.005..0.005);
                (x, y)
            })
            .collect();
        let fitted = fit_baseline(&samples, 0.0).unwrap();
        let ys: Vec<f64> = samples.iter().map(|(_, y)| *y).collect();
        let mean = crate::stats::mean(&ys);
        let const_mse: f64 =
            ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / ys.len() as f64;
        assert!(model_mse(&fitted, &samples).unwrap() <= const_mse + 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn adding_an_obstacle_never_decreases_counts(
            seed in 0u64..500,
            extra_x in 0.0..8.0f64,
            extra_y in 0.0..12.0f64,
        ) {
            let roi = small_roi();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(0..30);
            let mut positions: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.gen_range(0.0..8.0), rng.gen_range(0.0..12.0)))
                .collect();
            let before = build_density_vector(&positions, &roi).unwrap();
            positions.push((extra_x, extra_y));
            let after = build_density_vector(&positions, &roi).unwrap();
            for (b, a) in before.counts.iter().zip(after.counts.iter()) {
                prop_assert!(a >= b);
            }
            prop_assert_eq!(after.total(), before.total() + 1);
        }

        #[test]
        fn prediction_is_permutation_equivariant(seed in 0u64..500) {
            let roi = small_roi();
            let d = roi.vector_len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c = LatencyCoefficients::zeros(d);
            for i in 0..d {
                c.a_vec[i] = rng.gen_range(-0.1..0.1);
                c.b_vec[i] = rng.gen_range(-0.1..0.1);
                c.c_vec[i] = rng.gen_range(-0.1..0.1);
                c.d_vec[i] = rng.gen_range(-0.1..0.1);
            }
            c.e = 1.0; // keep predictions clear of the clamp
            let x = random_density(&roi, &mut rng, 4);
            let mut perm: Vec<usize> = (0..d).collect();
            perm.shuffle(&mut rng);
            let xp = DensityVector { counts: perm.iter().map(|&i| x.counts[i]).collect() };
            let cp = LatencyCoefficients {
                a_vec: perm.iter().map(|&i| c.a_vec[i]).collect(),
                b_vec: perm.iter().map(|&i| c.b_vec[i]).collect(),
                c_vec: perm.iter().map(|&i| c.c_vec[i]).collect(),
                d_vec: perm.iter().map(|&i| c.d_vec[i]).collect(),
                e: c.e,
            };
            let t0 = predict_baseline(&c, &x).unwrap();
            let t1 = predict_baseline(&cp, &xp).unwrap();
            prop_assert!((t0 - t1).abs() < 1e-9);
        }
    }
}
