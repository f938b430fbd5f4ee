//! Local activation times and the characterizing-quantity vector.

use alloc::vec::Vec;

use crate::error::FeatureError;
use crate::observe::ELECTRODE_COUNT;

/// Upward crossing level of the transmembrane potential.
pub const VM_THRESHOLD: f64 = 0.3;

/// Samples that must be positive up to and including a crossing, and
/// negative after it.
const GUARD_BEFORE: usize = 3;
const GUARD_AFTER: usize = 3;

/// Length of [`FeatureVector::to_array`].
pub const FEATURE_LEN: usize = ELECTRODE_COUNT + 1;

/// Activation times at one electrode in the first and second observed
/// reentry [ms].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatPair {
    pub lat1: f64,
    pub lat2: f64,
}

/// `[period, relLAT_1..relLAT_20]` [ms].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub period: f64,
    pub rellat: [f64; ELECTRODE_COUNT],
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_LEN] {
        let mut out = [0.0; FEATURE_LEN];
        out[0] = self.period;
        out[1..].copy_from_slice(&self.rellat);
        out
    }

    pub fn from_array(values: &[f64; FEATURE_LEN]) -> Self {
        let mut rellat = [0.0; ELECTRODE_COUNT];
        rellat.copy_from_slice(&values[1..]);
        Self { period: values[0], rellat }
    }
}

/// All zero crossings with negative descent whose three preceding samples
/// (including `τ_m`) are positive and three following samples negative.
pub fn egm_crossings(values: &[f64], tau0: f64, dtau: f64) -> Vec<f64> {
    let mut out = Vec::new();
    if values.len() < GUARD_BEFORE + GUARD_AFTER {
        return out;
    }
    for m in (GUARD_BEFORE - 1)..(values.len() - GUARD_AFTER) {
        let before = &values[m + 1 - GUARD_BEFORE..=m];
        let after = &values[m + 1..=m + GUARD_AFTER];
        if before.iter().all(|&v| v > 0.0) && after.iter().all(|&v| v < 0.0) {
            let (y0, y1) = (values[m], values[m + 1]);
            out.push(tau0 + m as f64 * dtau + y0 / (y0 - y1) * dtau);
        }
    }
    out
}

/// All upward crossings `v_m ≤ threshold < v_{m+1}`.
pub fn upward_crossings(values: &[f64], tau0: f64, dtau: f64, threshold: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for m in 0..values.len().saturating_sub(1) {
        let (v0, v1) = (values[m], values[m + 1]);
        if v0 <= threshold && v1 > threshold {
            out.push(tau0 + m as f64 * dtau + (threshold - v0) / (v1 - v0) * dtau);
        }
    }
    out
}

fn first_two(times: &[f64], electrode: usize) -> Result<LatPair, FeatureError> {
    match times {
        [lat1, lat2, ..] => Ok(LatPair { lat1: *lat1, lat2: *lat2 }),
        _ => Err(FeatureError::NoReentry { electrode, found: times.len(), needed: 2 }),
    }
}

/// First two activations detected in an electrogram. `electrode` is the
/// 1-based index used in error reports.
pub fn lat_from_egm(values: &[f64], tau0: f64, dtau: f64, electrode: usize) -> Result<LatPair, FeatureError> {
    first_two(&egm_crossings(values, tau0, dtau), electrode)
}

/// First two activations detected in a transmembrane trace.
pub fn lat_from_vm(values: &[f64], tau0: f64, dtau: f64, electrode: usize) -> Result<LatPair, FeatureError> {
    first_two(&upward_crossings(values, tau0, dtau, VM_THRESHOLD), electrode)
}

/// Start of the observation window: the third-from-last activation, so
/// that two full reentries follow it.
pub fn find_t0(activations: &[f64], electrode: usize) -> Result<f64, FeatureError> {
    if activations.len() < 3 {
        return Err(FeatureError::NoReentry { electrode, found: activations.len(), needed: 3 });
    }
    Ok(activations[activations.len() - 3])
}

/// `period = mean(lat2) − mean(lat1)`, `relLAT_j = lat2_j − mean(lat2)`.
pub fn characterizing_quantities(lats: &[LatPair; ELECTRODE_COUNT]) -> FeatureVector {
    let n = ELECTRODE_COUNT as f64;
    let mean1 = lats.iter().map(|l| l.lat1).sum::<f64>() / n;
    let mean2 = lats.iter().map(|l| l.lat2).sum::<f64>() / n;
    let mut rellat = [0.0; ELECTRODE_COUNT];
    for (r, l) in rellat.iter_mut().zip(lats) {
        *r = l.lat2 - mean2;
    }
    FeatureVector { period: mean2 - mean1, rellat }
}

/// Feature vector from the rows of an electrogram matrix.
pub fn features_from_egm(rows: &[Vec<f64>], tau0: f64, dtau: f64) -> Result<FeatureVector, FeatureError> {
    let mut lats = [LatPair { lat1: 0.0, lat2: 0.0 }; ELECTRODE_COUNT];
    for (j, row) in rows.iter().enumerate().take(ELECTRODE_COUNT) {
        lats[j] = lat_from_egm(row, tau0, dtau, j + 1)?;
    }
    Ok(characterizing_quantities(&lats))
}

/// Feature vector from transmembrane traces at the electrodes.
pub fn features_from_vm(rows: &[Vec<f64>], tau0: f64, dtau: f64) -> Result<FeatureVector, FeatureError> {
    let mut lats = [LatPair { lat1: 0.0, lat2: 0.0 }; ELECTRODE_COUNT];
    for (j, row) in rows.iter().enumerate().take(ELECTRODE_COUNT) {
        lats[j] = lat_from_vm(row, tau0, dtau, j + 1)?;
    }
    Ok(characterizing_quantities(&lats))
}
