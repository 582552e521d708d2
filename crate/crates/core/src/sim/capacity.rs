use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bisection bounds for [`capacity_search`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityBounds {
    pub qps_lo: f64,
    pub qps_hi: f64,
    pub tol: f64,
    /// Largest acceptable violation percentage, e.g. `1.0`.
    pub violation_budget_pct: f64,
}

impl CapacityBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.qps_lo > 0.0 && self.qps_hi > self.qps_lo && self.tol > 0.0) {
            return Err(Error::Config(format!(
                "capacity search needs 0 < qps_lo < qps_hi and tol > 0 (lo={}, hi={}, tol={})",
                self.qps_lo, self.qps_hi, self.tol
            )));
        }
        if !(0.0..=100.0).contains(&self.violation_budget_pct) {
            return Err(Error::Config(
                "violation budget must be within [0, 100]".into(),
            ));
        }
        Ok(())
    }

    /// Probe grid: `qps_lo + k * tol`, capped by `qps_hi`.
    fn point(&self, k: usize, last: usize) -> f64 {
        if k == last {
            self.qps_hi
        } else {
            self.qps_lo + k as f64 * self.tol
        }
    }

    fn last_index(&self) -> usize {
        let steps = (self.qps_hi - self.qps_lo) / self.tol;
        let k = (steps - 1e-9).ceil().max(1.0);
        k as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub qps: f64,
    /// Exact when within budget; a probe stopped early reports a lower bound.
    pub violation_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityResult {
    pub capacity: f64,
    /// Even `qps_lo` exceeded the budget; `capacity` is only a floor.
    pub at_lower_bound: bool,
    pub at_upper_bound: bool,
    /// Some probe passed above a failing one.
    pub non_monotone: bool,
    pub probes: Vec<Probe>,
}

/// Largest grid QPS whose violation percentage stays within budget.
///
/// `probe` runs one full simulation at the given rate and returns its
/// violation percentage; every call is expected to use the same seed so the
/// probes share their random numbers.
pub fn capacity_search<F>(bounds: CapacityBounds, mut probe: F) -> Result<CapacityResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    bounds.validate()?;
    let last = bounds.last_index();
    let mut probes: Vec<Probe> = Vec::new();
    let mut eval = |k: usize, probes: &mut Vec<Probe>| -> Result<bool> {
        let qps = bounds.point(k, last);
        let violation_pct = probe(qps)?;
        probes.push(Probe { qps, violation_pct });
        Ok(violation_pct <= bounds.violation_budget_pct)
    };

    let result = |capacity: f64, lo: bool, hi: bool, mut probes: Vec<Probe>| {
        probes.sort_by(|a, b| a.qps.total_cmp(&b.qps));
        let pass = |p: &Probe| p.violation_pct <= bounds.violation_budget_pct;
        let first_fail = probes.iter().find(|p| !pass(p)).map(|p| p.qps);
        let non_monotone = first_fail.is_some_and(|f| probes.iter().any(|p| p.qps > f && pass(p)));
        let capacity = match first_fail {
            Some(f) if non_monotone => {
                log::warn!(
                    "violation% is not monotone in qps; reporting the conservative capacity"
                );
                probes
                    .iter()
                    .filter(|p| p.qps < f && pass(p))
                    .map(|p| p.qps)
                    .fold(bounds.qps_lo, f64::max)
            }
            _ => capacity,
        };
        CapacityResult {
            capacity,
            at_lower_bound: lo,
            at_upper_bound: hi,
            non_monotone,
            probes,
        }
    };

    if eval(last, &mut probes)? {
        return Ok(result(bounds.qps_hi, false, true, probes));
    }
    if !eval(0, &mut probes)? {
        return Ok(result(bounds.qps_lo, true, false, probes));
    }
    let (mut ok, mut bad) = (0usize, last);
    while bad - ok > 1 {
        let mid = ok + (bad - ok) / 2;
        if eval(mid, &mut probes)? {
            ok = mid;
        } else {
            bad = mid;
        }
    }
    // Bisection alone cannot see a dip below the answer; spot-check two
    // interior grid points.
    for k in [ok / 3, 2 * ok / 3] {
        let q = bounds.point(k, last);
        if k > 0 && !probes.iter().any(|p| p.qps == q) {
            eval(k, &mut probes)?;
        }
    }
    Ok(result(bounds.point(ok, last), false, false, probes))
}

/// Per-replica capacities a deployment is sized from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CapacityPlan {
    Shared {
        capacity: f64,
    },
    /// `(offered qps, per-replica capacity)` for each silo.
    Siloed(Vec<(f64, f64)>),
}

/// Replicas needed to carry `total_qps`.
pub fn gpus_required(total_qps: f64, plan: &CapacityPlan) -> Result<u64> {
    let need = |qps: f64, cap: f64| -> Result<u64> {
        if !(cap > 0.0) {
            return Err(Error::ZeroCapacity(cap));
        }
        Ok((qps / cap - 1e-9).ceil().max(0.0) as u64)
    };
    match plan {
        CapacityPlan::Shared { capacity } => need(total_qps, *capacity),
        CapacityPlan::Siloed(silos) => silos.iter().map(|&(q, c)| need(q, c)).sum(),
    }
}
