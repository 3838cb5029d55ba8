//! Closed-form collision model for the random-selection baseline.
//!
//! The platoon leader picks a fresh idle VRB uniformly at random every
//! period. Two failure modes are modeled separately and then combined:
//!
//! * selection collisions: an in-range vehicle reselects in the same period
//!   and lands on the leader's pick;
//! * hidden terminals: a vehicle out of the leader's range but inside the
//!   tail receiver's range already occupies the pick.
//!
//! All quantities treat vehicle counts as continuous expectations, so
//! `2 * R * rho - 1` in-range interferers may be fractional; the binomial
//! over reselecting vehicles then uses the generalized binomial coefficient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{n_virtual_blocks, ScenarioConfig};

/// Which estimate of the per-vehicle overlap count feeds the collision
/// formulas.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapEstimate {
    /// Truncated geometric sum over the whole VRB pool.
    Exact,
    /// Closed-form limit of the same sum; indistinguishable from `Exact`
    /// away from saturation and much cheaper to read off.
    #[default]
    Approximate,
}

/// Inputs to the collision model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AnalyticInputs {
    /// VRBs per transmission period.
    pub n_r: usize,
    /// Vehicles per km.
    pub density_rho: f64,
    /// Transmission/sensing range R, km.
    pub transmission_range_km: f64,
    /// Platoon length d, km.
    pub platoon_length_km: f64,
    /// SPS keep probability p.
    pub keep_prob: f64,
    /// SPS reselection counter T_s, periods.
    pub sps_periods: u32,
    /// Overlap-count estimate used by the collision formulas.
    pub overlap: OverlapEstimate,
}

impl AnalyticInputs {
    pub fn new(
        n_r: usize,
        density_rho: f64,
        transmission_range_km: f64,
        platoon_length_km: f64,
        keep_prob: f64,
        sps_periods: u32,
    ) -> Result<Self> {
        let inputs = AnalyticInputs {
            n_r,
            density_rho,
            transmission_range_km,
            platoon_length_km,
            keep_prob,
            sps_periods,
            overlap: OverlapEstimate::default(),
        };
        inputs.validate()?;
        Ok(inputs)
    }

    /// Same model over a simulation scenario's parameters.
    pub fn from_scenario(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        AnalyticInputs::new(
            n_virtual_blocks(cfg)?,
            cfg.density_rho,
            cfg.transmission_range_km,
            cfg.platoon_length_km,
            cfg.keep_prob,
            cfg.sps_periods,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_r < 2 {
            return Err(Error::Domain("need at least 2 VRBs".into()));
        }
        if !(self.density_rho.is_finite() && self.density_rho > 0.0) {
            return Err(Error::Domain("density must be positive".into()));
        }
        if !(self.transmission_range_km.is_finite() && self.transmission_range_km > 0.0) {
            return Err(Error::Domain("range must be positive".into()));
        }
        if !(self.platoon_length_km.is_finite() && self.platoon_length_km >= 0.0) {
            return Err(Error::Domain("platoon length must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.keep_prob) {
            return Err(Error::Domain("keep probability must lie in [0, 1]".into()));
        }
        if self.sps_periods == 0 {
            return Err(Error::Domain("SPS counter must be at least 1".into()));
        }
        if self.in_range_interferers() < 0.0 {
            return Err(Error::Domain(
                "expected in-range interferer count 2*R*rho - 1 is negative".into(),
            ));
        }
        // Keeps the hidden-terminal probability a probability: at least one
        // candidate VRB must remain outside the occupied in-range set.
        if (self.n_r as f64) < self.in_range_occupancy() + 1.0 {
            return Err(Error::Domain(format!(
                "VRB pool ({}) does not exceed expected in-range occupancy ({}) by at least 1",
                self.n_r,
                self.in_range_occupancy()
            )));
        }
        Ok(())
    }

    /// Expected number of other vehicles within the leader's range:
    /// 2 * R * rho - 1.
    pub fn in_range_interferers(&self) -> f64 {
        2.0 * self.transmission_range_km * self.density_rho - 1.0
    }

    /// Expected number of vehicles within one range on one side: R * rho.
    pub fn in_range_occupancy(&self) -> f64 {
        self.transmission_range_km * self.density_rho
    }

    /// Expected hidden terminals behind the tail receiver: d * rho.
    pub fn hidden_terminals(&self) -> f64 {
        self.platoon_length_km * self.density_rho
    }

    /// Per-period probability that a given in-range vehicle changes VRB:
    /// (1 - p) / T_s.
    pub fn change_prob(&self) -> f64 {
        (1.0 - self.keep_prob) / self.sps_periods as f64
    }
}

/// Bundle of the model's headline outputs at one parameter point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AnalyticOutputs {
    pub n_a: f64,
    pub p_c_rs: f64,
    pub p_one_ht: f64,
    pub p_c_ht: f64,
}

/// Generalized binomial coefficient C(x, n) for real x.
fn binomial_general(x: f64, n: u32) -> f64 {
    (0..n).fold(1.0, |acc, i| acc * (x - i as f64) / (i + 1) as f64)
}

/// Probability that exactly `n` of the in-range vehicles reselect in a given
/// period: Binomial(2*R*rho - 1, (1 - p)/T_s) evaluated at `n`.
pub fn p_reselect(inputs: &AnalyticInputs, n: u32) -> Result<f64> {
    inputs.validate()?;
    let k = inputs.in_range_interferers();
    if f64::from(n) > k.round() {
        return Err(Error::Domain(format!(
            "n = {n} exceeds the interferer count {k:.3} (rounded {})",
            k.round()
        )));
    }
    let q = inputs.change_prob();
    if q == 0.0 {
        return Ok(if n == 0 { 1.0 } else { 0.0 });
    }
    Ok(binomial_general(k, n) * q.powi(n as i32) * (1.0 - q).powf(k - f64::from(n)))
}

fn blocked_prob(n_r: usize, k: f64) -> f64 {
    1.0 - (1.0 - 1.0 / n_r as f64).powf(k)
}

/// Expected number of VRBs a single vehicle's selection effectively covers
/// when measured against the leader's next pick, as a truncated geometric
/// sum over the pool.
pub fn n_a_exact(inputs: &AnalyticInputs) -> Result<f64> {
    inputs.validate()?;
    let beta = blocked_prob(inputs.n_r, inputs.in_range_interferers());
    let mut sum = 0.0;
    let mut term = 1.0; // beta^0, also when beta == 0
    for _ in 0..inputs.n_r - 1 {
        sum += term;
        term *= beta;
    }
    Ok(sum)
}

/// Closed-form limit of [`n_a_exact`]: (1 - 1/N_r)^-(2*R*rho - 1).
pub fn n_a_approx(inputs: &AnalyticInputs) -> Result<f64> {
    inputs.validate()?;
    Ok((1.0 - 1.0 / inputs.n_r as f64).powf(-inputs.in_range_interferers()))
}

fn n_a(inputs: &AnalyticInputs) -> Result<f64> {
    match inputs.overlap {
        OverlapEstimate::Exact => n_a_exact(inputs),
        OverlapEstimate::Approximate => n_a_approx(inputs),
    }
}

/// Probability that at least one same-period reselection lands on the
/// leader's pick, summed over the reselector-count distribution.
pub fn p_collision_rs_sum(inputs: &AnalyticInputs) -> Result<f64> {
    inputs.validate()?;
    let k = inputs.in_range_interferers();
    let q = inputs.change_prob();
    if q == 0.0 || k == 0.0 {
        return Ok(0.0);
    }
    let s = (inputs.n_r as f64 - n_a(inputs)?) / inputs.n_r as f64;
    if q == 1.0 {
        // Every in-range vehicle reselects every period.
        return Ok(1.0 - s.powf(k));
    }
    // pmf recurrence keeps every factor near unit scale; the explicit
    // coefficient would overflow first for large interferer counts.
    let mut pmf = (1.0 - q).powf(k);
    let mut sum = 0.0;
    let mut s_pow = 1.0;
    for n in 0..k.floor() as u64 {
        pmf *= (k - n as f64) / (n + 1) as f64 * q / (1.0 - q);
        s_pow *= s; // s^(n+1), the survival odds against n+1 reselectors
        sum += pmf * (1.0 - s_pow);
    }
    Ok(sum)
}

/// Same probability in closed form:
/// 1 - (1 - (1 - p) * N_a / (T_s * N_r))^(2*R*rho - 1).
pub fn p_collision_rs_closed(inputs: &AnalyticInputs) -> Result<f64> {
    inputs.validate()?;
    let x = (1.0 - inputs.keep_prob) * n_a(inputs)? / (inputs.sps_periods as f64 * inputs.n_r as f64);
    if x > 1.0 {
        return Err(Error::Domain(format!(
            "per-vehicle collision weight {x:.4} exceeds 1; the pool is saturated"
        )));
    }
    Ok(1.0 - (1.0 - x).powf(inputs.in_range_interferers()))
}

/// Probability that one hidden terminal does NOT occupy the leader's pick:
/// it selects uniformly among the N_r - R*rho VRBs it cannot rule out, one
/// of which is the leader's.
pub fn p_one_hidden(inputs: &AnalyticInputs) -> Result<f64> {
    inputs.validate()?;
    let free = inputs.n_r as f64 - inputs.in_range_occupancy();
    Ok((free - 1.0) / free)
}

/// Overall per-period collision probability at the platoon tail, combining
/// selection collisions and the d * rho expected hidden terminals.
pub fn p_collision_ht(inputs: &AnalyticInputs) -> Result<f64> {
    let p_rs = p_collision_rs_closed(inputs)?;
    let p_one = p_one_hidden(inputs)?;
    Ok(1.0 - (1.0 - p_rs) * p_one.powf(inputs.hidden_terminals()))
}

/// Evaluates the whole model at one point.
pub fn evaluate(inputs: &AnalyticInputs) -> Result<AnalyticOutputs> {
    Ok(AnalyticOutputs {
        n_a: n_a(inputs)?,
        p_c_rs: p_collision_rs_closed(inputs)?,
        p_one_ht: p_one_hidden(inputs)?,
        p_c_ht: p_collision_ht(inputs)?,
    })
}
