//! Highway scenario: a 1-D road segment carrying independent broadcast
//! vehicles plus one platoon, and the shared pool of virtual resource
//! blocks (VRBs) they all select from.
//!
//! Positions are in km, times in ms. The platoon is modeled by two points:
//! the leader (PL), which transmits, and the tail receiver one platoon
//! length behind the leader's front. Intermediate platoon members neither
//! transmit in the shared pool nor count as receivers; interference at the
//! tail is the worst case for group delivery.

use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Full description of one simulated point: road geometry, radio numerology,
/// SPS parameters, and experiment bookkeeping.
///
/// Deserializes from JSON with the same field names; absent fields take the
/// defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Road segment length in km.
    pub road_length_km: f64,
    /// Transmission and sensing range R of every vehicle, km.
    pub transmission_range_km: f64,
    /// Broadcast vehicle density rho, vehicles per km.
    pub density_rho: f64,
    /// Platoon length d, km. The tail receiver sits this far behind the PL.
    pub platoon_length_km: f64,
    /// Transmission period T_tr in ms.
    pub period_ms: f64,
    /// Subchannels per slot.
    pub subchannels: u32,
    /// Slot duration in ms. Must divide the period exactly.
    pub slot_ms: f64,
    /// SPS reselection counter T_s, in periods.
    pub sps_periods: u32,
    /// SPS keep probability p.
    pub keep_prob: f64,
    pub periods_per_run: u32,
    pub runs_per_point: u32,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            road_length_km: 4.0,
            transmission_range_km: 0.4,
            density_rho: 100.0,
            platoon_length_km: 0.1,
            period_ms: 50.0,
            subchannels: 2,
            slot_ms: 0.5,
            sps_periods: 10,
            keep_prob: 0.9,
            periods_per_run: 10_000,
            runs_per_point: 50,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    /// Checks every parameter, including the exact divisibility behind
    /// [`n_virtual_blocks`].
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        pos(self.road_length_km, "road_length_km")?;
        pos(self.transmission_range_km, "transmission_range_km")?;
        pos(self.density_rho, "density_rho")?;
        pos(self.period_ms, "period_ms")?;
        pos(self.slot_ms, "slot_ms")?;
        if !self.platoon_length_km.is_finite() || self.platoon_length_km < 0.0 {
            return Err(Error::Config(format!(
                "platoon_length_km must be non-negative, got {}",
                self.platoon_length_km
            )));
        }
        if !(0.0..=1.0).contains(&self.keep_prob) {
            return Err(Error::Config(format!(
                "keep_prob must lie in [0, 1], got {}",
                self.keep_prob
            )));
        }
        if self.subchannels == 0 {
            return Err(Error::Config("subchannels must be at least 1".into()));
        }
        if self.sps_periods == 0 {
            return Err(Error::Config("sps_periods must be at least 1".into()));
        }
        if self.runs_per_point == 0 {
            return Err(Error::Config("runs_per_point must be at least 1".into()));
        }
        if self.periods_per_run == 0 {
            return Err(Error::Config("periods_per_run must be at least 1".into()));
        }
        let margin = 2.0 * (self.transmission_range_km + self.platoon_length_km);
        if self.road_length_km <= margin {
            return Err(Error::Config(format!(
                "road_length_km must exceed 2 * (range + platoon length) = {margin} km \
                 so the platoon's interference region fits on the road"
            )));
        }
        if self.vehicle_count() == 0 {
            return Err(Error::Config(
                "density too low: the road would carry no vehicles".into(),
            ));
        }
        n_virtual_blocks(self)?;
        Ok(())
    }

    /// Number of vehicles placed on the road.
    pub fn vehicle_count(&self) -> usize {
        (self.road_length_km * self.density_rho).floor() as usize
    }
}

/// VRBs per transmission period: (period / slot) * subchannels.
///
/// The division is carried out in exact rational arithmetic on the binary
/// values of the inputs; a period that is not a whole number of slots is a
/// configuration error rather than a silent rounding.
pub fn n_virtual_blocks(cfg: &ScenarioConfig) -> Result<usize> {
    let period = BigRational::from_float(cfg.period_ms)
        .filter(|v| v.is_positive())
        .ok_or_else(|| Error::Config("period_ms must be positive and finite".into()))?;
    let slot = BigRational::from_float(cfg.slot_ms)
        .filter(|v| v.is_positive())
        .ok_or_else(|| Error::Config("slot_ms must be positive and finite".into()))?;
    let slots = period / slot;
    if !slots.is_integer() {
        return Err(Error::Config(format!(
            "period_ms = {} is not a whole number of slot_ms = {} slots",
            cfg.period_ms, cfg.slot_ms
        )));
    }
    let n = slots
        .to_integer()
        .to_u64()
        .and_then(|s| s.checked_mul(u64::from(cfg.subchannels)))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| Error::Config("VRB count overflows".into()))?;
    if n < 2 {
        return Err(Error::Config(format!(
            "need at least 2 VRBs per period, got {n}"
        )));
    }
    Ok(n)
}

/// Placed vehicles for one run. Positions are sorted ascending.
#[derive(Debug, Clone)]
pub struct Topology {
    pub positions: Vec<f64>,
    /// Index of the platoon leader, the vehicle closest to mid-road.
    pub pl_index: usize,
    /// Position of the tail receiver, `positions[pl_index] + platoon_length`.
    pub last_pm_position: f64,
}

impl Topology {
    pub fn pl_position(&self) -> f64 {
        self.positions[self.pl_index]
    }
}

/// Draws vehicle positions i.i.d. uniform on the road and designates the
/// vehicle nearest mid-road as the platoon leader.
///
/// Pure in (cfg, run_index): the placement stream is derived from
/// `cfg.seed` and the run index alone.
pub fn place_vehicles(cfg: &ScenarioConfig, run_index: u64) -> Result<Topology> {
    let mut rng = rng::stream(cfg.seed, run_index, rng::STREAM_PLACEMENT);
    place_vehicles_with(cfg, &mut rng)
}

fn place_vehicles_with(cfg: &ScenarioConfig, rng: &mut ChaCha12Rng) -> Result<Topology> {
    cfg.validate()?;
    let n = cfg.vehicle_count();
    let mut positions: Vec<f64> = (0..n)
        .map(|_| rng.random_range(0.0..cfg.road_length_km))
        .collect();
    positions.sort_unstable_by(f64::total_cmp);

    let mid = cfg.road_length_km / 2.0;
    let pl_index = positions
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| (*a - mid).abs().total_cmp(&(*b - mid).abs()))
        .map(|(i, _)| i)
        .expect("vehicle_count checked nonzero");

    let topo = Topology {
        last_pm_position: positions[pl_index] + cfg.platoon_length_km,
        positions,
        pl_index,
    };

    // The analytic model assumes the whole interference region lies on the
    // road. A draw that pushes the leader this far off-center voids the
    // comparison, so reject it instead of quietly clipping.
    let lo = topo.pl_position() - cfg.transmission_range_km;
    let hi = topo.last_pm_position + cfg.transmission_range_km;
    if lo < 0.0 || hi > cfg.road_length_km {
        return Err(Error::Config(format!(
            "interference region [{lo:.3}, {hi:.3}] km clips the road; \
             the leader landed too far from mid-road"
        )));
    }
    Ok(topo)
}

/// Indices of vehicles within `range` of `center`, as a half-open index
/// window into the sorted position list.
pub fn range_window(positions: &[f64], center: f64, range: f64) -> (usize, usize) {
    let lo = positions.partition_point(|&x| x < center - range);
    let hi = positions.partition_point(|&x| x <= center + range);
    (lo, hi)
}

/// Vehicles that can interfere with platoon reception: everything within
/// range of the leader or of the tail receiver, i.e. the union window
/// [PL - R, PL + d + R]. The leader itself is excluded.
pub fn interferer_set(topo: &Topology, cfg: &ScenarioConfig) -> Vec<usize> {
    let r = cfg.transmission_range_km;
    let (pl_lo, pl_hi) = range_window(&topo.positions, topo.pl_position(), r);
    let (pm_lo, pm_hi) = range_window(&topo.positions, topo.last_pm_position, r);
    let (lo, hi) = (pl_lo.min(pm_lo), pl_hi.max(pm_hi));
    (lo..hi).filter(|&i| i != topo.pl_index).collect()
}
