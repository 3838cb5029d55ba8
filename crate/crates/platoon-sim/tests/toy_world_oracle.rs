//! Cross-checks the event-driven world against an independent probability
//! enumeration on a pool small enough to walk completely.
//!
//! The enumerator reimplements the period dynamics from scratch over raw
//! arrays (it shares no code with the simulator beyond the config struct)
//! and walks every branch of the randomness: each boundary vehicle's
//! keep-or-change draw and each uniform pick of the leader. That yields the
//! exact probability that the platoon sees at least one collision, which a
//! seeded Monte Carlo estimate over the same fixed starting state must hit
//! within three standard errors.

use platoon_sim::agents::RandomLeader;
use platoon_sim::rng::{stream, STREAM_WORLD};
use platoon_sim::scenario::{ScenarioConfig, Topology};
use platoon_sim::sps::{SpsVehicleState, World};

const SEED: u64 = 77;
const PERIODS: u32 = 3;
const MC_RUNS: u64 = 100_000;

/// 5 vehicles on 200 m of road, 8 VRBs, 2-period SPS counters. The last
/// vehicle sits outside the leader's range but inside the tail's, so the
/// hidden-terminal path is exercised.
fn toy_config() -> ScenarioConfig {
    ScenarioConfig {
        road_length_km: 0.2,
        transmission_range_km: 0.04,
        density_rho: 25.0,
        platoon_length_km: 0.01,
        period_ms: 2.0,
        subchannels: 2,
        slot_ms: 0.5,
        sps_periods: 2,
        keep_prob: 0.6,
        periods_per_run: PERIODS,
        runs_per_point: 1,
        seed: SEED,
    }
}

const POSITIONS: [f64; 5] = [0.075, 0.09, 0.10, 0.12, 0.145];
const PL: usize = 2;
const INITIAL_VRBS: [usize; 5] = [0, 2, 4, 6, 1];
const INITIAL_COUNTERS: [u32; 5] = [0, 1, 0, 1, 0];

fn toy_topology() -> Topology {
    Topology {
        positions: POSITIONS.to_vec(),
        pl_index: PL,
        last_pm_position: POSITIONS[PL] + 0.01,
    }
}

fn toy_states() -> Vec<SpsVehicleState> {
    INITIAL_VRBS
        .iter()
        .zip(INITIAL_COUNTERS)
        .map(|(&current_vrb, periods_remaining)| SpsVehicleState {
            current_vrb,
            periods_remaining,
        })
        .collect()
}

/// Independent geometry: indices within `r` of `center`, by brute distance.
fn in_range(center: f64, r: f64) -> Vec<usize> {
    POSITIONS
        .iter()
        .enumerate()
        .filter(|(_, &x)| (x - center).abs() <= r)
        .map(|(i, _)| i)
        .collect()
}

struct Enumerator {
    n_r: usize,
    keep_prob: f64,
    t_s: u32,
    /// Per-vehicle sensing neighborhoods, self excluded.
    heard_by: Vec<Vec<usize>>,
    /// Vehicles whose transmissions reach the leader or the tail.
    interferers: Vec<usize>,
    /// Probability mass that saw at least one collision, and the total walked
    /// (the latter must come back as 1).
    hit_mass: f64,
    total_mass: f64,
}

impl Enumerator {
    fn busy_row(&self, prev_vrbs: &[usize; 5], observer: usize) -> [bool; 8] {
        let mut busy = [false; 8];
        for &j in &self.heard_by[observer] {
            busy[prev_vrbs[j]] = true;
        }
        busy
    }

    /// First idle block scanning cyclically from `from + 1`; the current
    /// block itself is the last candidate.
    fn closest_idle(busy: &[bool; 8], from: usize) -> Option<usize> {
        (1..=busy.len()).map(|s| (from + s) % busy.len()).find(|&m| !busy[m])
    }

    fn walk(&mut self, prev_vrbs: [usize; 5], counters: [u32; 5], t: u32, prob: f64, hit: bool) {
        if t == PERIODS {
            self.total_mass += prob;
            if hit {
                self.hit_mass += prob;
            }
            return;
        }

        let boundary: Vec<usize> = (0..5)
            .filter(|&i| i != PL && counters[i] == 0)
            .collect();

        for mask in 0..1u32 << boundary.len() {
            let mut vrbs = prev_vrbs;
            let mut next_counters = counters;
            let mut branch_prob = prob;
            for i in 0..5 {
                if i != PL && counters[i] > 0 {
                    next_counters[i] -= 1;
                }
            }
            for (b, &i) in boundary.iter().enumerate() {
                next_counters[i] = self.t_s - 1;
                if mask >> b & 1 == 1 {
                    branch_prob *= self.keep_prob;
                } else {
                    branch_prob *= 1.0 - self.keep_prob;
                    let busy = self.busy_row(&prev_vrbs, i);
                    if let Some(m) = Self::closest_idle(&busy, prev_vrbs[i]) {
                        vrbs[i] = m;
                    }
                }
            }

            let pl_busy = self.busy_row(&prev_vrbs, PL);
            let idle: Vec<usize> = (0..self.n_r).filter(|&m| !pl_busy[m]).collect();
            let choices: Vec<(usize, f64)> = if idle.is_empty() {
                vec![(prev_vrbs[PL], 1.0)]
            } else {
                let w = 1.0 / idle.len() as f64;
                idle.iter().map(|&m| (m, w)).collect()
            };

            for (pl_vrb, w) in choices {
                let mut out_vrbs = vrbs;
                out_vrbs[PL] = pl_vrb;
                let collided = self
                    .interferers
                    .iter()
                    .any(|&j| out_vrbs[j] == pl_vrb);
                self.walk(
                    out_vrbs,
                    next_counters,
                    t + 1,
                    branch_prob * w,
                    hit || collided,
                );
            }
        }
    }
}

#[test]
fn exhaustive_enumeration_matches_monte_carlo() {
    let cfg = toy_config();
    let r = cfg.transmission_range_km;
    let tail = POSITIONS[PL] + cfg.platoon_length_km;

    let heard_by = (0..5)
        .map(|i| {
            in_range(POSITIONS[i], r)
                .into_iter()
                .filter(|&j| j != i)
                .collect()
        })
        .collect();
    let interferers: Vec<usize> = (0..5)
        .filter(|&j| {
            j != PL
                && ((POSITIONS[j] - POSITIONS[PL]).abs() <= r
                    || (POSITIONS[j] - tail).abs() <= r)
        })
        .collect();
    assert_eq!(interferers, vec![0, 1, 3, 4]);

    let mut exact = Enumerator {
        n_r: 8,
        keep_prob: cfg.keep_prob,
        t_s: cfg.sps_periods,
        heard_by,
        interferers,
        hit_mass: 0.0,
        total_mass: 0.0,
    };
    exact.walk(INITIAL_VRBS, INITIAL_COUNTERS, 0, 1.0, false);
    assert!(
        (exact.total_mass - 1.0).abs() < 1e-12,
        "probability mass leaked: {}",
        exact.total_mass
    );
    let p_exact = exact.hit_mass;
    assert!(
        (0.02..=0.98).contains(&p_exact),
        "degenerate fixture, p = {p_exact}"
    );

    let mut hits = 0u64;
    for run in 0..MC_RUNS {
        let mut world = World::from_parts(
            &cfg,
            toy_topology(),
            toy_states(),
            stream(SEED, run, STREAM_WORLD),
        )
        .unwrap();
        assert_eq!(world.interferers(), exact.interferers.as_slice());
        let mut leader = RandomLeader::new(SEED, run, world.pl_prev_vrb());
        let mut any = false;
        for _ in 0..PERIODS {
            any |= leader.episode_step(&mut world).unwrap().collided;
        }
        hits += u64::from(any);
    }
    let p_mc = hits as f64 / MC_RUNS as f64;
    let se = (p_exact * (1.0 - p_exact) / MC_RUNS as f64).sqrt();
    println!(
        "enumerated p = {p_exact:.6}, monte carlo p = {p_mc:.6}, se = {se:.6}"
    );
    assert!(
        (p_mc - p_exact).abs() <= 3.0 * se,
        "monte carlo {p_mc} vs exact {p_exact}, allowed 3 se = {}",
        3.0 * se
    );
}
