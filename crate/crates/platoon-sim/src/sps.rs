//! Discrete-period Monte Carlo world: every broadcast vehicle runs
//! semi-persistent scheduling (SPS) over the shared VRB pool, the platoon
//! leader's VRB is injected by a policy each period, and the outcome is
//! scored at the platoon tail.
//!
//! Sensing is binary and one period deep: a vehicle's view of VRB `m` in
//! period `n` is busy iff some other vehicle within range transmitted on
//! `m` during `n`. A vehicle does not sense its own transmission.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::scenario::{
    interferer_set, n_virtual_blocks, place_vehicles, range_window, ScenarioConfig, Topology,
};

/// One vehicle's view of the pool over one period, as a busy bitset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensingRow {
    n_r: usize,
    busy: Vec<u64>,
}

impl SensingRow {
    pub fn idle(n_r: usize) -> Self {
        SensingRow {
            n_r,
            busy: vec![0; n_r.div_ceil(64)],
        }
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn set_busy(&mut self, vrb: usize) {
        debug_assert!(vrb < self.n_r);
        self.busy[vrb / 64] |= 1 << (vrb % 64);
    }

    pub fn is_busy(&self, vrb: usize) -> bool {
        debug_assert!(vrb < self.n_r);
        self.busy[vrb / 64] >> (vrb % 64) & 1 == 1
    }

    pub fn is_idle(&self, vrb: usize) -> bool {
        !self.is_busy(vrb)
    }

    pub fn busy_count(&self) -> usize {
        self.busy.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn idle_count(&self) -> usize {
        self.n_r - self.busy_count()
    }

    /// VRB indices currently idle, ascending.
    pub fn idle_indices(&self) -> Vec<usize> {
        (0..self.n_r).filter(|&m| self.is_idle(m)).collect()
    }

    fn clear(&mut self) {
        self.busy.fill(0);
    }

    /// First idle VRB scanning forward from `from + 1`, wrapping around the
    /// pool. Returns None when every VRB is busy. Scanning order makes the
    /// result unique, so there are no distance ties to break.
    pub fn closest_idle_after(&self, from: usize) -> Option<usize> {
        debug_assert!(from < self.n_r);
        (1..=self.n_r)
            .map(|step| (from + step) % self.n_r)
            .find(|&m| self.is_idle(m))
    }
}

/// Per-period sensing history for one observer, exportable as CSV.
#[derive(Debug, Clone)]
pub struct SensingMatrix {
    pub observer: Observer,
    pub rows: Vec<SensingRow>,
}

/// Whose antenna a sensing matrix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observer {
    /// The platoon leader.
    Leader,
    /// The tail receiver at the end of the platoon.
    Tail,
}

impl SensingMatrix {
    /// Writes one line per period. Exported polarity is inverted relative to
    /// the internal busy bitset: 1 = idle, 0 = busy, as stated in the header.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# sensing matrix, one row per period, one column per VRB; 1 = idle, 0 = busy"
        )?;
        let mut line = String::new();
        for row in &self.rows {
            line.clear();
            for m in 0..row.n_r() {
                if m > 0 {
                    line.push(',');
                }
                line.push(if row.is_idle(m) { '1' } else { '0' });
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// SPS bookkeeping for one broadcast vehicle.
#[derive(Debug, Clone)]
pub struct SpsVehicleState {
    pub current_vrb: usize,
    /// Periods until the next reselection decision. Vehicles start with
    /// independent phases so decisions stay spread over the cycle.
    pub periods_remaining: u32,
}

/// What happened in one period, seen from the platoon.
#[derive(Debug, Clone)]
pub struct PeriodOutcome {
    pub period: u64,
    pub pl_vrb: usize,
    /// True iff some interferer transmitted on `pl_vrb` this period.
    pub collided: bool,
    /// The interfering vehicles, ascending.
    pub colliders: Vec<usize>,
}

/// The simulated highway at one parameter point.
pub struct World {
    cfg: ScenarioConfig,
    topo: Topology,
    n_r: usize,
    states: Vec<SpsVehicleState>,
    /// VRB each vehicle transmitted on last period (index pl is the
    /// leader's). Drives all sensing views.
    prev_vrbs: Vec<usize>,
    /// Static in-range index windows per vehicle, from the sorted positions.
    windows: Vec<(usize, usize)>,
    tail_window: (usize, usize),
    interferers: Vec<usize>,
    period: u64,
    /// Reselections that found every VRB busy and kept the current one.
    saturation_keeps: u64,
    rng: ChaCha12Rng,
    scratch: SensingRow,
    collect: Option<(SensingMatrix, SensingMatrix)>,
}

impl World {
    /// Places vehicles for `run_index` and initializes SPS state: every
    /// vehicle gets an independent uniform VRB and a uniform phase in
    /// [0, T_s). The initial assignment also seeds the first sensing views,
    /// as if it had been transmitted in the period before the first.
    pub fn new(cfg: &ScenarioConfig, run_index: u64) -> Result<Self> {
        let topo = place_vehicles(cfg, run_index)?;
        let rng = rng::stream(cfg.seed, run_index, rng::STREAM_WORLD);
        World::from_topology(cfg, topo, rng)
    }

    pub fn from_topology(cfg: &ScenarioConfig, topo: Topology, mut rng: ChaCha12Rng) -> Result<Self> {
        cfg.validate()?;
        let n_r = n_virtual_blocks(cfg)?;
        let n = topo.positions.len();
        let states = (0..n)
            .map(|_| SpsVehicleState {
                current_vrb: rng.random_range(0..n_r),
                periods_remaining: rng.random_range(0..cfg.sps_periods),
            })
            .collect();
        Ok(World::assemble(cfg.clone(), topo, n_r, states, rng))
    }

    /// Builds a world from explicit per-vehicle states. Test and oracle
    /// fixtures use this to pin the starting point exactly.
    pub fn from_parts(
        cfg: &ScenarioConfig,
        topo: Topology,
        states: Vec<SpsVehicleState>,
        rng: ChaCha12Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let n_r = n_virtual_blocks(cfg)?;
        if states.len() != topo.positions.len() {
            return Err(Error::Config(
                "one SPS state per placed vehicle is required".into(),
            ));
        }
        for s in &states {
            if s.current_vrb >= n_r || s.periods_remaining >= cfg.sps_periods {
                return Err(Error::Config("SPS state out of range".into()));
            }
        }
        Ok(World::assemble(cfg.clone(), topo, n_r, states, rng))
    }

    fn assemble(
        cfg: ScenarioConfig,
        topo: Topology,
        n_r: usize,
        states: Vec<SpsVehicleState>,
        rng: ChaCha12Rng,
    ) -> Self {
        let r = cfg.transmission_range_km;
        let windows = topo
            .positions
            .iter()
            .map(|&x| range_window(&topo.positions, x, r))
            .collect();
        let tail_window = range_window(&topo.positions, topo.last_pm_position, r);
        let interferers = interferer_set(&topo, &cfg);
        let prev_vrbs = states.iter().map(|s| s.current_vrb).collect();
        World {
            cfg,
            topo,
            n_r,
            states,
            prev_vrbs,
            windows,
            tail_window,
            interferers,
            period: 0,
            saturation_keeps: 0,
            rng,
            scratch: SensingRow::idle(n_r),
            collect: None,
        }
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    pub fn saturation_keeps(&self) -> u64 {
        self.saturation_keeps
    }

    pub fn interferers(&self) -> &[usize] {
        &self.interferers
    }

    /// The leader's VRB in the previous period (initially its random
    /// assignment). Policies fall back to it when nothing is idle.
    pub fn pl_prev_vrb(&self) -> usize {
        self.prev_vrbs[self.topo.pl_index]
    }

    /// Starts recording leader and tail sensing matrices.
    pub fn record_sensing(&mut self) {
        self.collect = Some((
            SensingMatrix {
                observer: Observer::Leader,
                rows: Vec::new(),
            },
            SensingMatrix {
                observer: Observer::Tail,
                rows: Vec::new(),
            },
        ));
    }

    /// Hands over the recorded (leader, tail) matrices.
    pub fn take_sensing(&mut self) -> Option<(SensingMatrix, SensingMatrix)> {
        self.collect.take()
    }

    fn fill_row(&self, row: &mut SensingRow, window: (usize, usize), skip: Option<usize>) {
        row.clear();
        for j in window.0..window.1 {
            if Some(j) != skip {
                row.set_busy(self.prev_vrbs[j]);
            }
        }
    }

    /// The leader's view of the previous period. This is what its policy
    /// must base the next selection on.
    pub fn pl_sensing_row(&self) -> SensingRow {
        let mut row = SensingRow::idle(self.n_r);
        self.fill_row(&mut row, self.windows[self.topo.pl_index], Some(self.topo.pl_index));
        row
    }

    /// The tail receiver's view of the previous period. The tail never
    /// transmits, so nothing is skipped.
    pub fn tail_sensing_row(&self) -> SensingRow {
        let mut row = SensingRow::idle(self.n_r);
        self.fill_row(&mut row, self.tail_window, None);
        row
    }

    /// Advances one transmission period with the leader transmitting on
    /// `pl_vrb`. Broadcast vehicles whose reselection counter expired decide
    /// keep-or-change against their own previous-period view, then everyone
    /// transmits at once and the tail is scored.
    pub fn step_period(&mut self, pl_vrb: usize) -> Result<PeriodOutcome> {
        if pl_vrb >= self.n_r {
            return Err(Error::Config(format!(
                "leader VRB {pl_vrb} out of range (pool of {})",
                self.n_r
            )));
        }
        let pl = self.topo.pl_index;
        // Reselection decisions all read last period's transmissions, so
        // vehicle order does not matter.
        for i in 0..self.states.len() {
            if i == pl {
                continue;
            }
            if self.states[i].periods_remaining == 0 {
                self.states[i].periods_remaining = self.cfg.sps_periods - 1;
                let keep = self.rng.random_range(0.0..1.0) < self.cfg.keep_prob;
                if !keep {
                    let mut row = std::mem::replace(&mut self.scratch, SensingRow::idle(0));
                    self.fill_row(&mut row, self.windows[i], Some(i));
                    match row.closest_idle_after(self.states[i].current_vrb) {
                        Some(m) => self.states[i].current_vrb = m,
                        None => self.saturation_keeps += 1,
                    }
                    self.scratch = row;
                }
            } else {
                self.states[i].periods_remaining -= 1;
            }
        }
        self.states[pl].current_vrb = pl_vrb;

        // Everyone transmits.
        for (prev, s) in self.prev_vrbs.iter_mut().zip(&self.states) {
            *prev = s.current_vrb;
        }

        let colliders: Vec<usize> = self
            .interferers
            .iter()
            .copied()
            .filter(|&j| self.prev_vrbs[j] == pl_vrb)
            .collect();
        let outcome = PeriodOutcome {
            period: self.period,
            pl_vrb,
            collided: !colliders.is_empty(),
            colliders,
        };
        self.period += 1;

        if self.collect.is_some() {
            let pl_row = self.pl_sensing_row();
            let tail_row = self.tail_sensing_row();
            if let Some((pl_m, tail_m)) = self.collect.as_mut() {
                pl_m.rows.push(pl_row);
                tail_m.rows.push(tail_row);
            }
        }
        Ok(outcome)
    }
}
