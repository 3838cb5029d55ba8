//! Leader selection policies.
//!
//! The baseline leader redraws a uniform idle VRB every period. The learning
//! leader runs a Q-network over its own recent (selection, ACK/NACK) history
//! and is trained online from a replay memory, one gradient step per period.
//! Both see the world only through the previous period's sensing row and the
//! per-period delivery feedback.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{QNetwork, QnnArchitecture};
use crate::rng;
use crate::sps::{PeriodOutcome, SensingRow, World};

/// Delivery feedback for one period, reported by the platoon tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Observation {
    Ack,
    Nack,
}

/// Reward carried by one observation.
pub fn reward(obs: Observation) -> f64 {
    match obs {
        Observation::Ack => 1.0,
        Observation::Nack => 0.0,
    }
}

/// One remembered period: which VRB was picked and whether it got through.
pub type ActionObservation = (usize, Observation);

/// VRBs the leader may select this period: those idle in its previous-period
/// view, ascending.
pub fn idle_action_set(row: &SensingRow) -> Vec<usize> {
    row.idle_indices()
}

/// Uniform pick from the idle set. With nothing idle the leader stays on
/// `previous` (the caller counts these saturation events).
pub fn random_select<R: Rng>(idle: &[usize], previous: usize, rng: &mut R) -> (usize, bool) {
    if idle.is_empty() {
        (previous, true)
    } else {
        (idle[rng.random_range(0..idle.len())], false)
    }
}

/// Encodes a feedback history as the network input: per period one
/// (action / n_r, observation) pair, interleaved, oldest first, ACK = 1.0
/// and NACK = 0.0. Histories shorter than `m` are left-padded with zeros.
pub fn encode_state(history: &VecDeque<ActionObservation>, m: usize, n_r: usize) -> Vec<f64> {
    debug_assert!(history.len() <= m);
    let mut v = vec![0.0; 2 * m];
    let offset = m - history.len();
    for (i, &(action, obs)) in history.iter().enumerate() {
        v[2 * (offset + i)] = action as f64 / n_r as f64;
        v[2 * (offset + i) + 1] = match obs {
            Observation::Ack => 1.0,
            Observation::Nack => 0.0,
        };
    }
    v
}

/// Epsilon-greedy over the idle set: explore uniformly with probability
/// `epsilon`, otherwise take the highest-valued idle VRB (lowest index on
/// exact ties). `None` iff the idle set is empty.
pub fn select_action<R: Rng>(
    values: &[f64],
    idle: &[usize],
    epsilon: f64,
    rng: &mut R,
) -> Option<usize> {
    if idle.is_empty() {
        return None;
    }
    if epsilon > 0.0 && rng.random_range(0.0..1.0) < epsilon {
        return Some(idle[rng.random_range(0..idle.len())]);
    }
    let mut best = idle[0];
    for &m in &idle[1..] {
        if values[m] > values[best] {
            best = m;
        }
    }
    Some(best)
}

/// Bootstrapped regression target r + gamma * max_a' Q(s', a').
///
/// By default the max runs over the whole action pool, including VRBs that
/// will be masked at selection time. With `next_idle` given, the max is
/// restricted to that idle set instead (falling back to the full pool when
/// nothing is idle).
pub fn td_target(
    reward: f64,
    next_values: &[f64],
    gamma: f64,
    next_idle: Option<&SensingRow>,
) -> f64 {
    let full_max = || next_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max = match next_idle {
        Some(row) => {
            let mut best = f64::NEG_INFINITY;
            for (m, &v) in next_values.iter().enumerate() {
                if row.is_idle(m) && v > best {
                    best = v;
                }
            }
            if best == f64::NEG_INFINITY {
                full_max()
            } else {
                best
            }
        }
        None => full_max(),
    };
    reward + gamma * max
}

/// One stored step of experience.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// The idle view that will mask the next selection; only consulted when
    /// targets are masked.
    pub next_idle: SensingRow,
}

/// Bounded FIFO of transitions with uniform with-replacement sampling.
#[derive(Debug)]
pub struct ReplayMemory {
    capacity: usize,
    buf: VecDeque<Transition>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        ReplayMemory {
            capacity: capacity.max(1),
            buf: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Appends, evicting the oldest transition once full.
    pub fn push(&mut self, t: Transition) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(t);
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> &Transition {
        &self.buf[rng.random_range(0..self.buf.len())]
    }

    pub fn oldest(&self) -> Option<&Transition> {
        self.buf.front()
    }

    pub fn latest(&self) -> Option<&Transition> {
        self.buf.back()
    }
}

/// Training hyper-parameters for the learning leader.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrlHyperParams {
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon_init: f64,
    pub epsilon_min: f64,
    pub epsilon_decay: f64,
    /// Periods between epsilon decay steps.
    pub decay_interval_periods: u32,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// L2 cap on the batch gradient before the descent step. The quadratic
    /// loss drives Q toward 1/(1-discount); by then the unclipped effective
    /// step 2 * learning_rate * |grad Q|^2 exceeds the overshoot threshold
    /// and every run blows up to non-finite loss, so the cap is on by
    /// default. The default is sized to engage only on shock errors: a cap
    /// tight enough to bind on everyday corrections slows the retreat from
    /// a newly contested block to tens of periods, long enough for the
    /// contender to leave on its own. None applies the raw gradient.
    pub grad_clip_norm: Option<f64>,
}

impl Default for DrlHyperParams {
    fn default() -> Self {
        DrlHyperParams {
            learning_rate: 0.01,
            discount: 0.9,
            epsilon_init: 1.0,
            epsilon_min: 0.0,
            epsilon_decay: 0.5,
            decay_interval_periods: 500,
            replay_capacity: 1000,
            batch_size: 1,
            grad_clip_norm: Some(10.0),
        }
    }
}

impl DrlHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::Config("discount must lie in [0, 1]".into()));
        }
        for (v, name) in [
            (self.epsilon_init, "epsilon_init"),
            (self.epsilon_min, "epsilon_min"),
            (self.epsilon_decay, "epsilon_decay"),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.decay_interval_periods == 0 {
            return Err(Error::Config("decay_interval_periods must be positive".into()));
        }
        if self.replay_capacity == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "replay_capacity and batch_size must be positive".into(),
            ));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config("grad_clip_norm must be positive".into()));
            }
        }
        Ok(())
    }
}

/// How training batches are drawn from the replay memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplaySampling {
    /// First batch slot is the transition just stored; any remaining slots
    /// are uniform draws. Fresh delivery feedback reaches the values the
    /// same period, so the leader escapes a newly contested block within a
    /// few periods instead of sitting out the whole burst.
    #[default]
    Latest,
    /// Every slot is a uniform with-replacement draw. A fresh loss burst is
    /// revisited once per memory length on average, far slower than the
    /// burst itself.
    Uniform,
}

impl fmt::Display for ReplaySampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReplaySampling::Latest => "latest",
            ReplaySampling::Uniform => "uniform",
        })
    }
}

impl FromStr for ReplaySampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latest" => Ok(ReplaySampling::Latest),
            "uniform" => Ok(ReplaySampling::Uniform),
            other => Err(Error::Config(format!(
                "unknown replay sampling '{other}' (expected latest or uniform)"
            ))),
        }
    }
}

/// Behavior switches that are not plain hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrlOptions {
    /// Restrict the bootstrap max to the next idle set.
    pub masked_td_target: bool,
    /// Carry trained weights from one run to the next within a point
    /// instead of re-initializing.
    pub persist_weights: bool,
    pub replay_sampling: ReplaySampling,
}

/// One minibatch step on the squared TD error, batch drawn per
/// `opts.replay_sampling`. Returns the batch loss re-evaluated after the
/// update. No-op on an empty memory.
pub fn train_step(
    net: &mut QNetwork,
    memory: &ReplayMemory,
    hyper: &DrlHyperParams,
    opts: &DrlOptions,
    rng: &mut ChaCha12Rng,
    grads: &mut Vec<f64>,
) -> Result<f64> {
    if memory.is_empty() {
        return Ok(0.0);
    }
    grads.clear();
    grads.resize(net.num_params(), 0.0);
    let mut batch = Vec::with_capacity(hyper.batch_size);
    for slot in 0..hyper.batch_size {
        let t = match opts.replay_sampling {
            ReplaySampling::Latest if slot == 0 => memory.latest().expect("memory nonempty"),
            _ => memory.sample(rng),
        };
        batch.push(t);
    }
    for t in &batch {
        let mask = opts.masked_td_target.then_some(&t.next_idle);
        let target = td_target(t.reward, &net.forward(&t.next_state), hyper.discount, mask);
        let trace = net.forward_trace(&t.state);
        let pred = trace.out[t.action];
        if !target.is_finite() || !pred.is_finite() {
            return Err(Error::Training(format!(
                "non-finite TD pair: target {target}, prediction {pred}"
            )));
        }
        net.accumulate_grad(&trace, t.action, 2.0 * (pred - target), grads);
    }
    if let Some(cap) = hyper.grad_clip_norm {
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > cap {
            let scale = cap / norm;
            for g in grads.iter_mut() {
                *g *= scale;
            }
        }
    }
    net.sgd_step(grads, hyper.learning_rate);

    let mut loss = 0.0;
    for t in &batch {
        let mask = opts.masked_td_target.then_some(&t.next_idle);
        let target = td_target(t.reward, &net.forward(&t.next_state), hyper.discount, mask);
        let pred = net.forward(&t.state)[t.action];
        loss += (target - pred) * (target - pred);
    }
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite loss {loss}")));
    }
    Ok(loss)
}

/// Per-period training curve sample.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurvePoint {
    pub period: u64,
    pub loss: f64,
    /// Collision rate over the trailing [`DrlAgent::CURVE_WINDOW`] periods.
    pub rolling_collision_rate: f64,
}

/// The learning leader.
pub struct DrlAgent {
    net: QNetwork,
    memory: ReplayMemory,
    history: VecDeque<ActionObservation>,
    hyper: DrlHyperParams,
    opts: DrlOptions,
    epsilon: f64,
    periods_seen: u64,
    prev_vrb: usize,
    saturation_fallbacks: u64,
    rng: ChaCha12Rng,
    grads: Vec<f64>,
    curve: Option<(Vec<CurvePoint>, VecDeque<bool>)>,
}

impl DrlAgent {
    pub const CURVE_WINDOW: usize = 200;

    /// Builds the agent for one run: exploration stream and weight
    /// initialization both derive from (seed, run_index).
    pub fn new(
        arch: QnnArchitecture,
        hyper: DrlHyperParams,
        opts: DrlOptions,
        seed: u64,
        run_index: u64,
        initial_vrb: usize,
    ) -> Result<Self> {
        hyper.validate()?;
        let mut init_rng = rng::stream(seed, run_index, rng::STREAM_NET_INIT);
        let net = QNetwork::new(arch, &mut init_rng)?;
        Ok(DrlAgent {
            memory: ReplayMemory::new(hyper.replay_capacity),
            history: VecDeque::with_capacity(arch.history_len),
            epsilon: hyper.epsilon_init,
            hyper,
            opts,
            periods_seen: 0,
            prev_vrb: initial_vrb,
            saturation_fallbacks: 0,
            rng: rng::stream(seed, run_index, rng::STREAM_AGENT),
            grads: Vec::new(),
            curve: None,
            net,
        })
    }

    /// Reuses trained weights for a fresh run, resetting everything episodic
    /// (history, memory, exploration schedule).
    pub fn reset_for_run(&mut self, seed: u64, run_index: u64, initial_vrb: usize) {
        self.memory = ReplayMemory::new(self.hyper.replay_capacity);
        self.history.clear();
        self.epsilon = self.hyper.epsilon_init;
        self.periods_seen = 0;
        self.prev_vrb = initial_vrb;
        self.saturation_fallbacks = 0;
        self.rng = rng::stream(seed, run_index, rng::STREAM_AGENT);
        if let Some((points, window)) = &mut self.curve {
            points.clear();
            window.clear();
        }
    }

    pub fn net(&self) -> &QNetwork {
        &self.net
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn saturation_fallbacks(&self) -> u64 {
        self.saturation_fallbacks
    }

    pub fn record_curve(&mut self) {
        self.curve = Some((Vec::new(), VecDeque::with_capacity(Self::CURVE_WINDOW)));
    }

    pub fn take_curve(&mut self) -> Option<Vec<CurvePoint>> {
        self.curve.take().map(|(points, _)| points)
    }

    pub fn hyper(&self) -> &DrlHyperParams {
        &self.hyper
    }

    fn encoded_state(&self) -> Vec<f64> {
        encode_state(&self.history, self.net.arch().history_len, self.net.arch().actions)
    }

    /// Runs one full period: observe, select, transmit, learn.
    pub fn episode_step(&mut self, world: &mut World) -> Result<PeriodOutcome> {
        let m = self.net.arch().history_len;
        let row = world.pl_sensing_row();
        let idle = idle_action_set(&row);
        let state = self.encoded_state();
        let values = self.net.forward(&state);
        let action = match select_action(&values, &idle, self.epsilon, &mut self.rng) {
            Some(a) => a,
            None => {
                self.saturation_fallbacks += 1;
                self.prev_vrb
            }
        };

        let outcome = world.step_period(action)?;
        let obs = if outcome.collided {
            Observation::Nack
        } else {
            Observation::Ack
        };
        let r = reward(obs);

        if self.history.len() == m {
            self.history.pop_front();
        }
        self.history.push_back((action, obs));

        let next_state = self.encoded_state();
        let next_idle = world.pl_sensing_row();
        self.memory.push(Transition {
            state,
            action,
            reward: r,
            next_state,
            next_idle,
        });

        let loss = train_step(
            &mut self.net,
            &self.memory,
            &self.hyper,
            &self.opts,
            &mut self.rng,
            &mut self.grads,
        )?;

        self.periods_seen += 1;
        if self
            .periods_seen
            .is_multiple_of(u64::from(self.hyper.decay_interval_periods))
        {
            self.epsilon = (self.epsilon * self.hyper.epsilon_decay).max(self.hyper.epsilon_min);
        }
        self.prev_vrb = action;

        if let Some((points, window)) = &mut self.curve {
            if window.len() == Self::CURVE_WINDOW {
                window.pop_front();
            }
            window.push_back(outcome.collided);
            let rate = window.iter().filter(|&&c| c).count() as f64 / window.len() as f64;
            points.push(CurvePoint {
                period: outcome.period,
                loss,
                rolling_collision_rate: rate,
            });
        }
        Ok(outcome)
    }
}

/// The baseline leader: a fresh uniform idle pick every period.
pub struct RandomLeader {
    prev_vrb: usize,
    saturation_fallbacks: u64,
    rng: ChaCha12Rng,
}

impl RandomLeader {
    pub fn new(seed: u64, run_index: u64, initial_vrb: usize) -> Self {
        RandomLeader {
            prev_vrb: initial_vrb,
            saturation_fallbacks: 0,
            rng: rng::stream(seed, run_index, rng::STREAM_AGENT),
        }
    }

    pub fn saturation_fallbacks(&self) -> u64 {
        self.saturation_fallbacks
    }

    pub fn episode_step(&mut self, world: &mut World) -> Result<PeriodOutcome> {
        let row = world.pl_sensing_row();
        let idle = idle_action_set(&row);
        let (action, saturated) = random_select(&idle, self.prev_vrb, &mut self.rng);
        self.saturation_fallbacks += u64::from(saturated);
        let outcome = world.step_period(action)?;
        self.prev_vrb = action;
        Ok(outcome)
    }
}
