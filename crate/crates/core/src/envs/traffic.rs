//! Store-and-forward traffic grid.
//!
//! Every intersection has six incoming lanes and picks one of five signal
//! phases per step. Vehicles follow precomputed routes from a boundary
//! origin to a boundary destination; a served lane releases up to
//! `saturation` vehicles per step into the next lane of each vehicle's route
//! (or out of the network). Switching phase costs one step of service.

use std::collections::{BTreeMap, VecDeque};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{check_actions, Environment, Lifecycle, StepOutcome};
use crate::dccp::AgentTopology;
use crate::error::{config_err, Result};

/// Direction of travel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub fn opposite(self) -> Self {
        match self {
            Heading::North => Heading::South,
            Heading::East => Heading::West,
            Heading::South => Heading::North,
            Heading::West => Heading::East,
        }
    }
}

/// Incoming lane, named by the side vehicles approach from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Lane {
    /// From the west, straight or right.
    WestStraight,
    WestLeft,
    EastStraight,
    EastLeft,
    /// From the north, every movement.
    North,
    South,
}

pub const LANES_PER_INTERSECTION: usize = 6;

pub const LANES: [Lane; LANES_PER_INTERSECTION] = [
    Lane::WestStraight,
    Lane::WestLeft,
    Lane::EastStraight,
    Lane::EastLeft,
    Lane::North,
    Lane::South,
];

impl Lane {
    pub fn index(self) -> usize {
        self as usize
    }

    /// Lane used by a vehicle travelling `incoming` that leaves heading `outgoing`.
    fn for_movement(incoming: Heading, outgoing: Heading) -> Lane {
        match incoming {
            Heading::East if outgoing == Heading::North => Lane::WestLeft,
            Heading::East => Lane::WestStraight,
            Heading::West if outgoing == Heading::South => Lane::EastLeft,
            Heading::West => Lane::EastStraight,
            Heading::South => Lane::North,
            Heading::North => Lane::South,
        }
    }
}

/// Signal phases, in action-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    EwStraight,
    EwLeft,
    WestAll,
    EastAll,
    NorthSouth,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::EwStraight,
        Phase::EwLeft,
        Phase::WestAll,
        Phase::EastAll,
        Phase::NorthSouth,
    ];

    pub fn from_index(a: usize) -> Option<Phase> {
        Self::ALL.get(a).copied()
    }

    pub fn served_lanes(self) -> [Lane; 2] {
        match self {
            Phase::EwStraight => [Lane::WestStraight, Lane::EastStraight],
            Phase::EwLeft => [Lane::WestLeft, Lane::EastLeft],
            Phase::WestAll => [Lane::WestStraight, Lane::WestLeft],
            Phase::EastAll => [Lane::EastStraight, Lane::EastLeft],
            Phase::NorthSouth => [Lane::North, Lane::South],
        }
    }
}

/// A point on the grid boundary: `side` of the grid, `index` the row (for
/// east/west) or column (for north/south).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundary {
    pub side: Heading,
    pub index: usize,
}

impl Boundary {
    pub fn new(side: Heading, index: usize) -> Self {
        Self { side, index }
    }
}

/// Piecewise-linear arrival rate (vehicles per step) through `(step, rate)`
/// points, held constant outside the first and last point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RateSchedule {
    pub points: Vec<(f64, f64)>,
}

impl RateSchedule {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        let s = Self { points };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(rate: f64) -> Self {
        Self {
            points: vec![(0.0, rate)],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(config_err("rate schedule needs at least one point"));
        }
        if self.points.iter().any(|&(t, r)| !t.is_finite() || !r.is_finite() || r < 0.0) {
            return Err(config_err("rate schedule points must be finite with non-negative rates"));
        }
        if self.points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(config_err("rate schedule times must be strictly increasing"));
        }
        Ok(())
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        let p = &self.points;
        if t <= p[0].0 {
            return p[0].1;
        }
        for w in p.windows(2) {
            let ((t0, r0), (t1, r1)) = (w[0], w[1]);
            if t <= t1 {
                return r0 + (r1 - r0) * (t - t0) / (t1 - t0);
            }
        }
        p[p.len() - 1].1
    }
}

/// A group of origin-destination pairs sharing one rate schedule. Each pair
/// draws its own Poisson arrivals every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub name: String,
    pub schedule: RateSchedule,
    pub od_pairs: Vec<(Boundary, Boundary)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    pub rows: usize,
    pub cols: usize,
    pub horizon: usize,
    /// Vehicles a served lane releases per step.
    pub saturation: usize,
    /// Weight of head-of-queue delay in the reward.
    pub delay_weight: f64,
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    pub flows: Vec<FlowConfig>,
}

fn default_patch() -> usize {
    3
}

impl Default for TrafficConfig {
    /// The 3x3 lite grid: a main-street group entering from the east/west
    /// edges and an avenue group entering from the north/south edges, each
    /// with a triangular peak, the avenue peak arriving later. Peak demand
    /// is enough to keep queues standing under fixed-cycle control.
    fn default() -> Self {
        use Heading::*;
        let b = Boundary::new;
        Self {
            rows: 3,
            cols: 3,
            horizon: 144,
            saturation: 2,
            delay_weight: 0.2,
            patch_size: 3,
            flows: vec![
                FlowConfig {
                    name: "main".into(),
                    schedule: RateSchedule {
                        points: vec![(0.0, 0.3), (36.0, 1.1), (72.0, 0.3)],
                    },
                    od_pairs: vec![(b(West, 1), b(East, 1)), (b(West, 2), b(North, 1)), (b(East, 0), b(South, 0))],
                },
                FlowConfig {
                    name: "avenue".into(),
                    schedule: RateSchedule {
                        points: vec![(0.0, 0.3), (60.0, 1.0), (100.0, 0.3)],
                    },
                    od_pairs: vec![(b(North, 1), b(South, 1)), (b(South, 2), b(West, 0)), (b(North, 0), b(East, 2))],
                },
            ],
        }
    }
}

impl TrafficConfig {
    /// A grid with no flows; vehicles can still be injected by hand.
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            flows: Vec::new(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Vehicle {
    route: usize,
    leg: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub origin: Boundary,
    pub destination: Boundary,
    /// `(intersection, lane)` in travel order.
    pub legs: Vec<(usize, Lane)>,
}

/// Cells visited from `origin` to `destination`, horizontal moves first when
/// `row_first`, each with the heading it is entered with and left with.
fn plan_route(rows: usize, cols: usize, origin: Boundary, destination: Boundary) -> Result<Vec<((usize, usize), Heading, Heading)>> {
    let cell_of = |b: Boundary, entering: bool| -> Result<((usize, usize), Heading)> {
        let limit = match b.side {
            Heading::East | Heading::West => rows,
            Heading::North | Heading::South => cols,
        };
        if b.index >= limit {
            return Err(config_err(format!("boundary {b:?} is outside a {rows}x{cols} grid")));
        }
        let cell = match b.side {
            Heading::West => (b.index, 0),
            Heading::East => (b.index, cols - 1),
            Heading::North => (0, b.index),
            Heading::South => (rows - 1, b.index),
        };
        // Entering from the west edge means travelling east, and so on.
        let heading = if entering { b.side.opposite() } else { b.side };
        Ok((cell, heading))
    };
    let (start, entry_heading) = cell_of(origin, true)?;
    let (end, exit_heading) = cell_of(destination, false)?;
    let row_first = matches!(origin.side, Heading::East | Heading::West);

    let mut cells = vec![start];
    let mut headings = vec![entry_heading];
    let mut cur = start;
    let mut walk = |horizontal: bool, cells: &mut Vec<(usize, usize)>, headings: &mut Vec<Heading>| {
        if horizontal {
            while cur.1 != end.1 {
                let h = if end.1 > cur.1 { Heading::East } else { Heading::West };
                cur.1 = if h == Heading::East { cur.1 + 1 } else { cur.1 - 1 };
                cells.push(cur);
                headings.push(h);
            }
        } else {
            while cur.0 != end.0 {
                let h = if end.0 > cur.0 { Heading::South } else { Heading::North };
                cur.0 = if h == Heading::South { cur.0 + 1 } else { cur.0 - 1 };
                cells.push(cur);
                headings.push(h);
            }
        }
    };
    walk(row_first, &mut cells, &mut headings);
    walk(!row_first, &mut cells, &mut headings);

    let mut out = Vec::with_capacity(cells.len());
    for (k, &cell) in cells.iter().enumerate() {
        let incoming = headings[k];
        let outgoing = headings.get(k + 1).copied().unwrap_or(exit_heading);
        if outgoing == incoming.opposite() {
            return Err(config_err(format!(
                "route {origin:?} -> {destination:?} needs a U-turn at {cell:?}"
            )));
        }
        out.push((cell, incoming, outgoing));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrafficGridLite {
    config: TrafficConfig,
    topology: AgentTopology,
    routes: Vec<Route>,
    /// Route indices per flow group, parallel to `config.flows[g].od_pairs`.
    flow_routes: Vec<Vec<usize>>,
    queues: Vec<VecDeque<Vehicle>>,
    wait: Vec<u64>,
    phases: Vec<Option<Phase>>,
    rng: ChaCha8Rng,
    t: usize,
    lifecycle: Lifecycle,
    arrived: u64,
    exited: u64,
    queue_sum: f64,
    delay_sum: f64,
    reward_sum: f64,
}

impl TrafficGridLite {
    pub fn new(config: TrafficConfig) -> Result<Self> {
        if config.horizon == 0 {
            return Err(config_err("traffic horizon must be positive"));
        }
        if config.saturation == 0 {
            return Err(config_err("saturation must be positive"));
        }
        if !(config.delay_weight.is_finite() && config.delay_weight >= 0.0) {
            return Err(config_err("delay weight must be finite and non-negative"));
        }
        let topology = AgentTopology::full_grid(config.rows, config.cols, config.patch_size)?;
        let mut routes = Vec::new();
        let mut flow_routes = Vec::new();
        for flow in &config.flows {
            flow.schedule.validate()?;
            let mut ids = Vec::new();
            for &(origin, destination) in &flow.od_pairs {
                let legs = plan_route(config.rows, config.cols, origin, destination)?
                    .into_iter()
                    .map(|((r, c), inc, out)| (r * config.cols + c, Lane::for_movement(inc, out)))
                    .collect();
                ids.push(routes.len());
                routes.push(Route {
                    origin,
                    destination,
                    legs,
                });
            }
            flow_routes.push(ids);
        }
        let lanes = topology.num_agents() * LANES_PER_INTERSECTION;
        Ok(Self {
            topology,
            routes,
            flow_routes,
            queues: vec![VecDeque::new(); lanes],
            wait: vec![0; lanes],
            phases: vec![None; config.rows * config.cols],
            rng: ChaCha8Rng::seed_from_u64(0),
            t: 0,
            lifecycle: Lifecycle::Fresh,
            arrived: 0,
            exited: 0,
            queue_sum: 0.0,
            delay_sum: 0.0,
            reward_sum: 0.0,
            config,
        })
    }

    pub fn config(&self) -> &TrafficConfig {
        &self.config
    }

    pub fn routes(&self) -> &[Route] {
        &self.routes
    }

    /// Arrival rate of flow group `group` at step `t`.
    pub fn arrival_rate(&self, group: usize, t: usize) -> f64 {
        self.config.flows[group].schedule.rate_at(t as f64)
    }

    #[inline]
    fn lane_slot(intersection: usize, lane: Lane) -> usize {
        intersection * LANES_PER_INTERSECTION + lane.index()
    }

    pub fn queue_len(&self, intersection: usize, lane: Lane) -> usize {
        self.queues[Self::lane_slot(intersection, lane)].len()
    }

    pub fn wait_clock(&self, intersection: usize, lane: Lane) -> u64 {
        self.wait[Self::lane_slot(intersection, lane)]
    }

    pub fn phase(&self, intersection: usize) -> Option<Phase> {
        self.phases[intersection]
    }

    pub fn step_index(&self) -> usize {
        self.t
    }

    pub fn vehicles_arrived(&self) -> u64 {
        self.arrived
    }

    pub fn vehicles_exited(&self) -> u64 {
        self.exited
    }

    pub fn vehicles_queued(&self) -> u64 {
        self.queues.iter().map(|q| q.len() as u64).sum()
    }

    /// Places one vehicle at the start of `route`, counted as an arrival.
    pub fn inject_vehicle(&mut self, route: usize) -> Result<()> {
        let r = self
            .routes
            .get(route)
            .ok_or_else(|| config_err(format!("no route {route}")))?;
        let (i, lane) = r.legs[0];
        self.queues[Self::lane_slot(i, lane)].push_back(Vehicle { route, leg: 0 });
        self.arrived += 1;
        Ok(())
    }

    fn observe(&self) -> Array2<f64> {
        let n = self.topology.num_agents();
        let mut obs = Array2::zeros((n, 2 * LANES_PER_INTERSECTION));
        for i in 0..n {
            for lane in LANES {
                let slot = Self::lane_slot(i, lane);
                obs[[i, 2 * lane.index()]] = self.wait[slot] as f64;
                obs[[i, 2 * lane.index() + 1]] = self.queues[slot].len() as f64;
            }
        }
        obs
    }

    fn rewards(&self) -> Vec<f64> {
        (0..self.topology.num_agents())
            .map(|i| {
                -LANES
                    .iter()
                    .map(|&lane| {
                        let slot = Self::lane_slot(i, lane);
                        self.queues[slot].len() as f64 + self.config.delay_weight * self.wait[slot] as f64
                    })
                    .sum::<f64>()
            })
            .collect()
    }

    fn arrivals(&mut self) {
        for g in 0..self.flow_routes.len() {
            let rate = self.arrival_rate(g, self.t);
            if rate <= 0.0 {
                continue;
            }
            let dist = Poisson::new(rate).expect("validated positive rate");
            for k in 0..self.flow_routes[g].len() {
                let route = self.flow_routes[g][k];
                let count = dist.sample(&mut self.rng) as u64;
                let (i, lane) = self.routes[route].legs[0];
                let q = &mut self.queues[Self::lane_slot(i, lane)];
                for _ in 0..count {
                    q.push_back(Vehicle { route, leg: 0 });
                }
                self.arrived += count;
            }
        }
    }
}

impl Environment for TrafficGridLite {
    fn topology(&self) -> &AgentTopology {
        &self.topology
    }

    fn obs_size(&self) -> usize {
        2 * LANES_PER_INTERSECTION
    }

    fn num_actions(&self) -> usize {
        Phase::ALL.len()
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn bootstrap_at_horizon(&self) -> bool {
        true
    }

    fn reset(&mut self, seed: u64) -> Array2<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.queues.iter_mut().for_each(VecDeque::clear);
        self.wait.fill(0);
        self.phases.fill(None);
        self.t = 0;
        self.lifecycle = Lifecycle::Running;
        self.arrived = 0;
        self.exited = 0;
        self.queue_sum = 0.0;
        self.delay_sum = 0.0;
        self.reward_sum = 0.0;
        self.observe()
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepOutcome> {
        self.lifecycle.check_step()?;
        let n = self.topology.num_agents();
        check_actions(actions, n, Phase::ALL.len())?;

        self.arrivals();

        let mut released = vec![false; self.queues.len()];
        let mut moves = Vec::new();
        for (i, &a) in actions.iter().enumerate() {
            let phase = Phase::ALL[a];
            let switching = self.phases[i].is_some_and(|p| p != phase);
            self.phases[i] = Some(phase);
            if switching {
                continue;
            }
            for lane in phase.served_lanes() {
                let slot = Self::lane_slot(i, lane);
                let count = self.config.saturation.min(self.queues[slot].len());
                for _ in 0..count {
                    let mut v = self.queues[slot].pop_front().expect("counted");
                    v.leg += 1;
                    match self.routes[v.route].legs.get(v.leg) {
                        Some(&(j, next)) => moves.push((Self::lane_slot(j, next), v)),
                        None => self.exited += 1,
                    }
                }
                released[slot] = count > 0;
            }
        }
        for (slot, v) in moves {
            self.queues[slot].push_back(v);
        }
        for (slot, w) in self.wait.iter_mut().enumerate() {
            *w = if released[slot] || self.queues[slot].is_empty() {
                0
            } else {
                *w + 1
            };
        }

        let rewards = self.rewards();
        let lanes = self.queues.len() as f64;
        self.queue_sum += self.queues.iter().map(|q| q.len() as f64).sum::<f64>() / lanes;
        self.delay_sum += self.wait.iter().map(|&w| w as f64).sum::<f64>() / lanes;
        self.reward_sum += rewards.iter().sum::<f64>() / n as f64;
        self.t += 1;
        let done = self.t >= self.config.horizon;
        if done {
            self.lifecycle = Lifecycle::Done;
        }
        Ok(StepOutcome {
            observations: self.observe(),
            rewards,
            done,
        })
    }

    /// Per-lane averages over the steps taken so far.
    fn metrics(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        if self.t > 0 {
            let t = self.t as f64;
            m.insert("avg_queue_len".to_string(), self.queue_sum / t);
            m.insert("avg_time_delay".to_string(), self.delay_sum / t);
            m.insert("mean_reward".to_string(), self.reward_sum / t);
        }
        m.insert("vehicles_arrived".to_string(), self.arrived as f64);
        m.insert("vehicles_exited".to_string(), self.exited as f64);
        m
    }

    fn queue_totals(&self) -> Option<Vec<f64>> {
        Some(
            self.queues
                .chunks(LANES_PER_INTERSECTION)
                .map(|lanes| lanes.iter().map(|q| q.len() as f64).sum())
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Heading::*;

    fn single() -> TrafficGridLite {
        let mut cfg = TrafficConfig::empty(1, 1);
        cfg.flows.push(FlowConfig {
            name: "probe".into(),
            schedule: RateSchedule::constant(0.0),
            od_pairs: vec![(Boundary::new(West, 0), Boundary::new(East, 0))],
        });
        TrafficGridLite::new(cfg).unwrap()
    }

    #[test]
    fn reset_gives_zero_observations_of_expected_width() {
        let mut env = TrafficGridLite::new(TrafficConfig::default()).unwrap();
        for seed in [0, 1, 99] {
            let obs = env.reset(seed);
            assert_eq!(obs.dim(), (9, 12));
            assert!(obs.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn empty_network_gives_zero_rewards() {
        let mut env = TrafficGridLite::new(TrafficConfig::empty(2, 2)).unwrap();
        env.reset(0);
        for a in 0..5 {
            let out = env.step(&[a; 4]).unwrap();
            assert_eq!(out.rewards, vec![0.0; 4]);
        }
    }

    #[test]
    fn one_vehicle_clears_on_ew_straight() {
        let mut env = single();
        env.reset(0);
        env.inject_vehicle(0).unwrap();
        assert_eq!(env.queue_len(0, Lane::WestStraight), 1);
        let out = env.step(&[Phase::EwStraight as usize]).unwrap();
        assert_eq!(env.queue_len(0, Lane::WestStraight), 0);
        assert_eq!(out.rewards, vec![0.0]);
        assert_eq!(env.vehicles_exited(), 1);
    }

    #[test]
    fn queue_three_wait_five_scores_minus_four() {
        let mut env = single();
        env.reset(0);
        for _ in 0..3 {
            env.inject_vehicle(0).unwrap();
        }
        let mut last = Vec::new();
        for _ in 0..5 {
            last = env.step(&[Phase::NorthSouth as usize]).unwrap().rewards;
        }
        assert_eq!(env.queue_len(0, Lane::WestStraight), 3);
        assert_eq!(env.wait_clock(0, Lane::WestStraight), 5);
        assert!((last[0] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn switching_forfeits_one_step_of_service() {
        let mut env = single();
        env.reset(0);
        for _ in 0..4 {
            env.inject_vehicle(0).unwrap();
        }
        env.step(&[Phase::NorthSouth as usize]).unwrap();
        env.step(&[Phase::EwStraight as usize]).unwrap();
        assert_eq!(env.queue_len(0, Lane::WestStraight), 4);
        env.step(&[Phase::EwStraight as usize]).unwrap();
        assert_eq!(env.queue_len(0, Lane::WestStraight), 2);
        assert_eq!(env.wait_clock(0, Lane::WestStraight), 0);
    }

    #[test]
    fn routes_use_expected_lanes() {
        let env = TrafficGridLite::new(TrafficConfig::default()).unwrap();
        let r = &env.routes()[1]; // west of row 2 to north of column 1
        assert_eq!(r.legs, vec![(6, Lane::WestStraight), (7, Lane::WestLeft), (4, Lane::South), (1, Lane::South)]);
        let r = &env.routes()[2]; // east of row 0 to south of column 0
        assert_eq!(r.legs, vec![(2, Lane::EastStraight), (1, Lane::EastStraight), (0, Lane::EastLeft), (3, Lane::North), (6, Lane::North)]);
        let r = &env.routes()[4]; // south of column 2 to west of row 0
        assert_eq!(r.legs, vec![(8, Lane::South), (5, Lane::South), (2, Lane::South), (1, Lane::EastStraight), (0, Lane::EastStraight)]);
    }

    #[test]
    fn u_turn_routes_rejected() {
        let mut cfg = TrafficConfig::empty(2, 2);
        cfg.flows.push(FlowConfig {
            name: "bad".into(),
            schedule: RateSchedule::constant(0.1),
            od_pairs: vec![(Boundary::new(West, 0), Boundary::new(West, 0))],
        });
        assert!(TrafficGridLite::new(cfg).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = TrafficConfig::default();
        cfg.saturation = 0;
        assert!(TrafficGridLite::new(cfg).is_err());
        let mut cfg = TrafficConfig::default();
        cfg.flows[0].od_pairs.push((Boundary::new(West, 7), Boundary::new(East, 0)));
        assert!(TrafficGridLite::new(cfg).is_err());
        assert!(RateSchedule::new(vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(RateSchedule::new(vec![(0.0, -1.0)]).is_err());
    }

    #[test]
    fn bad_actions_and_lifecycle_rejected() {
        let mut env = TrafficGridLite::new(TrafficConfig::default()).unwrap();
        assert!(env.step(&[0; 9]).is_err());
        env.reset(0);
        assert!(env.step(&[5; 9]).is_err());
        assert!(env.step(&[0; 8]).is_err());
    }
}
