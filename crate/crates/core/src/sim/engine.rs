use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::time::Instant;

use super::{
    encode_route_as_udp_port, FlowRecord, JobStats, MetricsRecord, RuntimeSample, Scenario, SimError, SimOutput,
    UDP_PORT_BASE,
};
use crate::rates::waterfill_links;
use crate::routing::{assign, ecmp_spine, Scheme, SchemeParams};
use crate::topology::{ClosTopology, Route, RouteKind};
use crate::workload::{
    build_rings, compute_phase_duration, ring_allreduce_commodities, CommoditySpec, Occupancy, Ring,
};

/// A flow is done once this fraction of its volume is left.
const DONE_FRACTION: f64 = 1e-9;
/// ...or once it would finish within this many seconds at its current rate.
const DONE_SECONDS: f64 = 1e-12;
/// Relative slack for capacity checks.
const CAPACITY_TOLERANCE: f64 = 1e-9;
/// Relative slack for volume conservation.
const CONSERVATION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    ControllerDecision,
    ComputeDone(usize),
    JobArrival(usize),
    SpineFailure(usize),
}

impl EventKind {
    /// Tie-break rank at equal timestamps; flow completions (rank 0) are not queued.
    fn rank(&self) -> u8 {
        match self {
            EventKind::ControllerDecision => 1,
            EventKind::ComputeDone(_) => 2,
            EventKind::JobArrival(_) => 3,
            EventKind::SpineFailure(_) => 4,
        }
    }
}

#[derive(Debug)]
struct Queued {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.kind.rank().cmp(&self.kind.rank()))
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    Waiting { ready_at: f64 },
    Active,
    Done,
}

#[derive(Debug)]
struct Flow {
    spec: CommoditySpec,
    job: usize,
    elephant: bool,
    status: Status,
    route: Option<Route>,
    links: Vec<usize>,
    remaining_bits: f64,
    delivered_bits: f64,
    rate: f64,
    start: f64,
    min_rate: f64,
}

impl Flow {
    fn transmitting(&self) -> bool {
        self.status == Status::Active && !self.links.is_empty()
    }
}

#[derive(Debug)]
struct JobState {
    rings: Vec<Ring>,
    compute: f64,
    iteration: usize,
    iterations: usize,
    comm_start: f64,
    outstanding: usize,
    finished: Vec<FlowRecord>,
    max_load: u32,
}

struct Engine<'a> {
    scenario: &'a Scenario,
    topo: ClosTopology,
    live_spines: Vec<usize>,
    now: f64,
    queue: BinaryHeap<Queued>,
    seq: u64,
    flows: Vec<Flow>,
    /// Flows not yet done, in creation order.
    live: Vec<usize>,
    jobs: Vec<JobState>,
    decisions: BTreeSet<u64>,
    output: SimOutput,
}

/// Runs a scenario to completion.
pub fn run_scenario(scenario: &Scenario) -> Result<SimOutput, SimError> {
    let topo = scenario.topology.clone();
    let controller = &scenario.controller;
    if !(controller.reaction_latency >= 0.0) || !controller.reaction_latency.is_finite() {
        return Err(SimError::Config("reaction_latency must be a non-negative number".into()));
    }
    let mut occupancy = Occupancy::new(&topo);
    let mut jobs = Vec::with_capacity(scenario.jobs.len());
    for job in &scenario.jobs {
        if job.num_iterations == 0 {
            return Err(SimError::Config(format!("{}: num_iterations must be at least 1", job.id)));
        }
        if !(job.arrival_time >= 0.0) || !job.arrival_time.is_finite() {
            return Err(SimError::Config(format!("{}: arrival_time must be a non-negative number", job.id)));
        }
        occupancy.claim(&job.placement)?;
        jobs.push(JobState {
            rings: build_rings(job)?,
            compute: compute_phase_duration(&job.model, job.dp, &scenario.hardware)?,
            iteration: 0,
            iterations: job.num_iterations,
            comm_start: 0.0,
            outstanding: 0,
            finished: Vec::new(),
            max_load: 0,
        });
    }

    let mut engine = Engine {
        scenario,
        live_spines: topo.live_spines(),
        topo,
        now: 0.0,
        queue: BinaryHeap::new(),
        seq: 0,
        flows: Vec::new(),
        live: Vec::new(),
        jobs,
        decisions: BTreeSet::new(),
        output: SimOutput::default(),
    };
    for (i, job) in scenario.jobs.iter().enumerate() {
        engine.schedule(job.arrival_time, EventKind::JobArrival(i));
    }
    if let Some(plan) = &scenario.failures {
        for (i, ev) in plan.events.iter().enumerate() {
            if !(ev.time >= 0.0) || !ev.time.is_finite() {
                return Err(SimError::Config("failure time must be a non-negative number".into()));
            }
            engine.schedule(ev.time, EventKind::SpineFailure(i));
        }
    }
    engine.run()?;

    let mut out = engine.output;
    out.job_stats = scenario
        .jobs
        .iter()
        .zip(&engine.jobs)
        .map(|(j, s)| JobStats { job_id: j.id, max_link_load: s.max_load })
        .collect();
    out.final_failed_spines = engine.topo.failed_spines().iter().copied().collect();
    out.end_time = engine.now;
    Ok(out)
}

impl Engine<'_> {
    fn schedule(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Queued { time, seq: self.seq, kind });
    }

    fn schedule_decision(&mut self, time: f64) {
        if self.decisions.insert(time.to_bits()) {
            self.schedule(time, EventKind::ControllerDecision);
        }
    }

    fn controller_routes_elephants(&self) -> bool {
        self.scenario.controller.scheme != Scheme::Ecmp
    }

    fn invariant(&self, what: String) -> SimError {
        SimError::Invariant { time: self.now, what }
    }

    fn run(&mut self) -> Result<(), SimError> {
        loop {
            let next_event = self.queue.peek().map(|e| e.time);
            let next_completion = self
                .live
                .iter()
                .map(|&f| &self.flows[f])
                .filter(|f| f.transmitting())
                .map(|f| f.remaining_bits / f.rate)
                .min_by(f64::total_cmp);
            match (next_completion, next_event) {
                (None, None) => return Ok(()),
                (Some(dt), t) if t.is_none_or(|t| self.now + dt <= t) => {
                    self.advance(dt);
                    self.now += dt;
                    self.complete_flows()?;
                }
                (_, Some(t)) => {
                    let ev = self.queue.pop().expect("peeked");
                    self.advance(t - self.now);
                    self.now = t;
                    self.handle(ev.kind)?;
                }
                (Some(_), None) => unreachable!("covered by the completion arm"),
            }
        }
    }

    fn advance(&mut self, dt: f64) {
        if dt <= 0.0 {
            return;
        }
        for &f in &self.live {
            let flow = &mut self.flows[f];
            if flow.transmitting() {
                let bits = flow.rate * dt;
                flow.remaining_bits -= bits;
                flow.delivered_bits += bits;
            }
        }
    }

    fn handle(&mut self, kind: EventKind) -> Result<(), SimError> {
        match kind {
            EventKind::JobArrival(j) => {
                let at = self.now + self.jobs[j].compute;
                self.schedule(at, EventKind::ComputeDone(j));
            }
            EventKind::ComputeDone(j) => self.start_communication(j)?,
            EventKind::ControllerDecision => {
                self.decisions.remove(&self.now.to_bits());
                for &f in &self.live {
                    let flow = &mut self.flows[f];
                    if let Status::Waiting { ready_at } = flow.status {
                        if ready_at <= self.now {
                            flow.status = Status::Active;
                        }
                    }
                }
                self.reroute()?;
                self.recompute_rates()?;
            }
            EventKind::SpineFailure(i) => self.fail_spines(i)?,
        }
        Ok(())
    }

    fn ecmp_route(&self, spec: &CommoditySpec) -> Route {
        let kind = if spec.src.same_host(&spec.dst) {
            RouteKind::IntraHost
        } else if spec.src.tor == spec.dst.tor {
            RouteKind::IntraTor
        } else {
            RouteKind::Spine(ecmp_spine(&spec.id, self.scenario.seed, &self.live_spines))
        };
        self.topo.route(&spec.src, &spec.dst, kind)
    }

    fn set_route(&mut self, f: usize, route: Option<Route>) {
        let links = route
            .as_ref()
            .map(|r| r.links.iter().map(|l| self.topo.link_index(l)).collect())
            .unwrap_or_default();
        let flow = &mut self.flows[f];
        flow.links = links;
        flow.route = route;
    }

    fn start_communication(&mut self, j: usize) -> Result<(), SimError> {
        let state = &mut self.jobs[j];
        state.comm_start = self.now;
        let iteration = state.iteration;
        let mut specs = Vec::new();
        for ring in state.rings.iter().filter(|r| r.members.len() >= 2) {
            specs.extend(ring_allreduce_commodities(ring, iteration)?);
        }
        // same-host transfers do not touch the network
        specs.retain(|c| !c.src.same_host(&c.dst));
        if specs.is_empty() {
            return self.finish_iteration(j);
        }
        self.jobs[j].outstanding = specs.len();

        let controller = self.scenario.controller;
        let latency = controller.reaction_latency;
        let mut needs_decision = false;
        for spec in specs {
            let elephant = spec.volume >= controller.elephant_threshold && self.controller_routes_elephants();
            let bits = spec.volume as f64 * 8.0;
            let immediate = !elephant || controller.ecmp_fallback;
            let route = immediate.then(|| self.ecmp_route(&spec));
            needs_decision |= elephant;
            self.flows.push(Flow {
                job: j,
                elephant,
                status: if immediate { Status::Active } else { Status::Waiting { ready_at: self.now + latency } },
                route: None,
                links: Vec::new(),
                remaining_bits: bits,
                delivered_bits: 0.0,
                rate: 0.0,
                start: self.now,
                min_rate: f64::INFINITY,
                spec,
            });
            let f = self.flows.len() - 1;
            self.set_route(f, route);
            self.live.push(f);
        }
        if needs_decision {
            self.schedule_decision(self.now + latency);
        }
        self.recompute_rates()
    }

    fn complete_flows(&mut self) -> Result<(), SimError> {
        let now = self.now;
        let mut done = Vec::new();
        for &f in &self.live {
            let flow = &self.flows[f];
            if !flow.transmitting() {
                continue;
            }
            let volume_bits = flow.spec.volume as f64 * 8.0;
            if flow.remaining_bits <= volume_bits * DONE_FRACTION || flow.remaining_bits / flow.rate <= DONE_SECONDS {
                done.push(f);
            }
        }
        if done.is_empty() {
            return Err(self.invariant("completion step finished no flow".into()));
        }
        let mut touched_jobs = BTreeSet::new();
        for &f in &done {
            let flow = &mut self.flows[f];
            flow.status = Status::Done;
            let volume_bits = flow.spec.volume as f64 * 8.0;
            if self.scenario.audit && (flow.delivered_bits - volume_bits).abs() > CONSERVATION_TOLERANCE * volume_bits {
                let what = format!(
                    "flow {} delivered {} of {} bits",
                    flow.spec.id, flow.delivered_bits, volume_bits
                );
                return Err(SimError::Invariant { time: now, what });
            }
            let fct = now - flow.start;
            let route = flow.route.as_ref().expect("transmitting flows are routed");
            let record = FlowRecord {
                id: flow.spec.id,
                src: flow.spec.src,
                dst: flow.spec.dst,
                volume: flow.spec.volume,
                route: route.kind,
                udp_port: encode_route_as_udp_port(route, UDP_PORT_BASE),
                start: flow.start,
                end: now,
                fct,
                throughput: volume_bits / fct,
                min_rate: flow.min_rate,
                delivered: flow.delivered_bits / 8.0,
            };
            let job = flow.job;
            self.jobs[job].finished.push(record);
            self.jobs[job].outstanding -= 1;
            touched_jobs.insert(job);
        }
        self.live.retain(|f| self.flows[*f].status != Status::Done);

        for j in touched_jobs {
            if self.jobs[j].outstanding == 0 {
                self.finish_iteration(j)?;
            }
        }
        self.recompute_rates()?;
        let elephants_left = self.live.iter().any(|&f| self.flows[f].elephant);
        if elephants_left {
            self.schedule_decision(now + self.scenario.controller.reaction_latency);
        }
        Ok(())
    }

    fn finish_iteration(&mut self, j: usize) -> Result<(), SimError> {
        let state = &mut self.jobs[j];
        let mut flow_records = std::mem::take(&mut state.finished);
        flow_records.sort_by_key(|r| r.id);
        let allreduce_time = flow_records.iter().map(|r| r.end - state.comm_start).fold(0.0, f64::max);
        self.output.records.push(MetricsRecord {
            job_id: self.scenario.jobs[j].id,
            iteration: state.iteration,
            allreduce_time,
            flow_records,
        });
        state.iteration += 1;
        if state.iteration < state.iterations {
            let at = self.now + state.compute;
            self.schedule(at, EventKind::ComputeDone(j));
        }
        Ok(())
    }

    /// Re-runs the controller's scheme over every active elephant, in arrival order.
    fn reroute(&mut self) -> Result<(), SimError> {
        if !self.controller_routes_elephants() {
            return Ok(());
        }
        let targets: Vec<usize> = self
            .live
            .iter()
            .copied()
            .filter(|&f| self.flows[f].elephant && self.flows[f].status == Status::Active)
            .collect();
        if targets.is_empty() {
            return Ok(());
        }
        let commodities: Vec<CommoditySpec> = targets.iter().map(|&f| self.flows[f].spec.clone()).collect();
        let params = SchemeParams { seed: self.scenario.seed, ..self.scenario.controller.params };
        let started = Instant::now();
        let mut choice = assign(self.scenario.controller.scheme, &commodities, &self.topo, &params)?;
        self.output.runtime_log.push(RuntimeSample {
            sim_time: self.now,
            commodities: commodities.len(),
            seconds: started.elapsed().as_secs_f64(),
        });
        for (f, spec) in targets.into_iter().zip(&commodities) {
            let route = choice.assignment.remove(&spec.id).expect("schemes route every commodity");
            self.set_route(f, Some(route));
        }
        Ok(())
    }

    fn fail_spines(&mut self, index: usize) -> Result<(), SimError> {
        let plan = self.scenario.failures.as_ref().expect("failure events come from a plan");
        let count = plan.events[index].count;
        self.topo = self.topo.fail_spines(count, plan.seed.wrapping_add(index as u64))?;
        self.live_spines = self.topo.live_spines();

        let controller = self.scenario.controller;
        let latency = if controller.precomputed_failures { 0.0 } else { controller.reaction_latency };
        let mut needs_decision = false;
        let affected: Vec<usize> = self
            .live
            .iter()
            .copied()
            .filter(|&f| {
                let flow = &self.flows[f];
                flow.route
                    .as_ref()
                    .and_then(|r| r.kind.spine())
                    .is_some_and(|s| !self.topo.is_spine_live(s))
            })
            .collect();
        for f in affected {
            if !self.flows[f].elephant || controller.ecmp_fallback {
                let route = self.ecmp_route(&self.flows[f].spec);
                self.set_route(f, Some(route));
                needs_decision |= self.flows[f].elephant;
            } else {
                self.set_route(f, None);
                self.flows[f].status = Status::Waiting { ready_at: self.now + latency };
                needs_decision = true;
            }
        }
        if needs_decision {
            self.schedule_decision(self.now + latency);
        }
        self.recompute_rates()
    }

    fn recompute_rates(&mut self) -> Result<(), SimError> {
        let sending: Vec<usize> = self.live.iter().copied().filter(|&f| self.flows[f].transmitting()).collect();
        for &f in &self.live {
            self.flows[f].rate = 0.0;
        }
        let slices: Vec<&[usize]> = sending.iter().map(|&f| self.flows[f].links.as_slice()).collect();
        let capacity = self.topo.link_capacity();
        let rates = waterfill_links(&slices, capacity);

        let mut counts = vec![0u32; self.topo.link_slots()];
        for &f in &sending {
            for &l in &self.flows[f].links {
                counts[l] += 1;
            }
        }
        for (&f, rate) in sending.iter().zip(&rates) {
            let flow = &mut self.flows[f];
            flow.rate = *rate;
            flow.min_rate = flow.min_rate.min(*rate);
            let load = flow
                .route
                .as_ref()
                .map(|r| {
                    r.links
                        .iter()
                        .zip(&flow.links)
                        .filter(|(l, _)| l.is_spine_link())
                        .map(|(_, &i)| counts[i])
                        .max()
                        .unwrap_or(0)
                })
                .unwrap_or(0);
            let job = &mut self.jobs[flow.job];
            job.max_load = job.max_load.max(load);
        }

        if self.scenario.audit && !sending.is_empty() {
            let mut used = vec![0.0f64; self.topo.link_slots()];
            for (&f, rate) in sending.iter().zip(&rates) {
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(self.invariant(format!("flow {} got rate {rate}", self.flows[f].spec.id)));
                }
                for &l in &self.flows[f].links {
                    used[l] += rate;
                }
            }
            if let Some(l) = used.iter().position(|u| *u > capacity * (1.0 + CAPACITY_TOLERANCE)) {
                return Err(self.invariant(format!("link {} carries {} > {capacity}", self.topo.link_at(l), used[l])));
            }
            if !used.iter().any(|u| *u >= capacity * (1.0 - CAPACITY_TOLERANCE)) {
                return Err(self.invariant("no link is saturated while flows are sending".into()));
            }
            for &f in &sending {
                if let Some(s) = self.flows[f].route.as_ref().and_then(|r| r.kind.spine()) {
                    if !self.topo.is_spine_live(s) {
                        return Err(self.invariant(format!("flow {} routed over failed spine {s}", self.flows[f].spec.id)));
                    }
                }
            }
        }
        Ok(())
    }
}
