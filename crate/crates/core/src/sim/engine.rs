use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::{ChannelStats, FlowStats, SimConfig, SimStats, BATCHES, TREND_THRESHOLD};
use crate::error::{Error, Result};
use crate::mesh::{Coord, MeshGrid};
use crate::routing::{has_memory_traffic, mc_assignment, next_port, FlowClass, Port, PORTS};
use crate::stats::{batch_means_ci95, mean};
use crate::traffic::AccessPattern;

#[derive(Clone, Copy, Debug)]
enum Kind {
    Generate { core: usize },
    ServiceDone { channel: usize },
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl Ord for Event {
    // Reversed so that the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Message {
    src: Coord,
    dst: Coord,
    /// Service time at every hop.
    service: f64,
    size: u64,
    created: f64,
    class: FlowClass,
    /// Index of the destination cache, for core requests.
    cache: usize,
    entered: f64,
}

#[derive(Default)]
struct Channel {
    queue: VecDeque<usize>,
    busy: bool,
    head_since: f64,
    last: f64,
    area_n: f64,
    area_busy: f64,
    arrivals: u64,
    departures: u64,
    service_sum: f64,
    service_count: u64,
    response_sum: f64,
    response_count: u64,
}

impl Channel {
    /// Accumulates time integrals up to `now`, clipped to the window.
    fn advance(&mut self, now: f64, w0: f64, w1: f64) {
        let a = self.last.max(w0);
        let b = now.min(w1);
        if b > a {
            self.area_n += (b - a) * self.queue.len() as f64;
            if self.busy {
                self.area_busy += b - a;
            }
        }
        self.last = now;
    }
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    grid: MeshGrid,
    rng: ChaCha8Rng,
    heap: BinaryHeap<Event>,
    seq: u64,
    now: f64,
    messages: Vec<Message>,
    channels: Vec<Channel>,
    out_busy: Vec<bool>,
    cores: Vec<Coord>,
    caches: Vec<Coord>,
    mcs: Vec<Coord>,
    core_exp: Vec<Option<Exp<f64>>>,
    targets: Vec<Option<WeightedIndex<f64>>>,
    mc_choice: Vec<(Vec<usize>, WeightedIndex<f64>)>,
    length: Exp<f64>,
    memory: bool,
    requests: u64,
    warmup_requests: u64,
    w0: f64,
    w1: f64,
    delivered: u64,
    latencies: Vec<(usize, f64)>,
    flows: BTreeMap<(Coord, Coord), (u64, f64)>,
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self> {
        let p = &cfg.placement;
        let t = &cfg.traffic;
        let grid = p.grid();
        let cores = p.cores();
        let caches = p.caches();
        let mcs = p.mcs();
        let core_exp = (0..cores.len())
            .map(|i| {
                let rate = t.core_rate(i) * t.miss_l1();
                (rate > 0.0).then(|| Exp::new(rate).expect("positive rate"))
            })
            .collect();
        let targets = match &t.access {
            AccessPattern::Uniform => vec![None; cores.len()],
            AccessPattern::Matrix(m) => m
                .iter()
                .map(|row| {
                    WeightedIndex::new(row.iter().copied())
                        .map(Some)
                        .map_err(|e| Error::InvalidConfig(e.to_string()))
                })
                .collect::<Result<_>>()?,
        };
        let memory = has_memory_traffic(p, t);
        let mc_choice = if memory {
            mc_assignment(p)
                .into_iter()
                .map(|shares| {
                    let idx = shares.iter().map(|s| s.0).collect();
                    let w =
                        WeightedIndex::new(shares.iter().map(|s| s.1)).expect("positive shares");
                    (idx, w)
                })
                .collect()
        } else {
            Vec::new()
        };
        let warmup_requests = (cfg.warmup * cfg.messages as f64).floor() as u64;
        Ok(Sim {
            cfg,
            grid,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
            messages: Vec::new(),
            channels: (0..grid.tiles() * PORTS)
                .map(|_| Channel::default())
                .collect(),
            out_busy: vec![false; grid.tiles() * PORTS],
            cores,
            caches,
            mcs,
            core_exp,
            targets,
            mc_choice,
            length: Exp::new(1.0 / cfg.mean_message_size).expect("positive mean"),
            memory,
            requests: 0,
            warmup_requests,
            w0: f64::INFINITY,
            w1: f64::INFINITY,
            delivered: 0,
            latencies: Vec::new(),
            flows: BTreeMap::new(),
        })
    }

    fn schedule(&mut self, time: f64, kind: Kind) {
        self.seq += 1;
        self.heap.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn channel_index(&self, router: Coord, port: Port) -> usize {
        self.grid.index(router) * PORTS + port.index()
    }

    fn create(&mut self, src: Coord, dst: Coord, class: FlowClass, cache: usize) {
        let size = (self.length.sample(&mut self.rng).round() as u64).max(1);
        let id = self.messages.len();
        self.messages.push(Message {
            src,
            dst,
            service: size as f64 / self.cfg.mu,
            size,
            created: self.now,
            class,
            cache,
            entered: self.now,
        });
        let ch = self.channel_index(src, Port::Local);
        self.arrive(id, ch);
    }

    fn generate(&mut self, core: usize) {
        if self.requests >= self.cfg.messages {
            return;
        }
        if self.requests == self.warmup_requests {
            self.w0 = self.now;
        }
        self.requests += 1;
        if self.requests == self.cfg.messages {
            self.w1 = self.now;
        }
        let cache = match &self.targets[core] {
            None => self.rng.random_range(0..self.caches.len()),
            Some(w) => w.sample(&mut self.rng),
        };
        let (src, dst) = (self.cores[core], self.caches[cache]);
        self.create(src, dst, FlowClass::CoreToCache, cache);
        if self.requests < self.cfg.messages {
            let exp = self.core_exp[core].expect("scheduled cores have a rate");
            let dt = exp.sample(&mut self.rng);
            self.schedule(self.now + dt, Kind::Generate { core });
        }
    }

    fn arrive(&mut self, id: usize, ch: usize) {
        let (now, w0, w1) = (self.now, self.w0, self.w1);
        self.messages[id].entered = now;
        let c = &mut self.channels[ch];
        c.advance(now, w0, w1);
        if now >= w0 && now <= w1 {
            c.arrivals += 1;
        }
        c.queue.push_back(id);
        if c.queue.len() == 1 {
            c.head_since = now;
            self.try_start(ch);
        }
    }

    fn output_of(&self, ch: usize) -> Option<usize> {
        let c = &self.channels[ch];
        let &id = c.queue.front()?;
        let router = self.grid.coord(ch / PORTS);
        let out = next_port(router, self.messages[id].dst);
        Some(self.grid.index(router) * PORTS + out.index())
    }

    fn try_start(&mut self, ch: usize) -> bool {
        if self.channels[ch].busy {
            return false;
        }
        let Some(out) = self.output_of(ch) else {
            return false;
        };
        if self.out_busy[out] {
            return false;
        }
        self.start(ch, out);
        true
    }

    fn start(&mut self, ch: usize, out: usize) {
        let (now, w0, w1) = (self.now, self.w0, self.w1);
        let id = self.channels[ch].queue[0];
        let service = self.messages[id].service;
        let c = &mut self.channels[ch];
        c.advance(now, w0, w1);
        c.busy = true;
        if now >= w0 && now <= w1 {
            c.service_sum += service;
            c.service_count += 1;
        }
        self.out_busy[out] = true;
        self.schedule(now + service, Kind::ServiceDone { channel: ch });
    }

    fn finish(&mut self, ch: usize) {
        let (now, w0, w1) = (self.now, self.w0, self.w1);
        let out = self.output_of(ch).expect("a message is in service");
        let c = &mut self.channels[ch];
        c.advance(now, w0, w1);
        let id = c.queue.pop_front().expect("a message is in service");
        c.busy = false;
        let entered = self.messages[id].entered;
        if now >= w0 && now <= w1 {
            c.departures += 1;
        }
        if entered >= w0 && entered <= w1 {
            c.response_sum += now - entered;
            c.response_count += 1;
        }
        if !c.queue.is_empty() {
            c.head_since = now;
        }
        self.out_busy[out] = false;

        let router = self.grid.coord(ch / PORTS);
        let port = Port::from_index(out % PORTS);
        match port.step(self.grid, router) {
            Some(next) => {
                let next_ch = self.channel_index(next, port.opposite());
                self.arrive(id, next_ch);
            }
            None => self.deliver(id),
        }

        self.grant(out);
        self.try_start(ch);
    }

    /// Hands a freed output port to the waiting head that has waited longest.
    fn grant(&mut self, out: usize) {
        if self.out_busy[out] {
            return;
        }
        let base = (out / PORTS) * PORTS;
        let winner = (base..base + PORTS)
            .filter(|&ch| !self.channels[ch].busy && self.output_of(ch) == Some(out))
            .min_by(|&a, &b| {
                self.channels[a]
                    .head_since
                    .total_cmp(&self.channels[b].head_since)
                    .then(a.cmp(&b))
            });
        if let Some(ch) = winner {
            self.start(ch, out);
        }
    }

    fn deliver(&mut self, id: usize) {
        self.delivered += 1;
        let m = &self.messages[id];
        let (src, dst, class, cache, created) = (m.src, m.dst, m.class, m.cache, m.created);
        if created >= self.w0 {
            let latency = self.now - created;
            self.latencies.push((id, latency));
            let e = self.flows.entry((src, dst)).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += latency;
        }
        match class {
            FlowClass::CoreToCache => {
                if self.memory && self.rng.random::<f64>() < self.cfg.traffic.miss_l2 {
                    let (idx, w) = &self.mc_choice[cache];
                    let k = idx[w.sample(&mut self.rng)];
                    let mc = self.mcs[k];
                    self.create(dst, mc, FlowClass::CacheToMc, cache);
                }
                if self.cfg.traffic.model_replies {
                    self.create(dst, src, FlowClass::Reply, cache);
                }
            }
            FlowClass::CacheToMc => {
                if self.cfg.traffic.model_replies {
                    self.create(dst, src, FlowClass::Reply, cache);
                }
            }
            FlowClass::Reply => {}
        }
    }

    fn run(mut self) -> SimStats {
        for core in 0..self.cores.len() {
            if let Some(exp) = self.core_exp[core] {
                let dt = exp.sample(&mut self.rng);
                self.schedule(dt, Kind::Generate { core });
            }
        }
        while let Some(ev) = self.heap.pop() {
            if !self.cfg.drain && self.requests >= self.cfg.messages && ev.time > self.w1 {
                break;
            }
            self.now = ev.time;
            match ev.kind {
                Kind::Generate { core } => self.generate(core),
                Kind::ServiceDone { channel } => self.finish(channel),
            }
        }
        self.stats()
    }

    fn stats(mut self) -> SimStats {
        let (w0, w1) = (self.w0, self.w1);
        let span = w1 - w0;
        let end = self.now;
        for c in &mut self.channels {
            c.advance(end, w0, w1);
        }
        let mut channels = Vec::new();
        for (i, c) in self.channels.iter().enumerate() {
            if c.arrivals == 0 && c.response_count == 0 {
                continue;
            }
            let rate = |n: u64| if span > 0.0 { n as f64 / span } else { 0.0 };
            let ratio = |a: f64, n: u64| if n > 0 { a / n as f64 } else { 0.0 };
            channels.push(ChannelStats {
                router: self.grid.coord(i / PORTS),
                port: Port::from_index(i % PORTS),
                arrivals: c.arrivals,
                departures: c.departures,
                arrival_rate: rate(c.arrivals),
                throughput: rate(c.departures),
                mean_service_time: ratio(c.service_sum, c.service_count),
                utilization: if span > 0.0 { c.area_busy / span } else { 0.0 },
                mean_queue_length: if span > 0.0 { c.area_n / span } else { 0.0 },
                mean_response_time: ratio(c.response_sum, c.response_count),
            });
        }
        self.latencies.sort_by_key(|&(id, _)| id);
        let series: Vec<f64> = self.latencies.iter().map(|&(_, l)| l).collect();
        let third = series.len() / 3;
        let (early, late) = if third > 0 {
            (
                mean(&series[..third]),
                mean(&series[series.len() - third..]),
            )
        } else {
            (f64::NAN, f64::NAN)
        };
        let middle = if third > 0 {
            mean(&series[third..series.len() - third])
        } else {
            f64::NAN
        };
        let generated = self.messages.len() as u64;
        let saturated = late > TREND_THRESHOLD * early && middle > early;
        let mean_message_length = if generated > 0 {
            self.messages.iter().map(|m| m.size as f64).sum::<f64>() / generated as f64
        } else {
            0.0
        };
        SimStats {
            seed: self.cfg.seed,
            requests: self.requests,
            generated,
            delivered: self.delivered,
            in_flight: generated - self.delivered,
            measured: series.len() as u64,
            mean_latency: mean(&series),
            ci95: batch_means_ci95(&series, BATCHES),
            saturated,
            early_latency: early,
            late_latency: late,
            window_start: w0,
            window_end: w1,
            end_time: end,
            mean_message_length,
            channels,
            flows: self
                .flows
                .iter()
                .map(|(&(src, dst), &(n, sum))| FlowStats {
                    src,
                    dst,
                    messages: n,
                    mean_latency: sum / n as f64,
                })
                .collect(),
        }
    }
}

/// Runs one simulation. Identical configurations give identical statistics.
pub fn run_sim(cfg: &SimConfig) -> Result<SimStats> {
    cfg.validate()?;
    Ok(Sim::new(cfg)?.run())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Placement;
    use crate::queueing::mm1_response;
    use crate::traffic::TrafficSpec;

    fn line(text: &str, lambda: f64, messages: u64, seed: u64) -> SimConfig {
        SimConfig {
            messages,
            seed,
            ..SimConfig::new(
                Placement::from_text(text).unwrap(),
                TrafficSpec::default().with_lambda(lambda),
            )
        }
    }

    #[test]
    fn event_order_is_time_then_sequence() {
        let mut heap = BinaryHeap::new();
        for (time, seq) in [(2.0, 1), (1.0, 3), (1.0, 2), (0.5, 9)] {
            heap.push(Event {
                time,
                seq,
                kind: Kind::Generate { core: 0 },
            });
        }
        let order: Vec<(f64, u64)> =
            std::iter::from_fn(|| heap.pop().map(|e| (e.time, e.seq))).collect();
        assert_eq!(order, vec![(0.5, 9), (1.0, 2), (1.0, 3), (2.0, 1)]);
    }

    #[test]
    fn zero_load_line() {
        let cfg = line("C.$\n", 1e-3, 5_000, 1);
        let s = run_sim(&cfg).unwrap();
        let expect = 3.0 * cfg.mean_service_time();
        assert!(
            (s.mean_latency - expect).abs() / expect < 0.05,
            "{}",
            s.mean_latency
        );
        assert!(!s.saturated);
    }

    #[test]
    fn single_queue_matches_mm1() {
        let cfg = line("C$\n", 0.05, 40_000, 3);
        let s = run_sim(&cfg).unwrap();
        let inj = s.channel(Coord::new(0, 0), Port::Local).unwrap();
        let expect = mm1_response(0.05, 1.0 / cfg.mean_service_time()).unwrap();
        assert!(
            (inj.mean_response_time - expect).abs() / expect < 0.05,
            "{} vs {expect}",
            inj.mean_response_time
        );
    }

    #[test]
    fn deterministic_by_seed() {
        let a = run_sim(&line("C$C\n", 0.03, 3_000, 9)).unwrap();
        let b = run_sim(&line("C$C\n", 0.03, 3_000, 9)).unwrap();
        assert_eq!(a, b);
        let c = run_sim(&line("C$C\n", 0.03, 3_000, 10)).unwrap();
        assert_ne!(a.mean_latency, c.mean_latency);
    }

    #[test]
    fn conservation_without_drain() {
        let cfg = SimConfig {
            drain: false,
            ..line("C.$\n", 0.09, 5_000, 4)
        };
        let s = run_sim(&cfg).unwrap();
        assert_eq!(s.generated, s.delivered + s.in_flight);
        assert_eq!(s.requests, 5_000);
        let drained = run_sim(&SimConfig { drain: true, ..cfg }).unwrap();
        assert_eq!(drained.in_flight, 0);
    }

    #[test]
    fn overload_is_flagged() {
        let s = run_sim(&line("C$\n", 0.2, 20_000, 5)).unwrap();
        assert!(s.saturated);
        let s = run_sim(&line("C$\n", 0.02, 20_000, 5)).unwrap();
        assert!(!s.saturated);
    }

    #[test]
    fn memory_and_replies_are_spawned() {
        let mut cfg = line("C$M\n", 0.01, 4_000, 2);
        cfg.traffic.miss_l2 = 0.5;
        cfg.traffic.model_replies = true;
        let s = run_sim(&cfg).unwrap();
        // Each request spawns a reply, half spawn a memory access, which also gets a reply.
        let ratio = s.generated as f64 / s.requests as f64;
        assert!((ratio - 3.0).abs() < 0.1, "{ratio}");
        assert!(s.flow(Coord::new(1, 0), Coord::new(2, 0)).is_some());
        assert!(s.flow(Coord::new(2, 0), Coord::new(1, 0)).is_some());
    }
}
