//! Router response-time model: contention between input channels, effective
//! utilization, and Kingman-style waiting times, combined into end-to-end delays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Saturation};
use crate::mesh::{Coord, Placement};
use crate::routing::{
    build_flows, derive_channel_rates, input_ports, xy_route, ChannelLoadMap, Flow, Port, PORTS,
};
use crate::traffic::TrafficSpec;

/// Convergence threshold on the queue-length fixed point.
pub const FIXED_POINT_TOLERANCE: f64 = 1e-8;
pub const FIXED_POINT_MAX_ITERATIONS: usize = 500;
const DAMPING: f64 = 0.5;

/// Mean and squared coefficient of variation of a router's per-hop service time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub mean: f64,
    pub scv: f64,
}

impl Default for ServiceSpec {
    fn default() -> Self {
        ServiceSpec {
            mean: 1.0,
            scv: 1.0,
        }
    }
}

impl ServiceSpec {
    /// Exponential service at rate `mu`.
    pub fn from_rate(mu: f64) -> Self {
        ServiceSpec {
            mean: 1.0 / mu,
            scv: 1.0,
        }
    }
}

/// Which waiting-time expression to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KingmanMode {
    /// `((ca2 + cs2) / 2) * E{S} / (1 - rho)`, taken as the per-hop sojourn time.
    #[default]
    Sojourn,
    /// Textbook Kingman: `rho / (1 - rho) * ((ca2 + cs2) / 2) * E{S}`, added to E{S}.
    Standard,
}

/// Mean response time of an M/M/1 queue.
pub fn mm1_response(lambda: f64, mu: f64) -> Result<f64> {
    if lambda >= mu {
        return Err(Error::Unstable(Saturation::scalar(lambda / mu)));
    }
    Ok(1.0 / (mu - lambda))
}

/// The waiting-time expression selected by `mode`, evaluated as written.
pub fn kingman_wait(rho_e: f64, ca2: f64, cs2: f64, es: f64, mode: KingmanMode) -> Result<f64> {
    if rho_e >= 1.0 {
        return Err(Error::Unstable(Saturation::scalar(rho_e)));
    }
    let variability = (ca2 + cs2) / 2.0;
    Ok(match mode {
        KingmanMode::Sojourn => variability * es / (1.0 - rho_e),
        KingmanMode::Standard => rho_e / (1.0 - rho_e) * variability * es,
    })
}

/// `(waiting time, response time)` of one channel.
///
/// In sojourn mode the expression is the sojourn time (it equals the M/M/1 response
/// time for unit SCVs), clamped so the response never drops below one service.
pub fn channel_response(
    rho_e: f64,
    ca2: f64,
    cs2: f64,
    es: f64,
    mode: KingmanMode,
) -> Result<(f64, f64)> {
    let w = kingman_wait(rho_e, ca2, cs2, es, mode)?;
    Ok(match mode {
        KingmanMode::Sojourn => {
            let rt = w.max(es);
            (rt - es, rt)
        }
        KingmanMode::Standard => (w, es + w),
    })
}

/// Square matrix of how strongly channel `j` inflates the utilization seen by `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContentionMatrix {
    n: usize,
    data: Vec<f64>,
}

impl ContentionMatrix {
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        ContentionMatrix { n, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: bad.len(),
            });
        }
        Ok(ContentionMatrix {
            n,
            data: rows.concat(),
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(|r| r.to_vec()).collect()
    }
}

/// Arrival rates of one router: `turn[i][k]` enters through input `i` and leaves
/// through output `k`; `arrival[i]` is the row sum.
#[derive(Clone, Debug, PartialEq)]
pub struct RouterLoads {
    pub arrival: Vec<f64>,
    pub turn: Vec<Vec<f64>>,
}

impl RouterLoads {
    pub fn from_turns(turn: Vec<Vec<f64>>) -> Self {
        let arrival = turn.iter().map(|r| r.iter().sum()).collect();
        RouterLoads { arrival, turn }
    }

    pub fn of_router(map: &ChannelLoadMap, router: Coord) -> Self {
        Self::from_turns(
            map.router_turns(router)
                .iter()
                .map(|r| r.to_vec())
                .collect(),
        )
    }

    pub fn channels(&self) -> usize {
        self.arrival.len()
    }
}

fn unstable_channel(channel: usize, utilization: f64) -> Error {
    Error::Unstable(Saturation {
        router: None,
        port: (channel < PORTS).then(|| Port::from_index(channel)),
        utilization,
    })
}

/// One evaluation of the contention terms for given queue lengths `N_j`:
/// `c_ij = rho_i * sum_k P_ik * x_jk / (1 - x_jk)^2 / N_j` with
/// `P_ik = 1 - exp(-lambda_ik E{S_i})` and `x_jk = rho_j (1 - exp(-lambda_jk E{S_j}))`.
/// The series `sum_m m x^m` is summed in closed form. Diagonal entries are 1.
pub fn contention_terms(
    loads: &RouterLoads,
    service: &[f64],
    queue_len: &[f64],
) -> Result<ContentionMatrix> {
    let n = loads.channels();
    for got in [service.len(), queue_len.len(), loads.turn.len()] {
        if got != n {
            return Err(Error::DimensionMismatch { expected: n, got });
        }
    }
    let rho: Vec<f64> = (0..n).map(|i| loads.arrival[i] * service[i]).collect();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = 1.0;
        for j in (0..n).filter(|&j| j != i) {
            if queue_len[j] <= 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for k in 0..loads.turn[i].len().min(loads.turn[j].len()) {
                let head = -(-loads.turn[i][k] * service[i]).exp_m1();
                let x = rho[j] * -(-loads.turn[j][k] * service[j]).exp_m1();
                if head == 0.0 || x == 0.0 {
                    continue;
                }
                if x >= 1.0 {
                    return Err(unstable_channel(j, x));
                }
                acc += rho[i] * head * x / ((1.0 - x) * (1.0 - x));
            }
            data[i * n + j] = acc / queue_len[j];
        }
    }
    Ok(ContentionMatrix { n, data })
}

/// Row sums of `diag(lambda) * C * diag(E{S})`.
pub fn effective_utilization(
    lambda: &[f64],
    c: &ContentionMatrix,
    service: &[f64],
) -> Result<Vec<f64>> {
    let n = c.size();
    for got in [lambda.len(), service.len()] {
        if got != n {
            return Err(Error::DimensionMismatch { expected: n, got });
        }
    }
    Ok((0..n)
        .map(|i| lambda[i] * (0..n).map(|j| c.get(i, j) * service[j]).sum::<f64>())
        .collect())
}

/// Fixed-point solution for one router.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSolution {
    pub contention: ContentionMatrix,
    pub rho_e: Vec<f64>,
    /// Mean residual service `E{R} = ((ca2 + cs2) / 2) E{S}`.
    pub residual: Vec<f64>,
    pub wq: Vec<f64>,
    pub rt: Vec<f64>,
    pub queue_len: Vec<f64>,
    pub iterations: usize,
}

/// Solves the coupling between contention and queue lengths (`N_j = lambda_j W_q,j`)
/// by damped fixed-point iteration.
pub fn solve_channels(
    loads: &RouterLoads,
    svc: &[ServiceSpec],
    ca2: f64,
    mode: KingmanMode,
) -> Result<ChannelSolution> {
    let n = loads.channels();
    if svc.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: svc.len(),
        });
    }
    let es: Vec<f64> = svc.iter().map(|s| s.mean).collect();
    let lambda = &loads.arrival;
    for i in 0..n {
        let rho = lambda[i] * es[i];
        if rho >= 1.0 {
            return Err(unstable_channel(i, rho));
        }
    }
    let respond = |rho_e: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut wq = Vec::with_capacity(n);
        let mut rt = Vec::with_capacity(n);
        for i in 0..n {
            if rho_e[i] >= 1.0 {
                return Err(unstable_channel(i, rho_e[i]));
            }
            let (w, r) = channel_response(rho_e[i], ca2, svc[i].scv, es[i], mode)?;
            wq.push(w);
            rt.push(r);
        }
        Ok((wq, rt))
    };

    let plain: Vec<f64> = (0..n).map(|i| lambda[i] * es[i]).collect();
    let (wq0, _) = respond(&plain)?;
    let mut queue: Vec<f64> = (0..n).map(|i| lambda[i] * wq0[i]).collect();
    let mut residual = f64::INFINITY;
    for iteration in 1..=FIXED_POINT_MAX_ITERATIONS {
        let contention = contention_terms(loads, &es, &queue)?;
        let rho_e = effective_utilization(lambda, &contention, &es)?;
        let (wq, rt) = respond(&rho_e)?;
        let next: Vec<f64> = (0..n).map(|i| lambda[i] * wq[i]).collect();
        residual = (0..n)
            .map(|i| (next[i] - queue[i]).abs())
            .fold(0.0, f64::max);
        if residual < FIXED_POINT_TOLERANCE {
            return Ok(ChannelSolution {
                contention,
                rho_e,
                residual: (0..n).map(|i| (ca2 + svc[i].scv) / 2.0 * es[i]).collect(),
                wq,
                rt,
                queue_len: next,
                iterations: iteration,
            });
        }
        for i in 0..n {
            queue[i] = DAMPING * queue[i] + (1.0 - DAMPING) * next[i];
        }
    }
    Err(Error::NonConvergent {
        iterations: FIXED_POINT_MAX_ITERATIONS,
        residual,
    })
}

/// The converged contention matrix of a router.
pub fn contention_matrix(
    loads: &RouterLoads,
    svc: &[ServiceSpec],
    ca2: f64,
    mode: KingmanMode,
) -> Result<ContentionMatrix> {
    solve_channels(loads, svc, ca2, mode).map(|s| s.contention)
}

/// Queueing state of one router; vectors are indexed by input [`Port`].
#[derive(Clone, Debug, PartialEq)]
pub struct RouterQueueModel {
    pub router: Coord,
    pub arrival: Vec<f64>,
    pub service: Vec<f64>,
    pub contention: ContentionMatrix,
    pub rho_e: Vec<f64>,
    pub residual: Vec<f64>,
    pub wq: Vec<f64>,
    pub rt: Vec<f64>,
    pub queue_len: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowDelay {
    pub flow: Flow,
    pub delay: f64,
}

/// Router-level and flow-level output of [`packet_delay_inspector`].
#[derive(Clone, Debug, PartialEq)]
pub struct InspectorReport {
    pub loads: ChannelLoadMap,
    pub routers: Vec<RouterQueueModel>,
    pub flows: Vec<FlowDelay>,
}

impl InspectorReport {
    pub fn router(&self, c: Coord) -> &RouterQueueModel {
        &self.routers[self.loads.grid().index(c)]
    }

    pub fn rt(&self, router: Coord, input: Port) -> f64 {
        self.router(router).rt[input.index()]
    }

    /// Sum of per-hop response times along the XY route; the source router is
    /// skipped when `include_source` is false.
    pub fn path_time(&self, src: Coord, dst: Coord, include_source: bool) -> f64 {
        let route = xy_route(src, dst);
        route
            .iter()
            .zip(input_ports(&route))
            .skip(usize::from(!include_source))
            .map(|(hop, input)| self.rt(hop.router, input))
            .sum()
    }

    pub fn max_rho_e(&self) -> f64 {
        self.routers
            .iter()
            .flat_map(|r| r.rho_e.iter().copied())
            .fold(0.0, f64::max)
    }

    /// Rate-weighted mean end-to-end delay over all flows.
    pub fn mean_flow_delay(&self) -> f64 {
        let total: f64 = self.flows.iter().map(|f| f.flow.rate).sum();
        self.flows
            .iter()
            .map(|f| f.flow.rate * f.delay)
            .sum::<f64>()
            / total
    }

    /// `x,y,channel,lambda,rho_e,wq,rt,queue_len` for every loaded channel.
    pub fn router_csv(&self) -> String {
        let mut out = String::from("x,y,channel,lambda,rho_e,wq,rt,queue_len\n");
        for r in &self.routers {
            for p in Port::ALL {
                let i = p.index();
                if r.arrival[i] > 0.0 {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        r.router.x,
                        r.router.y,
                        p,
                        r.arrival[i],
                        r.rho_e[i],
                        r.wq[i],
                        r.rt[i],
                        r.queue_len[i]
                    ));
                }
            }
        }
        out
    }

    /// `src_x,src_y,dst_x,dst_y,rate,delay` per flow.
    pub fn flow_csv(&self) -> String {
        let mut out = String::from("src_x,src_y,dst_x,dst_y,rate,delay\n");
        for f in &self.flows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                f.flow.src.x, f.flow.src.y, f.flow.dst.x, f.flow.dst.y, f.flow.rate, f.delay
            ));
        }
        out
    }
}

/// Solves every router for the given flows.
pub fn inspect_flows(
    flows: Vec<Flow>,
    loads: ChannelLoadMap,
    t: &TrafficSpec,
) -> Result<InspectorReport> {
    let grid = loads.grid();
    let svc = vec![t.svc; PORTS];
    let routers = grid
        .coords()
        .map(|router| {
            let rl = RouterLoads::of_router(&loads, router);
            let sol = solve_channels(&rl, &svc, t.ca2, t.kingman).map_err(|e| match e {
                Error::Unstable(s) => Error::Unstable(Saturation {
                    router: Some(router),
                    ..s
                }),
                other => other,
            })?;
            Ok(RouterQueueModel {
                router,
                arrival: rl.arrival,
                service: vec![t.svc.mean; PORTS],
                contention: sol.contention,
                rho_e: sol.rho_e,
                residual: sol.residual,
                wq: sol.wq,
                rt: sol.rt,
                queue_len: sol.queue_len,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = InspectorReport {
        loads,
        routers,
        flows: Vec::new(),
    };
    report.flows = flows
        .into_iter()
        .map(|flow| FlowDelay {
            delay: report.path_time(flow.src, flow.dst, true),
            flow,
        })
        .collect();
    Ok(report)
}

/// Flow rates, channel rates, per-router contention and response times, then
/// per-flow delays as the sum of hop response times.
pub fn packet_delay_inspector(p: &Placement, t: &TrafficSpec) -> Result<InspectorReport> {
    let flows = build_flows(p, t)?;
    let loads = derive_channel_rates(&flows, p.grid());
    inspect_flows(flows, loads, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mm1_examples() {
        assert_eq!(mm1_response(1.0, 2.0).unwrap(), 1.0);
        assert_eq!(mm1_response(0.0, 2.0).unwrap(), 0.5);
        assert_relative_eq!(mm1_response(1.9, 2.0).unwrap(), 10.0, max_relative = 1e-12);
        assert!(matches!(mm1_response(2.0, 2.0), Err(Error::Unstable(_))));
    }

    #[test]
    fn kingman_examples() {
        let sojourn = kingman_wait(0.5, 1.0, 1.0, 0.5, KingmanMode::Sojourn).unwrap();
        assert_eq!(sojourn, 1.0);
        assert_eq!(sojourn, mm1_response(1.0, 2.0).unwrap());
        assert_eq!(
            kingman_wait(0.0, 0.6, 1.4, 3.0, KingmanMode::Sojourn).unwrap(),
            3.0 * (0.6 + 1.4) / 2.0
        );
        // M/M/1 waiting time lambda / (mu (mu - lambda)) at lambda = 1, mu = 2.
        let wq = 1.0 / (2.0 * (2.0 - 1.0));
        assert_eq!(
            kingman_wait(0.5, 1.0, 1.0, 0.5, KingmanMode::Standard).unwrap(),
            wq
        );
        assert!(kingman_wait(1.0, 1.0, 1.0, 1.0, KingmanMode::Sojourn).is_err());
    }

    #[test]
    fn both_modes_agree_for_exponential_traffic() {
        for rho in [0.0, 0.1, 0.5, 0.9] {
            let (wp, rp) = channel_response(rho, 1.0, 1.0, 2.0, KingmanMode::Sojourn).unwrap();
            let (ws, rs) = channel_response(rho, 1.0, 1.0, 2.0, KingmanMode::Standard).unwrap();
            assert_relative_eq!(rp, rs, max_relative = 1e-12);
            assert_relative_eq!(wp, ws, epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_contention_gives_plain_utilization() {
        let c = ContentionMatrix::identity(3);
        let rho = effective_utilization(&[0.1, 0.2, 0.3], &c, &[2.0, 1.0, 0.5]).unwrap();
        assert_eq!(rho, vec![0.2, 0.2, 0.15]);
        let zero = effective_utilization(&[0.0; 3], &c, &[1.0; 3]).unwrap();
        assert_eq!(zero, vec![0.0; 3]);
    }

    #[test]
    fn effective_utilization_row_sums() {
        let c = ContentionMatrix::from_rows(&[vec![1.0, 0.5], vec![0.25, 1.0]]).unwrap();
        let rho = effective_utilization(&[0.2, 0.4], &c, &[1.0, 1.0]).unwrap();
        assert_relative_eq!(rho[0], 0.3, max_relative = 1e-12);
        assert_relative_eq!(rho[1], 0.5, max_relative = 1e-12);
        assert!(matches!(
            effective_utilization(&[0.2], &c, &[1.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn two_channel(l1: f64, l2: f64) -> RouterLoads {
        // Both inputs head for output 0.
        RouterLoads::from_turns(vec![vec![l1, 0.0], vec![l2, 0.0]])
    }

    #[test]
    fn lone_channel_has_no_cross_contention() {
        let loads = RouterLoads::from_turns(vec![vec![0.0, 0.4], vec![0.0, 0.0], vec![0.0, 0.0]]);
        let c = contention_matrix(
            &loads,
            &[ServiceSpec::default(); 3],
            1.0,
            KingmanMode::Sojourn,
        )
        .unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(c.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn symmetric_router_has_symmetric_contention() {
        let c = contention_matrix(
            &two_channel(0.3, 0.3),
            &[ServiceSpec::default(); 2],
            1.0,
            KingmanMode::Sojourn,
        )
        .unwrap();
        assert_eq!(c.get(0, 1), c.get(1, 0));
        assert!(c.get(0, 1) > 0.0);
    }

    #[test]
    fn contention_formula_matches_scalar_evaluation() {
        // Scalar evaluation of the series for lambda = 0.3, E{S} = 1 at a given N.
        let rho: f64 = 0.3;
        let p = 1.0 - (-0.3f64).exp();
        let x = rho * p;
        let series: f64 = (1..200).map(|m| m as f64 * x.powi(m)).sum();
        let n_j = 0.42;
        let expected = rho * p * series / n_j;
        let c = contention_terms(&two_channel(0.3, 0.3), &[1.0, 1.0], &[n_j, n_j]).unwrap();
        assert_relative_eq!(c.get(0, 1), expected, max_relative = 1e-12);
        assert_relative_eq!(c.get(1, 0), expected, max_relative = 1e-12);
    }

    #[test]
    fn fixed_point_is_self_consistent() {
        let loads = two_channel(0.3, 0.3);
        let sol = solve_channels(
            &loads,
            &[ServiceSpec::default(); 2],
            1.0,
            KingmanMode::Sojourn,
        )
        .unwrap();
        let c = contention_terms(&loads, &[1.0, 1.0], &sol.queue_len).unwrap();
        assert_relative_eq!(c.get(0, 1), sol.contention.get(0, 1), max_relative = 1e-6);
        let rho_e = 0.3 * (1.0 + sol.contention.get(0, 1));
        assert_relative_eq!(sol.rho_e[0], rho_e, max_relative = 1e-12);
        assert_relative_eq!(sol.rt[0], 1.0 / (1.0 - rho_e), max_relative = 1e-12);
        assert_relative_eq!(
            sol.queue_len[0],
            0.3 * (sol.rt[0] - 1.0),
            max_relative = 1e-6
        );
    }

    #[test]
    fn single_channel_is_mm1() {
        let loads = RouterLoads::from_turns(vec![vec![0.6]]);
        let sol = solve_channels(
            &loads,
            &[ServiceSpec::from_rate(1.5)],
            1.0,
            KingmanMode::Sojourn,
        )
        .unwrap();
        assert_relative_eq!(
            sol.rt[0],
            mm1_response(0.6, 1.5).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn saturated_channel_is_unstable() {
        let loads = two_channel(1.0, 0.1);
        assert!(matches!(
            solve_channels(
                &loads,
                &[ServiceSpec::default(); 2],
                1.0,
                KingmanMode::Sojourn
            ),
            Err(Error::Unstable(_))
        ));
    }

    #[test]
    fn line_of_three_routers() {
        let p = Placement::from_text("C.$\n").unwrap();
        let t = TrafficSpec {
            lambda_g: 0.5,
            ..Default::default()
        };
        let r = packet_delay_inspector(&p, &t).unwrap();
        assert_eq!(r.flows.len(), 1);
        assert_relative_eq!(r.flows[0].delay, 6.0, max_relative = 1e-12);
        assert_relative_eq!(
            r.rt(Coord::new(1, 0), Port::West),
            2.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn zero_load_delay_is_hop_service() {
        let p = Placement::from_text("C..\n..$\n").unwrap();
        let t = TrafficSpec {
            lambda_g: 1e-9,
            svc: ServiceSpec {
                mean: 10.0,
                scv: 1.0,
            },
            ..Default::default()
        };
        let r = packet_delay_inspector(&p, &t).unwrap();
        assert_relative_eq!(r.flows[0].delay, 4.0 * 10.0, max_relative = 1e-6);
    }

    #[test]
    fn unstable_reports_router() {
        let p = Placement::from_text("C.$\n").unwrap();
        let t = TrafficSpec {
            lambda_g: 1.2,
            ..Default::default()
        };
        match packet_delay_inspector(&p, &t) {
            Err(Error::Unstable(s)) => assert_eq!(s.router, Some(Coord::new(0, 0))),
            other => panic!("expected Unstable, got {other:?}"),
        }
    }

    #[test]
    fn csv_headers() {
        let p = Placement::from_text("C$\n").unwrap();
        let r = packet_delay_inspector(&p, &TrafficSpec::default()).unwrap();
        assert!(r
            .router_csv()
            .starts_with("x,y,channel,lambda,rho_e,wq,rt,queue_len\n"));
        assert_eq!(r.flow_csv().lines().count(), 2);
    }
}
