//! Minimum-cost flow with separable convex item costs, and the welfare optimum.
//!
//! Flow is routed by decomposing the item set into marginal-cost levels: the whole demand is
//! first placed at one common level, and any item set that ends up over-supplied relative to
//! the buyers able to reach it is split off (found as a minimum cut) and solved at a lower level.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functions::{CostFn, DemandFn};
use crate::market::{Allocation, DemandVector, MarketError, MarketInstance, PriceVector, Solution};

pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("demand cannot be routed within capacity: buyers {buyers:?} need {shortfall} more than items {items:?} can hold")]
    Infeasible { buyers: Vec<String>, items: Vec<String>, shortfall: f64 },
    #[error("flow failed to certify: KKT residual {residual} exceeds tolerance {tol}")]
    Uncertified { residual: f64, tol: f64 },
    #[error(transparent)]
    Market(#[from] MarketError),
}

/// A convex resource as seen by the solver.
pub trait Resource {
    fn marginal(&self, y: f64) -> f64;
    fn total(&self, y: f64) -> f64;
    /// `sup { y in [0, cap] : marginal(y) <= m }`, or 0 when empty.
    fn upper_quantity(&self, m: f64) -> f64;
    fn capacity(&self) -> f64;
}

impl Resource for CostFn {
    fn marginal(&self, y: f64) -> f64 {
        CostFn::marginal(self, y)
    }
    fn total(&self, y: f64) -> f64 {
        CostFn::total(self, y)
    }
    fn upper_quantity(&self, m: f64) -> f64 {
        CostFn::upper_quantity(self, m)
    }
    fn capacity(&self) -> f64 {
        CostFn::capacity(self).unwrap_or(f64::INFINITY)
    }
}

/// Unserved mass `u = T - x` of a buyer, priced at the forgone value `λ(T - u)`.
struct OptOut<'a>(&'a DemandFn);

impl Resource for OptOut<'_> {
    fn marginal(&self, u: f64) -> f64 {
        self.0.value(self.0.support() - u)
    }
    fn total(&self, u: f64) -> f64 {
        let t = self.0.support();
        self.0.antiderivative(t) - self.0.antiderivative(t - u)
    }
    fn upper_quantity(&self, m: f64) -> f64 {
        if m < self.0.floor() {
            0.0
        } else {
            self.0.support() - self.0.lower_inverse(m)
        }
    }
    fn capacity(&self) -> f64 {
        self.0.support()
    }
}

struct Network {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
}

impl Network {
    fn new(n: usize) -> Self {
        Network { adj: vec![Vec::new(); n], to: Vec::new(), cap: Vec::new() }
    }

    fn add(&mut self, u: usize, v: usize, c: f64) -> usize {
        let id = self.to.len();
        self.adj[u].push(id);
        self.to.push(v);
        self.cap.push(c);
        self.adj[v].push(id + 1);
        self.to.push(u);
        self.cap.push(0.0);
        id
    }

    fn flow(&self, id: usize) -> f64 {
        self.cap[id ^ 1]
    }

    fn max_flow(&mut self, s: usize, t: usize, eps: f64) -> f64 {
        let n = self.adj.len();
        let mut total = 0.0;
        loop {
            let mut pred = vec![usize::MAX; n];
            let mut seen = vec![false; n];
            seen[s] = true;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                if u == t {
                    break;
                }
                for &e in &self.adj[u] {
                    let v = self.to[e];
                    if !seen[v] && self.cap[e] > eps {
                        seen[v] = true;
                        pred[v] = e;
                        queue.push_back(v);
                    }
                }
            }
            if !seen[t] {
                return total;
            }
            let mut push = f64::INFINITY;
            let mut v = t;
            while v != s {
                let e = pred[v];
                push = push.min(self.cap[e]);
                v = self.to[e ^ 1];
            }
            let mut v = t;
            while v != s {
                let e = pred[v];
                self.cap[e] -= push;
                self.cap[e ^ 1] += push;
                v = self.to[e ^ 1];
            }
            total += push;
        }
    }

    fn reachable(&self, s: usize, eps: f64) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &e in &self.adj[u] {
                let v = self.to[e];
                if !seen[v] && self.cap[e] > eps {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }
}

/// Bipartite transportation problem with fixed buyer demands.
pub(crate) struct Transport<'a> {
    pub resources: Vec<&'a dyn Resource>,
    pub demands: Vec<f64>,
    /// `(buyer, resource)` pairs.
    pub arcs: Vec<(usize, usize)>,
}

pub(crate) struct Infeasibility {
    pub buyers: Vec<usize>,
    pub resources: Vec<usize>,
    pub shortfall: f64,
}

impl<'a> Transport<'a> {
    fn buyer_arcs(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.demands.len()];
        for (k, &(b, _)) in self.arcs.iter().enumerate() {
            out[b].push(k);
        }
        out
    }

    fn network(&self, buyers: &[usize], in_set: &[bool], caps: &dyn Fn(usize) -> f64) -> (Network, Vec<(usize, usize)>) {
        let nb = self.demands.len();
        let nr = self.resources.len();
        let (s, t) = (nb + nr, nb + nr + 1);
        let mut net = Network::new(nb + nr + 2);
        let mut arc_ids = Vec::new();
        let mut res_seen = vec![false; nr];
        for &b in buyers {
            net.add(s, b, self.demands[b]);
        }
        for (k, &(b, r)) in self.arcs.iter().enumerate() {
            if in_set[nb + r] && in_set[b] {
                arc_ids.push((k, net.add(b, nb + r, f64::INFINITY)));
                if !res_seen[r] {
                    res_seen[r] = true;
                    net.add(nb + r, t, caps(r));
                }
            }
        }
        (net, arc_ids)
    }

    /// Minimum-cost routing of all demand. Arcs are assumed to reference valid indices.
    pub fn solve(&self) -> Result<Vec<f64>, Infeasibility> {
        let nb = self.demands.len();
        let nr = self.resources.len();
        let total: f64 = self.demands.iter().sum();
        let eps = 1e-12 * total.max(1.0);
        let all_buyers: Vec<usize> = (0..nb).collect();
        let everything = vec![true; nb + nr];
        let (mut net, _) = self.network(&all_buyers, &everything, &|r| self.resources[r].capacity());
        let routed = net.max_flow(nb + nr, nb + nr + 1, eps * 1e-3);
        if total - routed > eps * 10.0 {
            let reach = net.reachable(nb + nr, eps * 1e-3);
            return Err(Infeasibility {
                buyers: (0..nb).filter(|&b| reach[b]).collect(),
                resources: (0..nr).filter(|&r| reach[nb + r]).collect(),
                shortfall: total - routed,
            });
        }

        let mut flows = vec![0.0; self.arcs.len()];
        let mut stack: Vec<(Vec<usize>, Vec<usize>)> = vec![((0..nr).collect(), all_buyers)];
        while let Some((rs, bs)) = stack.pop() {
            let d: f64 = bs.iter().map(|&b| self.demands[b]).sum();
            if bs.is_empty() || d <= 0.0 {
                continue;
            }
            let loads = self.level_fill(&rs, d);
            let mut in_set = vec![false; nb + nr];
            for &b in &bs {
                in_set[b] = true;
            }
            let mut load_of = vec![0.0; nr];
            for (&r, &y) in rs.iter().zip(&loads) {
                in_set[nb + r] = true;
                load_of[r] = y;
            }
            let (mut net, arc_ids) = self.network(&bs, &in_set, &|r| load_of[r]);
            let tiny = 1e-15 * d.max(1.0);
            let routed = net.max_flow(nb + nr, nb + nr + 1, tiny);
            let mut split = None;
            if d - routed > 1e-11 * d.max(1.0) {
                let reach = net.reachable(nb + nr, tiny);
                let low: Vec<usize> = rs.iter().copied().filter(|&r| !reach[nb + r]).collect();
                if !low.is_empty() && low.len() < rs.len() {
                    split = Some(low);
                }
            }
            match split {
                None => {
                    for (k, id) in arc_ids {
                        flows[k] = net.flow(id);
                    }
                }
                Some(low) => {
                    let mut is_low = vec![false; nr];
                    for &r in &low {
                        is_low[r] = true;
                    }
                    let mut touches = vec![false; nb];
                    for &(b, r) in &self.arcs {
                        if in_set[b] && is_low[r] {
                            touches[b] = true;
                        }
                    }
                    let high: Vec<usize> = rs.iter().copied().filter(|&r| !is_low[r]).collect();
                    let (b_low, b_high): (Vec<usize>, Vec<usize>) = bs.iter().partition(|&&b| touches[b]);
                    stack.push((high, b_high));
                    stack.push((low, b_low));
                }
            }
        }

        // close rounding gaps so every buyer ships exactly its demand
        let arcs_of = self.buyer_arcs();
        for (b, ks) in arcs_of.iter().enumerate() {
            if ks.is_empty() {
                continue;
            }
            let shipped: f64 = ks.iter().map(|&k| flows[k]).sum();
            let gap = self.demands[b] - shipped;
            if gap != 0.0 {
                let k = *ks
                    .iter()
                    .max_by(|&&a, &&c| flows[a].total_cmp(&flows[c]).then(c.cmp(&a)))
                    .unwrap();
                flows[k] = (flows[k] + gap).max(0.0);
            }
        }
        Ok(flows)
    }

    /// Places `d` units on `rs` at the lowest common marginal level.
    fn level_fill(&self, rs: &[usize], d: f64) -> Vec<f64> {
        let res = |r: usize| self.resources[r];
        let supply = |l: f64| -> f64 { rs.iter().map(|&r| res(r).upper_quantity(l)).sum() };
        let floor = rs.iter().map(|&r| res(r).marginal(0.0)).fold(f64::INFINITY, f64::min);
        let mut lo = floor - floor.abs().max(1.0);
        let mut hi = floor;
        let mut step = floor.abs().max(1.0);
        let mut reached = supply(hi) >= d;
        for _ in 0..2000 {
            if reached {
                break;
            }
            lo = hi;
            hi += step;
            step *= 2.0;
            reached = supply(hi) >= d;
        }
        if !reached {
            return rs.iter().map(|&r| res(r).capacity().min(d)).collect();
        }
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if supply(mid) >= d {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mut loads: Vec<f64> = rs.iter().map(|&r| res(r).upper_quantity(lo)).collect();
        let mut rem = d - loads.iter().sum::<f64>();
        for (j, &r) in rs.iter().enumerate() {
            if rem <= 0.0 {
                break;
            }
            let add = rem.min(res(r).upper_quantity(hi) - loads[j]);
            if add > 0.0 {
                loads[j] += add;
                rem -= add;
            }
        }
        if rem > 0.0 {
            let j = (0..rs.len())
                .max_by(|&a, &b| {
                    let ha = res(rs[a]).capacity() - loads[a];
                    let hb = res(rs[b]).capacity() - loads[b];
                    ha.total_cmp(&hb).then(b.cmp(&a))
                })
                .unwrap();
            loads[j] += rem;
        }
        loads
    }

    /// Pairwise rerouting between a buyer's dearest used resource and its cheapest reachable one.
    pub fn polish(&self, flows: &mut [f64], max_iter: usize, tol: f64) {
        let arcs_of = self.buyer_arcs();
        let nr = self.resources.len();
        for _ in 0..max_iter {
            let mut loads = vec![0.0; nr];
            for (k, &(_, r)) in self.arcs.iter().enumerate() {
                loads[r] += flows[k];
            }
            let marg: Vec<f64> = (0..nr).map(|r| self.resources[r].marginal(loads[r])).collect();
            let mut best: Option<(f64, usize, usize)> = None;
            for (b, ks) in arcs_of.iter().enumerate() {
                let thresh = USED_FLOW * self.demands[b].max(1.0);
                let hi = ks.iter().copied().filter(|&k| flows[k] > thresh).max_by(|&a, &c| {
                    marg[self.arcs[a].1].total_cmp(&marg[self.arcs[c].1]).then(c.cmp(&a))
                });
                let lo = ks.iter().copied().min_by(|&a, &c| {
                    marg[self.arcs[a].1].total_cmp(&marg[self.arcs[c].1]).then(a.cmp(&c))
                });
                if let (Some(h), Some(l)) = (hi, lo) {
                    let gap = marg[self.arcs[h].1] - marg[self.arcs[l].1];
                    if gap > best.map_or(tol, |x| x.0) {
                        best = Some((gap, h, l));
                    }
                }
            }
            let Some((_, h, l)) = best else { return };
            let (rh, rl) = (self.arcs[h].1, self.arcs[l].1);
            let (yh, yl) = (loads[rh], loads[rl]);
            let headroom = (self.resources[rl].capacity() - yl).max(0.0);
            let mut a = 0.0;
            let mut b = flows[h].min(headroom);
            let diff = |delta: f64| {
                self.resources[rh].marginal(yh - delta) - self.resources[rl].marginal(yl + delta)
            };
            if diff(b) >= 0.0 {
                a = b;
            } else {
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if m <= a || m >= b {
                        break;
                    }
                    if diff(m) >= 0.0 {
                        a = m;
                    } else {
                        b = m;
                    }
                }
            }
            if a <= 0.0 {
                return;
            }
            flows[h] -= a;
            flows[l] += a;
        }
    }
}

/// Flow below this fraction of a buyer's demand does not count as "used" in KKT checks.
const USED_FLOW: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowResult {
    pub allocation: Allocation,
    pub loads: Vec<f64>,
    pub marginals: Vec<f64>,
    /// `r_i`: cheapest marginal reachable by buyer `i` through allowed edges.
    pub levels: Vec<f64>,
    pub cost: f64,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelfareOptimum {
    /// `p*_t = c_t(y*_t)`.
    pub prices: PriceVector,
    pub demand: DemandVector,
    pub allocation: Allocation,
    pub welfare: f64,
    /// Largest residual of the optimality conditions.
    pub certificate: f64,
}

impl WelfareOptimum {
    pub fn solution(&self) -> Solution {
        Solution {
            prices: self.prices.clone(),
            demand: self.demand.clone(),
            allocation: self.allocation.clone(),
            diagnostics: Vec::new(),
        }
    }
}

fn infeasible(instance: &MarketInstance, inf: Infeasibility, items: usize) -> FlowError {
    FlowError::Infeasible {
        buyers: inf.buyers.iter().map(|&b| instance.buyers()[b].id.clone()).collect(),
        items: inf
            .resources
            .iter()
            .filter(|&&r| r < items)
            .map(|&r| instance.items()[r].id.clone())
            .collect(),
        shortfall: inf.shortfall,
    }
}

fn kkt_masked(instance: &MarketInstance, demand: &[f64], flows: &[f64], marginals: &[f64], mask: Option<&[bool]>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..instance.num_buyers() {
        if demand[i] <= 0.0 {
            continue;
        }
        let thresh = USED_FLOW * demand[i].max(1.0);
        let mut used_max = f64::NEG_INFINITY;
        let mut reach_min = f64::INFINITY;
        for &k in instance.buyer_edges(i) {
            if mask.is_some_and(|m| !m[k]) {
                continue;
            }
            let c = marginals[instance.edges()[k].item];
            reach_min = reach_min.min(c);
            if flows[k] > thresh {
                used_max = used_max.max(c);
            }
        }
        if used_max > f64::NEG_INFINITY {
            worst = worst.max(used_max - reach_min);
        }
    }
    worst
}

/// Largest gap `max_{used} c_t - min_{t ∈ S_i} c_t` over buyers with positive demand.
pub fn kkt_violation(instance: &MarketInstance, demand: &[f64], allocation: &Allocation) -> Result<f64, FlowError> {
    if demand.len() != instance.num_buyers() {
        return Err(MarketError::LengthMismatch { what: "demand vector", expected: instance.num_buyers(), got: demand.len() }.into());
    }
    if allocation.flows.len() != instance.edges().len() {
        return Err(MarketError::LengthMismatch { what: "allocation", expected: instance.edges().len(), got: allocation.flows.len() }.into());
    }
    let loads = instance.loads(allocation);
    let marg: Vec<f64> = instance.items().iter().zip(&loads).map(|(t, &y)| t.cost.marginal(y)).collect();
    Ok(kkt_masked(instance, demand, &allocation.flows, &marg, None))
}

/// Minimum-cost flow on the full graph.
pub fn min_cost_flow(instance: &MarketInstance, demand: &[f64], tol: f64) -> Result<FlowResult, FlowError> {
    min_cost_flow_masked(instance, demand, None, tol)
}

/// Minimum-cost flow using only edges with `mask[k] = true`.
pub fn min_cost_flow_masked(
    instance: &MarketInstance,
    demand: &[f64],
    mask: Option<&[bool]>,
    tol: f64,
) -> Result<FlowResult, FlowError> {
    let nb = instance.num_buyers();
    if demand.len() != nb {
        return Err(MarketError::LengthMismatch { what: "demand vector", expected: nb, got: demand.len() }.into());
    }
    if let Some(m) = mask {
        if m.len() != instance.edges().len() {
            return Err(MarketError::LengthMismatch { what: "edge mask", expected: instance.edges().len(), got: m.len() }.into());
        }
    }
    let allowed = |k: usize| mask.is_none_or(|m| m[k]);
    let mut arc_edge = Vec::new();
    let mut arcs = Vec::new();
    for (k, e) in instance.edges().iter().enumerate() {
        if allowed(k) {
            arcs.push((e.buyer, e.item));
            arc_edge.push(k);
        }
    }
    let demands: Vec<f64> = demand.iter().map(|&x| x.max(0.0)).collect();
    let transport = Transport {
        resources: instance.items().iter().map(|t| &t.cost as &dyn Resource).collect(),
        demands,
        arcs,
    };
    let mut arc_flows = transport.solve().map_err(|inf| infeasible(instance, inf, instance.num_items()))?;
    let mut result = assemble(instance, demand, &arc_edge, &arc_flows, mask);
    let scale = result.marginals.iter().filter(|m| m.is_finite()).fold(1.0f64, |a, m| a.max(m.abs()));
    if result.kkt_residual > tol * scale {
        transport.polish(&mut arc_flows, 10_000, 0.1 * tol * scale);
        result = assemble(instance, demand, &arc_edge, &arc_flows, mask);
        if result.kkt_residual > tol * scale {
            return Err(FlowError::Uncertified { residual: result.kkt_residual, tol: tol * scale });
        }
    }
    Ok(result)
}

fn assemble(instance: &MarketInstance, demand: &[f64], arc_edge: &[usize], arc_flows: &[f64], mask: Option<&[bool]>) -> FlowResult {
    let mut flows = vec![0.0; instance.edges().len()];
    for (&k, &f) in arc_edge.iter().zip(arc_flows) {
        flows[k] = f;
    }
    let allocation = Allocation { flows };
    let loads = instance.loads(&allocation);
    let marginals: Vec<f64> = instance.items().iter().zip(&loads).map(|(t, &y)| t.cost.marginal(y)).collect();
    let levels = (0..instance.num_buyers())
        .map(|i| {
            instance
                .buyer_edges(i)
                .iter()
                .filter(|&&k| mask.is_none_or(|m| m[k]))
                .map(|&k| marginals[instance.edges()[k].item])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let cost = instance.production_cost(&loads);
    let kkt_residual = kkt_masked(instance, demand, &allocation.flows, &marginals, mask);
    FlowResult { allocation, loads, marginals, levels, cost, kkt_residual }
}

/// Welfare-maximizing demands and allocation, with supporting prices `p* = c(y*)`.
pub fn welfare_opt(instance: &MarketInstance, tol: f64) -> Result<WelfareOptimum, FlowError> {
    let nt = instance.num_items();
    let opt_outs: Vec<OptOut> = instance.buyers().iter().map(|b| OptOut(&b.demand)).collect();
    let mut resources: Vec<&dyn Resource> = instance.items().iter().map(|t| &t.cost as &dyn Resource).collect();
    resources.extend(opt_outs.iter().map(|o| o as &dyn Resource));
    let mut arcs: Vec<(usize, usize)> = instance.edges().iter().map(|e| (e.buyer, e.item)).collect();
    arcs.extend((0..instance.num_buyers()).map(|i| (i, nt + i)));
    let transport = Transport {
        resources,
        demands: instance.buyers().iter().map(|b| b.demand.support()).collect(),
        arcs,
    };
    let mut flows = transport.solve().map_err(|inf| infeasible(instance, inf, nt))?;
    let ne = instance.edges().len();
    let build = |flows: &[f64]| {
        let allocation = Allocation { flows: flows[..ne].to_vec() };
        let demand: Vec<f64> = instance.shipped(&allocation);
        let loads = instance.loads(&allocation);
        let prices: Vec<f64> = instance.items().iter().zip(&loads).map(|(t, &y)| t.cost.marginal(y)).collect();
        (allocation, demand, prices)
    };
    let (mut allocation, mut demand, mut prices) = build(&flows);
    let mut certificate = optimality_residual(instance, &prices, &demand, &allocation);
    let scale = prices.iter().filter(|m| m.is_finite()).fold(instance.max_peak().max(1.0), |a, m| a.max(m.abs()));
    if certificate > tol * scale {
        transport.polish(&mut flows, 10_000, 0.1 * tol * scale);
        (allocation, demand, prices) = build(&flows);
        certificate = optimality_residual(instance, &prices, &demand, &allocation);
        if certificate > tol * scale {
            return Err(FlowError::Uncertified { residual: certificate, tol: tol * scale });
        }
    }
    let welfare = instance.social_welfare(&demand, &allocation)?;
    Ok(WelfareOptimum { prices, demand, allocation, welfare, certificate })
}

fn optimality_residual(instance: &MarketInstance, prices: &[f64], demand: &[f64], allocation: &Allocation) -> f64 {
    let kkt = kkt_masked(instance, demand, &allocation.flows, prices, None);
    let envy = instance
        .check_envy_free(prices, demand, allocation, 1e-12)
        .map(|r| r.residual())
        .unwrap_or(f64::INFINITY);
    kkt.max(envy)
}

/// Best-response demands to `prices`, served by the cheapest allocation that only uses
/// edges priced at each buyer's minimum.
pub fn envy_free_outcome(instance: &MarketInstance, prices: &[f64], tol: f64) -> Result<Solution, FlowError> {
    let demand = instance.best_response(prices)?;
    let mask = tight_edges(instance, prices);
    let flow = min_cost_flow_masked(instance, &demand, Some(&mask), tol)?;
    Ok(Solution { prices: prices.to_vec(), demand, allocation: flow.allocation, diagnostics: Vec::new() })
}

/// Constant-value opt-out for a buyer rationed on a demand plateau.
struct Ration {
    value: f64,
    cap: f64,
}

impl Resource for Ration {
    fn marginal(&self, _: f64) -> f64 {
        self.value
    }
    fn total(&self, u: f64) -> f64 {
        self.value * u
    }
    fn upper_quantity(&self, m: f64) -> f64 {
        if m >= self.value {
            self.cap
        } else {
            0.0
        }
    }
    fn capacity(&self) -> f64 {
        self.cap
    }
}

/// Like [`envy_free_outcome`], but a buyer whose cheapest price sits on a flat stretch of its
/// demand curve may buy any amount on that stretch, and the seller picks the amounts that
/// maximize revenue. Prices within a relative `1e-9` of the plateau count as on it.
pub fn revenue_best_outcome(instance: &MarketInstance, prices: &[f64], tol: f64) -> Result<Solution, FlowError> {
    let mut demand = instance.best_response(prices)?;
    let nt = instance.num_items();
    let mask = tight_edges(instance, prices);
    let mut rations = Vec::new();
    let mut owners = Vec::new();
    for (i, b) in instance.buyers().iter().enumerate() {
        let p = instance.cheapest(prices, i);
        let band = 1e-9 * p.abs().max(1.0);
        let (lo, hi) = (b.demand.inverse(p + band), b.demand.inverse(p - band));
        if hi - lo > 1e-6 * b.demand.support() {
            demand[i] = hi;
            rations.push(Ration { value: p, cap: hi - lo });
            owners.push(i);
        }
    }
    if rations.is_empty() {
        let flow = min_cost_flow_masked(instance, &demand, Some(&mask), tol)?;
        return Ok(Solution { prices: prices.to_vec(), demand, allocation: flow.allocation, diagnostics: Vec::new() });
    }
    let mut resources: Vec<&dyn Resource> = instance.items().iter().map(|t| &t.cost as &dyn Resource).collect();
    resources.extend(rations.iter().map(|r| r as &dyn Resource));
    let mut arcs = Vec::new();
    let mut arc_edge = Vec::new();
    for (k, e) in instance.edges().iter().enumerate() {
        if mask[k] {
            arcs.push((e.buyer, e.item));
            arc_edge.push(k);
        }
    }
    arcs.extend(owners.iter().enumerate().map(|(r, &i)| (i, nt + r)));
    let transport = Transport { resources, demands: demand.clone(), arcs };
    let mut arc_flows = transport.solve().map_err(|inf| infeasible(instance, inf, nt))?;
    transport.polish(&mut arc_flows, 10_000, 0.1 * tol);
    let mut flows = vec![0.0; instance.edges().len()];
    for (&k, &f) in arc_edge.iter().zip(&arc_flows) {
        flows[k] = f;
    }
    let allocation = Allocation { flows };
    let demand = instance.shipped(&allocation);
    Ok(Solution { prices: prices.to_vec(), demand, allocation, diagnostics: Vec::new() })
}

/// Edges whose price equals the buyer's cheapest price.
pub fn tight_edges(instance: &MarketInstance, prices: &[f64]) -> Vec<bool> {
    let cheapest: Vec<f64> = (0..instance.num_buyers()).map(|i| instance.cheapest(prices, i)).collect();
    instance
        .edges()
        .iter()
        .map(|e| {
            let p = cheapest[e.buyer];
            prices[e.item] <= p + 1e-12 * p.abs().max(1.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{BuyerType, Item};

    fn market(buyers: Vec<DemandFn>, items: Vec<CostFn>, pairs: &[(usize, usize)]) -> MarketInstance {
        MarketInstance::from_pairs(
            buyers.into_iter().enumerate().map(|(i, demand)| BuyerType { id: format!("b{i}"), demand }).collect(),
            items.into_iter().enumerate().map(|(t, cost)| Item { id: format!("t{t}"), cost }).collect(),
            pairs,
        )
        .unwrap()
    }

    #[test]
    fn equalizes_marginals_across_two_items() {
        let m = market(
            vec![DemandFn::uniform(10.0, 3.0).unwrap()],
            vec![CostFn::quadratic(1.0).unwrap(), CostFn::quadratic(2.0).unwrap()],
            &[(0, 0), (0, 1)],
        );
        let r = min_cost_flow(&m, &[3.0], DEFAULT_TOL).unwrap();
        assert!((r.loads[0] - 2.0).abs() < 1e-12);
        assert!((r.loads[1] - 1.0).abs() < 1e-12);
        assert!((r.levels[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn kkt_detects_swapped_flow() {
        let m = market(
            vec![DemandFn::uniform(10.0, 3.0).unwrap()],
            vec![CostFn::linear(1.0).unwrap(), CostFn::linear(2.5).unwrap()],
            &[(0, 0), (0, 1)],
        );
        let good = Allocation { flows: vec![3.0, 0.0] };
        assert_eq!(kkt_violation(&m, &[3.0], &good).unwrap(), 0.0);
        let bad = Allocation { flows: vec![1.0, 2.0] };
        assert!((kkt_violation(&m, &[3.0], &bad).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn capacity_shortfall_names_binding_cut() {
        let cap = CostFn::zero().with_capacity(1.0).unwrap();
        let m = market(
            vec![DemandFn::uniform(1.0, 2.0).unwrap(), DemandFn::uniform(1.0, 1.0).unwrap()],
            vec![cap.clone(), CostFn::zero()],
            &[(0, 0), (1, 1)],
        );
        match min_cost_flow(&m, &[2.0, 1.0], DEFAULT_TOL) {
            Err(FlowError::Infeasible { buyers, items, shortfall }) => {
                assert_eq!(buyers, vec!["b0".to_string()]);
                assert_eq!(items, vec!["t0".to_string()]);
                assert!((shortfall - 1.0).abs() < 1e-12);
            }
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn chained_buyers_share_levels() {
        // b0 reaches only t0; b1 reaches t0 and t1; t0 ends up strictly dearer
        let m = market(
            vec![DemandFn::uniform(10.0, 2.0).unwrap(), DemandFn::uniform(10.0, 1.0).unwrap()],
            vec![CostFn::quadratic(0.5).unwrap(), CostFn::quadratic(0.5).unwrap()],
            &[(0, 0), (1, 0), (1, 1)],
        );
        let r = min_cost_flow(&m, &[2.0, 1.0], DEFAULT_TOL).unwrap();
        assert!((r.loads[0] - 2.0).abs() < 1e-12);
        assert!((r.loads[1] - 1.0).abs() < 1e-12);
        assert!(r.allocation.flows[1].abs() < 1e-12);
        assert!(r.kkt_residual < 1e-12);
    }

    #[test]
    fn flat_costs_break_ties_by_lowest_id() {
        let m = market(
            vec![DemandFn::uniform(1.0, 1.0).unwrap()],
            vec![CostFn::zero(), CostFn::zero()],
            &[(0, 1), (0, 0)],
        );
        let r = min_cost_flow(&m, &[1.0], DEFAULT_TOL).unwrap();
        assert_eq!(r.loads, vec![1.0, 0.0]);
    }

    #[test]
    fn smoothed_capacity_is_respected() {
        let m = market(
            vec![DemandFn::uniform(10.0, 2.0).unwrap()],
            vec![CostFn::smoothed(0.0, 1.5, 4.0).unwrap(), CostFn::linear(1.0).unwrap()],
            &[(0, 0), (0, 1)],
        );
        let r = min_cost_flow(&m, &[2.0], DEFAULT_TOL).unwrap();
        assert!(r.loads[0] <= 1.5);
        assert!((r.marginals[0] - 1.0).abs() < 1e-9);
        assert!((r.loads[0] + r.loads[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn welfare_opt_single_buyer_examples() {
        let m = market(vec![DemandFn::linear(1.0, 1.0, 1.0).unwrap()], vec![CostFn::zero()], &[(0, 0)]);
        let w = welfare_opt(&m, DEFAULT_TOL).unwrap();
        assert!((w.demand[0] - 1.0).abs() < 1e-12);
        assert_eq!(w.prices[0], 0.0);
        assert!((w.welfare - 0.5).abs() < 1e-12);

        let m = market(vec![DemandFn::linear(1.0, 1.0, 1.0).unwrap()], vec![CostFn::quadratic(0.5).unwrap()], &[(0, 0)]);
        let w = welfare_opt(&m, DEFAULT_TOL).unwrap();
        assert!((w.demand[0] - 0.5).abs() < 1e-12);
        assert!((w.prices[0] - 0.5).abs() < 1e-12);
        assert!((w.welfare - 0.25).abs() < 1e-12);
    }

    #[test]
    fn welfare_opt_with_uniform_plateau() {
        let m = market(vec![DemandFn::uniform(2.0, 1.0).unwrap()], vec![CostFn::linear(1.0).unwrap()], &[(0, 0)]);
        let w = welfare_opt(&m, DEFAULT_TOL).unwrap();
        assert_eq!(w.demand[0], 1.0);
        assert_eq!(w.prices[0], 1.0);
        assert!((w.welfare - 1.0).abs() < 1e-12);
        let m = market(vec![DemandFn::uniform(2.0, 1.0).unwrap()], vec![CostFn::linear(3.0).unwrap()], &[(0, 0)]);
        let w = welfare_opt(&m, DEFAULT_TOL).unwrap();
        assert_eq!(w.demand[0], 0.0);
        assert_eq!(w.welfare, 0.0);
    }

    #[test]
    fn envy_free_outcome_uses_only_tight_edges() {
        let m = market(
            vec![DemandFn::linear(1.0, 1.0, 1.0).unwrap()],
            vec![CostFn::zero(), CostFn::zero()],
            &[(0, 0), (0, 1)],
        );
        let s = envy_free_outcome(&m, &[0.4, 0.3], DEFAULT_TOL).unwrap();
        assert_eq!(s.allocation.flows[0], 0.0);
        assert!((s.allocation.flows[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn plateau_buyers_are_rationed_for_revenue() {
        // C = y²/2, λ = 0.3: the seller stops at c(y) = y = 0.3, earning 0.3² / 2
        let m = market(vec![DemandFn::uniform(0.3, 1.0).unwrap()], vec![CostFn::quadratic(0.5).unwrap()], &[(0, 0)]);
        let sup = envy_free_outcome(&m, &[0.3], DEFAULT_TOL).unwrap();
        assert!((sup.revenue(&m).unwrap() + 0.2).abs() < 1e-12);
        for p in [0.3, 0.3 + 1e-12] {
            let best = revenue_best_outcome(&m, &[p], DEFAULT_TOL).unwrap();
            assert!((best.demand[0] - 0.3).abs() < 1e-9, "{p}: {:?}", best.demand);
            assert!((best.revenue(&m).unwrap() - 0.045).abs() < 1e-9);
            assert!(best.envy(&m, 1e-9).unwrap().passes);
        }
        // away from the plateau both agree
        let m = market(vec![DemandFn::linear(1.0, 1.0, 1.0).unwrap()], vec![CostFn::quadratic(0.5).unwrap()], &[(0, 0)]);
        let a = envy_free_outcome(&m, &[0.6], DEFAULT_TOL).unwrap();
        let b = revenue_best_outcome(&m, &[0.6], DEFAULT_TOL).unwrap();
        assert_eq!(a, b);
    }
}
