//! Seeded instance generators: random MHR markets and the vertex-cover gadget.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{invalid, OracleError};
use crate::functions::{CostFn, DemandFn};
use crate::market::{BuyerType, Edge, Item, MarketInstance, MarketSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DemandFamily {
    Uniform,
    Linear,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostFamily {
    Zero,
    Linear,
    Quadratic,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn all_demands() -> Vec<DemandFamily> {
    vec![DemandFamily::Uniform, DemandFamily::Linear, DemandFamily::Exponential]
}

fn all_costs() -> Vec<CostFamily> {
    vec![CostFamily::Zero, CostFamily::Linear, CostFamily::Quadratic]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomMhrSpec {
    pub seed: u64,
    pub buyers: usize,
    pub items: usize,
    /// Smallest demand peak `λ_i(0)`.
    #[serde(default = "one")]
    pub peak: f64,
    /// Ratio of the largest to the smallest peak; `1` gives a uniform-peak market.
    #[serde(default = "one")]
    pub delta: f64,
    #[serde(default = "all_demands")]
    pub demand_families: Vec<DemandFamily>,
    #[serde(default = "all_costs")]
    pub cost_families: Vec<CostFamily>,
    /// Restrict costs to families with convex marginals vanishing at zero.
    #[serde(default)]
    pub doubly_convex_only: bool,
    #[serde(default = "half")]
    pub edge_probability: f64,
}

impl RandomMhrSpec {
    pub fn new(seed: u64, buyers: usize, items: usize) -> Self {
        RandomMhrSpec {
            seed,
            buyers,
            items,
            peak: 1.0,
            delta: 1.0,
            demand_families: all_demands(),
            cost_families: all_costs(),
            doubly_convex_only: false,
            edge_probability: 0.5,
        }
    }
}

/// Where a market comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case")]
pub enum InstanceSpec {
    RandomMhr(RandomMhrSpec),
    #[serde(rename_all = "snake_case")]
    VertexCoverGadget {
        vertices: usize,
        /// Explicit graph; drawn from `seed` and `edge_probability` when absent.
        #[serde(default)]
        edges: Option<Vec<[usize; 2]>>,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default = "half")]
        edge_probability: f64,
        /// Size of each edge block; defaults to the vertex count.
        #[serde(default)]
        r: Option<usize>,
    },
    Manual {
        market: MarketSpec,
    },
}

impl InstanceSpec {
    pub fn build(&self) -> Result<MarketInstance, OracleError> {
        match self {
            InstanceSpec::RandomMhr(spec) => gen_random_mhr_instance(spec),
            InstanceSpec::VertexCoverGadget { vertices, edges, seed, edge_probability, r } => {
                let graph = match edges {
                    Some(e) => e.iter().map(|&[a, b]| (a, b)).collect(),
                    None => {
                        let seed = seed.ok_or_else(|| invalid("seed", "a random gadget graph needs a seed"))?;
                        gen_random_graph(*vertices, *edge_probability, seed)?
                    }
                };
                gen_vertex_cover_gadget(*vertices, &graph, r.unwrap_or(*vertices))
            }
            InstanceSpec::Manual { market } => Ok(MarketInstance::try_from(market.clone())?),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            InstanceSpec::RandomMhr(spec) => Some(spec.seed),
            InstanceSpec::VertexCoverGadget { edges: None, seed, .. } => *seed,
            _ => None,
        }
    }

    /// Replaces the generator seed; no effect on explicit instances.
    pub fn reseed(&mut self, new_seed: u64) {
        match self {
            InstanceSpec::RandomMhr(spec) => spec.seed = new_seed,
            InstanceSpec::VertexCoverGadget { seed, .. } => *seed = Some(new_seed),
            InstanceSpec::Manual { .. } => {}
        }
    }
}

/// Deterministic random MHR market. Buyer 0 peaks at `peak`, buyer 1 at `peak·Δ`, the rest
/// in between on a log scale.
pub fn gen_random_mhr_instance(spec: &RandomMhrSpec) -> Result<MarketInstance, OracleError> {
    if spec.buyers == 0 || spec.items == 0 {
        return Err(invalid("buyers", "need at least one buyer and one item"));
    }
    if !(spec.peak > 0.0 && spec.peak.is_finite()) {
        return Err(invalid("peak", format!("must be positive, got {}", spec.peak)));
    }
    if !(spec.delta >= 1.0 && spec.delta.is_finite()) {
        return Err(invalid("delta", format!("must be at least 1, got {}", spec.delta)));
    }
    if spec.delta > 1.0 && spec.buyers < 2 {
        return Err(invalid("delta", "a peak spread needs at least two buyers"));
    }
    if !(0.0..=1.0).contains(&spec.edge_probability) {
        return Err(invalid("edge_probability", format!("must lie in [0, 1], got {}", spec.edge_probability)));
    }
    if spec.demand_families.is_empty() {
        return Err(invalid("demand_families", "no demand family to sample from"));
    }
    let costs: Vec<CostFamily> = spec
        .cost_families
        .iter()
        .copied()
        .filter(|f| !spec.doubly_convex_only || *f != CostFamily::Linear)
        .collect();
    if costs.is_empty() {
        return Err(invalid("cost_families", "no admissible cost family to sample from"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut buyers = Vec::with_capacity(spec.buyers);
    for i in 0..spec.buyers {
        let peak = match i {
            0 => spec.peak,
            1 => spec.peak * spec.delta,
            _ => spec.peak * spec.delta.powf(rng.gen::<f64>()),
        };
        let support = rng.gen_range(0.3..=1.0);
        let u = rng.gen_range(0.2..=1.0);
        let demand = match *spec.demand_families.choose(&mut rng).expect("nonempty") {
            DemandFamily::Uniform => DemandFn::uniform(peak, support),
            DemandFamily::Linear => DemandFn::linear(peak, u * peak / support, support),
            DemandFamily::Exponential => DemandFn::exponential(peak, 3.0 * u / support, support),
        }?;
        buyers.push(BuyerType { id: format!("b{i}"), demand });
    }
    let mut items = Vec::with_capacity(spec.items);
    for t in 0..spec.items {
        let cost = match *costs.choose(&mut rng).expect("nonempty") {
            CostFamily::Zero => CostFn::zero(),
            CostFamily::Linear => CostFn::linear(rng.gen_range(0.0..=0.5) * spec.peak)?,
            CostFamily::Quadratic => CostFn::quadratic(rng.gen_range(0.05..=1.0) * spec.peak)?,
        };
        items.push(Item { id: format!("t{t}"), cost });
    }
    let mut edges = Vec::new();
    for i in 0..spec.buyers {
        let before = edges.len();
        for t in 0..spec.items {
            if rng.gen_bool(spec.edge_probability) {
                edges.push(Edge { buyer: i, item: t });
            }
        }
        if edges.len() == before {
            edges.push(Edge { buyer: i, item: rng.gen_range(0..spec.items) });
        }
    }
    Ok(MarketInstance::new(buyers, items, edges)?)
}

/// Erdős–Rényi graph on `n` vertices.
pub fn gen_random_graph(n: usize, p: f64, seed: u64) -> Result<Vec<(usize, usize)>, OracleError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid("edge_probability", format!("must lie in [0, 1], got {p}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(p) {
                out.push((a, b));
            }
        }
    }
    Ok(out)
}

/// Hardness gadget for vertex cover. Vertex `v` gets item `t{v}` and a buyer `v{v}` with
/// value 2 for one unit. Each edge `(a, b)` gets a block of `r` buyers with `λ(x) = 2 - x`,
/// aggregated into one type `λ(x) = 2 - x/r` on `[0, 2r]`, with access to `t{a}` and `t{b}`.
pub fn gen_vertex_cover_gadget(vertices: usize, graph: &[(usize, usize)], r: usize) -> Result<MarketInstance, OracleError> {
    if vertices == 0 {
        return Err(invalid("vertices", "graph needs at least one vertex"));
    }
    if r == 0 {
        return Err(invalid("r", "edge blocks need at least one buyer"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for &(a, b) in graph {
        if a >= vertices || b >= vertices {
            return Err(invalid("edges", format!("edge ({a}, {b}) leaves the vertex range")));
        }
        if a == b {
            return Err(invalid("edges", format!("self-loop at {a}")));
        }
        if !seen.insert((a.min(b), a.max(b))) {
            return Err(invalid("edges", format!("duplicate edge ({a}, {b})")));
        }
    }
    let rf = r as f64;
    let mut buyers: Vec<BuyerType> =
        (0..vertices).map(|v| Ok(BuyerType { id: format!("v{v}"), demand: DemandFn::uniform(2.0, 1.0)? })).collect::<Result<_, OracleError>>()?;
    let items: Vec<Item> = (0..vertices).map(|v| Item { id: format!("t{v}"), cost: CostFn::zero() }).collect();
    let mut edges: Vec<Edge> = (0..vertices).map(|v| Edge { buyer: v, item: v }).collect();
    for &(a, b) in graph {
        let i = buyers.len();
        buyers.push(BuyerType { id: format!("e{a}-{b}"), demand: DemandFn::linear(2.0, 1.0 / rf, 2.0 * rf)? });
        edges.push(Edge { buyer: i, item: a });
        edges.push(Edge { buyer: i, item: b });
    }
    Ok(MarketInstance::new(buyers, items, edges)?)
}

pub fn is_vertex_cover(graph: &[(usize, usize)], cover: &[bool]) -> bool {
    graph.iter().all(|&(a, b)| cover[a] || cover[b])
}
