//! Exact simulation of branching Brownian and branching OU clouds.
//!
//! Each lineage owns a random stream. It draws an Exp(1) lifetime and one
//! standard normal innovation; if the lifetime runs past the horizon the
//! lineage is a leaf (its last segment is cut at the horizon, same innovation),
//! otherwise it splits into two children whose streams are `split(0)` and
//! `split(1)` of its own. The genealogy and all innovations are therefore a
//! pure function of the root stream, and the position of a lineage end is a
//! deterministic function of its parent's position, the segment length, the
//! innovation and `mu`. Two consequences used throughout:
//!
//! * the streaming [`walk`] and the stored [`ParticleCloud`] see the same
//!   leaves, and pruning a subtree leaves every other lineage untouched;
//! * the same tree can be re-positioned for another `mu` (common random
//!   numbers across spring constants).

use crate::error::{ensure, Error, Result};
use crate::measure::{Centering, PointMeasure};
use crate::numerics::SQRT_2;
use crate::rng::StreamRng;
use crate::sampling::{ou_variance, SpringParams};

/// Default largest horizon for stored clouds (`e^16` is about 8.9e6 leaves).
pub const DEFAULT_HORIZON_CAP: f64 = 16.0;

const NO_PARENT: u32 = u32::MAX;
const BRIDGE_TAG: u64 = 0xb41d_9e5a;

/// Deterministic motion of one segment.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Motion {
    mu: f64,
}

impl Motion {
    pub(crate) fn new(mu: f64) -> Self {
        Self { mu }
    }

    #[inline]
    pub(crate) fn advance(&self, x0: f64, dt: f64, z: f64) -> f64 {
        if self.mu == 0.0 {
            x0 + dt.sqrt() * z
        } else if self.mu * dt < 1e-6 {
            x0 * (-self.mu * dt).exp() + ou_variance(self.mu, dt).sqrt() * z
        } else {
            // one expm1 gives both the decay and the variance
            let om = -(-self.mu * dt).exp_m1();
            x0 * (1.0 - om) + (om * (2.0 - om) / (2.0 * self.mu)).sqrt() * z
        }
    }
}

/// Draws one lineage segment: `(end time, innovation, is_leaf)`.
#[inline]
pub(crate) fn draw_segment(rng: &mut StreamRng, t0: f64, horizon: f64) -> (f64, f64, bool) {
    let life = rng.exp1();
    let z = rng.normal();
    let t1 = t0 + life;
    if t1 >= horizon {
        (horizon, z, true)
    } else {
        (t1, z, false)
    }
}

fn check_cap(spring: &SpringParams, cap: f64) -> Result<()> {
    if spring.horizon_t > cap {
        return Err(Error::ResourceLimit {
            what: format!("branching cloud to horizon {}", spring.horizon_t),
            expected: spring.horizon_t.exp(),
            limit: cap.exp(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    parent: u32,
    t_end: f64,
    z: f64,
    pos: f64,
    key: u64,
}

/// Stored binary genealogy with branch times and raw positions.
///
/// Nodes are lineages in depth-first pre-order, so every ancestor has a
/// smaller index than its descendants.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    spring: SpringParams,
    nodes: Vec<Node>,
    leaves: Vec<u32>,
}

/// Simulates a cloud with the default horizon cap.
pub fn simulate_cloud(spring: SpringParams, rng: &StreamRng) -> Result<ParticleCloud> {
    ParticleCloud::simulate_capped(spring, DEFAULT_HORIZON_CAP, rng)
}

impl ParticleCloud {
    pub fn simulate_capped(spring: SpringParams, cap: f64, rng: &StreamRng) -> Result<Self> {
        check_cap(&spring, cap)?;
        let t = spring.horizon_t;
        let motion = Motion::new(spring.mu);
        let mut nodes = Vec::new();
        let mut leaves = Vec::new();
        // (stream, parent index, start time, start position)
        let mut stack = vec![(rng.clone(), NO_PARENT, 0.0f64, 0.0f64)];
        while let Some((stream, parent, t0, x0)) = stack.pop() {
            let mut r = stream.clone();
            let (t1, z, leaf) = draw_segment(&mut r, t0, t);
            let pos = motion.advance(x0, t1 - t0, z);
            let idx = nodes.len() as u32;
            nodes.push(Node {
                parent,
                t_end: t1,
                z,
                pos,
                key: stream.key(),
            });
            if leaf {
                leaves.push(idx);
            } else {
                // push the second child first so the first is visited first
                stack.push((stream.split(1), idx, t1, pos));
                stack.push((stream.split(0), idx, t1, pos));
            }
        }
        Ok(Self { spring, nodes, leaves })
    }

    pub fn spring(&self) -> SpringParams {
        self.spring
    }

    pub fn horizon(&self) -> f64 {
        self.spring.horizon_t
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    /// Raw leaf positions `X_t(u)` in tree order.
    pub fn leaf_positions(&self) -> Vec<f64> {
        self.leaves.iter().map(|&i| self.nodes[i as usize].pos).collect()
    }

    /// Normalised leaf positions `lambda_{mu t} X_t(u)` in tree order.
    pub fn normalized_positions(&self) -> Vec<f64> {
        let lam = self.spring.normalization();
        self.leaves.iter().map(|&i| lam * self.nodes[i as usize].pos).collect()
    }

    /// Normalised positions of i.i.d. `N(0, t)` leaves on the same tree (the
    /// `mu = infinity` member of the coupling).
    pub fn iid_positions(&self) -> Vec<f64> {
        let s = self.horizon().sqrt();
        self.leaves.iter().map(|&i| s * self.nodes[i as usize].z).collect()
    }

    /// Branch times of all internal nodes, in tree order.
    pub fn branch_times(&self) -> Vec<f64> {
        let t = self.horizon();
        self.nodes.iter().filter(|n| n.t_end < t).map(|n| n.t_end).collect()
    }

    /// Time at which the most recent common ancestor of leaves `i` and `j`
    /// split (the horizon if `i == j`).
    pub fn mrca_time(&self, i: usize, j: usize) -> f64 {
        let mut a = self.leaves[i];
        let mut b = self.leaves[j];
        while a != b {
            if a > b {
                a = self.nodes[a as usize].parent;
            } else {
                b = self.nodes[b as usize].parent;
            }
        }
        self.nodes[a as usize].t_end
    }

    /// The same genealogy and innovations moved with another spring constant.
    pub fn repositioned(&self, mu: f64) -> Result<ParticleCloud> {
        let spring = SpringParams::new(mu, self.horizon())?;
        let motion = Motion::new(mu);
        let mut nodes = self.nodes.clone();
        for i in 0..nodes.len() {
            let p = nodes[i].parent;
            let (t0, x0) = if p == NO_PARENT {
                (0.0, 0.0)
            } else {
                (nodes[p as usize].t_end, nodes[p as usize].pos)
            };
            nodes[i].pos = motion.advance(x0, nodes[i].t_end - t0, nodes[i].z);
        }
        Ok(ParticleCloud {
            spring,
            nodes,
            leaves: self.leaves.clone(),
        })
    }

    fn start_of(&self, idx: usize) -> (f64, f64) {
        let p = self.nodes[idx].parent;
        if p == NO_PARENT {
            (0.0, 0.0)
        } else {
            let n = &self.nodes[p as usize];
            (n.t_end, n.pos)
        }
    }
}

/// Centred normalised leaf positions.
pub fn extremal_measure(cloud: &ParticleCloud, centering: Centering) -> Result<PointMeasure> {
    let t = cloud.horizon();
    ensure((centering.t - t).abs() <= 1e-12 * t, || {
        format!("centering horizon {} differs from cloud horizon {t}", centering.t)
    })?;
    let m = centering.value();
    let atoms: Vec<f64> = cloud.normalized_positions().into_iter().map(|x| x - m).collect();
    PointMeasure::from_atoms(atoms)
}

fn require_brownian(cloud: &ParticleCloud) -> Result<()> {
    ensure(cloud.spring.mu == 0.0, || {
        format!(
            "martingale defined for branching Brownian motion, got mu = {}",
            cloud.spring.mu
        )
    })
}

/// `W^beta_t = sum_u exp(beta X_t(u) - (beta^2/2 + 1) t)`.
pub fn additive_martingale(cloud: &ParticleCloud, beta: f64) -> Result<f64> {
    require_brownian(cloud)?;
    let t = cloud.horizon();
    let c = (0.5 * beta * beta + 1.0) * t;
    Ok(cloud.leaf_positions().iter().map(|x| (beta * x - c).exp()).sum())
}

/// `Z_t = sum_u (sqrt2 t - X_t(u)) exp(sqrt2 X_t(u) - 2t)`.
pub fn derivative_martingale(cloud: &ParticleCloud) -> Result<f64> {
    require_brownian(cloud)?;
    let t = cloud.horizon();
    Ok(cloud
        .leaf_positions()
        .iter()
        .map(|x| (SQRT_2 * t - x) * (SQRT_2 * x - 2.0 * t).exp())
        .sum())
}

/// Positions at time `s` of the variable-speed BBM attached to a cloud run with
/// `mu = gamma / t`: `Y_s(u) = c_gamma e^{gamma s / t} X_s(u)` for every
/// lineage alive at `s`.
///
/// Positions strictly inside a segment are drawn from the exact OU bridge
/// between the stored endpoints, using a stream derived from the lineage key,
/// so repeated calls agree.
pub fn variable_speed_view(cloud: &ParticleCloud, gamma: f64, s: f64) -> Result<Vec<f64>> {
    let t = cloud.horizon();
    let mu = cloud.spring.mu;
    ensure(gamma > 0.0 && gamma.is_finite(), || {
        format!("gamma must be finite and > 0, got {gamma}")
    })?;
    ensure(((mu * t) - gamma).abs() <= 1e-9 * gamma, || {
        format!("cloud has mu t = {}, expected gamma = {gamma}", mu * t)
    })?;
    ensure((0.0..=t).contains(&s), || format!("time {s} outside [0, {t}]"))?;
    // log c_gamma, kept finite for large gamma
    let a = 2.0 * gamma;
    let log_rel = if a > 30.0 {
        a - a.ln() + (-(-a).exp()).ln_1p()
    } else {
        crate::sampling::rel_expm1(a).ln()
    };
    let scale = (-0.5 * log_rel + gamma * s / t).exp();
    let mut out = Vec::new();
    for (idx, node) in cloud.nodes.iter().enumerate() {
        let (t0, x0) = cloud.start_of(idx);
        let alive = (t0 <= s && s < node.t_end) || (s == t && node.t_end == t);
        if !alive {
            continue;
        }
        let x = if s == t0 {
            x0
        } else if s == node.t_end {
            node.pos
        } else {
            let v1 = ou_variance(mu, s - t0);
            let v2 = ou_variance(mu, node.t_end - s);
            let m1 = x0 * (-mu * (s - t0)).exp();
            let e2 = (-mu * (node.t_end - s)).exp();
            let prec = 1.0 / v1 + e2 * e2 / v2;
            let mean = (m1 / v1 + e2 * node.pos / v2) / prec;
            let mut r = StreamRng::from_key(node.key).split(BRIDGE_TAG);
            mean + r.normal() / prec.sqrt()
        };
        out.push(scale * x);
    }
    Ok(out)
}

/// Callbacks for [`walk`].
pub trait LineageVisitor {
    /// A lineage is about to be simulated from raw position `x` at time `t`.
    /// Returning `false` discards it and all its descendants.
    fn enter(&mut self, _t: f64, _x: f64) -> bool {
        true
    }

    /// A leaf at the horizon, raw position.
    fn leaf(&mut self, x: f64);

    /// Checked after each leaf; `true` ends the walk early.
    fn done(&self) -> bool {
        false
    }
}

/// Streams the leaves of the cloud rooted at `(t0, x0)` without storing the
/// tree. `node_budget` bounds the number of simulated lineages.
pub fn walk<V: LineageVisitor>(
    spring: SpringParams,
    t0: f64,
    x0: f64,
    rng: &StreamRng,
    node_budget: u64,
    visitor: &mut V,
) -> Result<u64> {
    let horizon = spring.horizon_t;
    let motion = Motion::new(spring.mu);
    let mut stack = vec![(rng.clone(), t0, x0)];
    let mut nodes = 0u64;
    while let Some((stream, ts, xs)) = stack.pop() {
        if !visitor.enter(ts, xs) {
            continue;
        }
        nodes += 1;
        if nodes > node_budget {
            return Err(Error::ResourceLimit {
                what: format!("lineage walk to horizon {horizon}"),
                expected: (horizon - t0).exp(),
                limit: node_budget as f64,
            });
        }
        let mut r = stream.clone();
        let (t1, z, leaf) = draw_segment(&mut r, ts, horizon);
        let pos = motion.advance(xs, t1 - ts, z);
        if leaf {
            visitor.leaf(pos);
            if visitor.done() {
                break;
            }
        } else {
            stack.push((stream.split(1), t1, pos));
            stack.push((stream.split(0), t1, pos));
        }
    }
    Ok(nodes)
}

/// Default lineage budget for a streaming walk to horizon `t`.
pub fn default_node_budget(t: f64) -> u64 {
    (40.0 * (t.min(DEFAULT_HORIZON_CAP)).exp()).max(1e6) as u64
}
