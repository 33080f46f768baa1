//! Finite reward-free MDPs, tabular policies and their occupancy measures.

mod generators;
pub(crate) mod sim;

pub use generators::{example_three_state, random_mdp, symmetric_mdp, DEFAULT_GAMMA};
pub use sim::{Episode, Simulator};

use ndarray::{Array1, Array2, Array3, Axis};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

const ROW_TOL: f64 = 1e-12;

/// A reward-free finite MDP `<S, A, T, gamma, p0>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct FiniteMdp {
    transition: Array3<f64>,
    p0: Array1<f64>,
    gamma: f64,
}

/// JSON form of [`FiniteMdp`].
#[derive(Serialize, Deserialize)]
struct MdpDocument {
    num_states: usize,
    num_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    p0: Vec<f64>,
    gamma: f64,
}

impl TryFrom<MdpDocument> for FiniteMdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        let (s, a) = (doc.num_states, doc.num_actions);
        if doc.transition.len() != s
            || doc.transition.iter().any(|r| r.len() != a || r.iter().any(|c| c.len() != s))
        {
            return Err(Error::Shape(format!("transition must be {s}x{a}x{s}")));
        }
        let flat: Vec<f64> = doc.transition.into_iter().flatten().flatten().collect();
        let transition = Array3::from_shape_vec((s, a, s), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        FiniteMdp::new(transition, Array1::from(doc.p0), doc.gamma)
    }
}

impl From<FiniteMdp> for MdpDocument {
    fn from(mdp: FiniteMdp) -> Self {
        let (s, a) = (mdp.num_states(), mdp.num_actions());
        let transition = (0..s)
            .map(|i| (0..a).map(|j| mdp.transition.slice(ndarray::s![i, j, ..]).to_vec()).collect())
            .collect();
        MdpDocument {
            num_states: s,
            num_actions: a,
            transition,
            p0: mdp.p0.to_vec(),
            gamma: mdp.gamma,
        }
    }
}

fn check_distribution(v: ndarray::ArrayView1<f64>, what: &str) -> Result<()> {
    if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidModel(format!("{what} has a negative or non-finite entry")));
    }
    let total = v.sum();
    if (total - 1.0).abs() > ROW_TOL {
        return Err(Error::InvalidModel(format!("{what} sums to {total}")));
    }
    Ok(())
}

impl FiniteMdp {
    /// Builds an MDP from a `(s, a, s')` transition tensor.
    pub fn new(transition: Array3<f64>, p0: Array1<f64>, gamma: f64) -> Result<Self> {
        let (s, a, s2) = transition.dim();
        if s == 0 || a == 0 || s2 != s || p0.len() != s {
            return Err(Error::Shape(format!(
                "transition {s}x{a}x{s2} with p0 of length {}",
                p0.len()
            )));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidModel(format!("gamma {gamma} not in (0, 1]")));
        }
        for i in 0..s {
            for j in 0..a {
                check_distribution(
                    transition.slice(ndarray::s![i, j, ..]),
                    &format!("transition row ({i},{j})"),
                )?;
            }
        }
        check_distribution(p0.view(), "p0")?;
        Ok(Self { transition, p0, gamma })
    }

    pub fn num_states(&self) -> usize {
        self.p0.len()
    }

    pub fn num_actions(&self) -> usize {
        self.transition.dim().1
    }

    /// Transition tensor indexed `(s, a, s')`.
    pub fn transition(&self) -> &Array3<f64> {
        &self.transition
    }

    pub fn p0(&self) -> &Array1<f64> {
        &self.p0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.transition.clone(), self.p0.clone(), gamma)
    }

    pub fn with_p0(&self, p0: Array1<f64>) -> Result<Self> {
        Self::new(self.transition.clone(), p0, self.gamma)
    }

    /// `sum_{s'} T(s'|s,a) v(s')` for every `(s, a)`.
    pub fn expected_next(&self, v: &Array1<f64>) -> Array2<f64> {
        let (s, a, _) = self.transition.dim();
        let flat = self
            .transition
            .view()
            .into_shape_with_order((s * a, s))
            .expect("contiguous transition tensor");
        flat.dot(v).into_shape_with_order((s, a)).expect("reshape")
    }

    /// State-to-state matrix `P_pi(s, s') = sum_a pi(a|s) T(s'|s,a)`.
    pub fn state_transition(&self, policy: &TabularPolicy) -> Array2<f64> {
        let (s, a, _) = self.transition.dim();
        let mut p = Array2::zeros((s, s));
        for i in 0..s {
            for j in 0..a {
                let w = policy.probs[[i, j]];
                if w != 0.0 {
                    p.row_mut(i)
                        .scaled_add(w, &self.transition.slice(ndarray::s![i, j, ..]));
                }
            }
        }
        p
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Stationary Markov policy `pi(a|s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    probs: Array2<f64>,
}

impl TabularPolicy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (s, row) in probs.outer_iter().enumerate() {
            check_distribution(row, &format!("policy row {s}"))?;
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            probs: Array2::from_elem((num_states, num_actions), 1.0 / num_actions as f64),
        }
    }

    /// One-hot policy taking `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Self {
        let mut probs = Array2::zeros((actions.len(), num_actions));
        for (s, &a) in actions.iter().enumerate() {
            probs[[s, a]] = 1.0;
        }
        Self { probs }
    }

    /// Row-wise softmax of `logits`, max-shifted.
    pub fn softmax(logits: &Array2<f64>) -> Self {
        let mut probs = logits.clone();
        for mut row in probs.outer_iter_mut() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row /= z;
        }
        Self { probs }
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn num_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn row(&self, s: usize) -> ndarray::ArrayView1<'_, f64> {
        self.probs.row(s)
    }

    /// Every policy over `A` actions that is deterministic in each of `S` states.
    pub fn enumerate_deterministic(num_states: usize, num_actions: usize) -> Vec<Self> {
        let total = num_actions.pow(num_states as u32);
        (0..total)
            .map(|mut code| {
                let actions: Vec<usize> = (0..num_states)
                    .map(|_| {
                        let a = code % num_actions;
                        code /= num_actions;
                        a
                    })
                    .collect();
                Self::deterministic(&actions, num_actions)
            })
            .collect()
    }
}

/// State-action occupancy `d(s,a)` with its state marginal `d_bar(s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub d: Array2<f64>,
    pub d_bar: Array1<f64>,
}

impl Occupancy {
    /// `d(s,a) = d_bar(s) pi(a|s)`.
    pub fn from_state_marginal(d_bar: Array1<f64>, policy: &TabularPolicy) -> Self {
        let d = &policy.probs * &d_bar.view().insert_axis(Axis(1));
        Self { d, d_bar }
    }

    /// Occupancy with marginal recomputed from `d`.
    pub fn from_joint(d: Array2<f64>) -> Self {
        let d_bar = d.sum_axis(Axis(1));
        Self { d, d_bar }
    }

    pub fn state_entropy(&self) -> f64 {
        entropy_unchecked(self.d_bar.iter().copied())
    }
}

pub(crate) fn entropy_unchecked(p: impl Iterator<Item = f64>) -> f64 {
    -p.filter(|&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Closed recurrent classes of the chain `p` (edges with positive probability).
pub fn closed_classes(p: &Array2<f64>) -> Vec<Vec<usize>> {
    let n = p.nrows();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n * n);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if p[[i, j]] > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut classes: Vec<Vec<usize>> = tarjan_scc(&graph)
        .into_iter()
        .map(|c| {
            let mut v: Vec<usize> = c.into_iter().map(|n| n.index()).collect();
            v.sort_unstable();
            v
        })
        .filter(|class| {
            class
                .iter()
                .all(|&i| (0..n).all(|j| p[[i, j]] == 0.0 || class.binary_search(&j).is_ok()))
        })
        .collect();
    classes.sort();
    classes
}

/// Exact stationary (gamma < 1: normalized discounted) distribution of `policy`.
pub fn stationary_distribution(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<Occupancy> {
    let n = mdp.num_states();
    if policy.num_states() != n || policy.num_actions() != mdp.num_actions() {
        return Err(Error::Shape(format!(
            "policy {}x{} for MDP {}x{}",
            policy.num_states(),
            policy.num_actions(),
            n,
            mdp.num_actions()
        )));
    }
    let p = mdp.state_transition(policy);
    let gamma = mdp.gamma();
    let d_bar = if gamma < 1.0 {
        let a = Array2::<f64>::eye(n) - &(p.t().to_owned() * gamma);
        let b = mdp.p0() * (1.0 - gamma);
        linalg::solve(&a, &b)?
    } else {
        let classes = closed_classes(&p);
        if classes.len() != 1 {
            return Err(Error::NotUnichain {
                num_classes: classes.len(),
                classes,
            });
        }
        let mut a = p.t().to_owned() - &Array2::<f64>::eye(n);
        a.row_mut(n - 1).fill(1.0);
        let mut b = Array1::zeros(n);
        b[n - 1] = 1.0;
        linalg::solve(&a, &b)?
    };
    // Round-off can leave tiny negatives on unreachable states.
    let d_bar = d_bar.mapv(|x| if x < 0.0 && x > -1e-12 { 0.0 } else { x });
    let occ = Occupancy::from_state_marginal(d_bar, policy);
    let residual = bellman_flow_residual(mdp, &occ.d)?;
    let worst = residual.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    if worst > 1e-9 {
        return Err(Error::Singular(format!("flow residual {worst:e} after solve")));
    }
    Ok(occ)
}

/// Shannon entropy in nats with `0 log 0 = 0`.
pub fn state_entropy(d_bar: &Array1<f64>) -> Result<f64> {
    if let Some(x) = d_bar.iter().find(|&&x| x < -1e-12 || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("distribution entry {x}")));
    }
    let total = d_bar.sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("distribution sums to {total}")));
    }
    Ok(entropy_unchecked(d_bar.iter().copied()))
}

/// Per-state violation of the Bellman flow constraint; zero iff `d` is feasible.
pub fn bellman_flow_residual(mdp: &FiniteMdp, d: &Array2<f64>) -> Result<Array1<f64>> {
    let (s, a) = (mdp.num_states(), mdp.num_actions());
    if d.dim() != (s, a) {
        return Err(Error::Shape(format!("occupancy {:?} for MDP {s}x{a}", d.dim())));
    }
    let gamma = mdp.gamma();
    let mut inflow = Array1::<f64>::zeros(s);
    for i in 0..s {
        for j in 0..a {
            let w = d[[i, j]];
            if w != 0.0 {
                inflow.scaled_add(w, &mdp.transition.slice(ndarray::s![i, j, ..]));
            }
        }
    }
    Ok(d.sum_axis(Axis(1)) - &(mdp.p0() * (1.0 - gamma)) - &(inflow * gamma))
}

/// Row-normalizes `d`; zero-mass rows become uniform.
pub fn policy_from_occupancy(d: &Array2<f64>) -> TabularPolicy {
    let num_actions = d.ncols();
    let mut probs = d.clone();
    for mut row in probs.outer_iter_mut() {
        let mass: f64 = row.iter().map(|x| x.max(0.0)).sum();
        if mass > 0.0 {
            row.mapv_inplace(|x| x.max(0.0) / mass);
        } else {
            row.fill(1.0 / num_actions as f64);
        }
    }
    TabularPolicy { probs }
}
