use ndarray::{Array1, Array2, Array3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::Episode;

/// Off-policy transition buffer with incrementally maintained counts.
///
/// `counts_s(s)` counts transitions whose *source* is `s`, so the empirical
/// marginal `d̄^D` is consistent with `d^D(s, a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionDataset {
    num_states: usize,
    num_actions: usize,
    transitions: Vec<(usize, usize, usize)>,
    timesteps: Option<Vec<usize>>,
    initial_states: Vec<usize>,
    counts_sa: Array2<u64>,
    counts_sas: Array3<u64>,
    counts_s: Array1<u64>,
}

impl TransitionDataset {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            transitions: Vec::new(),
            timesteps: None,
            initial_states: Vec::new(),
            counts_sa: Array2::zeros((num_states, num_actions)),
            counts_sas: Array3::zeros((num_states, num_actions, num_states)),
            counts_s: Array1::zeros(num_states),
        }
    }

    /// Empty buffer whose transitions carry timestep tags.
    pub fn new_tagged(num_states: usize, num_actions: usize) -> Self {
        Self {
            timesteps: Some(Vec::new()),
            ..Self::new(num_states, num_actions)
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[(usize, usize, usize)] {
        &self.transitions
    }

    pub fn timesteps(&self) -> Option<&[usize]> {
        self.timesteps.as_deref()
    }

    pub fn initial_states(&self) -> &[usize] {
        &self.initial_states
    }

    pub fn counts_sa(&self) -> &Array2<u64> {
        &self.counts_sa
    }

    pub fn counts_sas(&self) -> &Array3<u64> {
        &self.counts_sas
    }

    pub fn counts_s(&self) -> &Array1<u64> {
        &self.counts_s
    }

    fn check(&self, s: usize, a: usize, next: usize) -> Result<()> {
        if s >= self.num_states || next >= self.num_states || a >= self.num_actions {
            return Err(Error::Shape(format!(
                "transition ({s},{a},{next}) outside {}x{}",
                self.num_states, self.num_actions
            )));
        }
        Ok(())
    }

    fn record(&mut self, s: usize, a: usize, next: usize) {
        self.transitions.push((s, a, next));
        self.counts_sa[[s, a]] += 1;
        self.counts_sas[[s, a, next]] += 1;
        self.counts_s[s] += 1;
    }

    pub fn push(&mut self, s: usize, a: usize, next: usize) -> Result<()> {
        self.check(s, a, next)?;
        if self.timesteps.is_some() {
            return Err(Error::InvalidArgument("tagged dataset requires push_tagged".into()));
        }
        self.record(s, a, next);
        Ok(())
    }

    pub fn push_tagged(&mut self, s: usize, a: usize, next: usize, t: usize) -> Result<()> {
        self.check(s, a, next)?;
        let tags = self.timesteps.as_mut().ok_or(Error::MissingTimesteps)?;
        tags.push(t);
        self.record(s, a, next);
        Ok(())
    }

    pub fn push_initial(&mut self, s: usize) -> Result<()> {
        if s >= self.num_states {
            return Err(Error::Shape(format!("initial state {s} outside {}", self.num_states)));
        }
        self.initial_states.push(s);
        Ok(())
    }

    /// Appends an episode; tagged datasets receive the step index as timestep.
    pub fn push_episode(&mut self, episode: &Episode) -> Result<()> {
        self.push_initial(episode.initial_state)?;
        let tagged = self.timesteps.is_some();
        for (t, &(s, a, next)) in episode.transitions.iter().enumerate() {
            if tagged {
                self.push_tagged(s, a, next, t)?;
            } else {
                self.push(s, a, next)?;
            }
        }
        Ok(())
    }

    /// Empirical `d^D(s, a)`.
    pub fn d_sa(&self) -> Result<Array2<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = self.len() as f64;
        Ok(self.counts_sa.mapv(|c| c as f64 / n))
    }

    /// Empirical `d̄^D(s)`.
    pub fn d_s(&self) -> Result<Array1<f64>> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = self.len() as f64;
        Ok(self.counts_s.mapv(|c| c as f64 / n))
    }

    /// Empirical distribution of episode start states.
    pub fn initial_distribution(&self) -> Result<Array1<f64>> {
        if self.initial_states.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut p = Array1::zeros(self.num_states);
        for &s in &self.initial_states {
            p[s] += 1.0;
        }
        Ok(p / self.initial_states.len() as f64)
    }

    /// Empirical distribution of the transitions tagged `t`.
    pub fn d_sa_at(&self, t: usize) -> Result<Array2<f64>> {
        let tags = self.timesteps.as_ref().ok_or(Error::MissingTimesteps)?;
        let mut d = Array2::zeros((self.num_states, self.num_actions));
        let mut n = 0usize;
        for (&(s, a, _), &tag) in self.transitions.iter().zip(tags) {
            if tag == t {
                d[[s, a]] += 1.0;
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(d / n as f64)
    }

    /// Indices of a uniformly drawn minibatch (with replacement).
    pub fn sample_indices<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<usize> {
        (0..size).map(|_| rng.random_range(0..self.len())).collect()
    }

    /// Counts rebuilt from the raw transition sequence.
    pub fn recount(&self) -> (Array2<u64>, Array3<u64>, Array1<u64>) {
        let mut fresh = Self::new(self.num_states, self.num_actions);
        for &(s, a, next) in &self.transitions {
            fresh.record(s, a, next);
        }
        (fresh.counts_sa, fresh.counts_sas, fresh.counts_s)
    }
}
