use rand::Rng;

use crate::env::AugmentedTransition;
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Transitions of the current epoch, grouped by time index.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    by_t: Vec<Vec<AugmentedTransition>>,
    episodes: usize,
}

impl ReplayBuffer {
    pub fn new(horizon: usize) -> Self {
        ReplayBuffer { by_t: vec![Vec::new(); horizon], episodes: 0 }
    }

    pub fn horizon(&self) -> usize {
        self.by_t.len()
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    pub fn len_at(&self, t: usize) -> usize {
        self.by_t[t].len()
    }

    pub fn at(&self, t: usize) -> &[AugmentedTransition] {
        &self.by_t[t]
    }

    /// Stores a full episode; every step must satisfy `y_next == y - cost`
    /// and carry the episode's auxiliary variable.
    pub fn push_episode(&mut self, episode: Vec<AugmentedTransition>) -> Result<()> {
        if episode.len() != self.horizon() {
            return Err(Error::Argument(format!("episode has {} steps, horizon is {}", episode.len(), self.horizon())));
        }
        let upsilon = episode[0].upsilon;
        for (t, tr) in episode.iter().enumerate() {
            if tr.t != t || tr.y_next != tr.y - tr.cost || tr.upsilon.to_bits() != upsilon.to_bits() {
                return Err(Error::Argument(format!("transition at t={t} violates the augmentation identity")));
            }
        }
        for tr in episode {
            let t = tr.t;
            self.by_t[t].push(tr);
        }
        self.episodes += 1;
        Ok(())
    }

    /// Checks every time index holds at least `need` transitions.
    pub fn require(&self, need: usize) -> Result<()> {
        for (t, v) in self.by_t.iter().enumerate() {
            if v.len() < need {
                return Err(Error::InsufficientBuffer { t, have: v.len(), need });
            }
        }
        Ok(())
    }

    /// Uniform draw with replacement among transitions at time `t`.
    pub fn sample(&self, t: usize, rng: &mut SimRng) -> &AugmentedTransition {
        let v = &self.by_t[t];
        &v[rng.gen_range(0..v.len())]
    }

    pub fn clear(&mut self) {
        for v in &mut self.by_t {
            v.clear();
        }
        self.episodes = 0;
    }
}
