//! JSON game files.
//!
//! ```json
//! { "n_agents": 2, "horizon": 1, "states": 1, "actions": [2, 2],
//!   "transition": [[[[1.0], [1.0], [1.0], [1.0]]]],
//!   "rewards": [[[[1, 0, 0, 1]]], [[[0, 1, 1, 0]]]],
//!   "rho": [1.0], "reward_cap": 1.0 }
//! ```
//!
//! `transition` is indexed `[h][s][joint_a][s']` and `rewards`
//! `[agent][h][s][joint_a]`, joint actions row-major with agent 0 slowest.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GameError, MarkovGame, TransitionKernel};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameFile {
    pub n_agents: usize,
    pub horizon: usize,
    pub states: usize,
    pub actions: Vec<usize>,
    pub transition: Vec<Vec<Vec<Vec<f64>>>>,
    pub rewards: Vec<Vec<Vec<Vec<f64>>>>,
    pub rho: Vec<f64>,
    pub reward_cap: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_sum: Option<f64>,
}

fn expect_len(what: String, got: usize, want: usize) -> Result<(), GameError> {
    if got != want {
        return Err(GameError::Shape(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

impl GameFile {
    pub fn load(path: &Path) -> Result<Self, GameError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| GameError::Io { path: path.display().to_string(), source })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Shape-checks every nested list (reporting the first offending index)
    /// and then runs the full game validation.
    pub fn into_game<T: Scalar>(&self) -> Result<MarkovGame<T>, GameError> {
        expect_len("actions".into(), self.actions.len(), self.n_agents)?;
        let a_n = crate::index::MixedRadix::new(&self.actions)
            .map(|r| r.size())
            .ok_or(GameError::JointActionOverflow { size: usize::MAX, cap: super::JOINT_ACTION_CAP })?;
        if a_n > super::JOINT_ACTION_CAP {
            return Err(GameError::JointActionOverflow { size: a_n, cap: super::JOINT_ACTION_CAP });
        }
        let (h_n, s_n) = (self.horizon, self.states);
        expect_len("transition".into(), self.transition.len(), h_n)?;
        let mut probs = Vec::with_capacity(h_n * s_n * a_n * s_n);
        for (h, per_h) in self.transition.iter().enumerate() {
            expect_len(format!("transition[{h}]"), per_h.len(), s_n)?;
            for (s, per_s) in per_h.iter().enumerate() {
                expect_len(format!("transition[{h}][{s}]"), per_s.len(), a_n)?;
                for (a, row) in per_s.iter().enumerate() {
                    expect_len(format!("transition[{h}][{s}][{a}]"), row.len(), s_n)?;
                    probs.extend(row.iter().map(|&p| T::of(p)));
                }
            }
        }
        expect_len("rewards".into(), self.rewards.len(), self.n_agents)?;
        let mut rewards = Vec::with_capacity(self.n_agents * h_n * s_n * a_n);
        for (i, per_i) in self.rewards.iter().enumerate() {
            expect_len(format!("rewards[{i}]"), per_i.len(), h_n)?;
            for (h, per_h) in per_i.iter().enumerate() {
                expect_len(format!("rewards[{i}][{h}]"), per_h.len(), s_n)?;
                for (s, row) in per_h.iter().enumerate() {
                    expect_len(format!("rewards[{i}][{h}][{s}]"), row.len(), a_n)?;
                    rewards.extend(row.iter().map(|&r| T::of(r)));
                }
            }
        }
        let kernel = TransitionKernel::from_flat(h_n, s_n, a_n, probs)?;
        let rho = self.rho.iter().map(|&p| T::of(p)).collect();
        let game = MarkovGame::new(self.actions.clone(), kernel, rewards, rho, T::of(self.reward_cap))?;
        Ok(match self.constant_sum {
            Some(c) => game.with_constant_sum(T::of(c)),
            None => game,
        })
    }

    pub fn from_game<T: Scalar>(game: &MarkovGame<T>) -> Self {
        let (h_n, s_n, a_n) = (game.horizon(), game.n_states(), game.n_joint());
        let k = game.kernel();
        Self {
            n_agents: game.n_agents(),
            horizon: h_n,
            states: s_n,
            actions: game.actions().to_vec(),
            transition: (0..h_n)
                .map(|h| {
                    (0..s_n)
                        .map(|s| (0..a_n).map(|a| k.row(h, s, a).iter().map(|p| p.to_f64_lossy()).collect()).collect())
                        .collect()
                })
                .collect(),
            rewards: (0..game.n_agents())
                .map(|i| {
                    (0..h_n)
                        .map(|h| {
                            (0..s_n)
                                .map(|s| (0..a_n).map(|a| game.reward(i, h, s, a).to_f64_lossy()).collect())
                                .collect()
                        })
                        .collect()
                })
                .collect(),
            rho: game.rho().iter().map(|p| p.to_f64_lossy()).collect(),
            reward_cap: game.reward_cap().to_f64_lossy(),
            constant_sum: game.constant_sum().map(|c| c.to_f64_lossy()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{make_random_tabular, RandomTabularSpec};

    #[test]
    fn round_trips_through_json() {
        let game = make_random_tabular::<f64>(&RandomTabularSpec::new(2, 2, vec![2, 2], 1.0, 1)).unwrap();
        let text = serde_json::to_string(&GameFile::from_game(&game)).unwrap();
        let back: MarkovGame<f64> = serde_json::from_str::<GameFile>(&text).unwrap().into_game().unwrap();
        assert_eq!(back.kernel(), game.kernel());
        assert_eq!(back.agent_rewards(1), game.agent_rewards(1));
    }

    #[test]
    fn reports_first_shape_violation_with_indices() {
        let game = make_random_tabular::<f64>(&RandomTabularSpec::new(2, 2, vec![2], 1.0, 1)).unwrap();
        let mut file = GameFile::from_game(&game);
        file.transition[1][0][1].pop();
        let err = file.into_game::<f64>().unwrap_err().to_string();
        assert!(err.contains("transition[1][0][1]"), "{err}");
    }

    #[test]
    fn reports_first_row_violation_with_indices() {
        let game = make_random_tabular::<f64>(&RandomTabularSpec::new(2, 2, vec![2], 1.0, 1)).unwrap();
        let mut file = GameFile::from_game(&game);
        file.transition[1][1][0][0] += 0.1;
        let err = file.into_game::<f64>().unwrap_err();
        assert!(matches!(err, GameError::RowNotStochastic { h: 1, s: 1, a: 0, .. }), "{err}");
    }
}
