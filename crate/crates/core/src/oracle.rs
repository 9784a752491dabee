//! Exact references computed with full knowledge of the dynamics.
//!
//! Everything here enumerates joint successor states, so the cost is
//! exponential in the number of independent channels.

use crate::env::{Environment, SystemState};
use crate::error::{Error, Result};
use crate::qtable::QTable;

/// Largest independent-channel count the joint enumeration accepts.
pub const ENUMERATION_LIMIT: usize = 20;

/// Largest independent-channel count accepted by [`value_iteration`].
pub const VALUE_ITERATION_LIMIT: usize = 12;

const MAX_SWEEPS: usize = 100_000;

fn check_bound(env: &Environment, limit: usize) -> Result<usize> {
    let i = env.topology().n_independent();
    if i > limit {
        return Err(Error::EnumerationBound {
            independents: i,
            limit,
        });
    }
    Ok(i)
}

/// Every joint successor of `state` with its probability.
pub fn successor_distribution(
    env: &Environment,
    state: &SystemState,
) -> Result<Vec<(SystemState, f64)>> {
    let i = check_bound(env, ENUMERATION_LIMIT)?;
    let topo = env.topology();
    let m = env.matrix();
    let current = topo.parents_of(state);
    Ok((0..1u64 << i)
        .map(|next| {
            let p = (0..i)
                .map(|slot| m.prob(((current >> slot) & 1) as u8, ((next >> slot) & 1) as u8))
                .product::<f64>();
            (topo.expand(next), p)
        })
        .collect())
}

/// Expected reward of `action` under an explicit successor distribution.
/// The reward is read from the true successor state, not from an ACK.
pub fn expected_reward_under(
    env: &Environment,
    successors: &[(SystemState, f64)],
    action: usize,
) -> Result<f64> {
    successors.iter().try_fold(0.0, |acc, (next, p)| {
        Ok(acc + p * env.execute(next, action)?.reward)
    })
}

/// `sum_{s'} P(s'|s) r(s', action)` by joint enumeration.
pub fn expected_action_reward(
    env: &Environment,
    state: &SystemState,
    action: usize,
) -> Result<f64> {
    if action >= env.n_actions() {
        return Err(Error::InvalidAction {
            action,
            max: env.n_actions() - 1,
        });
    }
    let successors = successor_distribution(env, state)?;
    expected_reward_under(env, &successors, action)
}

/// Lowest segment that satisfies the demand in the realized next state, or
/// idle when none does.
pub fn genie_action(env: &Environment, state_next: &SystemState) -> usize {
    (1..=env.n_segments())
        .find(|&k| state_next.count_zeros_in(k - 1, env.segment_len()) >= env.demand())
        .unwrap_or(0)
}

/// Applies the product transition kernel along each independent-channel axis:
/// `out[u] = sum_v P(v | u) f[v]` over parent configurations.
fn apply_kernel(env: &Environment, values: &mut [f64]) {
    let m = env.matrix();
    let i = env.topology().n_independent();
    for slot in 0..i {
        let bit = 1usize << slot;
        for u in 0..values.len() {
            if u & bit != 0 {
                continue;
            }
            let (a, b) = (values[u], values[u | bit]);
            values[u] = m.p00() * a + m.p01() * b;
            values[u | bit] = m.p10() * a + m.p11() * b;
        }
    }
}

/// Optimal action values of the fully observed MDP over joint states.
///
/// Stops once a sweep changes no entry by more than `tol`, which bounds the
/// Bellman residual of the result by `gamma * tol`.
pub fn value_iteration(env: &Environment, gamma: f64, tol: f64) -> Result<QTable<SystemState>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "discount {gamma} must lie in [0, 1)"
        )));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let i = check_bound(env, VALUE_ITERATION_LIMIT)?;
    let n_states = 1usize << i;
    let n_actions = env.n_actions();
    let topo = env.topology();

    let mut immediate = Vec::with_capacity(n_actions);
    for a in 0..n_actions {
        let mut r = (0..n_states)
            .map(|v| Ok(env.execute(&topo.expand(v as u64), a)?.reward))
            .collect::<Result<Vec<f64>>>()?;
        apply_kernel(env, &mut r);
        immediate.push(r);
    }

    let mut q = vec![vec![0.0; n_actions]; n_states];
    let mut change = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        let mut future: Vec<f64> = q
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        apply_kernel(env, &mut future);
        change = 0.0;
        for (u, row) in q.iter_mut().enumerate() {
            for (a, value) in row.iter_mut().enumerate() {
                let updated = immediate[a][u] + gamma * future[u];
                change = f64::max(change, (updated - *value).abs());
                *value = updated;
            }
        }
        if change <= tol {
            let mut table = QTable::new(n_actions);
            for (u, row) in q.into_iter().enumerate() {
                table.row_mut(&topo.expand(u as u64)).copy_from_slice(&row);
            }
            return Ok(table);
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_SWEEPS,
        change,
    })
}

/// Sup-norm Bellman optimality residual of `q`, by brute-force enumeration
/// of every reachable joint state.
pub fn bellman_residual(env: &Environment, q: &QTable<SystemState>, gamma: f64) -> Result<f64> {
    let i = check_bound(env, ENUMERATION_LIMIT)?;
    let topo = env.topology();
    let mut worst: f64 = 0.0;
    for u in 0..1u64 << i {
        let state = topo.expand(u);
        let successors = successor_distribution(env, &state)?;
        for a in 0..env.n_actions() {
            let mut backup = 0.0;
            for (next, p) in &successors {
                backup += p * (env.execute(next, a)?.reward + gamma * q.max_value(next));
            }
            worst = worst.max((backup - q.get(&state, a)).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitString;
    use crate::env::{Correlation, Topology, TransitionMatrix};

    fn bits(b: &[u8]) -> SystemState {
        BitString::from_bits(b).unwrap()
    }

    /// N=3, C=2, d=2; channels 1 and 2 independent, channel 3 = not channel 1.
    fn three_channel() -> Environment {
        let topo = Topology::new(3, &[0, 1], &[(2, 0, Correlation::Opposite)]).unwrap();
        let m = TransitionMatrix::new(0.8, 0.2, 0.8, 0.2).unwrap();
        Environment::new(2, 2, m, topo, 0).unwrap()
    }

    fn copy_pair() -> Environment {
        let topo = Topology::new(2, &[0], &[(1, 0, Correlation::Same)]).unwrap();
        Environment::new(1, 1, TransitionMatrix::identity(), topo, 0).unwrap()
    }

    #[test]
    fn expected_rewards_by_hand() {
        let env = three_channel();
        for state in [bits(&[0, 0, 1]), bits(&[1, 1, 0]), bits(&[1, 0, 0])] {
            assert_eq!(expected_action_reward(&env, &state, 0).unwrap(), 0.0);
            let seg1 = expected_action_reward(&env, &state, 1).unwrap();
            let seg2 = expected_action_reward(&env, &state, 2).unwrap();
            assert!((seg1 - 0.56).abs() < 1e-12, "{seg1}");
            assert!((seg2 + 1.36).abs() < 1e-12, "{seg2}");
        }
        assert!(expected_action_reward(&env, &bits(&[0, 0, 1]), 3).is_err());
    }

    #[test]
    fn deterministic_single_successor() {
        let topo = Topology::new(3, &[0, 1, 2], &[]).unwrap();
        let env = Environment::new(2, 2, TransitionMatrix::identity(), topo, 0).unwrap();
        let s = bits(&[0, 0, 1]);
        assert_eq!(expected_action_reward(&env, &s, 1).unwrap(), 2.0);
        assert_eq!(expected_action_reward(&env, &s, 2).unwrap(), -2.0);
    }

    #[test]
    fn splitting_successors_is_neutral() {
        let env = three_channel();
        let s = bits(&[0, 1, 1]);
        let dist = successor_distribution(&env, &s).unwrap();
        let split: Vec<_> = dist
            .iter()
            .flat_map(|&(n, p)| [(n, p / 2.0), (n, p / 2.0)])
            .collect();
        for a in 0..env.n_actions() {
            let whole = expected_reward_under(&env, &dist, a).unwrap();
            let halves = expected_reward_under(&env, &split, a).unwrap();
            assert!((whole - halves).abs() <= 1e-12);
        }
        let total: f64 = dist.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn enumeration_bound() {
        let topo = Topology::new(
            22,
            &(0..21).collect::<Vec<_>>(),
            &[(21, 0, Correlation::Same)],
        )
        .unwrap();
        let env = Environment::new(2, 1, TransitionMatrix::identity(), topo, 0).unwrap();
        assert!(matches!(
            expected_action_reward(&env, &env.state(), 1),
            Err(Error::EnumerationBound {
                independents: 21,
                ..
            })
        ));
    }

    #[test]
    fn genie_examples() {
        let topo = Topology::new(4, &[0, 1, 2, 3], &[]).unwrap();
        let env = Environment::new(2, 2, TransitionMatrix::identity(), topo, 0).unwrap();
        assert_eq!(genie_action(&env, &bits(&[0, 0, 0, 0])), 1);
        assert_eq!(genie_action(&env, &bits(&[1, 1, 1, 1])), 0);
        assert_eq!(genie_action(&env, &bits(&[0, 1, 0, 1])), 0);
        assert_eq!(genie_action(&env, &bits(&[1, 0, 0, 1])), 2);
    }

    #[test]
    fn value_iteration_geometric_series() {
        let env = copy_pair();
        let q = value_iteration(&env, 0.9, 1e-10).unwrap();
        let vacant = bits(&[0, 0]);
        let busy = bits(&[1, 1]);
        assert!((q.get(&vacant, 1) - 20.0).abs() < 1e-8);
        assert!((q.get(&vacant, 2) - 20.0).abs() < 1e-8);
        assert!((q.get(&vacant, 0) - 18.0).abs() < 1e-8);
        // The optimal continuation from an occupied frozen chain is to idle, so
        // one failed transmission costs exactly 2.
        assert!((q.get(&busy, 1) + 2.0).abs() < 1e-8);
        assert!(q.get(&busy, 0).abs() < 1e-8);
    }

    #[test]
    fn value_iteration_rejects_bad_discount() {
        let env = copy_pair();
        assert!(value_iteration(&env, 1.0, 1e-6).is_err());
        assert!(value_iteration(&env, 0.9, 0.0).is_err());
    }

    #[test]
    fn value_iteration_residual_within_tolerance() {
        let env = three_channel();
        let tol = 1e-6;
        let q = value_iteration(&env, 0.9, tol).unwrap();
        assert_eq!(q.len(), 4);
        assert!(bellman_residual(&env, &q, 0.9).unwrap() <= tol);
    }
}
