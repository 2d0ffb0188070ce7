use std::sync::Arc;

use rand::Rng as _;

use super::{GoalEnv, Transition};
use crate::rng::Rng;

/// Hindsight copies of a finished episode using the "future" strategy: each
/// transition is replayed against `k` goals drawn uniformly from the states
/// achieved at or after it.
///
/// States the env rejects as goals (a collision, a singularity, ...) end the
/// usable part of the episode: transitions from there on are not copied.
pub fn her_relabel<E: GoalEnv>(
    env: &E,
    episode: &[Transition<E::Goal>],
    k: usize,
    rng: &mut Rng,
) -> Vec<Transition<E::Goal>> {
    let usable = episode.iter().take_while(|t| env.achieved_is_goal(t)).count();
    let Some(last) = usable.checked_sub(1) else {
        return Vec::new();
    };
    let mut out = Vec::with_capacity(k * (last + 1));
    for (i, t) in episode[..=last].iter().enumerate() {
        for _ in 0..k {
            let j = rng.random_range(i..=last);
            out.push(env.relabel(t, &Arc::clone(&episode[j].achieved)));
        }
    }
    out
}
