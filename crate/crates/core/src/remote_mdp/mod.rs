//! Remote MDP: a guide who sees the environment steers an agent who only
//! hears the guide's messages over a noisy discrete channel.
//!
//! The guide observes the true state every step and maps it to a message;
//! the agent maps each received word to an action. [`coding`] covers the
//! related problem of compressing guidance over general state graphs.

pub mod coding;

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::channels::DiscreteChannel;
use crate::error::{Error, Result};
use crate::simkernel::RngStream;

pub const ACTIONS: usize = 4;
const ACTION_NAMES: [&str; ACTIONS] = ["N", "S", "E", "W"];

fn default_reward() -> f64 {
    100.0
}

fn default_cap() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartDistribution {
    /// Uniform over free cells other than the target.
    Uniform,
    Fixed { x: usize, y: usize },
}

/// Grid with obstacles and one absorbing target. Each step costs 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridWorld {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub obstacles: Vec<(usize, usize)>,
    pub target: (usize, usize),
    #[serde(default = "default_start")]
    pub start: StartDistribution,
    #[serde(default = "default_reward")]
    pub target_reward: f64,
    #[serde(default = "default_cap")]
    pub step_cap: usize,
}

fn default_start() -> StartDistribution {
    StartDistribution::Uniform
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub state: usize,
    pub reward: f64,
    pub done: bool,
}

impl GridWorld {
    /// Empty `w x h` grid with the target in the far corner.
    pub fn empty(w: usize, h: usize) -> Self {
        GridWorld {
            width: w,
            height: h,
            obstacles: Vec::new(),
            target: (w - 1, h - 1),
            start: StartDistribution::Uniform,
            target_reward: default_reward(),
            step_cap: default_cap(),
        }
    }

    pub fn states(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn coords(&self, s: usize) -> (usize, usize) {
        (s % self.width, s / self.width)
    }

    pub fn target_state(&self) -> usize {
        self.index(self.target.0, self.target.1)
    }

    pub fn is_blocked(&self, s: usize) -> bool {
        let c = self.coords(s);
        self.obstacles.contains(&c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("grid", "width and height must be positive"));
        }
        if !(self.target_reward > 0.0) {
            return Err(Error::invalid("target_reward", "must be positive"));
        }
        if self.step_cap == 0 {
            return Err(Error::invalid("step_cap", "must be positive"));
        }
        let inside = |(x, y): (usize, usize)| x < self.width && y < self.height;
        if !inside(self.target) || self.obstacles.contains(&self.target) {
            return Err(Error::invalid("target", "must be a free cell inside the grid"));
        }
        if self.obstacles.iter().any(|&c| !inside(c)) {
            return Err(Error::invalid("obstacles", "cell outside the grid"));
        }
        if let StartDistribution::Fixed { x, y } = self.start {
            if !inside((x, y)) || self.obstacles.contains(&(x, y)) {
                return Err(Error::invalid("start", "must be a free cell inside the grid"));
            }
        }
        let dist = self.distances();
        for s in 0..self.states() {
            if !self.is_blocked(s) && dist[s].is_none() {
                return Err(Error::UnreachableGoal {
                    from: s,
                    to: self.target_state(),
                });
            }
        }
        Ok(())
    }

    fn moved(&self, s: usize, action: usize) -> usize {
        let (x, y) = self.coords(s);
        let (nx, ny) = match action {
            0 if y > 0 => (x, y - 1),
            1 if y + 1 < self.height => (x, y + 1),
            2 if x + 1 < self.width => (x + 1, y),
            3 if x > 0 => (x - 1, y),
            _ => (x, y),
        };
        let t = self.index(nx, ny);
        if self.is_blocked(t) {
            s
        } else {
            t
        }
    }

    /// One transition. Entering the target pays the step cost and the
    /// target reward together, so an episode of `k` steps returns `R - k`.
    pub fn step(&self, state: usize, action: usize) -> Result<Step> {
        if action >= ACTIONS {
            return Err(Error::InvalidAction(action));
        }
        if state >= self.states() || self.is_blocked(state) || state == self.target_state() {
            return Err(Error::InvalidState(state));
        }
        let next = self.moved(state, action);
        let done = next == self.target_state();
        let reward = if done { self.target_reward - 1.0 } else { -1.0 };
        Ok(Step {
            state: next,
            reward,
            done,
        })
    }

    /// Steps to the target from every cell, `None` for obstacles.
    pub fn distances(&self) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.states()];
        let t = self.target_state();
        dist[t] = Some(0);
        let mut queue = VecDeque::from([t]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("queued cells have a distance");
            // moves are reversible on a grid, so forward neighbours suffice
            for a in 0..ACTIONS {
                let v = self.moved(u, a);
                if v != u && dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn free_starts(&self) -> Vec<usize> {
        (0..self.states())
            .filter(|&s| !self.is_blocked(s) && s != self.target_state())
            .collect()
    }

    pub fn sample_start(&self, rng: &mut RngStream) -> usize {
        match self.start {
            StartDistribution::Fixed { x, y } => self.index(x, y),
            StartDistribution::Uniform => {
                let free = self.free_starts();
                free[rng.below(free.len() as u64) as usize]
            }
        }
    }

    /// Lowest-index action on a shortest path, for every cell.
    pub fn greedy_actions(&self) -> Vec<usize> {
        let dist = self.distances();
        (0..self.states())
            .map(|s| match dist[s] {
                Some(d) if d > 0 => (0..ACTIONS)
                    .find(|&a| dist[self.moved(s, a)] == Some(d - 1))
                    .expect("some neighbour is closer"),
                _ => 0,
            })
            .collect()
    }
}

/// Guide map (state to message) and agent map (received word to action).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessagePolicy {
    pub messages: usize,
    pub guide: Vec<usize>,
    pub agent: Vec<usize>,
}

impl MessagePolicy {
    /// Sends the greedy action as the message; the agent obeys.
    pub fn greedy(env: &GridWorld, channel: &DiscreteChannel) -> Self {
        MessagePolicy {
            messages: ACTIONS,
            guide: env.greedy_actions(),
            agent: (0..channel.words()).map(|w| w % ACTIONS).collect(),
        }
    }

    pub fn validate(&self, env: &GridWorld, channel: &DiscreteChannel) -> Result<()> {
        if self.messages == 0 || self.messages > channel.words() {
            return Err(Error::invalid("messages", "must fit the channel's word count"));
        }
        if self.guide.len() != env.states() {
            return Err(Error::DimensionMismatch {
                expected: env.states(),
                got: self.guide.len(),
            });
        }
        if self.agent.len() != channel.words() {
            return Err(Error::DimensionMismatch {
                expected: channel.words(),
                got: self.agent.len(),
            });
        }
        if self.guide.iter().any(|&m| m >= self.messages) {
            return Err(Error::invalid("guide", "message index out of range"));
        }
        if let Some(&a) = self.agent.iter().find(|&&a| a >= ACTIONS) {
            return Err(Error::InvalidAction(a));
        }
        Ok(())
    }

    /// Two tables: `state,message` rows then `word,action` rows.
    pub fn to_csv(&self) -> (String, String) {
        let mut g = String::from("state,message\n");
        for (s, m) in self.guide.iter().enumerate() {
            let _ = writeln!(g, "{s},{m}");
        }
        let mut a = String::from("word,action\n");
        for (w, act) in self.agent.iter().enumerate() {
            let _ = writeln!(a, "{w},{}", ACTION_NAMES[*act]);
        }
        (g, a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub start: usize,
    pub steps: usize,
    pub ret: f64,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceStats {
    pub mean_return: f64,
    pub mean_steps: f64,
    pub success_rate: f64,
    pub episodes: Vec<EpisodeLog>,
}

impl GuidanceStats {
    fn from_logs(episodes: Vec<EpisodeLog>) -> Self {
        let n = episodes.len() as f64;
        GuidanceStats {
            mean_return: episodes.iter().map(|e| e.ret).sum::<f64>() / n,
            mean_steps: episodes.iter().map(|e| e.steps as f64).sum::<f64>() / n,
            success_rate: episodes.iter().filter(|e| e.success).count() as f64 / n,
            episodes,
        }
    }

    pub fn episodes_csv(&self) -> String {
        let mut out = String::from("episode,start,steps,return,success\n");
        for e in &self.episodes {
            let _ = writeln!(out, "{},{},{},{},{}", e.episode, e.start, e.steps, e.ret, e.success as u8);
        }
        out
    }
}

fn run_episode(
    env: &GridWorld,
    episode: usize,
    rng: &mut RngStream,
    mut act: impl FnMut(usize, &mut RngStream) -> Result<usize>,
) -> Result<EpisodeLog> {
    let start = env.sample_start(rng);
    let mut s = start;
    let mut ret = 0.0;
    let mut steps = 0;
    let mut success = false;
    while steps < env.step_cap {
        let a = act(s, rng)?;
        let st = env.step(s, a)?;
        ret += st.reward;
        steps += 1;
        s = st.state;
        if st.done {
            success = true;
            break;
        }
    }
    Ok(EpisodeLog {
        episode,
        start,
        steps,
        ret,
        success,
    })
}

/// Plays `episodes` guided episodes, each on its own random substream so
/// that runs with different channels stay paired episode by episode.
pub fn evaluate_guidance(
    env: &GridWorld,
    policy: &MessagePolicy,
    channel: &DiscreteChannel,
    episodes: usize,
    rng: &mut RngStream,
) -> Result<GuidanceStats> {
    env.validate()?;
    channel.validate()?;
    policy.validate(env, channel)?;
    if episodes == 0 {
        return Err(Error::invalid("episodes", "at least one episode"));
    }
    let mut logs = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut ep = rng.child(&format!("episode/{i}"));
        logs.push(run_episode(env, i, &mut ep, |s, r| {
            let w = channel.send_message(policy.guide[s], r)?;
            Ok(policy.agent[w])
        })?);
    }
    Ok(GuidanceStats::from_logs(logs))
}

/// Baseline agent that ignores the guide and moves uniformly at random.
pub fn random_walk(env: &GridWorld, episodes: usize, rng: &mut RngStream) -> Result<GuidanceStats> {
    env.validate()?;
    if episodes == 0 {
        return Err(Error::invalid("episodes", "at least one episode"));
    }
    let mut logs = Vec::with_capacity(episodes);
    for i in 0..episodes {
        let mut ep = rng.child(&format!("episode/{i}"));
        logs.push(run_episode(env, i, &mut ep, |_, r| Ok(r.below(ACTIONS as u64) as usize))?);
    }
    Ok(GuidanceStats::from_logs(logs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QLearningParams {
    pub messages: usize,
    pub phases: usize,
    pub episodes_per_phase: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub explore: f64,
    pub eval_episodes: usize,
}

impl Default for QLearningParams {
    fn default() -> Self {
        QLearningParams {
            messages: ACTIONS,
            phases: 6,
            episodes_per_phase: 2000,
            alpha: 0.2,
            gamma: 0.95,
            explore: 0.1,
            eval_episodes: 200,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrainingPoint {
    pub phase: usize,
    pub learner: &'static str,
    pub mean_return: f64,
    pub mean_steps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedPolicy {
    pub policy: MessagePolicy,
    pub curve: Vec<TrainingPoint>,
}

fn greedy_row(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

fn epsilon_greedy(q: &[f64], explore: f64, rng: &mut RngStream) -> usize {
    if rng.uniform() < explore {
        rng.below(q.len() as u64) as usize
    } else {
        greedy_row(q)
    }
}

/// Alternating tabular Q-learning of the guide and the agent.
///
/// Even phases hold the agent map fixed and learn the guide's message for
/// each state; odd phases hold the guide fixed and learn the agent's action
/// for each received word. After each phase the greedy joint policy is
/// evaluated and the best one seen is returned.
pub fn q_learn_joint(
    env: &GridWorld,
    channel: &DiscreteChannel,
    params: &QLearningParams,
    rng: &mut RngStream,
) -> Result<TrainedPolicy> {
    env.validate()?;
    channel.validate()?;
    let m = params.messages;
    let words = channel.words();
    if m == 0 || m > words {
        return Err(Error::invalid("messages", "must fit the channel's word count"));
    }
    if params.phases == 0 || params.episodes_per_phase == 0 || params.eval_episodes == 0 {
        return Err(Error::invalid("phases", "phases and episode counts must be positive"));
    }
    if !(params.alpha > 0.0 && params.alpha <= 1.0) || !(0.0..=1.0).contains(&params.gamma) {
        return Err(Error::invalid("alpha", "alpha in (0, 1] and gamma in [0, 1]"));
    }
    let mut init = rng.child("init");
    let mut policy = MessagePolicy {
        messages: m,
        guide: (0..env.states()).map(|_| init.below(m as u64) as usize).collect(),
        agent: (0..words).map(|_| init.below(ACTIONS as u64) as usize).collect(),
    };
    let mut q_guide = vec![vec![0.0; m]; env.states()];
    let mut q_agent = vec![vec![0.0; ACTIONS]; words];
    let mut best: Option<(f64, MessagePolicy)> = None;
    let mut curve = Vec::new();
    let eval_rng = rng.child("eval");
    for phase in 0..params.phases {
        let learn_guide = phase % 2 == 0;
        let mut train = rng.child(&format!("phase/{phase}"));
        for _ in 0..params.episodes_per_phase {
            let mut s = env.sample_start(&mut train);
            let mut prev: Option<(usize, usize, f64)> = None;
            for _ in 0..env.step_cap {
                let msg = if learn_guide {
                    epsilon_greedy(&q_guide[s], params.explore, &mut train)
                } else {
                    policy.guide[s]
                };
                let w = channel.send_message(msg, &mut train)?;
                let a = if learn_guide {
                    policy.agent[w]
                } else {
                    epsilon_greedy(&q_agent[w], params.explore, &mut train)
                };
                let st = env.step(s, a)?;
                if learn_guide {
                    let target = if st.done {
                        st.reward
                    } else {
                        st.reward + params.gamma * q_guide[st.state].iter().cloned().fold(f64::MIN, f64::max)
                    };
                    q_guide[s][msg] += params.alpha * (target - q_guide[s][msg]);
                } else {
                    // the agent's observation is the received word; bootstrap
                    // from the next word once it is heard
                    if let Some((pw, pa, pr)) = prev.take() {
                        let next = q_agent[w].iter().cloned().fold(f64::MIN, f64::max);
                        q_agent[pw][pa] += params.alpha * (pr + params.gamma * next - q_agent[pw][pa]);
                    }
                    if st.done {
                        q_agent[w][a] += params.alpha * (st.reward - q_agent[w][a]);
                    } else {
                        prev = Some((w, a, st.reward));
                    }
                }
                s = st.state;
                if st.done {
                    break;
                }
            }
        }
        if learn_guide {
            policy.guide = q_guide.iter().map(|q| greedy_row(q)).collect();
        } else {
            policy.agent = q_agent.iter().map(|q| greedy_row(q)).collect();
        }
        let mut ev = eval_rng.clone();
        let stats = evaluate_guidance(env, &policy, channel, params.eval_episodes, &mut ev)?;
        curve.push(TrainingPoint {
            phase,
            learner: if learn_guide { "guide" } else { "agent" },
            mean_return: stats.mean_return,
            mean_steps: stats.mean_steps,
        });
        if best.as_ref().is_none_or(|(r, _)| stats.mean_return > *r) {
            best = Some((stats.mean_return, policy.clone()));
        }
    }
    let (_, policy) = best.expect("at least one phase");
    Ok(TrainedPolicy { policy, curve })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(name: &str) -> RngStream {
        RngStream::new(11, name)
    }

    #[test]
    fn entering_target_ends_the_episode() {
        let env = GridWorld::empty(5, 5);
        let s = env.index(4, 3);
        let st = env.step(s, 1).unwrap();
        assert!(st.done);
        assert_eq!(st.state, env.target_state());
        assert_eq!(st.reward, env.target_reward - 1.0);
    }

    #[test]
    fn obstacles_and_walls_block() {
        let mut env = GridWorld::empty(5, 5);
        env.obstacles.push((2, 2));
        let s = env.index(1, 2);
        let st = env.step(s, 2).unwrap();
        assert_eq!((st.state, st.reward, st.done), (s, -1.0, false));
        let corner = env.index(0, 0);
        assert_eq!(env.step(corner, 0).unwrap().state, corner);
        assert_eq!(env.step(corner, 3).unwrap().state, corner);
    }

    #[test]
    fn bad_actions_and_states_are_rejected() {
        let env = GridWorld::empty(3, 3);
        assert_eq!(env.step(0, 4), Err(Error::InvalidAction(4)));
        assert_eq!(env.step(env.target_state(), 0), Err(Error::InvalidState(8)));
    }

    #[test]
    fn corner_to_corner_takes_eight_steps() {
        let env = GridWorld::empty(5, 5);
        let greedy = env.greedy_actions();
        let mut s = env.index(0, 0);
        let mut ret = 0.0;
        let mut steps = 0;
        loop {
            let st = env.step(s, greedy[s]).unwrap();
            ret += st.reward;
            steps += 1;
            s = st.state;
            if st.done {
                break;
            }
        }
        assert_eq!(steps, 8);
        assert_eq!(ret, env.target_reward - 8.0);
    }

    #[test]
    fn walled_off_cells_fail_validation() {
        let mut env = GridWorld::empty(3, 3);
        env.obstacles = vec![(1, 0), (0, 1)];
        assert!(matches!(env.validate(), Err(Error::UnreachableGoal { from: 0, .. })));
    }

    #[test]
    fn noiseless_greedy_guidance_walks_manhattan_paths() {
        let env = GridWorld::empty(5, 5);
        let ch = DiscreteChannel::default();
        let policy = MessagePolicy::greedy(&env, &ch);
        let stats = evaluate_guidance(&env, &policy, &ch, 500, &mut rng("eval")).unwrap();
        let dist = env.distances();
        for e in &stats.episodes {
            assert_eq!(Some(e.steps), dist[e.start]);
            assert_eq!(e.ret, env.target_reward - e.steps as f64);
        }
        assert_eq!(stats.success_rate, 1.0);
    }

    #[test]
    fn successful_returns_decompose() {
        let env = GridWorld::empty(5, 5);
        let ch = DiscreteChannel { eps: 0.2, ..Default::default() };
        let policy = MessagePolicy::greedy(&env, &ch);
        let stats = evaluate_guidance(&env, &policy, &ch, 300, &mut rng("noisy")).unwrap();
        for e in stats.episodes.iter().filter(|e| e.success) {
            assert_eq!(e.ret, env.target_reward - e.steps as f64);
        }
        for e in stats.episodes.iter().filter(|e| !e.success) {
            assert_eq!(e.steps, env.step_cap);
            assert_eq!(e.ret, -(env.step_cap as f64));
        }
    }

    #[test]
    fn policy_shape_is_checked() {
        let env = GridWorld::empty(3, 3);
        let ch = DiscreteChannel::default();
        let mut p = MessagePolicy::greedy(&env, &ch);
        p.agent.pop();
        assert!(evaluate_guidance(&env, &p, &ch, 1, &mut rng("x")).is_err());
        let p = MessagePolicy::greedy(&env, &ch);
        assert!(evaluate_guidance(&env, &p, &ch, 0, &mut rng("x")).is_err());
    }

    #[test]
    fn policy_tables_round_trip_to_csv() {
        let env = GridWorld::empty(2, 2);
        let ch = DiscreteChannel::default();
        let (g, a) = MessagePolicy::greedy(&env, &ch).to_csv();
        assert_eq!(g.lines().count(), 5);
        assert_eq!(a, "word,action\n0,N\n1,S\n2,E\n3,W\n");
    }
}
