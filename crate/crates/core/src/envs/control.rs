//! Continuous-state simulators and their scripted evaluation policies.
//!
//! Dynamics follow the usual published versions of each task. Every
//! simulator adds zero-mean Gaussian noise (scaled by `noise`) to its
//! physical update so that transitions are stochastic.

use rand::Rng as _;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

use crate::rng::Rng;

pub struct Outcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

fn gauss(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub mod puddle {
    use super::*;

    pub const LO: [f64; 2] = [0.0, 0.0];
    pub const HI: [f64; 2] = [1.0, 1.0];
    pub const STEP: f64 = 0.05;
    pub const NOISE_STD: f64 = 0.01;
    pub const STEP_COST: f64 = -1.0;
    pub const PUDDLE_RADIUS: f64 = 0.1;
    pub const PUDDLE_SCALE: f64 = 400.0;
    /// Episode ends once `x + y >= GOAL_SUM`.
    pub const GOAL_SUM: f64 = 1.9;
    pub const PUDDLES: [([f64; 2], [f64; 2]); 2] = [([0.1, 0.75], [0.45, 0.75]), ([0.45, 0.4], [0.45, 0.8])];
    /// Actions: 0 up, 1 down, 2 left, 3 right.
    pub const N_ACTIONS: usize = 4;
    /// Probability that the evaluation policy takes a uniformly random action.
    pub const POLICY_EPSILON: f64 = 0.1;

    fn segment_distance(p: &[f64], a: [f64; 2], b: [f64; 2]) -> f64 {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
        let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
        ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
    }

    /// Reward received on entering `s`: the step cost plus
    /// `-PUDDLE_SCALE * (radius - distance)` for every puddle within reach.
    pub fn reward_at(s: &[f64]) -> f64 {
        let penalty: f64 = PUDDLES
            .iter()
            .map(|&(a, b)| (PUDDLE_RADIUS - segment_distance(s, a, b)).max(0.0))
            .sum();
        STEP_COST - PUDDLE_SCALE * penalty
    }

    pub fn is_goal(s: &[f64]) -> bool {
        s[0] + s[1] >= GOAL_SUM
    }

    pub fn step(s: &[f64], action: usize, noise: f64, rng: &mut Rng) -> Outcome {
        let (dx, dy) = match action {
            0 => (0.0, STEP),
            1 => (0.0, -STEP),
            2 => (-STEP, 0.0),
            _ => (STEP, 0.0),
        };
        let nx = (s[0] + dx + noise * NOISE_STD * gauss(rng)).clamp(LO[0], HI[0]);
        let ny = (s[1] + dy + noise * NOISE_STD * gauss(rng)).clamp(LO[1], HI[1]);
        let next = vec![nx, ny];
        Outcome {
            reward: reward_at(&next),
            terminal: is_goal(&next),
            next_state: next,
        }
    }

    /// Moves up or right, whichever closes the larger gap to the corner;
    /// with probability `POLICY_EPSILON` acts uniformly at random.
    pub fn policy(s: &[f64], rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let pick = rng.random_range(0..N_ACTIONS);
        if u < POLICY_EPSILON {
            pick
        } else if 1.0 - s[1] > 1.0 - s[0] {
            0
        } else {
            3
        }
    }
}

pub mod cartpole {
    use super::*;

    pub const GRAVITY: f64 = 9.8;
    pub const MASS_CART: f64 = 1.0;
    pub const MASS_POLE: f64 = 0.1;
    pub const HALF_LENGTH: f64 = 0.5;
    pub const FORCE: f64 = 10.0;
    pub const TAU: f64 = 0.02;
    pub const X_LIMIT: f64 = 2.4;
    pub const THETA_LIMIT: f64 = 12.0 * 2.0 * PI / 360.0;
    /// Noise added to the velocity updates.
    pub const NOISE_STD: [f64; 2] = [0.01, 0.01];
    /// State box `[x, x_dot, theta, theta_dot]`.
    pub const LO: [f64; 4] = [-X_LIMIT, -3.0, -THETA_LIMIT, -3.0];
    pub const HI: [f64; 4] = [X_LIMIT, 3.0, THETA_LIMIT, 3.0];
    pub const POLICY_EPSILON: f64 = 0.1;

    pub fn is_failed(s: &[f64]) -> bool {
        s[0].abs() > X_LIMIT || s[2].abs() > THETA_LIMIT
    }

    /// Semi-implicit Euler step; action 0 pushes left, 1 pushes right.
    /// Reward is 1 per step. Termination is decided before clipping.
    pub fn step(s: &[f64], action: usize, noise: f64, rng: &mut Rng) -> Outcome {
        let (x, x_dot, theta, theta_dot) = (s[0], s[1], s[2], s[3]);
        let force = if action == 1 { FORCE } else { -FORCE };
        let total = MASS_CART + MASS_POLE;
        let pml = MASS_POLE * HALF_LENGTH;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pml * theta_dot * theta_dot * sin) / total;
        let theta_acc = (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / total));
        let x_acc = temp - pml * theta_acc * cos / total;
        let x_dot = x_dot + TAU * x_acc + noise * NOISE_STD[0] * gauss(rng);
        let theta_dot = theta_dot + TAU * theta_acc + noise * NOISE_STD[1] * gauss(rng);
        let mut next = vec![x + TAU * x_dot, x_dot, theta + TAU * theta_dot, theta_dot];
        let terminal = is_failed(&next);
        for (v, (lo, hi)) in next.iter_mut().zip(LO.iter().zip(HI)) {
            *v = v.clamp(*lo, hi);
        }
        Outcome {
            next_state: next,
            reward: 1.0,
            terminal,
        }
    }

    /// PD controller on the pole with a weak centering term on the cart.
    pub fn policy(s: &[f64], rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let pick = rng.random_range(0..2);
        if u < POLICY_EPSILON {
            return pick;
        }
        let signal = 10.0 * s[2] + 2.0 * s[3] + 0.1 * s[0] + 0.5 * s[1];
        usize::from(signal > 0.0)
    }
}

pub mod mountain_car {
    use super::*;

    pub const LO: [f64; 2] = [-1.2, -0.07];
    pub const HI: [f64; 2] = [0.6, 0.07];
    pub const GOAL: f64 = 0.5;
    pub const POWER: f64 = 0.001;
    pub const GRAVITY: f64 = 0.0025;
    pub const NOISE_STD: f64 = 0.0005;
    pub const POLICY_EPSILON: f64 = 0.1;
    /// Bottom of the valley, where the slope term vanishes.
    pub const VALLEY: f64 = -PI / 6.0;

    /// Actions: 0 push left, 1 coast, 2 push right. Reward -1 per step.
    pub fn step(s: &[f64], action: usize, noise: f64, rng: &mut Rng) -> Outcome {
        let (pos, vel) = (s[0], s[1]);
        let mut vel =
            vel + (action as f64 - 1.0) * POWER - GRAVITY * (3.0 * pos).cos() + noise * NOISE_STD * gauss(rng);
        vel = vel.clamp(LO[1], HI[1]);
        let pos = (pos + vel).clamp(LO[0], HI[0]);
        if pos == LO[0] && vel < 0.0 {
            vel = 0.0;
        }
        Outcome {
            terminal: pos >= GOAL,
            next_state: vec![pos, vel],
            reward: -1.0,
        }
    }

    /// Energy pumping: push along the current velocity.
    pub fn policy(s: &[f64], rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let pick = rng.random_range(0..3);
        if u < POLICY_EPSILON {
            pick
        } else if s[1] >= 0.0 {
            2
        } else {
            0
        }
    }
}

pub mod pendulum {
    use super::*;

    pub const GRAVITY: f64 = 10.0;
    pub const MASS: f64 = 1.0;
    pub const LENGTH: f64 = 1.0;
    pub const DT: f64 = 0.05;
    pub const MAX_SPEED: f64 = 8.0;
    pub const MAX_TORQUE: f64 = 2.0;
    pub const NOISE_STD: f64 = 0.01;
    /// State box `[theta, theta_dot]`; `theta = 0` is upright.
    pub const LO: [f64; 2] = [-PI, -MAX_SPEED];
    pub const HI: [f64; 2] = [PI, MAX_SPEED];
    pub const POLICY_NOISE: f64 = 0.2;

    pub fn angle_normalize(x: f64) -> f64 {
        (x + PI).rem_euclid(2.0 * PI) - PI
    }

    pub fn reward(theta: f64, theta_dot: f64, torque: f64) -> f64 {
        let th = angle_normalize(theta);
        -(th * th + 0.1 * theta_dot * theta_dot + 0.001 * torque * torque)
    }

    /// No terminal states; the angle is wrapped into `[-pi, pi)`.
    pub fn step(s: &[f64], torque: f64, noise: f64, rng: &mut Rng) -> Outcome {
        let (theta, theta_dot) = (s[0], s[1]);
        let u = torque.clamp(-MAX_TORQUE, MAX_TORQUE);
        let reward = reward(theta, theta_dot, u);
        let acc = 3.0 * GRAVITY / (2.0 * LENGTH) * theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u;
        let new_dot = (theta_dot + acc * DT + noise * NOISE_STD * gauss(rng)).clamp(-MAX_SPEED, MAX_SPEED);
        let new_theta = angle_normalize(theta + new_dot * DT);
        Outcome {
            next_state: vec![new_theta, new_dot],
            reward,
            terminal: false,
        }
    }

    /// Total energy `I theta_dot^2 / 2 + m g (l/2) cos(theta)` with `I = m l^2 / 3`.
    pub fn energy(theta: f64, theta_dot: f64) -> f64 {
        0.5 * MASS * LENGTH * LENGTH / 3.0 * theta_dot * theta_dot + MASS * GRAVITY * 0.5 * LENGTH * theta.cos()
    }

    /// Energy pumping (`dE/dt = u theta_dot`) towards the upright energy,
    /// switching to a PD stabilizer near the top, plus Gaussian noise.
    pub fn policy(s: &[f64], rng: &mut Rng) -> f64 {
        let (theta, theta_dot) = (angle_normalize(s[0]), s[1]);
        let u = if theta.abs() < 0.5 {
            -(10.0 * theta + 2.0 * theta_dot)
        } else {
            let target = MASS * GRAVITY * 0.5 * LENGTH;
            2.0 * (target - energy(theta, theta_dot)) * theta_dot
        };
        (u + POLICY_NOISE * gauss(rng)).clamp(-MAX_TORQUE, MAX_TORQUE)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn mountain_car_rests_in_valley() {
        let mut r = rng::stream(0, 0);
        let mut s = vec![mountain_car::VALLEY, 0.0];
        for _ in 0..50 {
            s = mountain_car::step(&s, 1, 0.0, &mut r).next_state;
        }
        assert!((s[0] - mountain_car::VALLEY).abs() < 1e-9 && s[1].abs() < 1e-9);
    }

    #[test]
    fn cartpole_terminates_past_angle_limit() {
        let mut r = rng::stream(0, 0);
        let s = [0.0, 0.0, 0.25, 0.0];
        assert!(cartpole::step(&s, 0, 0.0, &mut r).terminal);
        let s = [0.0, 0.0, 0.0, 0.0];
        assert!(!cartpole::step(&s, 0, 0.0, &mut r).terminal);
    }

    #[test]
    fn puddle_reward_outside_puddle_is_step_cost() {
        let mut r = rng::stream(0, 0);
        // From (0.2, 0.2) moving right lands at (0.25, 0.2), far from both puddles.
        let out = puddle::step(&[0.2, 0.2], 3, 0.0, &mut r);
        assert_eq!(out.next_state, vec![0.25, 0.2]);
        assert_eq!(out.reward, -1.0);
        assert!(!out.terminal);
        // Inside the horizontal puddle, 0.05 from its axis: -1 - 400 * 0.05.
        assert!((puddle::reward_at(&[0.3, 0.7]) + 21.0).abs() < 1e-12);
        assert!(puddle::step(&[0.95, 0.95], 0, 0.0, &mut r).terminal);
    }

    #[test]
    fn pendulum_upright_at_rest_is_an_equilibrium() {
        let mut r = rng::stream(0, 0);
        let out = pendulum::step(&[0.0, 0.0], 0.0, 0.0, &mut r);
        assert_eq!(out.next_state, vec![0.0, 0.0]);
        assert_eq!(out.reward, 0.0);
        assert!((pendulum::angle_normalize(3.5 * PI) + 0.5 * PI).abs() < 1e-12);
    }
}
