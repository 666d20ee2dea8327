//! 2D navigation with locally factored dynamics.
//!
//! States are `(x, y)` in the unit square and actions `(dx, dy)` in
//! `[-1, 1]^2`. Outside the top-right quadrant each sub-action moves only
//! its own coordinate; inside it (`x > 0.5 && y > 0.5`) both sub-actions
//! move both coordinates through a coupling matrix.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::structure::{AdjacencyMask, MaskFn, ParentSetSpec, Episodic, SaBox, Simulator, Task};
use crate::data::{Dataset, Transition};
use crate::error::{Error, Result};

pub const STATE_DIM: usize = 2;
pub const ACTION_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pub x: f64,
    pub y: f64,
}

impl NavState {
    pub fn new(x: f64, y: f64) -> Self {
        Self {
            x: x.clamp(0.0, 1.0),
            y: y.clamp(0.0, 1.0),
        }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.x, self.y]
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        match s {
            [x, y] => Ok(Self::new(*x, *y)),
            _ => Err(Error::DimMismatch {
                expected: STATE_DIM,
                got: s.len(),
                context: "nav state",
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavAction {
    dx: f64,
    dy: f64,
}

impl NavAction {
    /// Rejects components outside `[-1, 1]`.
    pub fn new(dx: f64, dy: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&dx) || !(-1.0..=1.0).contains(&dy) {
            return Err(Error::ContractViolation(format!(
                "action ({dx}, {dy}) outside [-1, 1]^2"
            )));
        }
        Ok(Self { dx, dy })
    }

    pub fn clipped(dx: f64, dy: f64) -> Self {
        Self {
            dx: dx.clamp(-1.0, 1.0),
            dy: dy.clamp(-1.0, 1.0),
        }
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn from_slice(a: &[f64]) -> Result<Self> {
        match a {
            [dx, dy] => Self::new(*dx, *dy),
            _ => Err(Error::DimMismatch {
                expected: ACTION_DIM,
                got: a.len(),
                context: "nav action",
            }),
        }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.dx, self.dy]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavConfig {
    pub step_scale: f64,
    /// Action mixing inside the coupled quadrant, row-major.
    pub coupling: [[f64; 2]; 2],
    pub quadrant_threshold: f64,
    pub goal: [f64; 2],
    pub goal_radius: f64,
    /// Start states are uniform over `[start_low, start_high]^2`.
    pub start_low: f64,
    pub start_high: f64,
    pub max_steps: usize,
    /// Uniform per-component action noise of the scripted collector.
    pub collect_noise: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            step_scale: 0.05,
            coupling: [[0.5, 0.5], [0.5, 0.5]],
            quadrant_threshold: 0.5,
            goal: [0.95, 0.95],
            goal_radius: 0.1,
            start_low: 0.0,
            start_high: 0.1,
            max_steps: 70,
            collect_noise: 0.3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NavEnv {
    pub config: NavConfig,
}

impl NavEnv {
    pub fn new(config: NavConfig) -> Self {
        Self { config }
    }

    #[inline]
    pub fn in_coupled_region(&self, x: f64, y: f64) -> bool {
        let t = self.config.quadrant_threshold;
        x > t && y > t
    }

    pub fn step(&self, s: NavState, a: NavAction) -> NavState {
        let (x, y) = self.step_raw(s.x, s.y, a.dx, a.dy);
        NavState { x, y }
    }

    #[inline]
    fn step_raw(&self, x: f64, y: f64, dx: f64, dy: f64) -> (f64, f64) {
        let d = self.config.step_scale;
        let (mx, my) = if self.in_coupled_region(x, y) {
            let c = &self.config.coupling;
            (c[0][0] * dx + c[0][1] * dy, c[1][0] * dx + c[1][1] * dy)
        } else {
            (dx, dy)
        };
        ((x + d * mx).clamp(0.0, 1.0), (y + d * my).clamp(0.0, 1.0))
    }

    /// Ground-truth next state for raw vectors; rejects out-of-box actions.
    pub fn step_vec(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        let s = NavState::from_slice(s)?;
        let a = NavAction::from_slice(a)?;
        Ok(self.step(s, a).to_vec())
    }

    /// Local causal graph at `(s, a)`; rows `x, y, dx, dy`, columns `x', y'`.
    pub fn mask_at(&self, s: NavState) -> AdjacencyMask {
        if self.in_coupled_region(s.x, s.y) {
            AdjacencyMask::ones(4, 2)
        } else {
            Self::base_mask()
        }
    }

    /// The sparsest local graph: `(x, dx) -> x'` and `(y, dy) -> y'`.
    pub fn base_mask() -> AdjacencyMask {
        AdjacencyMask::from_rows(&[&[1, 0], &[0, 1], &[1, 0], &[0, 1]])
            .expect("static mask is valid")
    }

    /// Mechanisms of the sparsest graph.
    pub fn base_parent_sets() -> Vec<ParentSetSpec> {
        vec![
            ParentSetSpec::new(0, vec![0, 2]),
            ParentSetSpec::new(1, vec![1, 3]),
        ]
    }

    /// `[0, 1]^2 x [-1, 1]^2`.
    pub fn sa_box() -> SaBox {
        SaBox::new(vec![0.0, 0.0, -1.0, -1.0], vec![1.0, 1.0, 1.0, 1.0]).expect("static box")
    }

    /// Sparse goal reward on the successor state: `(0, true)` inside the
    /// goal ball, `(-1, false)` elsewhere.
    pub fn reward(&self, _s: &[f64], _a: &[f64], s_next: &[f64]) -> (f64, bool) {
        let g = self.config.goal;
        let dist = ((s_next[0] - g[0]).powi(2) + (s_next[1] - g[1]).powi(2)).sqrt();
        if dist <= self.config.goal_radius {
            (0.0, true)
        } else {
            (-1.0, false)
        }
    }

    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> NavState {
        let (lo, hi) = (self.config.start_low, self.config.start_high);
        NavState::new(rng.random_range(lo..=hi), rng.random_range(lo..=hi))
    }

    /// Scripted noisy L-shaped trajectories: `n_per_kind` transitions that
    /// travel left-to-right along the bottom band then up the right edge,
    /// and `n_per_kind` that travel bottom-to-top along the left band then
    /// right along the top edge.
    pub fn collect_empirical<R: Rng + ?Sized>(&self, n_per_kind: usize, rng: &mut R) -> Dataset {
        let mut ds = Dataset::new(STATE_DIM, ACTION_DIM);
        for kind in [Leg::Horizontal, Leg::Vertical] {
            let mut count = 0;
            while count < n_per_kind {
                for t in self.scripted_episode(kind, rng) {
                    if count == n_per_kind {
                        break;
                    }
                    ds.transitions.push(t);
                    count += 1;
                }
            }
        }
        ds
    }

    fn scripted_episode<R: Rng + ?Sized>(&self, first: Leg, rng: &mut R) -> Vec<Transition> {
        let noise = self.config.collect_noise;
        let d = self.config.step_scale;
        // first leg runs in a lane inside [0, 0.25]; the turn happens at the far edge
        let lane = rng.random_range(0.0..=0.25);
        let turn = rng.random_range(0.92..=1.0);
        let along = rng.random_range(self.config.start_low..=self.config.start_high);
        let mut s = match first {
            Leg::Horizontal => NavState::new(along, lane),
            Leg::Vertical => NavState::new(lane, along),
        };
        let mut out = Vec::with_capacity(self.config.max_steps);
        let mut turned = false;
        for _ in 0..self.config.max_steps {
            // coordinates in the frame of the first leg: (progress, lateral)
            let (progress, lateral) = match first {
                Leg::Horizontal => (s.x, s.y),
                Leg::Vertical => (s.y, s.x),
            };
            if !turned && progress >= turn {
                turned = true;
            }
            let (p_act, l_act) = if !turned {
                (1.0, (0.5 * (lane - lateral) / d).clamp(-0.5, 0.5))
            } else {
                ((0.5 * (turn - progress) / d).clamp(-0.5, 0.5), 1.0)
            };
            let p_act = p_act + rng.random_range(-noise..=noise);
            let l_act = l_act + rng.random_range(-noise..=noise);
            let a = match first {
                Leg::Horizontal => NavAction::clipped(p_act, l_act),
                Leg::Vertical => NavAction::clipped(l_act, p_act),
            };
            let s2 = self.step(s, a);
            let (r, done) = self.reward(&s.to_vec(), &a.to_vec(), &s2.to_vec());
            out.push(Transition::new(s.to_vec(), a.to_vec(), s2.to_vec(), r, done));
            s = s2;
            let lateral_after = match first {
                Leg::Horizontal => s.y,
                Leg::Vertical => s.x,
            };
            if turned && lateral_after >= 1.0 {
                break;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
enum Leg {
    Horizontal,
    Vertical,
}

impl Simulator for NavEnv {
    /// Actions outside the box are clipped first.
    fn next_state(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let (x, y) = self.step_raw(s[0], s[1], a[0].clamp(-1.0, 1.0), a[1].clamp(-1.0, 1.0));
        vec![x, y]
    }
}

impl Task for NavEnv {
    fn bounds(&self) -> SaBox {
        NavEnv::sa_box()
    }

    fn reward(&self, s: &[f64], a: &[f64], s_next: &[f64]) -> (f64, bool) {
        NavEnv::reward(self, s, a, s_next)
    }
}

impl Episodic for NavEnv {
    fn start_state(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        self.sample_start(rng).to_vec()
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }
}

impl MaskFn for NavEnv {
    fn mask(&self, sa: &[f64]) -> AdjacencyMask {
        self.mask_at(NavState {
            x: sa[0],
            y: sa[1],
        })
    }
}
