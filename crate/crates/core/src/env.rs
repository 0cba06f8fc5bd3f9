//! The two 2D tasks: an agent navigating around walls, and an agent pushing
//! a round object across an open floor.
//!
//! An action is a flat gene vector in `[-1, 1]^n` made of `(vx, vy, duration)`
//! triples. Every triple is applied to the agent as a constant velocity for
//! `duration` time steps. Each time step is integrated in a fixed number of
//! substeps with per-axis collision resolution, so the agent slides along
//! walls instead of stopping dead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Genes of one sub-action: velocity x, velocity y, duration.
pub const GENES_PER_SUB_ACTION: usize = 3;

/// Real-valued parameter vector with every component in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Action(pub Vec<f64>);

impl Action {
    pub fn new(genes: Vec<f64>) -> Self {
        Action(genes)
    }

    pub fn genes(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Clamps every gene back into `[-1, 1]`.
    pub fn clip(&mut self) {
        for g in &mut self.0 {
            *g = g.clamp(-1.0, 1.0);
        }
    }

    pub fn distance(&self, other: &Action) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Final position of the moved entity: the agent in the obstacle task, the
/// object in the object task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Behavior(pub Point);

impl Behavior {
    pub fn new(x: f64, y: f64) -> Self {
        Behavior([x, y])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn distance(&self, other: &Behavior) -> f64 {
        dist(self.0, other.0)
    }
}

#[inline]
pub(crate) fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Axis-aligned rectangle `[min.x, max.x] x [min.y, max.y]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect {
            min: [x0, y0],
            max: [x1, y1],
        }
    }

    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    /// Euclidean distance from `p` to the closed rectangle (0 inside).
    pub fn distance_to(&self, p: Point) -> f64 {
        let dx = (self.min[0] - p[0]).max(0.0).max(p[0] - self.max[0]);
        let dy = (self.min[1] - p[1]).max(0.0).max(p[1] - self.max[1]);
        (dx * dx + dy * dy).sqrt()
    }

    /// Chebyshev distance from `p` to the rectangle; a body of half-extent
    /// `r` at `p` clears the rectangle iff this is at least `r`.
    pub fn box_gap(&self, p: Point) -> f64 {
        let dx = (self.min[0] - p[0]).max(0.0).max(p[0] - self.max[0]);
        let dy = (self.min[1] - p[1]).max(0.0).max(p[1] - self.max[1]);
        dx.max(dy)
    }

    pub fn translated(&self, offset: Point) -> Rect {
        Rect {
            min: [self.min[0] + offset[0], self.min[1] + offset[1]],
            max: [self.max[0] + offset[0], self.max[1] + offset[1]],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Three sub-actions; behavior is the final agent position.
    Obstacle2d,
    /// Five sub-actions; behavior is the final object position.
    Object2d,
}

impl TaskKind {
    pub fn sub_actions(self) -> usize {
        match self {
            TaskKind::Obstacle2d => 3,
            TaskKind::Object2d => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Obstacle2d => "obstacle2d",
            TaskKind::Object2d => "object2d",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "obstacle2d" => Ok(TaskKind::Obstacle2d),
            "object2d" => Ok(TaskKind::Object2d),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub task: TaskKind,
    pub bounds: Rect,
    #[serde(default)]
    pub obstacles: Vec<Rect>,
    pub agent_start: Point,
    pub agent_radius: f64,
    #[serde(default)]
    pub object_start: Option<Point>,
    #[serde(default)]
    pub object_radius: Option<f64>,
    /// Largest speed per axis, in space units per time step.
    pub v_max: f64,
    /// Largest duration of a sub-action, in time steps.
    pub t_max: u32,
    /// Integration substeps per time step.
    pub substeps_per_step: u32,
}

impl EnvConfig {
    /// Unit square with a U-shaped enclosure around the agent, open at the top.
    pub fn obstacle2d() -> Self {
        EnvConfig {
            task: TaskKind::Obstacle2d,
            bounds: Rect::new(0.0, 0.0, 1.0, 1.0),
            obstacles: vec![
                Rect::new(0.30, 0.25, 0.32, 0.75),
                Rect::new(0.68, 0.25, 0.70, 0.75),
                Rect::new(0.30, 0.25, 0.70, 0.27),
            ],
            agent_start: [0.5, 0.5],
            agent_radius: 0.01,
            object_start: None,
            object_radius: None,
            v_max: 0.05,
            t_max: 20,
            substeps_per_step: 15,
        }
    }

    /// Open unit square with the object in the middle and the agent below it.
    pub fn object2d() -> Self {
        EnvConfig {
            task: TaskKind::Object2d,
            bounds: Rect::new(0.0, 0.0, 1.0, 1.0),
            obstacles: Vec::new(),
            agent_start: [0.5, 0.35],
            agent_radius: 0.01,
            object_start: Some([0.5, 0.5]),
            object_radius: Some(0.02),
            v_max: 0.05,
            t_max: 20,
            substeps_per_step: 15,
        }
    }

    pub fn preset(task: TaskKind) -> Self {
        match task {
            TaskKind::Obstacle2d => Self::obstacle2d(),
            TaskKind::Object2d => Self::object2d(),
        }
    }

    pub fn action_dim(&self) -> usize {
        self.task.sub_actions() * GENES_PER_SUB_ACTION
    }

    /// Start point of the entity whose final position is the behavior.
    pub fn tracked_start(&self) -> Point {
        match self.task {
            TaskKind::Obstacle2d => self.agent_start,
            TaskKind::Object2d => self.object_start.unwrap_or(self.agent_start),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.bounds.width() > 0.0 && self.bounds.height() > 0.0) {
            return fail("bounds must have positive area");
        }
        if !(self.agent_radius > 0.0) {
            return fail("agent_radius must be positive");
        }
        if !(self.v_max > 0.0) {
            return fail("v_max must be positive");
        }
        if self.t_max < 1 {
            return fail("t_max must be at least 1");
        }
        if self.substeps_per_step < 1 {
            return fail("substeps_per_step must be at least 1");
        }
        if !self.bounds.contains(self.agent_start) {
            return fail("agent_start lies outside bounds");
        }
        if self
            .obstacles
            .iter()
            .any(|o| o.box_gap(self.agent_start) < self.agent_radius)
        {
            return fail("agent_start overlaps an obstacle");
        }
        match (self.task, self.object_start, self.object_radius) {
            (TaskKind::Object2d, Some(start), Some(r)) => {
                if !(r > 0.0) {
                    return fail("object_radius must be positive");
                }
                if !self.bounds.contains(start) {
                    return fail("object_start lies outside bounds");
                }
                if self.obstacles.iter().any(|o| o.box_gap(start) < r) {
                    return fail("object_start overlaps an obstacle");
                }
                if dist(start, self.agent_start) < r + self.agent_radius {
                    return fail("object and agent overlap at start");
                }
            }
            (TaskKind::Object2d, _, _) => {
                return fail("object2d requires object_start and object_radius")
            }
            (TaskKind::Obstacle2d, None, None) => {}
            (TaskKind::Obstacle2d, _, _) => {
                return fail("obstacle2d takes no object")
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubAction {
    pub vx: f64,
    pub vy: f64,
    pub duration: u32,
}

/// Maps genes onto sub-actions: velocities scale linearly with `v_max`, the
/// duration gene maps `[-1, 1]` onto `1..=t_max`.
pub fn decode(action: &Action, env: &EnvConfig) -> Result<Vec<SubAction>> {
    let expected = env.action_dim();
    if action.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: action.len(),
        });
    }
    Ok(action
        .genes()
        .chunks_exact(GENES_PER_SUB_ACTION)
        .map(|g| {
            let d = g[2].clamp(-1.0, 1.0);
            let duration = ((d + 1.0) / 2.0 * f64::from(env.t_max - 1)).round() as u32 + 1;
            SubAction {
                vx: g[0].clamp(-1.0, 1.0) * env.v_max,
                vy: g[1].clamp(-1.0, 1.0) * env.v_max,
                duration,
            }
        })
        .collect())
}

/// Positions and travelled distances during a rollout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionState {
    pub agent: Point,
    pub object: Option<Point>,
    pub agent_path: f64,
    pub object_path: f64,
}

impl MotionState {
    pub fn initial(env: &EnvConfig) -> Self {
        MotionState {
            agent: env.agent_start,
            object: env.object_start,
            agent_path: 0.0,
            object_path: 0.0,
        }
    }
}

/// A wall face as seen by the centre of a body of half-extent `r`: the plane
/// `p[axis] = c` with outward normal sign `sign`, spanning `[lo, hi]` on the
/// other axis.
#[derive(Clone, Copy, Debug)]
struct Face {
    axis: usize,
    c: f64,
    sign: f64,
    lo: f64,
    hi: f64,
}

impl Face {
    /// Fraction of `d` travelled from `p` before the centre meets this face.
    fn hit(&self, p: Point, d: Point) -> Option<f64> {
        let approach = -self.sign * d[self.axis];
        if approach <= 0.0 {
            return None;
        }
        let sd = self.sign * (p[self.axis] - self.c);
        if sd < -DEEP {
            return None;
        }
        let t = sd.max(0.0) / approach;
        if t > 1.0 {
            return None;
        }
        let o = 1 - self.axis;
        let q = p[o] + t * d[o];
        let outside = q < self.lo || q > self.hi;
        let leaving = (q >= self.hi && d[o] > 0.0) || (q <= self.lo && d[o] < 0.0);
        if outside || leaving {
            return None;
        }
        Some(t)
    }

    /// Fraction of `d` after which a centre sliding along this face leaves
    /// its span.
    fn exit(&self, p: Point, d: Point) -> Option<f64> {
        let o = 1 - self.axis;
        let t = if d[o] > 0.0 {
            (self.hi - p[o]) / d[o]
        } else if d[o] < 0.0 {
            (self.lo - p[o]) / d[o]
        } else {
            return None;
        };
        (t <= 1.0).then_some(t.max(0.0))
    }
}

fn faces(env: &EnvConfig, r: f64) -> impl Iterator<Item = Face> + '_ {
    let inf = f64::INFINITY;
    let b = env.bounds;
    let walls = [
        Face { axis: 0, c: b.min[0] + r, sign: 1.0, lo: -inf, hi: inf },
        Face { axis: 0, c: b.max[0] - r, sign: -1.0, lo: -inf, hi: inf },
        Face { axis: 1, c: b.min[1] + r, sign: 1.0, lo: -inf, hi: inf },
        Face { axis: 1, c: b.max[1] - r, sign: -1.0, lo: -inf, hi: inf },
    ];
    let boxes = env.obstacles.iter().flat_map(move |o| {
        let ([x0, y0], [x1, y1]) = (o.min, o.max);
        [
            Face { axis: 0, c: x0 - r, sign: -1.0, lo: y0 - r, hi: y1 + r },
            Face { axis: 0, c: x1 + r, sign: 1.0, lo: y0 - r, hi: y1 + r },
            Face { axis: 1, c: y0 - r, sign: -1.0, lo: x0 - r, hi: x1 + r },
            Face { axis: 1, c: y1 + r, sign: 1.0, lo: x0 - r, hi: x1 + r },
        ]
    });
    walls.into_iter().chain(boxes)
}

const DEEP: f64 = 1e-7;
const MAX_EVENTS: usize = 8;

/// Moves a body of half-extent `r` by `delta` with continuous collision
/// against obstacles and bounds. Walls see the bounding square of the body.
/// On contact the blocked axis stops while the other keeps moving; once the
/// body slides past the end of the face the blocked axis resumes.
///
/// Returns the new position and the length of the travelled polyline.
fn slide_disc(mut pos: Point, r: f64, delta: Point, env: &EnvConfig) -> (Point, f64) {
    let mut travelled = 0.0;
    let mut left = 1.0;
    let mut contacts: [Option<Face>; 2] = [None, None];
    for _ in 0..MAX_EVENTS {
        if left <= 0.0 {
            break;
        }
        let mut d = [delta[0] * left, delta[1] * left];
        for f in contacts.iter().flatten() {
            d[f.axis] = 0.0;
        }
        if d == [0.0, 0.0] {
            break;
        }
        let mut first: Option<(f64, Face, bool)> = None;
        let mut consider = |t: f64, f: Face, is_exit: bool| {
            if first.is_none_or(|(best, _, _)| t < best) {
                first = Some((t, f, is_exit));
            }
        };
        for f in faces(env, r) {
            if contacts[f.axis].is_none() {
                if let Some(t) = f.hit(pos, d) {
                    consider(t, f, false);
                }
            }
        }
        for f in contacts.iter().flatten() {
            if let Some(t) = f.exit(pos, d) {
                consider(t, *f, true);
            }
        }
        let Some((t, face, is_exit)) = first else {
            pos = [pos[0] + d[0], pos[1] + d[1]];
            travelled += d[0].hypot(d[1]);
            break;
        };
        pos = [pos[0] + t * d[0], pos[1] + t * d[1]];
        travelled += t * d[0].hypot(d[1]);
        left *= 1.0 - t;
        contacts[face.axis] = if is_exit { None } else { Some(face) };
    }
    (pos, travelled)
}

fn substep(state: &mut MotionState, delta: Point, env: &EnvConfig) {
    let before = state.agent;
    let (mut agent, mut agent_step) = slide_disc(state.agent, env.agent_radius, delta, env);

    if let (Some(obj), Some(obj_r)) = (state.object, env.object_radius) {
        let contact = env.agent_radius + obj_r;
        let d = dist(agent, obj);
        if d < contact {
            let normal = if d > 1e-15 {
                [(obj[0] - agent[0]) / d, (obj[1] - agent[1]) / d]
            } else {
                let m = dist(agent, before);
                if m > 0.0 {
                    [(agent[0] - before[0]) / m, (agent[1] - before[1]) / m]
                } else {
                    [0.0, 1.0]
                }
            };
            let overlap = contact - d;
            let (pushed, obj_step) =
                slide_disc(obj, obj_r, [normal[0] * overlap, normal[1] * overlap], env);
            state.object_path += obj_step;
            state.object = Some(pushed);

            // The object may have been stopped by a wall; back the agent off.
            let d2 = dist(agent, pushed);
            if d2 < contact {
                let n2 = if d2 > 1e-15 {
                    [(agent[0] - pushed[0]) / d2, (agent[1] - pushed[1]) / d2]
                } else {
                    [-normal[0], -normal[1]]
                };
                let back = contact - d2;
                agent = slide_disc(agent, env.agent_radius, [n2[0] * back, n2[1] * back], env).0;
                agent_step = dist(before, agent);
            }
        }
    }

    state.agent_path += agent_step;
    state.agent = agent;
}

/// Applies one sub-action for its full duration.
pub fn step_motion(state: MotionState, sub: &SubAction, env: &EnvConfig) -> MotionState {
    let mut state = state;
    let n = env.substeps_per_step.max(1);
    let delta = [sub.vx / f64::from(n), sub.vy / f64::from(n)];
    for _ in 0..sub.duration {
        for _ in 0..n {
            substep(&mut state, delta, env);
        }
    }
    state
}

/// Full rollout of an action from the task's start state.
pub fn rollout(action: &Action, env: &EnvConfig) -> Result<MotionState> {
    let subs = decode(action, env)?;
    Ok(subs
        .iter()
        .fold(MotionState::initial(env), |s, sub| step_motion(s, sub, env)))
}

/// Quality of a path: straight-line displacement over travelled length,
/// defined as 1 for an entity that never moved.
pub fn path_quality(start: Point, end: Point, path_length: f64) -> f64 {
    if path_length <= 0.0 {
        return 1.0;
    }
    (dist(start, end) / path_length).min(1.0)
}

/// Runs `action` and returns `(behavior, quality)`. Pure and deterministic.
pub fn evaluate(action: &Action, env: &EnvConfig) -> Result<(Behavior, f64)> {
    let state = rollout(action, env)?;
    let (end, path) = match env.task {
        TaskKind::Obstacle2d => (state.agent, state.agent_path),
        TaskKind::Object2d => (state.object.unwrap_or(state.agent), state.object_path),
    };
    Ok((Behavior(end), path_quality(env.tracked_start(), end, path)))
}
