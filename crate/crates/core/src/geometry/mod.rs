//! Planar environments: an SE(2) mobile base or a planar serial arm among
//! circular and rectangular obstacles.

mod kinematics;
pub mod shapes;

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub use kinematics::{
    forward_kinematics, inverse_kinematics, inverse_kinematics_with, tip_jacobian, ArmPose,
    IkOptions, IkSolutions,
};
pub(crate) use kinematics::{jacobian_unchecked, tip_unchecked};
use shapes::Point;

/// Returned by [`signed_distance`] when the environment has no obstacles.
pub const NO_OBSTACLE: f64 = 1.0e9;

/// Default clearance folded into every signed distance, in meters.
pub const DEFAULT_CLEARANCE: f64 = 0.02;

/// A robot configuration: joint angles for an arm, `(x, y, theta)` for a base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(Vec<f64>);

impl Configuration {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for Configuration {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Configuration {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl From<&[f64]> for Configuration {
    fn from(values: &[f64]) -> Self {
        Self(values.to_vec())
    }
}

/// A discrete path `q_0, ..., q_T` stored flat in time-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "PathRepr", try_from = "PathRepr")]
pub struct Path {
    dof: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PathRepr {
    dof: usize,
    steps: usize,
    configs: Vec<Vec<f64>>,
}

impl From<Path> for PathRepr {
    fn from(p: Path) -> Self {
        PathRepr {
            dof: p.dof,
            steps: p.steps(),
            configs: p.data.chunks(p.dof).map(<[f64]>::to_vec).collect(),
        }
    }
}

impl TryFrom<PathRepr> for Path {
    type Error = Error;

    fn try_from(r: PathRepr) -> Result<Self> {
        if r.configs.len() != r.steps + 1 {
            return Err(Error::Format(format!(
                "path declares {} steps but holds {} configurations",
                r.steps,
                r.configs.len()
            )));
        }
        let mut data = Vec::with_capacity(r.dof * r.configs.len());
        for c in &r.configs {
            check_dim(r.dof, c.len())?;
            data.extend_from_slice(c);
        }
        Path::from_flat(r.dof, data)
    }
}

impl Path {
    /// Wraps a flat time-major vector of `dof * (T + 1)` values, `T >= 1`.
    pub fn from_flat(dof: usize, data: Vec<f64>) -> Result<Self> {
        if dof == 0 || data.len() % dof != 0 || data.len() / dof < 2 {
            return Err(Error::Input(format!(
                "flat path of length {} does not hold at least two configurations of dimension {dof}",
                data.len()
            )));
        }
        Ok(Self { dof, data })
    }

    pub fn from_configs(configs: &[Configuration]) -> Result<Self> {
        let dof = configs.first().map(|c| c.dim()).unwrap_or(0);
        let mut data = Vec::with_capacity(dof * configs.len());
        for c in configs {
            check_dim(dof, c.dim())?;
            data.extend_from_slice(c);
        }
        Self::from_flat(dof, data)
    }

    pub fn constant(q: &[f64], steps: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(q.len() * (steps + 1));
        for _ in 0..=steps {
            data.extend_from_slice(q);
        }
        Self::from_flat(q.len(), data)
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    /// Number of time steps `T`; the path holds `T + 1` configurations.
    pub fn steps(&self) -> usize {
        self.data.len() / self.dof - 1
    }

    pub fn config(&self, t: usize) -> &[f64] {
        &self.data[t * self.dof..(t + 1) * self.dof]
    }

    pub fn config_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dof..(t + 1) * self.dof]
    }

    pub fn first(&self) -> &[f64] {
        self.config(0)
    }

    pub fn last(&self) -> &[f64] {
        self.config(self.steps())
    }

    pub fn configs(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dof)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn reversed(&self) -> Path {
        let data = self.data.chunks(self.dof).rev().flatten().copied().collect();
        Path { dof: self.dof, data }
    }

    /// Configuration at fractional time `t + s`, `s` in `[0, 1]`.
    pub fn interpolate(&self, t: usize, s: f64, out: &mut [f64]) {
        let (a, b) = (self.config(t), self.config(t + 1));
        for i in 0..self.dof {
            out[i] = a[i] + s * (b[i] - a[i]);
        }
    }
}

/// A hand-placed via point used to build initial guesses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub config: Configuration,
    #[serde(default)]
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Obstacle {
    Circle { center: Point, radius: f64 },
    Rect { min: Point, max: Point },
}

impl Obstacle {
    fn validate(&self) -> Result<()> {
        match *self {
            Obstacle::Circle { center, radius } => {
                if !(radius > 0.0) || !center.iter().all(|v| v.is_finite()) {
                    return Err(Error::Input(format!("bad circle obstacle {self:?}")));
                }
            }
            Obstacle::Rect { min, max } => {
                if !(min[0] < max[0] && min[1] < max[1]) {
                    return Err(Error::Input(format!("rectangle corners not ordered: {self:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn point_distance(&self, p: Point) -> f64 {
        match *self {
            Obstacle::Circle { center, radius } => shapes::point_circle(p, center, radius),
            Obstacle::Rect { min, max } => shapes::point_rect(p, min, max),
        }
    }

    pub fn segment_distance(&self, a: Point, b: Point) -> f64 {
        match *self {
            Obstacle::Circle { center, radius } => shapes::segment_circle(a, b, center, radius),
            Obstacle::Rect { min, max } => shapes::segment_rect(a, b, min, max),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Base2d,
    Arm,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Robot {
    /// Disc footprint centred at `(x, y)`; `theta` does not affect collision.
    Base2d { footprint_radius: f64 },
    /// Revolute chain anchored at `base`; links are segments of thickness
    /// `2 * link_radius`.
    Arm {
        link_lengths: Vec<f64>,
        base: Point,
        link_radius: f64,
    },
}

/// An immutable planning scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "EnvironmentDoc", try_from = "EnvironmentDoc")]
pub struct Environment {
    id: String,
    robot: Robot,
    obstacles: Vec<Obstacle>,
    joint_limits: Vec<[f64; 2]>,
    clearance: f64,
}

/// On-disk JSON layout of an [`Environment`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvironmentDoc {
    pub id: String,
    pub kind: EnvKind,
    pub dof: usize,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    pub joint_limits: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_lengths: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_footprint_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm_base: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_radius: Option<f64>,
    #[serde(default = "default_clearance")]
    pub clearance: f64,
}

fn default_clearance() -> f64 {
    DEFAULT_CLEARANCE
}

impl TryFrom<EnvironmentDoc> for Environment {
    type Error = Error;

    fn try_from(doc: EnvironmentDoc) -> Result<Self> {
        let robot = match doc.kind {
            EnvKind::Base2d => {
                if doc.dof != 3 {
                    return Err(Error::Input(format!("base2d must have dof 3, got {}", doc.dof)));
                }
                Robot::Base2d {
                    footprint_radius: doc.base_footprint_radius.ok_or_else(|| {
                        Error::Input("base2d environment needs base_footprint_radius".into())
                    })?,
                }
            }
            EnvKind::Arm => {
                let link_lengths = doc
                    .link_lengths
                    .ok_or_else(|| Error::Input("arm environment needs link_lengths".into()))?;
                check_dim(doc.dof, link_lengths.len())?;
                Robot::Arm {
                    link_lengths,
                    base: doc.arm_base.unwrap_or([0.0, 0.0]),
                    link_radius: doc.link_radius.unwrap_or(0.0),
                }
            }
        };
        Environment::new(doc.id, robot, doc.obstacles, doc.joint_limits)?.with_clearance(doc.clearance)
    }
}

impl From<Environment> for EnvironmentDoc {
    fn from(env: Environment) -> Self {
        let dof = env.dof();
        let mut doc = EnvironmentDoc {
            id: env.id,
            kind: EnvKind::Base2d,
            dof,
            obstacles: env.obstacles,
            joint_limits: env.joint_limits,
            link_lengths: None,
            base_footprint_radius: None,
            arm_base: None,
            link_radius: None,
            clearance: env.clearance,
        };
        match env.robot {
            Robot::Base2d { footprint_radius } => doc.base_footprint_radius = Some(footprint_radius),
            Robot::Arm {
                link_lengths,
                base,
                link_radius,
            } => {
                doc.kind = EnvKind::Arm;
                doc.link_lengths = Some(link_lengths);
                doc.arm_base = Some(base);
                doc.link_radius = Some(link_radius);
            }
        }
        doc
    }
}

impl Environment {
    pub fn new(
        id: impl Into<String>,
        robot: Robot,
        obstacles: Vec<Obstacle>,
        joint_limits: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let dof = match &robot {
            Robot::Base2d { footprint_radius } => {
                if !(*footprint_radius >= 0.0) {
                    return Err(Error::Input("footprint radius must be non-negative".into()));
                }
                3
            }
            Robot::Arm {
                link_lengths,
                link_radius,
                ..
            } => {
                if link_lengths.is_empty() || link_lengths.iter().any(|l| !(*l > 0.0)) {
                    return Err(Error::Input("link lengths must be strictly positive".into()));
                }
                if !(*link_radius >= 0.0) {
                    return Err(Error::Input("link radius must be non-negative".into()));
                }
                link_lengths.len()
            }
        };
        check_dim(dof, joint_limits.len())?;
        if joint_limits.iter().any(|[lo, hi]| !(lo <= hi)) {
            return Err(Error::Input("joint limits must satisfy lo <= hi".into()));
        }
        for o in &obstacles {
            o.validate()?;
        }
        Ok(Self {
            id: id.into(),
            robot,
            obstacles,
            joint_limits,
            clearance: DEFAULT_CLEARANCE,
        })
    }

    pub fn base2d(
        id: impl Into<String>,
        footprint_radius: f64,
        joint_limits: Vec<[f64; 2]>,
        obstacles: Vec<Obstacle>,
    ) -> Result<Self> {
        Self::new(id, Robot::Base2d { footprint_radius }, obstacles, joint_limits)
    }

    pub fn arm(
        id: impl Into<String>,
        link_lengths: Vec<f64>,
        joint_limits: Vec<[f64; 2]>,
        obstacles: Vec<Obstacle>,
    ) -> Result<Self> {
        let robot = Robot::Arm {
            link_lengths,
            base: [0.0, 0.0],
            link_radius: 0.0,
        };
        Self::new(id, robot, obstacles, joint_limits)
    }

    pub fn with_clearance(mut self, clearance: f64) -> Result<Self> {
        if !(clearance >= 0.0) {
            return Err(Error::Input("clearance must be non-negative".into()));
        }
        self.clearance = clearance;
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("environment serializes")
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind(&self) -> EnvKind {
        match self.robot {
            Robot::Base2d { .. } => EnvKind::Base2d,
            Robot::Arm { .. } => EnvKind::Arm,
        }
    }

    pub fn robot(&self) -> &Robot {
        &self.robot
    }

    pub fn dof(&self) -> usize {
        self.joint_limits.len()
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn joint_limits(&self) -> &[[f64; 2]] {
        &self.joint_limits
    }

    pub fn clearance(&self) -> f64 {
        self.clearance
    }

    /// Total reach of the arm, `None` for a base.
    pub fn reach(&self) -> Option<f64> {
        match &self.robot {
            Robot::Arm { link_lengths, .. } => Some(link_lengths.iter().sum()),
            Robot::Base2d { .. } => None,
        }
    }

    pub fn within_limits(&self, q: &[f64], tol: f64) -> bool {
        q.iter()
            .zip(&self.joint_limits)
            .all(|(v, [lo, hi])| *v >= lo - tol && *v <= hi + tol)
    }

    /// Number of body/obstacle pairs reported by [`Environment::pair_distances`].
    pub fn pair_count(&self) -> usize {
        let bodies = match &self.robot {
            Robot::Base2d { .. } => 1,
            Robot::Arm { link_lengths, .. } => link_lengths.len(),
        };
        bodies * self.obstacles.len()
    }

    /// Clearance-adjusted signed distance of every body/obstacle pair, body
    /// major. `q` must have length `dof`; this is the unchecked hot path used
    /// by the optimizer.
    pub fn pair_distances(&self, q: &[f64], out: &mut Vec<f64>) {
        out.clear();
        match &self.robot {
            Robot::Base2d { footprint_radius } => {
                let margin = footprint_radius + self.clearance;
                out.extend(self.obstacles.iter().map(|o| o.point_distance([q[0], q[1]]) - margin));
            }
            Robot::Arm {
                link_lengths,
                base,
                link_radius,
            } => {
                let margin = link_radius + self.clearance;
                let mut a = *base;
                let mut angle = 0.0;
                for (l, qi) in link_lengths.iter().zip(q) {
                    angle += qi;
                    let b = [a[0] + l * angle.cos(), a[1] + l * angle.sin()];
                    out.extend(self.obstacles.iter().map(|o| o.segment_distance(a, b) - margin));
                    a = b;
                }
            }
        }
    }

    /// For a mobile base, the clearance-adjusted distance of every obstacle to
    /// the capsule swept by the footprint moving straight from `a` to `b`.
    /// Returns false (leaving `out` empty) for an arm.
    pub fn sweep_distances(&self, a: &[f64], b: &[f64], out: &mut Vec<f64>) -> bool {
        out.clear();
        match &self.robot {
            Robot::Base2d { footprint_radius } => {
                let margin = footprint_radius + self.clearance;
                out.extend(
                    self.obstacles
                        .iter()
                        .map(|o| o.segment_distance([a[0], a[1]], [b[0], b[1]]) - margin),
                );
                true
            }
            Robot::Arm { .. } => false,
        }
    }

    /// For an arm, the clearance-adjusted pair distances at `(1 - s) a + s b`
    /// minus a bound on how far each link can travel while the joints cover
    /// the fraction `half_width` of the motion `b - a` in either direction.
    /// Nonnegative values certify the stretch `[s - half_width, s +
    /// half_width]`. `scratch` holds `dof` values. Returns false (leaving
    /// `out` empty) for a base.
    pub fn motion_distances(&self, a: &[f64], b: &[f64], s: f64, half_width: f64, scratch: &mut [f64], out: &mut Vec<f64>) -> bool {
        let Robot::Arm { link_lengths, .. } = &self.robot else {
            out.clear();
            return false;
        };
        for ((c, x), y) in scratch.iter_mut().zip(a).zip(b) {
            *c = x + s * (y - x);
        }
        self.pair_distances(scratch, out);
        let per_body = self.obstacles.len();
        for j in 0..link_lengths.len() {
            // a point on link j moves at most |p - joint_i| <= l_i + .. + l_j
            // per radian of joint i
            let mut arm = 0.0;
            let mut travel = 0.0;
            for i in (0..=j).rev() {
                arm += link_lengths[i];
                travel += arm * smooth_abs(b[i] - a[i]);
            }
            for d in &mut out[j * per_body..(j + 1) * per_body] {
                *d -= half_width * travel;
            }
        }
        true
    }

    /// Clearance-adjusted distance of a workspace point to the nearest obstacle.
    pub fn point_clearance(&self, p: Point) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.point_distance(p) - self.clearance)
            .fold(NO_OBSTACLE, f64::min)
    }
}

/// `|x|` rounded off below `1e-3` so its second differences stay bounded.
fn smooth_abs(x: f64) -> f64 {
    x.hypot(1e-3)
}

/// Minimum over robot bodies and obstacles of distance minus clearance;
/// negative means the clearance margin is violated. [`NO_OBSTACLE`] for an
/// empty scene.
pub fn signed_distance(env: &Environment, q: &[f64]) -> Result<f64> {
    check_dim(env.dof(), q.len())?;
    if !q.iter().all(|v| v.is_finite()) {
        return Err(Error::Input("configuration has non-finite entries".into()));
    }
    let mut buf = Vec::with_capacity(env.pair_count());
    env.pair_distances(q, &mut buf);
    Ok(buf.into_iter().fold(NO_OBSTACLE, f64::min))
}

/// Linear interpolation from `q_init` to `q_goal` with `steps + 1` samples,
/// optionally through `via` waypoints. Steps are shared between segments in
/// proportion to their chord length, at least one each, ties going to the
/// earlier segment.
pub fn straight_line_path(
    q_init: &[f64],
    q_goal: &[f64],
    steps: usize,
    via: &[Waypoint],
) -> Result<Path> {
    let dof = q_init.len();
    check_dim(dof, q_goal.len())?;
    for w in via {
        check_dim(dof, w.config.dim())?;
    }
    if steps < via.len() + 1 {
        return Err(Error::Input(format!(
            "{steps} steps cannot cover {} segments",
            via.len() + 1
        )));
    }
    let mut knots: Vec<&[f64]> = Vec::with_capacity(via.len() + 2);
    knots.push(q_init);
    knots.extend(via.iter().map(|w| w.config.as_slice()));
    knots.push(q_goal);

    let chords: Vec<f64> = knots
        .windows(2)
        .map(|w| w[0].iter().zip(w[1]).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt())
        .collect();
    let counts = apportion_steps(&chords, steps);

    let mut data = Vec::with_capacity(dof * (steps + 1));
    data.extend_from_slice(q_init);
    for (seg, &n) in counts.iter().enumerate() {
        let (a, b) = (knots[seg], knots[seg + 1]);
        for j in 1..n {
            let s = j as f64 / n as f64;
            data.extend(a.iter().zip(b).map(|(x, y)| x + s * (y - x)));
        }
        data.extend_from_slice(b);
    }
    Path::from_flat(dof, data)
}

fn apportion_steps(chords: &[f64], steps: usize) -> Vec<usize> {
    let total: f64 = chords.iter().sum();
    let ideal: Vec<f64> = if total > 0.0 {
        chords.iter().map(|c| steps as f64 * c / total).collect()
    } else {
        vec![steps as f64 / chords.len() as f64; chords.len()]
    };
    let mut counts: Vec<usize> = ideal.iter().map(|v| (v.floor() as usize).max(1)).collect();
    let mut assigned: usize = counts.iter().sum();
    while assigned < steps {
        // largest shortfall first; `>` keeps the earlier segment on ties
        let mut best = 0;
        for i in 1..counts.len() {
            if ideal[i] - counts[i] as f64 > ideal[best] - counts[best] as f64 {
                best = i;
            }
        }
        counts[best] += 1;
        assigned += 1;
    }
    while assigned > steps {
        let mut best = None;
        for i in 0..counts.len() {
            if counts[i] > 1 {
                let surplus = counts[i] as f64 - ideal[i];
                if best.is_none_or(|b: usize| surplus > counts[b] as f64 - ideal[b]) {
                    best = Some(i);
                }
            }
        }
        let b = best.expect("steps >= segments");
        counts[b] -= 1;
        assigned -= 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle_scene() -> Environment {
        Environment::base2d(
            "disc",
            0.1,
            vec![[-5.0, 5.0], [-5.0, 5.0], [-4.0, 4.0]],
            vec![Obstacle::Circle {
                center: [0.0, 0.0],
                radius: 0.5,
            }],
        )
        .unwrap()
        .with_clearance(0.0)
        .unwrap()
    }

    #[test]
    fn empty_scene_reports_sentinel() {
        let env = Environment::base2d("empty", 0.1, vec![[-1.0, 1.0]; 3], vec![]).unwrap();
        assert_eq!(signed_distance(&env, &[0.3, 0.2, 0.0]).unwrap(), NO_OBSTACLE);
    }

    #[test]
    fn disc_against_circle() {
        let env = circle_scene();
        assert!((signed_distance(&env, &[1.0, 0.0, 0.0]).unwrap() - 0.4).abs() < 1e-12);
        assert!((signed_distance(&env, &[0.3, 0.0, 0.0]).unwrap() + 0.3).abs() < 1e-12);
    }

    #[test]
    fn disc_distance_agrees_with_point_sampling() {
        // distance between the footprint disc and the obstacle disc, by
        // brute force over both boundaries
        let env = circle_scene();
        let q = [0.9, 0.4, 0.3];
        let n = 2000;
        let mut best = f64::INFINITY;
        for i in 0..n {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            let p = [q[0] + 0.1 * a.cos(), q[1] + 0.1 * a.sin()];
            for j in 0..n {
                let b = j as f64 / n as f64 * std::f64::consts::TAU;
                let o = [0.5 * b.cos(), 0.5 * b.sin()];
                best = best.min((p[0] - o[0]).hypot(p[1] - o[1]));
            }
        }
        let sd = signed_distance(&env, &q).unwrap();
        assert!((sd - best).abs() < 1e-4, "{sd} vs {best}");
    }

    #[test]
    fn clearance_is_subtracted() {
        let env = circle_scene().with_clearance(0.02).unwrap();
        assert!((signed_distance(&env, &[1.0, 0.0, 0.0]).unwrap() - 0.38).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        assert!(matches!(
            signed_distance(&circle_scene(), &[0.0, 0.0]),
            Err(Error::Dimension { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn straight_line_examples() {
        let p = straight_line_path(&[0.0], &[1.0], 4, &[]).unwrap();
        assert_eq!(p.as_flat(), &[0.0, 0.25, 0.5, 0.75, 1.0]);

        let z = [0.3, -0.2];
        let p = straight_line_path(&z, &z, 7, &[]).unwrap();
        assert!(p.configs().all(|c| c == z));

        let via = [Waypoint {
            config: vec![1.0, 1.0].into(),
            label: "up".into(),
        }];
        let p = straight_line_path(&[0.0, 0.0], &[2.0, 0.0], 4, &via).unwrap();
        assert_eq!(p.config(2), &[1.0, 1.0]);
        assert_eq!(p.config(1), &[0.5, 0.5]);
        assert_eq!(p.last(), &[2.0, 0.0]);
    }

    #[test]
    fn apportioning_rules() {
        assert_eq!(apportion_steps(&[1.0, 1.0], 5), vec![3, 2]);
        assert_eq!(apportion_steps(&[3.0, 1.0], 8), vec![6, 2]);
        assert_eq!(apportion_steps(&[100.0, 0.0], 4), vec![3, 1]);
        assert_eq!(apportion_steps(&[0.0, 0.0, 0.0], 3), vec![1, 1, 1]);
    }

    #[test]
    fn environment_json_round_trip() {
        let env = circle_scene();
        let back = Environment::from_json(&env.to_json()).unwrap();
        assert_eq!(env, back);
        let bad = r#"{"id":"x","kind":"arm","dof":2,"joint_limits":[[-1,1],[-1,1]],"link_lengths":[1.0,-1.0]}"#;
        assert!(Environment::from_json(bad).is_err());
    }
}
