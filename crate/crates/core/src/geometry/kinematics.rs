use nalgebra::{Matrix2, Matrix2xX, Vector2};
use rand::Rng;

use super::shapes::Point;
use super::{Configuration, Environment, Robot};
use crate::error::{check_dim, Error, Result};

/// Joint positions of a planar arm. `joints[0]` is the arm base.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmPose {
    pub joints: Vec<Point>,
    pub tip: Point,
}

fn arm_params(env: &Environment) -> Result<(&[f64], Point)> {
    match env.robot() {
        Robot::Arm {
            link_lengths, base, ..
        } => Ok((link_lengths, *base)),
        Robot::Base2d { .. } => Err(Error::Input("kinematics requested for a mobile base".into())),
    }
}

pub fn forward_kinematics(env: &Environment, q: &[f64]) -> Result<ArmPose> {
    let (links, base) = arm_params(env)?;
    check_dim(links.len(), q.len())?;
    let mut joints = Vec::with_capacity(links.len());
    let mut p = base;
    let mut angle = 0.0;
    for (l, qi) in links.iter().zip(q) {
        joints.push(p);
        angle += qi;
        p = [p[0] + l * angle.cos(), p[1] + l * angle.sin()];
    }
    Ok(ArmPose { joints, tip: p })
}

pub(crate) fn tip_position(links: &[f64], base: Point, q: &[f64]) -> Point {
    let mut p = base;
    let mut angle = 0.0;
    for (l, qi) in links.iter().zip(q) {
        angle += qi;
        p[0] += l * angle.cos();
        p[1] += l * angle.sin();
    }
    p
}

fn jacobian(links: &[f64], q: &[f64]) -> Matrix2xX<f64> {
    let n = links.len();
    let mut angles = Vec::with_capacity(n);
    let mut acc = 0.0;
    for qi in q {
        acc += qi;
        angles.push(acc);
    }
    let mut jac = Matrix2xX::zeros(n);
    // column i sums the contributions of links i..n
    let (mut sx, mut sy) = (0.0, 0.0);
    for i in (0..n).rev() {
        sx -= links[i] * angles[i].sin();
        sy += links[i] * angles[i].cos();
        jac[(0, i)] = sx;
        jac[(1, i)] = sy;
    }
    jac
}

/// Jacobian of the tip position with respect to the joint angles.
pub fn tip_jacobian(env: &Environment, q: &[f64]) -> Result<Matrix2xX<f64>> {
    let (links, _) = arm_params(env)?;
    check_dim(links.len(), q.len())?;
    Ok(jacobian(links, q))
}

/// Tip position for an arm environment; the base robot has no tip and maps to
/// the origin. Dimensions are not checked.
pub(crate) fn tip_unchecked(env: &Environment, q: &[f64]) -> Point {
    match env.robot() {
        Robot::Arm {
            link_lengths, base, ..
        } => tip_position(link_lengths, *base, q),
        Robot::Base2d { .. } => [0.0, 0.0],
    }
}

pub(crate) fn jacobian_unchecked(env: &Environment, q: &[f64]) -> Matrix2xX<f64> {
    match env.robot() {
        Robot::Arm { link_lengths, .. } => jacobian(link_lengths, q),
        Robot::Base2d { .. } => Matrix2xX::zeros(q.len()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IkOptions {
    pub damping: f64,
    pub max_iters: usize,
    /// Accepted tip error, meters.
    pub tolerance: f64,
    /// Solutions closer than this in max-norm are merged, radians.
    pub dedup: f64,
    /// Random restarts allowed per requested solution.
    pub attempts_per_solution: usize,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            damping: 0.1,
            max_iters: 200,
            tolerance: 1e-3,
            dedup: 1e-2,
            attempts_per_solution: 4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IkSolutions {
    pub solutions: Vec<Configuration>,
    /// Target lies beyond the arm's reach.
    pub unreachable: bool,
}

pub fn inverse_kinematics<R: Rng + ?Sized>(
    env: &Environment,
    target: Point,
    count: usize,
    rng: &mut R,
) -> Result<IkSolutions> {
    inverse_kinematics_with(env, target, count, &IkOptions::default(), rng)
}

/// Damped least squares from random joint-limit-respecting seeds. Returns up
/// to `count` distinct solutions whose tip error is within tolerance.
pub fn inverse_kinematics_with<R: Rng + ?Sized>(
    env: &Environment,
    target: Point,
    count: usize,
    opts: &IkOptions,
    rng: &mut R,
) -> Result<IkSolutions> {
    let (links, base) = arm_params(env)?;
    if count == 0 {
        return Err(Error::Input("IK needs at least one requested solution".into()));
    }
    let reach: f64 = links.iter().sum();
    if (target[0] - base[0]).hypot(target[1] - base[1]) > reach {
        return Ok(IkSolutions {
            solutions: vec![],
            unreachable: true,
        });
    }
    let limits = env.joint_limits();
    let mut found: Vec<Configuration> = Vec::new();
    for _ in 0..count * opts.attempts_per_solution.max(1) {
        if found.len() >= count {
            break;
        }
        let mut q: Vec<f64> = limits
            .iter()
            .map(|[lo, hi]| lo + (hi - lo) * rng.random::<f64>())
            .collect();
        if let Some(err) = descend(links, base, limits, target, &mut q, opts) {
            if err <= opts.tolerance
                && !found.iter().any(|s| {
                    s.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) < opts.dedup
                })
            {
                found.push(q.into());
            }
        }
    }
    Ok(IkSolutions {
        solutions: found,
        unreachable: false,
    })
}

/// Runs the damped iteration in place and returns the final tip error.
fn descend(
    links: &[f64],
    base: Point,
    limits: &[[f64; 2]],
    target: Point,
    q: &mut [f64],
    opts: &IkOptions,
) -> Option<f64> {
    let error = |q: &[f64]| {
        let p = tip_position(links, base, q);
        Vector2::new(target[0] - p[0], target[1] - p[1])
    };
    let step = |q: &mut [f64], e: &Vector2<f64>, damping: f64| -> Option<()> {
        let jac = jacobian(links, q);
        let jjt = &jac * jac.transpose() + Matrix2::identity() * (damping * damping);
        let dq = jac.transpose() * jjt.try_inverse()? * e;
        for (i, (qi, [lo, hi])) in q.iter_mut().zip(limits).enumerate() {
            *qi = (*qi + dq[i]).clamp(*lo, *hi);
        }
        Some(())
    };

    let mut e = error(q);
    for _ in 0..opts.max_iters {
        if e.norm() < 1e-12 {
            break;
        }
        step(q, &e, opts.damping)?;
        e = error(q);
    }
    // Near singular targets the damped step crawls; finish with nearly
    // undamped steps, kept only while they reduce the error.
    let mut trial = q.to_vec();
    for _ in 0..60 {
        if e.norm() < 1e-12 {
            break;
        }
        trial.copy_from_slice(q);
        step(&mut trial, &e, 1e-6)?;
        let e_trial = error(&trial);
        if e_trial.norm() >= e.norm() {
            break;
        }
        q.copy_from_slice(&trial);
        e = e_trial;
    }
    e.norm().is_finite().then_some(e.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn two_link() -> Environment {
        Environment::arm("two", vec![1.0, 1.0], vec![[-PI, PI]; 2], vec![]).unwrap()
    }

    fn close(a: Point, b: Point, tol: f64) -> bool {
        (a[0] - b[0]).abs() < tol && (a[1] - b[1]).abs() < tol
    }

    #[test]
    fn fk_examples() {
        let env = Environment::arm("three", vec![1.0; 3], vec![[-PI, PI]; 3], vec![]).unwrap();
        assert!(close(forward_kinematics(&env, &[0.0; 3]).unwrap().tip, [3.0, 0.0], 1e-15));
        let env = two_link();
        assert!(close(forward_kinematics(&env, &[FRAC_PI_2, 0.0]).unwrap().tip, [0.0, 2.0], 1e-15));
        let pose = forward_kinematics(&env, &[FRAC_PI_2, -FRAC_PI_2]).unwrap();
        assert!(close(pose.tip, [1.0, 1.0], 1e-15));
        assert!(close(pose.joints[1], [0.0, 1.0], 1e-15));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let env = Environment::arm("four", vec![0.5, 0.4, 0.3, 0.2], vec![[-PI, PI]; 4], vec![]).unwrap();
        let q = [0.3, -0.7, 1.1, 0.4];
        let jac = tip_jacobian(&env, &q).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            let (mut qp, mut qm) = (q, q);
            qp[i] += h;
            qm[i] -= h;
            let (p, m) = (
                forward_kinematics(&env, &qp).unwrap().tip,
                forward_kinematics(&env, &qm).unwrap().tip,
            );
            assert!(((p[0] - m[0]) / (2.0 * h) - jac[(0, i)]).abs() < 1e-8);
            assert!(((p[1] - m[1]) / (2.0 * h) - jac[(1, i)]).abs() < 1e-8);
        }
    }

    /// Closed-form two-link IK with unit links: elbow-down and elbow-up.
    fn analytic_two_link(p: Point) -> [[f64; 2]; 2] {
        let c2 = (p[0] * p[0] + p[1] * p[1] - 2.0) / 2.0;
        let mut out = [[0.0; 2]; 2];
        for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
            let q2 = sign * c2.clamp(-1.0, 1.0).acos();
            let q1 = p[1].atan2(p[0]) - q2.sin().atan2(1.0 + q2.cos());
            out[k] = [q1, q2];
        }
        out
    }

    #[test]
    fn two_link_has_two_branches() {
        let env = two_link();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sols = inverse_kinematics(&env, [1.0, 1.0], 5, &mut rng).unwrap();
        assert!(!sols.unreachable);
        assert_eq!(sols.solutions.len(), 2);
        let oracle = analytic_two_link([1.0, 1.0]);
        for s in &sols.solutions {
            let tip = forward_kinematics(&env, s).unwrap().tip;
            assert!(close(tip, [1.0, 1.0], 1e-3));
            assert!(oracle
                .iter()
                .any(|o| (o[0] - s[0]).abs() < 1e-3 && (o[1] - s[1]).abs() < 1e-3));
        }
    }

    #[test]
    fn stretched_arm_is_unique() {
        let env = two_link();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sols = inverse_kinematics(&env, [2.0, 0.0], 5, &mut rng).unwrap();
        assert_eq!(sols.solutions.len(), 1);
        assert!(sols.solutions[0].iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn unreachable_target_is_flagged() {
        let env = two_link();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sols = inverse_kinematics(&env, [3.0, 0.0], 5, &mut rng).unwrap();
        assert!(sols.unreachable);
        assert!(sols.solutions.is_empty());
    }

    #[test]
    fn base_has_no_kinematics() {
        let env = Environment::base2d("b", 0.1, vec![[-1.0, 1.0]; 3], vec![]).unwrap();
        assert!(forward_kinematics(&env, &[0.0; 3]).is_err());
    }
}
