//! Moving a stored skill toward an unseen goal behavior by pseudo-inverse
//! gradient steps `a <- a + lambda * J(a)^+ (b* - b)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{evaluate, Action, Behavior, EnvConfig};
use crate::error::{Error, Result};
use crate::repertoire::Repertoire;
use crate::surrogate::{jacobian_analytic, jacobian_fd, Jacobian, Surrogate, BEHAVIOR_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    NearestNeighbor,
    LocalLinearization,
    ModelBased,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [
        Strategy::NearestNeighbor,
        Strategy::LocalLinearization,
        Strategy::ModelBased,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::NearestNeighbor => "nearest_neighbor",
            Strategy::LocalLinearization => "local_linearization",
            Strategy::ModelBased => "model_based",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy '{s}'")))
    }
}

/// How the model-based strategy differentiates the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMethod {
    Analytic,
    ForwardDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub strategy: Strategy,
    pub step_size: f64,
    pub max_steps: usize,
    pub t_dist: f64,
    pub k: usize,
    pub ridge_epsilon: f64,
    pub sv_cutoff: f64,
    pub jacobian: JacobianMethod,
    pub fd_step: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            strategy: Strategy::ModelBased,
            step_size: 0.1,
            max_steps: 10,
            t_dist: 0.02,
            k: 5,
            ridge_epsilon: 1e-6,
            sv_cutoff: 1e-8,
            jacobian: JacobianMethod::Analytic,
            fd_step: 1e-4,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0) {
            return Err(Error::Config("step_size must be non-negative".into()));
        }
        if self.k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.t_dist >= 0.0) || !(self.ridge_epsilon >= 0.0) || !(self.sv_cutoff >= 0.0) {
            return Err(Error::Config("t_dist, ridge_epsilon and sv_cutoff must be non-negative".into()));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::Config("fd_step must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptResult {
    pub final_action: Action,
    pub final_behavior: Behavior,
    pub steps_executed: usize,
    pub behavioral_error: f64,
    /// Evaluated `(action, behavior)` after each step.
    pub trajectory: Vec<(Action, Behavior)>,
}

/// Adapts toward `goal` in `env`. `model` is required for the model-based
/// strategy and ignored otherwise.
pub fn adapt(
    rep: &Repertoire,
    env: &EnvConfig,
    model: Option<&Surrogate>,
    goal: &Behavior,
    cfg: &AdaptConfig,
) -> Result<AdaptResult> {
    adapt_with(rep, model, goal, cfg, |a| evaluate(a, env).map(|(b, _)| b))
}

/// [`adapt`] against an arbitrary behavior function.
pub fn adapt_with<F>(
    rep: &Repertoire,
    model: Option<&Surrogate>,
    goal: &Behavior,
    cfg: &AdaptConfig,
    mut behave: F,
) -> Result<AdaptResult>
where
    F: FnMut(&Action) -> Result<Behavior>,
{
    cfg.validate()?;
    if cfg.strategy == Strategy::ModelBased && model.is_none() {
        return Err(Error::Config("model_based adaptation needs a trained model".into()));
    }
    let start = rep.knn(goal, 1)?[0];
    let mut action = start.action.clone();
    let mut behavior = start.behavior;
    let mut best = (action.clone(), behavior, behavior.distance(goal));
    let mut trajectory = Vec::new();

    if cfg.strategy != Strategy::NearestNeighbor {
        while best.2 > cfg.t_dist && trajectory.len() < cfg.max_steps {
            let jac = match cfg.strategy {
                Strategy::LocalLinearization => {
                    jacobian_local_linearization(rep, &action, &behavior, cfg.k, cfg.ridge_epsilon)
                }
                _ => {
                    let m = model.expect("checked above");
                    match cfg.jacobian {
                        JacobianMethod::Analytic => jacobian_analytic(&m.net, &action, &m.norm)?,
                        JacobianMethod::ForwardDifference => jacobian_fd(&m.net, &action, &m.norm, cfg.fd_step)?,
                    }
                }
            };
            let pinv = pseudo_inverse(&jac.to_matrix(), cfg.sv_cutoff);
            let residual = DVector::from_row_slice(&[goal.x() - behavior.x(), goal.y() - behavior.y()]);
            let delta = pinv * residual;
            for (g, d) in action.0.iter_mut().zip(delta.iter()) {
                *g += cfg.step_size * d;
            }
            action.clip();
            behavior = behave(&action)?;
            trajectory.push((action.clone(), behavior));
            let err = behavior.distance(goal);
            if err < best.2 {
                best = (action.clone(), behavior, err);
            }
            if err <= cfg.t_dist {
                break;
            }
        }
    }

    Ok(AdaptResult {
        final_action: best.0,
        final_behavior: best.1,
        steps_executed: trajectory.len(),
        behavioral_error: best.2,
        trajectory,
    })
}

/// Least-squares Jacobian `B G^T (G G^T + eps I)^-1` from the `k` skills
/// nearest to `action` in action space.
pub fn jacobian_local_linearization(
    rep: &Repertoire,
    action: &Action,
    behavior: &Behavior,
    k: usize,
    ridge_epsilon: f64,
) -> Jacobian {
    let n = action.len();
    let mut order: Vec<(f64, usize)> = rep
        .iter()
        .enumerate()
        .map(|(i, s)| (dist_sq(s.action.genes(), action.genes()), i))
        .collect();
    let k = k.min(order.len());
    if k == 0 {
        return Jacobian::zeros(BEHAVIOR_DIM, n);
    }
    order.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("finite distances"));
    order.truncate(k);
    order.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));

    let mut g = DMatrix::zeros(n, k);
    let mut b = DMatrix::zeros(BEHAVIOR_DIM, k);
    for (col, &(_, i)) in order.iter().enumerate() {
        let s = &rep.skills()[i];
        for r in 0..n {
            g[(r, col)] = s.action.genes()[r] - action.genes()[r];
        }
        b[(0, col)] = s.behavior.x() - behavior.x();
        b[(1, col)] = s.behavior.y() - behavior.y();
    }
    let gram = &g * g.transpose() + DMatrix::identity(n, n) * ridge_epsilon;
    let inv = gram
        .clone()
        .try_inverse()
        .unwrap_or_else(|| pseudo_inverse(&gram, 1e-15));
    Jacobian::from_matrix(&(b * g.transpose() * inv))
}

/// Moore-Penrose pseudo-inverse by SVD; singular values at or below
/// `sv_cutoff` times the largest are dropped.
pub fn pseudo_inverse(m: &DMatrix<f64>, sv_cutoff: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    let svd = m.clone().svd(true, true);
    let largest = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(cols, rows);
    if largest == 0.0 {
        return out;
    }
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > sv_cutoff * largest {
            out += v_t.row(i).transpose() * u.column(i).transpose() / s;
        }
    }
    out
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Rect;
    use crate::repertoire::Skill;
    use crate::surrogate::{ModelConfig, Normalizer, SurrogateNet};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rep_of(skills: Vec<(Vec<f64>, [f64; 2])>) -> Repertoire {
        let mut rep = Repertoire::new(5, 0.02).unwrap();
        for (a, b) in skills {
            rep.push_unchecked(Skill::new(Action(a), Behavior(b), 1.0));
        }
        rep
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn assert_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        let err = (a - b).abs().max();
        assert!(err <= tol, "max abs difference {err}");
    }

    #[test]
    fn pseudo_inverse_of_identity_and_zero() {
        let id = DMatrix::<f64>::identity(4, 4);
        assert_close(&pseudo_inverse(&id, 1e-8), &id, 1e-15);
        let z = DMatrix::<f64>::zeros(2, 9);
        assert_eq!(pseudo_inverse(&z, 1e-8), DMatrix::<f64>::zeros(9, 2));
    }

    #[test]
    fn penrose_conditions_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (r, c) in [(2, 9), (2, 15), (9, 2), (5, 5)] {
            for _ in 0..20 {
                let m = random_matrix(r, c, &mut rng);
                let p = pseudo_inverse(&m, 1e-8);
                assert_close(&(&m * &p * &m), &m, 1e-10);
                assert_close(&(&p * &m * &p), &p, 1e-10);
                let mp = &m * &p;
                assert_close(&mp.transpose(), &mp, 1e-10);
                let pm = &p * &m;
                assert_close(&pm.transpose(), &pm, 1e-10);
            }
        }
    }

    #[test]
    fn cutoff_drops_tiny_singular_values() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-12]);
        let p = pseudo_inverse(&m, 1e-8);
        assert_close(&p, &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn local_linearization_recovers_a_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 9;
        let m = random_matrix(2, n, &mut rng);
        let skills = (0..40)
            .map(|_| {
                let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let b = &m * DVector::from_row_slice(&a);
                (a, [b[0], b[1]])
            })
            .collect();
        let rep = rep_of(skills);
        let a0 = Action(vec![0.1; n]);
        let b0 = &m * DVector::from_row_slice(a0.genes());
        let j = jacobian_local_linearization(&rep, &a0, &Behavior([b0[0], b0[1]]), 20, 1e-10);
        assert_close(&j.to_matrix(), &m, 1e-6);
    }

    #[test]
    fn degenerate_neighborhood_gives_zero_jacobian() {
        let rep = rep_of(vec![(vec![0.2, 0.3], [0.5, 0.5]); 3]);
        let j = jacobian_local_linearization(&rep, &Action(vec![0.2, 0.3]), &Behavior([0.1, 0.1]), 3, 1e-6);
        assert!(j.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_offset_neighbor() {
        let (g, v, eps) = (0.1, [0.3, -0.2], 1e-6);
        let rep = rep_of(vec![(vec![g, 0.0, 0.0], [0.5 + v[0], 0.5 + v[1]])]);
        let j = jacobian_local_linearization(&rep, &Action(vec![0.0; 3]), &Behavior([0.5, 0.5]), 1, eps);
        let scale = g / (g * g + eps);
        for r in 0..2 {
            assert!((j.get(r, 0) - v[r] * scale).abs() < 1e-9);
            assert_eq!(j.get(r, 1), 0.0);
            assert_eq!(j.get(r, 2), 0.0);
        }
    }

    fn identity_rep() -> Repertoire {
        rep_of(vec![(vec![0.0, 0.0, 0.0], [0.0, 0.0]), (vec![0.5, -0.5, 0.0], [0.5, -0.5])])
    }

    fn identity_behavior(a: &Action) -> Result<Behavior> {
        Ok(Behavior([a.genes()[0], a.genes()[1]]))
    }

    #[test]
    fn goal_on_a_stored_behavior_needs_no_steps() {
        let rep = identity_rep();
        for strategy in [Strategy::NearestNeighbor, Strategy::LocalLinearization] {
            let cfg = AdaptConfig { strategy, ..AdaptConfig::default() };
            let r = adapt_with(&rep, None, &Behavior([0.5, -0.5]), &cfg, identity_behavior).unwrap();
            assert_eq!(r.steps_executed, 0);
            assert_eq!(r.behavioral_error, 0.0);
        }
    }

    #[test]
    fn nearest_neighbor_takes_no_steps() {
        let cfg = AdaptConfig { strategy: Strategy::NearestNeighbor, ..AdaptConfig::default() };
        let r = adapt_with(&identity_rep(), None, &Behavior([0.3, 0.4]), &cfg, identity_behavior).unwrap();
        assert_eq!(r.steps_executed, 0);
        assert!((r.behavioral_error - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_step_size_keeps_the_start() {
        let cfg = AdaptConfig { strategy: Strategy::LocalLinearization, step_size: 0.0, ..AdaptConfig::default() };
        let r = adapt_with(&identity_rep(), None, &Behavior([0.3, 0.4]), &cfg, identity_behavior).unwrap();
        assert_eq!(r.steps_executed, 10);
        assert_eq!(r.final_action, Action(vec![0.0; 3]));
        assert!((r.behavioral_error - 0.5).abs() < 1e-15);
    }

    #[test]
    fn model_based_requires_a_model() {
        let cfg = AdaptConfig::default();
        let err = adapt_with(&identity_rep(), None, &Behavior([0.3, 0.4]), &cfg, identity_behavior).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let empty = Repertoire::new(5, 0.02).unwrap();
        let cfg = AdaptConfig { strategy: Strategy::NearestNeighbor, ..cfg };
        assert_eq!(
            adapt_with(&empty, None, &Behavior([0.0, 0.0]), &cfg, identity_behavior).unwrap_err(),
            Error::EmptyRepertoire
        );
    }

    #[test]
    fn trained_model_solves_the_identity_task() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bounds = Rect::new(-1.0, -1.0, 1.0, 1.0);
        let mut data = Repertoire::new(5, 0.02).unwrap();
        for _ in 0..600 {
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-0.8..0.8)).collect();
            data.push_unchecked(Skill::new(Action(a.clone()), Behavior([a[0], a[1]]), 1.0));
        }
        let cfg = ModelConfig { learning_rate: 3e-3, ..ModelConfig::default() };
        let mut model = Surrogate::new(3, bounds, &cfg, &mut rng);
        for _ in 0..60 {
            model.train(&data, &cfg, &mut rng).unwrap();
        }
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = data
            .iter()
            .map(|s| (s.action.0.clone(), model.norm.target(&s.behavior, s.quality).to_vec()))
            .collect();
        let mse = model.net.mse(&pairs).unwrap();
        assert!(mse < 1e-4, "training mse {mse}");

        let cfg = AdaptConfig { step_size: 1.0, ..AdaptConfig::default() };
        let start = rep_of(vec![(vec![0.0, 0.0, 0.0], [0.0, 0.0])]);
        let goal = Behavior([0.3, 0.4]);
        let r = adapt_with(&start, Some(&model), &goal, &cfg, identity_behavior).unwrap();
        assert!(r.behavioral_error <= 0.02, "error {}", r.behavioral_error);
        assert!(r.steps_executed <= 10);

        let fd = AdaptConfig { jacobian: JacobianMethod::ForwardDifference, ..cfg };
        let r_fd = adapt_with(&start, Some(&model), &goal, &fd, identity_behavior).unwrap();
        assert!(r_fd.behavioral_error <= 0.02);
    }

    #[test]
    fn zero_network_leaves_the_action_unchanged() {
        let net = SurrogateNet::zeros(3, 8, 3);
        let model = Surrogate::from_net(net, Normalizer::new(Rect::new(-1.0, -1.0, 1.0, 1.0)));
        let r = adapt_with(&identity_rep(), Some(&model), &Behavior([0.3, 0.4]), &AdaptConfig::default(), identity_behavior)
            .unwrap();
        assert_eq!(r.final_action, Action(vec![0.0; 3]));
        assert_eq!(r.steps_executed, 10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn steps_are_bounded_and_actions_stay_legal(
            gx in -1.0f64..1.0, gy in -1.0f64..1.0, steps in 0usize..12, lambda in 0.0f64..3.0,
        ) {
            let cfg = AdaptConfig {
                strategy: Strategy::LocalLinearization,
                step_size: lambda,
                max_steps: steps,
                k: 2,
                ..AdaptConfig::default()
            };
            let rep = rep_of(vec![
                (vec![0.0, 0.0, 0.0], [0.0, 0.0]),
                (vec![0.5, -0.5, 0.1], [0.5, -0.5]),
                (vec![-0.4, 0.2, 0.9], [-0.4, 0.2]),
            ]);
            let goal = Behavior([gx, gy]);
            let mut calls = 0;
            let r = adapt_with(&rep, None, &goal, &cfg, |a| { calls += 1; identity_behavior(a) }).unwrap();
            prop_assert!(r.steps_executed <= steps);
            prop_assert_eq!(calls, r.steps_executed);
            prop_assert_eq!(r.behavioral_error, r.final_behavior.distance(&goal));
            for (a, _) in &r.trajectory {
                prop_assert!(a.genes().iter().all(|g| (-1.0..=1.0).contains(g)));
            }
            let nn = rep.knn(&goal, 1).unwrap()[0].behavior.distance(&goal);
            prop_assert!(r.behavioral_error <= nn);
        }
    }
}
