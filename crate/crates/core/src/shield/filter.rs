use std::collections::BTreeMap;

use crate::automaton::{Fsa, StateId};
use crate::product::FilterStatus;

use super::{
    disjunct_rule, filter_action, fsa_safe_set, select_goal, ActionBounds, BarrierFunction, ControlAffine,
    DisjunctRule, LyapunovGoal, QpInputs, ShieldError, ShieldParams,
};

/// Inputs to an action filter at one step.
#[derive(Debug, Clone, Copy)]
pub struct FilterContext<'a> {
    pub fsa: &'a Fsa,
    pub q: StateId,
    /// State in predicate space.
    pub s: &'a [f64],
    pub a_rl: &'a [f64],
    pub dynamics: &'a ControlAffine,
    /// Constraints that hold in every automaton state.
    pub user_barriers: &'a [BarrierFunction],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// Policy action actually used (zero when the policy is disabled).
    pub a_rl: Vec<f64>,
    pub a_cbf: Vec<f64>,
    pub a_clf: Vec<f64>,
    pub delta: f64,
    pub status: FilterStatus,
    pub h_labels: Vec<String>,
    pub h_values: Vec<f64>,
    pub goal: Option<Vec<f64>>,
}

impl FilterOutcome {
    pub fn total(&self) -> Vec<f64> {
        self.a_rl
            .iter()
            .zip(&self.a_cbf)
            .zip(&self.a_clf)
            .map(|((a, b), c)| a + b + c)
            .collect()
    }
}

/// Combines a policy action with safety and goal corrections.
pub trait ActionFilter: Send + Sync {
    fn name(&self) -> &str;
    fn uses_policy(&self) -> bool;
    fn barriers_enabled(&self) -> bool;
    fn goal_enabled(&self) -> bool;
    fn filter(&self, ctx: &FilterContext) -> Result<FilterOutcome, ShieldError>;
}

/// Applies the policy action unchanged.
#[derive(Debug, Clone, Default)]
pub struct Passthrough;

impl ActionFilter for Passthrough {
    fn name(&self) -> &str {
        "rl"
    }

    fn uses_policy(&self) -> bool {
        true
    }

    fn barriers_enabled(&self) -> bool {
        false
    }

    fn goal_enabled(&self) -> bool {
        false
    }

    fn filter(&self, ctx: &FilterContext) -> Result<FilterOutcome, ShieldError> {
        let m = ctx.a_rl.len();
        Ok(FilterOutcome {
            a_rl: ctx.a_rl.to_vec(),
            a_cbf: vec![0.0; m],
            a_clf: vec![0.0; m],
            delta: 0.0,
            status: FilterStatus::Inactive,
            h_labels: Vec::new(),
            h_values: Vec::new(),
            goal: None,
        })
    }
}

/// QP-based filter with barriers and/or a Lyapunov goal.
#[derive(Debug)]
pub struct QpFilter {
    name: String,
    policy: bool,
    barriers: bool,
    goal: bool,
    params: ShieldParams,
    rule: Box<dyn DisjunctRule>,
}

impl QpFilter {
    pub fn new(
        name: impl Into<String>,
        policy: bool,
        barriers: bool,
        goal: bool,
        params: &ShieldParams,
    ) -> Result<Self, ShieldError> {
        Ok(Self {
            name: name.into(),
            policy,
            barriers,
            goal,
            rule: disjunct_rule(&params.disjunct_rule)?,
            params: params.clone(),
        })
    }
}

impl ActionFilter for QpFilter {
    fn name(&self) -> &str {
        &self.name
    }

    fn uses_policy(&self) -> bool {
        self.policy
    }

    fn barriers_enabled(&self) -> bool {
        self.barriers
    }

    fn goal_enabled(&self) -> bool {
        self.goal
    }

    fn filter(&self, ctx: &FilterContext) -> Result<FilterOutcome, ShieldError> {
        let m = ctx.dynamics.action_dim();
        let a_rl = if self.policy { ctx.a_rl.to_vec() } else { vec![0.0; m] };
        let mut barriers = Vec::new();
        if self.barriers {
            barriers.extend_from_slice(ctx.user_barriers);
            barriers.extend(fsa_safe_set(ctx.fsa, ctx.q, ctx.s, self.rule.as_ref())?);
        }
        let goal = if self.goal && !ctx.fsa.is_final(ctx.q) && !ctx.fsa.is_trap(ctx.q) {
            match select_goal(ctx.fsa, ctx.q, ctx.s) {
                Ok(sel) => Some(LyapunovGoal { point: sel.point }),
                Err(ShieldError::NoFiniteGoal(_)) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let h_labels: Vec<String> = barriers.iter().map(|b| b.label.clone()).collect();
        if barriers.is_empty() && goal.is_none() {
            return Ok(FilterOutcome {
                a_rl,
                a_cbf: vec![0.0; m],
                a_clf: vec![0.0; m],
                delta: 0.0,
                status: FilterStatus::Inactive,
                h_labels,
                h_values: Vec::new(),
                goal: None,
            });
        }
        let zero = ActionBounds::zero(m);
        let inputs = QpInputs {
            s: ctx.s,
            a_rl: &a_rl,
            dynamics: ctx.dynamics,
            barriers: &barriers,
            goal: goal.as_ref(),
            cbf_bounds: if self.barriers { &self.params.cbf_bounds } else { &zero },
            clf_bounds: if self.goal { &self.params.clf_bounds } else { &zero },
        };
        let r = filter_action(&inputs, &self.params)?;
        Ok(FilterOutcome {
            a_rl,
            a_cbf: r.a_cbf,
            a_clf: r.a_clf,
            delta: r.delta,
            status: r.status,
            h_labels,
            h_values: r.barrier_values,
            goal: goal.map(|g| g.point),
        })
    }
}

pub type FilterFactory = Box<dyn Fn(&ShieldParams) -> Result<Box<dyn ActionFilter>, ShieldError> + Send + Sync>;

/// Filters registered by configuration name.
pub struct FilterRegistry {
    factories: BTreeMap<String, FilterFactory>,
}

impl Default for FilterRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

impl FilterRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// `rl`, `rl+cbf`, `rl+clf`, `rl+cbf+clf` and `clf+cbf`.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register("rl", Box::new(|_| Ok(Box::new(Passthrough))));
        for (name, policy, barriers, goal) in [
            ("rl+cbf", true, true, false),
            ("rl+clf", true, false, true),
            ("rl+cbf+clf", true, true, true),
            ("clf+cbf", false, true, true),
        ] {
            r.register(
                name,
                Box::new(move |p| Ok(Box::new(QpFilter::new(name, policy, barriers, goal, p)?))),
            );
        }
        r
    }

    pub fn register(&mut self, name: &str, factory: FilterFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, params: &ShieldParams) -> Result<Box<dyn ActionFilter>, ShieldError> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| ShieldError::UnknownConfiguration(name.into()))?;
        f(params)
    }

    /// The registered filter matching `name` in policy and goal use but with
    /// barriers switched on.
    pub fn build_with_barriers(
        &self,
        name: &str,
        params: &ShieldParams,
    ) -> Result<Box<dyn ActionFilter>, ShieldError> {
        let base = self.build(name, params)?;
        if base.barriers_enabled() {
            return Ok(base);
        }
        for other in self.names() {
            let f = self.build(other, params)?;
            if f.barriers_enabled() && f.uses_policy() == base.uses_policy() && f.goal_enabled() == base.goal_enabled() {
                return Ok(f);
            }
        }
        Err(ShieldError::UnknownConfiguration(format!("{name} with barriers")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::compile;
    use crate::logic::{parse_formula, Bindings, Predicate};
    use nalgebra::{DMatrix, DVector};

    fn setup() -> (Fsa, ControlAffine, Vec<BarrierFunction>) {
        let mut b = Bindings::new();
        b.insert("g".into(), Predicate::ball_inside("g", 2, vec![3.0, 0.0], 0.3).unwrap());
        let fsa = compile(&parse_formula("F g", &b).unwrap()).unwrap();
        let dynamics = ControlAffine {
            drift: DVector::zeros(2),
            input: DMatrix::identity(2, 2),
        };
        let wall = BarrierFunction::new("wall", Predicate::linear("wall", vec![-1.0, 0.0], 1.0).unwrap());
        (fsa, dynamics, vec![wall])
    }

    #[test]
    fn registry_lists_the_five_configurations() {
        let r = FilterRegistry::default();
        assert_eq!(r.names(), ["clf+cbf", "rl", "rl+cbf", "rl+cbf+clf", "rl+clf"]);
        let p = ShieldParams::default();
        assert!(matches!(r.build("cbf", &p), Err(ShieldError::UnknownConfiguration(_))));
        assert_eq!(r.build_with_barriers("rl", &p).unwrap().name(), "rl+cbf");
        assert_eq!(r.build_with_barriers("rl+clf", &p).unwrap().name(), "rl+cbf+clf");
        assert_eq!(r.build_with_barriers("clf+cbf", &p).unwrap().name(), "clf+cbf");
    }

    #[test]
    fn configurations_isolate_their_parts() {
        let (fsa, dynamics, walls) = setup();
        let r = FilterRegistry::default();
        let p = ShieldParams::default();
        let s = [0.9, 0.0];
        let ctx = FilterContext {
            fsa: &fsa,
            q: fsa.initial(),
            s: &s,
            a_rl: &[1.0, 0.0],
            dynamics: &dynamics,
            user_barriers: &walls,
        };
        let out = r.build("rl", &p).unwrap().filter(&ctx).unwrap();
        assert_eq!(out.total(), vec![1.0, 0.0]);

        let out = r.build("rl+cbf", &p).unwrap().filter(&ctx).unwrap();
        assert!(out.a_clf.iter().all(|x| *x == 0.0), "{out:?}");
        // ḣ + h ≥ 0 with h = 0.1 caps the speed toward the wall at 0.1
        assert!((out.total()[0] - 0.1).abs() < 1e-8, "{out:?}");

        let out = r.build("rl+clf", &p).unwrap().filter(&ctx).unwrap();
        assert!(out.a_cbf.iter().all(|x| *x == 0.0));
        assert!(out.h_labels.is_empty());
        assert_eq!(out.goal, Some(vec![3.0, 0.0]));

        let out = r.build("clf+cbf", &p).unwrap().filter(&ctx).unwrap();
        assert_eq!(out.a_rl, vec![0.0, 0.0]);
        assert!(out.total()[0] <= 0.1 + 1e-8);
    }
}
