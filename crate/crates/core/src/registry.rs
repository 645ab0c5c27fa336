//! Name-keyed registry of the interchangeable algorithm pieces: DSO subproblem
//! solvers, dual step-size schedules and slot charging policies. Scenario files and
//! the CLI refer to strategies by these names.

use std::collections::BTreeMap;

use crate::coordinator::{ConstantStep, DiminishingStep, StepSchedule};
use crate::error::{Error, Result};
use crate::mpc::{ChargingPolicy, MarketPolicy, UncontrolledPolicy};
use crate::qp::{ActiveSet, ProjectedGradient, QpSolver};

type Factory<T> = Box<dyn Fn() -> Box<T> + Send + Sync>;

pub struct StrategyRegistry {
    qp_solvers: BTreeMap<String, Factory<dyn QpSolver>>,
    schedules: BTreeMap<String, Factory<dyn StepSchedule>>,
    policies: BTreeMap<String, Factory<dyn ChargingPolicy>>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self {
            qp_solvers: BTreeMap::new(),
            schedules: BTreeMap::new(),
            policies: BTreeMap::new(),
        }
    }

    pub fn register_qp_solver<F>(&mut self, name: &str, factory: F)
    where
        F: Fn() -> Box<dyn QpSolver> + Send + Sync + 'static,
    {
        self.qp_solvers.insert(name.to_string(), Box::new(factory));
    }

    pub fn register_step_schedule<F>(&mut self, name: &str, factory: F)
    where
        F: Fn() -> Box<dyn StepSchedule> + Send + Sync + 'static,
    {
        self.schedules.insert(name.to_string(), Box::new(factory));
    }

    pub fn register_policy<F>(&mut self, name: &str, factory: F)
    where
        F: Fn() -> Box<dyn ChargingPolicy> + Send + Sync + 'static,
    {
        self.policies.insert(name.to_string(), Box::new(factory));
    }

    pub fn qp_solver(&self, name: &str) -> Result<Box<dyn QpSolver>> {
        lookup(&self.qp_solvers, "qp solver", name)
    }

    pub fn step_schedule(&self, name: &str) -> Result<Box<dyn StepSchedule>> {
        lookup(&self.schedules, "step schedule", name)
    }

    pub fn policy(&self, name: &str) -> Result<Box<dyn ChargingPolicy>> {
        lookup(&self.policies, "charging policy", name)
    }

    pub fn qp_solver_names(&self) -> Vec<&str> {
        self.qp_solvers.keys().map(String::as_str).collect()
    }

    pub fn step_schedule_names(&self) -> Vec<&str> {
        self.schedules.keys().map(String::as_str).collect()
    }

    pub fn policy_names(&self) -> Vec<&str> {
        self.policies.keys().map(String::as_str).collect()
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut registry = Self::empty();
        registry.register_qp_solver("active-set", || Box::new(ActiveSet::default()));
        registry.register_qp_solver("projected-gradient", || Box::new(ProjectedGradient::default()));
        registry.register_step_schedule("constant", || Box::new(ConstantStep));
        registry.register_step_schedule("diminishing", || Box::new(DiminishingStep));
        registry.register_policy("market", || Box::new(MarketPolicy));
        registry.register_policy("uncontrolled", || Box::new(UncontrolledPolicy));
        registry
    }
}

fn lookup<T: ?Sized>(map: &BTreeMap<String, Factory<T>>, kind: &'static str, name: &str) -> Result<Box<T>> {
    map.get(name)
        .map(|factory| factory())
        .ok_or_else(|| Error::UnknownStrategy {
            kind,
            name: name.to_string(),
            available: map.keys().cloned().collect::<Vec<_>>().join(", "),
        })
}
