//! Scenario files: a TOML document whose tables mirror [`Scenario`] field by field.
//! Unknown keys are rejected, omitted optional keys take their documented defaults.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coordinator::{ConvergenceConfig, Coordinator};
use crate::error::{Error, Result};
use crate::ev_agent::LogUtility;
use crate::model::{validate_scenario, DsoSpec, EvSession, StorageSpec, Tolerances, ValidationReport};
use crate::registry::StrategyRegistry;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub slot_minutes: f64,
    pub num_slots: usize,
}

impl GridConfig {
    pub fn slot_hours(&self) -> f64 {
        self.slot_minutes / 60.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    /// Price of the first slot's warm start, €cent/kWh.
    #[serde(default = "MarketConfig::default_initial_price")]
    pub initial_price: f64,
    /// `U(p) = w ln(utility_offset + p)`.
    #[serde(default = "MarketConfig::default_utility_offset")]
    pub utility_offset: f64,
}

impl MarketConfig {
    fn default_initial_price() -> f64 {
        16.0
    }

    fn default_utility_offset() -> f64 {
        1.0
    }
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            initial_price: Self::default_initial_price(),
            utility_offset: Self::default_utility_offset(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "SolverConfig::default_gamma")]
    pub gamma: f64,
    #[serde(default = "SolverConfig::default_eps_balance")]
    pub eps_balance: f64,
    #[serde(default = "SolverConfig::default_k_max")]
    pub k_max: usize,
    /// Name of a registered step schedule.
    #[serde(default = "SolverConfig::default_step_schedule")]
    pub step_schedule: String,
    /// Name of a registered QP solver for the DSO subproblem.
    #[serde(default = "SolverConfig::default_dso_method")]
    pub dso_method: String,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl SolverConfig {
    fn default_gamma() -> f64 {
        ConvergenceConfig::default().gamma
    }

    fn default_eps_balance() -> f64 {
        ConvergenceConfig::default().eps_balance
    }

    fn default_k_max() -> usize {
        ConvergenceConfig::default().k_max
    }

    fn default_step_schedule() -> String {
        "constant".into()
    }

    fn default_dso_method() -> String {
        "active-set".into()
    }

    pub fn convergence(&self) -> ConvergenceConfig {
        ConvergenceConfig {
            gamma: self.gamma,
            eps_balance: self.eps_balance,
            k_max: self.k_max,
        }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma: Self::default_gamma(),
            eps_balance: Self::default_eps_balance(),
            k_max: Self::default_k_max(),
            step_schedule: Self::default_step_schedule(),
            dso_method: Self::default_dso_method(),
            tolerances: Tolerances::default(),
        }
    }
}

/// Seeded random sessions. Arrivals are uniform over the horizon, departures
/// uniform over `(arrival, horizon]`, and the requirement uniform over
/// `[0, min(max_fill * deliverable, energy_cap)]` where `deliverable` is the
/// energy reachable at full power for the whole stay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub count: usize,
    #[serde(default)]
    pub p_min: f64,
    #[serde(default = "GeneratorConfig::default_p_max")]
    pub p_max: f64,
    #[serde(default = "GeneratorConfig::default_weight")]
    pub weight: f64,
    #[serde(default)]
    pub xi: f64,
    #[serde(default = "GeneratorConfig::default_max_fill")]
    pub max_fill: f64,
    #[serde(default = "GeneratorConfig::default_energy_cap")]
    pub energy_cap: f64,
}

impl GeneratorConfig {
    fn default_p_max() -> f64 {
        22.0
    }

    fn default_weight() -> f64 {
        10.0
    }

    fn default_max_fill() -> f64 {
        0.9
    }

    fn default_energy_cap() -> f64 {
        40.0
    }

    pub fn with_count(count: usize) -> Self {
        Self {
            count,
            p_min: 0.0,
            p_max: Self::default_p_max(),
            weight: Self::default_weight(),
            xi: 0.0,
            max_fill: Self::default_max_fill(),
            energy_cap: Self::default_energy_cap(),
        }
    }

    pub(crate) fn violations(&self, out: &mut Vec<crate::model::Violation>) {
        let mut push = |message: String| {
            out.push(crate::model::Violation {
                path: "generator".into(),
                message,
            })
        };
        if !(self.p_min >= 0.0 && self.p_min <= self.p_max) {
            push(format!(
                "power bounds must satisfy 0 <= p_min <= p_max (got [{}, {}])",
                self.p_min, self.p_max
            ));
        }
        if !(0.0..1.0).contains(&self.xi) {
            push(format!("xi must lie in [0, 1) (got {})", self.xi));
        }
        if !(self.weight > 0.0) {
            push(format!("utility weight must be positive (got {})", self.weight));
        }
        if !(self.max_fill > 0.0 && self.max_fill <= 1.0) {
            push(format!("max_fill must lie in (0, 1] (got {})", self.max_fill));
        }
        if !(self.energy_cap >= 0.0) {
            push(format!("energy_cap must be nonnegative (got {})", self.energy_cap));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Seed of the session generator.
    #[serde(default)]
    pub seed: u64,
    pub grid: GridConfig,
    pub dso: DsoSpec,
    /// Absent means no storage (both power bounds zero).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage: Option<StorageSpec>,
    #[serde(default)]
    pub market: MarketConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evs: Vec<EvSession>,
}

impl Scenario {
    /// Half day of 15-minute slots, one generator, one storage unit, 20 generated EVs.
    pub fn reference() -> Self {
        Self {
            seed: 42,
            grid: GridConfig {
                slot_minutes: 15.0,
                num_slots: 48,
            },
            dso: DsoSpec {
                a: 0.06,
                b: 0.9,
                p_min: 0.0,
                p_max: 100.0,
            },
            storage: Some(StorageSpec {
                ps_min: -100.0,
                ps_max: 100.0,
                x0: 100.0,
                x_ref: 100.0,
                delta_s: 1.0,
                rho: 1.0,
            }),
            market: MarketConfig::default(),
            solver: SolverConfig::default(),
            generator: Some(GeneratorConfig::with_count(20)),
            evs: Vec::new(),
        }
    }

    pub fn storage_or_disabled(&self) -> StorageSpec {
        self.storage.unwrap_or_else(StorageSpec::disabled)
    }

    pub fn utility(&self) -> LogUtility {
        LogUtility {
            offset: self.market.utility_offset,
        }
    }

    /// Explicit sessions followed by the generated ones.
    pub fn sessions(&self) -> Vec<EvSession> {
        let mut sessions = self.evs.clone();
        if let Some(generator) = &self.generator {
            sessions.extend(generate_evs(
                generator.count,
                self.grid.num_slots,
                self.grid.slot_hours(),
                generator,
                self.seed,
            ));
        }
        sessions
    }

    pub fn report(&self) -> ValidationReport {
        validate_scenario(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.report().into_result()
    }

    pub fn coordinator(&self, registry: &StrategyRegistry) -> Result<Coordinator> {
        Ok(Coordinator::new(
            self.solver.convergence(),
            self.solver.tolerances,
            self.utility(),
            registry.step_schedule(&self.solver.step_schedule)?,
            registry.qp_solver(&self.solver.dso_method)?,
        ))
    }

    /// Canonical TOML form; `parse_scenario` reads it back to an equal value.
    pub fn to_canonical_string(&self) -> String {
        toml::to_string(self).expect("scenario fields are all representable in TOML")
    }
}

/// Deterministic, individually feasible sessions named `ev001`, `ev002`, ...
pub fn generate_evs(
    count: usize,
    horizon: usize,
    slot_hours: f64,
    bounds: &GeneratorConfig,
    seed: u64,
) -> Vec<EvSession> {
    if horizon == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let arrival = rng.gen_range(0..horizon);
            let departure = rng.gen_range(arrival + 1..=horizon);
            let mut session = EvSession {
                id: format!("ev{:03}", i + 1),
                arrival,
                departure,
                p_min: bounds.p_min,
                p_max: bounds.p_max,
                weight: bounds.weight,
                xi: bounds.xi,
                energy: 0.0,
            };
            let deliverable = session.max_deliverable(departure - arrival, slot_hours);
            let floor = session.energy_per_kw_slot(slot_hours) * bounds.p_min * (departure - arrival) as f64;
            let ceiling = (bounds.max_fill * deliverable).min(bounds.energy_cap).max(floor);
            session.energy = rng.gen_range(floor..=ceiling);
            session
        })
        .collect()
}

/// Parses a scenario document and validates it.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    parse_scenario_with_overrides(text, &[])
}

/// Parses a scenario document, applies `key=value` overrides on dotted paths, then
/// validates the result.
pub fn parse_scenario_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Scenario> {
    let scenario = parse_unvalidated(text, overrides)?;
    scenario.validate()?;
    Ok(scenario)
}

/// Like [`parse_scenario_with_overrides`] but leaves invariant checks to the caller.
pub fn parse_unvalidated(text: &str, overrides: &[(String, String)]) -> Result<Scenario> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| syntax_error(text, &e))?;
    for (key, value) in overrides {
        apply_override(&mut table, key, value)?;
    }
    for key in ["grid", "dso"] {
        if !table.contains_key(key) {
            return Err(Error::MissingKey(key.into()));
        }
    }
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        let message = e.inner().to_string();
        match message
            .strip_prefix("missing field `")
            .and_then(|rest| rest.split('`').next())
        {
            Some(field) if path == "." => Error::MissingKey(field.to_string()),
            Some(field) => Error::MissingKey(format!("{path}.{field}")),
            None => Error::Scenario(format!("{path}: {message}")),
        }
    })
}

fn syntax_error(text: &str, err: &toml::de::Error) -> Error {
    let (line, column) = match err.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
            (line, column)
        }
        None => (0, 0),
    };
    Error::Syntax {
        line,
        column,
        message: err.message().to_string(),
    }
}

/// Sets `key` (dotted path; numeric segments index arrays) to `raw`, read as a TOML
/// value when possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let segments: Vec<&str> = key.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::Scenario(format!("malformed override key `{key}`")));
    }
    let mut root = toml::Value::Table(std::mem::take(table));
    let outcome = set_path(&mut root, &segments, value, key);
    if let toml::Value::Table(t) = root {
        *table = t;
    }
    outcome
}

fn set_path(node: &mut toml::Value, path: &[&str], value: toml::Value, key: &str) -> Result<()> {
    let (head, rest) = path.split_first().expect("non-empty path");
    let child = match node {
        toml::Value::Table(t) => {
            if rest.is_empty() {
                t.insert(head.to_string(), value);
                return Ok(());
            }
            t.entry(head.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
        }
        toml::Value::Array(items) => {
            let len = items.len();
            let item = head
                .parse::<usize>()
                .ok()
                .and_then(|i| items.get_mut(i))
                .ok_or_else(|| Error::Scenario(format!("override `{key}`: `{head}` is not an index below {len}")))?;
            if rest.is_empty() {
                *item = value;
                return Ok(());
            }
            item
        }
        _ => return Err(Error::Scenario(format!("override `{key}` descends into a scalar"))),
    };
    set_path(child, rest, value, key)
}
