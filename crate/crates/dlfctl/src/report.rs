use std::collections::BTreeMap;
use std::time::Duration;

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Step {
    pub description: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

/// Outcome of one scenario run. `passed` is kept equal to the conjunction of
/// the step outcomes; steps can only be added through [`ScenarioReport::check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ScenarioReport {
    pub scenario_name: String,
    steps: Vec<Step>,
    pub counters: BTreeMap<String, u64>,
    /// Modelled time for g1k; wall-clock run time for the other scenarios.
    #[serde(serialize_with = "as_millis")]
    pub simulated_duration: Duration,
    passed: bool,
}

fn as_millis<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1000.0)
}

impl ScenarioReport {
    pub fn new(name: impl Into<String>) -> Self {
        ScenarioReport {
            scenario_name: name.into(),
            steps: Vec::new(),
            counters: BTreeMap::new(),
            simulated_duration: Duration::ZERO,
            passed: true,
        }
    }

    /// Records a step. Returns `ok` so callers can branch on it.
    pub fn check(&mut self, description: impl Into<String>, ok: bool, detail: impl Into<String>) -> bool {
        self.steps.push(Step {
            description: description.into(),
            passed: ok,
            detail: detail.into(),
        });
        self.passed &= ok;
        ok
    }

    /// Records a step whose outcome is an equality, with both sides in the detail.
    pub fn check_eq<T: PartialEq + std::fmt::Debug>(&mut self, description: &str, got: T, want: T) -> bool {
        let ok = got == want;
        let detail = if ok { String::new() } else { format!("got {got:?}, want {want:?}") };
        self.check(description, ok, detail)
    }

    pub fn count(&mut self, name: &str, value: u64) {
        self.counters.insert(name.to_string(), value);
    }

    pub fn counter(&self, name: &str) -> Option<u64> {
        self.counters.get(name).copied()
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn passed(&self) -> bool {
        self.passed
    }

    pub fn failed_steps(&self) -> Vec<&Step> {
        self.steps.iter().filter(|s| !s.passed).collect()
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("report serializes")
    }
}
