use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::EngineError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "event_kind", rename_all = "snake_case")]
pub enum Trigger {
    Immediate,
    AwaitEvent(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepDef {
    pub step_id: String,
    #[serde(default)]
    pub depends_on: Vec<String>,
    pub trigger: Trigger,
    pub action_id: String,
}

impl StepDef {
    pub fn immediate(id: &str, deps: &[&str], action: &str) -> Self {
        Self {
            step_id: id.into(),
            depends_on: deps.iter().map(|d| d.to_string()).collect(),
            trigger: Trigger::Immediate,
            action_id: action.into(),
        }
    }

    pub fn on_event(id: &str, deps: &[&str], kind: &str, action: &str) -> Self {
        Self {
            step_id: id.into(),
            depends_on: deps.iter().map(|d| d.to_string()).collect(),
            trigger: Trigger::AwaitEvent(kind.into()),
            action_id: action.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowDefinition {
    pub version: u32,
    pub steps: Vec<StepDef>,
}

impl WorkflowDefinition {
    pub fn step(&self, id: &str) -> Option<&StepDef> {
        self.steps.iter().find(|s| s.step_id == id)
    }

    /// Checks ids, dependency references and acyclicity. Returns a
    /// topological order (Kahn, lexicographic tie-break).
    pub fn validate(&self) -> Result<Vec<String>, EngineError> {
        if self.version == 0 {
            return Err(EngineError::InvalidDefinition("version must be >= 1".into()));
        }
        if self.steps.is_empty() {
            return Err(EngineError::InvalidDefinition("definition has no steps".into()));
        }
        let mut ids = BTreeSet::new();
        for s in &self.steps {
            if !ids.insert(s.step_id.as_str()) {
                return Err(EngineError::InvalidDefinition(format!("duplicate step {}", s.step_id)));
            }
        }
        for s in &self.steps {
            for d in &s.depends_on {
                if !ids.contains(d.as_str()) {
                    return Err(EngineError::InvalidDefinition(format!(
                        "step {} depends on undeclared {d}",
                        s.step_id
                    )));
                }
            }
        }
        let mut indegree: BTreeMap<&str, usize> = self.steps.iter().map(|s| (s.step_id.as_str(), 0)).collect();
        let mut dependents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for s in &self.steps {
            let deps: BTreeSet<&str> = s.depends_on.iter().map(String::as_str).collect();
            *indegree.get_mut(s.step_id.as_str()).unwrap() = deps.len();
            for d in deps {
                dependents.entry(d).or_default().push(s.step_id.as_str());
            }
        }
        let mut ready: VecDeque<&str> = indegree.iter().filter(|(_, n)| **n == 0).map(|(k, _)| *k).collect();
        let mut order = Vec::with_capacity(self.steps.len());
        while let Some(id) = ready.pop_front() {
            order.push(id.to_string());
            let mut next = Vec::new();
            for dep in dependents.get(id).into_iter().flatten() {
                let n = indegree.get_mut(dep).unwrap();
                *n -= 1;
                if *n == 0 {
                    next.push(*dep);
                }
            }
            next.sort();
            ready.extend(next);
        }
        if order.len() != self.steps.len() {
            let stuck: Vec<_> = indegree.iter().filter(|(_, n)| **n > 0).map(|(k, _)| k.to_string()).collect();
            return Err(EngineError::CycleDetected(stuck));
        }
        Ok(order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_dependency_is_a_cycle() {
        let d = WorkflowDefinition { version: 1, steps: vec![StepDef::immediate("a", &["a"], "x")] };
        assert!(matches!(d.validate(), Err(EngineError::CycleDetected(_))));
    }

    #[test]
    fn longer_cycle_and_bad_refs() {
        let d = WorkflowDefinition {
            version: 1,
            steps: vec![
                StepDef::immediate("a", &["c"], "x"),
                StepDef::immediate("b", &["a"], "x"),
                StepDef::immediate("c", &["b"], "x"),
                StepDef::immediate("root", &[], "x"),
            ],
        };
        assert!(matches!(d.validate(), Err(EngineError::CycleDetected(s)) if s.len() == 3));
        let d = WorkflowDefinition { version: 1, steps: vec![StepDef::immediate("a", &["ghost"], "x")] };
        assert!(matches!(d.validate(), Err(EngineError::InvalidDefinition(_))));
    }

    #[test]
    fn serde_shape() {
        let s = StepDef::on_event("wait", &["a"], "reply", "handle");
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["trigger"]["type"], "await_event");
        assert_eq!(v["trigger"]["event_kind"], "reply");
        let back: StepDef = serde_json::from_value(v).unwrap();
        assert_eq!(back, s);
    }
}
