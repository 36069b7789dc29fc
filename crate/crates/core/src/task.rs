use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The four tasks, in training order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskId {
    Cpd,
    Gap,
    Ma,
    Pf,
}

impl TaskId {
    pub const ALL: [TaskId; 4] = [TaskId::Cpd, TaskId::Gap, TaskId::Ma, TaskId::Pf];

    /// 1-based position in the training order.
    pub fn ordinal(self) -> usize {
        self as usize + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskId::Cpd => "cpd",
            TaskId::Gap => "gap",
            TaskId::Ma => "ma",
            TaskId::Pf => "pf",
        }
    }

    pub fn is_classification(self) -> bool {
        self == TaskId::Cpd
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }
}

/// Parses a comma-separated task list into training order.
pub fn parse_task_list(s: &str) -> Result<Vec<TaskId>, Error> {
    let mut tasks = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect::<Result<Vec<TaskId>, _>>()?;
    tasks.sort();
    tasks.dedup();
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_orders_and_dedups() {
        assert_eq!(
            parse_task_list("pf, cpd,PF,ma").unwrap(),
            vec![TaskId::Cpd, TaskId::Ma, TaskId::Pf]
        );
        assert!(matches!("xyz".parse::<TaskId>(), Err(Error::UnknownTask(_))));
        assert_eq!(TaskId::Pf.ordinal(), 4);
    }
}
