//! Scenario files, task runner and report emitters behind the `nlform`
//! binary.

pub mod builtin;
pub mod report;
pub mod run;
pub mod scenario;

pub use report::{emit, Format};
pub use run::{run, run_tasks, RunOptions, RunReport, TaskStatus};
pub use scenario::{load_scenario, parse_scenario, Scenario, ScenarioError, Task};
