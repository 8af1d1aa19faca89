use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unbiased pass@k from `n` samples of which `c` pass:
/// `1 - C(n-c, k) / C(n, k)`, evaluated as `1 - Π_{i=n-c+1}^{n} (1 - k/i)`.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64> {
    if c > n {
        return Err(Error::param(format!("c={c} exceeds n={n}")));
    }
    if k == 0 || k > n {
        return Err(Error::param(format!("k={k} outside 1..={n}")));
    }
    if n - c < k {
        return Ok(1.0);
    }
    let miss: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

/// One line of a pass/fail results file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub passes: Vec<bool>,
}

impl TaskResult {
    pub fn passed(&self) -> usize {
        self.passes.iter().filter(|&&p| p).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PassMatrix {
    pub tasks: Vec<TaskResult>,
}

impl PassMatrix {
    pub fn new(tasks: Vec<TaskResult>) -> Self {
        PassMatrix { tasks }
    }

    pub fn from_jsonl(reader: impl std::io::BufRead) -> Result<Self> {
        crate::jsonl::read_lines(reader).map(PassMatrix::new)
    }

    /// Shared sample count, or a consistency error if tasks disagree.
    pub fn samples_per_task(&self) -> Result<usize> {
        let first = self
            .tasks
            .first()
            .ok_or(Error::EmptyInput("pass matrix has no tasks"))?;
        let n = first.passes.len();
        if let Some(t) = self.tasks.iter().find(|t| t.passes.len() != n) {
            return Err(Error::Inconsistent(format!(
                "task {} has {} samples, expected {n}",
                t.task_id,
                t.passes.len()
            )));
        }
        Ok(n)
    }

    /// Per-task pass@k, in task order.
    pub fn per_task(&self, k: usize) -> Result<Vec<f64>> {
        let n = self.samples_per_task()?;
        self.tasks.iter().map(|t| pass_at_k(n, t.passed(), k)).collect()
    }
}

/// Mean per-task pass@k.
pub fn aggregate_pass_at_k(m: &PassMatrix, k: usize) -> Result<f64> {
    let scores = m.per_task(k)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(id: &str, n: usize, c: usize) -> TaskResult {
        TaskResult {
            task_id: id.into(),
            passes: (0..n).map(|i| i < c).collect(),
        }
    }

    #[test]
    fn examples() {
        assert_eq!(pass_at_k(10, 10, 1).unwrap(), 1.0);
        assert!((pass_at_k(10, 3, 1).unwrap() - 0.3).abs() < 1e-12);
        assert!((pass_at_k(5, 2, 3).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(pass_at_k(10, 0, 5).unwrap(), 0.0);
    }

    #[test]
    fn bounds() {
        assert!(pass_at_k(3, 4, 1).is_err());
        assert!(pass_at_k(3, 1, 0).is_err());
        assert!(pass_at_k(3, 1, 4).is_err());
    }

    #[test]
    fn aggregate() {
        let m = PassMatrix::new(vec![task("a", 10, 3), task("b", 10, 10)]);
        assert!((aggregate_pass_at_k(&m, 1).unwrap() - 0.65).abs() < 1e-12);
        let all = PassMatrix::new(vec![task("a", 4, 4), task("b", 4, 4)]);
        assert_eq!(aggregate_pass_at_k(&all, 2).unwrap(), 1.0);
        assert!(matches!(
            aggregate_pass_at_k(&PassMatrix::default(), 1),
            Err(Error::EmptyInput(_))
        ));
        let ragged = PassMatrix::new(vec![task("a", 4, 1), task("b", 5, 1)]);
        assert!(matches!(aggregate_pass_at_k(&ragged, 1), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn jsonl_format() {
        let input = "{\"task_id\": \"HumanEval/0\", \"passes\": [true, false]}\n";
        let m = PassMatrix::from_jsonl(input.as_bytes()).unwrap();
        assert_eq!(m.tasks[0].task_id, "HumanEval/0");
        assert_eq!(m.tasks[0].passed(), 1);
    }
}
