//! Unbiased pass@k from a pass/fail matrix, checked against resampling.

use qcg::eval::{aggregate_pass_at_k, pass_at_k, PassMatrix};
use qcg::numerics::Rng;

const RESULTS: &str = r#"{"task_id": "HumanEval/0", "passes": [true, false, false, true, false, false, false, false, false, false]}
{"task_id": "HumanEval/1", "passes": [true, true, true, true, true, true, true, true, true, true]}
{"task_id": "HumanEval/2", "passes": [false, false, false, false, false, false, false, false, false, false]}
{"task_id": "HumanEval/3", "passes": [false, false, true, false, false, false, false, false, false, false]}
"#;

fn main() -> qcg::Result<()> {
    let m = PassMatrix::from_jsonl(RESULTS.as_bytes())?;
    for k in [1, 5, 10] {
        println!("pass@{k:<2} = {:.4}", aggregate_pass_at_k(&m, k)?);
    }

    // Draw k of n without replacement and count draws containing a pass.
    let (n, c, k) = (10, 4, 5);
    let mut rng = Rng::new(0);
    let draws = 200_000;
    let mut hits = 0;
    for _ in 0..draws {
        let mut pool: Vec<usize> = (0..n).collect();
        let mut hit = false;
        for i in 0..k {
            let j = i + rng.below((n - i) as u64) as usize;
            pool.swap(i, j);
            hit |= pool[i] < c;
        }
        hits += usize::from(hit);
    }
    println!(
        "pass@{k} for n={n}, c={c}: closed form {:.5}, resampled {:.5}",
        pass_at_k(n, c, k)?,
        hits as f64 / draws as f64
    );
    Ok(())
}
