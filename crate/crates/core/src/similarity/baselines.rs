use super::SimilarityError;
use crate::ranking_metrics::Ranking;
use crate::rng;
use crate::tensor_io::TaskRecord;

/// Size baseline: the training-set size is the score, larger ranks higher.
pub fn size_score(t: &TaskRecord) -> Result<f64, SimilarityError> {
    if t.train_size == 0 {
        return Err(SimilarityError::InvariantViolation(format!(
            "task {} has train_size 0",
            t.task_id
        )));
    }
    Ok(t.train_size as f64)
}

/// Uniformly random ordering of `sources`, reproducible from `rng_seed`.
///
/// Sources are first put in ascending id order so the result does not
/// depend on the order they were passed in.
pub fn random_ranking(
    sources: &[TaskRecord],
    target_id: &str,
    rng_seed: u64,
) -> Result<Ranking, SimilarityError> {
    if sources.is_empty() {
        return Err(SimilarityError::EmptySourceSet);
    }
    let mut ids: Vec<String> = sources.iter().map(|s| s.task_id.clone()).collect();
    ids.sort();
    rng::shuffle(&mut rng::seeded(rng_seed), &mut ids);
    Ranking::from_order(target_id, "random", ids)
        .map_err(|e| SimilarityError::InvariantViolation(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::{Category, Role};

    fn task(id: &str, size: u64) -> TaskRecord {
        TaskRecord {
            task_id: id.into(),
            display_name: id.to_uppercase(),
            category: Category::Classification,
            train_size: size,
            role: Role::Source,
        }
    }

    #[test]
    fn size_orders_larger_first() {
        let mnli = size_score(&task("mnli", 393_000)).unwrap();
        let race = size_score(&task("race", 25_000)).unwrap();
        assert!(mnli > race);
        assert!(size_score(&task("empty", 0)).is_err());
    }

    #[test]
    fn size_ties_break_by_id() {
        let tasks = [task("winogrande", 40_000), task("hellaswag", 40_000)];
        let r = Ranking::from_scores(
            "t",
            "size",
            tasks.iter().map(|t| (t.task_id.clone(), size_score(t).unwrap())),
        )
        .unwrap();
        assert_eq!(r.top(), Some("hellaswag"));
    }

    #[test]
    fn random_is_deterministic() {
        let tasks: Vec<_> = ["a", "b", "c", "d", "e"].iter().map(|id| task(id, 1)).collect();
        let r1 = random_ranking(&tasks, "t", 99).unwrap();
        let r2 = random_ranking(&tasks, "t", 99).unwrap();
        assert_eq!(r1, r2);
        let mut reversed = tasks.clone();
        reversed.reverse();
        assert_eq!(random_ranking(&reversed, "t", 99).unwrap(), r1);
    }

    #[test]
    fn random_single_and_empty() {
        let r = random_ranking(&[task("only", 1)], "t", 5).unwrap();
        assert_eq!(r.top(), Some("only"));
        assert_eq!(random_ranking(&[], "t", 5), Err(SimilarityError::EmptySourceSet));
    }

    #[test]
    fn random_top1_is_uniform() {
        let tasks: Vec<_> = ["a", "b", "c"].iter().map(|id| task(id, 1)).collect();
        let draws = 100_000u64;
        let mut counts = [0u64; 3];
        let mut master = rng::seeded(0xDCB0);
        for _ in 0..draws {
            let seed = rand::RngCore::next_u64(&mut master);
            let top = random_ranking(&tasks, "t", seed).unwrap();
            counts[(top.top().unwrap().as_bytes()[0] - b'a') as usize] += 1;
        }
        for c in counts {
            let frac = c as f64 / draws as f64;
            assert!((frac - 1.0 / 3.0).abs() < 0.01, "{counts:?}");
        }
    }
}
