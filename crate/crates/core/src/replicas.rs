//! Scheduler-independent replica orchestration.
//!
//! Replicas are split into fixed blocks by index. Each block is folded
//! sequentially, blocks run in parallel, and the block accumulators are merged
//! in block order, so the result does not depend on the thread count.

use rayon::prelude::*;

use crate::Result;

pub const BLOCK_SIZE: u64 = 256;

pub trait Merge {
    fn merge(&mut self, other: Self) -> Result<()>;
}

pub fn fold_replicas<A, I, F>(replicas: u64, init: I, step: F) -> Result<A>
where
    A: Merge + Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, u64) -> Result<()> + Sync,
{
    let blocks = replicas.div_ceil(BLOCK_SIZE);
    let partials: Vec<A> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = init();
            for r in (b * BLOCK_SIZE)..((b + 1) * BLOCK_SIZE).min(replicas) {
                step(&mut acc, r)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut iter = partials.into_iter();
    let mut total = iter.next().unwrap_or_else(&init);
    for part in iter {
        total.merge(part)?;
    }
    Ok(total)
}

/// Runs `f` on a dedicated pool with `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::RunningStats;

    struct Acc(RunningStats);

    impl Merge for Acc {
        fn merge(&mut self, other: Self) -> Result<()> {
            self.0.merge(&other.0);
            Ok(())
        }
    }

    #[test]
    fn result_is_independent_of_thread_count() {
        let run = |threads| {
            with_threads(Some(threads), || {
                fold_replicas(1000, || Acc(RunningStats::new()), |a, r| {
                    a.0.push(((r * 2654435761) % 1000) as f64 / 7.0);
                    Ok(())
                })
                .unwrap()
            })
        };
        let one = run(1);
        let many = run(4);
        assert_eq!(one.0.count(), 1000);
        assert_eq!(one.0.mean().to_bits(), many.0.mean().to_bits());
        assert_eq!(one.0.variance().to_bits(), many.0.variance().to_bits());
    }
}
