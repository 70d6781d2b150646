//! Scoped-thread executor.

use ezpgdpo_core::simulate::Executor;

/// Splits tasks into contiguous blocks, one per thread, and returns results
/// in task order. Results do not depend on the thread count because tasks
/// are independent and are reassembled by index.
#[derive(Clone, Copy, Debug)]
pub struct Threaded {
    pub threads: usize,
}

impl Executor for Threaded {
    fn map<T: Send, F: Fn(usize) -> T + Sync>(&self, tasks: usize, f: F) -> Vec<T> {
        let threads = self.threads.clamp(1, tasks.max(1));
        if threads == 1 {
            return (0..tasks).map(&f).collect();
        }
        let per = tasks.div_ceil(threads);
        let f = &f;
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|b| {
                    let range = (b * per).min(tasks)..((b + 1) * per).min(tasks);
                    s.spawn(move || range.map(f).collect::<Vec<T>>())
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("worker thread panicked")).collect()
        })
    }
}
