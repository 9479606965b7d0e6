//! Bounded job pool: at most `size` jobs run on blocking threads, at most
//! `queue_capacity` more wait, and anything beyond that is refused at once.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;
use tokio::sync::Semaphore;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PoolError {
    #[error("server is at capacity; retry later")]
    Overloaded,
    #[error("job panicked")]
    Panicked,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PoolMetrics {
    pub queue_depth: usize,
    pub jobs_running: usize,
    pub jobs_completed: u64,
}

#[derive(Debug)]
struct Inner {
    permits: Arc<Semaphore>,
    capacity: usize,
    admitted: AtomicUsize,
    queued: AtomicUsize,
    running: AtomicUsize,
    completed: AtomicU64,
}

#[derive(Clone, Debug)]
pub struct JobPool {
    inner: Arc<Inner>,
}

/// Decrements a counter on drop, so cancelled requests release their slot.
struct Slot(Arc<Inner>, fn(&Inner) -> &AtomicUsize);

impl Drop for Slot {
    fn drop(&mut self) {
        (self.1)(&self.0).fetch_sub(1, Ordering::SeqCst);
    }
}

impl JobPool {
    pub fn new(size: usize, queue_capacity: usize) -> Self {
        let size = size.max(1);
        Self {
            inner: Arc::new(Inner {
                permits: Arc::new(Semaphore::new(size)),
                capacity: size + queue_capacity,
                admitted: AtomicUsize::new(0),
                queued: AtomicUsize::new(0),
                running: AtomicUsize::new(0),
                completed: AtomicU64::new(0),
            }),
        }
    }

    pub fn metrics(&self) -> PoolMetrics {
        PoolMetrics {
            queue_depth: self.inner.queued.load(Ordering::SeqCst),
            jobs_running: self.inner.running.load(Ordering::SeqCst),
            jobs_completed: self.inner.completed.load(Ordering::SeqCst),
        }
    }

    /// Runs `job` on a blocking thread once a worker is free.
    ///
    /// If the caller is dropped while the job runs, the job still finishes
    /// and keeps its worker until then.
    pub async fn run<R, F>(&self, job: F) -> Result<R, PoolError>
    where
        F: FnOnce() -> R + Send + 'static,
        R: Send + 'static,
    {
        let inner = Arc::clone(&self.inner);
        inner
            .admitted
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| (n < inner.capacity).then_some(n + 1))
            .map_err(|_| PoolError::Overloaded)?;
        let admitted = Slot(Arc::clone(&inner), |i| &i.admitted);

        inner.queued.fetch_add(1, Ordering::SeqCst);
        let waiting = Slot(Arc::clone(&inner), |i| &i.queued);
        let permit = Arc::clone(&inner.permits).acquire_owned().await.expect("pool semaphore is never closed");
        inner.running.fetch_add(1, Ordering::SeqCst);
        drop(waiting);

        let worker = Arc::clone(&inner);
        let handle = tokio::task::spawn_blocking(move || {
            let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(job));
            // Released here rather than by the caller, so an abandoned
            // request keeps counting against capacity until its job ends.
            worker.running.fetch_sub(1, Ordering::SeqCst);
            worker.completed.fetch_add(1, Ordering::SeqCst);
            drop(permit);
            drop(admitted);
            out
        });
        match handle.await {
            Ok(Ok(value)) => Ok(value),
            _ => Err(PoolError::Panicked),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::mpsc;
    use std::time::Duration;

    #[tokio::test(flavor = "multi_thread", worker_threads = 2)]
    async fn admission_bound_and_metrics() {
        let pool = JobPool::new(1, 2);
        assert_eq!(pool.metrics(), PoolMetrics::default());
        let (release_tx, release_rx) = mpsc::channel::<()>();
        let release_rx = Arc::new(std::sync::Mutex::new(release_rx));
        let mut handles = Vec::new();
        for _ in 0..3 {
            let (pool, rx) = (pool.clone(), Arc::clone(&release_rx));
            handles.push(tokio::spawn(async move { pool.run(move || rx.lock().unwrap().recv().unwrap()).await }));
        }
        while pool.metrics() != (PoolMetrics { queue_depth: 2, jobs_running: 1, jobs_completed: 0 }) {
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        assert_eq!(pool.run(|| ()).await, Err(PoolError::Overloaded));
        for _ in 0..3 {
            release_tx.send(()).unwrap();
        }
        for h in handles {
            h.await.unwrap().unwrap();
        }
        assert_eq!(pool.metrics(), PoolMetrics { queue_depth: 0, jobs_running: 0, jobs_completed: 3 });
        pool.run(|| ()).await.unwrap();
        assert_eq!(pool.metrics().jobs_completed, 4);
    }

    #[tokio::test]
    async fn panics_are_contained() {
        let pool = JobPool::new(1, 0);
        assert_eq!(pool.run(|| panic!("boom")).await, Err::<(), _>(PoolError::Panicked));
        assert_eq!(pool.run(|| 7).await, Ok(7));
    }

    #[tokio::test]
    async fn cancelled_waiter_frees_its_slot() {
        let pool = JobPool::new(1, 1);
        let (tx, rx) = mpsc::channel::<()>();
        let busy = {
            let pool = pool.clone();
            tokio::spawn(async move { pool.run(move || rx.recv().unwrap()).await })
        };
        while pool.metrics().jobs_running == 0 {
            tokio::task::yield_now().await;
        }
        let waiter = {
            let pool = pool.clone();
            tokio::spawn(async move { pool.run(|| ()).await })
        };
        while pool.metrics().queue_depth == 0 {
            tokio::task::yield_now().await;
        }
        waiter.abort();
        let _ = waiter.await;
        assert_eq!(pool.metrics().queue_depth, 0);
        tx.send(()).unwrap();
        busy.await.unwrap().unwrap();
        pool.run(|| ()).await.unwrap();
    }
}
