//! Data-parallel cell kernels.
//!
//! Every reduction is split into fixed-size chunks whose partial sums are
//! combined in index order, so results are bit-identical whether the
//! `parallel` feature is enabled or not and regardless of the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Cells per reduction chunk. Part of the numerical contract: changing it
/// changes the rounding of every reduction.
pub const CHUNK: usize = 2048;

/// Below this length the kernels stay on the calling thread.
#[cfg(feature = "parallel")]
const PAR_THRESHOLD: usize = 8192;

/// Deterministic sum of `f(i)` for `i in 0..len`.
pub fn sum_by<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = len.div_ceil(CHUNK);
    let partial = |c: usize| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(len);
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        acc
    };
    #[cfg(feature = "parallel")]
    if len >= PAR_THRESHOLD {
        let partials: Vec<f64> = (0..chunks).into_par_iter().map(partial).collect();
        return partials.iter().sum();
    }
    let mut total = 0.0;
    for c in 0..chunks {
        total += partial(c);
    }
    total
}

/// Deterministic maximum of `f(i)`; `-inf` for empty input.
pub fn max_by<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    #[cfg(feature = "parallel")]
    if len >= PAR_THRESHOLD {
        return (0..len)
            .into_par_iter()
            .map(&f)
            .reduce(|| f64::NEG_INFINITY, f64::max);
    }
    (0..len).map(f).fold(f64::NEG_INFINITY, f64::max)
}

/// `out[i] = f(i)` for every cell.
pub fn fill<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync,
{
    #[cfg(feature = "parallel")]
    if out.len() >= PAR_THRESHOLD {
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let base = c * CHUNK;
            for (k, o) in chunk.iter_mut().enumerate() {
                *o = f(base + k);
            }
        });
        return;
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = f(i);
    }
}

/// `out[i] = f(i, out[i])`, in place.
pub fn update<F>(out: &mut [f64], f: F)
where
    F: Fn(usize, f64) -> f64 + Sync,
{
    #[cfg(feature = "parallel")]
    if out.len() >= PAR_THRESHOLD {
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
            let base = c * CHUNK;
            for (k, o) in chunk.iter_mut().enumerate() {
                *o = f(base + k, *o);
            }
        });
        return;
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = f(i, *o);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sum_by(a.len(), |i| a[i] * b[i])
}

/// Run independent jobs, concurrently when the `parallel` feature is on.
/// Output order matches input order.
pub fn map_jobs<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

/// Run two independent closures, concurrently when possible.
pub fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    {
        rayon::join(a, b)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (a(), b())
    }
}

/// Run `f` inside a pool of `threads` workers (`None` = global pool).
/// Without the `parallel` feature this simply calls `f`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if let Some(k) = threads {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build() {
            return pool.install(f);
        }
        log::warn!("could not build a {k}-thread pool, using the global pool");
    }
    let _ = threads;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_sum_matches_naive_order_within_chunk() {
        let v: Vec<f64> = (0..100).map(|i| i as f64 * 0.5).collect();
        assert_eq!(sum_by(v.len(), |i| v[i]), v.iter().sum::<f64>());
        assert_eq!(sum_by(0, |_| 1.0), 0.0);
    }

    #[test]
    fn reductions_do_not_depend_on_thread_count() {
        let n = 50_000;
        let v: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.37).sin() * 1e3).collect();
        let one = with_threads(Some(1), || sum_by(n, |i| v[i]));
        let many = with_threads(Some(4), || sum_by(n, |i| v[i]));
        assert_eq!(one.to_bits(), many.to_bits());
        let m1 = with_threads(Some(1), || max_by(n, |i| v[i]));
        let m4 = with_threads(Some(4), || max_by(n, |i| v[i]));
        assert_eq!(m1, m4);
    }

    #[test]
    fn fill_and_update_cover_every_cell() {
        let mut out = vec![0.0; 20_000];
        fill(&mut out, |i| i as f64);
        update(&mut out, |i, x| x + i as f64);
        assert!(out.iter().enumerate().all(|(i, &x)| x == 2.0 * i as f64));
    }

    #[test]
    fn map_jobs_preserves_order() {
        let r = map_jobs((0..16).collect(), |i: i32| i * i);
        assert_eq!(r, (0..16).map(|i| i * i).collect::<Vec<_>>());
    }
}
