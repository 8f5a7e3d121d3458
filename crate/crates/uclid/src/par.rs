//! Data-parallel loop helpers with a sequential fallback.
//!
//! Every hot kernel is written as "one task per output element" so that the
//! result is bit-identical whether the `parallel` feature (rayon) is enabled
//! or not: each element is produced by its own sequential inner reduction and
//! no cross-task floating point accumulation ever happens.

/// Fill `out[i] = f(i)` for every index, in parallel when available.
#[cfg(feature = "parallel")]
pub fn par_fill<T: Send, F: Fn(usize) -> T + Sync>(out: &mut [T], f: F) {
    use rayon::prelude::*;
    out.par_iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
}

#[cfg(not(feature = "parallel"))]
pub fn par_fill<T: Send, F: Fn(usize) -> T + Sync>(out: &mut [T], f: F) {
    seq_fill(out, f);
}

/// Sequential reference path, always available (used by the bench suite).
pub fn seq_fill<T, F: Fn(usize) -> T>(out: &mut [T], f: F) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = f(i);
    }
}

/// Map `0..n` through `f`, collecting results in index order.
#[cfg(feature = "parallel")]
pub fn par_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_matches_seq() {
        let mut a = vec![0u64; 1000];
        let mut b = vec![0u64; 1000];
        par_fill(&mut a, |i| (i as u64).wrapping_mul(2654435761));
        seq_fill(&mut b, |i| (i as u64).wrapping_mul(2654435761));
        assert_eq!(a, b);
    }
}
