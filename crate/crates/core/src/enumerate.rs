//! Lexicographic enumeration of k-permutations.

use crate::error::{CoreError, Result};

/// Default bound on the number of allocations a single search may score.
pub const DEFAULT_CAP: u64 = 10_000_000;

/// `n! / (n-k)!`, or `None` on overflow.
pub fn count_allocations(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    (n - k + 1..=n).try_fold(1u128, |acc, x| acc.checked_mul(x as u128))
}

/// Errors when `P(n, k)` exceeds `cap`.
pub fn check_cap(n: usize, k: usize, cap: u64) -> Result<u128> {
    let count = count_allocations(n, k).unwrap_or(u128::MAX);
    if count > cap as u128 {
        return Err(CoreError::EnumerationCap { n, k, count, cap });
    }
    Ok(count)
}

/// Streams every k-permutation of `0..n` exactly once in lexicographic order.
#[derive(Clone, Debug)]
pub struct Allocations {
    n: usize,
    current: Vec<usize>,
    used: Vec<bool>,
    started: bool,
    done: bool,
}

impl Allocations {
    fn new(n: usize, k: usize) -> Self {
        let mut used = vec![false; n];
        for u in used.iter_mut().take(k) {
            *u = true;
        }
        Self { n, current: (0..k).collect(), used, started: false, done: k > n }
    }

    fn advance(&mut self) -> bool {
        let k = self.current.len();
        for p in (0..k).rev() {
            let old = self.current[p];
            self.used[old] = false;
            if let Some(next) = (old + 1..self.n).find(|&c| !self.used[c]) {
                self.current[p] = next;
                self.used[next] = true;
                let mut c = 0;
                for slot in p + 1..k {
                    while self.used[c] {
                        c += 1;
                    }
                    self.current[slot] = c;
                    self.used[c] = true;
                }
                return true;
            }
        }
        false
    }

    /// The next allocation, borrowed to avoid an allocation per step.
    pub fn next_slice(&mut self) -> Option<&[usize]> {
        if self.done {
            return None;
        }
        if self.started {
            if !self.advance() {
                self.done = true;
                return None;
            }
        } else {
            self.started = true;
        }
        Some(&self.current)
    }
}

impl Iterator for Allocations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        self.next_slice().map(<[usize]>::to_vec)
    }
}

/// All k-permutations of `0..n`, refusing when there are more than `cap`.
pub fn enumerate_allocations(n: usize, k: usize, cap: u64) -> Result<Allocations> {
    check_cap(n, k, cap)?;
    Ok(Allocations::new(n, k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_order() {
        assert_eq!(enumerate_allocations(3, 2, DEFAULT_CAP).unwrap().count(), 6);
        assert_eq!(enumerate_allocations(5, 3, DEFAULT_CAP).unwrap().count(), 60);
        let all: Vec<_> = enumerate_allocations(2, 2, DEFAULT_CAP).unwrap().collect();
        assert_eq!(all, vec![vec![0, 1], vec![1, 0]]);
        let all: Vec<_> = enumerate_allocations(3, 2, DEFAULT_CAP).unwrap().collect();
        assert_eq!(all, vec![vec![0, 1], vec![0, 2], vec![1, 0], vec![1, 2], vec![2, 0], vec![2, 1]]);
    }

    #[test]
    fn cap_is_enforced() {
        let err = enumerate_allocations(12, 8, DEFAULT_CAP).unwrap_err();
        assert!(matches!(err, CoreError::EnumerationCap { count: 19_958_400, .. }), "{err}");
        assert!(enumerate_allocations(10, 5, DEFAULT_CAP).is_ok());
    }
}
