use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// `m` indices in `[0, n)` drawn i.i.d. uniformly, with replacement.
pub fn uniform_subsample(n: usize, m: usize, rng: &mut StreamRng) -> Vec<usize> {
    (0..m).map(|_| rng.random_range(0..n)).collect()
}

/// Disjoint batches covering `0..n`; the last one is short when `p` does not divide `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPartition {
    pub batches: Vec<Vec<usize>>,
}

impl BatchPartition {
    /// `owner[i]` is the batch holding particle `i`.
    pub fn owners(&self, n: usize) -> Vec<usize> {
        let mut owner = vec![0; n];
        for (b, batch) in self.batches.iter().enumerate() {
            for &i in batch {
                owner[i] = b;
            }
        }
        owner
    }
}

/// Uniformly random permutation of `0..n` chunked into blocks of `p`.
pub fn rbm_partition(n: usize, p: usize, rng: &mut StreamRng) -> Result<BatchPartition> {
    if p == 0 || p > n {
        return Err(Error::Precondition(format!(
            "batch size must lie in [1, n = {n}], got {p}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    Ok(BatchPartition {
        batches: perm.chunks(p).map(<[usize]>::to_vec).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn check_partition(part: &BatchPartition, n: usize) {
        let mut all: Vec<usize> = part.batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn partitions() {
        let mut rng = stream(0, Purpose::Thin, 0, 0);
        let p = rbm_partition(16, 4, &mut rng).unwrap();
        assert_eq!(p.batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![4; 4]);
        check_partition(&p, 16);
        let p = rbm_partition(16, 16, &mut rng).unwrap();
        assert_eq!(p.batches.len(), 1);
        check_partition(&p, 16);
        let p = rbm_partition(10, 4, &mut rng).unwrap();
        assert_eq!(p.batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        check_partition(&p, 10);
        let owners = p.owners(10);
        for (b, batch) in p.batches.iter().enumerate() {
            assert!(batch.iter().all(|&i| owners[i] == b));
        }
    }

    #[test]
    fn oversized_batches_rejected() {
        let mut rng = stream(0, Purpose::Thin, 0, 0);
        assert!(rbm_partition(4, 5, &mut rng).is_err());
        assert!(rbm_partition(4, 0, &mut rng).is_err());
    }

    #[test]
    fn subsample_range() {
        let mut rng = stream(0, Purpose::Thin, 0, 0);
        let s = uniform_subsample(16, 1000, &mut rng);
        assert!(s.iter().all(|&i| i < 16));
        assert!((0..16).all(|i| s.contains(&i)));
    }
}
