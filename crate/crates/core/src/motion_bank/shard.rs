use std::path::PathBuf;

use super::BankError;

/// Round-robin shard of a file list: files are ordered by file name and file
/// `i` goes to rank `i % world`.
pub fn shard_bank(paths: &[PathBuf], rank: usize, world: usize) -> Result<Vec<PathBuf>, BankError> {
    if world == 0 || rank >= world {
        return Err(BankError::BadRank { rank, world });
    }
    let mut sorted: Vec<&PathBuf> = paths.iter().collect();
    sorted.sort_by(|a, b| a.file_name().cmp(&b.file_name()).then_with(|| a.cmp(b)));
    Ok(sorted
        .into_iter()
        .enumerate()
        .filter(|(i, _)| i % world == rank)
        .map(|(_, p)| p.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn files(n: usize) -> Vec<PathBuf> {
        (0..n).map(|i| PathBuf::from(format!("clips/{i:03}.mbank"))).collect()
    }

    #[test]
    fn round_robin_two_ranks() {
        let got = shard_bank(&files(10), 0, 2).unwrap();
        let want: Vec<_> = [0, 2, 4, 6, 8].iter().map(|&i| files(10)[i].clone()).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn single_rank_is_identity() {
        assert_eq!(shard_bank(&files(5), 0, 1).unwrap(), files(5));
    }

    #[test]
    fn bad_rank() {
        assert!(matches!(shard_bank(&files(5), 3, 2), Err(BankError::BadRank { rank: 3, world: 2 })));
    }

    proptest! {
        #[test]
        fn shards_partition(n in 0usize..40, world in 1usize..=8, shuffle_seed in any::<u64>()) {
            let mut input = files(n);
            // Input order must not matter.
            let k = input.len();
            if k > 1 { input.rotate_left((shuffle_seed as usize) % k); }
            let mut seen = BTreeSet::new();
            let mut total = 0;
            for rank in 0..world {
                let shard = shard_bank(&input, rank, world).unwrap();
                prop_assert_eq!(&shard, &shard_bank(&input, rank, world).unwrap());
                total += shard.len();
                seen.extend(shard);
            }
            prop_assert_eq!(total, n);
            prop_assert_eq!(seen.len(), n);
        }
    }
}
