use condlaw::hashing::{block_decompose, displacement_via_profile, enumerate_all, insert_all, HashSequence};
use proptest::prelude::*;

fn sequence() -> impl Strategy<Value = HashSequence> {
    (2usize..12)
        .prop_flat_map(|m| (Just(m), 1usize..m))
        .prop_flat_map(|(m, n)| (Just(m), prop::collection::vec(1..=m, n)))
        .prop_map(|(m, a)| HashSequence::new(m, a).unwrap())
}

proptest! {
    #[test]
    fn total_is_permutation_invariant(seq in sequence(), seed in any::<u64>()) {
        let n = seq.n();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = condlaw::seeding::mix64(s);
            perm.swap(i, (s % (i as u64 + 1)) as usize);
        }
        prop_assert_eq!(insert_all(&seq).total, insert_all(&seq.permuted(&perm)).total);
    }

    #[test]
    fn total_is_bounded(seq in sequence()) {
        let n = seq.n() as u64;
        prop_assert!(insert_all(&seq).total <= n * (n - 1) / 2);
    }

    #[test]
    fn blocks_partition_displacement(seq in sequence()) {
        let out = insert_all(&seq);
        let blocks = block_decompose(&out).unwrap();
        prop_assert_eq!(blocks.blocks.iter().map(|b| b.displacement).sum::<u64>(), out.total);
        prop_assert_eq!(blocks.blocks.len(), seq.m() - seq.n());
        prop_assert_eq!(blocks.blocks.iter().map(|b| b.length).sum::<usize>(), seq.m());
    }

    #[test]
    fn profile_formula_on_almost_full_tables(n in 1usize..11, raw in prop::collection::vec(any::<u32>(), 11)) {
        let addrs = raw[..n].iter().map(|r| *r as usize % (n + 1) + 1).collect();
        let seq = HashSequence::new(n + 1, addrs).unwrap();
        prop_assert_eq!(displacement_via_profile(&seq).unwrap().total, insert_all(&seq).total);
    }
}

#[test]
fn tail_monotone_in_n() {
    let laws: Vec<_> = (1..=7).map(|n| enumerate_all(n).unwrap()).collect();
    for pair in laws.windows(2) {
        for y in 0..=pair[1].max_displacement() + 1 {
            assert!(pair[0].tail(y) <= pair[1].tail(y) + 1e-15, "n = {}, y = {y}", pair[0].n);
        }
    }
}
