mod common;

use common::tally_counts;
use noc_placement::mesh::Counts;
use noc_placement::optimizer::SearchSpace;
use noc_placement::*;
use num_bigint::BigUint;

#[test]
fn counts_match_enumeration_up_to_eight_tiles() {
    for n in 2..=8 {
        for ((c, k, m), seen) in tally_counts(n) {
            assert_eq!(
                placement_count(n, c, k, m).unwrap(),
                BigUint::from(seen),
                "n={n} ({c},{k},{m})"
            );
        }
    }
}

#[test]
fn sixteen_tile_count() {
    let by_factorials = (1..=16u64).product::<u64>() / ((1..=8u64).product::<u64>() * 24 * 2 * 2);
    assert_eq!(by_factorials, 5_405_400);
    assert_eq!(
        placement_count(16, 8, 4, 2).unwrap(),
        BigUint::from(by_factorials)
    );
    let s = SearchSpace::new(
        MeshGrid::square(4).unwrap(),
        Counts::new(8, 4, 2),
        Mode::LowTraffic,
    )
    .unwrap();
    assert_eq!(s.raw_count().unwrap(), BigUint::from(by_factorials));
}

/// 10810800 is 16!/(8! 4! 2!), which leaves out the 2! orderings of the two
/// empty tiles.
#[test]
#[ignore = "the quoted figure treats the two empty tiles as distinguishable"]
fn sixteen_tile_count_quoted_figure() {
    assert_eq!(
        placement_count(16, 8, 4, 2).unwrap(),
        BigUint::from(10_810_800u64)
    );
}
