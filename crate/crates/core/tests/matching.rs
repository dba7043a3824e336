mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use servo_core::descriptors::DescriptorGrid;
use servo_core::matching::*;

fn grid_strategy(rows: usize, cols: usize, dim: usize) -> impl Strategy<Value = DescriptorGrid> {
    prop::collection::vec(-1.0f32..1.0, rows * cols * dim)
        .prop_map(move |data| DescriptorGrid::from_cells(rows, cols, dim, data))
}

#[test]
fn brute_force_agrees_on_random_5x5_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..200 {
        let d = common::random_grid(5, 5, 8, &mut rng);
        let c = common::random_grid(5, 5, 8, &mut rng);
        let m = cyclical_distance_map(&d, &c).unwrap();
        let oracle = common::brute_cyclical(&d, &c);
        for i in 0..d.len() {
            let (cell, cos) = nearest_neighbor(d.descriptor_at(i), &c).unwrap();
            let (bi, bcos) = common::brute_nearest(d.descriptor_at(i), &c).unwrap();
            assert_eq!(cell, c.cell(bi));
            assert!((cos - bcos).abs() < 1e-12);
            let (ocell, od) = oracle[i].unwrap();
            assert_eq!(m.forward[i].unwrap().0, ocell);
            assert_eq!(m.distance[i], Some(od));
        }
    }
}

proptest! {
    #[test]
    fn identical_grids_have_zero_cyclical_distance(g in grid_strategy(6, 7, 5)) {
        let m = cyclical_distance_map(&g, &g).unwrap();
        for i in 0..g.len() {
            prop_assert_eq!(m.distance[i], Some(0.0));
            prop_assert_eq!(m.forward[i].unwrap().0, g.cell(i));
        }
    }

    #[test]
    fn cyclical_distance_is_nonpositive_and_matches_round_trip(d in grid_strategy(4, 6, 3), c in grid_strategy(5, 3, 3)) {
        let m = cyclical_distance_map(&d, &c).unwrap();
        for i in 0..d.len() {
            let dist = m.distance[i].unwrap();
            prop_assert!(dist <= 0.0);
            let back = m.round_trip(i).unwrap();
            prop_assert!((dist + d.cell(i).distance(&back)).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_is_a_subset_of_eligible(d in grid_strategy(5, 5, 4), c in grid_strategy(5, 5, 4), k in 4usize..30, seed in any::<u64>(), thr in 0.0f64..3.0) {
        let m = cyclical_distance_map(&d, &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match select_correspondences(&m, k, thr, &mut rng) {
            Ok(set) => {
                let eligible = m.eligible(thr);
                prop_assert_eq!(set.len(), k.min(m.usable()));
                let cells: Vec<usize> = set.pairs.iter().map(|p| d.index(p.desired_cell)).collect();
                let mut dedup = cells.clone();
                dedup.dedup();
                prop_assert_eq!(dedup.len(), cells.len());
                if eligible.len() >= k {
                    prop_assert!(cells.iter().all(|i| eligible.contains(i)));
                }
                for p in &set.pairs {
                    prop_assert_eq!(Some(p.cyclical_distance), m.distance[d.index(p.desired_cell)]);
                }
            }
            Err(MatchError::InsufficientMatches { available }) => prop_assert!(available < MIN_CORRESPONDENCES),
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }

    #[test]
    fn selection_is_deterministic_per_seed(d in grid_strategy(5, 5, 4), seed in any::<u64>()) {
        let m = cyclical_distance_map(&d, &d).unwrap();
        let a = select_correspondences(&m, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = select_correspondences(&m, 8, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn scaling_descriptors_changes_nothing(d in grid_strategy(4, 4, 6), c in grid_strategy(4, 4, 6), s in 0.1f32..10.0) {
        let a = cyclical_distance_map(&d, &c).unwrap();
        let b = cyclical_distance_map(&d.scaled(s), &c).unwrap();
        prop_assert_eq!(a.distance, b.distance);
        let cells_a: Vec<_> = a.forward.iter().map(|f| f.map(|x| x.0)).collect();
        let cells_b: Vec<_> = b.forward.iter().map(|f| f.map(|x| x.0)).collect();
        prop_assert_eq!(cells_a, cells_b);
    }
}

#[test]
fn ineligible_cells_take_no_part() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = common::random_grid(4, 4, 6, &mut rng);
    let mut c = d.clone();
    let hidden = d.cell(5);
    c.set_eligible(hidden, false);
    let m = cyclical_distance_map(&d, &c).unwrap();
    assert!(m.forward.iter().flatten().all(|(cell, _)| *cell != hidden));
    assert_eq!(m.backward[5], None);
}
