mod common;

use rand::seq::SliceRandom;
use rand::Rng;
use spcseg::graph_loss::{connectivity, graph_loss, GraphLossConfig, Partition};
use spcseg::pointcloud::gauss_weights;

#[test]
fn exhaustive_labelings_match_naive_sum() {
    common::connectivity_bruteforce(2, 21).unwrap();
}

#[test]
fn one_hot_soft_loss_is_bit_identical() {
    common::soft_hard_consistency(30, 22).unwrap();
}

#[test]
fn five_point_hand_example() {
    // Two tight pairs far from a lone point.
    let pts = [
        [0.0, 0.0, 0.0],
        [0.1, 0.0, 0.0],
        [3.0, 0.0, 0.0],
        [3.0, 0.2, 0.0],
        [1.5, 1.5, 0.0],
    ];
    let w = gauss_weights(&pts).unwrap();
    let grouped = Partition::new(vec![0, 0, 1, 1, 2], 3).unwrap();
    let split = Partition::new(vec![0, 1, 0, 1, 2], 3).unwrap();
    let c_grouped = connectivity(&w, &grouped).unwrap();
    let c_split = connectivity(&w, &split).unwrap();
    assert!((c_grouped - common::naive_connectivity(&pts, &[0, 0, 1, 1, 2])).abs() < 1e-15);
    assert!(c_split > c_grouped + 1.5);
    let loss = graph_loss(&w, &split, &grouped, &GraphLossConfig::default()).unwrap();
    assert!((loss - (1.1f64.powf(c_split - c_grouped) - 1.0)).abs() < 1e-15);
}

#[test]
fn relabeling_classes_keeps_connectivity() {
    let mut r = common::rng(23);
    for _ in 0..50 {
        let n = r.random_range(2..30);
        let w = gauss_weights(&common::random_points(&mut r, n, 1.0)).unwrap();
        let labels = common::random_labels(&mut r, n, 4);
        let mut map: Vec<usize> = (0..4).collect();
        map.shuffle(&mut r);
        let renamed: Vec<usize> = labels.iter().map(|&l| map[l]).collect();
        let a = connectivity(&w, &Partition::new(labels, 4).unwrap()).unwrap();
        let b = connectivity(&w, &Partition::new(renamed, 4).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn connectivity_bounded_by_total_weight() {
    let mut r = common::rng(24);
    for _ in 0..50 {
        let n = r.random_range(1..30);
        let w = gauss_weights(&common::random_points(&mut r, n, 1.0)).unwrap();
        let c = connectivity(
            &w,
            &Partition::new(common::random_labels(&mut r, n, 3), 3).unwrap(),
        )
        .unwrap();
        assert!(c >= 0.0 && c <= w.upper_sum() + 1e-12);
        let all_apart: Vec<usize> = (0..n).collect();
        let full = connectivity(&w, &Partition::new(all_apart, n).unwrap()).unwrap();
        assert!((full - w.upper_sum()).abs() < 1e-12);
    }
}

#[test]
fn splitting_a_class_never_lowers_connectivity() {
    let mut r = common::rng(25);
    for _ in 0..50 {
        let n = r.random_range(2..30);
        let w = gauss_weights(&common::random_points(&mut r, n, 1.0)).unwrap();
        let labels = common::random_labels(&mut r, n, 3);
        // Move some points of class 0 into a fresh class 3.
        let refined: Vec<usize> = labels
            .iter()
            .map(|&l| if l == 0 && r.random_bool(0.5) { 3 } else { l })
            .collect();
        let coarse = connectivity(&w, &Partition::new(labels, 4).unwrap()).unwrap();
        let fine = connectivity(&w, &Partition::new(refined, 4).unwrap()).unwrap();
        assert!(fine >= coarse - 1e-12);
    }
}

#[test]
fn loss_is_symmetric_and_grows_with_base() {
    let mut r = common::rng(26);
    for _ in 0..50 {
        let n = r.random_range(2..20);
        let w = gauss_weights(&common::random_points(&mut r, n, 1.0)).unwrap();
        let p = Partition::new(common::random_labels(&mut r, n, 3), 3).unwrap();
        let q = Partition::new(common::random_labels(&mut r, n, 3), 3).unwrap();
        let small = GraphLossConfig { a: 1.1 };
        let big = GraphLossConfig { a: 2.0 };
        let pq = graph_loss(&w, &p, &q, &small).unwrap();
        assert_eq!(pq, graph_loss(&w, &q, &p, &small).unwrap());
        assert!(pq >= 0.0);
        assert!(graph_loss(&w, &p, &q, &big).unwrap() >= pq);
    }
}
