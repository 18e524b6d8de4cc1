use std::time::Duration;

use oscflat::flavor::ReductionRow;
use oscflat::geometry::PartialSums;
use oscflat::parallel::{
    self, autotune, makespan, AutotuneRequest, Collective, Comm, WorkerProfile,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn weighted_split_covers_and_follows_weights(
        total in 0usize..5000,
        weights in prop::collection::vec(0.01..10.0f64, 1..12),
    ) {
        let parts = parallel::weighted_split(total, &weights);
        parallel::validate_partitions(&parts, total).unwrap();
        let wsum: f64 = weights.iter().sum();
        for (p, w) in parts.iter().zip(&weights) {
            let ideal = total as f64 * w / wsum;
            prop_assert!((p.len() as f64 - ideal).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn makespan_is_ceiling_of_waves(beams in 0usize..10_000, threads in 1usize..512, t in 1e-6..1.0f64) {
        let waves = beams.div_ceil(threads);
        prop_assert_eq!(makespan(beams, threads, t), waves as f64 * t);
    }

    #[test]
    fn reductions_agree_on_every_lane(
        lanes in 1usize..5,
        vals in prop::collection::vec(-1e6..1e6f64, 1..40),
    ) {
        let shared = Collective::new(lanes, Duration::from_secs(30));
        let results: Vec<(Vec<ReductionRow>, f64, Vec<f64>)> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..lanes)
                .map(|lane| {
                    let shared = shared.clone();
                    let vals = &vals;
                    s.spawn(move || {
                        let mut comm = Comm::new(lane, shared);
                        let mut p = PartialSums::new(2);
                        for (i, v) in vals.iter().enumerate().filter(|(i, _)| i % lanes == lane) {
                            p.add(i % 2, ReductionRow::new(*v, -*v, 0.5 * *v));
                        }
                        let sum = comm.reduce_sum(&p).unwrap().totals();
                        let local_max = vals.iter().enumerate().filter(|(i, _)| i % lanes == lane).map(|(_, v)| *v).fold(f64::MIN, f64::max);
                        let max = comm.reduce_max(local_max).unwrap();
                        let b = comm.broadcast(&[lane as f64, 7.0]).unwrap();
                        (sum, max, b)
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let mut want = PartialSums::new(2);
        for (i, v) in vals.iter().enumerate() {
            want.add(i % 2, ReductionRow::new(*v, -*v, 0.5 * *v));
        }
        let max = vals.iter().cloned().fold(f64::MIN, f64::max);
        for (sum, m, b) in &results {
            prop_assert_eq!(sum, &want.totals());
            prop_assert_eq!(*m, max);
            prop_assert_eq!(b, &vec![0.0, 7.0]);
        }
    }
}

#[test]
fn aborted_collective_releases_waiting_lanes() {
    let shared = Collective::new(2, Duration::from_secs(30));
    let s2 = shared.clone();
    let waiter = std::thread::spawn(move || Comm::new(0, s2).reduce_max(1.0));
    std::thread::sleep(Duration::from_millis(20));
    shared.abort("lane 1 failed");
    assert!(waiter.join().unwrap().is_err());
}

#[test]
fn missing_lane_times_out() {
    let shared = Collective::new(2, Duration::from_millis(50));
    assert!(Comm::new(0, shared).reduce_max(1.0).is_err());
}

#[test]
fn autotune_grid_is_flat_within_a_wave_count() {
    let req = AutotuneRequest {
        total_beams: 2000,
        node: vec![WorkerProfile {
            class: "cpu".into(),
            threads: 244,
            per_beam_time: 0.01,
        }],
        min_nodes: 1,
        max_nodes: 9,
        ratio_min: 1.0,
        ratio_max: 1.0,
        ratio_step: 0.1,
        accel_class: "accel".into(),
        knee_threshold: 0.01,
    };
    let report = autotune(&req).unwrap();
    for w in report.best_per_nodes.windows(2) {
        let waves = |n: usize| (2000usize).div_ceil(n).div_ceil(244);
        if waves(w[0].0) == waves(w[1].0) {
            assert_eq!(w[0].2, w[1].2, "{w:?}");
        }
    }
}
