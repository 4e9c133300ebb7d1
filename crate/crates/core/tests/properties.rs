use causal_gap::direction::{episode_harness, HarnessConfig, Method};
use causal_gap::experiments::{
    ingest_pair_file, quartiles, run_edge_analysis, split_train_transfer, EdgeRow,
};
use causal_gap::prob::make_pair;
use causal_gap::rng::run_rng;
use causal_gap::{Exec, RealDataset};
use proptest::prelude::*;

fn sorted_bits(d: &RealDataset) -> Vec<(u64, u64)> {
    let mut v: Vec<_> = d.samples.iter().map(|p| (p.a.to_bits(), p.b.to_bits())).collect();
    v.sort();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_partitions_the_rows(
        rows in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 20..200),
        seed in any::<u64>(),
    ) {
        let data = RealDataset::from_pairs(&rows);
        let (train, transfer) = split_train_transfer(&data, &mut run_rng(seed, 0));
        prop_assert_eq!(train.len() + transfer.len(), data.len());
        let mut joined = train.clone();
        joined.samples.extend_from_slice(&transfer.samples);
        prop_assert_eq!(sorted_bits(&joined), sorted_bits(&data));
        prop_assert!(train.len() > data.len() / 3 && transfer.len() > data.len() / 3);
    }

    #[test]
    fn edge_rows_satisfy_the_identity(n in 2usize..6, m in 2usize..6, seed in any::<u64>()) {
        let pair = make_pair(n, m, &mut run_rng(seed, 0)).unwrap();
        let row = EdgeRow::from_pair(&pair).unwrap();
        prop_assert!((row.s_g - (row.s_dkl - (row.dh_b - row.dh_a))).abs() < 1e-10);
        prop_assert!(row.identity_residual.abs() < 1e-10);
    }

    #[test]
    fn quartiles_are_ordered(values in prop::collection::vec(-1e6f64..1e6, 1..100)) {
        let (q25, q50, q75) = quartiles(&values);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= q25 && q25 <= q50 && q50 <= q75 && q75 <= hi);
    }
}

#[test]
fn discrete_runs_are_bit_identical_across_exec_modes() {
    let cfg = |exec| HarnessConfig { seeds: 6, episodes: 5, exec, ..HarnessConfig::discrete(4) };
    let a = episode_harness(&cfg(Exec::Sequential)).unwrap();
    let b = episode_harness(&cfg(Exec::Parallel)).unwrap();
    let strip = |r: &causal_gap::direction::HarnessResult| {
        r.records.iter().map(|x| (x.seed, x.episode, x.method, x.score.to_bits(), x.verdict)).collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
    for c in &a.curves {
        assert!(c.accuracy.iter().all(|p| (0.0..=1.0).contains(p)));
    }
    assert!(a.curve(Method::ProposedSg).is_some());
}

#[test]
fn edge_summary_is_reproducible() {
    let a = run_edge_analysis(200, 3, 5, Exec::Sequential).unwrap();
    let b = run_edge_analysis(200, 3, 5, Exec::Parallel).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a.max_identity_residual < 1e-10);
}

#[test]
fn pair_file_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pair.txt");
    let rows: String = (0..30).map(|i| format!("{} {}\n", i, 3 * i % 7)).collect();
    std::fs::write(&path, format!("# altitude temperature\n{rows}")).unwrap();
    let d = ingest_pair_file(&path).unwrap();
    assert_eq!(d.data.len(), 30);
    assert!(d.scaled);
    let mean: f64 = d.data.samples.iter().map(|p| p.a).sum::<f64>() / 30.0;
    assert!(mean.abs() < 1e-12);

    let missing = ingest_pair_file(&dir.path().join("absent.txt"));
    assert!(matches!(missing, Err(causal_gap::Error::Io(_))));
}
