use proptest::prelude::*;
use twinwatch::metrics::{Metric, MetricResult};
use twinwatch::store::{RunStatus, SeriesTable, Store};
use twinwatch::{Error, FaultSpec, Quantity, RunId};

fn series() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec(
        (0.0..100.0f64, prop_oneof![-1e3..1e3f64, -1e-9..1e-9f64, Just(0.0)]),
        1..60,
    )
    .prop_map(|mut v| {
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v.dedup_by(|a, b| a.0 == b.0);
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn series_survive_a_reopen_bit_for_bit(meas in series(), sim in series(), value in 0.0..1e6f64) {
        let dir = tempfile::tempdir().unwrap();
        let run_id;
        {
            let mut store = Store::open(dir.path()).unwrap();
            let m = store.ensure_machine("m").unwrap();
            run_id = store.new_run(m, 1.7e9, FaultSpec::rope_length(0.05)).unwrap();
            store.insert_series(SeriesTable::Measurement, run_id, Quantity::Velocity, None, &meas).unwrap();
            store.insert_simulation(run_id, 2).unwrap();
            store.insert_series(SeriesTable::SimulationDatapoint, run_id, Quantity::Velocity, Some(1), &sim).unwrap();
            store.insert_metric(&MetricResult {
                run_id, quantity: Quantity::Velocity, metric: Metric::Rmse, value, included: meas.len(), excluded: 0,
            }).unwrap();
            store.set_run_status(run_id, RunStatus::Simulated).unwrap();
        }
        let store = Store::open_read_only(dir.path()).unwrap();
        let back = store.query_traces(run_id, Quantity::Velocity, SeriesTable::Measurement, None).unwrap();
        let got: Vec<(f64, f64)> = back.samples().collect();
        prop_assert_eq!(&got, &meas);
        let back = store.query_traces(run_id, Quantity::Velocity, SeriesTable::SimulationDatapoint, Some(1)).unwrap();
        prop_assert_eq!(back.samples().collect::<Vec<_>>(), sim);
        let metrics = store.query_metrics(run_id).unwrap();
        prop_assert_eq!(metrics.len(), 1);
        prop_assert_eq!(metrics[0].value.to_bits(), value.to_bits());
        let rec = store.run(run_id).unwrap();
        prop_assert_eq!(rec.status, RunStatus::Simulated);
        prop_assert_eq!(rec.fault, FaultSpec::rope_length(0.05));
        Store::check_integrity(dir.path()).unwrap();
    }
}

#[test]
fn dangling_references_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = Store::open(dir.path()).unwrap();
    let m = store.ensure_machine("m").unwrap();
    let err = store
        .insert_series(SeriesTable::Measurement, RunId(9), Quantity::Position, None, &[(0.0, 1.0)])
        .unwrap_err();
    assert!(matches!(err, Error::NotFound(_) | Error::ForeignKey(_)), "{err}");
    assert!(matches!(store.new_run(m + 1, 0.0, FaultSpec::NONE), Err(Error::ForeignKey(_))));

    let run = store.new_run(m, 0.0, FaultSpec::NONE).unwrap();
    // Replications need a simulation row, and must stay below its count.
    assert!(store
        .insert_series(SeriesTable::SimulationDatapoint, run, Quantity::Position, Some(0), &[(0.0, 1.0)])
        .is_err());
    store.insert_simulation(run, 1).unwrap();
    assert!(store
        .insert_series(SeriesTable::SimulationDatapoint, run, Quantity::Position, Some(1), &[(0.0, 1.0)])
        .is_err());
    let dup = [(0.0, 1.0), (0.0, 2.0)];
    assert!(store.insert_series(SeriesTable::Measurement, run, Quantity::Position, None, &dup).is_err());
    assert!(store.query_traces(run, Quantity::Position, SeriesTable::Measurement, None).unwrap().is_empty());
}

#[test]
fn one_writer_at_a_time() {
    let dir = tempfile::tempdir().unwrap();
    let _first = Store::open(dir.path()).unwrap();
    assert!(matches!(Store::open(dir.path()), Err(Error::Locked(_))));
    assert!(Store::open_read_only(dir.path()).is_ok());
}
