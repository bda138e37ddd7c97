mod common;

use std::fs;

use common::*;
use odcast::data::{
    ingest, ingest_files, sparsity_report, split, synth_generate, synthetic_zones, window_starts, write_trips,
    zinb_field_for_zero_rate, DemandTensor, TripRecord, ZinbParams,
};
use odcast::graph::{OdGraph, Zone, ZoneTable};
use odcast::Error;
use proptest::prelude::*;
use rand::Rng;

const DAY: i64 = 86_400;
/// 2019-09-01T00:00:00Z.
const T0: i64 = 1_567_296_000;

fn zone_table(n: usize) -> ZoneTable {
    let zones = (0..n)
        .map(|i| {
            Zone::new(
                format!("{}", 10_001 + i),
                40.70 + 0.01 * i as f64,
                -74.0 + 0.007 * i as f64,
            )
            .unwrap()
        })
        .collect();
    ZoneTable::new(zones).unwrap()
}

fn random_trips(r: &mut Rng8, zones: &ZoneTable, count: usize, days: i64) -> Vec<TripRecord> {
    let ids: Vec<&str> = zones.zones().iter().map(|z| z.id.as_str()).collect();
    (0..count)
        .map(|_| TripRecord {
            timestamp: T0 + r.random_range(0..days * DAY),
            origin_zone: ids[r.random_range(0..ids.len())].to_string(),
            dest_zone: ids[r.random_range(0..ids.len())].to_string(),
            count: r.random_range(1..4),
        })
        .collect()
}

#[test]
fn single_trip_and_additivity() {
    let zones = zone_table(2);
    let trip = |ts: i64| TripRecord {
        timestamp: ts,
        origin_zone: "10001".into(),
        dest_zone: "10002".into(),
        count: 1,
    };
    let out = ingest(&[trip(T0)], &zones, 15, None).unwrap();
    assert_eq!(out.tensor.num_windows(), 96);
    assert_eq!(out.tensor.t0(), T0);
    assert_eq!(out.tensor.total(), 1);
    assert_eq!(out.tensor.get(1, 0), 1);
    let out = ingest(&[trip(T0 + 60), trip(T0 + 840)], &zones, 15, None).unwrap();
    assert_eq!(out.tensor.get(1, 0), 2);
    let bad = TripRecord {
        origin_zone: "99999".into(),
        ..trip(T0)
    };
    match ingest(&[bad], &zones, 15, None) {
        Err(Error::Data(m)) => assert!(m.contains("99999"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert!(ingest(&[], &zones, 15, None).is_err());
    assert!(ingest(&[trip(T0)], &zones, 7, None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn ingestion_conserves_trips(seed in 0u64..10_000, n in 1usize..300) {
        let zones = zone_table(5);
        let trips = random_trips(&mut rng(seed), &zones, n, 3);
        let weight: u64 = trips.iter().map(|t| u64::from(t.count)).sum();
        let out = ingest(&trips, &zones, 15, None).unwrap();
        prop_assert_eq!(out.tensor.total(), weight);
        prop_assert_eq!(out.accepted, weight);
        prop_assert_eq!(out.skipped, 0);
    }

    #[test]
    fn coarsening_commutes_with_ingestion(seed in 0u64..10_000, n in 1usize..300) {
        let zones = zone_table(4);
        let trips = random_trips(&mut rng(seed), &zones, n, 2);
        let fine = ingest(&trips, &zones, 5, None).unwrap().tensor;
        let coarse = ingest(&trips, &zones, 60, None).unwrap().tensor;
        prop_assert_eq!(fine.coarsen(12).unwrap().counts().to_vec(), coarse.counts().to_vec());
        prop_assert_eq!(fine.resample(60).unwrap().counts().to_vec(), coarse.counts().to_vec());
    }

    #[test]
    fn windows_never_straddle_splits(t in 40usize..400, tw in 1usize..8, k in 1usize..4) {
        let Ok(s) = split(t, (0.7, 0.1, 0.2)) else { return Ok(()) };
        prop_assert_eq!(s.train.end, s.val.start);
        prop_assert_eq!(s.val.end, s.test.start);
        prop_assert_eq!(s.test.end, t);
        for range in [&s.train, &s.val, &s.test] {
            let starts = window_starts(range, tw, k);
            // Exhaustive: every admissible start is present, no other.
            let expect: Vec<usize> = (0..t).filter(|&st| st >= range.start && st + tw + k <= range.end).collect();
            prop_assert_eq!(starts, expect);
        }
    }
}

#[test]
fn subset_sampling_is_seeded() {
    let zones = zone_table(12);
    let trips = random_trips(&mut rng(4), &zones, 2000, 2);
    let sub = |seed| odcast::data::ZoneSubset {
        origins: 3,
        destinations: 4,
        seed,
    };
    let a = ingest(&trips, &zones, 60, Some(sub(7))).unwrap();
    let b = ingest(&trips, &zones, 60, Some(sub(7))).unwrap();
    assert_eq!(a.tensor.origins(), b.tensor.origins());
    assert_eq!(a.tensor.counts(), b.tensor.counts());
    assert_eq!(a.tensor.num_nodes(), 12);
    assert_eq!(
        a.accepted + a.skipped,
        trips.iter().map(|t| u64::from(t.count)).sum::<u64>()
    );
}

#[test]
fn sparsity_falls_with_coarser_resolution() {
    // SLD-schema fixture: zip-code zone ids, Poisson-like arrivals over a
    // week with a rush-hour profile.
    let dir = tempfile::tempdir().unwrap();
    let zones = zone_table(6);
    let zones_path = dir.path().join("zones.csv");
    zones.write_csv(&zones_path).unwrap();
    let mut r = rng(12);
    let mut trips = Vec::new();
    let ids: Vec<String> = zones.zones().iter().map(|z| z.id.clone()).collect();
    for _ in 0..6000 {
        let day = r.random_range(0..7);
        let hour: f64 = if r.random_bool(0.5) {
            r.random_range(7.0..10.0)
        } else {
            r.random_range(0.0..24.0)
        };
        trips.push(TripRecord {
            timestamp: T0 + day * DAY + (hour * 3600.0) as i64,
            origin_zone: ids[r.random_range(0..6)].clone(),
            dest_zone: ids[r.random_range(0..6)].clone(),
            count: 1,
        });
    }
    let trips_path = dir.path().join("trips.csv");
    write_trips(&trips_path, &trips).unwrap();
    let rates: Vec<f64> = [5, 15, 60]
        .iter()
        .map(|&res| {
            ingest_files(&trips_path, &zones_path, res, None)
                .unwrap()
                .tensor
                .zero_rate()
        })
        .collect();
    assert!(rates[0] > rates[1] && rates[1] > rates[2], "{rates:?}");

    let empty = DemandTensor::new(vec![0; 8], 4, 15, 0, vec!["a".into(), "b".into()], vec!["c".into()]).unwrap();
    let rep = sparsity_report(&empty);
    assert_eq!(rep.zero_rate, 1.0);
    assert_eq!(rep.histogram, vec![(0, 8)]);
}

#[test]
fn synthetic_zero_rate_hits_target() {
    let zones = synthetic_zones(10, 0);
    let graph = OdGraph::from_zone_table(&zones, 10, 10).unwrap();
    let field = zinb_field_for_zero_rate(100, 0.88, 0.05, (1.0, 4.0), 3).unwrap();
    let analytic = field.iter().map(ZinbParams::zero_probability).sum::<f64>() / 100.0;
    assert!((analytic - 0.88).abs() < 1e-12);
    let t = synth_generate(&graph, 3000, &field, None, 5, 9).unwrap();
    assert!((t.zero_rate() - 0.88).abs() < 0.01, "{}", t.zero_rate());
    assert!((t.zero_rate() - analytic).abs() < 0.01);
    let again = synth_generate(&graph, 3000, &field, None, 5, 9).unwrap();
    assert_eq!(t.counts(), again.counts());

    let ones = vec![
        ZinbParams {
            pi: 1.0,
            n: 2.0,
            p: 0.5
        };
        100
    ];
    let z = synth_generate(&graph, 50, &ones, None, 5, 1).unwrap();
    assert_eq!(z.total(), 0);
}

#[test]
fn split_boundaries() {
    let s = split(100, (0.7, 0.1, 0.2)).unwrap();
    assert_eq!((s.train, s.val, s.test), (0..70, 70..80, 80..100));
    let s = split(101, (0.7, 0.1, 0.2)).unwrap();
    assert_eq!((s.train, s.val, s.test), (0..70, 70..80, 80..101));
    assert!(matches!(split(100, (0.7, 0.2, 0.2)), Err(Error::Config(_))));
    assert!(matches!(split(5, (0.7, 0.1, 0.2)), Err(Error::Data(_))));
    let s = split(100, (0.7, 0.1, 0.2)).unwrap();
    assert!(matches!(s.windows(8, 4), Err(Error::Data(_))));
}

#[test]
fn tensor_file_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(2);
    let counts: Vec<u32> = (0..6 * 50).map(|_| r.random_range(0..20)).collect();
    let names = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let t = DemandTensor::new(counts, 50, 15, T0, names("o", 2), names("d", 3)).unwrap();
    let path = dir.path().join("x.odt");
    t.write(&path).unwrap();
    let back = DemandTensor::read(&path).unwrap();
    assert_eq!(back, t);
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'X';
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(DemandTensor::read(&path), Err(Error::Format(_))));
}

#[test]
fn cli_smoke_path_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("quick.cfg"), QUICK_CONFIG).unwrap();
    let ok = |args: &[&str]| {
        let (code, out, err) = run_cli(d, args);
        assert_eq!(code, 0, "{args:?}\nstdout: {out}\nstderr: {err}");
        out
    };
    ok(&["synth", "--out", "toy.odt", "--windows", "400", "--seed", "5"]);
    ok(&[
        "--config",
        "quick.cfg",
        "train",
        "--data",
        "toy.odt",
        "--out",
        "m.stz",
        "--log",
        "log.json",
    ]);
    ok(&[
        "evaluate",
        "--data",
        "toy.odt",
        "--model",
        "m.stz",
        "--out",
        "r.json",
        "--per-node",
        "nodes.csv",
    ]);
    ok(&[
        "predict",
        "--data",
        "toy.odt",
        "--model",
        "m.stz",
        "--out",
        "f.csv",
        "--emit-pi",
        "pi.csv",
    ]);
    ok(&["evaluate", "--data", "toy.odt", "--baseline", "ha", "--out", "ha.json"]);
    let rep = ok(&["report", "--data", "toy.odt", "--histogram", "hist.csv"]);
    assert!(rep.contains("zero rate"), "{rep}");

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(report.as_object().unwrap().len(), 9);
    let pi = fs::read_to_string(d.join("pi.csv")).unwrap();
    assert!(pi.starts_with("node_id,origin_zone,dest_zone,step,pi\n"));
    assert_eq!(pi.lines().count(), 1 + 16 * 2);
    assert!(fs::read_to_string(d.join("nodes.csv"))
        .unwrap()
        .starts_with("node_id,mean_demand,mpiw\n"));
    assert!(fs::read_to_string(d.join("hist.csv"))
        .unwrap()
        .starts_with("value,count\n"));
    let forecast = fs::read_to_string(d.join("f.csv")).unwrap();
    assert!(forecast.starts_with("node_id,origin_zone,dest_zone,step,mean,median,lower,upper\n"));

    // Same config and seed: identical artifacts.
    ok(&["synth", "--out", "toy2.odt", "--windows", "400", "--seed", "5"]);
    ok(&[
        "--config",
        "quick.cfg",
        "train",
        "--data",
        "toy2.odt",
        "--out",
        "m2.stz",
        "--log",
        "log2.json",
    ]);
    assert_eq!(
        fs::read(d.join("toy.odt")).unwrap(),
        fs::read(d.join("toy2.odt")).unwrap()
    );
    assert_eq!(fs::read(d.join("m.stz")).unwrap(), fs::read(d.join("m2.stz")).unwrap());
    assert_eq!(
        fs::read(d.join("log.json")).unwrap(),
        fs::read(d.join("log2.json")).unwrap()
    );
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (code, _, err) = run_cli(
        d,
        &["--config", "nowhere.cfg", "train", "--data", "x.odt", "--out", "m.stz"],
    );
    assert_eq!(code, 1);
    assert!(err.contains("nowhere.cfg"), "{err}");
    assert_eq!(run_cli(d, &["frobnicate"]).0, 1);
    assert_eq!(run_cli(d, &["--help"]).0, 0);
    let (code, out, err) = run_cli(d, &["report", "--data", "missing.odt"]);
    assert_eq!(code, 2);
    assert!(out.is_empty() && err.contains("missing.odt"));
    fs::write(d.join("bad.cfg"), "head = zinb\nwidth = 3\n").unwrap();
    assert_eq!(
        run_cli(
            d,
            &["--config", "bad.cfg", "train", "--data", "x.odt", "--out", "m.stz"]
        )
        .0,
        1
    );
    assert_eq!(run_cli(d, &["synth", "--out", "nb.odt", "--windows", "200"]).0, 0);
    fs::write(d.join("nb.cfg"), "head = nb\nmax_epochs = 1\ndgcn_hidden = 4\n").unwrap();
    assert_eq!(
        run_cli(
            d,
            &["--config", "nb.cfg", "train", "--data", "nb.odt", "--out", "nb.stz"]
        )
        .0,
        0
    );
    let (code, _, err) = run_cli(
        d,
        &[
            "predict",
            "--data",
            "nb.odt",
            "--model",
            "nb.stz",
            "--out",
            "f.csv",
            "--emit-pi",
            "pi.csv",
        ],
    );
    assert_eq!(code, 1, "{err}");
}
