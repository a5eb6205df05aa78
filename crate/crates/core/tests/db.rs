mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfb_core::db::{
    build_database, filter, merge, sample, split, stats, Database, FilterPredicate, MAPPING_FILE, OVERPASS_THRESHOLD,
    SUMMARY_FILE,
};
use sfb_core::scenario::{LightState, ObjectTrack, ObjectType, ScenarioDescription, TrafficLightTrack};
use sfb_core::Error;

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn ids(db: &Database) -> BTreeSet<String> {
    db.ids().map(str::to_string).collect()
}

/// Exactly the two manifests, and every mapped file exists.
fn assert_copy_free(db: &Database) {
    let names: BTreeSet<String> = dir_bytes(db.dir()).into_keys().collect();
    assert_eq!(names, BTreeSet::from([SUMMARY_FILE.to_string(), MAPPING_FILE.to_string()]));
    assert!(db.missing_files().is_empty());
    let reopened = Database::open(db.dir()).unwrap();
    assert_eq!(&reopened, db);
}

/// Straight scenarios with varied ego distance, length and source tag.
fn varied(&seed: &u64) -> sfb_core::Result<ScenarioDescription> {
    if seed % 11 == 7 {
        return Err(Error::Config(format!("input {seed} is unreadable")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = common::straight_scenario(&format!("sc_{seed:04}"), rng.gen_range(5..40), rng.gen_range(0.0..25.0));
    d.metadata.source = ["pg", "log"][(seed % 2) as usize].into();
    Ok(d)
}

fn build(seeds: &[u64], dir: &Path, workers: usize) -> Database {
    build_database(varied, seeds, dir, workers).unwrap().database
}

#[test]
fn build_output_is_independent_of_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let seeds: Vec<u64> = (0..60).collect();
    let one = build_database(varied, &seeds, tmp.path().join("one"), 1).unwrap();
    let eight = build_database(varied, &seeds, tmp.path().join("eight"), 8).unwrap();
    assert_eq!(one.failures, eight.failures);
    assert_eq!(one.failures.len(), 5);
    assert_eq!(dir_bytes(one.database.dir()), dir_bytes(eight.database.dir()));
}

#[test]
fn random_content_builds_identically_across_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let seeds: Vec<u64> = (100..140).collect();
    let convert = |s: &u64| Ok(common::random_scenario(&mut ChaCha8Rng::seed_from_u64(*s), &format!("r{s}")));
    let a = build_database(convert, &seeds, tmp.path().join("a"), 1).unwrap();
    let b = build_database(convert, &seeds, tmp.path().join("b"), 8).unwrap();
    assert_eq!(dir_bytes(a.database.dir()), dir_bytes(b.database.dir()));
}

#[test]
fn distance_filter_example() {
    let tmp = tempfile::tempdir().unwrap();
    // Ego distances 1.9 * speed over 20 frames: 3.8, 9.5, 11.4, 19, 38.
    let speeds = [2.0, 5.0, 6.0, 10.0, 20.0];
    let inputs: Vec<(String, f64)> = speeds.iter().enumerate().map(|(i, &v)| (format!("d{i}"), v)).collect();
    let out = build_database(|(id, v): &(String, f64)| Ok(common::straight_scenario(id, 20, *v)), &inputs, tmp.path().join("db"), 2)
        .unwrap()
        .database;
    let kept = filter(&out, &FilterPredicate::parse(&["ego_moving_distance>10"]).unwrap(), tmp.path().join("f")).unwrap();
    assert_eq!(ids(&kept), BTreeSet::from(["d2".into(), "d3".into(), "d4".into()]));
    assert_copy_free(&kept);
    let all = filter(&out, &FilterPredicate::all(), tmp.path().join("all")).unwrap();
    assert_eq!(ids(&all), ids(&out));
}

#[test]
fn overpass_filter_removes_the_climbing_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let inputs = ["flat_a", "ramp", "flat_b"];
    let db = build_database(
        |id: &&str| {
            let mut d = common::straight_scenario(id, 30, 8.0);
            if *id == "ramp" {
                for (i, p) in d.tracks.get_mut("ego").unwrap().position.iter_mut().enumerate() {
                    p[2] = 6.0 * i as f64 / 29.0;
                }
                d.refresh_statistics();
            }
            Ok(d)
        },
        &inputs,
        tmp.path().join("db"),
        1,
    )
    .unwrap()
    .database;
    assert_eq!(db.metadata("ramp").unwrap().altitude_range, 6.0);
    let kept = filter(&db, &FilterPredicate::no_overpass(OVERPASS_THRESHOLD), tmp.path().join("f")).unwrap();
    assert_eq!(ids(&kept), BTreeSet::from(["flat_a".into(), "flat_b".into()]));
}

fn fixture_scene(id: &str, speed: f64, vehicles: usize, pedestrians: usize, light: bool, cone: bool) -> ScenarioDescription {
    let n = 11;
    let mut d = common::straight_scenario(id, n, speed);
    let mut add = |name: String, ty: ObjectType| {
        let mut t = ObjectTrack::empty(ty, n, 1.0, 1.0, 1.0);
        t.valid[0] = true;
        t.position[0] = [20.0, 5.0, 0.0];
        d.tracks.insert(name, t);
    };
    for k in 1..vehicles {
        add(format!("veh{k}"), ObjectType::Vehicle);
    }
    for k in 0..pedestrians {
        add(format!("ped{k}"), ObjectType::Pedestrian);
    }
    if cone {
        add("cone".into(), ObjectType::Cone);
    }
    if light {
        d.dynamic_states.insert(
            "light".into(),
            TrafficLightTrack {
                lane_id: "lane0".into(),
                states: vec![LightState::Green; n],
                stop_point: [30.0, 0.0, 0.0],
            },
        );
    }
    d.refresh_statistics();
    d
}

#[test]
fn stats_on_a_three_scene_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    // Ego distances 10, 20, 30 m over 10 steps.
    let scenes = vec![
        fixture_scene("a", 10.0, 1, 0, true, false),
        fixture_scene("b", 20.0, 2, 1, false, true),
        fixture_scene("c", 30.0, 3, 2, false, false),
    ];
    let db = build_database(|d: &ScenarioDescription| Ok(d.clone()), &scenes, tmp.path().join("db"), 3)
        .unwrap()
        .database;
    let t = stats(&db).unwrap();
    let pop_std = |xs: [f64; 3]| {
        let m = xs.iter().sum::<f64>() / 3.0;
        (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 3.0).sqrt()
    };
    assert_eq!(t.scenarios, 3);
    assert!((t.track_length.mean - 20.0).abs() < 1e-9);
    assert!((t.track_length.std - pop_std([10.0, 20.0, 30.0])).abs() < 1e-9);
    assert_eq!((t.vehicles.mean, t.vehicles.std), (2.0, pop_std([1.0, 2.0, 3.0])));
    assert_eq!((t.pedestrians.mean, t.pedestrians.std), (1.0, pop_std([0.0, 1.0, 2.0])));
    assert_eq!(t.intersection_ratio, 1.0 / 3.0);
    assert_eq!(t.construction_ratio, 1.0 / 3.0);
}

#[test]
fn derived_outputs_refuse_non_empty_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let db = build(&[1, 2, 3], &tmp.path().join("db"), 1);
    let busy = tmp.path().join("busy");
    std::fs::create_dir(&busy).unwrap();
    std::fs::write(busy.join("x"), b"x").unwrap();
    assert!(matches!(filter(&db, &FilterPredicate::all(), &busy), Err(Error::OutDirNotEmpty(_))));
}

fn clause_strategy() -> impl Strategy<Value = String> {
    prop_oneof![
        (0.0..60.0f64).prop_map(|v| format!("ego_moving_distance>{v}")),
        (5u32..40).prop_map(|v| format!("episode_length<={v}")),
        prop::sample::select(vec!["source==pg".to_string(), "source!=pg".to_string(), "source==log".to_string()]),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn database_algebra(
        n in 2usize..25,
        m in 1usize..10,
        p in prop::collection::vec(clause_strategy(), 0..3),
        q in prop::collection::vec(clause_strategy(), 0..3),
        train in 0.0..1.0f64,
        seed in any::<u64>(),
    ) {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path();
        let left: Vec<u64> = (0..n as u64).filter(|s| s % 11 != 7).collect();
        let right: Vec<u64> = (1000..1000 + m as u64).filter(|s| s % 11 != 7).collect();
        let a = build(&left, &root.join("a"), 2);
        let b = build(&right, &root.join("b"), 3);

        let merged = merge(&[&a, &b], root.join("ab")).unwrap();
        prop_assert_eq!(merged.len(), a.len() + b.len());
        assert_copy_free(&merged);
        prop_assert!(matches!(merge(&[&a, &a], root.join("aa")), Err(Error::DuplicateScenario(_))));

        let (pp, qq) = (FilterPredicate::parse(&p).unwrap(), FilterPredicate::parse(&q).unwrap());
        let fp = filter(&merged, &pp, root.join("fp")).unwrap();
        let fpq = filter(&fp, &qq, root.join("fpq")).unwrap();
        let both = filter(&merged, &pp.clone().and(qq.clone()), root.join("both")).unwrap();
        let again = filter(&fp, &pp, root.join("again")).unwrap();
        prop_assert_eq!(ids(&fpq), ids(&both));
        prop_assert_eq!(ids(&again), ids(&fp));
        for db in [&fp, &fpq, &both] {
            assert_copy_free(db);
            for id in db.ids() {
                prop_assert_eq!(db.read(id).unwrap(), merged.read(id).unwrap());
            }
        }

        let (tr, te) = split(&merged, train, 1.0 - train, seed, root.join("train"), root.join("test")).unwrap();
        let (tri, tei) = (ids(&tr), ids(&te));
        prop_assert!(tri.is_disjoint(&tei));
        prop_assert_eq!(tri.union(&tei).cloned().collect::<BTreeSet<_>>(), ids(&merged));
        prop_assert_eq!(te.len(), ((1.0 - train) * merged.len() as f64).round() as usize);
        assert_copy_free(&tr);
        assert_copy_free(&te);

        let k = merged.len() / 2;
        let s = sample(&merged, k, seed, root.join("sample")).unwrap();
        prop_assert_eq!(s.len(), k);
        prop_assert!(ids(&s).is_subset(&ids(&merged)));
        assert_copy_free(&s);
    }
}
