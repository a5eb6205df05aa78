mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sfb_core::pg::{generate_scenario, PgConfig};
use sfb_core::scenario::{decode_scenario, encode_scenario, read_scenario, validate_scenario, write_scenario, ObjectTrack, ScenarioDescription};
use sfb_core::Error;

/// Structural equality plus bit equality of every per-frame float, so that
/// -0.0 and 0.0 are told apart.
fn assert_bit_identical(a: &ScenarioDescription, b: &ScenarioDescription) {
    assert_eq!(a, b);
    for (id, ta) in &a.tracks {
        let tb = &b.tracks[id];
        let bits = |t: &ObjectTrack| -> Vec<u64> {
            let mut v: Vec<u64> = t.position.iter().flatten().map(|x| x.to_bits()).collect();
            v.extend(t.heading.iter().map(|x| x.to_bits()));
            v.extend(t.velocity.iter().flatten().map(|x| x.to_bits()));
            v.extend([t.length, t.width, t.height].map(f64::to_bits));
            v
        };
        assert_eq!(bits(ta), bits(tb), "track {id}");
    }
    assert_eq!(a.metadata.dt.to_bits(), b.metadata.dt.to_bits());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn random_scenarios_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let desc = common::random_scenario(&mut rng, &format!("rand_{seed}"));
        prop_assert!(validate_scenario(&desc).passed(), "{:?}", validate_scenario(&desc));
        let back = decode_scenario(&encode_scenario(&desc).unwrap()).unwrap();
        assert_bit_identical(&desc, &back);
    }
}

#[test]
fn rewriting_a_generated_scenario_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let desc = generate_scenario(&PgConfig::with_seed(0)).unwrap();
    let (a, b) = (dir.path().join("a.sif"), dir.path().join("b.sif"));
    write_scenario(&desc, &a).unwrap();
    write_scenario(&read_scenario(&a).unwrap(), &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn unknown_format_version_is_rejected() {
    let mut desc = common::straight_scenario("v", 10, 5.0);
    desc.format_version = "0.9".into();
    let bytes = encode_scenario(&desc).unwrap();
    assert!(matches!(decode_scenario(&bytes), Err(Error::UnsupportedVersion(v)) if v == "0.9"));
    assert!(!validate_scenario(&desc).passed());
}
