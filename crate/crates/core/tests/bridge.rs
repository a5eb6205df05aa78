mod common;

use std::collections::BTreeMap;
use std::net::SocketAddr;

use common::episodes::{expert_log, fingerprint, in_process, serve, wait_for_log};
use sfb_core::bridge::{codes, BridgeClient, Message};
use sfb_core::pg::{generate_scenario, PgConfig};
use sfb_core::sim::{SimConfig, Termination};

#[test]
fn replayed_action_log_matches_in_process_run() {
    let desc = generate_scenario(&PgConfig::with_seed(3)).unwrap();
    let id = desc.scenario_id.clone();
    let ego = desc.metadata.sdc_id.clone();
    let sim = SimConfig::single();
    let log = expert_log(11, 400);
    let (expected, term) = in_process(&desc, &sim, &log);
    assert!(!expected.is_empty());

    let (addr, logs) = serve(vec![desc], sim);
    let mut c = BridgeClient::connect(addr).unwrap();
    assert_eq!(c.hello().unwrap(), vec![id.clone()]);
    let Message::Observation { tick, .. } = c.reset(Some(&id)).unwrap() else { panic!() };
    assert_eq!(tick, 0);
    let mut got = Vec::new();
    let mut tick = 0;
    loop {
        let step = c.step(tick, BTreeMap::from([(ego.clone(), log[tick])])).unwrap();
        let Message::Result { tick: t, rewards, info, done, terminations, .. } = step.result else { panic!() };
        assert_eq!(t, tick + 1);
        let obs = match &step.observation {
            Some(Message::Observation { observations, .. }) => observations.get(&ego).cloned(),
            None => None,
            other => panic!("{other:?}"),
        };
        // The final step carries no further observation on the wire.
        let mut fp = fingerprint(&rewards, &info, obs.as_ref());
        if done {
            fp.truncate(expected[tick].len().min(fp.len()));
            assert_eq!(terminations[&ego], term);
        }
        got.push(fp);
        tick = t;
        if done {
            break;
        }
    }
    assert_eq!(got.len(), expected.len());
    for (k, (g, e)) in got.iter().zip(&expected).enumerate() {
        assert_eq!(&g[..], &e[..g.len()], "tick {k}");
    }
    c.bye().unwrap();
    let logs = wait_for_log(&logs, 1);
    assert_eq!(logs[0].close_reason, "bye");
    assert_eq!(logs[0].episodes[0].ticks, expected.len());
}

#[test]
fn idle_client_times_out_the_episode() {
    let n = 30;
    let mut desc = common::straight_scenario("idle", n, 5.0);
    desc.tracks.get_mut("ego").unwrap().velocity[0] = [0.0, 0.0];
    let (addr, _) = serve(vec![desc], SimConfig::single());
    let mut c = BridgeClient::connect(addr).unwrap();
    c.hello().unwrap();
    c.reset(None).unwrap();
    let mut results = 0;
    let mut tick = 0;
    loop {
        let step = c.step(tick, BTreeMap::from([("ego".to_string(), [0.0, 0.0])])).unwrap();
        let Message::Result { tick: t, done, terminations, .. } = step.result else { panic!() };
        results += 1;
        tick = t;
        if done {
            assert_eq!(terminations["ego"], Termination::Timeout);
            break;
        }
    }
    assert_eq!(tick, n + 50);
    assert_eq!(results, tick);
}

fn greeted_client(addr: SocketAddr) -> BridgeClient {
    let mut c = BridgeClient::connect(addr).unwrap();
    c.hello().unwrap();
    c.reset(None).unwrap();
    c
}

fn expect_error_close(c: &mut BridgeClient, code: &str, prefix: &str) {
    match c.recv().unwrap() {
        Some(Message::Error { code: got, message }) => {
            assert_eq!(got, code);
            assert!(message.starts_with(prefix), "{message}");
        }
        other => panic!("expected error, got {other:?}"),
    }
    assert_eq!(c.recv().unwrap(), None);
}

#[test]
fn protocol_violations_close_the_session() {
    let (addr, logs) = serve(vec![common::straight_scenario("p", 40, 5.0)], SimConfig::single());

    let mut c = greeted_client(addr);
    c.send_line("{this is not json").unwrap();
    expect_error_close(&mut c, codes::MALFORMED, "malformed line");

    let mut c = greeted_client(addr);
    c.step(0, BTreeMap::new()).unwrap();
    c.send(&Message::Action {
        tick: 0,
        actions: BTreeMap::new(),
    })
    .unwrap();
    expect_error_close(&mut c, codes::STALE_TICK, "stale tick");

    let mut c = greeted_client(addr);
    c.send(&Message::Action {
        tick: 5,
        actions: BTreeMap::new(),
    })
    .unwrap();
    expect_error_close(&mut c, codes::TICK_MISMATCH, "tick mismatch");

    let mut c = BridgeClient::connect(addr).unwrap();
    c.send(&Message::Reset { scenario_id: None }).unwrap();
    expect_error_close(&mut c, codes::UNEXPECTED, "expected hello");

    let logs = wait_for_log(&logs, 4);
    let mut reasons: Vec<&str> = logs.iter().map(|l| l.close_reason.as_str()).collect();
    reasons.sort();
    assert_eq!(reasons, vec![codes::MALFORMED, codes::STALE_TICK, codes::TICK_MISMATCH, codes::UNEXPECTED]);
    for l in &logs {
        assert!(l.episodes.iter().all(|e| e.aborted));
    }
}
