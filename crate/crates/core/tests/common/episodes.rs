//! Episode drivers shared by the bridge tests and the acceptance run.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfb_core::bridge::{BridgeConfig, BridgeServer, ScenarioProvider, SessionLog};
use sfb_core::scenario::ScenarioDescription;
use sfb_core::sim::{Action, SimConfig, Termination, World};

pub fn serve(scenarios: Vec<ScenarioDescription>, sim: SimConfig) -> (SocketAddr, Arc<Mutex<Vec<SessionLog>>>) {
    let provider: BTreeMap<String, Arc<ScenarioDescription>> =
        scenarios.into_iter().map(|s| (s.scenario_id.clone(), Arc::new(s))).collect();
    let provider: Arc<dyn ScenarioProvider> = Arc::new(provider);
    let server = BridgeServer::bind(
        "127.0.0.1:0",
        provider,
        BridgeConfig {
            sim,
            timeout: Duration::from_secs(10),
        },
    )
    .unwrap();
    let addr = server.local_addr().unwrap();
    let logs = server.session_logs();
    server.spawn();
    (addr, logs)
}

pub fn wait_for_log(logs: &Mutex<Vec<SessionLog>>, n: usize) -> Vec<SessionLog> {
    for _ in 0..250 {
        let l = logs.lock().unwrap();
        if l.len() >= n {
            return l.clone();
        }
        drop(l);
        thread::sleep(Duration::from_millis(20));
    }
    panic!("session logs never appeared");
}

/// Per-tick fingerprint of an episode: every float as raw bits.
pub type Trace = Vec<Vec<u64>>;

pub fn fingerprint(rewards: &BTreeMap<String, f64>, info: &BTreeMap<String, sfb_core::sim::AgentInfo>, obs: Option<&Vec<f64>>) -> Vec<u64> {
    let mut v: Vec<u64> = rewards.values().map(|r| r.to_bits()).collect();
    for i in info.values() {
        v.extend([i.x, i.y, i.heading, i.speed, i.route_completion, i.lateral].map(f64::to_bits));
    }
    if let Some(o) = obs {
        v.extend(o.iter().map(|x| x.to_bits()));
    }
    v
}

/// A wandering expert: smooth random steering with mild throttle.
pub fn expert_log(seed: u64, len: usize) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steer: f64 = 0.0;
    (0..len)
        .map(|_| {
            steer = (steer + rng.gen_range(-0.05..0.05)).clamp(-0.3, 0.3);
            [steer, rng.gen_range(-0.2..0.6)]
        })
        .collect()
}

pub fn in_process(desc: &ScenarioDescription, sim: &SimConfig, log: &[[f64; 2]]) -> (Trace, Termination) {
    let ego = desc.metadata.sdc_id.clone();
    let (mut w, _) = World::reset(Arc::new(desc.clone()), sim.clone()).unwrap();
    let mut trace = Vec::new();
    let mut k = 0;
    while !w.done() {
        let [s, a] = log[k];
        k += 1;
        let r = w.step(&BTreeMap::from([(ego.clone(), Action::new(s, a))])).unwrap();
        trace.push(fingerprint(&r.rewards, &r.info, r.observations.get(&ego)));
    }
    (trace, w.check_termination(&ego).unwrap())
}
