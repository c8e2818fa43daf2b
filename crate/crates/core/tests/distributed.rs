use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use knobtune::client::{self, ClientHandle, ClientOptions, ClientPhase};
use knobtune::domain::{decode_csv_row, Observation};
use knobtune::harness::{learn_offline, run_cluster, Evaluator, SimConfig, Synthetic, Workload};
use knobtune::knowledge::encode_payload;
use knobtune::protocol::{Connector, TcpBroker, TcpConnector};
use knobtune::server::{self, CsvStorage, MemoryStorage, Phase, ServerConfig};
use knobtune::ApplicationDescription;
use proptest::prelude::*;

const BEAT: Duration = Duration::from_millis(50);

fn options(id: &str) -> ClientOptions {
    ClientOptions {
        client_id: Some(id.into()),
        heartbeat: BEAT,
        retry: (Duration::from_millis(5), Duration::from_millis(100)),
        ..ClientOptions::default()
    }
}

/// Evaluates assignments until `stop` is set.
fn worker(h: Arc<ClientHandle>, ev: Evaluator, stop: Arc<AtomicBool>) -> thread::JoinHandle<()> {
    thread::spawn(move || {
        while !stop.load(Ordering::Relaxed) {
            match h.next_assignment() {
                Some(c) => {
                    thread::sleep(Duration::from_millis(2));
                    let (f, m) = ev.measure(&c);
                    h.report(&c, &f, &m);
                }
                None => thread::sleep(Duration::from_millis(5)),
            }
        }
    })
}

fn offline_payload(desc: &ApplicationDescription, w: &Workload, seed: u64) -> String {
    let run = learn_offline(desc, &w.evaluator(seed)).unwrap();
    encode_payload(desc, run.result.knowledge.as_ref().unwrap())
}

#[test]
fn clients_over_tcp_learn_what_offline_learns() {
    let w = Workload::synthetic(Synthetic::Binh, &["b1", "b2"]);
    let desc = w.configured(12, 2, 4, Some(1));
    let ev = w.evaluator(4);
    let broker = TcpBroker::bind("127.0.0.1:0").unwrap();
    let server = server::start(broker.broker(), Arc::new(MemoryStorage::new()), ServerConfig { heartbeat: BEAT }).unwrap();
    let addr = broker.local_addr().to_string();
    let stop = Arc::new(AtomicBool::new(false));
    let handles: Vec<Arc<ClientHandle>> = (0..2)
        .map(|i| {
            let connector: Arc<dyn Connector> = Arc::new(TcpConnector::new(&addr));
            Arc::new(client::start(desc.clone(), connector, options(&format!("tcp{i}"))).unwrap())
        })
        .collect();
    let threads: Vec<_> = handles.iter().map(|h| worker(h.clone(), ev.clone(), stop.clone())).collect();

    let status = server.wait_for_phase("binh", Phase::Serving, Duration::from_secs(60)).expect("knowledge");
    assert_eq!(status.observations, 24);
    for h in &handles {
        assert!(h.wait_until(Duration::from_secs(10), |h| h.phase() == ClientPhase::Serving));
    }
    stop.store(true, Ordering::Relaxed);
    threads.into_iter().for_each(|t| t.join().unwrap());

    let expected = offline_payload(&desc, &w, 4);
    for h in &handles {
        assert_eq!(h.knowledge_payload().as_deref().map(String::as_str), Some(expected.as_str()));
        h.stop();
    }
    server.shutdown();
    broker.shutdown();
}

#[test]
fn restarted_server_resumes_from_its_files() {
    let dir = tempfile::tempdir().unwrap();
    let w = Workload::synthetic(Synthetic::Kursawe, &["k1"]);
    let desc = w.configured(20, 1, 2, Some(1));
    let ev = w.evaluator(2);
    let broker = knobtune::protocol::Broker::new();
    let first = server::start(&broker, Arc::new(CsvStorage::new(dir.path())), ServerConfig { heartbeat: BEAT }).unwrap();
    let connector: Arc<dyn Connector> = Arc::new(broker.clone());
    let h = Arc::new(client::start(desc.clone(), connector, options("solo")).unwrap());

    // Evaluate part of the design, then lose the server.
    let mut done = 0;
    while done < 7 {
        match h.next_assignment() {
            Some(c) => {
                let (f, m) = ev.measure(&c);
                h.report(&c, &f, &m);
                done += 1;
            }
            None => thread::sleep(Duration::from_millis(5)),
        }
    }
    first
        .wait_for("kursawe", Duration::from_secs(10), |s| s.observations == 7)
        .expect("observations stored");
    first.shutdown();

    let second = server::start(&broker, Arc::new(CsvStorage::new(dir.path())), ServerConfig { heartbeat: BEAT }).unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let t = worker(h.clone(), ev.clone(), stop.clone());
    let status = second.wait_for_phase("kursawe", Phase::Serving, Duration::from_secs(60)).expect("knowledge");
    assert!(h.wait_until(Duration::from_secs(10), |h| h.phase() == ClientPhase::Serving));
    stop.store(true, Ordering::Relaxed);
    t.join().unwrap();

    assert_eq!(status.iteration, 1);
    assert!(status.observations >= 20);
    assert_eq!(h.knowledge_payload(), status.knowledge_payload);
    let knowledge = std::fs::read_to_string(dir.path().join("kursawe").join("knowledge.csv")).unwrap();
    assert_eq!(knowledge.lines().count(), 1 + 11 * 11 * 11);
    h.stop();
    second.shutdown();
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    /// Every design row is observed at least as many times as it asks for,
    /// however the work is split, and every client ends with the server's
    /// knowledge.
    #[test]
    fn observations_cover_the_design(clients in 1usize..5, reps in 1u32..4, seed in 0u64..1000, kill in proptest::option::of(0usize..4)) {
        let w = Workload::synthetic(Synthetic::Binh, &["b2"]);
        let desc = w.configured(8, reps, seed, Some(1));
        let cfg = SimConfig {
            clients,
            virtual_cost: Duration::from_millis(2),
            heartbeat: BEAT,
            kill_after: if clients > 1 { kill } else { None },
            late_joiner: true,
            timeout: Duration::from_secs(60),
        };
        let run = run_cluster(&desc, &w.evaluator(seed), &cfg).unwrap();
        prop_assert!(run.finished());
        let layout = desc.layout();
        let mut counts = HashMap::new();
        for line in run.storage.file("binh", "observations.csv").unwrap().lines().skip(1) {
            let o: Observation = decode_csv_row(line, &layout).unwrap();
            *counts.entry(o.config.key()).or_insert(0u32) += 1;
        }
        prop_assert_eq!(run.status.doe.len(), 8);
        for row in &run.status.doe {
            prop_assert!(counts.get(&row.config.key()).copied().unwrap_or(0) >= reps);
        }
        prop_assert_eq!(run.status.remaining, 0);
        for c in run.clients.iter().filter(|c| !c.killed) {
            prop_assert_eq!(&c.payload, &run.status.knowledge_payload);
        }
        if kill.is_none() {
            let expected = offline_payload(&desc, &w, seed);
            prop_assert_eq!(run.status.knowledge_payload.as_deref().map(String::as_str), Some(expected.as_str()));
        }
    }
}
