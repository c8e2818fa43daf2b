//! Round-robin assignment of outstanding evaluations to live clients.

use std::collections::{BTreeMap, HashMap};

use crate::domain::{ConfigKey, KnobConfig};

pub type Assignments = BTreeMap<String, Vec<KnobConfig>>;

/// Most evaluations one client may hold.
pub fn quota(tokens: usize, clients: usize) -> usize {
    if clients == 0 {
        0
    } else {
        tokens.div_ceil(clients)
    }
}

/// Deals `tokens` (one entry per outstanding evaluation) over `live`
/// clients.
///
/// Each client keeps as much of its `current` list as the tokens allow, up
/// to one evaluation over the quota: the front of a list may already be
/// running, and taking the evaluation after it away from a client about to
/// reach it only produces a duplicate. Revocations come off the back of a
/// list. The rest is dealt cyclically in token order over the clients sorted
/// by id, up to the quota. With no live client nothing is assigned.
pub fn dispatch(tokens: &[KnobConfig], current: &Assignments, live: &[String]) -> Assignments {
    let mut clients: Vec<&String> = live.iter().collect();
    clients.sort();
    clients.dedup();
    if clients.is_empty() {
        return Assignments::new();
    }
    let cap = quota(tokens.len(), clients.len());
    let mut available: HashMap<ConfigKey, usize> = HashMap::new();
    for t in tokens {
        *available.entry(t.key()).or_default() += 1;
    }
    let mut out: Assignments = clients.iter().map(|c| ((*c).clone(), Vec::new())).collect();
    for c in &clients {
        let Some(held) = current.get(*c) else { continue };
        let list = out.get_mut(*c).unwrap();
        for config in held {
            if list.len() == cap + 1 {
                break;
            }
            if let Some(n) = available.get_mut(&config.key()).filter(|n| **n > 0) {
                *n -= 1;
                list.push(config.clone());
            }
        }
    }
    let mut next = 0;
    for t in tokens {
        let n = available.get_mut(&t.key()).unwrap();
        if *n == 0 {
            continue;
        }
        *n -= 1;
        // Some client is below quota: kept lists above it hold tokens that
        // would otherwise be dealt here.
        while out[clients[next % clients.len()]].len() >= cap {
            next += 1;
        }
        out.get_mut(clients[next % clients.len()]).unwrap().push(t.clone());
        next += 1;
    }
    out
}

/// Expands `(config, count)` pairs into one token per evaluation, keeping
/// repetitions of a configuration adjacent.
pub fn expand(rows: impl IntoIterator<Item = (KnobConfig, u32)>) -> Vec<KnobConfig> {
    rows.into_iter()
        .flat_map(|(c, n)| std::iter::repeat_n(c, n as usize))
        .collect()
}

/// Run-length form of a list: adjacent equal configurations merged.
pub fn compress(list: &[KnobConfig]) -> Vec<(KnobConfig, u32)> {
    let mut out: Vec<(KnobConfig, u32)> = Vec::new();
    for c in list {
        match out.last_mut() {
            Some((last, n)) if last == c => *n += 1,
            _ => out.push((c.clone(), 1)),
        }
    }
    out
}
