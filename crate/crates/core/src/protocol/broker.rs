use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use crossbeam_channel::{unbounded, Receiver, Sender};
use parking_lot::Mutex;

use super::{topic_matches, Connector, Link, Message, ProtocolError};

#[derive(Default)]
struct Inner {
    next_id: u64,
    links: HashMap<u64, Sender<Message>>,
    subscriptions: Vec<(u64, String)>,
    unavailable: bool,
}

/// In-process broker. Cloning shares the broker.
///
/// Delivery happens inside `publish` under one lock, so messages from one
/// publisher reach every subscriber in publication order.
#[derive(Clone, Default)]
pub struct Broker {
    inner: Arc<Mutex<Inner>>,
}

impl Broker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Simulates an outage: while unavailable, connecting and publishing
    /// fail. Existing links and subscriptions survive.
    pub fn set_available(&self, available: bool) {
        self.inner.lock().unavailable = !available;
    }

    pub fn is_available(&self) -> bool {
        !self.inner.lock().unavailable
    }

    pub fn subscription_count(&self) -> usize {
        self.inner.lock().subscriptions.len()
    }

    fn publish_from(&self, msg: Message) -> Result<(), ProtocolError> {
        let inner = self.inner.lock();
        if inner.unavailable {
            return Err(ProtocolError::Unavailable);
        }
        let targets: BTreeSet<u64> = inner
            .subscriptions
            .iter()
            .filter(|(_, p)| topic_matches(p, &msg.topic))
            .map(|(id, _)| *id)
            .collect();
        for id in targets {
            if let Some(tx) = inner.links.get(&id) {
                let _ = tx.send(msg.clone());
            }
        }
        Ok(())
    }
}

impl Connector for Broker {
    fn connect(&self) -> Result<Box<dyn Link>, ProtocolError> {
        let mut inner = self.inner.lock();
        if inner.unavailable {
            return Err(ProtocolError::Unavailable);
        }
        let id = inner.next_id;
        inner.next_id += 1;
        let (tx, rx) = unbounded();
        inner.links.insert(id, tx);
        Ok(Box::new(InProcLink {
            broker: self.clone(),
            id,
            rx,
            closed: AtomicBool::new(false),
        }))
    }
}

struct InProcLink {
    broker: Broker,
    id: u64,
    rx: Receiver<Message>,
    closed: AtomicBool,
}

impl InProcLink {
    fn check(&self) -> Result<(), ProtocolError> {
        if self.closed.load(Ordering::Acquire) {
            Err(ProtocolError::Closed)
        } else {
            Ok(())
        }
    }
}

impl Link for InProcLink {
    fn subscribe(&self, pattern: &str) -> Result<(), ProtocolError> {
        self.check()?;
        let mut inner = self.broker.inner.lock();
        if inner.unavailable {
            return Err(ProtocolError::Unavailable);
        }
        if !inner.subscriptions.iter().any(|(id, p)| *id == self.id && p == pattern) {
            inner.subscriptions.push((self.id, pattern.to_string()));
        }
        Ok(())
    }

    fn unsubscribe(&self, pattern: &str) -> Result<(), ProtocolError> {
        self.check()?;
        self.broker
            .inner
            .lock()
            .subscriptions
            .retain(|(id, p)| !(*id == self.id && p == pattern));
        Ok(())
    }

    fn publish(&self, msg: Message) -> Result<(), ProtocolError> {
        self.check()?;
        self.broker.publish_from(msg)
    }

    fn incoming(&self) -> &Receiver<Message> {
        &self.rx
    }

    fn close(&self) {
        if self.closed.swap(true, Ordering::AcqRel) {
            return;
        }
        let mut inner = self.broker.inner.lock();
        inner.subscriptions.retain(|(id, _)| *id != self.id);
        inner.links.remove(&self.id);
    }
}

impl Drop for InProcLink {
    fn drop(&mut self) {
        self.close();
    }
}
