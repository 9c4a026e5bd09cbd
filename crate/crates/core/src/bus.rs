//! In-process publish/subscribe bus connecting the controller, the simulation
//! orchestrator and the validator.

use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crossbeam_channel::{Receiver, Sender};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Topic names exchanged between the loop's components.
pub mod topics {
    pub const TRAJECTORY_READY: &str = "run.trajectory_ready";
    pub const MEASURED_READY: &str = "run.measured_ready";
    pub const SIMULATION_COMPLETED: &str = "run.simulation_completed";
    pub const VERDICT: &str = "run.verdict";
    pub const PARAMS_UPDATED: &str = "twin.params_updated";
}

pub const DEFAULT_QUEUE_BOUND: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub topic: String,
    pub payload: Value,
    /// Wall-clock seconds since the Unix epoch.
    pub emitted_at: f64,
}

/// A dotted topic filter; `*` matches exactly one segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicPattern {
    segments: Vec<String>,
}

impl TopicPattern {
    pub fn parse(pattern: &str) -> Result<Self> {
        let segments: Vec<String> = pattern.split('.').map(str::to_owned).collect();
        let bad = segments
            .iter()
            .any(|s| s.is_empty() || (s.contains('*') && s != "*") || s.chars().any(char::is_whitespace));
        if pattern.is_empty() || bad {
            return Err(Error::Config(format!("invalid topic pattern `{pattern}`")));
        }
        Ok(TopicPattern { segments })
    }

    pub fn matches(&self, topic: &str) -> bool {
        let mut parts = topic.split('.');
        for seg in &self.segments {
            match parts.next() {
                Some(p) if seg == "*" || seg == p => {}
                _ => return false,
            }
        }
        parts.next().is_none()
    }
}

fn validate_topic(topic: &str) -> Result<()> {
    let pattern = TopicPattern::parse(topic)?;
    if pattern.segments.iter().any(|s| s == "*") {
        return Err(Error::Config(format!("cannot publish to wildcard topic `{topic}`")));
    }
    Ok(())
}

struct Subscriber {
    id: u64,
    pattern: TopicPattern,
    tx: Sender<Event>,
}

struct State {
    open: bool,
    next_seq: u64,
    next_id: u64,
    subscribers: Vec<Subscriber>,
}

struct Inner {
    state: Mutex<State>,
    queue_bound: usize,
}

impl Inner {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn remove(&self, id: u64) {
        self.lock().subscribers.retain(|s| s.id != id);
    }
}

/// Cheap to clone; all clones share the same subscribers and sequence.
#[derive(Clone)]
pub struct EventBus {
    inner: Arc<Inner>,
}

impl Default for EventBus {
    fn default() -> Self {
        EventBus::with_queue_bound(DEFAULT_QUEUE_BOUND)
    }
}

impl std::fmt::Debug for EventBus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let state = self.inner.lock();
        f.debug_struct("EventBus")
            .field("open", &state.open)
            .field("subscribers", &state.subscribers.len())
            .field("next_seq", &state.next_seq)
            .finish()
    }
}

impl EventBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_queue_bound(queue_bound: usize) -> Self {
        EventBus {
            inner: Arc::new(Inner {
                state: Mutex::new(State {
                    open: true,
                    next_seq: 1,
                    next_id: 0,
                    subscribers: Vec::new(),
                }),
                queue_bound: queue_bound.max(1),
            }),
        }
    }

    /// Delivers to every matching subscriber and returns the event's sequence
    /// number. If any matching queue is full nothing is delivered.
    pub fn publish(&self, topic: &str, payload: Value) -> Result<u64> {
        validate_topic(topic)?;
        let mut state = self.inner.lock();
        if !state.open {
            return Err(Error::Closed);
        }
        let targets: Vec<&Subscriber> = state.subscribers.iter().filter(|s| s.pattern.matches(topic)).collect();
        if targets.iter().any(|s| s.tx.len() >= self.inner.queue_bound) {
            return Err(Error::QueueFull { topic: topic.to_owned() });
        }
        let event = Event {
            seq: state.next_seq,
            topic: topic.to_owned(),
            payload,
            emitted_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64()),
        };
        for s in targets {
            // A dropped receiver only means that subscriber is going away.
            let _ = s.tx.send(event.clone());
        }
        state.next_seq += 1;
        Ok(event.seq)
    }

    pub fn subscribe(&self, pattern: &str) -> Result<Subscription> {
        let pattern = TopicPattern::parse(pattern)?;
        let mut state = self.inner.lock();
        if !state.open {
            return Err(Error::Closed);
        }
        let (tx, rx) = crossbeam_channel::unbounded();
        let id = state.next_id;
        state.next_id += 1;
        state.subscribers.push(Subscriber { id, pattern, tx });
        Ok(Subscription {
            id,
            rx,
            bus: Arc::clone(&self.inner),
        })
    }

    /// Rejects further publishes and drops every subscriber's sender.
    pub fn close(&self) {
        let mut state = self.inner.lock();
        state.open = false;
        state.subscribers.clear();
    }

    pub fn is_open(&self) -> bool {
        self.inner.lock().open
    }
}

/// Receiving end of a subscription. Dropping it unsubscribes.
pub struct Subscription {
    id: u64,
    rx: Receiver<Event>,
    bus: Arc<Inner>,
}

impl Subscription {
    pub fn try_recv(&self) -> Option<Event> {
        self.rx.try_recv().ok()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Event> {
        self.rx.recv_timeout(timeout).ok()
    }

    /// Everything queued so far, oldest first.
    pub fn drain(&self) -> Vec<Event> {
        self.rx.try_iter().collect()
    }

    pub fn unsubscribe(self) {}
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.bus.remove(self.id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn publish_without_subscribers() {
        let bus = EventBus::new();
        assert_eq!(bus.publish(topics::VERDICT, json!({})).unwrap(), 1);
        assert_eq!(bus.publish(topics::VERDICT, json!({})).unwrap(), 2);
    }

    #[test]
    fn fan_out_is_identical() {
        let bus = EventBus::new();
        let (a, b) = (bus.subscribe("run.verdict").unwrap(), bus.subscribe("run.verdict").unwrap());
        bus.publish("run.verdict", json!({"run_id": 3})).unwrap();
        let (ea, eb) = (a.try_recv().unwrap(), b.try_recv().unwrap());
        assert_eq!(ea, eb);
        assert_eq!(ea.payload["run_id"], 3);
    }

    #[test]
    fn wildcard_and_exact_matching() {
        let bus = EventBus::new();
        let all = bus.subscribe("run.*").unwrap();
        let exact = bus.subscribe("run.verdict").unwrap();
        bus.publish(topics::VERDICT, json!(1)).unwrap();
        bus.publish(topics::MEASURED_READY, json!(2)).unwrap();
        bus.publish(topics::PARAMS_UPDATED, json!(3)).unwrap();
        let topics_seen: Vec<_> = all.drain().into_iter().map(|e| e.topic).collect();
        assert_eq!(topics_seen, vec!["run.verdict", "run.measured_ready"]);
        assert_eq!(exact.drain().len(), 1);
        assert!(!TopicPattern::parse("run.*").unwrap().matches("run.verdict.extra"));
    }

    #[test]
    fn invalid_patterns() {
        let bus = EventBus::new();
        for p in ["", "run..x", "run.ver*", "run. x"] {
            assert!(matches!(bus.subscribe(p), Err(Error::Config(_))), "{p}");
        }
        assert!(bus.publish("run.*", json!(null)).is_err());
    }

    #[test]
    fn unsubscribe_stops_delivery() {
        let bus = EventBus::new();
        let sub = bus.subscribe("run.*").unwrap();
        let probe = bus.subscribe("run.*").unwrap();
        sub.unsubscribe();
        bus.publish(topics::VERDICT, json!(null)).unwrap();
        assert_eq!(probe.drain().len(), 1);
        assert!(format!("{bus:?}").contains("subscribers: 1"));
    }

    #[test]
    fn closed_bus_rejects() {
        let bus = EventBus::new();
        bus.close();
        assert!(matches!(bus.publish(topics::VERDICT, json!(null)), Err(Error::Closed)));
        assert!(bus.subscribe("run.*").is_err());
    }

    #[test]
    fn overflow_is_an_error_not_a_drop() {
        let bus = EventBus::with_queue_bound(2);
        let sub = bus.subscribe("run.verdict").unwrap();
        bus.publish(topics::VERDICT, json!(1)).unwrap();
        bus.publish(topics::VERDICT, json!(2)).unwrap();
        assert!(matches!(bus.publish(topics::VERDICT, json!(3)), Err(Error::QueueFull { .. })));
        assert_eq!(sub.drain().len(), 2);
        bus.publish(topics::VERDICT, json!(4)).unwrap();
        assert_eq!(sub.try_recv().unwrap().payload, json!(4));
    }

    #[test]
    fn ordering_sweep() {
        let bus = EventBus::new();
        let sub = bus.subscribe("twin.*").unwrap();
        let seqs: Vec<u64> = (0..1000)
            .map(|i| bus.publish(topics::PARAMS_UPDATED, json!(i)).unwrap())
            .collect();
        let got: Vec<u64> = sub.drain().into_iter().map(|e| e.seq).collect();
        assert_eq!(got, seqs);
        assert!(got.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn concurrent_publishers_keep_per_topic_order() {
        let bus = EventBus::new();
        let sub = bus.subscribe("run.*").unwrap();
        std::thread::scope(|s| {
            for topic in [topics::VERDICT, topics::MEASURED_READY] {
                let bus = bus.clone();
                s.spawn(move || {
                    for i in 0..200 {
                        bus.publish(topic, json!(i)).unwrap();
                    }
                });
            }
        });
        let events = sub.drain();
        assert_eq!(events.len(), 400);
        for topic in [topics::VERDICT, topics::MEASURED_READY] {
            let vals: Vec<i64> = events
                .iter()
                .filter(|e| e.topic == topic)
                .map(|e| e.payload.as_i64().unwrap())
                .collect();
            assert_eq!(vals, (0..200).collect::<Vec<_>>());
        }
    }
}
