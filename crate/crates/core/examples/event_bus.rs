//! Pipeline stages talking over the in-process bus: one subscriber sees every
//! run event, another only twin updates.
//!
//! cargo run --example event_bus

use serde_json::json;
use twinwatch::bus::{topics, EventBus};

fn main() -> twinwatch::Result<()> {
    let bus = EventBus::with_queue_bound(4);
    let runs = bus.subscribe("run.*")?;
    let twin = bus.subscribe(topics::PARAMS_UPDATED)?;

    for run_id in 1..=2 {
        bus.publish(topics::TRAJECTORY_READY, json!({ "run_id": run_id }))?;
        bus.publish(topics::MEASURED_READY, json!({ "run_id": run_id }))?;
    }
    bus.publish(topics::PARAMS_UPDATED, json!({ "param": "v_max_mps", "new": 0.255 }))?;

    for e in runs.drain() {
        println!("[runs] #{} {} {}", e.seq, e.topic, e.payload);
    }
    for e in twin.drain() {
        println!("[twin] #{} {} {}", e.seq, e.topic, e.payload);
    }

    // A subscriber that falls behind makes the publisher fail loudly.
    for run_id in 3..=10 {
        if let Err(e) = bus.publish(topics::VERDICT, json!({ "run_id": run_id })) {
            println!("publish of run {run_id} refused: {e}");
            break;
        }
    }
    Ok(())
}
