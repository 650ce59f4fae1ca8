#![no_main]

use libfuzzer_sys::fuzz_target;
use sellside::ingest::{read_events, EventFilter};

fuzz_target!(|data: &[u8]| {
    let filter = EventFilter::new(["view", "favorite"]).unwrap();
    if let Ok(parsed) = read_events(data, &filter) {
        // whatever survives must be in the requested kinds
        assert!(parsed.events.iter().all(|e| filter.kinds().contains(&e.event_kind)));
    }
});
