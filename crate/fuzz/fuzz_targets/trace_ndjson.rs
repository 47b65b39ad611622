#![no_main]
use envyprice_core::ascent::{AscendTrace, TraceEvent};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(events) = AscendTrace::parse_ndjson(text) {
        let trace = AscendTrace { events, ..Default::default() };
        let again: Vec<TraceEvent> = AscendTrace::parse_ndjson(&trace.to_ndjson()).unwrap();
        assert_eq!(again.len(), trace.events.len());
    }
});
