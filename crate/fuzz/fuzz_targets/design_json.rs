#![no_main]

use libfuzzer_sys::fuzz_target;
use sellside::ingest::{AssignmentTable, DesignFile};

fuzz_target!(|data: &[u8]| {
    let Ok(design) = serde_json::from_slice::<DesignFile>(data) else { return };
    if design.validate().is_ok() {
        AssignmentTable::new(design).expect("validated design was rejected");
    }
});
