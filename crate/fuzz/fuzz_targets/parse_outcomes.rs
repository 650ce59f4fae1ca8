#![no_main]

use libfuzzer_sys::fuzz_target;
use sellside::ingest::{read_outcomes, write_outcomes};

fuzz_target!(|data: &[u8]| {
    let Ok(table) = read_outcomes(data) else { return };
    let mut buf = Vec::new();
    write_outcomes(&mut buf, &table).unwrap();
    assert_eq!(read_outcomes(buf.as_slice()).unwrap(), table);
});
