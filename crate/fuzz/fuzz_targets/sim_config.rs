#![no_main]

use libfuzzer_sys::fuzz_target;
use sellside::simulator::SimConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // Parsing validates; a config that parses must survive a round trip.
    if let Ok(config) = SimConfig::from_json(text) {
        let again = SimConfig::from_json(&serde_json::to_string(&config).unwrap()).unwrap();
        assert_eq!(again, config);
    }
});
