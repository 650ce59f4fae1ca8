#![no_main]

use libfuzzer_sys::fuzz_target;
use sellside::ingest::{read_assignments, DesignFile, VariantSpec};

fuzz_target!(|data: &[u8]| {
    let design = DesignFile {
        variants: vec![
            VariantSpec { label: "Off".into(), probability: 0.5, control: true },
            VariantSpec { label: "On".into(), probability: 0.5, control: false },
        ],
    };
    let _ = read_assignments(data, design);
});
