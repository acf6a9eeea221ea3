#![no_main]

use emergescope_core::ingest::{read_points, write_points};
use libfuzzer_sys::fuzz_target;

// Whatever parses must survive a write/read cycle unchanged.
fuzz_target!(|data: &[u8]| {
    for dims in 1..=3 {
        let Ok(ds) = read_points(data, dims) else { continue };
        let mut buf = Vec::new();
        write_points(&ds, &mut buf).expect("writing parsed points");
        let back = read_points(buf.as_slice(), dims).expect("re-reading written points");
        assert_eq!(back, ds);
    }
});
