#![no_main]

use emergescope_core::heatmap::{decode, encode};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(grid) = decode(data) {
        // accepted inputs are canonical
        assert_eq!(encode(&grid), data);
    }
});
