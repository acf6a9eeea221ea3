#![no_main]

use emergescope_core::link::TrackFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = TrackFile::parse(data);
});
