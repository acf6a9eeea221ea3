#![no_main]

use emergescope_core::assign::SeatTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = SeatTable::parse(data);
});
