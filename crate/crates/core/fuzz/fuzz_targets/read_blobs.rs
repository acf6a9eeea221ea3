#![no_main]

use emergescope_core::blob::{read_blobs, write_blobs};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(blobs) = read_blobs(data) else { return };
    let mut buf = Vec::new();
    write_blobs(&blobs, &mut buf).expect("writing parsed blobs");
    assert_eq!(read_blobs(buf.as_slice()).expect("re-reading blobs"), blobs);
});
