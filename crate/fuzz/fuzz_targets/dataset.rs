#![no_main]

use fspnet::dataset::{from_bytes, to_bytes};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = from_bytes(data) {
        let bytes = to_bytes(&ds);
        let again = from_bytes(&bytes).expect("re-encoded dataset must parse");
        assert_eq!(to_bytes(&again), bytes);
    }
});
