#![no_main]

use fspnet::autodiff::checkpoint::{from_bytes, to_bytes};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // Anything that parses must survive a write/read cycle unchanged.
    if let Ok(store) = from_bytes(data) {
        let again = from_bytes(&to_bytes(&store)).expect("re-encoded checkpoint must parse");
        assert_eq!(to_bytes(&again), to_bytes(&store));
    }
});
