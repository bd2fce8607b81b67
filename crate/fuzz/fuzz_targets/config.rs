#![no_main]

use fspnet::training::{parse_kv, Stage, TrainConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(kv) = parse_kv(text) else { return };
    let mut cfg = TrainConfig::new(Stage::Decoder);
    if cfg.apply(&kv).is_ok() {
        // The echoed form of an accepted config reads back to the same config.
        let echoed = parse_kv(&cfg.to_kv()).expect("echoed config must parse");
        let mut back = TrainConfig::new(Stage::Decoder);
        back.apply(&echoed).expect("echoed config must apply");
        assert_eq!(back.to_kv(), cfg.to_kv());
    }
});
