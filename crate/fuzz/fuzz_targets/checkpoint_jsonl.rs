#![no_main]

use libfuzzer_sys::fuzz_target;
use tnpq::ensemble::Ensemble;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(e) = Ensemble::from_checkpoint_str(text) {
            let mut out = Vec::new();
            e.write_checkpoint(&mut out).unwrap();
            let back = Ensemble::from_checkpoint_str(std::str::from_utf8(&out).unwrap()).unwrap();
            assert_eq!(back.total_count(), e.total_count());
        }
    }
});
