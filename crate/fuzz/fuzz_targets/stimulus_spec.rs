#![no_main]

use agz_core::stimulus::{parse_procedural_spec, StimulusSet};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = std::str::from_utf8(data) else { return };
    match parse_procedural_spec(spec) {
        Ok(Some((count, seed))) => {
            assert!(count > 0);
            assert_eq!(parse_procedural_spec(&format!("procedural:{count}:{seed}")).unwrap(), Some((count, seed)));
            // Generating textures is slow; only build tiny sets.
            if count <= 1 {
                let set = StimulusSet::from_spec(spec, 256).expect("valid spec builds");
                assert_eq!(set.len(), count);
            }
        }
        Ok(None) => assert!(!spec.starts_with("procedural:")),
        Err(_) => assert!(spec.starts_with("procedural:")),
    }
});
