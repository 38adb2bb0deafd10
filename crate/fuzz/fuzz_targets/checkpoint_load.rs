#![no_main]

use agz_core::training::{checkpoint, models_from_bytes};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((meta, tensors)) = checkpoint::decode(data) {
        // Anything the decoder accepts is in canonical form.
        let refs: Vec<(String, _)> = tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
        assert_eq!(checkpoint::encode(&meta, &refs), data);
    }
    let _ = models_from_bytes(data);
});
