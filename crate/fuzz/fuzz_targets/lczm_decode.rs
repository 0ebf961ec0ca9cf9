#![no_main]

use libfuzzer_sys::fuzz_target;
use urbancf::io::{decode_tensors, encode_tensors};

fuzz_target!(|data: &[u8]| {
    let Ok(set) = decode_tensors(data) else {
        return;
    };
    let mut bytes = Vec::new();
    encode_tensors(&set, &mut bytes).unwrap();
    let again = decode_tensors(&bytes).expect("re-encoded model decodes");
    assert_eq!(again.tensors.len(), set.tensors.len());
});
