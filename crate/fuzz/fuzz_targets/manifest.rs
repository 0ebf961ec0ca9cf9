#![no_main]

use libfuzzer_sys::fuzz_target;
use urbancf::io::{read_manifest, write_manifest};

fuzz_target!(|data: &[u8]| {
    let Ok(manifest) = read_manifest(data) else {
        return;
    };
    let mut text = Vec::new();
    if write_manifest(&manifest, &mut text).is_ok() {
        let again = read_manifest(text.as_slice()).expect("written manifest parses");
        assert_eq!(again.entries.len(), manifest.entries.len());
    }
});
