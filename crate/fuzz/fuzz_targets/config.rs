#![no_main]

use libfuzzer_sys::fuzz_target;
use urbancf::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = RunConfig::from_text(text) else {
        return;
    };
    let printed = cfg.to_text();
    let again = RunConfig::from_text(&printed).expect("printed config parses");
    assert_eq!(again.to_text(), printed);
});
