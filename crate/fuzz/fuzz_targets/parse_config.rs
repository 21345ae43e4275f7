#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = coa::config::parse_config(text) {
        let again = coa::config::parse_config(&coa::config::to_toml(&cfg)).expect("serialized config parses");
        assert_eq!(cfg, again);
    }
});
