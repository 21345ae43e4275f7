#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = coa::maxprinciple::parse_locality_csv(text) {
        let written = coa::maxprinciple::write_locality_csv(&rows);
        let again = coa::maxprinciple::parse_locality_csv(&written).expect("written CSV parses");
        assert_eq!(written, coa::maxprinciple::write_locality_csv(&again));
    }
});
