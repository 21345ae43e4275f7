#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = coa::convergence::parse_convergence_csv(text) {
        let written = coa::convergence::write_convergence_csv(&rows);
        let again = coa::convergence::parse_convergence_csv(&written).expect("written CSV parses");
        assert_eq!(written, coa::convergence::write_convergence_csv(&again));
    }
});
