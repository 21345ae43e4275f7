#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(dump) = coa::discretize::dump::parse_matrix_dump(text) {
        let again = coa::discretize::dump::parse_matrix_dump(&dump.to_text()).expect("written dump parses");
        assert_eq!(dump, again);
    }
});
