#![no_main]

use cavsqueeze_cli::table::parse_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(table) = parse_csv(text) {
        let back = parse_csv(&table.to_csv()).expect("written table parses");
        assert_eq!(back.header, table.header);
        assert_eq!(back.rows.len(), table.rows.len());
    }
});
