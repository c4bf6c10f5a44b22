#![no_main]

use cavsqueeze_cli::config::{parse_config, to_toml};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = parse_config(text) {
        let _ = cfg.validate();
        let again = parse_config(&to_toml(&cfg)).expect("serialized config parses");
        assert_eq!(again, cfg);
    }
});
