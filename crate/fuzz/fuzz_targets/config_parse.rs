#![no_main]

use agz_cli::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = RunConfig::parse(text, &[]) {
        let dumped = config.to_toml();
        let again = RunConfig::parse(&dumped, &[]).expect("dumped config parses");
        assert_eq!(again, config);
    }
});
