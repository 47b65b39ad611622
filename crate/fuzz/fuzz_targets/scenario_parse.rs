#![no_main]
use envyprice_cli::Scenario;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(sc) = Scenario::from_json(text) {
        // a parsed scenario must hash and re-parse to itself
        let again = Scenario::from_json(&serde_json::to_string(&sc).unwrap()).unwrap();
        assert_eq!(sc.hash(), again.hash());
    }
});
