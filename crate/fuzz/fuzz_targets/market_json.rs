#![no_main]
use envyprice_core::MarketInstance;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = serde_json::from_slice::<MarketInstance>(data) {
        let back: MarketInstance = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back.num_buyers(), m.num_buyers());
        assert_eq!(back.edges(), m.edges());
        let prices = vec![m.max_peak() * 0.5; m.num_items()];
        let _ = m.best_response(&prices);
    }
});
