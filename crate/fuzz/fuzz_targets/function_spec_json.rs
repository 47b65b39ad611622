#![no_main]
use envyprice_core::{CostFn, DemandFn};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = serde_json::from_slice::<DemandFn>(data) {
        let t = d.support();
        for x in [0.0, 0.5 * t, t] {
            assert!(d.value(x).is_finite());
        }
        let x = d.inverse(0.5 * d.peak());
        assert!((0.0..=t).contains(&x));
    }
    if let Ok(c) = serde_json::from_slice::<CostFn>(data) {
        let y = c.capacity().map_or(1.0, |cap| 0.5 * cap);
        assert!(c.marginal(y) >= c.marginal(0.0) - 1e-9 * c.marginal(y).abs().max(1.0));
    }
});
