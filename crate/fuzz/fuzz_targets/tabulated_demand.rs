#![no_main]
use envyprice_core::DemandFn;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let nums: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let points: Vec<[f64; 2]> = nums.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    if let Ok(d) = DemandFn::tabulated(points) {
        let t = d.support();
        let (hi, lo) = (d.peak(), d.floor());
        assert!(hi >= lo);
        for k in 0..=8 {
            let p = lo + (hi - lo) * k as f64 / 8.0;
            let x = d.inverse(p);
            assert!((0.0..=t).contains(&x));
            assert!(d.lower_inverse(p) <= x + 1e-9 * t.max(1.0));
        }
        let _ = d.check_mhr(64);
    }
});
