use levlab::sensor::{
    fit_calibration, quantize, synthetic_voltage, voltage_to_distance, CalPoint, CalibrationTable, SensorModel,
};
use proptest::prelude::*;

/// Random strictly monotone tables, rising or falling.
fn table() -> impl Strategy<Value = CalibrationTable> {
    (
        prop::collection::vec((1e-4..5e-3f64, 1e-3..1.0f64), 4..12),
        any::<bool>(),
        0.0..3.0f64,
    )
        .prop_map(|(steps, rising, v0)| {
            let (mut d, mut v) = (0.002, v0);
            let mut pts = Vec::new();
            for (dd, dv) in steps {
                pts.push(CalPoint { voltage: v, distance: d });
                d += dd;
                v += if rising { dv } else { -dv };
            }
            CalibrationTable::new(pts).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn passes_through_knots(t in table()) {
        let f = fit_calibration(&t);
        for p in t.points() {
            prop_assert!((f.eval(p.distance) - p.voltage).abs() <= 1e-12 * (1.0 + p.voltage.abs()));
        }
    }

    #[test]
    fn derivative_keeps_its_sign(t in table()) {
        let f = fit_calibration(&t);
        let rising = t.points()[1].voltage > t.points()[0].voltage;
        let (lo, hi) = f.span();
        for k in 0..=2000 {
            let x = lo + (hi - lo) * k as f64 / 2000.0;
            let d = f.derivative(x);
            prop_assert!(if rising { d >= -1e-9 } else { d <= 1e-9 }, "slope {d} at {x}");
        }
    }

    #[test]
    fn readout_inverts_the_fit(t in table(), frac in prop::collection::vec(0.0..1.0f64, 100)) {
        let model = SensorModel::new(t, 0.02, 1.8).unwrap();
        let (lo, hi) = model.interpolant().span();
        for f in frac {
            let d = lo + (hi - lo) * f;
            let r = voltage_to_distance(&model, model.distance_to_voltage(d));
            prop_assert!((r.distance - d).abs() <= 1e-6, "{d} read back as {}", r.distance);
        }
    }

    #[test]
    fn quantize_is_idempotent(v in -10.0..10.0f64, res in 1e-4..0.5f64) {
        let model = SensorModel::new(CalibrationTable::synthetic_default(), res, 1.8).unwrap();
        let q = quantize(&model, v);
        prop_assert_eq!(quantize(&model, q), q);
        prop_assert!((q - v).abs() <= 0.5 * res * (1.0 + 1e-12));
    }
}

#[test]
fn default_table_tracks_the_stand_in_law() {
    let model = SensorModel::default_model();
    let (lo, hi) = model.interpolant().span();
    let worst = (0..=1000)
        .map(|k| lo + (hi - lo) * k as f64 / 1000.0)
        .map(|d| (model.distance_to_voltage(d) - synthetic_voltage(d)).abs() / synthetic_voltage(d))
        .fold(0.0, f64::max);
    assert!(worst < 0.01, "worst relative fit error {worst}");
}
