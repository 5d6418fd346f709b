//! Spot values of the Fourier frequency sequence.

use lcn4_core::encoding::FrequencySequence;

pub fn run() -> String {
    for n in [2, 4, 16, 64] {
        let f = FrequencySequence::new(n).unwrap();
        assert_eq!(f.values().len(), n);
        assert_eq!(f.values()[0], 1.0, "first term of N={n} is not exactly 1");
    }

    let f = FrequencySequence::new(64).unwrap();
    let direct = 1.0 / 10000f64.powf(1.0 / 32.0);
    let err = (f.values()[2] - direct).abs();
    assert!(err <= 1e-12, "f_64[2] = {} vs {direct}: error {err:e}", f.values()[2]);

    // Terms come in equal pairs and decrease pair to pair.
    for pair in f.values().chunks(2) {
        assert_eq!(pair[0], pair[1]);
    }
    for w in f.values().windows(3).step_by(2) {
        assert!(w[2] < w[0]);
    }
    assert!(FrequencySequence::new(1).is_err());

    format!("f_N[0] = 1 exactly, f_64[2] = {:.15} (error {err:.1e})", f.values()[2])
}
