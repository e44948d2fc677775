use gestalt_demo::{edge_tuning_curve, render_stimulus, render_trajectory, KINDS};

#[test]
fn every_kind_renders_and_scrambles_keep_pixels() {
    for kind in KINDS {
        let plain = render_stimulus(kind, 3, "none", 16).unwrap();
        assert_eq!(plain.rgba().len(), 224 * 224 * 4);
        let info: serde_json::Value = serde_json::from_str(&plain.info()).unwrap();
        assert!(info["objects"].as_u64().unwrap() >= 1);
        for s in ["orientation", "location"] {
            let r = render_stimulus(kind, 3, s, 16).unwrap();
            let mut a = plain.rgba();
            let mut b = r.rgba();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b, "{kind}/{s}");
        }
    }
    assert_eq!(render_stimulus("blob", 9, "none", 32), render_stimulus("blob", 9, "none", 32));
    assert!(render_stimulus("cube", 1, "none", 16).is_err());
    assert!(render_stimulus("blob", 1, "shuffle", 16).is_err());
}

#[test]
fn zero_shift_frame_is_the_stimulus() {
    let base = render_stimulus("curve", 5, "none", 16).unwrap();
    let f = render_trajectory("curve", 5, 16, 2, 0, false).unwrap();
    assert_eq!(f.rgba(), base.rgba());
    let c = render_trajectory("curve", 5, 16, 2, 0, true).unwrap();
    let info: serde_json::Value = serde_json::from_str(&c.info()).unwrap();
    assert!(matches!(info["rotation_degrees"].as_u64(), Some(90 | 270)));
    assert!(render_trajectory("curve", 5, 16, 2, 40, false).is_err());
}

#[test]
fn tuning_curve_peaks_at_zero() {
    let json = edge_tuning_curve(1, 2, 8, 4).unwrap();
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let t: Vec<i64> = v["t"].as_array().unwrap().iter().map(|x| x.as_i64().unwrap()).collect();
    let s: Vec<f64> = v["s"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(t, vec![-8, -4, 0, 4, 8]);
    assert!(s.iter().all(|&x| x <= s[2]) && s[2] > 1.0, "{s:?}");
    assert!(edge_tuning_curve(1, 0, 8, 4).is_err());
}
