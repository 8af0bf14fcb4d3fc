use stagescope_web::Demo;

#[test]
fn identity_schedule_matches_baseline() {
    let demo = Demo::build(4, 1).unwrap();
    let v = demo.schedule_view("identity").unwrap();
    assert_eq!(v.steps, vec![0, 1, 2, 3]);
    assert_eq!(v.kl_nats, 0.0);
    assert_eq!(v.top1_agreement, 1.0);
    assert_eq!(v.entropy_nats, v.baseline_entropy_nats);
}

#[test]
fn interventions_move_the_output() {
    let demo = Demo::build(4, 1).unwrap();
    for notation in ["drop:0", "swap:1", "repeat:1+2x1"] {
        let v = demo.schedule_view(notation).unwrap();
        assert!(v.kl_nats > 0.0, "{notation}");
        assert!((0.0..=1.0).contains(&v.top1_agreement));
    }
    assert_eq!(demo.schedule_view("drop:2").unwrap().steps, vec![0, 1, 3]);
    assert!(demo.schedule_view("swap:3").is_err());
    assert!(demo.schedule_view("nonsense").is_err());
}

#[test]
fn cka_heatmap_is_symmetric_with_unit_diagonal() {
    let demo = Demo::build(3, 2).unwrap();
    let m = demo.cka_view().unwrap();
    assert_eq!(m.layers, vec![-1, 0, 1, 2]);
    for i in 0..4 {
        assert!((m.values[i][i] - 1.0).abs() < 1e-6);
        for j in 0..4 {
            assert!((m.values[i][j] - m.values[j][i]).abs() < 1e-9);
        }
    }
}

#[test]
fn locality_grows_with_k() {
    let mut demo = Demo::build(2, 3).unwrap();
    demo.load_text(&"abcdefgh ".repeat(20));
    let small = demo.locality_view(2).unwrap();
    let large = demo.locality_view(32).unwrap();
    assert_eq!(small.locality.len(), 2);
    for (a, b) in small.locality.iter().zip(&large.locality) {
        assert!(b >= a && *b <= 1.0 + 1e-9);
    }
    assert!(demo.locality_view(0).is_err());
}

#[test]
fn text_is_truncated_and_short_text_rejected() {
    let mut demo = Demo::build(2, 0).unwrap();
    assert_eq!(demo.load_text(&"x".repeat(500)), 128);
    assert_eq!(demo.load_text("ab"), 2);
    assert!(demo.cka_view().is_err());
    demo.load_text("");
    assert!(demo.schedule_view("identity").is_err());
}

#[test]
fn json_shapes() {
    let demo = Demo::build(2, 0).unwrap();
    let v: serde_json::Value = serde_json::to_value(demo.schedule_view("drop:1").unwrap()).unwrap();
    for key in ["notation", "steps", "kl_nats", "top1_agreement", "baseline_entropy_nats", "entropy_nats"] {
        assert!(v.get(key).is_some(), "{key}");
    }
}
