use admac_demo::Demo;
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).expect("valid json")
}

#[test]
fn episode_frames_match_length() {
    for task in ["predator_prey", "treasure_hunt", "food_collector"] {
        let d = Demo::new(task, 3).unwrap();
        let ep = parse(d.episode("fgsm", "A", 0.5, "none", 11).unwrap());
        let len = ep["length"].as_u64().unwrap() as usize;
        assert_eq!(ep["frames"].as_array().unwrap().len(), len, "{task}");
        let info = parse(d.info());
        assert_eq!(ep["frames"][0]["agents"].as_array().unwrap().len() as u64, info["agents"].as_u64().unwrap());
    }
}

#[test]
fn zero_probability_matches_clean_episode() {
    let d = Demo::new("predator_prey", 5).unwrap();
    let clean = d.episode("none", "A", 0.0, "none", 2).unwrap();
    let zero = d.episode("pgd", "B", 0.0, "none", 2).unwrap();
    assert_eq!(clean, zero);
}

#[test]
fn perturb_reports_objectives() {
    let d = Demo::new("predator_prey", 1).unwrap();
    let r = parse(d.perturb("pgd", "B", 4).unwrap());
    assert!(r["objective_raw"].as_f64().unwrap().abs() < 1e-12);
    assert!(r["objective_attacked"].as_f64().unwrap() >= 0.0);
    for v in r["attacked"].as_array().unwrap() {
        assert!(v.as_f64().unwrap().abs() <= 1.0);
    }
    let a = parse(d.perturb("fgsm", "A", 4).unwrap());
    let best = a["best_action"].as_u64().unwrap() as usize;
    let raw_p = a["dist_raw"][best].as_f64().unwrap();
    assert!((a["objective_raw"].as_f64().unwrap() - raw_p).abs() < 1e-12);
}

#[test]
fn weight_sweep_is_monotone() {
    let d = Demo::new("treasure_hunt", 2).unwrap();
    let r = parse(d.weight_sweep(9, 2.0, 16).unwrap());
    let rows = r["sweep"].as_array().unwrap();
    assert_eq!(rows.len(), 17);
    for w in rows.windows(2) {
        assert!(w[1]["p_max"].as_f64() >= w[0]["p_max"].as_f64());
        assert!(w[1]["p_min"].as_f64() <= w[0]["p_min"].as_f64());
    }
}
