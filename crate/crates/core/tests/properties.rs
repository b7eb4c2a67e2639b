use proptest::prelude::*;

use d2c_core::capmetrics::{bleu4, cider, meteor, rouge_l, sentence_bleu, EvalPair};
use d2c_core::cnet::Vocabulary;
use d2c_core::geom::{convex_hull, min_area_rect, Point};
use d2c_core::gnet::{DetectOptions, OracleDetector};
use d2c_core::raster::ChannelMode;
use d2c_core::scenegen::{derive_seed, generate_episode, generate_scene, render, EpisodeConfig, SceneConfig, EOC, PAD};
use d2c_core::simeval::{parse_command, simulate_grasp, GraspDetector, GraspTolerances, SuccessRate};

fn cloud() -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 1..60)
}

fn grid_cloud() -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((0..8i32, 0..8i32).prop_map(|(x, y)| (x as f64, y as f64)), 1..40)
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 1..8)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

fn hull_props(pts: &[Point]) -> Result<(), TestCaseError> {
    let hull = convex_hull(pts).unwrap();
    for v in &hull {
        prop_assert!(pts.contains(v));
    }
    if hull.len() >= 3 {
        let n = hull.len();
        for k in 0..n {
            let (a, b) = (hull[k], hull[(k + 1) % n]);
            // strictly convex, counter-clockwise in a y-up frame
            prop_assert!(cross(a, b, hull[(k + 2) % n]) > 0.0);
            for &p in pts {
                prop_assert!(cross(a, b, p) >= -1e-9);
            }
        }
        let r = min_area_rect(&hull).unwrap();
        prop_assert!((0.0..180.0).contains(&r.theta));
        prop_assert!(r.half_extents.0 >= r.half_extents.1);
        let scale = pts.iter().map(|p| p.0.abs().max(p.1.abs())).fold(1.0, f64::max);
        for &p in pts {
            prop_assert!(r.excess(p) <= 1e-9 * scale);
        }
    }
    Ok(())
}

proptest! {
    #[test]
    fn hull_is_convex_and_encloses_the_cloud(pts in cloud()) {
        hull_props(&pts)?;
    }

    #[test]
    fn hull_handles_duplicates_and_collinear_runs(pts in grid_cloud()) {
        hull_props(&pts)?;
    }

    #[test]
    fn hull_ignores_input_order(mut pts in cloud(), seed in any::<u64>()) {
        let a = convex_hull(&pts).unwrap();
        let n = pts.len();
        pts.rotate_left((seed % n as u64) as usize);
        pts.reverse();
        prop_assert_eq!(a, convex_hull(&pts).unwrap());
    }

    #[test]
    fn metrics_are_bounded(c in sentence(), r in sentence()) {
        let p = EvalPair::single(&c, &r);
        for v in [bleu4(std::slice::from_ref(&p)).unwrap(), sentence_bleu(&p), meteor(&p), rouge_l(&p)] {
            prop_assert!((0.0..=1.0).contains(&v), "{}", v);
        }
    }

    #[test]
    fn identical_captions_score_one(c in sentence()) {
        let p = EvalPair::single(&c, &c);
        prop_assert_eq!(rouge_l(&p), 1.0);
        prop_assert!(meteor(&p) >= 0.5 && meteor(&p) < 1.0);
        if c.len() >= 4 {
            prop_assert!((bleu4(&[p]).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cider_stays_in_range(pairs in prop::collection::vec((sentence(), sentence()), 2..10)) {
        let corpus: Vec<EvalPair> = pairs.iter().map(|(c, r)| EvalPair::single(c, r)).collect();
        let v = cider(&corpus).unwrap();
        prop_assert!((0.0..=10.0 + 1e-9).contains(&v), "{}", v);
    }

    #[test]
    fn special_tokens_do_not_change_scores(c in sentence(), r in sentence(), pads in 0..4usize) {
        let mut c2 = c.clone();
        c2.push(EOC.to_string());
        c2.extend(std::iter::repeat_n(PAD.to_string(), pads));
        let (a, b) = (EvalPair::single(&c, &r), EvalPair::single(&c2, &r));
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(meteor(&a), meteor(&b));
    }

    #[test]
    fn generated_commands_parse_back_to_their_action(seed in any::<u64>()) {
        let cfg = EpisodeConfig { n_frames: 2, ..EpisodeConfig::default() };
        let ep = generate_episode(seed, &cfg).unwrap();
        let parsed = parse_command(&ep.command, &cfg.scene.categories).unwrap();
        prop_assert_eq!(&parsed, &ep.action);
        prop_assert_eq!(parsed.command(), ep.command.clone());
        let vocab = Vocabulary::from_commands([&ep.command]);
        let ids = vocab.encode(&ep.command, 8).unwrap();
        prop_assert_eq!(vocab.decode(&ids), ep.command);
    }

    #[test]
    fn looser_angle_tolerance_never_loses_a_grasp(seed in 0u64..500, turn in -40.0..40.0f64) {
        let cfg = SceneConfig::default();
        let scene = generate_scene(derive_seed(seed, 11, 0), &cfg).unwrap();
        let det = OracleDetector { categories: cfg.categories.clone(), options: DetectOptions::default() };
        for mut g in det.detect(&render(&scene, ChannelMode::Rgb)).unwrap() {
            g.theta = (g.theta + turn).rem_euclid(180.0);
            let mut prev = false;
            for angle in [1.0, 5.0, 15.0, 30.0, 90.0] {
                let tol = GraspTolerances { angle_deg: angle, check_ellipse_orientation: true, ..Default::default() };
                let ok = simulate_grasp(&g, &scene, &cfg.categories, &tol).success;
                prop_assert!(ok || !prev);
                prev = ok;
            }
            prop_assert!(prev, "90 degrees covers every orientation");
        }
    }

    #[test]
    fn success_rate_text_matches_counts(total in 1usize..500, frac in 0.0..=1.0f64) {
        let k = (frac * total as f64).floor() as usize;
        let r = SuccessRate::new(k, total).unwrap();
        let text = r.to_string();
        let tail = format!("({}/{})", k, total);
        prop_assert!(text.ends_with(&tail));
        let pct: u32 = text.split('%').next().unwrap().parse().unwrap();
        prop_assert!((pct as f64 - 100.0 * r.fraction()).abs() <= 0.5);
        prop_assert!(SuccessRate::new(total + 1, total).is_err());
    }

    #[test]
    fn seed_streams_are_distinct(seed in any::<u64>(), i in 0u64..1000) {
        prop_assert_ne!(derive_seed(seed, 1, i), derive_seed(seed, 2, i));
        prop_assert_ne!(derive_seed(seed, 1, i), derive_seed(seed, 1, i + 1));
        prop_assert_eq!(derive_seed(seed, 3, i), derive_seed(seed, 3, i));
    }
}
